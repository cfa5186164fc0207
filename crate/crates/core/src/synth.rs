//! Synthetic vector sketches in the QuickDraw simplified ndjson format.
//!
//! Each category is a parametric template (outline polygons, spirals,
//! composite pictograms) drawn with random rotation, anisotropic scale,
//! stroke order, start point, direction, sampling density and per-point
//! jitter, on the 0..=255 canvas used by the simplified QuickDraw export. A
//! configurable fraction of every category is replaced by outliers: dense
//! scribbles or a single short dash.

use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::corpus::RawSketch;

pub const CATEGORY_NAMES: [&str; 30] = [
    "circle", "square", "triangle", "star", "plus", "cross", "spiral", "zigzag", "wave", "house",
    "arrow", "diamond", "pentagon", "hexagon", "smiley", "sun", "ladder", "crescent", "lightning",
    "envelope", "tree", "eye", "flower", "fish", "hourglass", "heart", "umbrella", "table", "key",
    "bowtie",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub categories: usize,
    pub per_category: usize,
    pub seed: u64,
    /// Fraction of each category replaced by outliers.
    pub noise_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            categories: 10,
            per_category: 420,
            seed: 0,
            noise_fraction: 0.05,
        }
    }
}

type Stroke = Vec<(f64, f64)>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64, n: usize) -> Stroke {
    (0..=n)
        .map(|i| {
            let t = from + (to - from) * i as f64 / n as f64;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

fn polygon(sides: usize, phase: f64, r: f64) -> Stroke {
    (0..=sides)
        .map(|i| {
            let t = phase + TAU * i as f64 / sides as f64;
            (r * t.cos(), r * t.sin())
        })
        .collect()
}

fn seg(a: (f64, f64), b: (f64, f64)) -> Stroke {
    vec![a, b]
}

/// Template strokes in roughly `[-1, 1]^2`, y pointing down.
fn template(category: usize, rng: &mut ChaCha8Rng) -> Vec<Stroke> {
    let wobble = |rng: &mut ChaCha8Rng, s: f64| rng.gen_range(-s..s);
    match category % CATEGORY_NAMES.len() {
        0 => vec![arc(0.0, 0.0, 1.0, 1.0, 0.0, TAU, 24)],
        1 => vec![polygon(4, PI / 4.0, 1.3)],
        2 => vec![polygon(3, -PI / 2.0, 1.0)],
        3 => {
            let pts = (0..=10)
                .map(|i| {
                    let r = if i % 2 == 0 { 1.0 } else { 0.42 };
                    let t = -PI / 2.0 + PI * i as f64 / 5.0;
                    (r * t.cos(), r * t.sin())
                })
                .collect();
            vec![pts]
        }
        4 => vec![seg((0.0, -1.0), (0.0, 1.0)), seg((-1.0, 0.0), (1.0, 0.0))],
        5 => vec![seg((-1.0, -1.0), (1.0, 1.0)), seg((1.0, -1.0), (-1.0, 1.0))],
        6 => {
            let turns = rng.gen_range(2.2..3.2);
            let n = 40;
            vec![(0..=n)
                .map(|i| {
                    let t = i as f64 / n as f64;
                    let a = TAU * turns * t;
                    (t * a.cos(), t * a.sin())
                })
                .collect()]
        }
        7 => {
            let k = rng.gen_range(4..7);
            vec![(0..=k)
                .map(|i| (-1.0 + 2.0 * i as f64 / k as f64, if i % 2 == 0 { -0.5 } else { 0.5 }))
                .collect()]
        }
        8 => {
            let periods = rng.gen_range(1.5..2.5);
            vec![(0..=30)
                .map(|i| {
                    let x = -1.0 + 2.0 * i as f64 / 30.0;
                    (x, 0.4 * (PI * periods * x).sin())
                })
                .collect()]
        }
        9 => vec![
            vec![(-0.8, 0.0), (-0.8, 1.0), (0.8, 1.0), (0.8, 0.0), (-0.8, 0.0)],
            vec![(-1.0, 0.0), (0.0, -1.0 + wobble(rng, 0.2)), (1.0, 0.0)],
        ],
        10 => vec![
            seg((-1.0, 0.0), (1.0, 0.0)),
            vec![(0.4, -0.5), (1.0, 0.0), (0.4, 0.5)],
        ],
        11 => vec![polygon(4, 0.0, 1.0)],
        12 => vec![polygon(5, -PI / 2.0, 1.0)],
        13 => vec![polygon(6, 0.0, 1.0)],
        14 => vec![
            arc(0.0, 0.0, 1.0, 1.0, 0.0, TAU, 24),
            arc(-0.35, -0.3, 0.08, 0.08, 0.0, TAU, 5),
            arc(0.35, -0.3, 0.08, 0.08, 0.0, TAU, 5),
            arc(0.0, 0.1, 0.5, 0.4, 0.2, PI - 0.2, 8),
        ],
        15 => {
            let mut s = vec![arc(0.0, 0.0, 0.45, 0.45, 0.0, TAU, 16)];
            let rays = rng.gen_range(6..10);
            for i in 0..rays {
                let t = TAU * i as f64 / rays as f64;
                s.push(seg((0.6 * t.cos(), 0.6 * t.sin()), (1.0 * t.cos(), 1.0 * t.sin())));
            }
            s
        }
        16 => {
            let mut s = vec![seg((-0.5, -1.0), (-0.5, 1.0)), seg((0.5, -1.0), (0.5, 1.0))];
            let rungs = rng.gen_range(3..6);
            for i in 0..rungs {
                let y = -0.8 + 1.6 * i as f64 / (rungs - 1) as f64;
                s.push(seg((-0.5, y), (0.5, y)));
            }
            s
        }
        17 => {
            let mut outer = arc(0.0, 0.0, 1.0, 1.0, PI / 2.0, 3.0 * PI / 2.0, 16);
            let inner = arc(0.35, 0.0, 0.75, 0.95, 3.0 * PI / 2.0 - 0.1, PI / 2.0 + 0.1, 16);
            outer.extend(inner.into_iter().rev().skip(1).collect::<Vec<_>>().into_iter().rev());
            vec![outer]
        }
        18 => vec![vec![(0.3, -1.0), (-0.4, 0.1), (0.3, 0.0), (-0.3, 1.0)]],
        19 => vec![
            vec![(-1.0, -0.6), (1.0, -0.6), (1.0, 0.6), (-1.0, 0.6), (-1.0, -0.6)],
            vec![(-1.0, -0.6), (0.0, 0.1), (1.0, -0.6)],
        ],
        20 => vec![
            vec![(-0.8, 0.4), (0.0, -1.0), (0.8, 0.4), (-0.8, 0.4)],
            vec![(-0.15, 0.4), (-0.15, 1.0), (0.15, 1.0), (0.15, 0.4)],
        ],
        21 => vec![
            arc(0.0, 0.55, 1.0, 1.0, -PI / 2.0 - 0.95, -PI / 2.0 + 0.95, 10),
            arc(0.0, -0.55, 1.0, 1.0, PI / 2.0 - 0.95, PI / 2.0 + 0.95, 10),
            arc(0.0, 0.0, 0.25, 0.25, 0.0, TAU, 8),
        ],
        22 => {
            let petals = rng.gen_range(5..8);
            let mut s = vec![arc(0.0, 0.0, 0.25, 0.25, 0.0, TAU, 8)];
            for i in 0..petals {
                let t = TAU * i as f64 / petals as f64;
                let (c, sn) = (t.cos(), t.sin());
                let petal = arc(0.0, 0.0, 0.35, 0.18, 0.0, TAU, 8)
                    .into_iter()
                    .map(|(x, y)| {
                        let x = x + 0.65;
                        (x * c - y * sn, x * sn + y * c)
                    })
                    .collect();
                s.push(petal);
            }
            s
        }
        23 => vec![
            arc(0.0, 0.0, 0.75, 0.45, -2.5, 2.5, 16),
            vec![(0.6, -0.3), (1.0, -0.6), (1.0, 0.6), (0.6, 0.3)],
            arc(-0.4, -0.1, 0.06, 0.06, 0.0, TAU, 4),
        ],
        24 => vec![vec![(-0.7, -1.0), (0.7, -1.0), (-0.7, 1.0), (0.7, 1.0), (-0.7, -1.0)]],
        25 => {
            let n = 30;
            vec![(0..=n)
                .map(|i| {
                    let t = TAU * i as f64 / n as f64;
                    let x = 16.0 * t.sin().powi(3);
                    let y = 13.0 * t.cos() - 5.0 * (2.0 * t).cos() - 2.0 * (3.0 * t).cos() - (4.0 * t).cos();
                    (x / 16.0, -y / 16.0)
                })
                .collect()]
        }
        26 => vec![
            arc(0.0, 0.0, 1.0, 0.8, PI, TAU, 16),
            vec![(0.0, 0.0), (0.0, 0.9), (-0.25, 1.0)],
        ],
        27 => vec![
            seg((-1.0, -0.3), (1.0, -0.3)),
            seg((-0.8, -0.3), (-0.8, 1.0)),
            seg((0.8, -0.3), (0.8, 1.0)),
        ],
        28 => vec![
            arc(-0.6, 0.0, 0.35, 0.35, 0.0, TAU, 10),
            vec![(-0.25, 0.0), (1.0, 0.0), (1.0, 0.3)],
            seg((0.7, 0.0), (0.7, 0.25)),
        ],
        _ => vec![vec![(-1.0, -0.7), (1.0, 0.7), (1.0, -0.7), (-1.0, 0.7), (-1.0, -0.7)]],
    }
}

/// Resamples a polyline at roughly `spacing` units and adds jitter.
fn resample(stroke: &Stroke, spacing: f64, jitter: f64, rng: &mut ChaCha8Rng) -> Stroke {
    let mut out = vec![stroke[0]];
    for w in stroke.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let n = (len / spacing).ceil().max(1.0) as usize;
        for k in 1..=n {
            let t = k as f64 / n as f64;
            out.push((a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t));
        }
    }
    out.into_iter()
        .map(|(x, y)| (x + rng.gen_range(-jitter..=jitter), y + rng.gen_range(-jitter..=jitter)))
        .collect()
}

fn to_canvas(strokes: Vec<Stroke>, rng: &mut ChaCha8Rng) -> Vec<Vec<(i32, i32)>> {
    let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &(x, y) in strokes.iter().flatten() {
        lo_x = lo_x.min(x);
        lo_y = lo_y.min(y);
        hi_x = hi_x.max(x);
        hi_y = hi_y.max(y);
    }
    let span = (hi_x - lo_x).max(hi_y - lo_y).max(1e-9);
    let size = rng.gen_range(150.0..255.0);
    let scale = size / span;
    strokes
        .into_iter()
        .map(|s| {
            let mut pts: Vec<(i32, i32)> = s
                .into_iter()
                .map(|(x, y)| {
                    let px = ((x - lo_x) * scale).round().clamp(0.0, 255.0) as i32;
                    let py = ((y - lo_y) * scale).round().clamp(0.0, 255.0) as i32;
                    (px, py)
                })
                .collect();
            pts.dedup();
            pts
        })
        .collect()
}

fn sketch(category: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<(i32, i32)>> {
    let mut strokes = template(category, rng);
    let theta: f64 = rng.gen_range(-0.5..0.5);
    let shear = rng.gen_range(-0.3..0.3);
    let (sx, sy) = (rng.gen_range(0.7..1.3), rng.gen_range(0.7..1.3));
    let (c, s) = (theta.cos(), theta.sin());
    for stroke in &mut strokes {
        let (ox, oy) = (rng.gen_range(-0.12..0.12), rng.gen_range(-0.12..0.12));
        for p in stroke.iter_mut() {
            let (x, y) = ((p.0 + shear * p.1) * sx + ox, p.1 * sy + oy);
            *p = (x * c - y * s, x * s + y * c);
        }
        if rng.gen_bool(0.5) {
            stroke.reverse();
        }
        let closed = stroke.len() > 2 && stroke.first() == stroke.last();
        if closed && rng.gen_bool(0.5) {
            let k = rng.gen_range(0..stroke.len() - 1);
            stroke.pop();
            stroke.rotate_left(k);
            let first = stroke[0];
            stroke.push(first);
        }
    }
    if strokes.len() > 1 && rng.gen_bool(0.3) {
        strokes[1..].shuffle(rng);
    }
    let spacing = rng.gen_range(0.2..0.32);
    let jitter = rng.gen_range(0.02..0.08);
    let mut strokes: Vec<Stroke> = strokes.iter().map(|s| resample(s, spacing, jitter, rng)).collect();
    // unfinished drawings: cut the tail of one stroke
    if rng.gen_bool(0.3) {
        let i = rng.gen_range(0..strokes.len());
        let n = strokes[i].len();
        let keep = n - rng.gen_range(0..=n / 4);
        strokes[i].truncate(keep.max(2));
    }
    to_canvas(strokes, rng)
}

fn outlier(rng: &mut ChaCha8Rng) -> Vec<Vec<(i32, i32)>> {
    if rng.gen_bool(0.5) {
        // dense scribble
        let n = rng.gen_range(40..70);
        let mut p = (rng.gen_range(60..190), rng.gen_range(60..190));
        let mut pts = vec![p];
        for _ in 0..n {
            p = (
                (p.0 + rng.gen_range(-60..=60)).clamp(0, 255),
                (p.1 + rng.gen_range(-60..=60)).clamp(0, 255),
            );
            pts.push(p);
        }
        vec![pts]
    } else {
        let x = rng.gen_range(0..200);
        let y = rng.gen_range(0..255);
        vec![vec![(x, y), (x + rng.gen_range(5..40), y)]]
    }
}

/// Sketches ordered by category, then index.
pub fn generate(cfg: &SynthConfig) -> Vec<RawSketch> {
    let mut out = Vec::with_capacity(cfg.categories * cfg.per_category);
    let noisy = (cfg.per_category as f64 * cfg.noise_fraction).round() as usize;
    for cat in 0..cfg.categories {
        let name = category_name(cat);
        let mut pick = ChaCha8Rng::seed_from_u64(cfg.seed);
        pick.set_stream(((cat as u64) << 32) | u32::MAX as u64);
        let mut order: Vec<usize> = (0..cfg.per_category).collect();
        order.shuffle(&mut pick);
        let mut is_outlier = vec![false; cfg.per_category];
        order[..noisy.min(cfg.per_category)].iter().for_each(|&i| is_outlier[i] = true);
        for (i, &noisy) in is_outlier.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(((cat as u64) << 32) | i as u64);
            let strokes = if noisy { outlier(&mut rng) } else { sketch(cat, &mut rng) };
            out.push(RawSketch::new(strokes, name.clone()).expect("generated strokes are valid"));
        }
    }
    out
}

pub fn category_name(index: usize) -> String {
    let base = CATEGORY_NAMES[index % CATEGORY_NAMES.len()];
    match index / CATEGORY_NAMES.len() {
        0 => base.to_string(),
        k => format!("{base}_{k}"),
    }
}

/// One QuickDraw-style JSON object per line.
pub fn to_ndjson(sketches: &[RawSketch]) -> String {
    let mut s = String::new();
    for (i, sk) in sketches.iter().enumerate() {
        let drawing: Vec<[Vec<i32>; 2]> = sk
            .strokes
            .iter()
            .map(|st| [st.iter().map(|p| p.0).collect(), st.iter().map(|p| p.1).collect()])
            .collect();
        let rec = json!({
            "word": sk.category,
            "countrycode": "ZZ",
            "recognized": true,
            "key_id": format!("{i}"),
            "drawing": drawing,
        });
        s.push_str(&rec.to_string());
        s.push('\n');
    }
    s
}
