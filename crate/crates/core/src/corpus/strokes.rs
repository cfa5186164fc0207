use super::{CorpusError, RawSketch};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PenState {
    /// Pen stays down; the step extends the current stroke (`p1 = 1`).
    Continue,
    /// Pen was lifted; the step moves to the first point of a new stroke (`p2 = 1`).
    NewStroke,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrokeStep {
    pub dx: f64,
    pub dy: f64,
    pub pen: PenState,
}

impl StrokeStep {
    /// The `(dx, dy, p1, p2)` network input.
    pub fn features(&self) -> [f64; 4] {
        let (p1, p2) = match self.pen {
            PenState::Continue => (1.0, 0.0),
            PenState::NewStroke => (0.0, 1.0),
        };
        [self.dx, self.dy, p1, p2]
    }
}

/// Offset-encoded sketch with its category index.
#[derive(Clone, Debug, PartialEq)]
pub struct StrokeSketch {
    pub steps: Vec<StrokeStep>,
    pub label: u16,
}

impl StrokeSketch {
    pub fn new(steps: Vec<StrokeStep>, label: u16) -> Result<Self, CorpusError> {
        if steps.is_empty() {
            return Err(CorpusError::EmptySequence);
        }
        if steps.iter().any(|s| !s.dx.is_finite() || !s.dy.is_finite()) {
            return Err(CorpusError::Format("non-finite offset".into()));
        }
        Ok(StrokeSketch { steps, label })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Copy with offsets divided by `scale`.
    pub fn normalized(&self, normalizer: &OffsetNormalizer) -> StrokeSketch {
        let steps = self
            .steps
            .iter()
            .map(|s| StrokeStep {
                dx: s.dx / normalizer.scale,
                dy: s.dy / normalizer.scale,
                pen: s.pen,
            })
            .collect();
        StrokeSketch {
            steps,
            label: self.label,
        }
    }

    /// Absolute polylines recovered by summing offsets from the origin.
    pub fn polylines(&self) -> Vec<Vec<(f64, f64)>> {
        let mut out: Vec<Vec<(f64, f64)>> = Vec::new();
        let (mut x, mut y) = (0.0, 0.0);
        for (i, s) in self.steps.iter().enumerate() {
            x += s.dx;
            y += s.dy;
            if i == 0 || s.pen == PenState::NewStroke {
                out.push(vec![(x, y)]);
            } else {
                out.last_mut().expect("started").push((x, y));
            }
        }
        out
    }
}

/// Converts absolute polylines to consecutive-difference steps.
///
/// The first step is `(0, 0)` with the pen down; the first point of every
/// later stroke is reached by a `NewStroke` step from the previous stroke's
/// last point. Offsets are not normalized here.
pub fn to_stroke_sequence(raw: &RawSketch, label: u16) -> Result<StrokeSketch, CorpusError> {
    let mut steps = Vec::with_capacity(raw.point_count());
    let mut prev: Option<(i32, i32)> = None;
    for stroke in &raw.strokes {
        for (j, &(x, y)) in stroke.iter().enumerate() {
            let (dx, dy, pen) = match prev {
                None => (0, 0, PenState::Continue),
                Some((px, py)) => {
                    let pen = if j == 0 {
                        PenState::NewStroke
                    } else {
                        PenState::Continue
                    };
                    (x - px, y - py, pen)
                }
            };
            steps.push(StrokeStep {
                dx: dx as f64,
                dy: dy as f64,
                pen,
            });
            prev = Some((x, y));
        }
    }
    StrokeSketch::new(steps, label)
}

/// Single scalar divisor for all offsets: the population standard deviation
/// of the pooled `dx` and `dy` values of a reference set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OffsetNormalizer {
    pub scale: f64,
}

impl Default for OffsetNormalizer {
    fn default() -> Self {
        OffsetNormalizer { scale: 1.0 }
    }
}

impl OffsetNormalizer {
    pub fn fit<'a>(sketches: impl IntoIterator<Item = &'a StrokeSketch>) -> Self {
        let (mut n, mut sum, mut sum_sq) = (0usize, 0.0, 0.0);
        for s in sketches {
            for step in &s.steps {
                for v in [step.dx, step.dy] {
                    n += 1;
                    sum += v;
                    sum_sq += v * v;
                }
            }
        }
        if n == 0 {
            return Self::default();
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        let scale = var.sqrt();
        if scale > 0.0 && scale.is_finite() {
            OffsetNormalizer { scale }
        } else {
            Self::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(strokes: Vec<Vec<(i32, i32)>>) -> RawSketch {
        RawSketch::new(strokes, "x").unwrap()
    }

    #[test]
    fn consecutive_differences() {
        let s = to_stroke_sequence(&raw(vec![vec![(0, 0), (3, 0), (3, 4)]]), 0).unwrap();
        let offs: Vec<_> = s.steps.iter().map(|st| (st.dx, st.dy)).collect();
        assert_eq!(offs, vec![(0.0, 0.0), (3.0, 0.0), (0.0, 4.0)]);
        assert!(s.steps.iter().all(|st| st.pen == PenState::Continue));
        for st in &s.steps {
            let f = st.features();
            assert_eq!(f[2] + f[3], 1.0);
        }
    }

    #[test]
    fn one_new_stroke_flag_at_boundary() {
        let s = to_stroke_sequence(&raw(vec![vec![(0, 0), (1, 1)], vec![(5, 5), (6, 5)]]), 0).unwrap();
        assert_eq!(s.len(), 4);
        let flags: Vec<_> = s.steps.iter().map(|st| st.pen).collect();
        assert_eq!(
            flags,
            vec![
                PenState::Continue,
                PenState::Continue,
                PenState::NewStroke,
                PenState::Continue
            ]
        );
        assert_eq!((s.steps[2].dx, s.steps[2].dy), (4.0, 4.0));
    }

    #[test]
    fn single_point_drawing_is_one_step() {
        let s = to_stroke_sequence(&raw(vec![vec![(7, 9)]]), 3).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.label, 3);
    }

    #[test]
    fn polylines_round_trip_relative_geometry() {
        let r = raw(vec![vec![(2, 2), (4, 2)], vec![(4, 6)]]);
        let s = to_stroke_sequence(&r, 0).unwrap();
        let p = s.polylines();
        assert_eq!(p, vec![vec![(0.0, 0.0), (2.0, 0.0)], vec![(2.0, 4.0)]]);
    }

    #[test]
    fn normalizer_of_constant_offsets_falls_back() {
        let s = to_stroke_sequence(&raw(vec![vec![(1, 1)]]), 0).unwrap();
        assert_eq!(OffsetNormalizer::fit([&s]).scale, 1.0);
    }
}
