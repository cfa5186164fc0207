//! Acceptance suite. Runs as a plain binary so every criterion prints one
//! PASS/FAIL line; the process exits nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sketchhash::corpus::{make_splits, Corpus, SplitQuotas};
use sketchhash::encoder::{quantize, BinaryCode, EncoderConfig};
use sketchhash::entropy::{binary_entropy, filter_noise, percentile_bounds};
use sketchhash::eval::{average_precision, mean_ap, pr_curve, precision_at_k, random_codes};
use sketchhash::exec::Execution;
use sketchhash::experiment::{ablation, zero_shot_experiment, AblationOutcome};
use sketchhash::gradcheck::{objective_checks, primitive_checks, OBJECTIVE_TOLERANCE, PRIMITIVE_TOLERANCE};
use sketchhash::hamming::{search, PackedCodes};
use sketchhash::synth::{generate, SynthConfig};
use sketchhash::train::{train_pipeline, TrainConfig};

const SEEDS: [u64; 3] = [0, 1, 2];
const MODE: Execution = Execution::Parallel;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

fn gradients() -> Verdict {
    let t = Instant::now();
    let prim = primitive_checks(0).map_err(|e| e.to_string())?;
    let (pname, pworst) = prim
        .iter()
        .map(|(n, r)| (n.as_str(), r.max_rel_error))
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let obj = objective_checks("toy", 0, 6).map_err(|e| e.to_string())?;
    let oworst = obj.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max);
    let coords: usize = obj.iter().map(|c| c.report.coords_checked).sum();
    let secs = t.elapsed().as_secs_f64();
    check(
        pworst < PRIMITIVE_TOLERANCE && oworst < OBJECTIVE_TOLERANCE && secs < 300.0,
        format!("primitives max {pworst:.2e} ({pname}); objective max {oworst:.2e} over {coords} coords; {secs:.0}s"),
    )
}

fn naive_ranking(gallery: &[Vec<bool>], q: &[bool]) -> Vec<(u32, u32)> {
    let mut out: Vec<(u32, u32)> = gallery
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let mut d = 0;
            for j in 0..q.len() {
                if g[j] != q[j] {
                    d += 1;
                }
            }
            (i as u32, d)
        })
        .collect();
    // stable: ties stay in gallery order
    out.sort_by_key(|&(_, d)| d);
    out
}

fn search_oracle() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..1000 {
        let d = [16, 24, 32, 64][rng.gen_range(0..4)];
        let n = rng.gen_range(1..=2000);
        // few distinct codes per gallery so ties are common
        let pool = rng.gen_range(1..=64);
        let distinct: Vec<Vec<bool>> = (0..pool).map(|_| (0..d).map(|_| rng.gen()).collect()).collect();
        let rows: Vec<Vec<bool>> = (0..n).map(|_| distinct[rng.gen_range(0..pool)].clone()).collect();
        let codes: Vec<BinaryCode> = rows.iter().map(|r| BinaryCode::from_bits(r.clone())).collect();
        let g = PackedCodes::pack(&codes, (0..n as u32).collect(), None).map_err(|e| e.to_string())?;
        let q: Vec<bool> = (0..d).map(|_| rng.gen()).collect();
        let got = search(&BinaryCode::from_bits(q.clone()), &g, None).map_err(|e| e.to_string())?;
        if got != naive_ranking(&rows, &q) {
            return Err(format!("gallery {trial} (n={n}, D={d}) differs from the oracle"));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(secs < 120.0, format!("1000 galleries identical to the bit-loop oracle; {secs:.1}s"))
}

fn quantizer() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..100 {
        let d = rng.gen_range(1..=8);
        let f: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
        let err = |c: &BinaryCode| -> f64 { c.as_f64().iter().zip(&f).map(|(b, x)| (b - x).powi(2)).sum() };
        let best = err(&quantize(&f));
        for mask in 0u32..(1 << d) {
            let c = BinaryCode::from_bits((0..d).map(|i| mask >> i & 1 == 1).collect());
            if err(&c) < best {
                return Err(format!("trial {trial}: code {mask:#b} beats quantize"));
            }
        }
    }
    Ok("100 vectors, D <= 8, every code enumerated".into())
}

fn metrics() -> Verdict {
    let a = vec![true, false, true, false];
    let b = vec![false, true, false, false];
    let rankings = vec![a.clone(), b.clone()];
    let mut bad = Vec::new();
    let mut expect = |name: &str, got: f64, want: f64| {
        if !close(got, want) {
            bad.push(format!("{name}: {got} != {want}"));
        }
    };
    expect("AP{1,3}/4", average_precision(&a).value, 5.0 / 6.0);
    expect("AP{2}/4", average_precision(&b).value, 0.5);
    expect("AP none", average_precision(&[false; 3]).value, 0.0);
    expect("MAP", mean_ap(&rankings).unwrap(), 2.0 / 3.0);
    expect("P@1", precision_at_k(&rankings, 1).unwrap(), 0.5);
    expect("P@3", precision_at_k(&rankings, 3).unwrap(), 0.5);
    expect("P@4", precision_at_k(&rankings, 4).unwrap(), 0.375);
    let pr = pr_curve(&rankings).unwrap();
    let want = [(0.25, 0.5), (0.75, 0.5), (1.0, 0.5), (1.0, 0.375)];
    for (i, (&(r, p), &(wr, wp))) in pr.iter().zip(&want).enumerate() {
        expect(&format!("recall@{}", i + 1), r, wr);
        expect(&format!("precision@{}", i + 1), p, wp);
    }
    check(bad.is_empty() && pr.len() == 4, if bad.is_empty() { "AP/MAP/P@K/PR fixtures exact to 1e-12".into() } else { bad.join("; ") })
}

fn entropy() -> Verdict {
    let mut bad = Vec::new();
    for n in [1usize, 7, 20, 100, 1000] {
        // values 1..=n in a scrambled order
        let items: Vec<(u32, f64)> = (0..n).map(|i| (i as u32, ((i * 7919) % n + 1) as f64)).collect();
        let values: Vec<f64> = items.iter().map(|x| x.1).collect();
        let (lo, hi) = percentile_bounds(&values, 0.05, 0.95).unwrap();
        let lo_rank = ((0.05 * n as f64) - 1e-9).ceil().max(1.0);
        let hi_rank = ((0.95 * n as f64) - 1e-9).ceil().max(1.0);
        let kept = filter_noise(&items, lo, hi);
        let expected: Vec<u32> = items.iter().filter(|x| x.1 >= lo_rank && x.1 <= hi_rank).map(|x| x.0).collect();
        if (lo, hi) != (lo_rank, hi_rank) || kept != expected {
            bad.push(format!("n={n}: bounds ({lo}, {hi}), kept {}", kept.len()));
        }
    }
    let analytic = [(0.5, 1.0), (0.0, 0.0), (1.0, 0.0), (0.25, 0.811_278_124_459_132_9), (0.1, 0.468_995_593_589_281_2)];
    for (p, h) in analytic {
        if !close(binary_entropy(p), h) {
            bad.push(format!("H({p}) = {}", binary_entropy(p)));
        }
    }
    check(bad.is_empty(), if bad.is_empty() { "nearest-rank bounds exact for n in {1,7,20,100,1000}; H matches to 1e-12".into() } else { bad.join("; ") })
}

fn synth_corpus(categories: usize, per_category: usize) -> Corpus {
    Corpus::from_raw(&generate(&SynthConfig {
        categories,
        per_category,
        seed: 1,
        noise_fraction: 0.05,
    }))
    .expect("synthetic corpus")
}

fn alternating() -> Verdict {
    let corpus = synth_corpus(4, 40);
    let quotas = SplitQuotas {
        train: 24,
        validation: 4,
        retrieval: 8,
        query: 4,
    };
    let split = make_splits(&corpus.labels(), &corpus.categories, quotas, 0).unwrap();
    let cfg = TrainConfig {
        epochs_cnn: 1,
        epochs_rnn: 1,
        epochs_fused: 1,
        epochs_scl: 1,
        outer_iterations: 3,
        batch_size: 16,
        ..Default::default()
    };
    let enc = EncoderConfig::by_profile("toy", 16, corpus.categories.len()).unwrap();
    let out = train_pipeline(&corpus, &split, &enc, &cfg, None, MODE).map_err(|e| e.to_string())?;
    let mono = out
        .recomputes
        .iter()
        .all(|r| r.ql_after <= r.ql_before && (r.ql_after == r.ql_before) == (r.changed_bits == 0));
    let frozen = matches!(&out.center_bytes, Some((a, b)) if a == b);
    let steps: Vec<String> = out
        .recomputes
        .iter()
        .map(|r| format!("{:.4}->{:.4} ({} bits)", r.ql_before, r.ql_after, r.changed_bits))
        .collect();
    check(
        out.recomputes.len() == 3 && mono && frozen,
        format!("QL {}; centers frozen: {frozen}", steps.join(", ")),
    )
}

fn ablation_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs_cnn: 4,
        epochs_rnn: 4,
        epochs_fused: 3,
        epochs_scl: 2,
        outer_iterations: 2,
        lr_decay_every: 3,
        batch_size: 32,
        seed,
        ..Default::default()
    }
}

fn run_ablations() -> Result<Vec<AblationOutcome>, String> {
    let corpus = synth_corpus(10, 420);
    let quotas = SplitQuotas {
        train: 300,
        validation: 50,
        retrieval: 50,
        query: 10,
    };
    SEEDS
        .iter()
        .map(|&seed| {
            let split = make_splits(&corpus.labels(), &corpus.categories, quotas, seed).map_err(|e| e.to_string())?;
            let enc = EncoderConfig::compact(16, 10);
            let (o, _) = ablation(&corpus, &split, &enc, &ablation_config(seed), 200, MODE).map_err(|e| e.to_string())?;
            eprintln!(
                "  seed {seed}: MAP {:.4}/{:.4} ratio {:.4}/{:.4} acc cnn {:.3} rnn {:.3} fused {:.3}",
                o.full.map, o.cel_only.map, o.full.ratio, o.cel_only.ratio, o.cnn_accuracy, o.rnn_accuracy, o.fused_accuracy
            );
            Ok(o)
        })
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn directional(runs: &[AblationOutcome]) -> Verdict {
    let full = mean(runs.iter().map(|o| o.full.map));
    let cel = mean(runs.iter().map(|o| o.cel_only.map));
    let rf = mean(runs.iter().map(|o| o.full.ratio));
    let rc = mean(runs.iter().map(|o| o.cel_only.ratio));
    let fused = mean(runs.iter().map(|o| o.fused_accuracy));
    let cnn = mean(runs.iter().map(|o| o.cnn_accuracy));
    let rnn = mean(runs.iter().map(|o| o.rnn_accuracy));
    let (a, b, c) = (full >= cel, rf < rc, fused >= cnn.max(rnn));
    check(
        a && b && c,
        format!(
            "(a) MAP {full:.4} vs {cel:.4} {}; (b) d1/d2 {rf:.4} vs {rc:.4} {}; (c) acc {fused:.3} vs max({cnn:.3}, {rnn:.3}) {}",
            mark(a),
            mark(b),
            mark(c)
        ),
    )
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "inverted"
    }
}

fn absolute(runs: &[AblationOutcome]) -> Verdict {
    let o = &runs[0];
    check(
        o.full.map >= 0.50 && o.fused_accuracy >= 0.60,
        format!("seed 0: MAP {:.4} (>= 0.50), recognition {:.3} (>= 0.60)", o.full.map, o.fused_accuracy),
    )
}

fn latency() -> Verdict {
    let n = 345_000;
    let codes = random_codes(n, 64, 21);
    let labels: Vec<u16> = (0..n).map(|i| (i % 345) as u16).collect();
    let g = PackedCodes::pack(&codes, (0..n as u32).collect(), Some(labels)).map_err(|e| e.to_string())?;
    let queries = random_codes(20, 64, 22);
    let mut worst = Duration::ZERO;
    let mut total = Duration::ZERO;
    for q in &queries {
        let t = Instant::now();
        let ranking = search(q, &g, None).map_err(|e| e.to_string())?;
        let dt = t.elapsed();
        assert_eq!(ranking.len(), n);
        worst = worst.max(dt);
        total += dt;
    }
    let mem = g.memory_bytes();
    let mean_s = total.as_secs_f64() / queries.len() as f64;
    check(
        worst.as_secs_f64() <= 0.286 && mem <= 64 << 20,
        format!(
            "full ranking of 345000 codes: mean {:.4}s, worst {:.4}s (<= 0.286); memory {:.2} MB",
            mean_s,
            worst.as_secs_f64(),
            mem as f64 / (1 << 20) as f64
        ),
    )
}

fn zero_shot() -> Verdict {
    let corpus = synth_corpus(25, 360);
    let seen = SplitQuotas {
        train: 300,
        validation: 50,
        retrieval: 0,
        query: 0,
    };
    let unseen = SplitQuotas {
        train: 0,
        validation: 0,
        retrieval: 50,
        query: 10,
    };
    let mut maps = Vec::new();
    let mut randoms = Vec::new();
    for seed in SEEDS {
        let enc = EncoderConfig::compact(16, 5);
        let o = zero_shot_experiment(&corpus, seed, 20, seen, unseen, &enc, &ablation_config(seed), 200, MODE)
            .map_err(|e| e.to_string())?;
        if !o.train_labels.is_disjoint(&o.eval_labels) || o.eval_labels.len() != 20 {
            return Err(format!("seed {seed}: training and evaluation labels overlap"));
        }
        eprintln!("  seed {seed}: MAP {:.4}, random {:.4}", o.map, o.random_map);
        maps.push(o.map);
        randoms.push(o.random_map);
    }
    let (m, r) = (mean(maps.into_iter()), mean(randoms.into_iter()));
    check(m >= 2.0 * r, format!("labels disjoint; held-out MAP {m:.4} vs random {r:.4} ({:.2}x)", m / r))
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let p = |f: &str| dir.join(f).display().to_string();
    let run = |args: &[&str]| -> Result<(), String> {
        sketchhash::cli::run(std::iter::once("sketchhash").chain(args.iter().copied())).map_err(|e| format!("{e:#}"))
    };
    run(&["synth", "--out", &p("raw.ndjson"), "--categories", "3", "--per-category", "20", "--seed", "4"])?;
    run(&["ingest", "--input", &p("raw.ndjson"), "--out", &p("corpus.bin")])?;
    run(&["split", "--corpus", &p("corpus.bin"), "--out", &p("split.txt"), "--train", "10", "--validation", "2", "--retrieval", "6", "--query", "2"])?;
    let tiny = ["--set", "epochs_cnn=1", "--set", "epochs_rnn=1", "--set", "epochs_fused=1", "--set", "epochs_scl=1", "--set", "outer_iterations=2"];
    for out in ["a", "b"] {
        let base = ["train", "--corpus", &p("corpus.bin"), "--split", &p("split.txt"), "--out", &p(out), "--seed", "7"];
        run(&[&base[..], &tiny[..]].concat())?;
    }
    let ga = std::fs::read(dir.join("a/gallery.bin")).map_err(|e| e.to_string())?;
    let gb = std::fs::read(dir.join("b/gallery.bin")).map_err(|e| e.to_string())?;
    let ckpt = p("a/stage5_final.ckpt");
    run(&["encode", "--checkpoint", &ckpt, "--corpus", &p("corpus.bin"), "--split", &p("split.txt"), "--out", &p("q.txt")])?;
    for out in ["e1.json", "e2.json"] {
        run(&["evaluate", "--gallery", &p("a/gallery.bin"), "--queries", &p("q.txt"), "--k", "10", "--out", &p(out)])?;
    }
    let e1 = std::fs::read(dir.join("e1.json")).map_err(|e| e.to_string())?;
    let e2 = std::fs::read(dir.join("e2.json")).map_err(|e| e.to_string())?;
    check(
        ga == gb && e1 == e2,
        format!("galleries identical: {} ({} bytes); evaluate JSON identical: {}", ga == gb, ga.len(), e1 == e2),
    )
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(p) => Err(format!(
            "panicked: {}",
            p.downcast_ref::<String>().map(String::as_str).or(p.downcast_ref::<&str>().copied()).unwrap_or("?")
        )),
    }
}

fn main() {
    let mut failed = 0;
    let mut record = |id: usize, name: &str, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = guarded(f);
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match &v {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} criterion {id:>2} {name}: {detail} [{secs:.0}s]");
    };
    record(1, "gradient correctness", &mut gradients);
    record(2, "search oracle equivalence", &mut search_oracle);
    record(3, "quantizer optimality", &mut quantizer);
    record(4, "metric oracles", &mut metrics);
    record(5, "entropy filter", &mut entropy);
    record(6, "alternating mechanics", &mut alternating);

    // criteria 7 and 8 share the three ablation runs
    let t = Instant::now();
    let runs = catch_unwind(run_ablations).unwrap_or_else(|_| Err("ablation run panicked".into()));
    let shared = t.elapsed().as_secs_f64();
    eprintln!("  ablation runs took {shared:.0}s");
    record(7, "directional ablations", &mut || runs.as_ref().map_err(Clone::clone).and_then(|r| directional(r)));
    record(8, "absolute toy performance", &mut || runs.as_ref().map_err(Clone::clone).and_then(|r| absolute(r)));

    record(9, "retrieval latency and memory", &mut latency);
    record(10, "zero-shot protocol", &mut zero_shot);
    record(11, "determinism", &mut determinism);
    println!("{} of 11 criteria passed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
