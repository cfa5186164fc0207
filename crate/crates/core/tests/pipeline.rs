use std::fs;

use proptest::prelude::*;

use sketchhash::corpus::{make_splits, Corpus, SplitQuotas};
use sketchhash::encoder::{Branch, Encoder, EncoderConfig, SampleInput};
use sketchhash::exec::Execution;
use sketchhash::losses::{LossWeights, ObjectiveSpec};
use sketchhash::synth::{generate, SynthConfig};
use sketchhash::train::{batch_gradients, train_pipeline, Stage, TrainConfig, TrainLog};

fn small_corpus(categories: usize, per_category: usize, seed: u64) -> Corpus {
    Corpus::from_raw(&generate(&SynthConfig {
        categories,
        per_category,
        seed,
        noise_fraction: 0.1,
    }))
    .unwrap()
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        epochs_cnn: 1,
        epochs_rnn: 1,
        epochs_fused: 1,
        epochs_scl: 1,
        outer_iterations: 3,
        batch_size: 8,
        seed: 5,
        ..Default::default()
    }
}

fn inputs(n_per_cat: usize) -> (Encoder, Vec<SampleInput>) {
    let corpus = small_corpus(3, n_per_cat, 9);
    let mut cfg = EncoderConfig::compact(16, 3);
    cfg.offset_scale = 20.0;
    let encoder = Encoder::init(cfg).unwrap();
    let xs = corpus.sketches.iter().map(|s| encoder.prepare(s).unwrap()).collect();
    (encoder, xs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn gradients_do_not_depend_on_execution_or_chunking(n in 1usize..10) {
        let (encoder, xs) = inputs(4);
        let batch: Vec<&SampleInput> = xs.iter().take(n).collect();
        let spec = ObjectiveSpec { branch: Branch::Fused, weights: LossWeights::CEL_ONLY, centers: None };
        let (gs, ls) = batch_gradients(&encoder, &batch, None, &spec, Execution::Sequential).unwrap();
        let (gp, lp) = batch_gradients(&encoder, &batch, None, &spec, Execution::Parallel).unwrap();
        prop_assert_eq!(&gs, &gp);
        prop_assert_eq!(ls, lp);
        // mean over the batch equals the mean of single-sample gradients
        let mut acc: Option<sketchhash::numeric::Gradients> = None;
        for x in &batch {
            let (g, _) = batch_gradients(&encoder, &[*x], None, &spec, Execution::Sequential).unwrap();
            match acc.as_mut() {
                Some(a) => a.add_scaled(&g, 1.0),
                None => acc = Some(g),
            }
        }
        let mut acc = acc.unwrap();
        acc.scale(1.0 / n as f64);
        let mut diff = acc.clone();
        diff.add_scaled(&gs, -1.0);
        prop_assert!(diff.global_norm() <= 1e-12 * (1.0 + gs.global_norm()));
    }
}

#[test]
fn pipeline_writes_every_artifact() {
    let corpus = small_corpus(3, 20, 4);
    let quotas = SplitQuotas {
        train: 10,
        validation: 2,
        retrieval: 5,
        query: 2,
    };
    let split = make_splits(&corpus.labels(), &corpus.categories, quotas, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let out = train_pipeline(&corpus, &split, &EncoderConfig::compact(16, 3), &cfg, Some(dir.path()), Execution::Parallel).unwrap();

    let a = out.artifacts.as_ref().unwrap();
    assert_eq!(a.stage_checkpoints.len(), 5);
    for (path, stage) in a.stage_checkpoints.iter().zip([
        Stage::PretrainCnn,
        Stage::PretrainRnn,
        Stage::FusedCel,
        Stage::FusedScl,
        Stage::Alternating,
    ]) {
        assert!(path.ends_with(format!("{}.ckpt", stage.file_stem())));
        Encoder::from_bytes(&fs::read(path).unwrap()).unwrap();
    }
    let final_enc = Encoder::from_bytes(&fs::read(&a.stage_checkpoints[4]).unwrap()).unwrap();
    assert_eq!(final_enc, out.encoder);
    assert_eq!(fs::read(&a.gallery).unwrap(), out.gallery.to_bytes());
    assert_eq!(out.gallery.len(), split.retrieval.len());

    let log = fs::read_to_string(&a.log).unwrap();
    assert!(log.starts_with(TrainLog::HEADER));
    for s in 1..=5 {
        assert!(out.log.rows.iter().any(|r| r.stage == s), "no rows for stage {s}");
    }
    assert!(out.log.rows.iter().all(|r| r.grad_norm.is_finite() && r.total.is_finite()));

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(&a.manifest).unwrap()).unwrap();
    for key in ["seed", "corpus_hash", "encoder", "train", "gradient_clipping", "centers", "code_updates", "gallery_hash"] {
        assert!(!manifest[key].is_null(), "manifest lacks {key}");
    }
    assert_eq!(manifest["code_updates"].as_array().unwrap().len(), 3);

    let centers = out.centers.as_ref().unwrap();
    assert!(centers.is_frozen());
    assert!(centers.provenance.filtered);
    let (before, after) = out.center_bytes.as_ref().unwrap();
    assert_eq!(before, after);
    for r in &out.recomputes {
        assert!(r.ql_after <= r.ql_before);
        assert_eq!(r.ql_after == r.ql_before, r.changed_bits == 0);
    }
}

#[test]
fn pipeline_is_deterministic_across_execution_modes() {
    let corpus = small_corpus(2, 12, 6);
    let quotas = SplitQuotas {
        train: 6,
        validation: 2,
        retrieval: 3,
        query: 1,
    };
    let split = make_splits(&corpus.labels(), &corpus.categories, quotas, 2).unwrap();
    let cfg = TrainConfig {
        outer_iterations: 1,
        ..tiny_config()
    };
    let enc = EncoderConfig::compact(16, 2);
    let a = train_pipeline(&corpus, &split, &enc, &cfg, None, Execution::Sequential).unwrap();
    let b = train_pipeline(&corpus, &split, &enc, &cfg, None, Execution::Parallel).unwrap();
    assert_eq!(a.encoder.to_bytes(), b.encoder.to_bytes());
    assert_eq!(a.gallery.to_bytes(), b.gallery.to_bytes());
}

#[test]
fn filtered_training_drops_outliers() {
    let corpus = small_corpus(2, 20, 8);
    let quotas = SplitQuotas {
        train: 20,
        validation: 0,
        retrieval: 0,
        query: 0,
    };
    let split = make_splits(&corpus.labels(), &corpus.categories, quotas, 3).unwrap();
    let cfg = TrainConfig {
        filter_training: true,
        outer_iterations: 1,
        ..tiny_config()
    };
    let out = train_pipeline(&corpus, &split, &EncoderConfig::compact(16, 2), &cfg, None, Execution::Parallel).unwrap();
    let centers = out.centers.unwrap();
    assert!(centers.provenance.sketches < split.train.len());
    assert_eq!(out.train_codes.len(), centers.provenance.sketches);
}
