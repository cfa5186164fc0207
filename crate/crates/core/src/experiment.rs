//! End-to-end runs shared by the command line and the test suites: the
//! objective ablation and the zero-shot protocol.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::corpus::{Corpus, DatasetSplit, SketchId, SplitQuotas, StrokeSketch};
use crate::encoder::{Branch, Encoder, EncoderConfig};
use crate::eval::{evaluate_retrieval, intra_inter_ratio, random_codes, recognition_accuracy, zero_shot_protocol, EvalError};
use crate::exec::Execution;
use crate::hamming::{build_gallery, PackedCodes};
use crate::losses::LossWeights;
use crate::train::{finish_from_fused, prepare_samples, train_pipeline, PipelineOutput, Stage, TrainConfig, TrainError, TrainLog, TrainState};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Other(String),
}

fn other(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Other(e.to_string())
}

/// Retrieval and cluster metrics of one encoder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VariantMetrics {
    pub map: f64,
    pub precision_at_k: f64,
    pub d1: f64,
    pub d2: f64,
    pub ratio: f64,
}

fn sketches<'a>(corpus: &'a Corpus, ids: &[SketchId]) -> Result<Vec<&'a StrokeSketch>, ExperimentError> {
    ids.iter()
        .map(|&id| corpus.get(id).ok_or_else(|| other(format!("sketch id {id} not in corpus"))))
        .collect()
}

/// MAP and precision@k of query codes against a gallery of the retrieval
/// split, plus d1/d2 over the gallery's real-valued features.
pub fn variant_metrics(
    encoder: &Encoder,
    corpus: &Corpus,
    split: &DatasetSplit,
    k: usize,
    mode: Execution,
) -> Result<VariantMetrics, ExperimentError> {
    let gallery = build_gallery(encoder, corpus, &split.retrieval, mode).map_err(other)?;
    let queries = sketches(corpus, &split.query)?;
    let codes = encoder.encode_codes(&queries, mode).map_err(other)?;
    let labels: Vec<u16> = queries.iter().map(|s| s.label).collect();
    let report = evaluate_retrieval(&codes, &labels, &gallery, k.min(gallery.len()), mode)?;
    let items = sketches(corpus, &split.retrieval)?;
    let features = encoder.encode(&items, mode).map_err(other)?;
    let rows: Vec<&[f64]> = features.iter().map(|f| f.values()).collect();
    let gallery_labels: Vec<u16> = items.iter().map(|s| s.label).collect();
    let d = intra_inter_ratio(&rows, &gallery_labels)?;
    Ok(VariantMetrics {
        map: report.map,
        precision_at_k: report.precision_at_k,
        d1: d.d1,
        d2: d.d2,
        ratio: d.ratio,
    })
}

/// One seed of the objective ablation.
#[derive(Clone, Debug, Serialize)]
pub struct AblationOutcome {
    pub seed: u64,
    /// Validation accuracy of each branch with its temporary head (after stage 2).
    pub cnn_accuracy: f64,
    pub rnn_accuracy: f64,
    /// Validation accuracy of the final fused model.
    pub fused_accuracy: f64,
    pub full: VariantMetrics,
    /// Stages 4 and 5 rerun from the same stage-3 model with cross-entropy only.
    pub cel_only: VariantMetrics,
}

/// Trains the full pipeline, then reruns stages 4 and 5 from the stage-3
/// model with both auxiliary weights at zero, and measures both variants.
pub fn ablation(
    corpus: &Corpus,
    split: &DatasetSplit,
    encoder_config: &EncoderConfig,
    cfg: &TrainConfig,
    k: usize,
    mode: Execution,
) -> Result<(AblationOutcome, PipelineOutput), ExperimentError> {
    let out = train_pipeline(corpus, split, encoder_config, cfg, None, mode)?;
    let val = prepare_samples(&out.pretrained, corpus, &split.validation, mode)?;
    let cnn_accuracy = recognition_accuracy(&out.pretrained, &val.inputs, Branch::Cnn, mode)?;
    let rnn_accuracy = recognition_accuracy(&out.pretrained, &val.inputs, Branch::Rnn, mode)?;
    let fused_accuracy = recognition_accuracy(&out.encoder, &val.inputs, Branch::Fused, mode)?;
    let full = variant_metrics(&out.encoder, corpus, split, k, mode)?;

    let cel_cfg = TrainConfig {
        weights: LossWeights::CEL_ONLY,
        ..cfg.clone()
    };
    let samples = prepare_samples(&out.fused, corpus, &split.train, mode)?;
    let mut encoder = out.fused.clone();
    let mut state = TrainState::new();
    state.enter(Stage::FusedCel)?;
    state.schedule_epoch = cfg.epochs_fused;
    let mut log = TrainLog::default();
    finish_from_fused(&mut encoder, corpus, &samples, &cel_cfg, &mut state, &mut log, mode)?;
    let cel_only = variant_metrics(&encoder, corpus, split, k, mode)?;
    Ok((
        AblationOutcome {
            seed: cfg.seed,
            cnn_accuracy,
            rnn_accuracy,
            fused_accuracy,
            full,
            cel_only,
        },
        out,
    ))
}

/// Result of one zero-shot run.
#[derive(Clone, Debug, Serialize)]
pub struct ZeroShotOutcome {
    pub seed: u64,
    pub holdout: Vec<u16>,
    /// Labels (in the full corpus) of every training sketch.
    pub train_labels: BTreeSet<u16>,
    /// Labels of every gallery and query sketch.
    pub eval_labels: BTreeSet<u16>,
    pub map: f64,
    pub precision_at_k: f64,
    pub random_map: f64,
    pub k: usize,
}

/// Corpus holding only `ids`, relabelled densely over `categories`.
fn sub_corpus(corpus: &Corpus, categories: &[u16], ids: &[SketchId]) -> Result<Corpus, ExperimentError> {
    let names = categories.iter().map(|&c| corpus.categories[c as usize].clone()).collect();
    let sketches = ids
        .iter()
        .map(|&id| {
            let s = corpus.get(id).ok_or_else(|| other(format!("sketch id {id} not in corpus")))?;
            let label = categories.binary_search(&s.label).map_err(|_| other("label outside subset"))?;
            let mut s = s.clone();
            s.label = label as u16;
            Ok(s)
        })
        .collect::<Result<_, ExperimentError>>()?;
    Ok(Corpus {
        categories: names,
        sketches,
    })
}

/// Holds out `holdout` categories, trains on the rest and retrieves among the
/// held-out ones only; the baseline is uniformly random codes of the same
/// length over the same gallery and queries.
#[allow(clippy::too_many_arguments)]
pub fn zero_shot_experiment(
    corpus: &Corpus,
    seed: u64,
    holdout: usize,
    seen_quotas: SplitQuotas,
    unseen_quotas: SplitQuotas,
    encoder_config: &EncoderConfig,
    cfg: &TrainConfig,
    k: usize,
    mode: Execution,
) -> Result<ZeroShotOutcome, ExperimentError> {
    let labels = corpus.labels();
    let zs = zero_shot_protocol(&labels, &corpus.categories, seed, holdout, seen_quotas, unseen_quotas)?;
    let seen: Vec<u16> = labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|c| zs.holdout.binary_search(c).is_err())
        .collect();

    let train_ids: Vec<SketchId> = zs.seen.train.iter().chain(&zs.seen.validation).copied().collect();
    let sub = sub_corpus(corpus, &seen, &train_ids)?;
    let n_train = zs.seen.train.len() as SketchId;
    let sub_split = DatasetSplit {
        train: (0..n_train).collect(),
        validation: (n_train..train_ids.len() as SketchId).collect(),
        seed,
        ..Default::default()
    };
    let out = train_pipeline(&sub, &sub_split, encoder_config, cfg, None, mode)?;

    let gallery = build_gallery(&out.encoder, corpus, &zs.unseen.retrieval, mode).map_err(other)?;
    let queries = sketches(corpus, &zs.unseen.query)?;
    let query_labels: Vec<u16> = queries.iter().map(|s| s.label).collect();
    let codes = out.encoder.encode_codes(&queries, mode).map_err(other)?;
    let k = k.min(gallery.len());
    let report = evaluate_retrieval(&codes, &query_labels, &gallery, k, mode)?;

    let d = gallery.code_bits();
    let random_gallery = PackedCodes::pack(
        &random_codes(gallery.len(), d, seed ^ 0x7261_6e64),
        gallery.ids().to_vec(),
        gallery.labels().map(<[u16]>::to_vec),
    )
    .map_err(other)?;
    let random_queries = random_codes(codes.len(), d, seed ^ 0x7175_6572);
    let random = evaluate_retrieval(&random_queries, &query_labels, &random_gallery, k, mode)?;

    let label_of = |id: &SketchId| corpus.get(*id).map(|s| s.label);
    Ok(ZeroShotOutcome {
        seed,
        holdout: zs.holdout,
        train_labels: zs.seen.train.iter().filter_map(label_of).collect(),
        eval_labels: zs.unseen.retrieval.iter().chain(&zs.unseen.query).filter_map(label_of).collect(),
        map: report.map,
        precision_at_k: report.precision_at_k,
        random_map: random.map,
        k,
    })
}
