use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{quantize, BinaryCode, Branch, Encoder, SampleInput};
use crate::exec::{self, Execution};
use crate::losses::{
    compute_class_centers, quantization_loss, sample_objective, CenterProvenance, CenterTable,
    LossComponents, LossWeights, ObjectiveSpec,
};
use crate::numeric::{Gradients, Graph};

use super::{adam_step, AdamState, LogRow, Stage, TrainConfig, TrainError, TrainLog, TrainState};

/// Samples per work unit in [`batch_gradients`]. Each unit sums its samples
/// in order and units are then summed in order, so results do not depend on
/// the number of threads.
const CHUNK: usize = 4;

/// Mean gradient and mean loss components of the objective over `samples`.
pub fn batch_gradients(
    encoder: &Encoder,
    samples: &[&SampleInput],
    codes: Option<&[&BinaryCode]>,
    spec: &ObjectiveSpec<'_>,
    mode: Execution,
) -> Result<(Gradients, LossComponents), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::NoSamples);
    }
    if let Some(c) = codes {
        if c.len() != samples.len() {
            return Err(TrainError::Config("one code per sample required".into()));
        }
    }
    let starts: Vec<usize> = (0..samples.len()).step_by(CHUNK).collect();
    let partial = exec::try_map(mode, &starts, |&start| {
        let end = (start + CHUNK).min(samples.len());
        let mut grads = Gradients::zeros_like(&encoder.params);
        let mut comps = LossComponents::default();
        for i in start..end {
            let mut g = Graph::new(&encoder.params);
            let code = codes.map(|c| c[i]);
            let (out, c) = sample_objective(&mut g, encoder, samples[i], spec, code)?;
            g.backward(out)?;
            grads.add_scaled(g.param_grads()?, 1.0);
            comps.add_scaled(&c, 1.0);
        }
        Ok::<_, TrainError>((grads, comps))
    })?;
    let mut grads = Gradients::zeros_like(&encoder.params);
    let mut comps = LossComponents::default();
    for (g, c) in &partial {
        grads.add_scaled(g, 1.0);
        comps.add_scaled(c, 1.0);
    }
    let inv = 1.0 / samples.len() as f64;
    grads.scale(inv);
    let total = comps;
    comps = LossComponents::default();
    comps.add_scaled(&total, inv);
    Ok((grads, comps))
}

fn trainable(branch: Branch) -> impl Fn(&str) -> bool {
    move |name: &str| match branch {
        Branch::Cnn => name.starts_with("cnn.") || name.starts_with("head.cnn."),
        Branch::Rnn => name.starts_with("rnn.") || name.starts_with("head.rnn."),
        Branch::Fused => !name.starts_with("head."),
    }
}

fn shuffled(n: usize, seed: u64, stage: Stage, round: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stage.index() as u64) << 32) | round as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

struct Step<'a> {
    stage: Stage,
    spec: ObjectiveSpec<'a>,
    codes: Option<&'a [BinaryCode]>,
    lr: f64,
}

#[allow(clippy::too_many_arguments)]
fn run_batches(
    encoder: &mut Encoder,
    samples: &[SampleInput],
    batches: &[&[usize]],
    step: &Step<'_>,
    cfg: &TrainConfig,
    adam: &mut AdamState,
    state: &mut TrainState,
    log: &mut TrainLog,
    mode: Execution,
) -> Result<(), TrainError> {
    let branch = step.spec.branch;
    for batch in batches {
        let xs: Vec<&SampleInput> = batch.iter().map(|&i| &samples[i]).collect();
        let cs: Option<Vec<&BinaryCode>> = step.codes.map(|c| batch.iter().map(|&i| &c[i]).collect());
        let result = batch_gradients(encoder, &xs, cs.as_deref(), &step.spec, mode);
        let (mut grads, comps) = match result {
            Ok(r) => r,
            Err(TrainError::Numeric(_)) | Err(TrainError::NonFiniteGradient) => {
                return Err(diverged(encoder, step.stage, state.iteration));
            }
            Err(e) => return Err(e),
        };
        if !comps.total.is_finite() || !grads.is_finite() {
            return Err(diverged(encoder, step.stage, state.iteration));
        }
        let norm = grads.clip_global_norm(cfg.clip_norm);
        adam_step(&mut encoder.params, &grads, adam, step.lr, trainable(branch))?;
        state.iteration += 1;
        log.rows.push(LogRow {
            stage: step.stage.index(),
            epoch: state.epoch,
            iteration: state.iteration,
            cel: comps.cel,
            scl: comps.scl,
            ql: comps.ql,
            total: comps.total,
            lr: step.lr,
            grad_norm: norm,
        });
    }
    Ok(())
}

fn diverged(encoder: &Encoder, stage: Stage, iteration: u64) -> TrainError {
    TrainError::Diverged {
        stage: stage.index(),
        iteration,
        last_good: Box::new(encoder.clone()),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_epochs(
    encoder: &mut Encoder,
    samples: &[SampleInput],
    stage: Stage,
    spec: ObjectiveSpec<'_>,
    epochs: usize,
    cfg: &TrainConfig,
    state: &mut TrainState,
    log: &mut TrainLog,
    mode: Execution,
) -> Result<(), TrainError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(TrainError::NoSamples);
    }
    state.enter(stage)?;
    let mut adam = AdamState::new();
    for _ in 0..epochs {
        let order = shuffled(samples.len(), cfg.seed, stage, state.epoch);
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        let step = Step {
            stage,
            spec,
            codes: None,
            lr: cfg.lr_at(state.schedule_epoch),
        };
        run_batches(encoder, samples, &batches, &step, cfg, &mut adam, state, log, mode)?;
        state.epoch += 1;
        state.schedule_epoch += 1;
    }
    Ok(())
}

/// Trains one branch and its temporary classifier head with cross-entropy only.
pub fn pretrain_branch(
    encoder: &mut Encoder,
    branch: Branch,
    samples: &[SampleInput],
    cfg: &TrainConfig,
    state: &mut TrainState,
    log: &mut TrainLog,
    mode: Execution,
) -> Result<(), TrainError> {
    let (stage, epochs) = match branch {
        Branch::Cnn => (Stage::PretrainCnn, cfg.epochs_cnn),
        Branch::Rnn => (Stage::PretrainRnn, cfg.epochs_rnn),
        Branch::Fused => return Err(TrainError::Config("pretraining needs a single branch".into())),
    };
    let spec = ObjectiveSpec {
        branch,
        weights: LossWeights::CEL_ONLY,
        centers: None,
    };
    run_epochs(encoder, samples, stage, spec, epochs, cfg, state, log, mode)
}

/// Fine-tunes the fused network without the binary constraint: cross-entropy
/// in stage 3, plus the center term in stage 4. The quantization weight in
/// `weights` is ignored.
#[allow(clippy::too_many_arguments)]
pub fn finetune_fused(
    encoder: &mut Encoder,
    samples: &[SampleInput],
    stage: Stage,
    weights: LossWeights,
    centers: Option<&CenterTable>,
    cfg: &TrainConfig,
    state: &mut TrainState,
    log: &mut TrainLog,
    mode: Execution,
) -> Result<(), TrainError> {
    let epochs = match stage {
        Stage::FusedCel => cfg.epochs_fused,
        Stage::FusedScl => cfg.epochs_scl,
        _ => return Err(TrainError::Config("fine-tuning runs in stage 3 or 4".into())),
    };
    let weights = LossWeights {
        scl: if stage == Stage::FusedCel { 0.0 } else { weights.scl },
        ql: 0.0,
    };
    if weights.scl > 0.0 && centers.is_none() {
        return Err(TrainError::MissingCenters);
    }
    let spec = ObjectiveSpec {
        branch: Branch::Fused,
        weights,
        centers,
    };
    run_epochs(encoder, samples, stage, spec, epochs, cfg, state, log, mode)
}

fn features(encoder: &Encoder, samples: &[SampleInput], mode: Execution) -> Result<Vec<Vec<f64>>, TrainError> {
    exec::try_map(mode, samples, |s| {
        let inf = encoder.infer(s, Branch::Fused)?;
        Ok(inf.feature.expect("fused feature").values().to_vec())
    })
}

/// Frozen per-class centers of the hash features of the samples flagged in `kept`.
pub fn compute_centers(
    encoder: &Encoder,
    samples: &[SampleInput],
    kept: &[bool],
    names: &[String],
    provenance: CenterProvenance,
    mode: Execution,
) -> Result<CenterTable, TrainError> {
    let chosen: Vec<SampleInput> = samples
        .iter()
        .zip(kept)
        .filter(|(_, k)| **k)
        .map(|(s, _)| s.clone())
        .collect();
    let f = features(encoder, &chosen, mode)?;
    let rows: Vec<&[f64]> = f.iter().map(Vec::as_slice).collect();
    let labels: Vec<u16> = chosen.iter().map(|s| s.label).collect();
    let mut table = compute_class_centers(&rows, &labels, names, provenance)?;
    table.freeze();
    Ok(table)
}

/// Quantization loss of the training set before and after one code update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodeRecompute {
    pub outer: usize,
    pub ql_before: f64,
    pub ql_after: f64,
    pub changed_bits: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlternatingOutput {
    /// Final code matrix, one code per training sample.
    pub codes: Vec<BinaryCode>,
    pub recomputes: Vec<CodeRecompute>,
}

/// Alternates parameter updates under the full objective with `B` fixed and
/// `B <- quantize(f)` over the whole training set.
#[allow(clippy::too_many_arguments)]
pub fn alternating_full_train(
    encoder: &mut Encoder,
    centers: Option<&CenterTable>,
    samples: &[SampleInput],
    cfg: &TrainConfig,
    state: &mut TrainState,
    log: &mut TrainLog,
    mode: Execution,
) -> Result<AlternatingOutput, TrainError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(TrainError::NoSamples);
    }
    if cfg.weights.scl > 0.0 && centers.is_none() {
        return Err(TrainError::MissingCenters);
    }
    state.enter(Stage::Alternating)?;
    let spec = ObjectiveSpec {
        branch: Branch::Fused,
        weights: cfg.weights,
        centers,
    };
    let steps_per_epoch = samples.len().div_ceil(cfg.batch_size);
    let inner = cfg.inner_steps.unwrap_or(steps_per_epoch);
    let mut codes: Vec<BinaryCode> = features(encoder, samples, mode)?
        .iter()
        .map(|f| quantize(f))
        .collect();
    let mut recomputes = Vec::with_capacity(cfg.outer_iterations);
    let mut adam = AdamState::new();
    for outer in 0..cfg.outer_iterations {
        let mut batches: Vec<Vec<usize>> = Vec::with_capacity(inner);
        let mut round = 0;
        while batches.len() < inner {
            let order = shuffled(samples.len(), cfg.seed, Stage::Alternating, outer * 1000 + round);
            for b in order.chunks(cfg.batch_size) {
                if batches.len() == inner {
                    break;
                }
                batches.push(b.to_vec());
            }
            round += 1;
        }
        let refs: Vec<&[usize]> = batches.iter().map(Vec::as_slice).collect();
        let step = Step {
            stage: Stage::Alternating,
            spec,
            codes: Some(&codes),
            lr: cfg.lr_at(state.schedule_epoch),
        };
        run_batches(encoder, samples, &refs, &step, cfg, &mut adam, state, log, mode)?;

        let f = features(encoder, samples, mode)?;
        let rows: Vec<&[f64]> = f.iter().map(Vec::as_slice).collect();
        let fresh: Vec<BinaryCode> = f.iter().map(|x| quantize(x)).collect();
        let ql_before = quantization_loss(&rows, &codes)?;
        let ql_after = quantization_loss(&rows, &fresh)?;
        let changed_bits = codes
            .iter()
            .zip(&fresh)
            .map(|(a, b)| a.bits().iter().zip(b.bits()).filter(|(x, y)| x != y).count())
            .sum();
        recomputes.push(CodeRecompute {
            outer,
            ql_before,
            ql_after,
            changed_bits,
        });
        codes = fresh;
        state.epoch += 1;
        state.schedule_epoch += 1;
    }
    Ok(AlternatingOutput { codes, recomputes })
}
