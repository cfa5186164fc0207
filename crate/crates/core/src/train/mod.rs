//! Staged training: branch pretraining, fused fine-tuning, fixed-center
//! fine-tuning and alternating code/parameter optimization.

mod adam;
mod pipeline;
mod stages;

use std::fmt::Write as _;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::encoder::{Encoder, EncoderError};
use crate::entropy::EntropyError;
use crate::losses::{LossError, LossWeights};
use crate::numeric::NumericError;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use pipeline::{
    finish_from_fused, prepare_samples, train_pipeline, Finish, PipelineArtifacts, PipelineOutput,
    PreparedSamples,
};
pub use stages::{
    alternating_full_train, batch_gradients, compute_centers, finetune_fused, pretrain_branch,
    AlternatingOutput, CodeRecompute,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("training diverged in stage {stage} at iteration {iteration}")]
    Diverged {
        stage: u8,
        iteration: u64,
        /// Parameters before the failing update.
        last_good: Box<Encoder>,
    },
    #[error("stage {from} cannot move back to stage {to}")]
    StageOrder { from: u8, to: u8 },
    #[error("stage 5 needs class centers unless the center weight is zero")]
    MissingCenters,
    #[error("no training samples")]
    NoSamples,
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Hyperparameters of the staged schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs_cnn: usize,
    pub epochs_rnn: usize,
    pub epochs_fused: usize,
    pub epochs_scl: usize,
    /// Outer iterations of the alternating stage.
    pub outer_iterations: usize,
    /// Parameter updates per outer iteration; `None` means one epoch.
    pub inner_steps: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay_every: usize,
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub weights: LossWeights,
    /// Compute centers from entropy-filtered sketches only.
    pub filter_centers: bool,
    /// Also drop entropy outliers from the training samples themselves.
    pub filter_training: bool,
    pub entropy_lower: f64,
    pub entropy_upper: f64,
    /// Recompute centers after stage 4 instead of keeping the stage-3 table.
    pub recompute_centers: bool,
    /// Skip stage 4; only allowed when the center weight is zero.
    pub skip_scl_stage: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_cnn: 20,
            epochs_rnn: 5,
            epochs_fused: 5,
            epochs_scl: 5,
            outer_iterations: 5,
            inner_steps: None,
            batch_size: 32,
            learning_rate: 0.01,
            lr_decay_every: 10,
            lr_decay: 0.1,
            clip_norm: 5.0,
            seed: 0,
            weights: LossWeights::DEFAULT,
            filter_centers: true,
            filter_training: false,
            entropy_lower: 0.05,
            entropy_upper: 0.95,
            recompute_centers: false,
            skip_scl_stage: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        if self.lr_decay_every == 0 {
            return Err(TrainError::Config("decay interval must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.clip_norm > 0.0) {
            return Err(TrainError::Config("learning rate and clip norm must be positive".into()));
        }
        self.weights.validate()?;
        if self.skip_scl_stage && self.weights.scl > 0.0 {
            return Err(TrainError::MissingCenters);
        }
        Ok(())
    }

    /// `learning_rate * decay^floor(epoch / decay_every)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = (epoch / self.lr_decay_every) as i32;
        if self.lr_decay == 0.1 {
            self.learning_rate * 10f64.powi(-k)
        } else {
            self.learning_rate * self.lr_decay.powi(k)
        }
    }

    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "epochs_cnn={}", self.epochs_cnn);
        let _ = writeln!(s, "epochs_rnn={}", self.epochs_rnn);
        let _ = writeln!(s, "epochs_fused={}", self.epochs_fused);
        let _ = writeln!(s, "epochs_scl={}", self.epochs_scl);
        let _ = writeln!(s, "outer_iterations={}", self.outer_iterations);
        let inner = self.inner_steps.map_or("epoch".to_string(), |n| n.to_string());
        let _ = writeln!(s, "inner_steps={inner}");
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "learning_rate={:?}", self.learning_rate);
        let _ = writeln!(s, "lr_decay_every={}", self.lr_decay_every);
        let _ = writeln!(s, "lr_decay={:?}", self.lr_decay);
        let _ = writeln!(s, "clip_norm={:?}", self.clip_norm);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "lambda_scl={:?}", self.weights.scl);
        let _ = writeln!(s, "lambda_ql={:?}", self.weights.ql);
        let _ = writeln!(s, "filter_centers={}", self.filter_centers);
        let _ = writeln!(s, "filter_training={}", self.filter_training);
        let _ = writeln!(s, "entropy_lower={:?}", self.entropy_lower);
        let _ = writeln!(s, "entropy_upper={:?}", self.entropy_upper);
        let _ = writeln!(s, "recompute_centers={}", self.recompute_centers);
        let _ = writeln!(s, "skip_scl_stage={}", self.skip_scl_stage);
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    PretrainCnn = 1,
    PretrainRnn = 2,
    FusedCel = 3,
    FusedScl = 4,
    Alternating = 5,
}

impl Stage {
    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            Stage::PretrainCnn => "stage1_cnn",
            Stage::PretrainRnn => "stage2_rnn",
            Stage::FusedCel => "stage3_fused",
            Stage::FusedScl => "stage4_scl",
            Stage::Alternating => "stage5_final",
        }
    }
}

/// Progress through the schedule; the stage never moves backwards.
///
/// `epoch` counts epochs within the current stage. `schedule_epoch` drives
/// the learning rate: it restarts for each from-scratch stage (1, 2 and the
/// fusion stage 3) and keeps counting through the fine-tuning stages 4 and 5.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    stage: Stage,
    pub epoch: usize,
    pub schedule_epoch: usize,
    pub iteration: u64,
}

impl TrainState {
    pub fn new() -> Self {
        TrainState {
            stage: Stage::PretrainCnn,
            epoch: 0,
            schedule_epoch: 0,
            iteration: 0,
        }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    /// Enters `stage`, resetting the per-stage epoch counter.
    pub fn enter(&mut self, stage: Stage) -> Result<(), TrainError> {
        if stage < self.stage {
            return Err(TrainError::StageOrder {
                from: self.stage.index(),
                to: stage.index(),
            });
        }
        if stage != self.stage {
            self.epoch = 0;
            if stage <= Stage::FusedCel {
                self.schedule_epoch = 0;
            }
        }
        self.stage = stage;
        Ok(())
    }
}

impl Default for TrainState {
    fn default() -> Self {
        Self::new()
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub stage: u8,
    pub epoch: usize,
    pub iteration: u64,
    pub cel: f64,
    pub scl: f64,
    pub ql: f64,
    pub total: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub const HEADER: &'static str = "stage,epoch,iteration,cel,scl,ql,total,lr,grad_norm";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.9},{:.9},{:.9},{:.9},{:e},{:.6}",
                r.stage, r.epoch, r.iteration, r.cel, r.scl, r.ql, r.total, r.lr, r.grad_norm
            );
        }
        s
    }

    pub fn stage_rows(&self, stage: Stage) -> impl Iterator<Item = &LogRow> {
        self.rows.iter().filter(move |r| r.stage == stage.index())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 0.01);
        assert_eq!(c.lr_at(9), 0.01);
        assert_eq!(c.lr_at(10), 0.01 * 10f64.powi(-1));
        assert_eq!(c.lr_at(25), 0.01 * 10f64.powi(-2));
    }

    #[test]
    fn stage_never_decreases() {
        let mut s = TrainState::new();
        s.enter(Stage::FusedCel).unwrap();
        s.epoch = 3;
        s.enter(Stage::FusedCel).unwrap();
        assert_eq!(s.epoch, 3);
        assert!(s.enter(Stage::PretrainRnn).is_err());
        s.schedule_epoch = 3;
        s.enter(Stage::Alternating).unwrap();
        assert_eq!((s.epoch, s.schedule_epoch), (0, 3));
    }

    #[test]
    fn skipping_center_stage_needs_zero_weight() {
        let mut c = TrainConfig {
            skip_scl_stage: true,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(TrainError::MissingCenters)));
        c.weights.scl = 0.0;
        assert!(c.validate().is_ok());
    }
}
