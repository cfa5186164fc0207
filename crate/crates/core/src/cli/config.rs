use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};

use crate::encoder::{parse_key_values, EncoderConfig, STANDARD_CODE_BITS};
use crate::exec::Execution;
use crate::train::TrainConfig;

/// Everything a run needs, read from a `key=value` file with command-line
/// `--set key=value` overrides applied on top.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub profile: String,
    pub code_bits: usize,
    /// Permit code lengths outside 16/24/32/64.
    pub allow_nonstandard_bits: bool,
    pub recognition_width: usize,
    pub init_seed: u64,
    pub execution: Execution,
    pub corpus: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub checkpoints: Option<PathBuf>,
    pub gallery: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            profile: "toy".into(),
            code_bits: 16,
            allow_nonstandard_bits: false,
            recognition_width: 0,
            init_seed: 0,
            execution: Execution::Parallel,
            corpus: None,
            split: None,
            checkpoints: None,
            gallery: None,
            reports: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .ok()
        .with_context(|| format!("config key `{key}`: cannot parse `{value}`"))
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in parse_key_values(text) {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .with_context(|| format!("override `{pair}` is not key=value"))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "epochs_cnn" => t.epochs_cnn = parse(key, value)?,
            "epochs_rnn" => t.epochs_rnn = parse(key, value)?,
            "epochs_fused" => t.epochs_fused = parse(key, value)?,
            "epochs_scl" => t.epochs_scl = parse(key, value)?,
            "outer_iterations" => t.outer_iterations = parse(key, value)?,
            "inner_steps" => {
                t.inner_steps = if value == "epoch" { None } else { Some(parse(key, value)?) }
            }
            "batch_size" => t.batch_size = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "lr_decay_every" => t.lr_decay_every = parse(key, value)?,
            "lr_decay" => t.lr_decay = parse(key, value)?,
            "clip_norm" => t.clip_norm = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "lambda_scl" => t.weights.scl = parse(key, value)?,
            "lambda_ql" => t.weights.ql = parse(key, value)?,
            "filter_centers" => t.filter_centers = parse(key, value)?,
            "filter_training" => t.filter_training = parse(key, value)?,
            "entropy_lower" => t.entropy_lower = parse(key, value)?,
            "entropy_upper" => t.entropy_upper = parse(key, value)?,
            "recompute_centers" => t.recompute_centers = parse(key, value)?,
            "skip_scl_stage" => t.skip_scl_stage = parse(key, value)?,
            "profile" => self.profile = value.to_string(),
            "code_bits" => self.code_bits = parse(key, value)?,
            "allow_nonstandard_bits" => self.allow_nonstandard_bits = parse(key, value)?,
            "recognition_width" => self.recognition_width = parse(key, value)?,
            "init_seed" => self.init_seed = parse(key, value)?,
            "execution" => {
                self.execution = match value {
                    "parallel" => Execution::Parallel,
                    "sequential" => Execution::Sequential,
                    _ => bail!("config key `execution`: expected parallel or sequential"),
                }
            }
            "corpus" => self.corpus = Some(value.into()),
            "split" => self.split = Some(value.into()),
            "checkpoints" => self.checkpoints = Some(value.into()),
            "gallery" => self.gallery = Some(value.into()),
            "reports" => self.reports = Some(value.into()),
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.allow_nonstandard_bits && !STANDARD_CODE_BITS.contains(&self.code_bits) {
            bail!(
                "code length {} is not one of {:?}; set allow_nonstandard_bits=true to override",
                self.code_bits,
                STANDARD_CODE_BITS
            );
        }
        self.train.validate().context("train")?;
        Ok(())
    }

    pub fn encoder_config(&self, classes: usize) -> Result<EncoderConfig> {
        let mut c = EncoderConfig::by_profile(&self.profile, self.code_bits, classes)?;
        c.recognition_width = self.recognition_width;
        c.init_seed = self.init_seed;
        Ok(c)
    }

    /// Canonical text form; paths are left out so relocated runs hash alike.
    pub fn describe(&self) -> String {
        let mut s = self.train.describe();
        let _ = writeln!(s, "profile={}", self.profile);
        let _ = writeln!(s, "code_bits={}", self.code_bits);
        let _ = writeln!(s, "allow_nonstandard_bits={}", self.allow_nonstandard_bits);
        let _ = writeln!(s, "recognition_width={}", self.recognition_width);
        let _ = writeln!(s, "init_seed={}", self.init_seed);
        s
    }
}
