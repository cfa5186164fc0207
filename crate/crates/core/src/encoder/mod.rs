//! Two-branch sketch encoder and hash layer.

mod codes;
mod config;
mod model;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::numeric::NumericError;

pub use codes::{quantize, BinaryCode, HashFeature};
pub use config::{parse_key_values, ConvLayer, EncoderConfig, STANDARD_CODE_BITS};
pub use model::{classify_logits, hash_affine, Branch, Encoder, ForwardVars, Inference, SampleInput};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder configuration: {0}")]
    Config(String),
    #[error("hash feature outside the open interval (0, 1)")]
    FeatureRange,
    #[error("invalid code: {0}")]
    Code(String),
    #[error("raster shape {got:?} does not match configured side {expected}")]
    RasterSize { expected: usize, got: Vec<usize> },
    #[error("empty stroke sequence")]
    EmptySequence,
    #[error("batch sizes differ: {0} vs {1}")]
    BatchMismatch(usize, usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}
