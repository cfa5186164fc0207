//! Learned binary hashing for stroke-sequence sketches.
//!
//! The crate covers the whole pipeline: parsing vector sketches, rasterizing
//! them, entropy-based noise filtering, a two-branch (convolutional +
//! bidirectional GRU) encoder trained with cross-entropy, fixed-center and
//! quantization losses through a staged schedule, packed Hamming-space
//! retrieval, and retrieval/recognition metrics.

pub mod exec;
pub mod corpus;
pub mod entropy;
pub mod numeric;
pub mod encoder;
pub mod losses;
pub mod hamming;
pub mod train;
pub mod eval;
pub mod synth;
pub mod gradcheck;
pub mod experiment;
pub mod cli;
