//! Vector-sketch ingestion: record parsing, stroke-step conversion,
//! rasterization, deterministic splits and the binary corpus format.

mod raster;
mod records;
mod split;
mod store;
mod strokes;

pub use raster::{rasterize, RasterSketch, RASTER_MARGIN};
pub use records::{parse_sketch_records, RecordError, RecordFormat};
pub use split::{make_splits, make_splits_over, DatasetSplit, SplitPart, SplitQuotas};
pub use store::{content_hash, decode_corpus, encode_corpus, read_manifest, write_manifest, Corpus};
pub use strokes::{to_stroke_sequence, OffsetNormalizer, PenState, StrokeSketch, StrokeStep};

use thiserror::Error;

pub type SketchId = u32;

/// A drawing as absolute integer polylines plus its category name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawSketch {
    pub strokes: Vec<Vec<(i32, i32)>>,
    pub category: String,
}

impl RawSketch {
    pub fn new(strokes: Vec<Vec<(i32, i32)>>, category: impl Into<String>) -> Result<Self, CorpusError> {
        if strokes.is_empty() {
            return Err(CorpusError::EmptyDrawing);
        }
        if strokes.iter().any(Vec::is_empty) {
            return Err(CorpusError::EmptyStroke);
        }
        if strokes.iter().flatten().any(|&(x, y)| x < 0 || y < 0) {
            return Err(CorpusError::NegativeCoordinate);
        }
        Ok(RawSketch {
            strokes,
            category: category.into(),
        })
    }

    pub fn point_count(&self) -> usize {
        self.strokes.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("drawing has no strokes")]
    EmptyDrawing,
    #[error("drawing contains a stroke without points")]
    EmptyStroke,
    #[error("negative coordinate")]
    NegativeCoordinate,
    #[error("stroke sequence is empty")]
    EmptySequence,
    #[error("raster side {0} is below the minimum of 16")]
    RasterTooSmall(usize),
    #[error("category `{category}` has {available} sketches, quotas need {required}")]
    InsufficientCategory {
        category: String,
        available: usize,
        required: usize,
    },
    #[error("label {0} has no category name")]
    UnknownLabel(u16),
    #[error("too many categories ({0}); labels are 16-bit")]
    TooManyCategories(usize),
    #[error("corpus file: {0}")]
    Format(String),
    #[error("split manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
