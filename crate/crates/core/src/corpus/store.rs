//! Binary corpus file and text split manifest.
//!
//! Corpus layout (little-endian):
//!
//! ```text
//! magic     8 bytes "SKHCORPS"
//! version   u32     1
//! n_cat     u32,  then per category: u16 length + UTF-8 name
//! n_sketch  u32,  then per sketch:
//!   label u16, step count u32, steps as f32 (dx, dy, p1, p2) quadruples
//! ```
//!
//! Offsets are stored un-normalized.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use super::{
    to_stroke_sequence, CorpusError, DatasetSplit, PenState, RawSketch, SketchId, SplitPart,
    StrokeSketch, StrokeStep,
};

const MAGIC: &[u8; 8] = b"SKHCORPS";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub categories: Vec<String>,
    pub sketches: Vec<StrokeSketch>,
}

impl Corpus {
    /// Builds a corpus from parsed records; labels follow the sorted category names.
    pub fn from_raw(records: &[RawSketch]) -> Result<Self, CorpusError> {
        let names: BTreeSet<&str> = records.iter().map(|r| r.category.as_str()).collect();
        if names.len() > u16::MAX as usize {
            return Err(CorpusError::TooManyCategories(names.len()));
        }
        let categories: Vec<String> = names.into_iter().map(str::to_string).collect();
        let sketches = records
            .iter()
            .map(|r| {
                let label = categories
                    .binary_search(&r.category)
                    .expect("category collected above") as u16;
                to_stroke_sequence(r, label)
            })
            .collect::<Result<_, _>>()?;
        Ok(Corpus {
            categories,
            sketches,
        })
    }

    pub fn len(&self) -> usize {
        self.sketches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sketches.is_empty()
    }

    pub fn get(&self, id: SketchId) -> Option<&StrokeSketch> {
        self.sketches.get(id as usize)
    }

    pub fn labels(&self) -> Vec<u16> {
        self.sketches.iter().map(|s| s.label).collect()
    }

    /// Git-style content hash: SHA-256 over `"blob <len>\0"` followed by the encoded corpus.
    pub fn content_hash(&self) -> String {
        content_hash(&encode_corpus(self))
    }
}

/// SHA-256 over `"blob <len>\0"` followed by `bytes`, as lowercase hex.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn encode_corpus(corpus: &Corpus) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(corpus.categories.len() as u32).to_le_bytes());
    for name in &corpus.categories {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    out.extend_from_slice(&(corpus.sketches.len() as u32).to_le_bytes());
    for s in &corpus.sketches {
        out.extend_from_slice(&s.label.to_le_bytes());
        out.extend_from_slice(&(s.steps.len() as u32).to_le_bytes());
        for step in &s.steps {
            for v in step.features() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_corpus(bytes: &[u8]) -> Result<Corpus, CorpusError> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], CorpusError> {
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| CorpusError::Format(format!("truncated at byte {pos}")))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(8)? != MAGIC {
        return Err(CorpusError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(CorpusError::Format(format!("unsupported version {version}")));
    }
    let n_cat = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut categories = Vec::with_capacity(n_cat.min(1 << 16));
    for _ in 0..n_cat {
        let len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(len)?.to_vec())
            .map_err(|_| CorpusError::Format("category name is not UTF-8".into()))?;
        categories.push(name);
    }
    let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut sketches = Vec::with_capacity(n.min(1 << 24));
    for i in 0..n {
        let label = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if label as usize >= categories.len() {
            return Err(CorpusError::UnknownLabel(label));
        }
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let raw = take(count.checked_mul(16).ok_or_else(|| CorpusError::Format("step count overflow".into()))?)?;
        let mut steps = Vec::with_capacity(count);
        for q in raw.chunks_exact(16) {
            let f = |k: usize| f32::from_le_bytes(q[4 * k..4 * k + 4].try_into().unwrap()) as f64;
            let pen = match (f(2), f(3)) {
                (p1, p2) if p1 == 1.0 && p2 == 0.0 => PenState::Continue,
                (p1, p2) if p1 == 0.0 && p2 == 1.0 => PenState::NewStroke,
                _ => return Err(CorpusError::Format(format!("sketch {i}: invalid pen flags"))),
            };
            steps.push(StrokeStep {
                dx: f(0),
                dy: f(1),
                pen,
            });
        }
        sketches.push(StrokeSketch::new(steps, label)?);
    }
    if pos != bytes.len() {
        return Err(CorpusError::Format("trailing bytes".into()));
    }
    Ok(Corpus {
        categories,
        sketches,
    })
}

/// Text manifest: a `seed` line, then one `[part]` header per split followed
/// by one identifier per line.
pub fn write_manifest(split: &DatasetSplit) -> String {
    let mut s = format!("seed {}\n", split.seed);
    for part in SplitPart::ALL {
        let _ = writeln!(s, "[{}]", part.name());
        for id in split.part(part) {
            let _ = writeln!(s, "{id}");
        }
    }
    s
}

pub fn read_manifest(text: &str) -> Result<DatasetSplit, CorpusError> {
    let mut split = DatasetSplit::default();
    let mut current: Option<SplitPart> = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| CorpusError::Manifest(format!("line {}: {what}", i + 1));
        if let Some(seed) = line.strip_prefix("seed ") {
            split.seed = seed.trim().parse().map_err(|_| bad("invalid seed"))?;
        } else if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = Some(SplitPart::parse(name).ok_or_else(|| bad("unknown split"))?);
        } else {
            let part = current.ok_or_else(|| bad("identifier before any split header"))?;
            let id: SketchId = line.parse().map_err(|_| bad("invalid identifier"))?;
            split.part_mut(part).push(id);
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Corpus {
        let recs = vec![
            RawSketch::new(vec![vec![(0, 0), (3, 4)], vec![(9, 9)]], "zebra").unwrap(),
            RawSketch::new(vec![vec![(1, 1)]], "apple").unwrap(),
        ];
        Corpus::from_raw(&recs).unwrap()
    }

    #[test]
    fn labels_follow_sorted_names() {
        let c = sample();
        assert_eq!(c.categories, vec!["apple", "zebra"]);
        assert_eq!(c.labels(), vec![1, 0]);
    }

    #[test]
    fn corpus_round_trip_and_hash() {
        let c = sample();
        let bytes = encode_corpus(&c);
        assert_eq!(&bytes[..8], b"SKHCORPS");
        let d = decode_corpus(&bytes).unwrap();
        assert_eq!(c, d);
        assert_eq!(c.content_hash(), d.content_hash());
        assert_eq!(c.content_hash().len(), 64);
        assert!(decode_corpus(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let s = DatasetSplit {
            train: vec![3, 1],
            validation: vec![],
            retrieval: vec![7],
            query: vec![0, 2],
            seed: 42,
        };
        let text = write_manifest(&s);
        assert_eq!(read_manifest(&text).unwrap(), s);
        assert!(read_manifest("12\n").is_err());
    }
}
