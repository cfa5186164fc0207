//! Packed binary codes and exhaustive Hamming-distance ranking.
//!
//! Bit `i` of a code lives in word `i / 64` at bit position `i % 64`
//! (least significant first); unused high bits of the last word are zero.
//! Rankings sort by ascending distance and break ties by ascending gallery
//! insertion index.
//!
//! Gallery file layout (little-endian):
//!
//! ```text
//! magic    8 bytes "SKHGALRY"
//! version  u32     1
//! n        u64
//! d        u32
//! labels   u8      1 if a label table follows the id table
//! words    u64 * n * ceil(d / 64)
//! ids      u32 * n
//! labels   u16 * n   (optional)
//! ```

use std::collections::HashSet;

use thiserror::Error;

use crate::corpus::{Corpus, SketchId};
use crate::encoder::{BinaryCode, Encoder, EncoderError};
use crate::exec::{self, Execution};

const MAGIC: &[u8; 8] = b"SKHGALRY";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HammingError {
    #[error("codes have mixed lengths ({0} and {1} bits)")]
    MixedLengths(usize, usize),
    #[error("code length {got} does not match gallery length {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("{ids} ids for {codes} codes")]
    IdCount { ids: usize, codes: usize },
    #[error("duplicate gallery id {0}")]
    DuplicateId(SketchId),
    #[error("unknown sketch id {0}")]
    UnknownId(SketchId),
    #[error("invalid gallery file: {0}")]
    Format(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedCodes {
    d: usize,
    words: Vec<u64>,
    ids: Vec<SketchId>,
    labels: Option<Vec<u16>>,
}

pub fn words_per_code(d: usize) -> usize {
    d.div_ceil(64)
}

fn pack_one(code: &BinaryCode, out: &mut [u64]) {
    for (i, &bit) in code.bits().iter().enumerate() {
        if bit {
            out[i / 64] |= 1u64 << (i % 64);
        }
    }
}

impl PackedCodes {
    /// An empty gallery of `d`-bit codes.
    pub fn empty(d: usize) -> Self {
        PackedCodes {
            d,
            words: Vec::new(),
            ids: Vec::new(),
            labels: None,
        }
    }

    pub fn pack(codes: &[BinaryCode], ids: Vec<SketchId>, labels: Option<Vec<u16>>) -> Result<Self, HammingError> {
        if ids.len() != codes.len() {
            return Err(HammingError::IdCount {
                ids: ids.len(),
                codes: codes.len(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != codes.len() {
                return Err(HammingError::Format("label count differs from code count".into()));
            }
        }
        let d = codes.first().map_or(0, BinaryCode::len);
        if let Some(c) = codes.iter().find(|c| c.len() != d) {
            return Err(HammingError::MixedLengths(d, c.len()));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(HammingError::DuplicateId(*dup));
        }
        let w = words_per_code(d);
        let mut words = vec![0u64; codes.len() * w];
        for (code, row) in codes.iter().zip(words.chunks_mut(w.max(1))) {
            pack_one(code, row);
        }
        Ok(PackedCodes { d, words, ids, labels })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn code_bits(&self) -> usize {
        self.d
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn ids(&self) -> &[SketchId] {
        &self.ids
    }

    pub fn labels(&self) -> Option<&[u16]> {
        self.labels.as_deref()
    }

    pub fn row(&self, index: usize) -> &[u64] {
        let w = words_per_code(self.d);
        &self.words[index * w..(index + 1) * w]
    }

    pub fn unpack(&self, index: usize) -> BinaryCode {
        let row = self.row(index);
        BinaryCode::from_bits((0..self.d).map(|i| row[i / 64] >> (i % 64) & 1 == 1).collect())
    }

    /// Bytes held by words, ids and labels.
    pub fn memory_bytes(&self) -> usize {
        self.words.len() * 8 + self.ids.len() * 4 + self.labels.as_ref().map_or(0, |l| l.len() * 2)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.memory_bytes());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        out.push(u8::from(self.labels.is_some()));
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for id in &self.ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        if let Some(labels) = &self.labels {
            for l in labels {
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HammingError> {
        let fail = |m: &str| HammingError::Format(m.to_string());
        if bytes.len() < 25 || &bytes[..8] != MAGIC {
            return Err(fail("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(fail("unsupported version"));
        }
        let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;
        let has_labels = match bytes[24] {
            0 => false,
            1 => true,
            _ => return Err(fail("bad label flag")),
        };
        let w = words_per_code(d);
        let expected = n
            .checked_mul(w * 8 + 4 + if has_labels { 2 } else { 0 })
            .and_then(|x| x.checked_add(25))
            .ok_or_else(|| fail("size overflow"))?;
        if bytes.len() != expected {
            return Err(fail("length does not match header"));
        }
        let mut pos = 25;
        let words: Vec<u64> = bytes[pos..pos + n * w * 8]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += n * w * 8;
        if !d.is_multiple_of(64) && w > 0 {
            let mask = !0u64 << (d % 64);
            if words.chunks(w).any(|row| row[w - 1] & mask != 0) {
                return Err(fail("bits set beyond code length"));
            }
        }
        let ids: Vec<SketchId> = bytes[pos..pos + n * 4]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += n * 4;
        let labels = has_labels.then(|| {
            bytes[pos..pos + n * 2]
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
                .collect()
        });
        let mut seen = HashSet::with_capacity(n);
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(HammingError::DuplicateId(*dup));
        }
        Ok(PackedCodes { d, words, ids, labels })
    }
}

/// Packs one code into words.
pub fn pack_code(code: &BinaryCode) -> Vec<u64> {
    let mut row = vec![0u64; words_per_code(code.len())];
    pack_one(code, &mut row);
    row
}

/// Popcount of the XOR of two packed rows.
pub fn hamming(a: &[u64], b: &[u64]) -> Result<u32, HammingError> {
    if a.len() != b.len() {
        return Err(HammingError::LengthMismatch {
            expected: a.len() * 64,
            got: b.len() * 64,
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum())
}

/// Ranks the whole gallery against `query` and returns the first `k`
/// entries (all when `k` is `None`) as `(id, distance)`.
pub fn search(query: &BinaryCode, gallery: &PackedCodes, k: Option<usize>) -> Result<Vec<(SketchId, u32)>, HammingError> {
    if gallery.is_empty() {
        return Ok(Vec::new());
    }
    if query.len() != gallery.d {
        return Err(HammingError::LengthMismatch {
            expected: gallery.d,
            got: query.len(),
        });
    }
    let q = pack_code(query);
    let order = rank_indices(&q, gallery);
    let take = k.unwrap_or(order.len()).min(order.len());
    Ok(order[..take]
        .iter()
        .map(|&(i, dist)| (gallery.ids[i as usize], dist))
        .collect())
}

/// `(gallery index, distance)` for every gallery entry in ranking order.
/// Distances are bounded by `d`, so a stable counting sort keeps insertion
/// order within each distance.
fn rank_indices(q: &[u64], gallery: &PackedCodes) -> Vec<(u32, u32)> {
    let w = q.len();
    let n = gallery.len();
    let mut dist = Vec::with_capacity(n);
    match w {
        1 => {
            let q0 = q[0];
            dist.extend(gallery.words.iter().map(|x| (x ^ q0).count_ones()));
        }
        _ => dist.extend(
            gallery
                .words
                .chunks_exact(w)
                .map(|row| row.iter().zip(q).map(|(a, b)| (a ^ b).count_ones()).sum::<u32>()),
        ),
    }
    let mut counts = vec![0usize; gallery.d + 2];
    for &d in &dist {
        counts[d as usize + 1] += 1;
    }
    for i in 1..counts.len() {
        counts[i] += counts[i - 1];
    }
    let mut out = vec![(0u32, 0u32); n];
    for (i, &d) in dist.iter().enumerate() {
        let slot = &mut counts[d as usize];
        out[*slot] = (i as u32, d);
        *slot += 1;
    }
    out
}

/// [`search`] for many queries, in query order.
pub fn search_many(
    queries: &[BinaryCode],
    gallery: &PackedCodes,
    k: Option<usize>,
    mode: Execution,
) -> Result<Vec<Vec<(SketchId, u32)>>, HammingError> {
    exec::try_map(mode, queries, |q| search(q, gallery, k))
}

/// Encodes and packs the given sketches, labelled from the corpus.
pub fn build_gallery(
    encoder: &Encoder,
    corpus: &Corpus,
    ids: &[SketchId],
    mode: Execution,
) -> Result<PackedCodes, HammingError> {
    if ids.is_empty() {
        return Ok(PackedCodes {
            labels: Some(Vec::new()),
            ..PackedCodes::empty(encoder.config.code_bits)
        });
    }
    let sketches = ids
        .iter()
        .map(|&id| corpus.get(id).ok_or(HammingError::UnknownId(id)))
        .collect::<Result<Vec<_>, _>>()?;
    let codes = encoder.encode_codes(&sketches, mode)?;
    let labels = sketches.iter().map(|s| s.label).collect();
    PackedCodes::pack(&codes, ids.to_vec(), Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(bits: &[u8]) -> BinaryCode {
        BinaryCode::from_bits(bits.iter().map(|&b| b == 1).collect())
    }

    #[test]
    fn lsb_first_layout() {
        let c = code(&[1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0]);
        let p = PackedCodes::pack(std::slice::from_ref(&c), vec![7], None).unwrap();
        assert_eq!(p.words(), &[0x5555]);
        assert_eq!(p.unpack(0), c);
    }

    #[test]
    fn twenty_four_bits_use_one_word() {
        let c = BinaryCode::from_bits(vec![true; 24]);
        let p = PackedCodes::pack(&[c], vec![0], None).unwrap();
        assert_eq!(p.words(), &[(1u64 << 24) - 1]);
    }

    #[test]
    fn pack_errors() {
        let a = BinaryCode::zeros(8);
        let b = BinaryCode::zeros(9);
        assert!(matches!(
            PackedCodes::pack(&[a.clone(), b], vec![0, 1], None),
            Err(HammingError::MixedLengths(8, 9))
        ));
        assert!(matches!(
            PackedCodes::pack(&[a.clone(), a], vec![3, 3], None),
            Err(HammingError::DuplicateId(3))
        ));
    }

    #[test]
    fn distances() {
        let a = pack_code(&BinaryCode::from_bits(vec![true; 32]));
        let b = pack_code(&BinaryCode::zeros(32));
        assert_eq!(hamming(&a, &a).unwrap(), 0);
        assert_eq!(hamming(&a, &b).unwrap(), 32);
        assert!(hamming(&a, &[0, 0]).is_err());
    }

    #[test]
    fn search_ties_by_insertion() {
        let codes = vec![
            code(&[1, 1, 0, 0]),
            code(&[0, 0, 0, 0]),
            code(&[1, 0, 0, 0]),
            code(&[0, 1, 0, 0]),
            code(&[1, 1, 1, 1]),
        ];
        let g = PackedCodes::pack(&codes, vec![10, 11, 12, 13, 14], None).unwrap();
        let r = search(&code(&[0, 0, 0, 0]), &g, None).unwrap();
        assert_eq!(r, vec![(11, 0), (12, 1), (13, 1), (10, 2), (14, 4)]);
        assert_eq!(search(&code(&[0, 0, 0, 0]), &g, Some(3)).unwrap(), r[..3]);
        assert!(search(&code(&[0, 0]), &g, None).is_err());
        assert!(search(&code(&[0, 0]), &PackedCodes::empty(4), None).unwrap().is_empty());
    }

    #[test]
    fn file_round_trip() {
        let codes: Vec<BinaryCode> = (0..5u32)
            .map(|i| BinaryCode::from_bits((0..70).map(|b| (b * 7 + i) % 3 == 0).collect()))
            .collect();
        let g = PackedCodes::pack(&codes, vec![4, 3, 2, 1, 0], Some(vec![1, 1, 0, 2, 2])).unwrap();
        let bytes = g.to_bytes();
        assert_eq!(PackedCodes::from_bytes(&bytes).unwrap(), g);
        assert!(PackedCodes::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let plain = PackedCodes::pack(&codes, vec![0, 1, 2, 3, 4], None).unwrap();
        assert_eq!(PackedCodes::from_bytes(&plain.to_bytes()).unwrap(), plain);
    }
}
