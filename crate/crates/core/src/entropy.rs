//! Image-entropy noise filtering.
//!
//! A raster's entropy is the binary Shannon entropy (base 2) of its ink
//! fraction after thresholding at 0.5, so values lie in `[0, 1]`: sparse,
//! over-abstract drawings score low and dense scribbles score high. Per
//! category, sketches outside inclusive nearest-rank percentile bounds are
//! treated as noise.

use std::fmt::Write as _;

use thiserror::Error;

use crate::corpus::{RasterSketch, SketchId};

#[derive(Debug, Error, PartialEq)]
pub enum EntropyError {
    #[error("percentile of an empty list")]
    Empty,
    #[error("invalid percentile range [{lower}, {upper}]")]
    InvalidRange { lower: f64, upper: f64 },
}

/// `-p log2 p - (1 - p) log2 (1 - p)` with `H(0) = H(1) = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

pub fn image_entropy(raster: &RasterSketch) -> f64 {
    let total = raster.grid().len();
    if total == 0 {
        return 0.0;
    }
    binary_entropy(raster.ink_count() as f64 / total as f64)
}

/// Nearest-rank percentiles: rank `ceil(q * n)` (1-based, clamped to
/// `[1, n]`) of the ascending sort, for `q = lower` and `q = upper`.
pub fn percentile_bounds(values: &[f64], lower: f64, upper: f64) -> Result<(f64, f64), EntropyError> {
    if values.is_empty() {
        return Err(EntropyError::Empty);
    }
    if !(0.0..=1.0).contains(&lower) || !(0.0..=1.0).contains(&upper) || lower >= upper {
        return Err(EntropyError::InvalidRange { lower, upper });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let at = |q: f64| {
        // guard against q * n landing a hair above an integer
        let rank = ((q * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
        sorted[rank - 1]
    };
    Ok((at(lower), at(upper)))
}

/// Identifiers whose entropy lies in `[lo, hi]`, in input order.
pub fn filter_noise(items: &[(SketchId, f64)], lo: f64, hi: f64) -> Vec<SketchId> {
    items
        .iter()
        .filter(|(_, e)| (lo..=hi).contains(e))
        .map(|(id, _)| *id)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryEntropy {
    pub label: u16,
    pub lo: f64,
    pub hi: f64,
    /// `(id, entropy, kept)` in input order.
    pub entries: Vec<(SketchId, f64, bool)>,
}

impl CategoryEntropy {
    pub fn kept(&self) -> impl Iterator<Item = SketchId> + '_ {
        self.entries.iter().filter(|e| e.2).map(|e| e.0)
    }

    pub fn kept_count(&self) -> usize {
        self.entries.iter().filter(|e| e.2).count()
    }
}

/// Per-category entropies, bounds and keep flags.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EntropyReport {
    pub lower: f64,
    pub upper: f64,
    pub categories: Vec<CategoryEntropy>,
}

impl EntropyReport {
    /// Groups `(id, label, entropy)` triples by label (ascending) and applies
    /// the percentile filter to each group.
    pub fn build(items: &[(SketchId, u16, f64)], lower: f64, upper: f64) -> Result<Self, EntropyError> {
        let mut labels: Vec<u16> = items.iter().map(|i| i.1).collect();
        labels.sort_unstable();
        labels.dedup();
        let mut categories = Vec::with_capacity(labels.len());
        for label in labels {
            let group: Vec<(SketchId, f64)> = items
                .iter()
                .filter(|i| i.1 == label)
                .map(|i| (i.0, i.2))
                .collect();
            let values: Vec<f64> = group.iter().map(|g| g.1).collect();
            let (lo, hi) = percentile_bounds(&values, lower, upper)?;
            let entries = group
                .iter()
                .map(|&(id, e)| (id, e, (lo..=hi).contains(&e)))
                .collect();
            categories.push(CategoryEntropy {
                label,
                lo,
                hi,
                entries,
            });
        }
        Ok(EntropyReport {
            lower,
            upper,
            categories,
        })
    }

    pub fn kept_ids(&self) -> Vec<SketchId> {
        self.categories.iter().flat_map(|c| c.kept()).collect()
    }

    pub fn is_kept(&self, id: SketchId) -> bool {
        self.categories
            .iter()
            .flat_map(|c| &c.entries)
            .any(|e| e.0 == id && e.2)
    }

    /// CSV with header `id,category,entropy,kept,lo,hi`.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut s = String::from("id,category,entropy,kept,lo,hi\n");
        for c in &self.categories {
            let name = names
                .get(c.label as usize)
                .cloned()
                .unwrap_or_else(|| c.label.to_string());
            for &(id, e, kept) in &c.entries {
                let _ = writeln!(s, "{id},{name},{e:.6},{},{:.6},{:.6}", u8::from(kept), c.lo, c.hi);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster_with_ink(side: usize, ink: usize) -> RasterSketch {
        let mut g = vec![0.0; side * side];
        g[..ink].iter_mut().for_each(|v| *v = 1.0);
        RasterSketch::from_grid(side, g).unwrap()
    }

    #[test]
    fn blank_and_half_ink() {
        assert_eq!(image_entropy(&raster_with_ink(16, 0)), 0.0);
        assert_eq!(image_entropy(&raster_with_ink(16, 128)), 1.0);
        assert_eq!(image_entropy(&raster_with_ink(16, 256)), 0.0);
    }

    #[test]
    fn two_percent_ink() {
        // 0.02 = 8 / 400 on a 20x20 grid
        let h = image_entropy(&raster_with_ink(20, 8));
        assert!((h - 0.141_440_542_541_820_6).abs() < 1e-12, "{h}");
    }

    #[test]
    fn nearest_rank_on_integers() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile_bounds(&v, 0.05, 0.95).unwrap(), (5.0, 95.0));
        assert_eq!(percentile_bounds(&[0.3], 0.05, 0.95).unwrap(), (0.3, 0.3));
        assert_eq!(percentile_bounds(&[], 0.05, 0.95), Err(EntropyError::Empty));
        assert!(percentile_bounds(&v, 0.9, 0.1).is_err());
    }

    #[test]
    fn hundred_distinct_keeps_ninety_one() {
        let items: Vec<(SketchId, f64)> = (0..100).map(|i| (i, (i as f64 * 0.37) % 1.0)).collect();
        let values: Vec<f64> = items.iter().map(|i| i.1).collect();
        let (lo, hi) = percentile_bounds(&values, 0.05, 0.95).unwrap();
        assert_eq!(filter_noise(&items, lo, hi).len(), 91);
    }

    #[test]
    fn identical_entropies_all_kept() {
        let items: Vec<(SketchId, f64)> = (0..20).map(|i| (i, 0.25)).collect();
        let (lo, hi) = percentile_bounds(&[0.25; 20], 0.05, 0.95).unwrap();
        assert_eq!(filter_noise(&items, lo, hi).len(), 20);
    }

    #[test]
    fn explicit_bounds_keep_middle() {
        let items = [(0, 0.0), (1, 0.5), (2, 1.0)];
        assert_eq!(filter_noise(&items, 0.5, 0.5), vec![1]);
    }

    #[test]
    fn report_groups_by_category() {
        let items: Vec<(SketchId, u16, f64)> = (0..40)
            .map(|i| (i, (i % 2) as u16, i as f64 / 40.0))
            .collect();
        let r = EntropyReport::build(&items, 0.05, 0.95).unwrap();
        assert_eq!(r.categories.len(), 2);
        for c in &r.categories {
            assert!(c.lo <= c.hi);
            assert_eq!(c.kept_count(), 19);
        }
        let csv = r.to_csv(&["a".into(), "b".into()]);
        assert_eq!(csv.lines().count(), 41);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,a,"));
    }
}
