//! Deterministic per-category splits.
//!
//! Algorithm, normative so other implementations can reproduce a manifest:
//! a single `ChaCha8` stream is seeded with `seed` (`seed_from_u64`). Categories
//! are visited in ascending label order; each category's identifiers are
//! taken in ascending order and shuffled with Fisher-Yates from the last
//! position down, picking `j = next_u64() % (i + 1)` for position `i`. The
//! shuffled list is then cut into consecutive train, validation, retrieval
//! and query slices of the configured quota sizes.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, SketchId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitQuotas {
    pub train: usize,
    pub validation: usize,
    pub retrieval: usize,
    pub query: usize,
}

impl SplitQuotas {
    /// 9000 / 1000 / 1000 / 100 per category.
    pub const FULL_SCALE: SplitQuotas = SplitQuotas {
        train: 9000,
        validation: 1000,
        retrieval: 1000,
        query: 100,
    };

    pub fn per_category(&self) -> usize {
        self.train + self.validation + self.retrieval + self.query
    }

    /// Split totals `(train, validation, retrieval, query)` over `categories`.
    pub fn totals(&self, categories: usize) -> (usize, usize, usize, usize) {
        (
            self.train * categories,
            self.validation * categories,
            self.retrieval * categories,
            self.query * categories,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Validation,
    Retrieval,
    Query,
}

impl SplitPart {
    pub const ALL: [SplitPart; 4] = [
        SplitPart::Train,
        SplitPart::Validation,
        SplitPart::Retrieval,
        SplitPart::Query,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Validation => "validation",
            SplitPart::Retrieval => "retrieval",
            SplitPart::Query => "query",
        }
    }

    pub fn parse(s: &str) -> Option<SplitPart> {
        SplitPart::ALL.into_iter().find(|p| p.name() == s)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<SketchId>,
    pub validation: Vec<SketchId>,
    pub retrieval: Vec<SketchId>,
    pub query: Vec<SketchId>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn part(&self, part: SplitPart) -> &[SketchId] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Validation => &self.validation,
            SplitPart::Retrieval => &self.retrieval,
            SplitPart::Query => &self.query,
        }
    }

    pub fn part_mut(&mut self, part: SplitPart) -> &mut Vec<SketchId> {
        match part {
            SplitPart::Train => &mut self.train,
            SplitPart::Validation => &mut self.validation,
            SplitPart::Retrieval => &mut self.retrieval,
            SplitPart::Query => &mut self.query,
        }
    }
}

/// Splits every category present in `names`.
pub fn make_splits(
    labels: &[u16],
    names: &[String],
    quotas: SplitQuotas,
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    let all: Vec<u16> = (0..names.len() as u16).collect();
    make_splits_over(labels, names, &all, quotas, seed)
}

/// Splits only the listed categories (visited in ascending label order).
pub fn make_splits_over(
    labels: &[u16],
    names: &[String],
    categories: &[u16],
    quotas: SplitQuotas,
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    let mut cats = categories.to_vec();
    cats.sort_unstable();
    cats.dedup();
    let mut by_cat: Vec<Vec<SketchId>> = vec![Vec::new(); names.len()];
    for (id, &l) in labels.iter().enumerate() {
        by_cat
            .get_mut(l as usize)
            .ok_or(CorpusError::UnknownLabel(l))?
            .push(id as SketchId);
    }
    let required = quotas.per_category();
    for &c in &cats {
        let available = by_cat.get(c as usize).map_or(0, Vec::len);
        if available < required {
            return Err(CorpusError::InsufficientCategory {
                category: names
                    .get(c as usize)
                    .cloned()
                    .unwrap_or_else(|| format!("#{c}")),
                available,
                required,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit {
        seed,
        ..Default::default()
    };
    for &c in &cats {
        let ids = &mut by_cat[c as usize];
        for i in (1..ids.len()).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            ids.swap(i, j);
        }
        let mut rest = ids.as_slice();
        for (part, n) in [
            (SplitPart::Train, quotas.train),
            (SplitPart::Validation, quotas.validation),
            (SplitPart::Retrieval, quotas.retrieval),
            (SplitPart::Query, quotas.query),
        ] {
            let (take, tail) = rest.split_at(n);
            split.part_mut(part).extend_from_slice(take);
            rest = tail;
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn corpus(cats: usize, per: usize) -> (Vec<u16>, Vec<String>) {
        let labels = (0..cats * per).map(|i| (i % cats) as u16).collect();
        let names = (0..cats).map(|c| format!("cat{c}")).collect();
        (labels, names)
    }

    #[test]
    fn full_scale_totals() {
        assert_eq!(
            SplitQuotas::FULL_SCALE.totals(345),
            (3_105_000, 345_000, 345_000, 34_500)
        );
    }

    #[test]
    fn toy_totals_and_disjointness() {
        let (labels, names) = corpus(10, 40);
        let q = SplitQuotas {
            train: 20,
            validation: 5,
            retrieval: 5,
            query: 2,
        };
        let s = make_splits(&labels, &names, q, 1).unwrap();
        assert_eq!(
            (s.train.len(), s.validation.len(), s.retrieval.len(), s.query.len()),
            (200, 50, 50, 20)
        );
        let mut seen = HashSet::new();
        for p in SplitPart::ALL {
            for id in s.part(p) {
                assert!(seen.insert(*id));
            }
        }
    }

    #[test]
    fn insufficient_category_is_named() {
        let (mut labels, names) = corpus(3, 10);
        labels.retain(|&l| l != 2);
        labels.push(2);
        let q = SplitQuotas {
            train: 5,
            validation: 1,
            retrieval: 1,
            query: 1,
        };
        let err = make_splits(&labels, &names, q, 0).unwrap_err();
        assert!(err.to_string().contains("cat2"), "{err}");
    }

    #[test]
    fn seeds_are_reproducible_and_distinct() {
        let (labels, names) = corpus(5, 50);
        let q = SplitQuotas {
            train: 30,
            validation: 5,
            retrieval: 5,
            query: 5,
        };
        let a = make_splits(&labels, &names, q, 9).unwrap();
        let b = make_splits(&labels, &names, q, 9).unwrap();
        let c = make_splits(&labels, &names, q, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train, c.train);
    }
}
