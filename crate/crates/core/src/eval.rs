//! Retrieval and recognition metrics.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{make_splits_over, CorpusError, DatasetSplit, SplitQuotas};
use crate::encoder::{BinaryCode, Branch, Encoder, EncoderError, SampleInput};
use crate::exec::{self, Execution};
use crate::hamming::{search_many, HammingError, PackedCodes};

/// Identifier of the ranking tie rule recorded in every metrics output.
pub const TIE_RULE: &str = "distance-asc-then-insertion-index";
/// Identifier of the intra/inter-class distance estimator.
pub const DISTANCE_ESTIMATOR: &str = "centroid";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no queries")]
    NoQueries,
    #[error("cutoff {k} exceeds gallery size {gallery}")]
    CutoffTooLarge { k: usize, gallery: usize },
    #[error("rankings have different lengths")]
    RaggedRankings,
    #[error("{0} features for {1} labels")]
    LengthMismatch(usize, usize),
    #[error("at least two classes are needed, got {0}")]
    TooFewClasses(usize),
    #[error("gallery has no label table")]
    MissingLabels,
    #[error("need more than {holdout} categories, have {available}")]
    InsufficientCategories { holdout: usize, available: usize },
    #[error(transparent)]
    Hamming(#[from] HammingError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AveragePrecision {
    pub value: f64,
    /// Set when the ranking holds no relevant item; `value` is then 0.
    pub no_relevant: bool,
}

/// Mean over relevant items of the precision at their rank, over the full ranking.
pub fn average_precision(relevant: &[bool]) -> AveragePrecision {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in relevant.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        AveragePrecision {
            value: 0.0,
            no_relevant: true,
        }
    } else {
        AveragePrecision {
            value: sum / hits as f64,
            no_relevant: false,
        }
    }
}

pub fn mean_ap(rankings: &[Vec<bool>]) -> Result<f64, EvalError> {
    if rankings.is_empty() {
        return Err(EvalError::NoQueries);
    }
    Ok(rankings.iter().map(|r| average_precision(r).value).sum::<f64>() / rankings.len() as f64)
}

pub fn precision_at_k(rankings: &[Vec<bool>], k: usize) -> Result<f64, EvalError> {
    if rankings.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let mut total = 0.0;
    for r in rankings {
        if k == 0 || k > r.len() {
            return Err(EvalError::CutoffTooLarge { k, gallery: r.len() });
        }
        total += r[..k].iter().filter(|x| **x).count() as f64 / k as f64;
    }
    Ok(total / rankings.len() as f64)
}

/// `(recall, precision)` at every cutoff `1..=n`, averaged over queries at
/// equal cutoffs. Queries without relevant items contribute recall 0.
pub fn pr_curve(rankings: &[Vec<bool>]) -> Result<Vec<(f64, f64)>, EvalError> {
    let n = rankings.first().ok_or(EvalError::NoQueries)?.len();
    if rankings.iter().any(|r| r.len() != n) {
        return Err(EvalError::RaggedRankings);
    }
    let mut recall = vec![0.0; n];
    let mut precision = vec![0.0; n];
    for r in rankings {
        let total = r.iter().filter(|x| **x).count();
        let mut hits = 0usize;
        for (c, &rel) in r.iter().enumerate() {
            hits += usize::from(rel);
            if total > 0 {
                recall[c] += hits as f64 / total as f64;
            }
            precision[c] += hits as f64 / (c + 1) as f64;
        }
    }
    let q = rankings.len() as f64;
    Ok(recall.into_iter().zip(precision).map(|(r, p)| (r / q, p / q)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub d1: f64,
    pub d2: f64,
    pub ratio: f64,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Centroid-based intra-class (`d1`) and inter-class (`d2`) distances:
/// per class, the mean member-to-centroid distance and the mean distance from
/// its centroid to every other centroid, each then averaged over classes.
pub fn intra_inter_ratio(features: &[&[f64]], labels: &[u16]) -> Result<DistanceStats, EvalError> {
    if features.len() != labels.len() {
        return Err(EvalError::LengthMismatch(features.len(), labels.len()));
    }
    let classes: Vec<u16> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(EvalError::TooFewClasses(classes.len()));
    }
    let dim = features[0].len();
    let centroids: Vec<Vec<f64>> = classes
        .iter()
        .map(|&c| {
            let mut sum = vec![0.0; dim];
            let mut n = 0usize;
            for (f, _) in features.iter().zip(labels).filter(|(_, l)| **l == c) {
                n += 1;
                sum.iter_mut().zip(*f).for_each(|(s, v)| *s += v);
            }
            sum.into_iter().map(|s| s / n as f64).collect()
        })
        .collect();
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    for (ci, &c) in classes.iter().enumerate() {
        let members: Vec<f64> = features
            .iter()
            .zip(labels)
            .filter(|(_, l)| **l == c)
            .map(|(f, _)| euclid(f, &centroids[ci]))
            .collect();
        d1 += members.iter().sum::<f64>() / members.len() as f64;
        let others: f64 = (0..classes.len())
            .filter(|&j| j != ci)
            .map(|j| euclid(&centroids[ci], &centroids[j]))
            .sum();
        d2 += others / (classes.len() - 1) as f64;
    }
    let k = classes.len() as f64;
    let (d1, d2) = (d1 / k, d2 / k);
    Ok(DistanceStats {
        d1,
        d2,
        ratio: if d2 > 0.0 { d1 / d2 } else { f64::INFINITY },
    })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy_from_logits(logits: &[Vec<f64>], labels: &[u16]) -> Result<f64, EvalError> {
    if logits.len() != labels.len() {
        return Err(EvalError::LengthMismatch(logits.len(), labels.len()));
    }
    if logits.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let hits = logits
        .iter()
        .zip(labels)
        .filter(|(z, &y)| argmax(z) == y as usize)
        .count();
    Ok(hits as f64 / logits.len() as f64)
}

/// Recognition accuracy of `branch` over prepared samples. For the fused
/// branch the extra recognition head is used when the model has one.
pub fn recognition_accuracy(
    encoder: &Encoder,
    samples: &[SampleInput],
    branch: Branch,
    mode: Execution,
) -> Result<f64, EvalError> {
    let logits = exec::try_map(mode, samples, |s| {
        Ok::<_, EvalError>(encoder.infer(s, branch)?.recognition().to_vec())
    })?;
    let labels: Vec<u16> = samples.iter().map(|s| s.label).collect();
    accuracy_from_logits(&logits, &labels)
}

/// Relevance flags of a ranking of gallery ids against one query label.
pub fn relevance(ranking: &[(u32, u32)], gallery: &PackedCodes, query_label: u16) -> Result<Vec<bool>, EvalError> {
    let labels = gallery.labels().ok_or(EvalError::MissingLabels)?;
    let index: std::collections::HashMap<u32, usize> =
        gallery.ids().iter().enumerate().map(|(i, &id)| (id, i)).collect();
    Ok(ranking
        .iter()
        .map(|(id, _)| labels[index[id]] == query_label)
        .collect())
}

/// Scalar and curve metrics of one retrieval evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub map: f64,
    pub k: usize,
    pub precision_at_k: f64,
    pub queries: usize,
    pub gallery: usize,
    pub code_bits: usize,
    pub zero_relevant_queries: usize,
    pub per_query_ap: Vec<f64>,
    pub pr_curve: Vec<(f64, f64)>,
}

impl RetrievalReport {
    /// Scalar metrics as JSON, tagged with the tie rule and `config_hash`.
    pub fn to_json(&self, config_hash: &str) -> String {
        let value = serde_json::json!({
            "map": self.map,
            format!("precision_at_{}", self.k): self.precision_at_k,
            "k": self.k,
            "queries": self.queries,
            "gallery": self.gallery,
            "code_bits": self.code_bits,
            "zero_relevant_queries": self.zero_relevant_queries,
            "tie_rule": TIE_RULE,
            "config_hash": config_hash,
        });
        serde_json::to_string_pretty(&value).expect("metrics serialize")
    }

    pub fn pr_csv(&self) -> String {
        let mut s = String::from("cutoff,recall,precision\n");
        for (i, (r, p)) in self.pr_curve.iter().enumerate() {
            let _ = writeln!(s, "{},{r:.12},{p:.12}", i + 1);
        }
        s
    }

    pub fn per_query_csv(&self, query_ids: &[u32]) -> String {
        let mut s = String::from("query,ap\n");
        for (id, ap) in query_ids.iter().zip(&self.per_query_ap) {
            let _ = writeln!(s, "{id},{ap:.12}");
        }
        s
    }
}

/// Ranks the full gallery for every query and computes MAP, precision@k and the PR curve.
pub fn evaluate_retrieval(
    queries: &[BinaryCode],
    query_labels: &[u16],
    gallery: &PackedCodes,
    k: usize,
    mode: Execution,
) -> Result<RetrievalReport, EvalError> {
    if queries.is_empty() {
        return Err(EvalError::NoQueries);
    }
    if queries.len() != query_labels.len() {
        return Err(EvalError::LengthMismatch(queries.len(), query_labels.len()));
    }
    if k == 0 || k > gallery.len() {
        return Err(EvalError::CutoffTooLarge {
            k,
            gallery: gallery.len(),
        });
    }
    let rankings = search_many(queries, gallery, None, mode)?;
    let flags = rankings
        .iter()
        .zip(query_labels)
        .map(|(r, &y)| relevance(r, gallery, y))
        .collect::<Result<Vec<_>, _>>()?;
    let aps: Vec<AveragePrecision> = flags.iter().map(|f| average_precision(f)).collect();
    Ok(RetrievalReport {
        map: mean_ap(&flags)?,
        k,
        precision_at_k: precision_at_k(&flags, k)?,
        queries: queries.len(),
        gallery: gallery.len(),
        code_bits: gallery.code_bits(),
        zero_relevant_queries: aps.iter().filter(|a| a.no_relevant).count(),
        per_query_ap: aps.iter().map(|a| a.value).collect(),
        pr_curve: pr_curve(&flags)?,
    })
}

/// Uniformly random codes, the chance-level baseline for retrieval.
pub fn random_codes(n: usize, d: usize, seed: u64) -> Vec<BinaryCode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| BinaryCode::from_bits((0..d).map(|_| rng.gen::<bool>()).collect()))
        .collect()
}

/// Seen/unseen category split for zero-shot retrieval.
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroShotSplit {
    /// Held-out category labels, ascending.
    pub holdout: Vec<u16>,
    /// Train and validation parts over the seen categories only.
    pub seen: DatasetSplit,
    /// Retrieval and query parts over the held-out categories only.
    pub unseen: DatasetSplit,
}

/// Picks `holdout` categories at random (ChaCha8 seeded with `seed`), splits
/// the remaining categories for training and the held-out ones for evaluation.
pub fn zero_shot_protocol(
    labels: &[u16],
    names: &[String],
    seed: u64,
    holdout: usize,
    seen_quotas: SplitQuotas,
    unseen_quotas: SplitQuotas,
) -> Result<ZeroShotSplit, EvalError> {
    let mut categories: Vec<u16> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if categories.len() <= holdout {
        return Err(EvalError::InsufficientCategories {
            holdout,
            available: categories.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    categories.shuffle(&mut rng);
    let mut held: Vec<u16> = categories[..holdout].to_vec();
    let mut seen_cats: Vec<u16> = categories[holdout..].to_vec();
    held.sort_unstable();
    seen_cats.sort_unstable();
    let seen_quotas = SplitQuotas {
        retrieval: 0,
        query: 0,
        ..seen_quotas
    };
    let unseen_quotas = SplitQuotas {
        train: 0,
        validation: 0,
        ..unseen_quotas
    };
    let seen = make_splits_over(labels, names, &seen_cats, seen_quotas, seed)?;
    let unseen = make_splits_over(labels, names, &held, unseen_quotas, seed)?;
    Ok(ZeroShotSplit {
        holdout: held,
        seen,
        unseen,
    })
}
