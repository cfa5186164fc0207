//! Training objectives and fixed class centers.
//!
//! Every reduction is a mean over the batch. Centers and target codes enter
//! the graph as constants, so no gradient reaches them.

use std::fmt::Write as _;

use thiserror::Error;

use crate::encoder::{classify_logits, BinaryCode, Branch, Encoder, EncoderError, SampleInput};
use crate::numeric::{decode_checkpoint, encode_checkpoint, Graph, NumericError, ParamSet, Tensor, Var};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {label} outside [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("no center for class `{0}`")]
    MissingCenter(String),
    #[error("class `{0}` has no kept training sketches")]
    EmptyClass(String),
    #[error("center table has D = {got}, encoder expects {expected}")]
    CodeLengthMismatch { expected: usize, got: usize },
    #[error("center table is frozen")]
    Frozen,
    #[error("invalid center table: {0}")]
    Format(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub scl: f64,
    pub ql: f64,
}

impl LossWeights {
    pub const DEFAULT: LossWeights = LossWeights {
        scl: 0.01,
        ql: 0.0001,
    };
    pub const CEL_ONLY: LossWeights = LossWeights { scl: 0.0, ql: 0.0 };

    pub fn validate(&self) -> Result<(), LossError> {
        if self.scl >= 0.0 && self.ql >= 0.0 {
            Ok(())
        } else {
            Err(LossError::LengthMismatch("loss weights must be non-negative".into()))
        }
    }

    /// `cel + scl * l_scl + ql * l_ql`.
    pub fn combine(&self, cel: f64, scl: f64, ql: f64) -> f64 {
        cel + self.scl * scl + self.ql * ql
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::DEFAULT
    }
}

fn check_batch(n: usize, other: usize, what: &str) -> Result<(), LossError> {
    if n == 0 {
        return Err(LossError::EmptyBatch);
    }
    if n != other {
        return Err(LossError::LengthMismatch(format!("{n} features, {other} {what}")));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Stable `-log softmax(z)[label]`.
pub fn cross_entropy(z: &[f64], label: usize) -> Result<f64, LossError> {
    if label >= z.len() {
        return Err(LossError::LabelOutOfRange {
            label,
            classes: z.len(),
        });
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    Ok(lse - z[label])
}

/// Mean cross-entropy of `W^T f + b` against the labels.
pub fn cel(features: &[&[f64]], labels: &[u16], w: &Tensor, b: &Tensor) -> Result<f64, LossError> {
    check_batch(features.len(), labels.len(), "labels")?;
    let mut total = 0.0;
    for (f, &y) in features.iter().zip(labels) {
        total += cross_entropy(&classify_logits(f, w, b)?, y as usize)?;
    }
    Ok(total / features.len() as f64)
}

/// Mean `||b - f||^2`.
pub fn quantization_loss(features: &[&[f64]], codes: &[BinaryCode]) -> Result<f64, LossError> {
    check_batch(features.len(), codes.len(), "codes")?;
    let mut total = 0.0;
    for (f, b) in features.iter().zip(codes) {
        if f.len() != b.len() {
            return Err(LossError::LengthMismatch(format!(
                "feature of length {}, code of length {}",
                f.len(),
                b.len()
            )));
        }
        total += sq_dist(f, &b.as_f64());
    }
    Ok(total / features.len() as f64)
}

/// Mean `||f - c_y||^2` against frozen centers (1/N normalization).
pub fn sketch_center_loss(features: &[&[f64]], labels: &[u16], centers: &CenterTable) -> Result<f64, LossError> {
    check_batch(features.len(), labels.len(), "labels")?;
    let mut total = 0.0;
    for (f, &y) in features.iter().zip(labels) {
        let c = centers.center(y)?;
        if c.len() != f.len() {
            return Err(LossError::CodeLengthMismatch {
                expected: f.len(),
                got: c.len(),
            });
        }
        total += sq_dist(f, c);
    }
    Ok(total / features.len() as f64)
}

/// Running centers updated from each mini-batch (the baseline the fixed
/// centers are compared against).
#[derive(Clone, Debug, PartialEq)]
pub struct CommonCenters {
    pub centers: Vec<Vec<f64>>,
    pub rate: f64,
}

impl CommonCenters {
    pub const DEFAULT_RATE: f64 = 0.5;

    pub fn zeros(classes: usize, dim: usize, rate: f64) -> Self {
        CommonCenters {
            centers: vec![vec![0.0; dim]; classes],
            rate,
        }
    }

    /// Loss against the current centers, then `c_y += rate * (mean_y - c_y)`
    /// for every class present in the batch.
    pub fn step(&mut self, features: &[&[f64]], labels: &[u16]) -> Result<f64, LossError> {
        check_batch(features.len(), labels.len(), "labels")?;
        let classes = self.centers.len();
        let mut total = 0.0;
        for (f, &y) in features.iter().zip(labels) {
            let c = self.centers.get(y as usize).ok_or(LossError::LabelOutOfRange {
                label: y as usize,
                classes,
            })?;
            if c.len() != f.len() {
                return Err(LossError::LengthMismatch("feature and center lengths differ".into()));
            }
            total += sq_dist(f, c);
        }
        let dim = features[0].len();
        let mut sums = vec![vec![0.0; dim]; classes];
        let mut counts = vec![0usize; classes];
        for (f, &y) in features.iter().zip(labels) {
            counts[y as usize] += 1;
            for (s, v) in sums[y as usize].iter_mut().zip(*f) {
                *s += v;
            }
        }
        for (y, c) in self.centers.iter_mut().enumerate() {
            if counts[y] == 0 {
                continue;
            }
            for (cv, s) in c.iter_mut().zip(&sums[y]) {
                let mean = s / counts[y] as f64;
                *cv += self.rate * (mean - *cv);
            }
        }
        Ok(total / features.len() as f64)
    }
}

/// Where a center table came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CenterProvenance {
    /// Content hash of the checkpoint the features were computed with.
    pub checkpoint: String,
    pub filtered: bool,
    pub lower: f64,
    pub upper: f64,
    pub sketches: usize,
}

/// One center per class; immutable once frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterTable {
    pub names: Vec<String>,
    centers: Vec<Vec<f64>>,
    pub provenance: CenterProvenance,
    frozen: bool,
}

impl CenterTable {
    pub fn new(names: Vec<String>, centers: Vec<Vec<f64>>, provenance: CenterProvenance) -> Result<Self, LossError> {
        if names.len() != centers.len() {
            return Err(LossError::LengthMismatch(format!(
                "{} names, {} centers",
                names.len(),
                centers.len()
            )));
        }
        let d = centers.first().map_or(0, Vec::len);
        if centers.iter().any(|c| c.len() != d) {
            return Err(LossError::Format("centers differ in length".into()));
        }
        if centers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LossError::Format("non-finite center".into()));
        }
        Ok(CenterTable {
            names,
            centers,
            provenance,
            frozen: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    pub fn classes(&self) -> usize {
        self.centers.len()
    }

    pub fn center(&self, label: u16) -> Result<&[f64], LossError> {
        self.centers
            .get(label as usize)
            .map(Vec::as_slice)
            .ok_or_else(|| LossError::MissingCenter(label.to_string()))
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Replaces the centers; refused once frozen.
    pub fn replace(&mut self, centers: Vec<Vec<f64>>, provenance: CenterProvenance) -> Result<(), LossError> {
        if self.frozen {
            return Err(LossError::Frozen);
        }
        let fresh = CenterTable::new(self.names.clone(), centers, provenance)?;
        self.centers = fresh.centers;
        self.provenance = fresh.provenance;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.provenance;
        let mut desc = String::from("kind=centers\n");
        let _ = writeln!(desc, "checkpoint={}", p.checkpoint);
        let _ = writeln!(desc, "filtered={}", p.filtered);
        let _ = writeln!(desc, "lower={:?}", p.lower);
        let _ = writeln!(desc, "upper={:?}", p.upper);
        let _ = writeln!(desc, "sketches={}", p.sketches);
        let _ = writeln!(desc, "frozen={}", self.frozen);
        let _ = writeln!(desc, "names={}", self.names.join("\t"));
        let mut params = ParamSet::new();
        let data: Vec<f64> = self.centers.iter().flatten().copied().collect();
        params.insert(
            "centers",
            Tensor::new(vec![self.classes(), self.dim()], data).expect("rectangular centers"),
        );
        encode_checkpoint(&desc, &params)
    }

    /// Decodes a table and refuses it unless its code length equals `expected_dim`.
    pub fn from_bytes(bytes: &[u8], expected_dim: usize) -> Result<Self, LossError> {
        let ck = decode_checkpoint(bytes)?;
        let kv = crate::encoder::parse_key_values(&ck.descriptor);
        if kv.get("kind").map(String::as_str) != Some("centers") {
            return Err(LossError::Format("not a center table".into()));
        }
        let t = ck
            .params
            .by_name("centers")
            .ok_or_else(|| LossError::Format("missing centers tensor".into()))?;
        let [l, d] = t.shape() else {
            return Err(LossError::Format("centers tensor is not 2-D".into()));
        };
        if *d != expected_dim {
            return Err(LossError::CodeLengthMismatch {
                expected: expected_dim,
                got: *d,
            });
        }
        let field = |k: &str| kv.get(k).cloned().unwrap_or_default();
        let parse_f = |k: &str| field(k).parse::<f64>().map_err(|_| LossError::Format(format!("bad `{k}`")));
        let names: Vec<String> = match kv.get("names") {
            Some(n) if !n.is_empty() => n.split('\t').map(str::to_string).collect(),
            _ => (0..*l).map(|i| i.to_string()).collect(),
        };
        let provenance = CenterProvenance {
            checkpoint: field("checkpoint"),
            filtered: field("filtered") == "true",
            lower: parse_f("lower")?,
            upper: parse_f("upper")?,
            sketches: field("sketches").parse().unwrap_or(0),
        };
        let centers = t.data().chunks(*d).map(<[f64]>::to_vec).collect();
        let mut table = CenterTable::new(names, centers, provenance)?;
        table.frozen = field("frozen") == "true";
        Ok(table)
    }
}

/// Per-class mean of the given features. Every class in `0..names.len()`
/// must have at least one sample.
pub fn compute_class_centers(
    features: &[&[f64]],
    labels: &[u16],
    names: &[String],
    provenance: CenterProvenance,
) -> Result<CenterTable, LossError> {
    check_batch(features.len(), labels.len(), "labels")?;
    let d = features[0].len();
    let mut sums = vec![vec![0.0; d]; names.len()];
    let mut counts = vec![0usize; names.len()];
    for (f, &y) in features.iter().zip(labels) {
        let y = y as usize;
        if y >= names.len() {
            return Err(LossError::LabelOutOfRange {
                label: y,
                classes: names.len(),
            });
        }
        counts[y] += 1;
        for (s, v) in sums[y].iter_mut().zip(*f) {
            *s += v;
        }
    }
    if let Some(y) = counts.iter().position(|&c| c == 0) {
        return Err(LossError::EmptyClass(names[y].clone()));
    }
    let centers = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| s.into_iter().map(|v| v / n as f64).collect())
        .collect();
    CenterTable::new(names.to_vec(), centers, provenance)
}

/// Per-sample loss terms (unweighted).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub cel: f64,
    pub scl: f64,
    pub ql: f64,
    pub total: f64,
}

impl LossComponents {
    pub fn add_scaled(&mut self, other: &LossComponents, s: f64) {
        self.cel += s * other.cel;
        self.scl += s * other.scl;
        self.ql += s * other.ql;
        self.total += s * other.total;
    }
}

/// What the per-sample objective includes.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveSpec<'a> {
    pub branch: Branch,
    pub weights: LossWeights,
    pub centers: Option<&'a CenterTable>,
}

/// Builds the objective for one sample on `g` and returns its output node.
/// `code` is the fixed target code for the quantization term.
pub fn sample_objective(
    g: &mut Graph<'_>,
    encoder: &Encoder,
    input: &SampleInput,
    spec: &ObjectiveSpec<'_>,
    code: Option<&BinaryCode>,
) -> Result<(Var, LossComponents), LossError> {
    let out = encoder.forward(g, input, spec.branch)?;
    let label = input.label as usize;
    let cel_node = g.softmax_cross_entropy(out.logits, label)?;
    let mut comps = LossComponents {
        cel: g.value(cel_node).item(),
        ..Default::default()
    };
    let mut total = cel_node;
    if let Some(rec) = out.recognition_logits {
        let r = g.softmax_cross_entropy(rec, label)?;
        total = g.add(total, r)?;
    }
    if let Some(f) = out.feature {
        if spec.weights.scl > 0.0 {
            let centers = spec
                .centers
                .ok_or_else(|| LossError::MissingCenter("<no table>".into()))?;
            let c = centers.center(input.label)?;
            let c = g.constant(Tensor::row(c.to_vec()));
            let diff = g.sub(f, c)?;
            let sq = g.square(diff);
            let s = g.sum(sq);
            comps.scl = g.value(s).item();
            let s = g.affine(s, spec.weights.scl, 0.0);
            total = g.add(total, s)?;
        }
        if spec.weights.ql > 0.0 {
            let b = code.ok_or_else(|| LossError::LengthMismatch("quantization term without a code".into()))?;
            let b = g.constant(Tensor::row(b.as_f64()));
            let diff = g.sub(b, f)?;
            let sq = g.square(diff);
            let s = g.sum(sq);
            comps.ql = g.value(s).item();
            let s = g.affine(s, spec.weights.ql, 0.0);
            total = g.add(total, s)?;
        }
    }
    comps.total = g.value(total).item();
    Ok((total, comps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn uniform_softmax_is_log_l() {
        let w = Tensor::zeros(&[8, 345]);
        let b = Tensor::zeros(&[345]);
        let f = vec![vec![0.3; 8]];
        let l = cel(&rows(&f), &[17], &w, &b).unwrap();
        assert!((l - 345f64.ln()).abs() < 1e-12);
        assert!((l - 5.8435).abs() < 1e-4);
    }

    #[test]
    fn saturated_true_class() {
        let mut z = vec![0.0; 10];
        z[2] = 30.0;
        assert!(cross_entropy(&z, 2).unwrap() < 1e-12);
        assert!(cross_entropy(&z, 10).is_err());
    }

    #[test]
    fn quantization_examples() {
        let f = vec![vec![0.5; 16]];
        let b = vec![BinaryCode::zeros(16)];
        assert_eq!(quantization_loss(&rows(&f), &b).unwrap(), 4.0);
        let exact = vec![vec![1.0, 0.0]];
        let code = vec![BinaryCode::from_bits(vec![true, false])];
        assert_eq!(quantization_loss(&rows(&exact), &code).unwrap(), 0.0);
    }

    #[test]
    fn combine_with_default_weights() {
        let v = LossWeights::DEFAULT.combine(2.0, 3.0, 5.0);
        assert!((v - 2.0305).abs() < 1e-12);
        assert_eq!(LossWeights::CEL_ONLY.combine(2.0, 3.0, 5.0), 2.0);
    }

    #[test]
    fn center_examples() {
        let names = vec!["a".to_string()];
        let f = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let t = compute_class_centers(&rows(&f), &[0, 0], &names, Default::default()).unwrap();
        assert_eq!(t.center(0).unwrap(), &[0.5, 0.5]);

        let on = vec![vec![0.5, 0.5]];
        assert_eq!(sketch_center_loss(&rows(&on), &[0], &t).unwrap(), 0.0);
        let off = vec![vec![1.5, 0.5]];
        assert_eq!(sketch_center_loss(&rows(&off), &[0], &t).unwrap(), 1.0);
        assert!(sketch_center_loss(&rows(&off), &[3], &t).is_err());
    }

    #[test]
    fn empty_class_named() {
        let names = vec!["a".to_string(), "bird".to_string()];
        let f = vec![vec![0.1]];
        match compute_class_centers(&rows(&f), &[0], &names, Default::default()) {
            Err(LossError::EmptyClass(n)) => assert_eq!(n, "bird"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn common_centers_first_batch_and_rate_one() {
        let f = vec![vec![0.2, 0.4], vec![0.6, 0.8]];
        let mut cc = CommonCenters::zeros(2, 2, 1.0);
        let l = cc.step(&rows(&f), &[1, 1]).unwrap();
        let expect = (0.04 + 0.16 + 0.36 + 0.64) / 2.0;
        assert!((l - expect).abs() < 1e-15);
        assert_eq!(cc.centers[0], vec![0.0, 0.0]);
        assert!((cc.centers[1][0] - 0.4).abs() < 1e-15);
        assert!((cc.centers[1][1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn table_persistence_and_freeze() {
        let names = vec!["x".to_string(), "y z".to_string()];
        let prov = CenterProvenance {
            checkpoint: "abc".into(),
            filtered: true,
            lower: 0.05,
            upper: 0.95,
            sketches: 4,
        };
        let mut t = CenterTable::new(names, vec![vec![0.1, 0.2], vec![0.3, 0.4]], prov.clone()).unwrap();
        t.freeze();
        assert!(matches!(t.replace(vec![vec![0.0; 2]; 2], prov), Err(LossError::Frozen)));
        let bytes = t.to_bytes();
        assert_eq!(CenterTable::from_bytes(&bytes, 2).unwrap(), t);
        assert!(matches!(
            CenterTable::from_bytes(&bytes, 16),
            Err(LossError::CodeLengthMismatch { expected: 16, got: 2 })
        ));
    }
}
