use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{rasterize, OffsetNormalizer, RasterSketch, StrokeSketch};
use crate::exec::{self, Execution};
use crate::numeric::{
    bidirectional_gru, decode_checkpoint, encode_checkpoint, sigmoid, GruCell, Graph, ParamSet,
    Tensor, Var,
};

use super::{quantize, BinaryCode, EncoderConfig, EncoderError, HashFeature};

/// Which part of the network produces the classification logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// Convolutional branch with its temporary pretraining head.
    Cnn,
    /// Recurrent branch with its temporary pretraining head.
    Rnn,
    /// Both branches, fusion, hash layer and classifier.
    Fused,
}

/// Network input for one sketch: raster plus normalized step features.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleInput {
    pub raster: Tensor,
    pub steps: Vec<[f64; 4]>,
    pub label: u16,
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// Hash feature `[1, D]` (fused branch only).
    pub feature: Option<Var>,
    /// Logits `[1, L]`.
    pub logits: Var,
    /// Recognition logits, present when the extra recognition layer is enabled.
    pub recognition_logits: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: ParamSet,
}

fn he(fan_in: usize) -> f64 {
    (6.0 / fan_in.max(1) as f64).sqrt()
}

fn xavier(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out).max(1) as f64).sqrt()
}

impl Encoder {
    /// Fresh parameters (including both temporary branch heads) drawn from
    /// `ChaCha8(config.init_seed)`.
    pub fn init(config: EncoderConfig) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut p = ParamSet::new();
        let mut in_ch = 1;
        for (i, l) in config.conv.iter().enumerate() {
            let fan_in = in_ch * l.kernel * l.kernel;
            p.insert(
                format!("cnn.conv{i}.w"),
                Tensor::uniform(&[l.channels, in_ch, l.kernel, l.kernel], he(fan_in), &mut rng),
            );
            p.insert(format!("cnn.conv{i}.b"), Tensor::zeros(&[l.channels]));
            in_ch = l.channels;
        }
        let (c, h, w) = config.conv_output_shape()?;
        let flat = c * h * w;
        p.insert(
            "cnn.dense.w",
            Tensor::uniform(&[flat, config.dense_width], he(flat), &mut rng),
        );
        p.insert("cnn.dense.b", Tensor::zeros(&[config.dense_width]));

        let hidden = config.gru_hidden;
        for layer in 0..config.gru_layers {
            let input = if layer == 0 { 4 } else { 2 * hidden };
            for dir in ["fwd", "bwd"] {
                crate::numeric::init_gru_cell(&mut p, &format!("rnn.l{layer}.{dir}"), input, hidden, &mut rng);
            }
        }

        let fusion = config.fusion_width();
        let d = config.code_bits;
        let l = config.classes;
        p.insert("hash.w", Tensor::uniform(&[fusion, d], xavier(fusion, d), &mut rng));
        p.insert("hash.b", Tensor::zeros(&[d]));
        p.insert("cls.w", Tensor::uniform(&[d, l], xavier(d, l), &mut rng));
        p.insert("cls.b", Tensor::zeros(&[l]));
        p.insert(
            "head.cnn.w",
            Tensor::uniform(&[config.dense_width, l], xavier(config.dense_width, l), &mut rng),
        );
        p.insert("head.cnn.b", Tensor::zeros(&[l]));
        p.insert("head.rnn.w", Tensor::uniform(&[2 * hidden, l], xavier(2 * hidden, l), &mut rng));
        p.insert("head.rnn.b", Tensor::zeros(&[l]));
        if config.recognition_width > 0 {
            let r = config.recognition_width;
            p.insert("rec.fc.w", Tensor::uniform(&[fusion, r], he(fusion), &mut rng));
            p.insert("rec.fc.b", Tensor::zeros(&[r]));
            p.insert("rec.cls.w", Tensor::uniform(&[r, l], xavier(r, l), &mut rng));
            p.insert("rec.cls.b", Tensor::zeros(&[l]));
        }
        Ok(Encoder { config, params: p })
    }

    /// Drops the temporary branch-pretraining heads.
    pub fn discard_branch_heads(&mut self) {
        self.params.remove_prefix("head.");
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_checkpoint(&self.config.to_descriptor(), &self.params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EncoderError> {
        let ck = decode_checkpoint(bytes)?;
        let config = EncoderConfig::from_descriptor(&ck.descriptor)?;
        let reference = Encoder::init(config.clone())?;
        for (name, t) in reference.params.iter() {
            // branch heads may legitimately be absent after fusion
            if name.starts_with("head.") {
                continue;
            }
            let got = ck
                .params
                .by_name(name)
                .ok_or_else(|| EncoderError::Config(format!("checkpoint lacks `{name}`")))?;
            if got.shape() != t.shape() {
                return Err(EncoderError::Config(format!(
                    "`{name}` has shape {:?}, descriptor implies {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        Ok(Encoder {
            config,
            params: ck.params,
        })
    }

    pub fn normalizer(&self) -> OffsetNormalizer {
        OffsetNormalizer {
            scale: self.config.offset_scale,
        }
    }

    /// Rasterizes and normalizes one sketch.
    pub fn prepare(&self, sketch: &StrokeSketch) -> Result<SampleInput, EncoderError> {
        let raster = rasterize(sketch, self.config.raster_side)?;
        Ok(self.prepare_with_raster(sketch, &raster))
    }

    /// Builds the network input from an already rasterized sketch.
    pub fn prepare_with_raster(&self, sketch: &StrokeSketch, raster: &RasterSketch) -> SampleInput {
        let side = raster.side();
        let raster = Tensor::new(vec![1, side, side], raster.grid().to_vec()).expect("square grid");
        let scale = self.config.offset_scale;
        let steps = sketch
            .steps
            .iter()
            .map(|s| {
                let mut f = s.features();
                f[0] /= scale;
                f[1] /= scale;
                f
            })
            .collect();
        SampleInput {
            raster,
            steps,
            label: sketch.label,
        }
    }

    /// Convolutional branch: `[1, side, side]` raster to `[1, dense]` features.
    pub fn cnn_branch(&self, g: &mut Graph<'_>, raster: &Tensor) -> Result<Var, EncoderError> {
        let side = self.config.raster_side;
        if raster.shape() != [1, side, side] {
            return Err(EncoderError::RasterSize {
                expected: side,
                got: raster.shape().to_vec(),
            });
        }
        let mut x = g.constant(raster.clone());
        for (i, l) in self.config.conv.iter().enumerate() {
            let w = g.param_named(&format!("cnn.conv{i}.w"))?;
            let b = g.param_named(&format!("cnn.conv{i}.b"))?;
            x = g.conv2d(x, w, Some(b), l.stride, l.padding)?;
            x = g.relu(x);
            if let Some((win, stride)) = l.pool {
                x = g.max_pool2d(x, win, stride)?;
            }
        }
        let flat = g.value(x).len();
        let x = g.reshape(x, vec![1, flat])?;
        let w = g.param_named("cnn.dense.w")?;
        let b = g.param_named("cnn.dense.b")?;
        let y = g.matmul(x, w)?;
        let y = g.add_bias(y, b)?;
        Ok(g.relu(y))
    }

    /// Recurrent branch: step features to `[1, 2 * hidden]`.
    pub fn rnn_branch(&self, g: &mut Graph<'_>, steps: &[[f64; 4]]) -> Result<Var, EncoderError> {
        if steps.is_empty() {
            return Err(EncoderError::EmptySequence);
        }
        let mut layers = Vec::with_capacity(self.config.gru_layers);
        for l in 0..self.config.gru_layers {
            let fwd = GruCell::bind(g, &format!("rnn.l{l}.fwd"))?;
            let bwd = GruCell::bind(g, &format!("rnn.l{l}.bwd"))?;
            layers.push((fwd, bwd));
        }
        let xs: Vec<Var> = steps
            .iter()
            .map(|s| g.constant(Tensor::row(s.to_vec())))
            .collect();
        Ok(bidirectional_gru(g, &xs, &layers)?)
    }

    /// Concatenation, affine map to `D` units, sigmoid.
    pub fn hash_layer(&self, g: &mut Graph<'_>, cnn: Var, rnn: Var) -> Result<(Var, Var), EncoderError> {
        let fused = g.concat(&[cnn, rnn])?;
        let w = g.param_named("hash.w")?;
        let b = g.param_named("hash.b")?;
        let z = g.matmul(fused, w)?;
        let z = g.add_bias(z, b)?;
        Ok((fused, g.sigmoid(z)))
    }

    fn linear(&self, g: &mut Graph<'_>, x: Var, prefix: &str) -> Result<Var, EncoderError> {
        let w = g.param_named(&format!("{prefix}.w"))?;
        let b = g.param_named(&format!("{prefix}.b"))?;
        let y = g.matmul(x, w)?;
        Ok(g.add_bias(y, b)?)
    }

    /// Full forward pass for one sample through the requested branch.
    pub fn forward(&self, g: &mut Graph<'_>, input: &SampleInput, branch: Branch) -> Result<ForwardVars, EncoderError> {
        match branch {
            Branch::Cnn => {
                let feat = self.cnn_branch(g, &input.raster)?;
                let logits = self.linear(g, feat, "head.cnn")?;
                Ok(ForwardVars {
                    feature: None,
                    logits,
                    recognition_logits: None,
                })
            }
            Branch::Rnn => {
                let feat = self.rnn_branch(g, &input.steps)?;
                let logits = self.linear(g, feat, "head.rnn")?;
                Ok(ForwardVars {
                    feature: None,
                    logits,
                    recognition_logits: None,
                })
            }
            Branch::Fused => {
                let c = self.cnn_branch(g, &input.raster)?;
                let r = self.rnn_branch(g, &input.steps)?;
                let (fused, f) = self.hash_layer(g, c, r)?;
                let logits = self.linear(g, f, "cls")?;
                let recognition_logits = if self.config.recognition_width > 0 {
                    let h = self.linear(g, fused, "rec.fc")?;
                    let h = g.relu(h);
                    Some(self.linear(g, h, "rec.cls")?)
                } else {
                    None
                };
                Ok(ForwardVars {
                    feature: Some(f),
                    logits,
                    recognition_logits,
                })
            }
        }
    }

    /// Hash feature and logits for one prepared sample (forward only).
    pub fn infer(&self, input: &SampleInput, branch: Branch) -> Result<Inference, EncoderError> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, input, branch)?;
        let feature = out
            .feature
            .map(|f| feature_from_sigmoid(g.value(f).data()));
        let recognition = out
            .recognition_logits
            .map(|r| g.value(r).data().to_vec());
        Ok(Inference {
            feature,
            logits: g.value(out.logits).data().to_vec(),
            recognition_logits: recognition,
        })
    }

    /// Hash features for a batch of raw sketches.
    pub fn encode(&self, sketches: &[&StrokeSketch], mode: Execution) -> Result<Vec<HashFeature>, EncoderError> {
        exec::try_map(mode, sketches, |s| {
            let input = self.prepare(s)?;
            Ok(self
                .infer(&input, Branch::Fused)?
                .feature
                .expect("fused branch yields a feature"))
        })
    }

    pub fn encode_codes(&self, sketches: &[&StrokeSketch], mode: Execution) -> Result<Vec<BinaryCode>, EncoderError> {
        Ok(self
            .encode(sketches, mode)?
            .iter()
            .map(|f| quantize(f.values()))
            .collect())
    }

    /// Convolutional-branch features, `[N, dense]`.
    pub fn cnn_forward(&self, rasters: &[RasterSketch], mode: Execution) -> Result<Tensor, EncoderError> {
        let side = self.config.raster_side;
        if let Some(r) = rasters.iter().find(|r| r.side() != side) {
            return Err(EncoderError::RasterSize {
                expected: side,
                got: vec![r.side(), r.side()],
            });
        }
        let rows = exec::try_map(mode, rasters, |r| {
            let t = Tensor::new(vec![1, side, side], r.grid().to_vec())?;
            let mut g = Graph::new(&self.params);
            let v = self.cnn_branch(&mut g, &t)?;
            Ok::<_, EncoderError>(g.value(v).data().to_vec())
        })?;
        stack(rows, self.config.dense_width)
    }

    /// Recurrent-branch features, `[N, 2 * hidden]`; sequences may differ in length.
    pub fn rnn_forward(&self, sketches: &[&StrokeSketch], mode: Execution) -> Result<Tensor, EncoderError> {
        let rows = exec::try_map(mode, sketches, |s| {
            if s.is_empty() {
                return Err(EncoderError::EmptySequence);
            }
            let dummy = RasterSketch::from_grid(16, vec![0.0; 256]).expect("blank grid");
            let input = self.prepare_with_raster(s, &dummy);
            let mut g = Graph::new(&self.params);
            let v = self.rnn_branch(&mut g, &input.steps)?;
            Ok(g.value(v).data().to_vec())
        })?;
        stack(rows, 2 * self.config.gru_hidden)
    }

    /// Concatenates branch features row by row and applies the hash layer.
    pub fn fuse_and_hash(&self, cnn: &Tensor, rnn: &Tensor) -> Result<Vec<HashFeature>, EncoderError> {
        let (n, n2) = (cnn.shape()[0], rnn.shape()[0]);
        if n != n2 {
            return Err(EncoderError::BatchMismatch(n, n2));
        }
        let mut g = Graph::new(&self.params);
        let c = g.constant(cnn.clone());
        let r = g.constant(rnn.clone());
        let (_, f) = self.hash_layer(&mut g, c, r)?;
        let d = self.config.code_bits;
        Ok(g.value(f)
            .data()
            .chunks(d)
            .map(feature_from_sigmoid)
            .collect())
    }
}

/// Output of [`Encoder::infer`].
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub feature: Option<HashFeature>,
    pub logits: Vec<f64>,
    pub recognition_logits: Option<Vec<f64>>,
}

impl Inference {
    /// Logits used for recognition: the extra head when present, else the classifier.
    pub fn recognition(&self) -> &[f64] {
        self.recognition_logits.as_deref().unwrap_or(&self.logits)
    }
}

/// Sigmoid outputs saturate to exactly 0 or 1 in f64 for large inputs; pull
/// those onto the nearest interior values so the open-range invariant holds.
fn feature_from_sigmoid(values: &[f64]) -> HashFeature {
    let lo = f64::MIN_POSITIVE;
    let hi = 1.0 - f64::EPSILON / 2.0;
    HashFeature::new(values.iter().map(|v| v.clamp(lo, hi)).collect()).expect("clamped into (0, 1)")
}

/// `W^T f + b` for `W: [D, L]`, `b: [L]`.
pub fn classify_logits(f: &[f64], w: &Tensor, b: &Tensor) -> Result<Vec<f64>, EncoderError> {
    match w.shape() {
        [d, l] if *d == f.len() && *l == b.len() => {
            let mut out = b.data().to_vec();
            for (i, fv) in f.iter().enumerate() {
                let row = &w.data()[i * l..(i + 1) * l];
                for (o, wv) in out.iter_mut().zip(row) {
                    *o += fv * wv;
                }
            }
            Ok(out)
        }
        s => Err(EncoderError::Dimension(format!(
            "feature of length {}, weights {:?}, bias of length {}",
            f.len(),
            s,
            b.len()
        ))),
    }
}

/// Plain sigmoid of an affine map, used by tests and tooling.
pub fn hash_affine(x: &[f64], w: &Tensor, b: &Tensor) -> Result<Vec<f64>, EncoderError> {
    Ok(classify_logits(x, w, b)?.into_iter().map(sigmoid).collect())
}

fn stack(rows: Vec<Vec<f64>>, width: usize) -> Result<Tensor, EncoderError> {
    let n = rows.len();
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Tensor::new(vec![n, width], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{to_stroke_sequence, RawSketch};

    fn sketch(strokes: Vec<Vec<(i32, i32)>>, label: u16) -> StrokeSketch {
        to_stroke_sequence(&RawSketch::new(strokes, "x").unwrap(), label).unwrap()
    }

    fn small_config() -> EncoderConfig {
        let mut c = EncoderConfig::compact(8, 3);
        c.raster_side = 16;
        c.conv.truncate(2);
        c.dense_width = 12;
        c.gru_hidden = 5;
        c
    }

    #[test]
    fn toy_cnn_feature_width() {
        let enc = Encoder::init(EncoderConfig::toy(16, 10)).unwrap();
        let s = sketch(vec![vec![(0, 0), (40, 40), (80, 0)]], 0);
        let r = rasterize(&s, 64).unwrap();
        let out = enc.cnn_forward(&[r], Execution::Sequential).unwrap();
        assert_eq!(out.shape(), &[1, 128]);
    }

    #[test]
    fn zero_image_zero_bias_zero_feature() {
        let enc = Encoder::init(small_config()).unwrap();
        let blank = RasterSketch::from_grid(16, vec![0.0; 256]).unwrap();
        let out = enc.cnn_forward(&[blank.clone(), blank], Execution::Sequential).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mixed_raster_sizes_rejected() {
        let enc = Encoder::init(small_config()).unwrap();
        let a = RasterSketch::from_grid(16, vec![0.0; 256]).unwrap();
        let b = RasterSketch::from_grid(17, vec![0.0; 289]).unwrap();
        assert!(matches!(
            enc.cnn_forward(&[a, b], Execution::Sequential),
            Err(EncoderError::RasterSize { .. })
        ));
    }

    #[test]
    fn identical_images_identical_rows() {
        let enc = Encoder::init(small_config()).unwrap();
        let s = sketch(vec![vec![(0, 0), (10, 3)], vec![(2, 8), (9, 9)]], 0);
        let r = rasterize(&s, 16).unwrap();
        let out = enc.cnn_forward(&[r.clone(), r], Execution::Parallel).unwrap();
        let w = out.shape()[1];
        assert_eq!(&out.data()[..w], &out.data()[w..]);
    }

    #[test]
    fn zero_hash_weights_give_half() {
        let mut enc = Encoder::init(small_config()).unwrap();
        let id = enc.params.id("hash.w").unwrap();
        enc.params.get_mut(id).scale(0.0);
        let cnn = Tensor::full(&[2, 12], 0.3);
        let rnn = Tensor::full(&[2, 10], -0.2);
        let f = enc.fuse_and_hash(&cnn, &rnn).unwrap();
        assert!(f.iter().flat_map(|x| x.values()).all(|v| *v == 0.5));

        let bid = enc.params.id("hash.b").unwrap();
        enc.params.get_mut(bid).data_mut().fill(20.0);
        let f = enc.fuse_and_hash(&cnn, &rnn).unwrap();
        assert!(f.iter().flat_map(|x| x.values()).all(|v| *v > 0.999999));

        assert!(matches!(
            enc.fuse_and_hash(&cnn, &Tensor::zeros(&[3, 10])),
            Err(EncoderError::BatchMismatch(2, 3))
        ));
    }

    #[test]
    fn classify_logits_cases() {
        let w = Tensor::zeros(&[4, 3]);
        let b = Tensor::zeros(&[3]);
        assert_eq!(classify_logits(&[0.1, 0.2, 0.3, 0.4], &w, &b).unwrap(), vec![0.0; 3]);
        let mut w = Tensor::zeros(&[3, 3]);
        w.data_mut()[3 + 1] = 1.0; // column 1 picks feature 1
        assert_eq!(
            classify_logits(&[0.0, 1.0, 0.0], &w, &b).unwrap(),
            vec![0.0, 1.0, 0.0]
        );
        assert!(classify_logits(&[0.0, 1.0], &w, &b).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_heads() {
        let mut enc = Encoder::init(small_config()).unwrap();
        let back = Encoder::from_bytes(&enc.to_bytes()).unwrap();
        assert_eq!(back, enc);
        enc.discard_branch_heads();
        assert!(enc.params.id("head.cnn.w").is_none());
        let back = Encoder::from_bytes(&enc.to_bytes()).unwrap();
        assert_eq!(back, enc);
    }

    #[test]
    fn empty_sequence_rejected() {
        let enc = Encoder::init(small_config()).unwrap();
        let mut g = Graph::new(&enc.params);
        assert!(matches!(enc.rnn_branch(&mut g, &[]), Err(EncoderError::EmptySequence)));
    }
}
