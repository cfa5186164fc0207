//! Finite-difference checks of the autodiff engine: isolated primitives and
//! the complete training objective through both branches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::encoder::{BinaryCode, Branch, Encoder, EncoderConfig, EncoderError, SampleInput};
use crate::losses::{sample_objective, CenterProvenance, CenterTable, LossError, LossWeights, ObjectiveSpec};
use crate::numeric::{
    bidirectional_gru, finite_diff_check, finite_diff_check_with, init_gru_cell, Stencil, CoordSelection, GradCheckReport, Gradients, Graph,
    GruCell, NumericError, Padding, ParamSet, Tensor, Var,
};
use crate::synth::{generate, SynthConfig};

pub const PRIMITIVE_TOLERANCE: f64 = 1e-6;
pub const OBJECTIVE_TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-6;
const SMOOTH_EPS: f64 = 1e-3;
const MAX_STEPS: usize = 12;

fn is_bias(name: &str) -> bool {
    name.rsplit('.').next().is_some_and(|last| last.starts_with('b'))
}

#[derive(Debug, thiserror::Error)]
pub enum GradcheckError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("corpus: {0}")]
    Corpus(String),
}

type Builder = fn(&mut Graph<'_>) -> Result<Var, NumericError>;

fn weighted_sum(g: &mut Graph<'_>, x: Var, seed: u64) -> Result<Var, NumericError> {
    let shape = g.value(x).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(Tensor::uniform(&shape, 1.0, &mut rng));
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

fn p(g: &mut Graph<'_>, name: &str) -> Result<Var, NumericError> {
    g.param_named(name)
}

type Case = (&'static str, Vec<(&'static str, Vec<usize>)>, Builder);

fn primitive_cases() -> Vec<Case> {
    vec![
        ("matmul", vec![("a", vec![3, 4]), ("b", vec![4, 2])], |g| {
            let (a, b) = (p(g, "a")?, p(g, "b")?);
            let y = g.matmul(a, b)?;
            weighted_sum(g, y, 1)
        }),
        ("add_sub_mul", vec![("a", vec![2, 3]), ("b", vec![2, 3])], |g| {
            let (a, b) = (p(g, "a")?, p(g, "b")?);
            let s = g.add(a, b)?;
            let d = g.sub(a, b)?;
            let y = g.mul(s, d)?;
            weighted_sum(g, y, 2)
        }),
        ("add_bias", vec![("x", vec![3, 4]), ("b", vec![4])], |g| {
            let (x, b) = (p(g, "x")?, p(g, "b")?);
            let y = g.add_bias(x, b)?;
            weighted_sum(g, y, 3)
        }),
        ("sigmoid_tanh", vec![("x", vec![2, 5])], |g| {
            let x = p(g, "x")?;
            let s = g.sigmoid(x);
            let t = g.tanh(x);
            let y = g.mul(s, t)?;
            weighted_sum(g, y, 4)
        }),
        ("relu", vec![("x", vec![1, 12])], |g| {
            let x = p(g, "x")?;
            let y = g.relu(x);
            weighted_sum(g, y, 5)
        }),
        ("square_affine_mean", vec![("x", vec![4])], |g| {
            let x = p(g, "x")?;
            let a = g.affine(x, 1.7, -0.2);
            let y = g.square(a);
            Ok(g.mean(y))
        }),
        ("concat_reshape", vec![("a", vec![1, 3]), ("b", vec![1, 5])], |g| {
            let (a, b) = (p(g, "a")?, p(g, "b")?);
            let c = g.concat(&[a, b])?;
            let r = g.reshape(c, vec![2, 4])?;
            weighted_sum(g, r, 6)
        }),
        ("softmax_cross_entropy", vec![("z", vec![1, 6])], |g| {
            let z = p(g, "z")?;
            g.softmax_cross_entropy(z, 2)
        }),
        (
            "conv2d_same",
            vec![("x", vec![2, 6, 6]), ("k", vec![3, 2, 3, 3]), ("b", vec![3])],
            |g| {
                let (x, k, b) = (p(g, "x")?, p(g, "k")?, p(g, "b")?);
                let y = g.conv2d(x, k, Some(b), 1, Padding::Same)?;
                weighted_sum(g, y, 7)
            },
        ),
        ("conv2d_strided", vec![("x", vec![1, 9, 9]), ("k", vec![2, 1, 3, 3])], |g| {
            let (x, k) = (p(g, "x")?, p(g, "k")?);
            let y = g.conv2d(x, k, None, 2, Padding::Valid)?;
            weighted_sum(g, y, 8)
        }),
        ("max_pool2d", vec![("x", vec![2, 7, 7])], |g| {
            let x = p(g, "x")?;
            let y = g.max_pool2d(x, 3, 2)?;
            weighted_sum(g, y, 9)
        }),
    ]
}

fn check_builder(params: &ParamSet, build: Builder) -> Result<GradCheckReport, NumericError> {
    let mut g = Graph::new(params);
    let out = build(&mut g)?;
    g.backward(out)?;
    let grads = g.into_param_grads()?;
    finite_diff_check(
        |q| {
            let mut g = Graph::new(q);
            let out = build(&mut g)?;
            Ok(g.value(out).item())
        },
        params,
        &grads,
        EPS,
        CoordSelection::All,
    )
}

/// Every differentiable primitive on small random inputs, all coordinates.
pub fn primitive_checks(seed: u64) -> Result<Vec<(String, GradCheckReport)>, GradcheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, shapes, build) in primitive_cases() {
        let mut params = ParamSet::new();
        for (pname, shape) in shapes {
            params.insert(pname, Tensor::uniform(&shape, 1.0, &mut rng));
        }
        out.push((name.to_string(), check_builder(&params, build)?));
    }
    out.push(("bidirectional_gru".to_string(), gru_check(&mut rng)?));
    Ok(out)
}

fn gru_check(rng: &mut ChaCha8Rng) -> Result<GradCheckReport, NumericError> {
    let mut params = ParamSet::new();
    params.insert("x", Tensor::uniform(&[4, 3], 1.0, rng));
    for (layer, input) in [(0, 3), (1, 8)] {
        for dir in ["fwd", "bwd"] {
            init_gru_cell(&mut params, &format!("l{layer}.{dir}"), input, 4, rng);
        }
    }
    // biases start at zero; move them off it so their gradients are exercised
    for id in params.ids().collect::<Vec<_>>() {
        if is_bias(params.name(id)) {
            let shape = params.get(id).shape().to_vec();
            *params.get_mut(id) = Tensor::uniform(&shape, 0.5, rng);
        }
    }
    let build = |g: &mut Graph<'_>| -> Result<Var, NumericError> {
        let x = g.param_named("x")?;
        let steps: Vec<Var> = (0..4)
            .map(|t| -> Result<Var, NumericError> {
                let ones = g.constant(Tensor::new(vec![1, 4], (0..4).map(|i| f64::from(u8::from(i == t))).collect())?);
                g.matmul(ones, x)
            })
            .collect::<Result<_, _>>()?;
        let layers = (0..2)
            .map(|l| Ok((GruCell::bind(g, &format!("l{l}.fwd"))?, GruCell::bind(g, &format!("l{l}.bwd"))?)))
            .collect::<Result<Vec<_>, NumericError>>()?;
        let h = bidirectional_gru(g, &steps, &layers)?;
        weighted_sum(g, h, 10)
    };
    let mut g = Graph::new(&params);
    let out = build(&mut g)?;
    g.backward(out)?;
    let grads = g.into_param_grads()?;
    // no kinks anywhere in the cell, and some recurrent gradients are ~1e-6,
    // where central roundoff at EPS alone exceeds the tolerance
    finite_diff_check_with(
        |q| {
            let mut g = Graph::new(q);
            let out = build(&mut g)?;
            Ok(g.value(out).item())
        },
        &params,
        &grads,
        |_| (SMOOTH_EPS, Stencil::FivePoint),
        CoordSelection::All,
    )
}

/// Convolutional-branch parameters feed relu and max-pool kinks, so they get the
/// small central step. Everything else enters the objective smoothly and gets
/// a wider five-point step, which keeps roundoff below the tolerance even for
/// tiny recurrent-weight gradients.
fn coordinate_step(name: &str) -> (f64, Stencil) {
    if name.starts_with("cnn.") || name.starts_with("rec.fc") {
        (EPS, Stencil::Central)
    } else {
        (SMOOTH_EPS, Stencil::FivePoint)
    }
}

/// Gradient check of the full objective (cross-entropy plus center and
/// quantization terms) through the fused network.
#[derive(Clone, Debug)]
pub struct ObjectiveCheck {
    pub weights: LossWeights,
    pub report: GradCheckReport,
}

/// Checks the summed objective of a few synthetic sketches on a fresh
/// encoder of `profile`, once with the default loss weights and once with
/// unit weights so the center and quantization paths carry real gradient.
/// `per_tensor` coordinates are sampled from every parameter tensor.
pub fn objective_checks(profile: &str, seed: u64, per_tensor: usize) -> Result<Vec<ObjectiveCheck>, GradcheckError> {
    let classes = 3;
    let code_bits = 16;
    let raw = generate(&SynthConfig {
        categories: classes,
        per_category: 1,
        seed,
        noise_fraction: 0.0,
    });
    let corpus = Corpus::from_raw(&raw).map_err(|e| GradcheckError::Corpus(e.to_string()))?;
    let mut config = EncoderConfig::by_profile(profile, code_bits, classes)?;
    config.init_seed = seed;
    config.offset_scale = 20.0;
    let mut encoder = Encoder::init(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // zero biases put blank pixels exactly on the relu kink
    for id in encoder.params.ids().collect::<Vec<_>>() {
        let name = encoder.params.name(id);
        if is_bias(name) {
            let shape = encoder.params.get(id).shape().to_vec();
            *encoder.params.get_mut(id) = Tensor::uniform(&shape, 0.1, &mut rng);
        }
    }
    let mut inputs: Vec<SampleInput> = corpus
        .sketches
        .iter()
        .map(|s| encoder.prepare(s))
        .collect::<Result<_, _>>()?;
    // long recurrences drive some weight gradients below what a central
    // difference can resolve in f64
    for x in &mut inputs {
        x.steps.truncate(MAX_STEPS);
    }

    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| Tensor::uniform(&[code_bits], 0.5, &mut rng).data().iter().map(|v| v + 0.5).collect())
        .collect();
    let mut table = CenterTable::new(corpus.categories.clone(), centers, CenterProvenance::default())?;
    table.freeze();
    let codes: Vec<BinaryCode> = crate::eval::random_codes(inputs.len(), code_bits, seed ^ 0xc0de);

    let mut out = Vec::new();
    for weights in [LossWeights::DEFAULT, LossWeights { scl: 1.0, ql: 1.0 }] {
        let spec = ObjectiveSpec {
            branch: Branch::Fused,
            weights,
            centers: Some(&table),
        };
        let total = |params: &ParamSet, want_grads: bool| -> Result<(f64, Option<Gradients>), GradcheckError> {
            let enc = Encoder {
                config: encoder.config.clone(),
                params: params.clone(),
            };
            let mut g = Graph::new(&enc.params);
            let mut sum: Option<Var> = None;
            for (x, b) in inputs.iter().zip(&codes) {
                let (v, _) = sample_objective(&mut g, &enc, x, &spec, Some(b))?;
                sum = Some(match sum {
                    Some(s) => g.add(s, v)?,
                    None => v,
                });
            }
            let s = sum.expect("at least one sample");
            let value = g.value(s).item();
            if !want_grads {
                return Ok((value, None));
            }
            g.backward(s)?;
            Ok((value, Some(g.into_param_grads()?)))
        };
        let (_, grads) = total(&encoder.params, true)?;
        let grads = grads.expect("requested");
        let report = finite_diff_check_with(
            |q| total(q, false).map(|(v, _)| v).map_err(|e| NumericError::NonFinite(e.to_string())),
            &encoder.params,
            &grads,
            coordinate_step,
            CoordSelection::Sample { per_tensor, seed },
        )?;
        out.push(ObjectiveCheck { weights, report });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_pass() {
        for seed in 0..16 {
            for (name, r) in primitive_checks(seed).unwrap() {
                assert!(r.max_rel_error < PRIMITIVE_TOLERANCE, "seed {seed} {name}: {r:?}");
                assert!(r.coords_checked > 0);
            }
        }
    }
}
