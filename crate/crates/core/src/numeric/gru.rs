//! Gated recurrent units.
//!
//! Gate layout (row-vector convention, `x: [1, in]`, `h: [1, hidden]`):
//!
//! ```text
//! z  = sigmoid(x Wz + h Uz + bz)            update gate
//! r  = sigmoid(x Wr + h Ur + br)            reset gate
//! n  = tanh(x Wn + bn + r * (h Un + bhn))   candidate, reset inside the hidden term
//! h' = (1 - z) * n + z * h
//! ```

use rand::Rng;

use super::{Graph, NumericError, ParamSet, Tensor, Var};

const GATE_NAMES: [&str; 10] = ["wz", "uz", "bz", "wr", "ur", "br", "wn", "un", "bn", "bhn"];

/// Graph handles for one GRU cell's parameters.
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub wz: Var,
    pub uz: Var,
    pub bz: Var,
    pub wr: Var,
    pub ur: Var,
    pub br: Var,
    pub wn: Var,
    pub un: Var,
    pub bn: Var,
    pub bhn: Var,
}

impl GruCell {
    /// Binds the parameters stored under `{prefix}.{wz,uz,...}`.
    pub fn bind(g: &mut Graph<'_>, prefix: &str) -> Result<Self, NumericError> {
        let mut v = [None; 10];
        for (slot, name) in v.iter_mut().zip(GATE_NAMES) {
            *slot = Some(g.param_named(&format!("{prefix}.{name}"))?);
        }
        let [wz, uz, bz, wr, ur, br, wn, un, bn, bhn] = v.map(|x| x.expect("bound"));
        Ok(GruCell {
            wz,
            uz,
            bz,
            wr,
            ur,
            br,
            wn,
            un,
            bn,
            bhn,
        })
    }

    pub fn hidden_size(&self, g: &Graph<'_>) -> usize {
        g.value(self.uz).shape()[0]
    }
}

/// Registers a cell under `prefix` with uniform `±1/sqrt(hidden)` weights and zero biases.
pub fn init_gru_cell<R: Rng>(
    params: &mut ParamSet,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut R,
) {
    let bound = 1.0 / (hidden as f64).sqrt();
    for name in GATE_NAMES {
        let tensor = match name.as_bytes()[0] {
            b'w' => Tensor::uniform(&[input, hidden], bound, rng),
            b'u' => Tensor::uniform(&[hidden, hidden], bound, rng),
            _ => Tensor::zeros(&[hidden]),
        };
        params.insert(format!("{prefix}.{name}"), tensor);
    }
}

pub fn gru_cell(g: &mut Graph<'_>, x: Var, h_prev: Var, cell: &GruCell) -> Result<Var, NumericError> {
    let gate = |g: &mut Graph<'_>, w: Var, u: Var, b: Var| -> Result<Var, NumericError> {
        let xw = g.matmul(x, w)?;
        let hu = g.matmul(h_prev, u)?;
        let s = g.add(xw, hu)?;
        let s = g.add_bias(s, b)?;
        Ok(g.sigmoid(s))
    };
    let z = gate(g, cell.wz, cell.uz, cell.bz)?;
    let r = gate(g, cell.wr, cell.ur, cell.br)?;

    let xn = g.matmul(x, cell.wn)?;
    let xn = g.add_bias(xn, cell.bn)?;
    let hn = g.matmul(h_prev, cell.un)?;
    let hn = g.add_bias(hn, cell.bhn)?;
    let rhn = g.mul(r, hn)?;
    let pre = g.add(xn, rhn)?;
    let n = g.tanh(pre);

    let one_minus_z = g.affine(z, -1.0, 1.0);
    let a = g.mul(one_minus_z, n)?;
    let b = g.mul(z, h_prev)?;
    g.add(a, b)
}

/// Runs stacked bidirectional layers over `steps` (each `[1, in]`) and
/// returns `[1, 2 * hidden]`: the top layer's forward state after the last
/// step followed by its backward state after the first step.
pub fn bidirectional_gru(
    g: &mut Graph<'_>,
    steps: &[Var],
    layers: &[(GruCell, GruCell)],
) -> Result<Var, NumericError> {
    if steps.is_empty() {
        return Err(NumericError::EmptyInput("bidirectional_gru sequence"));
    }
    if layers.is_empty() {
        return Err(NumericError::EmptyInput("bidirectional_gru layers"));
    }
    let mut inputs: Vec<Var> = steps.to_vec();
    let mut last = None;
    for (fwd, bwd) in layers {
        let hidden = fwd.hidden_size(g);
        let t_len = inputs.len();

        let mut h = g.constant(Tensor::zeros(&[1, hidden]));
        let mut fwd_states = Vec::with_capacity(t_len);
        for &x in &inputs {
            h = gru_cell(g, x, h, fwd)?;
            fwd_states.push(h);
        }

        let hidden_b = bwd.hidden_size(g);
        let mut h = g.constant(Tensor::zeros(&[1, hidden_b]));
        let mut bwd_states = vec![h; t_len];
        for t in (0..t_len).rev() {
            h = gru_cell(g, inputs[t], h, bwd)?;
            bwd_states[t] = h;
        }

        last = Some((fwd_states[t_len - 1], bwd_states[0]));
        inputs = fwd_states
            .iter()
            .zip(&bwd_states)
            .map(|(&f, &b)| g.concat(&[f, b]))
            .collect::<Result<_, _>>()?;
    }
    let (f, b) = last.expect("at least one layer");
    g.concat(&[f, b])
}
