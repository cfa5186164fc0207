use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Gradients, NumericError, ParamSet};

/// Which parameter coordinates to perturb.
#[derive(Clone, Copy, Debug)]
pub enum CoordSelection {
    All,
    /// Up to `per_tensor` coordinates drawn uniformly (with a seeded
    /// generator) from each tensor; small tensors are checked fully.
    Sample { per_tensor: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: (f64, f64),
}

/// Finite-difference formula for one coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error `O(h^2)`.
    Central,
    /// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`, error `O(h^4)`.
    FivePoint,
}

/// Compares `analytic` against central differences of `f` around `params`.
///
/// The per-coordinate error is `|a - n| / max(1e-12, |a| + |n|)`; the report
/// carries the maximum over every checked coordinate.
pub fn finite_diff_check<F>(
    f: F,
    params: &ParamSet,
    analytic: &Gradients,
    eps: f64,
    selection: CoordSelection,
) -> Result<GradCheckReport, NumericError>
where
    F: FnMut(&ParamSet) -> Result<f64, NumericError>,
{
    finite_diff_check_with(f, params, analytic, |_| (eps, Stencil::Central), selection)
}

/// [`finite_diff_check`] with a step size and stencil chosen per parameter name.
pub fn finite_diff_check_with<F, S>(
    mut f: F,
    params: &ParamSet,
    analytic: &Gradients,
    step: S,
    selection: CoordSelection,
) -> Result<GradCheckReport, NumericError>
where
    F: FnMut(&ParamSet) -> Result<f64, NumericError>,
    S: Fn(&str) -> (f64, Stencil),
{
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst: None,
        worst_values: (0.0, 0.0),
    };
    let mut rng = match selection {
        CoordSelection::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        CoordSelection::All => None,
    };
    for id in params.ids() {
        let n = params.get(id).len();
        let (h, stencil) = step(params.name(id));
        let coords: Vec<usize> = match (selection, rng.as_mut()) {
            (CoordSelection::Sample { per_tensor, .. }, Some(rng)) if n > per_tensor => {
                (0..per_tensor).map(|_| rng.gen_range(0..n)).collect()
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = params.get(id).data()[i];
            let mut at = |offset: f64| -> Result<f64, NumericError> {
                work.get_mut(id).data_mut()[i] = orig + offset;
                let v = f(&work)?;
                if !v.is_finite() {
                    return Err(NumericError::NonFinite(format!("objective at {}[{i}]", params.name(id))));
                }
                Ok(v)
            };
            let numeric = match stencil {
                Stencil::Central => (at(h)? - at(-h)?) / (2.0 * h),
                Stencil::FivePoint => {
                    // differences first so equal values cancel exactly
                    let near = at(h)? - at(-h)?;
                    let far = at(2.0 * h)? - at(-2.0 * h)?;
                    (8.0 * near - far) / (12.0 * h)
                }
            };
            work.get_mut(id).data_mut()[i] = orig;
            let a = analytic.get(id).data()[i];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((params.name(id).to_string(), i));
                report.worst_values = (a, numeric);
            }
        }
    }
    Ok(report)
}
