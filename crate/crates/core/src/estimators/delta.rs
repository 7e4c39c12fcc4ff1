use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Finite-difference step (scaled by `max(1, |x|)`).
const FD_STEP: f64 = 1e-6;
/// Allowed relative disagreement between analytic and numerical gradients.
const FD_TOLERANCE: f64 = 1e-6;

/// A scalar function of an estimated parameter vector.
pub trait ParamMap {
    fn value(&self, params: &[f64]) -> f64;

    /// Analytic gradient; `None` means differentiate numerically.
    fn gradient(&self, _params: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

impl<F: Fn(&[f64]) -> f64> ParamMap for F {
    fn value(&self, params: &[f64]) -> f64 {
        self(params)
    }
}

/// `sigma = 1 - kappa / (1 + kappa * omega)` over `[kappa, omega]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct RecoveryMap;

impl ParamMap for RecoveryMap {
    fn value(&self, p: &[f64]) -> f64 {
        1.0 - p[0] / (1.0 + p[0] * p[1])
    }

    fn gradient(&self, p: &[f64]) -> Option<Vec<f64>> {
        let d = (1.0 + p[0] * p[1]).powi(2);
        Some(vec![-1.0 / d, p[0] * p[0] / d])
    }
}

/// `eta = mu / (1 + kappa * omega)` over `[mu, kappa, omega]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct StriElasticityMap;

impl ParamMap for StriElasticityMap {
    fn value(&self, p: &[f64]) -> f64 {
        p[0] / (1.0 + p[1] * p[2])
    }

    fn gradient(&self, p: &[f64]) -> Option<Vec<f64>> {
        let phi = 1.0 + p[1] * p[2];
        let d = phi * phi;
        Some(vec![1.0 / phi, -p[0] * p[2] / d, -p[0] * p[1] / d])
    }
}

/// Exchange-rate pass-through `phi = 1 + kappa * omega` over `[kappa, omega]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassThroughMap;

impl ParamMap for PassThroughMap {
    fn value(&self, p: &[f64]) -> f64 {
        1.0 + p[0] * p[1]
    }

    fn gradient(&self, p: &[f64]) -> Option<Vec<f64>> {
        Some(vec![p[1], p[0]])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaEstimate {
    pub value: f64,
    pub se: f64,
    pub gradient: Vec<f64>,
}

/// Central-difference gradient with step `FD_STEP * max(1, |x_j|)`.
pub fn central_gradient(map: &dyn ParamMap, params: &[f64]) -> Vec<f64> {
    (0..params.len())
        .map(|j| {
            let h = FD_STEP * params[j].abs().max(1.0);
            let mut up = params.to_vec();
            let mut down = params.to_vec();
            up[j] += h;
            down[j] -= h;
            (map.value(&up) - map.value(&down)) / (2.0 * h)
        })
        .collect()
}

/// First-order delta method: `var = g' C g` with `g` the gradient of `map`
/// at `estimates`. Analytic gradients are cross-checked against central
/// differences.
pub fn delta_method_se(
    estimates: &[f64],
    cov: &DMatrix<f64>,
    map: &dyn ParamMap,
) -> Result<DeltaEstimate> {
    let p = estimates.len();
    if cov.shape() != (p, p) {
        return Err(Error::Dimension(format!(
            "covariance is {}x{} for {p} parameters",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    if (cov - cov.transpose()).amax() > 1e-10 * scale {
        return Err(Error::Dimension(
            "covariance matrix is not symmetric".into(),
        ));
    }
    if p > 0 && cov.clone().symmetric_eigenvalues().min() < -1e-10 * scale {
        return Err(Error::Dimension(
            "covariance matrix is not positive semidefinite".into(),
        ));
    }

    let value = map.value(estimates);
    if !value.is_finite() {
        return Err(Error::SingularTransform(format!(
            "transform is not finite at {estimates:?}"
        )));
    }
    let numeric = central_gradient(map, estimates);
    let gradient = match map.gradient(estimates) {
        Some(g) => {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::SingularTransform(format!(
                    "gradient is not finite at {estimates:?}"
                )));
            }
            let worst = g
                .iter()
                .zip(&numeric)
                .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
                .fold(0.0_f64, f64::max);
            if worst > FD_TOLERANCE {
                return Err(Error::GradientMismatch(worst));
            }
            g
        }
        None => numeric,
    };
    if gradient.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularTransform(format!(
            "gradient is not finite at {estimates:?}"
        )));
    }
    let g = DVector::from_column_slice(&gradient);
    let var = (g.transpose() * cov * &g)[(0, 0)];
    Ok(DeltaEstimate {
        value,
        se: var.max(0.0).sqrt(),
        gradient,
    })
}
