use nalgebra::{DMatrix, DVector};

use super::{CovarianceKind, EstimatorKind, LeastSquares, LinearSystem, RegressionResult};
use crate::error::{Error, Result};

/// Ordinary (or, with weights, weighted) least squares.
pub fn ols(system: &LinearSystem) -> Result<RegressionResult> {
    system.validate()?;
    if system.instruments.is_some() {
        return Err(Error::Dimension(
            "ols does not take instruments; use tsls".into(),
        ));
    }
    let sqrt_w = system.weights.as_ref().map(|w| w.map(f64::sqrt));
    let (x, y) = match &sqrt_w {
        Some(s) => (
            scale_rows(&system.regressors, s),
            system.response.component_mul(s),
        ),
        None => (system.regressors.clone(), system.response.clone()),
    };
    let fit = LeastSquares::solve(&x, &y, &system.names)?;
    let residuals = &system.response - &system.regressors * &fit.coefficients;
    let weighted_resid = match &sqrt_w {
        Some(s) => residuals.component_mul(s),
        None => residuals.clone(),
    };
    let rss = weighted_resid.norm_squared();
    let dof = system.residual_dof()?;
    let sigma2 = rss / dof as f64;
    let bread = fit.xtx_inverse();
    let covariance = match system.covariance {
        CovarianceKind::Classical => &bread * sigma2,
        CovarianceKind::Robust => hc1(&bread, &x, &weighted_resid, dof),
    };
    Ok(RegressionResult {
        estimator: if system.weights.is_some() {
            EstimatorKind::Wls
        } else {
            EstimatorKind::Ols
        },
        names: system.names.clone(),
        coefficients: fit.coefficients,
        covariance,
        residuals,
        rss,
        sigma2,
        n: system.n(),
        k: system.k(),
        m: system.k(),
        dof,
        first_stage: None,
    })
}

pub(crate) fn scale_rows(x: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (mut row, &f) in out.row_iter_mut().zip(s.iter()) {
        row *= f;
    }
    out
}

/// `n/dof * B (sum e_i^2 x_i x_i') B` with `B = (X'X)^-1`.
pub(crate) fn hc1(
    bread: &DMatrix<f64>,
    x: &DMatrix<f64>,
    resid: &DVector<f64>,
    dof: usize,
) -> DMatrix<f64> {
    let scaled = scale_rows(x, &resid.map(f64::abs));
    let meat = scaled.transpose() * &scaled;
    let n = x.nrows() as f64;
    let cov = bread * meat * bread * (n / dof as f64);
    (&cov + cov.transpose()) * 0.5
}
