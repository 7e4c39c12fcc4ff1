use super::ols::hc1;
use super::{
    project_onto, CovarianceKind, EstimatorKind, FirstStage, LeastSquares, LinearSystem,
    RegressionResult,
};
use crate::error::{Error, Result};

/// Two-stage least squares: `b = (Xh'Xh)^-1 Xh'y` with `Xh = P_W X`.
///
/// The instrument matrix `W` must contain every exogenous regressor as well as
/// the excluded instruments.
pub fn tsls(system: &LinearSystem) -> Result<RegressionResult> {
    system.validate()?;
    let w = system
        .instruments
        .as_ref()
        .ok_or_else(|| Error::Dimension("tsls requires an instrument matrix".into()))?;
    if system.weights.is_some() {
        return Err(Error::Dimension("weighted 2SLS is not supported".into()));
    }
    let (k, m) = (system.k(), w.ncols());
    if m < k {
        return Err(Error::UnderIdentified {
            instruments: m,
            regressors: k,
        });
    }
    let fitted = project_onto(w, &system.regressors, &system.instrument_names)?;
    // A regressor the instruments barely reach leaves only rounding noise in
    // its projection; the absolute rank test on `fitted` cannot see that.
    let n = system.n() as f64;
    for j in 0..k {
        let raw = system.regressors.column(j).norm();
        if fitted.column(j).norm()
            <= f64::EPSILON.sqrt() * n.sqrt() * raw.max(f64::MIN_POSITIVE) * 1e-3
        {
            return Err(Error::WeakDesign(format!(
                "instruments do not reach regressor `{}`",
                system.names[j]
            )));
        }
    }
    let fit =
        LeastSquares::solve(&fitted, &system.response, &system.names).map_err(|e| match e {
            Error::SingularDesign { column } => {
                Error::WeakDesign(format!("projected regressor `{column}` is rank deficient"))
            }
            other => other,
        })?;
    let residuals = &system.response - &system.regressors * &fit.coefficients;
    let rss = residuals.norm_squared();
    let dof = system.residual_dof()?;
    let sigma2 = rss / dof as f64;
    let bread = fit.xtx_inverse();
    let covariance = match system.covariance {
        CovarianceKind::Classical => &bread * sigma2,
        CovarianceKind::Robust => hc1(&bread, &fitted, &residuals, dof),
    };
    Ok(RegressionResult {
        estimator: EstimatorKind::Tsls,
        names: system.names.clone(),
        coefficients: fit.coefficients,
        covariance,
        residuals,
        rss,
        sigma2,
        n: system.n(),
        k,
        m,
        dof,
        first_stage: Some(FirstStage {
            fitted,
            instruments: w.clone(),
            instrument_names: system.instrument_names.clone(),
        }),
    })
}
