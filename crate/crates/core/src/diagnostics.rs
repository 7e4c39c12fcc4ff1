//! Specification tests for instrumented regressions: first-stage strength
//! (Cragg-Donald F), overidentification (Sargan) and endogeneity
//! (Davidson-MacKinnon augmented regression).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::estimators::{ols, project_onto, LinearSystem};

/// Rule-of-thumb threshold for the first-stage F.
pub const WEAK_INSTRUMENT_F: f64 = 10.0;
/// Reported first-stage F when the instruments fit the regressor exactly.
pub const F_CAP: f64 = 1e10;
/// Significance level behind every reject/fail-to-reject verdict.
pub const TEST_LEVEL: f64 = 0.05;

pub const CRAGG_DONALD: &str = "cragg_donald_f";
pub const SARGAN: &str = "sargan";
pub const DAVIDSON_MACKINNON: &str = "davidson_mackinnon";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Reject,
    FailToReject,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    #[serde(rename = "stat")]
    pub statistic: Option<f64>,
    #[serde(rename = "p")]
    pub p_value: Option<f64>,
    pub df: Vec<usize>,
    pub verdict: Verdict,
}

impl TestResult {
    fn not_applicable(name: &str) -> Self {
        Self {
            name: name.into(),
            statistic: None,
            p_value: None,
            df: Vec::new(),
            verdict: Verdict::NotApplicable,
        }
    }

    fn tested(name: &str, statistic: f64, p_value: f64, df: Vec<usize>) -> Self {
        let verdict = if p_value < TEST_LEVEL {
            Verdict::Reject
        } else {
            Verdict::FailToReject
        };
        Self {
            name: name.into(),
            statistic: Some(statistic),
            p_value: Some(p_value),
            df,
            verdict,
        }
    }

    pub fn rejects(&self) -> bool {
        self.verdict == Verdict::Reject
    }
}

fn partial_out(x: &DMatrix<f64>, exogenous: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
    match exogenous {
        Some(c) if c.ncols() > 0 => {
            let names: Vec<String> = (0..c.ncols()).map(|j| format!("exog{j}")).collect();
            Ok(x - project_onto(c, x, &names)?)
        }
        _ => Ok(x.clone()),
    }
}

/// First-stage F of the excluded instruments for a single endogenous
/// regressor, after partialling out included exogenous regressors.
/// `absorbed_dof` counts fixed effects removed before the call.
pub fn cragg_donald_f(
    endogenous: &DVector<f64>,
    exogenous: Option<&DMatrix<f64>>,
    excluded: &DMatrix<f64>,
    absorbed_dof: usize,
) -> Result<TestResult> {
    let n = endogenous.len();
    let l = excluded.ncols();
    let k_exog = exogenous.map_or(0, |c| c.ncols());
    if excluded.nrows() != n || l == 0 {
        return Err(Error::Dimension(
            "first stage needs excluded instruments, one row per observation".into(),
        ));
    }
    let dof = n
        .checked_sub(k_exog + l + absorbed_dof)
        .filter(|&d| d > 0)
        .ok_or_else(|| {
            Error::Dimension(format!(
                "{n} observations leave no first-stage degrees of freedom"
            ))
        })?;
    let x = partial_out(
        &DMatrix::from_column_slice(n, 1, endogenous.as_slice()),
        exogenous,
    )?;
    let z = partial_out(excluded, exogenous)?;
    let total = x.norm_squared();
    if !(total > 0.0) {
        return Err(Error::DegenerateFit(
            "endogenous regressor has no variation left after partialling".into(),
        ));
    }
    let names: Vec<String> = (0..l).map(|j| format!("z{j}")).collect();
    let fitted = project_onto(&z, &x, &names)?;
    let rss = (&x - &fitted).norm_squared();
    let statistic = if rss <= total * 1e-20 {
        F_CAP
    } else {
        (((total - rss) / l as f64) / (rss / dof as f64)).min(F_CAP)
    };
    let verdict = if statistic > WEAK_INSTRUMENT_F {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(TestResult {
        name: CRAGG_DONALD.into(),
        statistic: Some(statistic),
        p_value: None,
        df: vec![l, dof],
        verdict,
    })
}

/// Sargan statistic `n * R^2` of the 2SLS residuals on every instrument,
/// chi-square with `m - k` degrees of freedom. The data are assumed to be
/// centred (fixed effects removed), so R^2 is uncentred.
pub fn sargan_test(
    residuals: &DVector<f64>,
    instruments: &DMatrix<f64>,
    k: usize,
) -> Result<TestResult> {
    let (n, m) = instruments.shape();
    if residuals.len() != n {
        return Err(Error::Dimension(
            "residuals and instruments differ in length".into(),
        ));
    }
    if m <= k {
        return Ok(TestResult::not_applicable(SARGAN));
    }
    let total = residuals.norm_squared();
    if !(total > 0.0) {
        return Err(Error::DegenerateFit(
            "2SLS residuals are identically zero".into(),
        ));
    }
    let names: Vec<String> = (0..m).map(|j| format!("w{j}")).collect();
    let u = DMatrix::from_column_slice(n, 1, residuals.as_slice());
    let explained = project_onto(instruments, &u, &names)?.norm_squared();
    let statistic = n as f64 * explained / total;
    let df = m - k;
    let p = ChiSquared::new(df as f64)
        .map_err(|e| Error::Dimension(e.to_string()))?
        .sf(statistic);
    Ok(TestResult::tested(
        SARGAN,
        statistic,
        p.clamp(0.0, 1.0),
        vec![df],
    ))
}

/// Control-function endogeneity test: append the first-stage residuals of
/// the `endogenous` columns to the OLS regression and F-test them jointly.
pub fn davidson_mackinnon_test(
    response: &DVector<f64>,
    regressors: &DMatrix<f64>,
    endogenous: &[usize],
    instruments: &DMatrix<f64>,
    absorbed_dof: usize,
) -> Result<TestResult> {
    let (n, k) = regressors.shape();
    let q = endogenous.len();
    if q == 0 || endogenous.iter().any(|&j| j >= k) {
        return Err(Error::Dimension(
            "endogenous columns must index the regressors".into(),
        ));
    }
    let dof = n
        .checked_sub(k + q + absorbed_dof)
        .filter(|&d| d > 0)
        .ok_or_else(|| {
            Error::Dimension(format!(
                "{n} observations cannot support the augmented regression"
            ))
        })?;
    let endog = regressors.select_columns(endogenous);
    let names: Vec<String> = (0..instruments.ncols()).map(|j| format!("w{j}")).collect();
    let cf = &endog - project_onto(instruments, &endog, &names)?;
    if cf.norm() <= 1e-12 * endog.norm().max(f64::MIN_POSITIVE) {
        // Instruments reproduce the regressors: nothing is left to test.
        let mut r = TestResult::tested(DAVIDSON_MACKINNON, 0.0, 1.0, vec![q, dof]);
        r.verdict = Verdict::FailToReject;
        return Ok(r);
    }
    let mut augmented = DMatrix::zeros(n, k + q);
    augmented.columns_mut(0, k).copy_from(regressors);
    augmented.columns_mut(k, q).copy_from(&cf);
    let names: Vec<String> = (0..k + q).map(|j| format!("x{j}")).collect();
    let fit = ols(&LinearSystem::new(response.clone(), augmented)
        .with_names(names)
        .with_absorbed_dof(absorbed_dof))
    .map_err(|e| match e {
        Error::SingularDesign { .. } => Error::DegenerateAugmentation,
        other => other,
    })?;
    let b = fit.coefficients.rows(k, q).into_owned();
    let v = fit.covariance.view((k, k), (q, q)).into_owned();
    let v_inv = v.cholesky().ok_or(Error::DegenerateAugmentation)?.inverse();
    let statistic = (b.transpose() * v_inv * &b)[(0, 0)] / q as f64;
    let p = FisherSnedecor::new(q as f64, dof as f64)
        .map_err(|e| Error::Dimension(e.to_string()))?
        .sf(statistic);
    Ok(TestResult::tested(
        DAVIDSON_MACKINNON,
        statistic,
        p.clamp(0.0, 1.0),
        vec![q, dof],
    ))
}
