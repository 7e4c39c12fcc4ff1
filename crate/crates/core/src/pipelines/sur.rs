use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{absorbed_effects, columns, gather, Method, MethodReport, ThetaPolicy};
use crate::error::{Error, Result};
use crate::estimators::{
    delta_method_se, ols, sur_fgls, DeltaEstimate, LinearSystem, PassThroughMap, RecoveryMap,
    StriElasticityMap, SurOptions, SurResult, SurSystem,
};
use crate::panel::{double_demean, MaskedMatrix, Panel, DEMEAN_TOLERANCE};

/// Fewest countries a cross-section needs for the supply regression.
pub const MIN_CROSS_SECTION: usize = 3;

/// A resolved normalization period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThetaChoice {
    pub index: usize,
    pub label: String,
    /// `last`, `min_rss` or `explicit`.
    pub source: String,
}

fn cross_section(
    panel: &Panel,
    ln_s: &MaskedMatrix,
    t: usize,
) -> (Vec<usize>, DVector<f64>, DMatrix<f64>) {
    let rows: Vec<usize> = (0..panel.n_countries())
        .filter(|&i| ln_s.is_present(i, t))
        .collect();
    let y = DVector::from_iterator(
        rows.len(),
        rows.iter()
            .map(|&i| -panel.cell(i, t).map_or(f64::NAN, |c| c.fx_rate.ln())),
    );
    let x = DMatrix::from_fn(rows.len(), 2, |r, j| {
        if j == 0 {
            1.0
        } else {
            ln_s.get(rows[r], t).unwrap_or(f64::NAN)
        }
    });
    (rows, y, x)
}

/// Period whose cross-sectional supply regression `-ln Z = tau + omega ln S`
/// has the smallest residual sum of squares; ties go to the later period.
pub fn select_normalization_point(panel: &Panel) -> Result<usize> {
    let ln_s = panel.log_shares()?;
    let mut best: Option<(usize, f64)> = None;
    for t in 0..panel.n_periods() {
        let (rows, y, x) = cross_section(panel, &ln_s, t);
        if rows.len() < MIN_CROSS_SECTION {
            continue;
        }
        let Ok(fit) = ols(&LinearSystem::new(y, x)) else {
            continue;
        };
        if best.is_none_or(|(_, rss)| fit.rss <= rss) {
            best = Some((t, fit.rss));
        }
    }
    best.map(|(t, _)| t).ok_or_else(|| {
        Error::Dimension(format!(
            "no period has a usable cross-section of {MIN_CROSS_SECTION} or more countries"
        ))
    })
}

pub fn resolve_theta(panel: &Panel, policy: &ThetaPolicy) -> Result<ThetaChoice> {
    let (index, source) = match policy {
        ThetaPolicy::Last => (panel.n_periods() - 1, "last"),
        ThetaPolicy::MinRss => (select_normalization_point(panel)?, "min_rss"),
        ThetaPolicy::Explicit(label) => (
            panel.period_index(label).ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "normalization period `{label}` is not in the panel"
                ))
            })?,
            "explicit",
        ),
    };
    Ok(ThetaChoice {
        index,
        label: panel.period_label(index).to_string(),
        source: source.into(),
    })
}

/// Exchange-rate pass-through `phi = 1 + kappa omega` with its delta-method SE.
/// `covariance` is the joint covariance of `(kappa, omega)`.
pub fn compute_erpt(kappa: f64, omega: f64, covariance: &DMatrix<f64>) -> Result<DeltaEstimate> {
    delta_method_se(&[kappa, omega], covariance, &PassThroughMap)
}

struct SurFit {
    result: SurResult,
    kappa: usize,
    n_obs: usize,
    warnings: Vec<String>,
}

/// Supply block at `theta` from `panel`; equilibrium block on `sub`, whose
/// demeaned regressors are `b_x` (the first being `[ln Z]`).
fn fit_blocks(
    panel: &Panel,
    theta: &ThetaChoice,
    sub: &Panel,
    b_y: &MaskedMatrix,
    b_x: &[(&str, MaskedMatrix)],
    iterate: bool,
) -> Result<SurFit> {
    let ln_s = panel.log_shares()?;
    let (a_rows, ya, xa) = cross_section(panel, &ln_s, theta.index);
    if a_rows.len() < MIN_CROSS_SECTION {
        return Err(Error::Dimension(format!(
            "normalization period `{}` has {} countries; at least {MIN_CROSS_SECTION} are needed",
            theta.label,
            a_rows.len()
        )));
    }
    let cells = b_y.present_cells();
    let yb = gather(b_y, &cells);
    let cols: Vec<DVector<f64>> = b_x.iter().map(|(_, m)| gather(m, &cells)).collect();
    let xb = columns(&cols.iter().collect::<Vec<_>>());

    let theta_ordinal = panel.periods()[theta.index];
    let position: HashMap<(&str, i64), usize> = cells
        .iter()
        .enumerate()
        .map(|(r, &(i, t))| ((sub.countries()[i].as_str(), sub.periods()[t]), r))
        .collect();
    let linkage: Vec<(usize, usize)> = a_rows
        .iter()
        .enumerate()
        .filter_map(|(a, &i)| {
            position
                .get(&(panel.countries()[i].as_str(), theta_ordinal))
                .map(|&b| (a, b))
        })
        .collect();

    let system = SurSystem {
        supply: LinearSystem::new(ya, xa).with_names(["tau", "omega"]),
        equilibrium: LinearSystem::new(yb.clone(), xb.clone())
            .with_names(b_x.iter().map(|(n, _)| *n))
            .with_absorbed_dof(absorbed_effects(b_y)),
        linkage,
    };
    let options = SurOptions {
        iterate,
        ..Default::default()
    };
    let result = sur_fgls(&system, &options)?;
    let mut warnings = Vec::new();
    if result.fell_back {
        warnings.push("cross-equation error covariance is not positive definite; equation-by-equation OLS reported".into());
    } else if iterate && result.iterations >= options.max_iterations {
        warnings.push(format!(
            "SUR iterations stopped at the cap of {}",
            options.max_iterations
        ));
    }

    // Demeaning removes the intercept; check the residuals agree.
    let ka = result.supply_k();
    let b = result.stacked.coefficients.rows(ka, b_x.len());
    let resid_b = &yb - &xb * b;
    let mean = resid_b.mean();
    let bound = DEMEAN_TOLERANCE * (1.0 + b.iter().map(|v| v.abs()).sum::<f64>());
    if mean.abs() > bound {
        return Err(Error::DegenerateFit(format!(
            "equilibrium residual mean {mean:e} exceeds {bound:e}; demeaning drifted on this mask"
        )));
    }
    Ok(SurFit {
        n_obs: system.supply.n() + system.equilibrium.n(),
        kappa: ka,
        result,
        warnings,
    })
}

fn sub_cov(cov: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| cov[(idx[a], idx[b])])
}

fn base_report(
    method: Method,
    fit: &SurFit,
    theta: &ThetaChoice,
) -> Result<(MethodReport, f64, f64)> {
    let coef = &fit.result.stacked.coefficients;
    let cov = &fit.result.stacked.covariance;
    let (tau, omega, kappa) = (coef[0], coef[1], coef[fit.kappa]);
    let phi_value = 1.0 + kappa * omega;
    if phi_value.abs() <= 1e-10 {
        return Err(Error::SingularRecovery(phi_value));
    }
    let ko = sub_cov(cov, &[fit.kappa, 1]);
    let sigma = delta_method_se(&[kappa, omega], &ko, &RecoveryMap)?;
    let phi = compute_erpt(kappa, omega, &ko)?;
    let se = |j: usize| cov[(j, j)].max(0.0).sqrt();

    let mut report = MethodReport::new(method, sigma.value, Some(sigma.se), fit.n_obs);
    report.intermediates.tau = Some(tau);
    report.intermediates.omega = Some(omega);
    report.intermediates.kappa = Some(kappa);
    report.intermediates.phi = Some(phi.value);
    report.intermediate_se.tau = Some(se(0));
    report.intermediate_se.omega = Some(se(1));
    report.intermediate_se.kappa = Some(se(fit.kappa));
    report.intermediate_se.phi = Some(phi.se);
    report.theta = Some(theta.label.clone());
    report.theta_source = Some(theta.source.clone());
    report.warnings = fit.warnings.clone();
    Ok((report, kappa, omega))
}

/// Joint estimation of the supply equation at `theta` and the demeaned
/// equilibrium equation `[ln S] = kappa [ln Z]`; sigma is recovered as
/// `1 - kappa / (1 + kappa omega)`.
pub fn estimate_sur(panel: &Panel, theta: &ThetaChoice, iterate: bool) -> Result<MethodReport> {
    let s = double_demean(&panel.log_shares()?)?;
    let z = double_demean(&panel.log_fx())?;
    let fit = fit_blocks(panel, theta, panel, &s, &[("kappa", z)], iterate)?;
    Ok(base_report(Method::Sur, &fit, theta)?.0)
}

/// SUR with the equilibrium equation augmented by `[ln R]`, estimated on
/// the cells where the restrictiveness index is available.
pub fn estimate_sur_stri(
    panel: &Panel,
    theta: &ThetaChoice,
    iterate: bool,
) -> Result<MethodReport> {
    if !panel.has_any_stri() {
        return Err(Error::NotApplicable(
            "no positive restrictiveness index values in the panel".into(),
        ));
    }
    let sub = panel.restrict(|_, _, c| c.stri.is_some())?;
    // Shares on the sub-panel differ from full-panel shares by a period
    // constant, which demeaning removes.
    let s = double_demean(&sub.log_shares()?)?;
    let z = double_demean(&sub.log_fx())?;
    let r = double_demean(&sub.log_stri())?;
    if r.max_abs() <= DEMEAN_TOLERANCE {
        return Err(Error::Multicollinearity(
            "[ln R] has no variation beyond the fixed effects".into(),
        ));
    }
    let fit = fit_blocks(panel, theta, &sub, &s, &[("kappa", z), ("mu", r)], iterate).map_err(
        |e| match e {
            Error::SingularDesign { column } => Error::Multicollinearity(format!(
                "`{column}` is collinear with the other equilibrium regressors"
            )),
            other => other,
        },
    )?;
    let (mut report, kappa, omega) = base_report(Method::SurStri, &fit, theta)?;
    let mu_idx = fit.kappa + 1;
    let coef = &fit.result.stacked.coefficients;
    let cov = sub_cov(&fit.result.stacked.covariance, &[mu_idx, fit.kappa, 1]);
    let eta = delta_method_se(&[coef[mu_idx], kappa, omega], &cov, &StriElasticityMap)?;
    report.intermediates.mu = Some(coef[mu_idx]);
    report.intermediates.eta = Some(eta.value);
    report.intermediate_se.mu = Some(cov[(0, 0)].max(0.0).sqrt());
    report.intermediate_se.eta = Some(eta.se);
    Ok(report)
}
