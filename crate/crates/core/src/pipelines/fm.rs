//! Feenstra's method. Multiplying the demand error `s - gamma z` by the
//! supply error `z - rho s` and averaging over time gives, per country,
//!
//! `<z^2> = alpha1 <s^2> + alpha2 <s z> + xi`,
//! `alpha1 = -rho / gamma`, `alpha2 = (1 + gamma rho) / gamma`,
//!
//! which is fitted across countries by two-pass weighted least squares and
//! inverted through `alpha1 gamma^2 + alpha2 gamma - 1 = 0`, `rho = -alpha1 gamma`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{DemeanedCore, Method, MethodReport};
use crate::error::{Error, Result};
use crate::estimators::{delta_method_se, ols, LinearSystem, ParamMap};
use crate::panel::{MaskedMatrix, Panel};

/// `|alpha1|` below this (relative to `max(1, alpha2^2)`) takes the
/// single-root limit `gamma = 1 / alpha2`.
pub const ALPHA1_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FmOptions {
    /// Use reference-country time differences instead of double-demeaning.
    pub differences: bool,
}

/// Sign in front of the square root of the discriminant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Plus,
    Minus,
}

/// `gamma = (-alpha2 +- sqrt(D)) / (2 alpha1)`, evaluated in whichever of
/// its two algebraically equal forms avoids cancellation.
pub fn branch_gamma(alpha1: f64, alpha2: f64, branch: Branch) -> f64 {
    let root = (alpha2 * alpha2 + 4.0 * alpha1).sqrt();
    match branch {
        Branch::Plus if alpha2 >= 0.0 => 2.0 / (alpha2 + root),
        Branch::Plus => (root - alpha2) / (2.0 * alpha1),
        Branch::Minus if alpha2 <= 0.0 => 2.0 / (alpha2 - root),
        Branch::Minus => -(alpha2 + root) / (2.0 * alpha1),
    }
}

/// Moment coefficients implied by `(gamma, rho)`.
pub fn forward_alphas(gamma: f64, rho: f64) -> (f64, f64) {
    (-rho / gamma, (1.0 + gamma * rho) / gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootPair {
    pub gamma: f64,
    pub rho: f64,
    pub sigma: f64,
    pub branch: Branch,
}

impl RootPair {
    fn new(alpha1: f64, alpha2: f64, branch: Branch) -> Self {
        let gamma = branch_gamma(alpha1, alpha2, branch);
        Self {
            gamma,
            rho: -alpha1 * gamma,
            sigma: 1.0 - gamma,
            branch,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmRoots {
    /// Every real root pair (one in the degenerate limit).
    pub pairs: Vec<RootPair>,
    pub chosen: usize,
    /// `alpha1` was numerically zero and only the finite root survives.
    pub degenerate: bool,
}

impl FmRoots {
    pub fn selected(&self) -> &RootPair {
        &self.pairs[self.chosen]
    }

    /// The selected pair first, then the alternative.
    pub fn ordered(&self) -> Vec<RootPair> {
        let mut out = vec![self.pairs[self.chosen]];
        out.extend(
            self.pairs
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != self.chosen)
                .map(|(_, p)| *p),
        );
        out
    }
}

/// Solve for `(gamma, rho)`. A unique negative gamma wins; otherwise the pair
/// with the smaller `|rho|`.
pub fn fm_roots(alpha1: f64, alpha2: f64) -> Result<FmRoots> {
    if !(alpha1.is_finite() && alpha2.is_finite()) {
        return Err(Error::DegenerateFit(format!(
            "moment coefficients are not finite ({alpha1}, {alpha2})"
        )));
    }
    if alpha1.abs() <= ALPHA1_TOLERANCE * alpha2.powi(2).max(1.0) {
        if alpha2.abs() <= ALPHA1_TOLERANCE {
            return Err(Error::DegenerateFit(
                "both moment coefficients are numerically zero".into(),
            ));
        }
        let branch = if alpha2 >= 0.0 {
            Branch::Plus
        } else {
            Branch::Minus
        };
        return Ok(FmRoots {
            pairs: vec![RootPair::new(alpha1, alpha2, branch)],
            chosen: 0,
            degenerate: true,
        });
    }
    let disc = alpha2 * alpha2 + 4.0 * alpha1;
    if disc < 0.0 {
        return Err(Error::ComplexRoots { alpha1, alpha2 });
    }
    let pairs = vec![
        RootPair::new(alpha1, alpha2, Branch::Plus),
        RootPair::new(alpha1, alpha2, Branch::Minus),
    ];
    let negative: Vec<usize> = (0..2).filter(|&j| pairs[j].gamma < 0.0).collect();
    let chosen = if negative.len() == 1 {
        negative[0]
    } else if pairs[1].rho.abs() < pairs[0].rho.abs() {
        1
    } else {
        0
    };
    Ok(FmRoots {
        pairs,
        chosen,
        degenerate: false,
    })
}

/// `sigma = 1 - gamma(alpha1, alpha2)` along one root branch.
#[derive(Debug, Clone, Copy)]
pub struct FmSigmaMap(pub Branch);

impl ParamMap for FmSigmaMap {
    fn value(&self, p: &[f64]) -> f64 {
        1.0 - branch_gamma(p[0], p[1], self.0)
    }

    fn gradient(&self, p: &[f64]) -> Option<Vec<f64>> {
        // Implicit differentiation of alpha1 g^2 + alpha2 g - 1 = 0.
        let g = branch_gamma(p[0], p[1], self.0);
        let d = 2.0 * p[0] * g + p[1];
        Some(vec![g * g / d, g / d])
    }
}

#[derive(Debug, Clone)]
pub struct FmFit {
    pub alpha1: f64,
    pub alpha2: f64,
    /// Covariance of `(alpha1, alpha2)` from the weighted pass.
    pub covariance: DMatrix<f64>,
    pub roots: FmRoots,
    pub countries: usize,
    pub n_obs: usize,
    pub warnings: Vec<String>,
}

/// Two-pass moment regression on centred series `s` and `z` (rows are
/// countries, columns periods).
pub fn fm_moment_fit(s: &MaskedMatrix, z: &MaskedMatrix) -> Result<FmFit> {
    s.check_same_mask(z)?;
    let mut rows: Vec<Vec<(f64, f64, f64)>> = Vec::new();
    for i in 0..s.rows() {
        let obs: Vec<(f64, f64, f64)> = (0..s.cols())
            .filter_map(|t| Some((s.get(i, t)?, z.get(i, t)?)))
            .map(|(sv, zv)| (zv * zv, sv * sv, sv * zv))
            .collect();
        match obs.len() {
            0 => {}
            1 | 2 => {
                return Err(Error::Dimension(format!(
                    "country row {i} has {} observations; the moment method needs at least 3",
                    obs.len()
                )))
            }
            _ => rows.push(obs),
        }
    }
    let n = rows.len();
    let mean = |obs: &[(f64, f64, f64)], f: fn(&(f64, f64, f64)) -> f64| {
        obs.iter().map(f).sum::<f64>() / obs.len() as f64
    };
    let u = DVector::from_iterator(n, rows.iter().map(|o| mean(o, |r| r.0)));
    let w = DMatrix::from_fn(n, 2, |i, j| {
        if j == 0 {
            mean(&rows[i], |r| r.1)
        } else {
            mean(&rows[i], |r| r.2)
        }
    });
    let system = LinearSystem::new(u, w).with_names(["alpha1", "alpha2"]);
    let first = ols(&system)?;
    let (a1, a2) = (first.coefficients[0], first.coefficients[1]);

    let v: Vec<f64> = rows
        .iter()
        .map(|obs| {
            let xi: Vec<f64> = obs.iter().map(|r| r.0 - a1 * r.1 - a2 * r.2).collect();
            let m = xi.iter().sum::<f64>() / xi.len() as f64;
            xi.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (xi.len() - 1) as f64
        })
        .collect();
    let v_max = v.iter().copied().fold(0.0, f64::max);
    let mut warnings = Vec::new();
    let weights = if v_max > 0.0 && v.iter().all(|&vi| vi > f64::EPSILON * v_max) {
        DVector::from_iterator(n, rows.iter().zip(&v).map(|(o, vi)| o.len() as f64 / vi))
    } else {
        warnings.push(
            "a country's moment residual variance is zero; weighting by panel length only".into(),
        );
        DVector::from_iterator(n, rows.iter().map(|o| o.len() as f64))
    };
    let second = ols(&system.with_weights(weights))?;
    let (alpha1, alpha2) = (second.coefficients[0], second.coefficients[1]);
    let roots = fm_roots(alpha1, alpha2)?;
    if roots.degenerate {
        warnings.push(format!(
            "alpha1 = {alpha1:e} is numerically zero; using the single-root limit gamma = 1/alpha2"
        ));
    }
    Ok(FmFit {
        alpha1,
        alpha2,
        covariance: second.covariance,
        roots,
        countries: n,
        n_obs: rows.iter().map(Vec::len).sum(),
        warnings,
    })
}

/// Time differences taken relative to a reference country (the one observed
/// most often), which removes both country and period effects.
pub(crate) fn reference_differences(panel: &Panel, x: &MaskedMatrix) -> Result<MaskedMatrix> {
    let counts = x.row_counts();
    let k = (0..counts.len()).fold(0, |best, i| if counts[i] > counts[best] { i } else { best });
    let periods = panel.periods();
    let others: Vec<usize> = (0..x.rows()).filter(|&i| i != k).collect();
    let cols = x.cols().saturating_sub(1);
    let diff = |i: usize, t: usize| -> Option<f64> {
        if periods[t + 1] - periods[t] != 1 {
            return None;
        }
        Some((x.get(i, t + 1)? - x.get(i, t)?) - (x.get(k, t + 1)? - x.get(k, t)?))
    };
    Ok(MaskedMatrix::from_fn(others.len(), cols, |r, t| {
        diff(others[r], t)
    }))
}

/// Feenstra's method on the demeaned (or reference-differenced) log shares
/// and log exchange rates.
pub fn estimate_fm(panel: &Panel, options: &FmOptions) -> Result<MethodReport> {
    report_from_fit(&fm_panel_fit(panel, options)?, options)
}

pub(crate) fn fm_panel_fit(panel: &Panel, options: &FmOptions) -> Result<FmFit> {
    let (s, z) = if options.differences {
        let ln_s = panel.log_shares()?;
        let ln_z = panel.log_fx();
        (
            reference_differences(panel, &ln_s)?,
            reference_differences(panel, &ln_z)?,
        )
    } else {
        let core = DemeanedCore::new(panel)?;
        (core.s, core.z)
    };
    fm_moment_fit(&s, &z)
}

pub(crate) fn report_from_fit(fit: &FmFit, options: &FmOptions) -> Result<MethodReport> {
    let pair = *fit.roots.selected();
    let delta = delta_method_se(
        &[fit.alpha1, fit.alpha2],
        &fit.covariance,
        &FmSigmaMap(pair.branch),
    )?;
    let mut report = MethodReport::new(Method::Fm, pair.sigma, Some(delta.se), fit.n_obs);
    report.intermediates.rho = Some(pair.rho);
    report.intermediates.alpha1 = Some(fit.alpha1);
    report.intermediates.alpha2 = Some(fit.alpha2);
    report.intermediate_se.alpha1 = Some(fit.covariance[(0, 0)].max(0.0).sqrt());
    report.intermediate_se.alpha2 = Some(fit.covariance[(1, 1)].max(0.0).sqrt());
    report.fm_roots = Some(fit.roots.ordered());
    report.warnings = fit.warnings.clone();
    if options.differences {
        report
            .warnings
            .push("moments built from reference-country time differences".into());
    }
    Ok(report)
}
