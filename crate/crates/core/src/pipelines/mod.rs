//! End-to-end estimation strategies: fixed-effects IV on observed prices,
//! Feenstra's moment method and its implicit instrument, and the joint
//! supply/equilibrium SUR (optionally with a trade-restrictiveness regressor).

mod correction;
mod fm;
mod iiv;
mod ivfe;
mod sur;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diagnostics::TestResult;
use crate::error::{Error, Result};
use crate::panel::{double_demean, MaskedMatrix, Panel};

pub use correction::{apply_benchmark_correction, CorrectedSigma, CorrectionLine};
pub use fm::{
    estimate_fm, fm_moment_fit, fm_roots, forward_alphas, Branch, FmFit, FmOptions, FmRoots,
    FmSigmaMap, RootPair,
};
pub use iiv::{construct_iiv, estimate_iiv, iiv_from_series, IivInstruments};
pub use ivfe::estimate_ivfe;
pub use sur::{
    compute_erpt, estimate_sur, estimate_sur_stri, resolve_theta, select_normalization_point,
    ThetaChoice,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ivfe,
    Fm,
    Iiv,
    Sur,
    SurStri,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Ivfe,
        Method::Fm,
        Method::Iiv,
        Method::Sur,
        Method::SurStri,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Ivfe => "ivfe",
            Method::Fm => "fm",
            Method::Iiv => "iiv",
            Method::Sur => "sur",
            Method::SurStri => "sur_stri",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ivfe" => Ok(Method::Ivfe),
            "fm" => Ok(Method::Fm),
            "iiv" => Ok(Method::Iiv),
            "sur" => Ok(Method::Sur),
            "sur-stri" | "sur_stri" => Ok(Method::SurStri),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

/// How the normalization period is chosen.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaPolicy {
    Last,
    #[default]
    MinRss,
    /// A period label (or ordinal) supplied by the caller.
    Explicit(String),
}

impl FromStr for ThetaPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "last" => ThetaPolicy::Last,
            "min-rss" | "min_rss" => ThetaPolicy::MinRss,
            "" => return Err(Error::InvalidConfig("empty theta".into())),
            label => ThetaPolicy::Explicit(label.to_string()),
        })
    }
}

/// Which supplementary instruments an IV pipeline may add to its primary one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentPolicy {
    /// Add candidates one at a time while the overidentification test passes.
    #[default]
    Gated,
    /// The primary instrument only (just identified).
    Primary,
    /// Every candidate that keeps the instrument matrix full rank.
    All,
}

impl FromStr for InstrumentPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gated" => Ok(InstrumentPolicy::Gated),
            "primary" => Ok(InstrumentPolicy::Primary),
            "all" => Ok(InstrumentPolicy::All),
            other => Err(Error::InvalidConfig(format!(
                "unknown instrument policy `{other}`"
            ))),
        }
    }
}

/// Knobs shared by every pipeline.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EstimateOptions {
    pub theta: ThetaPolicy,
    pub instruments: InstrumentPolicy,
    /// Iterate SUR's covariance estimate to convergence (one step otherwise).
    pub sur_iterate: bool,
    pub fm: FmOptions,
}

impl EstimateOptions {
    pub fn new() -> Self {
        Self {
            sur_iterate: true,
            ..Default::default()
        }
    }
}

/// Parameters a method may carry besides sigma.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Intermediates {
    pub kappa: Option<f64>,
    pub omega: Option<f64>,
    pub tau: Option<f64>,
    pub rho: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub mu: Option<f64>,
    pub eta: Option<f64>,
    pub phi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub sigma: f64,
    pub sigma_se: Option<f64>,
    /// `1 - sigma`.
    pub gamma: f64,
    pub intermediates: Intermediates,
    /// Standard errors of the intermediates, keyed the same way.
    pub intermediate_se: Intermediates,
    /// Normalization period label (SUR methods).
    pub theta: Option<String>,
    pub theta_source: Option<String>,
    pub diagnostics: Vec<TestResult>,
    pub instruments: Vec<String>,
    pub warnings: Vec<String>,
    pub n_obs: usize,
    /// Both FM root pairs, the selected one first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fm_roots: Option<Vec<RootPair>>,
    /// Uninstrumented fixed-effects sigma (IVFE only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub naive_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub naive_sigma_se: Option<f64>,
    /// Set when the endogeneity test does not reject, so plain FE suffices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fe_preferred: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected: Option<CorrectedSigma>,
}

impl MethodReport {
    pub(crate) fn new(method: Method, sigma: f64, sigma_se: Option<f64>, n_obs: usize) -> Self {
        Self {
            method,
            sigma,
            sigma_se,
            gamma: 1.0 - sigma,
            intermediates: Intermediates::default(),
            intermediate_se: Intermediates::default(),
            theta: None,
            theta_source: None,
            diagnostics: Vec::new(),
            instruments: Vec::new(),
            warnings: Vec::new(),
            n_obs,
            fm_roots: None,
            naive_sigma: None,
            naive_sigma_se: None,
            fe_preferred: None,
            corrected: None,
        }
    }
}

/// Run one method with `options`.
pub fn estimate(panel: &Panel, method: Method, options: &EstimateOptions) -> Result<MethodReport> {
    match method {
        Method::Ivfe => estimate_ivfe(panel, options.instruments),
        Method::Fm => estimate_fm(panel, &options.fm),
        Method::Iiv => estimate_iiv(panel, &options.fm, options.instruments),
        Method::Sur => {
            let theta = resolve_theta(panel, &options.theta)?;
            estimate_sur(panel, &theta, options.sur_iterate)
        }
        Method::SurStri => {
            let theta = resolve_theta(panel, &options.theta)?;
            estimate_sur_stri(panel, &theta, options.sur_iterate)
        }
    }
}

/// Double-demeaned log shares and log exchange rates on the panel mask.
pub(crate) struct DemeanedCore {
    pub s: MaskedMatrix,
    pub z: MaskedMatrix,
    pub cells: Vec<(usize, usize)>,
    /// Fixed effects removed: countries + periods - 1.
    pub absorbed: usize,
}

impl DemeanedCore {
    pub fn new(panel: &Panel) -> Result<Self> {
        let ln_s = panel.log_shares()?;
        let ln_z = panel.log_fx();
        Self::from_series(&ln_s, &ln_z)
    }

    pub fn from_series(ln_s: &MaskedMatrix, ln_z: &MaskedMatrix) -> Result<Self> {
        ln_s.check_same_mask(ln_z)?;
        let s = double_demean(ln_s)?;
        let z = double_demean(ln_z)?;
        let cells = s.present_cells();
        let absorbed = absorbed_effects(&s);
        Ok(Self {
            s,
            z,
            cells,
            absorbed,
        })
    }
}

pub(crate) fn absorbed_effects(m: &MaskedMatrix) -> usize {
    let rows = m.row_counts().iter().filter(|&&c| c > 0).count();
    let cols = m.col_counts().iter().filter(|&&c| c > 0).count();
    rows + cols - 1
}

/// Values of `m` at `cells`, as a column vector.
pub(crate) fn gather(m: &MaskedMatrix, cells: &[(usize, usize)]) -> DVector<f64> {
    DVector::from_iterator(
        cells.len(),
        cells.iter().map(|&(i, t)| m.get(i, t).unwrap_or(f64::NAN)),
    )
}

/// Stack the vectors as columns of a matrix.
pub(crate) fn columns(cols: &[&DVector<f64>]) -> DMatrix<f64> {
    let n = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_tags_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.tag().parse::<Method>().unwrap(), m);
            assert_eq!(
                serde_json::to_string(&m).unwrap(),
                format!("\"{}\"", m.tag())
            );
        }
        assert_eq!("sur-stri".parse::<Method>().unwrap(), Method::SurStri);
        assert!("ols".parse::<Method>().is_err());
    }

    #[test]
    fn theta_policy_parsing() {
        assert_eq!("last".parse::<ThetaPolicy>().unwrap(), ThetaPolicy::Last);
        assert_eq!(
            "min-rss".parse::<ThetaPolicy>().unwrap(),
            ThetaPolicy::MinRss
        );
        assert_eq!(
            "2020-12".parse::<ThetaPolicy>().unwrap(),
            ThetaPolicy::Explicit("2020-12".into())
        );
    }
}
