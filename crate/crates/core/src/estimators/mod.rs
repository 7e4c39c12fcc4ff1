//! Linear estimation engines shared by every pipeline: OLS/WLS, 2SLS,
//! two-block feasible GLS (SUR) and delta-method inference.

mod delta;
mod ls;
mod ols;
mod sur;
mod tsls;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

pub use delta::{
    central_gradient, delta_method_se, DeltaEstimate, ParamMap, PassThroughMap, RecoveryMap,
    StriElasticityMap,
};
pub use ls::{project_onto, LeastSquares};
pub use ols::ols;
pub use sur::{sur_fgls, SurBlockFit, SurOptions, SurResult, SurSystem};
pub use tsls::tsls;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Ols,
    Wls,
    Tsls,
    Sur,
}

/// Coefficient covariance flavour. Classical is the default everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    #[default]
    Classical,
    /// HC1 heteroskedasticity-robust sandwich.
    Robust,
}

/// `y = X b + e`, optionally weighted and/or instrumented.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub response: DVector<f64>,
    pub regressors: DMatrix<f64>,
    pub names: Vec<String>,
    pub weights: Option<DVector<f64>>,
    pub instruments: Option<DMatrix<f64>>,
    pub instrument_names: Vec<String>,
    /// Degrees of freedom already consumed by absorbed fixed effects.
    pub absorbed_dof: usize,
    pub covariance: CovarianceKind,
}

impl LinearSystem {
    pub fn new(response: DVector<f64>, regressors: DMatrix<f64>) -> Self {
        let names = (0..regressors.ncols()).map(|j| format!("x{j}")).collect();
        Self {
            response,
            regressors,
            names,
            weights: None,
            instruments: None,
            instrument_names: Vec::new(),
            absorbed_dof: 0,
            covariance: CovarianceKind::Classical,
        }
    }

    pub fn with_names<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.names = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_weights(mut self, weights: DVector<f64>) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn with_instruments<S: Into<String>>(
        mut self,
        instruments: DMatrix<f64>,
        names: impl IntoIterator<Item = S>,
    ) -> Self {
        self.instrument_names = names.into_iter().map(Into::into).collect();
        if self.instrument_names.len() != instruments.ncols() {
            self.instrument_names = (0..instruments.ncols()).map(|j| format!("w{j}")).collect();
        }
        self.instruments = Some(instruments);
        self
    }

    pub fn with_absorbed_dof(mut self, dof: usize) -> Self {
        self.absorbed_dof = dof;
        self
    }

    pub fn with_covariance(mut self, kind: CovarianceKind) -> Self {
        self.covariance = kind;
        self
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn k(&self) -> usize {
        self.regressors.ncols()
    }

    /// Residual degrees of freedom after coefficients and absorbed effects.
    pub fn residual_dof(&self) -> Result<usize> {
        let used = self.k() + self.absorbed_dof;
        if self.n() <= used {
            return Err(Error::Dimension(format!(
                "{} observations cannot support {} coefficients plus {} absorbed effects",
                self.n(),
                self.k(),
                self.absorbed_dof
            )));
        }
        Ok(self.n() - used)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.regressors.nrows() != self.n() {
            return Err(Error::Dimension(
                "regressor rows differ from response length".into(),
            ));
        }
        if self.k() == 0 {
            return Err(Error::Dimension(
                "a regression needs at least one regressor".into(),
            ));
        }
        if self.names.len() != self.k() {
            return Err(Error::Dimension(
                "one name per regressor is required".into(),
            ));
        }
        self.residual_dof()?;
        if let Some(w) = &self.weights {
            if w.len() != self.n() || w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::Dimension(
                    "weights must be positive, one per observation".into(),
                ));
            }
        }
        if let Some(z) = &self.instruments {
            if z.nrows() != self.n() {
                return Err(Error::Dimension(
                    "instrument rows differ from response length".into(),
                ));
            }
        }
        if !self
            .response
            .iter()
            .chain(self.regressors.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::Dimension("non-finite data in regression".into()));
        }
        Ok(())
    }
}

/// Products of a 2SLS fit needed by the specification tests.
#[derive(Debug, Clone)]
pub struct FirstStage {
    /// Projection of each regressor onto the instrument span.
    pub fitted: DMatrix<f64>,
    pub instruments: DMatrix<f64>,
    pub instrument_names: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RegressionResult {
    pub estimator: EstimatorKind,
    pub names: Vec<String>,
    pub coefficients: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub residuals: DVector<f64>,
    /// Residual sum of squares (weighted when weights are used).
    pub rss: f64,
    /// Error variance estimate `rss / dof` (1 for SUR, whose scale lives in the weights).
    pub sigma2: f64,
    pub n: usize,
    pub k: usize,
    /// Instrument count; equals `k` for non-IV fits.
    pub m: usize,
    pub dof: usize,
    pub first_stage: Option<FirstStage>,
}

impl RegressionResult {
    pub fn std_errors(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.k,
            (0..self.k).map(|j| self.covariance[(j, j)].max(0.0).sqrt()),
        )
    }

    pub fn se(&self, j: usize) -> f64 {
        self.covariance[(j, j)].max(0.0).sqrt()
    }

    pub fn t_stat(&self, j: usize) -> f64 {
        self.coefficients[j] / self.se(j)
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.coefficients[j])
    }
}
