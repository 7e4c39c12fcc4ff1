use serde::{Deserialize, Serialize};

/// Affine map from SUR estimates to the fixed-effects IV benchmark,
/// `sigma_ivfe = intercept + slope * sigma_sur`, fitted across commodities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionLine {
    pub intercept: f64,
    pub slope: f64,
    pub intercept_se: f64,
    pub slope_se: f64,
    pub adj_r2: f64,
    /// Covariance of the intercept and slope estimates. Not published with the
    /// line; reconstructed by refitting it on the seven commodities it was
    /// estimated from.
    pub intercept_slope_cov: f64,
}

impl CorrectionLine {
    pub const BENCHMARK: CorrectionLine = CorrectionLine {
        intercept: -0.879,
        slope: 2.000,
        intercept_se: 0.176,
        slope_se: 0.093,
        adj_r2: 0.987,
        intercept_slope_cov: -0.01396,
    };

    pub fn apply(&self, sigma: f64) -> f64 {
        self.intercept + self.slope * sigma
    }

    /// Standard error of the fitted line at `sigma` (parameter uncertainty only).
    pub fn line_se(&self, sigma: f64) -> f64 {
        let var = self.intercept_se.powi(2)
            + sigma * sigma * self.slope_se.powi(2)
            + 2.0 * sigma * self.intercept_slope_cov;
        var.max(0.0).sqrt()
    }
}

impl Default for CorrectionLine {
    fn default() -> Self {
        Self::BENCHMARK
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectedSigma {
    pub sigma: f64,
    /// Combines the line's parameter uncertainty with the input SE, if any.
    pub se: f64,
    pub line_se: f64,
}

/// Map a SUR sigma onto the benchmark scale. The caller opts in explicitly.
pub fn apply_benchmark_correction(
    sigma_sur: f64,
    sigma_se: Option<f64>,
    line: &CorrectionLine,
) -> CorrectedSigma {
    let line_se = line.line_se(sigma_sur);
    let input = sigma_se.map_or(0.0, |se| line.slope * se);
    CorrectedSigma {
        sigma: line.apply(sigma_sur),
        se: (line_se * line_se + input * input).sqrt(),
        line_se,
    }
}
