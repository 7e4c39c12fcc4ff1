//! Structural data-generating process for the demand/supply system, used as
//! the ground truth for every estimator.
//!
//! Demand: `ln S = ln lambda - gamma ln Q + gamma (ln Z + ln pi) + e`, with
//! `e = epsilon + eta ln R` when a restrictiveness index is simulated.
//! Supply: `ln pi = tau + omega ln S + delta`.
//!
//! At the normalization period `theta` import prices are 1, so the share is
//! drawn from demand alone and the exchange rate is backed out of supply.
//! Elsewhere the exchange rate follows a random walk anchored at `theta`
//! and shares come from the reduced form. Latent log shares are closed
//! within each period, which only shifts them by a period constant.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{ols, LinearSystem};
use crate::panel::{Panel, PanelObservation};
use crate::pipelines::{estimate, gather, DemeanedCore, EstimateOptions, Method, MethodReport};

pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ShockDistribution {
    #[default]
    Gaussian,
    /// Student-t rescaled to unit variance (`df > 2`).
    StudentT { df: f64 },
}

/// Restrictiveness index `R_it = base_i exp(sd * z_it)`, capped at 1, entering
/// demand with elasticity `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StriProcess {
    pub eta: f64,
    pub sd: f64,
}

impl Default for StriProcess {
    fn default() -> Self {
        Self { eta: -0.5, sd: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub n: usize,
    pub t: usize,
    /// Zero-based normalization period; the last period when absent.
    pub theta: Option<usize>,
    pub sigma: f64,
    pub omega: f64,
    pub tau: f64,
    /// Preference weights; log-evenly spaced over `[-1.5, 1.5]` when absent.
    pub lambda: Option<Vec<f64>>,
    pub q_amplitude: f64,
    pub q_drift: f64,
    /// Base scale of log exchange-rate innovations.
    pub z_scale: f64,
    /// Country `i` uses `z_scale * (1 - spread + 2 spread i/(N-1))`.
    pub z_spread: f64,
    pub sd_epsilon: f64,
    pub sd_delta: f64,
    pub shocks: ShockDistribution,
    pub stri: Option<StriProcess>,
    /// Probability that a cell outside `theta` is dropped.
    pub missing_prob: f64,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n: 20,
            t: 60,
            theta: None,
            sigma: 3.0,
            omega: 0.5,
            tau: 0.5,
            lambda: None,
            q_amplitude: 0.1,
            q_drift: 0.002,
            z_scale: 0.03,
            z_spread: 0.5,
            sd_epsilon: 0.05,
            sd_delta: 0.05,
            shocks: ShockDistribution::Gaussian,
            stri: None,
            missing_prob: 0.0,
            seed: DEFAULT_SEED,
        }
    }
}

impl DgpConfig {
    pub fn gamma(&self) -> f64 {
        1.0 - self.sigma
    }

    pub fn theta_index(&self) -> usize {
        self.theta.unwrap_or(self.t.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n < 2 || self.t < 2 {
            return bad(format!(
                "panel must be at least 2 x 2 (got {} x {})",
                self.n, self.t
            ));
        }
        if self.theta_index() >= self.t {
            return bad(format!(
                "theta {} is outside 0..{}",
                self.theta_index(),
                self.t
            ));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive (got {})", self.sigma));
        }
        let scales = [
            self.z_scale,
            self.sd_epsilon,
            self.sd_delta,
            self.q_amplitude.abs(),
        ];
        if scales.iter().any(|s| !(*s >= 0.0 && s.is_finite()))
            || !(0.0..=1.0).contains(&self.z_spread)
        {
            return bad("shock scales must be finite and non-negative, spread in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.missing_prob) {
            return bad(format!(
                "missing_prob must be in [0, 1) (got {})",
                self.missing_prob
            ));
        }
        if let ShockDistribution::StudentT { df } = self.shocks {
            if !(df > 2.0) {
                return bad(format!(
                    "Student-t shocks need df > 2 for a finite variance (got {df})"
                ));
            }
        }
        if let Some(s) = &self.stri {
            if !(s.sd >= 0.0 && s.eta.is_finite()) {
                return bad("restrictiveness process needs sd >= 0 and finite eta".into());
            }
        }
        if let Some(l) = &self.lambda {
            let total: f64 = l.iter().sum();
            if l.len() != self.n || l.iter().any(|&v| !(v > 0.0)) || (total - 1.0).abs() > 1e-9 {
                return bad("lambda must hold n positive weights summing to 1".into());
            }
        }
        let denom = 1.0 - self.gamma() * self.omega;
        if denom.abs() <= 1e-10 {
            return Err(Error::SingularTransform(format!(
                "1 - gamma*omega = {denom:e}: the reduced form is undefined for sigma = {}, omega = {}",
                self.sigma, self.omega
            )));
        }
        Ok(())
    }

    fn lambda_weights(&self) -> Vec<f64> {
        if let Some(l) = &self.lambda {
            return l.clone();
        }
        let raw: Vec<f64> = (0..self.n)
            .map(|i| (-1.5 + 3.0 * i as f64 / (self.n - 1) as f64).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }
}

/// Reduced-form coefficients `kappa = gamma/(1 - gamma omega)` and
/// `phi = 1/(1 - gamma omega)`.
pub fn reduced_form_oracle(config: &DgpConfig) -> Result<(f64, f64)> {
    let gamma = config.gamma();
    let denom = 1.0 - gamma * config.omega;
    if denom.abs() <= 1e-10 {
        return Err(Error::SingularTransform(format!(
            "1 - gamma*omega = {denom:e} is numerically zero"
        )));
    }
    Ok((gamma / denom, 1.0 / denom))
}

/// Everything the generator drew, plus the implied reduced form.
/// Matrices are indexed `[country][period]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub sigma: f64,
    pub gamma: f64,
    pub omega: f64,
    pub tau: f64,
    pub kappa: f64,
    pub phi: f64,
    pub eta: Option<f64>,
    pub mu: Option<f64>,
    pub theta_index: usize,
    pub theta_label: String,
    pub seed: u64,
    pub countries: Vec<String>,
    pub lambda: Vec<f64>,
    pub ln_q: Vec<f64>,
    pub ln_z: Vec<Vec<f64>>,
    pub ln_pi: Vec<Vec<f64>>,
    pub epsilon: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    pub ln_r: Option<Vec<Vec<f64>>>,
    /// Log shares before within-period closure.
    pub ln_s_latent: Vec<Vec<f64>>,
    /// Whether each cell was emitted.
    pub present: Vec<Vec<bool>>,
}

fn draw_shock(rng: &mut ChaCha8Rng, dist: ShockDistribution) -> f64 {
    match dist {
        ShockDistribution::Gaussian => rng.sample(StandardNormal),
        ShockDistribution::StudentT { df } => {
            let t = StudentT::new(df).expect("validated df");
            t.sample(rng) * ((df - 2.0) / df).sqrt()
        }
    }
}

/// Simulate one panel from `config` (seeded by `config.seed`).
pub fn generate_panel(config: &DgpConfig) -> Result<(Panel, TruthRecord)> {
    config.validate()?;
    let (n, t_len, theta) = (config.n, config.t, config.theta_index());
    let gamma = config.gamma();
    let (kappa, phi) = reduced_form_oracle(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let lambda = config.lambda_weights();
    let ln_q: Vec<f64> = (0..t_len)
        .map(|t| {
            config.q_amplitude * (2.0 * PI * t as f64 / 12.0).sin() + config.q_drift * t as f64
        })
        .collect();
    let grid = |scale: f64, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                (0..t_len)
                    .map(|_| scale * draw_shock(rng, config.shocks))
                    .collect()
            })
            .collect()
    };
    let epsilon = grid(config.sd_epsilon, &mut rng);
    let delta = grid(config.sd_delta, &mut rng);
    let innovations: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..t_len)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let ln_r: Option<Vec<Vec<f64>>> = config.stri.map(|p| {
        (0..n)
            .map(|_| {
                let base: f64 = rng.random_range(0.05..0.4);
                (0..t_len)
                    .map(|_| (base.ln() + p.sd * rng.sample::<f64, _>(StandardNormal)).min(0.0))
                    .collect()
            })
            .collect()
    });
    let present: Vec<Vec<bool>> = (0..n)
        .map(|_| {
            (0..t_len)
                .map(|t| t == theta || !rng.random_bool(config.missing_prob))
                .collect()
        })
        .collect();

    let eta = config.stri.map(|p| p.eta);
    let demand_error = |i: usize, t: usize| {
        epsilon[i][t] + eta.zip(ln_r.as_ref()).map_or(0.0, |(e, r)| e * r[i][t])
    };

    let mut ln_z = vec![vec![0.0; t_len]; n];
    let mut ln_s = vec![vec![0.0; t_len]; n];
    let mut ln_pi = vec![vec![0.0; t_len]; n];
    for i in 0..n {
        let spread = if n > 1 {
            i as f64 / (n - 1) as f64
        } else {
            0.0
        };
        let scale = config.z_scale * (1.0 - config.z_spread + 2.0 * config.z_spread * spread);
        let s_theta = lambda[i].ln() - gamma * ln_q[theta] + demand_error(i, theta);
        ln_z[i][theta] = -config.tau - config.omega * s_theta - delta[i][theta];
        for t in theta + 1..t_len {
            ln_z[i][t] = ln_z[i][t - 1] + scale * innovations[i][t];
        }
        for t in (0..theta).rev() {
            ln_z[i][t] = ln_z[i][t + 1] - scale * innovations[i][t];
        }
        for t in 0..t_len {
            ln_s[i][t] = if t == theta {
                s_theta
            } else {
                phi * lambda[i].ln() + kappa * config.tau - kappa * ln_q[t]
                    + kappa * ln_z[i][t]
                    + phi * demand_error(i, t)
                    + phi * gamma * delta[i][t]
            };
            ln_pi[i][t] = config.tau + config.omega * ln_s[i][t] + delta[i][t];
        }
    }

    let countries: Vec<String> = (0..n).map(|i| format!("C{:02}", i + 1)).collect();
    let mut observations = Vec::new();
    for t in 0..t_len {
        let rows: Vec<usize> = (0..n).filter(|&i| present[i][t]).collect();
        let total: f64 = rows.iter().map(|&i| ln_s[i][t].exp()).sum();
        for &i in &rows {
            let value = ln_s[i][t].exp() / total;
            let fx = ln_z[i][t].exp();
            observations.push(PanelObservation {
                country: countries[i].clone(),
                period: t as i64 + 1,
                value,
                // Prices are read back as P = Z V / X, so X = V / pi.
                quantity: Some(value / ln_pi[i][t].exp()),
                fx_rate: fx,
                stri: ln_r.as_ref().map(|r| r[i][t].exp()),
            });
        }
    }
    let panel = Panel::from_observations(observations)?;
    let truth = TruthRecord {
        sigma: config.sigma,
        gamma,
        omega: config.omega,
        tau: config.tau,
        kappa,
        phi,
        eta,
        mu: eta.map(|e| phi * e),
        theta_index: theta,
        theta_label: (theta + 1).to_string(),
        seed: config.seed,
        countries,
        lambda,
        ln_q,
        ln_z,
        ln_pi,
        epsilon,
        delta,
        ln_r,
        ln_s_latent: ln_s,
        present,
    };
    Ok((panel, truth))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `r`; independent of scheduling.
pub fn replication_seed(seed: u64, r: usize) -> u64 {
    splitmix64(seed ^ splitmix64(r as u64 + 1))
}

/// Outcome of one method in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodOutcome {
    Report(Box<MethodReport>),
    Failed { kind: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    pub outcomes: Vec<MethodOutcome>,
    /// Uninstrumented double-demeaned slope of `[ln S]` on `[ln Z]`.
    pub naive_kappa: Option<f64>,
}

/// Uninstrumented two-way fixed-effects slope of log shares on log exchange rates.
pub fn naive_slope(panel: &Panel) -> Result<f64> {
    let core = DemeanedCore::new(panel)?;
    let y = gather(&core.s, &core.cells);
    let x = gather(&core.z, &core.cells);
    let fit = ols(&LinearSystem::new(
        y,
        nalgebra::DMatrix::from_column_slice(x.len(), 1, x.as_slice()),
    )
    .with_absorbed_dof(core.absorbed))?;
    Ok(fit.coefficients[0])
}

/// Generate and estimate `reps` panels in parallel; results are in
/// replication order.
pub fn run_replications(
    config: &DgpConfig,
    methods: &[Method],
    reps: usize,
    options: &EstimateOptions,
) -> Result<Vec<Replication>> {
    config.validate()?;
    if reps == 0 {
        return Err(Error::InvalidConfig(
            "at least one replication is required".into(),
        ));
    }
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let seed = replication_seed(config.seed, r);
            let (panel, _) = generate_panel(&DgpConfig {
                seed,
                ..config.clone()
            })?;
            let outcomes = methods
                .iter()
                .map(|&m| match estimate(&panel, m, options) {
                    Ok(report) => MethodOutcome::Report(Box::new(report)),
                    Err(e) => MethodOutcome::Failed {
                        kind: e.kind().into(),
                        message: e.to_string(),
                    },
                })
                .collect();
            Ok(Replication {
                index: r,
                seed,
                outcomes,
                naive_kappa: naive_slope(&panel).ok(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMoments {
    pub count: usize,
    pub mean: Option<f64>,
    /// Monte Carlo standard error of the mean, `sd / sqrt(count)`.
    pub mc_se: Option<f64>,
    pub bias: Option<f64>,
    pub rmse: Option<f64>,
}

impl SampleMoments {
    fn new(values: &[f64], truth: f64) -> Self {
        let count = values.len();
        if count == 0 {
            return Self {
                count,
                mean: None,
                mc_se: None,
                bias: None,
                rmse: None,
            };
        }
        let v = DVector::from_column_slice(values);
        let mean = v.mean();
        let mc_se = (count > 1)
            .then(|| (v.variance() * count as f64 / (count - 1) as f64 / count as f64).sqrt());
        let rmse = (values.iter().map(|x| (x - truth).powi(2)).sum::<f64>() / count as f64).sqrt();
        Self {
            count,
            mean: Some(mean),
            mc_se,
            bias: Some(mean - truth),
            rmse: Some(rmse),
        }
    }

    /// `|mean - target| <= k * mc_se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        matches!((self.mean, self.mc_se), (Some(m), Some(se)) if (m - target).abs() <= k * se)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub sigma: SampleMoments,
    /// Share of replications whose 95% interval covers the true sigma.
    pub coverage: Option<f64>,
    pub failures: usize,
    pub failure_rate: f64,
    pub failure_kinds: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub config: DgpConfig,
    pub reps: usize,
    pub sigma_true: f64,
    pub kappa_true: f64,
    pub methods: Vec<MethodSummary>,
    /// Naive slope against the implied kappa.
    pub naive_kappa: SampleMoments,
    pub seeds: Vec<u64>,
}

pub fn summarize(
    config: &DgpConfig,
    methods: &[Method],
    reps: &[Replication],
) -> Result<MonteCarloSummary> {
    let (kappa, _) = reduced_form_oracle(config)?;
    let sigma = config.sigma;
    let summaries = methods
        .iter()
        .enumerate()
        .map(|(j, &method)| {
            let mut estimates = Vec::new();
            let mut covered = Vec::new();
            let mut failure_kinds = BTreeMap::new();
            for rep in reps {
                match &rep.outcomes[j] {
                    MethodOutcome::Report(r) => {
                        estimates.push(r.sigma);
                        if let Some(se) = r.sigma_se.filter(|s| s.is_finite()) {
                            covered.push((r.sigma - sigma).abs() <= 1.959964 * se);
                        }
                    }
                    MethodOutcome::Failed { kind, .. } => {
                        *failure_kinds.entry(kind.clone()).or_insert(0) += 1
                    }
                }
            }
            let failures = reps.len() - estimates.len();
            MethodSummary {
                method,
                sigma: SampleMoments::new(&estimates, sigma),
                coverage: (!covered.is_empty())
                    .then(|| covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64),
                failures,
                failure_rate: failures as f64 / reps.len().max(1) as f64,
                failure_kinds,
            }
        })
        .collect();
    let naive: Vec<f64> = reps.iter().filter_map(|r| r.naive_kappa).collect();
    Ok(MonteCarloSummary {
        config: config.clone(),
        reps: reps.len(),
        sigma_true: sigma,
        kappa_true: kappa,
        methods: summaries,
        naive_kappa: SampleMoments::new(&naive, kappa),
        seeds: reps.iter().map(|r| r.seed).collect(),
    })
}

pub fn run_monte_carlo(
    config: &DgpConfig,
    methods: &[Method],
    reps: usize,
    options: &EstimateOptions,
) -> Result<MonteCarloSummary> {
    summarize(
        config,
        methods,
        &run_replications(config, methods, reps, options)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::double_demean;

    fn quiet() -> DgpConfig {
        DgpConfig {
            sd_epsilon: 0.0,
            sd_delta: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn oracle_examples() {
        let (k, p) = reduced_form_oracle(&DgpConfig {
            sigma: 3.0,
            omega: 0.5,
            ..Default::default()
        })
        .unwrap();
        assert!((k + 1.0).abs() < 1e-15 && (p - 0.5).abs() < 1e-15);
        let (k, p) = reduced_form_oracle(&DgpConfig {
            sigma: 1.0,
            ..Default::default()
        })
        .unwrap();
        assert_eq!((k, p), (0.0, 1.0));
    }

    #[test]
    fn singular_configuration_is_rejected() {
        // gamma = -2, omega = -0.5: 1 - gamma omega = 0.
        let err = generate_panel(&DgpConfig {
            omega: -0.5,
            ..Default::default()
        })
        .unwrap_err();
        assert!(matches!(&err, Error::SingularTransform(m) if m.contains("1 - gamma*omega")));
    }

    #[test]
    fn noiseless_reduced_form_is_exact() {
        let (panel, truth) = generate_panel(&quiet()).unwrap();
        let s = double_demean(&panel.log_shares().unwrap()).unwrap();
        let z = double_demean(&panel.log_fx()).unwrap();
        let resid = s.zip_with(&z, |a, b| a - truth.kappa * b).unwrap();
        assert!(resid.max_abs() < 1e-12, "{}", resid.max_abs());
    }

    #[test]
    fn symmetric_noiseless_equilibrium() {
        let cfg = DgpConfig {
            lambda: Some(vec![0.25; 4]),
            n: 4,
            t: 6,
            q_amplitude: 0.0,
            q_drift: 0.0,
            z_scale: 0.0,
            ..quiet()
        };
        let (panel, _) = generate_panel(&cfg).unwrap();
        for o in panel.observations() {
            assert!((o.value - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn shares_close_and_prices_are_consistent() {
        let (panel, truth) = generate_panel(&DgpConfig {
            missing_prob: 0.2,
            ..Default::default()
        })
        .unwrap();
        let shares = panel.log_shares().unwrap();
        for t in 0..panel.n_periods() {
            let total: f64 = (0..panel.n_countries())
                .filter_map(|i| shares.get(i, t))
                .map(f64::exp)
                .sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        let ln_p = panel.log_prices().unwrap();
        for (i, t) in ln_p.present_cells() {
            let expect = truth.ln_z[i][t] + truth.ln_pi[i][t];
            assert!(
                (ln_p.get(i, t).unwrap() - expect).abs() < 1e-12,
                "{i} {t} {} {expect}",
                ln_p.get(i, t).unwrap()
            );
        }
        // Import prices are normalized to one at theta.
        for i in 0..panel.n_countries() {
            assert!(ln_p.get(i, truth.theta_index).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = DgpConfig {
            stri: Some(StriProcess::default()),
            ..Default::default()
        };
        assert_eq!(generate_panel(&cfg).unwrap(), generate_panel(&cfg).unwrap());
        let other = generate_panel(&DgpConfig {
            seed: 8,
            ..cfg.clone()
        })
        .unwrap();
        assert_ne!(other.0, generate_panel(&cfg).unwrap().0);
    }

    #[test]
    fn replication_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> =
            (0..1000).map(|r| replication_seed(7, r)).collect();
        assert_eq!(seeds.len(), 1000);
    }

    #[test]
    fn heavy_tails_are_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<f64> = (0..200_000)
            .map(|_| draw_shock(&mut rng, ShockDistribution::StudentT { df: 5.0 }))
            .collect();
        let var = draws.iter().map(|x| x * x).sum::<f64>() / draws.len() as f64;
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }
}
