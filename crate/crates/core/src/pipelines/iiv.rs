use nalgebra::DMatrix;

use super::fm::{fm_panel_fit, FmOptions};
use super::{columns, gather, DemeanedCore, InstrumentPolicy, Method, MethodReport};
use crate::diagnostics::{cragg_donald_f, davidson_mackinnon_test, sargan_test, Verdict};
use crate::error::{Error, Result};
use crate::estimators::{tsls, LinearSystem, RegressionResult};
use crate::panel::{MaskedMatrix, Panel};

/// The implicit instrument `nu = [ln Z] - rho [ln S]` and its period-axis
/// derivatives. Derivatives are absent wherever the neighbouring period is
/// missing or not adjacent; they are never zero-filled.
#[derive(Debug, Clone, PartialEq)]
pub struct IivInstruments {
    pub nu: MaskedMatrix,
    /// `nu` one period earlier.
    pub lag: MaskedMatrix,
    /// `nu` one period later.
    pub lead: MaskedMatrix,
    /// `nu_t - nu_{t-1}`.
    pub diff: MaskedMatrix,
}

pub fn iiv_from_series(
    s: &MaskedMatrix,
    z: &MaskedMatrix,
    periods: &[i64],
    rho: f64,
) -> Result<IivInstruments> {
    if !rho.is_finite() {
        return Err(Error::DegenerateFit(format!("rho = {rho} is not finite")));
    }
    if periods.len() != s.cols() {
        return Err(Error::Dimension(
            "one period ordinal per column is required".into(),
        ));
    }
    let nu = s.zip_with(z, |sv, zv| zv - rho * sv)?;
    let adjacent = |t: usize| periods[t + 1] - periods[t] == 1;
    let (n, t_len) = (nu.rows(), nu.cols());
    let prev = |i: usize, t: usize| -> Option<(f64, f64)> {
        let here = nu.get(i, t)?;
        (t > 0 && adjacent(t - 1)).then_some(())?;
        Some((here, nu.get(i, t - 1)?))
    };
    let lag = MaskedMatrix::from_fn(n, t_len, |i, t| prev(i, t).map(|(_, p)| p));
    let diff = MaskedMatrix::from_fn(n, t_len, |i, t| prev(i, t).map(|(h, p)| h - p));
    let lead = MaskedMatrix::from_fn(n, t_len, |i, t| {
        nu.get(i, t)?;
        (t + 1 < t_len && adjacent(t)).then_some(())?;
        nu.get(i, t + 1)
    });
    Ok(IivInstruments {
        nu,
        lag,
        lead,
        diff,
    })
}

/// Build the implicit instruments on a panel's demeaned series.
pub fn construct_iiv(panel: &Panel, rho: f64) -> Result<IivInstruments> {
    let core = DemeanedCore::new(panel)?;
    iiv_from_series(&core.s, &core.z, panel.periods(), rho)
}

struct IivRun {
    fit: RegressionResult,
    w: DMatrix<f64>,
    y: nalgebra::DVector<f64>,
    x: DMatrix<f64>,
}

/// 2SLS of `[ln S]` on `[ln Z]` instrumented by the implicit instrument from
/// Feenstra's method, optionally with its lags, leads and differences.
pub fn estimate_iiv(
    panel: &Panel,
    fm: &FmOptions,
    policy: InstrumentPolicy,
) -> Result<MethodReport> {
    let core = DemeanedCore::new(panel)?;
    let fit = fm_panel_fit(panel, fm)?;
    let pair = *fit.roots.selected();
    let inst = iiv_from_series(&core.s, &core.z, panel.periods(), pair.rho)?;

    let run = |set: &[(&str, &MaskedMatrix)]| -> Result<IivRun> {
        let cells: Vec<(usize, usize)> = core
            .cells
            .iter()
            .copied()
            .filter(|&(i, t)| set.iter().all(|(_, m)| m.is_present(i, t)))
            .collect();
        let y = gather(&core.s, &cells);
        let x = columns(&[&gather(&core.z, &cells)]);
        let cols: Vec<_> = set.iter().map(|(_, m)| gather(m, &cells)).collect();
        let w = columns(&cols.iter().collect::<Vec<_>>());
        let sys = LinearSystem::new(y.clone(), x.clone())
            .with_names(["ln_z"])
            .with_instruments(w.clone(), set.iter().map(|(name, _)| *name))
            .with_absorbed_dof(core.absorbed);
        Ok(IivRun {
            fit: tsls(&sys)?,
            w,
            y,
            x,
        })
    };

    let mut chosen: Vec<(&str, &MaskedMatrix)> = vec![("nu", &inst.nu)];
    let mut current = run(&chosen)?;
    let mut warnings = fit.warnings.clone();
    if policy != InstrumentPolicy::Primary {
        for candidate in [
            ("nu_lag", &inst.lag),
            ("nu_lead", &inst.lead),
            ("nu_diff", &inst.diff),
        ] {
            let mut trial = chosen.clone();
            trial.push(candidate);
            match run(&trial) {
                Ok(r) => {
                    let keep = policy == InstrumentPolicy::All
                        || sargan_test(&r.fit.residuals, &r.w, 1)
                            .is_ok_and(|t| t.verdict == Verdict::FailToReject);
                    if keep {
                        chosen = trial;
                        current = r;
                    }
                }
                Err(e) if policy == InstrumentPolicy::All => {
                    warnings.push(format!("instrument `{}` skipped: {e}", candidate.0));
                }
                Err(_) => {}
            }
        }
    }

    let IivRun { fit: iv, w, y, x } = current;
    let cd = cragg_donald_f(&x.column(0).into_owned(), None, &w, core.absorbed)?;
    if cd.verdict == Verdict::Fail {
        warnings.push(format!(
            "weak first stage: F = {:.3} does not exceed 10",
            cd.statistic.unwrap_or(0.0)
        ));
    }
    let sargan = sargan_test(&iv.residuals, &w, 1)?;
    let dm = davidson_mackinnon_test(&y, &x, &[0], &w, core.absorbed)?;

    let gamma = iv.coefficients[0];
    let mut report = MethodReport::new(Method::Iiv, 1.0 - gamma, Some(iv.se(0)), iv.n);
    report.intermediates.rho = Some(pair.rho);
    report.intermediates.alpha1 = Some(fit.alpha1);
    report.intermediates.alpha2 = Some(fit.alpha2);
    report.intermediate_se.alpha1 = Some(fit.covariance[(0, 0)].max(0.0).sqrt());
    report.intermediate_se.alpha2 = Some(fit.covariance[(1, 1)].max(0.0).sqrt());
    report.fm_roots = Some(fit.roots.ordered());
    report.diagnostics = vec![cd, sargan, dm];
    report.instruments = chosen.iter().map(|(name, _)| name.to_string()).collect();
    report.warnings = warnings;
    Ok(report)
}
