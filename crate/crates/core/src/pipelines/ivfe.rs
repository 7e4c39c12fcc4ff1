use nalgebra::DMatrix;

use super::{absorbed_effects, columns, gather, InstrumentPolicy, Method, MethodReport};
use crate::diagnostics::{cragg_donald_f, davidson_mackinnon_test, sargan_test, Verdict};
use crate::error::Result;
use crate::estimators::{ols, tsls, LinearSystem, RegressionResult};
use crate::panel::{double_demean, Panel};

/// Two-way fixed-effects demand regression `[ln S] = gamma [ln P]` with the
/// log exchange rate instrumenting the observed import price; the demeaned
/// exchange-rate level joins as a second instrument when allowed.
pub fn estimate_ivfe(panel: &Panel, policy: InstrumentPolicy) -> Result<MethodReport> {
    let ln_p = panel.log_prices()?;
    let s = double_demean(&panel.log_shares()?)?;
    let p = double_demean(&ln_p)?;
    let ln_z = double_demean(&panel.log_fx())?;
    let z_level = double_demean(&panel.fx_levels())?;
    let cells = s.present_cells();
    let absorbed = absorbed_effects(&s);

    let y = gather(&s, &cells);
    let x = columns(&[&gather(&p, &cells)]);
    let w_log = gather(&ln_z, &cells);
    let w_level = gather(&z_level, &cells);
    let mut warnings = Vec::new();

    let fit_with = |w: DMatrix<f64>, names: &[&str]| -> Result<(RegressionResult, DMatrix<f64>)> {
        let sys = LinearSystem::new(y.clone(), x.clone())
            .with_names(["ln_p"])
            .with_instruments(w.clone(), names.iter().copied())
            .with_absorbed_dof(absorbed);
        Ok((tsls(&sys)?, w))
    };
    let primary = || fit_with(columns(&[&w_log]), &["ln_z"]);
    let over = || fit_with(columns(&[&w_log, &w_level]), &["ln_z", "z_level"]);

    let ((fit, w), names) = match policy {
        InstrumentPolicy::Primary => (primary()?, vec!["ln_z"]),
        InstrumentPolicy::All => match over() {
            Ok(f) => (f, vec!["ln_z", "z_level"]),
            Err(e) => {
                warnings.push(format!("exchange-rate level dropped as an instrument: {e}"));
                (primary()?, vec!["ln_z"])
            }
        },
        InstrumentPolicy::Gated => {
            let gated = over().ok().filter(|(f, w)| {
                sargan_test(&f.residuals, w, 1).is_ok_and(|t| t.verdict == Verdict::FailToReject)
            });
            match gated {
                Some(f) => (f, vec!["ln_z", "z_level"]),
                None => (primary()?, vec!["ln_z"]),
            }
        }
    };

    let endog = x.column(0).into_owned();
    let cd = cragg_donald_f(&endog, None, &w, absorbed)?;
    if cd.verdict == Verdict::Fail {
        warnings.push(format!(
            "weak first stage: F = {:.3} does not exceed 10",
            cd.statistic.unwrap_or(0.0)
        ));
    }
    let sargan = sargan_test(&fit.residuals, &w, 1)?;
    let dm = davidson_mackinnon_test(&y, &x, &[0], &w, absorbed)?;
    let naive = ols(&LinearSystem::new(y.clone(), x.clone())
        .with_names(["ln_p"])
        .with_absorbed_dof(absorbed))?;
    let fe_preferred = !dm.rejects();
    if fe_preferred {
        warnings.push("endogeneity test does not reject: plain fixed effects is preferred".into());
    }

    let gamma = fit.coefficients[0];
    let mut report = MethodReport::new(Method::Ivfe, 1.0 - gamma, Some(fit.se(0)), fit.n);
    report.diagnostics = vec![cd, sargan, dm];
    report.instruments = names.into_iter().map(String::from).collect();
    report.naive_sigma = Some(1.0 - naive.coefficients[0]);
    report.naive_sigma_se = Some(naive.se(0));
    report.fe_preferred = Some(fe_preferred);
    report.warnings = warnings;
    Ok(report)
}
