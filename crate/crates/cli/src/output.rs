//! JSON Lines and TSV renderers. TSV cells follow the `est (se)` layout.

use armington_core::diagnostics::{TestResult, Verdict};
use armington_core::pipelines::{Method, MethodReport};
use armington_core::simulator::{MonteCarloSummary, SampleMoments};
use armington_core::Error;
use serde::Serialize;

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
    exit_code: i32,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<Method>,
    error: ErrorBody<'a>,
}

pub fn error_json(method: Option<Method>, kind: &str, message: String, exit_code: i32) -> String {
    let line = ErrorLine {
        method,
        error: ErrorBody {
            kind,
            message,
            exit_code,
        },
    };
    serde_json::to_string(&line).expect("error line serializes")
}

pub fn core_error_json(method: Option<Method>, e: &Error) -> String {
    error_json(method, e.kind(), e.to_string(), e.exit_code())
}

pub fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("report serializes")
}

fn num(v: f64) -> String {
    format!("{v:.3}")
}

fn est(v: Option<f64>, se: Option<f64>) -> String {
    match (v, se) {
        (Some(v), Some(se)) => format!("{} ({})", num(v), num(se)),
        (Some(v), None) => num(v),
        _ => String::new(),
    }
}

fn stat(d: Option<&TestResult>) -> (String, String) {
    match d {
        Some(t) if t.verdict != Verdict::NotApplicable => (
            t.statistic.map(num).unwrap_or_default(),
            t.p_value.map(num).unwrap_or_default(),
        ),
        _ => (String::new(), String::new()),
    }
}

pub const ESTIMATE_HEADER: &str =
    "method\tsigma\tgamma\tkappa\tomega\ttau\trho\tmu\teta\tphi\ttheta\tn_obs\t\
                                   cragg_donald_f\tsargan_p\tdm_p\tinstruments\tsigma_corrected";

pub fn estimate_row(r: &MethodReport) -> String {
    let (i, se) = (&r.intermediates, &r.intermediate_se);
    let find = |name: &str| r.diagnostics.iter().find(|d| d.name == name);
    let cd = stat(find(armington_core::diagnostics::CRAGG_DONALD)).0;
    let sargan = stat(find(armington_core::diagnostics::SARGAN)).1;
    let dm = stat(find(armington_core::diagnostics::DAVIDSON_MACKINNON)).1;
    [
        r.method.tag().to_string(),
        est(Some(r.sigma), r.sigma_se),
        num(r.gamma),
        est(i.kappa, se.kappa),
        est(i.omega, se.omega),
        est(i.tau, se.tau),
        est(i.rho, se.rho),
        est(i.mu, se.mu),
        est(i.eta, se.eta),
        est(i.phi, se.phi),
        r.theta.clone().unwrap_or_default(),
        r.n_obs.to_string(),
        cd,
        sargan,
        dm,
        r.instruments.join(","),
        r.corrected
            .map(|c| est(Some(c.sigma), Some(c.se)))
            .unwrap_or_default(),
    ]
    .join("\t")
}

pub const DIAGNOSE_HEADER: &str = "test\tstat\tp\tdf\tverdict";

pub fn verdict_text(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "fail",
        Verdict::Reject => "reject",
        Verdict::FailToReject => "fail to reject",
        Verdict::NotApplicable => "",
    }
}

/// One row per test; tests that do not apply print blank cells.
pub fn diagnose_row(t: &TestResult) -> String {
    let (s, p) = stat(Some(t));
    let df = if t.verdict == Verdict::NotApplicable {
        String::new()
    } else {
        t.df.iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    [
        t.name.clone(),
        s,
        p,
        df,
        verdict_text(t.verdict).to_string(),
    ]
    .join("\t")
}

pub const SUMMARY_HEADER: &str = "quantity\ttruth\tmean\tmc_se\tbias\trmse\tcoverage\tfailures";

fn moments_row(
    label: &str,
    truth: f64,
    m: &SampleMoments,
    coverage: Option<f64>,
    failures: usize,
) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    [
        label.to_string(),
        format!("{truth:.4}"),
        opt(m.mean),
        opt(m.mc_se),
        opt(m.bias),
        opt(m.rmse),
        opt(coverage),
        failures.to_string(),
    ]
    .join("\t")
}

pub fn summary_rows(s: &MonteCarloSummary) -> Vec<String> {
    let mut rows: Vec<String> = s
        .methods
        .iter()
        .map(|m| {
            moments_row(
                &format!("sigma_{}", m.method.tag()),
                s.sigma_true,
                &m.sigma,
                m.coverage,
                m.failures,
            )
        })
        .collect();
    rows.push(moments_row(
        "kappa_naive",
        s.kappa_true,
        &s.naive_kappa,
        None,
        s.reps - s.naive_kappa.count,
    ));
    rows
}
