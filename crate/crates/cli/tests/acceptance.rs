//! Acceptance runner: one PASS/FAIL line per criterion. Failures are
//! reported, not hidden; the process still exits 0 so that the rest of the
//! workspace test run is shown.

use std::process::Command;
use std::time::Instant;

use armington_core::diagnostics::{cragg_donald_f, sargan_test, Verdict};
use armington_core::estimators::{
    central_gradient, ols, tsls, LinearSystem, ParamMap, RecoveryMap, StriElasticityMap,
};
use armington_core::panel::{closed_form_demean, double_demean, iterative_demean, MaskedMatrix};
use armington_core::pipelines::{
    apply_benchmark_correction, estimate_ivfe, fm_roots, forward_alphas, CorrectionLine,
    EstimateOptions, InstrumentPolicy, Method, MethodReport, ThetaPolicy,
};
use armington_core::simulator::{
    generate_panel, replication_seed, run_replications, summarize, DgpConfig, MethodOutcome,
    StriProcess,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SEED: u64 = 20_260_101;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn recovery_fidelity() -> Outcome {
    let rows = [
        ("coffee", -0.672, 0.554, 2.070),
        ("beef", -0.729, -0.654, 1.494),
        ("rocks", 0.033, -1.756, 0.965),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, k, w, published) in rows {
        let sigma = RecoveryMap.value(&[k, w]);
        let err = (sigma - published).abs();
        pass &= err <= 5e-4;
        parts.push(format!(
            "{name} {sigma:.6} vs {published} (|err| {err:.1e})"
        ));
    }
    outcome(pass, format!("{}; tolerance 5e-4", parts.join(", ")))
}

fn stri_fidelity() -> Outcome {
    let (mu, k, w) = (-0.714, -0.139, 0.436);
    let sigma = RecoveryMap.value(&[k, w]);
    let eta = StriElasticityMap.value(&[mu, k, w]);
    let (es, ee) = ((sigma - 1.148).abs(), (eta + 0.760).abs());
    outcome(
        es <= 5e-4 && ee <= 5e-4,
        format!("sigma {sigma:.6} (|err| {es:.1e}), eta {eta:.6} (|err| {ee:.1e}); tolerance 5e-4"),
    )
}

fn reports(outcomes: &[MethodOutcome]) -> impl Iterator<Item = &MethodReport> {
    outcomes.iter().filter_map(|o| match o {
        MethodOutcome::Report(r) => Some(r.as_ref()),
        MethodOutcome::Failed { .. } => None,
    })
}

fn monte_carlo(erpt_reports: &mut Vec<MethodReport>) -> Outcome {
    let cfg = DgpConfig::default();
    let options = EstimateOptions {
        theta: ThetaPolicy::Explicit(cfg.t.to_string()),
        ..EstimateOptions::new()
    };
    let start = Instant::now();
    let methods = [Method::Sur, Method::Ivfe];
    let reps = match run_replications(&cfg, &methods, 200, &options) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("replications failed: {e}")),
    };
    let summary = match summarize(&cfg, &methods, &reps) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("summary failed: {e}")),
    };
    let elapsed = start.elapsed().as_secs_f64();
    erpt_reports.extend(
        reps.iter()
            .flat_map(|r| reports(&r.outcomes))
            .filter(|r| r.method == Method::Sur)
            .cloned(),
    );

    let describe = |label: &str, m: &armington_core::simulator::SampleMoments, target: f64| {
        let (mean, se) = (m.mean.unwrap_or(f64::NAN), m.mc_se.unwrap_or(f64::NAN));
        format!(
            "{label} {mean:.4} +- {se:.4} ({:.2} MC SE from {target})",
            (mean - target).abs() / se
        )
    };
    let sur = &summary.methods[0].sigma;
    let ivfe = &summary.methods[1].sigma;
    let pass = sur.within(3.0, 3.0)
        && summary.naive_kappa.within(-1.0, 3.0)
        && ivfe.within(3.0, 3.0)
        && summary.methods.iter().all(|m| m.failures == 0)
        && elapsed < 120.0;
    outcome(
        pass,
        format!(
            "{}; {}; {}; 200 reps in {elapsed:.1}s",
            describe("SUR", sur, 3.0),
            describe("naive kappa", &summary.naive_kappa, -1.0),
            describe("IVFE", ivfe, 3.0)
        ),
    )
}

fn fm_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut exact, mut among_roots, mut cases) = (0, 0, 0);
    let mut worst = 0.0f64;
    while cases < 100 {
        let gamma = rng.random_range(-5.0..-0.1);
        let rho = rng.random_range(-0.9..0.9);
        let (a1, a2) = forward_alphas(gamma, rho);
        if a2 * a2 + 4.0 * a1 < 0.0 {
            continue;
        }
        cases += 1;
        let Ok(roots) = fm_roots(a1, a2) else {
            continue;
        };
        let close = |g: f64, r: f64| {
            (g - gamma).abs() <= 1e-10 * gamma.abs().max(1.0) && (r - rho).abs() <= 1e-10
        };
        let chosen = roots.selected();
        if close(chosen.gamma, chosen.rho) {
            exact += 1;
            worst = worst
                .max((chosen.gamma - gamma).abs())
                .max((chosen.rho - rho).abs());
        }
        if roots.pairs.iter().any(|p| close(p.gamma, p.rho)) {
            among_roots += 1;
        }
    }
    outcome(
        exact == 100,
        format!(
            "selected root recovers (gamma, rho) in {exact}/100 (max error {worst:.1e}); the input pair is one of the two \
             roots in {among_roots}/100; misses return the observationally equivalent pair (1/rho, 1/gamma)"
        ),
    )
}

fn delta_gradients() -> Outcome {
    let (mut points, mut worst) = (0, 0.0f64);
    for i in 0..10 {
        for j in 0..10 {
            let k = -3.0 + 6.0 * i as f64 / 9.0;
            let w = -2.0 + 4.0 * j as f64 / 9.0;
            if (1.0 + k * w).abs() < 0.05 {
                continue;
            }
            points += 1;
            let analytic = RecoveryMap.gradient(&[k, w]).expect("analytic gradient");
            let numeric = central_gradient(&RecoveryMap, &[k, w]);
            for (a, f) in analytic.iter().zip(&numeric) {
                worst = worst.max((a - f).abs() / a.abs().max(f.abs()).max(f64::MIN_POSITIVE));
            }
        }
    }
    outcome(
        worst <= 1e-6,
        format!("{points} grid points, max relative error {worst:.2e}; tolerance 1e-6"),
    )
}

fn random_panel(rng: &mut ChaCha8Rng, n: usize, t: usize, balanced: bool) -> MaskedMatrix {
    let mask: Vec<bool> = (0..n * t)
        .map(|c| balanced || c / t == 0 || c % t == 0 || rng.random::<f64>() > 0.25)
        .collect();
    let values: Vec<f64> = (0..n * t).map(|_| normal(rng)).collect();
    MaskedMatrix::new(n, t, values, mask).expect("valid panel")
}

fn max_diff(a: &MaskedMatrix, b: &MaskedMatrix) -> f64 {
    a.present_values()
        .iter()
        .zip(b.present_values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn demeaning_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 6);
    let (mut idem, mut lin, mut annih, mut closed) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut balanced_cases, mut errors) = (0, Vec::new());
    for case in 0..100 {
        let (n, t) = (rng.random_range(2..=50), rng.random_range(2..=50));
        let balanced = case % 2 == 0;
        let x = random_panel(&mut rng, n, t, balanced);
        let y = MaskedMatrix::new(
            n,
            t,
            (0..n * t).map(|_| normal(&mut rng)).collect(),
            x.mask().to_vec(),
        )
        .unwrap();
        let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let row: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let col: Vec<f64> = (0..t).map(|_| normal(&mut rng)).collect();
        let effects = MaskedMatrix::new(
            n,
            t,
            (0..n * t).map(|c| row[c / t] + col[c % t]).collect(),
            x.mask().to_vec(),
        )
        .unwrap();
        let run = || -> armington_core::Result<(f64, f64, f64, Option<f64>)> {
            let dx = double_demean(&x)?;
            let i = max_diff(&double_demean(&dx)?, &dx);
            let combo = x.zip_with(&y, |p, q| a * p + b * q)?;
            let lhs = double_demean(&combo)?;
            let rhs = dx.zip_with(&double_demean(&y)?, |p, q| a * p + b * q)?;
            let l = max_diff(&lhs, &rhs);
            let e = double_demean(&effects)?.max_abs();
            let c = if balanced {
                Some(max_diff(&closed_form_demean(&x)?, &iterative_demean(&x)?))
            } else {
                None
            };
            Ok((i, l, e, c))
        };
        match run() {
            Ok((i, l, e, c)) => {
                idem = idem.max(i);
                lin = lin.max(l);
                annih = annih.max(e);
                if let Some(c) = c {
                    closed = closed.max(c);
                    balanced_cases += 1;
                }
            }
            Err(e) => errors.push(format!("case {case} ({n}x{t}): {e}")),
        }
    }
    let pass =
        errors.is_empty() && idem <= 1e-10 && lin <= 1e-10 && annih <= 1e-10 && closed <= 1e-10;
    let mut detail = format!(
        "100 panels ({balanced_cases} balanced); max |error|: idempotence {idem:.1e}, linearity {lin:.1e}, \
         annihilation {annih:.1e}, closed-form vs iterative {closed:.1e}; tolerance 1e-10"
    );
    if !errors.is_empty() {
        detail.push_str(&format!("; errors: {}", errors.join("; ")));
    }
    outcome(pass, detail)
}

fn dm_rejection_rate(omega: f64) -> (usize, usize) {
    let (mut rejections, mut runs) = (0, 0);
    for r in 0..400 {
        let cfg = DgpConfig {
            omega,
            seed: replication_seed(SEED + 7, r),
            ..Default::default()
        };
        let Ok((panel, _)) = generate_panel(&cfg) else {
            continue;
        };
        let Ok(report) = estimate_ivfe(&panel, InstrumentPolicy::Gated) else {
            continue;
        };
        runs += 1;
        if report
            .diagnostics
            .iter()
            .any(|d| d.name == "davidson_mackinnon" && d.verdict == Verdict::Reject)
        {
            rejections += 1;
        }
    }
    (rejections, runs)
}

/// Linear IV with two instruments for one regressor; `violation` lets the
/// second instrument enter the outcome directly.
fn sargan_rejection_rate(violation: f64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 8 + (violation * 1000.0) as u64);
    let (mut rejections, mut runs) = (0, 0);
    let n = 500;
    for _ in 0..400 {
        let mut w = DMatrix::zeros(n, 2);
        let (mut x, mut y) = (DVector::zeros(n), DVector::zeros(n));
        for i in 0..n {
            let (z1, z2, u, v) = (
                normal(&mut rng),
                normal(&mut rng),
                normal(&mut rng),
                normal(&mut rng),
            );
            w[(i, 0)] = z1;
            w[(i, 1)] = z2;
            x[i] = 0.6 * z1 + 0.6 * z2 + v + 0.5 * u;
            y[i] = 1.5 * x[i] + violation * z2 + u;
        }
        let sys = LinearSystem::new(y, DMatrix::from_column_slice(n, 1, x.as_slice()))
            .with_names(["x"])
            .with_instruments(w.clone(), ["z1", "z2"]);
        let Ok(fit) = tsls(&sys) else { continue };
        let Ok(test) = sargan_test(&fit.residuals, &w, 1) else {
            continue;
        };
        runs += 1;
        if test.verdict == Verdict::Reject {
            rejections += 1;
        }
    }
    (rejections, runs)
}

fn cd_matches_t_squared() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 9);
    let n = 300;
    let z = DVector::from_fn(n, |_, _| normal(&mut rng));
    let x = DVector::from_fn(n, |i, _| 0.3 * z[i] + normal(&mut rng));
    let zm = DMatrix::from_column_slice(n, 1, z.as_slice());
    let f = cragg_donald_f(&x, None, &zm, 0)
        .ok()
        .and_then(|t| t.statistic)
        .unwrap_or(f64::NAN);
    let t = ols(&LinearSystem::new(x, zm).with_names(["z"]))
        .map(|r| r.t_stat(0))
        .unwrap_or(f64::NAN);
    (f - t * t).abs() / f.abs().max(1.0)
}

fn diagnostics_size_power() -> Outcome {
    let rate = |(r, n): (usize, usize)| r as f64 / n.max(1) as f64;
    let dm_size = dm_rejection_rate(0.0);
    let dm_power = dm_rejection_rate(0.5);
    let s_size = sargan_rejection_rate(0.0);
    let s_power = sargan_rejection_rate(0.3);
    let cd = cd_matches_t_squared();
    let in_band = |p: f64| (0.03..=0.07).contains(&p);
    let pass = in_band(rate(dm_size))
        && rate(dm_power) > 0.90
        && in_band(rate(s_size))
        && rate(s_power) > 0.90
        && cd <= 1e-8
        && [dm_size, dm_power, s_size, s_power]
            .iter()
            .all(|&(_, n)| n == 400);
    let show = |label: &str, c: (usize, usize)| format!("{label} {}/{} = {:.3}", c.0, c.1, rate(c));
    outcome(
        pass,
        format!(
            "{}, {}, {}, {}; |CD F - t^2| relative {cd:.1e}",
            show("DM size", dm_size),
            show("DM power", dm_power),
            show("Sargan size", s_size),
            show("Sargan power", s_power)
        ),
    )
}

fn erpt_identity(mut reports: Vec<MethodReport>) -> Outcome {
    let cfg = DgpConfig {
        stri: Some(StriProcess::default()),
        ..Default::default()
    };
    let options = EstimateOptions {
        theta: ThetaPolicy::Explicit(cfg.t.to_string()),
        ..EstimateOptions::new()
    };
    if let Ok(reps) = run_replications(&cfg, &[Method::SurStri], 50, &options) {
        reports.extend(reps.iter().flat_map(|r| reports_of(&r.outcomes)));
    }
    let mut worst = 0.0f64;
    let mut checked = 0;
    for r in &reports {
        let i = &r.intermediates;
        let (Some(k), Some(w), Some(phi)) = (i.kappa, i.omega, i.phi) else {
            continue;
        };
        checked += 1;
        worst = worst
            .max((phi - (1.0 + k * w)).abs())
            .max((phi - 1.0 / (1.0 - r.gamma * w)).abs());
    }
    outcome(
        checked >= 200 && worst <= 1e-10,
        format!("{checked} SUR reports, max |phi - (1 + kappa omega)|, |phi - 1/(1 - gamma omega)| = {worst:.1e}; tolerance 1e-10"),
    )
}

fn reports_of(outcomes: &[MethodOutcome]) -> Vec<MethodReport> {
    reports(outcomes).cloned().collect()
}

fn determinism_round_trip() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_armington");
    let Ok(dir) = tempfile::tempdir() else {
        return outcome(false, "no temporary directory".into());
    };
    let args = [
        "simulate", "--sigma", "3", "--omega", "0.5", "--n", "20", "--t", "60", "--seed", "7",
    ];
    let simulate = |name: &str| -> Option<(Vec<u8>, Vec<u8>)> {
        let csv = dir.path().join(format!("{name}.csv"));
        let status = Command::new(bin)
            .args(args)
            .arg("--out")
            .arg(&csv)
            .status()
            .ok()?;
        status.success().then_some(())?;
        Some((
            std::fs::read(&csv).ok()?,
            std::fs::read(dir.path().join(format!("{name}.truth.json"))).ok()?,
        ))
    };
    let (Some(a), Some(b)) = (simulate("a"), simulate("b")) else {
        return outcome(false, "simulate failed".into());
    };
    let identical = a == b;
    let est = Command::new(bin)
        .args(["estimate", "--method", "sur"])
        .arg(dir.path().join("a.csv"))
        .output();
    let (ok, sigma) = match est {
        Ok(o) if o.status.success() => {
            let line = String::from_utf8_lossy(&o.stdout)
                .lines()
                .next()
                .unwrap_or_default()
                .to_string();
            let v: serde_json::Value = serde_json::from_str(&line).unwrap_or_default();
            (v["method"] == "sur", v["sigma"].as_f64())
        }
        _ => (false, None),
    };
    outcome(
        identical && ok,
        format!(
            "two seeded runs byte-identical: {identical} ({} CSV bytes, {} truth bytes); estimate on the unmodified CSV: \
             {}",
            a.0.len(),
            a.1.len(),
            sigma.map_or("failed".to_string(), |s| format!("sigma {s:.4}"))
        ),
    )
}

fn correction_map() -> Outcome {
    let line = CorrectionLine::BENCHMARK;
    let low = apply_benchmark_correction(0.690, None, &line);
    let coffee = apply_benchmark_correction(2.070, None, &line);
    let (e1, e2) = ((low.sigma - 0.501).abs(), (coffee.sigma - 3.261).abs());
    let gap = (3.446 - coffee.sigma).abs();
    let pass = e1 <= 1e-3 && e2 <= 1e-3 && gap <= 2.0 * coffee.line_se;
    outcome(
        pass,
        format!(
            "0.690 -> {:.4}, 2.070 -> {:.4} (tolerance 1e-3); IVFE coffee 3.446 is {gap:.3} from the corrected value, \
             2 line-SEs = {:.3}",
            low.sigma,
            coffee.sigma,
            2.0 * coffee.line_se
        ),
    )
}

fn main() {
    let mut sur_reports = Vec::new();
    let mc = monte_carlo(&mut sur_reports);
    let criteria: Vec<(&str, Outcome)> = vec![
        ("recovery-formula fidelity", recovery_fidelity()),
        ("STRI recovery fidelity", stri_fidelity()),
        ("Monte Carlo consistency", mc),
        ("FM round trip", fm_round_trip()),
        ("delta-method gradient", delta_gradients()),
        ("demeaning suite", demeaning_suite()),
        ("diagnostics size and power", diagnostics_size_power()),
        ("ERPT identity", erpt_identity(sur_reports)),
        ("determinism and round trip", determinism_round_trip()),
        ("correction map", correction_map()),
    ];
    let passed = criteria.iter().filter(|(_, o)| o.pass).count();
    for (i, (name, o)) in criteria.iter().enumerate() {
        println!(
            "{} criterion {:>2} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
    }
    println!("acceptance: {passed} of {} criteria pass", criteria.len());
}
