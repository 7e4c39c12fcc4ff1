//! `armington`: estimate, simulate and diagnose Armington elasticities.
//!
//! Reports go to stdout (JSON Lines by default), warnings to stderr. Errors
//! are emitted as `{"error": {"kind", "message", "exit_code"}}` and the
//! process exits with that code: 2 input or arguments, 3 dimension or
//! compatibility, 4 numerical singularity, 5 estimation failure.

mod config;
mod output;

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use armington_core::panel::{filter_coverage, load_panel, write_panel_csv, LoadOptions, Panel};
use armington_core::pipelines::{
    apply_benchmark_correction, estimate, CorrectionLine, EstimateOptions, FmOptions, Method,
    ThetaPolicy,
};
use armington_core::simulator::{
    generate_panel, run_monte_carlo, DgpConfig, ShockDistribution, StriProcess, DEFAULT_SEED,
};
use armington_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

use config::{FileConfig, Format};

#[derive(Debug, Parser)]
#[command(
    name = "armington",
    version,
    about = "Armington trade elasticity estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate sigma with one or more methods.
    Estimate(EstimateArgs),
    /// Generate a synthetic panel, or a Monte Carlo summary with `--reps`.
    Simulate(SimulateArgs),
    /// Print the first-stage F, Sargan and Davidson-MacKinnon tests.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML run configuration; explicit flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    format: Option<Format>,
    /// Write reports here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Panel CSV (`country,period,value[,quantity],fx_rate[,stri]`); `-` reads stdin.
    #[arg(default_value = "-")]
    input: PathBuf,
    /// Reject rows with non-positive value or exchange rate instead of dropping them.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    strict: Option<bool>,
    /// Keep only countries observed in at least this many periods.
    #[arg(long, value_name = "N")]
    min_obs: Option<usize>,
}

#[derive(Debug, Args)]
struct MethodArgs {
    /// Normalization period for SUR: `last`, `min-rss` or a period label.
    #[arg(long)]
    theta: Option<String>,
    /// Derivative and level instruments: `gated`, `primary` or `all`.
    #[arg(long)]
    instruments: Option<String>,
    /// Iterate the SUR covariance to convergence.
    #[arg(long, value_name = "BOOL")]
    sur_iterate: Option<bool>,
    /// Difference each country against the reference country in FM.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    fm_differences: Option<bool>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    methods: MethodArgs,
    /// Comma-separated methods (ivfe, fm, iiv, sur, sur-stri) or `all`.
    #[arg(long)]
    method: Option<String>,
    /// Map SUR sigma onto the fixed-effects IV scale with the benchmark line.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    apply_correction: Option<bool>,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    methods: MethodArgs,
    /// `ivfe` (default when quantities are present) or `iiv`.
    #[arg(long)]
    method: Option<String>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    methods: MethodArgs,
    /// Sidecar JSON for the true parameters and latent series.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run this many replications and print a Monte Carlo summary.
    #[arg(long)]
    reps: Option<usize>,
    /// Methods for `--reps` (default: every method the panel supports).
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    /// Normalization period of the generated panel, 1-based (default: last).
    #[arg(long, value_name = "PERIOD")]
    theta_period: Option<usize>,
    #[arg(long)]
    sd_epsilon: Option<f64>,
    #[arg(long)]
    sd_delta: Option<f64>,
    #[arg(long)]
    z_scale: Option<f64>,
    #[arg(long)]
    missing_prob: Option<f64>,
    /// Draw shocks from a unit-variance Student-t with this many degrees of freedom.
    #[arg(long, value_name = "DF")]
    student_t: Option<f64>,
    /// Simulate a services trade restrictiveness index.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    stri: Option<bool>,
}

/// Where reports go, plus the first hard error seen.
struct Sink {
    out: Box<dyn Write>,
    format: Format,
    status: u8,
}

impl Sink {
    fn open(path: Option<&Path>, format: Format) -> Result<Self> {
        let out: Box<dyn Write> = match path {
            Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_error(p, e))?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        };
        Ok(Self {
            out,
            format,
            status: 0,
        })
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}").map_err(Error::from)
    }

    /// Report a per-method failure without stopping the remaining methods.
    fn fail(&mut self, method: Option<Method>, e: &Error) -> Result<()> {
        eprintln!(
            "error{}: {e}",
            method.map(|m| format!(" [{m}]")).unwrap_or_default()
        );
        if self.status == 0 {
            self.status = e.exit_code() as u8;
        }
        if self.format == Format::Json {
            self.line(&output::core_error_json(method, e))?;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<u8> {
        self.out.flush()?;
        Ok(self.status)
    }
}

fn io_error(path: &Path, e: io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn warn(method: Method, warnings: &[String]) {
    for w in warnings {
        eprintln!("warning [{method}]: {w}");
    }
}

fn parse_methods(list: &str) -> Result<Option<Vec<Method>>> {
    if list.trim() == "all" {
        return Ok(None);
    }
    let methods: Vec<Method> = list
        .split(',')
        .map(|m| m.trim().parse())
        .collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no method selected".into()));
    }
    Ok(Some(methods))
}

/// Check that the data support each method before anything runs. With
/// `all`, unsupported methods are skipped instead.
fn compatible_methods(panel: &Panel, requested: Option<Vec<Method>>) -> Result<Vec<Method>> {
    let missing = |m: Method| match m {
        Method::Ivfe if !panel.has_quantities() => Some("ivfe requires a quantity column"),
        Method::SurStri if !panel.has_any_stri() => Some("sur-stri requires an stri column"),
        _ => None,
    };
    match requested {
        Some(list) => {
            if let Some(reason) = list.iter().find_map(|&m| missing(m)) {
                return Err(Error::NotApplicable(reason.into()));
            }
            Ok(list)
        }
        None => Ok(Method::ALL
            .into_iter()
            .filter(|&m| match missing(m) {
                Some(reason) => {
                    eprintln!("note: skipping {m}: {reason}");
                    false
                }
                None => true,
            })
            .collect()),
    }
}

fn estimate_options(args: &MethodArgs, file: &FileConfig) -> Result<EstimateOptions> {
    let pick = |flag: &Option<String>, key: &Option<String>| flag.clone().or_else(|| key.clone());
    let mut options = EstimateOptions::new();
    if let Some(theta) = pick(&args.theta, &file.theta) {
        options.theta = theta.parse()?;
    }
    if let Some(policy) = pick(&args.instruments, &file.instruments) {
        options.instruments = policy.parse()?;
    }
    options.sur_iterate = args.sur_iterate.or(file.sur_iterate).unwrap_or(true);
    options.fm = FmOptions {
        differences: args.fm_differences.or(file.fm_differences).unwrap_or(false),
    };
    Ok(options)
}

fn read_panel(args: &InputArgs, file: &FileConfig) -> Result<Panel> {
    let mut text = String::new();
    if args.input.as_os_str() == "-" {
        io::stdin().read_to_string(&mut text)?;
    } else {
        File::open(&args.input)
            .and_then(|mut f| f.read_to_string(&mut text))
            .map_err(|e| io_error(&args.input, e))?;
    }
    let options = LoadOptions {
        schema: file.schema(),
        strict: args.strict.or(file.strict).unwrap_or(false),
    };
    let loaded = load_panel(text.as_bytes(), &options)?;
    for d in &loaded.dropped {
        eprintln!("warning: dropped line {}: {}", d.line, d.reason);
    }
    if loaded.stri_missing > 0 {
        eprintln!(
            "warning: {} non-positive stri values treated as missing",
            loaded.stri_missing
        );
    }
    match args.min_obs.or(file.min_obs) {
        Some(k) => filter_coverage(&loaded.panel, k),
        None => Ok(loaded.panel),
    }
}

fn cmd_estimate(args: &EstimateArgs) -> Result<u8> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let format = args.common.format.or(file.format).unwrap_or_default();
    let options = estimate_options(&args.methods, &file)?;
    let requested = parse_methods(
        args.method
            .as_deref()
            .or(file.method.as_deref())
            .unwrap_or("all"),
    )?;
    let correct = args
        .apply_correction
        .or(file.apply_correction)
        .unwrap_or(false);
    let panel = read_panel(&args.input, &file)?;
    let methods = compatible_methods(&panel, requested)?;

    let mut sink = Sink::open(args.common.out.as_deref(), format)?;
    if format == Format::Tsv {
        sink.line(output::ESTIMATE_HEADER)?;
    }
    for method in methods {
        match estimate(&panel, method, &options) {
            Ok(mut report) => {
                if correct {
                    if matches!(method, Method::Sur | Method::SurStri) {
                        let line = CorrectionLine::BENCHMARK;
                        report.corrected = Some(apply_benchmark_correction(
                            report.sigma,
                            report.sigma_se,
                            &line,
                        ));
                    } else {
                        report
                            .warnings
                            .push("the benchmark correction applies to SUR estimates only".into());
                    }
                }
                warn(method, &report.warnings);
                match format {
                    Format::Json => sink.line(&output::json(&report))?,
                    Format::Tsv => sink.line(&output::estimate_row(&report))?,
                }
            }
            Err(e) => sink.fail(Some(method), &e)?,
        }
    }
    sink.finish()
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<u8> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let format = args.common.format.or(file.format).unwrap_or_default();
    let options = estimate_options(&args.methods, &file)?;
    let panel = read_panel(&args.input, &file)?;
    let method = match args.method.as_deref() {
        Some(m) => m.parse()?,
        None if panel.has_quantities() => Method::Ivfe,
        None => Method::Iiv,
    };
    if !matches!(method, Method::Ivfe | Method::Iiv) {
        return Err(Error::InvalidConfig(format!(
            "diagnose supports ivfe and iiv, not {method}"
        )));
    }
    compatible_methods(&panel, Some(vec![method]))?;
    let report = estimate(&panel, method, &options)?;
    warn(method, &report.warnings);

    let mut sink = Sink::open(args.common.out.as_deref(), format)?;
    match format {
        Format::Json => {
            #[derive(serde::Serialize)]
            struct Diagnosis<'a> {
                method: Method,
                n_obs: usize,
                instruments: &'a [String],
                diagnostics: &'a [armington_core::diagnostics::TestResult],
            }
            let d = Diagnosis {
                method,
                n_obs: report.n_obs,
                instruments: &report.instruments,
                diagnostics: &report.diagnostics,
            };
            sink.line(&output::json(&d))?;
        }
        Format::Tsv => {
            sink.line(output::DIAGNOSE_HEADER)?;
            for t in &report.diagnostics {
                sink.line(&output::diagnose_row(t))?;
            }
        }
    }
    sink.finish()
}

fn dgp_config(args: &SimulateArgs, file: &FileConfig) -> Result<DgpConfig> {
    let mut cfg = file.dgp.clone().unwrap_or_default();
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { cfg.$field = v; })* };
    }
    set!(
        sigma,
        omega,
        tau,
        n,
        t,
        sd_epsilon,
        sd_delta,
        z_scale,
        missing_prob
    );
    if let Some(p) = args.theta_period {
        if p == 0 || p > cfg.t {
            return Err(Error::InvalidConfig(format!(
                "theta period {p} is outside 1..={}",
                cfg.t
            )));
        }
        cfg.theta = Some(p - 1);
    }
    if let Some(df) = args.student_t {
        cfg.shocks = ShockDistribution::StudentT { df };
    }
    match args.stri {
        Some(true) if cfg.stri.is_none() => cfg.stri = Some(StriProcess::default()),
        Some(false) => cfg.stri = None,
        _ => {}
    }
    cfg.seed = args
        .seed
        .or(file.seed)
        .or(file.dgp.as_ref().map(|d| d.seed))
        .unwrap_or(DEFAULT_SEED);
    cfg.validate()?;
    Ok(cfg)
}

fn truth_path(args: &SimulateArgs) -> Option<PathBuf> {
    args.truth.clone().or_else(|| {
        args.common
            .out
            .as_ref()
            .map(|p| p.with_extension("truth.json"))
    })
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let format = args.common.format.or(file.format).unwrap_or_default();
    let cfg = dgp_config(args, &file)?;

    if let Some(reps) = args.reps.or(file.reps) {
        let mut options = estimate_options(&args.methods, &file)?;
        if args.methods.theta.is_none() && file.theta.is_none() {
            options.theta = ThetaPolicy::Explicit((cfg.theta_index() + 1).to_string());
        }
        let methods = match parse_methods(
            args.method
                .as_deref()
                .or(file.method.as_deref())
                .unwrap_or("all"),
        )? {
            Some(list) => list,
            None => Method::ALL
                .into_iter()
                .filter(|&m| m != Method::SurStri || cfg.stri.is_some())
                .collect(),
        };
        let summary = run_monte_carlo(&cfg, &methods, reps, &options)?;
        let mut sink = Sink::open(args.common.out.as_deref(), format)?;
        match format {
            Format::Json => sink.line(&output::json(&summary))?,
            Format::Tsv => {
                sink.line(output::SUMMARY_HEADER)?;
                for row in output::summary_rows(&summary) {
                    sink.line(&row)?;
                }
            }
        }
        return sink.finish();
    }

    let (panel, truth) = generate_panel(&cfg)?;
    let mut sink = Sink::open(args.common.out.as_deref(), format)?;
    write_panel_csv(&panel, &mut sink.out)?;
    if let Some(path) = truth_path(args) {
        let mut w = BufWriter::new(File::create(&path).map_err(|e| io_error(&path, e))?);
        writeln!(w, "{}", output::json(&truth))?;
        w.flush()?;
    }
    sink.finish()
}

fn format_hint(args: &[String]) -> Format {
    let tsv = args.windows(2).any(|w| w[0] == "--format" && w[1] == "tsv")
        || args.iter().any(|a| a == "--format=tsv");
    if tsv {
        Format::Tsv
    } else {
        Format::Json
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            if format_hint(&argv) == Format::Json {
                let rendered = e.to_string();
                let first = rendered.lines().next().unwrap_or_default();
                let message = first.trim_start_matches("error: ").to_string();
                println!("{}", output::error_json(None, "usage", message, 2));
            }
            return ExitCode::from(2);
        }
    };
    let (result, format) = match &cli.command {
        Command::Estimate(a) => (cmd_estimate(a), a.common.format),
        Command::Simulate(a) => (cmd_simulate(a), a.common.format),
        Command::Diagnose(a) => (cmd_diagnose(a), a.common.format),
    };
    match result {
        Ok(status) => ExitCode::from(status),
        Err(e) => {
            eprintln!("error: {e}");
            if format.unwrap_or_default() == Format::Json {
                println!("{}", output::core_error_json(None, &e));
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
