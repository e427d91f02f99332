mod args;
mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

use ectsens::calibration::{calibrate, CalibrationReport, Indicator};
use ectsens::estimators::{
    bootstrap_many, estimate, sensitivity_grid, write_rows_csv, Estimate, EstimateRow, Method, SensitivitySpec,
};
use ectsens::nuisance::{fit_nuisances, NuisanceConfig, NuisanceSet};
use ectsens::simulation::{generate, run_mc_study, DGPConfig, MCTable};
use ectsens::{Dataset, Error, GammaTriple, Schema};

use args::{Cli, Command, DataArgs, Format, NuisanceArgs};
use config::{expand_grid, feature_map, merge_config, parse_values, ScenarioFile};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable inputs, invalid grids: exit 2.
    Usage(String),
    /// Estimation or simulation failure: exit 1.
    Compute(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Compute(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io(_) => "io",
        Error::Csv(_) => "csv",
        Error::Json(_) => "json",
        Error::MissingColumn(_) => "missing_column",
        Error::InvalidRow { .. } => "invalid_row",
        Error::InvalidDataset(_) => "invalid_dataset",
        Error::EmptyStratum(_) => "empty_stratum",
        Error::InsufficientData { .. } => "insufficient_data",
        Error::TiltOverflow { .. } => "tilt_overflow",
        Error::Contract(_) => "contract",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::Bracket(_) => "bracket",
        Error::Bootstrap(_) => "bootstrap",
        Error::Study(_) => "study",
        Error::AllFitsFailed(_) => "all_fits_failed",
    }
}

fn emit_error(kind: &str, message: &str) {
    let body = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{body}");
}

fn load(data: &DataArgs) -> Result<Dataset, CliError> {
    let mut schema = match &data.schema {
        Some(s) => Schema::parse(s).map_err(|e| CliError::Usage(e.to_string()))?,
        None => Schema::default(),
    };
    schema.missing_tokens.extend(data.na.iter().cloned());
    ectsens::load_dataset(&data.input, &schema)
        .map_err(|e| CliError::Usage(format!("cannot load {}: {e}", data.input.display())))
}

fn nuisance_config(n: &NuisanceArgs, seed: u64) -> Result<NuisanceConfig, CliError> {
    let mut cfg = NuisanceConfig::default();
    if let Some(m) = &n.ps_features {
        cfg.ps_features = feature_map(m)?;
    }
    if let Some(m) = &n.om_features {
        cfg.om_features = feature_map(m)?;
    }
    if !n.k_grid.is_empty() {
        if n.k_grid.contains(&0) {
            return Err(CliError::Usage("--k-grid entries must be positive".into()));
        }
        cfg.k_grid = n.k_grid.clone();
    }
    if !n.clip.is_empty() {
        let (lo, hi) = (n.clip[0], n.clip[1]);
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(CliError::Usage("--clip needs 0 < LO < HI < 1".into()));
        }
        cfg.logistic.clip = (lo, hi);
    }
    if let Some(r) = n.restarts {
        cfg.mixture.restarts = r.max(1);
    }
    cfg.standardize = n.standardize;
    cfg.mixture.seed = seed;
    Ok(cfg)
}

fn nuisances(ds: &Dataset, n: &NuisanceArgs, seed: u64) -> Result<NuisanceSet, CliError> {
    match &n.nuisance {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            NuisanceSet::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
        }
        None => Ok(fit_nuisances(ds, &nuisance_config(n, seed)?)?),
    }
}

fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(CliError::Usage(format!("--alpha must lie in (0, 0.5] (got {alpha})")));
    }
    Ok(())
}

fn check_b(b: usize) -> Result<(), CliError> {
    if b == 1 {
        return Err(CliError::Usage("--B must be 0 or at least 2".into()));
    }
    Ok(())
}

fn method(s: &str) -> Result<Method, CliError> {
    s.parse::<Method>().map_err(|e| CliError::Usage(e.to_string()))
}

/// Machine output goes to `--out` when given (with a summary on stdout),
/// otherwise straight to stdout.
fn write_output(out: &Option<PathBuf>, body: impl FnOnce(&mut dyn Write) -> Result<(), CliError>) -> Result<bool, CliError> {
    match out {
        Some(path) => {
            let f = File::create(path).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
            let mut w = BufWriter::new(f);
            body(&mut w)?;
            w.flush()?;
            Ok(true)
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            body(&mut w)?;
            w.flush()?;
            Ok(false)
        }
    }
}

fn write_json<T: Serialize + ?Sized>(w: &mut dyn Write, v: &T) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *w, v).map_err(|e| CliError::Compute(e.into()))?;
    writeln!(w)?;
    Ok(())
}

fn write_rows(w: &mut dyn Write, rows: &[EstimateRow], format: Format) -> Result<(), CliError> {
    match format {
        Format::Json if rows.len() == 1 => write_json(w, &rows[0]),
        Format::Json => write_json(w, rows),
        Format::Csv => Ok(write_rows_csv(w, rows)?),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn summary_line(e: &Estimate) -> String {
    let g = e.gammas;
    let ci = e.ci.map(|(lo, hi)| format!("({lo:.4}, {hi:.4})")).unwrap_or_else(|| "-".into());
    format!(
        "{:<8} gamma=({:+.3},{:+.3},{:+.3})  tau={:.4}  se={}  ci={}",
        e.method.as_str(),
        g.gamma_s,
        g.gamma_r0,
        g.gamma_r1,
        e.tau_hat,
        fmt_opt(e.se),
        ci
    )
}

fn cmd_simulate(a: &args::SimulateArgs) -> Result<(), CliError> {
    let cfg = DGPConfig {
        n_r_target: a.n_r,
        n_e_target: a.n_e,
        gammas: GammaTriple::new(a.gamma_s, a.gamma_r0, a.gamma_r1),
        seed: a.seed,
        j2r_variant: a.j2r,
        ..DGPConfig::default()
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let (ds, latent) = generate(&cfg)?;
    if let Some(path) = &a.latent {
        let f = File::create(path).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
        let mut wr = csv::Writer::from_writer(f);
        for l in &latent {
            wr.serialize(l).map_err(|e| CliError::Compute(e.into()))?;
        }
        wr.flush()?;
    }
    let to_file = write_output(&a.out, |w| Ok(ds.write_csv(w)?))?;
    if to_file {
        let s = ds.summary();
        println!("simulated n={} (trial {}, external {})", s.n, s.n_r, s.n_e);
    }
    Ok(())
}

fn cmd_fit(a: &args::FitArgs) -> Result<(), CliError> {
    let ds = load(&a.data)?;
    let nu = nuisances(&ds, &a.nuisance, a.seed)?;
    let to_file = write_output(&a.out, |w| write_json(w, &nu))?;
    if to_file {
        println!(
            "fitted nuisances on n={} (trial {}, external {}); outcome components: trial {}, external {}",
            ds.n(),
            ds.n_r(),
            ds.n_e(),
            nu.outcome_1.k(),
            nu.outcome_0.k()
        );
    }
    Ok(())
}

fn cmd_estimate(a: &args::EstimateArgs) -> Result<(), CliError> {
    check_alpha(a.boot.alpha)?;
    check_b(a.boot.b)?;
    let m = method(&a.method)?;
    let ds = load(&a.data)?;
    let nu = nuisances(&ds, &a.nuisance, a.boot.seed)?;
    let spec = SensitivitySpec::new(m, GammaTriple::new(a.gamma_s, a.gamma_r0, a.gamma_r1));
    let est = if a.boot.b == 0 {
        estimate(&ds, &nu, &spec)?
    } else {
        bootstrap_many(&ds, &nu, &[spec], a.boot.b, a.boot.alpha, a.boot.seed)?.pop().expect("one spec")?
    };
    let rows = [est.row()];
    if write_output(&a.out, |w| write_rows(w, &rows, a.format))? {
        println!("{}", summary_line(&est));
    }
    Ok(())
}

#[derive(Serialize)]
struct GridFailure {
    gamma_s: f64,
    gamma_r0: f64,
    gamma_r1: f64,
    error: String,
}

fn cmd_grid(a: &args::GridArgs) -> Result<(), CliError> {
    check_alpha(a.boot.alpha)?;
    check_b(a.boot.b)?;
    let m = method(&a.method)?;
    if !m.uses_gammas() {
        return Err(CliError::Usage(format!("grid needs a sensitivity method (tilting or j2r), got {m}")));
    }
    let grid = expand_grid(&parse_values(&a.gamma_s)?, &parse_values(&a.gamma_r0)?, &parse_values(&a.gamma_r1)?);
    let ds = load(&a.data)?;
    let nu = nuisances(&ds, &a.nuisance, a.boot.seed)?;
    let rows = sensitivity_grid(&ds, &nu, &grid, m, a.boot.b, a.boot.alpha, a.boot.seed)?;
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in &rows {
        match &r.result {
            Ok(e) => ok.push(e.row()),
            Err(e) => failed.push(GridFailure {
                gamma_s: r.gammas.gamma_s,
                gamma_r0: r.gammas.gamma_r0,
                gamma_r1: r.gammas.gamma_r1,
                error: e.to_string(),
            }),
        }
    }
    let to_file = write_output(&a.out, |w| match a.format {
        Format::Csv => Ok(write_rows_csv(w, &ok)?),
        Format::Json => write_json(w, &serde_json::json!({ "rows": ok, "failed": failed })),
    })?;
    for f in &failed {
        eprintln!(
            "grid point ({}, {}, {}) failed: {}",
            f.gamma_s, f.gamma_r0, f.gamma_r1, f.error
        );
    }
    if to_file {
        println!("{} grid points, {} failed", rows.len(), failed.len());
        let taus = ok.iter().map(|r| r.tau_hat);
        let lo = taus.clone().fold(f64::INFINITY, f64::min);
        let hi = taus.fold(f64::NEG_INFINITY, f64::max);
        if lo <= hi {
            println!("tau ranges over [{lo:.4}, {hi:.4}]");
        }
    }
    if ok.is_empty() {
        return Err(CliError::Compute(Error::InvalidArgument("every grid point failed".into())));
    }
    Ok(())
}

fn cmd_calibrate(a: &args::CalibrateArgs) -> Result<(), CliError> {
    let indicators = match a.indicator.as_str() {
        "all" => Indicator::ALL.to_vec(),
        s => vec![s.parse::<Indicator>().map_err(|e| CliError::Usage(e.to_string()))?],
    };
    let ds = load(&a.data)?;
    let nu = nuisances(&ds, &a.nuisance, a.seed)?;
    let reports = indicators.iter().map(|&i| calibrate(&ds, &nu, i)).collect::<Result<Vec<CalibrationReport>, _>>()?;
    let to_file = write_output(&a.out, |w| write_json(w, &reports))?;
    if to_file {
        for r in &reports {
            println!(
                "{:<8} (rho*)^2={:.4}  sigma_y^2={:.4}  var_m={:.4}  |gamma*|={:.4}",
                r.indicator.as_str(),
                r.rho_star_sq,
                r.sigma_y_sq,
                r.var_ms,
                r.gamma_star_abs
            );
            for (name, v) in r.covariates.iter().zip(&r.per_covariate_rho2) {
                println!("    {name:<12} rho^2={v:.4}");
            }
            for name in &r.degenerate {
                println!("    warning: covariate {name} has zero variance; rho^2 set to 0");
            }
        }
    }
    Ok(())
}

fn cmd_mc(a: &args::McArgs) -> Result<(), CliError> {
    let file = match (&a.scenario, &a.preset) {
        (Some(path), _) => ScenarioFile::load(path)?,
        (None, Some(p)) => ScenarioFile::preset(p),
        (None, None) => return Err(CliError::Usage("mc needs --scenario or --preset".into())),
    };
    let mut scenarios = file.scenarios()?;
    let reps = a.reps.or(file.reps).unwrap_or(500);
    let seed = a.seed.or(file.seed).unwrap_or(1);
    if reps == 0 {
        return Err(CliError::Usage("--reps must be positive".into()));
    }
    for sc in &mut scenarios {
        if let Some(b) = a.b {
            sc.b = b;
        }
        check_b(sc.b)?;
        check_alpha(sc.alpha)?;
    }
    let mut table = MCTable::default();
    for sc in &scenarios {
        table.extend(run_mc_study(sc, reps, seed)?);
    }
    let to_file = write_output(&a.out, |w| match a.format {
        Format::Csv => Ok(table.write_csv(w)?),
        Format::Json => write_json(w, &table),
    })?;
    if to_file {
        println!("{:<16} {:<8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>6}", "scenario", "method", "bias", "se", "mse", "cover", "width", "reps");
        for r in &table.rows {
            println!(
                "{:<16} {:<8} {:>8.4} {:>8.4} {:>8.4} {:>8} {:>8} {:>6}",
                r.scenario,
                r.method.as_str(),
                r.bias,
                r.se,
                r.mse,
                fmt_opt(r.coverage),
                fmt_opt(r.ci_width),
                r.n_reps
            );
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Mc(a) => cmd_mc(a),
    }
}

fn main() -> ExitCode {
    let argv = match merge_config(std::env::args_os().collect()) {
        Ok(v) => v,
        Err(CliError::Usage(msg)) => {
            emit_error("usage", &msg);
            return ExitCode::from(2);
        }
        Err(CliError::Compute(e)) => {
            emit_error(error_kind(&e), &e.to_string());
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            emit_error("usage", &msg);
            ExitCode::from(2)
        }
        Err(CliError::Compute(e)) => {
            emit_error(error_kind(&e), &e.to_string());
            ExitCode::from(1)
        }
    }
}
