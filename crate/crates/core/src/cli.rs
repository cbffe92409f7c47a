//! Command-line front end: `run`, `replay`, `verify` and `report`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or parse error,
//! 3 divergence, 4 invariant violation or replay mismatch.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::config::{Mode, RunConfig};
use crate::diagnostics::{analyze, AnalysisOptions, CheckResult, RunReport};
use crate::engine::{first_divergent_clock, replay, run_mpapg, run_serial_pg, RunOptions, Trace};
use crate::error::Error;
use crate::io::{self, CONFIG_JSON, ITERATES_TXT, REPORT_JSON};
use crate::runtime::{run_threaded, ThreadedOptions};
use crate::schedule::Schedule;

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;
pub const EXIT_INVARIANT: u8 = 4;

/// Environment variable capping the number of runtime worker threads.
pub const THREADS_ENV: &str = "PAPG_THREADS";

#[derive(Debug, Parser)]
#[command(name = "papg", version, about = "Model-parallel partially asynchronous proximal gradient")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute a configured run and write the trace directory.
    Run(RunArgs),
    /// Re-execute a schedule file and compare against a recorded trace.
    Replay(ReplayArgs),
    /// Run all diagnostics on a trace directory.
    Verify(VerifyArgs),
    /// Summarize a report and write plot-ready series.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct AnalysisArgs {
    /// Error-bound constant κ; estimated from the reference solution if absent.
    #[arg(long = "eb-kappa")]
    pub eb_kappa: Option<f64>,
    /// Fraction of the horizon excluded from large-t checks.
    #[arg(long = "burn-in", default_value_t = 0.5)]
    pub burn_in: f64,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    #[arg(long, conflicts_with = "eta_frac")]
    pub eta: Option<f64>,
    #[arg(long = "eta-frac")]
    pub eta_frac: Option<f64>,
    /// Staleness bound.
    #[arg(long)]
    pub s: Option<usize>,
    /// Schedule seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, conflicts_with = "permissive")]
    pub strict: bool,
    #[arg(long)]
    pub permissive: bool,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Schedule file to execute.
    pub schedule: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    /// Trace directory to compare against; defaults to the schedule's directory.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Also write the replayed trace here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub dir: PathBuf,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub report: PathBuf,
    /// Series CSV destination; defaults to `series.csv` next to the report.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    match s {
        "simulate" => Ok(Mode::Simulate),
        "threaded" => Ok(Mode::Threaded),
        "serial" => Ok(Mode::Serial),
        _ => Err(format!("unknown mode {s:?} (simulate, threaded, serial)")),
    }
}

/// Command failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Divergence { .. } => EXIT_DIVERGENCE,
            Error::Runtime(_) | Error::NoConvergence(_) => EXIT_RUNTIME,
            _ => EXIT_CONFIG,
        };
        Failure { code, message: e.to_string() }
    }
}

type CmdResult = std::result::Result<String, Failure>;

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("papg: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

pub fn execute(cmd: Command) -> CmdResult {
    match cmd {
        Command::Run(a) => cmd_run(&a),
        Command::Replay(a) => cmd_replay(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

fn analysis_options(a: &AnalysisArgs) -> std::result::Result<AnalysisOptions, Failure> {
    if !(0.0..1.0).contains(&a.burn_in) {
        return Err(Error::InvalidArgument(format!("--burn-in must lie in [0, 1), got {}", a.burn_in)).into());
    }
    if a.eb_kappa.is_some_and(|k| !(k >= 0.0)) {
        return Err(Error::InvalidArgument("--eb-kappa must be >= 0".into()).into());
    }
    Ok(AnalysisOptions { kappa: a.eb_kappa, burn_in: a.burn_in, ..AnalysisOptions::default() })
}

fn apply_overrides(cfg: &mut RunConfig, a: &RunArgs) {
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(eta) = a.eta {
        cfg.eta = Some(eta);
        cfg.eta_frac = None;
    }
    if let Some(frac) = a.eta_frac {
        cfg.eta_frac = Some(frac);
        cfg.eta = None;
    }
    if let Some(s) = a.s {
        cfg.schedule.s = s;
    }
    if let Some(seed) = a.seed {
        cfg.schedule.seed = seed;
    }
    if let Some(out) = &a.out {
        cfg.output = out.clone();
    }
    if a.strict {
        cfg.strict = true;
    }
    if a.permissive {
        cfg.strict = false;
    }
}

fn thread_cap() -> std::result::Result<Option<usize>, Failure> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::InvalidArgument(format!("{THREADS_ENV}={v:?} is not a count")).into()),
        Err(_) => Ok(None),
    }
}

fn execute_config(cfg: &RunConfig) -> std::result::Result<Trace, Failure> {
    let prep = cfg.prepare()?;
    let opts = RunOptions { strict: cfg.strict, full_trace: true };
    let trace = match (cfg.mode, &prep.schedule) {
        (Mode::Serial, _) => run_serial_pg(&prep.problem, prep.eta, cfg.schedule.horizon, &prep.x0, opts)?,
        (Mode::Simulate, Some(sched)) => run_mpapg(&prep.problem, sched, prep.eta, &prep.x0, opts)?,
        _ => {
            let p = cfg.layout.p;
            if let Some(cap) = thread_cap()? {
                if p > cap {
                    return Err(Error::InvalidArgument(format!("p = {p} exceeds {THREADS_ENV} = {cap}")).into());
                }
            }
            let topts = ThreadedOptions {
                pacing: cfg.pacing_us.iter().map(|&us| Duration::from_micros(us)).collect(),
                strict: cfg.strict,
                ..ThreadedOptions::default()
            };
            run_threaded(&prep.problem, prep.staleness, prep.eta, cfg.schedule.horizon, &prep.x0, &topts)?.0
        }
    };
    Ok(trace)
}

fn finish_with_report(dir: &Path, report: &RunReport, mut out: String) -> CmdResult {
    io::write_report(&dir.join(REPORT_JSON), report)?;
    out.push_str(&summary(report));
    let failed: Vec<&str> = report.hard_failures().iter().map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(out)
    } else {
        print!("{out}");
        Err(Failure { code: EXIT_INVARIANT, message: format!("hard check(s) failed: {}", failed.join(", ")) })
    }
}

fn cmd_run(a: &RunArgs) -> CmdResult {
    let mut cfg = RunConfig::read_file(&a.config)?;
    apply_overrides(&mut cfg, a);
    cfg.validate()?;
    let opts = analysis_options(&a.analysis)?;
    let trace = execute_config(&cfg)?;
    let dir = cfg.output.clone();
    io::write_config(&dir, &cfg)?;
    io::write_trace(&dir, &trace)?;
    let problem = cfg.build_problem()?;
    let report = analyze(&problem, &trace, &opts)?;
    let head = format!("wrote {} ({} clocks, fingerprint {})\n", dir.display(), trace.horizon(), trace.fingerprint());
    finish_with_report(&dir, &report, head)
}

fn cmd_replay(a: &ReplayArgs) -> CmdResult {
    let cfg = RunConfig::read_file(&a.config)?;
    let schedule = Schedule::read_file(&a.schedule).map_err(|e| match e {
        Error::Io(io) => Error::Parse(format!("{}: {io}", a.schedule.display())),
        other => other,
    })?;
    let problem = cfg.build_problem()?;
    let eta = cfg.resolve_eta(problem.lipschitz(), schedule.staleness())?;
    let x0 = crate::model::ModelVector::zeros(problem.layout().clone());
    let trace = replay(&schedule, &problem, eta, &x0, RunOptions { strict: cfg.strict, full_trace: true })?;
    if let Some(out) = &a.out {
        io::write_trace(out, &trace)?;
    }
    let reference_dir = match &a.reference {
        Some(d) => d.clone(),
        None => a.schedule.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let text = std::fs::read_to_string(reference_dir.join(ITERATES_TXT))
        .map_err(|e| Error::Parse(format!("{}: {e}", reference_dir.join(ITERATES_TXT).display())))?;
    let reference = io::iterates_from_text(&text, problem.layout().clone())?;
    match first_divergent_clock(&trace.iterates, &reference) {
        None => Ok(format!("IDENTICAL {}\n", trace.fingerprint())),
        Some(t) => {
            println!("DIVERGED at clock {t}");
            Err(Failure { code: EXIT_INVARIANT, message: format!("replay differs from the reference from clock {t}") })
        }
    }
}

fn cmd_verify(a: &VerifyArgs) -> CmdResult {
    let opts = analysis_options(&a.analysis)?;
    let cfg = RunConfig::read_file(&a.dir.join(CONFIG_JSON))?;
    let problem = cfg.build_problem()?;
    let trace = io::read_trace(&a.dir, problem.layout().clone())?;
    if trace.problem_id != problem.id() {
        return Err(Error::Parse(format!(
            "trace is for problem {:?}, config describes {:?}",
            trace.problem_id,
            problem.id()
        ))
        .into());
    }
    let report = analyze(&problem, &trace, &opts)?;
    finish_with_report(&a.dir, &report, String::new())
}

fn cmd_report(a: &ReportArgs) -> CmdResult {
    let report = io::read_report(&a.report)?;
    let csv_path = a
        .csv
        .clone()
        .unwrap_or_else(|| a.report.parent().unwrap_or(Path::new(".")).join("series.csv"));
    std::fs::write(&csv_path, series_csv(&report)).map_err(Error::from)?;
    Ok(summary(&report))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6e}"))
}

fn check_line(c: &CheckResult) -> String {
    let verdict = if c.passed { "PASS" } else { "FAIL" };
    let kind = if c.hard { "hard" } else { "info" };
    let at = c.worst_clock.map(|t| format!(" @ {t}")).unwrap_or_default();
    let mut line = format!(
        "  {verdict} {kind} {:<26} worst {}{at} ({} of {} violated)",
        c.name,
        fmt_opt(c.worst),
        c.violations,
        c.checked
    );
    if !c.note.is_empty() {
        write!(line, " [{}]", c.note).unwrap();
    }
    line
}

/// Deterministic human-readable summary.
pub fn summary(r: &RunReport) -> String {
    let mut out = String::new();
    if r.checks.is_empty() {
        out.push_str("no checks run\n");
        return out;
    }
    writeln!(out, "problem      {}", r.problem_id).unwrap();
    writeln!(out, "step         {:.6e} (L = {:.6e}, p = {}, s = {})", r.eta, r.lipschitz, r.p, r.s).unwrap();
    writeln!(out, "horizon      {}", r.horizon).unwrap();
    writeln!(out, "F*           {} ({:?})", fmt_opt(r.f_star), r.gap_kind).unwrap();
    match &r.rate_fit {
        Some(f) => writeln!(out, "rho          {:.6} (R^2 {:.6}, {} points)", f.rho, f.r_squared, f.points).unwrap(),
        None => writeln!(out, "rho          n/a").unwrap(),
    }
    let alpha = r.sufficient_decrease.and_then(|s| s.alpha);
    writeln!(out, "alpha_hat    {}", fmt_opt(alpha)).unwrap();
    match &r.prox_lipschitz {
        Some(pl) => writeln!(out, "L_eta        {} (bound {})", fmt_opt(pl.estimate), fmt_opt(pl.bound)).unwrap(),
        None => writeln!(out, "L_eta        n/a").unwrap(),
    }
    if let Some(eb) = &r.eb {
        writeln!(out, "kappa        {:.6e} ({}), a_eta {:.6e}, b {:.6e}", eb.kappa, eb.kappa_source, eb.a_eta, eb.b).unwrap();
    }
    if let Some(t0) = r.support_stabilized_at {
        writeln!(out, "support      stable from clock {t0}").unwrap();
    }
    if let Some(fl) = &r.finite_length {
        writeln!(out, "length       {:.6e} (tail max step {:.6e})", fl.total, fl.tail_max).unwrap();
    }
    out.push_str("checks\n");
    for c in &r.checks {
        out.push_str(&check_line(c));
        out.push('\n');
    }
    for n in &r.notes {
        writeln!(out, "note: {n}").unwrap();
    }
    out
}

fn log10_field(v: f64) -> String {
    if v > 0.0 {
        format!("{:e}", v.log10())
    } else {
        String::new()
    }
}

/// Columns: `t,A,B,residual,log10_A,log10_B,log10_residual`. Log columns are
/// empty where the value is not positive.
pub fn series_csv(r: &RunReport) -> String {
    let mut out = String::from("t,A,B,residual,log10_A,log10_B,log10_residual\n");
    let n = r.a_series.len().max(r.b_series.len()).max(r.residual_series.len());
    let get = |v: &[f64], t: usize| v.get(t).copied();
    for t in 0..n {
        let cols = [get(&r.a_series, t), get(&r.b_series, t), get(&r.residual_series, t)];
        write!(out, "{t}").unwrap();
        for c in cols {
            write!(out, ",{}", c.map(|v| format!("{v:e}")).unwrap_or_default()).unwrap();
        }
        for c in cols {
            write!(out, ",{}", c.map(log10_field).unwrap_or_default()).unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_says_so() {
        assert_eq!(summary(&RunReport::default()), "no checks run\n");
        let parsed: RunReport = serde_json::from_str("{}").unwrap();
        assert_eq!(series_csv(&parsed), "t,A,B,residual,log10_A,log10_B,log10_residual\n");
    }

    #[test]
    fn series_has_log_columns() {
        let r = RunReport { a_series: vec![100.0, 0.0], b_series: vec![0.0, 1.0], residual_series: vec![1e-3, 1e-4], ..Default::default() };
        let csv = series_csv(&r);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1], "0,1e2,0e0,1e-3,2e0,,-3e0");
        assert_eq!(lines[2], "1,0e0,1e0,1e-4,,0e0,-4e0");
    }

    #[test]
    fn errors_map_to_exit_codes() {
        assert_eq!(Failure::from(Error::Parse("x".into())).code, EXIT_CONFIG);
        assert_eq!(Failure::from(Error::StepSize("x".into())).code, EXIT_CONFIG);
        assert_eq!(Failure::from(Error::Divergence { clock: 3, reason: "x".into() }).code, EXIT_DIVERGENCE);
        assert_eq!(Failure::from(Error::Runtime("x".into())).code, EXIT_RUNTIME);
    }
}
