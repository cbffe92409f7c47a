//! Trace directories.
//!
//! | file | content |
//! |------|---------|
//! | `trace.csv` | `t,F,step_norm,max_staleness,residual`, one row per clock `0..=T` |
//! | `schedule.txt` | realized schedule |
//! | `iterates.txt` | `x(0..=T)`, one whitespace-separated row per clock |
//! | `final_iterate.txt` | `x(T)`, one value per line |
//! | `run.json` | step size, problem id, step-bound flag, fingerprint |
//! | `config.json` | the run configuration |
//! | `report.json` | diagnostics, when computed |
//!
//! Floats are written in shortest round-trip form, so reloading is bit-exact.
//! Empty CSV fields mean "not applicable" (no step after `x(T)`, no active
//! worker at a clock).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::diagnostics::RunReport;
use crate::engine::Trace;
use crate::error::{Error, Result};
use crate::model::{BlockLayout, History};
use crate::schedule::Schedule;

pub const TRACE_CSV: &str = "trace.csv";
pub const SCHEDULE_TXT: &str = "schedule.txt";
pub const ITERATES_TXT: &str = "iterates.txt";
pub const FINAL_ITERATE_TXT: &str = "final_iterate.txt";
pub const RUN_JSON: &str = "run.json";
pub const CONFIG_JSON: &str = "config.json";
pub const REPORT_JSON: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub problem_id: String,
    pub eta: f64,
    pub beyond_step_bound: bool,
    pub horizon: usize,
    pub fingerprint: String,
}

fn parse_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{}: {msg}", path.display()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| parse_err(path, e))
}

pub fn iterates_to_text(history: &History) -> String {
    let mut out = String::new();
    for (_, x) in history.iter() {
        let row: Vec<String> = x.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn iterates_from_text(text: &str, layout: Arc<BlockLayout>) -> Result<History> {
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(k, line)| {
            line.split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| Error::Parse(format!("iterate row {k}: {e}"))))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    History::from_iterates(layout, rows).map_err(|e| Error::Parse(format!("iterates: {e}")))
}

fn trace_csv(trace: &Trace) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Runtime(e.to_string());
    w.write_record(["t", "F", "step_norm", "max_staleness", "residual"]).map_err(io)?;
    for t in 0..=trace.horizon() {
        let step = trace.step_norms.get(t).map(|v| format!("{v:e}")).unwrap_or_default();
        let stale = if t < trace.horizon() {
            trace.max_staleness(t).map(|v| v.to_string()).unwrap_or_default()
        } else {
            String::new()
        };
        w.write_record([
            t.to_string(),
            format!("{:e}", trace.objectives[t]),
            step,
            stale,
            format!("{:e}", trace.residuals[t]),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Runtime(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Per-clock columns read back from `trace.csv`.
struct Records {
    objectives: Vec<f64>,
    step_norms: Vec<f64>,
    residuals: Vec<f64>,
}

fn parse_trace_csv(path: &Path) -> Result<Records> {
    let mut r = csv::Reader::from_path(path).map_err(|e| parse_err(path, e))?;
    let header = r.headers().map_err(|e| parse_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["t", "F", "step_norm", "max_staleness", "residual"] {
        return Err(parse_err(path, "unexpected header"));
    }
    let mut rec = Records { objectives: Vec::new(), step_norms: Vec::new(), residuals: Vec::new() };
    for (k, row) in r.records().enumerate() {
        let row = row.map_err(|e| parse_err(path, e))?;
        let field = |i: usize| -> Result<Option<f64>> {
            let v = row.get(i).unwrap_or("");
            if v.is_empty() {
                Ok(None)
            } else {
                v.parse().map(Some).map_err(|e| parse_err(path, format!("row {k}: {e}")))
            }
        };
        let t: usize = row.get(0).unwrap_or("").parse().map_err(|e| parse_err(path, format!("row {k}: {e}")))?;
        if t != k {
            return Err(parse_err(path, format!("row {k} has clock {t}")));
        }
        rec.objectives.push(field(1)?.ok_or_else(|| parse_err(path, format!("row {k}: missing F")))?);
        if let Some(step) = field(2)? {
            rec.step_norms.push(step);
        }
        rec.residuals.push(field(4)?.ok_or_else(|| parse_err(path, format!("row {k}: missing residual")))?);
    }
    if rec.objectives.is_empty() || rec.step_norms.len() + 1 != rec.objectives.len() {
        return Err(parse_err(path, "inconsistent number of rows"));
    }
    Ok(rec)
}

/// Write the trace files (everything except `config.json` and `report.json`).
pub fn write_trace(dir: &Path, trace: &Trace) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(TRACE_CSV), trace_csv(trace)?)?;
    trace.schedule.write_file(&dir.join(SCHEDULE_TXT))?;
    fs::write(dir.join(ITERATES_TXT), iterates_to_text(&trace.iterates))?;
    let mut fin = String::new();
    for v in trace.final_iterate() {
        writeln!(fin, "{v:e}").unwrap();
    }
    fs::write(dir.join(FINAL_ITERATE_TXT), fin)?;
    let meta = RunMeta {
        problem_id: trace.problem_id.clone(),
        eta: trace.eta,
        beyond_step_bound: trace.beyond_step_bound,
        horizon: trace.horizon(),
        fingerprint: trace.fingerprint(),
    };
    fs::write(dir.join(RUN_JSON), serde_json::to_string_pretty(&meta).expect("meta serializes"))?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<RunMeta> {
    let path = dir.join(RUN_JSON);
    serde_json::from_str(&read(&path)?).map_err(|e| parse_err(&path, e))
}

/// Reload a trace written by [`write_trace`].
pub fn read_trace(dir: &Path, layout: Arc<BlockLayout>) -> Result<Trace> {
    let meta = read_meta(dir)?;
    let schedule = Schedule::from_text(&read(&dir.join(SCHEDULE_TXT))?)?;
    let iterates = iterates_from_text(&read(&dir.join(ITERATES_TXT))?, layout)?;
    let rec = parse_trace_csv(&dir.join(TRACE_CSV))?;
    let horizon = rec.step_norms.len();
    if schedule.horizon() != horizon || iterates.latest_clock() != horizon || meta.horizon != horizon {
        return Err(Error::Parse(format!(
            "{}: horizon mismatch between trace.csv ({horizon}), schedule ({}), iterates ({})",
            dir.display(),
            schedule.horizon(),
            iterates.latest_clock()
        )));
    }
    let staleness = (0..horizon)
        .map(|t| (0..schedule.num_workers()).map(|i| schedule.max_staleness(t, i)).collect())
        .collect();
    Ok(Trace {
        problem_id: meta.problem_id,
        eta: meta.eta,
        schedule,
        iterates,
        objectives: rec.objectives,
        step_norms: rec.step_norms,
        staleness,
        residuals: rec.residuals,
        beyond_step_bound: meta.beyond_step_bound,
    })
}

pub fn write_config(dir: &Path, config: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_JSON), config.to_json())?;
    Ok(())
}

pub fn write_report(path: &Path, report: &RunReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::Runtime(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    serde_json::from_str(&read(path)?).map_err(|e| parse_err(path, e))
}
