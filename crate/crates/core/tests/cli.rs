use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use papg::diagnostics::RunReport;

const BIN: &str = env!("CARGO_BIN_EXE_papg");

fn config(dir: &Path, name: &str, extra: &str, data_seed: u64) -> PathBuf {
    let text = format!(
        r#"{{
  "problem": {{ "loss": "least_squares", "data": {{ "synthetic": {{ "n": 20, "d": 50, "sparsity": 5, "noise": 0.01, "seed": {data_seed} }} }} }},
  "regularizer": {{ "kind": "l1", "weight": 0.5 }},
  "layout": {{ "p": 4 }},
  "schedule": {{ "kind": "random_bounded", "s": 3, "seed": 11, "horizon": 3000 }},
  {extra}
  "output": "{}"
}}"#,
        dir.join(format!("{name}-out")).display()
    );
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, text).unwrap();
    path
}

fn papg(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn papg_env(args: &[&str], key: &str, val: &str) -> Output {
    Command::new(BIN).args(args).env(key, val).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Run the default Lasso config into a fresh directory.
fn lasso_run(tmp: &Path) -> PathBuf {
    let cfg = config(tmp, "lasso", "", 1);
    let o = papg(&["run", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    tmp.join("lasso-out")
}

#[test]
fn run_writes_trace_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lasso_run(tmp.path());
    for f in ["trace.csv", "schedule.txt", "iterates.txt", "final_iterate.txt", "run.json", "config.json", "report.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let report: RunReport = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report.all_hard_passed());
    assert_eq!(report.horizon, 3000);
}

#[test]
fn strict_fraction_above_one_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "bad", r#""eta_frac": 1.5,"#, 1);
    assert_eq!(code(&papg(&["run", "--config", s(&cfg)])), 2);
    let cfg = config(tmp.path(), "good", "", 1);
    assert_eq!(code(&papg(&["run", "--config", s(&cfg), "--eta-frac", "1.5"])), 2);
    assert_eq!(code(&papg(&["run", "--config", s(&tmp.path().join("absent.json"))])), 2);
}

#[test]
fn permissive_divergence_reports_the_clock() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "div", "", 1);
    let o = papg(&["run", "--config", s(&cfg), "--permissive", "--eta", "100"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("divergence at clock"), "{}", stderr(&o));
    // the same step is refused outright in strict mode
    assert_eq!(code(&papg(&["run", "--config", s(&cfg), "--eta", "100"])), 2);
}

#[test]
fn replay_outcomes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lasso_run(tmp.path());
    let sched = out.join("schedule.txt");
    let cfg = out.join("config.json");

    let o = papg(&["replay", s(&sched), "--config", s(&cfg)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("IDENTICAL"));

    let other = config(tmp.path(), "other", "", 2);
    let o = papg(&["replay", s(&sched), "--config", s(&other), "--reference", s(&out)]);
    assert_eq!(code(&o), 4);
    assert!(stdout(&o).contains("DIVERGED at clock 0"), "{}", stdout(&o));

    let text = fs::read_to_string(&sched).unwrap();
    let cut = tmp.path().join("truncated.txt");
    fs::write(&cut, &text[..text.len() / 2]).unwrap();
    let o = papg(&["replay", s(&cut), "--config", s(&cfg), "--reference", s(&out)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn verify_passes_then_catches_corruption() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lasso_run(tmp.path());
    assert_eq!(code(&papg(&["verify", s(&out)])), 0);

    let o = papg(&["verify", s(&out), "--eb-kappa", "0.5"]);
    assert_eq!(code(&o), 0);
    let report: RunReport = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let eb = report.eb.unwrap();
    assert_eq!(eb.kappa, 0.5);
    assert_eq!(eb.kappa_source, "supplied");

    let path = out.join("iterates.txt");
    let mut rows: Vec<String> = fs::read_to_string(&path).unwrap().lines().map(String::from).collect();
    let mut vals: Vec<f64> = rows[1500].split_whitespace().map(|v| v.parse().unwrap()).collect();
    vals[7] += 0.25;
    rows[1500] = vals.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ");
    fs::write(&path, rows.join("\n") + "\n").unwrap();

    let o = papg(&["verify", s(&out)]);
    assert_eq!(code(&o), 4);
    let report: RunReport = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(!report.check("inconsistency_bound").unwrap().passed);
    assert!(stderr(&o).contains("inconsistency_bound"));
}

#[test]
fn report_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lasso_run(tmp.path());
    let rep = out.join("report.json");
    let a = papg(&["report", s(&rep)]);
    let b = papg(&["report", s(&rep)]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    for key in ["rho", "alpha_hat", "L_eta", "PASS hard inconsistency_bound"] {
        assert!(text.contains(key), "missing {key}:\n{text}");
    }
    let csv = fs::read_to_string(out.join("series.csv")).unwrap();
    assert!(csv.starts_with("t,A,B,residual,log10_A,log10_B,log10_residual\n"));
    assert_eq!(csv.lines().count(), 3002);

    let empty = tmp.path().join("empty.json");
    fs::write(&empty, "{}").unwrap();
    let custom = tmp.path().join("empty.csv");
    let o = papg(&["report", s(&empty), "--csv", s(&custom)]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "no checks run\n");
    assert!(custom.is_file());
}

#[test]
fn threaded_mode_respects_thread_cap() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "th", r#""mode": "threaded", "pacing_us": [0, 20, 0, 60],"#, 1);
    let o = papg_env(&["run", "--config", s(&cfg), "--s", "2"], "PAPG_THREADS", "2");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("PAPG_THREADS"));

    let o = papg_env(&["run", "--config", s(&cfg), "--s", "2"], "PAPG_THREADS", "8");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = tmp.path().join("th-out");
    let o = papg(&["replay", s(&out.join("schedule.txt")), "--config", s(&out.join("config.json"))]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("IDENTICAL"));
}
