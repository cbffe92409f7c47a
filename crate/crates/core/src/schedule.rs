//! Active clocks and delay maps for the partially asynchronous protocol.
//!
//! A schedule fixes, for every global clock `t < T`, which workers update and,
//! for each active worker `i`, the clock `τ_j^i(t)` at which it reads every
//! block `j`. Workers and clocks are 0-based.

use std::fmt::{self, Write as _};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    p: usize,
    s: usize,
    horizon: usize,
    /// `rows[t][i]` is worker `i`'s delay row at clock `t`, present iff active.
    rows: Vec<Vec<Option<Vec<usize>>>>,
}

impl Schedule {
    /// Schedule with no activations; fill it with [`Schedule::set_row`].
    pub fn empty(p: usize, s: usize, horizon: usize) -> Self {
        Self { p, s, horizon, rows: vec![vec![None; p]; horizon] }
    }

    pub fn num_workers(&self) -> usize {
        self.p
    }

    /// Declared staleness bound.
    pub fn staleness(&self) -> usize {
        self.s
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn set_row(&mut self, t: usize, worker: usize, delays: Vec<usize>) -> Result<()> {
        if t >= self.horizon || worker >= self.p {
            return Err(Error::InvalidArgument(format!(
                "record (t={t}, i={worker}) outside p={} T={}",
                self.p, self.horizon
            )));
        }
        if delays.len() != self.p {
            return Err(Error::Dimension { expected: self.p, got: delays.len() });
        }
        self.rows[t][worker] = Some(delays);
        Ok(())
    }

    pub fn row(&self, t: usize, worker: usize) -> Option<&[usize]> {
        self.rows.get(t)?.get(worker)?.as_deref()
    }

    pub fn is_active(&self, t: usize, worker: usize) -> bool {
        self.row(t, worker).is_some()
    }

    /// Active workers at clock `t`, in ascending order.
    pub fn active(&self, t: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[t].iter().enumerate().filter_map(|(i, r)| r.as_ref().map(|_| i))
    }

    /// Clocks at which `worker` updates.
    pub fn activations(&self, worker: usize) -> Vec<usize> {
        (0..self.horizon).filter(|&t| self.is_active(t, worker)).collect()
    }

    /// Number of recorded `(t, i)` rows.
    pub fn num_records(&self) -> usize {
        self.rows.iter().flatten().filter(|r| r.is_some()).count()
    }

    /// Delay row for `(t, worker)`; inactive pairs get the stalest admissible
    /// row `τ_j = (t − s)_+` for `j ≠ i`, `τ_i = t`.
    pub fn effective_row(&self, t: usize, worker: usize) -> Vec<usize> {
        match self.row(t, worker) {
            Some(r) => r.to_vec(),
            None => {
                let floor = t.saturating_sub(self.s);
                (0..self.p).map(|j| if j == worker { t } else { floor }).collect()
            }
        }
    }

    /// Largest `t − τ_j^i(t)` over `worker`'s row at clock `t`.
    pub fn max_staleness(&self, t: usize, worker: usize) -> Option<usize> {
        self.row(t, worker)
            .map(|r| r.iter().map(|&tau| t.saturating_sub(tau)).max().unwrap_or(0))
    }

    /// Same schedule relabeled with a different declared bound.
    pub fn with_staleness(mut self, s: usize) -> Self {
        self.s = s;
        self
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{HEADER_MAGIC} p={} s={} T={}", self.p, self.s, self.horizon).unwrap();
        for (t, row) in self.rows.iter().enumerate() {
            for (i, r) in row.iter().enumerate() {
                if let Some(delays) = r {
                    write!(out, "{t} {i}").unwrap();
                    for tau in delays {
                        write!(out, " {tau}").unwrap();
                    }
                    out.push('\n');
                }
            }
        }
        writeln!(out, "end {}", self.num_records()).unwrap();
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Parse("empty schedule file".into()))?;
        let (p, s, horizon) = parse_header(header)?;
        let mut schedule = Schedule::empty(p, s, horizon);
        let mut last: Option<(usize, usize)> = None;
        let mut records = 0usize;
        for (lineno, line) in lines {
            let ln = lineno + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.first() == Some(&"end") {
                let declared: usize = fields
                    .get(1)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("line {ln}: malformed end marker")))?;
                if declared != records || fields.len() != 2 {
                    return Err(Error::Parse(format!(
                        "line {ln}: end marker declares {declared} records, found {records}"
                    )));
                }
                if text.lines().skip(lineno + 1).any(|l| !l.trim().is_empty()) {
                    return Err(Error::Parse(format!("line {ln}: content after end marker")));
                }
                return Ok(schedule);
            }
            if fields.len() != p + 2 {
                return Err(Error::Parse(format!(
                    "line {ln}: expected {} fields, found {}",
                    p + 2,
                    fields.len()
                )));
            }
            let nums = fields
                .iter()
                .map(|f| f.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("line {ln}: {e}")))?;
            let (t, i) = (nums[0], nums[1]);
            if last.is_some_and(|prev| prev >= (t, i)) {
                return Err(Error::Parse(format!("line {ln}: records out of order")));
            }
            schedule
                .set_row(t, i, nums[2..].to_vec())
                .map_err(|e| Error::Parse(format!("line {ln}: {e}")))?;
            last = Some((t, i));
            records += 1;
        }
        Err(Error::Parse("schedule file is truncated (missing end marker)".into()))
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }
}

const HEADER_MAGIC: &str = "papg-schedule v1";

fn parse_header(line: &str) -> Result<(usize, usize, usize)> {
    let rest = line
        .strip_prefix(HEADER_MAGIC)
        .ok_or_else(|| Error::Parse(format!("bad schedule header: {line:?}")))?;
    let mut vals = [None; 3];
    for tok in rest.split_whitespace() {
        let (key, val) = tok
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad header field {tok:?}")))?;
        let slot = match key {
            "p" => 0,
            "s" => 1,
            "T" => 2,
            _ => return Err(Error::Parse(format!("unknown header field {key:?}"))),
        };
        vals[slot] = Some(val.parse::<usize>().map_err(|e| Error::Parse(format!("header {key}: {e}")))?);
    }
    match vals {
        [Some(p), Some(s), Some(t)] if p > 0 => Ok((p, s, t)),
        _ => Err(Error::Parse(format!("incomplete schedule header: {line:?}"))),
    }
}

/// A breach of the bounded-delay or frequent-update assumptions.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// `t − τ_j^i(t) ∉ [0, s]`.
    Delay { t: usize, worker: usize, block: usize, tau: usize },
    /// `τ_i^i(t) ≠ t`.
    OwnClock { t: usize, worker: usize, tau: usize },
    /// No activation of `worker` in `{start, …, start + s}`.
    Starvation { worker: usize, start: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::Delay { t, worker, block, tau } => {
                write!(f, "clock {t}: worker {worker} reads block {block} at clock {tau}")
            }
            Violation::OwnClock { t, worker, tau } => {
                write!(f, "clock {t}: worker {worker} reads its own block at clock {tau}")
            }
            Violation::Starvation { worker, start } => {
                write!(f, "worker {worker} idle throughout the window starting at clock {start}")
            }
        }
    }
}

/// Every violation of bounded delay and frequent update with bound `s`.
/// An empty result means the schedule passes.
pub fn validate(schedule: &Schedule, s: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    for t in 0..schedule.horizon {
        for worker in schedule.active(t) {
            let row = schedule.row(t, worker).unwrap();
            for (block, &tau) in row.iter().enumerate() {
                if block == worker {
                    if tau != t {
                        out.push(Violation::OwnClock { t, worker, tau });
                    }
                } else if tau > t || t - tau > s {
                    out.push(Violation::Delay { t, worker, block, tau });
                }
            }
        }
    }
    if schedule.horizon > s {
        let last_start = schedule.horizon - 1 - s;
        for worker in 0..schedule.p {
            // prefix[t] = activations in clocks [0, t)
            let mut prefix = Vec::with_capacity(schedule.horizon + 1);
            prefix.push(0usize);
            for t in 0..schedule.horizon {
                prefix.push(prefix[t] + usize::from(schedule.is_active(t, worker)));
            }
            for start in 0..=last_start {
                if prefix[start + s + 1] == prefix[start] {
                    out.push(Violation::Starvation { worker, start });
                }
            }
        }
    }
    out
}

/// Every worker active at every clock with fresh reads; `s = 0`.
pub fn synchronous(p: usize, horizon: usize) -> Schedule {
    let mut sched = Schedule::empty(p, 0, horizon);
    for t in 0..horizon {
        for i in 0..p {
            sched.rows[t][i] = Some(vec![t; p]);
        }
    }
    sched
}

/// Random schedule within the bounds: after each activation the next idle gap
/// is uniform on `{0, …, s}`, and every cross-block read is uniform on
/// `[(t − s)_+, t]`. A pure function of its arguments.
pub fn random_bounded(p: usize, horizon: usize, s: usize, seed: u64) -> Schedule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sched = Schedule::empty(p, s, horizon);
    let mut next: Vec<usize> = (0..p).map(|_| rng.random_range(0..=s)).collect();
    for t in 0..horizon {
        let floor = t.saturating_sub(s);
        for i in 0..p {
            if next[i] != t {
                continue;
            }
            let row = (0..p)
                .map(|j| if j == i { t } else { rng.random_range(floor..=t) })
                .collect();
            sched.rows[t][i] = Some(row);
            next[i] = t + 1 + rng.random_range(0..=s);
        }
    }
    sched
}

/// Worst case allowed by the bounds: worker `i` is active every `s + 1`
/// clocks at a staggered offset and always reads the stalest peer blocks.
pub fn adversarial(p: usize, horizon: usize, s: usize) -> Schedule {
    let period = s + 1;
    let stride = period.div_ceil(p.max(1));
    let mut sched = Schedule::empty(p, s, horizon);
    for i in 0..p {
        let offset = (i * stride) % period;
        for t in (offset..horizon).step_by(period) {
            let floor = t.saturating_sub(s);
            sched.rows[t][i] = Some((0..p).map(|j| if j == i { t } else { floor }).collect());
        }
    }
    sched
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synchronous_passes_any_bound() {
        let sched = synchronous(2, 3);
        assert!((0..3).all(|t| sched.active(t).count() == 2));
        assert_eq!(sched.row(2, 1), Some(&[2, 2][..]));
        assert!(validate(&sched, 0).is_empty());
        assert!(validate(&sched, 5).is_empty());
    }

    #[test]
    fn random_zero_staleness_is_synchronous() {
        assert_eq!(random_bounded(3, 100, 0, 7), synchronous(3, 100));
    }

    #[test]
    fn random_is_deterministic_and_valid() {
        let a = random_bounded(3, 100, 4, 7);
        assert_eq!(a.to_text(), random_bounded(3, 100, 4, 7).to_text());
        assert_ne!(a, random_bounded(3, 100, 4, 8));
        assert!(validate(&a, 4).is_empty());
    }

    #[test]
    fn adversarial_extremes() {
        let one = adversarial(1, 10, 0);
        assert_eq!(one.activations(0), (0..10).collect::<Vec<_>>());

        let sched = adversarial(2, 20, 3);
        assert!(validate(&sched, 3).is_empty());
        for i in 0..2 {
            let acts = sched.activations(i);
            assert!(acts.windows(2).all(|w| w[1] - w[0] - 1 == 3));
        }
        // truncation at zero: worker 1 first fires at t = 2
        assert_eq!(sched.row(2, 1), Some(&[0, 2][..]));
        for t in 0..20 {
            for i in sched.active(t).collect::<Vec<_>>() {
                assert_eq!(sched.max_staleness(t, i), Some(t.min(3)));
            }
        }
    }

    #[test]
    fn detects_excess_delay() {
        let mut sched = synchronous(2, 8).with_staleness(3);
        sched.set_row(5, 1, vec![1, 5]).unwrap();
        let v = validate(&sched, 3);
        assert_eq!(v, vec![Violation::Delay { t: 5, worker: 1, block: 0, tau: 1 }]);
    }

    #[test]
    fn detects_own_clock_and_future_reads() {
        let mut sched = synchronous(2, 4);
        sched.set_row(2, 0, vec![1, 3]).unwrap();
        let v = validate(&sched, 2);
        assert!(v.contains(&Violation::OwnClock { t: 2, worker: 0, tau: 1 }));
        assert!(v.contains(&Violation::Delay { t: 2, worker: 0, block: 1, tau: 3 }));
    }

    #[test]
    fn detects_starvation() {
        let s = 2;
        let mut sched = synchronous(2, 10).with_staleness(s);
        for t in 0..=s {
            sched.rows[t][1] = None;
        }
        let v = validate(&sched, s);
        assert_eq!(v, vec![Violation::Starvation { worker: 1, start: 0 }]);
    }

    #[test]
    fn text_roundtrip_and_truncation() {
        let sched = random_bounded(3, 40, 2, 11);
        let text = sched.to_text();
        assert!(text.starts_with("papg-schedule v1 p=3 s=2 T=40\n"));
        let back = Schedule::from_text(&text).unwrap();
        assert_eq!(back, sched);
        assert_eq!(back.to_text(), text);

        let lines: Vec<&str> = text.lines().collect();
        let cut = lines[..lines.len() - 3].join("\n");
        assert!(matches!(Schedule::from_text(&cut), Err(Error::Parse(_))));
        let half = &text[..text.len() / 2];
        assert!(Schedule::from_text(half).is_err());
        assert!(Schedule::from_text("papg-schedule v1 p=2 T=3\nend 0\n").is_err());
    }

    #[test]
    fn effective_row_completes_inactive_pairs() {
        let sched = adversarial(2, 10, 3);
        assert!(!sched.is_active(5, 0));
        assert_eq!(sched.effective_row(5, 0), vec![5, 2]);
        assert_eq!(sched.effective_row(4, 0), sched.row(4, 0).unwrap().to_vec());
    }
}
