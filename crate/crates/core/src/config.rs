//! Run configuration: problem source, regularizers, layout, schedule and step.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{load_csv, synthetic_classification, synthetic_regression, SyntheticSpec};
use crate::engine::Problem;
use crate::error::{Error, Result};
use crate::loss::{build_loss, LossKind};
use crate::model::{max_step_size, partition, ModelVector, PartitionStrategy};
use crate::prox::Regularizer;
use crate::schedule::{adversarial, random_bounded, synchronous, Schedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub loss: LossKind,
    pub data: DataSource,
}

/// One regularizer for every block, or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegularizerConfig {
    Uniform(Regularizer),
    PerBlock(Vec<Regularizer>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    pub p: usize,
    #[serde(default = "default_strategy")]
    pub strategy: PartitionStrategy,
}

fn default_strategy() -> PartitionStrategy {
    PartitionStrategy::Even
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Synchronous,
    RandomBounded,
    Adversarial,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    #[serde(default)]
    pub s: usize,
    #[serde(default)]
    pub seed: u64,
    pub horizon: usize,
    /// Schedule file for `kind = "file"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Simulate,
    Threaded,
    Serial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub regularizer: RegularizerConfig,
    pub layout: LayoutConfig,
    pub schedule: ScheduleConfig,
    /// Absolute step size; exclusive with `eta_frac`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Step as a fraction of `1 / (L (1 + 2 √p s))`. Defaults to 0.9.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_frac: Option<f64>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_true")]
    pub strict: bool,
    /// Per-worker pacing delays in microseconds (threaded mode).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pacing_us: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_true() -> bool {
    true
}

fn default_output() -> PathBuf {
    PathBuf::from("papg-out")
}

pub const DEFAULT_ETA_FRAC: f64 = 0.9;

/// Everything needed to execute a configured run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub problem: Problem,
    pub x0: ModelVector,
    /// Materialized schedule; `None` in threaded mode.
    pub schedule: Option<Schedule>,
    pub eta: f64,
    pub staleness: usize,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Staleness actually used by the run: zero in serial mode.
    pub fn effective_staleness(&self) -> usize {
        match self.mode {
            Mode::Serial => 0,
            _ => self.schedule.s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schedule.horizon == 0 {
            return Err(Error::InvalidArgument("horizon T must be at least 1".into()));
        }
        if self.layout.p == 0 {
            return Err(Error::InvalidArgument("p must be at least 1".into()));
        }
        match (self.eta, self.eta_frac) {
            (Some(_), Some(_)) => return Err(Error::InvalidArgument("give either eta or eta_frac, not both".into())),
            (Some(eta), None) if !(eta > 0.0) || !eta.is_finite() => {
                return Err(Error::StepSize(format!("eta must be positive, got {eta}")));
            }
            (None, Some(frac)) => {
                if !(frac > 0.0) || !frac.is_finite() {
                    return Err(Error::StepSize(format!("eta_frac must be positive, got {frac}")));
                }
                if self.strict && frac >= 1.0 {
                    return Err(Error::StepSize(format!("eta_frac must lie in (0, 1) in strict mode, got {frac}")));
                }
            }
            _ => {}
        }
        if self.schedule.kind == ScheduleKind::File && self.schedule.path.is_none() {
            return Err(Error::InvalidArgument("schedule kind 'file' needs a path".into()));
        }
        if self.mode == Mode::Threaded && !self.pacing_us.is_empty() && self.pacing_us.len() != self.layout.p {
            return Err(Error::Dimension { expected: self.layout.p, got: self.pacing_us.len() });
        }
        Ok(())
    }

    pub fn problem_id(&self) -> String {
        let loss = match self.problem.loss {
            LossKind::LeastSquares => "least_squares",
            LossKind::Logistic => "logistic",
        };
        match &self.problem.data {
            DataSource::Synthetic(s) => format!("{loss}-{}x{}-k{}-seed{}", s.n, s.d, s.sparsity, s.seed),
            DataSource::Csv { path } => format!("{loss}-{}", path.display()),
        }
    }

    pub fn build_problem(&self) -> Result<Problem> {
        let data = match &self.problem.data {
            DataSource::Synthetic(spec) => match self.problem.loss {
                LossKind::LeastSquares => synthetic_regression(spec)?,
                LossKind::Logistic => synthetic_classification(spec)?,
            },
            DataSource::Csv { path } => load_csv(path)?,
        };
        let d = data.a.cols();
        let layout = Arc::new(partition(d, self.layout.p, &self.layout.strategy)?);
        let regs = match &self.regularizer {
            RegularizerConfig::Uniform(r) => vec![*r; self.layout.p],
            RegularizerConfig::PerBlock(v) => v.clone(),
        };
        let loss = build_loss(self.problem.loss, data)?;
        Problem::new(self.problem_id(), Arc::from(loss), regs, layout)
    }

    pub fn build_schedule(&self) -> Result<Option<Schedule>> {
        let c = &self.schedule;
        let p = self.layout.p;
        Ok(match self.mode {
            Mode::Threaded => None,
            Mode::Serial => Some(synchronous(p, c.horizon)),
            Mode::Simulate => Some(match c.kind {
                ScheduleKind::Synchronous => synchronous(p, c.horizon).with_staleness(c.s),
                ScheduleKind::RandomBounded => random_bounded(p, c.horizon, c.s, c.seed),
                ScheduleKind::Adversarial => adversarial(p, c.horizon, c.s),
                ScheduleKind::File => Schedule::read_file(c.path.as_deref().unwrap())?,
            }),
        })
    }

    /// Resolve the step: absolute, or a fraction of the bound.
    pub fn resolve_eta(&self, lipschitz: f64, staleness: usize) -> Result<f64> {
        if let Some(eta) = self.eta {
            return Ok(eta);
        }
        let frac = self.eta_frac.unwrap_or(DEFAULT_ETA_FRAC);
        Ok(frac * max_step_size(lipschitz, self.layout.p, staleness)?)
    }

    pub fn prepare(&self) -> Result<Prepared> {
        self.validate()?;
        let problem = self.build_problem()?;
        let schedule = self.build_schedule()?;
        let staleness = schedule.as_ref().map_or(self.schedule.s, Schedule::staleness);
        let eta = self.resolve_eta(problem.lipschitz(), staleness)?;
        let x0 = ModelVector::zeros(problem.layout().clone());
        Ok(Prepared { problem, x0, schedule, eta, staleness })
    }
}
