//! Deterministic execution of the model-parallel proximal gradient recursion.
//!
//! At every clock `t` each active worker `i` computes
//! `x_i(t+1) = prox_{g_i}(x_i(t) − η ∇_i f(x^i(t)))` where `x^i(t)` is its
//! (possibly stale) local view; inactive blocks are copied. All updates in a
//! clock read iterate `t` only, so worker order within a clock is irrelevant.

use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::loss::SmoothLoss;
use crate::model::{max_step_size, norm, BlockLayout, History, ModelVector};
use crate::prox::{prox_block_in_place, prox_map, Regularizer};
use crate::schedule::{synchronous, validate, Schedule};

/// Iterates whose norm exceeds this are treated as divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Composite objective `F = f + Σ g_i` over a block layout.
#[derive(Debug, Clone)]
pub struct Problem {
    id: String,
    layout: Arc<BlockLayout>,
    loss: Arc<dyn SmoothLoss>,
    regs: Vec<Regularizer>,
}

impl Problem {
    pub fn new(
        id: impl Into<String>,
        loss: Arc<dyn SmoothLoss>,
        regs: Vec<Regularizer>,
        layout: Arc<BlockLayout>,
    ) -> Result<Self> {
        if loss.dim() != layout.dim() {
            return Err(Error::Dimension { expected: layout.dim(), got: loss.dim() });
        }
        if regs.len() != layout.num_blocks() {
            return Err(Error::Dimension { expected: layout.num_blocks(), got: regs.len() });
        }
        for r in &regs {
            r.validate()?;
        }
        Ok(Self { id: id.into(), layout, loss, regs })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn loss(&self) -> &dyn SmoothLoss {
        self.loss.as_ref()
    }

    pub fn regularizers(&self) -> &[Regularizer] {
        &self.regs
    }

    pub fn lipschitz(&self) -> f64 {
        self.loss.lipschitz()
    }

    pub fn is_convex_regularizer(&self) -> bool {
        self.regs.iter().all(Regularizer::is_convex)
    }

    pub fn regularizer_value(&self, x: &[f64]) -> f64 {
        self.regs
            .iter()
            .enumerate()
            .map(|(i, r)| r.value(&x[self.layout.range(i)]))
            .sum()
    }

    /// `F(x) = f(x) + g(x)`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.loss.value(x) + self.regularizer_value(x)
    }

    /// Block kernel shared by the simulator and the threaded runtime:
    /// `out = prox_{g_i}(own − η ∇_i f(view), η)`.
    pub fn block_update(&self, worker: usize, own: &[f64], view: &[f64], eta: f64, out: &mut [f64]) {
        let range = self.layout.range(worker);
        self.loss.partial_gradient_into(view, range, out);
        for (o, &v) in out.iter_mut().zip(own) {
            *o = v - eta * *o;
        }
        prox_block_in_place(&self.regs[worker], out, eta);
    }

    /// Full prox-gradient map `prox_g^η(x − η ∇f(x))`.
    pub fn prox_gradient_map(&self, x: &[f64], eta: f64) -> Result<Vec<f64>> {
        let grad = self.loss.gradient(x)?;
        let z: Vec<f64> = x.iter().zip(&grad).map(|(&v, &g)| v - eta * g).collect();
        let z = ModelVector::new(z, self.layout.clone())
            .map_err(|e| Error::Divergence { clock: 0, reason: e.to_string() })?;
        Ok(prox_map(&self.regs, &z, eta)?.into_values())
    }

    /// Gradient-mapping residual `‖x − prox¹_g(x − ∇f(x))‖`.
    pub fn prox_residual(&self, x: &[f64]) -> Result<f64> {
        let mapped = self.prox_gradient_map(x, 1.0)?;
        Ok(crate::model::dist(x, &mapped))
    }

    fn check_point(&self, x0: &ModelVector) -> Result<()> {
        if x0.layout().as_ref() != self.layout.as_ref() {
            return Err(Error::Layout("initial point layout differs from the problem layout".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Refuse step sizes at or above `1 / (L (1 + 2 √p s))`.
    pub strict: bool,
    /// Keep every iterate; otherwise only the last `s + 2`.
    pub full_trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { strict: true, full_trace: true }
    }
}

impl RunOptions {
    pub fn permissive() -> Self {
        Self { strict: false, ..Self::default() }
    }
}

/// Complete record of one run.
#[derive(Debug, Clone)]
pub struct Trace {
    pub problem_id: String,
    pub eta: f64,
    pub schedule: Schedule,
    pub iterates: History,
    /// `F(x(t))` for `t = 0..=T`.
    pub objectives: Vec<f64>,
    /// `‖x(t+1) − x(t)‖` for `t = 0..T`.
    pub step_norms: Vec<f64>,
    /// `max_j (t − τ_j^i(t))` per clock and worker; `None` when inactive.
    pub staleness: Vec<Vec<Option<usize>>>,
    /// `‖x − prox¹_g(x − ∇f(x))‖` for `t = 0..=T`.
    pub residuals: Vec<f64>,
    /// Set when the step size is not below the theoretical bound.
    pub beyond_step_bound: bool,
}

impl Trace {
    pub fn horizon(&self) -> usize {
        self.step_norms.len()
    }

    pub fn final_iterate(&self) -> &[f64] {
        self.iterates.latest()
    }

    /// SHA-256 over the step size and the bit patterns of all retained iterates.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.eta.to_bits().to_le_bytes());
        for (t, x) in self.iterates.iter() {
            h.update((t as u64).to_le_bytes());
            for v in x {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Largest staleness of any active worker at clock `t`.
    pub fn max_staleness(&self, t: usize) -> Option<usize> {
        self.staleness[t].iter().flatten().copied().max()
    }
}

fn guard(problem: &Problem, x: &[f64], clock: usize) -> Result<()> {
    if let Some(k) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Divergence { clock, reason: format!("coordinate {k} is not finite") });
    }
    let n = norm(x);
    if n > DIVERGENCE_NORM {
        return Err(Error::Divergence { clock, reason: format!("iterate norm {n:e} exceeds {DIVERGENCE_NORM:e}") });
    }
    let _ = problem;
    Ok(())
}

pub(crate) fn step_bound_check(problem: &Problem, eta: f64, s: usize, strict: bool) -> Result<bool> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::StepSize(format!("step must be positive, got {eta}")));
    }
    let bound = max_step_size(problem.lipschitz(), problem.layout.num_blocks(), s)?;
    let beyond = eta >= bound;
    if strict && beyond {
        return Err(Error::StepSize(format!(
            "step {eta} is not below the bound {bound} (L={}, p={}, s={s})",
            problem.lipschitz(),
            problem.layout.num_blocks()
        )));
    }
    Ok(beyond)
}

struct Recorder<'a> {
    problem: &'a Problem,
    objectives: Vec<f64>,
    residuals: Vec<f64>,
    step_norms: Vec<f64>,
    staleness: Vec<Vec<Option<usize>>>,
}

impl<'a> Recorder<'a> {
    fn new(problem: &'a Problem, x0: &[f64], horizon: usize) -> Result<Self> {
        let mut rec = Self {
            problem,
            objectives: Vec::with_capacity(horizon + 1),
            residuals: Vec::with_capacity(horizon + 1),
            step_norms: Vec::with_capacity(horizon),
            staleness: Vec::with_capacity(horizon),
        };
        rec.observe(x0)?;
        Ok(rec)
    }

    fn observe(&mut self, x: &[f64]) -> Result<()> {
        self.objectives.push(self.problem.objective(x));
        self.residuals.push(self.problem.prox_residual(x)?);
        Ok(())
    }

    fn step(&mut self, prev: &[f64], next: &[f64], staleness: Vec<Option<usize>>) -> Result<()> {
        self.step_norms.push(crate::model::dist(next, prev));
        self.staleness.push(staleness);
        self.observe(next)
    }

    fn finish(self, schedule: Schedule, iterates: History, eta: f64, beyond: bool) -> Trace {
        Trace {
            problem_id: self.problem.id.clone(),
            eta,
            schedule,
            iterates,
            objectives: self.objectives,
            step_norms: self.step_norms,
            staleness: self.staleness,
            residuals: self.residuals,
            beyond_step_bound: beyond,
        }
    }
}

/// Run the asynchronous recursion against a materialized schedule.
pub fn run_mpapg(problem: &Problem, schedule: &Schedule, eta: f64, x0: &ModelVector, opts: RunOptions) -> Result<Trace> {
    problem.check_point(x0)?;
    let p = problem.layout.num_blocks();
    if schedule.num_workers() != p {
        return Err(Error::Layout(format!(
            "schedule has {} workers, problem has {p} blocks",
            schedule.num_workers()
        )));
    }
    let s = schedule.staleness();
    let violations = validate(schedule, s);
    if let Some(first) = violations.first() {
        return Err(Error::ScheduleViolation(format!("{} violation(s), first: {first}", violations.len())));
    }
    let beyond = step_bound_check(problem, eta, s, opts.strict)?;

    let mut history = if opts.full_trace {
        History::new(x0.clone())
    } else {
        History::windowed(x0.clone(), s + 2)
    };
    let mut rec = Recorder::new(problem, x0.values(), schedule.horizon())?;
    let mut view = vec![0.0; problem.layout.dim()];

    for t in 0..schedule.horizon() {
        let current = history.latest();
        let mut next = current.to_vec();
        let mut staleness = vec![None; p];
        for i in schedule.active(t) {
            let row = schedule.row(t, i).unwrap();
            history.assemble_into(row, i, t, &mut view)?;
            let range = problem.layout.range(i);
            problem.block_update(i, &current[range.clone()], &view, eta, &mut next[range]);
            staleness[i] = schedule.max_staleness(t, i);
        }
        guard(problem, &next, t)?;
        rec.step(history.latest(), &next, staleness)?;
        history.push(next)?;
    }
    Ok(rec.finish(schedule.clone(), history, eta, beyond))
}

/// Serial forward-backward splitting `x(t+1) = prox_g^η(x(t) − η ∇f(x(t)))`.
pub fn run_serial_pg(problem: &Problem, eta: f64, horizon: usize, x0: &ModelVector, opts: RunOptions) -> Result<Trace> {
    problem.check_point(x0)?;
    let beyond = step_bound_check(problem, eta, 0, opts.strict)?;
    let p = problem.layout.num_blocks();
    let mut history = if opts.full_trace {
        History::new(x0.clone())
    } else {
        History::windowed(x0.clone(), 2)
    };
    let mut rec = Recorder::new(problem, x0.values(), horizon)?;
    for t in 0..horizon {
        let next = problem.prox_gradient_map(history.latest(), eta)?;
        guard(problem, &next, t)?;
        rec.step(history.latest(), &next, vec![Some(0); p])?;
        history.push(next)?;
    }
    Ok(rec.finish(synchronous(p, horizon), history, eta, beyond))
}

/// Build a trace from externally produced iterates `x(0..=T)`.
pub(crate) fn trace_from_iterates(
    problem: &Problem,
    schedule: Schedule,
    eta: f64,
    iterates: Vec<Vec<f64>>,
    beyond: bool,
) -> Result<Trace> {
    let mut iter = iterates.into_iter();
    let x0 = iter.next().ok_or_else(|| Error::Runtime("no iterates collected".into()))?;
    let x0 = ModelVector::new(x0, problem.layout.clone())?;
    let mut history = History::new(x0);
    let mut rec = Recorder::new(problem, history.latest(), schedule.horizon())?;
    for (t, next) in iter.enumerate() {
        guard(problem, &next, t)?;
        let staleness = (0..schedule.num_workers()).map(|i| schedule.max_staleness(t, i)).collect();
        rec.step(history.latest(), &next, staleness)?;
        history.push(next)?;
    }
    Ok(rec.finish(schedule, history, eta, beyond))
}

/// Re-execute a recorded schedule. Identical inputs give bitwise identical
/// iterates since every reduction runs in a fixed sequential order.
pub fn replay(schedule: &Schedule, problem: &Problem, eta: f64, x0: &ModelVector, opts: RunOptions) -> Result<Trace> {
    run_mpapg(problem, schedule, eta, x0, opts)
}

/// First clock `t` whose update differs bitwise between two traces, or `None`
/// when all shared iterates agree. A mismatch in `x(0)` reports clock 0.
pub fn first_divergent_clock(a: &History, b: &History) -> Option<usize> {
    let last = a.latest_clock().max(b.latest_clock());
    for t in 0..=last {
        let same = match (a.get(t), b.get(t)) {
            (Some(x), Some(y)) => x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits()),
            _ => false,
        };
        if !same {
            return Some(t.saturating_sub(1));
        }
    }
    None
}
