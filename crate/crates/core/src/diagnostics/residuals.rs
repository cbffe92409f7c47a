//! Per-clock inequalities: local-view inconsistency, square summability,
//! subgradient residual and sufficient decrease.

use serde::{Deserialize, Serialize};

use super::CheckResult;
use crate::engine::{Problem, Trace};
use crate::error::{Error, Result};
use crate::model::{dist, norm, sat_sub};

/// `‖x − prox¹_g(x − ∇f(x))‖`.
pub fn prox_residual(problem: &Problem, x: &[f64]) -> Result<f64> {
    problem.prox_residual(x)
}

fn require_full(trace: &Trace) -> Result<()> {
    if !trace.iterates.is_full() || trace.iterates.latest_clock() != trace.horizon() {
        return Err(Error::InvalidArgument("check needs the full iterate history".into()));
    }
    Ok(())
}

fn window_sum(v: &[f64], from: usize, to_inclusive: usize) -> f64 {
    v[from..=to_inclusive].iter().sum()
}

/// Recorded step norms must match the stored iterates to rounding.
pub fn check_trace_consistency(trace: &Trace) -> Result<CheckResult> {
    require_full(trace)?;
    let mut chk = CheckResult::new("trace_consistency", true);
    for (t, &recorded) in trace.step_norms.iter().enumerate() {
        let x = trace.iterates.get(t).unwrap();
        let actual = dist(trace.iterates.get(t + 1).unwrap(), x);
        chk.observe(t, (actual - recorded).abs(), 0.0, 1e-12 * (1.0 + norm(x)));
    }
    Ok(chk)
}

/// Both local-view inequalities at every clock and worker:
///
/// * `‖x(t) − x^i(t)‖ ≤ Σ_{k=(t−s)_+}^{t−1} ‖Δx(k)‖`
/// * `‖x^i(t+1) − x^i(t)‖ ≤ Σ_{k=(t−s)_+}^{t} ‖Δx(k)‖`
///
/// Left sides come from the stored iterates, right sides from the recorded
/// step norms. Inactive workers are checked with their stalest admissible view.
pub fn check_view_bounds(trace: &Trace) -> Result<(CheckResult, CheckResult)> {
    require_full(trace)?;
    let sched = &trace.schedule;
    let s = sched.staleness();
    let p = sched.num_workers();
    let dim = trace.iterates.layout().dim();
    let steps = &trace.step_norms;
    let horizon = trace.horizon();
    let mut incon = CheckResult::new("inconsistency_bound", true);
    let mut local = CheckResult::new("local_difference_bound", true);
    let mut view = vec![0.0; dim];
    let mut next_view = vec![0.0; dim];

    for t in 0..horizon {
        let x = trace.iterates.get(t).unwrap();
        let slack = 1e-12 * (1.0 + norm(x));
        let lo = sat_sub(t, s);
        let incon_rhs = if t == 0 { 0.0 } else { window_sum(steps, lo, t - 1) };
        let local_rhs = window_sum(steps, lo, t);
        for i in 0..p {
            trace.iterates.assemble_into(&sched.effective_row(t, i), i, t, &mut view)?;
            incon.observe(t, dist(x, &view), incon_rhs, slack);
            if t + 1 < horizon {
                trace.iterates.assemble_into(&sched.effective_row(t + 1, i), i, t + 1, &mut next_view)?;
                local.observe(t, dist(&next_view, &view), local_rhs, slack);
            }
        }
    }
    Ok((incon, local))
}

/// `Σ_{t<T} ‖Δx(t)‖² ≤ 2 (F(x(0)) − F*) / (1/η − L − 2√p L s)`.
///
/// Only meaningful when the denominator is positive; the check is advisory
/// on runs beyond the step bound.
pub fn square_summability(trace: &Trace, f_star: f64, lipschitz: f64) -> CheckResult {
    let p = trace.schedule.num_workers() as f64;
    let s = trace.schedule.staleness() as f64;
    let denom = 1.0 / trace.eta - lipschitz - 2.0 * p.sqrt() * lipschitz * s;
    let mut chk = CheckResult::new("square_summability", !trace.beyond_step_bound);
    if denom <= 0.0 {
        chk.hard = false;
        return chk.with_note("step size outside the bound, no finite constant");
    }
    let total: f64 = trace.step_norms.iter().map(|v| v * v).sum();
    let bound = 2.0 * (trace.objectives[0] - f_star) / denom;
    chk.observe(trace.horizon(), total, bound, 1e-8);
    chk.with_note(format!("sum {total:e}, bound {bound:e}"))
}

/// Subgradient residual series with its bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgradientSeries {
    /// `‖u(t+1) + ∇f(x(t+1))‖` for `t = 0..T`; `None` before every worker
    /// has been active once.
    pub residual: Vec<Option<f64>>,
    /// `(√p/η + 2L) Σ_{k=(t−2s)_+}^{t} ‖Δx(k)‖`.
    pub bound: Vec<f64>,
    pub check: CheckResult,
}

/// Build `u_i(t+1) = −(1/η)[x_i(t+1) − x_i(t) + η ∇_i f(x^i(t))]` at active
/// clocks, carried over unchanged across skipped clocks, and compare the
/// residual with its bound (slack `1e-10`).
pub fn subgradient_residual(trace: &Trace, problem: &Problem) -> Result<SubgradientSeries> {
    require_full(trace)?;
    let sched = &trace.schedule;
    let layout = problem.layout();
    let p = layout.num_blocks();
    let s = sched.staleness();
    let eta = trace.eta;
    let l = problem.lipschitz();
    let factor = (p as f64).sqrt() / eta + 2.0 * l;
    let loss = problem.loss();

    let mut u = vec![0.0; layout.dim()];
    let mut seen = vec![false; p];
    let mut view = vec![0.0; layout.dim()];
    let mut grad = Vec::new();
    let mut residual = Vec::with_capacity(trace.horizon());
    let mut bound = Vec::with_capacity(trace.horizon());
    let mut chk = CheckResult::new("subgradient_bound", true);

    for t in 0..trace.horizon() {
        let x = trace.iterates.get(t).unwrap();
        let x_next = trace.iterates.get(t + 1).unwrap();
        for i in sched.active(t) {
            let range = layout.range(i);
            trace.iterates.assemble_into(sched.row(t, i).unwrap(), i, t, &mut view)?;
            grad.resize(range.len(), 0.0);
            loss.partial_gradient_into(&view, range.clone(), &mut grad);
            for (k, g) in range.zip(&grad) {
                u[k] = -((x_next[k] - x[k]) / eta + g);
            }
            seen[i] = true;
        }
        let b = factor * trace.step_norms[sat_sub(t, 2 * s)..=t].iter().sum::<f64>();
        bound.push(b);
        if seen.iter().all(|&v| v) {
            let g_next = loss.gradient(x_next)?;
            let r = u.iter().zip(&g_next).map(|(a, b)| (a + b) * (a + b)).sum::<f64>().sqrt();
            chk.observe(t, r, b, 1e-10);
            residual.push(Some(r));
        } else {
            residual.push(None);
        }
    }
    Ok(SubgradientSeries { residual, bound, check: chk })
}

/// Empirical sufficient-decrease constant over a tail window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SufficientDecrease {
    /// `min (F(t) − F(t+1)) / ‖Δx(t)‖²`; `None` when every step was skipped.
    pub alpha: Option<f64>,
    pub clock: Option<usize>,
    pub evaluated: usize,
    pub skipped: usize,
}

impl SufficientDecrease {
    pub fn vacuous(&self) -> bool {
        self.alpha.is_none()
    }

    pub fn holds(&self) -> bool {
        self.alpha.is_none_or(|a| a > 0.0)
    }
}

/// Steps with `‖Δx‖² ≤ 1e-12 (1 + |F|)` are skipped: their ratio is dominated
/// by rounding in `F`.
pub fn sufficient_decrease(objectives: &[f64], step_norms: &[f64], tail_start: usize) -> SufficientDecrease {
    let mut out = SufficientDecrease { alpha: None, clock: None, evaluated: 0, skipped: 0 };
    for t in tail_start..step_norms.len() {
        let sq = step_norms[t] * step_norms[t];
        if !(sq > 1e-12 * (1.0 + objectives[t].abs())) {
            out.skipped += 1;
            continue;
        }
        out.evaluated += 1;
        let ratio = (objectives[t] - objectives[t + 1]) / sq;
        if out.alpha.is_none_or(|a| ratio < a) {
            out.alpha = Some(ratio);
            out.clock = Some(t);
        }
    }
    out
}
