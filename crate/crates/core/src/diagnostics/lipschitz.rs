//! Proximal Lipschitz estimates, support stabilization and trajectory length.

use serde::{Deserialize, Serialize};

use super::CheckResult;
use crate::engine::{Problem, Trace};
use crate::error::{Error, Result};
use crate::model::{dist, norm, BlockLayout, History};
use crate::prox::Regularizer;

/// Pairs closer than this (relative to `1 + ‖x‖`) are skipped: the ratio
/// would be dominated by rounding in the displacement map.
const PAIR_MIN_SEPARATION: f64 = 1e-6;

/// `Δ_η(x) = prox_g^η(x − η ∇f(x)) − x`.
pub fn prox_displacement(problem: &Problem, x: &[f64], eta: f64) -> Result<Vec<f64>> {
    let mapped = problem.prox_gradient_map(x, eta)?;
    Ok(mapped.iter().zip(x).map(|(m, v)| m - v).collect())
}

/// Consecutive local views `(x^i(t), x^i(t+1))` whose reads all come from
/// clocks `≥ from_clock`.
pub fn trajectory_pairs(trace: &Trace, from_clock: usize) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let sched = &trace.schedule;
    let dim = trace.iterates.layout().dim();
    let mut pairs = Vec::new();
    for t in from_clock..trace.horizon().saturating_sub(1) {
        for i in 0..sched.num_workers() {
            let (r0, r1) = (sched.effective_row(t, i), sched.effective_row(t + 1, i));
            if r0.iter().chain(&r1).any(|&tau| tau < from_clock) {
                continue;
            }
            let mut a = vec![0.0; dim];
            let mut b = vec![0.0; dim];
            trace.iterates.assemble_into(&r0, i, t, &mut a)?;
            trace.iterates.assemble_into(&r1, i, t + 1, &mut b)?;
            if dist(&a, &b) > PAIR_MIN_SEPARATION * (1.0 + norm(&a)) {
                pairs.push((a, b));
            }
        }
    }
    Ok(pairs)
}

/// Measured `L̂_η` and the closed-form bound when one is available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxLipschitz {
    pub eta: f64,
    /// `max ‖Δ_η(a) − Δ_η(b)‖ / ‖a − b‖`; `None` without usable pairs.
    pub estimate: Option<f64>,
    pub bound: Option<f64>,
    pub pairs: usize,
}

impl ProxLipschitz {
    /// `L̂_η ≤ bound + 1e-8`, vacuously true without pairs or bound.
    pub fn within_bound(&self) -> bool {
        match (self.estimate, self.bound) {
            (Some(e), Some(b)) => e <= b + 1e-8,
            _ => true,
        }
    }
}

/// Closed-form `L_η` for the regularizer family, if any:
/// `ηL` for `g = 0`, `η(L + L_g)/(1 − ηL_g)` for squared ℓ2, `ηpL` for ℓ0
/// (valid once the support is fixed).
fn closed_form_bound(problem: &Problem, eta: f64) -> Option<f64> {
    let l = problem.lipschitz();
    let regs = problem.regularizers();
    if regs.iter().all(|r| matches!(r, Regularizer::L0 { .. })) {
        return Some(eta * regs.len() as f64 * l);
    }
    let lg = regs
        .iter()
        .map(Regularizer::gradient_lipschitz)
        .try_fold(0.0f64, |acc, g| g.map(|g| acc.max(g)))?;
    (eta * lg < 1.0).then(|| eta * (l + lg) / (1.0 - eta * lg))
}

pub fn prox_lipschitz_on_pairs(problem: &Problem, pairs: &[(Vec<f64>, Vec<f64>)], eta: f64) -> Result<ProxLipschitz> {
    let mut estimate: Option<f64> = None;
    for (a, b) in pairs {
        let da = prox_displacement(problem, a, eta)?;
        let db = prox_displacement(problem, b, eta)?;
        let ratio = dist(&da, &db) / dist(a, b);
        estimate = Some(estimate.map_or(ratio, |e| e.max(ratio)));
    }
    Ok(ProxLipschitz { eta, estimate, bound: closed_form_bound(problem, eta), pairs: pairs.len() })
}

/// `L̂_η` over consecutive local views of a trace from `from_clock` on.
pub fn prox_lipschitz(trace: &Trace, problem: &Problem, eta: f64, from_clock: usize) -> Result<ProxLipschitz> {
    prox_lipschitz_on_pairs(problem, &trajectory_pairs(trace, from_clock)?, eta)
}

fn support(x: &[f64], coords: &[usize]) -> Vec<bool> {
    coords.iter().map(|&k| x[k] != 0.0).collect()
}

/// Smallest `t₀` after which the support of the given blocks is constant.
///
/// Returns `None` ("not stabilized") when the support still changes within
/// the last tenth of the horizon.
pub fn support_stability(history: &History, layout: &BlockLayout, blocks: &[usize]) -> Option<usize> {
    let coords: Vec<usize> = blocks.iter().flat_map(|&i| layout.range(i)).collect();
    let last = history.latest_clock();
    let reference = support(history.latest(), &coords);
    let mut t0 = history.first_clock();
    for (t, x) in history.iter() {
        if support(x, &coords) != reference {
            t0 = t + 1;
        }
    }
    let guard = (last / 10).max(1);
    (t0 + guard <= last || t0 == history.first_clock()).then_some(t0)
}

/// Trajectory length diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteLength {
    /// `Σ_{k<t} ‖Δx(k)‖` for `t = 1..=T`.
    pub partial_sums: Vec<f64>,
    pub total: f64,
    /// Largest step in the last tenth of the horizon.
    pub tail_max: f64,
    pub tail_window: usize,
    /// Tail window sum below half the preceding window's sum (or zero).
    pub geometric_tail: bool,
    /// `Σ_t ‖x^i(t+1) − x^i(t)‖` per worker.
    pub local_sums: Vec<f64>,
    /// Local sums bounded by `(2s+1)` times the global sum.
    pub local_check: CheckResult,
}

pub fn finite_length(trace: &Trace) -> Result<FiniteLength> {
    let steps = &trace.step_norms;
    let horizon = steps.len();
    let partial_sums: Vec<f64> = steps
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect();
    let total = partial_sums.last().copied().unwrap_or(0.0);
    let window = (horizon / 10).max(1).min(horizon);
    let tail = &steps[horizon - window..];
    let tail_max = tail.iter().copied().fold(0.0, f64::max);
    let tail_sum: f64 = tail.iter().sum();
    let prev_sum: f64 = steps[horizon.saturating_sub(2 * window)..horizon - window].iter().sum();
    let geometric_tail = tail_sum == 0.0 || tail_sum < 0.5 * prev_sum;

    let sched = &trace.schedule;
    let s = sched.staleness();
    let p = sched.num_workers();
    let dim = trace.iterates.layout().dim();
    let mut local_sums = vec![0.0; p];
    let mut a = vec![0.0; dim];
    let mut b = vec![0.0; dim];
    if !trace.iterates.is_full() {
        return Err(Error::InvalidArgument("trajectory length needs the full iterate history".into()));
    }
    for t in 0..horizon.saturating_sub(1) {
        for (i, sum) in local_sums.iter_mut().enumerate() {
            trace.iterates.assemble_into(&sched.effective_row(t, i), i, t, &mut a)?;
            trace.iterates.assemble_into(&sched.effective_row(t + 1, i), i, t + 1, &mut b)?;
            *sum += dist(&a, &b);
        }
    }
    let mut local_check = CheckResult::new("finite_length_local", true);
    let bound = (2 * s + 1) as f64 * total;
    for (i, &v) in local_sums.iter().enumerate() {
        local_check.observe(i, v, bound, 1e-12 * (1.0 + bound));
    }
    Ok(FiniteLength {
        partial_sums,
        total,
        tail_max,
        tail_window: window,
        geometric_tail,
        local_sums,
        local_check,
    })
}

/// `C = (r^{s+1} − 1)/(r − 1) = Σ_{k=0}^{s} r^k`.
pub fn geometric_window_constant(r: f64, s: usize) -> Result<f64> {
    if !(r > 1.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!("r must exceed 1, got {r}")));
    }
    Ok((0..=s).map(|k| r.powi(k as i32)).sum())
}

/// Largest admissible proximal Lipschitz constant `(r² − 1)/(2 p r² C²)`.
pub fn smallness_threshold(r: f64, p: usize, s: usize) -> Result<f64> {
    let c = geometric_window_constant(r, s)?;
    Ok((r * r - 1.0) / (2.0 * p as f64 * r * r * c * c))
}
