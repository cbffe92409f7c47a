//! End-to-end analysis of a trace into a serializable report.

use serde::{Deserialize, Serialize};

use super::gaps::{check_gap_recursion, eb_coefficients, gap_a, gap_b_series, rate_fit, EbParams, RateFit};
use super::lipschitz::{finite_length, prox_lipschitz, support_stability, FiniteLength, ProxLipschitz};
use super::residuals::{
    check_view_bounds, check_trace_consistency, square_summability, subgradient_residual, sufficient_decrease,
    SufficientDecrease,
};
use super::CheckResult;
use crate::engine::{Problem, Trace};
use crate::error::{Error, Result};
use crate::model::dist;
use crate::prox::Regularizer;

/// Where `F*` came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapKind {
    /// High-precision serial solve.
    #[default]
    Reference,
    /// Given by the caller.
    Supplied,
    /// Best objective seen in the trace; `A` is a relative gap only.
    Relative,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EbReport {
    pub kappa: f64,
    /// `"supplied"` or `"empirical"`.
    pub kappa_source: String,
    pub a_eta: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunReport {
    pub problem_id: String,
    pub eta: f64,
    pub lipschitz: f64,
    pub p: usize,
    pub s: usize,
    pub horizon: usize,
    pub beyond_step_bound: bool,
    pub f_star: Option<f64>,
    pub gap_kind: GapKind,
    pub a_series: Vec<f64>,
    pub b_series: Vec<f64>,
    pub residual_series: Vec<f64>,
    pub sufficient_decrease: Option<SufficientDecrease>,
    pub rate_fit: Option<RateFit>,
    pub eb: Option<EbReport>,
    pub prox_lipschitz: Option<ProxLipschitz>,
    pub support_stabilized_at: Option<usize>,
    pub finite_length: Option<FiniteLength>,
    pub checks: Vec<CheckResult>,
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn hard_failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| c.fails_hard()).collect()
    }

    pub fn all_hard_passed(&self) -> bool {
        self.hard_failures().is_empty()
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub f_star: Option<f64>,
    pub kappa: Option<f64>,
    /// Fraction of the horizon treated as "not yet large t".
    pub burn_in: f64,
    pub reference_tol: f64,
    pub reference_max_iter: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self { f_star: None, kappa: None, burn_in: 0.5, reference_tol: 1e-12, reference_max_iter: 2_000_000 }
    }
}

/// Serial proximal gradient with step `0.9 / L` until the residual drops to
/// `tol`. Returns the solution and its objective.
pub fn reference_solution(problem: &Problem, x0: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64)> {
    let eta = 0.9 / problem.lipschitz();
    let mut x = x0.to_vec();
    for k in 0..max_iter {
        if k % 10 == 0 && problem.prox_residual(&x)? <= tol {
            let f = problem.objective(&x);
            return Ok((x, f));
        }
        x = problem.prox_gradient_map(&x, eta)?;
    }
    Err(Error::NoConvergence(max_iter))
}

/// `κ̂ = max_{t ≥ from} ‖x(t) − x*‖ / r(x(t))`, skipping residuals below
/// `1e-10` where the ratio is rounding noise.
pub fn estimate_kappa(problem: &Problem, trace: &Trace, x_star: &[f64], from_clock: usize) -> Result<Option<f64>> {
    let mut best: Option<f64> = None;
    for (t, x) in trace.iterates.iter() {
        if t < from_clock {
            continue;
        }
        let r = problem.prox_residual(x)?;
        if r > 1e-10 {
            let k = dist(x, x_star) / r;
            best = Some(best.map_or(k, |b| b.max(k)));
        }
    }
    Ok(best)
}

/// Run every diagnostic on a trace.
pub fn analyze(problem: &Problem, trace: &Trace, opts: &AnalysisOptions) -> Result<RunReport> {
    let horizon = trace.horizon();
    let s = trace.schedule.staleness();
    let p = trace.schedule.num_workers();
    let lipschitz = problem.lipschitz();
    let convex = problem.is_convex_regularizer();
    let burn_clock = (opts.burn_in * horizon as f64).floor() as usize;
    let mut report = RunReport {
        problem_id: trace.problem_id.clone(),
        eta: trace.eta,
        lipschitz,
        p,
        s,
        horizon,
        beyond_step_bound: trace.beyond_step_bound,
        residual_series: trace.residuals.clone(),
        ..RunReport::default()
    };
    if trace.beyond_step_bound {
        report.notes.push("step size is not below the theoretical bound; no guarantees apply".into());
    }

    report.checks.push(check_trace_consistency(trace)?);
    let (incon, local) = check_view_bounds(trace)?;
    report.checks.push(incon);
    report.checks.push(local);

    let mut x_star = None;
    let f_star = match opts.f_star {
        Some(f) => {
            report.gap_kind = GapKind::Supplied;
            f
        }
        None if convex => {
            let (xs, f) = reference_solution(problem, trace.iterates.get(0).unwrap(), opts.reference_tol, opts.reference_max_iter)?;
            x_star = Some(xs);
            report.gap_kind = GapKind::Reference;
            f
        }
        None => {
            report.gap_kind = GapKind::Relative;
            report.notes.push("nonconvex regularizer: gap measured against the best observed objective".into());
            trace.objectives.iter().copied().fold(f64::INFINITY, f64::min)
        }
    };
    report.f_star = Some(f_star);
    report.a_series = gap_a(&trace.objectives, f_star);
    report.b_series = gap_b_series(&trace.step_norms, s);

    let mut summable = square_summability(trace, f_star, lipschitz);
    if report.gap_kind == GapKind::Relative {
        summable.hard = false;
    }
    report.checks.push(summable);
    report.checks.push(subgradient_residual(trace, problem)?.check);

    let kappa = match (opts.kappa, &x_star) {
        (Some(k), _) => Some((k, "supplied")),
        (None, Some(xs)) => estimate_kappa(problem, trace, xs, burn_clock)?.map(|k| (k, "empirical")),
        _ => None,
    };
    let params = EbParams { kappa: kappa.map_or(0.0, |k| k.0), eta: trace.eta, lipschitz, p, s };
    let (first, second) = check_gap_recursion(&trace.objectives, &trace.step_norms, f_star, &params, burn_clock, convex && kappa.is_some())?;
    report.checks.push(first);
    if let Some(second) = second {
        report.checks.push(second);
    }
    if let Some((k, source)) = kappa {
        let (a_eta, b) = eb_coefficients(lipschitz, p, s, k, trace.eta)?;
        report.eb = Some(EbReport { kappa: k, kappa_source: source.into(), a_eta, b });
    }

    let sd = sufficient_decrease(&trace.objectives, &trace.step_norms, burn_clock);
    let mut sd_check = CheckResult::new("sufficient_decrease", trace.beyond_step_bound);
    if let (Some(alpha), Some(t)) = (sd.alpha, sd.clock) {
        sd_check.observe(t, -alpha, 0.0, 0.0);
    } else {
        sd_check = sd_check.with_note("vacuous: no step above the rounding floor");
    }
    report.checks.push(sd_check);
    report.sufficient_decrease = Some(sd);

    match rate_fit(&report.a_series, s, opts.burn_in) {
        Ok(fit) => report.rate_fit = Some(fit),
        Err(e) => report.notes.push(format!("rate fit skipped: {e}")),
    }

    let l0_blocks: Vec<usize> = problem
        .regularizers()
        .iter()
        .enumerate()
        .filter(|(_, r)| matches!(r, Regularizer::L0 { .. }))
        .map(|(i, _)| i)
        .collect();
    let pl_from = if l0_blocks.is_empty() {
        Some(0)
    } else {
        let t0 = support_stability(&trace.iterates, trace.iterates.layout(), &l0_blocks);
        report.support_stabilized_at = t0;
        if t0.is_none() {
            report.notes.push("support not stabilized".into());
        }
        t0
    };
    if let Some(from) = pl_from {
        let pl = prox_lipschitz(trace, problem, trace.eta, from)?;
        let mut chk = CheckResult::new("prox_lipschitz", false);
        if let (Some(e), Some(b)) = (pl.estimate, pl.bound) {
            chk.observe(from, e, b, 1e-8);
        }
        report.checks.push(chk);
        report.prox_lipschitz = Some(pl);
    }

    let fl = finite_length(trace)?;
    report.checks.push(fl.local_check.clone());
    report.finite_length = Some(fl);
    Ok(report)
}

