//! Quantities bounded by the convergence theory, and checks of each bound on
//! concrete traces.
//!
//! Every check reports its worst violation `max(lhs − rhs)`, so a passing
//! check with a small margin is distinguishable from a comfortable one.

mod gaps;
mod lipschitz;
mod report;
mod residuals;

use serde::{Deserialize, Serialize};

pub use gaps::{check_gap_recursion, eb_coefficients, gap_a, gap_b, gap_b_series, rate_fit, EbParams, RateFit};
pub use lipschitz::{
    finite_length, prox_displacement, prox_lipschitz, prox_lipschitz_on_pairs, smallness_threshold,
    support_stability, geometric_window_constant, trajectory_pairs, FiniteLength, ProxLipschitz,
};
pub use report::{analyze, estimate_kappa, reference_solution, AnalysisOptions, EbReport, GapKind, RunReport};
pub use residuals::{
    check_view_bounds, check_trace_consistency, prox_residual, square_summability, subgradient_residual,
    sufficient_decrease, SubgradientSeries, SufficientDecrease,
};

/// Outcome of one inequality checked along a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Hard checks gate the exit code; advisory ones are reported only.
    pub hard: bool,
    /// Number of instances evaluated.
    pub checked: usize,
    pub violations: usize,
    /// Largest `lhs − rhs − slack`; `None` when nothing was evaluated.
    pub worst: Option<f64>,
    /// Clock of the worst instance.
    pub worst_clock: Option<usize>,
    pub note: String,
}

impl Default for CheckResult {
    fn default() -> Self {
        Self {
            name: String::new(),
            passed: true,
            hard: true,
            checked: 0,
            violations: 0,
            worst: None,
            worst_clock: None,
            note: String::new(),
        }
    }
}

impl CheckResult {
    pub fn new(name: impl Into<String>, hard: bool) -> Self {
        Self { name: name.into(), hard, ..Self::default() }
    }

    /// Record `lhs ≤ rhs + slack` at `clock`.
    pub fn observe(&mut self, clock: usize, lhs: f64, rhs: f64, slack: f64) {
        let excess = lhs - rhs - slack;
        self.checked += 1;
        // NaN counts as a violation
        if !(excess <= 0.0) {
            self.violations += 1;
            self.passed = false;
        }
        let excess = if excess.is_nan() { f64::MAX } else { excess.clamp(-f64::MAX, f64::MAX) };
        if self.worst.is_none_or(|w| excess > w) {
            self.worst = Some(excess);
            self.worst_clock = Some(clock);
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    pub fn fails_hard(&self) -> bool {
        self.hard && !self.passed
    }
}
