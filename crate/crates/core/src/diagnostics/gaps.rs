//! Objective gap `A(t)`, windowed step energy `B(t)`, the two gap recursions
//! and linear-rate fitting.

use serde::{Deserialize, Serialize};

use super::CheckResult;
use crate::error::{Error, Result};
use crate::model::sat_sub;

/// `A(t) = F(x(t)) − F*`.
pub fn gap_a(objectives: &[f64], f_star: f64) -> Vec<f64> {
    objectives.iter().map(|f| f - f_star).collect()
}

/// `B(t) = Σ_{k=(t−s−1)_+}^{t−1} ‖x(k+1) − x(k)‖²`.
pub fn gap_b(step_norms: &[f64], t: usize, s: usize) -> f64 {
    step_norms[sat_sub(t, s + 1)..t].iter().fold(0.0, |acc, v| acc + v * v)
}

/// `B(t)` for `t = 0..=T`.
pub fn gap_b_series(step_norms: &[f64], s: usize) -> Vec<f64> {
    (0..=step_norms.len()).map(|t| gap_b(step_norms, t, s)).collect()
}

/// Constants entering the error-bound recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EbParams {
    pub kappa: f64,
    pub eta: f64,
    pub lipschitz: f64,
    pub p: usize,
    pub s: usize,
}

/// `(a_η, b)` with
/// `a_η = L + 4 + 8psL² + 4psκL²(L+4) + (2/η²)(2 + 4κ + κL)` and
/// `b = 8psL² + 4psκL²(L+4)`.
pub fn eb_coefficients(lipschitz: f64, p: usize, s: usize, kappa: f64, eta: f64) -> Result<(f64, f64)> {
    if !(eta > 0.0) {
        return Err(Error::StepSize(format!("step must be positive, got {eta}")));
    }
    if !(kappa >= 0.0) {
        return Err(Error::InvalidArgument(format!("kappa must be >= 0, got {kappa}")));
    }
    let l = lipschitz;
    let ps = (p * s) as f64;
    let b = 8.0 * ps * l * l + 4.0 * ps * kappa * l * l * (l + 4.0);
    let a = l + 4.0 + b + 2.0 / (eta * eta) * (2.0 + 4.0 * kappa + kappa * l);
    Ok((a, b))
}

/// Check both gap recursions at every admissible `t`.
///
/// The first, `A(t+s+1) ≤ A(t) − ½(1/η − L − 2sL√p) B(t+s+1) + ½ sL√p B(t)`,
/// is evaluated for all `t ≥ s+1`. The second, `A(t+s+1) ≤ a_η B(t+s+1) + b B(t)`,
/// only from `burn_in` on and only when `convex` holds. Both use a rounding
/// slack of `1e-12 (1 + |F|)`.
pub fn check_gap_recursion(
    objectives: &[f64],
    step_norms: &[f64],
    f_star: f64,
    params: &EbParams,
    burn_in: usize,
    convex: bool,
) -> Result<(CheckResult, Option<CheckResult>)> {
    let EbParams { kappa, eta, lipschitz: l, p, s } = *params;
    let sp = s as f64 * l * (p as f64).sqrt();
    let a = gap_a(objectives, f_star);
    let b = gap_b_series(step_norms, s);
    let horizon = step_norms.len();
    let slack = |t: usize| 1e-12 * (1.0 + objectives[t].abs().max(f_star.abs()));

    let mut first = CheckResult::new("gap_recursion_first", true);
    let mut t = s + 1;
    while t + s < horizon {
        let u = t + s + 1;
        let rhs = a[t] - 0.5 * (1.0 / eta - l - 2.0 * sp) * b[u] + 0.5 * sp * b[t];
        first.observe(t, a[u], rhs, slack(u));
        t += 1;
    }

    let second = if convex {
        let (a_eta, b_coef) = eb_coefficients(l, p, s, kappa, eta)?;
        let mut chk = CheckResult::new("gap_recursion_second", false)
            .with_note(format!("kappa={kappa:e}, burn-in clock {burn_in}"));
        let mut t = burn_in.max(s + 1);
        while t + s < horizon {
            let u = t + s + 1;
            chk.observe(t, a[u], a_eta * b[u] + b_coef * b[t], slack(u));
            t += 1;
        }
        Some(chk)
    } else {
        None
    };
    Ok((first, second))
}

/// Least-squares fit `log A(r(s+1)) ≈ log C₁ + r log ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub c1: f64,
    pub rho: f64,
    pub r_squared: f64,
    pub points: usize,
    /// Period index `r` of the first fitted point.
    pub first_period: usize,
}

impl RateFit {
    /// `ρ < 1` on a fit that explains the data.
    pub fn is_linear_rate(&self) -> bool {
        self.rho < 1.0
    }
}

const RATE_FLOOR: f64 = 1e-14;
const RATE_MIN_POINTS: usize = 5;

/// Fit a geometric decay to `A` sampled every `s+1` clocks.
///
/// Samples are used up to the first `A < 1e-14`; the leading `burn_in`
/// fraction of those is discarded.
pub fn rate_fit(a_series: &[f64], s: usize, burn_in: f64) -> Result<RateFit> {
    if !(0.0..1.0).contains(&burn_in) {
        return Err(Error::InvalidArgument(format!("burn-in fraction must lie in [0, 1), got {burn_in}")));
    }
    let period = s + 1;
    let usable: Vec<f64> = a_series
        .iter()
        .step_by(period)
        .take_while(|&&v| v >= RATE_FLOOR)
        .copied()
        .collect();
    let skip = (burn_in * usable.len() as f64).floor() as usize;
    let pts: Vec<(f64, f64)> = usable
        .iter()
        .enumerate()
        .skip(skip)
        .map(|(r, v)| (r as f64, v.ln()))
        .collect();
    if pts.len() < RATE_MIN_POINTS {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs {RATE_MIN_POINTS} points above {RATE_FLOOR:e}, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(RateFit { c1: intercept.exp(), rho: slope.exp(), r_squared, points: pts.len(), first_period: skip })
}
