//! Per-block proximal operators for separable regularizers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelVector;

/// Regularizer `g_i` attached to one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    /// `λ ‖x‖₁`
    L1 { weight: f64 },
    /// `λ ‖x‖²`
    SquaredL2 { weight: f64 },
    /// `λ ‖x‖₀`
    L0 { weight: f64 },
    /// Indicator of `[lo, hi]` applied to every coordinate.
    Box { lo: f64, hi: f64 },
    Zero,
}

impl Regularizer {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Regularizer::L1 { weight } | Regularizer::SquaredL2 { weight } | Regularizer::L0 { weight } => {
                if !(weight >= 0.0) || !weight.is_finite() {
                    return Err(Error::InvalidArgument(format!("regularizer weight must be >= 0, got {weight}")));
                }
            }
            Regularizer::Box { lo, hi } => {
                if !(lo <= hi) {
                    return Err(Error::InvalidArgument(format!("box bounds out of order: [{lo}, {hi}]")));
                }
            }
            Regularizer::Zero => {}
        }
        Ok(())
    }

    /// Convex kinds have a single-valued, nonexpansive prox.
    pub fn is_convex(&self) -> bool {
        !matches!(self, Regularizer::L0 { .. })
    }

    /// Lipschitz constant of `∇g` when `g` is smooth.
    pub fn gradient_lipschitz(&self) -> Option<f64> {
        match *self {
            Regularizer::SquaredL2 { weight } => Some(2.0 * weight),
            Regularizer::Zero => Some(0.0),
            _ => None,
        }
    }

    /// `g(x)` for one coordinate.
    pub fn scalar_value(&self, v: f64) -> f64 {
        match *self {
            Regularizer::L1 { weight } => weight * v.abs(),
            Regularizer::SquaredL2 { weight } => weight * v * v,
            Regularizer::L0 { weight } => {
                if v != 0.0 {
                    weight
                } else {
                    0.0
                }
            }
            Regularizer::Box { lo, hi } => {
                if (lo..=hi).contains(&v) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Regularizer::Zero => 0.0,
        }
    }

    pub fn value(&self, block: &[f64]) -> f64 {
        block.iter().map(|&v| self.scalar_value(v)).sum()
    }

    /// Scalar prox of `g` with step `eta`. Assumes `eta > 0`.
    #[inline]
    pub fn prox_scalar(&self, z: f64, eta: f64) -> f64 {
        match *self {
            Regularizer::L1 { weight } => {
                let shrink = z.abs() - eta * weight;
                if shrink > 0.0 {
                    z.signum() * shrink
                } else {
                    0.0
                }
            }
            Regularizer::SquaredL2 { weight } => z / (1.0 + 2.0 * eta * weight),
            Regularizer::L0 { weight } => {
                // boundary |z| = threshold maps to 0
                if z.abs() > (2.0 * eta * weight).sqrt() {
                    z
                } else {
                    0.0
                }
            }
            Regularizer::Box { lo, hi } => z.clamp(lo, hi),
            Regularizer::Zero => z,
        }
    }
}

fn check_step(eta: f64) -> Result<()> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::StepSize(format!("step must be positive, got {eta}")));
    }
    Ok(())
}

/// `argmin_z' g(z') + ‖z' − z‖² / (2η)` for one block.
pub fn prox_block(reg: &Regularizer, z: &[f64], eta: f64) -> Result<Vec<f64>> {
    check_step(eta)?;
    Ok(z.iter().map(|&v| reg.prox_scalar(v, eta)).collect())
}

/// In-place variant used by the update kernels.
pub(crate) fn prox_block_in_place(reg: &Regularizer, z: &mut [f64], eta: f64) {
    for v in z.iter_mut() {
        *v = reg.prox_scalar(*v, eta);
    }
}

/// Blockwise prox `(prox_{g_1}(x_1), …, prox_{g_p}(x_p))`.
pub fn prox_map(regs: &[Regularizer], x: &ModelVector, eta: f64) -> Result<ModelVector> {
    check_step(eta)?;
    let layout = x.layout();
    if regs.len() != layout.num_blocks() {
        return Err(Error::Dimension { expected: layout.num_blocks(), got: regs.len() });
    }
    let mut out = x.values().to_vec();
    for (i, reg) in regs.iter().enumerate() {
        prox_block_in_place(reg, &mut out[layout.range(i)], eta);
    }
    ModelVector::new(out, layout.clone())
}

/// Grid-search prox for a scalar regularizer, used as a test oracle.
///
/// The grid is `{k·h : a ≤ k·h ≤ b}`, so zero is on it whenever `a ≤ 0 ≤ b`.
/// Ties are broken toward the smallest magnitude.
pub fn prox_bruteforce(g_value: impl Fn(f64) -> f64, z: f64, eta: f64, range: (f64, f64), grid_step: f64) -> Result<f64> {
    check_step(eta)?;
    let (a, b) = range;
    if !(grid_step > 0.0) {
        return Err(Error::InvalidArgument(format!("grid step must be positive, got {grid_step}")));
    }
    if !(b > a) {
        return Err(Error::InvalidArgument(format!("empty range [{a}, {b}]")));
    }
    let k_lo = (a / grid_step).ceil() as i64;
    let k_hi = (b / grid_step).floor() as i64;
    if k_lo > k_hi {
        return Err(Error::InvalidArgument("range contains no grid points".into()));
    }
    let mut best = (f64::INFINITY, f64::INFINITY);
    for k in k_lo..=k_hi {
        let zp = k as f64 * grid_step;
        let obj = g_value(zp) + (zp - z) * (zp - z) / (2.0 * eta);
        if obj < best.0 || (obj == best.0 && zp.abs() < best.1.abs()) {
            best = (obj, zp);
        }
    }
    if !best.1.is_finite() {
        return Err(Error::InvalidArgument("objective is infinite on the whole grid".into()));
    }
    Ok(best.1)
}
