//! Smooth losses with full and partial gradients.
//!
//! Both shipped losses are averaged over samples:
//!
//! * least squares `f(x) = ‖Ax − y‖² / (2n)`, `L = λ_max(AᵀA) / n`
//! * logistic `f(x) = (1/n) Σ log(1 + exp(−y_r a_rᵀx))`, `L = λ_max(AᵀA) / (4n)`
//!
//! Every gradient coordinate is accumulated over samples in ascending order,
//! whatever coordinate range is requested, so a partial gradient is bitwise
//! equal to the matching slice of the full gradient.

use std::fmt::Debug;
use std::ops::Range;

use crate::data::{Dataset, DenseMatrix};
use crate::error::{Error, Result};
use crate::model::{dot, norm};

/// A differentiable loss with `L`-Lipschitz gradient.
pub trait SmoothLoss: Debug + Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Write `∂f/∂x_k` for `k ∈ range` into `out` (`out.len() == range.len()`).
    fn partial_gradient_into(&self, x: &[f64], range: Range<usize>, out: &mut [f64]);

    /// Upper bound on the Lipschitz constant of `∇f`.
    fn lipschitz(&self) -> f64;

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.partial_gradient(x, 0..self.dim())
    }

    fn partial_gradient(&self, x: &[f64], range: Range<usize>) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        if range.end > self.dim() || range.start > range.end {
            return Err(Error::InvalidArgument(format!("coordinate range {range:?} out of bounds")));
        }
        let mut out = vec![0.0; range.len()];
        self.partial_gradient_into(x, range, &mut out);
        Ok(out)
    }
}

/// Which loss to build from a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    LeastSquares,
    Logistic,
}

pub fn build_loss(kind: LossKind, data: Dataset) -> Result<Box<dyn SmoothLoss>> {
    Ok(match kind {
        LossKind::LeastSquares => Box::new(LeastSquares::new(data.a, data.y)?),
        LossKind::Logistic => Box::new(Logistic::new(data.a, data.y)?),
    })
}

fn check_labels(a: &DenseMatrix, y: &[f64]) -> Result<()> {
    if y.len() != a.rows() {
        return Err(Error::Dimension { expected: a.rows(), got: y.len() });
    }
    Ok(())
}

/// Accumulate `(1/n) Σ_r A[r, k] w_r` for `k ∈ range`.
fn weighted_columns(a: &DenseMatrix, w: &[f64], range: Range<usize>, out: &mut [f64]) {
    out.fill(0.0);
    for (r, &wr) in w.iter().enumerate() {
        let row = &a.row(r)[range.clone()];
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v * wr;
        }
    }
    let inv_n = 1.0 / a.rows() as f64;
    for o in out.iter_mut() {
        *o *= inv_n;
    }
}

#[derive(Debug, Clone)]
pub struct LeastSquares {
    a: DenseMatrix,
    y: Vec<f64>,
    lipschitz: f64,
}

impl LeastSquares {
    pub fn new(a: DenseMatrix, y: Vec<f64>) -> Result<Self> {
        check_labels(&a, &y)?;
        let lipschitz = lipschitz_estimate(&a, 1.0 / a.rows() as f64)?;
        Ok(Self { a, y, lipschitz })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.a
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        (0..self.a.rows()).map(|r| dot(self.a.row(r), x) - self.y[r]).collect()
    }
}

impl SmoothLoss for LeastSquares {
    fn dim(&self) -> usize {
        self.a.cols()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let r = self.residual(x);
        0.5 * dot(&r, &r) / self.a.rows() as f64
    }

    fn partial_gradient_into(&self, x: &[f64], range: Range<usize>, out: &mut [f64]) {
        let r = self.residual(x);
        weighted_columns(&self.a, &r, range, out);
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

#[derive(Debug, Clone)]
pub struct Logistic {
    a: DenseMatrix,
    y: Vec<f64>,
    lipschitz: f64,
}

impl Logistic {
    pub fn new(a: DenseMatrix, y: Vec<f64>) -> Result<Self> {
        check_labels(&a, &y)?;
        if let Some(r) = y.iter().position(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::InvalidArgument(format!("logistic label {r} is {}, expected ±1", y[r])));
        }
        let lipschitz = lipschitz_estimate(&a, 0.25 / a.rows() as f64)?;
        Ok(Self { a, y, lipschitz })
    }

    fn margins(&self, x: &[f64]) -> Vec<f64> {
        (0..self.a.rows()).map(|r| self.y[r] * dot(self.a.row(r), x)).collect()
    }
}

/// `log(1 + exp(v))` without overflow.
fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

/// `1 / (1 + exp(−v))` without overflow.
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl SmoothLoss for Logistic {
    fn dim(&self) -> usize {
        self.a.cols()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let m = self.margins(x);
        m.iter().map(|&v| softplus(-v)).sum::<f64>() / self.a.rows() as f64
    }

    fn partial_gradient_into(&self, x: &[f64], range: Range<usize>, out: &mut [f64]) {
        let w: Vec<f64> = self
            .margins(x)
            .iter()
            .zip(&self.y)
            .map(|(&m, &y)| -y * sigmoid(-m))
            .collect();
        weighted_columns(&self.a, &w, range, out);
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITER: usize = 100_000;
const LIPSCHITZ_INFLATION: f64 = 1.0 + 1e-6;

/// `scale · λ_max(AᵀA)` by power iteration, inflated by `1 + 1e-6` to cover
/// the iteration error.
pub fn lipschitz_estimate(a: &DenseMatrix, scale: f64) -> Result<f64> {
    let d = a.cols();
    // fixed, non-degenerate start vector
    let mut v: Vec<f64> = (0..d).map(|k| 1.0 + ((k as f64 + 1.0) * 0.618_033_988_749_895).fract()).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|e| *e /= nv);
    let mut prev = f64::NAN;
    for _ in 0..POWER_MAX_ITER {
        let w = a.mul_transpose_vec(&a.mul_vec(&v));
        let rayleigh = dot(&v, &w);
        let nw = norm(&w);
        if nw == 0.0 {
            return Err(Error::InvalidArgument("design matrix has zero curvature".into()));
        }
        if (rayleigh - prev).abs() <= POWER_TOL * rayleigh.abs() {
            return Ok(scale * rayleigh * LIPSCHITZ_INFLATION);
        }
        prev = rayleigh;
        v = w.into_iter().map(|e| e / nw).collect();
    }
    Err(Error::NoConvergence(POWER_MAX_ITER))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn least_squares_identity() {
        let ls = LeastSquares::new(DenseMatrix::identity(2), vec![0.0, 0.0]).unwrap();
        assert_eq!(ls.gradient(&[2.0, 4.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(ls.value(&[2.0, 4.0]), 5.0);
        assert!((ls.lipschitz() - 0.5 * (1.0 + 1e-6)).abs() < 1e-14);
    }

    #[test]
    fn least_squares_diagonal() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let ls = LeastSquares::new(a, vec![1.0, 2.0]).unwrap();
        assert_eq!(ls.gradient(&[0.0, 0.0]).unwrap(), vec![-0.5, -2.0]);
        assert!((ls.lipschitz() / (2.0 * (1.0 + 1e-6)) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn logistic_at_origin() {
        let a = DenseMatrix::from_rows(&[vec![1.0, -3.0], vec![0.5, 2.0], vec![7.0, 0.0]]).unwrap();
        let lg = Logistic::new(a, vec![1.0, -1.0, 1.0]).unwrap();
        assert!((lg.value(&[0.0, 0.0]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(Logistic::new(DenseMatrix::identity(2), vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn partial_gradient_matches_full_slice() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0, -1.0], vec![0.3, -0.7, 4.0]]).unwrap();
        let ls = LeastSquares::new(a, vec![0.5, -1.0]).unwrap();
        let x = [0.1, -0.2, 0.3];
        let full = ls.gradient(&x).unwrap();
        assert_eq!(ls.partial_gradient(&x, 1..3).unwrap(), full[1..3].to_vec());
        assert!(ls.partial_gradient(&x, 2..4).is_err());
        assert!(ls.gradient(&[0.0]).is_err());
    }

    #[test]
    fn zero_matrix_has_no_lipschitz_constant() {
        let a = DenseMatrix::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(LeastSquares::new(a, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
