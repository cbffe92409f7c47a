//! Dense design matrices, CSV ingestion and seeded synthetic instances.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("matrix must be nonempty".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension { expected: rows * cols, got: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::Dimension { expected: cols, got: bad.len() });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for k in 0..n {
            data[k * n + k] = 1.0;
        }
        Self { rows: n, cols: n, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| crate::model::dot(self.row(r), x)).collect()
    }

    /// `Aᵀ v`, accumulated over rows in ascending order.
    pub fn mul_transpose_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, &w) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += a * w;
            }
        }
        out
    }
}

/// Design matrix plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub a: DenseMatrix,
    pub y: Vec<f64>,
    /// Ground-truth coefficients for synthetic instances.
    pub planted: Option<Vec<f64>>,
}

/// Shape and noise of a generated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    /// Nonzeros in the planted coefficient vector.
    pub sparsity: usize,
    /// Noise standard deviation σ.
    pub noise: f64,
    pub seed: u64,
}

fn planted_instance(spec: &SyntheticSpec) -> Result<(DenseMatrix, Vec<f64>, ChaCha8Rng)> {
    if spec.sparsity > spec.d {
        return Err(Error::InvalidArgument(format!(
            "sparsity {} exceeds dimension {}",
            spec.sparsity, spec.d
        )));
    }
    if !(spec.noise >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise level must be >= 0, got {}", spec.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let data: Vec<f64> = (0..spec.n * spec.d).map(|_| rng.sample(StandardNormal)).collect();
    let a = DenseMatrix::new(spec.n, spec.d, data)?;
    let mut support = sample(&mut rng, spec.d, spec.sparsity).into_vec();
    support.sort_unstable();
    let mut planted = vec![0.0; spec.d];
    for k in support {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        planted[k] = sign * rng.random_range(1.0..2.0);
    }
    Ok((a, planted, rng))
}

/// Gaussian design, planted sparse coefficients, `y = A x* + σ ε`.
pub fn synthetic_regression(spec: &SyntheticSpec) -> Result<Dataset> {
    let (a, planted, mut rng) = planted_instance(spec)?;
    let y = a
        .mul_vec(&planted)
        .into_iter()
        .map(|v| v + spec.noise * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(Dataset { a, y, planted: Some(planted) })
}

/// Gaussian design with labels `sign(A x* + σ ε) ∈ {−1, +1}`.
pub fn synthetic_classification(spec: &SyntheticSpec) -> Result<Dataset> {
    let (a, planted, mut rng) = planted_instance(spec)?;
    let y = a
        .mul_vec(&planted)
        .into_iter()
        .map(|v| {
            let m = v + spec.noise * rng.sample::<f64, _>(StandardNormal);
            if m >= 0.0 {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    Ok(Dataset { a, y, planted: Some(planted) })
}

/// Dense CSV: one sample per row, label in the last column. A non-numeric
/// first row is treated as a header.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("{}:{}: {e}", path.display(), line + 1))),
        }
    }
    if rows.is_empty() {
        return Err(Error::Parse(format!("{}: no samples", path.display())));
    }
    let width = rows[0].len();
    if width < 2 {
        return Err(Error::Parse(format!("{}: need at least one feature and a label", path.display())));
    }
    let mut features = Vec::with_capacity(rows.len() * (width - 1));
    let mut y = Vec::with_capacity(rows.len());
    for (k, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::Parse(format!("{}: row {} has {} fields, expected {width}", path.display(), k + 1, row.len())));
        }
        features.extend_from_slice(&row[..width - 1]);
        y.push(row[width - 1]);
    }
    if let Some(k) = features.iter().chain(&y).position(|v| !v.is_finite()) {
        return Err(Error::Parse(format!("{}: non-finite value at position {k}", path.display())));
    }
    let a = DenseMatrix::new(rows.len(), width - 1, features)?;
    Ok(Dataset { a, y, planted: None })
}
