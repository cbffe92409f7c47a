//! Partitioned model vectors, iterate history and stale local views.
//!
//! The model `x ∈ R^d` is split into `p` contiguous blocks, one per worker.
//! Block `i` covers coordinates `offsets[i]..offsets[i + 1]`.

use std::collections::VecDeque;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How to split `d` coordinates across `p` workers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionStrategy {
    /// Sizes differ by at most one; the remainder goes to the lowest-indexed blocks.
    Even,
    Explicit(Vec<usize>),
}

/// Decomposition `R^d = R^{d_1} × … × R^{d_p}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn from_sizes(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Layout("at least one block is required".into()));
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Layout(format!("block {i} is empty")));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        for &s in &sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        Ok(Self { sizes, offsets })
    }

    /// Total dimension `d`.
    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Number of blocks (= workers) `p`.
    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn block_size(&self, i: usize) -> usize {
        self.sizes[i]
    }

    pub fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Index of the block containing coordinate `k`.
    pub fn block_of(&self, k: usize) -> usize {
        debug_assert!(k < self.dim());
        self.offsets.partition_point(|&o| o <= k) - 1
    }
}

/// Split `d` coordinates into `p` blocks.
pub fn partition(d: usize, p: usize, strategy: &PartitionStrategy) -> Result<BlockLayout> {
    if d == 0 || p == 0 {
        return Err(Error::Layout(format!("d and p must be positive (d={d}, p={p})")));
    }
    if p > d {
        return Err(Error::Layout(format!("more workers than coordinates (p={p} > d={d})")));
    }
    match strategy {
        PartitionStrategy::Even => {
            let base = d / p;
            let rem = d % p;
            let sizes = (0..p).map(|i| base + usize::from(i < rem)).collect();
            BlockLayout::from_sizes(sizes)
        }
        PartitionStrategy::Explicit(sizes) => {
            if sizes.len() != p {
                return Err(Error::Layout(format!(
                    "{} explicit sizes given for p={p} blocks",
                    sizes.len()
                )));
            }
            let total: usize = sizes.iter().sum();
            if total != d {
                return Err(Error::Layout(format!("explicit sizes sum to {total}, expected {d}")));
            }
            BlockLayout::from_sizes(sizes.clone())
        }
    }
}

/// A dense model vector tied to its block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelVector {
    values: Vec<f64>,
    layout: Arc<BlockLayout>,
}

impl ModelVector {
    pub fn new(values: Vec<f64>, layout: Arc<BlockLayout>) -> Result<Self> {
        if values.len() != layout.dim() {
            return Err(Error::Dimension { expected: layout.dim(), got: values.len() });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("entry {k} is not finite")));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Arc<BlockLayout>) -> Self {
        Self { values: vec![0.0; layout.dim()], layout }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.values[self.layout.range(i)]
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }
}

/// Append-only record of the global iterates `x(0), x(1), …`.
///
/// In windowed mode only the most recent `retain` iterates are kept; older
/// clocks become unavailable but clock numbering stays global.
#[derive(Debug, Clone)]
pub struct History {
    layout: Arc<BlockLayout>,
    iterates: VecDeque<Vec<f64>>,
    first_clock: usize,
    retain: Option<usize>,
}

impl History {
    /// Full history seeded with `x0`.
    pub fn new(x0: ModelVector) -> Self {
        let layout = x0.layout.clone();
        let mut iterates = VecDeque::new();
        iterates.push_back(x0.values);
        Self { layout, iterates, first_clock: 0, retain: None }
    }

    /// History keeping only the last `retain` iterates (at least 1).
    pub fn windowed(x0: ModelVector, retain: usize) -> Self {
        let mut h = Self::new(x0);
        h.retain = Some(retain.max(1));
        h
    }

    /// Rebuild a full history from raw iterates, e.g. after loading from disk.
    pub fn from_iterates(layout: Arc<BlockLayout>, iterates: Vec<Vec<f64>>) -> Result<Self> {
        if iterates.is_empty() {
            return Err(Error::InvalidArgument("history needs an initial iterate".into()));
        }
        for x in &iterates {
            if x.len() != layout.dim() {
                return Err(Error::Dimension { expected: layout.dim(), got: x.len() });
            }
        }
        Ok(Self { layout, iterates: iterates.into(), first_clock: 0, retain: None })
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn is_full(&self) -> bool {
        self.first_clock == 0
    }

    /// Clock of the newest iterate.
    pub fn latest_clock(&self) -> usize {
        self.first_clock + self.iterates.len() - 1
    }

    /// Oldest clock still retained.
    pub fn first_clock(&self) -> usize {
        self.first_clock
    }

    pub fn latest(&self) -> &[f64] {
        self.iterates.back().unwrap()
    }

    pub fn get(&self, t: usize) -> Option<&[f64]> {
        t.checked_sub(self.first_clock)
            .and_then(|k| self.iterates.get(k))
            .map(Vec::as_slice)
    }

    pub fn push(&mut self, x: Vec<f64>) -> Result<()> {
        if x.len() != self.layout.dim() {
            return Err(Error::Dimension { expected: self.layout.dim(), got: x.len() });
        }
        self.iterates.push_back(x);
        if let Some(retain) = self.retain {
            while self.iterates.len() > retain {
                self.iterates.pop_front();
                self.first_clock += 1;
            }
        }
        Ok(())
    }

    /// `‖x(t+1) − x(t)‖`, when both iterates are retained.
    pub fn step_norm(&self, t: usize) -> Option<f64> {
        Some(dist(self.get(t + 1)?, self.get(t)?))
    }

    /// Iterate over `(clock, iterate)` pairs that are retained.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.iterates
            .iter()
            .enumerate()
            .map(move |(k, x)| (self.first_clock + k, x.as_slice()))
    }

    /// Write the local view for `worker` at clock `t` into `out`.
    pub fn assemble_into(&self, delays: &[usize], worker: usize, t: usize, out: &mut [f64]) -> Result<()> {
        let p = self.layout.num_blocks();
        if delays.len() != p {
            return Err(Error::Dimension { expected: p, got: delays.len() });
        }
        if worker >= p {
            return Err(Error::ScheduleViolation(format!("worker {worker} out of range (p={p})")));
        }
        if delays[worker] != t {
            return Err(Error::ScheduleViolation(format!(
                "worker {worker} must read its own block at clock {t}, got {}",
                delays[worker]
            )));
        }
        for (j, &tau) in delays.iter().enumerate() {
            if tau > t {
                return Err(Error::ScheduleViolation(format!(
                    "worker {worker} reads block {j} from future clock {tau} at clock {t}"
                )));
            }
            let src = self.get(tau).ok_or_else(|| {
                Error::ScheduleViolation(format!("iterate for clock {tau} is not available"))
            })?;
            let r = self.layout.range(j);
            out[r.clone()].copy_from_slice(&src[r]);
        }
        Ok(())
    }
}

/// Assemble `x^i(t) = (x_1(τ_1), …, x_p(τ_p))` from the history.
pub fn assemble_local_view(history: &History, delays: &[usize], worker: usize, t: usize) -> Result<ModelVector> {
    let mut out = vec![0.0; history.layout.dim()];
    history.assemble_into(delays, worker, t, &mut out)?;
    Ok(ModelVector { values: out, layout: history.layout.clone() })
}

/// Largest admissible step size bound `1 / (L (1 + 2 √p s))`. Valid steps lie strictly below it.
pub fn max_step_size(lipschitz: f64, p: usize, s: usize) -> Result<f64> {
    if !(lipschitz > 0.0) || !lipschitz.is_finite() {
        return Err(Error::InvalidArgument(format!("Lipschitz constant must be positive, got {lipschitz}")));
    }
    if p == 0 {
        return Err(Error::InvalidArgument("p must be at least 1".into()));
    }
    Ok(1.0 / (lipschitz * (1.0 + 2.0 * (p as f64).sqrt() * s as f64)))
}

/// `(a − b)_+` on clocks.
pub fn sat_sub(a: usize, b: usize) -> usize {
    a.saturating_sub(b)
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dist(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}
