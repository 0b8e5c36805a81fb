//! Collocation grids on the periodic box, uniform quadrature, and random
//! parameter subsets.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TengError};
use crate::rng::CounterRng;

/// Tensor-product grid with uniform quadrature weight.
///
/// Rows of `points` are ordered lexicographically with the last dimension
/// varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationGrid {
    dims: usize,
    n_per_dim: usize,
    lengths: Vec<f64>,
    points: Array2<f64>,
    weight: f64,
}

impl CollocationGrid {
    /// Arbitrary point set with a single shared weight. Used for toy problems
    /// (including zero-dimensional ones) that do not live on a tensor grid.
    pub fn from_points(points: Array2<f64>, weight: f64) -> Result<Self> {
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(TengError::InvalidConfig(format!(
                "quadrature weight must be positive, got {weight}"
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(TengError::NonFiniteInput("grid points".into()));
        }
        let dims = points.ncols();
        Ok(Self {
            dims,
            n_per_dim: points.nrows(),
            lengths: vec![],
            points,
            weight,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn n_per_dim(&self) -> usize {
        self.n_per_dim
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    /// Discrete L² inner product `weight · Σ f_p g_p`.
    pub fn inner(&self, f: ArrayView1<f64>, g: ArrayView1<f64>) -> Result<f64> {
        l2_inner(self, f, g)
    }

    /// Squared discrete L² norm.
    pub fn norm_sq(&self, f: ArrayView1<f64>) -> Result<f64> {
        l2_inner(self, f, f)
    }
}

/// Uniform periodic grid over `Π [0, L_i)` with `n_per_dim` points per axis.
pub fn tensor_grid(dims: usize, n_per_dim: usize, lengths: &[f64]) -> Result<CollocationGrid> {
    if n_per_dim < 2 {
        return Err(TengError::InvalidConfig(format!(
            "n_per_dim must be at least 2, got {n_per_dim}"
        )));
    }
    if dims == 0 {
        return Err(TengError::InvalidConfig("grid needs at least one dimension".into()));
    }
    if lengths.len() != dims {
        return Err(TengError::DimensionMismatch(format!(
            "{} domain lengths for {} dimensions",
            lengths.len(),
            dims
        )));
    }
    if lengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(TengError::InvalidConfig("domain lengths must be positive".into()));
    }
    let total = n_per_dim
        .checked_pow(dims as u32)
        .ok_or_else(|| TengError::InvalidConfig("grid too large".into()))?;
    let spacing: Vec<f64> = lengths.iter().map(|l| l / n_per_dim as f64).collect();
    let mut points = Array2::<f64>::zeros((total, dims));
    for (row, mut p) in points.outer_iter_mut().enumerate() {
        let mut rem = row;
        for axis in (0..dims).rev() {
            let idx = rem % n_per_dim;
            rem /= n_per_dim;
            p[axis] = idx as f64 * spacing[axis];
        }
    }
    let weight = spacing.iter().product();
    Ok(CollocationGrid {
        dims,
        n_per_dim,
        lengths: lengths.to_vec(),
        points,
        weight,
    })
}

/// `weight · Σ_p f_p g_p`.
pub fn l2_inner(grid: &CollocationGrid, f: ArrayView1<f64>, g: ArrayView1<f64>) -> Result<f64> {
    if f.len() != grid.len() || g.len() != grid.len() {
        return Err(TengError::DimensionMismatch(format!(
            "inner product of lengths {} and {} on a grid of {} points",
            f.len(),
            g.len(),
            grid.len()
        )));
    }
    Ok(grid.weight * f.dot(&g))
}

/// Strictly increasing list of parameter indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn new(indices: Vec<usize>, param_count: usize) -> Result<Self> {
        if let Some(w) = indices.windows(2).find(|w| w[0] >= w[1]) {
            return Err(TengError::InvalidSubset(format!(
                "indices not strictly increasing at {} >= {}",
                w[0], w[1]
            )));
        }
        if let Some(&last) = indices.last() {
            if last >= param_count {
                return Err(TengError::InvalidSubset(format!(
                    "index {last} out of range for {param_count} parameters"
                )));
            }
        }
        Ok(Self(indices))
    }

    pub fn full(param_count: usize) -> Self {
        Self((0..param_count).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.0.last().copied()
    }
}

/// Uniform random subset of `n_sub` distinct indices out of `param_count`
/// (Floyd's algorithm), returned sorted.
pub fn subsample_params(
    param_count: usize,
    n_sub: usize,
    rng: &mut CounterRng,
) -> Result<IndexSet> {
    if n_sub == 0 || n_sub > param_count {
        return Err(TengError::InvalidSubset(format!(
            "cannot draw {n_sub} of {param_count} parameters"
        )));
    }
    if n_sub == param_count {
        return Ok(IndexSet::full(param_count));
    }
    let mut chosen = std::collections::BTreeSet::new();
    for j in (param_count - n_sub)..param_count {
        let t = rng.below(j as u64 + 1) as usize;
        if !chosen.insert(t) {
            chosen.insert(j);
        }
    }
    Ok(IndexSet(chosen.into_iter().collect()))
}
