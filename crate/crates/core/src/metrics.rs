//! Relative L² error metrics.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TengError};
use crate::geometry::CollocationGrid;

/// `‖û − ref‖ / ‖ref‖` in the grid's L² norm.
pub fn rel_l2(u_hat: ArrayView1<f64>, u_ref: ArrayView1<f64>, grid: &CollocationGrid) -> Result<f64> {
    let diff = &u_hat - &u_ref;
    let den = grid.norm_sq(u_ref)?;
    if den == 0.0 {
        return Err(TengError::ZeroReference);
    }
    Ok((grid.norm_sq(diff.view())? / den).sqrt())
}

/// Space-time relative error with uniform weights over the given samples.
pub fn global_rel_l2(series: &[(ArrayView1<f64>, ArrayView1<f64>)], grid: &CollocationGrid) -> Result<f64> {
    let mut es = ErrorSeries::default();
    for (k, (u, r)) in series.iter().enumerate() {
        es.push(k as f64, *u, *r, grid)?;
    }
    es.global_rel_l2()
}

/// Per-time errors, keeping the squared norms so the global value can be
/// recomputed exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub times: Vec<f64>,
    pub rel_l2: Vec<f64>,
    pub err_norm_sq: Vec<f64>,
    pub ref_norm_sq: Vec<f64>,
}

impl ErrorSeries {
    pub fn push(&mut self, t: f64, u_hat: ArrayView1<f64>, u_ref: ArrayView1<f64>, grid: &CollocationGrid) -> Result<f64> {
        let diff = &u_hat - &u_ref;
        let e2 = grid.norm_sq(diff.view())?;
        let r2 = grid.norm_sq(u_ref)?;
        if r2 == 0.0 {
            return Err(TengError::ZeroReference);
        }
        let rel = (e2 / r2).sqrt();
        self.times.push(t);
        self.rel_l2.push(rel);
        self.err_norm_sq.push(e2);
        self.ref_norm_sq.push(r2);
        Ok(rel)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn global_rel_l2(&self) -> Result<f64> {
        let den: f64 = self.ref_norm_sq.iter().sum();
        if self.is_empty() || den == 0.0 {
            return Err(TengError::ZeroReference);
        }
        Ok((self.err_norm_sq.iter().sum::<f64>() / den).sqrt())
    }
}
