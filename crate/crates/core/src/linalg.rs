//! Dense least-squares solvers: truncated SVD and CGLS.

use faer::Mat;
use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TengError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LstsqMethod {
    Svd,
    Cgls,
    /// `x = Jᵀ b`: a plain gradient step instead of a solve.
    GradientStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LstsqConfig {
    pub method: LstsqMethod,
    /// Singular values below `rcond · σ_max` are discarded.
    pub rcond: f64,
    /// CGLS iteration cap; `None` uses the column count.
    pub cg_max_iter: Option<usize>,
    /// CGLS stops once `‖Jᵀr‖ ≤ cg_tol · ‖Jᵀb‖`.
    pub cg_tol: f64,
}

impl Default for LstsqConfig {
    fn default() -> Self {
        Self {
            method: LstsqMethod::Svd,
            rcond: 1e-12,
            cg_max_iter: None,
            cg_tol: 1e-10,
        }
    }
}

impl LstsqConfig {
    pub fn svd() -> Self {
        Self::default()
    }

    pub fn cgls(tol: f64, max_iter: Option<usize>) -> Self {
        Self {
            method: LstsqMethod::Cgls,
            cg_tol: tol,
            cg_max_iter: max_iter,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rcond > 0.0 && self.rcond < 1.0) {
            return Err(TengError::InvalidConfig("rcond must lie in (0, 1)".into()));
        }
        if !(self.cg_tol > 0.0) {
            return Err(TengError::InvalidConfig("cg_tol must be positive".into()));
        }
        if self.cg_max_iter == Some(0) {
            return Err(TengError::InvalidConfig("cg_max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_system(j: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<()> {
    if j.nrows() == 0 || j.ncols() == 0 {
        return Err(TengError::DimensionMismatch("empty least-squares system".into()));
    }
    if j.nrows() != b.len() {
        return Err(TengError::DimensionMismatch(format!(
            "matrix has {} rows, right-hand side {}",
            j.nrows(),
            b.len()
        )));
    }
    if j.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(TengError::NonFiniteInput("least-squares system".into()));
    }
    Ok(())
}

/// Thin SVD of a least-squares system, kept in the form needed to solve it
/// with different regularizations.
///
/// Tall systems are first reduced by a QR factorization of `[J | b]`, so the
/// SVD only sees the `m × m` triangular factor.
#[derive(Debug, Clone)]
pub struct SvdSystem {
    /// Singular values.
    pub s: Vec<f64>,
    /// `u_iᵀ b` per singular triple.
    pub utb: Vec<f64>,
    /// Right singular vectors, one column per triple.
    v: Mat<f64>,
}

impl SvdSystem {
    pub fn new(j: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Self> {
        check_system(j, b)?;
        let (n, m) = j.dim();
        let (a, rhs): (Mat<f64>, Vec<f64>) = if n > m {
            let aug = Mat::from_fn(n, m + 1, |r, c| if c < m { j[[r, c]] } else { b[r] });
            let qr = aug.qr();
            let rf = qr.thin_R();
            let a = Mat::from_fn(m, m, |r, c| rf[(r, c)]);
            let rhs = (0..m).map(|r| rf[(r, m)]).collect();
            (a, rhs)
        } else {
            (Mat::from_fn(n, m, |r, c| j[[r, c]]), b.to_vec())
        };
        let svd = a.thin_svd().map_err(|_| TengError::SvdFailed)?;
        let (u, sv) = (svd.U(), svd.S().column_vector());
        let k = sv.nrows();
        let s: Vec<f64> = (0..k).map(|i| sv[i]).collect();
        let utb = (0..k)
            .map(|i| (0..u.nrows()).map(|r| u[(r, i)] * rhs[r]).sum())
            .collect();
        Ok(Self {
            s,
            utb,
            v: svd.V().to_owned(),
        })
    }

    pub fn sigma_max(&self) -> f64 {
        self.s.iter().copied().fold(0.0, f64::max)
    }

    /// `Σ_i f_i (u_iᵀ b) v_i` for filter factors `f_i = filter(σ_i)`.
    fn filtered(&self, filter: impl Fn(f64) -> f64) -> Array1<f64> {
        let m = self.v.nrows();
        let mut x = Array1::zeros(m);
        for (i, (&si, &c)) in self.s.iter().zip(&self.utb).enumerate() {
            let f = filter(si);
            if f == 0.0 {
                continue;
            }
            let coef = f * c;
            for r in 0..m {
                x[r] += coef * self.v[(r, i)];
            }
        }
        x
    }

    /// Minimum-norm solution keeping `σ_i > rcond · σ_max`.
    pub fn truncated(&self, rcond: f64) -> Array1<f64> {
        let cut = rcond * self.sigma_max();
        self.filtered(|s| if s > cut && s > 0.0 { 1.0 / s } else { 0.0 })
    }

    /// Ridge solution `argmin ‖Jx − b‖² + λ‖x‖²`.
    pub fn damped(&self, lambda: f64) -> Array1<f64> {
        self.filtered(|s| if s > 0.0 { s / (s * s + lambda) } else { 0.0 })
    }
}

/// Truncated-SVD least squares: `x = Σ_{σ_i > rcond·σ_max} (u_iᵀ b / σ_i) v_i`.
pub fn svd_lstsq(j: ArrayView2<f64>, b: ArrayView1<f64>, rcond: f64) -> Result<Array1<f64>> {
    Ok(SvdSystem::new(j, b)?.truncated(rcond))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CglsStatus {
    Converged,
    MaxIter,
    /// Zero curvature along the search direction.
    Breakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CglsOutcome {
    pub x: Array1<f64>,
    pub iterations: usize,
    pub status: CglsStatus,
}

/// Conjugate gradients on `JᵀJ x = Jᵀb` from `x = 0`, without forming `JᵀJ`.
pub fn cgls(j: ArrayView2<f64>, b: ArrayView1<f64>, max_iter: usize, tol: f64) -> Result<CglsOutcome> {
    check_system(j, b)?;
    let m = j.ncols();
    let mut x = Array1::zeros(m);
    let mut r = b.to_owned();
    let mut s = j.t().dot(&r);
    let mut gamma = s.dot(&s);
    let s0 = gamma.sqrt();
    if s0 == 0.0 {
        return Ok(CglsOutcome {
            x,
            iterations: 0,
            status: CglsStatus::Converged,
        });
    }
    let mut p = s.clone();
    for it in 0..max_iter {
        let q = j.dot(&p);
        let delta = q.dot(&q);
        if delta == 0.0 {
            return Ok(CglsOutcome {
                x,
                iterations: it,
                status: CglsStatus::Breakdown,
            });
        }
        let alpha = gamma / delta;
        x.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &q);
        s = j.t().dot(&r);
        let gamma_new = s.dot(&s);
        if gamma_new.sqrt() <= tol * s0 {
            return Ok(CglsOutcome {
                x,
                iterations: it + 1,
                status: CglsStatus::Converged,
            });
        }
        let beta = gamma_new / gamma;
        p = &s + &(p * beta);
        gamma = gamma_new;
    }
    Ok(CglsOutcome {
        x,
        iterations: max_iter,
        status: CglsStatus::MaxIter,
    })
}

/// Dispatches to the configured method.
pub fn lstsq(j: ArrayView2<f64>, b: ArrayView1<f64>, cfg: &LstsqConfig) -> Result<Array1<f64>> {
    match cfg.method {
        LstsqMethod::Svd => svd_lstsq(j, b, cfg.rcond),
        LstsqMethod::Cgls => {
            let max_iter = cfg.cg_max_iter.unwrap_or(j.ncols());
            Ok(cgls(j, b, max_iter, cfg.cg_tol)?.x)
        }
        LstsqMethod::GradientStep => {
            check_system(j, b)?;
            Ok(j.t().dot(&b))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn identity_system() {
        let j = Array2::eye(3);
        let x = svd_lstsq(j.view(), array![1.0, 2.0, 3.0].view(), 1e-12).unwrap();
        assert!((&x - &array![1.0, 2.0, 3.0]).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn rank_one_minimum_norm() {
        let j = array![[1.0, 1.0], [1.0, 1.0]];
        for rcond in [1e-12, 0.5, 0.99] {
            let x = svd_lstsq(j.view(), array![2.0, 2.0].view(), rcond).unwrap();
            assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn cgls_identity_two_steps() {
        let j = Array2::eye(2);
        let out = cgls(j.view(), array![5.0, -3.0].view(), 10, 1e-14).unwrap();
        assert_eq!(out.status, CglsStatus::Converged);
        assert!(out.iterations <= 2);
        assert!((out.x[0] - 5.0).abs() < 1e-14 && (out.x[1] + 3.0).abs() < 1e-14);
    }

    #[test]
    fn cgls_zero_gradient_short_circuit() {
        let j = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        let out = cgls(j.view(), array![0.0, 0.0, 4.0].view(), 10, 1e-12).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cgls_ill_conditioned_matches_svd() {
        let j = array![[1.0, 0.0], [0.0, 1e-6], [0.0, 0.0], [0.0, 0.0]];
        let b = j.dot(&array![1.0, 1.0]);
        let xs = svd_lstsq(j.view(), b.view(), 1e-12).unwrap();
        let xc = cgls(j.view(), b.view(), 50, 1e-14).unwrap().x;
        for k in 0..2 {
            assert!((xs[k] - xc[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let j = array![[1.0, f64::NAN]];
        assert!(svd_lstsq(j.view(), array![1.0].view(), 1e-12).is_err());
        assert!(cgls(j.view(), array![1.0].view(), 3, 1e-12).is_err());
    }

    #[test]
    fn damped_solution_matches_ridge_normal_equations() {
        let j = array![[2.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let b = array![1.0, 2.0, -1.0];
        let lambda = 0.3;
        let x = SvdSystem::new(j.view(), b.view()).unwrap().damped(lambda);
        // (JᵀJ + λI) x = Jᵀ b
        let g = j.t().dot(&j) + Array2::<f64>::eye(2) * lambda;
        let lhs = g.dot(&x);
        let rhs = j.t().dot(&b);
        assert!((&lhs - &rhs).iter().all(|d| d.abs() < 1e-13));
    }

    #[test]
    fn config_validation() {
        assert!(LstsqConfig::default().validate().is_ok());
        let bad = LstsqConfig {
            rcond: 1.0,
            ..LstsqConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(LstsqConfig::cgls(1e-10, Some(0)).validate().is_err());
    }

    #[test]
    fn gradient_step_is_transpose_product() {
        let j = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let b = array![1.0, -1.0, 0.5];
        let cfg = LstsqConfig {
            method: LstsqMethod::GradientStep,
            ..LstsqConfig::default()
        };
        assert_eq!(lstsq(j.view(), b.view(), &cfg).unwrap(), j.t().dot(&b));
    }
}
