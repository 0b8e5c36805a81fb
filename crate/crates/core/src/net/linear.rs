use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::{Ansatz, DerivOrder, FieldBatch, JacobianMatrix, ParamVector};
use crate::error::Result;
use crate::geometry::IndexSet;

/// Fixed basis function of a [`LinearModel`].
#[derive(Debug, Clone, PartialEq)]
pub enum Basis {
    Constant,
    /// `cos(k · x)`
    Cos(Vec<f64>),
    /// `sin(k · x)`
    Sin(Vec<f64>),
}

impl Basis {
    fn eval(&self, x: ArrayView1<f64>) -> (f64, Vec<f64>, f64) {
        let d = x.len();
        match self {
            Basis::Constant => (1.0, vec![0.0; d], 0.0),
            Basis::Cos(k) | Basis::Sin(k) => {
                let arg: f64 = k.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
                let k2: f64 = k.iter().map(|a| a * a).sum();
                let (s, c) = arg.sin_cos();
                if matches!(self, Basis::Cos(_)) {
                    (c, k.iter().map(|ki| -ki * s).collect(), -k2 * c)
                } else {
                    (s, k.iter().map(|ki| ki * c).collect(), -k2 * s)
                }
            }
        }
    }
}

/// `û_θ(x) = Σ_j θ_j φ_j(x)`: linear in its parameters, used as an exactly
/// solvable stand-in for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    dims: usize,
    basis: Vec<Basis>,
}

impl LinearModel {
    pub fn new(dims: usize, basis: Vec<Basis>) -> Self {
        Self { dims, basis }
    }

    /// `θ₁ sin(x) + θ₂ cos(x)` in one dimension.
    pub fn sin_cos_1d() -> Self {
        Self::new(1, vec![Basis::Sin(vec![1.0]), Basis::Cos(vec![1.0])])
    }

    pub fn basis(&self) -> &[Basis] {
        &self.basis
    }
}

impl Ansatz for LinearModel {
    fn dims(&self) -> usize {
        self.dims
    }

    fn param_count(&self) -> usize {
        self.basis.len()
    }

    fn evaluate(
        &self,
        theta: &ParamVector,
        points: ArrayView2<f64>,
        order: DerivOrder,
    ) -> Result<FieldBatch> {
        self.check_params(theta)?;
        self.check_points(points)?;
        let n = points.nrows();
        let mut value = Array1::zeros(n);
        let mut grad = Array2::zeros((n, self.dims));
        let mut lap = Array1::zeros(n);
        for (p, x) in points.outer_iter().enumerate() {
            for (b, &t) in self.basis.iter().zip(theta.as_slice()) {
                let (v, g, l) = b.eval(x);
                value[p] += t * v;
                for (k, gk) in g.iter().enumerate() {
                    grad[[p, k]] += t * gk;
                }
                lap[p] += t * l;
            }
        }
        Ok(FieldBatch {
            points: points.to_owned(),
            value,
            grad: (order >= DerivOrder::Gradient).then_some(grad),
            laplacian: (order >= DerivOrder::Laplacian).then_some(lap),
        })
    }

    fn jacobian(
        &self,
        theta: &ParamVector,
        points: ArrayView2<f64>,
        subset: &IndexSet,
    ) -> Result<JacobianMatrix> {
        self.check_params(theta)?;
        self.check_points(points)?;
        self.check_subset(subset)?;
        let mut entries = Array2::zeros((points.nrows(), subset.len()));
        for (p, x) in points.outer_iter().enumerate() {
            for (s, &j) in subset.as_slice().iter().enumerate() {
                entries[[p, s]] = self.basis[j].eval(x).0;
            }
        }
        Ok(JacobianMatrix {
            entries,
            subset: subset.clone(),
        })
    }

    fn sobolev_jacobian(&self, theta: &ParamVector, points: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_params(theta)?;
        self.check_points(points)?;
        let n = points.nrows();
        let mut out = Array2::zeros(((self.dims + 1) * n, self.basis.len()));
        for (p, x) in points.outer_iter().enumerate() {
            for (j, b) in self.basis.iter().enumerate() {
                let (v, g, _) = b.eval(x);
                out[[p, j]] = v;
                for (k, gk) in g.iter().enumerate() {
                    out[[(k + 1) * n + p, j]] = *gk;
                }
            }
        }
        Ok(out)
    }
}
