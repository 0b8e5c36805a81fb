//! Parameterized fields: the periodic tanh MLP and a linear toy model, both
//! exposing values, spatial derivatives and parameter Jacobians analytically.

mod linear;
mod mlp;

pub use linear::{Basis, LinearModel};
pub use mlp::{init_params, Mlp, NetworkArch, ParamLayout};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TengError};
use crate::geometry::IndexSet;

/// Highest spatial derivative requested from an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DerivOrder {
    Value = 0,
    Gradient = 1,
    Laplacian = 2,
}

impl DerivOrder {
    pub fn from_level(level: u8) -> Result<Self> {
        match level {
            0 => Ok(Self::Value),
            1 => Ok(Self::Gradient),
            2 => Ok(Self::Laplacian),
            _ => Err(TengError::InvalidConfig(format!("derivative order {level} > 2"))),
        }
    }
}

/// Flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `θ[subset[s]] += delta[s]`.
    pub fn add_on_subset(&mut self, subset: &IndexSet, delta: ArrayView1<f64>) {
        debug_assert_eq!(subset.len(), delta.len());
        for (&i, d) in subset.as_slice().iter().zip(delta.iter()) {
            self.0[i] += d;
        }
    }

    /// `θ += scale · delta` over all entries.
    pub fn axpy(&mut self, scale: f64, delta: &[f64]) {
        debug_assert_eq!(self.0.len(), delta.len());
        for (t, d) in self.0.iter_mut().zip(delta) {
            *t += scale * d;
        }
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Field values and spatial derivatives at a batch of points.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldBatch {
    pub points: Array2<f64>,
    pub value: Array1<f64>,
    /// `n × d`, present for order ≥ 1.
    pub grad: Option<Array2<f64>>,
    /// Present for order 2.
    pub laplacian: Option<Array1<f64>>,
}

impl FieldBatch {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Checks row counts and finiteness.
    pub fn validate(&self) -> Result<()> {
        let n = self.points.nrows();
        if self.value.len() != n {
            return Err(TengError::DimensionMismatch("value rows".into()));
        }
        if let Some(g) = &self.grad {
            if g.nrows() != n || g.ncols() != self.points.ncols() {
                return Err(TengError::DimensionMismatch("gradient shape".into()));
            }
        }
        if let Some(l) = &self.laplacian {
            if l.len() != n {
                return Err(TengError::DimensionMismatch("laplacian rows".into()));
            }
        }
        let finite = self.value.iter().all(|v| v.is_finite())
            && self.grad.iter().flatten().all(|v| v.is_finite())
            && self.laplacian.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(TengError::NonFiniteInput("field batch".into()));
        }
        Ok(())
    }
}

/// `∂û(x_p)/∂θ_{subset[s]}` for every point `p` and subset column `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix {
    pub entries: Array2<f64>,
    pub subset: IndexSet,
}

/// A differentiable parameterized field `û_θ(x)`.
///
/// Implementations must be pure: outputs depend only on the arguments, and
/// per-point summation order is fixed so results are bitwise reproducible.
pub trait Ansatz {
    /// Spatial dimension of the input points.
    fn dims(&self) -> usize;

    fn param_count(&self) -> usize;

    /// Values and, depending on `order`, gradients and Laplacians.
    fn evaluate(
        &self,
        theta: &ParamVector,
        points: ArrayView2<f64>,
        order: DerivOrder,
    ) -> Result<FieldBatch>;

    /// Parameter Jacobian of the field value restricted to `subset` columns.
    fn jacobian(
        &self,
        theta: &ParamVector,
        points: ArrayView2<f64>,
        subset: &IndexSet,
    ) -> Result<JacobianMatrix>;

    /// `Σ_p cotangent_p ∂û(x_p)/∂θ` over all parameters.
    fn vjp(
        &self,
        theta: &ParamVector,
        points: ArrayView2<f64>,
        cotangent: ArrayView1<f64>,
    ) -> Result<Array1<f64>> {
        let jac = self.jacobian(theta, points, &IndexSet::full(self.param_count()))?;
        Ok(jac.entries.t().dot(&cotangent))
    }

    /// Stacked Jacobian of `[û; ∂û/∂x_1; …; ∂û/∂x_d]`, shape `((d+1)·n) × P`,
    /// block `k` holding rows for output `k`.
    fn sobolev_jacobian(&self, _theta: &ParamVector, _points: ArrayView2<f64>) -> Result<Array2<f64>> {
        Err(TengError::Unsupported("sobolev_jacobian"))
    }

    fn check_params(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(TengError::ParamLength {
                expected: self.param_count(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    fn check_points(&self, points: ArrayView2<f64>) -> Result<()> {
        if points.ncols() != self.dims() {
            return Err(TengError::DimensionMismatch(format!(
                "points have {} columns, ansatz expects {}",
                points.ncols(),
                self.dims()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(TengError::NonFiniteInput("evaluation points".into()));
        }
        Ok(())
    }

    fn check_subset(&self, subset: &IndexSet) -> Result<()> {
        match subset.max_index() {
            Some(i) if i >= self.param_count() => Err(TengError::InvalidSubset(format!(
                "index {i} out of range for {} parameters",
                self.param_count()
            ))),
            _ => Ok(()),
        }
    }
}

/// Free-function form of [`Ansatz::evaluate`].
pub fn evaluate_field<A: Ansatz + ?Sized>(
    model: &A,
    theta: &ParamVector,
    points: ArrayView2<f64>,
    order: DerivOrder,
) -> Result<FieldBatch> {
    model.evaluate(theta, points, order)
}

/// Free-function form of [`Ansatz::jacobian`].
pub fn param_jacobian<A: Ansatz + ?Sized>(
    model: &A,
    theta: &ParamVector,
    points: ArrayView2<f64>,
    subset: &IndexSet,
) -> Result<JacobianMatrix> {
    model.jacobian(theta, points, subset)
}
