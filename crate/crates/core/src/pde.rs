//! PDE right-hand sides `L u` and closed-form initial conditions.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TengError};
use crate::net::{DerivOrder, FieldBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeKind {
    /// `ν Δu`
    Heat,
    /// `ν Δu + u − u³`
    AllenCahn,
    /// `ν Δu − u Σ_i ∂u/∂x_i`
    Burgers,
}

impl PdeKind {
    pub fn default_nu(self) -> f64 {
        match self {
            PdeKind::Heat => 0.1,
            PdeKind::AllenCahn => 1.0 / 200.0,
            PdeKind::Burgers => 1.0 / 100.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PdeKind::Heat => "heat",
            PdeKind::AllenCahn => "allen_cahn",
            PdeKind::Burgers => "burgers",
        }
    }
}

/// Spatial right-hand side `L` of `∂_t u = L u`.
pub trait Operator {
    /// Highest derivative the operator reads.
    fn required_order(&self) -> DerivOrder;

    /// `(L u)(x_p)` for every point of the batch.
    fn apply(&self, fb: &FieldBatch) -> Result<Array1<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeSpec {
    pub kind: PdeKind,
    pub nu: f64,
    pub dims: usize,
}

impl PdeSpec {
    pub fn new(kind: PdeKind, nu: f64, dims: usize) -> Result<Self> {
        let spec = Self { kind, nu, dims };
        spec.validate()?;
        Ok(spec)
    }

    pub fn heat(dims: usize) -> Result<Self> {
        Self::new(PdeKind::Heat, PdeKind::Heat.default_nu(), dims)
    }

    pub fn allen_cahn() -> Self {
        Self {
            kind: PdeKind::AllenCahn,
            nu: PdeKind::AllenCahn.default_nu(),
            dims: 2,
        }
    }

    pub fn burgers() -> Self {
        Self {
            kind: PdeKind::Burgers,
            nu: PdeKind::Burgers.default_nu(),
            dims: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(TengError::InvalidConfig(format!("nu must be positive, got {}", self.nu)));
        }
        let ok = match self.kind {
            PdeKind::Heat => (2..=3).contains(&self.dims),
            PdeKind::AllenCahn | PdeKind::Burgers => self.dims == 2,
        };
        if !ok {
            return Err(TengError::InvalidConfig(format!(
                "{} is not supported in {} dimensions",
                self.kind.name(),
                self.dims
            )));
        }
        Ok(())
    }
}

impl Operator for PdeSpec {
    fn required_order(&self) -> DerivOrder {
        DerivOrder::Laplacian
    }

    fn apply(&self, fb: &FieldBatch) -> Result<Array1<f64>> {
        let lap = fb
            .laplacian
            .as_ref()
            .ok_or(TengError::MissingDerivative("laplacian"))?;
        let u = &fb.value;
        match self.kind {
            PdeKind::Heat => Ok(lap * self.nu),
            PdeKind::AllenCahn => Ok(ndarray::Zip::from(lap)
                .and(u)
                .map_collect(|&l, &u| self.nu * l + u - u * u * u)),
            PdeKind::Burgers => {
                let grad = fb.grad.as_ref().ok_or(TengError::MissingDerivative("gradient"))?;
                let div_sum = grad.sum_axis(ndarray::Axis(1));
                Ok(ndarray::Zip::from(lap)
                    .and(u)
                    .and(&div_sum)
                    .map_collect(|&l, &u, &g| self.nu * l - u * g))
            }
        }
    }
}

/// Free-function form of [`Operator::apply`].
pub fn apply_operator<O: Operator + ?Sized>(op: &O, fb: &FieldBatch) -> Result<Array1<f64>> {
    op.apply(fb)
}

/// Coefficients of `A₀₀₀ + Σ_{k∈{1,2}³} A_k Π cos(k_i x_i) + B_k Π sin(k_i x_i)`,
/// indexed `[k₁−1][k₂−1][k₃−1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigTable {
    pub a000: f64,
    pub a: [[[f64; 2]; 2]; 2],
    pub b: [[[f64; 2]; 2]; 2],
}

impl TrigTable {
    /// Coefficients of the standard 3D heat benchmark.
    pub fn preset() -> Self {
        // [k1][k2][k3]
        Self {
            a000: 0.043,
            a: [
                [[0.047, -0.021], [-0.021, -0.041]],
                [[0.034, 0.024], [-0.02, 0.0]],
            ],
            b: [
                [[-0.075, 0.074], [-0.056, -0.007]],
                [[-0.027, 0.032], [-0.008, 0.0]],
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// `0.04 cosh(3 sin x₁) sinh(sin x₂)` on `[0, 2π)²`, i.e. the four-exponential
    /// combination `(e^{a+b} + e^{−a+b} − e^{a−b} − e^{−a−b}) / 100`.
    TwoDimExp,
    /// Sinusoidal combination on `[0, 2π)³`.
    ThreeDimTrig(TrigTable),
    /// `(1/50) exp(cos(πx₁ − 2) + sin(x₂ − 1))²` on `[0, 2) × [0, 2π)`.
    BurgersAlt,
}

impl InitialCondition {
    pub fn dims(&self) -> usize {
        match self {
            InitialCondition::ThreeDimTrig(_) => 3,
            _ => 2,
        }
    }

    /// Natural periodic domain.
    pub fn lengths(&self) -> Vec<f64> {
        match self {
            InitialCondition::TwoDimExp => vec![2.0 * PI; 2],
            InitialCondition::ThreeDimTrig(_) => vec![2.0 * PI; 3],
            InitialCondition::BurgersAlt => vec![2.0, 2.0 * PI],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InitialCondition::TwoDimExp => "two_dim_exp",
            InitialCondition::ThreeDimTrig(_) => "three_dim_trig",
            InitialCondition::BurgersAlt => "burgers_alt",
        }
    }

    /// `(u, ∇u, Δu)` at one point.
    fn eval_point(&self, x: &[f64]) -> (f64, Vec<f64>, f64) {
        match self {
            InitialCondition::TwoDimExp => {
                let (s1, c1) = x[0].sin_cos();
                let (s2, c2) = x[1].sin_cos();
                let (ch, sh) = ((3.0 * s1).cosh(), (3.0 * s1).sinh());
                let (ch2, sh2) = (s2.cosh(), s2.sinh());
                let k = 0.04;
                let u = k * ch * sh2;
                let g1 = k * 3.0 * c1 * sh * sh2;
                let g2 = k * ch * c2 * ch2;
                let l1 = k * sh2 * (9.0 * c1 * c1 * ch - 3.0 * s1 * sh);
                let l2 = k * ch * (c2 * c2 * sh2 - s2 * ch2);
                (u, vec![g1, g2], l1 + l2)
            }
            InitialCondition::ThreeDimTrig(t) => {
                let mut u = t.a000;
                let mut g = vec![0.0; 3];
                let mut lap = 0.0;
                for k1 in 1..=2 {
                    for k2 in 1..=2 {
                        for k3 in 1..=2 {
                            let k = [k1 as f64, k2 as f64, k3 as f64];
                            let sc: Vec<(f64, f64)> =
                                (0..3).map(|i| (k[i] * x[i]).sin_cos()).collect();
                            let a = t.a[k1 - 1][k2 - 1][k3 - 1];
                            let b = t.b[k1 - 1][k2 - 1][k3 - 1];
                            let cprod = sc[0].1 * sc[1].1 * sc[2].1;
                            let sprod = sc[0].0 * sc[1].0 * sc[2].0;
                            let term = a * cprod + b * sprod;
                            u += term;
                            lap -= (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) * term;
                            for i in 0..3 {
                                let (j, l) = ((i + 1) % 3, (i + 2) % 3);
                                g[i] += k[i]
                                    * (-a * sc[i].0 * sc[j].1 * sc[l].1
                                        + b * sc[i].1 * sc[j].0 * sc[l].0);
                            }
                        }
                    }
                }
                (u, g, lap)
            }
            InitialCondition::BurgersAlt => {
                let (sa, ca) = (PI * x[0] - 2.0).sin_cos();
                let (sb, cb) = (x[1] - 1.0).sin_cos();
                let s = ca + sb;
                let u = (2.0 * s).exp() / 50.0;
                let ds = [-PI * sa, cb];
                let d2s = [-PI * PI * ca, -sb];
                let g = vec![2.0 * u * ds[0], 2.0 * u * ds[1]];
                let lap = (0..2).map(|i| 2.0 * u * (d2s[i] + 2.0 * ds[i] * ds[i])).sum();
                (u, g, lap)
            }
        }
    }
}

/// Closed-form initial field and, up to `order`, its derivatives.
pub fn initial_condition(
    ic: &InitialCondition,
    points: ArrayView2<f64>,
    order: DerivOrder,
) -> Result<FieldBatch> {
    let d = ic.dims();
    if points.ncols() != d {
        return Err(TengError::DimensionMismatch(format!(
            "{} needs {} coordinates, points have {}",
            ic.name(),
            d,
            points.ncols()
        )));
    }
    let n = points.nrows();
    let mut value = Array1::zeros(n);
    let mut grad = Array2::zeros((n, d));
    let mut lap = Array1::zeros(n);
    for (p, row) in points.outer_iter().enumerate() {
        let x: Vec<f64> = row.to_vec();
        let (u, g, l) = ic.eval_point(&x);
        value[p] = u;
        for k in 0..d {
            grad[[p, k]] = g[k];
        }
        lap[p] = l;
    }
    Ok(FieldBatch {
        points: points.to_owned(),
        value,
        grad: (order >= DerivOrder::Gradient).then_some(grad),
        laplacian: (order >= DerivOrder::Laplacian).then_some(lap),
    })
}
