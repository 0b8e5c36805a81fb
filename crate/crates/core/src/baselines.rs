//! Comparison methods: TDVP projection with RK4, and optimization-based time
//! integration with Adam.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TengError};
use crate::geometry::{subsample_params, CollocationGrid, IndexSet};
use crate::linalg::{lstsq, LstsqConfig};
use crate::net::{Ansatz, ParamVector};
use crate::pde::Operator;
use crate::teng::{build_target_euler, field_and_rhs, residual_and_loss, EvolutionState, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TdvpConfig {
    /// Parameters sampled once per time step; `None` uses all.
    pub subsample: Option<usize>,
    pub lstsq: LstsqConfig,
}

impl Default for TdvpConfig {
    fn default() -> Self {
        Self {
            subsample: Some(512),
            lstsq: LstsqConfig {
                rcond: crate::teng::DEFAULT_RCOND,
                ..LstsqConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdvpRhs {
    /// Parameter velocity, zero outside the subset.
    pub velocity: Vec<f64>,
    /// `‖J v − L û‖²` in the weighted norm.
    pub residual_sq: f64,
}

/// Parameter velocity minimizing `‖L û − J_S v‖` over the subset columns.
pub fn tdvp_rhs<A: Ansatz + ?Sized, O: Operator + ?Sized>(
    model: &A,
    op: &O,
    theta: &ParamVector,
    grid: &CollocationGrid,
    subset: &IndexSet,
    solver: &LstsqConfig,
) -> Result<TdvpRhs> {
    let (_, lu) = field_and_rhs(model, op, theta, grid)?;
    let sw = grid.weight().sqrt();
    let jac = model.jacobian(theta, grid.points().view(), subset)?.entries;
    let v = lstsq((&jac * sw).view(), (&lu * sw).view(), solver)?;
    let res = jac.dot(&v) - &lu;
    let mut velocity = vec![0.0; model.param_count()];
    for (&i, vi) in subset.as_slice().iter().zip(v.iter()) {
        velocity[i] = *vi;
    }
    Ok(TdvpRhs {
        velocity,
        residual_sq: grid.weight() * res.dot(&res),
    })
}

/// Classical RK4 on the parameter ODE. One subset is drawn per step and
/// shared by all four stages. The logged loss is the squared projection
/// residual of the first stage scaled by `Δt²`, the loss an exact Euler
/// fit would leave.
pub fn tdvp_rk4_step<A: Ansatz + ?Sized, O: Operator + ?Sized>(
    pb: Problem<'_, A, O>,
    mut state: EvolutionState,
    cfg: &TdvpConfig,
) -> Result<EvolutionState> {
    let p = pb.model.param_count();
    let subset = match cfg.subsample {
        Some(k) if k < p => subsample_params(p, k, &mut state.rng)?,
        _ => IndexSet::full(p),
    };
    let dt = state.dt;
    let rhs = |theta: &ParamVector| tdvp_rhs(pb.model, pb.op, theta, pb.grid, &subset, &cfg.lstsq);
    let shifted = |by: &[f64], scale: f64| {
        let mut t = state.theta.clone();
        t.axpy(scale, by);
        t
    };
    let k1 = rhs(&state.theta)?;
    let k2 = rhs(&shifted(&k1.velocity, 0.5 * dt))?;
    let k3 = rhs(&shifted(&k2.velocity, 0.5 * dt))?;
    let k4 = rhs(&shifted(&k3.velocity, dt))?;
    let mut theta = state.theta.clone();
    for (i, t) in theta.as_mut_slice().iter_mut().enumerate() {
        *t += dt / 6.0
            * (k1.velocity[i] + 2.0 * k2.velocity[i] + 2.0 * k3.velocity[i] + k4.velocity[i]);
    }
    let loss = k1.residual_sq * dt * dt;
    state.advance(theta, vec![loss], 4)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObtiConfig {
    pub n_opt_iters: usize,
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Iterations per learning-rate halving; `None` uses `n_opt_iters`.
    pub decay_steps: Option<usize>,
}

impl Default for ObtiConfig {
    fn default() -> Self {
        Self {
            n_opt_iters: 300,
            lr0: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: usize,
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay_steps: usize,
}

impl AdamState {
    pub fn new(n: usize, cfg: &ObtiConfig) -> Result<Self> {
        let ok_beta = |b: f64| b > 0.0 && b < 1.0;
        if !ok_beta(cfg.beta1) || !ok_beta(cfg.beta2) {
            return Err(TengError::InvalidConfig("Adam betas must lie in (0, 1)".into()));
        }
        Ok(Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr0: cfg.lr0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            decay_steps: cfg.decay_steps.unwrap_or(cfg.n_opt_iters).max(1),
        })
    }

    /// Learning rate of the next update, `lr0 · 2^(−step / decay_steps)`.
    pub fn learning_rate(&self) -> f64 {
        self.lr0 * (-(self.step as f64) / self.decay_steps as f64).exp2()
    }
}

/// Bias-corrected Adam update. Returns the parameter increment.
pub fn adam_step(adam: &mut AdamState, grad: &[f64]) -> Result<Vec<f64>> {
    if grad.len() != adam.m.len() {
        return Err(TengError::DimensionMismatch("Adam gradient length".into()));
    }
    let lr = adam.learning_rate();
    adam.step += 1;
    let c1 = 1.0 - adam.beta1.powi(adam.step as i32);
    let c2 = 1.0 - adam.beta2.powi(adam.step as i32);
    let mut delta = vec![0.0; grad.len()];
    for i in 0..grad.len() {
        adam.m[i] = adam.beta1 * adam.m[i] + (1.0 - adam.beta1) * grad[i];
        adam.v[i] = adam.beta2 * adam.v[i] + (1.0 - adam.beta2) * grad[i] * grad[i];
        let mh = adam.m[i] / c1;
        let vh = adam.v[i] / c2;
        delta[i] = -lr * mh / (vh.sqrt() + adam.eps);
    }
    Ok(delta)
}

/// `∇_θ w Σ (û − target)² = 2 Jᵀ W r` and the loss itself.
pub fn obti_gradient<A: Ansatz + ?Sized>(
    model: &A,
    theta: &ParamVector,
    target: ArrayView1<f64>,
    grid: &CollocationGrid,
) -> Result<(Array1<f64>, f64)> {
    let (r, loss) = residual_and_loss(model, theta, target, grid)?;
    let grad = model.vjp(theta, grid.points().view(), (&r * (2.0 * grid.weight())).view())?;
    Ok((grad, loss))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObtiFit {
    pub theta: ParamVector,
    /// Loss before each Adam iteration, then the final loss.
    pub losses: Vec<f64>,
}

/// Runs `n_opt_iters` Adam iterations on all parameters towards `target`,
/// from a fresh optimizer state.
pub fn obti_fit<A: Ansatz + ?Sized>(
    model: &A,
    theta: &ParamVector,
    target: ArrayView1<f64>,
    grid: &CollocationGrid,
    cfg: &ObtiConfig,
) -> Result<ObtiFit> {
    let mut adam = AdamState::new(model.param_count(), cfg)?;
    let mut theta = theta.clone();
    let mut losses = Vec::with_capacity(cfg.n_opt_iters + 1);
    for _ in 0..cfg.n_opt_iters {
        let (g, loss) = obti_gradient(model, &theta, target, grid)?;
        losses.push(loss);
        let delta = adam_step(&mut adam, g.as_slice().expect("contiguous"))?;
        theta.axpy(1.0, &delta);
    }
    losses.push(residual_and_loss(model, &theta, target, grid)?.1);
    Ok(ObtiFit { theta, losses })
}

/// Euler target fitted by Adam.
pub fn obti_step<A: Ansatz + ?Sized, O: Operator + ?Sized>(
    pb: Problem<'_, A, O>,
    state: EvolutionState,
    cfg: &ObtiConfig,
) -> Result<EvolutionState> {
    let target = build_target_euler(pb.model, pb.op, &state.theta, pb.grid, state.dt)?;
    let fit = obti_fit(pb.model, &state.theta, target.view(), pb.grid, cfg)?;
    let loss = *fit.losses.last().expect("final loss");
    state.advance(fit.theta, vec![loss], cfg.n_opt_iters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::tensor_grid;
    use crate::net::{Basis, DerivOrder, LinearModel};
    use crate::pde::PdeSpec;
    use std::f64::consts::PI;

    fn setup() -> (CollocationGrid, PdeSpec) {
        (
            tensor_grid(2, 16, &[2.0 * PI, 2.0 * PI]).unwrap(),
            PdeSpec::heat(2).unwrap(),
        )
    }

    #[test]
    fn single_mode_velocity() {
        let (grid, heat) = setup();
        let model = LinearModel::new(2, vec![Basis::Sin(vec![1.0, 0.0])]);
        let theta = ParamVector::new(vec![0.8]);
        let v = tdvp_rhs(&model, &heat, &theta, &grid, &IndexSet::full(1), &LstsqConfig::default())
            .unwrap();
        assert!((v.velocity[0] + 0.1 * 0.8).abs() < 1e-15);
        assert!(v.residual_sq < 1e-28);
    }

    #[test]
    fn zero_field_zero_velocity() {
        let (grid, heat) = setup();
        let model = LinearModel::new(2, vec![Basis::Sin(vec![1.0, 0.0]), Basis::Cos(vec![0.0, 2.0])]);
        let v = tdvp_rhs(
            &model,
            &heat,
            &ParamVector::zeros(2),
            &grid,
            &IndexSet::full(2),
            &LstsqConfig::default(),
        )
        .unwrap();
        assert!(v.velocity.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rk4_mode_amplitude() {
        let (grid, heat) = setup();
        let model = LinearModel::new(2, vec![Basis::Sin(vec![1.0, 0.0])]);
        let dt = 0.3;
        let state = EvolutionState::new(ParamVector::new(vec![1.0]), dt, 0).unwrap();
        let cfg = TdvpConfig {
            subsample: None,
            ..TdvpConfig::default()
        };
        let s = tdvp_rk4_step(Problem::new(&model, &heat, &grid), state, &cfg).unwrap();
        let z: f64 = -0.1 * dt;
        let taylor = 1.0 + z + z * z / 2.0 + z.powi(3) / 6.0 + z.powi(4) / 24.0;
        assert!((s.theta.as_slice()[0] - taylor).abs() < 1e-12);

        let state = EvolutionState::new(ParamVector::new(vec![1.0]), 0.0, 0).unwrap();
        let s = tdvp_rk4_step(Problem::new(&model, &heat, &grid), state, &cfg).unwrap();
        assert_eq!(s.theta.as_slice()[0], 1.0);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let cfg = ObtiConfig::default();
        let mut adam = AdamState::new(3, &cfg).unwrap();
        let g = [2.0, -0.5, 1e-3];
        let d = adam_step(&mut adam, &g).unwrap();
        for (di, gi) in d.iter().zip(g) {
            assert!(di.signum() == -gi.signum());
            assert!(di.abs() <= cfg.lr0 && di.abs() >= 0.9 * cfg.lr0);
        }
    }

    #[test]
    fn adam_zero_gradient_never_moves() {
        let mut adam = AdamState::new(2, &ObtiConfig::default()).unwrap();
        for _ in 0..20 {
            assert_eq!(adam_step(&mut adam, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn adam_schedule_halves() {
        let cfg = ObtiConfig {
            n_opt_iters: 10,
            ..ObtiConfig::default()
        };
        let mut adam = AdamState::new(1, &cfg).unwrap();
        assert_eq!(adam.learning_rate(), cfg.lr0);
        adam.step = 10;
        assert!((adam.learning_rate() - cfg.lr0 / 2.0).abs() < 1e-20);
    }

    #[test]
    fn obti_fixed_target_is_stationary() {
        let (grid, heat) = setup();
        let model = LinearModel::new(2, vec![Basis::Sin(vec![1.0, 0.0]), Basis::Constant]);
        let theta = ParamVector::new(vec![0.0, 0.4]);
        let u = model.evaluate(&theta, grid.points().view(), DerivOrder::Value).unwrap().value;
        let fit = obti_fit(&model, &theta, u.view(), &grid, &ObtiConfig::default()).unwrap();
        assert_eq!(fit.theta, theta);
        let state = EvolutionState::new(theta.clone(), 0.1, 0).unwrap();
        let s = obti_step(Problem::new(&model, &heat, &grid), state, &ObtiConfig::default()).unwrap();
        assert_eq!(s.theta, theta);
    }
}
