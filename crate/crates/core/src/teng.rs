//! Natural-gradient fitting of target fields and the time integrators built on it.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::baselines::{obti_step, tdvp_rk4_step, ObtiConfig, TdvpConfig};
use crate::error::{Result, TengError};
use crate::geometry::{subsample_params, CollocationGrid, IndexSet};
use crate::linalg::{lstsq, LstsqConfig, LstsqMethod, SvdSystem};
use crate::net::{Ansatz, DerivOrder, ParamVector};
use crate::pde::{initial_condition, InitialCondition, Operator};
use crate::rng::CounterRng;

/// Settings of [`teng_stepper`] and of the integrators that call it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepperConfig {
    /// Iterations for the first fit of a time step.
    pub n_it_first_stage: usize,
    /// Iterations for every later fit of the same step.
    pub n_it_second_stage: usize,
    /// Parameters sampled on the first iteration of a fit; `None` uses all.
    pub subsample_first: Option<usize>,
    /// Parameters sampled on later iterations; `None` uses all.
    pub subsample_rest: Option<usize>,
    pub alpha: f64,
    pub lstsq: LstsqConfig,
    pub early_stop_loss: f64,
    /// Damped retries, with the SVD solver, when an update raises the loss.
    /// Zero accepts every update as computed.
    pub damping_retries: usize,
    /// Smallest ridge parameter of the retries, relative to `σ_max²`. The
    /// damping grows tenfold per failed retry and shrinks fourfold after a
    /// damped success, carried across iterations of one fit.
    pub damping_init: f64,
}

/// Relative singular-value cutoff used by the steppers. Smaller cutoffs let
/// near-null directions of the network Jacobian blow up a single step.
pub const DEFAULT_RCOND: f64 = 1e-8;

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            n_it_first_stage: 7,
            n_it_second_stage: 5,
            subsample_first: None,
            subsample_rest: None,
            alpha: 0.5,
            lstsq: LstsqConfig {
                rcond: DEFAULT_RCOND,
                ..LstsqConfig::default()
            },
            early_stop_loss: 1e-14,
            damping_retries: 12,
            damping_init: 1e-12,
        }
    }
}

impl StepperConfig {
    /// Sparse update sizes used by the full-scale experiments.
    pub fn sparse(first: usize, rest: usize) -> Self {
        Self {
            subsample_first: Some(first),
            subsample_rest: Some(rest),
            ..Self::default()
        }
    }

    pub fn validate(&self, param_count: usize) -> Result<()> {
        if self.n_it_first_stage == 0 || self.n_it_second_stage == 0 {
            return Err(TengError::InvalidConfig("iteration counts must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(TengError::InvalidConfig("alpha must lie in (0, 1]".into()));
        }
        for n in [self.subsample_first, self.subsample_rest].into_iter().flatten() {
            if n == 0 || n > param_count {
                return Err(TengError::InvalidConfig(format!(
                    "subsample size {n} outside 1..={param_count}"
                )));
            }
        }
        if !(self.early_stop_loss >= 0.0) {
            return Err(TengError::InvalidConfig("early_stop_loss must be non-negative".into()));
        }
        if !(self.damping_init > 0.0 && self.damping_init.is_finite()) {
            return Err(TengError::InvalidConfig("damping_init must be positive".into()));
        }
        self.lstsq.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepperOutcome {
    pub theta: ParamVector,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
}

/// `(û − target, w Σ (û − target)²)` on the grid.
pub(crate) fn residual_and_loss<A: Ansatz + ?Sized>(
    model: &A,
    theta: &ParamVector,
    target: ArrayView1<f64>,
    grid: &CollocationGrid,
) -> Result<(Array1<f64>, f64)> {
    let u = model.evaluate(theta, grid.points().view(), DerivOrder::Value)?.value;
    let r = u - target;
    let loss = grid.weight() * r.dot(&r);
    Ok((r, loss))
}

fn draw_subset(n: Option<usize>, param_count: usize, rng: &mut CounterRng) -> Result<IndexSet> {
    match n {
        None => Ok(IndexSet::full(param_count)),
        Some(k) => subsample_params(param_count, k, rng),
    }
}

/// Fits `û_θ` to `target` by natural-gradient iterations.
///
/// Each iteration moves the field by `Δu = −2α(û − target)` and projects that
/// move onto the tangent space spanned by a random subset of parameters, via
/// weighted least squares. With `α = 1/2` this is a Gauss–Newton step.
///
/// With the SVD solver and `damping_retries > 0`, an update that raises the
/// loss is replaced by ridge-damped solves of the same system with growing
/// damping; if none lowers the loss the iterate is kept, so the loss never
/// increases. Otherwise every update is taken as computed.
pub fn teng_stepper<A: Ansatz + ?Sized>(
    model: &A,
    theta_init: &ParamVector,
    target: ArrayView1<f64>,
    grid: &CollocationGrid,
    cfg: &StepperConfig,
    n_it: usize,
    rng: &mut CounterRng,
) -> Result<StepperOutcome> {
    if target.len() != grid.len() {
        return Err(TengError::DimensionMismatch(format!(
            "target has {} entries, grid {} points",
            target.len(),
            grid.len()
        )));
    }
    let p = model.param_count();
    let sw = grid.weight().sqrt();
    let guarded = cfg.damping_retries > 0 && cfg.lstsq.method == LstsqMethod::Svd;
    let mut theta = theta_init.clone();
    let (mut r, mut loss) = residual_and_loss(model, &theta, target, grid)?;
    let initial_loss = loss;
    let mut mu = cfg.damping_init;
    let mut iterations = 0;
    for it in 0..n_it {
        if loss <= cfg.early_stop_loss {
            break;
        }
        let n_sub = if it == 0 { cfg.subsample_first } else { cfg.subsample_rest };
        let subset = draw_subset(n_sub, p, rng)?;
        let mut jac = model.jacobian(&theta, grid.points().view(), &subset)?.entries;
        jac *= sw;
        let rhs = &r * (-2.0 * cfg.alpha * sw);
        let solver_err = |e| TengError::Solver {
            iteration: it,
            source: Box::new(e),
        };
        iterations = it + 1;
        if !guarded {
            let delta = lstsq(jac.view(), rhs.view(), &cfg.lstsq).map_err(solver_err)?;
            theta.add_on_subset(&subset, delta.view());
            (r, loss) = residual_and_loss(model, &theta, target, grid)?;
        } else {
            let sys = SvdSystem::new(jac.view(), rhs.view()).map_err(solver_err)?;
            let smax2 = sys.sigma_max().powi(2);
            let mut improved = false;
            for attempt in 0..=cfg.damping_retries {
                let delta = if attempt == 0 {
                    sys.truncated(cfg.lstsq.rcond)
                } else {
                    sys.damped(mu * smax2)
                };
                let mut trial = theta.clone();
                trial.add_on_subset(&subset, delta.view());
                if let Ok((tr, tl)) = residual_and_loss(model, &trial, target, grid) {
                    if tl < loss {
                        (theta, r, loss) = (trial, tr, tl);
                        improved = true;
                        if attempt > 0 {
                            mu = (mu / 4.0).max(cfg.damping_init);
                        }
                        break;
                    }
                }
                if attempt > 0 {
                    mu *= 10.0;
                }
            }
            if !improved && n_sub.is_none() {
                break;
            }
        }
    }
    Ok(StepperOutcome {
        theta,
        initial_loss,
        final_loss: loss,
        iterations,
    })
}

/// `(û, L û)` on the grid.
pub fn field_and_rhs<A: Ansatz + ?Sized, O: Operator + ?Sized>(
    model: &A,
    op: &O,
    theta: &ParamVector,
    grid: &CollocationGrid,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let fb = model.evaluate(theta, grid.points().view(), op.required_order())?;
    let lu = op.apply(&fb)?;
    Ok((fb.value, lu))
}

/// `û + Δt L û` on the grid.
pub fn build_target_euler<A: Ansatz + ?Sized, O: Operator + ?Sized>(
    model: &A,
    op: &O,
    theta: &ParamVector,
    grid: &CollocationGrid,
    dt: f64,
) -> Result<Array1<f64>> {
    let (u, lu) = field_and_rhs(model, op, theta, grid)?;
    Ok(u + &(lu * dt))
}

/// What a time integrator needs besides the evolving state.
pub struct Problem<'a, A: ?Sized, O: ?Sized> {
    pub model: &'a A,
    pub op: &'a O,
    pub grid: &'a CollocationGrid,
}

impl<A: ?Sized, O: ?Sized> Clone for Problem<'_, A, O> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<A: ?Sized, O: ?Sized> Copy for Problem<'_, A, O> {}

impl<'a, A: Ansatz + ?Sized, O: Operator + ?Sized> Problem<'a, A, O> {
    pub fn new(model: &'a A, op: &'a O, grid: &'a CollocationGrid) -> Self {
        Self { model, op, grid }
    }
}

/// One row of the per-step residual log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualEntry {
    pub t: f64,
    /// Loss of the fit that produced the new parameters.
    pub final_loss: f64,
    /// Optimizer iterations spent on the step, all stages together.
    pub iterations: usize,
    /// Final loss of every stage fit, in order.
    pub stage_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionState {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub theta: ParamVector,
    pub rng: CounterRng,
    pub residual_log: Vec<ResidualEntry>,
}

impl EvolutionState {
    pub fn new(theta: ParamVector, dt: f64, seed: u64) -> Result<Self> {
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(TengError::InvalidConfig(format!("dt must be non-negative, got {dt}")));
        }
        Ok(Self {
            step: 0,
            t: 0.0,
            dt,
            theta,
            rng: CounterRng::new(seed),
            residual_log: vec![],
        })
    }

    /// Moves to the next step with new parameters and a log entry.
    pub(crate) fn advance(mut self, theta: ParamVector, losses: Vec<f64>, iterations: usize) -> Result<Self> {
        self.step += 1;
        self.t = self.step as f64 * self.dt;
        if !theta.is_finite() {
            return Err(TengError::Diverged { t: self.t });
        }
        self.theta = theta;
        self.residual_log.push(ResidualEntry {
            t: self.t,
            final_loss: *losses.last().unwrap_or(&0.0),
            iterations,
            stage_losses: losses,
        });
        Ok(self)
    }
}

/// First-order step: fit `û + Δt L û`.
pub fn step_euler<A: Ansatz + ?Sized, O: Operator + ?Sized>(
    pb: Problem<'_, A, O>,
    mut state: EvolutionState,
    cfg: &StepperConfig,
) -> Result<EvolutionState> {
    let target = build_target_euler(pb.model, pb.op, &state.theta, pb.grid, state.dt)?;
    let out = teng_stepper(
        pb.model,
        &state.theta,
        target.view(),
        pb.grid,
        cfg,
        cfg.n_it_first_stage,
        &mut state.rng,
    )?;
    state.advance(out.theta, vec![out.final_loss], out.iterations)
}

/// Second-order step: fit the Euler target, then the trapezoidal target
/// `û + Δt/2 (L û + L û_temp)` starting from the first fit.
pub fn step_heun<A: Ansatz + ?Sized, O: Operator + ?Sized>(
    pb: Problem<'_, A, O>,
    mut state: EvolutionState,
    cfg: &StepperConfig,
) -> Result<EvolutionState> {
    let dt = state.dt;
    let (u, k1) = field_and_rhs(pb.model, pb.op, &state.theta, pb.grid)?;
    let target = &u + &(&k1 * dt);
    let first = teng_stepper(
        pb.model,
        &state.theta,
        target.view(),
        pb.grid,
        cfg,
        cfg.n_it_first_stage,
        &mut state.rng,
    )?;
    let (_, k2) = field_and_rhs(pb.model, pb.op, &first.theta, pb.grid)?;
    let target = &u + &((&k1 + &k2) * (0.5 * dt));
    let second = teng_stepper(
        pb.model,
        &first.theta,
        target.view(),
        pb.grid,
        cfg,
        cfg.n_it_second_stage,
        &mut state.rng,
    )?;
    state.advance(
        second.theta,
        vec![first.final_loss, second.final_loss],
        first.iterations + second.iterations,
    )
}

/// Classical fourth-order step. Each stage field is a fitted network,
/// initialized from the previous stage's parameters, and the stage slopes
/// are `L` applied to those networks.
pub fn step_rk4<A: Ansatz + ?Sized, O: Operator + ?Sized>(
    pb: Problem<'_, A, O>,
    mut state: EvolutionState,
    cfg: &StepperConfig,
) -> Result<EvolutionState> {
    let dt = state.dt;
    let (u, k1) = field_and_rhs(pb.model, pb.op, &state.theta, pb.grid)?;
    let mut losses = Vec::with_capacity(4);
    let mut iterations = 0;
    let mut fit = |theta: &ParamVector, target: Array1<f64>, n_it: usize, rng: &mut CounterRng| {
        let out = teng_stepper(pb.model, theta, target.view(), pb.grid, cfg, n_it, rng)?;
        losses.push(out.final_loss);
        iterations += out.iterations;
        Ok::<_, TengError>(out.theta)
    };
    let th2 = fit(&state.theta, &u + &(&k1 * (0.5 * dt)), cfg.n_it_first_stage, &mut state.rng)?;
    let (_, k2) = field_and_rhs(pb.model, pb.op, &th2, pb.grid)?;
    let th3 = fit(&th2, &u + &(&k2 * (0.5 * dt)), cfg.n_it_second_stage, &mut state.rng)?;
    let (_, k3) = field_and_rhs(pb.model, pb.op, &th3, pb.grid)?;
    let th4 = fit(&th3, &u + &(&k3 * dt), cfg.n_it_second_stage, &mut state.rng)?;
    let (_, k4) = field_and_rhs(pb.model, pb.op, &th4, pb.grid)?;
    let incr = (&k1 + &(&k2 * 2.0) + &(&k3 * 2.0) + &k4) * (dt / 6.0);
    let theta = fit(&th4, &u + &incr, cfg.n_it_second_stage, &mut state.rng)?;
    state.advance(theta, losses, iterations)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    TengEuler,
    TengHeun,
    TengRk4,
    TdvpRk4,
    ObtiAdam,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::TengEuler => "teng_euler",
            Method::TengHeun => "teng_heun",
            Method::TengRk4 => "teng_rk4",
            Method::TdvpRk4 => "tdvp_rk4",
            Method::ObtiAdam => "obti_adam",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveConfig {
    pub method: Method,
    pub dt: f64,
    pub t_final: f64,
    /// Keep parameters every `checkpoint_stride` steps (and at the end).
    pub checkpoint_stride: usize,
    pub stepper: StepperConfig,
    pub tdvp: TdvpConfig,
    pub obti: ObtiConfig,
    pub seed: u64,
}

impl EvolveConfig {
    pub fn new(method: Method, dt: f64, t_final: f64) -> Self {
        Self {
            method,
            dt,
            t_final,
            checkpoint_stride: 1,
            stepper: StepperConfig::default(),
            tdvp: TdvpConfig::default(),
            obti: ObtiConfig::default(),
            seed: 0,
        }
    }

    /// Number of steps, requiring `t_final` to be a whole multiple of `dt`.
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.t_final >= 0.0) || !(self.dt > 0.0) {
            return Err(TengError::InvalidConfig("need t_final ≥ 0 and dt > 0".into()));
        }
        let n = (self.t_final / self.dt).round();
        if (n * self.dt - self.t_final).abs() > 1e-9 * self.t_final.max(self.dt) {
            return Err(TengError::HorizonMismatch {
                t_final: self.t_final,
                dt: self.dt,
            });
        }
        Ok(n as usize)
    }
}

/// Advances `state` by one step of `method`.
pub fn step<A: Ansatz + ?Sized, O: Operator + ?Sized>(
    pb: Problem<'_, A, O>,
    state: EvolutionState,
    cfg: &EvolveConfig,
) -> Result<EvolutionState> {
    match cfg.method {
        Method::TengEuler => step_euler(pb, state, &cfg.stepper),
        Method::TengHeun => step_heun(pb, state, &cfg.stepper),
        Method::TengRk4 => step_rk4(pb, state, &cfg.stepper),
        Method::TdvpRk4 => tdvp_rk4_step(pb, state, &cfg.tdvp),
        Method::ObtiAdam => obti_step(pb, state, &cfg.obti),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub t: f64,
    pub theta: ParamVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub checkpoints: Vec<Checkpoint>,
    pub residual_log: Vec<ResidualEntry>,
    pub final_state: EvolutionState,
}

/// Runs `t_final / dt` steps from `theta0`. `observer` sees the initial state
/// and every state after a step.
pub fn evolve<A, O, F>(
    pb: Problem<'_, A, O>,
    theta0: ParamVector,
    cfg: &EvolveConfig,
    mut observer: F,
) -> Result<Trajectory>
where
    A: Ansatz + ?Sized,
    O: Operator + ?Sized,
    F: FnMut(&EvolutionState) -> Result<()>,
{
    let n = cfg.n_steps()?;
    pb.model.check_params(&theta0)?;
    let stride = cfg.checkpoint_stride.max(1);
    let mut state = EvolutionState::new(theta0, cfg.dt, cfg.seed)?;
    let mut checkpoints = vec![Checkpoint {
        step: 0,
        t: 0.0,
        theta: state.theta.clone(),
    }];
    observer(&state)?;
    for k in 1..=n {
        state = step(pb, state, cfg)?;
        observer(&state)?;
        if k % stride == 0 || k == n {
            checkpoints.push(Checkpoint {
                step: k,
                t: state.t,
                theta: state.theta.clone(),
            });
        }
    }
    Ok(Trajectory {
        checkpoints,
        residual_log: state.residual_log.clone(),
        final_state: state,
    })
}

/// `Σ_n sqrt(final_loss_n)`: triangle-inequality bound on the accumulated
/// fitting error.
pub fn residual_bound(log: &[ResidualEntry]) -> f64 {
    log.iter().map(|e| e.final_loss.max(0.0).sqrt()).sum()
}

/// Running value of [`residual_bound`] after each entry.
pub fn residual_bound_cumulative(log: &[ResidualEntry]) -> Vec<f64> {
    log.iter()
        .scan(0.0, |acc, e| {
            *acc += e.final_loss.max(0.0).sqrt();
            Some(*acc)
        })
        .collect()
}

/// Settings of [`fit_initial`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Stop the value-and-gradient stage once its loss is below this.
    pub stage1_loss: f64,
    pub stage1_max_iters: usize,
    /// Stop the value-only stage once its loss is below this.
    pub stage2_loss: f64,
    pub stage2_max_iters: usize,
    /// Stage-2 iterations without a 1% gain before the cutoff is lowered.
    pub stage2_patience: usize,
    /// Singular-value cutoff of stage 1 and first cutoff of stage 2.
    pub fit_rcond: f64,
    /// Smallest singular-value cutoff stage 2 descends to.
    pub stage2_rcond_min: f64,
    /// Initial Levenberg–Marquardt damping of the value-and-gradient stage,
    /// relative to the largest squared singular value.
    pub damping_init: f64,
    /// Damping increases tried before the stage gives up on a step.
    pub max_damping_retries: usize,
    pub stepper: StepperConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            stage1_loss: 1e-7,
            stage1_max_iters: 300,
            stage2_loss: 1e-13,
            stage2_max_iters: 200,
            stage2_patience: 20,
            fit_rcond: 1e-7,
            stage2_rcond_min: 1e-8,
            damping_init: 1e-3,
            max_damping_retries: 30,
            stepper: StepperConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self, param_count: usize) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(self.stage1_loss >= 0.0 && self.stage2_loss >= 0.0) {
            return Err(TengError::InvalidConfig("fit loss thresholds must be non-negative".into()));
        }
        if !(positive(self.damping_init) && positive(self.fit_rcond) && positive(self.stage2_rcond_min)) {
            return Err(TengError::InvalidConfig(
                "damping_init, fit_rcond and stage2_rcond_min must be positive".into(),
            ));
        }
        if self.stage2_patience == 0 {
            return Err(TengError::InvalidConfig("stage2_patience must be at least 1".into()));
        }
        self.stepper.validate(param_count)
    }
}

const STAGE2_MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitStatus {
    Converged,
    /// The value-only stage hit its iteration cap above its threshold.
    CapReached,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub theta: ParamVector,
    pub stage1_loss: f64,
    pub stage1_iters: usize,
    pub stage2_loss: f64,
    pub stage2_iters: usize,
    pub status: FitStatus,
}

fn sobolev_residual<A: Ansatz + ?Sized>(
    model: &A,
    theta: &ParamVector,
    grid: &CollocationGrid,
    target: &Array1<f64>,
) -> Result<(Array1<f64>, f64)> {
    let fb = model.evaluate(theta, grid.points().view(), DerivOrder::Gradient)?;
    let n = grid.len();
    let d = grid.dims();
    let grad = fb.grad.expect("gradient requested");
    let mut r = Array1::zeros((d + 1) * n);
    for p in 0..n {
        r[p] = fb.value[p];
        for k in 0..d {
            r[(k + 1) * n + p] = grad[[p, k]];
        }
    }
    r -= target;
    let loss = grid.weight() * r.dot(&r);
    Ok((r, loss))
}

/// Two-stage fit of the initial condition.
///
/// Stage 1 minimizes `‖û − u₀‖² + Σ_i ‖∂_i û − ∂_i u₀‖²` over all
/// parameters. Each iteration tries the Gauss–Newton step and falls back to
/// Levenberg–Marquardt damping, raised until the loss decreases.
///
/// Stage 2 switches to the plain `‖û − u₀‖²` loss and runs undamped stepper
/// iterations, which may pass through higher losses; the best iterate is
/// kept. When `stage2_patience` iterations bring no real gain the cutoff
/// `rcond` drops tenfold, down to `stage2_rcond_min`, restarting from the
/// best iterate.
pub fn fit_initial<A: Ansatz + ?Sized>(
    model: &A,
    theta_init: ParamVector,
    ic: &InitialCondition,
    grid: &CollocationGrid,
    cfg: &FitConfig,
    rng: &mut CounterRng,
) -> Result<FitReport> {
    let u0 = initial_condition(ic, grid.points().view(), DerivOrder::Gradient)?;
    let values = u0.value.clone();
    fit_initial_to(model, theta_init, &values, u0.grad.as_ref(), grid, cfg, rng)
}

/// [`fit_initial`] against sampled target values and, for stage 1, gradients.
/// Without gradients, or for ansatzes lacking a Sobolev Jacobian, stage 1 is skipped.
pub fn fit_initial_to<A: Ansatz + ?Sized>(
    model: &A,
    theta_init: ParamVector,
    values: &Array1<f64>,
    grads: Option<&Array2<f64>>,
    grid: &CollocationGrid,
    cfg: &FitConfig,
    rng: &mut CounterRng,
) -> Result<FitReport> {
    model.check_params(&theta_init)?;
    let n = grid.len();
    let d = grid.dims();
    let sw = grid.weight().sqrt();
    let mut theta = theta_init;
    let mut stage1_loss = f64::NAN;
    let mut stage1_iters = 0;

    let sobolev_ok = grads.is_some()
        && !matches!(
            model.sobolev_jacobian(&theta, grid.points().slice(ndarray::s![0..1, ..])),
            Err(TengError::Unsupported(_))
        );
    if let (true, Some(g)) = (sobolev_ok, grads) {
        let mut target = Array1::zeros((d + 1) * n);
        for p in 0..n {
            target[p] = values[p];
            for k in 0..d {
                target[(k + 1) * n + p] = g[[p, k]];
            }
        }
        let (mut r, mut loss) = sobolev_residual(model, &theta, grid, &target)?;
        let mut mu = cfg.damping_init;
        while stage1_iters < cfg.stage1_max_iters && loss > cfg.stage1_loss {
            let mut jac = model.sobolev_jacobian(&theta, grid.points().view())?;
            jac *= sw;
            let rhs = &r * (-sw);
            let sys = SvdSystem::new(jac.view(), rhs.view()).map_err(|e| TengError::Solver {
                iteration: stage1_iters,
                source: Box::new(e),
            })?;
            let smax2 = sys.sigma_max().powi(2);
            stage1_iters += 1;
            let mut accepted = false;
            for attempt in 0..=cfg.max_damping_retries + 1 {
                let delta = if attempt == 0 {
                    sys.truncated(cfg.fit_rcond)
                } else {
                    sys.damped(mu * smax2)
                };
                let mut trial = theta.clone();
                trial.axpy(1.0, delta.as_slice().expect("contiguous"));
                if let Ok((tr, tl)) = sobolev_residual(model, &trial, grid, &target) {
                    if tl < loss {
                        theta = trial;
                        r = tr;
                        loss = tl;
                        accepted = true;
                        if attempt > 0 {
                            mu = (mu / 3.0).max(1e-16);
                        }
                        break;
                    }
                }
                if attempt > 0 {
                    mu *= 4.0;
                }
            }
            if !accepted {
                break;
            }
        }
        stage1_loss = loss;
    }

    let (_, mut loss) = residual_and_loss(model, &theta, values.view(), grid)?;
    let mut stage2_iters = 0;
    let mut rcond = cfg.fit_rcond;
    while loss > cfg.stage2_loss && stage2_iters < cfg.stage2_max_iters {
        let mut cur = theta.clone();
        let mut since_best = 0;
        while loss > cfg.stage2_loss && stage2_iters < cfg.stage2_max_iters && since_best < cfg.stage2_patience {
            let mut it_cfg = cfg.stepper;
            it_cfg.lstsq.rcond = rcond;
            it_cfg.damping_retries = 0;
            it_cfg.early_stop_loss = 0.0;
            if stage2_iters > 0 {
                it_cfg.subsample_first = it_cfg.subsample_rest;
            }
            let out = teng_stepper(model, &cur, values.view(), grid, &it_cfg, 1, rng);
            stage2_iters += 1;
            since_best += 1;
            match out {
                Ok(out) if out.final_loss.is_finite() => {
                    if out.final_loss < loss * (1.0 - STAGE2_MIN_GAIN) {
                        since_best = 0;
                    }
                    if out.final_loss < loss {
                        theta = out.theta.clone();
                        loss = out.final_loss;
                    }
                    cur = out.theta;
                }
                _ => break,
            }
        }
        rcond /= 10.0;
        if rcond < cfg.stage2_rcond_min * (1.0 - 1e-9) {
            break;
        }
    }
    Ok(FitReport {
        theta,
        stage1_loss,
        stage1_iters,
        stage2_loss: loss,
        stage2_iters,
        status: if loss <= cfg.stage2_loss {
            FitStatus::Converged
        } else {
            FitStatus::CapReached
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::tensor_grid;
    use crate::net::{Basis, LinearModel};
    use crate::pde::PdeSpec;
    use std::f64::consts::PI;

    fn line_grid(n: usize) -> CollocationGrid {
        let pts = Array2::from_shape_fn((n, 1), |(i, _)| 2.0 * PI * i as f64 / n as f64);
        CollocationGrid::from_points(pts, 2.0 * PI / n as f64).unwrap()
    }

    #[test]
    fn linear_toy_one_iteration() {
        let grid = line_grid(32);
        let model = LinearModel::sin_cos_1d();
        let target = grid.points().column(0).mapv(f64::sin);
        let mut rng = CounterRng::new(0);
        let out = teng_stepper(
            &model,
            &ParamVector::zeros(2),
            target.view(),
            &grid,
            &StepperConfig::default(),
            1,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.iterations, 1);
        assert!((out.theta.as_slice()[0] - 1.0).abs() < 1e-14);
        assert!(out.theta.as_slice()[1].abs() < 1e-14);
        assert!(out.final_loss <= 1e-20);
    }

    #[test]
    fn zero_residual_stops_early() {
        let grid = line_grid(16);
        let model = LinearModel::sin_cos_1d();
        let theta = ParamVector::new(vec![0.3, -0.2]);
        let target = model.evaluate(&theta, grid.points().view(), DerivOrder::Value).unwrap().value;
        let out = teng_stepper(
            &model,
            &theta,
            target.view(),
            &grid,
            &StepperConfig::default(),
            5,
            &mut CounterRng::new(1),
        )
        .unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.initial_loss, 0.0);
        assert_eq!(out.theta, theta);
    }

    #[test]
    fn euler_target_examples() {
        let grid = tensor_grid(2, 16, &[2.0 * PI, 2.0 * PI]).unwrap();
        let heat = PdeSpec::heat(2).unwrap();
        let model = LinearModel::new(2, vec![Basis::Sin(vec![1.0, 0.0]), Basis::Constant]);
        let theta = ParamVector::new(vec![1.0, 0.0]);
        let u = model.evaluate(&theta, grid.points().view(), DerivOrder::Value).unwrap().value;
        let t0 = build_target_euler(&model, &heat, &theta, &grid, 0.0).unwrap();
        assert_eq!(t0, u);
        let dt = 0.05;
        let t1 = build_target_euler(&model, &heat, &theta, &grid, dt).unwrap();
        for (a, b) in t1.iter().zip(u.iter()) {
            assert!((a - (1.0 - 0.1 * dt) * b).abs() < 1e-15);
        }
        let burgers = PdeSpec::burgers();
        let c = ParamVector::new(vec![0.0, 0.8]);
        let tc = build_target_euler(&model, &burgers, &c, &grid, dt).unwrap();
        assert!(tc.iter().all(|&v| v == 0.8));
    }

    fn heat_mode_step(method: Method, dt: f64) -> f64 {
        let grid = tensor_grid(2, 16, &[2.0 * PI, 2.0 * PI]).unwrap();
        let heat = PdeSpec::heat(2).unwrap();
        let model = LinearModel::new(2, vec![Basis::Sin(vec![2.0, 1.0]), Basis::Cos(vec![1.0, 1.0])]);
        let mut cfg = EvolveConfig::new(method, dt, dt);
        cfg.stepper.early_stop_loss = 0.0;
        let traj = evolve(
            Problem::new(&model, &heat, &grid),
            ParamVector::new(vec![1.0, 0.0]),
            &cfg,
            |_| Ok(()),
        )
        .unwrap();
        traj.final_state.theta.as_slice()[0]
    }

    #[test]
    fn single_mode_taylor_factors() {
        let dt = 0.1;
        let z = 0.1 * 5.0 * dt;
        let euler = heat_mode_step(Method::TengEuler, dt);
        let heun = heat_mode_step(Method::TengHeun, dt);
        let rk4 = heat_mode_step(Method::TengRk4, dt);
        assert!((euler - (1.0 - z)).abs() < 1e-13);
        assert!((heun - (1.0 - z + z * z / 2.0)).abs() < 1e-13);
        assert!((rk4 - (1.0 - z + z * z / 2.0 - z.powi(3) / 6.0 + z.powi(4) / 24.0)).abs() < 1e-13);
    }

    #[test]
    fn zero_dt_is_identity() {
        let grid = tensor_grid(2, 8, &[2.0 * PI, 2.0 * PI]).unwrap();
        let heat = PdeSpec::heat(2).unwrap();
        let model = LinearModel::new(2, vec![Basis::Sin(vec![1.0, 0.0])]);
        let pb = Problem::new(&model, &heat, &grid);
        let theta = ParamVector::new(vec![0.7]);
        let cfg = StepperConfig::default();
        for f in [step_euler::<LinearModel, PdeSpec>, step_heun, step_rk4] {
            let s = EvolutionState::new(theta.clone(), 0.0, 3).unwrap();
            let s = f(pb, s, &cfg).unwrap();
            assert_eq!(s.theta, theta);
            assert_eq!(s.residual_log[0].final_loss, 0.0);
        }
    }

    #[test]
    fn horizon_and_log_length() {
        let grid = tensor_grid(2, 8, &[2.0 * PI, 2.0 * PI]).unwrap();
        let heat = PdeSpec::heat(2).unwrap();
        let model = LinearModel::new(2, vec![Basis::Sin(vec![1.0, 0.0])]);
        let pb = Problem::new(&model, &heat, &grid);
        let theta = ParamVector::new(vec![0.7]);
        let cfg = EvolveConfig::new(Method::TengEuler, 0.01, 0.0);
        let traj = evolve(pb, theta.clone(), &cfg, |_| Ok(())).unwrap();
        assert_eq!(traj.checkpoints.len(), 1);
        assert!(traj.residual_log.is_empty());

        let cfg = EvolveConfig::new(Method::TengEuler, 0.01, 0.03);
        let traj = evolve(pb, theta.clone(), &cfg, |_| Ok(())).unwrap();
        let ts: Vec<f64> = traj.residual_log.iter().map(|e| e.t).collect();
        assert_eq!(ts.len(), 3);
        for (k, t) in ts.iter().enumerate() {
            assert!((t - 0.01 * (k + 1) as f64).abs() < 1e-15);
        }

        let cfg = EvolveConfig::new(Method::TengEuler, 0.01, 0.025);
        assert!(matches!(
            evolve(pb, theta, &cfg, |_| Ok(())),
            Err(TengError::HorizonMismatch { .. })
        ));
    }

    #[test]
    fn residual_bound_examples() {
        let e = |l: f64| ResidualEntry {
            t: 1.0,
            final_loss: l,
            iterations: 1,
            stage_losses: vec![l],
        };
        assert!((residual_bound(&[e(1e-16)]) - 1e-8).abs() < 1e-22);
        assert_eq!(residual_bound(&[e(0.0), e(0.0)]), 0.0);
        let log = vec![e(0.04); 5];
        assert!((residual_bound(&log) - 1.0).abs() < 1e-14);
        let cum = residual_bound_cumulative(&log);
        assert!(cum.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn fit_initial_exact_representation() {
        let grid = line_grid(32);
        let model = LinearModel::sin_cos_1d();
        let values = grid.points().column(0).mapv(f64::sin);
        let grads = grid.points().mapv(f64::cos);
        let cfg = FitConfig {
            stage1_loss: 1e-20,
            stage2_loss: 1e-20,
            ..FitConfig::default()
        };
        let rep = fit_initial_to(
            &model,
            ParamVector::zeros(2),
            &values,
            Some(&grads),
            &grid,
            &cfg,
            &mut CounterRng::new(0),
        )
        .unwrap();
        assert_eq!(rep.stage1_iters, 1);
        assert!(rep.stage1_loss <= 1e-20);
        assert!(rep.stage2_loss <= 1e-20);
        assert_eq!(rep.status, FitStatus::Converged);
    }

    #[test]
    fn stepper_config_validation() {
        assert!(StepperConfig::default().validate(10).is_ok());
        assert!(StepperConfig::sparse(11, 5).validate(10).is_err());
        let bad = StepperConfig {
            alpha: 0.0,
            ..StepperConfig::default()
        };
        assert!(bad.validate(10).is_err());
    }
}
