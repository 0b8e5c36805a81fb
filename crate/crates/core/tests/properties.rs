//! Property checks of the solvers, operators and drivers.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use teng_core::{
    apply_operator, build_target_euler, cgls, evolve, init_params, initial_condition, obti_fit, step, svd_lstsq,
    tdvp_rhs, teng_stepper, tensor_grid, Ansatz, CollocationGrid, CounterRng, DerivOrder, EvolutionState,
    ErrorSeries, EvolveConfig, FieldBatch, IndexSet, InitialCondition, LstsqConfig, Method, Mlp, NetworkArch, ObtiConfig,
    PdeKind, PdeSpec, Problem, StepperConfig, TrigTable,
};

fn random_matrix(rows: usize, cols: usize, rng: &mut CounterRng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.uniform(-1.0, 1.0))
}

fn random_vec(n: usize, rng: &mut CounterRng) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| rng.uniform(-1.0, 1.0))
}

fn rel(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let d = a - b;
    d.dot(&d).sqrt() / b.dot(b).sqrt().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn global_error_recomputes_from_per_time_values(seed in any::<u64>(), n_times in 1usize..12) {
        let g = tensor_grid(2, 8, &[2.0 * PI, 2.0 * PI]).unwrap();
        let mut rng = CounterRng::new(seed);
        let mut es = ErrorSeries::default();
        let mut refs = vec![];
        for k in 0..n_times {
            let r = random_vec(g.len(), &mut rng) * rng.uniform(0.1, 10.0);
            let u = &r + &(random_vec(g.len(), &mut rng) * rng.uniform(0.0, 0.5));
            es.push(k as f64, u.view(), r.view(), &g).unwrap();
            refs.push(r);
        }
        // Σ rel_k² ‖ref_k‖² / Σ ‖ref_k‖², with the reference norms recomputed
        let norms: Vec<f64> = refs.iter().map(|r| r.dot(r) * g.weight()).collect();
        let num: f64 = es.rel_l2.iter().zip(&norms).map(|(e, n)| e * e * n).sum();
        let expect = (num / norms.iter().sum::<f64>()).sqrt();
        prop_assert!((es.global_rel_l2().unwrap() - expect).abs() <= 1e-12 * expect.max(1.0));
    }

    #[test]
    fn svd_and_cgls_agree_on_full_rank_systems(seed in any::<u64>(), n in 12usize..40, m in 2usize..10) {
        let mut rng = CounterRng::new(seed);
        let j = random_matrix(n, m, &mut rng);
        let b = random_vec(n, &mut rng);
        let x_svd = svd_lstsq(j.view(), b.view(), 1e-12).unwrap();
        let x_cg = cgls(j.view(), b.view(), 10 * m, 1e-14).unwrap().x;
        prop_assert!(rel(&x_cg, &x_svd) <= 1e-8);
    }

    #[test]
    fn consistent_overdetermined_system_is_recovered(seed in any::<u64>()) {
        let mut rng = CounterRng::new(seed);
        let j = random_matrix(40, 10, &mut rng);
        let x_star = random_vec(10, &mut rng);
        let x = svd_lstsq(j.view(), j.dot(&x_star).view(), 1e-12).unwrap();
        let e = (&x - &x_star).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert!(e <= 1e-10, "{e:e}");
    }

    #[test]
    fn svd_solution_minimizes_residual(seed in any::<u64>()) {
        let mut rng = CounterRng::new(seed);
        let j = random_matrix(30, 8, &mut rng);
        let b = random_vec(30, &mut rng);
        let x = svd_lstsq(j.view(), b.view(), 1e-12).unwrap();
        let res = |y: &Array1<f64>| {
            let r = j.dot(y) - &b;
            r.dot(&r).sqrt()
        };
        let best = res(&x);
        for _ in 0..100 {
            // J has full column rank, so the retained row space is all of R⁸.
            let y = &x + &(random_vec(8, &mut rng) * 1e-3);
            prop_assert!(best <= res(&y) + 1e-10);
        }
    }

    #[test]
    fn cgls_reaches_minimum_norm_solution_of_underdetermined_systems(seed in any::<u64>()) {
        let mut rng = CounterRng::new(seed);
        let j = random_matrix(10, 40, &mut rng);
        let b = random_vec(10, &mut rng);
        let x_svd = svd_lstsq(j.view(), b.view(), 1e-12).unwrap();
        let x_cg = cgls(j.view(), b.view(), 200, 1e-14).unwrap().x;
        prop_assert!(rel(&x_cg, &x_svd) <= 1e-8);
    }
}

/// Largest relative deviation of `(u, ∇u, Δu)` from central differences of `u`.
fn ic_fd_error(ic: &InitialCondition, x: &[f64]) -> f64 {
    let d = x.len();
    let value = |p: &[f64]| {
        let pts = Array2::from_shape_vec((1, d), p.to_vec()).unwrap();
        initial_condition(ic, pts.view(), DerivOrder::Value).unwrap().value[0]
    };
    let pts = Array2::from_shape_vec((1, d), x.to_vec()).unwrap();
    let fb = initial_condition(ic, pts.view(), DerivOrder::Laplacian).unwrap();
    let grad = fb.grad.unwrap();
    let lap = fb.laplacian.unwrap()[0];
    let u0 = value(x);

    let shifted = |i: usize, h: f64| {
        let mut p = x.to_vec();
        p[i] += h;
        value(&p)
    };
    // Fourth-order stencils keep truncation error below the tolerance.
    let h = 1e-3;
    let fd_grad: Vec<f64> = (0..d)
        .map(|i| (-shifted(i, 2.0 * h) + 8.0 * shifted(i, h) - 8.0 * shifted(i, -h) + shifted(i, -2.0 * h)) / (12.0 * h))
        .collect();
    let h = 2.5e-3;
    let second: Vec<f64> = (0..d)
        .map(|i| {
            (-shifted(i, 2.0 * h) + 16.0 * shifted(i, h) - 30.0 * u0 + 16.0 * shifted(i, -h) - shifted(i, -2.0 * h))
                / (12.0 * h * h)
        })
        .collect();
    let fd_lap: f64 = second.iter().sum();

    let gscale = fd_grad.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    let g_err = (0..d).map(|i| (grad[[0, i]] - fd_grad[i]).abs()).fold(0.0, f64::max) / gscale;
    let lscale = second.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    g_err.max((lap - fd_lap).abs() / lscale)
}

#[test]
fn initial_condition_derivatives_match_finite_differences() {
    let ics = [
        InitialCondition::TwoDimExp,
        InitialCondition::ThreeDimTrig(TrigTable::preset()),
        InitialCondition::BurgersAlt,
    ];
    let mut rng = CounterRng::new(5);
    for ic in &ics {
        let lengths = ic.lengths();
        for _ in 0..50 {
            let x: Vec<f64> = lengths.iter().map(|&l| rng.uniform(0.0, l)).collect();
            let e = ic_fd_error(ic, &x);
            assert!(e <= 1e-7, "{} at {x:?}: {e:e}", ic.name());
        }
    }
}

fn random_batch(n: usize, rng: &mut CounterRng) -> FieldBatch {
    FieldBatch {
        points: random_matrix(n, 2, rng),
        value: random_vec(n, rng),
        grad: Some(random_matrix(n, 2, rng)),
        laplacian: Some(random_vec(n, rng)),
    }
}

#[test]
fn heat_operator_is_linear() {
    let heat = PdeSpec::heat(2).unwrap();
    let mut rng = CounterRng::new(17);
    for _ in 0..20 {
        let u = random_batch(32, &mut rng);
        let v = random_batch(32, &mut rng);
        let (a, b) = (rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0));
        let comb = FieldBatch {
            points: u.points.clone(),
            value: &u.value * a + &v.value * b,
            grad: Some(u.grad.as_ref().unwrap() * a + v.grad.as_ref().unwrap() * b),
            laplacian: Some(u.laplacian.as_ref().unwrap() * a + v.laplacian.as_ref().unwrap() * b),
        };
        let lhs = apply_operator(&heat, &comb).unwrap();
        let rhs = apply_operator(&heat, &u).unwrap() * a + apply_operator(&heat, &v).unwrap() * b;
        let e = (&lhs - &rhs).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(e <= 1e-12, "{e:e}");
    }
}

#[test]
fn operators_act_pointwise() {
    let mut rng = CounterRng::new(23);
    for kind in [PdeKind::Heat, PdeKind::AllenCahn, PdeKind::Burgers] {
        let pde = PdeSpec::new(kind, kind.default_nu(), 2).unwrap();
        let fb = random_batch(20, &mut rng);
        let perm: Vec<usize> = (0..20).map(|i| (7 * i + 3) % 20).collect();
        let permuted = FieldBatch {
            points: fb.points.select(ndarray::Axis(0), &perm),
            value: fb.value.select(ndarray::Axis(0), &perm),
            grad: fb.grad.as_ref().map(|g| g.select(ndarray::Axis(0), &perm)),
            laplacian: fb.laplacian.as_ref().map(|l| l.select(ndarray::Axis(0), &perm)),
        };
        let a = apply_operator(&pde, &fb).unwrap();
        let b = apply_operator(&pde, &permuted).unwrap();
        for (k, &p) in perm.iter().enumerate() {
            assert_eq!(b[k], a[p]);
        }
    }
}

fn small_net(seed: u64) -> (Mlp, teng_core::ParamVector) {
    let arch = NetworkArch::new(2, 2, 6, 2);
    (Mlp::new(arch.clone()).unwrap(), init_params(&arch, seed).unwrap())
}

#[test]
fn tdvp_velocity_ignores_point_order() {
    let grid = tensor_grid(2, 12, &[2.0 * PI, 2.0 * PI]).unwrap();
    let n = grid.len();
    let perm: Vec<usize> = (0..n).map(|i| (37 * i + 11) % n).collect();
    let shuffled = CollocationGrid::from_points(grid.points().select(ndarray::Axis(0), &perm), grid.weight()).unwrap();
    for (seed, pde) in [(1, PdeSpec::heat(2).unwrap()), (2, PdeSpec::allen_cahn()), (3, PdeSpec::burgers())] {
        let (mlp, theta) = small_net(seed);
        let full = IndexSet::full(mlp.param_count());
        // Reordering points only changes rounding in J; a cutoff of 1e-6 keeps
        // the solve's amplification of that rounding below the tolerance.
        let solver = LstsqConfig { rcond: 1e-6, ..LstsqConfig::default() };
        let a = tdvp_rhs(&mlp, &pde, &theta, &grid, &full, &solver).unwrap();
        let b = tdvp_rhs(&mlp, &pde, &theta, &shuffled, &full, &solver).unwrap();
        let e = rel(&Array1::from(b.velocity), &Array1::from(a.velocity));
        assert!(e <= 1e-8, "{e:e}");
    }
}

#[test]
fn tdvp_projection_is_exact_for_representable_flows() {
    use teng_core::{Basis, LinearModel, ParamVector};
    let grid = tensor_grid(2, 16, &[2.0 * PI, 2.0 * PI]).unwrap();
    let model = LinearModel::new(
        2,
        vec![
            Basis::Constant,
            Basis::Cos(vec![1.0, 0.0]),
            Basis::Sin(vec![0.0, 2.0]),
            Basis::Cos(vec![1.0, 1.0]),
        ],
    );
    let theta = ParamVector::new(vec![0.3, -0.7, 1.1, 0.4]);
    let heat = PdeSpec::heat(2).unwrap();
    let v = tdvp_rhs(&model, &heat, &theta, &grid, &IndexSet::full(4), &LstsqConfig::default()).unwrap();
    assert!(v.residual_sq <= 1e-10);
    let expect = [0.0, -0.1 * -0.7, -0.4 * 1.1, -0.2 * 0.4];
    for (a, b) in v.velocity.iter().zip(expect) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn more_iterations_never_raise_the_step_loss() {
    let grid = tensor_grid(2, 10, &[2.0 * PI, 2.0 * PI]).unwrap();
    let heat = PdeSpec::heat(2).unwrap();
    for seed in 0..4 {
        let (mlp, theta) = small_net(seed);
        let target = build_target_euler(&mlp, &heat, &theta, &grid, 0.05).unwrap();
        let cfg = StepperConfig {
            early_stop_loss: 0.0,
            ..StepperConfig::default()
        };
        let one = teng_stepper(&mlp, &theta, target.view(), &grid, &cfg, 1, &mut CounterRng::new(seed)).unwrap();
        let many = teng_stepper(&mlp, &theta, target.view(), &grid, &cfg, 7, &mut CounterRng::new(seed)).unwrap();
        assert!(one.final_loss <= one.initial_loss);
        assert!(many.final_loss <= one.final_loss, "{} > {}", many.final_loss, one.final_loss);
    }
}

#[test]
fn stepping_twice_equals_evolving_two_steps() {
    let grid = tensor_grid(2, 10, &[2.0 * PI, 2.0 * PI]).unwrap();
    let heat = PdeSpec::heat(2).unwrap();
    let (mlp, theta) = small_net(9);
    let pb = Problem::new(&mlp, &heat, &grid);
    for method in [Method::TengEuler, Method::TengHeun, Method::TdvpRk4] {
        let mut cfg = EvolveConfig::new(method, 0.01, 0.02);
        cfg.seed = 42;
        cfg.stepper.subsample_first = Some(20);
        cfg.stepper.subsample_rest = Some(15);
        cfg.tdvp.subsample = Some(20);
        let traj = evolve(pb, theta.clone(), &cfg, |_| Ok(())).unwrap();
        let mut state = EvolutionState::new(theta.clone(), 0.01, 42).unwrap();
        state = step(pb, state, &cfg).unwrap();
        state = step(pb, state, &cfg).unwrap();
        let a: Vec<u64> = traj.final_state.theta.as_slice().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = state.theta.as_slice().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b, "{method:?}");
        assert_eq!(traj.residual_log, state.residual_log);
    }
}

#[test]
fn adam_loss_settles_monotonically() {
    let grid = tensor_grid(2, 16, &[2.0 * PI, 2.0 * PI]).unwrap();
    let heat = PdeSpec::heat(2).unwrap();
    let arch = NetworkArch::new(2, 3, 16, 3);
    let mlp = Mlp::new(arch.clone()).unwrap();
    let theta = init_params(&arch, 4).unwrap();
    let target = build_target_euler(&mlp, &heat, &theta, &grid, 0.005).unwrap();
    let fit = obti_fit(&mlp, &theta, target.view(), &grid, &ObtiConfig::default()).unwrap();
    let last = &fit.losses[fit.losses.len() - 51..];
    for w in last.windows(2) {
        assert!(w[1] <= w[0], "{} > {}", w[1], w[0]);
    }
}
