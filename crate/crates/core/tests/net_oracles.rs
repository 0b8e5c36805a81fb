//! Finite-difference oracles for the network's spatial and parameter derivatives.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use teng_core::{init_params, Ansatz, CounterRng, DerivOrder, IndexSet, Mlp, NetworkArch, ParamVector};

fn value_at(mlp: &Mlp, theta: &ParamVector, x: &[f64]) -> f64 {
    let pts = Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap();
    mlp.evaluate(theta, pts.view(), DerivOrder::Value).unwrap().value[0]
}

const LAP_TOL: f64 = 1e-5;

fn max_abs(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(0.0, |a, b| a.max(b.abs()))
}

/// Vector-wise relative error `‖a − b‖∞ / ‖b‖∞`.
fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num = max_abs(a.iter().zip(b).map(|(x, y)| x - y));
    num / max_abs(b.iter().copied()).max(1e-300)
}

fn setup(dims: usize, seed: u64) -> (Mlp, ParamVector, Vec<f64>) {
    let arch = NetworkArch::new(dims, 3, 6, 3);
    let mlp = Mlp::new(arch.clone()).unwrap();
    let theta = init_params(&arch, seed).unwrap();
    let mut rng = CounterRng::new(seed ^ 0xABCD);
    let x = (0..dims).map(|_| rng.uniform(0.0, 2.0 * PI)).collect();
    (mlp, theta, x)
}

fn check_spatial(dims: usize, seed: u64) -> (f64, f64) {
    let (mlp, theta, x) = setup(dims, seed);
    let pts = Array2::from_shape_vec((1, dims), x.clone()).unwrap();
    let fb = mlp.evaluate(&theta, pts.view(), DerivOrder::Laplacian).unwrap();
    let grad: Vec<f64> = fb.grad.unwrap().row(0).to_vec();
    let u0 = value_at(&mlp, &theta, &x);

    let h = 1e-5;
    let fd_grad: Vec<f64> = (0..dims)
        .map(|i| {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            (value_at(&mlp, &theta, &xp) - value_at(&mlp, &theta, &xm)) / (2.0 * h)
        })
        .collect();
    let h = 1e-4;
    let second: Vec<f64> = (0..dims)
        .map(|i| {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            (value_at(&mlp, &theta, &xp) - 2.0 * u0 + value_at(&mlp, &theta, &xm)) / (h * h)
        })
        .collect();
    let fd_lap: f64 = second.iter().sum();
    let lap = fb.laplacian.unwrap()[0];
    // Scaled by the largest pure second derivative, since the sum can cancel,
    // and never below the level at which the oracle's own rounding
    // (about ε/h² for O(1) activations) would exceed the tolerance.
    let floor = f64::EPSILON / (h * h) / LAP_TOL;
    let lap_err = (lap - fd_lap).abs() / max_abs(second.iter().copied()).max(floor);
    (rel(&grad, &fd_grad), lap_err)
}

fn check_param_jacobian(dims: usize, seed: u64) -> f64 {
    let (mlp, theta, x) = setup(dims, seed);
    let pts = Array2::from_shape_vec((1, dims), x.clone()).unwrap();
    let p = mlp.param_count();
    let jac = mlp.jacobian(&theta, pts.view(), &IndexSet::full(p)).unwrap();
    let h = 1e-6;
    let fd: Vec<f64> = (0..p)
        .map(|j| {
            let (mut tp, mut tm) = (theta.clone(), theta.clone());
            tp.as_mut_slice()[j] += h;
            tm.as_mut_slice()[j] -= h;
            (value_at(&mlp, &tp, &x) - value_at(&mlp, &tm, &x)) / (2.0 * h)
        })
        .collect();
    rel(jac.entries.row(0).as_slice().unwrap(), &fd)
}

/// Sobolev rows `k ≥ 1` are parameter derivatives of `∂u/∂x_k`, checked by
/// differencing the analytic spatial gradient in θ.
fn check_sobolev(dims: usize, seed: u64) -> f64 {
    let (mlp, theta, x) = setup(dims, seed);
    let pts = Array2::from_shape_vec((1, dims), x.clone()).unwrap();
    let s = mlp.sobolev_jacobian(&theta, pts.view()).unwrap();
    let grad_of = |t: &ParamVector| -> Array1<f64> {
        mlp.evaluate(t, pts.view(), DerivOrder::Gradient).unwrap().grad.unwrap().row(0).to_owned()
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in 0..dims {
        let fd: Vec<f64> = (0..mlp.param_count())
            .map(|j| {
                let (mut tp, mut tm) = (theta.clone(), theta.clone());
                tp.as_mut_slice()[j] += h;
                tm.as_mut_slice()[j] -= h;
                (grad_of(&tp)[k] - grad_of(&tm)[k]) / (2.0 * h)
            })
            .collect();
        worst = worst.max(rel(s.row(k + 1).as_slice().unwrap(), &fd));
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn spatial_derivatives_match_finite_differences(seed in any::<u64>(), three_d in any::<bool>()) {
        let (g, l) = check_spatial(if three_d { 3 } else { 2 }, seed);
        prop_assert!(g <= 1e-6, "gradient rel err {g}");
        prop_assert!(l <= LAP_TOL, "laplacian rel err {l}");
    }

    #[test]
    fn parameter_jacobian_matches_finite_differences(seed in any::<u64>(), three_d in any::<bool>()) {
        let e = check_param_jacobian(if three_d { 3 } else { 2 }, seed);
        prop_assert!(e <= 1e-5, "jacobian rel err {e}");
    }

    #[test]
    fn periodic_in_every_coordinate(seed in any::<u64>(), axis in 0usize..3) {
        let (mlp, theta, x) = setup(3, seed);
        let mut shifted = x.clone();
        shifted[axis] += 2.0 * PI;
        let pts = Array2::from_shape_vec((2, 3), [x, shifted].concat()).unwrap();
        let fb = mlp.evaluate(&theta, pts.view(), DerivOrder::Laplacian).unwrap();
        prop_assert!((fb.value[0] - fb.value[1]).abs() <= 1e-12);
        let g = fb.grad.unwrap();
        for k in 0..3 {
            prop_assert!((g[[0, k]] - g[[1, k]]).abs() <= 1e-12);
        }
        let l = fb.laplacian.unwrap();
        prop_assert!((l[0] - l[1]).abs() <= 1e-12);
    }
}

#[test]
fn sobolev_jacobian_matches_finite_differences() {
    for seed in 0..10 {
        for dims in [2, 3] {
            let e = check_sobolev(dims, seed);
            assert!(e <= 1e-5, "dims {dims} seed {seed}: {e}");
        }
    }
}

#[test]
fn custom_periods_are_respected() {
    let arch = NetworkArch::new(2, 2, 4, 2).with_periods(vec![2.0, 2.0 * PI]);
    let mlp = Mlp::new(arch.clone()).unwrap();
    let theta = init_params(&arch, 9).unwrap();
    let a = value_at(&mlp, &theta, &[0.3, 1.0]);
    let b = value_at(&mlp, &theta, &[2.3, 1.0]);
    assert!((a - b).abs() < 1e-12);
}

