//! Fixtures shared by the benchmarks: the heat desk problem at a chosen grid
//! size, with seeded parameters in place of a fitted initial condition.

use std::f64::consts::PI;

use teng_core::{
    dft_forward, init_params, initial_condition, tensor_grid, CollocationGrid, DerivOrder, InitialCondition, Mlp,
    NetworkArch, ParamVector, PdeSpec, SpectrumField,
};

pub struct DeskProblem {
    pub pde: PdeSpec,
    pub model: Mlp,
    pub theta: ParamVector,
    pub grid: CollocationGrid,
}

/// Two-dimensional heat problem on an `n × n` grid with the desk network.
pub fn heat_desk(n: usize, seed: u64) -> DeskProblem {
    let arch = NetworkArch::desk(2);
    DeskProblem {
        pde: PdeSpec::heat(2).expect("heat is defined in two dimensions"),
        model: Mlp::new(arch.clone()).expect("desk architecture is valid"),
        theta: init_params(&arch, seed).expect("desk architecture is valid"),
        grid: tensor_grid(2, n, &[2.0 * PI, 2.0 * PI]).expect("grid size is positive"),
    }
}

/// Band-limited spectrum of the two-dimensional initial condition.
pub fn desk_spectrum(kmax: usize) -> SpectrumField {
    let n = 4 * kmax;
    let l = [2.0 * PI, 2.0 * PI];
    let g = tensor_grid(2, n, &l).expect("grid size is positive");
    let u = initial_condition(&InitialCondition::TwoDimExp, g.points().view(), DerivOrder::Value)
        .expect("initial condition is defined in two dimensions")
        .value;
    dft_forward(u.as_slice().expect("contiguous"), 2, n, &l, kmax).expect("sample grid resolves the band")
}
