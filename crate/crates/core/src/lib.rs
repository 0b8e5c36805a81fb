//! Sequential-in-time neural PDE solvers: time-evolving natural gradient
//! (TENG) steppers, TDVP and optimization-based baselines, and spectral
//! reference solvers on periodic domains.

pub mod baselines;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod pde;
pub mod rng;
pub mod spectral;
pub mod teng;

pub use baselines::{
    adam_step, obti_fit, obti_gradient, obti_step, tdvp_rhs, tdvp_rk4_step, AdamState, ObtiConfig,
    ObtiFit, TdvpConfig, TdvpRhs,
};
pub use num_complex::Complex64;
pub use error::{Result, TengError};
pub use geometry::{l2_inner, subsample_params, tensor_grid, CollocationGrid, IndexSet};
pub use linalg::{cgls, lstsq, svd_lstsq, CglsOutcome, CglsStatus, LstsqConfig, LstsqMethod};
pub use metrics::{global_rel_l2, rel_l2, ErrorSeries};
pub use net::{
    evaluate_field, init_params, param_jacobian, Ansatz, Basis, DerivOrder, FieldBatch,
    JacobianMatrix, LinearModel, Mlp, NetworkArch, ParamLayout, ParamVector,
};
pub use pde::{apply_operator, initial_condition, InitialCondition, Operator, PdeKind, PdeSpec, TrigTable};
pub use rng::CounterRng;
pub use spectral::{
    dft_forward, dft_inverse, heat_exact, heat_reference, sample_on_grid, spectral_rhs,
    spectral_rk4_evolve, truncate_spectrum, ReferenceConfig, ReferenceSolution, SpectrumField,
};
pub use teng::{
    build_target_euler, evolve, field_and_rhs, fit_initial, fit_initial_to, residual_bound,
    residual_bound_cumulative, step, step_euler, step_heun, step_rk4, teng_stepper, Checkpoint,
    EvolutionState, EvolveConfig, FitConfig, FitReport, FitStatus, Method, Problem, ResidualEntry,
    StepperConfig, StepperOutcome, Trajectory, DEFAULT_RCOND,
};
