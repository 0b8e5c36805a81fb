//! Experiment orchestration: initial fit, reference solution, time evolution,
//! error series and output files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::ArrayView1;
use teng_core::{
    dft_forward, evolve, fit_initial, heat_reference, init_params, initial_condition, residual_bound, spectral_rk4_evolve,
    tensor_grid, Ansatz, Checkpoint, CollocationGrid, CounterRng, DerivOrder, ErrorSeries, EvolveConfig, FitReport,
    InitialCondition, Method, Mlp, NetworkArch, ParamVector, PdeKind, PdeSpec, Problem, ReferenceConfig,
    ReferenceSolution,
};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::reference_io::load_reference;

/// Everything derived from a config that the runs share.
pub struct Setup {
    pub cfg: ExperimentConfig,
    pub pde: PdeSpec,
    pub ic: InitialCondition,
    pub grid: CollocationGrid,
    pub arch: NetworkArch,
    pub model: Mlp,
}

impl Setup {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let pde = cfg.pde_spec()?;
        let ic = cfg.initial_condition();
        let grid = tensor_grid(cfg.pde.dims, cfg.grid_n(), &cfg.domain_lengths())?;
        let arch = cfg.arch();
        let model = Mlp::new(arch.clone())?;
        Ok(Self {
            cfg,
            pde,
            ic,
            grid,
            arch,
            model,
        })
    }

    pub fn problem(&self) -> Problem<'_, Mlp, PdeSpec> {
        Problem::new(&self.model, &self.pde, &self.grid)
    }

    pub fn evolve_config(&self) -> EvolveConfig {
        let c = &self.cfg;
        EvolveConfig {
            checkpoint_stride: c.time.checkpoint_stride,
            stepper: c.stepper,
            tdvp: c.tdvp,
            obti: c.obti,
            seed: c.seed,
            ..EvolveConfig::new(c.method, c.time.dt, c.time.t_final)
        }
    }

    pub fn n_steps(&self) -> Result<usize> {
        Ok(self.evolve_config().n_steps()?)
    }
}

/// Fits the network to the initial condition from seeded random parameters.
pub fn fit_initial_params(setup: &Setup) -> Result<FitReport> {
    let theta0 = init_params(&setup.arch, setup.cfg.seed)?;
    let mut rng = CounterRng::new(setup.cfg.seed).fork(1);
    Ok(fit_initial(&setup.model, theta0, &setup.ic, &setup.grid, &setup.cfg.fit, &mut rng)?)
}

/// Parameters from `init_checkpoint` when set, otherwise from a fresh fit.
pub fn initial_params(setup: &Setup) -> Result<(ParamVector, Option<FitReport>)> {
    match &setup.cfg.init_checkpoint {
        Some(path) => Ok((load_checkpoint(path, &setup.arch)?, None)),
        None => {
            let report = fit_initial_params(setup)?;
            Ok((report.theta.clone(), Some(report)))
        }
    }
}

/// Reference fields on the training grid at every multiple of `dt` up to `t_final`.
pub fn compute_reference(setup: &Setup) -> Result<ReferenceSolution> {
    let c = &setup.cfg;
    let dims = c.pde.dims;
    let lengths = c.domain_lengths();
    let sample_n = c.reference_sample_n();
    let kmax = c.reference_kmax();
    let samples = tensor_grid(dims, sample_n, &lengths)?;
    let u0 = initial_condition(&setup.ic, samples.points().view(), DerivOrder::Value)?.value;
    let spectrum = dft_forward(u0.as_slice().expect("contiguous"), dims, sample_n, &lengths, kmax)?;
    let rc = ReferenceConfig {
        kmax,
        dt_ref: c.reference.dt_ref,
        t_final: c.time.t_final,
        save_dt: c.time.dt,
        eval_n: c.grid_n(),
    };
    Ok(match setup.pde.kind {
        PdeKind::Heat => heat_reference(&spectrum, setup.pde.nu, &rc)?,
        _ => spectral_rk4_evolve(&setup.pde, &spectrum, &rc)?,
    })
}

fn check_reference(setup: &Setup, r: &ReferenceSolution, origin: &Path) -> Result<()> {
    let n = setup.n_steps()?;
    let dt = setup.cfg.time.dt;
    let grid_ok = r.dims == setup.cfg.pde.dims && r.grid_n == setup.cfg.grid_n();
    let times_ok = r.times.len() > n
        && r.times.iter().take(n + 1).enumerate().all(|(k, &t)| (t - k as f64 * dt).abs() <= 1e-9 * t.max(1.0));
    if !grid_ok || !times_ok {
        return Err(CliError::format(origin, "reference does not match the experiment's grid or time steps"));
    }
    Ok(())
}

/// The configured reference file, or a freshly computed reference.
pub fn reference_for(setup: &Setup) -> Result<ReferenceSolution> {
    match &setup.cfg.reference.file {
        Some(path) => {
            let r = load_reference(path)?;
            check_reference(setup, &r, path)?;
            Ok(r)
        }
        None => compute_reference(setup),
    }
}

/// One row of `errors.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRow {
    pub t: f64,
    pub rel_l2: f64,
    pub step_final_loss: f64,
    pub stepper_iterations: usize,
    pub residual_bound_cum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub method: Method,
    pub rows: Vec<StepRow>,
    pub global_rel_l2: f64,
    pub total_steps: usize,
    pub checkpoints: Vec<Checkpoint>,
}

impl RunOutput {
    pub fn final_rel_l2(&self) -> Option<f64> {
        self.rows.last().map(|r| r.rel_l2)
    }
}

/// Evolves `theta0` and scores every step against `reference`. The global
/// error runs over the steps after `t = 0`.
pub fn solve(setup: &Setup, theta0: ParamVector, reference: &ReferenceSolution) -> Result<RunOutput> {
    let ecfg = setup.evolve_config();
    let n = ecfg.n_steps()?;
    check_reference(setup, reference, Path::new("reference"))?;
    let grid = &setup.grid;
    let score = |theta: &ParamVector, k: usize, t: f64, series: &mut ErrorSeries| {
        let u = setup.model.evaluate(theta, grid.points().view(), DerivOrder::Value)?.value;
        series.push(t, u.view(), ArrayView1::from(&reference.fields[k][..]), grid)
    };
    let mut series = ErrorSeries::default();
    let mut rows = Vec::with_capacity(n);
    let traj = evolve(setup.problem(), theta0.clone(), &ecfg, |state| {
        if state.step == 0 {
            return Ok(());
        }
        let rel_l2 = score(&state.theta, state.step, state.t, &mut series)?;
        let last = state.residual_log.last().expect("one log entry per step");
        rows.push(StepRow {
            t: state.t,
            rel_l2,
            step_final_loss: last.final_loss,
            stepper_iterations: last.iterations,
            residual_bound_cum: residual_bound(&state.residual_log),
        });
        Ok(())
    })?;
    if n == 0 {
        score(&theta0, 0, 0.0, &mut series)?;
    }
    Ok(RunOutput {
        method: ecfg.method,
        rows,
        global_rel_l2: series.global_rel_l2()?,
        total_steps: n,
        checkpoints: traj.checkpoints,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub const ERRORS_HEADER: &str = "t,rel_l2,step_final_loss,stepper_iterations,residual_bound_cum";
pub const SUMMARY_HEADER: &str = "method,pde,dt,T,global_rel_l2,total_steps";

pub fn errors_csv(rows: &[StepRow]) -> String {
    let mut s = format!("{ERRORS_HEADER}\n");
    for r in rows {
        writeln!(
            s,
            "{:.16e},{:.16e},{:.16e},{},{:.16e}",
            r.t, r.rel_l2, r.step_final_loss, r.stepper_iterations, r.residual_bound_cum
        )
        .unwrap();
    }
    s
}

fn summary_row(setup: &Setup, run: &RunOutput) -> String {
    format!(
        "{},{},{:.16e},{:.16e},{:.16e},{}\n",
        run.method.name(),
        setup.pde.kind.name(),
        setup.cfg.time.dt,
        setup.cfg.time.t_final,
        run.global_rel_l2,
        run.total_steps
    )
}

/// Writes `errors.csv`, `global_summary.csv`, the resolved `config.json` and
/// the parameter checkpoints of one run into `dir`.
pub fn write_run(dir: &Path, setup: &Setup, run: &RunOutput) -> Result<()> {
    let ckdir = dir.join("checkpoints");
    create_dir(&ckdir)?;
    write_file(&dir.join("errors.csv"), errors_csv(&run.rows))?;
    write_file(&dir.join("global_summary.csv"), format!("{SUMMARY_HEADER}\n{}", summary_row(setup, run)))?;
    let mut cfg = setup.cfg.clone();
    cfg.method = run.method;
    write_file(&dir.join("config.json"), cfg.to_json() + "\n")?;
    for ck in &run.checkpoints {
        save_checkpoint(&ckdir.join(format!("step_{:06}.ckpt", ck.step)), &setup.arch, &ck.theta)?;
    }
    Ok(())
}

/// Fit (or load), reference, evolve, write.
pub fn run_experiment(cfg: ExperimentConfig) -> Result<RunOutput> {
    let setup = Setup::new(cfg)?;
    let out = setup.cfg.output_dir.clone();
    create_dir(&out)?;
    let (theta0, _) = initial_params(&setup)?;
    save_checkpoint(&out.join("init.ckpt"), &setup.arch, &theta0)?;
    let reference = reference_for(&setup)?;
    let run = solve(&setup, theta0, &reference)?;
    write_run(&out, &setup, &run)?;
    Ok(run)
}

/// Runs each method from the same initial parameters and reference, one
/// subdirectory per method, plus a combined `global_summary.csv`.
pub fn run_benchmark(cfg: ExperimentConfig, methods: &[Method]) -> Result<Vec<RunOutput>> {
    let mut setup = Setup::new(cfg)?;
    let out = setup.cfg.output_dir.clone();
    create_dir(&out)?;
    let (theta0, _) = initial_params(&setup)?;
    save_checkpoint(&out.join("init.ckpt"), &setup.arch, &theta0)?;
    let reference = reference_for(&setup)?;
    let mut summary = format!("{SUMMARY_HEADER}\n");
    let mut runs = Vec::with_capacity(methods.len());
    for &m in methods {
        setup.cfg.method = m;
        setup.cfg.validate()?;
        let run = solve(&setup, theta0.clone(), &reference)?;
        write_run(&out.join(m.name()), &setup, &run)?;
        summary += &summary_row(&setup, &run);
        runs.push(run);
    }
    write_file(&out.join("global_summary.csv"), summary)?;
    Ok(runs)
}

fn read_csv(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect())
}

fn field<T: std::str::FromStr>(path: &Path, row: &[String], i: usize) -> Result<T> {
    row.get(i)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CliError::format(path, format!("bad column {i} in row {row:?}")))
}

/// Run directories under `dir` (itself included) holding an `errors.csv`.
fn run_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = vec![];
    if dir.join("errors.csv").is_file() {
        dirs.push(dir.to_path_buf());
    }
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut subs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("errors.csv").is_file())
        .collect();
    subs.sort();
    dirs.extend(subs);
    Ok(dirs)
}

/// Plain-text table summarizing every run found under `dir`.
pub fn report(dir: &Path) -> Result<String> {
    let dirs = run_dirs(dir)?;
    if dirs.is_empty() {
        return Err(CliError::format(dir, "no errors.csv found"));
    }
    let mut s = format!(
        "{:<12} {:<11} {:>8} {:>6} {:>12} {:>12} {:>12} {:>12}\n",
        "method", "pde", "dt", "T", "global", "final", "max_loss", "bound"
    );
    for d in dirs {
        let spath = d.join("global_summary.csv");
        let summary = read_csv(&spath)?;
        let srow = summary
            .first()
            .ok_or_else(|| CliError::format(&spath, "empty summary"))?;
        let epath = d.join("errors.csv");
        let rows = read_csv(&epath)?;
        let mut final_rel = f64::NAN;
        let mut max_loss: f64 = 0.0;
        let mut bound = 0.0;
        for r in &rows {
            final_rel = field(&epath, r, 1)?;
            max_loss = max_loss.max(field(&epath, r, 2)?);
            bound = field(&epath, r, 4)?;
        }
        let dt: f64 = field(&spath, srow, 2)?;
        let t: f64 = field(&spath, srow, 3)?;
        let global: f64 = field(&spath, srow, 4)?;
        writeln!(
            s,
            "{:<12} {:<11} {:>8} {:>6} {:>12.3e} {:>12.3e} {:>12.3e} {:>12.3e}",
            srow[0], srow[1], dt, t, global, final_rel, max_loss, bound
        )
        .unwrap();
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_values_parse_back_exactly() {
        let rows = vec![
            StepRow {
                t: 0.005,
                rel_l2: 1.0 / 3.0,
                step_final_loss: 7.123456789012345e-15,
                stepper_iterations: 7,
                residual_bound_cum: std::f64::consts::PI * 1e-8,
            },
            StepRow {
                t: 0.01,
                rel_l2: f64::MIN_POSITIVE,
                step_final_loss: 0.0,
                stepper_iterations: 12,
                residual_bound_cum: 1e300,
            },
        ];
        let text = errors_csv(&rows);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(ERRORS_HEADER));
        for (line, r) in lines.zip(&rows) {
            let v: Vec<&str> = line.split(',').collect();
            assert_eq!(v[0].parse::<f64>().unwrap().to_bits(), r.t.to_bits());
            assert_eq!(v[1].parse::<f64>().unwrap().to_bits(), r.rel_l2.to_bits());
            assert_eq!(v[2].parse::<f64>().unwrap().to_bits(), r.step_final_loss.to_bits());
            assert_eq!(v[3].parse::<usize>().unwrap(), r.stepper_iterations);
            assert_eq!(v[4].parse::<f64>().unwrap().to_bits(), r.residual_bound_cum.to_bits());
        }
    }
}
