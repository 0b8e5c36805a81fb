use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use teng_cli::{
    compute_reference, fit_initial_params, report, run_benchmark, run_experiment, save_checkpoint, save_reference,
    ExperimentConfig, Result, Setup,
};
use teng_core::{FitStatus, Method};

/// Sequential-in-time neural PDE solvers with spectral references.
#[derive(Parser, Debug)]
#[command(name = "teng", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the network to the initial condition and write `init.ckpt`.
    FitInit(Common),
    /// Compute the spectral reference and write `reference.tref`.
    Reference(Common),
    /// Run the configured method and write CSV logs and checkpoints.
    Solve(Common),
    /// Run several methods from one shared initial fit.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Comma-separated methods, e.g. teng_euler,teng_heun,obti_adam.
        #[arg(long, value_delimiter = ',', default_value = "teng_euler,teng_heun")]
        methods: Vec<String>,
    },
    /// Summarize the runs found in an output directory.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value` with a dotted key, e.g. `time.dt=0.01`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| teng_cli::CliError::Config(format!("override `{o}` is not key=value")))?;
            cfg.apply_override(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_method(name: &str) -> Result<Method> {
    serde_json::from_value(serde_json::Value::String(name.trim().to_string()))
        .map_err(|_| teng_cli::CliError::Config(format!("unknown method `{name}`")))
}

fn create_out(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| teng_cli::CliError::io(&cfg.output_dir, e))
}

fn run(cli: Cli) -> Result<()> {
    let start = Instant::now();
    match cli.command {
        Command::FitInit(c) => {
            let cfg = c.load()?;
            create_out(&cfg)?;
            let setup = Setup::new(cfg)?;
            let rep = fit_initial_params(&setup)?;
            let path = setup.cfg.output_dir.join("init.ckpt");
            save_checkpoint(&path, &setup.arch, &rep.theta)?;
            println!(
                "stage 1: loss {:.3e} after {} iterations; stage 2: loss {:.3e} after {} iterations",
                rep.stage1_loss, rep.stage1_iters, rep.stage2_loss, rep.stage2_iters
            );
            if rep.status == FitStatus::CapReached {
                eprintln!("warning: stage 2 stopped at its iteration cap above its loss threshold");
            }
            println!("wrote {}", path.display());
        }
        Command::Reference(c) => {
            let cfg = c.load()?;
            create_out(&cfg)?;
            let setup = Setup::new(cfg)?;
            let r = compute_reference(&setup)?;
            let path = setup.cfg.output_dir.join("reference.tref");
            save_reference(&path, &r)?;
            println!("{} times on a {}^{} grid; wrote {}", r.times.len(), r.grid_n, r.dims, path.display());
        }
        Command::Solve(c) => {
            let cfg = c.load()?;
            let out = cfg.output_dir.clone();
            let run = run_experiment(cfg)?;
            println!(
                "{}: {} steps, global rel L2 {:.6e}, final rel L2 {:.6e}",
                run.method.name(),
                run.total_steps,
                run.global_rel_l2,
                run.final_rel_l2().unwrap_or(f64::NAN)
            );
            println!("wrote {}", out.display());
        }
        Command::Benchmark { common, methods } => {
            let cfg = common.load()?;
            let methods = methods.iter().map(|m| parse_method(m)).collect::<Result<Vec<_>>>()?;
            let out = cfg.output_dir.clone();
            for run in run_benchmark(cfg, &methods)? {
                println!("{:<12} global rel L2 {:.6e}", run.method.name(), run.global_rel_l2);
            }
            println!("wrote {}", out.display());
        }
        Command::Report { out } => print!("{}", report(&out)?),
    }
    eprintln!("done in {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
