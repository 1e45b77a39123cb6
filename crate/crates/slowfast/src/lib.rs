//! Configuration, benchmarking and output for [`slowfast_core`].
//!
//! The `slowfast` binary exposes three commands:
//!
//! * `simulate --config <path>` integrates one network and writes its
//!   trajectory on a uniform grid.
//! * `bench --config <path>` runs a timed sweep comparing the standard and
//!   economical linear solves and writes the records and ratio tables.
//! * `validate [--quick]` runs the property checks.
//!
//! Output goes to the directory named in the configuration unless
//! [`OUTPUT_DIR_ENV`] is set.

pub mod bench;
pub mod config;
pub mod output;
pub mod timing;
pub mod validate;

use std::io::Write;
use std::path::{Path, PathBuf};

use slowfast_core::integrators::{integrate_adaptive_with, integrate_fixed_with};
use slowfast_core::metrics::GridSampler;
use slowfast_core::{RunStats, SampledSolution};
use thiserror::Error;

use crate::bench::{build_instance, ExperimentResult};
use crate::config::{parse_config, ConfigError, RunConfig, StepMode};

/// Overrides `[output] dir` when set.
pub const OUTPUT_DIR_ENV: &str = "SLOWFAST_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(String),
    #[error("{0} validation check(s) failed")]
    ValidationFailed(usize),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::ValidationFailed(_) => 1,
            AppError::Config(_) => 2,
            AppError::Io { .. } | AppError::Runtime(_) => 3,
        }
    }

    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> AppError + '_ {
        move |source| AppError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Reads and validates a configuration file, applying [`OUTPUT_DIR_ENV`].
/// An unreadable file is a configuration error.
pub fn load_config(path: &Path) -> Result<RunConfig, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        AppError::Config(ConfigError::Parse {
            line: 0,
            message: format!("cannot read {}: {e}", path.display()),
        })
    })?;
    let mut cfg = parse_config(&text)?;
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
        cfg.output.dir = PathBuf::from(dir);
    }
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub solution: SampledSolution,
    pub stats: RunStats,
}

/// Integrates the configured network and samples it on the output grid.
pub fn simulate(cfg: &RunConfig) -> Result<Simulation, AppError> {
    let params = &cfg.model.params;
    let inst = build_instance(cfg, cfg.model.n, cfg.coupling.kind, params.eps())
        .map_err(|e| AppError::Runtime(e.to_string()))?;
    let s = &cfg.solver;
    let mut sampler = GridSampler::new(s.t0, s.t_end, cfg.output.samples)
        .map_err(|e| AppError::Runtime(e.to_string()))?;
    let settings = s.newton(s.strategy);
    let res = match s.step {
        StepMode::Adaptive => integrate_adaptive_with(
            &inst.model,
            s.method,
            &s.controller(),
            s.t0,
            s.t_end,
            &inst.u0,
            &settings,
            &mut sampler,
        ),
        StepMode::Fixed(h) => integrate_fixed_with(
            &inst.model,
            s.method,
            h,
            s.t0,
            s.t_end,
            &inst.u0,
            &settings,
            &mut sampler,
        ),
    };
    let stats =
        res.map_err(|(e, st)| AppError::Runtime(format!("{e} (after {} steps)", st.steps)))?;
    let solution = sampler
        .finish()
        .map_err(|e| AppError::Runtime(e.to_string()))?;
    Ok(Simulation { solution, stats })
}

/// [`simulate`] followed by writing the trajectory CSV. Returns its path.
pub fn simulate_to_disk(cfg: &RunConfig) -> Result<(PathBuf, Simulation), AppError> {
    let dir = &cfg.output.dir;
    output::prepare_dir(dir, cfg).map_err(AppError::io(dir))?;
    let sim = simulate(cfg)?;
    let path = dir.join(&cfg.output.trajectory);
    let (_, w) = output::create(dir, &cfg.output.trajectory).map_err(AppError::io(&path))?;
    output::write_trajectory(w, &sim.solution, cfg.model.n).map_err(AppError::io(&path))?;
    Ok((path, sim))
}

/// Runs the configured sweep and writes the benchmark and ratio CSVs.
/// Failed points are reported in the result; the files hold the rest.
pub fn bench_to_disk(cfg: &RunConfig, log: impl FnMut(&str)) -> Result<ExperimentResult, AppError> {
    let dir = &cfg.output.dir;
    output::prepare_dir(dir, cfg).map_err(AppError::io(dir))?;
    // open early so an unwritable path fails before the sweep runs
    let bench_path = dir.join(&cfg.output.benchmark);
    let ratio_path = dir.join(&cfg.output.ratios);
    let (_, bw) = output::create(dir, &cfg.output.benchmark).map_err(AppError::io(&bench_path))?;
    let (_, rw) = output::create(dir, &cfg.output.ratios).map_err(AppError::io(&ratio_path))?;
    let result = bench::run_experiment_logged(cfg, log);
    output::write_benchmark(bw, &result.rows).map_err(AppError::io(&bench_path))?;
    output::write_ratios(rw, &result.ratios).map_err(AppError::io(&ratio_path))?;
    Ok(result)
}

/// Runs the property suite, printing one line per check to `out`.
pub fn validate_report(quick: bool, mut out: impl Write) -> Result<(), AppError> {
    let results = validate::run_validation(quick, |c| {
        let status = if c.passed { "ok  " } else { "FAIL" };
        let _ = writeln!(
            out,
            "{status} {}: {:e} ({})",
            c.name, c.measured, c.requirement
        );
    });
    let failed = results.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        Err(AppError::ValidationFailed(failed))
    } else {
        Ok(())
    }
}
