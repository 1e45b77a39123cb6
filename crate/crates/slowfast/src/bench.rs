//! Timed benchmark sweeps comparing the standard and economical solves.
//!
//! For every point of a sweep the harness builds the network, computes one
//! tight reference solution and then runs each requested method with both
//! strategies. Only the integration loop is timed; model construction, the
//! reference and all I/O happen outside the clock.

use slowfast_core::connectivity::{gen_coupling, ConnectivityError};
use slowfast_core::initial::{make_initial_condition, InitialConditionError};
use slowfast_core::integrators::{integrate_adaptive_with, integrate_fixed_with};
use slowfast_core::metrics::{
    compute_reference, error_metric, ratios, GridSampler, MetricsError, SampledSolution,
};
use slowfast_core::models::ModelError;
use slowfast_core::{
    BenchmarkRecord, CouplingKind, ImplicitSystem, IntegrationError, Method, ModelKind,
    NetworkModel, Strategy,
};
use thiserror::Error;

use crate::config::{RunConfig, SolverConfig, Suite};
use crate::timing::time_run;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error("coupling: {0}")]
    Coupling(#[from] ConnectivityError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("initial condition: {0}")]
    Initial(#[from] InitialConditionError),
    #[error("reference run failed: {0}")]
    Reference(IntegrationError),
    #[error("integration failed: {0}")]
    Integration(#[from] IntegrationError),
    #[error("metric: {0}")]
    Metrics(#[from] MetricsError),
}

/// A network together with its initial state.
#[derive(Debug, Clone)]
pub struct Instance {
    pub model: NetworkModel,
    pub u0: Vec<f64>,
}

/// Builds the network of `n` cells for `coupling` and `eps`, using the seeds
/// and parameters of `cfg`.
pub fn build_instance(
    cfg: &RunConfig,
    n: usize,
    coupling: CouplingKind,
    eps: f64,
) -> Result<Instance, BenchError> {
    let c = gen_coupling(&cfg.coupling_spec(n, coupling))?;
    let model = NetworkModel::new(cfg.model_params(n, eps), &c)?;
    let u0 = make_initial_condition(&cfg.initial_rule(), &model)?;
    Ok(Instance { model, u0 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// `atol = rtol = tol`.
    Adaptive {
        tol: f64,
    },
    Fixed {
        steps: usize,
    },
}

/// Interval, sampling and solver constants shared by every run of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Protocol {
    pub t0: f64,
    pub t_end: f64,
    pub samples: usize,
    pub repetitions: usize,
    pub solver: SolverConfig,
}

impl Protocol {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            t0: cfg.solver.t0,
            t_end: cfg.solver.t_end,
            samples: cfg.output.samples,
            repetitions: cfg.bench.repetitions,
            solver: cfg.solver,
        }
    }

    /// The `tol_or_h` column for a mode.
    pub fn tol_or_h(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Adaptive { tol } => tol,
            Mode::Fixed { steps } => (self.t_end - self.t0) / steps as f64,
        }
    }
}

/// Reference solution on the comparison grid, from adaptive runs at
/// tolerance `tol`.
pub fn reference_solution<S: ImplicitSystem + ?Sized>(
    sys: &S,
    u0: &[f64],
    tol: f64,
    proto: &Protocol,
) -> Result<SampledSolution, BenchError> {
    let ctrl = proto.solver.controller_with(tol, tol);
    compute_reference(sys, &ctrl, proto.t0, proto.t_end, u0, proto.samples)
        .map(|(sol, _)| sol)
        .map_err(BenchError::Reference)
}

/// Times one solver configuration and measures its error against
/// `reference`.
pub fn run_solver<S: ImplicitSystem + ?Sized>(
    sys: &S,
    u0: &[f64],
    method: Method,
    strategy: Strategy,
    mode: Mode,
    reference: &SampledSolution,
    proto: &Protocol,
) -> Result<BenchmarkRecord, BenchError> {
    let settings = proto.solver.newton(strategy);
    let h = proto.tol_or_h(mode);
    let (cpu_seconds, (stats, sampler)) = time_run(proto.repetitions, || {
        let mut sampler = GridSampler::new(proto.t0, proto.t_end, proto.samples)?;
        let res = match mode {
            Mode::Adaptive { tol } => {
                let ctrl = proto.solver.controller_with(tol, tol);
                integrate_adaptive_with(
                    sys,
                    method,
                    &ctrl,
                    proto.t0,
                    proto.t_end,
                    u0,
                    &settings,
                    &mut sampler,
                )
            }
            Mode::Fixed { .. } => integrate_fixed_with(
                sys,
                method,
                h,
                proto.t0,
                proto.t_end,
                u0,
                &settings,
                &mut sampler,
            ),
        };
        res.map(|stats| (stats, sampler))
            .map_err(|(e, _)| BenchError::Integration(e))
    })?;
    let sol = sampler.finish()?;
    Ok(BenchmarkRecord {
        method,
        strategy,
        error: error_metric(&sol, reference)?,
        cpu_seconds,
        stats,
    })
}

/// One point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub n: usize,
    pub coupling: CouplingKind,
    pub eps: f64,
    pub mode: Mode,
}

/// One row of the benchmark table.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub suite: Suite,
    pub model: ModelKind,
    pub point: Point,
    pub tol_or_h: f64,
    pub record: BenchmarkRecord,
    pub seed: u64,
}

/// `R_E` and `R_T` (standard over economical) for one method at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioRow {
    pub sweep_value: String,
    pub method: Method,
    pub r_e: f64,
    pub r_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointFailure {
    pub point: Point,
    pub method: Option<Method>,
    pub strategy: Option<Strategy>,
    pub error: BenchError,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentResult {
    pub rows: Vec<BenchRow>,
    pub ratios: Vec<RatioRow>,
    pub failures: Vec<PointFailure>,
}

fn sweep_value(suite: Suite, point: &Point, tol_or_h: f64) -> String {
    match suite {
        Suite::SizeSweep => point.n.to_string(),
        Suite::CouplingSweep => point.coupling.to_string(),
        Suite::EpsilonSweep => point.eps.to_string(),
        Suite::ToleranceSweep | Suite::StepSweep | Suite::SingleRun => tol_or_h.to_string(),
    }
}

/// Runs the sweep described by `cfg.bench`.
pub fn run_experiment(cfg: &RunConfig) -> ExperimentResult {
    run_experiment_logged(cfg, |_| {})
}

/// [`run_experiment`] reporting progress through `log`.
pub fn run_experiment_logged(cfg: &RunConfig, mut log: impl FnMut(&str)) -> ExperimentResult {
    let spec = &cfg.bench;
    let proto = Protocol::from_config(cfg);
    let modes: Vec<Mode> = if spec.suite.is_fixed_step() {
        spec.steps
            .iter()
            .map(|&steps| Mode::Fixed { steps })
            .collect()
    } else {
        spec.tolerances
            .iter()
            .map(|&tol| Mode::Adaptive { tol })
            .collect()
    };
    // one reference per network, as tight as the tightest point needs
    let ref_tol = match modes[0] {
        Mode::Fixed { .. } => cfg.solver.atol.min(cfg.solver.rtol),
        Mode::Adaptive { .. } => spec
            .tolerances
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min),
    };

    let mut out = ExperimentResult::default();
    for &n in &spec.n {
        for &coupling in &spec.couplings {
            for &eps in &spec.eps {
                let setup = build_instance(cfg, n, coupling, eps).and_then(|inst| {
                    let reference = reference_solution(&inst.model, &inst.u0, ref_tol, &proto)?;
                    Ok((inst, reference))
                });
                let (inst, reference) = match setup {
                    Ok(v) => v,
                    Err(error) => {
                        log(&format!("n={n} coupling={coupling} eps={eps}: {error}"));
                        for &mode in &modes {
                            out.failures.push(PointFailure {
                                point: Point {
                                    n,
                                    coupling,
                                    eps,
                                    mode,
                                },
                                method: None,
                                strategy: None,
                                error: error.clone(),
                            });
                        }
                        continue;
                    }
                };
                for &mode in &modes {
                    let point = Point {
                        n,
                        coupling,
                        eps,
                        mode,
                    };
                    let tol_or_h = proto.tol_or_h(mode);
                    for &method in &spec.orders {
                        let mut pair = Vec::with_capacity(2);
                        for strategy in Strategy::BOTH {
                            let res = run_solver(
                                &inst.model,
                                &inst.u0,
                                method,
                                strategy,
                                mode,
                                &reference,
                                &proto,
                            );
                            match res {
                                Ok(record) => {
                                    log(&format!(
                                        "n={n} coupling={coupling} eps={eps} tol_or_h={tol_or_h} {method} {strategy}: E={:.3e} T={:.3}s",
                                        record.error, record.cpu_seconds
                                    ));
                                    pair.push(record.clone());
                                    out.rows.push(BenchRow {
                                        suite: spec.suite,
                                        model: cfg.model.kind(),
                                        point,
                                        tol_or_h,
                                        record,
                                        seed: cfg.model.seed,
                                    });
                                }
                                Err(error) => {
                                    log(&format!(
                                        "n={n} coupling={coupling} eps={eps} tol_or_h={tol_or_h} {method} {strategy}: {error}"
                                    ));
                                    out.failures.push(PointFailure {
                                        point,
                                        method: Some(method),
                                        strategy: Some(strategy),
                                        error,
                                    });
                                }
                            }
                        }
                        if let [standard, economical] = &pair[..] {
                            let (r_e, r_t) = ratios(standard, economical);
                            out.ratios.push(RatioRow {
                                sweep_value: sweep_value(spec.suite, &point, tol_or_h),
                                method,
                                r_e,
                                r_t,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use slowfast_core::system::LinearDecay;

    fn proto(cfg: &RunConfig) -> Protocol {
        Protocol::from_config(cfg)
    }

    #[test]
    fn constant_solution_has_zero_error() {
        let cfg =
            parse_config("[solver]\nt_end = 10\n[bench]\nrepetitions = 1\norders = 1, 2, 3, 4\n")
                .unwrap();
        let p = proto(&cfg);
        let sys = LinearDecay {
            lambda: 0.0,
            dim: 3,
        };
        let u0 = [1.0, -2.0, 0.5];
        let reference = reference_solution(&sys, &u0, 1e-4, &p).unwrap();
        for method in Method::ALL {
            for strategy in Strategy::BOTH {
                for mode in [Mode::Adaptive { tol: 1e-4 }, Mode::Fixed { steps: 5 }] {
                    let r = run_solver(&sys, &u0, method, strategy, mode, &reference, &p).unwrap();
                    assert_eq!(r.error, 0.0, "{method} {strategy} {mode:?}");
                }
            }
        }
    }

    #[test]
    fn tolerance_sweep_emits_two_records_per_point() {
        let cfg = parse_config(
            "[model]\nn = 4\n[solver]\nt_end = 2\n[bench]\nsuite = tolerance_sweep\n\
             tolerances = 1e-3, 1e-4\norders = 2, 3\nrepetitions = 1\n[output]\nsamples = 50\n",
        )
        .unwrap();
        let res = run_experiment(&cfg);
        assert!(res.failures.is_empty(), "{:?}", res.failures);
        assert_eq!(res.rows.len(), 2 * 2 * 2);
        assert_eq!(res.ratios.len(), 2 * 2);
        assert_eq!(res.ratios[0].sweep_value, "0.001");
        for row in &res.rows {
            assert!(row.record.error < 0.05, "{row:?}");
        }
    }

    #[test]
    fn failures_are_recorded_and_the_sweep_continues() {
        // one Newton iteration per stage cannot meet the increment tolerance
        let cfg = parse_config(
            "[model]\nn = 3\n[solver]\nt_end = 1\nnewton_max_iters = 1\n\
             [bench]\nsuite = step_sweep\nsteps = 2, 4\norders = 2\nrepetitions = 1\n\
             [output]\nsamples = 10\n",
        )
        .unwrap();
        let res = run_experiment(&cfg);
        assert_eq!(res.failures.len(), 2 * 2);
        assert!(res.failures.iter().all(|f| matches!(
            f.error,
            BenchError::Integration(IntegrationError::NewtonDiverged { .. })
        )));
        assert!(res.rows.is_empty() && res.ratios.is_empty());
    }

    #[test]
    fn errors_are_reproducible() {
        let cfg = parse_config(
            "[model]\nkind = hr\nn = 3\n[solver]\nt_end = 5\n[bench]\nsuite = epsilon_sweep\n\
             eps = 0.01, 0.005\norders = 3\nrepetitions = 1\n[output]\nsamples = 20\n",
        )
        .unwrap();
        let a = run_experiment(&cfg);
        let b = run_experiment(&cfg);
        let errors = |r: &ExperimentResult| {
            r.rows
                .iter()
                .map(|x| x.record.error.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(a.rows.len(), 4);
        assert_eq!(errors(&a), errors(&b));
        assert_eq!(a.ratios[0].sweep_value, "0.01");
    }
}
