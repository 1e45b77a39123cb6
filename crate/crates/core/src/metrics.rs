//! Dense output on a common grid, the relative max-norm error and the
//! standard/economical ratios.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::integrators::{
    integrate_adaptive_with, IntegrationError, Method, NewtonSettings, RunStats, StepController,
    StepObserver, Trajectory,
};
use crate::linalg::norm_inf;
use crate::system::{ImplicitSystem, Strategy};

/// Number of comparison samples used by the benchmarks.
pub const DEFAULT_SAMPLES: usize = 1000;
/// Tolerance factor between a benchmark run and its reference.
pub const REFERENCE_FACTOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("grid needs at least 2 points, got {0}")]
    TooFewSamples(usize),
    #[error("trajectory covers [{start}, {end}] but the grid needs [{t0}, {t_end}]")]
    GridOutOfRange {
        start: f64,
        end: f64,
        t0: f64,
        t_end: f64,
    },
    #[error("solutions are sampled on different grids")]
    GridMismatch,
    #[error("reference max norm {0:e} is too small to normalize by")]
    DegenerateReference(f64),
}

/// States on a uniform grid covering `[t0, t_end]` inclusively.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSolution {
    pub grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl SampledSolution {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

pub fn uniform_grid(t0: f64, t_end: f64, samples: usize) -> Result<Vec<f64>, MetricsError> {
    if samples < 2 {
        return Err(MetricsError::TooFewSamples(samples));
    }
    let step = (t_end - t0) / (samples - 1) as f64;
    let mut grid: Vec<f64> = (0..samples).map(|k| t0 + k as f64 * step).collect();
    grid[samples - 1] = t_end;
    Ok(grid)
}

/// Cubic Hermite interpolant through `(t0, u0, f0)` and `(t1, u1, f1)`.
pub fn hermite(
    t0: f64,
    u0: &[f64],
    f0: &[f64],
    t1: f64,
    u1: &[f64],
    f1: &[f64],
    t: f64,
    out: &mut [f64],
) {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    for i in 0..out.len() {
        out[i] = h00 * u0[i] + h10 * h * f0[i] + h01 * u1[i] + h11 * h * f1[i];
    }
}

/// Samples accepted steps onto a fixed grid while the integration runs, so
/// long runs never hold the full trajectory in memory.
#[derive(Debug, Clone)]
pub struct GridSampler {
    grid: Vec<f64>,
    values: Vec<Vec<f64>>,
    prev: Option<(f64, Vec<f64>, Vec<f64>)>,
}

impl GridSampler {
    pub fn new(t0: f64, t_end: f64, samples: usize) -> Result<Self, MetricsError> {
        let grid = uniform_grid(t0, t_end, samples)?;
        Ok(Self {
            values: Vec::with_capacity(grid.len()),
            grid,
            prev: None,
        })
    }

    pub fn finish(self) -> Result<SampledSolution, MetricsError> {
        if self.values.len() != self.grid.len() {
            let (end, start) = match &self.prev {
                Some((t, _, _)) => (*t, self.grid[0]),
                None => (f64::NAN, f64::NAN),
            };
            return Err(MetricsError::GridOutOfRange {
                start,
                end,
                t0: self.grid[0],
                t_end: *self.grid.last().unwrap(),
            });
        }
        Ok(SampledSolution {
            grid: self.grid,
            values: self.values,
        })
    }
}

impl StepObserver for GridSampler {
    fn accept(&mut self, t: f64, u: &[f64], f: &[f64]) {
        match self.prev.take() {
            None => {
                let mut k = self.values.len();
                while k < self.grid.len() && self.grid[k] == t {
                    self.values.push(u.to_vec());
                    k += 1;
                }
            }
            Some((tp, up, fp)) => {
                let mut k = self.values.len();
                while k < self.grid.len() && self.grid[k] <= t {
                    if self.grid[k] == t {
                        self.values.push(u.to_vec());
                    } else {
                        let mut out = vec![0.0; u.len()];
                        hermite(tp, &up, &fp, t, u, f, self.grid[k], &mut out);
                        self.values.push(out);
                    }
                    k += 1;
                }
            }
        }
        self.prev = Some((t, u.to_vec(), f.to_vec()));
    }
}

/// Hermite dense output of a stored trajectory on `samples` uniform points.
pub fn sample_trajectory(
    traj: &Trajectory,
    samples: usize,
) -> Result<SampledSolution, MetricsError> {
    if traj.is_empty() {
        return Err(MetricsError::GridOutOfRange {
            start: f64::NAN,
            end: f64::NAN,
            t0: f64::NAN,
            t_end: f64::NAN,
        });
    }
    let t0 = traj.times[0];
    let t_end = traj.final_time();
    let mut sampler = GridSampler::new(t0, t_end, samples)?;
    for k in 0..traj.len() {
        sampler.accept(traj.times[k], &traj.states[k], &traj.derivs[k]);
    }
    sampler.finish()
}

/// `max_k |u_k - ref_k|_inf / max_k |ref_k|_inf` over the shared grid.
pub fn error_metric(
    sol: &SampledSolution,
    reference: &SampledSolution,
) -> Result<f64, MetricsError> {
    if sol.grid != reference.grid
        || sol
            .values
            .iter()
            .zip(&reference.values)
            .any(|(a, b)| a.len() != b.len())
    {
        return Err(MetricsError::GridMismatch);
    }
    let mut num = 0.0_f64;
    let mut den = 0.0_f64;
    for (u, r) in sol.values.iter().zip(&reference.values) {
        for (a, b) in u.iter().zip(r) {
            num = num.max((a - b).abs());
        }
        den = den.max(norm_inf(r));
    }
    if !(den >= 1e-300) {
        return Err(MetricsError::DegenerateReference(den));
    }
    Ok(num / den)
}

/// Reference run: adaptive ESDIRK4 with the economical solve at tolerances
/// scaled by [`REFERENCE_FACTOR`], sampled on the comparison grid.
pub fn compute_reference<S: ImplicitSystem + ?Sized>(
    sys: &S,
    ctrl: &StepController,
    t0: f64,
    t_end: f64,
    u0: &[f64],
    samples: usize,
) -> Result<(SampledSolution, RunStats), IntegrationError> {
    let tight = ctrl.scaled(REFERENCE_FACTOR);
    let mut sampler = GridSampler::new(t0, t_end, samples).map_err(|_| {
        IntegrationError::InvalidSettings("reference grid needs at least 2 samples")
    })?;
    let settings = NewtonSettings::new(Strategy::Economical);
    let stats = integrate_adaptive_with(
        sys,
        Method::Esdirk4,
        &tight,
        t0,
        t_end,
        u0,
        &settings,
        &mut sampler,
    )
    .map_err(|(e, _)| e)?;
    let sol = sampler.finish().expect("a completed run covers its grid");
    Ok((sol, stats))
}

/// One solver's result on one benchmark point.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRecord {
    pub method: Method,
    pub strategy: Strategy,
    pub error: f64,
    pub cpu_seconds: f64,
    pub stats: RunStats,
}

/// `(R_E, R_T)` as standard over economical. A zero economical error gives
/// `+inf` unless the standard error is also zero, in which case the ratio is 1.
pub fn ratios(standard: &BenchmarkRecord, economical: &BenchmarkRecord) -> (f64, f64) {
    (
        quotient(standard.error, economical.error),
        quotient(standard.cpu_seconds, economical.cpu_seconds),
    )
}

fn quotient(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}
