//! ESDIRK and implicit Euler steppers, fixed-step and adaptive drivers.
//!
//! Stage `i` of an ESDIRK step solves `U_i - h gamma f(U_i) = known_i` with
//! `known_i = u_n + h sum_{j<i} a_ij K_j`, so every implicit stage is an
//! implicit Euler solve with effective step `h gamma`. The stage derivative
//! is recovered as `K_i = (U_i - known_i) / (h gamma)` instead of a fresh
//! right-hand side evaluation.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use alloc::format;
use alloc::string::String;
use thiserror::Error;

use crate::linalg::norm_inf;
use crate::math::powf;
use crate::system::{ImplicitSystem, SolveError, Strategy};
use crate::tableau::{make_tableau, ButcherTableau};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    ImplicitEuler,
    Esdirk2,
    Esdirk3,
    Esdirk4,
}

impl Method {
    pub const ESDIRK: [Method; 3] = [Method::Esdirk2, Method::Esdirk3, Method::Esdirk4];
    pub const ALL: [Method; 4] = [
        Method::ImplicitEuler,
        Method::Esdirk2,
        Method::Esdirk3,
        Method::Esdirk4,
    ];

    pub fn from_order(order: usize) -> Option<Self> {
        match order {
            1 => Some(Method::ImplicitEuler),
            2 => Some(Method::Esdirk2),
            3 => Some(Method::Esdirk3),
            4 => Some(Method::Esdirk4),
            _ => None,
        }
    }

    pub fn order(self) -> usize {
        match self {
            Method::ImplicitEuler => 1,
            Method::Esdirk2 => 2,
            Method::Esdirk3 => 3,
            Method::Esdirk4 => 4,
        }
    }

    pub fn tableau(self) -> ButcherTableau {
        match self {
            Method::ImplicitEuler => ButcherTableau::implicit_euler(),
            other => make_tableau(other.order()).expect("orders 2..=4 exist"),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::ImplicitEuler => f.write_str("implicit_euler"),
            other => write!(f, "esdirk{}", other.order()),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "implicit_euler" | "euler" | "1" => Ok(Method::ImplicitEuler),
            "esdirk2" | "2" => Ok(Method::Esdirk2),
            "esdirk3" | "3" => Ok(Method::Esdirk3),
            "esdirk4" | "4" => Ok(Method::Esdirk4),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    pub strategy: Strategy,
    /// Stop once `|delta|_inf / (1 + |u|_inf)` falls below this.
    pub tol_increment: f64,
    pub max_iters: usize,
}

impl NewtonSettings {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            tol_increment: 1e-10,
            max_iters: 10,
        }
    }

    pub fn validate(&self) -> Result<(), IntegrationError> {
        if !(self.tol_increment > 0.0) || self.max_iters < 1 {
            return Err(IntegrationError::InvalidSettings(
                "tol_increment > 0 and max_iters >= 1",
            ));
        }
        Ok(())
    }
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self::new(Strategy::Economical)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepController {
    pub atol: f64,
    pub rtol: f64,
    pub safety: f64,
    pub fac_min: f64,
    pub fac_max: f64,
    pub h_init: Option<f64>,
    pub h_min: Option<f64>,
    pub h_max: Option<f64>,
}

impl StepController {
    /// Defaults with the given tolerances; step bounds are resolved against
    /// the integration interval.
    pub fn new(atol: f64, rtol: f64) -> Self {
        Self {
            atol,
            rtol,
            safety: 0.9,
            fac_min: 0.2,
            fac_max: 5.0,
            h_init: None,
            h_min: None,
            h_max: None,
        }
    }

    /// Same constants, tolerances multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            atol: self.atol * factor,
            rtol: self.rtol * factor,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<(), IntegrationError> {
        let ok = self.atol > 0.0
            && self.rtol > 0.0
            && self.safety > 0.0
            && self.fac_min > 0.0
            && self.fac_min < 1.0
            && self.fac_max > 1.0
            && self.h_init.is_none_or(|h| h > 0.0)
            && self.h_min.is_none_or(|h| h > 0.0)
            && self.h_max.is_none_or(|h| h > 0.0);
        if ok {
            Ok(())
        } else {
            Err(IntegrationError::InvalidSettings(
                "atol, rtol > 0, 0 < fac_min < 1 < fac_max, positive step bounds",
            ))
        }
    }

    /// `(h_init, h_min, h_max)` for the interval `[t0, t_end]`.
    pub fn resolve(&self, t0: f64, t_end: f64) -> (f64, f64, f64) {
        let span = t_end - t0;
        let h_max = self.h_max.unwrap_or(span);
        let h_min = self
            .h_min
            .unwrap_or(1e-12 * t0.abs().max(t_end.abs()).max(1.0));
        let h_init = self.h_init.unwrap_or((span / 100.0).min(1e-2)).min(h_max);
        (h_init, h_min, h_max)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunStats {
    pub steps: usize,
    pub rejections: usize,
    pub newton_iterations: usize,
    pub linear_solves: usize,
    pub newton_failures: usize,
    pub rhs_evaluations: usize,
}

impl RunStats {
    fn record(&mut self, r: &NewtonReport) {
        self.newton_iterations += r.iterations;
        self.linear_solves += r.linear_solves;
        self.rhs_evaluations += r.rhs_evaluations;
    }

    fn absorb(&mut self, other: &RunStats) {
        self.steps += other.steps;
        self.rejections += other.rejections;
        self.newton_iterations += other.newton_iterations;
        self.linear_solves += other.linear_solves;
        self.newton_failures += other.newton_failures;
        self.rhs_evaluations += other.rhs_evaluations;
    }
}

/// Accepted steps with states and derivatives for Hermite dense output.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub derivs: Vec<Vec<f64>>,
    pub stats: RunStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory holds at least t0")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory holds at least t0")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrationError {
    #[error("Newton iteration did not converge at t = {t} (h = {h:e}): {reason}")]
    NewtonDiverged {
        t: f64,
        h: f64,
        reason: &'static str,
    },
    #[error("linear solve failed at t = {t}: {source}")]
    LinearSolve { t: f64, source: SolveError },
    #[error("step size {h:e} fell below h_min = {h_min:e} at t = {t}")]
    StepUnderflow { t: f64, h: f64, h_min: f64 },
    #[error("integration interval must satisfy t_end > t0 and the step must be positive")]
    InvalidInterval,
    #[error("interval length is not an integer multiple of h = {h}")]
    NonIntegralSteps { h: f64 },
    #[error("initial state has length {found}, system expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid settings: {0}")]
    InvalidSettings(&'static str),
}

/// A failed run together with everything accepted before the failure.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{error}")]
pub struct IntegrationFailure {
    pub error: IntegrationError,
    pub partial: Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NewtonReport {
    pub iterations: usize,
    pub linear_solves: usize,
    pub rhs_evaluations: usize,
}

/// Solves `u - h_gamma f(t, u) - known = 0` starting from `u` (overwritten
/// with the solution).
pub fn newton_stage_solve<S: ImplicitSystem + ?Sized>(
    sys: &S,
    settings: &NewtonSettings,
    t: f64,
    h_gamma: f64,
    known: &[f64],
    u: &mut [f64],
) -> Result<NewtonReport, IntegrationError> {
    let dim = sys.dim();
    let mut f = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    let mut delta = vec![0.0; dim];
    let mut report = NewtonReport::default();
    newton_with_buffers(
        sys,
        settings,
        t,
        h_gamma,
        known,
        u,
        &mut f,
        &mut g,
        &mut delta,
        &mut report,
    )?;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn newton_with_buffers<S: ImplicitSystem + ?Sized>(
    sys: &S,
    settings: &NewtonSettings,
    t: f64,
    h_gamma: f64,
    known: &[f64],
    u: &mut [f64],
    f: &mut [f64],
    g: &mut [f64],
    delta: &mut [f64],
    report: &mut NewtonReport,
) -> Result<(), IntegrationError> {
    if !(h_gamma > 0.0) {
        return Err(IntegrationError::LinearSolve {
            t,
            source: SolveError::NonPositiveStep(h_gamma),
        });
    }
    let tol = settings.tol_increment;
    let mut prev = f64::INFINITY;
    let mut growth = 0;
    for k in 0..settings.max_iters {
        sys.rhs(t, u, f);
        report.rhs_evaluations += 1;
        for i in 0..u.len() {
            g[i] = u[i] - h_gamma * f[i] - known[i];
        }
        // an exactly solved linear stage stops here without a second solve
        if k > 0 && norm_inf(g) <= tol * (1.0 + norm_inf(u)) {
            return Ok(());
        }
        sys.newton_solve(settings.strategy, t, h_gamma, u, g, delta)
            .map_err(|source| IntegrationError::LinearSolve { t, source })?;
        report.linear_solves += 1;
        report.iterations += 1;
        for (x, d) in u.iter_mut().zip(delta.iter()) {
            *x += d;
        }
        let step = norm_inf(delta);
        if !step.is_finite() || u.iter().any(|x| !x.is_finite()) {
            return Err(IntegrationError::NewtonDiverged {
                t,
                h: h_gamma,
                reason: "non-finite iterate",
            });
        }
        if step <= tol * (1.0 + norm_inf(u)) {
            return Ok(());
        }
        if step > prev {
            growth += 1;
            if growth >= 2 {
                return Err(IntegrationError::NewtonDiverged {
                    t,
                    h: h_gamma,
                    reason: "increment grew twice in a row",
                });
            }
        } else {
            growth = 0;
        }
        prev = step;
    }
    Err(IntegrationError::NewtonDiverged {
        t,
        h: h_gamma,
        reason: "iteration limit reached",
    })
}

/// Work arrays for one ESDIRK step, reused across steps.
struct StepWork {
    stages: Vec<Vec<f64>>,
    known: Vec<f64>,
    stage_u: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    delta: Vec<f64>,
}

impl StepWork {
    fn new(dim: usize, s: usize) -> Self {
        Self {
            stages: vec![vec![0.0; dim]; s],
            known: vec![0.0; dim],
            stage_u: vec![0.0; dim],
            f: vec![0.0; dim],
            g: vec![0.0; dim],
            delta: vec![0.0; dim],
        }
    }
}

/// Result of one step: the new state, the error estimate and `K_s ~ f(u_next)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub u_next: Vec<f64>,
    pub err_estimate: Vec<f64>,
    pub f_next: Vec<f64>,
    pub report: NewtonReport,
}

#[allow(clippy::too_many_arguments)]
fn step_into<S: ImplicitSystem + ?Sized>(
    sys: &S,
    tab: &ButcherTableau,
    settings: &NewtonSettings,
    h: f64,
    t_n: f64,
    u_n: &[f64],
    f_n: &[f64],
    w: &mut StepWork,
    u_next: &mut [f64],
    err: &mut [f64],
    report: &mut NewtonReport,
) -> Result<(), IntegrationError> {
    let s = tab.stages;
    let dim = u_n.len();
    let gamma = tab.gamma();
    let hg = h * gamma;
    w.stages[0].copy_from_slice(f_n);
    w.stage_u.copy_from_slice(u_n);
    for i in 1..s {
        w.known.copy_from_slice(u_n);
        for j in 0..i {
            let coeff = h * tab.a(i, j);
            if coeff != 0.0 {
                let kj = &w.stages[j];
                for (x, k) in w.known.iter_mut().zip(kj) {
                    *x += coeff * k;
                }
            }
        }
        // the previous stage value is the starting guess
        newton_with_buffers(
            sys,
            settings,
            t_n + tab.c[i] * h,
            hg,
            &w.known,
            &mut w.stage_u,
            &mut w.f,
            &mut w.g,
            &mut w.delta,
            report,
        )?;
        let ki = &mut w.stages[i];
        for d in 0..dim {
            ki[d] = (w.stage_u[d] - w.known[d]) / hg;
        }
    }
    u_next.copy_from_slice(&w.stage_u);
    err.iter_mut().for_each(|e| *e = 0.0);
    for j in 0..s {
        let coeff = h * (tab.b[j] - tab.b_hat[j]);
        if coeff != 0.0 {
            for (e, k) in err.iter_mut().zip(&w.stages[j]) {
                *e += coeff * k;
            }
        }
    }
    Ok(())
}

/// One ESDIRK step from `(t_n, u_n)`; `f_n` must equal `f(t_n, u_n)`.
pub fn esdirk_step<S: ImplicitSystem + ?Sized>(
    sys: &S,
    tab: &ButcherTableau,
    settings: &NewtonSettings,
    h: f64,
    t_n: f64,
    u_n: &[f64],
    f_n: &[f64],
) -> Result<StepOutput, IntegrationError> {
    let dim = u_n.len();
    let mut w = StepWork::new(dim, tab.stages);
    let mut u_next = vec![0.0; dim];
    let mut err = vec![0.0; dim];
    let mut report = NewtonReport::default();
    step_into(
        sys,
        tab,
        settings,
        h,
        t_n,
        u_n,
        f_n,
        &mut w,
        &mut u_next,
        &mut err,
        &mut report,
    )?;
    Ok(StepOutput {
        u_next,
        err_estimate: err,
        f_next: w.stages[tab.stages - 1].clone(),
        report,
    })
}

/// `u_next` solving `u - h f(t_n + h, u) = u_n`.
pub fn implicit_euler_step<S: ImplicitSystem + ?Sized>(
    sys: &S,
    settings: &NewtonSettings,
    h: f64,
    t_n: f64,
    u_n: &[f64],
) -> Result<Vec<f64>, IntegrationError> {
    let mut u = u_n.to_vec();
    newton_stage_solve(sys, settings, t_n + h, h, u_n, &mut u)?;
    Ok(u)
}

fn check_start<S: ImplicitSystem + ?Sized>(
    sys: &S,
    settings: &NewtonSettings,
    t0: f64,
    t_end: f64,
    u0: &[f64],
) -> Result<(), IntegrationError> {
    settings.validate()?;
    if u0.len() != sys.dim() {
        return Err(IntegrationError::DimensionMismatch {
            expected: sys.dim(),
            found: u0.len(),
        });
    }
    if !(t_end > t0) || !t0.is_finite() || !t_end.is_finite() {
        return Err(IntegrationError::InvalidInterval);
    }
    Ok(())
}

/// Receives every accepted step; lets callers sample or store as they go.
pub trait StepObserver {
    /// Called once with the initial point and after every accepted step.
    fn accept(&mut self, t: f64, u: &[f64], f: &[f64]);
}

impl StepObserver for Trajectory {
    fn accept(&mut self, t: f64, u: &[f64], f: &[f64]) {
        self.times.push(t);
        self.states.push(u.to_vec());
        self.derivs.push(f.to_vec());
    }
}

/// Discards every step; useful when only statistics matter.
pub struct Discard;

impl StepObserver for Discard {
    fn accept(&mut self, _t: f64, _u: &[f64], _f: &[f64]) {}
}

/// Runs exactly `M = (t_end - t0)/h` steps, streaming them to `obs`.
#[allow(clippy::too_many_arguments)]
pub fn integrate_fixed_with<S: ImplicitSystem + ?Sized, O: StepObserver>(
    sys: &S,
    method: Method,
    h: f64,
    t0: f64,
    t_end: f64,
    u0: &[f64],
    settings: &NewtonSettings,
    obs: &mut O,
) -> Result<RunStats, (IntegrationError, RunStats)> {
    let fail = |e| (e, RunStats::default());
    check_start(sys, settings, t0, t_end, u0).map_err(fail)?;
    if !(h > 0.0) {
        return Err(fail(IntegrationError::InvalidInterval));
    }
    let ratio = (t_end - t0) / h;
    let m = libm::round(ratio);
    if m < 1.0 || (ratio - m).abs() > 1e-9 * ratio.max(1.0) {
        return Err(fail(IntegrationError::NonIntegralSteps { h }));
    }
    let m = m as usize;
    let tab = method.tableau();
    let dim = u0.len();
    let mut stats = RunStats::default();
    let mut u = u0.to_vec();
    let mut f = vec![0.0; dim];
    sys.rhs(t0, &u, &mut f);
    stats.rhs_evaluations += 1;
    obs.accept(t0, &u, &f);
    let mut w = StepWork::new(dim, tab.stages);
    let mut u_next = vec![0.0; dim];
    let mut err = vec![0.0; dim];
    for k in 0..m {
        let t_n = t0 + k as f64 * h;
        let mut r = NewtonReport::default();
        let res = step_into(
            sys,
            &tab,
            settings,
            h,
            t_n,
            &u,
            &f,
            &mut w,
            &mut u_next,
            &mut err,
            &mut r,
        );
        stats.record(&r);
        match res {
            Ok(()) => {}
            Err(e) => {
                stats.newton_failures += 1;
                return Err((e, stats));
            }
        }
        stats.steps += 1;
        core::mem::swap(&mut u, &mut u_next);
        f.copy_from_slice(&w.stages[tab.stages - 1]);
        let t_next = if k + 1 == m {
            t_end
        } else {
            t0 + (k + 1) as f64 * h
        };
        obs.accept(t_next, &u, &f);
    }
    Ok(stats)
}

/// Fixed-step integration storing every step.
pub fn integrate_fixed<S: ImplicitSystem + ?Sized>(
    sys: &S,
    method: Method,
    h: f64,
    t0: f64,
    t_end: f64,
    u0: &[f64],
    settings: &NewtonSettings,
) -> Result<Trajectory, IntegrationFailure> {
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        derivs: Vec::new(),
        stats: RunStats::default(),
    };
    match integrate_fixed_with(sys, method, h, t0, t_end, u0, settings, &mut traj) {
        Ok(stats) => {
            traj.stats = stats;
            Ok(traj)
        }
        Err((error, stats)) => {
            traj.stats = stats;
            Err(IntegrationFailure {
                error,
                partial: traj,
            })
        }
    }
}

fn weighted_rms(err: &[f64], u_old: &[f64], u_new: &[f64], atol: f64, rtol: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..err.len() {
        let scale = atol + rtol * u_old[i].abs().max(u_new[i].abs());
        let r = err[i] / scale;
        acc += r * r;
    }
    crate::math::sqrt(acc / err.len().max(1) as f64)
}

/// Adaptive integration streaming accepted steps to `obs`.
#[allow(clippy::too_many_arguments)]
pub fn integrate_adaptive_with<S: ImplicitSystem + ?Sized, O: StepObserver>(
    sys: &S,
    method: Method,
    ctrl: &StepController,
    t0: f64,
    t_end: f64,
    u0: &[f64],
    settings: &NewtonSettings,
    obs: &mut O,
) -> Result<RunStats, (IntegrationError, RunStats)> {
    let fail = |e| (e, RunStats::default());
    check_start(sys, settings, t0, t_end, u0).map_err(fail)?;
    ctrl.validate().map_err(fail)?;
    let tab = method.tableau();
    let exponent = -1.0 / (tab.estimator_order() as f64 + 1.0);
    let (h_init, h_min, h_max) = ctrl.resolve(t0, t_end);
    let dim = u0.len();

    let mut stats = RunStats::default();
    let mut u = u0.to_vec();
    let mut f = vec![0.0; dim];
    sys.rhs(t0, &u, &mut f);
    stats.rhs_evaluations += 1;
    obs.accept(t0, &u, &f);

    let mut w = StepWork::new(dim, tab.stages);
    let mut u_next = vec![0.0; dim];
    let mut err = vec![0.0; dim];
    let mut t = t0;
    let mut h = h_init;
    let mut recovering = false;
    loop {
        let remaining = t_end - t;
        let last = h >= remaining * (1.0 - 1e-12);
        let h_try = if last { remaining } else { h };
        if h_try < h_min && !last {
            return Err((
                IntegrationError::StepUnderflow { t, h: h_try, h_min },
                stats,
            ));
        }
        let mut r = NewtonReport::default();
        let res = step_into(
            sys,
            &tab,
            settings,
            h_try,
            t,
            &u,
            &f,
            &mut w,
            &mut u_next,
            &mut err,
            &mut r,
        );
        stats.record(&r);
        match res {
            Ok(()) => {
                let e = weighted_rms(&err, &u, &u_next, ctrl.atol, ctrl.rtol);
                let factor = if e == 0.0 {
                    ctrl.fac_max
                } else if e.is_finite() {
                    (ctrl.safety * powf(e, exponent)).clamp(ctrl.fac_min, ctrl.fac_max)
                } else {
                    ctrl.fac_min
                };
                if e <= 1.0 {
                    stats.steps += 1;
                    t = if last { t_end } else { t + h_try };
                    core::mem::swap(&mut u, &mut u_next);
                    f.copy_from_slice(&w.stages[tab.stages - 1]);
                    obs.accept(t, &u, &f);
                    if last {
                        return Ok(stats);
                    }
                    // no growth straight after a rejection
                    let factor = if recovering { factor.min(1.0) } else { factor };
                    recovering = false;
                    h = (h_try * factor).min(h_max);
                } else {
                    stats.rejections += 1;
                    recovering = true;
                    h = h_try * factor.min(1.0);
                }
            }
            Err(IntegrationError::NewtonDiverged { .. })
            | Err(IntegrationError::LinearSolve { .. }) => {
                stats.newton_failures += 1;
                stats.rejections += 1;
                recovering = true;
                h = h_try * 0.25;
            }
            Err(other) => return Err((other, stats)),
        }
        if h < h_min {
            return Err((IntegrationError::StepUnderflow { t, h, h_min }, stats));
        }
    }
}

/// Adaptive integration storing every accepted step.
pub fn integrate_adaptive<S: ImplicitSystem + ?Sized>(
    sys: &S,
    method: Method,
    ctrl: &StepController,
    t0: f64,
    t_end: f64,
    u0: &[f64],
    settings: &NewtonSettings,
) -> Result<Trajectory, IntegrationFailure> {
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        derivs: Vec::new(),
        stats: RunStats::default(),
    };
    match integrate_adaptive_with(sys, method, ctrl, t0, t_end, u0, settings, &mut traj) {
        Ok(stats) => {
            traj.stats = stats;
            Ok(traj)
        }
        Err((error, stats)) => {
            traj.stats = stats;
            Err(IntegrationFailure {
                error,
                partial: traj,
            })
        }
    }
}

/// Sums statistics of several runs.
pub fn total_stats<'a>(runs: impl IntoIterator<Item = &'a RunStats>) -> RunStats {
    let mut out = RunStats::default();
    for r in runs {
        out.absorb(r);
    }
    out
}
