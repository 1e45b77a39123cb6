//! Property checks run by the `validate` command.
//!
//! Each check measures one quantity (a worst-case difference, a slope) and
//! compares it with a fixed threshold. The measuring functions are public so
//! other harnesses can apply their own thresholds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slowfast_core::connectivity::gen_coupling;
use slowfast_core::initial::{make_initial_condition, InitialConditionRule};
use slowfast_core::linalg::norm_inf;
use slowfast_core::tableau::validate_tableau;
use slowfast_core::{
    integrate_adaptive, integrate_fixed, CouplingKind, CouplingSpec, FnParams, HrParams, IccParams,
    Method, ModelKind, ModelParams, NetworkModel, NewtonSettings, StepController, Strategy,
    WeightSign,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub measured: f64,
    /// Human-readable acceptance condition, e.g. `<= 1e-9`.
    pub requirement: String,
    pub passed: bool,
}

impl CheckOutcome {
    fn at_most(name: String, measured: f64, bound: f64) -> Self {
        Self {
            name,
            measured,
            requirement: format!("<= {bound:e}"),
            passed: measured <= bound,
        }
    }

    fn within(name: String, measured: f64, target: f64, width: f64) -> Self {
        Self {
            name,
            measured,
            requirement: format!("in {target} +/- {width}"),
            passed: (measured - target).abs() <= width,
        }
    }
}

/// A random network of `n` cells with heterogeneous parameters where the
/// model has them.
pub fn random_model(kind: ModelKind, n: usize, seed: u64) -> NetworkModel {
    let sign = match kind {
        ModelKind::Hr => WeightSign::NonNegative,
        _ => WeightSign::Signed,
    };
    let spec = CouplingSpec::new(CouplingKind::Random, n)
        .with_density(0.3)
        .with_seed(seed)
        .with_sign(sign);
    let c = gen_coupling(&spec).expect("valid random coupling");
    let params = match kind {
        ModelKind::Fn => ModelParams::Fn(FnParams::default()),
        ModelKind::Icc => ModelParams::Icc(IccParams::placeholder(n).with_random_gains(n, seed)),
        ModelKind::Hr => ModelParams::Hr(HrParams {
            eps: 0.01,
            ..HrParams::default()
        }),
    };
    NetworkModel::new(params, &c).expect("valid model")
}

/// A state in the region the dynamics visit.
fn random_state(kind: ModelKind, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let ranges: &[(f64, f64)] = match kind {
        ModelKind::Fn => &[(-2.5, 2.5), (-4.0, 4.0)],
        ModelKind::Icc => &[(-2.5, 2.5), (-4.0, 4.0), (0.0, 1.0)],
        ModelKind::Hr => &[(-2.0, 2.0), (-15.0, 1.0), (0.0, 4.0)],
    };
    let mut u = vec![0.0; ranges.len() * n];
    for (v, &(lo, hi)) in ranges.iter().enumerate() {
        for x in &mut u[v * n..(v + 1) * n] {
            *x = rng.random_range(lo..hi);
        }
    }
    u
}

/// Largest relative difference `|d_econ - d_full|_inf / |d_full|_inf` over
/// `trials` random `(state, residual, h)` triples. A trial where exactly one
/// of the two solves fails counts as an infinite difference.
pub fn reduction_max_rel_diff(kind: ModelKind, n: usize, trials: usize, seed: u64) -> f64 {
    let model = random_model(kind, n, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst = 0.0_f64;
    for _ in 0..trials {
        let u = random_state(kind, n, &mut rng);
        let g: Vec<f64> = (0..u.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = 10f64.powf(rng.random_range(-4.0..0.0));
        let full = model.full_newton_solve(h, &u, &g);
        let reduced = model.reduced_newton_solve(h, &u, &g);
        let diff = match (full, reduced) {
            (Ok(a), Ok(b)) => {
                let num = a
                    .iter()
                    .zip(&b)
                    .fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()));
                num / norm_inf(&a).max(f64::MIN_POSITIVE)
            }
            (Err(_), Err(_)) => 0.0,
            _ => f64::INFINITY,
        };
        worst = worst.max(diff);
    }
    worst
}

/// Largest relative error between central differences with step `delta`
/// and the analytic Jacobian action, over `probes` random states and
/// unit-norm directions.
pub fn jacobian_fd_max_rel_err(
    kind: ModelKind,
    n: usize,
    probes: usize,
    delta: f64,
    seed: u64,
) -> f64 {
    let model = random_model(kind, n, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let mut worst = 0.0_f64;
    for _ in 0..probes {
        let u = random_state(kind, n, &mut rng);
        let mut v: Vec<f64> = (0..u.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vn = norm_inf(&v);
        v.iter_mut().for_each(|x| *x /= vn);
        let plus: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + delta * b).collect();
        let minus: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - delta * b).collect();
        let fp = model.rhs(&plus).expect("dimension");
        let fm = model.rhs(&minus).expect("dimension");
        let jv = model.jacobian_apply(&u, &v).expect("dimension");
        let num = fp.iter().zip(&fm).zip(&jv).fold(0.0_f64, |m, ((p, q), j)| {
            m.max(((p - q) / (2.0 * delta) - j).abs())
        });
        worst = worst.max(num / norm_inf(&jv).max(1.0));
    }
    worst
}

/// The smooth window used for convergence measurements: a lattice FN
/// network of 10 cells started on the slow manifold, `t` in `[0, 1]`.
pub fn convergence_problem() -> (NetworkModel, Vec<f64>) {
    let c = gen_coupling(&CouplingSpec::new(CouplingKind::Lattice, 10)).expect("lattice");
    let m = NetworkModel::fitzhugh_nagumo(FnParams::default(), &c).expect("model");
    let u0 = make_initial_condition(&InitialConditionRule::fn_slow_manifold(1), &m).expect("rule");
    (m, u0)
}

/// Step counts used for each method's convergence measurement; chosen so
/// errors stay well above the Newton and reference floors.
pub fn convergence_steps(method: Method) -> Vec<usize> {
    match method {
        Method::ImplicitEuler => vec![40, 80, 160, 320],
        Method::Esdirk2 => vec![20, 40, 80, 160],
        Method::Esdirk3 => vec![10, 20, 40, 80],
        Method::Esdirk4 => vec![5, 10, 20, 40],
    }
}

/// Least-squares slope of `log(error)` against `log(h)` for fixed-step runs
/// on [`convergence_problem`], with final-state errors measured against a
/// tight adaptive reference. Returns the slope and the errors.
pub fn convergence_slope(method: Method, steps: &[usize]) -> (f64, Vec<f64>) {
    let (m, u0) = convergence_problem();
    let (t0, t1) = (0.0, 1.0);
    let tight = NewtonSettings {
        tol_increment: 1e-14,
        ..NewtonSettings::new(Strategy::Economical)
    };
    let reference = integrate_adaptive(
        &m,
        Method::Esdirk4,
        &StepController::new(1e-13, 1e-13),
        t0,
        t1,
        &u0,
        &tight,
    )
    .expect("reference run");
    let u_ref = reference.final_state();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut errors = Vec::new();
    for &steps in steps {
        let h = (t1 - t0) / steps as f64;
        let run = integrate_fixed(&m, method, h, t0, t1, &u0, &tight).expect("fixed run");
        let e = run
            .final_state()
            .iter()
            .zip(u_ref)
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
        errors.push(e);
        xs.push(h.ln());
        ys.push(e.ln());
    }
    (least_squares_slope(&xs, &ys), errors)
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Largest `|u_standard - u_economical|_inf` over all steps of fixed-step
/// runs of `method` with `steps` steps.
pub fn strategy_max_diff(
    m: &NetworkModel,
    u0: &[f64],
    method: Method,
    t_end: f64,
    steps: usize,
) -> Result<f64, String> {
    let h = t_end / steps as f64;
    let run = |s| {
        integrate_fixed(m, method, h, 0.0, t_end, u0, &NewtonSettings::new(s))
            .map_err(|e| e.to_string())
    };
    let a = run(Strategy::Standard)?;
    let b = run(Strategy::Economical)?;
    if a.len() != b.len() {
        return Err("trajectories differ in length".into());
    }
    let mut worst = 0.0_f64;
    for (x, y) in a.states.iter().zip(&b.states) {
        for (p, q) in x.iter().zip(y) {
            worst = worst.max((p - q).abs());
        }
    }
    Ok(worst)
}

/// Runs the full suite, or a reduced one when `quick`.
pub fn run_validation(quick: bool, mut log: impl FnMut(&CheckOutcome)) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let mut push = |c: CheckOutcome| {
        log(&c);
        out.push(c);
    };

    for method in Method::ESDIRK {
        let problems = validate_tableau(&method.tableau());
        push(CheckOutcome {
            name: format!("tableau {method}"),
            measured: problems.len() as f64,
            requirement: if problems.is_empty() {
                "no violated conditions".into()
            } else {
                problems.join("; ")
            },
            passed: problems.is_empty(),
        });
    }

    let (sizes, trials, probes): (&[usize], usize, usize) = if quick {
        (&[2, 10], 20, 10)
    } else {
        (&[2, 10, 50], 100, 50)
    };
    for kind in [ModelKind::Fn, ModelKind::Icc, ModelKind::Hr] {
        for &n in sizes {
            let d = reduction_max_rel_diff(kind, n, trials, n as u64);
            push(CheckOutcome::at_most(
                format!("economical = full, {kind} N={n}"),
                d,
                1e-9,
            ));
        }
        let e = jacobian_fd_max_rel_err(kind, 10, probes, 1e-6, 3);
        push(CheckOutcome::at_most(
            format!("jacobian vs central differences, {kind}"),
            e,
            1e-5,
        ));
    }

    for method in Method::ALL {
        let steps = convergence_steps(method);
        let steps = if quick { &steps[1..3] } else { &steps[..] };
        let (slope, _) = convergence_slope(method, steps);
        push(CheckOutcome::within(
            format!("convergence order, {method}"),
            slope,
            method.order() as f64,
            0.3,
        ));
    }

    let (n, t_end, steps) = (100, 200.0, 100);
    let c = gen_coupling(&CouplingSpec::new(CouplingKind::Lattice, n)).expect("lattice");
    let m = NetworkModel::fitzhugh_nagumo(FnParams::default(), &c).expect("model");
    let u0 = make_initial_condition(&InitialConditionRule::fn_slow_manifold(0), &m).expect("rule");
    for method in Method::ESDIRK {
        let d = strategy_max_diff(&m, &u0, method, t_end, steps).unwrap_or(f64::INFINITY);
        push(CheckOutcome::at_most(
            format!("standard = economical trajectory, {method} FN N={n}"),
            d,
            1e-8,
        ));
    }
    out
}
