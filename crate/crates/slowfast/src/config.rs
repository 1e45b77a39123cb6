//! Run configuration.
//!
//! The format is line based: `[section]` headers, `key = value` pairs,
//! comma-separated lists and `#` comments. Every key is optional; missing
//! keys take their defaults and [`RunConfig`]'s `Display` writes all of them
//! back out, so a parsed configuration always round-trips.
//!
//! ```text
//! [model]
//! kind = hr
//! n = 500
//! eps = 0.01
//!
//! [bench]
//! suite = coupling_sweep
//! couplings = lattice, middle, dense_inverse_square
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Display};
use std::path::PathBuf;
use std::str::FromStr;

use slowfast_core::initial::InitialConditionRule;
use slowfast_core::models::ModelError;
use slowfast_core::{
    CouplingKind, CouplingSpec, FnParams, HrParams, IccParams, Method, ModelKind, ModelParams,
    NewtonSettings, StepController, Strategy, WeightSign,
};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Validation(msg.into())
}

/// How ICC gains `k_i` are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainRule {
    Unit,
    /// Uniform in the admissible range, drawn from the master seed.
    Random,
}

impl GainRule {
    fn as_str(self) -> &'static str {
        match self {
            GainRule::Unit => "unit",
            GainRule::Random => "random",
        }
    }
}

impl FromStr for GainRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unit" => Ok(GainRule::Unit),
            "random" => Ok(GainRule::Random),
            other => Err(format!("unknown gain rule `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n: usize,
    /// Master seed. Coupling, initial state and gains use separate streams.
    pub seed: u64,
    /// For ICC models `k_cells` is already resolved for `n`.
    pub params: ModelParams,
    pub gains: GainRule,
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        self.params.kind()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingConfig {
    pub kind: CouplingKind,
    pub density: f64,
    pub weight: f64,
    pub sign: WeightSign,
    /// `None` splits the network in half.
    pub cluster_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialConfig {
    FnSlowManifold,
    HrPerturbedPoint { width: f64 },
    Explicit(Vec<f64>),
}

impl InitialConfig {
    fn name(&self) -> &'static str {
        match self {
            InitialConfig::FnSlowManifold => "fn_slow_manifold",
            InitialConfig::HrPerturbedPoint { .. } => "hr_perturbed_point",
            InitialConfig::Explicit(_) => "explicit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepMode {
    Adaptive,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    pub strategy: Strategy,
    pub step: StepMode,
    pub atol: f64,
    pub rtol: f64,
    pub t0: f64,
    pub t_end: f64,
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    pub safety: f64,
    pub fac_min: f64,
    pub fac_max: f64,
}

impl SolverConfig {
    pub fn controller(&self) -> StepController {
        self.controller_with(self.atol, self.rtol)
    }

    pub fn controller_with(&self, atol: f64, rtol: f64) -> StepController {
        StepController {
            safety: self.safety,
            fac_min: self.fac_min,
            fac_max: self.fac_max,
            ..StepController::new(atol, rtol)
        }
    }

    pub fn newton(&self, strategy: Strategy) -> NewtonSettings {
        NewtonSettings {
            strategy,
            tol_increment: self.newton_tol,
            max_iters: self.newton_max_iters,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    ToleranceSweep,
    StepSweep,
    SizeSweep,
    CouplingSweep,
    EpsilonSweep,
    SingleRun,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::ToleranceSweep,
        Suite::StepSweep,
        Suite::SizeSweep,
        Suite::CouplingSweep,
        Suite::EpsilonSweep,
        Suite::SingleRun,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::ToleranceSweep => "tolerance_sweep",
            Suite::StepSweep => "step_sweep",
            Suite::SizeSweep => "size_sweep",
            Suite::CouplingSweep => "coupling_sweep",
            Suite::EpsilonSweep => "epsilon_sweep",
            Suite::SingleRun => "single_run",
        }
    }

    /// Step sweeps run fixed steps; every other suite is adaptive.
    pub fn is_fixed_step(self) -> bool {
        self == Suite::StepSweep
    }
}

impl Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown suite `{s}`"))
    }
}

/// The `[bench]` section. A sweep runs every point of the Cartesian product
/// `n x couplings x eps x (tolerances | steps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub suite: Suite,
    pub n: Vec<usize>,
    pub eps: Vec<f64>,
    /// Used as `atol = rtol` by adaptive suites.
    pub tolerances: Vec<f64>,
    /// Step counts `M` for the step sweep.
    pub steps: Vec<usize>,
    pub orders: Vec<Method>,
    pub couplings: Vec<CouplingKind>,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub trajectory: String,
    pub benchmark: String,
    pub ratios: String,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub coupling: CouplingConfig,
    pub initial: InitialConfig,
    pub solver: SolverConfig,
    pub bench: ExperimentSpec,
    pub output: OutputConfig,
}

pub const DEFAULT_N: usize = 100;
pub const DEFAULT_T_END: f64 = 200.0;
pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_REPETITIONS: usize = 3;

impl RunConfig {
    /// Defaults for a model kind; the same values a config containing only
    /// `kind` would produce.
    pub fn defaults(kind: ModelKind) -> Self {
        parse_config(&format!("[model]\nkind = {}\n", kind.as_str())).expect("defaults are valid")
    }

    /// Model parameters for a network of `n` cells with stiffness `eps`.
    pub fn model_params(&self, n: usize, eps: f64) -> ModelParams {
        match &self.model.params {
            ModelParams::Fn(p) => ModelParams::Fn(FnParams { eps, ..*p }),
            ModelParams::Hr(p) => ModelParams::Hr(HrParams { eps, ..*p }),
            ModelParams::Icc(p) => ModelParams::Icc(resolve_gains(
                IccParams { eps, ..p.clone() },
                self.model.gains,
                n,
                self.model.seed,
            )),
        }
    }

    pub fn coupling_spec(&self, n: usize, kind: CouplingKind) -> CouplingSpec {
        let c = &self.coupling;
        CouplingSpec::new(kind, n)
            .with_seed(self.model.seed)
            .with_density(c.density)
            .with_weight(c.weight)
            .with_sign(c.sign)
            .with_cluster_size(c.cluster_size.unwrap_or(n / 2))
    }

    pub fn initial_rule(&self) -> InitialConditionRule {
        let seed = self.model.seed;
        match &self.initial {
            InitialConfig::FnSlowManifold => InitialConditionRule::FnSlowManifold { seed },
            InitialConfig::HrPerturbedPoint { width } => InitialConditionRule::HrPerturbedPoint {
                seed,
                width: *width,
            },
            InitialConfig::Explicit(v) => InitialConditionRule::Explicit(v.clone()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let kind = self.model.kind();
        let m = &self.model;
        if m.n < 1 {
            return Err(invalid("n >= 1"));
        }
        self.model.params.validate().map_err(model_invalid)?;
        if let ModelParams::Icc(p) = &m.params {
            if p.k_cells.len() != m.n {
                return Err(invalid("one gain per cell"));
            }
        }

        let c = &self.coupling;
        if kind == ModelKind::Hr && c.sign != WeightSign::NonNegative {
            return Err(invalid("hr couplings need sign = non_negative"));
        }
        let bench = &self.bench;
        for &n in &bench.n {
            for &ck in &bench.couplings {
                self.coupling_spec(n, ck)
                    .validate()
                    .map_err(|e| invalid(format!("coupling for n = {n}: {e}")))?;
            }
        }
        self.coupling_spec(m.n, c.kind)
            .validate()
            .map_err(|e| invalid(e.to_string()))?;

        match (&self.initial, kind) {
            (InitialConfig::FnSlowManifold, ModelKind::Fn | ModelKind::Icc) => {}
            (InitialConfig::HrPerturbedPoint { width }, ModelKind::Hr) => {
                if !(width.is_finite() && *width >= 0.0) {
                    return Err(invalid("width >= 0"));
                }
            }
            (InitialConfig::Explicit(v), _) => {
                let expected = kind.block_dim() * m.n;
                if v.len() != expected {
                    return Err(invalid(format!(
                        "explicit values need {expected} entries, got {}",
                        v.len()
                    )));
                }
                if bench.n.iter().any(|&n| n != m.n) {
                    return Err(invalid(
                        "explicit initial values fix n; bench n must equal model n",
                    ));
                }
            }
            (rule, _) => {
                return Err(invalid(format!(
                    "initial rule {} does not apply to {} models",
                    rule.name(),
                    kind
                )))
            }
        }

        let s = &self.solver;
        if !(s.t_end > s.t0) || !s.t0.is_finite() || !s.t_end.is_finite() {
            return Err(invalid("t_end > t0"));
        }
        if let StepMode::Fixed(h) = s.step {
            check_fixed_step(h, s.t0, s.t_end)?;
        }
        if !(s.newton_tol > 0.0) {
            return Err(invalid("newton_tol > 0"));
        }
        if s.newton_max_iters < 1 {
            return Err(invalid("newton_max_iters >= 1"));
        }
        if !(s.safety > 0.0 && s.safety <= 1.0) {
            return Err(invalid("0 < safety <= 1"));
        }
        self.solver
            .controller()
            .validate()
            .map_err(|e| invalid(e.to_string()))?;

        if bench.n.is_empty()
            || bench.eps.is_empty()
            || bench.tolerances.is_empty()
            || bench.steps.is_empty()
            || bench.orders.is_empty()
            || bench.couplings.is_empty()
        {
            return Err(invalid("bench lists are non-empty"));
        }
        if bench.repetitions < 1 {
            return Err(invalid("repetitions >= 1"));
        }
        if bench.n.contains(&0) {
            return Err(invalid("n >= 1"));
        }
        for &eps in &bench.eps {
            self.model_params(m.n, eps)
                .validate()
                .map_err(model_invalid)?;
        }
        if bench
            .tolerances
            .iter()
            .any(|t| !(*t > 0.0 && t.is_finite()))
        {
            return Err(invalid("tolerances > 0"));
        }
        if bench.steps.contains(&0) {
            return Err(invalid("steps >= 1"));
        }

        let o = &self.output;
        if o.samples < 2 {
            return Err(invalid("samples >= 2"));
        }
        for (name, file) in [
            ("trajectory", &o.trajectory),
            ("benchmark", &o.benchmark),
            ("ratios", &o.ratios),
        ] {
            if file.is_empty() {
                return Err(invalid(format!("{name} file name is non-empty")));
            }
        }
        Ok(())
    }
}

fn model_invalid(e: ModelError) -> ConfigError {
    match e {
        ModelError::InvalidParameter {
            constraint, value, ..
        } => invalid(format!("{constraint} (got {value})")),
        other => invalid(other.to_string()),
    }
}

fn check_fixed_step(h: f64, t0: f64, t_end: f64) -> Result<(), ConfigError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid("h > 0"));
    }
    let m = (t_end - t0) / h;
    if (m - m.round()).abs() > 1e-9 * m.max(1.0) || m.round() < 1.0 {
        return Err(invalid("(t_end - t0) / h is a positive integer"));
    }
    Ok(())
}

fn resolve_gains(p: IccParams, rule: GainRule, n: usize, seed: u64) -> IccParams {
    match rule {
        GainRule::Unit => IccParams {
            k_cells: vec![1.0; n],
            ..p
        },
        GainRule::Random => p.with_random_gains(n, seed),
    }
}

// ---------------------------------------------------------------------------
// Parsing

const SECTIONS: [&str; 6] = ["model", "coupling", "initial", "solver", "bench", "output"];

#[derive(Debug)]
struct Entry {
    value: String,
    line: usize,
    used: bool,
}

#[derive(Debug, Default)]
struct Document {
    sections: BTreeMap<&'static str, BTreeMap<String, Entry>>,
}

impl Document {
    fn tokenize(text: &str) -> Result<Self, ConfigError> {
        let mut doc = Document::default();
        let mut current: Option<&'static str> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |message: String| ConfigError::Parse { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("malformed section header `{content}`")))?
                    .trim();
                let name = SECTIONS
                    .into_iter()
                    .find(|s| *s == name)
                    .ok_or_else(|| err(format!("unknown section [{name}]")))?;
                if doc.sections.contains_key(name) {
                    return Err(err(format!("duplicate section [{name}]")));
                }
                doc.sections.insert(name, BTreeMap::new());
                current = Some(name);
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(err("empty key".into()));
            }
            let section =
                current.ok_or_else(|| err(format!("key `{key}` outside of a section")))?;
            let entries = doc.sections.get_mut(section).expect("section registered");
            if entries.contains_key(key) {
                return Err(err(format!("duplicate key `{key}` in [{section}]")));
            }
            entries.insert(
                key.to_string(),
                Entry {
                    value: value.to_string(),
                    line,
                    used: false,
                },
            );
        }
        Ok(doc)
    }

    fn raw(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        let e = self.sections.get_mut(section)?.get_mut(key)?;
        e.used = true;
        Some((e.value.clone(), e.line))
    }

    fn get<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: Display,
    {
        match self.raw(section, key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|e| ConfigError::Parse {
                line,
                message: format!("{key}: {e}"),
            }),
        }
    }

    fn get_or<T: FromStr>(&mut self, section: &str, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: Display,
    {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: Display,
    {
        match self.raw(section, key) {
            None => Ok(None),
            Some((v, line)) => parse_list(&v).map(Some).map_err(|e| ConfigError::Parse {
                line,
                message: format!("{key}: {e}"),
            }),
        }
    }

    fn line_of(&self, section: &str, key: &str) -> usize {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map_or(0, |e| e.line)
    }

    fn reject_unused(&self) -> Result<(), ConfigError> {
        let mut unused: Vec<(usize, String)> = self
            .sections
            .iter()
            .flat_map(|(section, entries)| {
                entries
                    .iter()
                    .filter(|(_, e)| !e.used)
                    .map(move |(k, e)| (e.line, format!("unknown key `{k}` in [{section}]")))
            })
            .collect();
        unused.sort();
        match unused.into_iter().next() {
            Some((line, message)) => Err(ConfigError::Parse { line, message }),
            None => Ok(()),
        }
    }
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: Display,
{
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|e| format!("`{}`: {e}", s.trim()))
        })
        .collect()
}

/// Method given by its order, `1` being implicit Euler.
struct Order(Method);

impl FromStr for Order {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<usize>()
            .ok()
            .and_then(Method::from_order)
            .map(Order)
            .ok_or_else(|| format!("order must be 1, 2, 3 or 4, got `{s}`"))
    }
}

struct Step(StepMode);

impl FromStr for Step {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "adaptive" {
            return Ok(Step(StepMode::Adaptive));
        }
        s.parse::<f64>()
            .map(|h| Step(StepMode::Fixed(h)))
            .map_err(|_| format!("expected `adaptive` or a step size, got `{s}`"))
    }
}

struct Cluster(Option<usize>);

impl FromStr for Cluster {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "half" {
            return Ok(Cluster(None));
        }
        s.parse::<usize>()
            .map(|k| Cluster(Some(k)))
            .map_err(|_| format!("expected `half` or a cell count, got `{s}`"))
    }
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut doc = Document::tokenize(text)?;

    let kind: ModelKind = doc.get_or("model", "kind", ModelKind::Fn)?;
    let n: usize = doc.get_or("model", "n", DEFAULT_N)?;
    let seed: u64 = doc.get_or("model", "seed", 0)?;
    let mut gains = GainRule::Unit;
    let params = match kind {
        ModelKind::Fn => {
            let d = FnParams::default();
            ModelParams::Fn(FnParams {
                eps: doc.get_or("model", "eps", d.eps)?,
                a1: doc.get_or("model", "a1", d.a1)?,
                a2: doc.get_or("model", "a2", d.a2)?,
            })
        }
        ModelKind::Icc => {
            let d = IccParams::placeholder(n);
            gains = doc.get_or("model", "gains", GainRule::Random)?;
            let p = IccParams {
                tau: doc.get_or("model", "tau", d.tau)?,
                eps: doc.get_or("model", "eps", d.eps)?,
                a1: doc.get_or("model", "a1", d.a1)?,
                a2: doc.get_or("model", "a2", d.a2)?,
                mu: doc.get_or("model", "mu", d.mu)?,
                z0: doc.get_or("model", "z0", d.z0)?,
                lambda: doc.get_or("model", "lambda", d.lambda)?,
                rho: doc.get_or("model", "rho", d.rho)?,
                x_on: doc.get_or("model", "x_on", d.x_on)?,
                tau_z: doc.get_or("model", "tau_z", d.tau_z)?,
                z_b: doc.get_or("model", "z_b", d.z_b)?,
                k_cells: Vec::new(),
            };
            ModelParams::Icc(resolve_gains(p, gains, n, seed))
        }
        ModelKind::Hr => {
            let d = HrParams::default();
            ModelParams::Hr(HrParams {
                a: doc.get_or("model", "a", d.a)?,
                b: doc.get_or("model", "b", d.b)?,
                c: doc.get_or("model", "c", d.c)?,
                d: doc.get_or("model", "d", d.d)?,
                eps: doc.get_or("model", "eps", d.eps)?,
                k: doc.get_or("model", "k", d.k)?,
                i_ext: doc.get_or("model", "i_ext", d.i_ext)?,
                x0: doc.get_or("model", "x0", d.x0)?,
            })
        }
    };
    let model = ModelConfig {
        n,
        seed,
        params,
        gains,
    };

    let default_sign = match kind {
        ModelKind::Hr => WeightSign::NonNegative,
        _ => WeightSign::Signed,
    };
    let spec = CouplingSpec::new(CouplingKind::Lattice, n);
    let coupling_kind = doc.get_or("coupling", "kind", CouplingKind::Lattice)?;
    let coupling = CouplingConfig {
        kind: coupling_kind,
        density: doc.get_or("coupling", "density", spec.density)?,
        weight: doc.get_or("coupling", "weight", spec.weight)?,
        sign: doc.get_or("coupling", "sign", default_sign)?,
        cluster_size: doc.get_or("coupling", "cluster_size", Cluster(None))?.0,
    };

    let default_rule = match kind {
        ModelKind::Hr => "hr_perturbed_point",
        _ => "fn_slow_manifold",
    };
    let rule: String = doc.get_or("initial", "rule", default_rule.to_string())?;
    let initial = match rule.as_str() {
        "fn_slow_manifold" => InitialConfig::FnSlowManifold,
        "hr_perturbed_point" => InitialConfig::HrPerturbedPoint {
            width: doc.get_or("initial", "width", 0.01)?,
        },
        "explicit" => {
            let line = doc.line_of("initial", "rule");
            let values = doc.list("initial", "values")?.ok_or(ConfigError::Parse {
                line,
                message: "explicit initial rule needs `values`".into(),
            })?;
            InitialConfig::Explicit(values)
        }
        other => {
            return Err(ConfigError::Parse {
                line: doc.line_of("initial", "rule"),
                message: format!("unknown initial rule `{other}`"),
            })
        }
    };

    let ctrl = StepController::new(DEFAULT_TOL, DEFAULT_TOL);
    let newton = NewtonSettings::new(Strategy::Economical);
    let solver = SolverConfig {
        method: doc.get_or("solver", "order", Order(Method::Esdirk4))?.0,
        strategy: doc.get_or("solver", "strategy", Strategy::Economical)?,
        step: doc.get_or("solver", "h", Step(StepMode::Adaptive))?.0,
        atol: doc.get_or("solver", "atol", ctrl.atol)?,
        rtol: doc.get_or("solver", "rtol", ctrl.rtol)?,
        t0: doc.get_or("solver", "t0", 0.0)?,
        t_end: doc.get_or("solver", "t_end", DEFAULT_T_END)?,
        newton_tol: doc.get_or("solver", "newton_tol", newton.tol_increment)?,
        newton_max_iters: doc.get_or("solver", "newton_max_iters", newton.max_iters)?,
        safety: doc.get_or("solver", "safety", ctrl.safety)?,
        fac_min: doc.get_or("solver", "fac_min", ctrl.fac_min)?,
        fac_max: doc.get_or("solver", "fac_max", ctrl.fac_max)?,
    };

    let orders: Option<Vec<Order>> = doc.list("bench", "orders")?;
    let bench = ExperimentSpec {
        suite: doc.get_or("bench", "suite", Suite::SingleRun)?,
        n: doc.list("bench", "n")?.unwrap_or_else(|| vec![n]),
        eps: doc
            .list("bench", "eps")?
            .unwrap_or_else(|| vec![model.params.eps()]),
        tolerances: doc
            .list("bench", "tolerances")?
            .unwrap_or_else(|| vec![solver.atol]),
        steps: doc.list("bench", "steps")?.unwrap_or_else(|| vec![100]),
        orders: orders.map_or_else(
            || Method::ESDIRK.to_vec(),
            |v| v.into_iter().map(|o| o.0).collect(),
        ),
        couplings: doc
            .list("bench", "couplings")?
            .unwrap_or_else(|| vec![coupling_kind]),
        repetitions: doc.get_or("bench", "repetitions", DEFAULT_REPETITIONS)?,
    };

    let output = OutputConfig {
        dir: PathBuf::from(doc.get_or("output", "dir", "output".to_string())?),
        trajectory: doc.get_or("output", "trajectory", "trajectory.csv".to_string())?,
        benchmark: doc.get_or("output", "benchmark", "benchmark.csv".to_string())?,
        ratios: doc.get_or("output", "ratios", "ratios.csv".to_string())?,
        samples: doc.get_or("output", "samples", slowfast_core::metrics::DEFAULT_SAMPLES)?,
    };

    doc.reject_unused()?;
    let cfg = RunConfig {
        model,
        coupling,
        initial,
        solver,
        bench,
        output,
    };
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Serialization

struct List<'a, T>(&'a [T]);

impl<T: fmt::Debug> Display for List<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v:?}")?;
        }
        Ok(())
    }
}

impl Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.model;
        writeln!(f, "[model]")?;
        writeln!(f, "kind = {}", m.kind())?;
        writeln!(f, "n = {}", m.n)?;
        writeln!(f, "seed = {}", m.seed)?;
        match &m.params {
            ModelParams::Fn(p) => {
                writeln!(f, "eps = {:?}", p.eps)?;
                writeln!(f, "a1 = {:?}", p.a1)?;
                writeln!(f, "a2 = {:?}", p.a2)?;
            }
            ModelParams::Icc(p) => {
                writeln!(f, "gains = {}", m.gains.as_str())?;
                for (k, v) in [
                    ("tau", p.tau),
                    ("eps", p.eps),
                    ("a1", p.a1),
                    ("a2", p.a2),
                    ("mu", p.mu),
                    ("z0", p.z0),
                    ("lambda", p.lambda),
                    ("rho", p.rho),
                    ("x_on", p.x_on),
                    ("tau_z", p.tau_z),
                    ("z_b", p.z_b),
                ] {
                    writeln!(f, "{k} = {v:?}")?;
                }
            }
            ModelParams::Hr(p) => {
                for (k, v) in [
                    ("a", p.a),
                    ("b", p.b),
                    ("c", p.c),
                    ("d", p.d),
                    ("eps", p.eps),
                    ("k", p.k),
                    ("i_ext", p.i_ext),
                    ("x0", p.x0),
                ] {
                    writeln!(f, "{k} = {v:?}")?;
                }
            }
        }

        let c = &self.coupling;
        writeln!(f, "\n[coupling]")?;
        writeln!(f, "kind = {}", c.kind)?;
        writeln!(f, "density = {:?}", c.density)?;
        writeln!(f, "weight = {:?}", c.weight)?;
        writeln!(f, "sign = {}", c.sign)?;
        match c.cluster_size {
            Some(k) => writeln!(f, "cluster_size = {k}")?,
            None => writeln!(f, "cluster_size = half")?,
        }

        writeln!(f, "\n[initial]")?;
        writeln!(f, "rule = {}", self.initial.name())?;
        match &self.initial {
            InitialConfig::FnSlowManifold => {}
            InitialConfig::HrPerturbedPoint { width } => writeln!(f, "width = {width:?}")?,
            InitialConfig::Explicit(v) => writeln!(f, "values = {}", List(v))?,
        }

        let s = &self.solver;
        writeln!(f, "\n[solver]")?;
        writeln!(f, "order = {}", s.method.order())?;
        writeln!(f, "strategy = {}", s.strategy)?;
        match s.step {
            StepMode::Adaptive => writeln!(f, "h = adaptive")?,
            StepMode::Fixed(h) => writeln!(f, "h = {h:?}")?,
        }
        for (k, v) in [
            ("atol", s.atol),
            ("rtol", s.rtol),
            ("t0", s.t0),
            ("t_end", s.t_end),
            ("newton_tol", s.newton_tol),
        ] {
            writeln!(f, "{k} = {v:?}")?;
        }
        writeln!(f, "newton_max_iters = {}", s.newton_max_iters)?;
        for (k, v) in [
            ("safety", s.safety),
            ("fac_min", s.fac_min),
            ("fac_max", s.fac_max),
        ] {
            writeln!(f, "{k} = {v:?}")?;
        }

        let b = &self.bench;
        let orders: Vec<usize> = b.orders.iter().map(|m| m.order()).collect();
        let couplings: Vec<&str> = b.couplings.iter().map(|k| k.as_str()).collect();
        writeln!(f, "\n[bench]")?;
        writeln!(f, "suite = {}", b.suite)?;
        writeln!(f, "n = {}", List(&b.n))?;
        writeln!(f, "eps = {}", List(&b.eps))?;
        writeln!(f, "tolerances = {}", List(&b.tolerances))?;
        writeln!(f, "steps = {}", List(&b.steps))?;
        writeln!(f, "orders = {}", List(&orders))?;
        writeln!(f, "couplings = {}", couplings.join(", "))?;
        writeln!(f, "repetitions = {}", b.repetitions)?;

        let o = &self.output;
        writeln!(f, "\n[output]")?;
        writeln!(f, "dir = {}", o.dir.display())?;
        writeln!(f, "trajectory = {}", o.trajectory)?;
        writeln!(f, "benchmark = {}", o.benchmark)?;
        writeln!(f, "ratios = {}", o.ratios)?;
        writeln!(f, "samples = {}", o.samples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_fn_config_gets_defaults() {
        let cfg = parse_config("[model]\nkind = fn\n").unwrap();
        assert_eq!(cfg.model.n, DEFAULT_N);
        assert_eq!(cfg.model.params, ModelParams::Fn(FnParams::default()));
        assert_eq!(cfg.coupling.sign, WeightSign::Signed);
        assert_eq!(cfg.initial, InitialConfig::FnSlowManifold);
        assert_eq!(cfg.solver.method, Method::Esdirk4);
        assert_eq!(cfg.solver.step, StepMode::Adaptive);
        assert_eq!(cfg.solver.t_end, DEFAULT_T_END);
        assert_eq!(cfg.bench.suite, Suite::SingleRun);
        assert_eq!(cfg.bench.n, vec![DEFAULT_N]);
        assert_eq!(cfg.output.samples, 1000);
        assert_eq!(parse_config("").unwrap(), cfg);
    }

    #[test]
    fn hr_defaults_are_non_negative_with_perturbed_start() {
        let cfg = RunConfig::defaults(ModelKind::Hr);
        assert_eq!(cfg.coupling.sign, WeightSign::NonNegative);
        assert_eq!(cfg.initial, InitialConfig::HrPerturbedPoint { width: 0.01 });
    }

    #[test]
    fn negative_eps_names_the_invariant() {
        let err = parse_config("[model]\nkind = fn\neps = -1\n").unwrap_err();
        match err {
            ConfigError::Validation(msg) => assert!(msg.starts_with("eps > 0"), "{msg}"),
            other => panic!("expected a validation error, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = [
            ("[model]\nkind = fn\nbogus = 1\n", 3),
            ("[model]\n\n# c\nn = ten\n", 4),
            ("n = 3\n", 1),
            ("[model]\n[model]\n", 2),
            ("[nope]\n", 1),
            ("[solver]\norder = 7\n", 2),
            ("[model]\nkind = hr\na1 = 0.3\n", 3),
            ("[model]\nn = 3\nn = 4\n", 3),
            ("[bench]\nn = 10, x\n", 2),
        ];
        for (text, line) in cases {
            match parse_config(text) {
                Err(ConfigError::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn invariants_are_enforced() {
        let cases = [
            "[model]\nn = 0\n",
            "[model]\nkind = hr\n[coupling]\nsign = signed\n",
            "[initial]\nrule = hr_perturbed_point\n",
            "[solver]\nt_end = -1\n",
            "[solver]\nh = 0.3\n",
            "[solver]\natol = 0\n",
            "[bench]\nrepetitions = 0\n",
            "[bench]\ntolerances =\n",
            "[output]\nsamples = 1\n",
            "[model]\nn = 2\n[initial]\nrule = explicit\nvalues = 1, 2, 3\n",
            "[coupling]\nkind = random\ndensity = 0\n",
        ];
        for text in cases {
            assert!(
                matches!(parse_config(text), Err(ConfigError::Validation(_))),
                "{text}: {:?}",
                parse_config(text)
            );
        }
    }

    #[test]
    fn explicit_values_and_fixed_steps_parse() {
        let cfg = parse_config(
            "[model]\nn = 2\n[initial]\nrule = explicit\nvalues = 1, 2, 3, 4\n[solver]\nh = 2\n",
        )
        .unwrap();
        assert_eq!(
            cfg.initial,
            InitialConfig::Explicit(vec![1.0, 2.0, 3.0, 4.0])
        );
        assert_eq!(cfg.solver.step, StepMode::Fixed(2.0));
    }

    #[test]
    fn icc_gains_follow_the_seed() {
        let a = parse_config("[model]\nkind = icc\nn = 5\nseed = 3\n").unwrap();
        let b = parse_config("[model]\nkind = icc\nn = 5\nseed = 4\n").unwrap();
        let gains = |c: &RunConfig| match &c.model.params {
            ModelParams::Icc(p) => p.k_cells.clone(),
            _ => unreachable!(),
        };
        assert_eq!(gains(&a).len(), 5);
        assert_ne!(gains(&a), gains(&b));
        let unit = parse_config("[model]\nkind = icc\nn = 5\ngains = unit\n").unwrap();
        assert_eq!(gains(&unit), vec![1.0; 5]);
        match a.model_params(8, 0.02) {
            ModelParams::Icc(p) => {
                assert_eq!(p.k_cells.len(), 8);
                assert_eq!(p.eps, 0.02);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn hr_bench_config_round_trips() {
        let text = "\
[model]
kind = hr
n = 1000
eps = 0.01

[bench]
suite = coupling_sweep
couplings = lattice, middle, dense_inverse_square
tolerances = 1e-4
orders = 1, 2, 3, 4
";
        let cfg = parse_config(text).unwrap();
        let again = parse_config(&cfg.to_string()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.to_string(), again.to_string());
    }
}
