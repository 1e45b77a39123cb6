//! Seeded initial conditions.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::models::{ModelKind, NetworkModel};

/// Random stream used for initial states.
const INITIAL_STREAM: u64 = 2;

/// Base point of the bursting attractor for the default HR parameters.
pub const HR_BASE_POINT: [f64; 3] = [-1.48, -10.06, 1.84];

#[derive(Debug, Clone, PartialEq)]
pub enum InitialConditionRule {
    /// `x_i ~ U[-2, -1]`, `y_i = 4 x_i - x_i^3`.
    FnSlowManifold { seed: u64 },
    /// [`HR_BASE_POINT`] plus `U(-width, width)` per component.
    HrPerturbedPoint { seed: u64, width: f64 },
    /// A state given in full, variable-blocked.
    Explicit(Vec<f64>),
}

impl InitialConditionRule {
    pub fn fn_slow_manifold(seed: u64) -> Self {
        Self::FnSlowManifold { seed }
    }

    pub fn hr_perturbed_point(seed: u64) -> Self {
        Self::HrPerturbedPoint { seed, width: 0.01 }
    }

    /// The default rule for a model kind. ICC cells start on the same
    /// slow-manifold branch as FN cells, with calcium at zero.
    pub fn default_for(kind: ModelKind, seed: u64) -> Self {
        match kind {
            ModelKind::Fn | ModelKind::Icc => Self::fn_slow_manifold(seed),
            ModelKind::Hr => Self::hr_perturbed_point(seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InitialConditionError {
    #[error("rule {rule} does not apply to {model} models")]
    RuleModelMismatch {
        rule: &'static str,
        model: ModelKind,
    },
    #[error("explicit state has length {found}, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("perturbation width must be finite and non-negative, got {0}")]
    InvalidWidth(f64),
}

pub fn make_initial_condition(
    rule: &InitialConditionRule,
    model: &NetworkModel,
) -> Result<Vec<f64>, InitialConditionError> {
    let n = model.n_cells();
    let kind = model.kind();
    match rule {
        InitialConditionRule::FnSlowManifold { seed } => {
            if kind == ModelKind::Hr {
                return Err(InitialConditionError::RuleModelMismatch {
                    rule: "fn_slow_manifold",
                    model: kind,
                });
            }
            let mut rng = rng_for(*seed);
            let mut u = vec![0.0; model.state_len()];
            for i in 0..n {
                let x: f64 = rng.random_range(-2.0..=-1.0);
                u[i] = x;
                u[n + i] = 4.0 * x - x * x * x;
            }
            Ok(u)
        }
        InitialConditionRule::HrPerturbedPoint { seed, width } => {
            if kind != ModelKind::Hr {
                return Err(InitialConditionError::RuleModelMismatch {
                    rule: "hr_perturbed_point",
                    model: kind,
                });
            }
            if !(width.is_finite() && *width >= 0.0) {
                return Err(InitialConditionError::InvalidWidth(*width));
            }
            let mut rng = rng_for(*seed);
            let mut u = vec![0.0; 3 * n];
            for i in 0..n {
                for (v, base) in HR_BASE_POINT.iter().enumerate() {
                    let delta = if *width > 0.0 {
                        rng.random_range(-width..*width)
                    } else {
                        0.0
                    };
                    u[v * n + i] = base + delta;
                }
            }
            Ok(u)
        }
        InitialConditionRule::Explicit(values) => {
            if values.len() != model.state_len() {
                return Err(InitialConditionError::DimensionMismatch {
                    expected: model.state_len(),
                    found: values.len(),
                });
            }
            Ok(values.clone())
        }
    }
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INITIAL_STREAM);
    rng
}
