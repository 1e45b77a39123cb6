//! The interface integrators use to talk to a right-hand side.

use core::fmt;
use core::str::FromStr;

use alloc::format;
use alloc::string::String;
use thiserror::Error;

use crate::linalg::LinalgError;

/// How the Newton linear system `(I - h J) delta = -G` is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Assemble and factor the full block matrix.
    Standard,
    /// Block elimination down to one `N x N` system.
    Economical,
}

impl Strategy {
    pub const BOTH: [Strategy; 2] = [Strategy::Standard, Strategy::Economical];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Standard => "standard",
            Strategy::Economical => "economical",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "standard" => Ok(Strategy::Standard),
            "economical" => Ok(Strategy::Economical),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    /// A denominator of the block elimination is too close to zero.
    #[error("block elimination needs {what} > 1e-12, got {value:e}")]
    GuardViolated { what: &'static str, value: f64 },
    #[error("step scale must be positive, got {0}")]
    NonPositiveStep(f64),
}

/// A system `u' = f(t, u)` that can solve its own Newton linear systems.
pub trait ImplicitSystem {
    fn dim(&self) -> usize;

    /// `out = f(t, u)`.
    fn rhs(&self, t: f64, u: &[f64], out: &mut [f64]);

    /// Solves `(I - h_eff J(t, u)) delta = -residual`.
    fn newton_solve(
        &self,
        strategy: Strategy,
        t: f64,
        h_eff: f64,
        u: &[f64],
        residual: &[f64],
        delta: &mut [f64],
    ) -> Result<(), SolveError>;
}

impl<S: ImplicitSystem + ?Sized> ImplicitSystem for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn rhs(&self, t: f64, u: &[f64], out: &mut [f64]) {
        (**self).rhs(t, u, out)
    }

    fn newton_solve(
        &self,
        strategy: Strategy,
        t: f64,
        h_eff: f64,
        u: &[f64],
        residual: &[f64],
        delta: &mut [f64],
    ) -> Result<(), SolveError> {
        (**self).newton_solve(strategy, t, h_eff, u, residual, delta)
    }
}

/// Decoupled linear test equation `u_i' = lambda u_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearDecay {
    pub lambda: f64,
    pub dim: usize,
}

impl ImplicitSystem for LinearDecay {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, _t: f64, u: &[f64], out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(u) {
            *o = self.lambda * x;
        }
    }

    fn newton_solve(
        &self,
        _strategy: Strategy,
        _t: f64,
        h_eff: f64,
        _u: &[f64],
        residual: &[f64],
        delta: &mut [f64],
    ) -> Result<(), SolveError> {
        let m = 1.0 - h_eff * self.lambda;
        if m == 0.0 {
            return Err(LinalgError::SingularMatrix {
                column: 0,
                pivot: 0.0,
            }
            .into());
        }
        for (d, g) in delta.iter_mut().zip(residual) {
            *d = -g / m;
        }
        Ok(())
    }
}

/// Prothero-Robinson type problem `u' = -k (u - cos t)`, stiff for large `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiffRelaxation {
    pub rate: f64,
}

impl ImplicitSystem for StiffRelaxation {
    fn dim(&self) -> usize {
        1
    }

    fn rhs(&self, t: f64, u: &[f64], out: &mut [f64]) {
        out[0] = -self.rate * (u[0] - libm::cos(t));
    }

    fn newton_solve(
        &self,
        _strategy: Strategy,
        _t: f64,
        h_eff: f64,
        _u: &[f64],
        residual: &[f64],
        delta: &mut [f64],
    ) -> Result<(), SolveError> {
        delta[0] = -residual[0] / (1.0 + h_eff * self.rate);
        Ok(())
    }
}
