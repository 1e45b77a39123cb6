//! Implicit time integration for slow-fast neuronal networks.
//!
//! The crate provides three network models (FitzHugh-Nagumo, a calcium-driven
//! FitzHugh-Nagumo variant, and Hindmarsh-Rose) coupled through a symmetric
//! connectivity matrix, together with implicit Euler and ESDIRK(2/3/4)
//! integrators. Every implicit stage is solved by Newton's method and the
//! linear solve inside each Newton iteration can be done two ways:
//!
//! * [`Strategy::Standard`] assembles the full `(d N) x (d N)` matrix
//!   `I - h J` and factors it.
//! * [`Strategy::Economical`] eliminates the variables whose Jacobian blocks
//!   are diagonal and factors a single `N x N` matrix, recovering the other
//!   blocks by back-substitution.
//!
//! Both strategies solve the same linear system, so trajectories agree to
//! round-off while the economical solve is much cheaper for large `N`.
//!
//! The crate is `no_std` (with `alloc`) unless the `std` feature is enabled.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod connectivity;
pub mod initial;
pub mod integrators;
pub mod linalg;
mod math;
pub mod metrics;
pub mod models;
pub mod system;
pub mod tableau;

pub use connectivity::{Coupling, CouplingKind, CouplingSpec, DMatrix, WeightSign};
pub use integrators::{
    integrate_adaptive, integrate_fixed, IntegrationError, IntegrationFailure, Method,
    NewtonSettings, RunStats, StepController, Trajectory,
};
pub use linalg::{DenseMatrix, LinalgError, SparseMatrix};
pub use metrics::{BenchmarkRecord, SampledSolution};
pub use models::{FnParams, HrParams, IccParams, ModelKind, ModelParams, NetworkModel};
pub use system::{ImplicitSystem, SolveError, Strategy};
pub use tableau::ButcherTableau;
