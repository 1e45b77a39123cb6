//! Network models, their Jacobians and the block-eliminated Newton solves.
//!
//! States are stored variable-blocked: `[x_1..x_N | y_1..y_N | z_1..z_N]`, so
//! the coupling matrix always acts on a contiguous slice.
//!
//! Each model's Jacobian has diagonal blocks everywhere except the `x`-`x`
//! (FN, HR) or `y`-`x` (ICC) block that carries `D`. The economical solves
//! use that to eliminate the `y` (and `z`) increments and factor a single
//! `N x N` matrix; the standard solve factors the whole `I - h J`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::connectivity::{
    build_fn_d, build_hr_d, build_icc_d, ConnectivityError, Coupling, DMatrix,
};
use crate::linalg::{DenseMatrix, LuFactors};
use crate::math::logistic;
use crate::system::{ImplicitSystem, SolveError, Strategy};

/// Random stream used for the per-cell ICC gains.
const GAIN_STREAM: u64 = 3;

/// Smallest denominator the block elimination accepts.
pub const DENOMINATOR_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("state has length {found}, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {constraint} violated ({name} = {value})")]
    InvalidParameter {
        name: &'static str,
        constraint: &'static str,
        value: f64,
    },
    #[error("expected {expected} per-cell gains, got {found}")]
    GainCount { expected: usize, found: usize },
    #[error(transparent)]
    Connectivity(#[from] ConnectivityError),
}

fn require(
    ok: bool,
    name: &'static str,
    constraint: &'static str,
    value: f64,
) -> Result<(), ModelError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            constraint,
            value,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Fn,
    Icc,
    Hr,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Fn => "fn",
            ModelKind::Icc => "icc",
            ModelKind::Hr => "hr",
        }
    }

    /// Number of state variables per cell.
    pub fn block_dim(self) -> usize {
        match self {
            ModelKind::Fn => 2,
            ModelKind::Icc | ModelKind::Hr => 3,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fn" | "fitzhugh_nagumo" => Ok(ModelKind::Fn),
            "icc" | "calcium" => Ok(ModelKind::Icc),
            "hr" | "hindmarsh_rose" => Ok(ModelKind::Hr),
            other => Err(format!("unknown model kind `{other}`")),
        }
    }
}

/// FitzHugh-Nagumo cell: `x' = f(x) - y`, `y' = eps (x + g(y))` with
/// `f(w) = 4w - w^3` and `g(w) = a1 w + a2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FnParams {
    pub eps: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Default for FnParams {
    /// `eps = 0.05` with a single equilibrium on the attracting left branch,
    /// so isolated cells are excitable rather than oscillating.
    fn default() -> Self {
        Self {
            eps: 0.05,
            a1: -0.5,
            a2: 0.7,
        }
    }
}

impl FnParams {
    /// Moves the single equilibrium onto the repelling middle branch, giving
    /// relaxation oscillations with a period of roughly 160 time units.
    pub fn relaxation_oscillator() -> Self {
        Self {
            eps: 0.05,
            a1: -0.2,
            a2: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        require(self.eps > 0.0, "eps", "eps > 0", self.eps)?;
        require(true, "a1", "a1 finite", self.a1)?;
        require(true, "a2", "a2 finite", self.a2)
    }

    /// Whether the nullclines `y = f(x)` and `x + a1 y + a2 = 0` meet exactly once.
    pub fn has_unique_equilibrium(&self) -> bool {
        if self.a1 == 0.0 {
            return true;
        }
        // x^3 + (s - 4) x + s a2 = 0 with s = -1/a1
        let s = -1.0 / self.a1;
        let p = s - 4.0;
        let q = s * self.a2;
        4.0 * p * p * p + 27.0 * q * q > 0.0
    }
}

/// Calcium-driven FitzHugh-Nagumo cell.
#[derive(Debug, Clone, PartialEq)]
pub struct IccParams {
    pub tau: f64,
    pub eps: f64,
    pub a1: f64,
    pub a2: f64,
    pub mu: f64,
    pub z0: f64,
    pub lambda: f64,
    pub rho: f64,
    pub x_on: f64,
    pub tau_z: f64,
    pub z_b: f64,
    /// Per-cell gains `k_i`, each in `[0.6, 1.4]`.
    pub k_cells: Vec<f64>,
}

impl IccParams {
    pub const GAIN_RANGE: (f64, f64) = (0.6, 1.4);

    /// Placeholder constants satisfying every sign constraint of the model,
    /// with unit gains.
    pub fn placeholder(n_cells: usize) -> Self {
        Self {
            tau: 1.0,
            eps: 0.01,
            a1: -0.1,
            a2: 0.5,
            mu: 0.02,
            z0: 0.1,
            lambda: 0.4,
            rho: 10.0,
            x_on: 1.0,
            tau_z: 100.0,
            z_b: 0.1,
            k_cells: vec![1.0; n_cells],
        }
    }

    /// Draws every `k_i` uniformly from [`IccParams::GAIN_RANGE`].
    pub fn with_random_gains(mut self, n_cells: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(GAIN_STREAM);
        let (lo, hi) = Self::GAIN_RANGE;
        self.k_cells = (0..n_cells).map(|_| rng.random_range(lo..=hi)).collect();
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        require(self.tau > 0.0, "tau", "tau > 0", self.tau)?;
        require(self.eps > 0.0, "eps", "eps > 0", self.eps)?;
        require(self.a1 < 0.0, "a1", "a1 < 0", self.a1)?;
        require(self.a2 > 0.0, "a2", "a2 > 0", self.a2)?;
        require(true, "mu", "mu finite", self.mu)?;
        require(self.z0 > 0.0, "z0", "z0 > 0", self.z0)?;
        require(self.lambda > 0.0, "lambda", "lambda > 0", self.lambda)?;
        require(self.rho > 0.0, "rho", "rho > 0", self.rho)?;
        require(true, "x_on", "x_on finite", self.x_on)?;
        require(self.tau_z > 0.0, "tau_z", "tau_z > 0", self.tau_z)?;
        require(self.z_b > 0.0, "z_b", "z_b > 0", self.z_b)?;
        let (lo, hi) = Self::GAIN_RANGE;
        for &k in &self.k_cells {
            require(
                (lo..=hi).contains(&k),
                "k_cells",
                "every k_i in [0.6, 1.4]",
                k,
            )?;
        }
        Ok(())
    }

    #[inline]
    fn phi_f(&self, w: f64) -> f64 {
        self.mu * w / (w + self.z0)
    }

    #[inline]
    fn phi_f_prime(&self, w: f64) -> f64 {
        let s = w + self.z0;
        self.mu * self.z0 / (s * s)
    }

    #[inline]
    fn phi_r(&self, w: f64) -> f64 {
        self.lambda * logistic(self.rho * (w - self.x_on))
    }

    #[inline]
    fn phi_r_prime(&self, w: f64) -> f64 {
        let s = logistic(self.rho * (w - self.x_on));
        self.lambda * self.rho * s * (1.0 - s)
    }

    #[inline]
    fn r(&self, w: f64) -> f64 {
        -(w - self.z_b) / self.tau_z
    }
}

/// Hindmarsh-Rose cell: `x' = l(x) + y - z + I`, `y' = c + m(x) - y`,
/// `z' = eps (k (x - x0) - z)` with `l(w) = -a w^3 + b w^2`, `m(w) = -d w^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub eps: f64,
    pub k: f64,
    pub i_ext: f64,
    pub x0: f64,
}

impl Default for HrParams {
    /// Classical square-wave bursting values.
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 3.0,
            c: 1.0,
            d: 5.0,
            eps: 0.008,
            k: 4.0,
            i_ext: 3.28,
            x0: -1.6,
        }
    }
}

impl HrParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        require(self.a > 0.0, "a", "a > 0", self.a)?;
        require(self.b > 0.0, "b", "b > 0", self.b)?;
        require(self.c > 0.0, "c", "c > 0", self.c)?;
        require(self.d > 0.0, "d", "d > 0", self.d)?;
        require(self.eps > 0.0, "eps", "eps > 0", self.eps)?;
        require(self.k > 0.0, "k", "k > 0", self.k)?;
        require(true, "i_ext", "i_ext finite", self.i_ext)?;
        require(self.x0 < 0.0, "x0", "x0 < 0", self.x0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Fn(FnParams),
    Icc(IccParams),
    Hr(HrParams),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Fn(_) => ModelKind::Fn,
            ModelParams::Icc(_) => ModelKind::Icc,
            ModelParams::Hr(_) => ModelKind::Hr,
        }
    }

    pub fn eps(&self) -> f64 {
        match self {
            ModelParams::Fn(p) => p.eps,
            ModelParams::Icc(p) => p.eps,
            ModelParams::Hr(p) => p.eps,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelParams::Fn(p) => p.validate(),
            ModelParams::Icc(p) => p.validate(),
            ModelParams::Hr(p) => p.validate(),
        }
    }
}

#[inline]
fn cubic_f(w: f64) -> f64 {
    4.0 * w - w * w * w
}

#[inline]
fn cubic_f_prime(w: f64) -> f64 {
    4.0 - 3.0 * w * w
}

/// The nonzero structure of `J`: per-cell diagonals plus scalars. `D` is
/// shared with the model and not copied.
#[derive(Debug, Clone, PartialEq)]
pub enum JacobianBlocks {
    /// `[[D + diag(f'), -I], [eps I, eps a1 I]]`
    Fn {
        f_prime: Vec<f64>,
        eps: f64,
        a1: f64,
    },
    /// `tau [[diag(f'), -I, -diag(phi_f')], [eps K D, eps a1 K, 0], [eps diag(phi_r'), 0, -(eps/tau_z) I]]`
    Icc {
        tau: f64,
        eps: f64,
        a1: f64,
        tau_z: f64,
        f_prime: Vec<f64>,
        phi_f_prime: Vec<f64>,
        phi_r_prime: Vec<f64>,
    },
    /// `[[diag(l') + D, I, -I], [diag(m'), -I, 0], [eps k I, 0, -eps I]]`
    Hr {
        l_prime: Vec<f64>,
        m_prime: Vec<f64>,
        eps: f64,
        k: f64,
    },
}

/// A coupled network of identical (up to ICC gains) cells.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    n: usize,
    params: ModelParams,
    d: DMatrix,
}

impl NetworkModel {
    /// Builds the model and the `D` matrix that matches its kind.
    pub fn new(params: ModelParams, coupling: &Coupling) -> Result<Self, ModelError> {
        params.validate()?;
        let n = coupling.n_cells();
        let d = match &params {
            ModelParams::Fn(_) => build_fn_d(coupling),
            ModelParams::Icc(p) => {
                if p.k_cells.len() != n {
                    return Err(ModelError::GainCount {
                        expected: n,
                        found: p.k_cells.len(),
                    });
                }
                build_icc_d(coupling)
            }
            ModelParams::Hr(_) => build_hr_d(coupling)?,
        };
        Ok(Self { n, params, d })
    }

    pub fn fitzhugh_nagumo(params: FnParams, coupling: &Coupling) -> Result<Self, ModelError> {
        Self::new(ModelParams::Fn(params), coupling)
    }

    pub fn calcium(params: IccParams, coupling: &Coupling) -> Result<Self, ModelError> {
        Self::new(ModelParams::Icc(params), coupling)
    }

    pub fn hindmarsh_rose(params: HrParams, coupling: &Coupling) -> Result<Self, ModelError> {
        Self::new(ModelParams::Hr(params), coupling)
    }

    pub fn kind(&self) -> ModelKind {
        self.params.kind()
    }

    pub fn n_cells(&self) -> usize {
        self.n
    }

    pub fn block_dim(&self) -> usize {
        self.kind().block_dim()
    }

    pub fn state_len(&self) -> usize {
        self.block_dim() * self.n
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn dmatrix(&self) -> &DMatrix {
        &self.d
    }

    fn check_len(&self, v: &[f64]) -> Result<(), ModelError> {
        if v.len() == self.state_len() {
            Ok(())
        } else {
            Err(ModelError::DimensionMismatch {
                expected: self.state_len(),
                found: v.len(),
            })
        }
    }

    /// Right-hand side into `out`; both slices must have [`Self::state_len`] entries.
    pub fn eval_rhs(&self, u: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        self.check_len(u)?;
        self.check_len(out)?;
        let n = self.n;
        match &self.params {
            ModelParams::Fn(p) => {
                let (x, y) = u.split_at(n);
                let (ox, oy) = out.split_at_mut(n);
                self.d.apply(x, ox);
                for i in 0..n {
                    ox[i] += cubic_f(x[i]) - y[i];
                    oy[i] = p.eps * x[i] + p.eps * (p.a1 * y[i] + p.a2);
                }
            }
            ModelParams::Icc(p) => {
                let (x, rest) = u.split_at(n);
                let (y, z) = rest.split_at(n);
                let (ox, orest) = out.split_at_mut(n);
                let (oy, oz) = orest.split_at_mut(n);
                self.d.apply(x, oy);
                let te = p.tau * p.eps;
                for i in 0..n {
                    ox[i] = p.tau * (cubic_f(x[i]) - y[i] - p.phi_f(z[i]));
                    oy[i] = te * p.k_cells[i] * (oy[i] + p.a1 * y[i] + p.a2);
                    oz[i] = te * (p.phi_r(x[i]) + p.r(z[i]));
                }
            }
            ModelParams::Hr(p) => {
                let (x, rest) = u.split_at(n);
                let (y, z) = rest.split_at(n);
                let (ox, orest) = out.split_at_mut(n);
                let (oy, oz) = orest.split_at_mut(n);
                self.d.apply(x, ox);
                for i in 0..n {
                    let xi = x[i];
                    let l = -p.a * xi * xi * xi + p.b * xi * xi;
                    let m = -p.d * xi * xi;
                    ox[i] += l + y[i] - z[i] + p.i_ext;
                    oy[i] = m - y[i] + p.c;
                    oz[i] = p.eps * p.k * xi - p.eps * z[i] - p.eps * p.k * p.x0;
                }
            }
        }
        Ok(())
    }

    pub fn rhs(&self, u: &[f64]) -> Result<Vec<f64>, ModelError> {
        let mut out = vec![0.0; self.state_len()];
        self.eval_rhs(u, &mut out)?;
        Ok(out)
    }

    /// Diagonal blocks and scalars of `J(u)`.
    pub fn jacobian(&self, u: &[f64]) -> Result<JacobianBlocks, ModelError> {
        self.check_len(u)?;
        let n = self.n;
        let x = &u[..n];
        Ok(match &self.params {
            ModelParams::Fn(p) => JacobianBlocks::Fn {
                f_prime: x.iter().map(|&w| cubic_f_prime(w)).collect(),
                eps: p.eps,
                a1: p.a1,
            },
            ModelParams::Icc(p) => {
                let z = &u[2 * n..];
                JacobianBlocks::Icc {
                    tau: p.tau,
                    eps: p.eps,
                    a1: p.a1,
                    tau_z: p.tau_z,
                    f_prime: x.iter().map(|&w| cubic_f_prime(w)).collect(),
                    phi_f_prime: z.iter().map(|&w| p.phi_f_prime(w)).collect(),
                    phi_r_prime: x.iter().map(|&w| p.phi_r_prime(w)).collect(),
                }
            }
            ModelParams::Hr(p) => JacobianBlocks::Hr {
                l_prime: x
                    .iter()
                    .map(|&w| -3.0 * p.a * w * w + 2.0 * p.b * w)
                    .collect(),
                m_prime: x.iter().map(|&w| -2.0 * p.d * w).collect(),
                eps: p.eps,
                k: p.k,
            },
        })
    }

    /// Adds `scale * J(u)` into `target`, which must be `state_len` square.
    fn add_scaled_jacobian(&self, blocks: &JacobianBlocks, scale: f64, target: &mut DenseMatrix) {
        let n = self.n;
        let dop = self.d.operator();
        match blocks {
            JacobianBlocks::Fn { f_prime, eps, a1 } => {
                for i in 0..n {
                    let row = target.row_mut(i);
                    dop.for_each_in_row(i, |j, v| row[j] += scale * v);
                    row[i] += scale * f_prime[i];
                    row[n + i] -= scale;
                    let row = target.row_mut(n + i);
                    row[i] += scale * eps;
                    row[n + i] += scale * eps * a1;
                }
            }
            JacobianBlocks::Icc {
                tau,
                eps,
                a1,
                tau_z,
                f_prime,
                phi_f_prime,
                phi_r_prime,
            } => {
                let ModelParams::Icc(p) = &self.params else {
                    unreachable!("ICC blocks on a non-ICC model")
                };
                let s = scale * tau;
                for i in 0..n {
                    let row = target.row_mut(i);
                    row[i] += s * f_prime[i];
                    row[n + i] -= s;
                    row[2 * n + i] -= s * phi_f_prime[i];
                    let row = target.row_mut(n + i);
                    let ski = s * eps * p.k_cells[i];
                    dop.for_each_in_row(i, |j, v| row[j] += ski * v);
                    row[n + i] += ski * a1;
                    let row = target.row_mut(2 * n + i);
                    row[i] += s * eps * phi_r_prime[i];
                    row[2 * n + i] -= s * eps / tau_z;
                }
            }
            JacobianBlocks::Hr {
                l_prime,
                m_prime,
                eps,
                k,
            } => {
                for i in 0..n {
                    let row = target.row_mut(i);
                    dop.for_each_in_row(i, |j, v| row[j] += scale * v);
                    row[i] += scale * l_prime[i];
                    row[n + i] += scale;
                    row[2 * n + i] -= scale;
                    let row = target.row_mut(n + i);
                    row[i] += scale * m_prime[i];
                    row[n + i] -= scale;
                    let row = target.row_mut(2 * n + i);
                    row[i] += scale * eps * k;
                    row[2 * n + i] -= scale * eps;
                }
            }
        }
    }

    /// The full Jacobian as a dense matrix.
    pub fn jacobian_dense(&self, u: &[f64]) -> Result<DenseMatrix, ModelError> {
        let blocks = self.jacobian(u)?;
        let dim = self.state_len();
        let mut j = DenseMatrix::zeros(dim, dim);
        self.add_scaled_jacobian(&blocks, 1.0, &mut j);
        Ok(j)
    }

    /// `J(u) v` computed from the blocks without assembling `J`.
    pub fn jacobian_apply(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_len(v)?;
        let blocks = self.jacobian(u)?;
        let n = self.n;
        let mut out = vec![0.0; self.state_len()];
        let v1 = &v[..n];
        let v2 = &v[n..2 * n];
        match &blocks {
            JacobianBlocks::Fn { f_prime, eps, a1 } => {
                let (o1, o2) = out.split_at_mut(n);
                self.d.apply(v1, o1);
                for i in 0..n {
                    o1[i] += f_prime[i] * v1[i] - v2[i];
                    o2[i] = eps * v1[i] + eps * a1 * v2[i];
                }
            }
            JacobianBlocks::Icc {
                tau,
                eps,
                a1,
                tau_z,
                f_prime,
                phi_f_prime,
                phi_r_prime,
            } => {
                let ModelParams::Icc(p) = &self.params else {
                    unreachable!()
                };
                let v3 = &v[2 * n..];
                let (o1, rest) = out.split_at_mut(n);
                let (o2, o3) = rest.split_at_mut(n);
                self.d.apply(v1, o2);
                for i in 0..n {
                    o1[i] = tau * (f_prime[i] * v1[i] - v2[i] - phi_f_prime[i] * v3[i]);
                    o2[i] = tau * eps * p.k_cells[i] * (o2[i] + a1 * v2[i]);
                    o3[i] = tau * eps * (phi_r_prime[i] * v1[i] - v3[i] / tau_z);
                }
            }
            JacobianBlocks::Hr {
                l_prime,
                m_prime,
                eps,
                k,
            } => {
                let v3 = &v[2 * n..];
                let (o1, rest) = out.split_at_mut(n);
                let (o2, o3) = rest.split_at_mut(n);
                self.d.apply(v1, o1);
                for i in 0..n {
                    o1[i] += l_prime[i] * v1[i] + v2[i] - v3[i];
                    o2[i] = m_prime[i] * v1[i] - v2[i];
                    o3[i] = eps * k * v1[i] - eps * v3[i];
                }
            }
        }
        Ok(out)
    }

    /// Solves `(I - h J(u)) delta = -G` by factoring the full matrix.
    pub fn full_newton_solve(
        &self,
        h: f64,
        u: &[f64],
        residual: &[f64],
    ) -> Result<Vec<f64>, SolveError> {
        let mut delta = vec![0.0; self.state_len()];
        self.full_solve_into(h, u, residual, &mut delta)?;
        Ok(delta)
    }

    fn full_solve_into(
        &self,
        h: f64,
        u: &[f64],
        residual: &[f64],
        delta: &mut [f64],
    ) -> Result<(), SolveError> {
        if !(h > 0.0) {
            return Err(SolveError::NonPositiveStep(h));
        }
        let blocks = self.jacobian(u).map_err(dim_err)?;
        let dim = self.state_len();
        let mut m = DenseMatrix::zeros(dim, dim);
        self.add_scaled_jacobian(&blocks, -h, &mut m);
        m.add_to_diagonal(1.0);
        let lu = LuFactors::factor(m)?;
        for (d, g) in delta.iter_mut().zip(residual) {
            *d = -g;
        }
        lu.solve_in_place(delta)?;
        Ok(())
    }

    /// Block-eliminated solve of `(I - h J(u)) delta = -G`; one `N x N` factorization.
    pub fn reduced_newton_solve(
        &self,
        h: f64,
        u: &[f64],
        residual: &[f64],
    ) -> Result<Vec<f64>, SolveError> {
        let mut delta = vec![0.0; self.state_len()];
        self.reduced_solve_into(h, u, residual, &mut delta)?;
        Ok(delta)
    }

    fn reduced_solve_into(
        &self,
        h: f64,
        u: &[f64],
        residual: &[f64],
        delta: &mut [f64],
    ) -> Result<(), SolveError> {
        if !(h > 0.0) {
            return Err(SolveError::NonPositiveStep(h));
        }
        self.check_len(u).map_err(dim_err)?;
        self.check_len(residual).map_err(dim_err)?;
        match &self.params {
            ModelParams::Fn(p) => self.fn_reduced(p, h, u, residual, delta),
            ModelParams::Icc(p) => self.icc_reduced(p, h, u, residual, delta),
            ModelParams::Hr(p) => self.hr_reduced(p, h, u, residual, delta),
        }
    }

    fn fn_reduced(
        &self,
        p: &FnParams,
        h: f64,
        u: &[f64],
        g: &[f64],
        delta: &mut [f64],
    ) -> Result<(), SolveError> {
        let n = self.n;
        let denom = guard("1 - h eps a1", 1.0 - h * p.eps * p.a1)?;
        let shift = p.eps * h * h / denom;
        let x = &u[..n];
        let (g1, g2) = g.split_at(n);

        let mut m = DenseMatrix::zeros(n, n);
        let dop = self.d.operator();
        for i in 0..n {
            let row = m.row_mut(i);
            dop.for_each_in_row(i, |j, v| row[j] -= h * v);
            row[i] += 1.0 - h * cubic_f_prime(x[i]) + shift;
        }
        let (d1, d2) = delta.split_at_mut(n);
        for i in 0..n {
            d1[i] = -g1[i] + h / denom * g2[i];
        }
        LuFactors::factor(m)?.solve_in_place(d1)?;
        for i in 0..n {
            d2[i] = (-g2[i] + h * p.eps * d1[i]) / denom;
        }
        Ok(())
    }

    fn icc_reduced(
        &self,
        p: &IccParams,
        h: f64,
        u: &[f64],
        g: &[f64],
        delta: &mut [f64],
    ) -> Result<(), SolveError> {
        let n = self.n;
        let ht = p.tau * h;
        let alpha = guard("1 + tau h eps / tau_z", 1.0 + ht * p.eps / p.tau_z)?;
        let x = &u[..n];
        let z = &u[2 * n..];
        let (g1, rest) = g.split_at(n);
        let (g2, g3) = rest.split_at(n);

        let phi_f: Vec<f64> = z.iter().map(|&w| p.phi_f_prime(w)).collect();
        let phi_r: Vec<f64> = x.iter().map(|&w| p.phi_r_prime(w)).collect();
        // diagonal M = I/ht - diag(f') + (ht eps / alpha) diag(phi_f') diag(phi_r')
        let mdiag: Vec<f64> = (0..n)
            .map(|i| 1.0 / ht - cubic_f_prime(x[i]) + ht * p.eps / alpha * phi_f[i] * phi_r[i])
            .collect();

        let mut a = DenseMatrix::zeros(n, n);
        let dop = self.d.operator();
        let (d1, rest) = delta.split_at_mut(n);
        let (d2, d3) = rest.split_at_mut(n);
        for i in 0..n {
            let ki = p.k_cells[i];
            let coupling = ht * p.eps * ki;
            let damp = 1.0 - ht * p.eps * p.a1 * ki;
            let row = a.row_mut(i);
            dop.for_each_in_row(i, |j, v| row[j] += coupling * v);
            row[i] += damp * mdiag[i];
            d1[i] = g2[i] + damp * (-g1[i] / ht + phi_f[i] * g3[i] / alpha);
        }
        LuFactors::factor(a)?.solve_in_place(d1)?;
        for i in 0..n {
            d3[i] = (-g3[i] + ht * p.eps * phi_r[i] * d1[i]) / alpha;
            d2[i] = -g1[i] / ht + phi_f[i] * g3[i] / alpha - mdiag[i] * d1[i];
        }
        Ok(())
    }

    fn hr_reduced(
        &self,
        p: &HrParams,
        h: f64,
        u: &[f64],
        g: &[f64],
        delta: &mut [f64],
    ) -> Result<(), SolveError> {
        let n = self.n;
        let one_h = guard("1 + h", 1.0 + h)?;
        let one_he = guard("1 + h eps", 1.0 + h * p.eps)?;
        let x = &u[..n];
        let (g1, rest) = g.split_at(n);
        let (g2, g3) = rest.split_at(n);
        let slow = h * h * p.eps * p.k / one_he;

        let mut a = DenseMatrix::zeros(n, n);
        let dop = self.d.operator();
        let (d1, rest) = delta.split_at_mut(n);
        let (d2, d3) = rest.split_at_mut(n);
        for i in 0..n {
            let xi = x[i];
            let l_prime = -3.0 * p.a * xi * xi + 2.0 * p.b * xi;
            let m_prime = -2.0 * p.d * xi;
            let row = a.row_mut(i);
            dop.for_each_in_row(i, |j, v| row[j] -= h * v);
            row[i] += 1.0 - h * l_prime - h * h / one_h * m_prime + slow;
            d1[i] = -g1[i] - h / one_h * g2[i] + h / one_he * g3[i];
        }
        LuFactors::factor(a)?.solve_in_place(d1)?;
        for i in 0..n {
            let m_prime = -2.0 * p.d * x[i];
            d2[i] = (-g2[i] + h * m_prime * d1[i]) / one_h;
            d3[i] = (-g3[i] + h * p.eps * p.k * d1[i]) / one_he;
        }
        Ok(())
    }
}

fn guard(what: &'static str, value: f64) -> Result<f64, SolveError> {
    if value > DENOMINATOR_GUARD {
        Ok(value)
    } else {
        Err(SolveError::GuardViolated { what, value })
    }
}

fn dim_err(e: ModelError) -> SolveError {
    match e {
        ModelError::DimensionMismatch { expected, found } => {
            crate::linalg::LinalgError::DimensionMismatch { expected, found }.into()
        }
        other => unreachable!("unexpected model error {other}"),
    }
}

impl ImplicitSystem for NetworkModel {
    fn dim(&self) -> usize {
        self.state_len()
    }

    fn rhs(&self, _t: f64, u: &[f64], out: &mut [f64]) {
        self.eval_rhs(u, out)
            .expect("state length checked by the integrator");
    }

    fn newton_solve(
        &self,
        strategy: Strategy,
        _t: f64,
        h_eff: f64,
        u: &[f64],
        residual: &[f64],
        delta: &mut [f64],
    ) -> Result<(), SolveError> {
        match strategy {
            Strategy::Standard => self.full_solve_into(h_eff, u, residual, delta),
            Strategy::Economical => self.reduced_solve_into(h_eff, u, residual, delta),
        }
    }
}

/// Equilibrium `x` of a single uncoupled FN cell when it is unique.
pub fn fn_equilibrium(p: &FnParams) -> Option<f64> {
    if !p.has_unique_equilibrium() {
        return None;
    }
    // Newton on x + a1 f(x) + a2 = 0
    let mut x = 0.0_f64;
    for _ in 0..200 {
        let fx = x + p.a1 * cubic_f(x) + p.a2;
        let dfx = 1.0 + p.a1 * cubic_f_prime(x);
        if dfx == 0.0 {
            x += 1e-3;
            continue;
        }
        let step = fx / dfx;
        x -= step;
        if step.abs() <= 1e-14 * (1.0 + x.abs()) {
            return Some(x);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectivity::{gen_coupling, CouplingKind, CouplingSpec, WeightSign};
    use crate::linalg::norm_inf;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uncoupled_fn(params: FnParams) -> NetworkModel {
        NetworkModel::fitzhugh_nagumo(params, &Coupling::uncoupled(1)).unwrap()
    }

    fn random_model(kind: ModelKind, n: usize, seed: u64) -> NetworkModel {
        let spec = CouplingSpec::new(CouplingKind::Random, n)
            .with_density(0.5)
            .with_seed(seed);
        match kind {
            ModelKind::Fn => {
                NetworkModel::fitzhugh_nagumo(FnParams::default(), &gen_coupling(&spec).unwrap())
                    .unwrap()
            }
            ModelKind::Icc => NetworkModel::calcium(
                IccParams::placeholder(n).with_random_gains(n, seed),
                &gen_coupling(&spec).unwrap(),
            )
            .unwrap(),
            ModelKind::Hr => NetworkModel::hindmarsh_rose(
                HrParams::default(),
                &gen_coupling(&spec.with_sign(WeightSign::NonNegative)).unwrap(),
            )
            .unwrap(),
        }
    }

    fn random_state(m: &NetworkModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = m.n_cells();
        let mut u: Vec<f64> = (0..m.state_len())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        if m.kind() == ModelKind::Icc {
            // calcium stays positive; keep clear of the phi_f pole at -z0
            for z in &mut u[2 * n..] {
                *z = rng.random_range(0.0..1.0);
            }
        }
        u
    }

    fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
        let diff = a
            .iter()
            .zip(b)
            .fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()));
        diff / norm_inf(b).max(1e-300)
    }

    #[test]
    fn fn_rhs_examples() {
        let m = uncoupled_fn(FnParams {
            eps: 0.05,
            a1: -0.5,
            a2: 0.0,
        });
        assert_eq!(m.rhs(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let m = uncoupled_fn(FnParams {
            eps: 0.05,
            a1: -0.5,
            a2: 0.7,
        });
        let out = m.rhs(&[1.0, 0.0]).unwrap();
        assert_eq!(out[0], 3.0);
        assert!((out[1] - 0.085).abs() < 1e-15);
        assert!(matches!(
            m.rhs(&[1.0]),
            Err(ModelError::DimensionMismatch {
                expected: 2,
                found: 1
            })
        ));
    }

    #[test]
    fn uniform_state_cancels_fn_and_hr_coupling() {
        for kind in [ModelKind::Fn, ModelKind::Hr] {
            let m = random_model(kind, 12, 4);
            let n = m.n_cells();
            let mut u = vec![0.3; m.state_len()];
            u[n..].iter_mut().for_each(|v| *v = -0.7);
            let coupled = m.rhs(&u).unwrap();
            let params = m.params().clone();
            let lone = NetworkModel::new(params, &Coupling::uncoupled(n)).unwrap();
            let bare = lone.rhs(&u).unwrap();
            assert!(rel_diff(&coupled, &bare) <= 1e-12, "{kind}");
        }
        let m = random_model(ModelKind::Icc, 12, 4);
        let e = vec![1.7; 12];
        let de = m.dmatrix().matvec(&e).unwrap();
        assert!(de.iter().all(|v| (v - 1.7).abs() <= 1e-12));
    }

    #[test]
    fn icc_rhs_examples() {
        let n = 4;
        let p = IccParams::placeholder(n);
        let m = NetworkModel::calcium(p.clone(), &Coupling::uncoupled(n)).unwrap();
        let mut u = vec![0.0; 3 * n];
        // z = z_b => r(z) = 0, x = x_on => phi_r = lambda / 2
        for i in 0..n {
            u[i] = p.x_on;
            u[2 * n + i] = p.z_b;
        }
        let out = m.rhs(&u).unwrap();
        for i in 0..n {
            let expect = p.tau * p.eps * p.lambda / 2.0;
            assert!((out[2 * n + i] - expect).abs() < 1e-15);
        }
        // z = 0 => phi_f = 0
        let u0 = vec![0.0; 3 * n];
        let out = m.rhs(&u0).unwrap();
        assert!(out[..n].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hr_rhs_examples() {
        let m = NetworkModel::hindmarsh_rose(HrParams::default(), &Coupling::uncoupled(1)).unwrap();
        let out = m.rhs(&[0.0, 0.0, 0.0]).unwrap();
        assert!((out[0] - 3.28).abs() < 1e-15);
        assert!((out[1] - 1.0).abs() < 1e-15);
        assert!((out[2] - 0.0512).abs() < 1e-15);
        // z on its nullcline
        let p = HrParams::default();
        let x = 0.4;
        let out = m.rhs(&[x, 0.2, p.k * (x - p.x0)]).unwrap();
        assert!(out[2].abs() < 1e-15);
    }

    #[test]
    fn jacobian_closed_forms() {
        let m = random_model(ModelKind::Fn, 3, 1);
        let JacobianBlocks::Fn { f_prime, .. } = m.jacobian(&[0.0; 6]).unwrap() else {
            panic!()
        };
        assert_eq!(f_prime, vec![4.0; 3]);
        let m = random_model(ModelKind::Icc, 3, 1);
        let p = IccParams::placeholder(3);
        let JacobianBlocks::Icc { phi_f_prime, .. } = m.jacobian(&[0.0; 9]).unwrap() else {
            panic!()
        };
        for v in phi_f_prime {
            assert!((v - p.mu / p.z0).abs() < 1e-15);
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let delta = 1e-6;
        for kind in [ModelKind::Fn, ModelKind::Icc, ModelKind::Hr] {
            let m = random_model(kind, 6, 2);
            for _ in 0..20 {
                let u = random_state(&m, &mut rng);
                let v: Vec<f64> = (0..u.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let up: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + delta * b).collect();
                let um: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - delta * b).collect();
                let fp = m.rhs(&up).unwrap();
                let fm = m.rhs(&um).unwrap();
                let fd: Vec<f64> = fp
                    .iter()
                    .zip(&fm)
                    .map(|(a, b)| (a - b) / (2.0 * delta))
                    .collect();
                let jv = m.jacobian_apply(&u, &v).unwrap();
                assert!(rel_diff(&fd, &jv) <= 1e-5, "{kind}: {}", rel_diff(&fd, &jv));
                let jd = m.jacobian_dense(&u).unwrap().matvec(&v).unwrap();
                assert!(rel_diff(&jd, &jv) <= 1e-13);
            }
        }
    }

    #[test]
    fn zero_residual_gives_zero_increment() {
        for kind in [ModelKind::Fn, ModelKind::Icc, ModelKind::Hr] {
            let m = random_model(kind, 5, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let u = random_state(&m, &mut rng);
            let g = vec![0.0; m.state_len()];
            assert_eq!(m.full_newton_solve(0.1, &u, &g).unwrap(), g);
            assert_eq!(m.reduced_newton_solve(0.1, &u, &g).unwrap(), g);
        }
    }

    #[test]
    fn tiny_step_returns_negated_residual() {
        for kind in [ModelKind::Fn, ModelKind::Icc, ModelKind::Hr] {
            let m = random_model(kind, 5, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let u = random_state(&m, &mut rng);
            let g: Vec<f64> = (0..m.state_len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            let full = m.full_newton_solve(1e-10, &u, &g).unwrap();
            assert!(rel_diff(&full, &neg) < 1e-8);
            if kind != ModelKind::Icc {
                // the ICC elimination divides by tau h, which loses digits as h -> 0
                let red = m.reduced_newton_solve(1e-10, &u, &g).unwrap();
                assert!(rel_diff(&red, &neg) < 1e-8, "{kind}");
            }
        }
    }

    #[test]
    fn scalar_fn_reduced_example() {
        let m = uncoupled_fn(FnParams {
            eps: 0.0001,
            a1: -0.5,
            a2: 0.7,
        });
        // eps -> 0 limit: M = 1 - h f'(0) = -3 at h = 1
        let d = m
            .reduced_newton_solve(1.0, &[0.0, 0.0], &[3.0, 0.0])
            .unwrap();
        assert!((d[0] - 1.0).abs() < 1e-3);
        assert!(d[1].abs() < 1e-3);
        let exact = NetworkModel {
            n: 1,
            params: ModelParams::Fn(FnParams {
                eps: 0.0,
                a1: -0.5,
                a2: 0.7,
            }),
            d: build_fn_d(&Coupling::uncoupled(1)),
        };
        let d = exact
            .reduced_newton_solve(1.0, &[0.0, 0.0], &[3.0, 0.0])
            .unwrap();
        assert_eq!(d, vec![1.0, 0.0]);
    }

    #[test]
    fn fn_guard_rejects_large_steps() {
        let m = uncoupled_fn(FnParams {
            eps: 0.5,
            a1: 1.0,
            a2: 0.0,
        });
        let err = m
            .reduced_newton_solve(2.0, &[0.0, 0.0], &[1.0, 1.0])
            .unwrap_err();
        assert!(matches!(err, SolveError::GuardViolated { .. }));
        assert!(matches!(
            m.full_newton_solve(0.0, &[0.0, 0.0], &[1.0, 1.0]),
            Err(SolveError::NonPositiveStep(_))
        ));
    }

    #[test]
    fn icc_decouples_without_eps() {
        let n = 4;
        let mut p = IccParams::placeholder(n);
        p.eps = 0.0;
        let c = gen_coupling(&CouplingSpec::new(CouplingKind::Random, n).with_seed(5)).unwrap();
        let m = NetworkModel {
            n,
            params: ModelParams::Icc(p.clone()),
            d: build_icc_d(&c),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = random_state(&m, &mut rng);
        let g: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = 0.05;
        let d = m.reduced_newton_solve(h, &u, &g).unwrap();
        for i in 0..n {
            assert!((d[2 * n + i] + g[2 * n + i]).abs() < 1e-14);
            assert!((d[n + i] + g[n + i]).abs() < 1e-12);
            let x = u[i];
            let phi_fp = p.phi_f_prime(u[2 * n + i]);
            // first row with delta_2 = -G2, delta_3 = -G3
            let d1 = (-g[i] + p.tau * h * g[n + i] + p.tau * h * phi_fp * g[2 * n + i])
                / (1.0 - p.tau * h * cubic_f_prime(x));
            assert!((d[i] - d1).abs() < 1e-10 * (1.0 + d1.abs()));
        }
    }

    #[test]
    fn parameter_validation() {
        let bad = FnParams {
            eps: -1.0,
            ..FnParams::default()
        };
        let err = bad.validate().unwrap_err();
        assert!(format!("{err}").contains("eps > 0"));
        let mut icc = IccParams::placeholder(2);
        icc.k_cells[1] = 1.5;
        assert!(icc.validate().is_err());
        let icc = IccParams::placeholder(3);
        assert!(matches!(
            NetworkModel::calcium(icc, &Coupling::uncoupled(2)),
            Err(ModelError::GainCount { .. })
        ));
        let hr = HrParams {
            x0: 1.0,
            ..HrParams::default()
        };
        assert!(hr.validate().is_err());
        let gains = IccParams::placeholder(50).with_random_gains(50, 1).k_cells;
        assert!(gains.iter().all(|k| (0.6..=1.4).contains(k)));
        assert_ne!(gains[0], gains[1]);
    }

    #[test]
    fn fn_equilibria() {
        let p = FnParams::default();
        assert!(p.has_unique_equilibrium());
        let x = fn_equilibrium(&p).unwrap();
        // x^3 - 2x + 1.4 = 0, left of the fold at -2/sqrt(3)
        assert!((x * x * x - 2.0 * x + 1.4).abs() < 1e-12);
        assert!(cubic_f_prime(x) < 0.0);
        let osc = FnParams::relaxation_oscillator();
        assert!(osc.has_unique_equilibrium());
        assert!(cubic_f_prime(fn_equilibrium(&osc).unwrap()) > 0.0);
        assert!(!FnParams {
            eps: 0.05,
            a1: -0.5,
            a2: 0.1
        }
        .has_unique_equilibrium());
        assert_eq!(
            fn_equilibrium(&FnParams {
                eps: 0.05,
                a1: -0.5,
                a2: 0.1
            }),
            None
        );
    }

    fn check_equivalence(kind: ModelKind, n: usize, seed: u64) -> f64 {
        let m = random_model(kind, n, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let u = random_state(&m, &mut rng);
        let g: Vec<f64> = (0..m.state_len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let h = rng.random_range(1e-3..0.2);
        let full = m.full_newton_solve(h, &u, &g).unwrap();
        let red = m.reduced_newton_solve(h, &u, &g).unwrap();
        rel_diff(&red, &full)
    }

    #[test]
    fn reduced_solves_match_full_solve() {
        for kind in [ModelKind::Fn, ModelKind::Icc, ModelKind::Hr] {
            for seed in 0..10 {
                let d = check_equivalence(kind, 20, seed);
                assert!(d <= 1e-10, "{kind} seed {seed}: {d}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn reduced_solve_is_linear_in_residual(kind in 0usize..3, seed in 0u64..1000, alpha in -5.0f64..5.0) {
            let kind = [ModelKind::Fn, ModelKind::Icc, ModelKind::Hr][kind];
            let m = random_model(kind, 8, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_state(&m, &mut rng);
            let g: Vec<f64> = (0..m.state_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let scaled: Vec<f64> = g.iter().map(|v| alpha * v).collect();
            let base = m.reduced_newton_solve(0.05, &u, &g).unwrap();
            let lin = m.reduced_newton_solve(0.05, &u, &scaled).unwrap();
            let expect: Vec<f64> = base.iter().map(|v| alpha * v).collect();
            let scale = norm_inf(&expect).max(1e-12);
            let diff = lin.iter().zip(&expect).fold(0.0_f64, |mx, (p, q)| mx.max((p - q).abs()));
            prop_assert!(diff <= 1e-12 * scale.max(1.0));
        }

        #[test]
        fn reduced_solve_equivalence_random_sizes(kind in 0usize..3, n in 2usize..30, seed in 0u64..1000) {
            let kind = [ModelKind::Fn, ModelKind::Icc, ModelKind::Hr][kind];
            prop_assert!(check_equivalence(kind, n, seed) <= 1e-9);
        }
    }
}
