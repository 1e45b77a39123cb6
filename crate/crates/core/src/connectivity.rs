//! Coupling matrices and the per-model `D` matrices built from them.
//!
//! A [`Coupling`] is a symmetric, zero-diagonal weight matrix describing an
//! undirected network. Each model folds its pairwise coupling terms into a
//! single product `D x`:
//!
//! | model | `c_i`                 | `d_ij`                          | `D e` |
//! |-------|-----------------------|---------------------------------|-------|
//! | FN    | `(1/N) sum_j w_ij`    | `c_i delta_ij - w_ij / N`       | `0`   |
//! | ICC   | `(2/N) sum_j w_ij`    | `(1 + c_i) delta_ij - 2 w_ij/N` | `e`   |
//! | HR    | `sum_j w_ij`          | `c_i delta_ij - w_ij`           | `0`   |

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{DenseMatrix, LinearOperator, SparseMatrix};

/// Random stream used for coupling weights.
const COUPLING_STREAM: u64 = 1;

/// Density of the `middle` coupling kind.
pub const MIDDLE_DENSITY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConnectivityError {
    #[error("density must lie in (0, 1], got {0}")]
    InvalidDensity(f64),
    #[error("network must have at least one cell, got {0}")]
    InvalidSize(usize),
    #[error("invalid weight {weight} for {kind} coupling: {reason}")]
    InvalidWeight {
        kind: CouplingKind,
        weight: f64,
        reason: &'static str,
    },
    #[error("cluster size {cluster} must lie in 1..{n}")]
    InvalidClusterSize { cluster: usize, n: usize },
    #[error("coupling weight ({row}, {col}) = {value} is negative")]
    NegativeWeight { row: usize, col: usize, value: f64 },
    #[error("coupling matrix is not symmetric with zero diagonal at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Structure of a generated coupling matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CouplingKind {
    /// Nearest-neighbour ring.
    Lattice,
    /// Random symmetric pattern with half of the off-diagonal entries set.
    Middle,
    /// Full matrix with `w_ij = |i - j|^{-2}`.
    DenseInverseSquare,
    /// Random symmetric pattern with a prescribed density.
    Random,
    /// Two clusters, positive weights inside a cluster and negative across.
    TwoCluster,
}

impl CouplingKind {
    pub const ALL: [CouplingKind; 5] = [
        CouplingKind::Lattice,
        CouplingKind::Middle,
        CouplingKind::DenseInverseSquare,
        CouplingKind::Random,
        CouplingKind::TwoCluster,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CouplingKind::Lattice => "lattice",
            CouplingKind::Middle => "middle",
            CouplingKind::DenseInverseSquare => "dense_inverse_square",
            CouplingKind::Random => "random",
            CouplingKind::TwoCluster => "two_cluster",
        }
    }
}

impl fmt::Display for CouplingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CouplingKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        CouplingKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .or(match s {
                "sparse" => Some(CouplingKind::Lattice),
                "dense" => Some(CouplingKind::DenseInverseSquare),
                _ => None,
            })
            .ok_or_else(|| format!("unknown coupling kind `{s}`"))
    }
}

/// Range of the random weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSign {
    /// Uniform in `[-1, 1]` (FN and ICC networks).
    Signed,
    /// Uniform in `[0, 1]` (HR networks).
    NonNegative,
}

impl WeightSign {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightSign::Signed => "signed",
            WeightSign::NonNegative => "non_negative",
        }
    }
}

impl fmt::Display for WeightSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightSign {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "signed" => Ok(WeightSign::Signed),
            "non_negative" => Ok(WeightSign::NonNegative),
            other => Err(format!("unknown weight sign `{other}`")),
        }
    }
}

/// Everything needed to regenerate a coupling matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingSpec {
    pub kind: CouplingKind,
    pub n_cells: usize,
    pub density: f64,
    pub weight: f64,
    pub seed: u64,
    pub sign: WeightSign,
    /// Size of the first cluster for [`CouplingKind::TwoCluster`].
    pub cluster_size: usize,
}

impl CouplingSpec {
    pub fn new(kind: CouplingKind, n_cells: usize) -> Self {
        Self {
            kind,
            n_cells,
            density: MIDDLE_DENSITY,
            weight: 1.0,
            seed: 0,
            sign: WeightSign::Signed,
            cluster_size: n_cells / 2,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_density(mut self, density: f64) -> Self {
        self.density = density;
        self
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_sign(mut self, sign: WeightSign) -> Self {
        self.sign = sign;
        self
    }

    pub fn with_cluster_size(mut self, cluster_size: usize) -> Self {
        self.cluster_size = cluster_size;
        self
    }

    /// Checks everything [`gen_coupling`] needs before building the matrix.
    pub fn validate(&self) -> Result<(), ConnectivityError> {
        let n = self.n_cells;
        if n == 0 {
            return Err(ConnectivityError::InvalidSize(n));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(ConnectivityError::InvalidDensity(self.density));
        }
        let bad_weight = |reason| ConnectivityError::InvalidWeight {
            kind: self.kind,
            weight: self.weight,
            reason,
        };
        if !self.weight.is_finite() {
            return Err(bad_weight("weight must be finite"));
        }
        match self.sign {
            WeightSign::Signed if self.weight.abs() > 1.0 => {
                return Err(bad_weight("signed couplings need |weight| <= 1"))
            }
            WeightSign::NonNegative if self.weight < 0.0 => {
                return Err(bad_weight("non-negative couplings need weight >= 0"))
            }
            _ => {}
        }
        if self.kind == CouplingKind::TwoCluster {
            if self.sign == WeightSign::NonNegative {
                return Err(bad_weight("two-cluster coupling has negative entries"));
            }
            let k = self.cluster_size;
            if k == 0 || k >= n {
                return Err(ConnectivityError::InvalidClusterSize { cluster: k, n });
            }
        }
        Ok(())
    }
}

/// Symmetric zero-diagonal connectivity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    kind: CouplingKind,
    weights: DenseMatrix,
}

impl Coupling {
    /// Wraps an explicit weight matrix after checking symmetry and the diagonal.
    pub fn from_weights(
        kind: CouplingKind,
        weights: DenseMatrix,
    ) -> Result<Self, ConnectivityError> {
        let n = weights.rows();
        if n == 0 {
            return Err(ConnectivityError::InvalidSize(0));
        }
        if !weights.is_square() {
            return Err(ConnectivityError::NotSymmetric { row: 0, col: 0 });
        }
        for i in 0..n {
            if weights[(i, i)] != 0.0 {
                return Err(ConnectivityError::NotSymmetric { row: i, col: i });
            }
            for j in i + 1..n {
                if weights[(i, j)] != weights[(j, i)] {
                    return Err(ConnectivityError::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self { kind, weights })
    }

    /// A network without any connections.
    pub fn uncoupled(n_cells: usize) -> Self {
        Self {
            kind: CouplingKind::Lattice,
            weights: DenseMatrix::zeros(n_cells, n_cells),
        }
    }

    pub fn kind(&self) -> CouplingKind {
        self.kind
    }

    pub fn n_cells(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn nnz(&self) -> usize {
        self.weights
            .as_slice()
            .iter()
            .filter(|v| **v != 0.0)
            .count()
    }

    /// Plain-text `row col value` triplets (0-based), one nonzero per line,
    /// preceded by `# n_cells` and `# kind` header lines.
    pub fn to_triplets(&self) -> String {
        let n = self.n_cells();
        let mut out = String::new();
        let _ = writeln!(out, "# n_cells {n}");
        let _ = writeln!(out, "# kind {}", self.kind);
        for i in 0..n {
            for (j, v) in self.weights.row(i).iter().enumerate() {
                if *v != 0.0 {
                    let _ = writeln!(out, "{i} {j} {v:?}");
                }
            }
        }
        out
    }

    /// Parses the format written by [`Coupling::to_triplets`].
    pub fn from_triplets(text: &str) -> Result<Self, ConnectivityError> {
        let mut n_cells = None;
        let mut kind = None;
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let parse_err = |message: String| ConnectivityError::Parse {
                line: line_no,
                message,
            };
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut parts = rest.split_whitespace();
                match (parts.next(), parts.next()) {
                    (Some("n_cells"), Some(v)) => {
                        n_cells = Some(v.parse::<usize>().map_err(|e| parse_err(format!("{e}")))?)
                    }
                    (Some("kind"), Some(v)) => kind = Some(v.parse().map_err(parse_err)?),
                    _ => {}
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(parse_err(format!("expected `row col value`, got `{line}`")));
            }
            let i: usize = fields[0].parse().map_err(|e| parse_err(format!("{e}")))?;
            let j: usize = fields[1].parse().map_err(|e| parse_err(format!("{e}")))?;
            let v: f64 = fields[2].parse().map_err(|e| parse_err(format!("{e}")))?;
            entries.push((line_no, i, j, v));
        }
        let n = n_cells.ok_or(ConnectivityError::Parse {
            line: 0,
            message: "missing `# n_cells` header".into(),
        })?;
        let mut w = DenseMatrix::zeros(n, n);
        for (line, i, j, v) in entries {
            if i >= n || j >= n {
                return Err(ConnectivityError::Parse {
                    line,
                    message: format!("index ({i}, {j}) outside a {n}-cell network"),
                });
            }
            w[(i, j)] = v;
        }
        Coupling::from_weights(kind.unwrap_or(CouplingKind::Random), w)
    }
}

/// Generates a coupling matrix; deterministic in `spec`.
pub fn gen_coupling(spec: &CouplingSpec) -> Result<Coupling, ConnectivityError> {
    spec.validate()?;
    let n = spec.n_cells;
    let mut w = DenseMatrix::zeros(n, n);
    let set = |w: &mut DenseMatrix, i: usize, j: usize, v: f64| {
        w[(i, j)] = v;
        w[(j, i)] = v;
    };
    match spec.kind {
        CouplingKind::Lattice => {
            if n > 1 {
                for i in 0..n {
                    set(&mut w, i, (i + 1) % n, spec.weight);
                }
            }
        }
        CouplingKind::DenseInverseSquare => {
            for i in 0..n {
                for j in i + 1..n {
                    let d = (j - i) as f64;
                    set(&mut w, i, j, spec.weight / (d * d));
                }
            }
        }
        CouplingKind::Middle | CouplingKind::Random => {
            let density = if spec.kind == CouplingKind::Middle {
                MIDDLE_DENSITY
            } else {
                spec.density
            };
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(COUPLING_STREAM);
            for i in 0..n {
                for j in i + 1..n {
                    // draw both numbers for every pair so the pattern and the
                    // values do not shift when the density changes
                    let keep: f64 = rng.random();
                    let u: f64 = rng.random();
                    if keep < density {
                        let v = match spec.sign {
                            WeightSign::Signed => 2.0 * u - 1.0,
                            WeightSign::NonNegative => u,
                        };
                        set(&mut w, i, j, v);
                    }
                }
            }
        }
        CouplingKind::TwoCluster => {
            let k = spec.cluster_size;
            for i in 0..n {
                for j in i + 1..n {
                    let same = (i < k) == (j < k);
                    set(&mut w, i, j, if same { spec.weight } else { -spec.weight });
                }
            }
        }
    }
    Ok(Coupling {
        kind: spec.kind,
        weights: w,
    })
}

/// Storage for a `D` matrix: sparse when most entries vanish.
#[derive(Debug, Clone, PartialEq)]
pub enum CouplingOperator {
    Dense(DenseMatrix),
    Sparse(SparseMatrix),
}

impl CouplingOperator {
    fn from_dense(m: DenseMatrix) -> Self {
        let n = m.rows();
        let nnz = m.as_slice().iter().filter(|v| **v != 0.0).count();
        if nnz * 4 <= n * n {
            CouplingOperator::Sparse(SparseMatrix::from_dense(&m, 0.0))
        } else {
            CouplingOperator::Dense(m)
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, CouplingOperator::Sparse(_))
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            CouplingOperator::Dense(m) => m.clone(),
            CouplingOperator::Sparse(s) => s.to_dense(),
        }
    }

    /// Calls `f(col, value)` for every stored entry of row `i`.
    #[inline]
    pub fn for_each_in_row(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        match self {
            CouplingOperator::Dense(m) => {
                for (j, &v) in m.row(i).iter().enumerate() {
                    f(j, v);
                }
            }
            CouplingOperator::Sparse(s) => {
                let (idx, vals) = s.row(i);
                for (&j, &v) in idx.iter().zip(vals) {
                    f(j, v);
                }
            }
        }
    }
}

impl LinearOperator for CouplingOperator {
    fn nrows(&self) -> usize {
        match self {
            CouplingOperator::Dense(m) => m.rows(),
            CouplingOperator::Sparse(s) => s.rows(),
        }
    }

    fn ncols(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        match self {
            CouplingOperator::Dense(m) => m.apply(v, out),
            CouplingOperator::Sparse(s) => s.apply(v, out),
        }
    }
}

/// The matrix `D` of a network model together with its `c_i` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DMatrix {
    op: CouplingOperator,
    row_sums: Vec<f64>,
}

impl DMatrix {
    pub fn n_cells(&self) -> usize {
        self.row_sums.len()
    }

    pub fn operator(&self) -> &CouplingOperator {
        &self.op
    }

    /// The `c_i` values of the defining formula.
    pub fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }

    pub fn to_dense(&self) -> DenseMatrix {
        self.op.to_dense()
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        self.op.apply(v, out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>, crate::linalg::LinalgError> {
        let mut out = vec![0.0; self.n_cells()];
        self.op.try_apply(v, &mut out)?;
        Ok(out)
    }
}

fn build_d(c: &Coupling, c_scale: f64, diag_offset: f64, offdiag_scale: f64) -> DMatrix {
    let n = c.n_cells();
    let w = c.weights();
    let mut d = DenseMatrix::zeros(n, n);
    let mut row_sums = vec![0.0; n];
    for i in 0..n {
        let ci = c_scale * w.row(i).iter().sum::<f64>();
        row_sums[i] = ci;
        for (j, &wij) in w.row(i).iter().enumerate() {
            d[(i, j)] = -offdiag_scale * wij;
        }
        d[(i, i)] = diag_offset + ci;
    }
    DMatrix {
        op: CouplingOperator::from_dense(d),
        row_sums,
    }
}

/// `d_ij = c_i delta_ij - w_ij / N` with `c_i = (1/N) sum_j w_ij`.
pub fn build_fn_d(c: &Coupling) -> DMatrix {
    let inv_n = 1.0 / c.n_cells() as f64;
    build_d(c, inv_n, 0.0, inv_n)
}

/// `d_ij = (1 + c_i) delta_ij - 2 w_ij / N` with `c_i = (2/N) sum_j w_ij`.
pub fn build_icc_d(c: &Coupling) -> DMatrix {
    let s = 2.0 / c.n_cells() as f64;
    build_d(c, s, 1.0, s)
}

/// `d_ij = c_i delta_ij - w_ij` with `c_i = sum_j w_ij`; weights must be non-negative.
pub fn build_hr_d(c: &Coupling) -> Result<DMatrix, ConnectivityError> {
    let w = c.weights();
    for i in 0..c.n_cells() {
        if let Some((j, &v)) = w.row(i).iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(ConnectivityError::NegativeWeight {
                row: i,
                col: j,
                value: v,
            });
        }
    }
    Ok(build_d(c, 1.0, 0.0, 1.0))
}
