//! Butcher tableaux for the ESDIRK family and their self-checks.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use thiserror::Error;

use crate::math::sqrt;

/// Tolerance for order-condition residuals.
pub const ORDER_TOL: f64 = 1e-12;
/// Point on the negative real axis used as the L-stability proxy.
pub const STIFF_PROBE: f64 = -1e8;
/// Largest accepted `|R(STIFF_PROBE)|`.
pub const STIFF_BOUND: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TableauError {
    #[error("no ESDIRK tableau of order {0}; supported orders are 2, 3 and 4")]
    UnsupportedOrder(usize),
    #[error("I - zA is singular at stage {stage}")]
    SingularMatrix { stage: usize },
}

/// Stage matrix `A` (row-major, lower triangular), weights `b`, embedded
/// weights `b_hat` and abscissae `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    pub name: &'static str,
    pub stages: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub b_hat: Vec<f64>,
    pub c: Vec<f64>,
    pub order: usize,
    pub embedded_order: usize,
}

impl ButcherTableau {
    fn from_rows(
        name: &'static str,
        rows: &[&[f64]],
        b_hat: &[f64],
        order: usize,
        embedded_order: usize,
    ) -> Self {
        let s = rows.len();
        let mut a = vec![0.0; s * s];
        for (i, row) in rows.iter().enumerate() {
            a[i * s..i * s + row.len()].copy_from_slice(row);
        }
        let b = a[(s - 1) * s..].to_vec();
        let c = (0..s).map(|i| a[i * s..(i + 1) * s].iter().sum()).collect();
        Self {
            name,
            stages: s,
            a,
            b,
            b_hat: b_hat.to_vec(),
            c,
            order,
            embedded_order,
        }
    }

    #[inline]
    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.stages + j]
    }

    /// The diagonal value shared by the implicit stages.
    pub fn gamma(&self) -> f64 {
        self.a(self.stages - 1, self.stages - 1)
    }

    /// Order that governs the local error estimate (`min(p, p_hat)`).
    pub fn estimator_order(&self) -> usize {
        self.order.min(self.embedded_order)
    }

    /// Backward Euler as the one-stage tableau `A = [[1]]`, `b = [1]`. It has
    /// no explicit first stage, so it is only used as a validation fixture.
    pub fn backward_euler() -> Self {
        Self {
            name: "backward Euler",
            stages: 1,
            a: vec![1.0],
            b: vec![1.0],
            b_hat: vec![1.0],
            c: vec![1.0],
            order: 1,
            embedded_order: 1,
        }
    }

    /// Backward Euler written with an explicit first stage so it shares the
    /// ESDIRK stepper. The embedded trapezoidal weights give the estimate
    /// `h (f(u_{n+1}) - f(u_n)) / 2`.
    pub fn implicit_euler() -> Self {
        Self::from_rows("implicit Euler", &[&[0.0], &[0.0, 1.0]], &[0.5, 0.5], 1, 2)
    }

    /// ESDIRK2(1)3L[2]SA.
    pub fn esdirk2() -> Self {
        let r2 = sqrt(2.0);
        let g = (2.0 - r2) / 2.0;
        let third = 1.0 / 3.0;
        Self::from_rows(
            "ESDIRK2(1)3L[2]SA",
            &[&[0.0], &[g, g], &[r2 / 4.0, r2 / 4.0, g]],
            &[third, third, third],
            2,
            1,
        )
    }

    /// ESDIRK3(2)4L[2]SA.
    pub fn esdirk3() -> Self {
        let g = 1767732205903.0 / 4055673282236.0;
        Self::from_rows(
            "ESDIRK3(2)4L[2]SA",
            &[
                &[0.0],
                &[g, g],
                &[
                    2746238789719.0 / 10658868560708.0,
                    -640167445237.0 / 6845629431997.0,
                    g,
                ],
                &[
                    1471266399579.0 / 7840856788654.0,
                    -4482444167858.0 / 7529755066697.0,
                    11266239266428.0 / 11593286722821.0,
                    g,
                ],
            ],
            &[
                2756255671327.0 / 12835298489170.0,
                -10771552573575.0 / 22201958757719.0,
                9247589265047.0 / 10645013368117.0,
                2193209047091.0 / 5459859503100.0,
            ],
            3,
            2,
        )
    }

    /// ESDIRK4(3)6L[2]SA.
    pub fn esdirk4() -> Self {
        let g = 0.25;
        Self::from_rows(
            "ESDIRK4(3)6L[2]SA",
            &[
                &[0.0],
                &[g, g],
                &[8611.0 / 62500.0, -1743.0 / 31250.0, g],
                &[
                    5012029.0 / 34652500.0,
                    -654441.0 / 2922500.0,
                    174375.0 / 388108.0,
                    g,
                ],
                &[
                    15267082809.0 / 155376265600.0,
                    -71443401.0 / 120774400.0,
                    730878875.0 / 902184768.0,
                    2285395.0 / 8070912.0,
                    g,
                ],
                &[
                    82889.0 / 524892.0,
                    0.0,
                    15625.0 / 83664.0,
                    69875.0 / 102672.0,
                    -2260.0 / 8211.0,
                    g,
                ],
            ],
            &[
                4586570599.0 / 29645900160.0,
                0.0,
                178811875.0 / 945068544.0,
                814220225.0 / 1159782912.0,
                -3700637.0 / 11593932.0,
                61727.0 / 225920.0,
            ],
            4,
            3,
        )
    }
}

/// The ESDIRK tableau of the given order.
pub fn make_tableau(order: usize) -> Result<ButcherTableau, TableauError> {
    match order {
        2 => Ok(ButcherTableau::esdirk2()),
        3 => Ok(ButcherTableau::esdirk3()),
        4 => Ok(ButcherTableau::esdirk4()),
        other => Err(TableauError::UnsupportedOrder(other)),
    }
}

fn mat_vec(t: &ButcherTableau, v: &[f64]) -> Vec<f64> {
    (0..t.stages)
        .map(|i| (0..t.stages).map(|j| t.a(i, j) * v[j]).sum())
        .collect()
}

fn weighted(w: &[f64], v: &[f64]) -> f64 {
    w.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Residuals of the rooted-tree order conditions up to order 4, paired with
/// the order at which each one becomes necessary.
pub fn order_residuals(t: &ButcherTableau, w: &[f64]) -> Vec<(usize, &'static str, f64)> {
    let c = &t.c;
    let ones = vec![1.0; t.stages];
    let c2: Vec<f64> = c.iter().map(|x| x * x).collect();
    let c3: Vec<f64> = c.iter().map(|x| x * x * x).collect();
    let ac = mat_vec(t, c);
    let ac2 = mat_vec(t, &c2);
    let aac = mat_vec(t, &ac);
    let c_ac: Vec<f64> = c.iter().zip(&ac).map(|(x, y)| x * y).collect();
    vec![
        (1, "sum b = 1", weighted(w, &ones) - 1.0),
        (2, "b.c = 1/2", weighted(w, c) - 0.5),
        (3, "b.c^2 = 1/3", weighted(w, &c2) - 1.0 / 3.0),
        (3, "b.Ac = 1/6", weighted(w, &ac) - 1.0 / 6.0),
        (4, "b.c^3 = 1/4", weighted(w, &c3) - 0.25),
        (4, "b.(c*Ac) = 1/8", weighted(w, &c_ac) - 0.125),
        (4, "b.Ac^2 = 1/12", weighted(w, &ac2) - 1.0 / 12.0),
        (4, "b.AAc = 1/24", weighted(w, &aac) - 1.0 / 24.0),
    ]
}

/// Lists every violated structural, order and stability condition; empty
/// means the tableau is usable by the ESDIRK stepper.
pub fn validate_tableau(t: &ButcherTableau) -> Vec<String> {
    let s = t.stages;
    let mut out = Vec::new();
    if t.a.len() != s * s || t.b.len() != s || t.b_hat.len() != s || t.c.len() != s {
        out.push(format!("array sizes do not match {s} stages"));
        return out;
    }
    if t.a(0, 0) != 0.0 {
        out.push(String::from("explicit first stage: A[1][1] = 0"));
    }
    for i in 0..s {
        for j in i + 1..s {
            if t.a(i, j) != 0.0 {
                out.push(format!("lower triangular: A[{}][{}] = 0", i + 1, j + 1));
            }
        }
    }
    let gamma = t.gamma();
    for i in 1..s {
        if t.a(i, i) != gamma {
            out.push(format!(
                "constant diagonal: A[{}][{}] = gamma",
                i + 1,
                i + 1
            ));
        }
    }
    if t.b[..] != t.a[(s - 1) * s..] {
        out.push(String::from("stiffly accurate: b = last row of A"));
    }
    for i in 0..s {
        let row: f64 = (0..s).map(|j| t.a(i, j)).sum();
        if (row - t.c[i]).abs() > ORDER_TOL {
            out.push(format!("row sum: c[{}] = sum_j A[{}][j]", i + 1, i + 1));
        }
    }
    for (w, p, label) in [(&t.b, t.order, "b"), (&t.b_hat, t.embedded_order, "b_hat")] {
        for (needed, name, r) in order_residuals(t, w) {
            if needed <= p && !(r.abs() <= ORDER_TOL) {
                out.push(format!(
                    "order condition for {label}: {name} (residual {r:e})"
                ));
            }
        }
    }
    match stability_function(t, Complex64::new(STIFF_PROBE, 0.0)) {
        Ok(r) if r.norm() <= STIFF_BOUND => {}
        Ok(r) => out.push(format!("L-stability: |R(-1e8)| = {:e} > 1e-6", r.norm())),
        Err(e) => out.push(format!("L-stability: {e}")),
    }
    out
}

fn stability_with(t: &ButcherTableau, w: &[f64], z: Complex64) -> Result<Complex64, TableauError> {
    // (I - zA) x = e by forward substitution, then R = 1 + z w.x
    let s = t.stages;
    let mut x = vec![Complex64::new(0.0, 0.0); s];
    for i in 0..s {
        let mut acc = Complex64::new(1.0, 0.0);
        for j in 0..i {
            acc += z * t.a(i, j) * x[j];
        }
        let diag = Complex64::new(1.0, 0.0) - z * t.a(i, i);
        if diag.norm() == 0.0 {
            return Err(TableauError::SingularMatrix { stage: i });
        }
        x[i] = acc / diag;
    }
    let mut r = Complex64::new(1.0, 0.0);
    for j in 0..s {
        r += z * w[j] * x[j];
    }
    Ok(r)
}

/// `R(z) = 1 + z b^T (I - zA)^{-1} e`.
pub fn stability_function(t: &ButcherTableau, z: Complex64) -> Result<Complex64, TableauError> {
    stability_with(t, &t.b, z)
}

/// Stability function of the embedded method.
pub fn embedded_stability_function(
    t: &ButcherTableau,
    z: Complex64,
) -> Result<Complex64, TableauError> {
    stability_with(t, &t.b_hat, z)
}
