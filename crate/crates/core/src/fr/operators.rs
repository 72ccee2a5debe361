//! Reference-element operators for flux reconstruction on [-1, 1].

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 10;

/// Legendre polynomial `P_n(x)` and its derivative.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let k = k as f64;
        let p2 = ((2.0 * k + 1.0) * x * p1 - k * p0) / (k + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    // Derivative from the three-term identity; at the endpoints use the
    // closed form n(n+1)/2 * (+-1)^(n+1).
    let dp = if (x * x - 1.0).abs() < 1e-14 {
        let s = if x > 0.0 { 1.0 } else { (-1.0f64).powi(n as i32 + 1) };
        s * n * (n + 1.0) / 2.0
    } else {
        n * (x * p1 - p0) / (x * x - 1.0)
    };
    (p1, dp)
}

/// Gauss-Legendre nodes (ascending) and weights with `n` points.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-like initial guess, then Newton.
        let mut r = -(std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, r);
            let step = p / dp;
            r -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, r);
        x[i] = r;
        w[i] = 2.0 / ((1.0 - r * r) * dp * dp);
    }
    (x, w)
}

fn barycentric_weights(x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|j| 1.0 / (0..x.len()).filter(|&k| k != j).map(|k| x[j] - x[k]).product::<f64>())
        .collect()
}

/// Values of the Lagrange basis on nodes `x` at point `at`.
pub fn lagrange_basis(x: &[f64], at: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| (0..x.len()).filter(|&k| k != j).map(|k| (at - x[k]) / (x[j] - x[k])).product())
        .collect()
}

/// Differentiation matrix of the Lagrange basis on `x`, row-major:
/// `(D u)_i = sum_j D[i][j] u_j` is the derivative at `x_i`. Diagonal entries
/// are the negated off-diagonal row sums, so constants map to zero.
pub fn differentiation_matrix(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let lam = barycentric_weights(x);
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = (lam[j] / lam[i]) / (x[i] - x[j]);
                d[i * n + j] = v;
                diag -= v;
            }
        }
        d[i * n + i] = diag;
    }
    d
}

/// The operators of one reference element.
#[derive(Debug, Clone, PartialEq)]
pub struct FrOperators {
    pub p: usize,
    /// Solution points.
    pub xi: Vec<f64>,
    /// Quadrature weights at the solution points.
    pub weights: Vec<f64>,
    /// 2 x (p+1), row-major: rows interpolate to the left and right face.
    pub m_interp: Vec<f64>,
    /// (p+1) x (p+1), row-major.
    pub d: Vec<f64>,
    /// (p+1) x 2, row-major: derivatives of the left and right correction
    /// functions at the solution points.
    pub c_corr: Vec<f64>,
}

impl FrOperators {
    pub fn npts(&self) -> usize {
        self.p + 1
    }
}

/// Operators for order `p`, 1 to 10: Gauss-Legendre solution points and
/// Radau correction functions, `g_L = (-1)^p/2 (P_p - P_{p+1})` and
/// `g_R = (P_p + P_{p+1})/2`.
pub fn build_operators(p: usize) -> Result<FrOperators> {
    if !(1..=MAX_ORDER).contains(&p) {
        return Err(Error::invalid(format!("polynomial order {p} outside 1..={MAX_ORDER}")));
    }
    let n = p + 1;
    let (xi, weights) = gauss_legendre(n);
    let mut m_interp = lagrange_basis(&xi, -1.0);
    m_interp.extend(lagrange_basis(&xi, 1.0));
    let d = differentiation_matrix(&xi);
    let sign = if p.is_multiple_of(2) { 1.0 } else { -1.0 };
    let mut c_corr = Vec::with_capacity(2 * n);
    for &x in &xi {
        let (_, dp) = legendre(p, x);
        let (_, dq) = legendre(p + 1, x);
        c_corr.push(sign * 0.5 * (dp - dq));
        c_corr.push(0.5 * (dp + dq));
    }
    Ok(FrOperators { p, xi, weights, m_interp, d, c_corr })
}
