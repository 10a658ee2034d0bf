//! Discrete calculus on uniform grids: first and second differences,
//! trapezoid quadrature, and a tridiagonal (Thomas) solver.
//!
//! The pairing used throughout the crate — trapezoid weights together with a
//! gradient that is central in the interior and first-order one-sided at the
//! two boundary nodes — makes the discrete integration-by-parts identity
//!
//! ```text
//! trapezoid(f * grad(g)) + trapezoid(grad(f) * g) = f*g |_left^right
//! ```
//!
//! hold exactly (up to roundoff) for arbitrary grid functions. Quadrature
//! identities downstream (the probability-ODE numerator assemblies) rely on
//! this, so the endpoint stencils here must not be changed in isolation.

use crate::error::{Error, Result};

/// First derivative of a sampled function: second-order central differences
/// in the interior, first-order one-sided at the two boundary nodes.
///
/// Requires at least 3 nodes and a positive spacing.
pub fn discrete_gradient(values: &[f64], dx: f64) -> Result<Vec<f64>> {
    if values.len() < 3 {
        return Err(Error::Dimension(format!(
            "discrete_gradient needs at least 3 nodes, got {}",
            values.len()
        )));
    }
    if !(dx > 0.0) {
        return Err(Error::Parameter(format!("dx must be positive, got {dx}")));
    }
    let n = values.len();
    let mut out = vec![0.0; n];
    out[0] = (values[1] - values[0]) / dx;
    for i in 1..n - 1 {
        out[i] = (values[i + 1] - values[i - 1]) / (2.0 * dx);
    }
    out[n - 1] = (values[n - 1] - values[n - 2]) / dx;
    Ok(out)
}

/// Second difference `(f[i+1] - 2 f[i] + f[i-1]) / dx^2` on interior nodes;
/// the two boundary entries copy the nearest interior value.
pub fn second_difference(values: &[f64], dx: f64) -> Result<Vec<f64>> {
    if values.len() < 3 {
        return Err(Error::Dimension(format!(
            "second_difference needs at least 3 nodes, got {}",
            values.len()
        )));
    }
    if !(dx > 0.0) {
        return Err(Error::Parameter(format!("dx must be positive, got {dx}")));
    }
    let n = values.len();
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        out[i] = (values[i + 1] - 2.0 * values[i] + values[i - 1]) / (dx * dx);
    }
    out[0] = out[1];
    out[n - 1] = out[n - 2];
    Ok(out)
}

/// Trapezoid quadrature with uniform spacing: half weights at the endpoints.
pub fn trapezoid(values: &[f64], dx: f64) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    if n == 1 {
        return 0.0;
    }
    let mut sum = 0.5 * (values[0] + values[n - 1]);
    for v in &values[1..n - 1] {
        sum += v;
    }
    sum * dx
}

/// Thomas algorithm for a tridiagonal system. `lower` and `upper` have
/// length `n - 1`; the matrix must not need pivoting (all call sites in this
/// crate are strictly diagonally dominant). Panics on shape mismatch: shapes
/// are an internal invariant, not caller input.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    assert!(n >= 1, "empty tridiagonal system");
    assert_eq!(lower.len(), n - 1, "lower diagonal length mismatch");
    assert_eq!(upper.len(), n - 1, "upper diagonal length mismatch");
    assert_eq!(rhs.len(), n, "right-hand side length mismatch");

    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    c_prime[0] = if n > 1 { upper[0] / diag[0] } else { 0.0 };
    d_prime[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - lower[i - 1] * c_prime[i - 1];
        if i < n - 1 {
            c_prime[i] = upper[i] / denom;
        }
        d_prime[i] = (rhs[i] - lower[i - 1] * d_prime[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d_prime[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d_prime[i] - c_prime[i] * x[i + 1];
    }
    x
}
