//! One-dimensional orthogonal polynomial primitives.
//!
//! Jacobi polynomials use the classical normalization `P_n^{a,b}(1) = binom(n + a, n)`.
//! Gauss rules are built from the eigenvalues of the Jacobi recurrence matrix
//! (Golub-Welsch), polished by Newton iteration on `P_n`, with weights taken from
//! the Christoffel function so they stay accurate to machine precision.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::ln_gamma;

use crate::error::{PyrError, Result};

const NEWTON_TOL: f64 = 1e-14;
const NEWTON_MAX_ITER: usize = 100;

/// A one-dimensional Gauss rule for the weight `(1-x)^alpha (1+x)^beta` on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule1D {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl Rule1D {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Weighted sum `sum_i w_i f(x_i)`, i.e. the integral of `f` against the rule's weight.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

fn check_exponents(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > -1.0 && alpha.is_finite()) || !(beta > -1.0 && beta.is_finite()) {
        return Err(PyrError::InvalidParameter(format!(
            "Jacobi exponents must exceed -1 (alpha = {alpha}, beta = {beta})"
        )));
    }
    Ok(())
}

/// Classical Jacobi polynomial `P_n^{alpha,beta}(x)` by three-term recurrence.
pub fn jacobi_eval(n: usize, alpha: f64, beta: f64, x: f64) -> Result<f64> {
    check_exponents(alpha, beta)?;
    Ok(jacobi_unchecked(n, alpha, beta, x))
}

pub(crate) fn jacobi_unchecked(n: usize, alpha: f64, beta: f64, x: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let ab = alpha + beta;
    let mut p_prev = 1.0;
    let mut p = 0.5 * ((ab + 2.0) * x + (alpha - beta));
    for m in 2..=n {
        let m = m as f64;
        let s = 2.0 * m + ab;
        let a1 = 2.0 * m * (m + ab) * (s - 2.0);
        let a2 = (s - 1.0) * (alpha * alpha - beta * beta);
        let a3 = (s - 2.0) * (s - 1.0) * s;
        let a4 = 2.0 * (m + alpha - 1.0) * (m + beta - 1.0) * s;
        let next = ((a2 + a3 * x) * p - a4 * p_prev) / a1;
        p_prev = p;
        p = next;
    }
    p
}

/// Derivative of `P_n^{alpha,beta}` via `d/dx P_n = (n + a + b + 1)/2 * P_{n-1}^{a+1,b+1}`.
pub fn jacobi_deriv(n: usize, alpha: f64, beta: f64, x: f64) -> Result<f64> {
    check_exponents(alpha, beta)?;
    Ok(jacobi_deriv_unchecked(n, alpha, beta, x))
}

pub(crate) fn jacobi_deriv_unchecked(n: usize, alpha: f64, beta: f64, x: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    0.5 * (n as f64 + alpha + beta + 1.0) * jacobi_unchecked(n - 1, alpha + 1.0, beta + 1.0, x)
}

/// Squared weighted L2 norm of `P_n^{alpha,beta}` on `[-1, 1]`.
pub fn jacobi_norm_sq(n: usize, alpha: f64, beta: f64) -> Result<f64> {
    check_exponents(alpha, beta)?;
    Ok(jacobi_norm_sq_unchecked(n, alpha, beta))
}

pub(crate) fn jacobi_norm_sq_unchecked(n: usize, alpha: f64, beta: f64) -> f64 {
    let ab = alpha + beta;
    let h0 = 2f64.powf(ab + 1.0) * beta_fn(alpha + 1.0, beta + 1.0);
    if n == 0 {
        return h0;
    }
    let mut ratio = 1.0;
    for j in 1..=n {
        let j = j as f64;
        ratio *= (alpha + j) * (beta + j) / j;
        if j >= 2.0 {
            ratio /= ab + j;
        }
    }
    h0 * ratio / (2.0 * n as f64 + ab + 1.0)
}

/// Beta function, exact products when either argument is a positive integer.
fn beta_fn(x: f64, y: f64) -> f64 {
    let as_int = |v: f64| (v.fract() == 0.0 && v >= 1.0 && v <= 64.0).then_some(v as usize);
    let by_products = |x: f64, m: usize| {
        // B(x, m) = (m-1)! / (x (x+1) ... (x+m-1))
        (0..m).fold(1.0, |acc, j| acc * if j == 0 { 1.0 } else { j as f64 } / (x + j as f64))
    };
    match (as_int(x), as_int(y)) {
        (_, Some(m)) => by_products(x, m),
        (Some(m), None) => by_products(y, m),
        _ => (ln_gamma(x) + ln_gamma(y) - ln_gamma(x + y)).exp(),
    }
}

/// Jacobi polynomial scaled to unit norm under its weight.
pub fn jacobi_orthonormal(n: usize, alpha: f64, beta: f64, x: f64) -> Result<f64> {
    check_exponents(alpha, beta)?;
    Ok(jacobi_unchecked(n, alpha, beta, x) / jacobi_norm_sq_unchecked(n, alpha, beta).sqrt())
}

/// Gauss-Jacobi rule with `npts` nodes, exact for degree `2 npts - 1` under the weight
/// `(1-x)^alpha (1+x)^beta`. `alpha = beta = 0` is Gauss-Legendre.
pub fn gauss_rule(npts: usize, alpha: f64, beta: f64) -> Result<Rule1D> {
    if npts < 1 {
        return Err(PyrError::InvalidParameter(
            "a Gauss rule needs at least one point".into(),
        ));
    }
    check_exponents(alpha, beta)?;
    let ab = alpha + beta;

    // Symmetric tridiagonal recurrence matrix of the orthonormal family.
    let mut jm = DMatrix::<f64>::zeros(npts, npts);
    for i in 0..npts {
        let n = i as f64;
        let s = 2.0 * n + ab;
        jm[(i, i)] = if i == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / (s * (s + 2.0))
        };
        if i + 1 < npts {
            let m = n + 1.0;
            let s = 2.0 * m + ab;
            let num = 4.0 * m * (m + alpha) * (m + beta) * (m + ab);
            let den = s * s * (s + 1.0) * (s - 1.0);
            let off = (num / den).sqrt();
            jm[(i, i + 1)] = off;
            jm[(i + 1, i)] = off;
        }
    }
    let mut nodes: Vec<f64> = SymmetricEigen::new(jm).eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

    for x in nodes.iter_mut() {
        for _ in 0..NEWTON_MAX_ITER {
            let p = jacobi_unchecked(npts, alpha, beta, *x);
            let dp = jacobi_deriv_unchecked(npts, alpha, beta, *x);
            let step = p / dp;
            *x -= step;
            if step.abs() < NEWTON_TOL {
                break;
            }
        }
    }

    let norms: Vec<f64> = (0..npts)
        .map(|k| jacobi_norm_sq_unchecked(k, alpha, beta))
        .collect();
    let weights = nodes
        .iter()
        .map(|&x| {
            let christoffel: f64 = (0..npts)
                .map(|k| {
                    let p = jacobi_unchecked(k, alpha, beta, x);
                    p * p / norms[k]
                })
                .sum();
            1.0 / christoffel
        })
        .collect();

    Ok(Rule1D {
        nodes,
        weights,
        alpha,
        beta,
    })
}

/// Gauss-Legendre rule with `npts` nodes.
pub fn gauss_legendre(npts: usize) -> Result<Rule1D> {
    gauss_rule(npts, 0.0, 0.0)
}

fn check_nodes(nodes: &[f64], i: usize) -> Result<()> {
    if i >= nodes.len() {
        return Err(PyrError::InvalidParameter(format!(
            "Lagrange index {i} out of range for {} nodes",
            nodes.len()
        )));
    }
    for (p, &xp) in nodes.iter().enumerate() {
        for &xq in &nodes[p + 1..] {
            if (xp - xq).abs() <= 1e-14 * (1.0 + xp.abs()) {
                return Err(PyrError::InvalidParameter(format!(
                    "duplicate interpolation node {xp}"
                )));
            }
        }
    }
    Ok(())
}

/// Lagrange cardinal polynomial of node `i` evaluated at `x`.
pub fn lagrange_eval(nodes: &[f64], i: usize, x: f64) -> Result<f64> {
    check_nodes(nodes, i)?;
    Ok(lagrange_unchecked(nodes, i, x))
}

/// Derivative of the Lagrange cardinal polynomial of node `i` at `x`.
pub fn lagrange_deriv(nodes: &[f64], i: usize, x: f64) -> Result<f64> {
    check_nodes(nodes, i)?;
    Ok(lagrange_deriv_unchecked(nodes, i, x))
}

pub(crate) fn lagrange_unchecked(nodes: &[f64], i: usize, x: f64) -> f64 {
    let xi = nodes[i];
    nodes
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &xj)| (x - xj) / (xi - xj))
        .product()
}

pub(crate) fn lagrange_deriv_unchecked(nodes: &[f64], i: usize, x: f64) -> f64 {
    let xi = nodes[i];
    let mut total = 0.0;
    for (m, &xm) in nodes.iter().enumerate() {
        if m == i {
            continue;
        }
        let mut term = 1.0 / (xi - xm);
        for (j, &xj) in nodes.iter().enumerate() {
            if j != i && j != m {
                term *= (x - xj) / (xi - xj);
            }
        }
        total += term;
    }
    total
}
