use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{advection_rhs, wave_rhs, Advection, DgContext, DgState, WaveMaterial, WAVE_FIELDS};
use crate::error::{PyrError, Result};

/// Krylov subspace dimension per Arnoldi cycle.
pub const ARNOLDI_SUBSPACE: usize = 40;
/// Relative tolerance on the dominant Ritz value.
pub const ARNOLDI_TOL: f64 = 1e-4;
const MAX_RESTARTS: usize = 100;

/// Outcome of a restarted Arnoldi run. When `converged` is false, `rho` is the best
/// estimate seen.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEstimate {
    pub rho: f64,
    /// Dominant Ritz value.
    pub eigenvalue: Complex<f64>,
    /// Relative Ritz residual `|h_{m+1,m} y_m| / |theta|` of the last cycle.
    pub residual: f64,
    pub restarts: usize,
    pub converged: bool,
}

/// Matrix-free linear map on flattened coefficient vectors.
pub type LinearOperator<'a> = Box<dyn FnMut(&[f64]) -> Result<Vec<f64>> + 'a>;

fn state_operator<'a, F>(ctx: &'a DgContext, nfields: usize, mut rhs: F) -> LinearOperator<'a>
where
    F: FnMut(&DgContext, &DgState) -> Result<DMatrix<f64>> + 'a,
{
    Box::new(move |x: &[f64]| {
        let coeffs = DMatrix::from_column_slice(ctx.np, nfields * ctx.k, x);
        let st = DgState::from_coefficients(ctx, nfields, coeffs)?;
        Ok(rhs(ctx, &st)?.as_slice().to_vec())
    })
}

/// The advection right-hand side as a linear map.
pub fn advection_operator<'a>(ctx: &'a DgContext, adv: &'a Advection) -> LinearOperator<'a> {
    state_operator(ctx, 1, move |c, s| advection_rhs(c, s, adv))
}

/// The acoustic right-hand side as a linear map on `(p, u1, u2, u3)`.
pub fn wave_operator<'a>(ctx: &'a DgContext, material: &'a WaveMaterial) -> LinearOperator<'a> {
    state_operator(ctx, WAVE_FIELDS, move |c, s| wave_rhs(c, s, material))
}

/// Dense matrix of a linear map by applying it to unit vectors.
pub fn assemble_dense<F>(mut apply: F, n: usize) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut a = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = apply(&e)?;
        if col.len() != n {
            return Err(PyrError::ShapeMismatch(format!("operator returned {} entries, expected {n}", col.len())));
        }
        a.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    Ok(a)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Eigenvalues of a small dense matrix through a real Schur form.
pub(crate) fn eigenvalues(m: DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    let n = m.nrows().max(1);
    for eps in [1e-13, 1e-11] {
        if let Some(schur) = m.clone().try_schur(eps, 1000 * n) {
            return Ok(schur.complex_eigenvalues().iter().cloned().collect());
        }
    }
    Err(PyrError::InvalidParameter("Schur iteration did not converge".into()))
}

/// Eigenvector of the small Hessenberg matrix for `theta` by complex inverse iteration.
fn ritz_vector(h: &DMatrix<f64>, theta: Complex<f64>) -> DVector<Complex<f64>> {
    let m = h.nrows();
    let shift = theta + Complex::new(1e-10 * theta.norm().max(1e-300), 0.0);
    let mut b: DMatrix<Complex<f64>> = h.map(|v| Complex::new(v, 0.0));
    for i in 0..m {
        b[(i, i)] -= shift;
    }
    let lu = b.lu();
    let mut y = DVector::from_element(m, Complex::new(1.0, 0.0));
    for _ in 0..3 {
        match lu.solve(&y) {
            Some(z) if z.iter().all(|c| c.re.is_finite() && c.im.is_finite()) => {
                let nz = z.norm();
                if nz == 0.0 {
                    break;
                }
                y = z.unscale(nz);
            }
            _ => break,
        }
    }
    let ny = y.norm();
    y.unscale(ny)
}

/// Largest eigenvalue modulus of `apply` on `R^n` by restarted Arnoldi with a seeded
/// random start. Each cycle builds a Krylov basis of size `ARNOLDI_SUBSPACE` (modified
/// Gram-Schmidt, applied twice) and restarts from `Re(x) + Im(x)` of the dominant Ritz
/// vector `x`.
pub fn estimate_spectral_radius<F>(mut apply: F, n: usize, seed: u64) -> Result<SpectralEstimate>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if n == 0 {
        return Err(PyrError::InvalidParameter("operator has no unknowns".into()));
    }
    let m = ARNOLDI_SUBSPACE.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut best = SpectralEstimate {
        rho: 0.0,
        eigenvalue: Complex::new(0.0, 0.0),
        residual: f64::INFINITY,
        restarts: 0,
        converged: false,
    };
    let mut previous: Option<f64> = None;

    for restart in 0..MAX_RESTARTS {
        let nrm = norm(&start);
        if nrm == 0.0 || !nrm.is_finite() {
            return Err(PyrError::InvalidParameter("degenerate Arnoldi start vector".into()));
        }
        let mut basis: Vec<Vec<f64>> = vec![start.iter().map(|v| v / nrm).collect()];
        let mut h = DMatrix::zeros(m + 1, m);
        let mut size = m;
        for j in 0..m {
            let mut w = apply(&basis[j])?;
            if w.len() != n {
                return Err(PyrError::ShapeMismatch(format!("operator returned {} entries, expected {n}", w.len())));
            }
            for _ in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let c = dot(&w, v);
                    h[(i, j)] += c;
                    for (wi, vi) in w.iter_mut().zip(v) {
                        *wi -= c * vi;
                    }
                }
            }
            let beta = norm(&w);
            h[(j + 1, j)] = beta;
            let scale = h.view((0, 0), (j + 1, j + 1)).amax().max(f64::MIN_POSITIVE);
            if beta <= 1e-14 * scale {
                size = j + 1;
                break;
            }
            if j + 1 < m {
                basis.push(w.iter().map(|v| v / beta).collect());
            }
        }

        let hm = h.view((0, 0), (size, size)).into_owned();
        let eigs = eigenvalues(hm.clone())?;
        let theta = eigs
            .iter()
            .cloned()
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .expect("nonempty Hessenberg");
        let y = ritz_vector(&hm, theta);
        let rho = theta.norm();
        let tail = if size < m || size == n { 0.0 } else { h[(size, size - 1)] };
        let residual = if rho > 0.0 { tail * y[size - 1].norm() / rho } else { 0.0 };

        if rho >= best.rho || restart == 0 {
            best.rho = rho;
            best.eigenvalue = theta;
        }
        best.residual = residual;
        best.restarts = restart;
        let change = previous.map(|p| (rho - p).abs() / rho.max(f64::MIN_POSITIVE));
        if residual < ARNOLDI_TOL || change.is_some_and(|c| c < ARNOLDI_TOL) {
            best.rho = rho;
            best.eigenvalue = theta;
            best.converged = true;
            return Ok(best);
        }
        previous = Some(rho);

        let mut next = vec![0.0; n];
        for (i, v) in basis.iter().take(size).enumerate() {
            let c = y[i].re + y[i].im;
            for (x, vi) in next.iter_mut().zip(v) {
                *x += c * vi;
            }
        }
        if norm(&next) == 0.0 {
            next = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        }
        start = next;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;

    #[test]
    fn scalar_multiple_of_identity() {
        for sigma in [3.5, -2.0] {
            let est = estimate_spectral_radius(|x| Ok(x.iter().map(|v| sigma * v).collect()), 50, 1).unwrap();
            assert!(est.converged);
            assert!((est.rho - sigma.abs()).abs() < 1e-10);
        }
    }

    #[test]
    fn rotation_dominant_pair() {
        // block diagonal with a dominant complex pair of modulus 5
        let n = 60;
        let apply = |x: &[f64]| {
            let mut y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * (1.0 + i as f64 / n as f64)).collect();
            y[0] = 3.0 * x[0] - 4.0 * x[1];
            y[1] = 4.0 * x[0] + 3.0 * x[1];
            Ok(y)
        };
        let est = estimate_spectral_radius(apply, n, 2).unwrap();
        assert!((est.rho - 5.0).abs() < 1e-6, "{}", est.rho);
        assert!(est.eigenvalue.im.abs() > 1.0);
    }

    #[test]
    fn matches_dense_eigensolve() {
        let mesh = build_mesh(1, 1, 0.0, 0, false).unwrap();
        let ctx = DgContext::new(mesh, 1).unwrap();
        let mat = WaveMaterial::uniform(&ctx, 1.0, 1.0).unwrap();
        let n = ctx.np * 4 * ctx.k;
        assert_eq!(n, 120);
        let dense = assemble_dense(wave_operator(&ctx, &mat), n).unwrap();
        let exact = eigenvalues(dense).unwrap().iter().map(|c| c.norm()).fold(0.0, f64::max);
        let est = estimate_spectral_radius(wave_operator(&ctx, &mat), n, 7).unwrap();
        assert!((est.rho - exact).abs() < 0.01 * exact, "{} vs {}", est.rho, exact);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(estimate_spectral_radius(|_| Ok(vec![0.0; 3]), 4, 0).is_err());
        assert!(estimate_spectral_radius(|x| Ok(x.to_vec()), 0, 0).is_err());
        assert!(assemble_dense(|_| Ok(vec![1.0]), 2).is_err());
    }
}
