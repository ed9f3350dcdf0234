//! Mass matrices on vertex-mapped pyramids, Chebyshev inversion of the dense rational-basis
//! mass matrix, and L2 projection with the semi-nodal and LSC bases.

use nalgebra::{DMatrix, DVector};

use crate::error::{PyrError, Result};
use crate::geometry::{VertexMappedPyramid, MIN_JACOBIAN};
use crate::refelem::{volume_cubature, volume_cubature_with_points, RationalBasis, SemiNodalBasis};

/// Diagonal of the semi-nodal mass matrix of one element.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalMass {
    pub entries: Vec<f64>,
}

impl DiagonalMass {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.entries.iter().zip(x).map(|(m, v)| m * v).collect()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.entries.iter().zip(b).map(|(m, v)| v / m).collect()
    }

    /// `v^T M v`.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        self.entries.iter().zip(v).map(|(m, x)| m * x * x).sum()
    }
}

fn positive_j(pyr: &VertexMappedPyramid, a: f64, b: f64, c: f64) -> Result<f64> {
    let j = pyr.jacobian_det_collapsed(a, b, c)?;
    if !(j > MIN_JACOBIAN) {
        return Err(PyrError::DegenerateElement(format!(
            "J = {j:e} at (a, b, c) = ({a}, {b}, {c})"
        )));
    }
    Ok(j)
}

/// Entries `J(a_i^k, b_j^k) w_i^k w_j^k D_k`.
pub fn diag_mass(pyr: &VertexMappedPyramid, n: usize) -> Result<DiagonalMass> {
    diag_mass_with(pyr, &SemiNodalBasis::new(n)?)
}

pub fn diag_mass_with(pyr: &VertexMappedPyramid, basis: &SemiNodalBasis) -> Result<DiagonalMass> {
    let norms = basis.reference_norms();
    let entries = basis
        .indices()
        .iter()
        .zip(&norms)
        .map(|(ix, w)| {
            let nodes = &basis.layer_rule(ix.k).nodes;
            Ok(w * positive_j(pyr, nodes[ix.i], nodes[ix.j], -1.0)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiagonalMass { entries })
}

/// Dense semi-nodal Gram matrix `int phi_m phi_n J` by an `npts^3` volume rule.
pub fn seminodal_gram(pyr: &VertexMappedPyramid, n: usize, npts: usize) -> Result<DMatrix<f64>> {
    let basis = SemiNodalBasis::new(n)?;
    let rule = volume_cubature_with_points(npts)?;
    let mut table = Vec::with_capacity(rule.len());
    for &[a, b, c] in &rule.cube_points {
        table.push(basis.eval(a, b, c));
    }
    weighted_gram(pyr, &rule.cube_points, &rule.weights, &table)
}

fn weighted_gram(
    pyr: &VertexMappedPyramid,
    cube_points: &[[f64; 3]],
    weights: &[f64],
    table: &[Vec<f64>],
) -> Result<DMatrix<f64>> {
    let np = table.first().map_or(0, Vec::len);
    let mut vw = DMatrix::zeros(np, cube_points.len());
    let mut v = DMatrix::zeros(cube_points.len(), np);
    for (q, &[a, b, c]) in cube_points.iter().enumerate() {
        let wj = weights[q] * positive_j(pyr, a, b, c)?;
        for m in 0..np {
            v[(q, m)] = table[q][m];
            vw[(m, q)] = wj * table[q][m];
        }
    }
    Ok(vw * v)
}

/// Mass matrix of the rational basis, integrated exactly by the minimal volume rule.
pub fn dense_mass_rational(pyr: &VertexMappedPyramid, n: usize) -> Result<DMatrix<f64>> {
    let basis = RationalBasis::new(n)?;
    let rule = volume_cubature(n)?;
    let table: Vec<Vec<f64>> = rule
        .cube_points
        .iter()
        .map(|&[a, b, c]| basis.eval(a, b, c))
        .collect();
    let m = weighted_gram(pyr, &rule.cube_points, &rule.weights, &table)?;
    Ok((&m + m.transpose()) * 0.5)
}

/// Extreme values of `J` over the `(n+1)^2` Gauss-Legendre base grid: the extreme
/// eigenvalues of the rational-basis mass matrix.
pub fn eig_bounds(pyr: &VertexMappedPyramid, n: usize) -> Result<(f64, f64)> {
    let basis = SemiNodalBasis::new(n)?;
    let nodes = &basis.layer_rule(n).nodes;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &b in nodes {
        for &a in nodes {
            let j = pyr.jacobian_det_collapsed(a, b, -1.0)?;
            lo = lo.min(j);
            hi = hi.max(j);
        }
    }
    Ok((lo, hi))
}

/// History of a Chebyshev solve. Entry `k` of each vector belongs to iterate `x_k`,
/// starting from `x_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevReport {
    /// `||b - M x_k||_2`.
    pub residuals: Vec<f64>,
    /// Residual bound `2 tau^k ||b||_2`.
    pub predicted: Vec<f64>,
    /// `||x - x_k||_2`, present when the exact solution was supplied.
    pub errors: Option<Vec<f64>>,
    /// Error bound `2 tau^k ||x||_2`, present when the exact solution was supplied.
    pub predicted_errors: Option<Vec<f64>>,
    pub tau: f64,
    pub kappa: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `tau = (sqrt(kappa) - 1) / (sqrt(kappa) + 1)`.
pub fn chebyshev_tau(kappa: f64) -> f64 {
    let s = kappa.sqrt();
    (s - 1.0) / (s + 1.0)
}

/// Chebyshev semi-iteration for an SPD operator with spectrum in `[lambda_min, lambda_max]`.
/// Stops when `||b - M x_k|| < tol ||b||` or after `max_iter` iterations.
pub fn chebyshev_solve<F>(
    apply_m: F,
    b: &DVector<f64>,
    lambda_min: f64,
    lambda_max: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, ChebyshevReport)>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    chebyshev_impl(apply_m, b, lambda_min, lambda_max, tol, max_iter, None)
}

/// As [`chebyshev_solve`], additionally recording errors against a known solution.
pub fn chebyshev_solve_with_exact<F>(
    apply_m: F,
    b: &DVector<f64>,
    lambda_min: f64,
    lambda_max: f64,
    tol: f64,
    max_iter: usize,
    exact: &DVector<f64>,
) -> Result<(DVector<f64>, ChebyshevReport)>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    chebyshev_impl(apply_m, b, lambda_min, lambda_max, tol, max_iter, Some(exact))
}

fn chebyshev_impl<F>(
    apply_m: F,
    b: &DVector<f64>,
    lambda_min: f64,
    lambda_max: f64,
    tol: f64,
    max_iter: usize,
    exact: Option<&DVector<f64>>,
) -> Result<(DVector<f64>, ChebyshevReport)>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if !(lambda_min > 0.0) || !(lambda_min <= lambda_max) || !lambda_max.is_finite() {
        return Err(PyrError::InvalidParameter(format!(
            "need 0 < lambda_min <= lambda_max, got [{lambda_min}, {lambda_max}]"
        )));
    }
    if !(tol > 0.0) {
        return Err(PyrError::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    if let Some(x) = exact {
        if x.len() != b.len() {
            return Err(PyrError::ShapeMismatch(format!(
                "exact solution has length {}, right-hand side {}",
                x.len(),
                b.len()
            )));
        }
    }
    let kappa = lambda_max / lambda_min;
    let tau = chebyshev_tau(kappa);
    let theta = 0.5 * (lambda_max + lambda_min);
    let delta = 0.5 * (lambda_max - lambda_min);
    let bnorm = b.norm();
    let xnorm = exact.map(|x| x.norm());

    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let mut residuals = vec![bnorm];
    let mut predicted = vec![2.0 * bnorm];
    let mut errors = exact.map(|e| vec![e.norm()]);
    let mut predicted_errors = xnorm.map(|n| vec![2.0 * n]);

    let mut converged = bnorm == 0.0;
    let mut iterations = 0;
    let mut d = &r / theta;
    let sigma = if delta > 0.0 { theta / delta } else { f64::INFINITY };
    let mut rho = 1.0 / sigma;
    let mut tau_k = 1.0;
    while !converged && iterations < max_iter {
        x += &d;
        r = b - apply_m(&x);
        iterations += 1;
        tau_k *= tau;
        let rn = r.norm();
        residuals.push(rn);
        predicted.push(2.0 * tau_k * bnorm);
        if let (Some(errs), Some(e)) = (errors.as_mut(), exact) {
            errs.push((e - &x).norm());
        }
        if let (Some(pe), Some(n)) = (predicted_errors.as_mut(), xnorm) {
            pe.push(2.0 * tau_k * n);
        }
        converged = rn < tol * bnorm;
        if delta > 0.0 {
            let rho_next = 1.0 / (2.0 * sigma - rho);
            d = &d * (rho_next * rho) + &r * (2.0 * rho_next / delta);
            rho = rho_next;
        } else {
            d = &r / theta;
        }
    }
    Ok((
        x,
        ChebyshevReport {
            residuals,
            predicted,
            errors,
            predicted_errors,
            tau,
            kappa,
            iterations,
            converged,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMode {
    /// Semi-nodal basis with its diagonal `J`-weighted mass.
    SemiNodal,
    /// Reference basis divided by `sqrt(J)`, sharing the reference mass on every element.
    Lsc,
}

impl std::str::FromStr for ProjectionMode {
    type Err = PyrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seminodal" => Ok(Self::SemiNodal),
            "lsc" => Ok(Self::Lsc),
            other => Err(PyrError::InvalidParameter(format!("unknown projection mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for ProjectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::SemiNodal => "seminodal",
            Self::Lsc => "lsc",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub coefficients: Vec<f64>,
    pub l2_error: f64,
}

/// L2 projection on single elements, with moments and errors by an `(N+3)^3` rule.
#[derive(Debug, Clone)]
pub struct Projector {
    basis: SemiNodalBasis,
    cube_points: Vec<[f64; 3]>,
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
    table: Vec<Vec<f64>>,
}

impl Projector {
    pub fn new(n: usize) -> Result<Self> {
        let basis = SemiNodalBasis::new(n)?;
        let rule = volume_cubature_with_points(n + 3)?;
        let table = rule
            .cube_points
            .iter()
            .map(|&[a, b, c]| basis.eval(a, b, c))
            .collect();
        Ok(Self {
            basis,
            cube_points: rule.cube_points,
            points: rule.points,
            weights: rule.weights,
            table,
        })
    }

    pub fn basis(&self) -> &SemiNodalBasis {
        &self.basis
    }

    /// `(x, w J, J)` at every rule point.
    fn physical_points(&self, pyr: &VertexMappedPyramid) -> Result<Vec<([f64; 3], f64, f64)>> {
        self.points
            .iter()
            .zip(&self.cube_points)
            .zip(&self.weights)
            .map(|((p, &[a, b, c]), w)| {
                let j = positive_j(pyr, a, b, c)?;
                Ok((pyr.map_to_physical(p[0], p[1], p[2])?, w * j, j))
            })
            .collect()
    }

    pub fn project<F: Fn([f64; 3]) -> f64>(
        &self,
        f: F,
        pyr: &VertexMappedPyramid,
        mode: ProjectionMode,
    ) -> Result<Projection> {
        let phys = self.physical_points(pyr)?;
        let np = self.basis.len();
        let fvals: Vec<f64> = phys.iter().map(|(x, _, _)| f(*x)).collect();
        let mut moments = vec![0.0; np];
        for (q, (_, wj, j)) in phys.iter().enumerate() {
            let scale = match mode {
                ProjectionMode::SemiNodal => wj * fvals[q],
                ProjectionMode::Lsc => wj * fvals[q] / j.sqrt(),
            };
            for m in 0..np {
                moments[m] += scale * self.table[q][m];
            }
        }
        let coefficients = match mode {
            ProjectionMode::SemiNodal => diag_mass_with(pyr, &self.basis)?.solve(&moments),
            ProjectionMode::Lsc => moments
                .iter()
                .zip(self.basis.reference_norms())
                .map(|(m, w)| m / w)
                .collect(),
        };
        let mut err = 0.0;
        for (q, (_, wj, j)) in phys.iter().enumerate() {
            let mut u: f64 = coefficients.iter().zip(&self.table[q]).map(|(c, p)| c * p).sum();
            if mode == ProjectionMode::Lsc {
                u /= j.sqrt();
            }
            err += wj * (fvals[q] - u).powi(2);
        }
        Ok(Projection {
            coefficients,
            l2_error: err.sqrt(),
        })
    }
}

pub fn project<F: Fn([f64; 3]) -> f64>(
    f: F,
    pyr: &VertexMappedPyramid,
    n: usize,
    mode: ProjectionMode,
) -> Result<Projection> {
    Projector::new(n)?.project(f, pyr, mode)
}

/// Projection over a whole mesh of elements; the error is the global L2 norm.
pub fn project_elements<F: Fn([f64; 3]) -> f64>(
    f: F,
    elements: &[VertexMappedPyramid],
    n: usize,
    mode: ProjectionMode,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let projector = Projector::new(n)?;
    let mut coeffs = Vec::with_capacity(elements.len());
    let mut err2 = 0.0;
    for pyr in elements {
        let p = projector.project(&f, pyr, mode)?;
        err2 += p.l2_error * p.l2_error;
        coeffs.push(p.coefficients);
    }
    Ok((coeffs, err2.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::warped_pyramid;
    use crate::refelem::{num_basis, REFERENCE_VERTICES};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pyramid(rng: &mut ChaCha8Rng, mag: f64) -> VertexMappedPyramid {
        let mut v = REFERENCE_VERTICES;
        for p in v.iter_mut() {
            for x in p.iter_mut() {
                *x += rng.random_range(-mag..mag);
            }
        }
        VertexMappedPyramid::new(v)
    }

    fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
        let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    #[test]
    fn constant_mode_mass_is_volume() {
        let d = diag_mass(&VertexMappedPyramid::identity(), 0).unwrap();
        assert_abs_diff_eq!(d.entries[0], 8.0 / 3.0, epsilon = 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pyr = random_pyramid(&mut rng, 0.3);
        let d = diag_mass(&pyr, 0).unwrap();
        assert_abs_diff_eq!(d.entries[0], pyr.volume().unwrap(), epsilon = 1e-13);
    }

    #[test]
    fn identity_mass_is_reference_norms() {
        let pyr = VertexMappedPyramid::identity();
        for n in 0..=5 {
            let d = diag_mass(&pyr, n).unwrap();
            let g = seminodal_gram(&pyr, n, n + 3).unwrap();
            let norms = SemiNodalBasis::new(n).unwrap().reference_norms();
            for m in 0..num_basis(n) {
                assert_abs_diff_eq!(d.entries[m], norms[m], epsilon = 1e-15);
                assert_abs_diff_eq!(g[(m, m)], d.entries[m], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn warped_gram_is_diagonal() {
        let pyr = warped_pyramid(0.5).unwrap();
        let n = 3;
        let g = seminodal_gram(&pyr, n, n + 3).unwrap();
        let d = diag_mass(&pyr, n).unwrap();
        let dmin = d.entries.iter().cloned().fold(f64::MAX, f64::min);
        for r in 0..g.nrows() {
            for c in 0..g.ncols() {
                if r == c {
                    assert!((g[(r, c)] - d.entries[r]).abs() <= 1e-11 * d.entries[r]);
                } else {
                    assert!(g[(r, c)].abs() <= 1e-11 * dmin);
                }
            }
        }
    }

    #[test]
    fn random_pyramids_have_diagonal_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for n in 1..=4 {
            for _ in 0..5 {
                let pyr = random_pyramid(&mut rng, 0.3);
                let g = seminodal_gram(&pyr, n, n + 3).unwrap();
                let d = diag_mass(&pyr, n).unwrap();
                let dmin = d.entries.iter().cloned().fold(f64::MAX, f64::min);
                let mut off: f64 = 0.0;
                for r in 0..g.nrows() {
                    for c in 0..g.ncols() {
                        if r != c {
                            off = off.max(g[(r, c)].abs());
                        }
                    }
                    assert!((g[(r, r)] - d.entries[r]).abs() <= 1e-10 * d.entries[r]);
                }
                assert!(off / dmin < 1e-10, "n={n} ratio {}", off / dmin);
            }
        }
    }

    #[test]
    fn rational_mass_examples() {
        let id = dense_mass_rational(&VertexMappedPyramid::identity(), 4).unwrap();
        assert!((id - DMatrix::identity(num_basis(4), num_basis(4))).amax() < 1e-12);
        let w = warped_pyramid(1.0).unwrap();
        for n in 1..=4 {
            let m = dense_mass_rational(&w, n).unwrap();
            assert!((&m - m.transpose()).amax() < 1e-13);
            let ev = sym_eigenvalues(&m);
            let basis = SemiNodalBasis::new(n).unwrap();
            let norms = basis.reference_norms();
            let mut js: Vec<f64> = diag_mass(&w, n)
                .unwrap()
                .entries
                .iter()
                .zip(&norms)
                .map(|(d, r)| d / r)
                .collect();
            js.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (e, j) in ev.iter().zip(&js) {
                assert_abs_diff_eq!(e, j, epsilon = 1e-9);
            }
            let (lo, hi) = eig_bounds(&w, n).unwrap();
            assert_abs_diff_eq!(ev[0], lo, epsilon = 1e-9);
            assert_abs_diff_eq!(*ev.last().unwrap(), hi, epsilon = 1e-9);
        }
    }

    #[test]
    fn eig_bound_examples() {
        assert_eq!(eig_bounds(&VertexMappedPyramid::identity(), 3).unwrap(), (1.0, 1.0));
        let mut v = REFERENCE_VERTICES;
        for p in v.iter_mut() {
            p[0] *= 2.0;
        }
        let (lo, hi) = eig_bounds(&VertexMappedPyramid::new(v), 2).unwrap();
        assert_abs_diff_eq!(lo, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(hi, 2.0, epsilon = 1e-14);
        let mut prev = 1.0;
        for g in [0.0, 0.2, 0.5, 1.0, 1.5] {
            let (lo, hi) = eig_bounds(&warped_pyramid(g).unwrap(), 4).unwrap();
            assert!(hi / lo >= prev);
            prev = hi / lo;
        }
    }

    #[test]
    fn chebyshev_trivial_cases() {
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let (x, rep) = chebyshev_solve(|v| v * 2.0, &b, 2.0, 2.0, 1e-12, 50).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
        assert_eq!(rep.tau, 0.0);
        assert!((x - &b / 2.0).amax() < 1e-15);
        assert_abs_diff_eq!(chebyshev_tau(4.0), 1.0 / 3.0, epsilon = 1e-15);
        assert!(chebyshev_solve(|v| v.clone(), &b, 0.0, 1.0, 1e-8, 5).is_err());
        assert!(chebyshev_solve(|v| v.clone(), &b, 2.0, 1.0, 1e-8, 5).is_err());
        assert!(chebyshev_solve(|v| v.clone(), &b, 1.0, 1.0, 0.0, 5).is_err());
    }

    #[test]
    fn chebyshev_reports_nonconvergence() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 100.0]));
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let (_, rep) = chebyshev_solve(|v| &a * v, &b, 1.0, 100.0, 1e-14, 3).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 3);
        assert_eq!(rep.residuals.len(), 4);
    }

    #[test]
    fn chebyshev_on_warped_mass() {
        let mut counts = Vec::new();
        for g in [0.2, 0.5, 1.0] {
            let w = warped_pyramid(g).unwrap();
            let m = dense_mass_rational(&w, 3).unwrap();
            let (lo, hi) = eig_bounds(&w, 3).unwrap();
            let b = DVector::from_fn(m.nrows(), |i, _| ((i as f64) * 0.7).sin() + 0.1);
            let exact = m.clone().cholesky().unwrap().solve(&b);
            let (x, rep) =
                chebyshev_solve_with_exact(|v| &m * v, &b, lo, hi, 1e-10, 500, &exact).unwrap();
            assert!(rep.converged);
            assert!((x - &exact).amax() < 1e-8);
            for (r, p) in rep.residuals.iter().zip(&rep.predicted) {
                assert!(*r <= p * (1.0 + 1e-6));
            }
            let errs = rep.errors.unwrap();
            for (e, p) in errs.iter().zip(rep.predicted_errors.as_ref().unwrap()) {
                assert!(*e <= p * (1.0 + 1e-6));
            }
            counts.push(rep.iterations);
        }
        assert!(counts[0] < counts[1] && counts[1] < counts[2]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn chebyshev_bound_holds_on_spd_spectra(
            eigs in proptest::collection::vec(1.0f64..50.0, 2..12),
            seed in 0u64..1000,
        ) {
            let n = eigs.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let q = raw.qr().q();
            let a = &q * DMatrix::from_diagonal(&DVector::from_vec(eigs.clone())) * q.transpose();
            let lo = eigs.iter().cloned().fold(f64::MAX, f64::min);
            let hi = eigs.iter().cloned().fold(f64::MIN, f64::max);
            let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let exact = a.clone().lu().solve(&b).unwrap();
            let (_, rep) = chebyshev_solve_with_exact(|v| &a * v, &b, lo, hi, 1e-12, 300, &exact).unwrap();
            for (r, p) in rep.residuals.iter().zip(&rep.predicted) {
                prop_assert!(*r <= p * (1.0 + 1e-6) + 1e-13);
            }
            for (e, p) in rep.errors.unwrap().iter().zip(rep.predicted_errors.unwrap().iter()) {
                prop_assert!(*e <= p * (1.0 + 1e-6) + 1e-13);
            }
        }

        #[test]
        fn diagonal_mass_is_positive_definite(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pyr = random_pyramid(&mut rng, 0.3);
            let d = diag_mass(&pyr, 3).unwrap();
            prop_assert!(d.entries.iter().all(|&e| e > 0.0));
            let v: Vec<f64> = (0..d.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            prop_assert!(d.quadratic_form(&v) > 0.0);
        }
    }

    #[test]
    fn projection_reproduces_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in 0..4 {
            let pyr = random_pyramid(&mut rng, 0.3);
            let p = project(|_| 1.0, &pyr, n, ProjectionMode::SemiNodal).unwrap();
            assert!(p.l2_error < 1e-12);
        }
    }

    #[test]
    fn projection_modes_agree_on_affine_elements() {
        let f = |x: [f64; 3]| (x[0] + x[1] + x[2]).cosh();
        for n in 1..=4 {
            let pyr = VertexMappedPyramid::identity();
            let s = project(f, &pyr, n, ProjectionMode::SemiNodal).unwrap();
            let l = project(f, &pyr, n, ProjectionMode::Lsc).unwrap();
            assert_abs_diff_eq!(s.l2_error, l.l2_error, epsilon = 1e-12);
        }
    }

    #[test]
    fn projection_residual_is_orthogonal() {
        let f = |x: [f64; 3]| (x[0] - 0.3 * x[1]).sin() * (0.5 * x[2]).exp();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 3;
        let pyr = random_pyramid(&mut rng, 0.3);
        let p = project(f, &pyr, n, ProjectionMode::SemiNodal).unwrap();
        let basis = SemiNodalBasis::new(n).unwrap();
        let rule = volume_cubature_with_points(n + 3).unwrap();
        let mut moments = vec![0.0; basis.len()];
        for (q, &[a, b, c]) in rule.cube_points.iter().enumerate() {
            let phi = basis.eval(a, b, c);
            let [r, s, t] = rule.points[q];
            let x = pyr.map_to_physical(r, s, t).unwrap();
            let wj = rule.weights[q] * pyr.jacobian(r, s, t).unwrap().1;
            let u: f64 = phi.iter().zip(&p.coefficients).map(|(a, b)| a * b).sum();
            for m in 0..basis.len() {
                moments[m] += wj * (f(x) - u) * phi[m];
            }
        }
        assert!(moments.iter().all(|m| m.abs() < 1e-10));
    }

    #[test]
    fn mode_parses() {
        assert_eq!("lsc".parse::<ProjectionMode>().unwrap(), ProjectionMode::Lsc);
        assert_eq!(ProjectionMode::SemiNodal.to_string(), "seminodal");
        assert!("nodal".parse::<ProjectionMode>().is_err());
    }
}
