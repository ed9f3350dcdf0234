//! The bi-unit reference pyramid `r, s in [-1, -t], t in [-1, 1]`.
//!
//! Everything here is expressed through the collapsed (Duffy) coordinates
//! `(a, b, c) in [-1, 1]^3`, where
//!
//! ```text
//! r = (1 + a)(1 - c)/2 - 1,   s = (1 + b)(1 - c)/2 - 1,   t = c
//! ```
//!
//! Vertex order used throughout the crate:
//! `V1 = (-1,-1,-1)`, `V2 = (-1,1,-1)`, `V3 = (1,-1,-1)`, `V4 = (1,1,-1)`, apex `V5 = (-1,-1,1)`.
//! In collapsed coordinates the base vertices sit at `(a, b) = (-1,-1), (-1,1), (1,-1), (1,1)`.
//!
//! Local faces are numbered base (`c = -1`), `a = -1`, `a = +1`, `b = -1`, `b = +1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_order, PyrError, Result, APEX_TOL};
use crate::orthopoly::{
    gauss_legendre, gauss_rule, jacobi_deriv_unchecked, jacobi_norm_sq_unchecked,
    jacobi_unchecked, lagrange_deriv_unchecked, lagrange_unchecked, Rule1D,
};

pub const REFERENCE_VERTICES: [[f64; 3]; 5] = [
    [-1.0, -1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
];

/// Volume of the reference pyramid.
pub const REFERENCE_VOLUME: f64 = 8.0 / 3.0;

pub const NUM_FACES: usize = 5;

/// Outward unit normals of the reference faces, in local face order.
pub const FACE_NORMALS: [[f64; 3]; NUM_FACES] = [
    [0.0, 0.0, -1.0],
    [-1.0, 0.0, 0.0],
    [std::f64::consts::FRAC_1_SQRT_2, 0.0, std::f64::consts::FRAC_1_SQRT_2],
    [0.0, -1.0, 0.0],
    [0.0, std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
];

/// Vertices (indices into the element's five) of each local face. The base is listed
/// cyclically.
pub const FACE_VERTICES: [&[usize]; NUM_FACES] =
    [&[0, 1, 3, 2], &[0, 1, 4], &[2, 3, 4], &[0, 2, 4], &[1, 3, 4]];

/// Number of functions in the order-`n` pyramid space, `(n+1)(n+2)(2n+3)/6`.
pub fn num_basis(n: usize) -> usize {
    (n + 1) * (n + 2) * (2 * n + 3) / 6
}

pub fn duffy_map(a: f64, b: f64, c: f64) -> [f64; 3] {
    let h = 0.5 * (1.0 - c);
    [(1.0 + a) * h - 1.0, (1.0 + b) * h - 1.0, c]
}

fn check_apex(t: f64) -> Result<()> {
    if t >= 1.0 - APEX_TOL {
        return Err(PyrError::Singularity { t });
    }
    Ok(())
}

pub fn duffy_inverse(r: f64, s: f64, t: f64) -> Result<[f64; 3]> {
    check_apex(t)?;
    let d = 1.0 - t;
    Ok([2.0 * (1.0 + r) / d - 1.0, 2.0 * (1.0 + s) / d - 1.0, t])
}

/// Rational vertex functions `v1..v5` of the pyramid.
pub fn vertex_shape_functions(r: f64, s: f64, t: f64) -> Result<[f64; 5]> {
    check_apex(t)?;
    let d = 2.0 * (1.0 - t);
    Ok([
        (r + t) * (s + t) / d,
        -(r + t) * (s + 1.0) / d,
        -(1.0 + r) * (s + t) / d,
        (1.0 + r) * (1.0 + s) / d,
        0.5 * (1.0 + t),
    ])
}

/// Gradients `(d/dr, d/ds, d/dt)` of the vertex functions.
pub fn vertex_shape_gradients(r: f64, s: f64, t: f64) -> Result<[[f64; 3]; 5]> {
    check_apex(t)?;
    let d = 2.0 * (1.0 - t);
    let d2 = 2.0 * (1.0 - t) * (1.0 - t);
    let (rt, st, r1, s1) = (r + t, s + t, 1.0 + r, 1.0 + s);
    Ok([
        [st / d, rt / d, (rt + st) / d + rt * st / d2],
        [-s1 / d, -rt / d, -s1 / d - rt * s1 / d2],
        [-st / d, -r1 / d, -r1 / d - r1 * st / d2],
        [s1 / d, r1 / d, r1 * s1 / d2],
        [0.0, 0.0, 0.5],
    ])
}

/// Position of a semi-nodal basis function: Lagrange indices `i` (in `a`) and `j` (in `b`)
/// on layer `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisIndex {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub flat: usize,
}

/// Basis `phi_ijk = l_i^k(a) l_j^k(b) ((1-c)/2)^k P_{N-k}^{2k+3,0}(c)`, with `l^k` the
/// Lagrange polynomials on the `(k+1)`-point Gauss-Legendre nodes. Orthogonal on every
/// vertex-mapped pyramid.
///
/// Flat ordering: layers by ascending `k`, then `j`, then `i`.
#[derive(Debug, Clone)]
pub struct SemiNodalBasis {
    order: usize,
    indices: Vec<BasisIndex>,
    layer_rules: Vec<Rule1D>,
    c_norms: Vec<f64>,
    layer_offsets: Vec<usize>,
}

impl SemiNodalBasis {
    pub fn new(order: usize) -> Result<Self> {
        check_order(order)?;
        let mut indices = Vec::with_capacity(num_basis(order));
        let mut layer_rules = Vec::with_capacity(order + 1);
        let mut layer_offsets = Vec::with_capacity(order + 1);
        for k in 0..=order {
            layer_offsets.push(indices.len());
            layer_rules.push(gauss_legendre(k + 1)?);
            for j in 0..=k {
                for i in 0..=k {
                    let flat = indices.len();
                    indices.push(BasisIndex { i, j, k, flat });
                }
            }
        }
        Ok(Self {
            order,
            indices,
            layer_rules,
            c_norms: c_norms(order)?,
            layer_offsets,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[BasisIndex] {
        &self.indices
    }

    /// Gauss-Legendre rule whose nodes carry layer `k`.
    pub fn layer_rule(&self, k: usize) -> &Rule1D {
        &self.layer_rules[k]
    }

    pub fn c_norms(&self) -> &[f64] {
        &self.c_norms
    }

    pub fn flat_index(&self, i: usize, j: usize, k: usize) -> usize {
        self.layer_offsets[k] + j * (k + 1) + i
    }

    /// Reference-element (`J = 1`) squared norms `w_i^k w_j^k D_k`.
    pub fn reference_norms(&self) -> Vec<f64> {
        self.indices
            .iter()
            .map(|ix| {
                let w = &self.layer_rules[ix.k].weights;
                w[ix.i] * w[ix.j] * self.c_norms[ix.k]
            })
            .collect()
    }

    fn c_factor(&self, k: usize, c: f64) -> (f64, f64) {
        let n = self.order;
        let h = 0.5 * (1.0 - c);
        let alpha = 2.0 * k as f64 + 3.0;
        let p = jacobi_unchecked(n - k, alpha, 0.0, c);
        let dp = jacobi_deriv_unchecked(n - k, alpha, 0.0, c);
        let hk = h.powi(k as i32);
        let dhk = if k == 0 {
            0.0
        } else {
            -0.5 * k as f64 * h.powi(k as i32 - 1)
        };
        (hk * p, dhk * p + hk * dp)
    }

    /// Basis values at a collapsed-coordinate point.
    pub fn eval(&self, a: f64, b: f64, c: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(a, b, c, &mut out);
        out
    }

    pub fn eval_into(&self, a: f64, b: f64, c: f64, out: &mut [f64]) {
        for k in 0..=self.order {
            let nodes = &self.layer_rules[k].nodes;
            let (ck, _) = self.c_factor(k, c);
            let la: Vec<f64> = (0..=k).map(|i| lagrange_unchecked(nodes, i, a)).collect();
            let lb: Vec<f64> = (0..=k).map(|j| lagrange_unchecked(nodes, j, b)).collect();
            let off = self.layer_offsets[k];
            for j in 0..=k {
                for i in 0..=k {
                    out[off + j * (k + 1) + i] = la[i] * lb[j] * ck;
                }
            }
        }
    }

    /// Basis values and reference gradients `(d/dr, d/ds, d/dt)`.
    pub fn eval_with_gradients(&self, a: f64, b: f64, c: f64) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
        check_apex(c)?;
        let np = self.len();
        let mut vals = vec![0.0; np];
        let mut grads = vec![[0.0; 3]; np];
        let inv = 1.0 / (1.0 - c);
        for k in 0..=self.order {
            let nodes = &self.layer_rules[k].nodes;
            let (ck, dck) = self.c_factor(k, c);
            let la: Vec<f64> = (0..=k).map(|i| lagrange_unchecked(nodes, i, a)).collect();
            let lb: Vec<f64> = (0..=k).map(|j| lagrange_unchecked(nodes, j, b)).collect();
            let dla: Vec<f64> = (0..=k).map(|i| lagrange_deriv_unchecked(nodes, i, a)).collect();
            let dlb: Vec<f64> = (0..=k).map(|j| lagrange_deriv_unchecked(nodes, j, b)).collect();
            let off = self.layer_offsets[k];
            for j in 0..=k {
                for i in 0..=k {
                    let m = off + j * (k + 1) + i;
                    let phi_a = dla[i] * lb[j] * ck;
                    let phi_b = la[i] * dlb[j] * ck;
                    let phi_c = la[i] * lb[j] * dck;
                    vals[m] = la[i] * lb[j] * ck;
                    grads[m] = [
                        2.0 * inv * phi_a,
                        2.0 * inv * phi_b,
                        (1.0 + a) * inv * phi_a + (1.0 + b) * inv * phi_b + phi_c,
                    ];
                }
            }
        }
        Ok((vals, grads))
    }
}

/// Values and reference gradients of the order-`n` semi-nodal basis.
pub fn seminodal_eval(n: usize, a: f64, b: f64, c: f64) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
    SemiNodalBasis::new(n)?.eval_with_gradients(a, b, c)
}

/// Diagonal c-direction constants `D_k = int ((1-c)/2)^{2k+2} (P_{N-k}^{2k+3,0})^2 dc`,
/// integrated exactly with a Gauss-Jacobi `(2k+2, 0)` rule.
pub fn c_norms(n: usize) -> Result<Vec<f64>> {
    check_order(n)?;
    (0..=n)
        .map(|k| {
            let weight_exp = 2 * k + 2;
            let rule = gauss_rule(n - k + 1, weight_exp as f64, 0.0)?;
            let alpha = 2.0 * k as f64 + 3.0;
            let raw = rule.integrate(|c| jacobi_unchecked(n - k, alpha, 0.0, c).powi(2));
            Ok(raw / 2f64.powi(weight_exp as i32))
        })
        .collect()
}

/// Orthonormal rational basis on the reference pyramid,
/// `psi_ijk = 2^{mu+1} p_i(a) p_j(b) ((1-c)/2)^mu q_k^{2mu+2,0}(c)` with `mu = max(i, j)`,
/// `p` orthonormal Legendre and `q` orthonormal Jacobi polynomials.
///
/// Ordering: `i`, then `j`, then `k` in `0..=N-mu`.
#[derive(Debug, Clone)]
pub struct RationalBasis {
    order: usize,
    indices: Vec<[usize; 3]>,
}

impl RationalBasis {
    pub fn new(order: usize) -> Result<Self> {
        check_order(order)?;
        let mut indices = Vec::with_capacity(num_basis(order));
        for i in 0..=order {
            for j in 0..=order {
                let mu = i.max(j);
                for k in 0..=(order - mu) {
                    indices.push([i, j, k]);
                }
            }
        }
        Ok(Self { order, indices })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[[usize; 3]] {
        &self.indices
    }

    pub fn eval(&self, a: f64, b: f64, c: f64) -> Vec<f64> {
        let n = self.order;
        let leg = |m: usize, x: f64| {
            jacobi_unchecked(m, 0.0, 0.0, x) / jacobi_norm_sq_unchecked(m, 0.0, 0.0).sqrt()
        };
        let pa: Vec<f64> = (0..=n).map(|m| leg(m, a)).collect();
        let pb: Vec<f64> = (0..=n).map(|m| leg(m, b)).collect();
        let h = 0.5 * (1.0 - c);
        self.indices
            .iter()
            .map(|&[i, j, k]| {
                let mu = i.max(j);
                let alpha = 2.0 * mu as f64 + 2.0;
                let q = jacobi_unchecked(k, alpha, 0.0, c)
                    / jacobi_norm_sq_unchecked(k, alpha, 0.0).sqrt();
                2f64.powi(mu as i32 + 1) * pa[i] * pb[j] * h.powi(mu as i32) * q
            })
            .collect()
    }
}

pub fn rational_basis_eval(n: usize, a: f64, b: f64, c: f64) -> Result<Vec<f64>> {
    Ok(RationalBasis::new(n)?.eval(a, b, c))
}

/// Quadrature on the reference pyramid or on its surface.
///
/// `points` are reference coordinates `(r, s, t)`, `cube_points` the same points in
/// collapsed coordinates `(a, b, c)`. Surface rules carry the local face of each point;
/// their weights include the reference area element.
#[derive(Debug, Clone)]
pub struct Cubature {
    pub points: Vec<[f64; 3]>,
    pub cube_points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub faces: Option<Vec<usize>>,
    /// Points per direction of the underlying tensor rule.
    pub points_1d: usize,
}

impl Cubature {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Points per face for surface rules.
    pub fn points_per_face(&self) -> usize {
        self.points_1d * self.points_1d
    }
}

/// Minimal volume rule for order `n`: `(n+1)^3` points.
pub fn volume_cubature(n: usize) -> Result<Cubature> {
    volume_cubature_with_points(n + 1)
}

/// Tensor Gauss-Legendre (a, b) x Gauss-Jacobi(2,0) (c) rule, mapped to the pyramid. The
/// Duffy factor `(1-c)^2/4` is folded into the weights.
pub fn volume_cubature_with_points(npts: usize) -> Result<Cubature> {
    let gl = gauss_legendre(npts)?;
    let gj = gauss_rule(npts, 2.0, 0.0)?;
    let total = npts * npts * npts;
    let mut points = Vec::with_capacity(total);
    let mut cube_points = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    for kc in 0..npts {
        for jb in 0..npts {
            for ia in 0..npts {
                let (a, b, c) = (gl.nodes[ia], gl.nodes[jb], gj.nodes[kc]);
                points.push(duffy_map(a, b, c));
                cube_points.push([a, b, c]);
                weights.push(gl.weights[ia] * gl.weights[jb] * gj.weights[kc] / 4.0);
            }
        }
    }
    Ok(Cubature {
        points,
        cube_points,
        weights,
        faces: None,
        points_1d: npts,
    })
}

/// Surface rule for order `n`: `(n+1)^2` points on each of the five faces.
pub fn surface_cubature(n: usize) -> Result<Cubature> {
    surface_cubature_with_points(n + 1)
}

/// Quad base: tensor Gauss-Legendre. Triangles: Gauss-Legendre along the base edge times
/// Gauss-Jacobi(1,0) towards the apex, with the collapse factor folded into the weights.
pub fn surface_cubature_with_points(npts: usize) -> Result<Cubature> {
    let gl = gauss_legendre(npts)?;
    let gj = gauss_rule(npts, 1.0, 0.0)?;
    let per_face = npts * npts;
    let mut points = Vec::with_capacity(NUM_FACES * per_face);
    let mut cube_points = Vec::with_capacity(NUM_FACES * per_face);
    let mut weights = Vec::with_capacity(NUM_FACES * per_face);
    let mut faces = Vec::with_capacity(NUM_FACES * per_face);
    let sqrt2 = std::f64::consts::SQRT_2;

    for q in 0..npts {
        for p in 0..npts {
            let (a, b) = (gl.nodes[p], gl.nodes[q]);
            cube_points.push([a, b, -1.0]);
            weights.push(gl.weights[p] * gl.weights[q]);
            faces.push(0);
        }
    }
    // (face id, fixed coordinate axis, fixed value, area scale)
    let tri_faces = [(1, 0, -1.0, 1.0), (2, 0, 1.0, sqrt2), (3, 1, -1.0, 1.0), (4, 1, 1.0, sqrt2)];
    for (face, axis, value, scale) in tri_faces {
        for kc in 0..npts {
            for p in 0..npts {
                let (x, c) = (gl.nodes[p], gj.nodes[kc]);
                let cp = if axis == 0 { [value, x, c] } else { [x, value, c] };
                cube_points.push(cp);
                weights.push(0.5 * scale * gl.weights[p] * gj.weights[kc]);
                faces.push(face);
            }
        }
    }
    for cp in &cube_points {
        points.push(duffy_map(cp[0], cp[1], cp[2]));
    }
    Ok(Cubature {
        points,
        cube_points,
        weights,
        faces: Some(faces),
        points_1d: npts,
    })
}

/// Reference-element operators of the semi-nodal basis at cubature points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSet {
    pub order: usize,
    /// `V[q, m] = phi_m` at volume point `q`.
    pub v: DMatrix<f64>,
    pub dr: DMatrix<f64>,
    pub ds: DMatrix<f64>,
    pub dt: DMatrix<f64>,
    /// Values at surface cubature points.
    pub vf: DMatrix<f64>,
}

pub fn build_operator_set(n: usize) -> Result<OperatorSet> {
    let vol = volume_cubature(n)?;
    let surf = surface_cubature(n)?;
    build_operator_set_with(n, &vol, &surf)
}

pub fn build_operator_set_with(n: usize, vol: &Cubature, surf: &Cubature) -> Result<OperatorSet> {
    let basis = SemiNodalBasis::new(n)?;
    let np = basis.len();
    let nc = vol.len();
    let mut v = DMatrix::zeros(nc, np);
    let mut dr = DMatrix::zeros(nc, np);
    let mut ds = DMatrix::zeros(nc, np);
    let mut dt = DMatrix::zeros(nc, np);
    for (q, &[a, b, c]) in vol.cube_points.iter().enumerate() {
        let (vals, grads) = basis.eval_with_gradients(a, b, c)?;
        for m in 0..np {
            v[(q, m)] = vals[m];
            dr[(q, m)] = grads[m][0];
            ds[(q, m)] = grads[m][1];
            dt[(q, m)] = grads[m][2];
        }
    }
    let mut vf = DMatrix::zeros(surf.len(), np);
    let mut row = vec![0.0; np];
    for (q, &[a, b, c]) in surf.cube_points.iter().enumerate() {
        basis.eval_into(a, b, c, &mut row);
        for m in 0..np {
            vf[(q, m)] = row[m];
        }
    }
    Ok(OperatorSet {
        order: n,
        v,
        dr,
        ds,
        dt,
        vf,
    })
}

fn basis_tables(n: usize) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    let vol = volume_cubature(n)?;
    let sn = SemiNodalBasis::new(n)?;
    let rb = RationalBasis::new(n)?;
    let np = sn.len();
    let mut phi = DMatrix::zeros(vol.len(), np);
    let mut psi = DMatrix::zeros(vol.len(), np);
    for (q, &[a, b, c]) in vol.cube_points.iter().enumerate() {
        let pv = sn.eval(a, b, c);
        let rv = rb.eval(a, b, c);
        for m in 0..np {
            phi[(q, m)] = pv[m];
            psi[(q, m)] = rv[m];
        }
    }
    Ok((phi, psi, DVector::from_vec(vol.weights)))
}

fn check_conditioning(s: &DMatrix<f64>) -> Result<()> {
    let sv = s.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    if cond > 1e12 {
        return Err(PyrError::RankDeficient { cond });
    }
    Ok(())
}

/// Matrix mapping rational-basis coefficients to semi-nodal coefficients, by exact L2
/// projection on the reference element.
pub fn change_of_basis(n: usize) -> Result<DMatrix<f64>> {
    let (phi, psi, w) = basis_tables(n)?;
    let wphi = DMatrix::from_fn(phi.nrows(), phi.ncols(), |q, m| w[q] * phi[(q, m)]);
    let gram = wphi.transpose() * &phi;
    let rhs = wphi.transpose() * &psi;
    let s = gram
        .cholesky()
        .ok_or_else(|| PyrError::RankDeficient { cond: f64::INFINITY })?
        .solve(&rhs);
    check_conditioning(&s)?;
    Ok(s)
}

/// Change of basis into the reference-normalized semi-nodal basis
/// `phi / sqrt(w_i w_j D_k)`. Both bases are orthonormal on the reference pyramid, so this
/// matrix is orthogonal.
pub fn change_of_basis_normalized(n: usize) -> Result<DMatrix<f64>> {
    let s = change_of_basis(n)?;
    let norms = SemiNodalBasis::new(n)?.reference_norms();
    Ok(DMatrix::from_fn(s.nrows(), s.ncols(), |m, p| {
        norms[m].sqrt() * s[(m, p)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn close3(x: [f64; 3], y: [f64; 3], tol: f64) -> bool {
        (0..3).all(|d| (x[d] - y[d]).abs() <= tol)
    }

    #[test]
    fn duffy_examples() {
        assert!(close3(duffy_map(0.0, 0.0, 0.0), [-0.5, -0.5, 0.0], 1e-16));
        assert!(close3(duffy_map(0.3, -0.8, 1.0), [-1.0, -1.0, 1.0], 1e-16));
        assert!(close3(duffy_map(1.0, -1.0, -1.0), [1.0, -1.0, -1.0], 1e-16));
        assert!(close3(duffy_inverse(-0.5, -0.5, 0.0).unwrap(), [0.0, 0.0, 0.0], 1e-16));
        assert!(close3(duffy_inverse(-1.0, -1.0, 0.5).unwrap(), [-1.0, -1.0, 0.5], 1e-16));
        assert!(close3(duffy_inverse(0.2, -0.4, -1.0).unwrap(), [0.2, -0.4, -1.0], 1e-15));
        assert!(matches!(
            duffy_inverse(-1.0, -1.0, 1.0),
            Err(PyrError::Singularity { .. })
        ));
    }

    #[test]
    fn vertex_function_examples() {
        let v = vertex_shape_functions(-1.0, -1.0, -1.0).unwrap();
        assert!(v.iter().zip([1.0, 0.0, 0.0, 0.0, 0.0]).all(|(a, b)| (a - b).abs() < 1e-15));
        let v = vertex_shape_functions(0.0, 0.0, -1.0).unwrap();
        for (m, &expected) in [0.25, 0.25, 0.25, 0.25, 0.0].iter().enumerate() {
            assert_abs_diff_eq!(v[m], expected, epsilon = 1e-15);
        }
        // approaching the apex along the axis of the pyramid
        let t = 1.0 - 1e-9;
        let h = 0.5 * (1.0 - t);
        let v = vertex_shape_functions(h - 1.0, h - 1.0, t).unwrap();
        for (m, &expected) in [0.0, 0.0, 0.0, 0.0, 1.0].iter().enumerate() {
            assert_abs_diff_eq!(v[m], expected, epsilon = 1e-8);
        }
        assert!(vertex_shape_functions(-1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn vertex_cardinality_on_base() {
        for (n, vert) in REFERENCE_VERTICES.iter().take(4).enumerate() {
            let v = vertex_shape_functions(vert[0], vert[1], vert[2]).unwrap();
            for m in 0..5 {
                assert_abs_diff_eq!(v[m], if m == n { 1.0 } else { 0.0 }, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn vertex_gradients_match_finite_differences() {
        let h = 1e-6;
        for &[a, b, c] in &[[0.1, -0.3, 0.2], [-0.8, 0.6, -0.9], [0.9, 0.9, 0.7]] {
            let [r, s, t] = duffy_map(a, b, c);
            let g = vertex_shape_gradients(r, s, t).unwrap();
            for d in 0..3 {
                let mut p = [r, s, t];
                let mut q = [r, s, t];
                p[d] += h;
                q[d] -= h;
                let vp = vertex_shape_functions(p[0], p[1], p[2]).unwrap();
                let vq = vertex_shape_functions(q[0], q[1], q[2]).unwrap();
                for m in 0..5 {
                    assert_abs_diff_eq!(g[m][d], (vp[m] - vq[m]) / (2.0 * h), epsilon = 1e-6);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn vertex_partition_of_unity(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..0.999) {
            let [r, s, t] = duffy_map(a, b, c);
            let v = vertex_shape_functions(r, s, t).unwrap();
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        }

        #[test]
        fn duffy_round_trip(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..0.99) {
            let [r, s, t] = duffy_map(a, b, c);
            let back = duffy_inverse(r, s, t).unwrap();
            prop_assert!(close3(back, [a, b, c], 1e-13));
        }
    }

    #[test]
    fn basis_counts() {
        assert_eq!(SemiNodalBasis::new(2).unwrap().len(), 14);
        assert_eq!(SemiNodalBasis::new(3).unwrap().len(), 30);
        assert_eq!(RationalBasis::new(2).unwrap().len(), 14);
        for n in 0..=10 {
            assert_eq!(RationalBasis::new(n).unwrap().len(), num_basis(n));
            assert_eq!(SemiNodalBasis::new(n).unwrap().len(), num_basis(n));
        }
        assert!(SemiNodalBasis::new(11).is_err());
    }

    #[test]
    fn flat_index_order() {
        let basis = SemiNodalBasis::new(3).unwrap();
        for ix in basis.indices() {
            assert_eq!(basis.flat_index(ix.i, ix.j, ix.k), ix.flat);
            assert!(ix.i <= ix.k && ix.j <= ix.k);
        }
        let ks: Vec<usize> = basis.indices().iter().map(|ix| ix.k).collect();
        assert!(ks.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn order_zero_basis_is_constant() {
        let (vals, grads) = seminodal_eval(0, 0.3, -0.2, 0.1).unwrap();
        assert_eq!(vals, vec![1.0]);
        assert_eq!(grads, vec![[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn c_norm_values() {
        assert_abs_diff_eq!(c_norms(0).unwrap()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c_norms(1).unwrap()[1], 2.0 / 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c_norms(2).unwrap()[0], 2.0 / 3.0, epsilon = 1e-14);
        // D_k = 2/(2k+3), independent of N.
        for n in 0..=10 {
            for (k, d) in c_norms(n).unwrap().into_iter().enumerate() {
                assert!((d - 2.0 / (2.0 * k as f64 + 3.0)).abs() < 1e-13, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn seminodal_gradients_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let basis = SemiNodalBasis::new(4).unwrap();
        let h = 1e-6;
        for _ in 0..50 {
            let a: f64 = rng.random_range(-0.95..0.95);
            let b: f64 = rng.random_range(-0.95..0.95);
            let c: f64 = rng.random_range(-0.95..0.9);
            let [r, s, t] = duffy_map(a, b, c);
            let (_, grads) = basis.eval_with_gradients(a, b, c).unwrap();
            for d in 0..3 {
                let mut p = [r, s, t];
                let mut q = [r, s, t];
                p[d] += h;
                q[d] -= h;
                let cp = duffy_inverse(p[0], p[1], p[2]).unwrap();
                let cq = duffy_inverse(q[0], q[1], q[2]).unwrap();
                let vp = basis.eval(cp[0], cp[1], cp[2]);
                let vq = basis.eval(cq[0], cq[1], cq[2]);
                for m in 0..basis.len() {
                    let fd = (vp[m] - vq[m]) / (2.0 * h);
                    assert!((grads[m][d] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
                }
            }
        }
        assert!(basis.eval_with_gradients(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn volume_cubature_examples() {
        let c0 = volume_cubature(0).unwrap();
        assert_eq!(c0.len(), 1);
        assert!(close3(c0.points[0], [-0.25, -0.25, -0.5], 1e-15));
        assert_abs_diff_eq!(c0.weights[0], 8.0 / 3.0, epsilon = 1e-14);
        for n in 0..=8 {
            let c = volume_cubature(n).unwrap();
            assert_eq!(c.len(), (n + 1).pow(3));
            assert_abs_diff_eq!(c.weights.iter().sum::<f64>(), REFERENCE_VOLUME, epsilon = 1e-12);
            assert!(c.points.iter().all(|p| p[2] < 1.0));
            assert!(c.weights.iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn volume_cubature_exact_for_weighted_products() {
        // Products phi_m phi_n times a bilinear J in (a, b), against (n+3)^3 over-integration.
        let jfun = |a: f64, b: f64| 1.3 + 0.2 * a - 0.15 * b + 0.1 * a * b;
        for n in 1..=4 {
            let basis = SemiNodalBasis::new(n).unwrap();
            let gram = |cub: &Cubature| {
                let np = basis.len();
                let mut g = DMatrix::<f64>::zeros(np, np);
                for (q, &[a, b, c]) in cub.cube_points.iter().enumerate() {
                    let v = basis.eval(a, b, c);
                    let w = cub.weights[q] * jfun(a, b);
                    for i in 0..np {
                        for j in 0..np {
                            g[(i, j)] += w * v[i] * v[j];
                        }
                    }
                }
                g
            };
            let g_min = gram(&volume_cubature(n).unwrap());
            let g_over = gram(&volume_cubature_with_points(n + 3).unwrap());
            assert!((g_min - g_over).amax() < 1e-12);
        }
    }

    #[test]
    fn surface_cubature_areas_and_exactness() {
        for n in 0..=6 {
            let s = surface_cubature(n).unwrap();
            assert_eq!(s.len(), 5 * (n + 1) * (n + 1));
            let faces = s.faces.as_ref().unwrap();
            for f in 0..NUM_FACES {
                let area: f64 = (0..s.len()).filter(|&q| faces[q] == f).map(|q| s.weights[q]).sum();
                // cross-product area of the reference face
                let vs = FACE_VERTICES[f];
                let p = |i: usize| REFERENCE_VERTICES[vs[i]];
                let tri = |x: [f64; 3], y: [f64; 3], z: [f64; 3]| {
                    let u = [y[0] - x[0], y[1] - x[1], y[2] - x[2]];
                    let v = [z[0] - x[0], z[1] - x[1], z[2] - x[2]];
                    let cr = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
                    0.5 * (cr[0] * cr[0] + cr[1] * cr[1] + cr[2] * cr[2]).sqrt()
                };
                let exact = if vs.len() == 4 {
                    tri(p(0), p(1), p(2)) + tri(p(0), p(2), p(3))
                } else {
                    tri(p(0), p(1), p(2))
                };
                assert_abs_diff_eq!(area, exact, epsilon = 1e-13);
                for q in (0..s.len()).filter(|&q| faces[q] == f) {
                    let [r, ss, t] = s.points[q];
                    let n_ = FACE_NORMALS[f];
                    // point lies on the face plane through its first vertex
                    let v0 = p(0);
                    let off = n_[0] * (r - v0[0]) + n_[1] * (ss - v0[1]) + n_[2] * (t - v0[2]);
                    assert!(off.abs() < 1e-14);
                    assert!(t < 1.0);
                }
            }
        }
        // odd symmetry on the base
        let s = surface_cubature(1).unwrap();
        let faces = s.faces.as_ref().unwrap();
        let rs: f64 = (0..s.len())
            .filter(|&q| faces[q] == 0)
            .map(|q| s.weights[q] * s.points[q][0] * s.points[q][1])
            .sum();
        assert!(rs.abs() < 1e-14);
    }

    #[test]
    fn triangle_face_rule_is_exact_to_degree_2n_plus_1() {
        // Face r = -1 is the triangle (s, t) with s, t >= -1, s + t <= 0.
        // Oracle: int s^p t^q over it via a fine 1D Gauss-Legendre in t of the exact s-integral.
        let n = 3;
        let s = surface_cubature(n).unwrap();
        let faces = s.faces.as_ref().unwrap();
        let fine = gauss_legendre(30).unwrap();
        for p in 0..=(2 * n + 1) {
            for q in 0..=(2 * n + 1 - p) {
                let quad: f64 = (0..s.len())
                    .filter(|&m| faces[m] == 1)
                    .map(|m| s.weights[m] * s.points[m][1].powi(p as i32) * s.points[m][2].powi(q as i32))
                    .sum();
                let exact = fine.integrate(|t| {
                    let up: f64 = -t;
                    let inner = (up.powi(p as i32 + 1) - (-1f64).powi(p as i32 + 1)) / (p as f64 + 1.0);
                    inner * t.powi(q as i32)
                });
                assert!((quad - exact).abs() < 1e-13, "p={p} q={q}");
            }
        }
    }

    #[test]
    fn rational_basis_orthonormal() {
        // N = 0 value check: int psi^2 ((1-c)/2)^2 over the cube equals 1.
        let cub = volume_cubature(0).unwrap();
        let v = rational_basis_eval(0, 0.0, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(v[0] * v[0] * cub.weights[0], 1.0, epsilon = 1e-14);
        for n in 0..=5 {
            let rb = RationalBasis::new(n).unwrap();
            let cub = volume_cubature(n).unwrap();
            let np = rb.len();
            let mut g = DMatrix::<f64>::zeros(np, np);
            for (q, &[a, b, c]) in cub.cube_points.iter().enumerate() {
                let v = rb.eval(a, b, c);
                for i in 0..np {
                    for j in 0..np {
                        g[(i, j)] += cub.weights[q] * v[i] * v[j];
                    }
                }
            }
            assert!((g - DMatrix::identity(np, np)).amax() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn seminodal_reference_gram_is_diagonal() {
        for n in 0..=5 {
            let basis = SemiNodalBasis::new(n).unwrap();
            let cub = volume_cubature_with_points(n + 3).unwrap();
            let np = basis.len();
            let mut g = DMatrix::<f64>::zeros(np, np);
            for (q, &[a, b, c]) in cub.cube_points.iter().enumerate() {
                let v = basis.eval(a, b, c);
                for i in 0..np {
                    for j in 0..np {
                        g[(i, j)] += cub.weights[q] * v[i] * v[j];
                    }
                }
            }
            let norms = basis.reference_norms();
            for i in 0..np {
                assert!((g[(i, i)] - norms[i]).abs() < 1e-12);
                for j in 0..np {
                    if i != j {
                        assert!(g[(i, j)].abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn operator_set_shapes_and_derivative() {
        let ops = build_operator_set(0).unwrap();
        assert_eq!(ops.v.shape(), (1, 1));
        assert_abs_diff_eq!(ops.v[(0, 0)], 1.0, epsilon = 1e-15);
        let ops = build_operator_set(2).unwrap();
        assert_eq!(ops.v.shape(), (27, 14));
        assert_eq!(ops.vf.shape(), (45, 14));
        assert_eq!(ops.v.clone().rank(1e-10), 14);

        // Expand r in the basis by projection, then differentiate.
        let n = 2;
        let basis = SemiNodalBasis::new(n).unwrap();
        let cub = volume_cubature(n).unwrap();
        let norms = basis.reference_norms();
        let mut coef = vec![0.0; basis.len()];
        for (q, p) in cub.points.iter().enumerate() {
            for m in 0..basis.len() {
                coef[m] += cub.weights[q] * p[0] * ops.v[(q, m)] / norms[m];
            }
        }
        let u = DVector::from_vec(coef);
        let ur = &ops.dr * &u;
        let us = &ops.ds * &u;
        let ut = &ops.dt * &u;
        for q in 0..cub.len() {
            assert_abs_diff_eq!(ur[q], 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(us[q], 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(ut[q], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn change_of_basis_properties() {
        let s0 = change_of_basis(0).unwrap();
        assert_eq!(s0.shape(), (1, 1));
        assert_abs_diff_eq!(s0[(0, 0)], (3.0f64 / 8.0).sqrt(), epsilon = 1e-14);
        for n in 0..=5 {
            let s = change_of_basis(n).unwrap();
            let np = s.nrows();
            let inv = s.clone().try_inverse().unwrap();
            assert!((&inv * &s - DMatrix::identity(np, np)).amax() < 1e-11);
            let sn = change_of_basis_normalized(n).unwrap();
            assert!((&sn * sn.transpose() - DMatrix::identity(np, np)).amax() < 1e-10);
        }
    }
}
