//! Vertex-mapped pyramids: the map `F = sum_m V_m v_m(r, s, t)` and its metric data.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{PyrError, Result, APEX_TOL};
use crate::refelem::{
    duffy_map, vertex_shape_functions, vertex_shape_gradients, volume_cubature, Cubature,
    FACE_NORMALS, FACE_VERTICES, REFERENCE_VERTICES,
};

/// Determinants below this are treated as degenerate.
pub const MIN_JACOBIAN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VertexMappedPyramid {
    pub vertices: [[f64; 3]; 5],
}

impl VertexMappedPyramid {
    pub fn new(vertices: [[f64; 3]; 5]) -> Self {
        Self { vertices }
    }

    /// The reference pyramid itself.
    pub fn identity() -> Self {
        Self::new(REFERENCE_VERTICES)
    }

    pub fn map_to_physical(&self, r: f64, s: f64, t: f64) -> Result<[f64; 3]> {
        if t >= 1.0 - APEX_TOL {
            // only the apex itself is meaningful here
            if (r + 1.0).abs() <= 1e-10 && (s + 1.0).abs() <= 1e-10 {
                return Ok(self.vertices[4]);
            }
            return Err(PyrError::Singularity { t });
        }
        let v = vertex_shape_functions(r, s, t)?;
        let mut x = [0.0; 3];
        for (m, vm) in v.iter().enumerate() {
            for d in 0..3 {
                x[d] += vm * self.vertices[m][d];
            }
        }
        Ok(x)
    }

    /// Jacobian matrix `dx_i / d(r,s,t)_j` and its determinant.
    pub fn jacobian(&self, r: f64, s: f64, t: f64) -> Result<(Matrix3<f64>, f64)> {
        let g = vertex_shape_gradients(r, s, t)?;
        let mut jac = Matrix3::zeros();
        for (m, gm) in g.iter().enumerate() {
            for i in 0..3 {
                for j in 0..3 {
                    jac[(i, j)] += self.vertices[m][i] * gm[j];
                }
            }
        }
        let det = jac.determinant();
        Ok((jac, det))
    }

    /// Determinant at a collapsed-coordinate point.
    pub fn jacobian_det_collapsed(&self, a: f64, b: f64, c: f64) -> Result<f64> {
        let [r, s, t] = duffy_map(a, b, c);
        Ok(self.jacobian(r, s, t)?.1)
    }

    /// Least-squares fit of `J` sampled on a 3x3x3 collapsed grid to `span{1, a, b, ab}`;
    /// returns the max residual. Zero (to rounding) for every vertex-mapped pyramid.
    pub fn check_j_bilinear(&self) -> Result<f64> {
        let ab_vals = [-1.0, 0.0, 1.0];
        let c_vals = [-1.0, 0.0, 0.5];
        let mut rows = Vec::with_capacity(27);
        let mut rhs = Vec::with_capacity(27);
        for &c in &c_vals {
            for &b in &ab_vals {
                for &a in &ab_vals {
                    rows.push([1.0, a, b, a * b]);
                    rhs.push(self.jacobian_det_collapsed(a, b, c)?);
                }
            }
        }
        let design = DMatrix::from_fn(rows.len(), 4, |i, j| rows[i][j]);
        let y = DVector::from_vec(rhs);
        let coef = design
            .clone()
            .svd(true, true)
            .solve(&y, 1e-14)
            .map_err(|e| PyrError::InvalidParameter(e.to_string()))?;
        Ok((design * coef - y).amax())
    }

    /// `J` at the (n+1)-point volume cubature and at the four base corners; bilinearity in
    /// `(a, b)` makes corner positivity sufficient on the whole element.
    pub fn validate(&self, n: usize) -> Result<()> {
        let check = |a: f64, b: f64, c: f64| -> Result<()> {
            let j = self.jacobian_det_collapsed(a, b, c)?;
            if !(j > MIN_JACOBIAN) {
                return Err(PyrError::DegenerateElement(format!(
                    "J = {j:e} at (a, b, c) = ({a}, {b}, {c})"
                )));
            }
            Ok(())
        };
        for &(a, b) in &[(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
            check(a, b, -1.0)?;
        }
        for &[a, b, c] in &volume_cubature(n)?.cube_points {
            check(a, b, c)?;
        }
        Ok(())
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for v in &self.vertices {
            for d in 0..3 {
                c[d] += v[d] / 5.0;
            }
        }
        c
    }

    pub fn face_centroid(&self, face: usize) -> [f64; 3] {
        let vs = FACE_VERTICES[face];
        let mut c = [0.0; 3];
        for &m in vs {
            for d in 0..3 {
                c[d] += self.vertices[m][d] / vs.len() as f64;
            }
        }
        c
    }

    /// Volume by cubature of `J`. Exact: `J` is bilinear in `(a, b)` and constant in `c`.
    pub fn volume(&self) -> Result<f64> {
        let cub = volume_cubature(1)?;
        cub.points
            .iter()
            .zip(&cub.weights)
            .map(|(p, w)| Ok(w * self.jacobian(p[0], p[1], p[2])?.1))
            .sum()
    }
}

/// Reference pyramid with base vertex `V4 = (1, 1, -1)` lifted to `(1, 1, -1 + gamma)`.
pub fn warped_pyramid(gamma: f64) -> Result<VertexMappedPyramid> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(PyrError::InvalidParameter(format!(
            "warp magnitude must be nonnegative, got {gamma}"
        )));
    }
    let mut vertices = REFERENCE_VERTICES;
    vertices[3][2] += gamma;
    let pyr = VertexMappedPyramid::new(vertices);
    pyr.validate(crate::error::MAX_ORDER)?;
    Ok(pyr)
}

/// Per-point geometric data of one element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricFactors {
    /// Determinant at volume points.
    pub j: Vec<f64>,
    /// `[rx, ry, rz, sx, sy, sz, tx, ty, tz]` at volume points.
    pub metric: Vec<[f64; 9]>,
    /// Outward unit normals at surface points.
    pub normals: Vec<[f64; 3]>,
    /// Ratio of physical to reference area element at surface points.
    pub sj: Vec<f64>,
}

pub fn geometric_factors(
    pyr: &VertexMappedPyramid,
    vol: &Cubature,
    surf: &Cubature,
) -> Result<GeometricFactors> {
    let mut j = Vec::with_capacity(vol.len());
    let mut metric = Vec::with_capacity(vol.len());
    for p in &vol.points {
        let (jac, det) = pyr.jacobian(p[0], p[1], p[2])?;
        if det.abs() < MIN_JACOBIAN || det < 0.0 {
            return Err(PyrError::DegenerateElement(format!(
                "J = {det:e} at reference point {p:?}"
            )));
        }
        let inv = jac
            .try_inverse()
            .ok_or_else(|| PyrError::DegenerateElement("singular Jacobian".into()))?;
        j.push(det);
        metric.push([
            inv[(0, 0)],
            inv[(0, 1)],
            inv[(0, 2)],
            inv[(1, 0)],
            inv[(1, 1)],
            inv[(1, 2)],
            inv[(2, 0)],
            inv[(2, 1)],
            inv[(2, 2)],
        ]);
    }

    let faces = surf
        .faces
        .as_ref()
        .ok_or_else(|| PyrError::InvalidParameter("surface rule without face ids".into()))?;
    let centroid = pyr.centroid();
    let mut normals = Vec::with_capacity(surf.len());
    let mut sj = Vec::with_capacity(surf.len());
    for (q, p) in surf.points.iter().enumerate() {
        let (jac, det) = pyr.jacobian(p[0], p[1], p[2])?;
        if det < MIN_JACOBIAN {
            return Err(PyrError::DegenerateElement(format!(
                "J = {det:e} at surface point {p:?}"
            )));
        }
        let face = faces[q];
        let nref = Vector3::from(FACE_NORMALS[face]);
        // Nanson: n dA = J G^{-T} N dA_ref
        let inv_t = jac.try_inverse().unwrap().transpose();
        let scaled = det * inv_t * nref;
        let area = scaled.norm();
        let n = scaled / area;
        let fc = pyr.face_centroid(face);
        let out = (0..3).map(|d| n[d] * (fc[d] - centroid[d])).sum::<f64>();
        if out <= 0.0 {
            return Err(PyrError::DegenerateElement(format!(
                "normal of face {face} points inward"
            )));
        }
        normals.push([n[0], n[1], n[2]]);
        sj.push(area);
    }
    Ok(GeometricFactors {
        j,
        metric,
        normals,
        sj,
    })
}
