//! Time-explicit DG on pyramid meshes.
//!
//! Coefficients of all fields live in one `Np x (F K)` matrix whose column `f K + e` holds
//! field `f` on element `e`. Each right-hand side runs as a volume stage (derivatives at
//! cubature points), a surface stage (fluxes from interior and exterior traces) and an
//! update stage (one stacked lift/weak-derivative product, then the diagonal mass
//! inverse). Traces at surface cubature points are refreshed after every update.

mod advection;
mod cache;
mod drivers;
mod lsrk;
mod spectral;
mod wave;

pub use advection::{advection_rhs, advection_volume_term, Advection};
pub use cache::{cache_file_name, CacheStatus, GeometryCache, CACHE_FORMAT_VERSION};
pub use drivers::{
    advection_convergence_run, convergence_rate, run_advection, run_wave_cavity, RunSummary,
};
pub use lsrk::{lsrk4_step, RK4A, RK4B, RK4C};
pub use spectral::{
    advection_operator, assemble_dense, estimate_spectral_radius, wave_operator, LinearOperator, SpectralEstimate,
    ARNOLDI_SUBSPACE, ARNOLDI_TOL,
};
pub use wave::{wave_rhs, wave_volume_terms, WaveMaterial, WAVE_FIELDS};

use std::path::Path;

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PyrError, Result};
use crate::geometry::geometric_factors;
use crate::massops::diag_mass_with;
use crate::mesh::{connect_faces, FaceKind, PyramidMesh};
use crate::refelem::{
    build_operator_set_with, surface_cubature, volume_cubature_with_points, OperatorSet,
    SemiNodalBasis, NUM_FACES,
};

/// Columns per parallel gemm task.
const GEMM_CHUNK: usize = 128;

/// `c = a * b`, split over column blocks of `b` and `c`.
pub(crate) fn gemm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, k) = a.shape();
    let n = b.ncols();
    debug_assert_eq!(b.nrows(), k);
    let mut c = DMatrix::zeros(m, n);
    if m == 0 || n == 0 {
        return c;
    }
    c.as_mut_slice()
        .par_chunks_mut(m * GEMM_CHUNK)
        .zip(b.as_slice().par_chunks(k * GEMM_CHUNK))
        .for_each(|(cc, bc)| {
            let cols = bc.len() / k;
            let bv = DMatrixView::from_slice(bc, k, cols);
            let mut cv = DMatrixViewMut::from_slice(cc, m, cols);
            cv.gemm(1.0, a, &bv, 0.0);
        });
    c
}

/// Per-element data needed by the right-hand sides, built once per (mesh, order).
#[derive(Debug, Clone)]
pub struct DgContext {
    pub order: usize,
    pub mesh: PyramidMesh,
    pub ops: OperatorSet,
    pub np: usize,
    /// Volume cubature points per element.
    pub nc: usize,
    /// Surface cubature points per element.
    pub nfc: usize,
    pub per_face: usize,
    pub k: usize,
    /// `[Dr; Ds; Dt]`.
    dstack: DMatrix<f64>,
    /// `[V^T  Vf^T]`.
    lift: DMatrix<f64>,
    /// `w J` at volume points, index `e nc + q`.
    pub wj: Vec<f64>,
    /// `[rx ry rz sx sy sz tx ty tz]` at volume points.
    pub metric: Vec<[f64; 9]>,
    /// Outward unit normals at surface points, index `e nfc + q`.
    pub normals: Vec<[f64; 3]>,
    /// `w sJ` at surface points.
    pub wsj: Vec<f64>,
    /// Diagonal mass entries, index `e np + m`.
    pub mass: Vec<f64>,
    pub inv_mass: Vec<f64>,
    pub x_vol: Vec<[f64; 3]>,
    pub x_surf: Vec<[f64; 3]>,
    /// Surface point holding the exterior trace of each surface point.
    pub ext: Vec<usize>,
    /// Kind of the face each surface point lies on.
    pub point_kind: Vec<FaceKind>,
    /// Volume over surface area of each element.
    pub elem_h: Vec<f64>,
    pub quad: QuadratureTable,
}

/// `(N+3)^3` over-integration rule evaluated on every element, used for projection,
/// errors and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureTable {
    pub npts: usize,
    /// Basis values, `npts x Np`.
    pub phi: DMatrix<f64>,
    /// `w J`, index `e npts + q`.
    pub wj: Vec<f64>,
    pub x: Vec<[f64; 3]>,
}

impl DgContext {
    /// Context with the minimal `(N+1)^3` volume rule.
    pub fn new(mesh: PyramidMesh, n: usize) -> Result<Self> {
        Self::with_volume_points(mesh, n, n + 1)
    }

    /// Context whose volume terms use an `npts^3` rule.
    pub fn with_volume_points(mut mesh: PyramidMesh, n: usize, npts: usize) -> Result<Self> {
        if npts < n + 1 {
            return Err(PyrError::InvalidParameter(format!(
                "volume rule with {npts} points per direction cannot integrate the order-{n} mass"
            )));
        }
        if mesh.order != n {
            mesh.faces = connect_faces(&mesh, n)?;
            mesh.order = n;
        }
        let vol = volume_cubature_with_points(npts)?;
        let surf = surface_cubature(n)?;
        let ops = build_operator_set_with(n, &vol, &surf)?;
        let basis = SemiNodalBasis::new(n)?;
        let (np, nc, nfc) = (basis.len(), vol.len(), surf.len());
        let k = mesh.num_elements();

        let mut wj = Vec::with_capacity(k * nc);
        let mut metric = Vec::with_capacity(k * nc);
        let mut normals = Vec::with_capacity(k * nfc);
        let mut wsj = Vec::with_capacity(k * nfc);
        let mut mass = Vec::with_capacity(k * np);
        let mut x_vol = Vec::with_capacity(k * nc);
        let mut x_surf = Vec::with_capacity(k * nfc);
        let mut elem_h = Vec::with_capacity(k);
        for e in 0..k {
            let pyr = mesh.element(e);
            let gf = geometric_factors(&pyr, &vol, &surf)?;
            let mut volume = 0.0;
            for q in 0..nc {
                wj.push(vol.weights[q] * gf.j[q]);
                volume += vol.weights[q] * gf.j[q];
                let p = vol.points[q];
                x_vol.push(pyr.map_to_physical(p[0], p[1], p[2])?);
            }
            metric.extend_from_slice(&gf.metric);
            let mut area = 0.0;
            for q in 0..nfc {
                wsj.push(surf.weights[q] * gf.sj[q]);
                area += surf.weights[q] * gf.sj[q];
                let p = surf.points[q];
                x_surf.push(pyr.map_to_physical(p[0], p[1], p[2])?);
            }
            normals.extend_from_slice(&gf.normals);
            mass.extend(diag_mass_with(&pyr, &basis)?.entries);
            elem_h.push(volume / area);
        }
        let inv_mass = mass.iter().map(|m| 1.0 / m).collect();

        let per_face = surf.points_per_face();
        let mut ext = Vec::with_capacity(k * nfc);
        let mut point_kind = Vec::with_capacity(k * nfc);
        for e in 0..k {
            for f in 0..NUM_FACES {
                let fc = mesh.face(e, f);
                for lq in 0..per_face {
                    let idx = match fc.neighbor {
                        Some((pe, pf)) => pe * nfc + pf * per_face + fc.permutation[lq],
                        None => e * nfc + f * per_face + lq,
                    };
                    ext.push(idx);
                    point_kind.push(fc.kind);
                }
            }
        }

        let quad = QuadratureTable::build(&mesh, &basis, n + 3)?;
        Ok(Self::assemble(
            n, mesh, ops, np, nc, nfc, per_face, wj, metric, normals, wsj, mass, inv_mass, x_vol,
            x_surf, ext, point_kind, elem_h, quad,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        order: usize,
        mesh: PyramidMesh,
        ops: OperatorSet,
        np: usize,
        nc: usize,
        nfc: usize,
        per_face: usize,
        wj: Vec<f64>,
        metric: Vec<[f64; 9]>,
        normals: Vec<[f64; 3]>,
        wsj: Vec<f64>,
        mass: Vec<f64>,
        inv_mass: Vec<f64>,
        x_vol: Vec<[f64; 3]>,
        x_surf: Vec<[f64; 3]>,
        ext: Vec<usize>,
        point_kind: Vec<FaceKind>,
        elem_h: Vec<f64>,
        quad: QuadratureTable,
    ) -> Self {
        let mut dstack = DMatrix::zeros(3 * nc, np);
        dstack.rows_mut(0, nc).copy_from(&ops.dr);
        dstack.rows_mut(nc, nc).copy_from(&ops.ds);
        dstack.rows_mut(2 * nc, nc).copy_from(&ops.dt);
        let mut lift = DMatrix::zeros(np, nc + nfc);
        lift.columns_mut(0, nc).copy_from(&ops.v.transpose());
        lift.columns_mut(nc, nfc).copy_from(&ops.vf.transpose());
        let k = mesh.num_elements();
        Self {
            order,
            mesh,
            ops,
            np,
            nc,
            nfc,
            per_face,
            k,
            dstack,
            lift,
            wj,
            metric,
            normals,
            wsj,
            mass,
            inv_mass,
            x_vol,
            x_surf,
            ext,
            point_kind,
            elem_h,
            quad,
        }
    }

    /// Loads geometry from a cache file keyed by (mesh hash, order), building and writing
    /// it when the file is missing or belongs to another mesh, order or format version.
    pub fn load_or_build(mesh: PyramidMesh, n: usize, path: &Path) -> Result<(Self, CacheStatus)> {
        cache::load_or_build(mesh, n, path)
    }

    /// Smallest element volume-to-area ratio.
    pub fn h_min(&self) -> f64 {
        self.elem_h.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Step `cfl * 3 h_min / (2 (N+1) (N+3) c_max)`.
    pub fn stable_dt(&self, c_max: f64, cfl: f64) -> f64 {
        let n = self.order as f64;
        cfl * 3.0 * self.h_min() / (2.0 * (n + 1.0) * (n + 3.0) * c_max)
    }

    /// Stable step further capped at `h^2` (`h = 2 / K1D`), shrunk so that an integer
    /// number of steps lands on `final_time`.
    pub fn convergence_steps(&self, c_max: f64, cfl: f64, final_time: f64) -> (f64, usize) {
        let h = self.mesh.h();
        let dt = self.stable_dt(c_max, cfl).min(h * h);
        let steps = (final_time / dt).ceil().max(1.0) as usize;
        (final_time / steps as f64, steps)
    }

    pub(crate) fn traces_of(&self, coeffs: &DMatrix<f64>) -> DMatrix<f64> {
        gemm(&self.ops.vf, coeffs)
    }

    /// Reference gradients `[Dr; Ds; Dt] u` at volume points.
    pub(crate) fn reference_gradients(&self, coeffs: &DMatrix<f64>) -> DMatrix<f64> {
        gemm(&self.dstack, coeffs)
    }

    /// `[V^T Vf^T] z` for stacked volume/surface integrands.
    pub(crate) fn lift_stacked(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        gemm(&self.lift, z)
    }

    /// Physical gradient at volume point `q` of element `e` from column `col` of the
    /// reference gradients.
    #[inline]
    pub(crate) fn physical_gradient(&self, grads: &DMatrix<f64>, col: usize, e: usize, q: usize) -> [f64; 3] {
        let nc = self.nc;
        let g = grads.column(col);
        let (ur, us, ut) = (g[q], g[nc + q], g[2 * nc + q]);
        let m = &self.metric[e * self.nc + q];
        [
            m[0] * ur + m[3] * us + m[6] * ut,
            m[1] * ur + m[4] * us + m[7] * ut,
            m[2] * ur + m[5] * us + m[8] * ut,
        ]
    }

    pub(crate) fn check_coefficients(&self, coeffs: &DMatrix<f64>, nfields: usize) -> Result<()> {
        if coeffs.nrows() != self.np || coeffs.ncols() != nfields * self.k {
            return Err(PyrError::ShapeMismatch(format!(
                "expected {} x {} coefficients, got {} x {}",
                self.np,
                nfields * self.k,
                coeffs.nrows(),
                coeffs.ncols()
            )));
        }
        Ok(())
    }

    /// L2 projection of `f` (writing `nfields` values per point) onto the semi-nodal space.
    pub fn project<F>(&self, nfields: usize, f: F) -> Result<DgState>
    where
        F: Fn([f64; 3], &mut [f64]),
    {
        let q = &self.quad;
        let mut coeffs = DMatrix::zeros(self.np, nfields * self.k);
        let mut vals = vec![0.0; nfields];
        let mut moments = DMatrix::zeros(q.npts, nfields * self.k);
        for e in 0..self.k {
            for p in 0..q.npts {
                let i = e * q.npts + p;
                f(q.x[i], &mut vals);
                for (fi, v) in vals.iter().enumerate() {
                    moments[(p, fi * self.k + e)] = q.wj[i] * v;
                }
            }
        }
        let raw = gemm(&q.phi.transpose(), &moments);
        for col in 0..nfields * self.k {
            let e = col % self.k;
            for m in 0..self.np {
                coeffs[(m, col)] = raw[(m, col)] * self.inv_mass[e * self.np + m];
            }
        }
        DgState::from_coefficients(self, nfields, coeffs)
    }

    /// `sqrt(sum_K int |u_h - exact|^2)` over all fields, by the over-integration rule.
    pub fn l2_error<F>(&self, state: &DgState, exact: F) -> Result<f64>
    where
        F: Fn([f64; 3], f64, &mut [f64]),
    {
        self.check_coefficients(&state.coeffs, state.nfields)?;
        let q = &self.quad;
        let vals = gemm(&q.phi, &state.coeffs);
        let mut ex = vec![0.0; state.nfields];
        let mut err = 0.0;
        for e in 0..self.k {
            for p in 0..q.npts {
                let i = e * q.npts + p;
                exact(q.x[i], state.t, &mut ex);
                let mut local = 0.0;
                for (fi, v) in ex.iter().enumerate() {
                    local += (vals[(p, fi * self.k + e)] - v).powi(2);
                }
                err += q.wj[i] * local;
            }
        }
        Ok(err.sqrt())
    }

    /// `sum_K int u^2 / 2`, exact through the diagonal mass.
    pub fn advection_energy(&self, state: &DgState) -> f64 {
        0.5 * self.weighted_norm_sq(state, 0)
    }

    /// `sum_K int (p^2 / kappa + rho |u|^2) / 2`.
    pub fn wave_energy(&self, state: &DgState, material: &WaveMaterial) -> f64 {
        let mut total = 0.0;
        for e in 0..self.k {
            let (rho, kappa) = (material.rho[e], material.kappa[e]);
            for f in 0..state.nfields.min(WAVE_FIELDS) {
                let scale = if f == 0 { 1.0 / kappa } else { rho };
                let col = state.coeffs.column(f * self.k + e);
                let mut s = 0.0;
                for m in 0..self.np {
                    s += self.mass[e * self.np + m] * col[m] * col[m];
                }
                total += 0.5 * scale * s;
            }
        }
        total
    }

    fn weighted_norm_sq(&self, state: &DgState, field: usize) -> f64 {
        let mut total = 0.0;
        for e in 0..self.k {
            let col = state.coeffs.column(field * self.k + e);
            for m in 0..self.np {
                total += self.mass[e * self.np + m] * col[m] * col[m];
            }
        }
        total
    }

    /// `sum_K int u` for field `field`.
    pub fn integral(&self, state: &DgState, field: usize) -> f64 {
        let q = &self.quad;
        let vals = gemm(&q.phi, &state.coeffs.columns(field * self.k, self.k).into_owned());
        let mut total = 0.0;
        for e in 0..self.k {
            for p in 0..q.npts {
                total += q.wj[e * q.npts + p] * vals[(p, e)];
            }
        }
        total
    }
}

impl QuadratureTable {
    fn build(mesh: &PyramidMesh, basis: &SemiNodalBasis, npts: usize) -> Result<Self> {
        let rule = volume_cubature_with_points(npts)?;
        let nq = rule.len();
        let mut phi = DMatrix::zeros(nq, basis.len());
        for (q, &[a, b, c]) in rule.cube_points.iter().enumerate() {
            let v = basis.eval(a, b, c);
            for (m, x) in v.iter().enumerate() {
                phi[(q, m)] = *x;
            }
        }
        let k = mesh.num_elements();
        let mut wj = Vec::with_capacity(k * nq);
        let mut x = Vec::with_capacity(k * nq);
        for e in 0..k {
            let pyr = mesh.element(e);
            for (q, p) in rule.points.iter().enumerate() {
                let (_, j) = pyr.jacobian(p[0], p[1], p[2])?;
                wj.push(rule.weights[q] * j);
                x.push(pyr.map_to_physical(p[0], p[1], p[2])?);
            }
        }
        Ok(Self { npts: nq, phi, wj, x })
    }
}

/// Coefficients, traces and Runge-Kutta residual of `nfields` fields.
#[derive(Debug, Clone, PartialEq)]
pub struct DgState {
    pub nfields: usize,
    pub t: f64,
    coeffs: DMatrix<f64>,
    traces: DMatrix<f64>,
    pub(crate) residual: DMatrix<f64>,
    fresh: bool,
}

impl DgState {
    pub fn zeros(ctx: &DgContext, nfields: usize) -> Self {
        Self {
            nfields,
            t: 0.0,
            coeffs: DMatrix::zeros(ctx.np, nfields * ctx.k),
            traces: DMatrix::zeros(ctx.nfc, nfields * ctx.k),
            residual: DMatrix::zeros(ctx.np, nfields * ctx.k),
            fresh: true,
        }
    }

    pub fn from_coefficients(ctx: &DgContext, nfields: usize, coeffs: DMatrix<f64>) -> Result<Self> {
        ctx.check_coefficients(&coeffs, nfields)?;
        let traces = ctx.traces_of(&coeffs);
        Ok(Self {
            nfields,
            t: 0.0,
            residual: DMatrix::zeros(coeffs.nrows(), coeffs.ncols()),
            coeffs,
            traces,
            fresh: true,
        })
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    /// Mutable coefficients; traces become stale until [`DgState::refresh_traces`].
    pub fn coefficients_mut(&mut self) -> &mut DMatrix<f64> {
        self.fresh = false;
        &mut self.coeffs
    }

    /// Coefficients of `field` on element `e`.
    pub fn element(&self, k: usize, field: usize, e: usize) -> &[f64] {
        let np = self.coeffs.nrows();
        let col = field * k + e;
        &self.coeffs.as_slice()[col * np..(col + 1) * np]
    }

    pub fn is_fresh(&self) -> bool {
        self.fresh
    }

    pub fn refresh_traces(&mut self, ctx: &DgContext) {
        self.traces = ctx.traces_of(&self.coeffs);
        self.fresh = true;
    }

    /// Values at surface cubature points; fails when coefficients changed since the last
    /// refresh.
    pub fn traces(&self) -> Result<&DMatrix<f64>> {
        if !self.fresh {
            return Err(PyrError::StaleTraces);
        }
        Ok(&self.traces)
    }

    pub fn as_vector(&self) -> Vec<f64> {
        self.coeffs.as_slice().to_vec()
    }
}

/// Advection test solution `sin(pi (x - t))` for `beta = (1, 0, 0)`.
pub fn advection_exact(x: [f64; 3], t: f64) -> f64 {
    (std::f64::consts::PI * (x[0] - t)).sin()
}

/// Standing wave in `[-1, 1]^3` with `p = 0` on the boundary and `rho = kappa = 1`:
/// `[p, u1, u2, u3]`.
pub fn resonant_cavity(x: [f64; 3], t: f64) -> [f64; 4] {
    use std::f64::consts::PI;
    let w = 3f64.sqrt() * PI / 2.0;
    let (c, s) = (x.map(|v| (0.5 * PI * v).cos()), x.map(|v| (0.5 * PI * v).sin()));
    let amp = (w * t).sin() / 3f64.sqrt();
    [
        c[0] * c[1] * c[2] * (w * t).cos(),
        amp * s[0] * c[1] * c[2],
        amp * c[0] * s[1] * c[2],
        amp * c[0] * c[1] * s[2],
    ]
}

/// One CSV diagnostics row emitted by the solvers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    pub l2_error: Option<f64>,
}
