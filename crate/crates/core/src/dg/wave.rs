use nalgebra::DMatrix;

use super::{DgContext, DgState};
use crate::error::{PyrError, Result};
use crate::mesh::FaceKind;

/// Fields `p, u1, u2, u3`.
pub const WAVE_FIELDS: usize = 4;

/// Piecewise-constant density and bulk modulus.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveMaterial {
    pub rho: Vec<f64>,
    pub kappa: Vec<f64>,
    /// Multiplies both penalty parameters; 1 gives the upwind-type fluxes, 0 central.
    pub penalty_scale: f64,
}

impl WaveMaterial {
    pub fn uniform(ctx: &DgContext, rho: f64, kappa: f64) -> Result<Self> {
        Self::new(vec![rho; ctx.k], vec![kappa; ctx.k])
    }

    pub fn new(rho: Vec<f64>, kappa: Vec<f64>) -> Result<Self> {
        if rho.len() != kappa.len() {
            return Err(PyrError::ShapeMismatch(format!(
                "{} densities but {} bulk moduli",
                rho.len(),
                kappa.len()
            )));
        }
        if let Some(bad) = rho.iter().chain(&kappa).find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(PyrError::InvalidParameter(format!(
                "density and bulk modulus must be positive, got {bad}"
            )));
        }
        Ok(Self {
            rho,
            kappa,
            penalty_scale: 1.0,
        })
    }

    pub fn with_penalty_scale(mut self, scale: f64) -> Self {
        self.penalty_scale = scale;
        self
    }

    /// Sound speed `sqrt(kappa / rho)` of element `e`.
    pub fn c(&self, e: usize) -> f64 {
        (self.kappa[e] / self.rho[e]).sqrt()
    }

    pub fn c_max(&self) -> f64 {
        (0..self.rho.len()).map(|e| self.c(e)).fold(0.0, f64::max)
    }

    fn impedance(&self, e: usize) -> f64 {
        self.rho[e] * self.c(e)
    }

    fn check(&self, ctx: &DgContext) -> Result<()> {
        if self.rho.len() != ctx.k {
            return Err(PyrError::ShapeMismatch(format!(
                "material has {} elements, mesh {}",
                self.rho.len(),
                ctx.k
            )));
        }
        Ok(())
    }
}

fn volume_integrands(ctx: &DgContext, coeffs: &DMatrix<f64>, z: &mut DMatrix<f64>) {
    let k = ctx.k;
    let grads = ctx.reference_gradients(coeffs);
    for e in 0..k {
        for q in 0..ctx.nc {
            let wj = ctx.wj[e * ctx.nc + q];
            let gp = ctx.physical_gradient(&grads, e, e, q);
            let mut div = 0.0;
            for d in 0..3 {
                div += ctx.physical_gradient(&grads, (d + 1) * k + e, e, q)[d];
                z[(q, (d + 1) * k + e)] = wj * gp[d];
            }
            z[(q, e)] = wj * div;
        }
    }
}

/// Unscaled volume terms: `sum_k S^k u_k` for `p` and `S^k p` for `u_k`, `Np x 4K`.
pub fn wave_volume_terms(ctx: &DgContext, state: &DgState) -> Result<DMatrix<f64>> {
    ctx.check_coefficients(state.coefficients(), WAVE_FIELDS)?;
    let mut z = DMatrix::zeros(ctx.nc, WAVE_FIELDS * ctx.k);
    volume_integrands(ctx, state.coefficients(), &mut z);
    Ok(super::gemm(&ctx.ops.v.transpose(), &z))
}

/// Acoustic right-hand side
/// `dp/dt = -kappa M^{-1} (sum_k S^k u_k + L P_p)`,
/// `du_k/dt = -M^{-1} (S^k p + L^k P_u) / rho`, with
/// `P_p = (n.[[u]] - tau_p [[p]]) / 2`, `P_u = ([[p]] - tau_u n.[[u]]) / 2`,
/// `[[q]] = q+ - q-`, `tau_p = 1 / {rho c}`, `tau_u = {rho c}`.
///
/// Free-surface faces mirror the interior: `p+ = -p-`, `u+ = u-`.
pub fn wave_rhs(ctx: &DgContext, state: &DgState, material: &WaveMaterial) -> Result<DMatrix<f64>> {
    material.check(ctx)?;
    ctx.check_coefficients(state.coefficients(), WAVE_FIELDS)?;
    let traces = state.traces()?;
    let (k, nc, nfc) = (ctx.k, ctx.nc, ctx.nfc);
    let mut z = DMatrix::zeros(nc + nfc, WAVE_FIELDS * k);
    volume_integrands(ctx, state.coefficients(), &mut z);

    let tr = traces.as_slice();
    let stride = nfc * k;
    for e in 0..k {
        let zm = material.impedance(e);
        for q in 0..nfc {
            let i = e * nfc + q;
            let pm = tr[i];
            let um = [tr[stride + i], tr[2 * stride + i], tr[3 * stride + i]];
            let (pp, up, zp) = match ctx.point_kind[i] {
                FaceKind::FreeSurface => (-pm, um, zm),
                _ => {
                    let j = ctx.ext[i];
                    let pe = j / nfc;
                    (
                        tr[j],
                        [tr[stride + j], tr[2 * stride + j], tr[3 * stride + j]],
                        material.impedance(pe),
                    )
                }
            };
            let avg = 0.5 * (zm + zp);
            let tau_p = material.penalty_scale / avg;
            let tau_u = material.penalty_scale * avg;
            let n = ctx.normals[i];
            let dp = pp - pm;
            let ndu = n[0] * (up[0] - um[0]) + n[1] * (up[1] - um[1]) + n[2] * (up[2] - um[2]);
            let pen_p = 0.5 * (ndu - tau_p * dp);
            let pen_u = 0.5 * (dp - tau_u * ndu);
            let w = ctx.wsj[i];
            z[(nc + q, e)] = w * pen_p;
            for d in 0..3 {
                z[(nc + q, (d + 1) * k + e)] = w * n[d] * pen_u;
            }
        }
    }

    let mut rhs = ctx.lift_stacked(&z);
    for f in 0..WAVE_FIELDS {
        for e in 0..k {
            let scale = if f == 0 {
                -material.kappa[e]
            } else {
                -1.0 / material.rho[e]
            };
            let mut col = rhs.column_mut(f * k + e);
            for m in 0..ctx.np {
                col[m] *= scale * ctx.inv_mass[e * ctx.np + m];
            }
        }
    }
    Ok(rhs)
}
