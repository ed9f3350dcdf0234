use nalgebra::DMatrix;

use super::{DgContext, DgState};
use crate::error::{PyrError, Result};
use crate::mesh::FaceKind;

/// Advection velocity sampled at the context's cubature points, and the flux parameter
/// `alpha` (0 central, 1 upwind).
#[derive(Debug, Clone, PartialEq)]
pub struct Advection {
    pub alpha: f64,
    beta_vol: Vec<[f64; 3]>,
    beta_surf: Vec<[f64; 3]>,
}

impl Advection {
    pub fn constant(ctx: &DgContext, beta: [f64; 3], alpha: f64) -> Result<Self> {
        Self::field(ctx, |_| beta, alpha)
    }

    pub fn field<F: Fn([f64; 3]) -> [f64; 3]>(ctx: &DgContext, beta: F, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(PyrError::InvalidParameter(format!(
                "flux parameter alpha must lie in [0, 1], got {alpha}"
            )));
        }
        Ok(Self {
            alpha,
            beta_vol: ctx.x_vol.iter().map(|&x| beta(x)).collect(),
            beta_surf: ctx.x_surf.iter().map(|&x| beta(x)).collect(),
        })
    }

    pub fn max_speed(&self) -> f64 {
        self.beta_vol
            .iter()
            .chain(&self.beta_surf)
            .map(|b| (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt())
            .fold(0.0, f64::max)
    }

    fn check(&self, ctx: &DgContext) -> Result<()> {
        if self.beta_vol.len() != ctx.k * ctx.nc || self.beta_surf.len() != ctx.k * ctx.nfc {
            return Err(PyrError::ShapeMismatch(
                "advection velocity was sampled for another context".into(),
            ));
        }
        Ok(())
    }
}

fn volume_integrand(ctx: &DgContext, adv: &Advection, coeffs: &DMatrix<f64>, z: &mut DMatrix<f64>) {
    let grads = ctx.reference_gradients(coeffs);
    for e in 0..ctx.k {
        for q in 0..ctx.nc {
            let i = e * ctx.nc + q;
            let g = ctx.physical_gradient(&grads, e, e, q);
            let b = adv.beta_vol[i];
            z[(q, e)] = ctx.wj[i] * (b[0] * g[0] + b[1] * g[1] + b[2] * g[2]);
        }
    }
}

/// Volume term `int phi beta . grad u` of every element, `Np x K`.
pub fn advection_volume_term(ctx: &DgContext, state: &DgState, adv: &Advection) -> Result<DMatrix<f64>> {
    adv.check(ctx)?;
    ctx.check_coefficients(state.coefficients(), 1)?;
    let mut z = DMatrix::zeros(ctx.nc, ctx.k);
    volume_integrand(ctx, adv, state.coefficients(), &mut z);
    Ok(super::gemm(&ctx.ops.v.transpose(), &z))
}

/// `du/dt = -M^{-1} (S u + L F)` with `F = (beta_n - alpha |beta_n|)/2 (u+ - u-)`.
///
/// Exterior values come from the neighbor or periodic partner; free-surface faces see
/// `u+ = 0`.
pub fn advection_rhs(ctx: &DgContext, state: &DgState, adv: &Advection) -> Result<DMatrix<f64>> {
    adv.check(ctx)?;
    ctx.check_coefficients(state.coefficients(), 1)?;
    let traces = state.traces()?;
    let (nc, nfc) = (ctx.nc, ctx.nfc);
    let mut z = DMatrix::zeros(nc + nfc, ctx.k);
    volume_integrand(ctx, adv, state.coefficients(), &mut z);

    let tr = traces.as_slice();
    for e in 0..ctx.k {
        for q in 0..nfc {
            let i = e * nfc + q;
            let um = tr[i];
            let up = match ctx.point_kind[i] {
                FaceKind::FreeSurface => 0.0,
                _ => tr[ctx.ext[i]],
            };
            let n = ctx.normals[i];
            let b = adv.beta_surf[i];
            let bn = b[0] * n[0] + b[1] * n[1] + b[2] * n[2];
            z[(nc + q, e)] = ctx.wsj[i] * 0.5 * (bn - adv.alpha * bn.abs()) * (up - um);
        }
    }

    let mut rhs = ctx.lift_stacked(&z);
    for e in 0..ctx.k {
        for m in 0..ctx.np {
            rhs[(m, e)] *= -ctx.inv_mass[e * ctx.np + m];
        }
    }
    Ok(rhs)
}
