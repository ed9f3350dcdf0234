use nalgebra::DMatrix;

use super::{DgContext, DgState};
use crate::error::Result;

/// Five-stage, fourth-order low-storage Runge-Kutta coefficients (Carpenter and Kennedy).
pub const RK4A: [f64; 5] = [
    0.0,
    -567301805773.0 / 1357537059087.0,
    -2404267990393.0 / 2016746695238.0,
    -3550918686646.0 / 2091501179385.0,
    -1275806237668.0 / 842570457699.0,
];

pub const RK4B: [f64; 5] = [
    1432997174477.0 / 9575080441755.0,
    5161836677717.0 / 13612068292357.0,
    1720146321549.0 / 2090206949498.0,
    3134564353537.0 / 4481467310338.0,
    2277821191437.0 / 14882151754819.0,
];

pub const RK4C: [f64; 5] = [
    0.0,
    1432997174477.0 / 9575080441755.0,
    2526269341429.0 / 6820363962896.0,
    2006345519317.0 / 3224310063776.0,
    2802321613138.0 / 2924317926251.0,
];

/// Advances `state` by `dt`. `rhs` sees the state with `t` set to the stage time and
/// fresh traces.
pub fn lsrk4_step<F>(ctx: &DgContext, state: &mut DgState, mut rhs: F, dt: f64) -> Result<()>
where
    F: FnMut(&DgContext, &DgState) -> Result<DMatrix<f64>>,
{
    let t0 = state.t;
    if !state.is_fresh() {
        state.refresh_traces(ctx);
    }
    state.residual.fill(0.0);
    for s in 0..5 {
        state.t = t0 + RK4C[s] * dt;
        let k = rhs(ctx, state)?;
        ctx.check_coefficients(&k, state.nfields)?;
        let res = state.residual.as_mut_slice();
        let u = state.coeffs.as_mut_slice();
        for ((r, ki), ui) in res.iter_mut().zip(k.as_slice()).zip(u.iter_mut()) {
            *r = RK4A[s] * *r + dt * ki;
            *ui += RK4B[s] * *r;
        }
        state.fresh = false;
        state.refresh_traces(ctx);
    }
    state.t = t0 + dt;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dg::{advection_exact, advection_rhs, Advection};
    use crate::mesh::build_mesh;

    #[test]
    fn coefficient_consistency() {
        // integrating y' = 1 lands on the stage times, then on 1
        let mut c = 0.0;
        let mut res = 0.0;
        for s in 0..5 {
            res = RK4A[s] * res + 1.0;
            c += RK4B[s] * res;
            let expect = if s < 4 { RK4C[s + 1] } else { 1.0 };
            assert!((c - expect).abs() < 1e-12, "stage {s}");
        }
    }

    #[test]
    fn zero_rhs_is_identity() {
        let mesh = build_mesh(1, 1, 0.0, 0, true).unwrap();
        let ctx = DgContext::new(mesh, 1).unwrap();
        let mut st = ctx.project(1, |x, o| o[0] = x[0]).unwrap();
        let before = st.coefficients().clone();
        lsrk4_step(&ctx, &mut st, |c, s| Ok(DMatrix::zeros(c.np, s.nfields * c.k)), 0.1).unwrap();
        assert_eq!(st.coefficients(), &before);
        assert!((st.t - 0.1).abs() < 1e-15);
        assert!(st.is_fresh());
    }

    /// Runs `u' = lambda u + cos t` in every coefficient and returns the final error.
    fn scalar_error(steps: usize) -> f64 {
        let mesh = build_mesh(1, 1, 0.0, 0, true).unwrap();
        let ctx = DgContext::new(mesh, 1).unwrap();
        let lambda = -0.7;
        let mut st = ctx.project(1, |_, o| o[0] = 1.0).unwrap();
        let u0 = st.coefficients().clone();
        let t_end = 2.0;
        let dt = t_end / steps as f64;
        for _ in 0..steps {
            lsrk4_step(
                &ctx,
                &mut st,
                |_, s| Ok(s.coefficients() * lambda + DMatrix::from_element(u0.nrows(), u0.ncols(), s.t.cos())),
                dt,
            )
            .unwrap();
        }
        // exact: u = (u0 - A) e^{lambda t} + A cos t + B sin t with A = -lambda/(1+lambda^2), B = 1/(1+lambda^2)
        let den = 1.0 + lambda * lambda;
        let (a, b) = (-lambda / den, 1.0 / den);
        let mut err: f64 = 0.0;
        for (u, v0) in st.coefficients().iter().zip(u0.iter()) {
            let ex = (v0 - a) * (lambda * t_end).exp() + a * t_end.cos() + b * t_end.sin();
            err = err.max((u - ex).abs());
        }
        err
    }

    #[test]
    fn fourth_order_on_scalar_ode() {
        let e1 = scalar_error(10);
        let e2 = scalar_error(20);
        let rate = (e1 / e2).log2();
        assert!(rate > 3.9, "rate {rate}");
    }

    #[test]
    fn advection_temporal_self_convergence() {
        let n = 2;
        let mesh = build_mesh(2, n, 0.0, 0, true).unwrap();
        let ctx = DgContext::new(mesh, n).unwrap();
        let adv = Advection::constant(&ctx, [1.0, 0.0, 0.0], 1.0).unwrap();
        let run = |steps: usize| {
            let mut st = ctx.project(1, |x, o| o[0] = advection_exact(x, 0.0)).unwrap();
            let dt = 0.1 / steps as f64;
            for _ in 0..steps {
                lsrk4_step(&ctx, &mut st, |c, s| advection_rhs(c, s, &adv), dt).unwrap();
            }
            st.coefficients().clone()
        };
        let (a, b, c) = (run(20), run(40), run(80));
        let rate = ((&a - &b).amax() / (&b - &c).amax()).log2();
        assert!(rate > 3.8, "rate {rate}");
    }
}
