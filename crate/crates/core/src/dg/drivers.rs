use super::{
    advection_exact, advection_rhs, lsrk4_step, resonant_cavity, wave_rhs, Advection, DgContext, DgState,
    DiagnosticRow, WaveMaterial, WAVE_FIELDS,
};
use crate::error::{PyrError, Result};

/// Result of a time integration with per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dt: f64,
    pub steps: usize,
    /// One row per step (row 0 is the initial state). `l2_error` is filled on the rows
    /// selected by `error_every` and on the last row.
    pub diagnostics: Vec<DiagnosticRow>,
    pub final_state: DgState,
}

impl RunSummary {
    pub fn final_error(&self) -> Option<f64> {
        self.diagnostics.last().and_then(|r| r.l2_error)
    }

    /// `|E_end - E_0| / E_0`.
    pub fn energy_drift(&self) -> f64 {
        let e0 = self.diagnostics[0].energy;
        let e1 = self.diagnostics.last().map(|r| r.energy).unwrap_or(e0);
        (e1 - e0).abs() / e0
    }

    /// Largest single-step energy increase relative to the initial energy (zero when
    /// energy never grows).
    pub fn max_energy_increase(&self) -> f64 {
        let e0 = self.diagnostics[0].energy;
        self.diagnostics
            .windows(2)
            .map(|w| (w[1].energy - w[0].energy) / e0)
            .fold(0.0, f64::max)
    }
}

fn check_steps(dt: f64, steps: usize) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) || steps == 0 {
        return Err(PyrError::InvalidParameter(format!("need dt > 0 and steps > 0, got {dt}, {steps}")));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn integrate<R, E, X>(
    ctx: &DgContext,
    mut state: DgState,
    mut rhs: R,
    energy: E,
    exact: X,
    dt: f64,
    steps: usize,
    error_every: Option<usize>,
) -> Result<RunSummary>
where
    R: FnMut(&DgContext, &DgState) -> Result<nalgebra::DMatrix<f64>>,
    E: Fn(&DgState) -> f64,
    X: Fn([f64; 3], f64, &mut [f64]) + Copy,
{
    check_steps(dt, steps)?;
    let row = |st: &DgState, step: usize, with_error: bool| -> Result<DiagnosticRow> {
        let energy = energy(st);
        if !energy.is_finite() {
            return Err(PyrError::InvalidParameter(format!("energy became non-finite at step {step}")));
        }
        Ok(DiagnosticRow {
            step,
            t: st.t,
            energy,
            l2_error: if with_error { Some(ctx.l2_error(st, exact)?) } else { None },
        })
    };
    let wants = |step: usize| step == steps || error_every.is_some_and(|k| k > 0 && step % k == 0);
    let mut diagnostics = vec![row(&state, 0, wants(0))?];
    for step in 1..=steps {
        lsrk4_step(ctx, &mut state, &mut rhs, dt)?;
        diagnostics.push(row(&state, step, wants(step))?);
    }
    Ok(RunSummary {
        dt,
        steps,
        diagnostics,
        final_state: state,
    })
}

/// Advects `sin(pi x)` with `beta = (1, 0, 0)` for `steps` steps of size `dt`.
pub fn run_advection(
    ctx: &DgContext,
    alpha: f64,
    dt: f64,
    steps: usize,
    error_every: Option<usize>,
) -> Result<RunSummary> {
    let adv = Advection::constant(ctx, [1.0, 0.0, 0.0], alpha)?;
    let exact = |x: [f64; 3], t: f64, o: &mut [f64]| o[0] = advection_exact(x, t);
    let init = ctx.project(1, |x, o| exact(x, 0.0, o))?;
    integrate(
        ctx,
        init,
        |c, s| advection_rhs(c, s, &adv),
        |s| ctx.advection_energy(s),
        exact,
        dt,
        steps,
        error_every,
    )
}

/// Advection convergence run to `final_time` with [`DgContext::convergence_steps`].
pub fn advection_convergence_run(ctx: &DgContext, alpha: f64, cfl: f64, final_time: f64) -> Result<RunSummary> {
    let (dt, steps) = ctx.convergence_steps(1.0, cfl, final_time);
    run_advection(ctx, alpha, dt, steps, None)
}

/// Resonant cavity with unit material and free-surface walls, run to `final_time`.
pub fn run_wave_cavity(ctx: &DgContext, cfl: f64, final_time: f64, error_every: Option<usize>) -> Result<RunSummary> {
    let material = WaveMaterial::uniform(ctx, 1.0, 1.0)?;
    let exact = |x: [f64; 3], t: f64, o: &mut [f64]| o.copy_from_slice(&resonant_cavity(x, t));
    let init = ctx.project(WAVE_FIELDS, |x, o| exact(x, 0.0, o))?;
    let (dt, steps) = ctx.convergence_steps(material.c_max(), cfl, final_time);
    integrate(
        ctx,
        init,
        |c, s| wave_rhs(c, s, &material),
        |s| ctx.wave_energy(s, &material),
        exact,
        dt,
        steps,
        error_every,
    )
}

/// `log2(e_coarse / e_fine)` for a mesh refinement by two.
pub fn convergence_rate(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;

    #[test]
    fn conservation_and_dissipation() {
        let mesh = build_mesh(2, 2, 0.1, 5, true).unwrap();
        let ctx = DgContext::new(mesh, 2).unwrap();
        let dt = ctx.stable_dt(1.0, 0.5);
        let central = run_advection(&ctx, 0.0, dt, 100, None).unwrap();
        assert!(central.energy_drift() < 1e-9, "{}", central.energy_drift());
        let upwind = run_advection(&ctx, 1.0, dt, 100, Some(50)).unwrap();
        assert!(upwind.max_energy_increase() <= 1e-12);
        assert!(upwind.diagnostics[50].l2_error.is_some());
        assert!(upwind.diagnostics[49].l2_error.is_none());
        // two elements per wavelength: only a loose bound, relative to ||u|| = 2
        let e1 = upwind.final_error().unwrap();
        assert!(e1 < 0.2, "{e1}");
        // mass is conserved for both fluxes
        let init = ctx.project(1, |x, o| o[0] = advection_exact(x, 0.0)).unwrap();
        let m0 = ctx.integral(&init, 0);
        for run in [&central, &upwind] {
            assert!((ctx.integral(&run.final_state, 0) - m0).abs() < 1e-12);
        }
    }

    #[test]
    fn wave_energy_decays_and_error_is_small() {
        let mesh = build_mesh(2, 2, 0.0, 0, false).unwrap();
        let ctx = DgContext::new(mesh, 2).unwrap();
        let run = run_wave_cavity(&ctx, 0.5, 0.1, None).unwrap();
        assert!(run.max_energy_increase() <= 1e-12);
        assert!(run.final_error().unwrap() < 0.05);
        assert!((run.dt * run.steps as f64 - 0.1).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_steps() {
        let mesh = build_mesh(1, 1, 0.0, 0, true).unwrap();
        let ctx = DgContext::new(mesh, 1).unwrap();
        assert!(run_advection(&ctx, 1.0, 0.0, 10, None).is_err());
        assert!(run_advection(&ctx, 1.0, 0.1, 0, None).is_err());
        assert!((convergence_rate(4.0, 1.0) - 2.0).abs() < 1e-15);
    }
}
