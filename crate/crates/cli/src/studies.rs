use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pyrdg::dg::{estimate_spectral_radius, run_advection, run_wave_cavity, wave_operator, DgContext, RunSummary, WaveMaterial};
use pyrdg::geometry::warped_pyramid;
use pyrdg::massops::{
    chebyshev_solve_with_exact, dense_mass_rational, eig_bounds, project, project_elements, ProjectionMode,
};
use pyrdg::mesh::{build_mesh, default_delta};
use pyrdg::PyrError;

use crate::config::{Command, ExperimentConfig};
use crate::{real, CliError, CsvSink};

/// Final time of the advection and wave studies.
const FINAL_TIME: f64 = 0.5;
const CFL: f64 = 0.5;

fn projection_target(x: [f64; 3]) -> f64 {
    (x[0] + x[1] + x[2]).cosh()
}

fn header(cfg: &ExperimentConfig) -> &'static [&'static str] {
    match cfg.command {
        Command::Project if cfg.mesh_study => &["basis", "K1D", "N", "l2_error"],
        Command::Project => &["basis", "gamma", "N", "l2_error"],
        Command::Cheb => &["gamma", "iteration", "residual", "predicted_bound"],
        Command::Eig => &["gamma", "N", "lambda_min", "lambda_max", "dense_min", "dense_max"],
        Command::Advect => &["N", "K1D", "alpha", "l2_error", "energy_drift"],
        Command::Wave => &["N", "K1D", "l2_error", "measured_rate"],
        Command::Specradius => &["N", "K1D", "rho", "rho_times_h_over_const"],
    }
}

pub(crate) fn run_study(cfg: &ExperimentConfig) -> Result<usize, CliError> {
    let mut sink = CsvSink::create(&cfg.out, header(cfg))?;
    let result = match cfg.command {
        Command::Project if cfg.mesh_study => project_meshes(cfg, &mut sink),
        Command::Project => project_element(cfg, &mut sink),
        Command::Cheb => cheb(cfg, &mut sink),
        Command::Eig => eig(cfg, &mut sink),
        Command::Advect => advect(cfg, &mut sink),
        Command::Wave => wave(cfg, &mut sink),
        Command::Specradius => specradius(cfg, &mut sink),
    };
    if let Err(e) = &result {
        sink.error_marker(&e.to_string())?;
    }
    result.map(|_| sink.rows())
}

fn project_element(cfg: &ExperimentConfig, sink: &mut CsvSink) -> Result<(), CliError> {
    for &gamma in &cfg.gamma {
        let pyr = warped_pyramid(gamma)?;
        for &n in &cfg.n {
            for mode in [ProjectionMode::Lsc, ProjectionMode::SemiNodal] {
                let p = project(projection_target, &pyr, n, mode)?;
                sink.row(&[mode.to_string(), real(gamma), n.to_string(), real(p.l2_error)])?;
            }
        }
    }
    Ok(())
}

fn project_meshes(cfg: &ExperimentConfig, sink: &mut CsvSink) -> Result<(), CliError> {
    for &k in &cfg.k1d {
        let delta = cfg.delta.unwrap_or_else(|| default_delta(k));
        for &n in &cfg.n {
            let mesh = build_mesh(k, n, delta, cfg.seed, false)?;
            let pyrs = mesh.pyramids();
            for mode in [ProjectionMode::Lsc, ProjectionMode::SemiNodal] {
                let (_, err) = project_elements(projection_target, &pyrs, n, mode)?;
                sink.row(&[mode.to_string(), k.to_string(), n.to_string(), real(err)])?;
            }
        }
    }
    Ok(())
}

fn cheb(cfg: &ExperimentConfig, sink: &mut CsvSink) -> Result<(), CliError> {
    let n = cfg.n[0];
    for &gamma in &cfg.gamma {
        let pyr = warped_pyramid(gamma)?;
        let m = dense_mass_rational(&pyr, n)?;
        let (lo, hi) = eig_bounds(&pyr, n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let b = DVector::from_fn(m.nrows(), |_, _| rng.random_range(-1.0..1.0));
        let exact = m
            .clone()
            .cholesky()
            .ok_or(PyrError::RankDeficient { cond: f64::INFINITY })?
            .solve(&b);
        let (_, report) = chebyshev_solve_with_exact(|x| &m * x, &b, lo, hi, cfg.tol, cfg.max_iter, &exact)?;
        for (k, (r, p)) in report.residuals.iter().zip(&report.predicted).enumerate() {
            sink.row(&[real(gamma), k.to_string(), real(*r), real(*p)])?;
        }
        if !report.converged {
            eprintln!("pyrdg: gamma = {gamma}: no convergence to {} in {} iterations", cfg.tol, cfg.max_iter);
        }
    }
    Ok(())
}

fn eig(cfg: &ExperimentConfig, sink: &mut CsvSink) -> Result<(), CliError> {
    for &gamma in &cfg.gamma {
        let pyr = warped_pyramid(gamma)?;
        for &n in &cfg.n {
            let (lo, hi) = eig_bounds(&pyr, n)?;
            let eigs = dense_mass_rational(&pyr, n)?.symmetric_eigenvalues();
            sink.row(&[
                real(gamma),
                n.to_string(),
                real(lo),
                real(hi),
                real(eigs.min()),
                real(eigs.max()),
            ])?;
        }
    }
    Ok(())
}

fn diagnostics_sink(cfg: &ExperimentConfig) -> Result<CsvSink, CliError> {
    CsvSink::create(&cfg.diagnostics_path(), &["N", "K1D", "step", "t", "energy", "l2_error"])
}

fn write_diagnostics(sink: &mut CsvSink, n: usize, k: usize, run: &RunSummary) -> Result<(), CliError> {
    for d in &run.diagnostics {
        sink.row(&[
            n.to_string(),
            k.to_string(),
            d.step.to_string(),
            real(d.t),
            real(d.energy),
            d.l2_error.map(real).unwrap_or_default(),
        ])?;
    }
    Ok(())
}

fn advect(cfg: &ExperimentConfig, sink: &mut CsvSink) -> Result<(), CliError> {
    let mut diag = diagnostics_sink(cfg)?;
    for &n in &cfg.n {
        for &k in &cfg.k1d {
            let mesh = build_mesh(k, n, cfg.delta.unwrap_or(0.0), cfg.seed, true)?;
            let ctx = DgContext::new(mesh, n)?;
            let (dt, steps) = ctx.convergence_steps(1.0, CFL, FINAL_TIME);
            let run = run_advection(&ctx, cfg.alpha, dt, steps, cfg.error_every)?;
            write_diagnostics(&mut diag, n, k, &run)?;
            let err = run.final_error().unwrap_or(f64::NAN);
            sink.row(&[n.to_string(), k.to_string(), real(cfg.alpha), real(err), real(run.energy_drift())])?;
        }
    }
    Ok(())
}

fn wave(cfg: &ExperimentConfig, sink: &mut CsvSink) -> Result<(), CliError> {
    let mut diag = diagnostics_sink(cfg)?;
    for &n in &cfg.n {
        let mut previous: Option<(usize, f64)> = None;
        for &k in &cfg.k1d {
            let mesh = build_mesh(k, n, cfg.delta.unwrap_or(0.0), cfg.seed, false)?;
            let ctx = DgContext::new(mesh, n)?;
            let run = run_wave_cavity(&ctx, CFL, FINAL_TIME, cfg.error_every)?;
            write_diagnostics(&mut diag, n, k, &run)?;
            let err = run.final_error().unwrap_or(f64::NAN);
            let rate = previous
                .map(|(kp, ep)| real((ep / err).ln() / (k as f64 / kp as f64).ln()))
                .unwrap_or_default();
            sink.row(&[n.to_string(), k.to_string(), real(err), rate])?;
            previous = Some((k, err));
        }
    }
    Ok(())
}

fn specradius(cfg: &ExperimentConfig, sink: &mut CsvSink) -> Result<(), CliError> {
    for &n in &cfg.n {
        for &k in &cfg.k1d {
            let mesh = build_mesh(k, n, cfg.delta.unwrap_or(0.0), cfg.seed, false)?;
            let h = mesh.h();
            let ctx = DgContext::new(mesh, n)?;
            let material = WaveMaterial::uniform(&ctx, 1.0, 1.0)?;
            let unknowns = ctx.np * 4 * ctx.k;
            let est = estimate_spectral_radius(wave_operator(&ctx, &material), unknowns, cfg.seed)?;
            if !est.converged {
                eprintln!("pyrdg: N = {n}, K1D = {k}: Arnoldi did not converge, reporting best estimate");
            }
            let scale = 2.0 * (n as f64 + 1.0) * (n as f64 + 3.0) / 3.0;
            sink.row(&[n.to_string(), k.to_string(), real(est.rho), real(est.rho * h / scale)])?;
        }
    }
    Ok(())
}
