use std::f64::consts::PI;

use qg3d_core::kernel::{assemble_kernel_matrix, KernelContext};
use qg3d_core::linop::{cross_validate, ModeFunction};
use qg3d_core::nonlinear::Nonlinear;
use qg3d_core::profile::{arc_chord_constants, ellipsoid_alphas, validate_profile, ProfileKind};
use qg3d_core::spectral::{
    dispersion_scan_tol, eigenfunction_boundary_report, find_bifurcation_point, largest_eigenvalue_tol,
    AnomalyKind,
};
use serde::Serialize;
use serde_json::json;

use crate::config::{Format, RunConfig};
use crate::output::{num, Csv, Failure, OutDir};

/// Axis heights probed after each branch point.
const AXIS_HEIGHTS: [f64; 9] = [-0.8, -0.6, -0.4, -0.2, 0.0, 0.2, 0.4, 0.6, 0.8];
pub const AXIS_TOL: f64 = 1e-8;

/// Writes the resolved config next to the results.
fn start(cfg: &RunConfig) -> Result<OutDir, Failure> {
    let out = OutDir::create(&cfg.output)?;
    out.write_json("config.json", cfg)?;
    Ok(out)
}

fn context(cfg: &RunConfig) -> Result<KernelContext, Failure> {
    Ok(KernelContext::new(cfg.load_profile()?, cfg.kernel_config())?)
}

fn eigen_csv(ctx: &KernelContext, h: &[f64]) -> String {
    let mut csv = Csv::new(&["phi", "h"]);
    for (phi, v) in ctx.nodes().iter().zip(h) {
        csv.row(&[num(*phi), num(*v)]);
    }
    csv.into_string()
}

pub fn validate(cfg: &RunConfig) -> Result<(), Failure> {
    let out = start(cfg)?;
    let profile = cfg.load_profile()?;
    let grid = cfg.phi_nodes.max(16);
    let report = validate_profile(&profile, grid)?;
    let (c_lower, c_upper) = arc_chord_constants(&profile, grid)?;
    let mut doc = json!({
        "profile": cfg.profile,
        "grid_size": report.grid_size,
        "h1": report.h1,
        "h2": report.h2,
        "h3": report.h3,
        "passed": report.passed(),
        "endpoint_values": [report.endpoint_values.0, report.endpoint_values.1],
        "min_interior": report.min_interior,
        "h2_ratio": [report.h2_ratio.0, report.h2_ratio.1],
        "symmetry_defect": report.symmetry_defect,
        "arc_chord": { "lower": c_lower, "upper": c_upper },
        "kappa": null,
        "kappa_location": null,
    });
    if let ProfileKind::Spheroid { a } = profile.kind() {
        let e = ellipsoid_alphas(*a)?;
        doc["ellipsoid"] = json!({
            "alpha1": e.alpha1,
            "alpha2": e.alpha2,
            "alpha3": e.alpha3,
            "two_alpha1": 2.0 * e.alpha1,
        });
    }
    if report.passed() {
        let ctx = KernelContext::new(profile, cfg.kernel_config())?;
        doc["kappa"] = json!(ctx.kappa());
        doc["kappa_location"] = json!(ctx.kappa_location());
    }
    let path = out.write_json("validate.json", &doc)?;
    if !report.passed() {
        return Err(Failure::config(format!(
            "profile {} fails (H1) {} (H2) {} (H3) {}; report in {}",
            cfg.profile,
            report.h1,
            report.h2,
            report.h3,
            path.display()
        )));
    }
    println!("validate: passed, kappa = {}", num(doc["kappa"].as_f64().unwrap_or(f64::NAN)));
    Ok(())
}

#[derive(Serialize)]
struct DispersionJson<'a> {
    kappa: f64,
    rows: Vec<serde_json::Value>,
    anomalies: &'a [serde_json::Value],
}

pub fn dispersion(cfg: &RunConfig) -> Result<(), Failure> {
    let out = start(cfg)?;
    let ctx = context(cfg)?;
    cfg.check_omegas(ctx.kappa())?;
    let header = ["n", "omega", "lambda", "iterations", "residual"];
    if cfg.modes.is_empty() || cfg.omegas.is_empty() {
        match cfg.format {
            Format::Csv => out.write("dispersion.csv", &Csv::new(&header).into_string())?,
            Format::Json => out.write_json(
                "dispersion.json",
                &DispersionJson {
                    kappa: ctx.kappa(),
                    rows: Vec::new(),
                    anomalies: &[],
                },
            )?,
        };
        out.write("dispersion_anomalies.csv", &Csv::new(&["kind", "n", "omega", "gap"]).into_string())?;
        println!("dispersion: empty grid");
        return Ok(());
    }
    let curve = dispersion_scan_tol(&ctx, &cfg.modes, &cfg.omegas, cfg.eig_tol)?;
    let kind_name = |k: AnomalyKind| match k {
        AnomalyKind::ModeOrder => "mode_order",
        AnomalyKind::OmegaOrder => "omega_order",
    };
    let mut anomalies = Csv::new(&["kind", "n", "omega", "gap"]);
    for a in &curve.anomalies {
        anomalies.row(&[kind_name(a.kind).into(), a.n.to_string(), num(a.omega), num(a.gap)]);
    }
    out.write("dispersion_anomalies.csv", &anomalies.into_string())?;
    match cfg.format {
        Format::Csv => {
            let mut csv = Csv::new(&header);
            for r in &curve.rows {
                csv.row(&[
                    r.n.to_string(),
                    num(r.omega),
                    num(r.lambda),
                    r.iterations.to_string(),
                    num(r.residual),
                ]);
            }
            out.write("dispersion.csv", &csv.into_string())?;
        }
        Format::Json => {
            let rows = curve
                .rows
                .iter()
                .map(|r| {
                    json!({
                        "n": r.n,
                        "omega": r.omega,
                        "lambda": r.lambda,
                        "iterations": r.iterations,
                        "residual": r.residual,
                    })
                })
                .collect();
            let anomalies: Vec<_> = curve
                .anomalies
                .iter()
                .map(|a| json!({ "kind": kind_name(a.kind), "n": a.n, "omega": a.omega, "gap": a.gap }))
                .collect();
            out.write_json(
                "dispersion.json",
                &DispersionJson {
                    kappa: ctx.kappa(),
                    rows,
                    anomalies: &anomalies,
                },
            )?;
        }
    }
    if !curve.anomalies.is_empty() {
        eprintln!(
            "dispersion: {} monotonicity anomalies, see dispersion_anomalies.csv",
            curve.anomalies.len()
        );
    }
    println!("dispersion: {} rows", curve.rows.len());
    Ok(())
}

pub fn bifpoints(cfg: &RunConfig) -> Result<(), Failure> {
    if let Some(m) = cfg.modes.iter().find(|&&m| m < 2) {
        return Err(Failure::config(format!("mode m = {m} rejected: bifurcation needs m >= 2")));
    }
    let out = start(cfg)?;
    let ctx = context(cfg)?;
    let mut modes = cfg.modes.clone();
    modes.sort_unstable();
    modes.dedup();
    let mut points = Vec::new();
    for &m in &modes {
        let bp = find_bifurcation_point(&ctx, m).map_err(|e| Failure::from(e).context(&format!("m = {m}")))?;
        out.write(&format!("eigenfun_m{m}.csv"), &eigen_csv(&ctx, &bp.eigfun))?;
        points.push(bp);
    }
    let kappa = ctx.kappa();
    match cfg.format {
        Format::Csv => {
            let mut csv = Csv::new(&["m", "omega_m", "kappa_gap", "lambda", "bisections", "bracket"]);
            for p in &points {
                csv.row(&[
                    p.m.to_string(),
                    num(p.omega_m),
                    num(kappa - p.omega_m),
                    num(p.lambda),
                    p.bisections.to_string(),
                    num(p.bracket),
                ]);
            }
            out.write("bifpoints.csv", &csv.into_string())?;
        }
        Format::Json => {
            let rows: Vec<_> = points
                .iter()
                .map(|p| {
                    json!({
                        "m": p.m,
                        "omega_m": p.omega_m,
                        "kappa_gap": kappa - p.omega_m,
                        "lambda": p.lambda,
                        "bisections": p.bisections,
                        "bracket": p.bracket,
                    })
                })
                .collect();
            out.write_json("bifpoints.json", &json!({ "kappa": kappa, "points": rows }))?;
        }
    }
    if points.windows(2).any(|w| w[0].omega_m >= w[1].omega_m) {
        eprintln!("bifpoints: omega_m is not increasing in m");
    }
    for p in &points {
        println!("m = {}: omega_m = {}", p.m, num(p.omega_m));
    }
    Ok(())
}

pub fn eigenfun(cfg: &RunConfig) -> Result<(), Failure> {
    let out = start(cfg)?;
    let ctx = context(cfg)?;
    cfg.check_omegas(ctx.kappa())?;
    let mut summary = Csv::new(&[
        "n",
        "omega",
        "lambda",
        "iterations",
        "residual",
        "boundary_left",
        "boundary_right",
        "file",
    ]);
    let mut rows = Vec::new();
    for &n in &cfg.modes {
        for (k, &omega) in cfg.omegas.iter().enumerate() {
            let r = largest_eigenvalue_tol(&assemble_kernel_matrix(&ctx, n, omega)?, cfg.eig_tol)?;
            let b = eigenfunction_boundary_report(&ctx, &r);
            let file = format!("eigenfun_n{n}_w{k}.csv");
            out.write(&file, &eigen_csv(&ctx, &r.eigvec))?;
            summary.row(&[
                n.to_string(),
                num(omega),
                num(r.lambda),
                r.iterations.to_string(),
                num(r.residual),
                num(b.left),
                num(b.right),
                file.clone(),
            ]);
            rows.push(json!({
                "n": n,
                "omega": omega,
                "lambda": r.lambda,
                "iterations": r.iterations,
                "residual": r.residual,
                "boundary_left": b.left,
                "boundary_right": b.right,
                "file": file,
            }));
        }
    }
    match cfg.format {
        Format::Csv => out.write("eigenfun.csv", &summary.into_string())?,
        Format::Json => out.write_json("eigenfun.json", &rows)?,
    };
    println!("eigenfun: {} eigenfunctions", rows.len());
    Ok(())
}

pub fn crosscheck(cfg: &RunConfig) -> Result<(), Failure> {
    let out = start(cfg)?;
    let ctx = context(cfg)?;
    cfg.check_omegas(ctx.kappa())?;
    let omegas = if cfg.omegas.is_empty() { vec![0.0] } else { cfg.omegas.clone() };
    let mut csv = Csv::new(&["n", "omega", "discrepancy"]);
    let mut worst = 0.0f64;
    for &n in &cfg.modes {
        for &omega in &omegas {
            let r = largest_eigenvalue_tol(&assemble_kernel_matrix(&ctx, n, omega)?, cfg.eig_tol)?;
            let d = cross_validate(&ctx, omega, &ModeFunction::new(n, r.eigvec)?)?;
            worst = worst.max(d);
            csv.row(&[n.to_string(), num(omega), num(d)]);
        }
    }
    out.write("crosscheck.csv", &csv.into_string())?;
    if worst > cfg.quad_tol {
        return Err(Failure::config(format!(
            "representations disagree by {worst:.3e} > quad_tol = {:.3e}",
            cfg.quad_tol
        )));
    }
    println!("crosscheck: max discrepancy {}", num(worst));
    Ok(())
}

pub fn branch(cfg: &RunConfig) -> Result<(), Failure> {
    let m = cfg.branch_mode;
    if m < 2 {
        return Err(Failure::config(format!("branch_mode m = {m} rejected: bifurcation needs m >= 2")));
    }
    let out = start(cfg)?;
    let ctx = context(cfg)?;
    let nl = Nonlinear::new(&ctx, cfg.nonlinear_config())?;
    let bp = find_bifurcation_point(&ctx, m).map_err(|e| Failure::from(e).context(&format!("m = {m}")))?;
    let branch = nl.continue_from(&bp, cfg.s_max, cfg.steps)?;
    let thetas: Vec<f64> = (0..cfg.surface_thetas)
        .map(|j| 2.0 * PI * j as f64 / cfg.surface_thetas as f64)
        .collect();
    let mut rows = Vec::new();
    let mut problems = Vec::new();
    for (j, p) in branch.points.iter().enumerate() {
        let file = format!("branch_point_{:03}.csv", j + 1);
        let mut csv = Csv::new(&["phi", "theta", "r"]);
        for (phi, theta, r) in branch.surface(&ctx, p, &thetas) {
            csv.row(&[num(phi), num(theta), num(r)]);
        }
        out.write(&file, &csv.into_string())?;
        let axis = nl.velocity_on_axis(&p.f, &AXIS_HEIGHTS)?;
        let vel = nl.velocity_residual(p.omega, &p.f)?;
        if p.residual > cfg.newton_tol {
            problems.push(format!("point {}: residual {:.3e} > newton_tol", j + 1, p.residual));
        }
        if axis > AXIS_TOL {
            problems.push(format!("point {}: axis velocity {axis:.3e} > {AXIS_TOL:e}", j + 1));
        }
        rows.push(json!({
            "index": j + 1,
            "s": p.s,
            "omega": p.omega,
            "omega_shift": p.omega - branch.omega_m,
            "amplitude": branch.amplitude(&ctx, p),
            "residual": p.residual,
            "iterations": p.iterations,
            "axis_velocity": axis,
            "velocity_max": vel.velocity_max,
            "surface": file,
        }));
    }
    let failure = branch.failure.as_ref().map(|f| {
        json!({ "step": f.step, "s": f.s, "message": f.message })
    });
    out.write_json(
        "branch.json",
        &json!({
            "m": branch.m,
            "omega_m": branch.omega_m,
            "kappa": ctx.kappa(),
            "s_max": branch.s_max,
            "steps": branch.steps,
            "newton_tol": branch.newton_tol,
            "axis_tol": AXIS_TOL,
            "points": rows,
            "failure": failure,
        }),
    )?;
    if let Some(f) = &branch.failure {
        return Err(Failure::solver(format!(
            "corrector failed at step {} (s = {}): {}; {} points written",
            f.step,
            f.s,
            f.message,
            branch.points.len()
        )));
    }
    if !problems.is_empty() {
        return Err(Failure::solver(problems.join("; ")));
    }
    println!("branch: {} points, m = {m}, omega_m = {}", branch.points.len(), num(branch.omega_m));
    Ok(())
}
