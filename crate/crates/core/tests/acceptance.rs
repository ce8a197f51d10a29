//! Acceptance criteria, one line each. Runs as a plain binary so the lines
//! are printed whether or not a criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use qg3d_core::kernel::{assemble_kernel_matrix, KernelConfig, KernelContext};
use qg3d_core::linop::{cross_validate, gateaux_check, ModeFunction};
use qg3d_core::nonlinear::{Nonlinear, NonlinearConfig, Perturbation};
use qg3d_core::profile::{ellipsoid_alphas, Profile};
use qg3d_core::quadrature::{gauss_legendre, TanhSinh};
use qg3d_core::specfun::{gamma_fn, gauss_2f1, ring_integral, HyperParams};
use qg3d_core::spectral::{
    dispersion_scan, eigenfunction_boundary_report, find_bifurcation_point, jacobi_eigen,
    largest_eigenvalue, lambda_n, stripped_eigenvalue,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Check = Result<String, String>;

fn sphere(phi_nodes: usize) -> KernelContext {
    KernelContext::new(Profile::sphere(), KernelConfig { phi_nodes, ..Default::default() }).unwrap()
}

fn spheroid2(phi_nodes: usize, theta_nodes: usize) -> KernelContext {
    KernelContext::new(
        Profile::spheroid(2.0).unwrap(),
        KernelConfig { phi_nodes, theta_nodes, ..Default::default() },
    )
    .unwrap()
}

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn euler_integral(a: f64, b: f64, c: f64, x: f64) -> f64 {
    let rule = TanhSinh::new(9);
    let pre = gamma_fn(c).unwrap() / (gamma_fn(b).unwrap() * gamma_fn(c - b).unwrap());
    pre * rule.integrate_with_distances(0.0, 1.0, |t, lo, hi| {
        lo.powf(b - 1.0) * hi.powf(c - b - 1.0) * (1.0 - x * t).powf(-a)
    })
}

/// Adaptive bisection with a 10-point Gauss rule per panel.
fn adaptive<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (x, w) = gauss_legendre(10);
    let panel = |lo: f64, hi: f64| {
        let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        x.iter().zip(&w).map(|(t, wt)| h * wt * f(c + h * t)).sum::<f64>()
    };
    let mid = 0.5 * (a + b);
    let whole = panel(a, b);
    let halves = panel(a, mid) + panel(mid, b);
    if (whole - halves).abs() <= tol || depth == 0 {
        halves
    } else {
        adaptive(f, a, mid, 0.5 * tol, depth - 1) + adaptive(f, mid, b, 0.5 * tol, depth - 1)
    }
}

fn c1() -> Check {
    let at_one = gauss_2f1(HyperParams::new(0.5, 0.5, 2.0, 1.0)).map_err(|e| e.to_string())?;
    let closed = (at_one - 4.0 / PI).abs();
    let mut worst = 0.0f64;
    let mut count = 0;
    for &a in &[0.5, 1.0, 1.5, 2.5, 3.7] {
        for &b in &[0.6, 1.0, 1.5, 2.5, 4.0] {
            for &gap in &[0.7, 2.0] {
                for &x in &[0.0, 0.3, 0.8, 0.95] {
                    let c = b + gap;
                    let s = gauss_2f1(HyperParams::new(a, b, c, x)).map_err(|e| e.to_string())?;
                    worst = worst.max((s - euler_integral(a, b, c, x)).abs() / s.abs());
                    count += 1;
                }
            }
        }
    }
    verdict(
        closed <= 1e-10 && worst <= 1e-9 && count == 200,
        format!("|2F1(1/2,1/2;2;1) - 4/pi| = {closed:.2e} (tol 1e-10); {count}-point Euler grid rel {worst:.2e} (tol 1e-9)"),
    )
}

fn c2() -> Check {
    let mut worst = 0.0f64;
    let mut count = 0;
    for n in 0..=6 {
        for &beta in &[1.0, 2.0, 3.0] {
            for &big_a in &[1.2, 2.0, 5.0] {
                let f = move |t: f64| (n as f64 * t).cos() / (big_a - t.cos()).powf(0.5 * beta);
                let direct = adaptive(f, 0.0, 2.0 * PI, 1e-14, 30);
                let closed = ring_integral(n, beta, big_a).map_err(|e| e.to_string())?;
                worst = worst.max((closed - direct).abs() / direct.abs());
                count += 1;
            }
        }
    }
    verdict(
        worst <= 1e-8 && count >= 30,
        format!("{count} triples (n <= 6), closed form vs adaptive quadrature rel {worst:.2e} (tol 1e-8)"),
    )
}

fn c3() -> Check {
    let ctx = sphere(96);
    let nu = ctx.nu0().iter().map(|v| (v - 1.0 / 3.0).abs()).fold(0.0, f64::max);
    let kappa = (ctx.kappa() - 1.0 / 3.0).abs();
    verdict(
        nu <= 1e-6 && kappa <= 1e-5,
        format!("N=96 DE 9: max|int H_1 - 1/3| = {nu:.2e} (tol 1e-6), |kappa - 1/3| = {kappa:.2e} (tol 1e-5)"),
    )
}

fn c4() -> Check {
    let e1 = ellipsoid_alphas(1.0).map_err(|e| e.to_string())?;
    let ball = (e1.alpha1 - 1.0 / 6.0).abs().max((e1.alpha2 - 1.0 / 6.0).abs());
    let ctx = spheroid2(96, 256);
    let spread = ctx.nu0().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - ctx.nu0().iter().cloned().fold(f64::INFINITY, f64::min);
    let two_a1 = 2.0 * ellipsoid_alphas(2.0).map_err(|e| e.to_string())?.alpha1;
    let kappa = (ctx.kappa() - two_a1).abs();
    verdict(
        ball <= 1e-10 && spread <= 1e-6 && kappa <= 1e-5,
        format!(
            "alpha_1,2(1) - 1/6 = {ball:.2e} (tol 1e-10); spheroid(2) nu spread {spread:.2e} (tol 1e-6), |kappa - 2 alpha_1(2)| = {kappa:.2e} (tol 1e-5)"
        ),
    )
}

fn c5() -> Check {
    let modes: Vec<usize> = (1..=8).collect();
    let omegas = [-2.0, -1.0, -0.5, 0.0, 0.15, 0.25];
    let (c, f) = (sphere(96), sphere(192));
    let dc = dispersion_scan(&c, &modes, &omegas).map_err(|e| e.to_string())?;
    let df = dispersion_scan(&f, &modes, &omegas).map_err(|e| e.to_string())?;
    let est = |a: usize, b: usize| (dc.lambda(a, b) - df.lambda(a, b)).abs();
    let mut worst_margin = f64::INFINITY;
    let mut violations = 0;
    for a in 0..modes.len() {
        for b in 0..omegas.len() {
            let mut pairs = Vec::new();
            if a + 1 < modes.len() {
                pairs.push((dc.lambda(a, b) - dc.lambda(a + 1, b), est(a, b) + est(a + 1, b)));
            }
            if b + 1 < omegas.len() {
                pairs.push((dc.lambda(a, b + 1) - dc.lambda(a, b), est(a, b) + est(a, b + 1)));
            }
            for (gap, err) in pairs {
                if gap <= err {
                    violations += 1;
                }
                worst_margin = worst_margin.min(gap / err.max(1e-300));
            }
        }
    }
    verdict(
        violations == 0 && dc.anomalies.is_empty(),
        format!("48 values, {violations} order violations; smallest gap / (N vs 2N estimate) = {worst_margin:.2e}"),
    )
}

fn c6() -> Check {
    let (c, f) = (sphere(96), sphere(192));
    let mut om = Vec::new();
    let (mut stripped, mut stable, mut closed) = (0.0f64, 0.0f64, 0.0f64);
    for m in 2..=6 {
        let a = find_bifurcation_point(&c, m).map_err(|e| e.to_string())?;
        let b = find_bifurcation_point(&f, m).map_err(|e| e.to_string())?;
        let beta = stripped_eigenvalue(&c, m).map_err(|e| e.to_string())?;
        stripped = stripped.max((1.0 / 3.0 - beta - a.omega_m).abs());
        stable = stable.max((a.omega_m - b.omega_m).abs());
        closed = closed.max((a.omega_m - (1.0 / 3.0 - 1.0 / (2 * m + 1) as f64)).abs());
        om.push(a.omega_m);
    }
    let ordered = om.windows(2).all(|w| w[0] < w[1]);
    let inside = om.iter().all(|&w| w > 0.0 && w < 1.0 / 3.0);
    let gaps: Vec<f64> = om.iter().map(|w| c.kappa() - w).collect();
    let shrinking = gaps.windows(2).all(|g| g[1] < g[0]);
    verdict(
        ordered && inside && shrinking && stripped <= 1e-6 && stable <= 1e-6,
        format!(
            "Omega_2..6 = {om:.9?}; ordered {ordered}, in (0,1/3) {inside}, kappa gap decreasing {shrinking}; stripped {stripped:.2e}, N=96 vs 192 {stable:.2e} (tol 1e-6); vs 1/3 - 1/(2m+1) {closed:.2e}"
        ),
    )
}

fn c7() -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    let pairs: [(&str, fn(usize, usize) -> KernelContext); 2] =
        [("sphere", |n, t| KernelContext::new(Profile::sphere(), KernelConfig { phi_nodes: n, theta_nodes: t, ..Default::default() }).unwrap()), ("spheroid(2)", spheroid2)];
    for (name, make) in pairs {
        let coarse = make(48, 128);
        let fine = make(96, 256);
        for n in [2, 3] {
            let d = |ctx: &KernelContext| -> Result<f64, String> {
                let r = lambda_n(ctx, n, 0.0).map_err(|e| e.to_string())?;
                cross_validate(ctx, 0.0, &ModeFunction::new(n, r.eigvec).map_err(|e| e.to_string())?)
                    .map_err(|e| e.to_string())
            };
            let (dc, df) = (d(&coarse)?, d(&fine)?);
            ok &= df <= 1e-5 && df <= 0.5 * dc;
            lines.push(format!("{name} n={n}: {df:.2e} (coarse {dc:.2e})"));
        }
    }
    verdict(ok, format!("{} (tol 1e-5, halving)", lines.join("; ")))
}

fn c8() -> Check {
    let ctxs = [sphere(48), sphere(96), sphere(192)];
    let mut worst_ratio = f64::INFINITY;
    let mut n1_floor = f64::INFINITY;
    for n in [2, 3, 4] {
        let reps: Vec<_> = ctxs
            .iter()
            .map(|c| eigenfunction_boundary_report(c, &lambda_n(c, n, 0.0).unwrap()))
            .collect();
        for w in reps.windows(2) {
            worst_ratio = worst_ratio.min(w[0].left / w[1].left).min(w[0].right / w[1].right);
        }
    }
    for c in &ctxs {
        let r = eigenfunction_boundary_report(c, &lambda_n(c, 1, 0.0).unwrap());
        n1_floor = n1_floor.min(r.left).min(r.right);
    }
    verdict(
        worst_ratio >= 1.4 && n1_floor >= 0.1,
        format!("n=2..4 smallest shrink per doubling {worst_ratio:.3} (min 1.4); n=1 boundary / interior max {n1_floor:.3} (min 0.1)"),
    )
}

fn c9() -> Check {
    let mut value = 0.0f64;
    let mut vector = 0.0f64;
    let mut count = 0;
    let profiles = [Profile::sphere(), Profile::spheroid(1.5).unwrap()];
    for p in profiles {
        let ctx = KernelContext::new(p, KernelConfig { phi_nodes: 32, ..Default::default() }).unwrap();
        for n in [1, 2, 4] {
            for omega in [-1.0, 0.1] {
                let k = assemble_kernel_matrix(&ctx, n, omega).map_err(|e| e.to_string())?;
                let r = largest_eigenvalue(&k).map_err(|e| e.to_string())?;
                let (vals, vecs) = jacobi_eigen(&k.sym_entries).map_err(|e| e.to_string())?;
                let v: Vec<f64> = r.eigvec.iter().zip(&k.scale).map(|(h, s)| h * s).collect();
                let col = vecs.column(0);
                let sign = if v.iter().zip(col.iter()).map(|(a, b)| a * b).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
                value = value.max((r.lambda - vals[0]).abs());
                vector = vector.max(v.iter().zip(col.iter()).map(|(a, b)| (a - sign * b).abs()).fold(0.0, f64::max));
                count += 1;
            }
        }
    }
    verdict(
        count == 12 && value <= 1e-9 && vector <= 1e-7,
        format!("{count} pairs at N=32: eigenvalue {value:.2e} (tol 1e-9), eigenvector {vector:.2e} (tol 1e-7)"),
    )
}

fn c10() -> Check {
    let ctx = sphere(96);
    let nl = Nonlinear::new(&ctx, NonlinearConfig::default()).map_err(|e| e.to_string())?;
    let zero = Perturbation::zero(&ctx, 2, 4).map_err(|e| e.to_string())?;
    let mut trivial = 0.0f64;
    for omega in [-1.0, 0.0, 0.2] {
        trivial = trivial.max(nl.f_tilde(omega, &zero).map_err(|e| e.to_string())?.max_abs());
    }
    // the θ-mean cancels F̃(Ω, 0) identically; the raw surface potential
    // must equal the exact constant −1/3 of the unit ball
    let mut potential = 0.0f64;
    for &phi in &[0.05, 0.4, 0.9, 1.3, 1.5] {
        for &t in &[0.0, 1.1, 2.7] {
            let i0 = nl.stream_i(&zero, phi, t).map_err(|e| e.to_string())?;
            potential = potential.max((i0 + 1.0 / 3.0).abs());
        }
    }
    let mut rng = StdRng::seed_from_u64(20);
    let (mut equatorial, mut mfold, mut sine) = (0.0f64, 0.0f64, 0.0f64);
    let n = ctx.len();
    for trial in 0..4 {
        let m = 2 + trial % 2;
        let c: Vec<[f64; 3]> = (0..3)
            .map(|k| {
                let amp = 0.04 / (k + 1) as f64;
                [rng.gen_range(-amp..amp), rng.gen_range(-amp..amp), rng.gen_range(-amp..amp)]
            })
            .collect();
        let f = Perturbation::from_fn(&ctx, m, 3, |k, x| {
            x.sin() * (c[k - 1][0] + c[k - 1][1] * (2.0 * x).cos() + c[k - 1][2] * (4.0 * x).cos())
        })
        .map_err(|e| e.to_string())?;
        let t = rng.gen_range(0.1..1.0);
        let i = rng.gen_range(0..n / 2);
        let thetas = [t, -t, t + 2.0 * PI / m as f64];
        let out = nl.f_tilde_on(0.1, &f, &[i, n - 1 - i], &thetas).map_err(|e| e.to_string())?;
        let v = &out.values;
        equatorial = equatorial.max((v[0][0] - v[1][0]).abs());
        sine = sine.max((v[0][0] - v[0][1]).abs());
        mfold = mfold.max((v[0][0] - v[0][2]).abs());
    }
    let sym = equatorial.max(mfold).max(sine);
    verdict(
        trivial <= 5e-6 && potential <= 5e-6 && sym <= 1e-10,
        format!(
            "max|F(Omega,0)| = {trivial:.2e}, surface potential vs -1/3 {potential:.2e} (tol 5e-6); defects equatorial {equatorial:.2e}, m-fold {mfold:.2e}, sine {sine:.2e} (tol 1e-10)"
        ),
    )
}

fn c11() -> Check {
    let ctx = sphere(96);
    let nl = Nonlinear::new(&ctx, NonlinearConfig::default()).map_err(|e| e.to_string())?;
    let bp = find_bifurcation_point(&ctx, 2).map_err(|e| e.to_string())?;
    let top = bp.eigfun.iter().zip(ctx.nodes()).fold(0.0f64, |a, (v, x)| a.max((v / x.sin()).abs()));
    let mut modes = vec![vec![0.0; ctx.len()]; 4];
    modes[0] = bp.eigfun.iter().map(|v| 0.5 * v / top).collect();
    let h = Perturbation::new(&ctx, 2, modes).map_err(|e| e.to_string())?;
    let e = gateaux_check(&nl, bp.omega_m, &h, &[1e-2, 5e-3, 2.5e-3]).map_err(|e| e.to_string())?;
    let ratios: Vec<f64> = e.windows(2).map(|w| w[0] / w[1]).collect();
    verdict(
        ratios.iter().all(|r| (1.7..=2.3).contains(r)),
        format!(
            "errors {}, halving ratios {ratios:.4?} (in [1.7, 2.3])",
            e.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn c12() -> Check {
    let start = Instant::now();
    let ctx = sphere(96);
    let nl = Nonlinear::new(&ctx, NonlinearConfig::default()).map_err(|e| e.to_string())?;
    let branch = nl.continue_branch(2, 0.03, 10).map_err(|e| e.to_string())?;
    if let Some(f) = &branch.failure {
        return Err(format!("corrector failed at step {} (s = {}): {}", f.step, f.s, f.message));
    }
    let heights: Vec<f64> = (0..9).map(|j| -0.8 + 0.2 * j as f64).collect();
    let (mut residual, mut iters, mut axis, mut velocity) = (0.0f64, 0usize, 0.0f64, 0.0f64);
    let mut slope = Vec::new();
    for p in &branch.points {
        residual = residual.max(p.residual);
        iters = iters.max(p.iterations);
        axis = axis.max(nl.velocity_on_axis(&p.f, &heights).map_err(|e| e.to_string())?);
        velocity = velocity.max(nl.velocity_residual(p.omega, &p.f).map_err(|e| e.to_string())?.velocity_max);
        slope.push((p.omega - branch.omega_m).abs() / p.s);
    }
    // |ΔΩ|/s bounded and falling as s → 0
    let vanishing = slope.windows(2).all(|w| w[0] < w[1]) && slope[0] <= 0.5 * slope[slope.len() - 1];
    let elapsed = start.elapsed();
    verdict(
        branch.points.len() == 10
            && residual <= 1e-8
            && iters <= 12
            && vanishing
            && axis <= 1e-8
            && velocity <= 1e-5
            && elapsed < Duration::from_secs(600),
        format!(
            "{} points to s = 0.03: residual {residual:.2e} (tol 1e-8), Newton <= {iters} (max 12), |dOmega|/s from {:.2e} to {:.2e}, axis {axis:.2e} (tol 1e-8), velocity {velocity:.2e} (tol 1e-5)",
            branch.points.len(),
            slope[0],
            slope[slope.len() - 1],
        ),
    )
}

fn main() {
    // runtime limits in seconds where one is set
    let criteria: [(&str, fn() -> Check, Option<f64>); 12] = [
        ("hypergeometric closed form", c1, Some(1.0)),
        ("ring integral identity", c2, Some(5.0)),
        ("sphere interior potential", c3, Some(10.0)),
        ("ellipsoid constants", c4, None),
        ("spectral monotonicity", c5, Some(60.0)),
        ("bifurcation points", c6, None),
        ("representation equivalence", c7, None),
        ("eigenfunction boundary behavior", c8, None),
        ("oracle eigensolve", c9, None),
        ("nonlinear stationarity and symmetry", c10, None),
        ("linearization consistency", c11, None),
        ("branch continuation", c12, Some(600.0)),
    ];
    let mut failed = 0;
    for (k, (name, run, limit)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let out = run();
        let secs = t.elapsed().as_secs_f64();
        let (ok, detail) = match out {
            Ok(d) => (limit.map_or(true, |l| secs < l), d),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        let limit = limit.map_or(String::new(), |l| format!(" (limit {l} s)"));
        println!(
            "[{}] {:>2} {name}: {detail}; {secs:.1} s{limit}",
            if ok { "PASS" } else { "FAIL" },
            k + 1
        );
    }
    println!("acceptance: {} of 12 criteria pass", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
