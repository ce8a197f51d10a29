//! Largest eigenvalues of `K_n^Ω`, dispersion curves, bifurcation points
//! `λ_m(Ω_m) = 1` and the diagnostics built on them.
//!
//! Power iteration runs on `M` in the inner product weighted by
//! `D = diag(μ_j w_j)`. This is the same iteration as on the similar matrix
//! `D^{1/2} M D^{−1/2}`, without mapping eigenvectors back through
//! `D^{−1/2}`, which is tiny next to the poles.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{assemble_kernel_matrix, KernelContext, KernelMatrix};

/// Residual target `‖S v − λ v‖₂` for power iteration.
pub const EIG_TOL: f64 = 1e-10;
/// Power iteration cap.
pub const MAX_POWER_ITERS: usize = 10_000;
/// Target `|λ_m(Ω) − 1|` in the bifurcation-point bisection.
pub const BISECTION_TOL: f64 = 1e-10;
pub const MAX_BISECTIONS: usize = 80;
/// Most negative `Ω` tried when bracketing `λ_m(Ω) = 1`.
pub const OMEGA_LO_CAP: f64 = -1e4;
/// Separation from 1 required in `kernel_dimension_check`.
pub const DIMENSION_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    pub n: usize,
    pub omega: f64,
    pub lambda: f64,
    /// `h(φ_i)`, positive, with `Σ μ_i w_i h_i² = 1`.
    pub eigvec: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Dominant eigenpair of `matrix` in the inner product `Σ d_j a_j b_j`.
///
/// Starts from the all-ones vector; `residual` is `‖D^{1/2}(M h − λ h)‖₂`
/// for `‖D^{1/2} h‖₂ = 1`.
pub fn power_iteration(
    matrix: &DMatrix<f64>,
    d: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<(f64, Vec<f64>, usize, f64)> {
    let n = matrix.nrows();
    if n == 0 || matrix.ncols() != n || d.len() != n {
        return Err(Error::Domain("power iteration needs a square matrix and matching weights".into()));
    }
    let dot = |a: &DVector<f64>, b: &DVector<f64>| -> f64 {
        a.iter().zip(b.iter()).zip(d).map(|((x, y), w)| w * x * y).sum()
    };
    let mut h = DVector::from_element(n, 1.0);
    h /= dot(&h, &h).sqrt();
    let mut lambda = 0.0;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        let w = matrix * &h;
        lambda = dot(&w, &h);
        let r = &w - &h * lambda;
        residual = dot(&r, &r).sqrt();
        let norm = dot(&w, &w).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Accuracy(format!("power iteration broke down at step {it}")));
        }
        if residual <= tol {
            let mut v: Vec<f64> = h.iter().cloned().collect();
            if v.iter().sum::<f64>() < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            return Ok((lambda, v, it, residual));
        }
        h = w / norm;
    }
    Err(Error::Accuracy(format!(
        "power iteration reached {max_iters} steps with residual {residual:.3e} (lambda ~ {lambda})"
    )))
}

/// Largest eigenvalue of `K_n^Ω` and its positive eigenfunction.
pub fn largest_eigenvalue(k: &KernelMatrix) -> Result<SpectralResult> {
    largest_eigenvalue_tol(k, EIG_TOL)
}

pub fn largest_eigenvalue_tol(k: &KernelMatrix, tol: f64) -> Result<SpectralResult> {
    let d: Vec<f64> = k.scale.iter().map(|s| s * s).collect();
    let (lambda, eigvec, iterations, residual) =
        power_iteration(&k.entries, &d, tol, MAX_POWER_ITERS)?;
    if !(lambda > 0.0) {
        return Err(Error::Consistency(format!(
            "largest eigenvalue {lambda} is not positive (n = {})",
            k.n
        )));
    }
    Ok(SpectralResult {
        n: k.n,
        omega: k.omega,
        lambda,
        eigvec,
        iterations,
        residual,
    })
}

/// `λ_n(Ω)` straight from the context.
pub fn lambda_n(ctx: &KernelContext, n: usize, omega: f64) -> Result<SpectralResult> {
    largest_eigenvalue(&assemble_kernel_matrix(ctx, n, omega)?)
}

/// Largest eigenvalue of the operator with `ν ≡ 1`, `h ↦ ∫ H_n(·, ϕ) h(ϕ) dϕ`.
pub fn stripped_eigenvalue(ctx: &KernelContext, n: usize) -> Result<f64> {
    let a = ctx.product_matrix(n);
    let p = ctx.profile();
    let d: Vec<f64> = ctx
        .nodes()
        .iter()
        .zip(ctx.weights())
        .map(|(&phi, w)| phi.sin() * p.r0(phi).powi(2) * w)
        .collect();
    Ok(power_iteration(&a, &d, EIG_TOL, MAX_POWER_ITERS)?.0)
}

/// Two-sided bound `ρᵀ S ρ ≤ λ ≤ ‖S‖_F` for a density with `Σ w_i ρ_i² = 1`.
pub fn eigen_bounds(ctx: &KernelContext, k: &KernelMatrix, rho: &[f64]) -> Result<(f64, f64)> {
    let w = ctx.weights();
    if rho.len() != w.len() {
        return Err(Error::Domain("density length differs from the grid".into()));
    }
    let norm: f64 = rho.iter().zip(w).map(|(r, w)| w * r * r).sum();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::Precondition(format!(
            "density must satisfy sum w rho^2 = 1, got {norm}"
        )));
    }
    let v = DVector::from_iterator(rho.len(), rho.iter().zip(w).map(|(r, w)| r * w.sqrt()));
    let lower = v.dot(&(&k.sym_entries * &v));
    let upper = k.sym_entries.norm();
    let lambda = largest_eigenvalue(k)?.lambda;
    let slack = 1e-9 * upper;
    if lower > lambda + slack || lambda > upper + slack {
        return Err(Error::Consistency(format!(
            "eigenvalue bracket violated: {lower} <= {lambda} <= {upper} fails"
        )));
    }
    Ok((lower, upper))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispersionRow {
    pub n: usize,
    pub omega: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// A monotonicity violation between two rows of a dispersion table.
#[derive(Debug, Clone, PartialEq)]
pub struct Anomaly {
    pub kind: AnomalyKind,
    pub n: usize,
    pub omega: f64,
    /// Offending difference (should be positive).
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnomalyKind {
    /// `λ_n ≤ λ_{n'}` for `n < n'` at fixed `Ω`.
    ModeOrder,
    /// `λ_n(Ω) ≥ λ_n(Ω')` for `Ω < Ω'`.
    OmegaOrder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispersionCurve {
    pub modes: Vec<usize>,
    pub omegas: Vec<f64>,
    /// Row-major over `(mode, omega)`.
    pub rows: Vec<DispersionRow>,
    pub anomalies: Vec<Anomaly>,
}

impl DispersionCurve {
    pub fn lambda(&self, mode_idx: usize, omega_idx: usize) -> f64 {
        self.rows[mode_idx * self.omegas.len() + omega_idx].lambda
    }
}

/// `λ_n(Ω_k)` for every mode and angular velocity; modes and `Ω` are sorted
/// ascending before the monotonicity checks.
pub fn dispersion_scan(ctx: &KernelContext, n_list: &[usize], omegas: &[f64]) -> Result<DispersionCurve> {
    dispersion_scan_tol(ctx, n_list, omegas, EIG_TOL)
}

/// `dispersion_scan` with power-iteration tolerance `tol`.
pub fn dispersion_scan_tol(
    ctx: &KernelContext,
    n_list: &[usize],
    omegas: &[f64],
    tol: f64,
) -> Result<DispersionCurve> {
    let mut modes = n_list.to_vec();
    modes.sort_unstable();
    modes.dedup();
    let mut oms = omegas.to_vec();
    oms.sort_by(f64::total_cmp);
    oms.dedup();
    if modes.first() == Some(&0) {
        return Err(Error::Domain("modes must be >= 1".into()));
    }
    for &om in &oms {
        ctx.check_omega(om)?;
    }
    modes.par_iter().for_each(|&n| {
        ctx.product_matrix(n);
    });
    let pairs: Vec<(usize, f64)> = modes
        .iter()
        .flat_map(|&n| oms.iter().map(move |&o| (n, o)))
        .collect();
    let rows = pairs
        .par_iter()
        .map(|&(n, omega)| {
            let r = largest_eigenvalue_tol(&assemble_kernel_matrix(ctx, n, omega)?, tol)?;
            Ok(DispersionRow {
                n,
                omega,
                lambda: r.lambda,
                iterations: r.iterations,
                residual: r.residual,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let no = oms.len();
    let mut anomalies = Vec::new();
    for (a, &n) in modes.iter().enumerate() {
        for (b, &om) in oms.iter().enumerate() {
            let here = rows[a * no + b].lambda;
            if a + 1 < modes.len() {
                let gap = here - rows[(a + 1) * no + b].lambda;
                if !(gap > 0.0) {
                    anomalies.push(Anomaly { kind: AnomalyKind::ModeOrder, n, omega: om, gap });
                }
            }
            if b + 1 < no {
                let gap = rows[a * no + b + 1].lambda - here;
                if !(gap > 0.0) {
                    anomalies.push(Anomaly { kind: AnomalyKind::OmegaOrder, n, omega: om, gap });
                }
            }
        }
    }
    Ok(DispersionCurve {
        modes,
        omegas: oms,
        rows,
        anomalies,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BifurcationPoint {
    pub m: usize,
    pub omega_m: f64,
    pub lambda: f64,
    /// Kernel eigenfunction `h*_m` at the nodes, unit `μ_Ω`-norm.
    pub eigfun: Vec<f64>,
    /// Final bisection interval width.
    pub bracket: f64,
    pub bisections: usize,
}

/// Root `Ω_m` of `λ_m(Ω) = 1` by bisection on `[Ω_lo, κ − δ_guard]`.
pub fn find_bifurcation_point(ctx: &KernelContext, m: usize) -> Result<BifurcationPoint> {
    if m < 2 {
        return Err(Error::Domain(format!("bifurcation needs m >= 2, got {m}")));
    }
    let mut hi = ctx.omega_max();
    let top = lambda_n(ctx, m, hi)?;
    if top.lambda < 1.0 {
        return Err(Error::Resolution(format!(
            "lambda_{m}(kappa - guard) = {} < 1; the guard {} is too wide",
            top.lambda,
            ctx.guard()
        )));
    }
    let mut step = 1.0;
    let mut lo = hi - step;
    let mut lo_res = lambda_n(ctx, m, lo)?;
    while lo_res.lambda >= 1.0 {
        if lo <= OMEGA_LO_CAP {
            return Err(Error::Domain(format!(
                "no bracket for lambda_{m} = 1 above omega = {OMEGA_LO_CAP}"
            )));
        }
        step *= 2.0;
        hi = lo;
        lo = (hi - step).max(OMEGA_LO_CAP);
        lo_res = lambda_n(ctx, m, lo)?;
    }
    let mut best = if (lo_res.lambda - 1.0).abs() < (top.lambda - 1.0).abs() {
        lo_res
    } else {
        top
    };
    let mut bisections = 0;
    while (best.lambda - 1.0).abs() > BISECTION_TOL && bisections < MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let r = lambda_n(ctx, m, mid)?;
        bisections += 1;
        if r.lambda < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (r.lambda - 1.0).abs() <= (best.lambda - 1.0).abs() {
            best = r;
        }
    }
    if (best.lambda - 1.0).abs() > 1e-9 {
        return Err(Error::Accuracy(format!(
            "bisection for m = {m} stalled at |lambda - 1| = {:.3e}",
            (best.lambda - 1.0).abs()
        )));
    }
    Ok(BifurcationPoint {
        m,
        omega_m: best.omega,
        lambda: best.lambda,
        eigfun: best.eigvec,
        bracket: hi - lo,
        bisections,
    })
}

/// Behavior of an eigenfunction next to the poles.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryReport {
    /// Linear extrapolation of `|h|` to `φ = 0` and `φ = π`, relative to `max|h|`.
    pub left: f64,
    pub right: f64,
    pub interior_max: f64,
    /// `max|h(φ_i) − h(π − φ_i)| / max|h|`.
    pub symmetry_defect: f64,
}

pub fn eigenfunction_boundary_report(ctx: &KernelContext, result: &SpectralResult) -> BoundaryReport {
    let x = ctx.nodes();
    let h = &result.eigvec;
    let n = x.len();
    let top = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let extrap = |x0: f64, x1: f64, h0: f64, h1: f64, at: f64| h0 + (at - x0) * (h1 - h0) / (x1 - x0);
    let left = extrap(x[0], x[1], h[0], h[1], 0.0).abs() / top;
    let right = extrap(x[n - 1], x[n - 2], h[n - 1], h[n - 2], std::f64::consts::PI).abs() / top;
    let symmetry_defect = (0..n)
        .map(|i| (h[i] - h[n - 1 - i]).abs())
        .fold(0.0, f64::max)
        / top;
    BoundaryReport {
        left,
        right,
        interior_max: top,
        symmetry_defect,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionCheck {
    pub n: usize,
    pub lambda: f64,
    pub ok: bool,
}

/// `λ_n(Ω_m)` for `n = 1..=n_max`: below `1 − margin` for `n > m`, away
/// from 1 for `n < m`, and equal to 1 for `n = m`.
pub fn kernel_dimension_check(
    ctx: &KernelContext,
    bp: &BifurcationPoint,
    n_max: usize,
) -> Result<Vec<DimensionCheck>> {
    if n_max < bp.m {
        return Err(Error::Domain(format!("n_max = {n_max} < m = {}", bp.m)));
    }
    (1..=n_max)
        .into_par_iter()
        .map(|n| {
            let lambda = lambda_n(ctx, n, bp.omega_m)?.lambda;
            let ok = match n.cmp(&bp.m) {
                std::cmp::Ordering::Greater => lambda < 1.0 - DIMENSION_MARGIN,
                std::cmp::Ordering::Less => (lambda - 1.0).abs() > DIMENSION_MARGIN,
                std::cmp::Ordering::Equal => (lambda - 1.0).abs() <= DIMENSION_MARGIN,
            };
            Ok(DimensionCheck { n, lambda, ok })
        })
        .collect()
}

/// `∫₀^π (h*_m)² sin φ r₀²(φ) dφ` on the grid.
pub fn transversality_check(ctx: &KernelContext, bp: &BifurcationPoint) -> Result<f64> {
    let p = ctx.profile();
    let v: f64 = ctx
        .nodes()
        .iter()
        .zip(ctx.weights())
        .zip(&bp.eigfun)
        .map(|((&phi, w), h)| w * h * h * phi.sin() * p.r0(phi).powi(2))
        .sum();
    if !(v > 0.0) {
        return Err(Error::Consistency(format!(
            "transversality integral {v} is not positive"
        )));
    }
    Ok(v)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Reference solver for small matrices; eigenvalues are returned in
/// descending order with eigenvectors as matching columns.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Domain("Jacobi needs a square matrix".into()));
    }
    let mut s = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let total = s.norm();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += s[(p, q)] * s[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * total {
            let mut pairs: Vec<(f64, usize)> = (0..n).map(|i| (s[(i, i)], i)).collect();
            pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
            let vals = pairs.iter().map(|p| p.0).collect();
            let vecs = DMatrix::from_fn(n, n, |i, j| v[(i, pairs[j].1)]);
            return Ok((vals, vecs));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = s[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (s[(q, q)] - s[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let skp = s[(k, p)];
                    let skq = s[(k, q)];
                    s[(k, p)] = c * skp - sn * skq;
                    s[(k, q)] = sn * skp + c * skq;
                }
                for k in 0..n {
                    let spk = s[(p, k)];
                    let sqk = s[(q, k)];
                    s[(p, k)] = c * spk - sn * sqk;
                    s[(q, k)] = sn * spk + c * sqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }
    Err(Error::Accuracy("Jacobi sweeps did not converge".into()))
}
