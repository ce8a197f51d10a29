//! The linearized operator `∂_f F̃(Ω, 0)` in its two representations.
//!
//! The hypergeometric form is `ℒ_n h = ν_Ω h − ∫ H_n(·, ϕ) h(ϕ) dϕ`. The
//! direct form integrates `1/|x − y|` over `(ϕ, η)` with an offset
//! trapezoid rule in `η` and split tanh-sinh in `ϕ`. The `η`-integral has a
//! logarithmic singularity at `η = 0`. The offset rule applied to
//! `ln|2 sin(η/2)|` returns `h ln 2` instead of 0, so adding `g₀ h ln 2`
//! leaves an `O(h³)` error, where `−g₀` is the log coefficient.

use std::f64::consts::{LN_2, PI};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{nu_omega, KernelContext};
use crate::nonlinear::{collocation_thetas, Nonlinear, Perturbation};
use crate::quadrature::{barycentric_eval, lagrange_basis};

/// Samples `h_n(φ_i)` of one Fourier mode on the kernel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeFunction {
    pub n: usize,
    pub values: Vec<f64>,
}

impl ModeFunction {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("mode index must be >= 1".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("mode function has non-finite samples".into()));
        }
        Ok(Self { n, values })
    }

    /// Samples `g(φ_i)` on the context grid.
    pub fn from_fn<G: Fn(f64) -> f64>(ctx: &KernelContext, n: usize, g: G) -> Result<Self> {
        Self::new(n, ctx.nodes().iter().map(|&x| g(x)).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

fn check_grid(ctx: &KernelContext, h: &ModeFunction) -> Result<()> {
    if h.values.len() != ctx.len() {
        return Err(Error::Domain(format!(
            "mode function has {} samples, grid has {}",
            h.values.len(),
            ctx.len()
        )));
    }
    Ok(())
}

/// `(ℒ_n h)(φ_i) = ν_Ω(φ_i) h(φ_i) − ∫₀^π H_n(φ_i, ϕ) h(ϕ) dϕ`.
pub fn apply_mode_hyper(ctx: &KernelContext, omega: f64, h: &ModeFunction) -> Result<ModeFunction> {
    check_grid(ctx, h)?;
    ctx.check_omega(omega)?;
    let a = ctx.product_matrix(h.n);
    let nu = nu_omega(ctx, omega);
    let values = (0..ctx.len())
        .map(|i| {
            let row: f64 = (0..ctx.len()).map(|j| a[(i, j)] * h.values[j]).sum();
            nu.values[i] * h.values[i] - row
        })
        .collect();
    ModeFunction::new(h.n, values)
}

/// Split-rule nodes at a target with the pieces of `|x − y|²` that do not
/// depend on `η`.
struct DirectStencil {
    /// `(weight · sin ϕ · r₀(ϕ), chord², 4 r₀(φ) r₀(ϕ))` per node.
    nodes: Vec<(f64, f64, f64)>,
    vphi: Vec<f64>,
    /// `2 sin φ r₀(φ) / L`, `L² = r₀′(φ)² + sin² φ`.
    log_coef: f64,
}

fn stencil(ctx: &KernelContext, phi: f64) -> DirectStencil {
    let p = ctx.profile();
    let r_phi = p.r0(phi);
    let mut nodes = Vec::new();
    let mut vphi = Vec::new();
    ctx.for_split_nodes(phi, |v, d, w| {
        let r_v = p.r0(v);
        nodes.push((w * v.sin() * r_v, p.chord_sq(phi, v, d), 4.0 * r_phi * r_v));
        vphi.push(v);
    });
    let l = (p.r0_d1(phi).powi(2) + phi.sin().powi(2)).sqrt();
    DirectStencil {
        nodes,
        vphi,
        log_coef: 2.0 * phi.sin() * r_phi / l,
    }
}

/// `∬ sin ϕ r₀(ϕ) g(ϕ) c(η) / |x − y| dη dϕ` over `[0, π] × [0, 2π)`, for
/// even `c` with `c(0) = 1`, using `M` offset nodes and symmetry in `η`.
fn direct_integral<C: Fn(f64) -> f64>(st: &DirectStencil, g: &[f64], g_at_target: f64, m: usize, c: C) -> f64 {
    let dh = 2.0 * PI / m as f64;
    let mut total = 0.0;
    for j in 0..m / 2 {
        let eta = (j as f64 + 0.5) * dh;
        let s2 = (0.5 * eta).sin().powi(2);
        let inner: f64 = st
            .nodes
            .iter()
            .zip(g)
            .map(|(&(ws, chord, four_rr), gv)| ws * gv / (chord + four_rr * s2).sqrt())
            .sum();
        total += 2.0 * dh * c(eta) * inner;
    }
    total + st.log_coef * g_at_target * dh * LN_2
}

/// `(1/(4π r₀(φ))) ∬ sin ϕ r₀(ϕ) cos η / |x − y| dη dϕ`, which equals `ν₀(φ)`.
pub fn direct_local_coefficient(ctx: &KernelContext, phi: f64) -> f64 {
    let st = stencil(ctx, phi);
    let ones = vec![1.0; st.nodes.len()];
    let m = ctx.config().theta_nodes;
    direct_integral(&st, &ones, 1.0, m, f64::cos) / (4.0 * PI * ctx.profile().r0(phi))
}

/// The double-integral representation of `ℒ_n h` at the grid nodes.
pub fn apply_mode_direct(ctx: &KernelContext, omega: f64, h: &ModeFunction) -> Result<ModeFunction> {
    check_grid(ctx, h)?;
    ctx.check_omega(omega)?;
    let m = ctx.config().theta_nodes;
    let n = h.n as f64;
    let nn = ctx.len();
    let values: Vec<f64> = (0..nn)
        .into_par_iter()
        .map(|i| {
            let phi = ctx.nodes()[i];
            let st = stencil(ctx, phi);
            let mut basis = vec![0.0; nn];
            let g: Vec<f64> = st
                .vphi
                .iter()
                .map(|&v| {
                    lagrange_basis(ctx.nodes(), ctx.bary(), v, &mut basis);
                    basis.iter().zip(&h.values).map(|(b, x)| b * x).sum()
                })
                .collect();
            let ones = vec![1.0; g.len()];
            let scale = 4.0 * PI * ctx.profile().r0(phi);
            let local = direct_integral(&st, &ones, 1.0, m, f64::cos) / scale;
            let nonlocal = direct_integral(&st, &g, h.values[i], m, |e| (n * e).cos()) / scale;
            h.values[i] * (local - omega) - nonlocal
        })
        .collect();
    ModeFunction::new(h.n, values)
}

/// `‖hyper − direct‖_∞ / ‖hyper‖_∞`, or 0 when both vanish.
pub fn cross_validate(ctx: &KernelContext, omega: f64, h: &ModeFunction) -> Result<f64> {
    let a = apply_mode_hyper(ctx, omega, h)?;
    let b = apply_mode_direct(ctx, omega, h)?;
    let top = a.max_abs();
    let diff = a
        .values
        .iter()
        .zip(&b.values)
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
    if top == 0.0 {
        return Ok(if diff == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(diff / top)
}

/// `∂_f G(Ω, 0) h / r₀` on the grid `(φ_i, θ_j)` for a field `h(ϕ, η)` given
/// as a function; this is `∂_f F̃(Ω, 0) h` when `h` has zero `θ`-mean.
///
/// Rows are indexed by `φ_i`, columns by `thetas`.
pub fn apply_full_direct<H: Fn(f64, f64) -> f64 + Sync>(
    ctx: &KernelContext,
    omega: f64,
    h: H,
    thetas: &[f64],
) -> Result<Vec<Vec<f64>>> {
    ctx.check_omega(omega)?;
    let m = ctx.config().theta_nodes;
    let dh = 2.0 * PI / m as f64;
    let rows = ctx
        .nodes()
        .par_iter()
        .map(|&phi| {
            let st = stencil(ctx, phi);
            let ones = vec![1.0; st.nodes.len()];
            let scale = 4.0 * PI * ctx.profile().r0(phi);
            let local = direct_integral(&st, &ones, 1.0, m, f64::cos) / scale;
            thetas
                .iter()
                .map(|&theta| {
                    let mut total = 0.0;
                    for k in 0..m {
                        let psi = (k as f64 + 0.5) * dh;
                        let s2 = (0.5 * psi).sin().powi(2);
                        let eta = theta + psi;
                        let inner: f64 = st
                            .nodes
                            .iter()
                            .zip(&st.vphi)
                            .map(|(&(ws, chord, four_rr), &v)| ws * h(v, eta) / (chord + four_rr * s2).sqrt())
                            .sum();
                        total += dh * inner;
                    }
                    let h_here = h(phi, theta);
                    total += st.log_coef * h_here * dh * LN_2;
                    h_here * (local - omega) - total / scale
                })
                .collect()
        })
        .collect();
    Ok(rows)
}

/// Difference-quotient errors `e(ε) = ‖(F̃(Ω, εh) − F̃(Ω, 0))/ε − ∂_f F̃(Ω, 0)h‖_∞`
/// on the half-grid collocation targets, with the derivative from the
/// hypergeometric form mode by mode.
pub fn gateaux_check(nl: &Nonlinear, omega: f64, h: &Perturbation, eps: &[f64]) -> Result<Vec<f64>> {
    let ctx = nl.context();
    let m = h.m();
    let k = nl.config().theta_modes;
    let thetas = collocation_thetas(m, k);
    let idx: Vec<usize> = (0..ctx.len() / 2).collect();
    let linear = h
        .modes()
        .iter()
        .enumerate()
        .map(|(kk, hk)| apply_mode_hyper(ctx, omega, &ModeFunction::new((kk + 1) * m, hk.clone())?))
        .collect::<Result<Vec<_>>>()?;
    let base = nl.f_tilde_on(omega, &h.scaled(0.0), &idx, &thetas)?;
    eps.iter()
        .map(|&e| {
            if e == 0.0 || !e.is_finite() {
                return Err(Error::Domain(format!("step {e} must be finite and nonzero")));
            }
            let field = nl.f_tilde_on(omega, &h.scaled(e), &idx, &thetas)?;
            let mut worst = 0.0f64;
            for (r, &i) in idx.iter().enumerate() {
                for (j, &t) in thetas.iter().enumerate() {
                    let lin: f64 = linear
                        .iter()
                        .enumerate()
                        .map(|(kk, l)| l.values[i] * (((kk + 1) * m) as f64 * t).cos())
                        .sum();
                    let q = (field.values[r][j] - base.values[r][j]) / e;
                    worst = worst.max((q - lin).abs());
                }
            }
            Ok(worst)
        })
        .collect()
}

/// Interpolates mode samples at an arbitrary `φ`.
pub fn interpolate(ctx: &KernelContext, h: &ModeFunction, phi: f64) -> f64 {
    barycentric_eval(ctx.nodes(), ctx.bary(), &h.values, phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelConfig;
    use crate::profile::Profile;
    use crate::spectral::find_bifurcation_point;
    use std::sync::OnceLock;

    fn sphere96() -> &'static KernelContext {
        static CTX: OnceLock<KernelContext> = OnceLock::new();
        CTX.get_or_init(|| KernelContext::with_defaults(Profile::sphere()).unwrap())
    }

    fn small(profile: Profile) -> KernelContext {
        KernelContext::new(
            profile,
            KernelConfig {
                phi_nodes: 24,
                theta_nodes: 64,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_maps_to_zero() {
        let ctx = sphere96();
        let h = ModeFunction::from_fn(ctx, 2, |_| 0.0).unwrap();
        assert!(apply_mode_hyper(ctx, 0.1, &h).unwrap().max_abs() == 0.0);
        assert!(apply_mode_direct(ctx, 0.1, &h).unwrap().max_abs() == 0.0);
        assert_eq!(cross_validate(ctx, 0.1, &h).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        let ctx = sphere96();
        assert!(ModeFunction::new(0, vec![0.0; 96]).is_err());
        assert!(ModeFunction::new(2, vec![f64::NAN; 96]).is_err());
        let short = ModeFunction::new(2, vec![1.0; 10]).unwrap();
        assert!(apply_mode_hyper(ctx, 0.0, &short).is_err());
        let h = ModeFunction::from_fn(ctx, 2, f64::sin).unwrap();
        assert!(apply_mode_hyper(ctx, 0.5, &h).is_err());
        assert!(apply_mode_direct(ctx, 0.5, &h).is_err());
    }

    #[test]
    fn local_coefficient_matches_nu0() {
        let ctx = sphere96();
        for phi in [0.05, 0.7, 1.5, 2.9] {
            assert!((direct_local_coefficient(ctx, phi) - 1.0 / 3.0).abs() < 1e-7, "{phi}");
        }
    }

    #[test]
    fn representations_agree_on_sphere() {
        let ctx = sphere96();
        let h = ModeFunction::from_fn(ctx, 2, |x| x.sin().powi(2)).unwrap();
        assert!(cross_validate(ctx, 0.0, &h).unwrap() < 1e-5);
        let r0 = ModeFunction::from_fn(ctx, 1, f64::sin).unwrap();
        assert!(cross_validate(ctx, 0.0, &r0).unwrap() < 1e-5);
    }

    #[test]
    fn discrepancy_falls_under_refinement() {
        let h = |ctx: &KernelContext| ModeFunction::from_fn(ctx, 3, |x| x.sin().powi(3)).unwrap();
        let coarse = small(Profile::sphere());
        let fine = KernelContext::new(
            Profile::sphere(),
            KernelConfig {
                phi_nodes: 48,
                theta_nodes: 128,
                ..Default::default()
            },
        )
        .unwrap();
        let d1 = cross_validate(&coarse, 0.0, &h(&coarse)).unwrap();
        let d2 = cross_validate(&fine, 0.0, &h(&fine)).unwrap();
        assert!(d2 <= 0.5 * d1, "{d1} {d2}");
    }

    #[test]
    fn omega_enters_linearly() {
        let ctx = sphere96();
        let h = ModeFunction::from_fn(ctx, 2, |x| x.sin().powi(2) * x.cos()).unwrap();
        let a = apply_mode_direct(ctx, 0.2, &h).unwrap();
        let b = apply_mode_direct(ctx, -1.0, &h).unwrap();
        for i in 0..ctx.len() {
            assert!((a.values[i] - b.values[i] + 1.2 * h.values[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn eigenfunction_is_annihilated() {
        let ctx = sphere96();
        let bp = find_bifurcation_point(ctx, 3).unwrap();
        let h = ModeFunction::new(3, bp.eigfun.clone()).unwrap();
        let out = apply_mode_hyper(ctx, bp.omega_m, &h).unwrap();
        assert!(out.max_abs() <= 1e-6 * h.max_abs().max(1.0), "{}", out.max_abs());
    }

    #[test]
    fn self_adjoint_under_measure() {
        let ctx = sphere96();
        let p = ctx.profile();
        let pair = |a: &ModeFunction, b: &ModeFunction| -> f64 {
            (0..ctx.len())
                .map(|i| {
                    let x = ctx.nodes()[i];
                    ctx.weights()[i] * x.sin() * p.r0(x).powi(2) * a.values[i] * b.values[i]
                })
                .sum()
        };
        let h1 = ModeFunction::from_fn(ctx, 2, |x| x.sin().powi(2)).unwrap();
        let h2 = ModeFunction::from_fn(ctx, 2, |x| x.sin().powi(3) * (1.0 + x.cos())).unwrap();
        let l1 = apply_mode_hyper(ctx, 0.1, &h1).unwrap();
        let l2 = apply_mode_hyper(ctx, 0.1, &h2).unwrap();
        assert!((pair(&l1, &h2) - pair(&h1, &l2)).abs() < 1e-8);
    }

    #[test]
    fn full_operator_keeps_modes_and_zero_mean() {
        let ctx = small(Profile::spheroid(2.0).unwrap());
        let n = 2usize;
        let q = 16;
        let thetas: Vec<f64> = (0..q).map(|j| j as f64 * 2.0 * PI / q as f64).collect();
        let field = |v: f64, e: f64| v.sin().powi(2) * (n as f64 * e).cos();
        let rows = apply_full_direct(&ctx, 0.1, field, &thetas).unwrap();
        let h = ModeFunction::from_fn(&ctx, n, |x| x.sin().powi(2)).unwrap();
        let modal = apply_mode_direct(&ctx, 0.1, &h).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let scale = row.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            let mean: f64 = row.iter().sum::<f64>() / q as f64;
            assert!(mean.abs() < 1e-10 * scale);
            for k in 0..q / 2 {
                if k == n {
                    continue;
                }
                let (c, s) = row.iter().zip(&thetas).fold((0.0, 0.0), |(c, s), (v, t)| {
                    (c + v * (k as f64 * t).cos(), s + v * (k as f64 * t).sin())
                });
                assert!(c.abs().max(s.abs()) / q as f64 <= 1e-10 * scale, "row {i} k {k}");
            }
            assert!((row[0] - modal.values[i]).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn gateaux_difference_quotients() {
        let ctx = KernelContext::new(
            Profile::sphere(),
            KernelConfig {
                phi_nodes: 24,
                ..Default::default()
            },
        )
        .unwrap();
        let nl = Nonlinear::new(&ctx, Default::default()).unwrap();
        let zero = Perturbation::zero(&ctx, 2, 4).unwrap();
        let e0 = gateaux_check(&nl, 0.1, &zero, &[1e-2, 5e-3]).unwrap();
        assert!(e0.iter().all(|&e| e == 0.0));
        let bp = find_bifurcation_point(&ctx, 2).unwrap();
        let mut modes = vec![vec![0.0; ctx.len()]; 4];
        // scaled so that r₀ + h stays positive next to the poles
        let top = bp
            .eigfun
            .iter()
            .zip(ctx.nodes())
            .fold(0.0f64, |a, (v, x)| a.max((v / x.sin()).abs()));
        modes[0] = bp.eigfun.iter().map(|v| 0.5 * v / top).collect();
        let h = Perturbation::new(&ctx, 2, modes).unwrap();
        let e = gateaux_check(&nl, bp.omega_m, &h, &[1e-2, 5e-3, 2.5e-3]).unwrap();
        for w in e.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.7..=2.3).contains(&ratio), "{e:?}");
        }
        assert!(gateaux_check(&nl, 0.1, &h, &[0.0]).is_err());
    }
}
