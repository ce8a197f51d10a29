//! The nonlinear functional `F̃(Ω, f)` and continuation of the rotating branch.
//!
//! `I(f)` integrates `r/|x − y|` radially in closed form; the remaining
//! `(ϕ, η)` integral uses tanh-sinh in `ψ = η − θ` on `(0, 2π)` and tanh-sinh
//! in `ϕ` split at the target, so the log singularity at `(φ, θ)` sits at
//! the endpoints of both rules.
//!
//! Perturbations are `f(φ, θ) = Σ_k f_k(φ) cos(k m θ)`, sampled on the kernel
//! grid. Off-grid values come from barycentric interpolation of `f_k / sin φ`,
//! so the reconstructed `f` vanishes at the poles.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::KernelContext;
use crate::quadrature::{barycentric_eval, lagrange_basis, TanhSinh};
use crate::spectral::{find_bifurcation_point, BifurcationPoint};

pub const DEFAULT_THETA_MODES: usize = 4;
pub const NEWTON_TOL: f64 = 1e-8;
pub const MAX_NEWTON_ITERS: usize = 25;
pub const MAX_HALVINGS: usize = 6;
pub const FD_STEP: f64 = 1e-6;
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Near a log singularity the part of `(0, ε)` carries `O(ε ln ε)`.
const DE_CUTOFF: f64 = 1e-18;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearConfig {
    /// Number `K` of `cos(k m θ)` modes kept.
    pub theta_modes: usize,
    pub eta_level: u32,
    pub phi_level: u32,
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub fd_step: f64,
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        Self {
            theta_modes: DEFAULT_THETA_MODES,
            eta_level: 7,
            phi_level: 7,
            newton_tol: NEWTON_TOL,
            max_newton_iters: MAX_NEWTON_ITERS,
            fd_step: FD_STEP,
        }
    }
}

impl NonlinearConfig {
    pub fn validate(&self) -> Result<()> {
        if self.theta_modes == 0 {
            return Err(Error::Domain("theta_modes must be >= 1".into()));
        }
        for level in [self.eta_level, self.phi_level] {
            if !(3..=12).contains(&level) {
                return Err(Error::Domain(format!("quadrature level {level} outside 3..=12")));
            }
        }
        if !(self.newton_tol > 0.0 && self.newton_tol < 1e-2) {
            return Err(Error::Domain(format!("newton_tol {} outside (0, 1e-2)", self.newton_tol)));
        }
        if !(self.fd_step > 0.0 && self.fd_step < 1e-2) {
            return Err(Error::Domain(format!("fd_step {} outside (0, 1e-2)", self.fd_step)));
        }
        if self.max_newton_iters == 0 {
            return Err(Error::Domain("max_newton_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// `θ_j = jπ/(mK)`, `j = 0..=K`: half an `m`-fold period.
pub fn collocation_thetas(m: usize, k: usize) -> Vec<f64> {
    (0..=k).map(|j| j as f64 * PI / (m * k) as f64).collect()
}

/// `f(φ, θ) = Σ_k f_k(φ) cos(k m θ)` with `f_k` sampled on the kernel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    m: usize,
    modes: Vec<Vec<f64>>,
}

impl Perturbation {
    /// `modes[k − 1]` holds `f_k(φ_i)`.
    pub fn new(ctx: &KernelContext, m: usize, modes: Vec<Vec<f64>>) -> Result<Self> {
        if m == 0 {
            return Err(Error::Domain("fold index m must be >= 1".into()));
        }
        let n = ctx.len();
        for (k, f) in modes.iter().enumerate() {
            if f.len() != n {
                return Err(Error::Domain(format!("mode {} has {} samples, grid has {n}", k + 1, f.len())));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("mode {} has non-finite samples", k + 1)));
            }
            let scale = f.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            for i in 0..n / 2 {
                if (f[i] - f[n - 1 - i]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::Validation(format!(
                        "mode {} breaks equatorial symmetry at node {i}",
                        k + 1
                    )));
                }
            }
        }
        let p = Self { m, modes };
        let k = p.theta_modes().max(1);
        for (i, &phi) in ctx.nodes().iter().enumerate() {
            let r0 = ctx.profile().r0(phi);
            for theta in collocation_thetas(m, k) {
                if r0 + p.value_at_node(i, theta) <= 0.0 {
                    return Err(Error::Geometry(format!(
                        "r = r0 + f is not positive at phi = {phi}, theta = {theta}"
                    )));
                }
            }
        }
        Ok(p)
    }

    pub fn zero(ctx: &KernelContext, m: usize, k: usize) -> Result<Self> {
        Self::new(ctx, m, vec![vec![0.0; ctx.len()]; k])
    }

    /// Samples `g(k, φ)` for `k = 1..=K`.
    pub fn from_fn<G: Fn(usize, f64) -> f64>(ctx: &KernelContext, m: usize, k: usize, g: G) -> Result<Self> {
        let modes = (1..=k).map(|kk| ctx.nodes().iter().map(|&x| g(kk, x)).collect()).collect();
        Self::new(ctx, m, modes)
    }

    /// Builds the full grid from values on the nodes with `φ < π/2`.
    pub fn from_half(ctx: &KernelContext, m: usize, half: &[Vec<f64>]) -> Result<Self> {
        let n = ctx.len();
        let modes = half
            .iter()
            .map(|h| {
                let mut f = vec![0.0; n];
                for (i, &v) in h.iter().enumerate().take(n / 2) {
                    f[i] = v;
                    f[n - 1 - i] = v;
                }
                f
            })
            .collect();
        Self::new(ctx, m, modes)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn modes(&self) -> &[Vec<f64>] {
        &self.modes
    }

    pub fn theta_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn max_abs(&self) -> f64 {
        self.modes.iter().flatten().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.max_abs() == 0.0
    }

    pub fn value_at_node(&self, i: usize, theta: f64) -> f64 {
        self.modes
            .iter()
            .enumerate()
            .map(|(k, f)| f[i] * ((k + 1) as f64 * self.m as f64 * theta).cos())
            .sum()
    }

    fn theta_derivative_at_node(&self, i: usize, theta: f64) -> f64 {
        self.modes
            .iter()
            .enumerate()
            .map(|(k, f)| {
                let km = (k + 1) as f64 * self.m as f64;
                -km * f[i] * (km * theta).sin()
            })
            .sum()
    }

    /// `f_k(φ)` off the grid, interpolating `f_k / sin φ`.
    pub fn mode_at(&self, ctx: &KernelContext, k: usize, phi: f64) -> f64 {
        let g: Vec<f64> = self.modes[k - 1]
            .iter()
            .zip(ctx.nodes())
            .map(|(f, x)| f / x.sin())
            .collect();
        phi.sin() * barycentric_eval(ctx.nodes(), ctx.bary(), &g, phi)
    }

    pub fn value(&self, ctx: &KernelContext, phi: f64, theta: f64) -> f64 {
        (1..=self.theta_modes())
            .map(|k| self.mode_at(ctx, k, phi) * (k as f64 * self.m as f64 * theta).cos())
            .sum()
    }

    /// Polynomial extrapolants of the raw samples at `φ = 0` and `φ = π`.
    pub fn endpoint_extrapolants(&self, ctx: &KernelContext) -> Vec<(f64, f64)> {
        self.modes
            .iter()
            .map(|f| {
                (
                    barycentric_eval(ctx.nodes(), ctx.bary(), f, 0.0),
                    barycentric_eval(ctx.nodes(), ctx.bary(), f, PI),
                )
            })
            .collect()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            m: self.m,
            modes: self.modes.iter().map(|f| f.iter().map(|v| s * v).collect()).collect(),
        }
    }

    /// `‖self − other‖_∞` over node samples, padding missing modes with zeros.
    pub fn distance(&self, other: &Self) -> f64 {
        let k = self.theta_modes().max(other.theta_modes());
        let mut d = 0.0f64;
        for kk in 0..k {
            let a = self.modes.get(kk);
            let b = other.modes.get(kk);
            let n = a.or(b).map_or(0, |v| v.len());
            for i in 0..n {
                let x = a.map_or(0.0, |v| v[i]);
                let y = b.map_or(0.0, |v| v[i]);
                d = d.max((x - y).abs());
            }
        }
        d
    }
}

/// Values on targets `(phis[i], thetas[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub phis: Vec<f64>,
    pub thetas: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl Field {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Split-rule nodes at one target colatitude.
#[derive(Clone)]
struct Stencil {
    phi: f64,
    r0: f64,
    /// `weight · sin ϕ`.
    ws: Vec<f64>,
    sin_v: Vec<f64>,
    r0v: Vec<f64>,
    /// `r₀(ϕ) − r₀(φ)`.
    dr0: Vec<f64>,
    /// `(cos φ − cos ϕ)²`.
    dz2: Vec<f64>,
    /// Lagrange basis rows at the nodes, row-major.
    basis: Vec<f64>,
}

/// One node of the `ψ` rule with `ψ` reduced to `(−π, π]`.
#[derive(Debug, Clone, Copy)]
struct EtaNode {
    psi: f64,
    sin: f64,
    cos: f64,
    /// `sin²(ψ/2)`.
    hav: f64,
    weight: f64,
}

fn geometry_error(phi: f64, theta: f64) -> Error {
    Error::Geometry(format!("r = r0 + f is not positive near phi = {phi}, theta = {theta}"))
}

/// `(∫₀^ρ r dr/√(r² − 2rb + d²), √(r² − 2ρb + d²))` from `x = ρ − b` and
/// `y² = d² − b² > 0`, arranged to avoid cancellation near the target.
#[inline]
fn radial_primitive(x: f64, y2: f64, b: f64, d: f64) -> (f64, f64) {
    let sq = (x * x + y2).sqrt();
    let num = if x >= 0.0 { x + sq } else { y2 / (sq - x) };
    let den = if b <= 0.0 { d - b } else { y2 / (d + b) };
    (sq - d + b * (num / den).ln(), sq)
}

/// The nonlinear functional on a fixed kernel context.
pub struct Nonlinear<'a> {
    ctx: &'a KernelContext,
    cfg: NonlinearConfig,
    eta: Vec<EtaNode>,
    phi_rule: TanhSinh,
    stencils: Vec<Stencil>,
}

impl<'a> Nonlinear<'a> {
    pub fn new(ctx: &'a KernelContext, cfg: NonlinearConfig) -> Result<Self> {
        cfg.validate()?;
        if ctx.len() % 2 != 0 {
            return Err(Error::Domain("the equatorial half-grid needs an even node count".into()));
        }
        let eta_rule = TanhSinh::with_cutoff(cfg.eta_level, DE_CUTOFF);
        let eta = eta_rule
            .nodes()
            .iter()
            .map(|nd| {
                let psi = if nd.lo <= nd.hi { PI * nd.lo } else { -PI * nd.hi };
                let s = (0.5 * psi).sin();
                EtaNode {
                    psi,
                    sin: psi.sin(),
                    cos: psi.cos(),
                    hav: s * s,
                    weight: PI * nd.weight,
                }
            })
            .collect();
        let phi_rule = TanhSinh::with_cutoff(cfg.phi_level, DE_CUTOFF);
        let mut nl = Self {
            ctx,
            cfg,
            eta,
            phi_rule,
            stencils: Vec::new(),
        };
        nl.stencils = ctx.nodes().par_iter().map(|&phi| nl.build_stencil(phi)).collect();
        Ok(nl)
    }

    pub fn with_defaults(ctx: &'a KernelContext) -> Result<Self> {
        Self::new(ctx, NonlinearConfig::default())
    }

    pub fn context(&self) -> &KernelContext {
        self.ctx
    }

    pub fn config(&self) -> NonlinearConfig {
        self.cfg
    }

    fn build_stencil(&self, phi: f64) -> Stencil {
        let p = self.ctx.profile();
        let n = self.ctx.len();
        let r0 = p.r0(phi);
        let mut st = Stencil {
            phi,
            r0,
            ws: Vec::new(),
            sin_v: Vec::new(),
            r0v: Vec::new(),
            dr0: Vec::new(),
            dz2: Vec::new(),
            basis: Vec::new(),
        };
        let mut row = vec![0.0; n];
        let mut push = |v: f64, d: f64, w: f64| {
            let dz = -2.0 * (0.5 * (phi + v)).sin() * (0.5 * d).sin();
            st.ws.push(w * v.sin());
            st.sin_v.push(v.sin());
            st.r0v.push(p.r0(v));
            st.dr0.push(-p.r0_diff(phi, v, d));
            st.dz2.push(dz * dz);
            lagrange_basis(self.ctx.nodes(), self.ctx.bary(), v, &mut row);
            st.basis.extend_from_slice(&row);
        };
        for (a, b, lower) in [(0.0, phi, true), (phi, PI, false)] {
            let half = 0.5 * (b - a);
            for nd in self.phi_rule.nodes() {
                let (da, db) = (half * nd.lo, half * nd.hi);
                let v = if nd.lo <= nd.hi { a + da } else { b - db };
                // signed φ − ϕ at full precision
                let d = if lower { if nd.lo <= nd.hi { phi - v } else { db } } else if nd.lo <= nd.hi {
                    -da
                } else {
                    phi - v
                };
                push(v, d, half * nd.weight);
            }
        }
        st
    }

    fn stencil_for(&self, phi: f64) -> std::borrow::Cow<'_, Stencil> {
        match self.ctx.nodes().iter().position(|&x| x == phi) {
            Some(i) => std::borrow::Cow::Borrowed(&self.stencils[i]),
            None => std::borrow::Cow::Owned(self.build_stencil(phi)),
        }
    }

    /// `f_k` at the stencil nodes.
    fn modes_at(&self, st: &Stencil, f: &Perturbation) -> Vec<Vec<f64>> {
        let n = self.ctx.len();
        f.modes()
            .iter()
            .map(|fk| {
                let g: Vec<f64> = fk.iter().zip(self.ctx.nodes()).map(|(v, x)| v / x.sin()).collect();
                st.basis
                    .chunks_exact(n)
                    .zip(&st.sin_v)
                    .map(|(row, s)| s * row.iter().zip(&g).map(|(b, x)| b * x).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    fn target_value(&self, st: &Stencil, f: &Perturbation, theta: f64) -> f64 {
        match self.ctx.nodes().iter().position(|&x| x == st.phi) {
            Some(i) => f.value_at_node(i, theta),
            None => f.value(self.ctx, st.phi, theta),
        }
    }

    fn target_derivative(&self, st: &Stencil, f: &Perturbation, theta: f64) -> f64 {
        match self.ctx.nodes().iter().position(|&x| x == st.phi) {
            Some(i) => f.theta_derivative_at_node(i, theta),
            None => (1..=f.theta_modes())
                .map(|k| {
                    let km = (k * f.m()) as f64;
                    -km * f.mode_at(self.ctx, k, st.phi) * (km * theta).sin()
                })
                .sum(),
        }
    }

    /// `I(f)` at `(st.phi, θ)` from precomputed node values of `f_k`.
    fn stream_at(&self, st: &Stencil, fq: &[Vec<f64>], m: usize, theta: f64, f_t: f64) -> Result<f64> {
        let r_t = st.r0 + f_t;
        if r_t <= 0.0 {
            return Err(geometry_error(st.phi, theta));
        }
        let d: Vec<f64> = st.dz2.iter().map(|z| (r_t * r_t + z).sqrt()).collect();
        let mut cosk = vec![0.0; fq.len()];
        let mut total = 0.0;
        for e in &self.eta {
            for (k, c) in cosk.iter_mut().enumerate() {
                *c = ((k + 1) as f64 * m as f64 * (theta + e.psi)).cos();
            }
            let b = r_t * e.cos;
            let rs2 = (r_t * e.sin).powi(2);
            let shift = 2.0 * r_t * e.hav - f_t;
            let mut inner = 0.0;
            for q in 0..st.ws.len() {
                let fv: f64 = fq.iter().zip(&cosk).map(|(fk, c)| fk[q] * c).sum();
                if st.r0v[q] + fv <= 0.0 {
                    return Err(geometry_error(st.phi, theta));
                }
                let x = st.dr0[q] + fv + shift;
                let y2 = (rs2 + st.dz2[q]).max(f64::MIN_POSITIVE);
                inner += st.ws[q] * radial_primitive(x, y2, b, d[q]).0;
            }
            total += e.weight * inner;
        }
        Ok(-total / (4.0 * PI))
    }

    /// `I(f)(φ, θ)`: the potential of the perturbed patch at its own boundary.
    pub fn stream_i(&self, f: &Perturbation, phi: f64, theta: f64) -> Result<f64> {
        if !(phi > 0.0 && phi < PI) {
            return Err(Error::Domain(format!("target phi = {phi} outside (0, pi)")));
        }
        let st = self.stencil_for(phi);
        let fq = self.modes_at(&st, f);
        let f_t = self.target_value(&st, f, theta);
        self.stream_at(&st, &fq, f.m(), theta, f_t)
    }

    /// `(1/2π) ∫ [I(f) − (Ω/2) r²] dθ` by the trapezoid rule with `per_period`
    /// nodes on each of `periods` copies of the `m`-fold period.
    pub fn mean_m_periods(
        &self,
        omega: f64,
        f: &Perturbation,
        phi: f64,
        per_period: usize,
        periods: usize,
    ) -> Result<f64> {
        if per_period == 0 || periods == 0 {
            return Err(Error::Domain("trapezoid needs at least one node".into()));
        }
        let st = self.stencil_for(phi);
        let fq = self.modes_at(&st, f);
        let total = per_period * periods;
        let mut acc = 0.0;
        for j in 0..total {
            let theta = j as f64 * 2.0 * PI / (f.m() * per_period) as f64;
            let f_t = self.target_value(&st, f, theta);
            let r = st.r0 + f_t;
            acc += self.stream_at(&st, &fq, f.m(), theta, f_t)? - 0.5 * omega * r * r;
        }
        Ok(acc / total as f64)
    }

    /// `m(Ω, f)(φ)` over one `m`-fold period with `2K` nodes.
    pub fn mean_m(&self, omega: f64, f: &Perturbation, phi: f64) -> Result<f64> {
        self.mean_m_periods(omega, f, phi, 2 * self.cfg.theta_modes, 1)
    }

    /// `G = I − (Ω/2) r²` at the collocation angles and the requested ones,
    /// plus the trapezoid mean from the collocation samples.
    fn g_samples(&self, st: &Stencil, omega: f64, f: &Perturbation, thetas: &[f64]) -> Result<(f64, Vec<f64>)> {
        let k = self.cfg.theta_modes;
        let fq = self.modes_at(st, f);
        let g_at = |theta: f64| -> Result<f64> {
            let f_t = self.target_value(st, f, theta);
            let r = st.r0 + f_t;
            Ok(self.stream_at(st, &fq, f.m(), theta, f_t)? - 0.5 * omega * r * r)
        };
        let colloc = collocation_thetas(f.m(), k);
        let gc = colloc.iter().map(|&t| g_at(t)).collect::<Result<Vec<_>>>()?;
        let mean = (gc[0] + gc[k] + 2.0 * gc[1..k].iter().sum::<f64>()) / (2 * k) as f64;
        let values = if thetas == colloc.as_slice() {
            gc
        } else {
            thetas.iter().map(|&t| g_at(t)).collect::<Result<Vec<_>>>()?
        };
        Ok((mean, values))
    }

    /// `F̃(Ω, f)` at grid nodes `phi_idx` and angles `thetas`.
    pub fn f_tilde_on(&self, omega: f64, f: &Perturbation, phi_idx: &[usize], thetas: &[f64]) -> Result<Field> {
        let rows = phi_idx
            .par_iter()
            .map(|&i| {
                let st = &self.stencils[i];
                let (mean, g) = self.g_samples(st, omega, f, thetas)?;
                Ok(g.iter().map(|v| (v - mean) / st.r0).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(Field {
            phis: phi_idx.iter().map(|&i| self.ctx.nodes()[i]).collect(),
            thetas: thetas.to_vec(),
            values: rows,
        })
    }

    /// `F̃(Ω, f)` on the full grid at the collocation angles.
    pub fn f_tilde(&self, omega: f64, f: &Perturbation) -> Result<Field> {
        let idx: Vec<usize> = (0..self.ctx.len()).collect();
        self.f_tilde_on(omega, f, &idx, &collocation_thetas(f.m(), self.cfg.theta_modes))
    }

    fn half_indices(&self) -> Vec<usize> {
        (0..self.ctx.len() / 2).collect()
    }

    /// `Ũ = e^{−iθ} U_h` at `(st.phi, θ)`.
    fn velocity_at(&self, st: &Stencil, fq: &[Vec<f64>], m: usize, theta: f64, f_t: f64) -> Result<(f64, f64)> {
        let r_t = st.r0 + f_t;
        if r_t <= 0.0 {
            return Err(geometry_error(st.phi, theta));
        }
        let mut cosk = vec![0.0; fq.len()];
        let mut sink = vec![0.0; fq.len()];
        let (mut re, mut im) = (0.0, 0.0);
        for e in &self.eta {
            for k in 0..fq.len() {
                let km = (k + 1) as f64 * m as f64;
                let (s, c) = (km * (theta + e.psi)).sin_cos();
                cosk[k] = c;
                sink[k] = -km * s;
            }
            let rs2 = (r_t * e.sin).powi(2);
            let shift = 2.0 * r_t * e.hav - f_t;
            let (mut a, mut b) = (0.0, 0.0);
            for q in 0..st.ws.len() {
                let mut fv = 0.0;
                let mut dfv = 0.0;
                for k in 0..fq.len() {
                    fv += fq[k][q] * cosk[k];
                    dfv += fq[k][q] * sink[k];
                }
                let rho = st.r0v[q] + fv;
                if rho <= 0.0 {
                    return Err(geometry_error(st.phi, theta));
                }
                let x = st.dr0[q] + fv + shift;
                let y2 = (rs2 + st.dz2[q]).max(f64::MIN_POSITIVE);
                let inv = st.ws[q] / (x * x + y2).sqrt();
                // (∂_η r + i r) e^{iψ}
                a += inv * (dfv * e.cos - rho * e.sin);
                b += inv * (dfv * e.sin + rho * e.cos);
            }
            re += e.weight * a;
            im += e.weight * b;
        }
        Ok((re / (4.0 * PI), im / (4.0 * PI)))
    }

    /// `Re[{U_h − iΩ r e^{iθ}}{(i∂_θ r + r)e^{−iθ}}]` on the half-grid
    /// collocation targets.
    pub fn velocity_field(&self, omega: f64, f: &Perturbation) -> Result<Field> {
        let m = f.m();
        let thetas = collocation_thetas(m, self.cfg.theta_modes);
        let idx = self.half_indices();
        let values = idx
            .par_iter()
            .map(|&i| {
                let st = &self.stencils[i];
                let fq = self.modes_at(st, f);
                thetas
                    .iter()
                    .map(|&t| {
                        let f_t = self.target_value(st, f, t);
                        let r = st.r0 + f_t;
                        let r_th = self.target_derivative(st, f, t);
                        let (a, b) = self.velocity_at(st, &fq, m, t, f_t)?;
                        Ok(a * r - b * r_th + omega * r * r_th)
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Field {
            phis: idx.iter().map(|&i| self.ctx.nodes()[i]).collect(),
            thetas,
            values,
        })
    }

    /// The velocity form against `−r₀ ∂_θ F̃`, the `θ`-derivative of the
    /// stream form, on the half-grid collocation targets.
    pub fn velocity_residual(&self, omega: f64, f: &Perturbation) -> Result<VelocityCheck> {
        let m = f.m();
        let vel = self.velocity_field(omega, f)?;
        let idx = self.half_indices();
        let stream = self.f_tilde_on(omega, f, &idx, &vel.thetas)?;
        let mut velocity_max = 0.0f64;
        let mut stream_max = 0.0f64;
        let mut discrepancy = 0.0f64;
        for (row, (srow, &i)) in vel.values.iter().zip(stream.values.iter().zip(&idx)) {
            let r0 = self.stencils[i].r0;
            let coef = dct1(srow);
            for (j, &t) in vel.thetas.iter().enumerate() {
                let dth: f64 = coef
                    .iter()
                    .enumerate()
                    .map(|(kk, c)| -c * (kk * m) as f64 * ((kk * m) as f64 * t).sin())
                    .sum();
                let from_stream = -r0 * dth;
                velocity_max = velocity_max.max(row[j].abs());
                stream_max = stream_max.max(from_stream.abs());
                discrepancy = discrepancy.max((row[j] - from_stream).abs());
            }
        }
        Ok(VelocityCheck {
            velocity_max,
            stream_max,
            discrepancy,
        })
    }

    /// `max_z |U(0, 0, z)|` for an `m`-fold perturbation with `m ≥ 2`.
    pub fn velocity_on_axis(&self, f: &Perturbation, z_list: &[f64]) -> Result<f64> {
        if f.m() < 2 {
            return Err(Error::Precondition(
                "axis velocity vanishes only for m-fold symmetry with m >= 2".into(),
            ));
        }
        let ctx = self.ctx;
        let mut worst = 0.0f64;
        for &z in z_list {
            let (i1, i2) = axis_integrals(ctx, ctx.config().theta_nodes, z, |i, eta| {
                let r = ctx.profile().r0(ctx.nodes()[i]) + f.value_at_node(i, eta);
                (r, f.theta_derivative_at_node(i, eta))
            })?;
            worst = worst.max(i1.hypot(i2) / (4.0 * PI));
        }
        Ok(worst)
    }

    /// Newton correction of the square system `{F̃(Ω, f) = 0, ⟨f, h*⟩ = s}`.
    pub fn newton_correct(
        &self,
        bp: &BifurcationPoint,
        s: f64,
        omega_init: f64,
        f_init: &Perturbation,
    ) -> Result<BranchPoint> {
        let dir = BranchDirection::new(self.ctx, bp)?;
        let mut jac = None;
        self.newton_with(&dir, s, omega_init, f_init, &mut jac)
    }

    fn amplitude(&self, dir: &BranchDirection, f: &Perturbation) -> f64 {
        f.modes().first().map_or(0.0, |f1| {
            f1.iter()
                .zip(&dir.hstar)
                .zip(self.ctx.weights())
                .map(|((a, b), w)| w * a * b)
                .sum()
        })
    }

    fn unpack(&self, m: usize, x: &DVector<f64>) -> Result<Perturbation> {
        let nh = self.ctx.len() / 2;
        let half: Vec<Vec<f64>> = (0..self.cfg.theta_modes)
            .map(|k| x.as_slice()[1 + k * nh..1 + (k + 1) * nh].to_vec())
            .collect();
        Perturbation::from_half(self.ctx, m, &half)
    }

    fn pack(&self, omega: f64, f: &Perturbation) -> DVector<f64> {
        let nh = self.ctx.len() / 2;
        let k = self.cfg.theta_modes;
        let mut x = DVector::zeros(1 + k * nh);
        x[0] = omega;
        for (kk, fk) in f.modes().iter().enumerate().take(k) {
            for i in 0..nh {
                x[1 + kk * nh + i] = fk[i];
            }
        }
        x
    }

    /// Residual vector `(⟨f, h*⟩ − s, DCT modes 1..K of F̃ on the half-grid)`
    /// and `max |F̃|` over the samples.
    fn system(&self, dir: &BranchDirection, s: f64, omega: f64, f: &Perturbation) -> Result<(DVector<f64>, f64)> {
        let k = self.cfg.theta_modes;
        let idx = self.half_indices();
        let field = self.f_tilde_on(omega, f, &idx, &collocation_thetas(f.m(), k))?;
        let nh = idx.len();
        let mut out = DVector::zeros(1 + k * nh);
        out[0] = self.amplitude(dir, f) - s;
        for (i, row) in field.values.iter().enumerate() {
            let c = dct1(row);
            for kk in 1..=k {
                out[1 + (kk - 1) * nh + i] = c[kk];
            }
        }
        Ok((out, field.max_abs()))
    }

    fn jacobian(&self, dir: &BranchDirection, s: f64, omega: f64, f: &Perturbation, base: &DVector<f64>) -> Result<DMatrix<f64>> {
        let x0 = self.pack(omega, f);
        let n = x0.len();
        let k = self.cfg.theta_modes;
        let nh = self.ctx.len() / 2;
        let idx = self.half_indices();
        let mut jac = DMatrix::zeros(n, n);
        // Ω enters only through −(Ω/2)(r² − ⟨r²⟩_θ)/r₀
        let thetas = collocation_thetas(f.m(), k);
        for &i in &idx {
            let r0 = self.stencils[i].r0;
            let r2: Vec<f64> = thetas
                .iter()
                .map(|&t| (r0 + f.value_at_node(i, t)).powi(2))
                .collect();
            let mean = (r2[0] + r2[k] + 2.0 * r2[1..k].iter().sum::<f64>()) / (2 * k) as f64;
            let col: Vec<f64> = r2.iter().map(|v| -0.5 * (v - mean) / r0).collect();
            let c = dct1(&col);
            for kk in 1..=k {
                jac[(1 + (kk - 1) * nh + i, 0)] = c[kk];
            }
        }
        let cols = (1..n)
            .into_par_iter()
            .map(|j| {
                let mut x = x0.clone();
                let step = self.cfg.fd_step * (1.0 + x[j].abs());
                x[j] += step;
                let fp = self.unpack(f.m(), &x)?;
                let (r, _) = self.system(dir, s, omega, &fp)?;
                Ok((r - base) / step)
            })
            .collect::<Result<Vec<DVector<f64>>>>()?;
        for (j, c) in cols.into_iter().enumerate() {
            jac.set_column(j + 1, &c);
        }
        Ok(jac)
    }

    fn newton_with(
        &self,
        dir: &BranchDirection,
        s: f64,
        omega_init: f64,
        f_init: &Perturbation,
        jac: &mut Option<DMatrix<f64>>,
    ) -> Result<BranchPoint> {
        let m = dir.m;
        let k = self.cfg.theta_modes;
        if f_init.m() != m {
            return Err(Error::Domain(format!("initial guess has m = {}, branch has m = {m}", f_init.m())));
        }
        if s == 0.0 {
            let zero = Perturbation::zero(self.ctx, m, k)?;
            let residual = self.f_tilde_on(dir.omega_m, &zero, &self.half_indices(), &collocation_thetas(m, k))?.max_abs();
            return Ok(BranchPoint {
                s,
                omega: dir.omega_m,
                f: zero,
                residual,
                iterations: 0,
            });
        }
        let mut x = self.pack(omega_init, f_init);
        let mut f = self.unpack(m, &x)?;
        let (mut r, mut res) = self.system(dir, s, x[0], &f)?;
        if !res.is_finite() {
            return Err(Error::Precondition("initial residual is not finite".into()));
        }
        let mut fresh = false;
        if jac.is_none() {
            *jac = Some(self.jacobian(dir, s, x[0], &f, &r)?);
            fresh = true;
        }
        for it in 0..self.cfg.max_newton_iters {
            let j = jac.as_ref().expect("jacobian is set");
            let dx = j
                .clone()
                .lu()
                .solve(&(-&r))
                .filter(|d| d.iter().all(|v| v.is_finite()))
                .ok_or_else(|| Error::StepSize(format!("singular Newton matrix at s = {s}")))?;
            if res <= self.cfg.newton_tol && r[0].abs() <= self.cfg.newton_tol {
                // one polishing step, kept only if it helps; Ω is sensitive to
                // residuals of order s·|ΔΩ|
                let xt = &x + &dx;
                let mut iterations = it;
                if let Ok(ft) = self.unpack(m, &xt) {
                    if let Ok((rt, rest)) = self.system(dir, s, xt[0], &ft) {
                        if rt.amax() < r.amax() {
                            x = xt;
                            f = ft;
                            res = rest;
                            iterations += 1;
                        }
                    }
                }
                return Ok(BranchPoint {
                    s,
                    omega: x[0],
                    f,
                    residual: res,
                    iterations,
                });
            }
            let norm = r.amax();
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let xt = &x + &dx * t;
                if let Ok(ft) = self.unpack(m, &xt) {
                    if let Ok((rt, rest)) = self.system(dir, s, xt[0], &ft) {
                        if rt.amax() < norm {
                            accepted = Some((xt, ft, rt, rest));
                            break;
                        }
                    }
                }
                t *= 0.5;
            }
            match accepted {
                Some((xn, fnew, rn, resn)) => {
                    let ratio = rn.amax() / norm;
                    let step = &xn - &x;
                    let dr = &rn - &r;
                    if ratio > 0.5 && !fresh {
                        *jac = Some(self.jacobian(dir, s, xn[0], &fnew, &rn)?);
                        fresh = true;
                    } else {
                        let jm = jac.as_mut().expect("jacobian is set");
                        let u = &dr - &*jm * &step;
                        let denom = step.dot(&step);
                        if denom > 0.0 {
                            *jm += u * step.transpose() / denom;
                        }
                        fresh = false;
                    }
                    x = xn;
                    f = fnew;
                    r = rn;
                    res = resn;
                }
                None if !fresh => {
                    *jac = Some(self.jacobian(dir, s, x[0], &f, &r)?);
                    fresh = true;
                }
                None => {
                    return Err(Error::StepSize(format!(
                        "no damped step reduces the residual at s = {s} (residual {res:.3e})"
                    )));
                }
            }
        }
        if res <= self.cfg.newton_tol && r[0].abs() <= self.cfg.newton_tol {
            return Ok(BranchPoint {
                s,
                omega: x[0],
                f,
                residual: res,
                iterations: self.cfg.max_newton_iters,
            });
        }
        Err(Error::StepSize(format!(
            "Newton did not converge at s = {s} after {} iterations (residual {res:.3e})",
            self.cfg.max_newton_iters
        )))
    }

    /// Branch points at `s_j = j s_max / steps`, `j = 1..=steps`.
    pub fn continue_branch(&self, m: usize, s_max: f64, steps: usize) -> Result<Branch> {
        if steps == 0 {
            return Err(Error::Domain("steps must be >= 1".into()));
        }
        let bp = find_bifurcation_point(self.ctx, m)?;
        self.continue_from(&bp, s_max, steps)
    }

    pub fn continue_from(&self, bp: &BifurcationPoint, s_max: f64, steps: usize) -> Result<Branch> {
        if steps == 0 {
            return Err(Error::Domain("steps must be >= 1".into()));
        }
        if !s_max.is_finite() {
            return Err(Error::Domain("s_max must be finite".into()));
        }
        let dir = BranchDirection::new(self.ctx, bp)?;
        let k = self.cfg.theta_modes;
        let linear = |s: f64| -> Result<Perturbation> {
            let mut modes = vec![vec![0.0; self.ctx.len()]; k];
            modes[0] = dir.hstar.iter().map(|h| s * h).collect();
            Perturbation::new(self.ctx, dir.m, modes)
        };
        let mut points: Vec<BranchPoint> = Vec::new();
        let mut jac = None;
        let mut failure = None;
        for j in 1..=steps {
            let s = j as f64 * s_max / steps as f64;
            // secant predictor once two points are known
            let guess = match points.len() {
                0 => linear(s).map(|f| (dir.omega_m, f)),
                1 => {
                    let p = &points[0];
                    Ok((p.omega, p.f.scaled(s / p.s)))
                }
                _ => {
                    let (a, b) = (&points[points.len() - 2], &points[points.len() - 1]);
                    let t = (s - b.s) / (b.s - a.s);
                    let mut x = self.pack(b.omega, &b.f) * (1.0 + t);
                    x -= self.pack(a.omega, &a.f) * t;
                    self.unpack(dir.m, &x).map(|f| (x[0], f))
                }
            };
            let attempt = guess.and_then(|(om, f)| self.newton_with(&dir, s, om, &f, &mut jac));
            match attempt {
                Ok(p) => points.push(p),
                Err(e) => {
                    failure = Some(BranchFailure {
                        step: j,
                        s,
                        message: e.to_string(),
                    });
                    break;
                }
            }
        }
        Ok(Branch {
            m: dir.m,
            omega_m: dir.omega_m,
            s_max,
            steps,
            newton_tol: self.cfg.newton_tol,
            hstar: dir.hstar,
            points,
            failure,
        })
    }
}

/// `(I₁(z), I₂(z))`: the axis integrals of `∂_η(r cos η)` and `∂_η(r sin η)`
/// against `sin ϕ / √(r² + (z − cos ϕ)²)`, with Gauss nodes in `ϕ` and the
/// trapezoid rule on `theta_nodes` points in `η`. `r_fn(i, η)` returns
/// `(r, ∂_η r)` at grid node `i`.
pub fn axis_integrals<R: Fn(usize, f64) -> (f64, f64)>(
    ctx: &KernelContext,
    theta_nodes: usize,
    z: f64,
    r_fn: R,
) -> Result<(f64, f64)> {
    if theta_nodes < 4 {
        return Err(Error::Domain("axis integrals need at least 4 angles".into()));
    }
    let dh = 2.0 * PI / theta_nodes as f64;
    let (mut i1, mut i2) = (0.0, 0.0);
    for (i, (&phi, &w)) in ctx.nodes().iter().zip(ctx.weights()).enumerate() {
        let dz = z - phi.cos();
        for j in 0..theta_nodes {
            let eta = j as f64 * dh;
            let (r, r_eta) = r_fn(i, eta);
            if r <= 0.0 {
                return Err(geometry_error(phi, eta));
            }
            let (s, c) = eta.sin_cos();
            let scale = w * dh * phi.sin() / (r * r + dz * dz).sqrt();
            i1 += scale * (r_eta * c - r * s);
            i2 += scale * (r_eta * s + r * c);
        }
    }
    Ok((i1, i2))
}

/// DCT-I coefficients `a_k` with `F_j = Σ_{k=0}^{K} a_k cos(kjπ/K)`.
pub fn dct1(samples: &[f64]) -> Vec<f64> {
    let k = samples.len() - 1;
    if k == 0 {
        return samples.to_vec();
    }
    (0..=k)
        .map(|kk| {
            let mut s = 0.5 * (samples[0] + if kk % 2 == 0 { samples[k] } else { -samples[k] });
            for (j, v) in samples.iter().enumerate().take(k).skip(1) {
                s += v * (PI * (kk * j) as f64 / k as f64).cos();
            }
            let gamma = if kk == 0 || kk == k { 0.5 } else { 1.0 };
            2.0 * gamma * s / k as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityCheck {
    /// `max |F_v|` over the targets.
    pub velocity_max: f64,
    /// `max |r₀ ∂_θ F̃|`.
    pub stream_max: f64,
    /// `max |F_v + r₀ ∂_θ F̃|`.
    pub discrepancy: f64,
}

/// Kernel direction `h*_m` with `Σ w (h*)² = 1`, positive in the interior.
struct BranchDirection {
    m: usize,
    omega_m: f64,
    hstar: Vec<f64>,
}

impl BranchDirection {
    fn new(ctx: &KernelContext, bp: &BifurcationPoint) -> Result<Self> {
        if bp.m < 2 {
            return Err(Error::Domain("branches bifurcate only for m >= 2".into()));
        }
        if bp.eigfun.len() != ctx.len() {
            return Err(Error::Domain("eigenfunction does not match the grid".into()));
        }
        let norm: f64 = bp
            .eigfun
            .iter()
            .zip(ctx.weights())
            .map(|(h, w)| w * h * h)
            .sum::<f64>()
            .sqrt();
        let sign = if bp.eigfun.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        Ok(Self {
            m: bp.m,
            omega_m: bp.omega_m,
            hstar: bp.eigfun.iter().map(|h| sign * h / norm).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchPoint {
    pub s: f64,
    pub omega: f64,
    pub f: Perturbation,
    /// `max |F̃|` over the half-grid collocation targets.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchFailure {
    pub step: usize,
    pub s: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub m: usize,
    pub omega_m: f64,
    pub s_max: f64,
    pub steps: usize,
    pub newton_tol: f64,
    /// `h*_m` on the grid, `Σ w (h*)² = 1`.
    pub hstar: Vec<f64>,
    pub points: Vec<BranchPoint>,
    pub failure: Option<BranchFailure>,
}

impl Branch {
    /// `⟨f, h*⟩ = Σ w f₁ h*`.
    pub fn amplitude(&self, ctx: &KernelContext, p: &BranchPoint) -> f64 {
        p.f.modes().first().map_or(0.0, |f1| {
            f1.iter()
                .zip(&self.hstar)
                .zip(ctx.weights())
                .map(|((a, b), w)| w * a * b)
                .sum()
        })
    }

    /// `r(φ_i, θ_j)` samples of a branch point on `thetas`.
    pub fn surface(&self, ctx: &KernelContext, p: &BranchPoint, thetas: &[f64]) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(ctx.len() * thetas.len());
        for (i, &phi) in ctx.nodes().iter().enumerate() {
            let r0 = ctx.profile().r0(phi);
            for &t in thetas {
                out.push((phi, t, r0 + p.f.value_at_node(i, t)));
            }
        }
        out
    }
}
