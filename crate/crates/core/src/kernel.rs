//! Geometric kernels `R`, `H_n`, the coefficient `ν_Ω`, the threshold `κ`
//! and Nyström assembly of the weighted operator `K_n^Ω`.
//!
//! Row integrals `∫ H_n(φ_i, ϕ) h(ϕ) dϕ` are split at `ϕ = φ_i` and
//! integrated with tanh-sinh on each side, with `h` interpolated from the
//! Gauss–Legendre nodes (product integration). The resulting matrices do not
//! depend on `Ω` and are cached per mode.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::profile::Profile;
use crate::quadrature::{
    gauss_legendre, gauss_legendre_barycentric, lagrange_basis, TanhSinh, DEFAULT_DE_LEVEL,
};
use crate::specfun::FnExpansion;

/// Default number of Gauss–Legendre nodes on `(0, π)`.
pub const DEFAULT_PHI_NODES: usize = 96;
/// Default number of azimuthal nodes for the direct and nonlinear quadratures.
pub const DEFAULT_THETA_NODES: usize = 256;
/// `δ_guard = GUARD_FRACTION · κ` below `κ` for every `Ω`.
pub const GUARD_FRACTION: f64 = 1e-3;

/// `(1/2)(1/2)_n² / (2n)!`, the prefactor of `H_n` once `4^n` is absorbed into `x^n`.
pub fn hn_prefactor(n: usize) -> f64 {
    let mut c = 0.5;
    for k in 1..=n {
        let kf = k as f64;
        c *= (kf - 0.5) * (kf - 0.5) / ((2.0 * kf) * (2.0 * kf - 1.0));
    }
    c
}

/// `R(φ, ϕ) = (r₀(φ) + r₀(ϕ))² + (cos φ − cos ϕ)²`.
pub fn big_r(p: &Profile, phi: f64, vphi: f64) -> f64 {
    let s = p.r0(phi) + p.r0(vphi);
    let dz = phi.cos() - vphi.cos();
    s * s + dz * dz
}

/// `H_n` from precomputed pieces; `delta = φ − ϕ` to full precision.
#[inline]
fn hn_eval(p: &Profile, exp: &FnExpansion, c_n: f64, phi: f64, vphi: f64, delta: f64) -> f64 {
    let r_phi = p.r0(phi);
    let r_vphi = p.r0(vphi);
    if r_vphi <= 0.0 {
        return 0.0;
    }
    let dz = -2.0 * (0.5 * (phi + vphi)).sin() * (0.5 * delta).sin();
    let sum = r_phi + r_vphi;
    let big_r = sum * sum + dz * dz;
    if r_phi <= 0.0 {
        // polar target: only n = 1 survives
        return if exp.n() == 1 {
            c_n * vphi.sin() * 4.0 * r_vphi * r_vphi / (big_r * big_r.sqrt())
        } else {
            0.0
        };
    }
    let dr = p.r0_diff(phi, vphi, delta);
    let x = 4.0 * r_phi * r_vphi / big_r;
    // chord² underflows at DE nodes hugging the diagonal, whose weights are negligible
    let y = ((dr * dr + dz * dz) / big_r).max(f64::MIN_POSITIVE);
    c_n * vphi.sin() * x.powi(exp.n() as i32) * (r_vphi / r_phi) / big_r.sqrt() * exp.eval(x, y)
}

/// `H_n(φ, ϕ) = (2^{2n−1}(1/2)_n²/(2n)!) sin ϕ r₀^{n−1}(φ) r₀^{n+1}(ϕ) R^{−(n+1/2)} F_n(4r₀(φ)r₀(ϕ)/R)`.
pub fn h_n(p: &Profile, n: usize, phi: f64, vphi: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("H_n needs n >= 1".into()));
    }
    if !(0.0..=PI).contains(&phi) || !(0.0..=PI).contains(&vphi) {
        return Err(Error::Domain(format!("H_n arguments outside [0, pi]: {phi}, {vphi}")));
    }
    let delta = phi - vphi;
    if delta == 0.0 && p.r0(phi) > 0.0 {
        return Err(Error::Singular(format!(
            "H_{n} is logarithmically singular at coincident interior points (phi = {phi})"
        )));
    }
    Ok(hn_eval(p, &FnExpansion::new(n), hn_prefactor(n), phi, vphi, delta))
}

/// Grid and quadrature settings for a `KernelContext`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub phi_nodes: usize,
    pub de_level: u32,
    pub theta_nodes: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            phi_nodes: DEFAULT_PHI_NODES,
            de_level: DEFAULT_DE_LEVEL,
            theta_nodes: DEFAULT_THETA_NODES,
        }
    }
}

/// Profile, Gauss–Legendre grid on `(0, π)` and the split singular rule.
#[derive(Debug)]
pub struct KernelContext {
    profile: Profile,
    config: KernelConfig,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    bary: Vec<f64>,
    de: TanhSinh,
    nu0: Vec<f64>,
    kappa: f64,
    kappa_at: f64,
    products: Mutex<HashMap<usize, Arc<DMatrix<f64>>>>,
}

impl KernelContext {
    pub fn new(profile: Profile, config: KernelConfig) -> Result<Self> {
        if config.phi_nodes < 4 {
            return Err(Error::Domain(format!(
                "phi_nodes must be at least 4, got {}",
                config.phi_nodes
            )));
        }
        if !(3..=14).contains(&config.de_level) {
            return Err(Error::Domain(format!(
                "de_level must lie in 3..=14, got {}",
                config.de_level
            )));
        }
        if config.theta_nodes < 8 || config.theta_nodes % 2 != 0 {
            return Err(Error::Domain(format!(
                "theta_nodes must be even and at least 8, got {}",
                config.theta_nodes
            )));
        }
        let (x, w) = gauss_legendre(config.phi_nodes);
        let bary = gauss_legendre_barycentric(&x, &w);
        let nodes: Vec<f64> = x.iter().map(|t| 0.5 * PI * (t + 1.0)).collect();
        let weights: Vec<f64> = w.iter().map(|t| 0.5 * PI * t).collect();
        let mut ctx = Self {
            profile,
            config,
            nodes,
            weights,
            bary,
            de: TanhSinh::new(config.de_level),
            nu0: Vec::new(),
            kappa: 0.0,
            kappa_at: 0.0,
            products: Mutex::new(HashMap::new()),
        };
        let exp = FnExpansion::new(1);
        ctx.nu0 = ctx
            .nodes
            .par_iter()
            .map(|&phi| ctx.nu0_with(&exp, phi))
            .collect();
        if ctx.nu0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Accuracy("non-finite value of the nu integral".into()));
        }
        let (k, at) = ctx.find_kappa(&exp);
        if !(k > 0.0) {
            return Err(Error::MeasureSign(format!("kappa = {k} is not positive")));
        }
        ctx.kappa = k;
        ctx.kappa_at = at;
        Ok(ctx)
    }

    pub fn with_defaults(profile: Profile) -> Result<Self> {
        Self::new(profile, KernelConfig::default())
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn config(&self) -> KernelConfig {
        self.config
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Gauss–Legendre nodes on `(0, π)`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Barycentric weights for interpolation through `nodes`.
    pub fn bary(&self) -> &[f64] {
        &self.bary
    }

    /// `∫₀^π H_1(φ_i, ϕ) dϕ` at the nodes.
    pub fn nu0(&self) -> &[f64] {
        &self.nu0
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Location of the minimum defining `κ`.
    pub fn kappa_location(&self) -> f64 {
        self.kappa_at
    }

    pub fn guard(&self) -> f64 {
        GUARD_FRACTION * self.kappa
    }

    /// Largest admissible angular velocity, `κ − δ_guard`.
    pub fn omega_max(&self) -> f64 {
        self.kappa - self.guard()
    }

    /// Visits every node of the rule split at `phi`, passing `(ϕ, φ − ϕ, weight)`.
    pub fn for_split_nodes<G: FnMut(f64, f64, f64)>(&self, phi: f64, mut g: G) {
        let half = 0.5 * phi;
        for nd in self.de.nodes() {
            let (da, db) = (half * nd.lo, half * nd.hi);
            let v = if nd.lo <= nd.hi { da } else { phi - db };
            g(v, db, half * nd.weight);
        }
        let half = 0.5 * (PI - phi);
        for nd in self.de.nodes() {
            let (da, db) = (half * nd.lo, half * nd.hi);
            let v = if nd.lo <= nd.hi { phi + da } else { PI - db };
            g(v, -da, half * nd.weight);
        }
    }

    /// `∫₀^π H_n(φ, ϕ) g(ϕ) dϕ` by split tanh-sinh quadrature.
    pub fn split_integral<G: FnMut(f64) -> f64>(&self, n: usize, phi: f64, mut g: G) -> f64 {
        let exp = FnExpansion::new(n);
        let c_n = hn_prefactor(n);
        let mut acc = 0.0;
        self.for_split_nodes(phi, |v, d, w| {
            acc += w * hn_eval(&self.profile, &exp, c_n, phi, v, d) * g(v);
        });
        acc
    }

    fn nu0_with(&self, exp: &FnExpansion, phi: f64) -> f64 {
        let c1 = hn_prefactor(1);
        let mut acc = 0.0;
        self.for_split_nodes(phi, |v, d, w| {
            acc += w * hn_eval(&self.profile, exp, c1, phi, v, d);
        });
        acc
    }

    /// `∫₀^π H_1(φ, ϕ) dϕ` at an arbitrary `φ`.
    pub fn nu0_at(&self, phi: f64) -> f64 {
        self.nu0_with(&FnExpansion::new(1), phi)
    }

    /// Minimum of `ν₀` over a uniform grid refined by golden-section search.
    fn find_kappa(&self, exp: &FnExpansion) -> (f64, f64) {
        let m = 4 * self.nodes.len();
        let h = PI / m as f64;
        let grid: Vec<f64> = (1..m).map(|k| k as f64 * h).collect();
        let vals: Vec<f64> = grid.par_iter().map(|&p| self.nu0_with(exp, p)).collect();
        let (k, _) = vals
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
        let (mut a, mut b) = (grid[k] - h, grid[k] + h);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let mut fc = self.nu0_with(exp, c);
        let mut fd = self.nu0_with(exp, d);
        for _ in 0..60 {
            if b - a < 1e-10 {
                break;
            }
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = self.nu0_with(exp, c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = self.nu0_with(exp, d);
            }
        }
        let mut best = (vals[k], grid[k]);
        for (v, p) in [(fc, c), (fd, d)] {
            if v < best.0 {
                best = (v, p);
            }
        }
        best
    }

    /// Product-integration matrix `A_ij = ∫ H_n(φ_i, ϕ) ℓ_j(ϕ) dϕ`, cached per `n`.
    pub fn product_matrix(&self, n: usize) -> Arc<DMatrix<f64>> {
        if let Some(a) = self.products.lock().expect("cache lock").get(&n) {
            return Arc::clone(a);
        }
        let nn = self.nodes.len();
        let exp = FnExpansion::new(n);
        let c_n = hn_prefactor(n);
        let rows: Vec<Vec<f64>> = self
            .nodes
            .par_iter()
            .map(|&phi| {
                let mut row = vec![0.0; nn];
                let mut basis = vec![0.0; nn];
                self.for_split_nodes(phi, |v, d, w| {
                    let hv = w * hn_eval(&self.profile, &exp, c_n, phi, v, d);
                    lagrange_basis(&self.nodes, &self.bary, v, &mut basis);
                    for (r, b) in row.iter_mut().zip(&basis) {
                        *r += hv * b;
                    }
                });
                row
            })
            .collect();
        let a = Arc::new(DMatrix::from_fn(nn, nn, |i, j| rows[i][j]));
        self.products
            .lock()
            .expect("cache lock")
            .insert(n, Arc::clone(&a));
        a
    }

    /// `Ω` admissible for assembly: `Ω ≤ κ − δ_guard`.
    pub fn check_omega(&self, omega: f64) -> Result<()> {
        if !omega.is_finite() || omega > self.omega_max() {
            return Err(Error::MeasureSign(format!(
                "omega = {omega} exceeds kappa - guard = {}",
                self.omega_max()
            )));
        }
        Ok(())
    }
}

/// `ν_Ω` at the nodes together with `κ`.
#[derive(Debug, Clone, PartialEq)]
pub struct NuTable {
    pub omega: f64,
    pub values: Vec<f64>,
    pub kappa: f64,
}

impl NuTable {
    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `ν_Ω(φ_i) = ∫₀^π H_1(φ_i, ϕ) dϕ − Ω`.
pub fn nu_omega(ctx: &KernelContext, omega: f64) -> NuTable {
    NuTable {
        omega,
        values: ctx.nu0().iter().map(|v| v - omega).collect(),
        kappa: ctx.kappa(),
    }
}

/// `κ = min_φ ∫₀^π H_1(φ, ϕ) dϕ`.
pub fn kappa(ctx: &KernelContext) -> f64 {
    ctx.kappa()
}

/// Nyström discretization of `K_n^Ω` with its symmetrized form.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub n: usize,
    pub omega: f64,
    /// `M = diag(1/ν) A`, acting on samples of `h`.
    pub entries: DMatrix<f64>,
    /// `(S + Sᵀ)/2` with `S = D^{1/2} M D^{−1/2}`.
    pub sym_entries: DMatrix<f64>,
    /// `D_jj^{1/2} = (μ_j w_j)^{1/2}`, `μ = sin φ r₀² ν_Ω`.
    pub scale: Vec<f64>,
    pub nu: NuTable,
    /// `max|S − Sᵀ| / max|S|` before symmetrization.
    pub asymmetry: f64,
}

impl KernelMatrix {
    pub fn len(&self) -> usize {
        self.scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scale.is_empty()
    }
}

/// Assembles `K_n^Ω` on the context grid.
pub fn assemble_kernel_matrix(ctx: &KernelContext, n: usize, omega: f64) -> Result<KernelMatrix> {
    if n == 0 {
        return Err(Error::Domain("kernel mode must be >= 1".into()));
    }
    ctx.check_omega(omega)?;
    let nu = nu_omega(ctx, omega);
    if nu.min() <= 0.0 {
        return Err(Error::MeasureSign(format!(
            "nu_omega has non-positive minimum {} at omega = {omega}",
            nu.min()
        )));
    }
    let a = ctx.product_matrix(n);
    let nn = ctx.len();
    let p = ctx.profile();
    let scale: Vec<f64> = (0..nn)
        .map(|j| {
            let phi = ctx.nodes()[j];
            let r = p.r0(phi);
            (phi.sin() * r * r * nu.values[j] * ctx.weights()[j]).sqrt()
        })
        .collect();
    let entries = DMatrix::from_fn(nn, nn, |i, j| a[(i, j)] / nu.values[i]);
    let s = DMatrix::from_fn(nn, nn, |i, j| scale[i] * entries[(i, j)] / scale[j]);
    let top = s.amax();
    let mut defect = 0.0f64;
    for i in 0..nn {
        for j in 0..i {
            defect = defect.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    let sym_entries = DMatrix::from_fn(nn, nn, |i, j| 0.5 * (s[(i, j)] + s[(j, i)]));
    if !sym_entries.iter().all(|v| v.is_finite()) {
        return Err(Error::Accuracy(format!("non-finite kernel entries for n = {n}")));
    }
    Ok(KernelMatrix {
        n,
        omega,
        entries,
        sym_entries,
        scale,
        nu,
        asymmetry: if top > 0.0 { defect / top } else { 0.0 },
    })
}

/// Smallest raw off-diagonal kernel value `H_n(φ_i, φ_j)` over the grid.
pub fn raw_kernel_min(ctx: &KernelContext, n: usize) -> f64 {
    let exp = FnExpansion::new(n);
    let c_n = hn_prefactor(n);
    let x = ctx.nodes();
    let p = ctx.profile();
    (0..x.len())
        .into_par_iter()
        .map(|i| {
            (0..x.len())
                .filter(|&j| j != i)
                .map(|j| hn_eval(p, &exp, c_n, x[i], x[j], x[i] - x[j]))
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min)
}

/// `H_1(φ, ϕ), …, H_{n_max}(φ, ϕ)`.
pub fn hn_decay_scan(ctx: &KernelContext, phi: f64, vphi: f64, n_max: usize) -> Result<Vec<f64>> {
    (1..=n_max).map(|n| h_n(ctx.profile(), n, phi, vphi)).collect()
}

/// `max |k_ij − k_ji| / max |k|` over node pairs, `k_ij = H_n(φ_i, φ_j) / (sin φ_j r₀²(φ_j))`.
pub fn kernel_symmetry_defect(ctx: &KernelContext, n: usize) -> f64 {
    let exp = FnExpansion::new(n);
    let c_n = hn_prefactor(n);
    let x = ctx.nodes();
    let p = ctx.profile();
    let k = |i: usize, j: usize| {
        hn_eval(p, &exp, c_n, x[i], x[j], x[i] - x[j]) / (x[j].sin() * p.r0(x[j]).powi(2))
    };
    let (mut defect, mut top) = (0.0f64, 0.0f64);
    for i in 0..x.len() {
        for j in 0..i {
            let (a, b) = (k(i, j), k(j, i));
            defect = defect.max((a - b).abs());
            top = top.max(a.abs()).max(b.abs());
        }
    }
    if top > 0.0 {
        defect / top
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::ellipsoid_alphas;
    use crate::quadrature::barycentric_eval;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;
    use std::sync::OnceLock;

    fn sphere96() -> &'static KernelContext {
        static CTX: OnceLock<KernelContext> = OnceLock::new();
        CTX.get_or_init(|| KernelContext::with_defaults(Profile::sphere()).unwrap())
    }

    fn wavy_profile() -> Profile {
        let n = 400;
        let phi: Vec<f64> = (0..=n).map(|j| j as f64 * PI / n as f64).collect();
        let r = phi
            .iter()
            .enumerate()
            .map(|(j, p)| if j == 0 || j == n { 0.0 } else { p.sin() * (1.0 + 0.3 * p.sin().powi(2)) })
            .collect();
        Profile::tabulated(phi, r).unwrap()
    }

    #[test]
    fn big_r_examples() {
        let s = Profile::sphere();
        assert!((big_r(&s, FRAC_PI_2, FRAC_PI_2) - 4.0).abs() < 1e-15);
        assert!((big_r(&s, 0.0, PI) - 4.0).abs() < 1e-15);
        assert!((big_r(&Profile::spheroid(2.0).unwrap(), FRAC_PI_2, FRAC_PI_2) - 16.0).abs() < 1e-14);
        assert_eq!(big_r(&s, 0.3, 1.1), big_r(&s, 1.1, 0.3));
    }

    #[test]
    fn h_n_matches_high_precision() {
        // mpmath at 30 digits from the defining formula
        let s = Profile::sphere();
        let cases = [
            (1, FRAC_PI_2, PI / 4.0, 1.0, 0.042_490_838_176_358_7),
            (2, PI / 3.0, PI / 5.0, 1.0, 0.029_099_169_441_616_14),
            (5, PI / 3.0, PI / 5.0, 2.0, 0.003_833_932_415_169_82),
            (3, 1.0, 1.0001, 1.0, 1.281_407_251_457_415_9),
        ];
        for (n, a, b, semi, want) in cases {
            let p = if semi == 1.0 { s.clone() } else { Profile::spheroid(semi).unwrap() };
            let got = h_n(&p, n, a, b).unwrap();
            assert!((got / want - 1.0).abs() < 1e-13, "n = {n}: {got} vs {want}");
        }
    }

    #[test]
    fn h_n_edge_cases() {
        let s = Profile::sphere();
        assert_eq!(h_n(&s, 2, 1.0, 0.0).unwrap(), 0.0);
        assert!(h_n(&s, 2, 1.0, PI).unwrap().abs() < 1e-16);
        assert!(matches!(h_n(&s, 1, 1.0, 1.0), Err(Error::Singular(_))));
        assert!(h_n(&s, 0, 1.0, 0.5).is_err());
        assert!(h_n(&s, 1, PI / 3.0, PI / 5.0).unwrap() > h_n(&s, 2, PI / 3.0, PI / 5.0).unwrap());
    }

    #[test]
    fn sphere_nu_is_one_third() {
        let ctx = sphere96();
        let dev = ctx.nu0().iter().map(|v| (v - 1.0 / 3.0).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-6, "{dev}");
        let nu = nu_omega(ctx, 0.1);
        assert!(nu.values.iter().all(|v| (v - 0.233_333_333_333_333_3).abs() < 1e-6));
        assert!((kappa(ctx) - 1.0 / 3.0).abs() < 1e-5);
        assert!(nu.max() - nu.min() < 1e-6);
    }

    #[test]
    fn spheroid_nu_is_two_alpha1() {
        let ctx = KernelContext::new(
            Profile::spheroid(2.0).unwrap(),
            KernelConfig { phi_nodes: 48, de_level: 9, ..Default::default() },
        )
        .unwrap();
        let want = 2.0 * ellipsoid_alphas(2.0).unwrap().alpha1;
        let nu = nu_omega(&ctx, 0.0);
        assert!(nu.max() - nu.min() < 1e-6);
        assert!((nu.values[7] - want).abs() < 1e-6);
        assert!((ctx.kappa() - want).abs() < 1e-5);
    }

    #[test]
    fn nu_flat_at_the_pole() {
        // one-sided slope of ν at a generic profile shrinks toward the pole
        let ctx = KernelContext::new(wavy_profile(), KernelConfig { phi_nodes: 16, de_level: 9, ..Default::default() }).unwrap();
        let slope = |e: f64| (ctx.nu0_at(2.0 * e) - ctx.nu0_at(e)) / e;
        let (s1, s2, s3) = (slope(1e-1).abs(), slope(1e-2).abs(), slope(1e-3).abs());
        assert!(s2 < s1 && s3 < s2, "{s1} {s2} {s3}");
        assert!(ctx.kappa() > 0.0);
    }

    #[test]
    fn kernel_matrix_invariants() {
        let ctx = KernelContext::new(Profile::sphere(), KernelConfig { phi_nodes: 64, de_level: 9, ..Default::default() }).unwrap();
        let k = assemble_kernel_matrix(&ctx, 2, 0.0).unwrap();
        let s = &k.sym_entries;
        let top = s.amax();
        assert!((s - s.transpose()).amax() <= 1e-10 * top);
        assert!(raw_kernel_min(&ctx, 2) > 0.0);
        assert!(kernel_symmetry_defect(&ctx, 2) <= 1e-10);
        assert!(kernel_symmetry_defect(&wavy_profile_ctx(), 3) <= 1e-10);
        assert!(k.asymmetry > 0.0 && k.asymmetry < 1.0);
    }

    fn wavy_profile_ctx() -> KernelContext {
        KernelContext::new(wavy_profile(), KernelConfig { phi_nodes: 32, de_level: 8, ..Default::default() }).unwrap()
    }

    #[test]
    fn row_integrals_converge() {
        let p = Profile::spheroid(2.0).unwrap();
        let coarse = KernelContext::new(p.clone(), KernelConfig { phi_nodes: 48, de_level: 9, ..Default::default() }).unwrap();
        let fine = KernelContext::new(p, KernelConfig { phi_nodes: 96, de_level: 9, ..Default::default() }).unwrap();
        let apply = |ctx: &KernelContext| {
            let k = assemble_kernel_matrix(ctx, 3, 0.1).unwrap();
            let h: Vec<f64> = ctx.nodes().iter().map(|x| x.sin().powi(2)).collect();
            let out: Vec<f64> = (0..ctx.len())
                .map(|i| (0..ctx.len()).map(|j| k.entries[(i, j)] * h[j]).sum())
                .collect();
            out
        };
        let (a, b) = (apply(&coarse), apply(&fine));
        for t in [0.2, 0.7, 1.3, 2.9] {
            let va = barycentric_eval(coarse.nodes(), coarse.bary(), &a, t);
            let vb = barycentric_eval(fine.nodes(), fine.bary(), &b, t);
            assert!((va - vb).abs() < 1e-5, "{t}: {va} vs {vb}");
        }
    }

    #[test]
    fn assembly_rejects_omega_at_kappa() {
        let ctx = sphere96();
        assert!(matches!(
            assemble_kernel_matrix(ctx, 2, ctx.kappa()),
            Err(Error::MeasureSign(_))
        ));
        assert!(assemble_kernel_matrix(ctx, 2, ctx.omega_max()).is_ok());
        assert!(assemble_kernel_matrix(ctx, 0, 0.0).is_err());
    }

    #[test]
    fn decay_scan() {
        let ctx = sphere96();
        let v = hn_decay_scan(ctx, PI / 3.0, PI / 5.0, 12).unwrap();
        assert!(v.windows(2).all(|w| w[1] < w[0]));
        let tail = &v[6..];
        let slope = (tail[tail.len() - 1].ln() - tail[0].ln()) / ((12f64).ln() - (7f64).ln());
        assert!(slope <= 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn nu_positivity(omega in -5.0f64..0.33) {
            let ctx = sphere96();
            let nu = nu_omega(ctx, omega);
            prop_assert!(nu.min() >= ctx.kappa() - omega - 1e-6);
        }

        #[test]
        fn h_n_symmetric_after_weights(a in 0.05f64..3.1, b in 0.05f64..3.1, n in 1usize..8) {
            prop_assume!((a - b).abs() > 1e-3);
            let p = Profile::spheroid(1.7).unwrap();
            let k_ab = h_n(&p, n, a, b).unwrap() / (b.sin() * p.r0(b).powi(2));
            let k_ba = h_n(&p, n, b, a).unwrap() / (a.sin() * p.r0(a).powi(2));
            prop_assert!((k_ab / k_ba - 1.0).abs() < 1e-12);
            prop_assert!(h_n(&p, n, a, b).unwrap() > h_n(&p, n + 1, a, b).unwrap());
        }
    }
}
