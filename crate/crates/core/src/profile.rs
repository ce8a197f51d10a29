//! Revolution-shape profiles `r₀(φ)`: the sphere, spheroids `a·sin φ`, and
//! tabulated shapes with monotone cubic interpolation.
//!
//! The surface is `{(r₀(φ) e^{iθ}, cos φ) : φ ∈ [0, π], θ ∈ [0, 2π)}`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use crate::error::{Error, Result};
use crate::quadrature::{gauss_panel, TanhSinh};

/// Largest tolerated `|r₀|` at the poles for tabulated input.
const ENDPOINT_TOL: f64 = 1e-12;
/// Largest tolerated equatorial asymmetry in `validate_profile`.
const SYMMETRY_TOL: f64 = 1e-10;
/// Below this separation, differences of tabulated radii use the derivative.
const LINEAR_DIFF_SEPARATION: f64 = 1e-6;

/// Piecewise cubic Hermite data with shape-preserving slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    phi: Vec<f64>,
    r0: Vec<f64>,
    slope: Vec<f64>,
}

impl Tabulated {
    pub fn samples(&self) -> (&[f64], &[f64]) {
        (&self.phi, &self.r0)
    }

    fn locate(&self, x: f64) -> usize {
        let n = self.phi.len();
        match self.phi.partition_point(|&p| p <= x) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        }
    }

    /// Value, first and second derivative at `x`.
    fn eval(&self, x: f64) -> (f64, f64, f64) {
        let k = self.locate(x);
        let h = self.phi[k + 1] - self.phi[k];
        let t = (x - self.phi[k]) / h;
        let (y0, y1) = (self.r0[k], self.r0[k + 1]);
        let (m0, m1) = (self.slope[k] * h, self.slope[k + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1;
        let d1 = ((6.0 * t2 - 6.0 * t) * y0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * m1)
            / h;
        let d2 = ((12.0 * t - 6.0) * y0
            + (6.0 * t - 4.0) * m0
            + (-12.0 * t + 6.0) * y1
            + (6.0 * t - 2.0) * m1)
            / (h * h);
        (v, d1, d2)
    }
}

fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let s: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if s[k - 1] * s[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / s[k - 1] + w2 / s[k]);
        }
    }
    let end = |h0: f64, h1: f64, s0: f64, s1: f64| {
        if n == 2 {
            return s0;
        }
        let v = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
        if v.signum() != s0.signum() {
            0.0
        } else if s0.signum() != s1.signum() && v.abs() > 3.0 * s0.abs() {
            3.0 * s0
        } else {
            v
        }
    };
    d[0] = end(h[0], *h.get(1).unwrap_or(&h[0]), s[0], *s.get(1).unwrap_or(&s[0]));
    d[n - 1] = end(
        h[n - 2],
        *h.get(n.wrapping_sub(3)).unwrap_or(&h[n - 2]),
        s[n - 2],
        *s.get(n.wrapping_sub(3)).unwrap_or(&s[n - 2]),
    );
    d
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProfileKind {
    Sphere,
    Spheroid { a: f64 },
    Tabulated(Tabulated),
}

/// A revolution-shape profile.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    kind: ProfileKind,
}

impl Profile {
    pub fn sphere() -> Self {
        Self {
            kind: ProfileKind::Sphere,
        }
    }

    pub fn spheroid(a: f64) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::Domain(format!("spheroid needs a > 0, got {a}")));
        }
        Ok(Self {
            kind: ProfileKind::Spheroid { a },
        })
    }

    /// Monotone cubic interpolant through `(phi, r0)` samples covering `[0, π]`.
    pub fn tabulated(phi: Vec<f64>, r0: Vec<f64>) -> Result<Self> {
        if phi.len() != r0.len() || phi.len() < 3 {
            return Err(Error::Validation(format!(
                "tabulated profile needs at least 3 (phi, r0) pairs of equal length, got {} and {}",
                phi.len(),
                r0.len()
            )));
        }
        if phi.iter().chain(&r0).any(|v| !v.is_finite()) {
            return Err(Error::Validation("tabulated profile has non-finite samples".into()));
        }
        if !phi.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Validation("phi samples must be strictly increasing".into()));
        }
        let n = phi.len();
        if phi[0].abs() > ENDPOINT_TOL || (phi[n - 1] - PI).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "phi samples must span [0, pi], got [{}, {}]",
                phi[0],
                phi[n - 1]
            )));
        }
        if r0[0].abs() > ENDPOINT_TOL || r0[n - 1].abs() > ENDPOINT_TOL {
            return Err(Error::Validation(format!(
                "r0 must vanish at the poles, got r0(0) = {}, r0(pi) = {}",
                r0[0],
                r0[n - 1]
            )));
        }
        if r0[1..n - 1].iter().any(|&v| v <= 0.0) {
            return Err(Error::Validation("r0 must be positive inside (0, pi)".into()));
        }
        let mut phi = phi;
        let mut r0 = r0;
        phi[0] = 0.0;
        phi[n - 1] = PI;
        r0[0] = 0.0;
        r0[n - 1] = 0.0;
        let slope = pchip_slopes(&phi, &r0);
        Ok(Self {
            kind: ProfileKind::Tabulated(Tabulated { phi, r0, slope }),
        })
    }

    /// Loads a tabulated profile from a CSV file with header `phi,r0`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_csv_reader(file, &path.display().to_string())
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R, label: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Parse(format!("{label}: {e}")))?
            .clone();
        if headers.len() != 2 || &headers[0] != "phi" || &headers[1] != "r0" {
            return Err(Error::Parse(format!(
                "{label}: expected header `phi,r0`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut phi = Vec::new();
        let mut r0 = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(format!("{label}: {e}")))?;
            let line = i + 2;
            if rec.len() != 2 {
                return Err(Error::Parse(format!(
                    "{label}:{line}: expected 2 fields, found {}",
                    rec.len()
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{label}:{line}: `{s}`: {e}")))
            };
            phi.push(parse(&rec[0])?);
            r0.push(parse(&rec[1])?);
        }
        Self::tabulated(phi, r0)
    }

    pub fn kind(&self) -> &ProfileKind {
        &self.kind
    }

    /// Short label: `sphere`, `spheroid:a` or `tabulated`.
    pub fn label(&self) -> String {
        match &self.kind {
            ProfileKind::Sphere => "sphere".into(),
            ProfileKind::Spheroid { a } => format!("spheroid:{a}"),
            ProfileKind::Tabulated(_) => "tabulated".into(),
        }
    }

    #[inline]
    pub fn r0(&self, phi: f64) -> f64 {
        match &self.kind {
            ProfileKind::Sphere => phi.sin(),
            ProfileKind::Spheroid { a } => a * phi.sin(),
            ProfileKind::Tabulated(t) => t.eval(phi).0,
        }
    }

    pub fn r0_d1(&self, phi: f64) -> f64 {
        match &self.kind {
            ProfileKind::Sphere => phi.cos(),
            ProfileKind::Spheroid { a } => a * phi.cos(),
            ProfileKind::Tabulated(t) => t.eval(phi).1,
        }
    }

    pub fn r0_d2(&self, phi: f64) -> f64 {
        match &self.kind {
            ProfileKind::Sphere => -phi.sin(),
            ProfileKind::Spheroid { a } => -a * phi.sin(),
            ProfileKind::Tabulated(t) => t.eval(phi).2,
        }
    }

    /// `r₀(φ) − r₀(ϕ)` where `delta = φ − ϕ` is known to full precision.
    #[inline]
    pub fn r0_diff(&self, phi: f64, vphi: f64, delta: f64) -> f64 {
        match &self.kind {
            ProfileKind::Sphere => 2.0 * (0.5 * (phi + vphi)).cos() * (0.5 * delta).sin(),
            ProfileKind::Spheroid { a } => {
                2.0 * a * (0.5 * (phi + vphi)).cos() * (0.5 * delta).sin()
            }
            ProfileKind::Tabulated(t) => {
                if delta.abs() < LINEAR_DIFF_SEPARATION {
                    t.eval(0.5 * (phi + vphi)).1 * delta
                } else {
                    t.eval(phi).0 - t.eval(vphi).0
                }
            }
        }
    }

    /// Squared chord `(r₀(φ) − r₀(ϕ))² + (cos φ − cos ϕ)²` from `delta = φ − ϕ`.
    #[inline]
    pub fn chord_sq(&self, phi: f64, vphi: f64, delta: f64) -> f64 {
        let dr = self.r0_diff(phi, vphi, delta);
        let dz = -2.0 * (0.5 * (phi + vphi)).sin() * (0.5 * delta).sin();
        dr * dr + dz * dz
    }
}

/// Outcome of checking the hypotheses (H1)–(H3) on a node grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub grid_size: usize,
    /// `r₀(0)` and `r₀(π)`.
    pub endpoint_values: (f64, f64),
    /// Smallest `r₀` over interior nodes.
    pub min_interior: f64,
    /// Min and max of `r₀(φ)/sin φ` over interior nodes.
    pub h2_ratio: (f64, f64),
    /// Max of `|r₀(π/2 − φ) − r₀(π/2 + φ)|` over nodes.
    pub symmetry_defect: f64,
    pub h1: bool,
    pub h2: bool,
    pub h3: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.h1 && self.h2 && self.h3
    }
}

/// Checks (H1) positivity with polar zeros, (H2) comparability with `sin φ`
/// and (H3) equatorial symmetry on `grid_size` midpoint nodes.
pub fn validate_profile(p: &Profile, grid_size: usize) -> Result<ValidationReport> {
    if grid_size < 16 {
        return Err(Error::Domain(format!(
            "validate_profile needs grid_size >= 16, got {grid_size}"
        )));
    }
    let nodes: Vec<f64> = (0..grid_size)
        .map(|j| (j as f64 + 0.5) * PI / grid_size as f64)
        .collect();
    let endpoint_values = (p.r0(0.0), p.r0(PI));
    let mut min_interior = f64::INFINITY;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    let mut symmetry_defect = 0.0f64;
    for &phi in &nodes {
        let r = p.r0(phi);
        min_interior = min_interior.min(r);
        let ratio = r / phi.sin();
        lo = lo.min(ratio);
        hi = hi.max(ratio);
        let t = phi - FRAC_PI_2;
        symmetry_defect = symmetry_defect.max((p.r0(FRAC_PI_2 - t) - p.r0(FRAC_PI_2 + t)).abs());
    }
    let h1 = endpoint_values.0.abs() <= ENDPOINT_TOL
        && endpoint_values.1.abs() <= ENDPOINT_TOL
        && min_interior > 0.0;
    let h2 = lo > 0.0 && hi.is_finite() && hi / lo < 1e8;
    let h3 = symmetry_defect <= SYMMETRY_TOL;
    Ok(ValidationReport {
        grid_size,
        endpoint_values,
        min_interior,
        h2_ratio: (lo, hi),
        symmetry_defect,
        h1,
        h2,
        h3,
    })
}

/// Infimum and supremum of `chord²(φ, ϕ) / (φ − ϕ)²` over distinct pairs of
/// the nodes `jπ/grid_size`, `j = 0..=grid_size`.
pub fn arc_chord_constants(p: &Profile, grid_size: usize) -> Result<(f64, f64)> {
    if grid_size < 2 {
        return Err(Error::Domain(format!(
            "arc_chord_constants needs grid_size >= 2, got {grid_size}"
        )));
    }
    let h = PI / grid_size as f64;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for i in 0..=grid_size {
        for j in 0..i {
            let delta = (i - j) as f64 * h;
            let phi = i as f64 * h;
            let vphi = j as f64 * h;
            let q = p.chord_sq(phi, vphi, delta) / (delta * delta);
            lo = lo.min(q);
            hi = hi.max(q);
        }
    }
    if !(lo > 0.0) || !hi.is_finite() {
        return Err(Error::Geometry(format!(
            "arc-chord constants degenerate: [{lo}, {hi}]"
        )));
    }
    Ok((lo, hi))
}

/// Coefficients of the interior potential of the ellipsoid
/// `x₁² + x₂² ≤ a²(1 − x₃²)`: `ψ₀ = α₁(x₁² + x₂²) + α₂ x₃² + α₃`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipsoidConstants {
    pub a: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

/// Ellipsoid constants from the half-line integrals, mapped by
/// `s = t/(1 − t)` to `(0, 1)` and integrated with tanh-sinh.
pub fn ellipsoid_alphas(a: f64) -> Result<EllipsoidConstants> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!("ellipsoid_alphas needs a > 0, got {a}")));
    }
    let a2 = a * a;
    let rule = TanhSinh::new(10);
    // with u = 1 − t: ds = dt/u², 1 + s = 1/u, a² + s = (a² u + t)/u
    let i1 = rule.integrate_with_distances(0.0, 1.0, |t, _, u| u.sqrt() / (a2 * u + t).powi(2));
    let i2 = rule.integrate_with_distances(0.0, 1.0, |t, _, u| u.sqrt() / (a2 * u + t));
    let i3 = rule.integrate_with_distances(0.0, 1.0, |t, _, u| 1.0 / (u.sqrt() * (a2 * u + t)));
    Ok(EllipsoidConstants {
        a,
        alpha1: 0.25 * a2 * i1,
        alpha2: 0.25 * a2 * i2,
        alpha3: -0.25 * a2 * i3,
    })
}

/// `ψ₀` at the origin from the volume potential, `−(1/4)∫ du / ((1−u²)/a² + u²)`.
pub fn ellipsoid_potential_at_origin(a: f64) -> f64 {
    let rule = gauss_panel(16, -1.0, 1.0, 16).expect("valid interval");
    -0.25 * rule.integrate(|u| 1.0 / ((1.0 - u * u) / (a * a) + u * u))
}
