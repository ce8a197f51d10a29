//! Quadrature rules: composite Gauss–Legendre panels, tanh-sinh (double
//! exponential) rules for endpoint singularities, and the periodic trapezoid.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Default Gauss order per panel.
pub const DEFAULT_GAUSS_ORDER: usize = 10;
/// Default number of Gauss panels.
pub const DEFAULT_GAUSS_PANELS: usize = 8;
/// Default tanh-sinh level.
pub const DEFAULT_DE_LEVEL: u32 = 9;
/// Default number of periodic nodes.
pub const DEFAULT_PERIODIC_NODES: usize = 128;

/// Smallest distance to an endpoint kept by the tanh-sinh rule.
const DE_MIN_DISTANCE: f64 = 1e-250;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    GaussPanel,
    DoubleExponential,
    PeriodicTrapezoid,
}

/// Nodes and positive weights on an interval.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub kind: RuleKind,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Gauss–Legendre nodes (increasing) and weights on `[-1, 1]`.
///
/// The rule is exactly antisymmetric: node `n-1-i` is the negation of node `i`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() <= 1e-16 * z.abs().max(1.0) {
                let (_, d) = legendre_with_derivative(n, z);
                dp = d;
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        // z decreases with i; store increasing
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Composite Gauss–Legendre rule with `panels` equal panels of `order` nodes.
pub fn gauss_panel(order: usize, a: f64, b: f64, panels: usize) -> Result<QuadratureRule> {
    if !(a < b) {
        return Err(Error::Domain(format!("gauss_panel needs a < b, got [{a}, {b}]")));
    }
    if order < 2 || panels < 1 {
        return Err(Error::Domain(format!(
            "gauss_panel needs order >= 2 and panels >= 1, got {order}, {panels}"
        )));
    }
    let (x, w) = gauss_legendre(order);
    let width = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(order * panels);
    let mut weights = Vec::with_capacity(order * panels);
    for p in 0..panels {
        let lo = a + p as f64 * width;
        let mid = lo + 0.5 * width;
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push(mid + 0.5 * width * xi);
            weights.push(0.5 * width * wi);
        }
    }
    Ok(QuadratureRule {
        nodes,
        weights,
        kind: RuleKind::GaussPanel,
    })
}

/// One tanh-sinh node on `(-1, 1)`: distances `1 + x` and `1 − x`, weight.
#[derive(Debug, Clone, Copy)]
pub struct DeNode {
    pub lo: f64,
    pub hi: f64,
    pub weight: f64,
}

/// Tanh-sinh rule on `(-1, 1)` keeping endpoint distances at full precision.
///
/// Step size is `h = 2^{3 − level}`.
#[derive(Debug, Clone)]
pub struct TanhSinh {
    level: u32,
    nodes: Vec<DeNode>,
}

impl TanhSinh {
    pub fn new(level: u32) -> Self {
        Self::with_cutoff(level, DE_MIN_DISTANCE)
    }

    /// Drops nodes closer than `min_distance` to an endpoint, relative to the half-width.
    pub fn with_cutoff(level: u32, min_distance: f64) -> Self {
        let min_distance = min_distance.max(DE_MIN_DISTANCE);
        let h = 2f64.powi(3 - level as i32);
        let mut nodes = Vec::new();
        let node = |t: f64| {
            let u = 0.5 * PI * t.sinh();
            // 1 - tanh(u) = 2 / (1 + e^{2u}), 1 + tanh(u) = 2 / (1 + e^{-2u})
            let hi = 2.0 / (1.0 + (2.0 * u).exp());
            let lo = 2.0 / (1.0 + (-2.0 * u).exp());
            let weight = h * 0.5 * PI * t.cosh() * lo * hi;
            DeNode { lo, hi, weight }
        };
        nodes.push(node(0.0));
        let mut k = 1;
        loop {
            let t = k as f64 * h;
            let right = node(t);
            if right.hi < min_distance || right.weight < min_distance {
                break;
            }
            nodes.push(right);
            nodes.push(DeNode {
                lo: right.hi,
                hi: right.lo,
                weight: right.weight,
            });
            k += 1;
        }
        nodes.sort_by(|p, q| p.lo.total_cmp(&q.lo));
        Self { level, nodes }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn nodes(&self) -> &[DeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `∫_a^b f` where `f` receives `(x, x − a, b − x)`.
    pub fn integrate_with_distances<F: FnMut(f64, f64, f64) -> f64>(
        &self,
        a: f64,
        b: f64,
        mut f: F,
    ) -> f64 {
        let half = 0.5 * (b - a);
        let mut acc = 0.0;
        for nd in &self.nodes {
            let da = half * nd.lo;
            let db = half * nd.hi;
            let x = if nd.lo <= nd.hi { a + da } else { b - db };
            acc += nd.weight * f(x, da, db);
        }
        half * acc
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.integrate_with_distances(a, b, |x, _, _| f(x))
    }
}

/// Tanh-sinh rule mapped to `[a, b]`; nodes strictly interior.
pub fn double_exponential(a: f64, b: f64, level: u32) -> Result<QuadratureRule> {
    if !(a < b) {
        return Err(Error::Domain(format!(
            "double_exponential needs a < b, got [{a}, {b}]"
        )));
    }
    let rule = TanhSinh::new(level);
    let half = 0.5 * (b - a);
    let mut nodes = Vec::with_capacity(rule.len());
    let mut weights = Vec::with_capacity(rule.len());
    for nd in rule.nodes() {
        let x = if nd.lo <= nd.hi {
            a + half * nd.lo
        } else {
            b - half * nd.hi
        };
        let w = half * nd.weight;
        if x > a && x < b && w > 0.0 && nodes.last().is_none_or(|&p| x > p) {
            nodes.push(x);
            weights.push(w);
        }
    }
    Ok(QuadratureRule {
        nodes,
        weights,
        kind: RuleKind::DoubleExponential,
    })
}

/// Equispaced rule `θ_j = 2πj/n` with weights `2π/n`.
pub fn periodic_trapezoid(n_nodes: usize) -> Result<QuadratureRule> {
    if n_nodes < 2 {
        return Err(Error::Domain(format!(
            "periodic_trapezoid needs at least 2 nodes, got {n_nodes}"
        )));
    }
    let h = 2.0 * PI / n_nodes as f64;
    Ok(QuadratureRule {
        nodes: (0..n_nodes).map(|j| j as f64 * h).collect(),
        weights: vec![h; n_nodes],
        kind: RuleKind::PeriodicTrapezoid,
    })
}

/// Barycentric weights for interpolation through distinct `nodes`, scaled to
/// unit maximum.
pub fn barycentric_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut logs = vec![0.0; n];
    let mut signs = vec![1.0; n];
    for j in 0..n {
        for k in 0..n {
            if k != j {
                let d = nodes[j] - nodes[k];
                logs[j] -= d.abs().ln();
                if d < 0.0 {
                    signs[j] = -signs[j];
                }
            }
        }
    }
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    logs.iter()
        .zip(&signs)
        .map(|(l, s)| s * (l - top).exp())
        .collect()
}

/// Barycentric weights for Gauss–Legendre nodes on `[-1, 1]` in closed form,
/// `(−1)^j √((1 − x_j²) w_j)`.
pub fn gauss_legendre_barycentric(x: &[f64], w: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|j| {
            let s = if (n - 1 - j) % 2 == 0 { 1.0 } else { -1.0 };
            s * ((1.0 - x[j] * x[j]) * w[j]).sqrt()
        })
        .collect()
}

/// Values of all Lagrange basis polynomials at `x` (barycentric form).
pub fn lagrange_basis(nodes: &[f64], bary: &[f64], x: f64, out: &mut [f64]) {
    if let Some(j) = nodes.iter().position(|&t| t == x) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[j] = 1.0;
        return;
    }
    let mut denom = 0.0;
    for ((o, &t), &b) in out.iter_mut().zip(nodes).zip(bary) {
        let q = b / (x - t);
        *o = q;
        denom += q;
    }
    out.iter_mut().for_each(|v| *v /= denom);
}

/// Barycentric interpolation of `values` sampled at `nodes`.
pub fn barycentric_eval(nodes: &[f64], bary: &[f64], values: &[f64], x: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&t, &b), &v) in nodes.iter().zip(bary).zip(values) {
        let d = x - t;
        if d == 0.0 {
            return v;
        }
        let q = b / d;
        num += q * v;
        den += q;
    }
    num / den
}
