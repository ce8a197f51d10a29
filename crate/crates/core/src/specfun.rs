//! Gamma, digamma and the Gauss hypergeometric function on `(-inf, 1]`,
//! the kernel family `F_n(x) = 2F1(n+1/2, n+1/2; 2n+1; x)` and the
//! closed-form ring integral `∫ cos(nθ) (A − cos θ)^{−β/2} dθ`.
//!
//! Below `X_SWITCH` the Gauss series is summed directly. Above it the
//! connection formulas in `y = 1 − x` are used (logarithmic when `c − a − b`
//! is an integer). Callers that know `1 − x` more accurately than `x` itself
//! should use the `*_split` entry points.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Argument above which the connection formulas replace the power series.
pub const X_SWITCH: f64 = 0.75;
const MAX_SERIES_TERMS: usize = 500;
const SERIES_EPS: f64 = 1e-16;
/// Term cap for the direct series when it replaces an ill-conditioned
/// connection formula above the switch point.
const FALLBACK_SERIES_TERMS: usize = 20 * MAX_SERIES_TERMS;
/// Largest tolerated ratio `Σ|terms| / |Σ terms|` for the connection sums.
const MAX_CONNECTION_COND: f64 = 64.0;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Parameters of `2F1(a, b; c; x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub x: f64,
}

impl HyperParams {
    pub fn new(a: f64, b: f64, c: f64, x: f64) -> Self {
        Self { a, b, c, x }
    }
}

fn is_nonpositive_integer(x: f64) -> bool {
    x <= 0.0 && x == x.round()
}

fn lanczos(x: f64) -> f64 {
    let x = x - 1.0;
    let mut acc = LANCZOS_COEFS[0];
    for (i, c) in LANCZOS_COEFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    // split the power so that large arguments do not overflow early
    let half = t.powf(0.5 * (x + 0.5));
    (2.0 * PI).sqrt() * half * (-t).exp() * half * acc
}

fn gamma_unchecked(x: f64) -> f64 {
    if x >= 1.0 && x <= 30.0 && x == x.round() {
        return pochhammer(1.0, x as usize - 1);
    }
    if x < 0.5 {
        PI / ((PI * x).sin() * gamma_unchecked(1.0 - x))
    } else {
        lanczos(x)
    }
}

/// `1/Γ(x)`, zero at the poles.
fn rgamma(x: f64) -> f64 {
    if is_nonpositive_integer(x) {
        0.0
    } else {
        1.0 / gamma_unchecked(x)
    }
}

/// Euler's gamma function.
pub fn gamma_fn(x: f64) -> Result<f64> {
    if !x.is_finite() || is_nonpositive_integer(x) {
        return Err(Error::Domain(format!("gamma has a pole at {x}")));
    }
    Ok(gamma_unchecked(x))
}

/// Rising factorial `x (x+1) ... (x+n-1)`.
pub fn pochhammer(x: f64, n: usize) -> f64 {
    (0..n).fold(1.0, |acc, k| acc * (x + k as f64))
}

fn digamma_unchecked(mut x: f64) -> f64 {
    if x < 0.0 {
        return digamma_unchecked(1.0 - x) - PI / (PI * x).tan();
    }
    let mut acc = 0.0;
    while x < 12.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let tail = inv2
        * (1.0 / 12.0
            - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))));
    acc + x.ln() - 0.5 * inv - tail
}

/// Logarithmic derivative of the gamma function.
pub fn digamma(x: f64) -> Result<f64> {
    if !x.is_finite() || is_nonpositive_integer(x) {
        return Err(Error::Domain(format!("digamma has a pole at {x}")));
    }
    Ok(digamma_unchecked(x))
}

/// Gauss hypergeometric function `2F1(a, b; c; x)` for real `x ≤ 1`.
pub fn gauss_2f1(p: HyperParams) -> Result<f64> {
    gauss_2f1_split(p.a, p.b, p.c, p.x, 1.0 - p.x)
}

/// As [`gauss_2f1`] with the complement `y = 1 − x` supplied by the caller.
pub fn gauss_2f1_split(a: f64, b: f64, c: f64, x: f64, y: f64) -> Result<f64> {
    if ![a, b, c, x, y].iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("non-finite hypergeometric parameter".into()));
    }
    if is_nonpositive_integer(c) {
        return Err(Error::Domain(format!("c = {c} is a non-positive integer")));
    }
    if x > 1.0 || y < 0.0 {
        return Err(Error::Domain(format!("argument {x} outside (-inf, 1]")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if is_nonpositive_integer(a) || is_nonpositive_integer(b) {
        return power_series(a, b, c, x);
    }
    if y == 0.0 {
        let m = c - a - b;
        if m <= 0.0 {
            return Err(Error::Domain(format!(
                "x = 1 requires c - a - b > 0, got {m}"
            )));
        }
        return Ok(gamma_unchecked(c) * gamma_unchecked(m) * rgamma(c - a) * rgamma(c - b));
    }
    if x < -X_SWITCH {
        // Pfaff: F(a,b;c;x) = (1-x)^{-a} F(a, c-b; c; x/(x-1))
        return Ok(y.powf(-a) * gauss_2f1_split(a, c - b, c, -x / y, 1.0 / y)?);
    }
    if x <= X_SWITCH {
        return power_series(a, b, c, x);
    }
    let (value, cond) = connection(a, b, c, y)?;
    if cond <= MAX_CONNECTION_COND {
        return Ok(value);
    }
    // the connection sums cancel badly for large parameters; the direct
    // series is slower but free of cancellation when it converges
    match power_series_capped(a, b, c, x, FALLBACK_SERIES_TERMS) {
        Ok(v) => Ok(v),
        Err(_) if cond <= 1e4 => Ok(value),
        Err(e) => Err(e),
    }
}

fn power_series(a: f64, b: f64, c: f64, x: f64) -> Result<f64> {
    power_series_capped(a, b, c, x, MAX_SERIES_TERMS)
}

fn power_series_capped(a: f64, b: f64, c: f64, x: f64, cap: usize) -> Result<f64> {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 0..cap {
        let k = k as f64;
        term *= (a + k) * (b + k) / ((c + k) * (k + 1.0)) * x;
        sum += term;
        if term == 0.0 || term.abs() <= SERIES_EPS * sum.abs() {
            return Ok(sum);
        }
    }
    Err(Error::Accuracy(format!(
        "2F1({a}, {b}; {c}; {x}) series did not converge in {cap} terms"
    )))
}

/// Value of the connection formula and its cancellation ratio.
fn connection(a: f64, b: f64, c: f64, y: f64) -> Result<(f64, f64)> {
    let m = c - a - b;
    let mr = m.round();
    if (m - mr).abs() < 1e-12 {
        if mr >= 0.0 {
            log_connection_pos(a, b, mr as usize, y)
        } else {
            log_connection_neg(a, b, (-mr) as usize, y)
        }
    } else {
        let t1 = gamma_unchecked(c) * gamma_unchecked(m) * rgamma(c - a) * rgamma(c - b);
        let t2 = gamma_unchecked(c) * gamma_unchecked(-m) * rgamma(a) * rgamma(b);
        let s1 = if t1 != 0.0 { power_series(a, b, 1.0 - m, y)? } else { 0.0 };
        let s2 = if t2 != 0.0 { power_series(c - a, c - b, 1.0 + m, y)? } else { 0.0 };
        let u = t1 * s1;
        let v = y.powf(m) * t2 * s2;
        let value = u + v;
        Ok((value, (u.abs() + v.abs()) / value.abs()))
    }
}

/// `c = a + b + m`, `m ≥ 0`.
fn log_connection_pos(a: f64, b: f64, m: usize, y: f64) -> Result<(f64, f64)> {
    let mf = m as f64;
    let mut first = 0.0;
    if m > 0 {
        let pref = gamma_unchecked(mf)
            * gamma_unchecked(a + b + mf)
            * rgamma(a + mf)
            * rgamma(b + mf);
        let mut term = 1.0;
        let mut s = 0.0;
        for n in 0..m {
            s += term;
            let nf = n as f64;
            term *= (a + nf) * (b + nf) / ((nf + 1.0) * (1.0 - mf + nf)) * y;
        }
        first = pref * s;
    }
    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
    let pref = sign * y.powi(m as i32) * gamma_unchecked(a + b + mf) * rgamma(a) * rgamma(b);
    if pref == 0.0 {
        return Ok((first, 1.0));
    }
    let ln_y = y.ln();
    let mut coef = 1.0 / pochhammer(1.0, m);
    let mut psi_n1 = -EULER_GAMMA;
    let mut psi_nm1 = digamma_unchecked(mf + 1.0);
    let mut psi_a = digamma_unchecked(a + mf);
    let mut psi_b = digamma_unchecked(b + mf);
    let mut sum = 0.0;
    let mut abs_sum = 0.0;
    for n in 0..MAX_SERIES_TERMS {
        let nf = n as f64;
        let bracket = ln_y - psi_n1 - psi_nm1 + psi_a + psi_b;
        let term = coef * bracket;
        sum += term;
        abs_sum += term.abs();
        if n > 0 && coef.abs() * (1.0 + bracket.abs()) <= SERIES_EPS * sum.abs() {
            let value = first - pref * sum;
            return Ok((value, (first.abs() + (pref * abs_sum).abs()) / value.abs()));
        }
        coef *= (a + mf + nf) * (b + mf + nf) / ((nf + 1.0) * (nf + mf + 1.0)) * y;
        psi_n1 += 1.0 / (nf + 1.0);
        psi_nm1 += 1.0 / (nf + mf + 1.0);
        psi_a += 1.0 / (a + mf + nf);
        psi_b += 1.0 / (b + mf + nf);
    }
    Err(Error::Accuracy(format!(
        "logarithmic connection series for 2F1({a}, {b}; {}; 1-{y}) did not converge",
        a + b + mf
    )))
}

/// `c = a + b − m`, `m ≥ 1`.
fn log_connection_neg(a: f64, b: f64, m: usize, y: f64) -> Result<(f64, f64)> {
    let mf = m as f64;
    let gc = gamma_unchecked(a + b - mf);
    let pref1 = gamma_unchecked(mf) * gc * rgamma(a) * rgamma(b) * y.powi(-(m as i32));
    let mut term = 1.0;
    let mut s = 0.0;
    for n in 0..m {
        s += term;
        let nf = n as f64;
        term *= (a - mf + nf) * (b - mf + nf) / ((nf + 1.0) * (1.0 - mf + nf)) * y;
    }
    let first = pref1 * s;
    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
    let pref = sign * gc * rgamma(a - mf) * rgamma(b - mf);
    if pref == 0.0 {
        return Ok((first, 1.0));
    }
    let ln_y = y.ln();
    let mut coef = 1.0 / pochhammer(1.0, m);
    let mut psi_n1 = -EULER_GAMMA;
    let mut psi_nm1 = digamma_unchecked(mf + 1.0);
    let mut psi_a = digamma_unchecked(a);
    let mut psi_b = digamma_unchecked(b);
    let mut sum = 0.0;
    let mut abs_sum = 0.0;
    for n in 0..MAX_SERIES_TERMS {
        let nf = n as f64;
        let bracket = ln_y - psi_n1 - psi_nm1 + psi_a + psi_b;
        sum += coef * bracket;
        abs_sum += (coef * bracket).abs();
        if n > 0 && coef.abs() * (1.0 + bracket.abs()) <= SERIES_EPS * sum.abs() {
            let value = first - pref * sum;
            return Ok((value, (first.abs() + (pref * abs_sum).abs()) / value.abs()));
        }
        coef *= (a + nf) * (b + nf) / ((nf + 1.0) * (nf + mf + 1.0)) * y;
        psi_n1 += 1.0 / (nf + 1.0);
        psi_nm1 += 1.0 / (nf + mf + 1.0);
        psi_a += 1.0 / (a + nf);
        psi_b += 1.0 / (b + nf);
    }
    Err(Error::Accuracy(format!(
        "logarithmic connection series for 2F1({a}, {b}; {}; 1-{y}) did not converge",
        a + b - mf
    )))
}

fn check_family_args(n: usize, x: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::Domain("F_n requires n >= 1".into()));
    }
    if !(0.0..1.0).contains(&x) {
        return Err(Error::Domain(format!("F_n argument {x} outside [0, 1)")));
    }
    Ok(())
}

/// `F_n(x) = 2F1(n+1/2, n+1/2; 2n+1; x)`.
pub fn f_n(n: usize, x: f64) -> Result<f64> {
    check_family_args(n, x)?;
    let a = n as f64 + 0.5;
    gauss_2f1_split(a, a, 2.0 * a, x, 1.0 - x)
}

/// Derivative of [`f_n`] in `x`.
pub fn f_n_prime(n: usize, x: f64) -> Result<f64> {
    check_family_args(n, x)?;
    let a = n as f64 + 0.5;
    let f = gauss_2f1_split(a + 1.0, a + 1.0, 2.0 * a + 1.0, x, 1.0 - x)?;
    Ok(a * a / (2.0 * a) * f)
}

/// Limit of `F_n(x) / (−ln(1−x))` as `x → 1⁻`, i.e. `Γ(2n+1)/Γ(n+1/2)²`.
pub fn f_n_log_coefficient(n: usize) -> f64 {
    let a = n as f64 + 0.5;
    gamma_unchecked(2.0 * a) / (gamma_unchecked(a) * gamma_unchecked(a))
}

/// `∫₀^{2π} cos(nθ) / (A − cos θ)^{β/2} dθ` in closed form.
pub fn ring_integral(n: usize, beta: f64, big_a: f64) -> Result<f64> {
    if !(big_a > 1.0) || !big_a.is_finite() {
        return Err(Error::Domain(format!("ring integral needs A > 1, got {big_a}")));
    }
    if !(beta >= 0.0) {
        return Err(Error::Domain(format!("ring integral needs beta >= 0, got {beta}")));
    }
    let nf = n as f64;
    let x = 2.0 / (1.0 + big_a);
    let y = (big_a - 1.0) / (big_a + 1.0);
    let coef = pochhammer(0.5 * beta, n) * 2f64.powi(n as i32) * pochhammer(0.5, n)
        / pochhammer(1.0, 2 * n);
    if coef == 0.0 {
        return Ok(0.0);
    }
    let f = gauss_2f1_split(nf + 0.5 * beta, nf + 0.5, 2.0 * nf + 1.0, x, y)?;
    Ok(2.0 * PI / (1.0 + big_a).powf(0.5 * beta + nf) * coef * f)
}

/// Precomputed expansions of `F_n` for repeated evaluation in kernel loops.
///
/// `F_n(x) = Σ p_k x^k` below the switch and
/// `F_n(x) = Σ y^k (α_k − β_k ln y)` above it, `y = 1 − x`. The switch is
/// the first point at which the logarithmic sum no longer cancels.
#[derive(Debug, Clone)]
pub struct FnExpansion {
    n: usize,
    switch: f64,
    power: Vec<f64>,
    log_alpha: Vec<f64>,
    log_beta: Vec<f64>,
}

impl FnExpansion {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "F_n requires n >= 1");
        let a = n as f64 + 0.5;
        let g = f_n_log_coefficient(n);

        // logarithmic coefficients, enough for y up to 1/4
        let mut log_alpha = Vec::new();
        let mut log_beta = Vec::new();
        let mut c = g;
        let mut psi_k1 = -EULER_GAMMA;
        let mut psi_ak = digamma_unchecked(a);
        for k in 0..MAX_SERIES_TERMS {
            let kf = k as f64;
            log_alpha.push(c * 2.0 * (psi_k1 - psi_ak));
            log_beta.push(c);
            if k > 4 && c * 0.25f64.powi(k as i32) * (1.0 + kf) <= 1e-20 * g {
                break;
            }
            c *= (a + kf) * (a + kf) / ((kf + 1.0) * (kf + 1.0));
            psi_k1 += 1.0 / (kf + 1.0);
            psi_ak += 1.0 / (a + kf);
        }

        // smallest switch at which the logarithmic sum is well conditioned
        let candidates = [
            0.75, 0.8, 0.85, 0.9, 0.93, 0.95, 0.97, 0.98, 0.99, 0.995, 0.998, 0.999,
        ];
        let mut switch = *candidates.last().unwrap();
        for &xs in &candidates {
            let y: f64 = 1.0 - xs;
            let ln_y = y.ln();
            let (mut sum, mut abs_sum, mut yk) = (0.0f64, 0.0f64, 1.0f64);
            for (al, be) in log_alpha.iter().zip(&log_beta) {
                let t = yk * (al - be * ln_y);
                sum += t;
                abs_sum += t.abs();
                yk *= y;
            }
            if abs_sum <= 16.0 * sum.abs() {
                switch = xs;
                break;
            }
        }
        let y_max = 1.0 - switch;
        let keep = log_beta
            .iter()
            .enumerate()
            .position(|(k, be)| k > 4 && be * y_max.powi(k as i32) * (1.0 + k as f64) <= 1e-18 * g)
            .unwrap_or(log_beta.len());
        log_alpha.truncate(keep + 1);
        log_beta.truncate(keep + 1);

        let mut power = vec![1.0];
        let mut coef = 1.0f64;
        let mut term = 1.0f64;
        let mut sum = 1.0f64;
        for k in 0..FALLBACK_SERIES_TERMS {
            let kf = k as f64;
            let r = (a + kf) * (a + kf) / ((2.0 * a + kf) * (kf + 1.0));
            coef *= r;
            power.push(coef);
            term *= r * switch;
            sum += term;
            if term <= 0.1 * SERIES_EPS * sum {
                break;
            }
        }
        Self {
            n,
            switch,
            power,
            log_alpha,
            log_beta,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Argument above which the logarithmic expansion is used.
    pub fn switch(&self) -> f64 {
        self.switch
    }

    /// `F_n` at `x` with complement `y = 1 − x`.
    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        if x <= self.switch {
            let mut sum = 0.0;
            let mut xk = 1.0;
            for c in &self.power {
                let t = c * xk;
                sum += t;
                if t <= 0.5 * SERIES_EPS * sum {
                    break;
                }
                xk *= x;
            }
            sum
        } else {
            let ln_y = y.ln();
            let mut acc = 0.0;
            for (al, be) in self.log_alpha.iter().zip(&self.log_beta).rev() {
                acc = acc * y + (al - be * ln_y);
            }
            acc
        }
    }
}
