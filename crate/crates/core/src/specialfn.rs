//! Special functions and closed-form expectations used by the remainder
//! functions: log-Gamma, Kummer's `₁F₁`, the CIR exponential moment, the 3/2
//! power moment and the Gaussian quadratic-exponential moment.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Truncation control for power series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesControl {
    pub max_terms: usize,
    pub rel_tol: f64,
}

impl Default for SeriesControl {
    fn default() -> Self {
        Self {
            max_terms: 500,
            rel_tol: 1e-14,
        }
    }
}

impl SeriesControl {
    pub fn new(max_terms: usize, rel_tol: f64) -> Result<Self> {
        if max_terms < 1 || !(rel_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "series control needs max_terms >= 1 and rel_tol > 0 (got {max_terms}, {rel_tol})"
            )));
        }
        Ok(Self { max_terms, rel_tol })
    }
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("log_gamma needs x > 0 (got {x})")));
    }
    if x == 1.0 || x == 2.0 {
        return Ok(0.0);
    }
    Ok(ln_gamma_unchecked(x))
}

fn ln_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1-x) = π / sin(πx).
        return (PI / (PI * x).sin()).ln() - ln_gamma_unchecked(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Confluent hypergeometric function `₁F₁(a; b; z)`.
///
/// Negative arguments go through Kummer's transformation
/// `₁F₁(a; b; z) = e^z ₁F₁(b - a; b; -z)`, which turns the alternating series
/// into one without catastrophic cancellation.
pub fn kummer_1f1(a: f64, b: f64, z: f64, ctl: SeriesControl) -> Result<f64> {
    if b <= 0.0 && b == b.floor() {
        return Err(Error::Domain(format!(
            "kummer_1f1 undefined for non-positive integer b (got {b})"
        )));
    }
    if !(a.is_finite() && b.is_finite() && z.is_finite()) {
        return Err(Error::Domain(format!(
            "kummer_1f1 needs finite arguments (a={a}, b={b}, z={z})"
        )));
    }
    if z < 0.0 {
        let (s, _) = kummer_series(b - a, b, -z, ctl)?;
        return Ok(z.exp() * s);
    }
    Ok(kummer_series(a, b, z, ctl)?.0)
}

/// Sums the series for `z >= 0`; returns the sum and the number of terms.
fn kummer_series(a: f64, b: f64, z: f64, ctl: SeriesControl) -> Result<(f64, usize)> {
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 0..ctl.max_terms {
        let nf = n as f64;
        term *= (a + nf) / (b + nf) * z / (nf + 1.0);
        sum += term;
        if term == 0.0 {
            return Ok((sum, n + 1));
        }
        // Terms keep growing while n < z - b roughly; only stop once they shrink.
        let shrinking = (a + nf + 1.0).abs() * z < (b + nf + 1.0).abs() * (nf + 2.0);
        if shrinking && term.abs() <= ctl.rel_tol * sum.abs() {
            return Ok((sum, n + 1));
        }
    }
    Err(Error::NonConvergence {
        max_terms: ctl.max_terms,
    })
}

/// `E[e^{γ X_T}]` for `dX = (b - αX) dt + σ√X dB`, `X_0 = x`.
///
/// `c(T) = σ²(1 - e^{-αT})/(2α)`; the moment equals
/// `(1 - γc)^{-2b/σ²} exp(γ e^{-αT} x / (1 - γc))`.
pub fn cir_mgf(gamma: f64, t: f64, b: f64, alpha: f64, sigma: f64, x: f64) -> Result<f64> {
    ln_cir_mgf(gamma, t, b, alpha, sigma, x).map(f64::exp)
}

pub fn ln_cir_mgf(gamma: f64, t: f64, b: f64, alpha: f64, sigma: f64, x: f64) -> Result<f64> {
    let s2 = sigma * sigma;
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("cir_mgf needs α > 0 (got {alpha})")));
    }
    if !(gamma < 2.0 * alpha / s2) {
        return Err(Error::Domain(format!(
            "γ < 2α/σ² violated (γ={gamma}, bound={})",
            2.0 * alpha / s2
        )));
    }
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("cir_mgf needs T >= 0 (got {t})")));
    }
    let c = -s2 * (-alpha * t).exp_m1() / (2.0 * alpha);
    let denom = 1.0 - gamma * c;
    Ok(-(2.0 * b / s2) * denom.ln() + gamma * (-alpha * t).exp() * x / denom)
}

/// `E[X_T^A]` for `dX = (b - αX) X dt + σ X^{3/2} dB`, `X_0 = ξ`.
pub fn three_half_moment(
    a_pow: f64,
    t: f64,
    b: f64,
    alpha: f64,
    sigma: f64,
    xi: f64,
) -> Result<f64> {
    let s2 = sigma * sigma;
    let c = 2.0 * alpha / s2 + 2.0;
    if !(a_pow < c) {
        return Err(Error::Domain(format!(
            "A < 2α/σ² + 2 violated (A={a_pow}, bound={c})"
        )));
    }
    if !(t > 0.0) {
        return Err(Error::Domain(format!(
            "three_half_moment needs T > 0 (got {t})"
        )));
    }
    if !(b > 0.0 && xi > 0.0) {
        return Err(Error::Domain(format!(
            "three_half_moment needs b > 0 and ξ > 0 (b={b}, ξ={xi})"
        )));
    }
    if a_pow == 0.0 {
        return Ok(1.0);
    }
    let k = 2.0 * b / s2;
    let bt = b * t;
    let ln_gamma_ratio = log_gamma(c - a_pow)? - log_gamma(c)?;
    let ln_scale = a_pow * (k.ln() - (-(-bt).exp_m1()).ln());
    let z = -k / (bt.exp_m1() * xi);
    let f = kummer_1f1(a_pow, c, z, SeriesControl::default())?;
    Ok((ln_gamma_ratio + ln_scale).exp() * f)
}

/// `T → ∞` limit of [`three_half_moment`]:
/// `Γ(c - A)/Γ(c) (2b/σ²)^A` with `c = 2α/σ² + 2`.
pub fn three_half_moment_limit(a_pow: f64, b: f64, alpha: f64, sigma: f64) -> Result<f64> {
    let s2 = sigma * sigma;
    let c = 2.0 * alpha / s2 + 2.0;
    if !(a_pow < c) {
        return Err(Error::Domain(format!(
            "A < 2α/σ² + 2 violated (A={a_pow}, bound={c})"
        )));
    }
    let ln = log_gamma(c - a_pow)? - log_gamma(c)? + a_pow * (2.0 * b / s2).ln();
    Ok(ln.exp())
}

/// `E[exp(½ηX² + ℓX)]` for `X ~ N(m, s2)`.
pub fn gaussian_quad_exp_moment(eta: f64, ell: f64, m: f64, s2: f64) -> Result<f64> {
    ln_gaussian_quad_exp_moment(eta, ell, m, s2).map(f64::exp)
}

pub fn ln_gaussian_quad_exp_moment(eta: f64, ell: f64, m: f64, s2: f64) -> Result<f64> {
    let d = 1.0 - eta * s2;
    if !(d > 0.0) {
        return Err(Error::Domain(format!(
            "η·s² < 1 violated (η·s²={})",
            eta * s2
        )));
    }
    if !(s2 >= 0.0) {
        return Err(Error::Domain(format!("variance must be >= 0 (got {s2})")));
    }
    Ok(-0.5 * d.ln() + (2.0 * ell * m + ell * ell * s2 + eta * m * m) / (2.0 * d))
}
