//! Closed-form eigenpairs, the Hansen–Scheinkman factorisation
//! `p_T = φ(ξ) e^{-λT} f(T, ξ)`, remainder functions and their limits, and
//! the long-horizon utility sensitivity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    black_scholes_theta_sq, derive_pricing_dynamics, hat_dynamics, pricing_speed_dnu, Family,
    HatDynamics, KillingShape, MarketParams, ModelSpec, PricingDynamics,
};
use crate::specialfn::{
    ln_cir_mgf, ln_gaussian_quad_exp_moment, log_gamma, three_half_moment,
};

/// Positive eigenpair `(λ, φ)` of the killed generator, `ℒφ - qφ = -λφ`.
///
/// * OU: `φ(x) = exp(-½ηx² - ℓx)`
/// * CIR, quadratic drift: `φ(x) = exp(-ηx)`
/// * 3/2: `φ(x) = x^{-η}`
/// * Black–Scholes: `φ ≡ 1`, `λ = qθ²`; `α` and `δ` are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenpair {
    pub family: Family,
    pub lambda: f64,
    pub eta: f64,
    pub ell: f64,
    /// ℙ̂ mean-reversion speed.
    pub alpha: f64,
    /// ℙ̂ drift level: `ab/α` for OU, `b` otherwise.
    pub delta: f64,
}

impl Eigenpair {
    pub fn ln_phi(&self, x: f64) -> f64 {
        match self.family {
            Family::Ou => -0.5 * self.eta * x * x - self.ell * x,
            Family::Cir | Family::QuadraticDrift => -self.eta * x,
            Family::ThreeHalves => -self.eta * x.ln(),
            Family::BlackScholes => 0.0,
        }
    }

    pub fn phi(&self, x: f64) -> f64 {
        self.ln_phi(x).exp()
    }

    /// `φ'(x)/φ(x)`.
    pub fn dphi_ratio(&self, x: f64) -> f64 {
        match self.family {
            Family::Ou => -self.eta * x - self.ell,
            Family::Cir | Family::QuadraticDrift => -self.eta,
            Family::ThreeHalves => -self.eta / x,
            Family::BlackScholes => 0.0,
        }
    }

    /// `φ''(x)/φ(x)`.
    pub fn d2phi_ratio(&self, x: f64) -> f64 {
        match self.family {
            Family::Ou => {
                let g = self.eta * x + self.ell;
                g * g - self.eta
            }
            Family::Cir | Family::QuadraticDrift => self.eta * self.eta,
            Family::ThreeHalves => self.eta * (self.eta + 1.0) / (x * x),
            Family::BlackScholes => 0.0,
        }
    }

    /// Remainder payoff `H = 1/φ`.
    pub fn payoff(&self, x: f64) -> f64 {
        (-self.ln_phi(x)).exp()
    }

    /// `H'(x)` for `H = 1/φ`.
    pub fn payoff_dx(&self, x: f64) -> f64 {
        -self.dphi_ratio(x) * self.payoff(x)
    }
}

/// Closed-form eigenpair of the pricing dynamics.
pub fn eigenpair(dynamics: &PricingDynamics) -> Result<Eigenpair> {
    let (a, q) = (dynamics.a, dynamics.q);
    let b = dynamics.diffusion.level;
    let sigma = dynamics.diffusion.sigma;
    let s2 = sigma * sigma;
    let family = dynamics.family;
    let discriminant = |c: f64, what: &str| -> Result<f64> {
        let d2 = c * c + 2.0 * q * s2;
        if d2 > 0.0 {
            Ok(d2.sqrt())
        } else {
            Err(Error::Domain(format!(
                "{what} violated (discriminant {d2} <= 0)"
            )))
        }
    };
    let pair = match family {
        Family::BlackScholes => {
            let theta_sq = match dynamics.killing.shape {
                KillingShape::Constant(c) => c,
                _ => return Err(Error::InvalidArgument("Black–Scholes needs constant killing".into())),
            };
            Eigenpair {
                family,
                lambda: q * theta_sq,
                eta: 0.0,
                ell: 0.0,
                alpha: 0.0,
                delta: 0.0,
            }
        }
        Family::Ou => {
            let alpha = discriminant(a, "q > -a²/(2σ²)")?;
            let eta = (alpha - a) / s2;
            let ell = b * eta / alpha;
            Eigenpair {
                family,
                lambda: -0.5 * s2 * ell * ell + b * ell + 0.5 * (alpha - a),
                eta,
                ell,
                alpha,
                delta: a * b / alpha,
            }
        }
        Family::Cir | Family::QuadraticDrift => {
            let alpha = discriminant(a, "q > -a²/(2σ²)")?;
            let eta = (alpha - a) / s2;
            Eigenpair {
                family,
                lambda: b * eta,
                eta,
                ell: 0.0,
                alpha,
                delta: b,
            }
        }
        Family::ThreeHalves => {
            let c0 = a + 0.5 * s2;
            let d = discriminant(c0, "q > -(a+σ²/2)²/(2σ²) + σ²/8")?;
            let eta = (d - c0) / s2;
            Eigenpair {
                family,
                lambda: b * eta,
                eta,
                ell: 0.0,
                alpha: a + s2 * eta,
                delta: b,
            }
        }
    };
    if family != Family::BlackScholes && !(pair.alpha > 0.0) {
        return Err(Error::Domain(format!(
            "eigen-measure speed α > 0 violated (α={})",
            pair.alpha
        )));
    }
    Ok(pair)
}

/// Convenience: pricing dynamics, eigenpair and ℙ̂ dynamics in one call.
pub fn decompose_model(
    spec: &ModelSpec,
    mkt: &MarketParams,
) -> Result<(PricingDynamics, Eigenpair, HatDynamics)> {
    let dynamics = derive_pricing_dynamics(spec, mkt)?;
    let eig = eigenpair(&dynamics)?;
    let hat = hat_dynamics(spec, &eig);
    Ok((dynamics, eig, hat))
}

const RESIDUAL_FLOOR: f64 = 1e-300;

/// Max over `grid` of `|½σ²φ'' + bφ' - qφ + λφ| / (|λ|φ + ε)`.
pub fn generator_residual(dynamics: &PricingDynamics, eig: &Eigenpair, grid: &[f64]) -> f64 {
    grid.iter()
        .map(|&x| {
            let v = dynamics.vol(x);
            let phi = eig.phi(x);
            let per_phi = 0.5 * v * v * eig.d2phi_ratio(x) + dynamics.drift(x) * eig.dphi_ratio(x)
                - dynamics.killing_rate(x)
                + eig.lambda;
            (per_phi * phi).abs() / (eig.lambda.abs() * phi + RESIDUAL_FLOOR)
        })
        .fold(0.0, f64::max)
}

/// ν-derivatives of the eigen quantities, by the chain rule through
/// `a(ν)` and `q(ν)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenDerivatives {
    pub dlambda: f64,
    pub deta: f64,
    pub dell: f64,
    pub dalpha: f64,
    pub ddelta: f64,
}

pub fn eigen_nu_derivatives(spec: &ModelSpec, mkt: &MarketParams) -> Result<EigenDerivatives> {
    let dynamics = derive_pricing_dynamics(spec, mkt)?;
    let eig = eigenpair(&dynamics)?;
    let da = pricing_speed_dnu(spec, mkt);
    let dq = mkt.killing_coefficient_dnu();
    let (a, b, s2) = (dynamics.a, spec.b, spec.sigma * spec.sigma);
    let (alpha, eta) = (eig.alpha, eig.eta);
    let zero = EigenDerivatives {
        dlambda: 0.0,
        deta: 0.0,
        dell: 0.0,
        dalpha: 0.0,
        ddelta: 0.0,
    };
    Ok(match spec.family {
        Family::BlackScholes => EigenDerivatives {
            dlambda: black_scholes_theta_sq(spec, mkt) * dq,
            ..zero
        },
        Family::Ou => {
            let dalpha = (a * da + s2 * dq) / alpha;
            let deta = (dalpha - da) / s2;
            let dell = b * (deta * alpha - eta * dalpha) / (alpha * alpha);
            EigenDerivatives {
                dlambda: (b - s2 * eig.ell) * dell + 0.5 * (dalpha - da),
                deta,
                dell,
                dalpha,
                ddelta: b * (da * alpha - a * dalpha) / (alpha * alpha),
            }
        }
        Family::Cir | Family::QuadraticDrift => {
            let deta = (-eta * da + dq) / alpha;
            EigenDerivatives {
                dlambda: b * deta,
                deta,
                dalpha: da + s2 * deta,
                ..zero
            }
        }
        Family::ThreeHalves => {
            let d = (a + 0.5 * s2) + s2 * eta;
            let deta = (-eta * da + dq) / d;
            EigenDerivatives {
                dlambda: b * deta,
                deta,
                dalpha: da + s2 * deta,
                ..zero
            }
        }
    })
}

/// Closed-form `∂λ/∂ν`.
pub fn lambda_sensitivity(spec: &ModelSpec, mkt: &MarketParams) -> Result<f64> {
    Ok(eigen_nu_derivatives(spec, mkt)?.dlambda)
}

/// The three factors of `p_T` and their product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HSDecomposition {
    pub t: f64,
    pub phi_at_xi: f64,
    pub lambda: f64,
    pub remainder: f64,
    pub p_t: f64,
    pub ln_p_t: f64,
}

pub fn hs_assemble(eig: &Eigenpair, xi: f64, t: f64, remainder: f64) -> Result<HSDecomposition> {
    if !(remainder > 0.0) || !remainder.is_finite() {
        return Err(Error::Domain(format!(
            "remainder must be positive and finite (got {remainder})"
        )));
    }
    let ln_phi = eig.ln_phi(xi);
    let ln_p_t = ln_phi - eig.lambda * t + remainder.ln();
    Ok(HSDecomposition {
        t,
        phi_at_xi: ln_phi.exp(),
        lambda: eig.lambda,
        remainder,
        p_t: ln_p_t.exp(),
        ln_p_t,
    })
}

/// `ln f(T, ξ) = ln E^ℙ̂[1/φ(X_T)]` in closed form (OU, CIR, 3/2).
pub fn ln_remainder_closed_form(eig: &Eigenpair, hat: &HatDynamics, xi: f64, t: f64) -> Result<f64> {
    let sigma = hat.diffusion.sigma;
    let s2 = sigma * sigma;
    let alpha = eig.alpha;
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be >= 0 (got {t})")));
    }
    match eig.family {
        Family::BlackScholes => Ok(0.0),
        Family::Ou => {
            check_bound(eig.eta, 2.0 * alpha / s2, "η < 2α/σ²")?;
            let decay = (-alpha * t).exp();
            let m = xi * decay + hat.delta / alpha * (1.0 - decay);
            let var = -s2 * (-2.0 * alpha * t).exp_m1() / (2.0 * alpha);
            ln_gaussian_quad_exp_moment(eig.eta, eig.ell, m, var)
        }
        Family::Cir => {
            check_bound(eig.eta, 2.0 * alpha / s2, "η < 2α/σ²")?;
            ln_cir_mgf(eig.eta, t, hat.delta, alpha, sigma, xi)
        }
        Family::ThreeHalves => {
            check_bound(eig.eta, 2.0 * alpha / s2 + 2.0, "η < 2α/σ² + 2")?;
            if t == 0.0 {
                return Ok(eig.eta * xi.ln());
            }
            three_half_moment(eig.eta, t, hat.delta, alpha, sigma, xi).map(f64::ln)
        }
        Family::QuadraticDrift => Err(Error::Unsupported(
            "quadratic drift has no finite-horizon closed form for the remainder; estimate it by Monte Carlo".into(),
        )),
    }
}

pub fn remainder_closed_form(eig: &Eigenpair, hat: &HatDynamics, xi: f64, t: f64) -> Result<f64> {
    ln_remainder_closed_form(eig, hat, xi, t).map(f64::exp)
}

fn check_bound(value: f64, bound: f64, what: &str) -> Result<()> {
    if value < bound {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} violated ({value} >= {bound})")))
    }
}

/// `lim_{T→∞} f(T, ξ)`: the invariant-law expectation of `1/φ`.
pub fn remainder_limit(eig: &Eigenpair, hat: &HatDynamics) -> Result<f64> {
    let sigma = hat.diffusion.sigma;
    let s2 = sigma * sigma;
    let alpha = eig.alpha;
    if eig.family != Family::BlackScholes && eig.eta == 0.0 && eig.ell == 0.0 {
        return Ok(1.0);
    }
    match eig.family {
        Family::BlackScholes => Ok(1.0),
        Family::Ou => {
            check_bound(eig.eta, 2.0 * alpha / s2, "η < 2α/σ²")?;
            ln_gaussian_quad_exp_moment(eig.eta, eig.ell, hat.delta / alpha, s2 / (2.0 * alpha))
                .map(f64::exp)
        }
        Family::Cir => {
            check_bound(eig.eta, 2.0 * alpha / s2, "η < 2α/σ²")?;
            Ok((1.0 - eig.eta * s2 / (2.0 * alpha)).powf(-2.0 * hat.delta / s2))
        }
        Family::ThreeHalves => {
            let c = 2.0 * alpha / s2 + 2.0;
            check_bound(eig.eta, c, "η < 2α/σ² + 2")?;
            let ln = log_gamma(c - eig.eta)? - log_gamma(c)? + eig.eta * (2.0 * hat.delta / s2).ln();
            Ok(ln.exp())
        }
        Family::QuadraticDrift => quadratic_drift_limit(eig.eta, hat.delta, alpha, sigma),
    }
}

/// `∫ e^{ηx} π(dx)` for the quadratic-drift invariant law
/// `π(dx) ∝ x^{-2} exp(-2b/(σ²x) - 2αx/σ²) dx`.
///
/// Substituting `x = e^u` leaves a doubly-exponentially decaying integrand
/// on ℝ, for which the trapezoid rule converges geometrically; the step is
/// halved until successive values agree to 1e-13.
pub fn quadratic_drift_limit(eta: f64, b: f64, alpha: f64, sigma: f64) -> Result<f64> {
    let mut h = 0.25;
    let mut prev = quadratic_drift_limit_with_step(eta, b, alpha, sigma, h)?;
    for _ in 0..12 {
        h *= 0.5;
        let next = quadratic_drift_limit_with_step(eta, b, alpha, sigma, h)?;
        if (next - prev).abs() <= 1e-13 * next.abs() {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::NonConvergence { max_terms: 12 })
}

/// Trapezoid rule in `u = ln x` with a fixed step `h`.
pub fn quadratic_drift_limit_with_step(
    eta: f64,
    b: f64,
    alpha: f64,
    sigma: f64,
    h: f64,
) -> Result<f64> {
    let s2 = sigma * sigma;
    let (kb, ka) = (2.0 * b / s2, 2.0 * alpha / s2);
    if !(kb > 0.0 && ka > 0.0) {
        return Err(Error::Domain(format!(
            "quadratic-drift invariant law needs b > 0 and α > 0 (b={b}, α={alpha})"
        )));
    }
    check_bound(eta, ka, "η < 2α/σ²")?;
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive (got {h})")));
    }
    let log_density = |u: f64, tilt: f64| (tilt - ka) * u.exp() - u - kb * (-u).exp();
    // Peak of the tilted log-density solves (ka - tilt) y² + y - kb = 0, y = e^u.
    let peak = |tilt: f64| {
        let a = ka - tilt;
        let y = if a.abs() < 1e-300 {
            kb
        } else {
            2.0 * kb / (1.0 + (1.0 + 4.0 * a * kb).sqrt())
        };
        y.ln()
    };
    let (u_num, u_den) = (peak(eta), peak(0.0));
    let (g_num, g_den) = (log_density(u_num, eta), log_density(u_den, 0.0));
    let cutoff = 60.0;
    let mut lo = u_num.min(u_den);
    while log_density(lo, eta) > g_num - cutoff || log_density(lo, 0.0) > g_den - cutoff {
        lo -= 0.5;
    }
    let mut hi = u_num.max(u_den);
    while log_density(hi, eta) > g_num - cutoff || log_density(hi, 0.0) > g_den - cutoff {
        hi += 0.5;
    }
    let n = ((hi - lo) / h).ceil() as usize;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=n {
        let u = lo + i as f64 * h;
        num += (log_density(u, eta) - g_num).exp();
        den += (log_density(u, 0.0) - g_den).exp();
    }
    // Endpoint weights are below e^{-60}; plain sums are the trapezoid rule.
    Ok((g_num - g_den).exp() * num / den)
}

/// `ln p_T` from the closed-form factorisation (all families but quadratic
/// drift).
pub fn ln_pt_closed_form(spec: &ModelSpec, mkt: &MarketParams, t: f64) -> Result<f64> {
    let (_, eig, hat) = decompose_model(spec, mkt)?;
    let ln_f = ln_remainder_closed_form(&eig, &hat, mkt.xi, t)?;
    Ok(eig.ln_phi(mkt.xi) - eig.lambda * t + ln_f)
}

/// Expected utility of the optimal strategy, `u_T`, and `ln u_T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Utility {
    pub u: f64,
    pub ln_u: f64,
}

/// `u_T = -(ω^ν/ν) e^{rνT} p_T^{(1-ν)/(1-ν+νρ'ρ)}`.
pub fn utility_from_pt(p_t: f64, mkt: &MarketParams, t: f64) -> Result<Utility> {
    if !(p_t > 0.0) {
        return Err(Error::Domain(format!("p_T must be positive (got {p_t})")));
    }
    utility_from_ln_pt(p_t.ln(), mkt, t)
}

/// As [`utility_from_pt`], taking `ln p_T` so long horizons do not underflow.
pub fn utility_from_ln_pt(ln_p_t: f64, mkt: &MarketParams, t: f64) -> Result<Utility> {
    if !(mkt.nu < 0.0) {
        return Err(Error::Domain(format!("ν < 0 violated (nu={})", mkt.nu)));
    }
    let e = mkt.utility_exponent()?;
    let nu = mkt.nu;
    let ln_u = nu * mkt.omega.ln() - (-nu).ln() + mkt.r * nu * t + e * ln_p_t;
    Ok(Utility {
        u: ln_u.exp(),
        ln_u,
    })
}

/// One horizon of a sensitivity table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub t: f64,
    /// `(1/T) ∂_ν ln p_T`.
    pub value: f64,
    /// `|value + ∂λ/∂ν|`.
    pub residual: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub family: Family,
    pub lambda: f64,
    pub dlambda_dnu: f64,
    /// `(1-ν)/(1-ν+νρ'ρ)`.
    pub exponent: f64,
    /// `lim (1/T) ∂_ν ln u_T`.
    pub asymptotic_slope: f64,
    pub rows: Vec<SensitivityRow>,
}

/// `lim (1/T) ∂_ν ln u_T = r + ρ'ρλ/(1-ν+νρ'ρ)² - ((1-ν)/(1-ν+νρ'ρ)) ∂λ/∂ν`.
pub fn asymptotic_utility_sensitivity(spec: &ModelSpec, mkt: &MarketParams) -> Result<SensitivityReport> {
    let exponent = mkt.utility_exponent()?;
    let dynamics = derive_pricing_dynamics(spec, mkt)?;
    let eig = eigenpair(&dynamics)?;
    let dlambda = lambda_sensitivity(spec, mkt)?;
    let denom = mkt.exponent_denominator();
    Ok(SensitivityReport {
        family: spec.family,
        lambda: eig.lambda,
        dlambda_dnu: dlambda,
        exponent,
        asymptotic_slope: mkt.r + mkt.rho_sq * eig.lambda / (denom * denom) - exponent * dlambda,
        rows: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlackScholesSensitivity {
    pub ln_u: f64,
    pub dnu_ln_u: f64,
    pub slope: f64,
}

/// Black–Scholes expected utility and its ν-derivative:
/// `ln u_T = ν ln ω - ln(-ν) + (r + (μ-r)²/(2(1-ν)σ²)) νT`.
pub fn black_scholes_sensitivity(
    mu: f64,
    mkt: &MarketParams,
    sigma: f64,
    t: f64,
) -> Result<BlackScholesSensitivity> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("σ > 0 violated (sigma={sigma})")));
    }
    if !(mkt.nu < 0.0) {
        return Err(Error::Domain(format!("ν < 0 violated (nu={})", mkt.nu)));
    }
    let nu = mkt.nu;
    let premium = (mu - mkt.r).powi(2) / (2.0 * sigma * sigma);
    let slope = mkt.r + premium / (1.0 - nu).powi(2);
    Ok(BlackScholesSensitivity {
        ln_u: nu * mkt.omega.ln() - (-nu).ln() + (mkt.r + premium / (1.0 - nu)) * nu * t,
        dnu_ln_u: mkt.omega.ln() - 1.0 / nu + slope * t,
        slope,
    })
}
