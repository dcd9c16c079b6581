//! Model families, parameter validation, and the pricing-measure (ℙ) and
//! eigen-measure (ℙ̂) dynamics of the state process.
//!
//! Every state model pairs its physical dynamics with a fixed market price of
//! risk shape:
//!
//! | family            | physical drift   | volatility     | θ'θ(x) | ρ'θ(x)   |
//! |-------------------|------------------|----------------|--------|----------|
//! | `Ou`              | `b - k x`        | `σ`            | `x²`   | `ρ̄ x`    |
//! | `Cir`             | `b - k x`        | `σ √x`         | `x`    | `ρ̄ √x`   |
//! | `ThreeHalves`     | `(b - k x) x`    | `σ x^{3/2}`    | `x`    | `ρ̄ √x`   |
//! | `QuadraticDrift`  | `b - k x²`       | `σ x`          | `x²`   | `ρ̄ x`    |
//!
//! Under ℙ the mean-reversion speed becomes `a = k - νσρ̄/(1-ν)` and the
//! killing rate is `q θ'θ(x)` with `q = -ν(1-ν+νρ'ρ) / (2(1-ν)²)`.
//! Black–Scholes has no state process: the market price of risk is the
//! constant `(μ - r)/σ` and the killing rate is constant.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::eigen::Eigenpair;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    BlackScholes,
    Ou,
    Cir,
    ThreeHalves,
    QuadraticDrift,
}

impl Family {
    /// The four families driven by a state diffusion.
    pub const STATE_MODELS: [Family; 4] = [
        Family::Ou,
        Family::Cir,
        Family::ThreeHalves,
        Family::QuadraticDrift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::BlackScholes => "black_scholes",
            Family::Ou => "ou",
            Family::Cir => "cir",
            Family::ThreeHalves => "three_halves",
            Family::QuadraticDrift => "quadratic_drift",
        }
    }

    /// Whether the state space is `(0, ∞)` rather than `ℝ`.
    pub fn positive_state(self) -> bool {
        matches!(
            self,
            Family::Cir | Family::ThreeHalves | Family::QuadraticDrift
        )
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "black_scholes" | "bs" => Ok(Family::BlackScholes),
            "ou" => Ok(Family::Ou),
            "cir" => Ok(Family::Cir),
            "three_halves" | "3/2" | "3_2" => Ok(Family::ThreeHalves),
            "quadratic_drift" | "quadratic" => Ok(Family::QuadraticDrift),
            other => Err(Error::InvalidArgument(format!(
                "unknown model family '{other}'"
            ))),
        }
    }
}

/// Investor and market scalars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Constant short rate.
    pub r: f64,
    /// Initial wealth.
    pub omega: f64,
    /// Initial state `X₀`.
    pub xi: f64,
    /// Risk-tolerance exponent of the utility `x^ν/ν`.
    pub nu: f64,
    /// Scalar correlation `ρ̄` in `ρ'θ`.
    pub rho_bar: f64,
    /// `ρ'ρ`.
    pub rho_sq: f64,
}

impl MarketParams {
    /// Killing coefficient `q = -ν(1-ν+νρ'ρ) / (2(1-ν)²)`.
    pub fn killing_coefficient(&self) -> f64 {
        let nu = self.nu;
        -nu * (1.0 - nu + nu * self.rho_sq) / (2.0 * (1.0 - nu).powi(2))
    }

    /// `∂q/∂ν = -(1-ν+2ρ'ρν) / (2(1-ν)³)`.
    pub fn killing_coefficient_dnu(&self) -> f64 {
        let nu = self.nu;
        -(1.0 - nu + 2.0 * self.rho_sq * nu) / (2.0 * (1.0 - nu).powi(3))
    }

    /// Exponent `(1-ν)/(1-ν+νρ'ρ)` linking `p_T` to the value function.
    pub fn utility_exponent(&self) -> Result<f64> {
        let denom = self.exponent_denominator();
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::SingularExponent);
        }
        Ok((1.0 - self.nu) / denom)
    }

    pub(crate) fn exponent_denominator(&self) -> f64 {
        1.0 - self.nu + self.nu * self.rho_sq
    }

    pub fn with_nu(&self, nu: f64) -> Self {
        Self { nu, ..*self }
    }

    fn collect_violations(&self, out: &mut Vec<String>) {
        for (name, v) in [
            ("r", self.r),
            ("omega", self.omega),
            ("xi", self.xi),
            ("nu", self.nu),
            ("rho_bar", self.rho_bar),
            ("rho_sq", self.rho_sq),
        ] {
            if !v.is_finite() {
                out.push(format!("{name} finite violated ({name}={v})"));
            }
        }
        if !(self.nu < 0.0) {
            out.push(format!("ν < 0 violated (nu={})", self.nu));
        }
        if !(self.omega > 0.0) {
            out.push(format!("ω > 0 violated (omega={})", self.omega));
        }
        if !(self.rho_sq >= 0.0 && self.rho_sq <= 1.0) {
            out.push(format!("ρ'ρ ∈ [0,1] violated (rho_sq={})", self.rho_sq));
        }
        if !(self.rho_bar * self.rho_bar <= self.rho_sq) {
            out.push(format!(
                "ρ̄² ≤ ρ'ρ violated (rho_bar²={}, rho_sq={})",
                self.rho_bar * self.rho_bar,
                self.rho_sq
            ));
        }
    }
}

/// Physical-measure model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    /// Drift level.
    pub b: f64,
    /// Mean-reversion speed under the physical measure.
    pub k: f64,
    /// Volatility scale (stock volatility for Black–Scholes).
    pub sigma: f64,
    /// Stock drift; Black–Scholes only.
    #[serde(default)]
    pub mu: f64,
}

impl ModelSpec {
    pub fn new(family: Family, b: f64, k: f64, sigma: f64) -> Self {
        Self {
            family,
            b,
            k,
            sigma,
            mu: 0.0,
        }
    }

    pub fn black_scholes(mu: f64, sigma: f64) -> Self {
        Self {
            family: Family::BlackScholes,
            b: 0.0,
            k: 0.0,
            sigma,
            mu,
        }
    }

    fn collect_violations(&self, mkt: &MarketParams, out: &mut Vec<String>) {
        let (b, k, s, xi) = (self.b, self.k, self.sigma, mkt.xi);
        for (name, v) in [("b", b), ("k", k), ("sigma", s), ("mu", self.mu)] {
            if !v.is_finite() {
                out.push(format!("{name} finite violated ({name}={v})"));
            }
        }
        if !(s != 0.0) || s.is_nan() {
            out.push(format!("σ ≠ 0 violated (sigma={s})"));
        }
        let mut need = |ok: bool, what: &str| {
            if !ok {
                out.push(format!("{what} violated"));
            }
        };
        match self.family {
            Family::BlackScholes => need(s > 0.0, "σ > 0"),
            Family::Ou => {
                need(k > 0.0, "k > 0");
                need(s > 0.0, "σ > 0");
            }
            Family::Cir => {
                need(k > 0.0, "k > 0");
                need(s > 0.0, "σ > 0");
                need(xi > 0.0, "ξ > 0");
                need(b > s * s / 2.0, "b > σ²/2");
            }
            Family::ThreeHalves => {
                need(b > 0.0, "b > 0");
                need(k > 0.0, "k > 0");
                need(s > 0.0, "σ > 0");
                need(xi > 0.0, "ξ > 0");
            }
            Family::QuadraticDrift => {
                need(b > 0.0, "b > 0");
                need(k > 0.0, "k > 0");
                need(xi > 0.0, "ξ > 0");
            }
        }
    }
}

/// Checks every market and family-specific constraint, returning the inputs
/// unchanged or the full list of violations.
pub fn validate_model(spec: &ModelSpec, mkt: &MarketParams) -> Result<(ModelSpec, MarketParams)> {
    let mut violations = Vec::new();
    mkt.collect_violations(&mut violations);
    spec.collect_violations(mkt, &mut violations);
    if violations.is_empty() {
        Ok((*spec, *mkt))
    } else {
        Err(Error::Validation(violations))
    }
}

/// Shape of drift and volatility of a scalar diffusion, parameterised by a
/// level `L`, a speed `κ` and a volatility scale `σ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiffusionShape {
    /// `dX = (L - κX) dt + σ dB`
    Gaussian,
    /// `dX = (L - κX) dt + σ√X dB`
    SquareRoot,
    /// `dX = (L - κX) X dt + σ X^{3/2} dB`
    ThreeHalves,
    /// `dX = (L - κX²) dt + σ X dB`
    QuadraticDrift,
    /// `dX = 0`
    Frozen,
}

/// A scalar diffusion with closed-form drift, volatility and derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diffusion {
    pub shape: DiffusionShape,
    pub level: f64,
    pub speed: f64,
    pub sigma: f64,
}

impl Diffusion {
    pub fn drift(&self, x: f64) -> f64 {
        let (l, k) = (self.level, self.speed);
        match self.shape {
            DiffusionShape::Gaussian | DiffusionShape::SquareRoot => l - k * x,
            DiffusionShape::ThreeHalves => (l - k * x) * x,
            DiffusionShape::QuadraticDrift => l - k * x * x,
            DiffusionShape::Frozen => 0.0,
        }
    }

    pub fn vol(&self, x: f64) -> f64 {
        let s = self.sigma;
        match self.shape {
            DiffusionShape::Gaussian => s,
            DiffusionShape::SquareRoot => s * x.sqrt(),
            DiffusionShape::ThreeHalves => s * x * x.sqrt(),
            DiffusionShape::QuadraticDrift => s * x,
            DiffusionShape::Frozen => 0.0,
        }
    }

    pub fn drift_dx(&self, x: f64) -> f64 {
        let (l, k) = (self.level, self.speed);
        match self.shape {
            DiffusionShape::Gaussian | DiffusionShape::SquareRoot => -k,
            DiffusionShape::ThreeHalves => l - 2.0 * k * x,
            DiffusionShape::QuadraticDrift => -2.0 * k * x,
            DiffusionShape::Frozen => 0.0,
        }
    }

    pub fn vol_dx(&self, x: f64) -> f64 {
        let s = self.sigma;
        match self.shape {
            DiffusionShape::Gaussian | DiffusionShape::Frozen => 0.0,
            DiffusionShape::SquareRoot => 0.5 * s / x.sqrt(),
            DiffusionShape::ThreeHalves => 1.5 * s * x.sqrt(),
            DiffusionShape::QuadraticDrift => s,
        }
    }

    /// Whether the state must stay in `(0, ∞)`.
    pub fn positive_state(&self) -> bool {
        matches!(
            self.shape,
            DiffusionShape::SquareRoot | DiffusionShape::ThreeHalves | DiffusionShape::QuadraticDrift
        )
    }

    fn for_family(family: Family, level: f64, speed: f64, sigma: f64) -> Self {
        let shape = match family {
            Family::BlackScholes => DiffusionShape::Frozen,
            Family::Ou => DiffusionShape::Gaussian,
            Family::Cir => DiffusionShape::SquareRoot,
            Family::ThreeHalves => DiffusionShape::ThreeHalves,
            Family::QuadraticDrift => DiffusionShape::QuadraticDrift,
        };
        Diffusion {
            shape,
            level,
            speed,
            sigma,
        }
    }
}

/// Functional form of `θ'θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KillingShape {
    Linear,
    Quadratic,
    /// Constant `θ'θ`, Black–Scholes.
    Constant(f64),
}

/// Killing rate `x ↦ q θ'θ(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Killing {
    pub q: f64,
    pub shape: KillingShape,
}

impl Killing {
    pub fn rate(&self, x: f64) -> f64 {
        match self.shape {
            KillingShape::Linear => self.q * x,
            KillingShape::Quadratic => self.q * x * x,
            KillingShape::Constant(c) => self.q * c,
        }
    }
}

/// State dynamics under the pricing measure ℙ together with the killing rate
/// that turns expected utility into `p_T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricingDynamics {
    pub family: Family,
    /// ℙ mean-reversion speed `a = k - νσρ̄/(1-ν)`.
    pub a: f64,
    /// Killing coefficient.
    pub q: f64,
    pub diffusion: Diffusion,
    pub killing: Killing,
}

impl PricingDynamics {
    pub fn drift(&self, x: f64) -> f64 {
        self.diffusion.drift(x)
    }

    pub fn vol(&self, x: f64) -> f64 {
        self.diffusion.vol(x)
    }

    pub fn killing_rate(&self, x: f64) -> f64 {
        self.killing.rate(x)
    }
}

/// ℙ mean-reversion speed `a = k - νσρ̄/(1-ν)`.
pub fn pricing_speed(spec: &ModelSpec, mkt: &MarketParams) -> f64 {
    spec.k - mkt.nu * spec.sigma * mkt.rho_bar / (1.0 - mkt.nu)
}

/// `∂a/∂ν = -σρ̄/(1-ν)²`.
pub fn pricing_speed_dnu(spec: &ModelSpec, mkt: &MarketParams) -> f64 {
    -spec.sigma * mkt.rho_bar / (1.0 - mkt.nu).powi(2)
}

/// Squared Black–Scholes market price of risk.
pub fn black_scholes_theta_sq(spec: &ModelSpec, mkt: &MarketParams) -> f64 {
    let theta = (spec.mu - mkt.r) / spec.sigma;
    theta * theta
}

/// Derives the ℙ dynamics and killing rate. Rejects parameters for which the
/// killing coefficient is too negative for a positive eigenfunction to exist.
pub fn derive_pricing_dynamics(spec: &ModelSpec, mkt: &MarketParams) -> Result<PricingDynamics> {
    let a = pricing_speed(spec, mkt);
    let q = mkt.killing_coefficient();
    let s2 = spec.sigma * spec.sigma;
    if !a.is_finite() || !q.is_finite() {
        return Err(Error::Domain(format!(
            "non-finite pricing parameters (a={a}, q={q})"
        )));
    }
    match spec.family {
        Family::Ou | Family::Cir | Family::QuadraticDrift => {
            let bound = -a * a / (2.0 * s2);
            if !(q > bound) {
                return Err(Error::Domain(format!(
                    "q > -a²/(2σ²) violated (q={q}, bound={bound})"
                )));
            }
        }
        Family::ThreeHalves => {
            let c = a + s2 / 2.0;
            let bound = -c * c / (2.0 * s2) + s2 / 8.0;
            if !(q > bound) {
                return Err(Error::Domain(format!(
                    "q > -(a+σ²/2)²/(2σ²) + σ²/8 violated (q={q}, bound={bound})"
                )));
            }
            if !(a > -s2 / 2.0) {
                return Err(Error::Domain(format!("a > -σ²/2 violated (a={a})")));
            }
        }
        Family::BlackScholes => {}
    }
    let killing = Killing {
        q,
        shape: match spec.family {
            Family::Ou | Family::QuadraticDrift => KillingShape::Quadratic,
            Family::Cir | Family::ThreeHalves => KillingShape::Linear,
            Family::BlackScholes => KillingShape::Constant(black_scholes_theta_sq(spec, mkt)),
        },
    };
    Ok(PricingDynamics {
        family: spec.family,
        a,
        q,
        diffusion: Diffusion::for_family(spec.family, spec.b, a, spec.sigma),
        killing,
    })
}

/// State dynamics under the eigen-measure ℙ̂. Only the drift differs from ℙ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HatDynamics {
    pub family: Family,
    pub diffusion: Diffusion,
    pub alpha: f64,
    /// Drift level; equals `b` except for OU.
    pub delta: f64,
}

impl HatDynamics {
    pub fn drift(&self, x: f64) -> f64 {
        self.diffusion.drift(x)
    }

    pub fn vol(&self, x: f64) -> f64 {
        self.diffusion.vol(x)
    }
}

/// ℙ̂ dynamics: drift `b + σ²φ'/φ` for the eigenfunction of `eig`.
pub fn hat_dynamics(spec: &ModelSpec, eig: &Eigenpair) -> HatDynamics {
    HatDynamics {
        family: spec.family,
        diffusion: Diffusion::for_family(spec.family, eig.delta, eig.alpha, spec.sigma),
        alpha: eig.alpha,
        delta: eig.delta,
    }
}
