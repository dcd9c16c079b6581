//! Monte Carlo estimators of `p_T`, the remainder function and their
//! ν-sensitivities, plus the long-horizon convergence study.

use serde::{Deserialize, Serialize};

use crate::eigen::{
    black_scholes_sensitivity, decompose_model, eigen_nu_derivatives, lambda_sensitivity,
    Eigenpair, EigenDerivatives,
};
use crate::error::{Error, Result};
use crate::models::{derive_pricing_dynamics, Family, HatDynamics, MarketParams, ModelSpec};
use crate::simulate::{
    crn_steppers, ln_first_variation_path, integrated_killing, likelihood_ratio_path,
    malliavin_path, martingale_sample, run_crn, Execution, Measure, RngPolicy, SchemeKind,
};
use crate::stats::{mean_and_std_error, pairwise_sum};

/// Point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub measure: Measure,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64], seed: u64, measure: Measure) -> Self {
        let (mean, std_error) = mean_and_std_error(samples);
        Self {
            mean,
            std_error,
            n_paths: samples.len(),
            seed,
            measure,
        }
    }

    /// A value known without sampling error.
    pub fn exact(value: f64, seed: u64, measure: Measure) -> Self {
        Self {
            mean: value,
            std_error: 0.0,
            n_paths: 0,
            seed,
            measure,
        }
    }

    /// Number of combined standard errors separating two estimates.
    pub fn z_score(&self, other: &McEstimate) -> f64 {
        let se = (self.std_error.powi(2) + other.std_error.powi(2)).sqrt();
        let diff = (self.mean - other.mean).abs();
        if se == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / se
        }
    }

    /// Number of standard errors separating the estimate from a known value.
    pub fn z_against(&self, value: f64) -> f64 {
        self.z_score(&McEstimate::exact(value, self.seed, self.measure))
    }
}

/// Monte Carlo budget and reproducibility controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: usize,
    /// Grid density; every run uses at least one step.
    pub steps_per_unit_time: f64,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 200_000,
            steps_per_unit_time: 100.0,
            seed: 20_240_601,
            exec: Execution::default(),
        }
    }
}

impl McConfig {
    pub fn n_steps(&self, t: f64) -> usize {
        ((self.steps_per_unit_time * t).ceil() as usize).max(1)
    }

    fn rng(&self) -> RngPolicy {
        RngPolicy::new(self.seed)
    }

    fn check(&self, t: f64) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::InvalidArgument("need at least two paths".into()));
        }
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon must be positive (got {t})")));
        }
        if !(self.steps_per_unit_time > 0.0) {
            return Err(Error::InvalidArgument("steps_per_unit_time must be positive".into()));
        }
        Ok(())
    }
}

/// `p_T = E^ℙ[exp(-∫₀ᵀ q θ'θ(X_s) ds)]`.
pub fn estimate_pt(spec: &ModelSpec, mkt: &MarketParams, t: f64, cfg: &McConfig) -> Result<McEstimate> {
    cfg.check(t)?;
    let dynamics = derive_pricing_dynamics(spec, mkt)?;
    if spec.family == Family::BlackScholes {
        let rate = dynamics.killing.rate(0.0);
        return Ok(McEstimate::exact((-rate * t).exp(), cfg.seed, Measure::Pricing));
    }
    let n = cfg.n_steps(t);
    let dt = t / n as f64;
    let kind = SchemeKind::default_for(dynamics.diffusion.shape);
    let steppers = crn_steppers(&[dynamics.diffusion], kind, dt)?;
    let samples = run_crn(&steppers, mkt.xi, n, cfg.n_paths, cfg.rng(), cfg.exec, |b| {
        (-integrated_killing(&dynamics.killing, &b[0].states, dt)).exp()
    })?;
    Ok(McEstimate::from_samples(&samples, cfg.seed, Measure::Pricing))
}

/// `f(T, ξ) = E^ℙ̂[1/φ(X_T)]`.
pub fn estimate_remainder(eig: &Eigenpair, hat: &HatDynamics, xi: f64, t: f64, cfg: &McConfig) -> Result<McEstimate> {
    cfg.check(t)?;
    if eig.family == Family::BlackScholes {
        return Ok(McEstimate::exact(1.0, cfg.seed, Measure::Eigen));
    }
    let n = cfg.n_steps(t);
    let dt = t / n as f64;
    let kind = SchemeKind::default_for(hat.diffusion.shape);
    let steppers = crn_steppers(&[hat.diffusion], kind, dt)?;
    let samples = run_crn(&steppers, xi, n, cfg.n_paths, cfg.rng(), cfg.exec, |b| {
        eig.payoff(b[0].terminal())
    })?;
    Ok(McEstimate::from_samples(&samples, cfg.seed, Measure::Eigen))
}

/// `E^ℙ[M_T^φ]` with `M_T^φ = (φ(X_T)/φ(ξ)) e^{λT - ∫₀ᵀ q(X_s) ds}`.
pub fn estimate_martingale(spec: &ModelSpec, mkt: &MarketParams, t: f64, cfg: &McConfig) -> Result<McEstimate> {
    cfg.check(t)?;
    let (dynamics, eig, _) = decompose_model(spec, mkt)?;
    if spec.family == Family::BlackScholes {
        return Ok(McEstimate::exact(1.0, cfg.seed, Measure::Pricing));
    }
    let n = cfg.n_steps(t);
    let dt = t / n as f64;
    let kind = SchemeKind::default_for(dynamics.diffusion.shape);
    let steppers = crn_steppers(&[dynamics.diffusion], kind, dt)?;
    let samples = run_crn(&steppers, mkt.xi, n, cfg.n_paths, cfg.rng(), cfg.exec, |b| {
        let s = &b[0].states;
        martingale_sample(&eig, mkt.xi, b[0].terminal(), t, integrated_killing(&dynamics.killing, s, dt))
    })?;
    Ok(McEstimate::from_samples(&samples, cfg.seed, Measure::Pricing))
}

/// Default finite-difference step for Monte Carlo derivatives in ν.
pub fn default_fd_step(nu: f64) -> f64 {
    1e-3 * nu.abs().max(1.0)
}

/// Central difference of `ln E[w₊]` and `ln E[w₋]` over paired samples, with
/// a delta-method standard error.
fn log_ratio_fd(pairs: &[(f64, f64)], h: f64, seed: u64, measure: Measure) -> McEstimate {
    let plus: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let minus: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let n = pairs.len() as f64;
    let (mp, mm) = (pairwise_sum(&plus) / n, pairwise_sum(&minus) / n);
    let lin: Vec<f64> = pairs.iter().map(|p| (p.0 / mp - p.1 / mm) / (2.0 * h)).collect();
    let (_, se) = mean_and_std_error(&lin);
    McEstimate {
        mean: (mp.ln() - mm.ln()) / (2.0 * h),
        std_error: se,
        n_paths: pairs.len(),
        seed,
        measure,
    }
}

/// `∂_ν ln p_T` by a central difference with common random numbers: both
/// legs reuse every shock, only `a(ν)` and `q(ν)` change.
pub fn fd_lnpt_sensitivity(spec: &ModelSpec, mkt: &MarketParams, t: f64, h: f64, cfg: &McConfig) -> Result<McEstimate> {
    cfg.check(t)?;
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive (got {h})")));
    }
    let up = derive_pricing_dynamics(spec, &mkt.with_nu(mkt.nu + h))?;
    let down = derive_pricing_dynamics(spec, &mkt.with_nu(mkt.nu - h))?;
    if spec.family == Family::BlackScholes {
        let (ru, rd) = (up.killing.rate(0.0), down.killing.rate(0.0));
        return Ok(McEstimate::exact(-(ru - rd) * t / (2.0 * h), cfg.seed, Measure::Pricing));
    }
    let n = cfg.n_steps(t);
    let dt = t / n as f64;
    let kind = SchemeKind::smooth_for(up.diffusion.shape);
    let steppers = crn_steppers(&[up.diffusion, down.diffusion], kind, dt)?;
    let pairs = run_crn(&steppers, mkt.xi, n, cfg.n_paths, cfg.rng(), cfg.exec, |b| {
        (
            (-integrated_killing(&up.killing, &b[0].states, dt)).exp(),
            (-integrated_killing(&down.killing, &b[1].states, dt)).exp(),
        )
    })?;
    Ok(log_ratio_fd(&pairs, h, cfg.seed, Measure::Pricing))
}

/// Which log-derivative a convergence table tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackedQuantity {
    /// `(1/T) ∂_ν ln p_T` against `-∂λ/∂ν`.
    LnP,
    /// `(1/T) ∂_ν ln u_T` against the asymptotic slope (Black–Scholes).
    LnU,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub t: f64,
    pub value: f64,
    pub target: f64,
    pub residual: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub family: Family,
    pub quantity: TrackedQuantity,
    pub dlambda_dnu: f64,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares `c` in `residual ≈ c/T`.
    pub fitted_c: f64,
    /// Set when the standard error exceeds the residual at the longest
    /// horizon, so the fit says more about noise than about `c`.
    pub noise_dominated: bool,
}

impl ConvergenceTable {
    /// Residuals non-increasing in `T` up to one combined standard error.
    pub fn residuals_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| {
            let slack = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
            w[1].residual <= w[0].residual + slack
        })
    }

    /// `max(residual·T) / min(residual·T)`.
    pub fn scaled_residual_band(&self) -> f64 {
        let scaled: Vec<f64> = self.rows.iter().map(|r| r.residual * r.t).collect();
        let hi = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
        hi / lo
    }
}

/// Tabulates `(1/T) ∂_ν ln p_T` against `-∂λ/∂ν` over `t_list` and fits the
/// `c/T` envelope.
pub fn convergence_study(spec: &ModelSpec, mkt: &MarketParams, t_list: &[f64], cfg: &McConfig) -> Result<ConvergenceTable> {
    if t_list.len() < 3 {
        return Err(Error::InvalidArgument("convergence study needs at least three horizons".into()));
    }
    if t_list.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("horizons must be strictly ascending".into()));
    }
    let dlambda = lambda_sensitivity(spec, mkt)?;
    let mut rows = Vec::with_capacity(t_list.len());
    let quantity = if spec.family == Family::BlackScholes {
        TrackedQuantity::LnU
    } else {
        TrackedQuantity::LnP
    };
    for &t in t_list {
        let row = match quantity {
            TrackedQuantity::LnU => {
                let bs = black_scholes_sensitivity(spec.mu, mkt, spec.sigma, t)?;
                let value = bs.dnu_ln_u / t;
                ConvergenceRow {
                    t,
                    value,
                    target: bs.slope,
                    residual: (value - bs.slope).abs(),
                    std_error: 0.0,
                }
            }
            TrackedQuantity::LnP => {
                let fd = fd_lnpt_sensitivity(spec, mkt, t, default_fd_step(mkt.nu), cfg)?;
                let value = fd.mean / t;
                ConvergenceRow {
                    t,
                    value,
                    target: -dlambda,
                    residual: (value + dlambda).abs(),
                    std_error: fd.std_error / t,
                }
            }
        };
        rows.push(row);
    }
    let num: f64 = rows.iter().map(|r| r.residual / r.t).sum();
    let den: f64 = rows.iter().map(|r| 1.0 / (r.t * r.t)).sum();
    let last = rows.last().unwrap();
    let noise_dominated = last.std_error > last.residual;
    Ok(ConvergenceTable {
        family: spec.family,
        quantity,
        dlambda_dnu: dlambda,
        fitted_c: num / den,
        noise_dominated,
        rows,
    })
}

/// `∂_ν` of the ℙ̂ drift at `x`, through `α(ν)` and, for OU, `δ(ν)`.
pub fn hat_drift_dnu(family: Family, d: &EigenDerivatives, x: f64) -> f64 {
    match family {
        Family::Ou => d.ddelta - d.dalpha * x,
        Family::Cir => -d.dalpha * x,
        Family::ThreeHalves | Family::QuadraticDrift => -d.dalpha * x * x,
        Family::BlackScholes => 0.0,
    }
}

/// `∂_ν H(x; ν)` for the remainder payoff `H = 1/φ`.
pub fn payoff_dnu(eig: &Eigenpair, d: &EigenDerivatives, x: f64) -> f64 {
    let h = eig.payoff(x);
    match eig.family {
        Family::Ou => h * (0.5 * x * x * d.deta + x * d.dell),
        Family::Cir | Family::QuadraticDrift => h * x * d.deta,
        Family::ThreeHalves => h * x.ln() * d.deta,
        Family::BlackScholes => 0.0,
    }
}

/// Three estimates of `∂_ν' E^{ℙ̂^ν'}[H(X_T; ν)]` at `ν' = ν`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub t: f64,
    pub finite_difference: McEstimate,
    pub likelihood_ratio: McEstimate,
    pub malliavin: McEstimate,
    /// Largest pairwise z-score.
    pub max_z: f64,
    /// All pairs within three combined standard errors.
    pub agree: bool,
}

/// Finite-difference, likelihood-ratio and Malliavin estimates of the
/// drift sensitivity of the remainder, from one set of shocks.
pub fn cross_validate_estimators(spec: &ModelSpec, mkt: &MarketParams, t: f64, cfg: &McConfig) -> Result<CrossValidation> {
    cfg.check(t)?;
    if spec.family == Family::BlackScholes {
        let zero = McEstimate::exact(0.0, cfg.seed, Measure::Eigen);
        return Ok(CrossValidation {
            t,
            finite_difference: zero,
            likelihood_ratio: zero,
            malliavin: zero,
            max_z: 0.0,
            agree: true,
        });
    }
    let h = default_fd_step(mkt.nu);
    let (_, eig, hat) = decompose_model(spec, mkt)?;
    let (_, _, up) = decompose_model(spec, &mkt.with_nu(mkt.nu + h))?;
    let (_, _, down) = decompose_model(spec, &mkt.with_nu(mkt.nu - h))?;
    let d = eigen_nu_derivatives(spec, mkt)?;
    let n = cfg.n_steps(t);
    let dt = t / n as f64;
    let kind = SchemeKind::smooth_for(hat.diffusion.shape);
    let steppers = crn_steppers(&[hat.diffusion, up.diffusion, down.diffusion], kind, dt)?;
    let family = spec.family;
    let kbar = |x: f64| hat_drift_dnu(family, &d, x);
    let rows = run_crn(&steppers, mkt.xi, n, cfg.n_paths, cfg.rng(), cfg.exec, |b| {
        let (s, inc) = (&b[0].states, &b[0].increments);
        let xt = b[0].terminal();
        let fd = (eig.payoff(b[1].terminal()) - eig.payoff(b[2].terminal())) / (2.0 * h);
        let lr = eig.payoff(xt) * likelihood_ratio_path(&hat.diffusion, s, inc, kbar);
        let mut y = Vec::with_capacity(s.len());
        ln_first_variation_path(&hat.diffusion, s, inc, dt, &mut y);
        let ml = malliavin_path(s, &y, dt, |x| eig.payoff_dx(x), kbar);
        (fd, lr, ml)
    })?;
    let underflow = rows.iter().filter(|r| r.2.is_none()).count();
    if underflow as f64 > crate::simulate::MAX_FLAGGED_FRACTION * cfg.n_paths as f64 {
        return Err(Error::FlaggedPaths {
            flagged: underflow,
            total: cfg.n_paths,
        });
    }
    let rows: Vec<(f64, f64, f64)> = rows.into_iter().filter_map(|(a, b, c)| c.map(|c| (a, b, c))).collect();
    let col = |k: usize| -> McEstimate {
        let v: Vec<f64> = rows.iter().map(|r| [r.0, r.1, r.2][k]).collect();
        McEstimate::from_samples(&v, cfg.seed, Measure::Eigen)
    };
    let (fd, lr, ml) = (col(0), col(1), col(2));
    let max_z = fd.z_score(&lr).max(fd.z_score(&ml)).max(lr.z_score(&ml));
    Ok(CrossValidation {
        t,
        finite_difference: fd,
        likelihood_ratio: lr,
        malliavin: ml,
        max_z,
        agree: max_z <= 3.0,
    })
}

/// Two-term split of `∂_ν f(T, ξ)`: the payoff's own ν-dependence under a
/// frozen measure plus the drift sensitivity of the measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemainderSplit {
    pub t: f64,
    pub remainder: McEstimate,
    /// Central difference of the full `f(T, ξ; ν)` with common random numbers.
    pub total_fd: McEstimate,
    /// `E^ℙ̂[∂_ν H(X_T; ν)]`.
    pub payoff_term: McEstimate,
    /// Malliavin estimate of `∂_ν' E^{ℙ̂^ν'}[H(X_T; ν)]`.
    pub drift_term: McEstimate,
    /// `payoff_term + drift_term`, per path.
    pub split_sum: McEstimate,
    /// `∂_ν ln f` from the split, delta-method standard error.
    pub log_derivative: McEstimate,
}

pub fn remainder_nu_split(spec: &ModelSpec, mkt: &MarketParams, t: f64, cfg: &McConfig) -> Result<RemainderSplit> {
    cfg.check(t)?;
    if spec.family == Family::BlackScholes {
        return Err(Error::Unsupported("Black–Scholes has a constant remainder".into()));
    }
    let h = default_fd_step(mkt.nu);
    let (_, eig, hat) = decompose_model(spec, mkt)?;
    let (_, eig_up, up) = decompose_model(spec, &mkt.with_nu(mkt.nu + h))?;
    let (_, eig_down, down) = decompose_model(spec, &mkt.with_nu(mkt.nu - h))?;
    let d = eigen_nu_derivatives(spec, mkt)?;
    let n = cfg.n_steps(t);
    let dt = t / n as f64;
    let kind = SchemeKind::smooth_for(hat.diffusion.shape);
    let steppers = crn_steppers(&[hat.diffusion, up.diffusion, down.diffusion], kind, dt)?;
    let family = spec.family;
    let rows = run_crn(&steppers, mkt.xi, n, cfg.n_paths, cfg.rng(), cfg.exec, |b| {
        let (s, inc) = (&b[0].states, &b[0].increments);
        let xt = b[0].terminal();
        let mut y = Vec::with_capacity(s.len());
        ln_first_variation_path(&hat.diffusion, s, inc, dt, &mut y);
        let drift = malliavin_path(s, &y, dt, |x| eig.payoff_dx(x), |x| hat_drift_dnu(family, &d, x));
        [
            eig.payoff(xt),
            (eig_up.payoff(b[1].terminal()) - eig_down.payoff(b[2].terminal())) / (2.0 * h),
            payoff_dnu(&eig, &d, xt),
            drift.unwrap_or(f64::NAN),
        ]
    })?;
    let rows: Vec<[f64; 4]> = rows.into_iter().filter(|r| r[3].is_finite()).collect();
    if (cfg.n_paths - rows.len()) as f64 > crate::simulate::MAX_FLAGGED_FRACTION * cfg.n_paths as f64 {
        return Err(Error::FlaggedPaths {
            flagged: cfg.n_paths - rows.len(),
            total: cfg.n_paths,
        });
    }
    let col = |f: &dyn Fn(&[f64; 4]) -> f64| -> McEstimate {
        let v: Vec<f64> = rows.iter().map(f).collect();
        McEstimate::from_samples(&v, cfg.seed, Measure::Eigen)
    };
    let remainder = col(&|r| r[0]);
    let split_sum = col(&|r| r[2] + r[3]);
    let (f, g) = (remainder.mean, split_sum.mean);
    let log_derivative = {
        let mut e = col(&|r| (r[2] + r[3]) / f - g * r[0] / (f * f));
        e.mean = g / f;
        e
    };
    Ok(RemainderSplit {
        t,
        remainder,
        total_fd: col(&|r| r[1]),
        payoff_term: col(&|r| r[2]),
        drift_term: col(&|r| r[3]),
        split_sum,
        log_derivative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> McConfig {
        McConfig {
            n_paths: 2_000,
            steps_per_unit_time: 20.0,
            seed: 5,
            exec: Execution::Sequential,
        }
    }

    fn mkt(nu: f64) -> MarketParams {
        MarketParams {
            r: 0.0,
            omega: 1.0,
            xi: 1.0,
            nu,
            rho_bar: -0.5,
            rho_sq: 0.25,
        }
    }

    #[test]
    fn zero_killing_gives_exact_one() {
        let spec = ModelSpec::new(Family::Ou, 0.16, 2.0, 0.8);
        let mut m = mkt(-2.0);
        m.nu = -0.0;
        let est = estimate_pt(&spec, &m, 2.0, &small()).unwrap();
        assert_eq!((est.mean, est.std_error), (1.0, 0.0));
        let (_, eig, hat) = decompose_model(&spec, &m).unwrap();
        let f = estimate_remainder(&eig, &hat, 1.0, 2.0, &small()).unwrap();
        assert_eq!((f.mean, f.std_error), (1.0, 0.0));
    }

    #[test]
    fn zero_noise_ou_matches_deterministic_quadrature() {
        let spec = ModelSpec::new(Family::Ou, 0.16, 2.0, 1e-12);
        let m = MarketParams {
            rho_bar: 0.0,
            ..mkt(-2.0)
        };
        let cfg = McConfig {
            steps_per_unit_time: 1000.0,
            ..small()
        };
        let est = estimate_pt(&spec, &m, 3.0, &cfg).unwrap();
        let d = derive_pricing_dynamics(&spec, &m).unwrap();
        let (a, b, x0) = (d.a, spec.b, m.xi);
        let x = |t: f64| x0 * (-a * t).exp() + b / a * (1.0 - (-a * t).exp());
        let n = 200_000;
        let h = 3.0 / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += w * x(i as f64 * h).powi(2);
        }
        let oracle = (-d.q * acc * h).exp();
        assert!((est.mean - oracle).abs() < 1e-6, "{} vs {oracle}", est.mean);
    }

    #[test]
    fn convergence_needs_three_ascending_horizons() {
        let spec = ModelSpec::new(Family::Ou, 0.16, 2.0, 0.8);
        assert!(convergence_study(&spec, &mkt(-2.0), &[1.0, 2.0], &small()).is_err());
        assert!(convergence_study(&spec, &mkt(-2.0), &[1.0, 3.0, 2.0], &small()).is_err());
    }

    #[test]
    fn black_scholes_table_is_exact() {
        let spec = ModelSpec::black_scholes(0.1, 0.2);
        let m = MarketParams {
            r: 0.02,
            omega: 1.0,
            ..mkt(-2.0)
        };
        let table = convergence_study(&spec, &m, &[2.0, 5.0, 10.0, 20.0], &small()).unwrap();
        for row in &table.rows {
            assert_eq!(row.std_error, 0.0);
            let expected = ((1.0f64).ln() - 1.0 / m.nu).abs() / row.t;
            assert!((row.residual - expected).abs() < 1e-12);
        }
        assert!((table.fitted_c - 0.5).abs() < 1e-10);
    }

    #[test]
    fn zero_excess_return_has_zero_sensitivity() {
        let bs = ModelSpec::black_scholes(0.02, 0.2);
        let m = MarketParams { r: 0.02, ..mkt(-2.0) };
        let fd = fd_lnpt_sensitivity(&bs, &m, 5.0, 1e-3, &small()).unwrap();
        assert_eq!(fd.mean, 0.0);
        assert_eq!(lambda_sensitivity(&bs, &m).unwrap(), 0.0);
    }

    #[test]
    fn cross_validation_without_perturbation() {
        let spec = ModelSpec::black_scholes(0.1, 0.2);
        let cv = cross_validate_estimators(&spec, &mkt(-2.0), 2.0, &small()).unwrap();
        assert!(cv.agree);
        assert_eq!(cv.finite_difference.mean, 0.0);
    }

    #[test]
    fn results_independent_of_execution() {
        let spec = ModelSpec::new(Family::Cir, 0.4, 2.0, 0.8);
        let seq = estimate_pt(&spec, &mkt(-2.0), 1.0, &small()).unwrap();
        let par = estimate_pt(&spec, &mkt(-2.0), 1.0, &McConfig { exec: Execution::Parallel, ..small() }).unwrap();
        assert_eq!(seq, par);
    }
}
