use ltsens::eigen::{
    asymptotic_utility_sensitivity, black_scholes_sensitivity, decompose_model, eigenpair, generator_residual,
    hs_assemble, lambda_sensitivity, remainder_closed_form, remainder_limit, Eigenpair,
};
use ltsens::estimate::{
    convergence_study, cross_validate_estimators, estimate_martingale, estimate_pt, estimate_remainder,
    remainder_nu_split, McConfig, McEstimate, TrackedQuantity,
};
use ltsens::models::{derive_pricing_dynamics, HatDynamics};
use ltsens::specialfn::{cir_mgf, kummer_1f1, log_gamma, three_half_moment, three_half_moment_limit, SeriesControl};
use ltsens::{Family, MarketParams, ModelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scenario::Scenario;
use crate::table::{Cell, Table};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Settings that are not part of a scenario.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Options {
    /// Added to λ after the eigenpair is computed; fault injection for
    /// `validate` and `decompose`.
    pub perturb_lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// A Hansen–Scheinkman identity failed by more than four standard errors.
    IdentityViolation,
    /// At least one invariant check failed.
    ValidationFailed,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::IdentityViolation => 2,
            Status::ValidationFailed => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub table: Table,
    pub status: Status,
    /// Human-readable summary lines for standard error.
    pub notes: Vec<String>,
}

fn decomposition(spec: &ModelSpec, mkt: &MarketParams, opts: &Options) -> Result<(Eigenpair, HatDynamics)> {
    let (_, mut eig, hat) = decompose_model(spec, mkt)?;
    eig.lambda += opts.perturb_lambda;
    Ok((eig, hat))
}

const HS_TOLERANCE: f64 = 4.0;

/// One row per horizon: eigenpair, closed-form and Monte Carlo remainder,
/// Monte Carlo `p_T` and the assembled `φ(ξ)e^{-λT}f`.
pub fn decompose(sc: &Scenario, opts: &Options) -> Result<Outcome> {
    let (spec, mkt) = sc.validated()?;
    let cfg = sc.mc_config()?;
    let horizons = sc.horizons_or(&[1.0, 5.0, 10.0])?;
    let (eig, hat) = decomposition(&spec, &mkt, opts)?;
    let limit_only = spec.family == Family::QuadraticDrift;
    let mut table = Table::new(&[
        "family", "t", "lambda", "eta", "ell", "alpha", "delta", "phi_xi", "f_closed", "f_kind", "f_mc", "f_mc_se",
        "p_mc", "p_mc_se", "p_assembled", "z_hs", "z_closed", "reason",
    ]);
    let mut status = Status::Ok;
    let mut worst: f64 = 0.0;
    for &t in &horizons {
        let (f_closed, kind) = if limit_only {
            (remainder_limit(&eig, &hat)?, "limit")
        } else {
            (remainder_closed_form(&eig, &hat, mkt.xi, t)?, "closed_form")
        };
        let f_mc = estimate_remainder(&eig, &hat, mkt.xi, t, &cfg)?;
        let p_mc = estimate_pt(&spec, &mkt, t, &cfg)?;
        let assembled = hs_assemble(&eig, mkt.xi, t, f_closed)?;
        let scale = (eig.ln_phi(mkt.xi) - eig.lambda * t).exp();
        let hs_mc = McEstimate {
            mean: scale * f_mc.mean,
            std_error: scale * f_mc.std_error,
            ..f_mc
        };
        let z_hs = p_mc.z_score(&hs_mc);
        let z_closed = (!limit_only).then(|| p_mc.z_against(assembled.p_t));
        let z_max = z_hs.max(z_closed.unwrap_or(0.0));
        worst = worst.max(z_max);
        if z_max > HS_TOLERANCE {
            status = Status::IdentityViolation;
        }
        let reason = if limit_only {
            "no finite-horizon closed form; f_closed is the invariant-measure limit"
        } else {
            ""
        };
        table.push(vec![
            Cell::text(spec.family.name()),
            Cell::num(t),
            Cell::num(eig.lambda),
            Cell::num(eig.eta),
            Cell::num(eig.ell),
            Cell::num(eig.alpha),
            Cell::num(eig.delta),
            Cell::num(assembled.phi_at_xi),
            Cell::num(f_closed),
            Cell::text(kind),
            Cell::num(f_mc.mean),
            Cell::num(f_mc.std_error),
            Cell::num(p_mc.mean),
            Cell::num(p_mc.std_error),
            Cell::num(assembled.p_t),
            Cell::num(z_hs),
            Cell::opt(z_closed),
            Cell::text(reason),
        ]);
    }
    let mut notes = vec![format!(
        "largest HS z-score {worst:.2} over {} horizon(s), {} paths",
        horizons.len(),
        cfg.n_paths
    )];
    if status != Status::Ok {
        notes.push(format!("HS identity violated beyond {HS_TOLERANCE} standard errors"));
    }
    Ok(Outcome { table, status, notes })
}

/// Convergence of `(1/T) ∂_ν ln p_T` to `-∂λ/∂ν` (for Black–Scholes, of
/// `(1/T) ∂_ν ln u_T` to its slope).
pub fn sensitivity(sc: &Scenario, _opts: &Options) -> Result<Outcome> {
    let (spec, mkt) = sc.validated()?;
    let cfg = sc.mc_config()?;
    let horizons = sc.horizons_or(&[2.0, 5.0, 10.0, 20.0])?;
    let conv = convergence_study(&spec, &mkt, &horizons, &cfg)?;
    let report = asymptotic_utility_sensitivity(&spec, &mkt)?;
    let quantity = match conv.quantity {
        TrackedQuantity::LnP => "ln_p",
        TrackedQuantity::LnU => "ln_u",
    };
    let mut table = Table::new(&[
        "family",
        "quantity",
        "t",
        "value",
        "target",
        "residual",
        "residual_t",
        "std_error",
        "dlambda_dnu",
        "asymptotic_slope",
        "fitted_c",
    ]);
    for row in &conv.rows {
        table.push(vec![
            Cell::text(spec.family.name()),
            Cell::text(quantity),
            Cell::num(row.t),
            Cell::num(row.value),
            Cell::num(row.target),
            Cell::num(row.residual),
            Cell::num(row.residual * row.t),
            Cell::num(row.std_error),
            Cell::num(report.dlambda_dnu),
            Cell::num(report.asymptotic_slope),
            Cell::num(conv.fitted_c),
        ]);
    }
    let notes = vec![
        format!("dλ/dν = {}, asymptotic slope of (1/T)∂ν ln u_T = {}", report.dlambda_dnu, report.asymptotic_slope),
        format!(
            "residuals decreasing: {}; residual·T max/min: {:.3}; fitted c = {:.6}{}",
            conv.residuals_decreasing(),
            conv.scaled_residual_band(),
            conv.fitted_c,
            if conv.noise_dominated {
                " (noise dominated at the longest horizon)"
            } else {
                ""
            }
        ),
    ];
    Ok(Outcome {
        table,
        status: Status::Ok,
        notes,
    })
}

/// `∂λ/∂ν` for the four state models, swept over ν at the scenario's `k`
/// and over `k` at the scenario's ν.
pub fn compare(sc: &Scenario, _opts: &Options) -> Result<Outcome> {
    let grids = &sc.compare;
    if grids.nu_grid.is_empty() || grids.k_grid.is_empty() {
        return Err(CliError::Input("compare needs non-empty nu_grid and k_grid".into()));
    }
    let base = sc.spec();
    let mkt = sc.market();
    let points = grids
        .nu_grid
        .iter()
        .map(|&nu| ("nu", nu, base.k))
        .chain(grids.k_grid.iter().map(|&k| ("k", mkt.nu, k)));
    let mut table = Table::new(&["sweep", "nu", "k", "ou", "cir", "three_halves", "quadratic_drift", "reason"]);
    let mut n_empty = 0;
    for (sweep, nu, k) in points {
        let mut row = vec![Cell::text(sweep), Cell::num(nu), Cell::num(k)];
        let mut reasons = Vec::new();
        for family in Family::STATE_MODELS {
            let spec = ModelSpec::new(family, base.b, k, base.sigma);
            match compare_point(&spec, &mkt.with_nu(nu)) {
                Ok(v) => row.push(Cell::Num(v)),
                Err(why) => {
                    n_empty += 1;
                    row.push(Cell::Empty);
                    reasons.push(format!("{}: {why}", family.name()));
                }
            }
        }
        row.push(Cell::text(reasons.join("; ")));
        table.push(row);
    }
    let notes = vec![format!(
        "{} grid points, {n_empty} empty cell(s)",
        grids.nu_grid.len() + grids.k_grid.len()
    )];
    Ok(Outcome {
        table,
        status: Status::Ok,
        notes,
    })
}

fn compare_point(spec: &ModelSpec, mkt: &MarketParams) -> std::result::Result<f64, String> {
    if !(mkt.nu < 0.0) {
        return Err(format!("ν < 0 violated (nu={})", mkt.nu));
    }
    if !(spec.k > 0.0) {
        return Err(format!("k > 0 violated (k={})", spec.k));
    }
    let v = lambda_sensitivity(spec, mkt).map_err(|e| e.to_string())?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err("non-finite value".into())
    }
}

struct Check {
    name: &'static str,
    passed: bool,
    value: f64,
    threshold: f64,
    detail: String,
}

impl Check {
    fn at_most(name: &'static str, value: f64, threshold: f64, detail: String) -> Self {
        Self {
            name,
            passed: value <= threshold,
            value,
            threshold,
            detail,
        }
    }

    fn failed(name: &'static str, err: CliError) -> Self {
        Self {
            name,
            passed: false,
            value: f64::NAN,
            threshold: f64::NAN,
            detail: format!("error: {err}"),
        }
    }
}

fn run_check(name: &'static str, f: impl FnOnce() -> Result<Check>) -> Check {
    f().unwrap_or_else(|e| Check::failed(name, e))
}

/// State grid for the generator residual: three standard deviations around
/// the OU invariant mean, `[0.1, 5]` on the positive half-line.
fn residual_grid(spec: &ModelSpec, eig: &Eigenpair) -> Vec<f64> {
    let (lo, hi) = match spec.family {
        Family::Ou => {
            let mean = eig.delta / eig.alpha;
            let sd = spec.sigma / (2.0 * eig.alpha).sqrt();
            (mean - 3.0 * sd, mean + 3.0 * sd)
        }
        _ => (0.1, 5.0),
    };
    (0..50).map(|i| lo + (hi - lo) * i as f64 / 49.0).collect()
}

/// Runs the invariant suite; exit status 3 when any check fails.
pub fn validate(sc: &Scenario, opts: &Options) -> Result<Outcome> {
    let (spec, mkt) = sc.validated()?;
    let cfg = sc.mc_config()?;
    let state_model = spec.family != Family::BlackScholes;
    let mut checks = Vec::new();

    if state_model {
        checks.push(run_check("generator_residual", || {
            let dynamics = derive_pricing_dynamics(&spec, &mkt)?;
            let (eig, _) = decomposition(&spec, &mkt, opts)?;
            let grid = residual_grid(&spec, &eig);
            let r = generator_residual(&dynamics, &eig, &grid);
            Ok(Check::at_most(
                "generator_residual",
                r,
                1e-10,
                format!("max relative residual on {} states in [{:.3}, {:.3}]", grid.len(), grid[0], grid[49]),
            ))
        }));
    }
    checks.push(run_check("lambda_sensitivity", || {
        let h = 1e-3 * mkt.nu.abs().max(1.0);
        let lambda = |nu: f64| -> Result<f64> {
            let d = derive_pricing_dynamics(&spec, &mkt.with_nu(nu))?;
            Ok(eigenpair(&d)?.lambda)
        };
        let cd = |h: f64| -> Result<f64> { Ok((lambda(mkt.nu + h)? - lambda(mkt.nu - h)?) / (2.0 * h)) };
        let fd = (4.0 * cd(h)? - cd(2.0 * h)?) / 3.0;
        let exact = lambda_sensitivity(&spec, &mkt)?;
        let rel = (fd - exact).abs() / exact.abs().max(1e-8);
        Ok(Check::at_most(
            "lambda_sensitivity",
            rel,
            1e-6,
            format!("closed form {exact} vs extrapolated central difference {fd}"),
        ))
    }));
    if !state_model {
        checks.push(run_check("black_scholes_derivative", || {
            let t = 10.0;
            let h = 1e-5;
            let ln_u = |nu: f64| -> Result<f64> {
                Ok(black_scholes_sensitivity(spec.mu, &mkt.with_nu(nu), spec.sigma, t)?.ln_u)
            };
            let fd = (ln_u(mkt.nu + h)? - ln_u(mkt.nu - h)?) / (2.0 * h);
            let exact = black_scholes_sensitivity(spec.mu, &mkt, spec.sigma, t)?.dnu_ln_u;
            Ok(Check::at_most(
                "black_scholes_derivative",
                ((fd - exact) / exact).abs(),
                1e-8,
                format!("analytic {exact} vs central difference {fd} at T={t}"),
            ))
        }));
    }
    if state_model {
        checks.push(run_check("martingale", || {
            let m = estimate_martingale(&spec, &mkt, 5.0, &cfg)?;
            Ok(Check::at_most(
                "martingale",
                m.z_against(1.0),
                3.0,
                format!("E[M_T] = {} ± {} at T=5", m.mean, m.std_error),
            ))
        }));
        checks.push(run_check("hs_identity", || hs_check(&spec, &mkt, &cfg, opts)));
        checks.push(run_check("estimator_agreement", || {
            let cv = cross_validate_estimators(&spec, &mkt, 2.0, &cfg)?;
            Ok(Check::at_most(
                "estimator_agreement",
                cv.max_z,
                3.0,
                format!(
                    "finite difference {} ± {}, likelihood ratio {} ± {}, Malliavin {} ± {} at T=2",
                    cv.finite_difference.mean,
                    cv.finite_difference.std_error,
                    cv.likelihood_ratio.mean,
                    cv.likelihood_ratio.std_error,
                    cv.malliavin.mean,
                    cv.malliavin.std_error
                ),
            ))
        }));
        checks.push(run_check("remainder_split", || {
            let s = remainder_nu_split(&spec, &mkt, 5.0, &cfg)?;
            Ok(Check::at_most(
                "remainder_split",
                s.total_fd.z_score(&s.split_sum),
                3.0,
                format!(
                    "∂ν f: finite difference {} ± {}, payoff + drift terms {} ± {} at T=5",
                    s.total_fd.mean, s.total_fd.std_error, s.split_sum.mean, s.split_sum.std_error
                ),
            ))
        }));
    }
    checks.push(run_check("kummer_contiguous", || kummer_check(cfg.seed)));
    checks.push(run_check("log_gamma_recurrence", || {
        let mut worst: f64 = 0.0;
        for x in [0.3, 1.7, 9.2, 23.5] {
            worst = worst.max((log_gamma(x + 1.0)? - log_gamma(x)? - f64::ln(x)).abs());
        }
        Ok(Check::at_most("log_gamma_recurrence", worst, 1e-12, "ln Γ(x+1) - ln Γ(x) - ln x".into()))
    }));
    checks.push(run_check("cir_mgf_mean", || {
        let (t, b, alpha, sigma, x) = (2.0, 0.6, 1.0, 1.0, 1.0);
        let h = 1e-6;
        let fd = (cir_mgf(h, t, b, alpha, sigma, x)? - cir_mgf(-h, t, b, alpha, sigma, x)?) / (2.0 * h);
        let decay = f64::exp(-alpha * t);
        let mean = x * decay + b / alpha * (1.0 - decay);
        Ok(Check::at_most(
            "cir_mgf_mean",
            ((fd - mean) / mean).abs(),
            1e-6,
            format!("d/dγ at 0 = {fd}, CIR mean {mean}"),
        ))
    }));
    checks.push(run_check("three_half_limit", || {
        let (a, b, alpha, sigma) = (0.5, 1.0, 1.9, 0.8);
        let at = three_half_moment(a, 60.0, b, alpha, sigma, 1.0)?;
        let limit = three_half_moment_limit(a, b, alpha, sigma)?;
        Ok(Check::at_most(
            "three_half_limit",
            ((at - limit) / limit).abs(),
            1e-8,
            format!("E[X_60^0.5] = {at}, limit {limit}"),
        ))
    }));

    let mut table = Table::new(&["check", "passed", "value", "threshold", "detail"]);
    let mut failed = Vec::new();
    for c in &checks {
        if !c.passed {
            failed.push(c.name);
        }
        table.push(vec![
            Cell::text(c.name),
            Cell::Bool(c.passed),
            Cell::num(c.value),
            Cell::num(c.threshold),
            Cell::text(c.detail.clone()),
        ]);
    }
    let status = if failed.is_empty() {
        Status::Ok
    } else {
        Status::ValidationFailed
    };
    let notes = vec![if failed.is_empty() {
        format!("all {} checks passed", checks.len())
    } else {
        format!("{} of {} checks failed: {}", failed.len(), checks.len(), failed.join(", "))
    }];
    Ok(Outcome { table, status, notes })
}

fn hs_check(spec: &ModelSpec, mkt: &MarketParams, cfg: &McConfig, opts: &Options) -> Result<Check> {
    let t = 5.0;
    let (eig, hat) = decomposition(spec, mkt, opts)?;
    let p = estimate_pt(spec, mkt, t, cfg)?;
    let scale = (eig.ln_phi(mkt.xi) - eig.lambda * t).exp();
    let (target, how) = if spec.family == Family::QuadraticDrift {
        let f = estimate_remainder(&eig, &hat, mkt.xi, t, cfg)?;
        let e = McEstimate {
            mean: scale * f.mean,
            std_error: scale * f.std_error,
            ..f
        };
        (e, "Monte Carlo remainder")
    } else {
        let f = remainder_closed_form(&eig, &hat, mkt.xi, t)?;
        (McEstimate::exact(scale * f, cfg.seed, p.measure), "closed-form remainder")
    };
    Ok(Check::at_most(
        "hs_identity",
        p.z_score(&target),
        3.0,
        format!("p_T = {} ± {} vs φ(ξ)e^(-λT)f = {} ({how}) at T={t}", p.mean, p.std_error, target.mean),
    ))
}

fn kummer_check(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ctl = SeriesControl::default();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a: f64 = rng.random_range(-3.0..3.0);
        let b: f64 = rng.random_range(0.2..6.0);
        let z: f64 = rng.random_range(-6.0..6.0);
        let terms = [
            (b - a) * kummer_1f1(a - 1.0, b, z, ctl)?,
            (2.0 * a - b + z) * kummer_1f1(a, b, z, ctl)?,
            -a * kummer_1f1(a + 1.0, b, z, ctl)?,
        ];
        let scale = terms.iter().map(|t| t.abs()).fold(1.0, f64::max);
        worst = worst.max((terms[0] + terms[1] + terms[2]).abs() / scale);
    }
    Ok(Check::at_most(
        "kummer_contiguous",
        worst,
        1e-9,
        "contiguous relation on 100 random (a, b, z)".into(),
    ))
}
