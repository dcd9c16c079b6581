#![allow(dead_code)]

use ltsens::estimate::McEstimate;
use ltsens::simulate::{run_crn, Execution, RngPolicy, SchemeKind, Stepper};
use ltsens::models::Diffusion;
use ltsens::{Family, MarketParams, ModelSpec};

pub fn fig1_market() -> MarketParams {
    MarketParams {
        r: 0.0,
        omega: 1.0,
        xi: 1.0,
        nu: -2.0,
        rho_bar: -0.5,
        rho_sq: 0.25,
    }
}

/// b=0.16, σ=0.8, k=2; CIR needs b > σ²/2 so it uses b=0.4.
pub fn fig1_spec(family: Family) -> ModelSpec {
    let b = if family == Family::Cir { 0.4 } else { 0.16 };
    ModelSpec::new(family, b, 2.0, 0.8)
}

/// Mean of `g(X_T)` over single-step samples of an exact scheme.
pub fn exact_terminal_mean<G: Fn(f64) -> f64 + Sync>(
    d: Diffusion,
    kind: SchemeKind,
    x0: f64,
    t: f64,
    n_paths: usize,
    seed: u64,
    g: G,
) -> McEstimate {
    let stepper = Stepper::new(d, kind, t).unwrap();
    let v = run_crn(&[stepper], x0, 1, n_paths, RngPolicy::new(seed), Execution::default(), |b| {
        g(b[0].terminal())
    })
    .unwrap();
    assert_eq!(v.len(), n_paths, "exact schemes never flag");
    McEstimate::from_samples(&v, seed, ltsens::simulate::Measure::Pricing)
}
