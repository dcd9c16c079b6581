//! Path simulation under ℙ and ℙ̂, first-variation processes and the
//! pathwise weights behind the likelihood-ratio and Malliavin estimators.
//!
//! Each path draws from its own ChaCha8 stream, `(seed, path_index)`, so a
//! path is identical whatever thread generated it. Schemes are split into a
//! shock draw and a deterministic update, which lets several parameter sets
//! share the same shocks (common random numbers).

use std::io::{self, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::eigen::Eigenpair;
use crate::error::{Error, Result};
use crate::estimate::McEstimate;
use crate::models::{Diffusion, DiffusionShape, Killing};
use crate::stats::trapezoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// Pricing measure ℙ.
    Pricing,
    /// Eigen-measure ℙ̂.
    Eigen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    /// Exact Gaussian transition (OU).
    ExactGaussian,
    /// Exact noncentral-χ² transition (CIR).
    ExactCir,
    /// 3/2 process as the reciprocal of an exactly sampled CIR.
    ReciprocalCir,
    /// 3/2 process as the reciprocal of a CIR advanced by a drift-implicit
    /// scheme on its square root. Driven by Gaussian shocks only, so it stays
    /// smooth in the parameters under common random numbers.
    ReciprocalImplicit,
    /// Euler scheme on `ln X` (quadratic drift).
    LogEuler,
    /// No dynamics (Black–Scholes).
    Frozen,
}

impl SchemeKind {
    /// Default scheme for a diffusion shape.
    pub fn default_for(shape: DiffusionShape) -> Self {
        match shape {
            DiffusionShape::Gaussian => SchemeKind::ExactGaussian,
            DiffusionShape::SquareRoot => SchemeKind::ExactCir,
            DiffusionShape::ThreeHalves => SchemeKind::ReciprocalCir,
            DiffusionShape::QuadraticDrift => SchemeKind::LogEuler,
            DiffusionShape::Frozen => SchemeKind::Frozen,
        }
    }

    /// Scheme whose shocks do not depend on parameters other than through a
    /// smooth update, for finite differences with common random numbers.
    pub fn smooth_for(shape: DiffusionShape) -> Self {
        match shape {
            DiffusionShape::ThreeHalves => SchemeKind::ReciprocalImplicit,
            other => Self::default_for(other),
        }
    }

    pub fn supports(self, shape: DiffusionShape) -> bool {
        matches!(
            (self, shape),
            (SchemeKind::ExactGaussian, DiffusionShape::Gaussian)
                | (SchemeKind::ExactCir, DiffusionShape::SquareRoot)
                | (SchemeKind::ReciprocalCir, DiffusionShape::ThreeHalves)
                | (SchemeKind::ReciprocalImplicit, DiffusionShape::ThreeHalves)
                | (SchemeKind::LogEuler, DiffusionShape::QuadraticDrift)
                | (SchemeKind::Frozen, DiffusionShape::Frozen)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimScheme {
    pub kind: SchemeKind,
    pub n_steps: usize,
    pub horizon: f64,
}

impl SimScheme {
    pub fn new(kind: SchemeKind, n_steps: usize, horizon: f64) -> Result<Self> {
        if n_steps < 1 {
            return Err(Error::InvalidArgument("n_steps must be >= 1".into()));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive and finite (got {horizon})"
            )));
        }
        Ok(Self {
            kind,
            n_steps,
            horizon,
        })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..=self.n_steps).map(|i| i as f64 * dt).collect()
    }
}

/// Per-path stream derivation: the master seed selects the key, the path
/// index selects the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngPolicy {
    pub seed: u64,
}

impl RngPolicy {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn path_rng(&self, path_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path_index);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    /// Rayon work-stealing over paths; sequential when the `parallel`
    /// feature is off.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Runs `f` once per path with the path's RNG and a per-worker scratch value,
/// returning results in path order.
pub fn map_paths<S, T, I, F>(n_paths: usize, rng: RngPolicy, exec: Execution, init: I, f: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, &mut ChaCha8Rng, usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n_paths)
                .into_par_iter()
                .map_init(&init, |scratch, i| {
                    let mut r = rng.path_rng(i as u64);
                    f(scratch, &mut r, i)
                })
                .collect()
        }
        _ => {
            let mut scratch = init();
            (0..n_paths)
                .map(|i| {
                    let mut r = rng.path_rng(i as u64);
                    f(&mut scratch, &mut r, i)
                })
                .collect()
        }
    }
}

/// Random inputs of one time step.
#[derive(Debug, Clone, Copy, Default)]
pub struct Shock {
    pub z: f64,
    pub g: f64,
}

#[derive(Debug, Clone, Copy)]
enum Kernel {
    Gaussian {
        decay: f64,
        drift_add: f64,
        sd: f64,
    },
    /// CIR on `v`, with `x = v` or `x = 1/v`.
    Cir {
        decay: f64,
        c: f64,
        level: f64,
        speed: f64,
        sigma: f64,
        reciprocal: bool,
    },
    Implicit {
        half_sigma_sqrt_dt: f64,
        sqrt_dt: f64,
        denom: f64,
        constant: f64,
    },
    LogEuler {
        level: f64,
        speed: f64,
        half_s2: f64,
        sigma_sqrt_dt: f64,
        sqrt_dt: f64,
        dt: f64,
    },
    Frozen,
}

/// One-step transition of a diffusion under a scheme.
#[derive(Debug, Clone, Copy)]
pub struct Stepper {
    diffusion: Diffusion,
    dt: f64,
    kernel: Kernel,
    gamma: Option<Gamma<f64>>,
    gamma_shape: f64,
}

/// `(1 - e^{-kΔ})/k`, continuous at `k = 0`.
fn decay_integral(k: f64, dt: f64) -> f64 {
    if k == 0.0 {
        dt
    } else {
        -(-k * dt).exp_m1() / k
    }
}

impl Stepper {
    pub fn new(diffusion: Diffusion, kind: SchemeKind, dt: f64) -> Result<Self> {
        if !kind.supports(diffusion.shape) {
            return Err(Error::InvalidArgument(format!(
                "scheme {kind:?} cannot simulate a {:?} diffusion",
                diffusion.shape
            )));
        }
        let (l, k, s) = (diffusion.level, diffusion.speed, diffusion.sigma);
        let s2 = s * s;
        let cir = |level: f64, speed: f64, reciprocal: bool| -> Result<(Kernel, f64)> {
            let c = s2 * decay_integral(speed, dt) / 4.0;
            let dim = 4.0 * level / s2;
            if !(dim > 1.0) {
                return Err(Error::Domain(format!(
                    "exact CIR sampling needs 4·level/σ² > 1 (got {dim})"
                )));
            }
            Ok((
                Kernel::Cir {
                    decay: (-speed * dt).exp(),
                    c,
                    level,
                    speed,
                    sigma: s,
                    reciprocal,
                },
                0.5 * (dim - 1.0),
            ))
        };
        let (kernel, gamma_shape) = match kind {
            SchemeKind::ExactGaussian => (
                Kernel::Gaussian {
                    decay: (-k * dt).exp(),
                    drift_add: l * decay_integral(k, dt),
                    sd: (s2 * decay_integral(2.0 * k, dt)).sqrt(),
                },
                0.0,
            ),
            SchemeKind::ExactCir => cir(l, k, false)?,
            // V = 1/X solves dV = ((k + σ²) - l V) dt - σ√V dB.
            SchemeKind::ReciprocalCir => cir(k + s2, l, true)?,
            SchemeKind::ReciprocalImplicit => {
                let (lv, kv) = (k + s2, l);
                if !(lv > s2 / 4.0) {
                    return Err(Error::Domain(format!(
                        "implicit reciprocal scheme needs k + σ² > σ²/4 (got {lv})"
                    )));
                }
                let denom = 1.0 + 0.5 * kv * dt;
                (
                    Kernel::Implicit {
                        half_sigma_sqrt_dt: 0.5 * s * dt.sqrt(),
                        sqrt_dt: dt.sqrt(),
                        denom,
                        constant: 2.0 * denom * (lv - 0.25 * s2) * dt,
                    },
                    0.0,
                )
            }
            SchemeKind::LogEuler => (
                Kernel::LogEuler {
                    level: l,
                    speed: k,
                    half_s2: 0.5 * s2,
                    sigma_sqrt_dt: s * dt.sqrt(),
                    sqrt_dt: dt.sqrt(),
                    dt,
                },
                0.0,
            ),
            SchemeKind::Frozen => (Kernel::Frozen, 0.0),
        };
        let gamma = if gamma_shape > 0.0 {
            Some(Gamma::new(gamma_shape, 1.0).map_err(|e| Error::Domain(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            diffusion,
            dt,
            kernel,
            gamma,
            gamma_shape,
        })
    }

    pub fn diffusion(&self) -> &Diffusion {
        &self.diffusion
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Whether two steppers consume identically distributed shocks.
    pub fn shares_shocks_with(&self, other: &Stepper) -> bool {
        self.gamma_shape == other.gamma_shape && self.dt == other.dt
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Shock {
        let z: f64 = StandardNormal.sample(rng);
        let g = match &self.gamma {
            Some(d) => d.sample(rng),
            None => 0.0,
        };
        Shock { z, g }
    }

    /// Advances `x` by one step; returns the new state and the Brownian
    /// increment driving `X` over the step.
    ///
    /// Exact schemes do not expose the Brownian path; their increment is the
    /// standardised innovation `(X' - E[X'|X]) / σ(X)` (for the reciprocal
    /// CIR, of `V = 1/X` with the sign flipped), which has conditional mean
    /// zero and variance `Δ + O(Δ²)`.
    pub fn advance(&self, x: f64, shock: Shock) -> (f64, f64) {
        match self.kernel {
            Kernel::Gaussian {
                decay,
                drift_add,
                sd,
            } => {
                let mean = x * decay + drift_add;
                let next = mean + sd * shock.z;
                (next, (next - mean) / self.diffusion.sigma)
            }
            Kernel::Cir {
                decay,
                c,
                level,
                speed,
                sigma,
                reciprocal,
            } => {
                let v = if reciprocal { 1.0 / x } else { x };
                let nc = v * decay / c;
                let root = shock.z + nc.sqrt();
                let v_next = c * (root * root + 2.0 * shock.g);
                let mean = v * decay + level * decay_integral(speed, self.dt);
                let db = (v_next - mean) / (sigma * v.sqrt());
                if reciprocal {
                    (1.0 / v_next, -db)
                } else {
                    (v_next, db)
                }
            }
            Kernel::Implicit {
                half_sigma_sqrt_dt,
                sqrt_dt,
                denom,
                constant,
            } => {
                let zr = (1.0 / x).sqrt();
                let c = zr - half_sigma_sqrt_dt * shock.z;
                let zn = (c + (c * c + constant).sqrt()) / (2.0 * denom);
                (1.0 / (zn * zn), sqrt_dt * shock.z)
            }
            Kernel::LogEuler {
                level,
                speed,
                half_s2,
                sigma_sqrt_dt,
                sqrt_dt,
                dt,
            } => {
                let y = x.ln();
                let drift = level / x - speed * x - half_s2;
                ((y + drift * dt + sigma_sqrt_dt * shock.z).exp(), sqrt_dt * shock.z)
            }
            Kernel::Frozen => (x, 0.0),
        }
    }
}

/// States and increments of one simulated path.
#[derive(Debug, Clone, Default)]
pub struct PathBuf {
    pub states: Vec<f64>,
    pub increments: Vec<f64>,
    pub flagged: bool,
}

impl PathBuf {
    pub fn terminal(&self) -> f64 {
        *self.states.last().expect("empty path")
    }
}

/// Simulates one path for each stepper, all driven by the same shocks.
pub fn simulate_crn<R: Rng + ?Sized>(
    steppers: &[Stepper],
    x0: f64,
    n_steps: usize,
    rng: &mut R,
    bufs: &mut [PathBuf],
) {
    debug_assert_eq!(steppers.len(), bufs.len());
    for buf in bufs.iter_mut() {
        buf.states.clear();
        buf.increments.clear();
        buf.states.push(x0);
        buf.flagged = false;
    }
    let positive = steppers
        .first()
        .map(|s| s.diffusion.positive_state())
        .unwrap_or(false);
    for _ in 0..n_steps {
        let shock = steppers[0].draw(rng);
        for (stepper, buf) in steppers.iter().zip(bufs.iter_mut()) {
            let x = *buf.states.last().unwrap();
            let (next, db) = if buf.flagged {
                (x, 0.0)
            } else {
                stepper.advance(x, shock)
            };
            if !next.is_finite() || (positive && !(next > 0.0)) {
                buf.flagged = true;
                buf.states.push(x);
                buf.increments.push(0.0);
            } else {
                buf.states.push(next);
                buf.increments.push(db);
            }
        }
    }
}

/// Builds CRN-compatible steppers; errors if their shocks differ in law.
pub fn crn_steppers(diffusions: &[Diffusion], kind: SchemeKind, dt: f64) -> Result<Vec<Stepper>> {
    let steppers = diffusions
        .iter()
        .map(|d| Stepper::new(*d, kind, dt))
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = steppers.first() {
        if steppers.iter().any(|s| !s.shares_shocks_with(first)) {
            return Err(Error::Unsupported(format!(
                "scheme {kind:?} draws parameter-dependent shocks; common random numbers need a smooth scheme"
            )));
        }
    }
    Ok(steppers)
}

/// Largest tolerated fraction of flagged paths.
pub const MAX_FLAGGED_FRACTION: f64 = 1e-3;

/// Runs `f` on every path of a CRN family and drops flagged paths. Errors
/// when more than 0.1% of the paths were flagged.
pub fn run_crn<T, F>(
    steppers: &[Stepper],
    x0: f64,
    n_steps: usize,
    n_paths: usize,
    rng: RngPolicy,
    exec: Execution,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&[PathBuf]) -> T + Sync + Send,
{
    let out = map_paths(
        n_paths,
        rng,
        exec,
        || vec![PathBuf::default(); steppers.len()],
        |bufs, r, _| {
            simulate_crn(steppers, x0, n_steps, r, bufs);
            if bufs.iter().any(|b| b.flagged) {
                None
            } else {
                Some(f(bufs))
            }
        },
    );
    let flagged = out.iter().filter(|o| o.is_none()).count();
    check_flagged(flagged, n_paths)?;
    Ok(out.into_iter().flatten().collect())
}

fn check_flagged(flagged: usize, total: usize) -> Result<()> {
    if flagged as f64 > MAX_FLAGGED_FRACTION * total as f64 {
        Err(Error::FlaggedPaths { flagged, total })
    } else {
        Ok(())
    }
}

/// A materialised set of paths. Flagged paths are dropped at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub measure: Measure,
    pub seed: u64,
    pub diffusion: Diffusion,
    pub times: Vec<f64>,
    /// Row-major `n_paths × (n_steps + 1)`.
    pub states: Vec<f64>,
    /// Row-major `n_paths × n_steps`.
    pub increments: Vec<f64>,
    /// `∫₀ᵀ q(X_s) ds` per path, trapezoid rule; zero without killing.
    pub integrated_killing: Vec<f64>,
    /// Row-major `n_paths × (n_steps + 1)` when filled.
    pub first_variation: Option<Vec<f64>>,
    pub n_flagged: usize,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.integrated_killing.len()
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let w = self.n_steps() + 1;
        &self.states[i * w..(i + 1) * w]
    }

    pub fn path_increments(&self, i: usize) -> &[f64] {
        let w = self.n_steps();
        &self.increments[i * w..(i + 1) * w]
    }

    pub fn path_first_variation(&self, i: usize) -> Option<&[f64]> {
        let w = self.n_steps() + 1;
        self.first_variation.as_ref().map(|y| &y[i * w..(i + 1) * w])
    }

    pub fn terminal(&self, i: usize) -> f64 {
        *self.path(i).last().unwrap()
    }

    /// Writes a debugging dump: `b"LTSE"`, version `u32`, seed `u64`,
    /// `n_paths u64`, `n_steps u64`, `dt f64`, then the row-major state
    /// array, all little-endian. The layout is not a stable format.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(b"LTSE")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.n_paths() as u64).to_le_bytes())?;
        w.write_all(&(self.n_steps() as u64).to_le_bytes())?;
        w.write_all(&self.dt().to_le_bytes())?;
        for v in &self.states {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Simulates and stores `n_paths` paths. Memory grows as
/// `n_paths × n_steps`; large runs should use [`run_crn`] instead.
pub fn sample_paths(
    diffusion: &Diffusion,
    killing: Option<&Killing>,
    measure: Measure,
    scheme: &SimScheme,
    x0: f64,
    n_paths: usize,
    rng: RngPolicy,
    exec: Execution,
) -> Result<PathEnsemble> {
    let stepper = Stepper::new(*diffusion, scheme.kind, scheme.dt())?;
    let dt = scheme.dt();
    let n = scheme.n_steps;
    let rows = map_paths(
        n_paths,
        rng,
        exec,
        || vec![PathBuf::default()],
        |bufs, r, _| {
            simulate_crn(std::slice::from_ref(&stepper), x0, n, r, bufs);
            let b = &bufs[0];
            if b.flagged {
                None
            } else {
                let killed = killing.map_or(0.0, |k| integrated_killing(k, &b.states, dt));
                Some((b.states.clone(), b.increments.clone(), killed))
            }
        },
    );
    let n_flagged = rows.iter().filter(|r| r.is_none()).count();
    check_flagged(n_flagged, n_paths)?;
    let kept: Vec<_> = rows.into_iter().flatten().collect();
    let mut states = Vec::with_capacity(kept.len() * (n + 1));
    let mut increments = Vec::with_capacity(kept.len() * n);
    let mut integrated = Vec::with_capacity(kept.len());
    for (s, inc, k) in kept {
        states.extend_from_slice(&s);
        increments.extend_from_slice(&inc);
        integrated.push(k);
    }
    Ok(PathEnsemble {
        measure,
        seed: rng.seed,
        diffusion: *diffusion,
        times: scheme.times(),
        states,
        increments,
        integrated_killing: integrated,
        first_variation: None,
        n_flagged,
    })
}

/// Trapezoid `∫ q(X_s) ds` along a path.
pub fn integrated_killing(killing: &Killing, states: &[f64], dt: f64) -> f64 {
    match states.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = states[1..n - 1].iter().map(|&x| killing.rate(x)).sum();
            dt * (inner + 0.5 * (killing.rate(states[0]) + killing.rate(states[n - 1])))
        }
    }
}

/// Fills `y` with the first-variation process `Y_t = ∂X_t/∂X_0` along a path.
pub fn first_variation_path(diffusion: &Diffusion, states: &[f64], increments: &[f64], dt: f64, y: &mut Vec<f64>) {
    ln_first_variation_path(diffusion, states, increments, dt, y);
    for v in y.iter_mut() {
        *v = v.exp();
    }
}

/// Fills `ln_y` with `ln Y_t`.
///
/// OU, CIR and 3/2 use pathwise identities that avoid the stochastic
/// integral:
///
/// * OU: `Y_t = e^{-κt}`
/// * CIR: `Y_t = √(X_t/X_0) exp(∫₀ᵗ (-κ/2 - (L/2 - σ²/8)/X_s) ds)`
/// * 3/2: `Y_t = (X_t/X_0)^{3/2} exp(-Lt/2 - (κ/2 + 3σ²/8) ∫₀ᵗ X_s ds)`
///
/// The quadratic-drift model uses the generic exponential formula.
pub fn ln_first_variation_path(diffusion: &Diffusion, states: &[f64], increments: &[f64], dt: f64, ln_y: &mut Vec<f64>) {
    let (l, k, s) = (diffusion.level, diffusion.speed, diffusion.sigma);
    let s2 = s * s;
    ln_y.clear();
    let x0 = states[0];
    match diffusion.shape {
        DiffusionShape::Gaussian => {
            ln_y.extend((0..states.len()).map(|i| -k * dt * i as f64));
        }
        DiffusionShape::SquareRoot => {
            let c = 0.5 * l - s2 / 8.0;
            let mut integral = 0.0;
            ln_y.push(0.0);
            for i in 1..states.len() {
                integral += 0.5 * dt * (1.0 / states[i - 1] + 1.0 / states[i]);
                let t = i as f64 * dt;
                ln_y.push(0.5 * (states[i] / x0).ln() - 0.5 * k * t - c * integral);
            }
        }
        DiffusionShape::ThreeHalves => {
            let c = 0.5 * k + 0.375 * s2;
            let mut integral = 0.0;
            ln_y.push(0.0);
            for i in 1..states.len() {
                integral += 0.5 * dt * (states[i - 1] + states[i]);
                let t = i as f64 * dt;
                ln_y.push(1.5 * (states[i] / x0).ln() - 0.5 * l * t - c * integral);
            }
        }
        DiffusionShape::QuadraticDrift | DiffusionShape::Frozen => {
            generic_ln_first_variation_path(diffusion, states, increments, dt, ln_y)
        }
    }
}

/// `ln Y_t = ∫₀ᵗ (b' - ½σ'²)(X_s) ds + ∫₀ᵗ σ'(X_s) dB_s`: trapezoid for
/// `ds`, left point for `dB`.
pub fn generic_ln_first_variation_path(
    diffusion: &Diffusion,
    states: &[f64],
    increments: &[f64],
    dt: f64,
    ln_y: &mut Vec<f64>,
) {
    let g = |x: f64| {
        let sd = diffusion.vol_dx(x);
        diffusion.drift_dx(x) - 0.5 * sd * sd
    };
    ln_y.clear();
    ln_y.push(0.0);
    let mut exponent = 0.0;
    for i in 1..states.len() {
        exponent += 0.5 * dt * (g(states[i - 1]) + g(states[i]))
            + diffusion.vol_dx(states[i - 1]) * increments[i - 1];
        ln_y.push(exponent);
    }
}

/// `Y_T / Y_t` for the quadratic-drift model in the explicit form
/// `exp(-2κ∫ₜᵀX_s ds - ½σ²(T-t) + σ(B_T - B_t))`, on the same grid.
pub fn quadratic_drift_variation_ratio(diffusion: &Diffusion, states: &[f64], increments: &[f64], dt: f64, from: usize) -> f64 {
    let n = states.len() - 1;
    let integral = trapezoid(&states[from..], dt);
    let db: f64 = increments[from..].iter().sum();
    let s = diffusion.sigma;
    (-2.0 * diffusion.speed * integral - 0.5 * s * s * (n - from) as f64 * dt + s * db).exp()
}

/// Left-point Itô sum `Σ (b̄/σ)(X_i) ΔB_i` along a path.
pub fn likelihood_ratio_path<F: Fn(f64) -> f64>(diffusion: &Diffusion, states: &[f64], increments: &[f64], bbar: F) -> f64 {
    increments
        .iter()
        .zip(states)
        .map(|(db, &x)| bbar(x) / diffusion.vol(x) * db)
        .sum()
}

/// `H'(X_T) Y_T ∫₀ᵀ κ̄(X_s)/Y_s ds` along a path, from `ln Y`.
///
/// Only the ratios `Y_T/Y_s` are formed, so paths on which `Y` itself would
/// underflow still contribute; `None` when `ln Y` is not finite.
pub fn malliavin_path<H: Fn(f64) -> f64, K: Fn(f64) -> f64>(
    states: &[f64],
    ln_y: &[f64],
    dt: f64,
    h_dx: H,
    kbar: K,
) -> Option<f64> {
    if ln_y.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let n = states.len();
    let last = ln_y[n - 1];
    let g = |i: usize| kbar(states[i]) * (last - ln_y[i]).exp();
    let inner: f64 = (1..n - 1).map(g).sum();
    let integral = dt * (inner + 0.5 * (g(0) + g(n - 1)));
    Some(h_dx(states[n - 1]) * integral)
}

impl PathEnsemble {
    /// Computes and stores the first-variation paths.
    pub fn fill_first_variation(&mut self) {
        let w = self.n_steps() + 1;
        let dt = self.dt();
        let mut all = Vec::with_capacity(self.states.len());
        let mut y = Vec::with_capacity(w);
        for i in 0..self.n_paths() {
            first_variation_path(&self.diffusion, self.path(i), self.path_increments(i), dt, &mut y);
            all.extend_from_slice(&y);
        }
        self.first_variation = Some(all);
    }

    /// Per-path likelihood-ratio weights for the drift perturbation `b̄`.
    pub fn likelihood_ratio_weights<F: Fn(f64) -> f64>(&self, bbar: F) -> Vec<f64> {
        (0..self.n_paths())
            .map(|i| likelihood_ratio_path(&self.diffusion, self.path(i), self.path_increments(i), &bbar))
            .collect()
    }

    /// Per-path Malliavin weights; paths whose stored `Y` underflowed are
    /// `None`.
    pub fn malliavin_weights<H: Fn(f64) -> f64, K: Fn(f64) -> f64>(&self, h_dx: H, kbar: K) -> Result<Vec<Option<f64>>> {
        if self.first_variation.is_none() {
            return Err(Error::InvalidArgument("first variation not filled".into()));
        }
        let dt = self.dt();
        Ok((0..self.n_paths())
            .map(|i| {
                let ln_y: Vec<f64> = self.path_first_variation(i).unwrap().iter().map(|v| v.ln()).collect();
                malliavin_path(self.path(i), &ln_y, dt, &h_dx, &kbar)
            })
            .collect())
    }
}

/// Monte Carlo mean of `M_T^φ = (φ(X_T)/φ(ξ)) e^{λT - ∫₀ᵀ q(X_s) ds}` over
/// an ensemble simulated under ℙ; the expected value is one.
pub fn martingale_check(eig: &Eigenpair, ensemble: &PathEnsemble) -> Result<McEstimate> {
    if ensemble.measure != Measure::Pricing {
        return Err(Error::InvalidArgument("martingale check needs paths under the pricing measure".into()));
    }
    let t = *ensemble.times.last().unwrap();
    let samples: Vec<f64> = (0..ensemble.n_paths())
        .map(|i| {
            let p = ensemble.path(i);
            martingale_sample(eig, p[0], *p.last().unwrap(), t, ensemble.integrated_killing[i])
        })
        .collect();
    Ok(McEstimate::from_samples(&samples, ensemble.seed, Measure::Pricing))
}

pub(crate) fn martingale_sample(eig: &Eigenpair, x0: f64, xt: f64, t: f64, killed: f64) -> f64 {
    (eig.ln_phi(xt) - eig.ln_phi(x0) + eig.lambda * t - killed).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::KillingShape;

    fn ou(level: f64, speed: f64, sigma: f64) -> Diffusion {
        Diffusion {
            shape: DiffusionShape::Gaussian,
            level,
            speed,
            sigma,
        }
    }

    #[test]
    fn zero_noise_ou_follows_ode() {
        let d = ou(0.3, 1.7, 0.0);
        let scheme = SimScheme::new(SchemeKind::ExactGaussian, 50, 2.0).unwrap();
        let ens = sample_paths(&d, None, Measure::Pricing, &scheme, 1.2, 4, RngPolicy::new(1), Execution::Sequential).unwrap();
        for i in 0..4 {
            for (j, &t) in ens.times.iter().enumerate() {
                let ode = 1.2 * (-1.7 * t).exp() + 0.3 / 1.7 * (1.0 - (-1.7 * t).exp());
                assert!((ens.path(i)[j] - ode).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn scheme_shape_mismatch_rejected() {
        let d = ou(0.3, 1.7, 0.5);
        assert!(Stepper::new(d, SchemeKind::ExactCir, 0.1).is_err());
        assert!(SimScheme::new(SchemeKind::ExactGaussian, 0, 1.0).is_err());
    }

    #[test]
    fn cir_dimension_checked() {
        let d = Diffusion {
            shape: DiffusionShape::SquareRoot,
            level: 0.1,
            speed: 1.0,
            sigma: 0.8,
        };
        assert!(matches!(Stepper::new(d, SchemeKind::ExactCir, 0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn exact_cir_is_not_crn_smooth_for_three_halves() {
        let mk = |k: f64| Diffusion {
            shape: DiffusionShape::ThreeHalves,
            level: 0.16,
            speed: k,
            sigma: 0.8,
        };
        assert!(crn_steppers(&[mk(1.8), mk(1.9)], SchemeKind::ReciprocalCir, 0.01).is_err());
        assert!(crn_steppers(&[mk(1.8), mk(1.9)], SchemeKind::ReciprocalImplicit, 0.01).is_ok());
    }

    #[test]
    fn paths_do_not_depend_on_execution() {
        let d = Diffusion {
            shape: DiffusionShape::SquareRoot,
            level: 0.4,
            speed: 2.0,
            sigma: 0.8,
        };
        let k = Killing {
            q: 0.3,
            shape: KillingShape::Linear,
        };
        let scheme = SimScheme::new(SchemeKind::ExactCir, 20, 1.0).unwrap();
        let seq = sample_paths(&d, Some(&k), Measure::Pricing, &scheme, 1.0, 300, RngPolicy::new(9), Execution::Sequential).unwrap();
        let par = sample_paths(&d, Some(&k), Measure::Pricing, &scheme, 1.0, 300, RngPolicy::new(9), Execution::Parallel).unwrap();
        assert_eq!(seq, par);
        let other = sample_paths(&d, Some(&k), Measure::Pricing, &scheme, 1.0, 300, RngPolicy::new(10), Execution::Sequential).unwrap();
        assert_ne!(seq.states, other.states);
    }

    #[test]
    fn first_variation_starts_at_one() {
        for (shape, kind, x0) in [
            (DiffusionShape::Gaussian, SchemeKind::ExactGaussian, 0.3),
            (DiffusionShape::SquareRoot, SchemeKind::ExactCir, 1.0),
            (DiffusionShape::ThreeHalves, SchemeKind::ReciprocalCir, 1.0),
            (DiffusionShape::QuadraticDrift, SchemeKind::LogEuler, 1.0),
        ] {
            let d = Diffusion {
                shape,
                level: 0.4,
                speed: 1.8,
                sigma: 0.8,
            };
            let scheme = SimScheme::new(kind, 40, 1.0).unwrap();
            let mut ens = sample_paths(&d, None, Measure::Eigen, &scheme, x0, 50, RngPolicy::new(3), Execution::Sequential).unwrap();
            ens.fill_first_variation();
            for i in 0..ens.n_paths() {
                assert_eq!(ens.path_first_variation(i).unwrap()[0], 1.0);
            }
            if shape == DiffusionShape::Gaussian {
                let y = ens.path_first_variation(7).unwrap();
                for (j, &t) in ens.times.iter().enumerate() {
                    assert!((y[j] - (-1.8 * t).exp()).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn zero_perturbation_gives_zero_weights() {
        let d = ou(0.1, 1.0, 0.5);
        let scheme = SimScheme::new(SchemeKind::ExactGaussian, 10, 1.0).unwrap();
        let mut ens = sample_paths(&d, None, Measure::Eigen, &scheme, 0.0, 20, RngPolicy::new(2), Execution::Sequential).unwrap();
        assert!(ens.likelihood_ratio_weights(|_| 0.0).iter().all(|&w| w == 0.0));
        ens.fill_first_variation();
        let m = ens.malliavin_weights(|x| x, |_| 0.0).unwrap();
        assert!(m.iter().all(|w| *w == Some(0.0)));
    }

    #[test]
    fn trivial_martingale_is_exactly_one() {
        let d = ou(0.1, 1.0, 0.5);
        let eig = Eigenpair {
            family: crate::Family::Ou,
            lambda: 0.0,
            eta: 0.0,
            ell: 0.0,
            alpha: 1.0,
            delta: 0.1,
        };
        let k = Killing {
            q: 0.0,
            shape: KillingShape::Quadratic,
        };
        let scheme = SimScheme::new(SchemeKind::ExactGaussian, 10, 1.0).unwrap();
        let ens = sample_paths(&d, Some(&k), Measure::Pricing, &scheme, 0.0, 20, RngPolicy::new(2), Execution::Sequential).unwrap();
        let m = martingale_check(&eig, &ens).unwrap();
        assert_eq!((m.mean, m.std_error), (1.0, 0.0));
    }

    #[test]
    fn binary_dump_layout() {
        let d = ou(0.1, 1.0, 0.5);
        let scheme = SimScheme::new(SchemeKind::ExactGaussian, 3, 1.5).unwrap();
        let ens = sample_paths(&d, None, Measure::Pricing, &scheme, 0.0, 2, RngPolicy::new(77), Execution::Sequential).unwrap();
        let mut out = Vec::new();
        ens.write_binary(&mut out).unwrap();
        assert_eq!(&out[..4], b"LTSE");
        assert_eq!(u64::from_le_bytes(out[8..16].try_into().unwrap()), 77);
        assert_eq!(out.len(), 4 + 4 + 8 * 3 + 8 + 8 * 8);
        let first = f64::from_le_bytes(out[40..48].try_into().unwrap());
        assert_eq!(first, 0.0);
    }
}
