mod common;

use ltsens::eigen::decompose_model;
use ltsens::estimate::{estimate_pt, McConfig, McEstimate};
use ltsens::models::{Diffusion, DiffusionShape};
use ltsens::simulate::{
    crn_steppers, first_variation_path, ln_first_variation_path, quadratic_drift_variation_ratio, sample_paths,
    simulate_crn, Execution, Measure, PathBuf, RngPolicy, SchemeKind, Shock, SimScheme, Stepper,
};
use ltsens::Family;
use rand_distr::{Distribution, StandardNormal};

fn diffusion(shape: DiffusionShape, level: f64, speed: f64, sigma: f64) -> Diffusion {
    Diffusion {
        shape,
        level,
        speed,
        sigma,
    }
}

fn terminal_from(stepper: &Stepper, x0: f64, n: usize, rng: RngPolicy, path: u64) -> PathBuf {
    let mut buf = [PathBuf::default()];
    simulate_crn(std::slice::from_ref(stepper), x0, n, &mut rng.path_rng(path), &mut buf);
    let [b] = buf;
    assert!(!b.flagged);
    b
}

#[test]
fn paths_identical_across_thread_counts() {
    let mkt = common::fig1_market();
    for family in Family::STATE_MODELS {
        let (dynamics, _, _) = decompose_model(&common::fig1_spec(family), &mkt).unwrap();
        let scheme = SimScheme::new(SchemeKind::default_for(dynamics.diffusion.shape), 50, 1.0).unwrap();
        let run = |exec| {
            sample_paths(
                &dynamics.diffusion,
                Some(&dynamics.killing),
                Measure::Pricing,
                &scheme,
                mkt.xi,
                500,
                RngPolicy::new(3),
                exec,
            )
            .unwrap()
        };
        let reference = run(Execution::Sequential);
        for threads in [1, 3] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let other = pool.install(|| run(Execution::Parallel));
            assert_eq!(reference, other, "{family:?} with {threads} threads");
        }
    }
}

#[test]
fn exact_schemes_never_leave_the_positive_axis() {
    let mkt = common::fig1_market();
    for family in [Family::Cir, Family::ThreeHalves, Family::QuadraticDrift] {
        let (dynamics, _, hat) = decompose_model(&common::fig1_spec(family), &mkt).unwrap();
        for d in [dynamics.diffusion, hat.diffusion] {
            let t = 5.0;
            let scheme = SimScheme::new(SchemeKind::default_for(d.shape), (200.0 * t) as usize, t).unwrap();
            let e = sample_paths(&d, None, Measure::Pricing, &scheme, mkt.xi, 5_000, RngPolicy::new(9), Execution::default())
                .unwrap();
            if family == Family::QuadraticDrift {
                assert!((e.n_flagged as f64) < 1e-3 * 5_000.0);
            } else {
                assert_eq!(e.n_flagged, 0, "{family:?}");
            }
            assert!(e.states.iter().all(|&x| x > 0.0));
        }
    }
}

/// Drift-implicit scheme on `√X` for a CIR process; a pathwise
/// approximation of the flow, unlike the exact transition.
fn implicit_cir_path(d: &Diffusion, x0: f64, dt: f64, db: &[f64]) -> Vec<f64> {
    let a = 1.0 + 0.5 * d.speed * dt;
    let c = (4.0 * d.level - d.sigma * d.sigma) * dt / 8.0;
    let mut u = x0.sqrt();
    let mut out = vec![x0];
    for &w in db {
        let bb = u + 0.5 * d.sigma * w;
        u = (bb + (bb * bb + 4.0 * a * c).sqrt()) / (2.0 * a);
        out.push(u * u);
    }
    out
}

#[test]
fn first_variation_matches_bump_and_revalue() {
    let (t, n, h, x0) = (1.0, 20_000, 1e-4, 1.0);
    let dt = t / n as f64;
    let rng = RngPolicy::new(17);
    let cases = [
        (diffusion(DiffusionShape::Gaussian, 0.3, 1.7, 0.8), SchemeKind::ExactGaussian),
        (diffusion(DiffusionShape::ThreeHalves, 0.6, 1.9, 0.8), SchemeKind::ReciprocalImplicit),
        (diffusion(DiffusionShape::QuadraticDrift, 0.16, 2.0, 0.8), SchemeKind::LogEuler),
    ];
    let mut y = Vec::new();
    for (d, kind) in cases {
        let stepper = Stepper::new(d, kind, dt).unwrap();
        for path in 0..4 {
            let base = terminal_from(&stepper, x0, n, rng, path);
            let up = terminal_from(&stepper, x0 + h, n, rng, path).terminal();
            let down = terminal_from(&stepper, x0 - h, n, rng, path).terminal();
            let bump = (up - down) / (2.0 * h);
            first_variation_path(&d, &base.states, &base.increments, dt, &mut y);
            let yt = *y.last().unwrap();
            assert!(((bump - yt) / yt).abs() < 1e-3, "{:?} path {path}: bump {bump} vs Y {yt}", d.shape);
        }
    }

    let d = diffusion(DiffusionShape::SquareRoot, 0.4, 1.7, 0.8);
    let mut r = rng.path_rng(0);
    for _ in 0..4 {
        let db: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                dt.sqrt() * z
            })
            .collect();
        let base = implicit_cir_path(&d, x0, dt, &db);
        let bump = (implicit_cir_path(&d, x0 + h, dt, &db).last().unwrap()
            - implicit_cir_path(&d, x0 - h, dt, &db).last().unwrap())
            / (2.0 * h);
        ln_first_variation_path(&d, &base, &db, dt, &mut y);
        let yt = y.last().unwrap().exp();
        assert!(((bump - yt) / yt).abs() < 1e-3, "CIR: bump {bump} vs Y {yt}");
    }
}

#[test]
fn quadratic_drift_generic_variation_matches_explicit_form() {
    let d = diffusion(DiffusionShape::QuadraticDrift, 0.16, 2.0, 0.8);
    let scheme = SimScheme::new(SchemeKind::LogEuler, 400, 2.0).unwrap();
    let mut e = sample_paths(&d, None, Measure::Eigen, &scheme, 1.0, 50, RngPolicy::new(4), Execution::default()).unwrap();
    e.fill_first_variation();
    for i in 0..e.n_paths() {
        let y = e.path_first_variation(i).unwrap();
        for from in [0, 1, 150, 399] {
            let generic = y[400] / y[from];
            let explicit = quadratic_drift_variation_ratio(&d, e.path(i), e.path_increments(i), e.dt(), from);
            assert!(((generic - explicit) / explicit).abs() < 1e-10, "path {i} from {from}");
        }
    }
}

#[test]
fn ou_first_variation_is_deterministic_decay() {
    let d = diffusion(DiffusionShape::Gaussian, 0.1, 1.3, 0.8);
    let scheme = SimScheme::new(SchemeKind::ExactGaussian, 100, 1.0).unwrap();
    let mut e = sample_paths(&d, None, Measure::Eigen, &scheme, 0.5, 10, RngPolicy::new(1), Execution::default()).unwrap();
    e.fill_first_variation();
    let y = e.path_first_variation(3).unwrap();
    for (t, v) in e.times.iter().zip(y) {
        assert!((v - (-1.3 * t).exp()).abs() < 1e-14);
    }
}

struct OuCase {
    delta: f64,
    alpha: f64,
    sigma: f64,
    t: f64,
}

impl OuCase {
    fn diffusion(&self, delta: f64) -> Diffusion {
        diffusion(DiffusionShape::Gaussian, delta, self.alpha, self.sigma)
    }

    fn d_mean(&self) -> f64 {
        (1.0 - (-self.alpha * self.t).exp()) / self.alpha
    }

    fn terminal_mean(&self, x0: f64) -> f64 {
        x0 * (-self.alpha * self.t).exp() + self.delta * self.d_mean()
    }

    fn terminal_var(&self) -> f64 {
        self.sigma * self.sigma * (1.0 - (-2.0 * self.alpha * self.t).exp()) / (2.0 * self.alpha)
    }
}

const OU: OuCase = OuCase {
    delta: 0.3,
    alpha: 1.5,
    sigma: 0.8,
    t: 2.0,
};

fn est(v: &[f64]) -> McEstimate {
    McEstimate::from_samples(v, 0, Measure::Eigen)
}

#[test]
fn likelihood_ratio_weights() {
    let scheme = SimScheme::new(SchemeKind::ExactGaussian, 200, OU.t).unwrap();
    let e = sample_paths(&OU.diffusion(OU.delta), None, Measure::Eigen, &scheme, 0.2, 40_000, RngPolicy::new(8), Execution::default())
        .unwrap();
    assert!(e.likelihood_ratio_weights(|_| 0.0).iter().all(|&w| w == 0.0));
    let w = e.likelihood_ratio_weights(|_| 1.0);
    assert!(est(&w).z_against(0.0) < 3.0);
    let xw: Vec<f64> = w.iter().enumerate().map(|(i, w)| e.terminal(i) * w).collect();
    let z = est(&xw).z_against(OU.d_mean());
    assert!(z < 3.0, "∂δE[X_T]: {} vs {} (z={z:.2})", est(&xw).mean, OU.d_mean());
}

#[test]
fn malliavin_likelihood_ratio_and_bump_agree_on_ou() {
    let ell = 0.4;
    let x0 = 0.2;
    let n = 200;
    let dt = OU.t / n as f64;
    let scheme = SimScheme::new(SchemeKind::ExactGaussian, n, OU.t).unwrap();
    let rng = RngPolicy::new(12);
    let mut e = sample_paths(&OU.diffusion(OU.delta), None, Measure::Eigen, &scheme, x0, 40_000, rng, Execution::default())
        .unwrap();
    e.fill_first_variation();
    let mal: Vec<f64> = e
        .malliavin_weights(|x| ell * (ell * x).exp(), |_| 1.0)
        .unwrap()
        .into_iter()
        .map(Option::unwrap)
        .collect();
    let lr: Vec<f64> = e
        .likelihood_ratio_weights(|_| 1.0)
        .iter()
        .enumerate()
        .map(|(i, w)| (ell * e.terminal(i)).exp() * w)
        .collect();

    let h = 1e-3;
    let steppers = crn_steppers(&[OU.diffusion(OU.delta + h), OU.diffusion(OU.delta - h)], SchemeKind::ExactGaussian, dt).unwrap();
    let fd = ltsens::simulate::run_crn(&steppers, x0, n, 40_000, rng, Execution::default(), |b| {
        ((ell * b[0].terminal()).exp() - (ell * b[1].terminal()).exp()) / (2.0 * h)
    })
    .unwrap();

    let (mal, lr, fd) = (est(&mal), est(&lr), est(&fd));
    let m = OU.terminal_mean(x0);
    let exact = ell * OU.d_mean() * (ell * m + 0.5 * ell * ell * OU.terminal_var()).exp();
    for (name, v) in [("malliavin", mal), ("likelihood ratio", lr), ("bump", fd)] {
        assert!(v.z_against(exact) < 3.0, "{name}: {} ± {} vs {exact}", v.mean, v.std_error);
    }
    assert!(mal.z_score(&lr) < 3.0 && mal.z_score(&fd) < 3.0 && lr.z_score(&fd) < 3.0);
}

#[test]
fn std_error_halves_when_paths_quadruple() {
    let mkt = common::fig1_market();
    let spec = common::fig1_spec(Family::Ou);
    let run = |n_paths, seed| {
        let cfg = McConfig {
            n_paths,
            steps_per_unit_time: 20.0,
            seed,
            ..McConfig::default()
        };
        estimate_pt(&spec, &mkt, 2.0, &cfg).unwrap().std_error
    };
    let ratio = run(10_000, 1) / run(40_000, 2);
    assert!((ratio - 2.0).abs() < 0.3, "ratio {ratio}");
}

/// Euler on `ln X` with `m` fine steps folded into each coarse one.
fn log_euler_terminal(stepper: &Stepper, x0: f64, z: &[f64], m: usize) -> f64 {
    let scale = (m as f64).sqrt().recip();
    z.chunks(m).fold(x0, |x, block| {
        let shock = Shock {
            z: block.iter().sum::<f64>() * scale,
            g: 0.0,
        };
        stepper.advance(x, shock).0
    })
}

#[test]
fn log_euler_weak_error_is_first_order() {
    let d = diffusion(DiffusionShape::QuadraticDrift, 0.16, 2.0, 0.8);
    let (t, fine) = (1.0, 4096usize);
    let coarse = [8usize, 16, 32];
    let steppers: Vec<Stepper> = coarse
        .iter()
        .chain(std::iter::once(&fine))
        .map(|&n| Stepper::new(d, SchemeKind::LogEuler, t / n as f64).unwrap())
        .collect();
    let rng = RngPolicy::new(31);
    let diffs = ltsens::simulate::map_paths(
        20_000,
        rng,
        Execution::default(),
        || vec![0.0; fine],
        |z, r, _| {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(r);
            }
            let reference = log_euler_terminal(&steppers[3], 1.0, z, 1);
            let mut out = [0.0; 3];
            for (j, &n) in coarse.iter().enumerate() {
                out[j] = log_euler_terminal(&steppers[j], 1.0, z, fine / n) - reference;
            }
            out
        },
    );
    let errors: Vec<McEstimate> = (0..3)
        .map(|j| est(&diffs.iter().map(|d| d[j]).collect::<Vec<_>>()))
        .collect();
    for w in errors.windows(2) {
        let ratio = w[0].mean / w[1].mean;
        assert!(w[1].mean.abs() > 5.0 * w[1].std_error, "weak error lost in noise");
        assert!((1.6..2.4).contains(&ratio), "error ratio {ratio}: {errors:?}");
    }
}
