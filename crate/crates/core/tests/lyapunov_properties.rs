use hopf_shear::integrators::{trajectory, StepConfig};
use hopf_shear::lyapunov::{analyze, gamma_fn, lambda0_reference, Horizon};
use hopf_shear::model::{h_bound, ModelParams, Vec2};
use hopf_shear::noise::{derive_seed, NoisePath};
use rayon::prelude::*;

fn hopf(b: f64) -> ModelParams {
    ModelParams::new(1.0, 1.0, 1.0, b, 1.0).unwrap()
}

const E1: Vec2 = Vec2::new(1.0, 0.0);

#[test]
fn gamma_matches_reference_implementation() {
    for i in 1..200 {
        let x = 0.05 * i as f64 - 4.93;
        let ours = gamma_fn(x);
        let oracle = statrs::function::gamma::gamma(x);
        assert!((ours - oracle).abs() <= 1e-12 * oracle.abs().max(1.0), "x={x}: {ours} vs {oracle}");
    }
}

#[test]
fn lambda0_matches_reference_formula() {
    let g = statrs::function::gamma::gamma(1.0 / 3.0);
    let oracle = std::f64::consts::PI / (2f64.powf(1.0 / 3.0) * 3f64.powf(1.0 / 6.0) * g * g);
    assert!((lambda0_reference() - oracle).abs() < 1e-13);
    assert!((0.2888..=0.2898).contains(&lambda0_reference()));
}

#[test]
fn sign_is_seed_independent() {
    let tau = 1e-3;
    let h = Horizon::with_default_burn_in(1000.0).unwrap();
    for (b, positive) in [(2.0, false), (10.0, true)] {
        let p = hopf(b);
        let cfg = StepConfig::new(&p, tau).unwrap();
        let lambdas: Vec<f64> = (0..10u64)
            .into_par_iter()
            .map(|s| {
                let path = NoisePath::new(derive_seed(500, &[s]), tau).unwrap();
                analyze(&p, &cfg, &path, E1, E1, &h).unwrap().tangent.lambda_hat
            })
            .collect();
        assert!(lambdas.iter().all(|&l| (l > 0.0) == positive), "b={b}: {lambdas:?}");
    }
}

#[test]
fn exponent_increases_with_shear() {
    let tau = 1e-3;
    let h = Horizon::with_default_burn_in(1000.0).unwrap();
    let path = NoisePath::new(1234, tau).unwrap();
    let bs = [2.0, 4.0, 6.0, 8.0, 10.0, 15.0];
    let est: Vec<(f64, f64)> = bs
        .par_iter()
        .map(|&b| {
            let p = hopf(b);
            let cfg = StepConfig::new(&p, tau).unwrap();
            let t = analyze(&p, &cfg, &path, E1, E1, &h).unwrap().tangent;
            (t.lambda_hat, t.std_error)
        })
        .collect();
    for w in est.windows(2) {
        assert!(w[1].0 > w[0].0 - 2.0 * (w[0].1 + w[1].1), "{est:?}");
    }
}

#[test]
fn gap_is_half_step_times_time_average_of_h() {
    let tau = 1e-3;
    let p = hopf(10.0);
    let cfg = StepConfig::new(&p, tau).unwrap();
    let path = NoisePath::new(8, tau).unwrap();
    let h = Horizon::new(20.0, 2.0).unwrap();
    let report = analyze(&p, &cfg, &path, E1, E1, &h).unwrap();
    let states: Vec<Vec2> = trajectory(&p, &cfg, &path, E1, 20_000, None)
        .unwrap()
        .skip(2001)
        .map(|r| r.unwrap().state)
        .collect();
    let oracle = 0.5 * tau * states.iter().map(|&x| h_bound(&p, x)).sum::<f64>() / states.len() as f64;
    assert_eq!(states.len(), 18_000);
    assert!((report.gap - oracle).abs() < 1e-10 * oracle);
}

#[test]
fn estimators_agree_within_the_gap() {
    let tau = 1e-3;
    let h = Horizon::with_default_burn_in(200.0).unwrap();
    for b in [0.0, 2.0, 6.0, 10.0] {
        let p = hopf(b);
        let cfg = StepConfig::new(&p, tau).unwrap();
        let path = NoisePath::new(3, tau).unwrap();
        let r = analyze(&p, &cfg, &path, E1, E1, &h).unwrap();
        assert!(r.estimators_consistent(), "b={b}: {r:?}");
    }
}
