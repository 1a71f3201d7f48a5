use hopf_shear::integrators::{
    be_step, discrete_cycle_radius, integrate, propagate_direction, trajectory, StepConfig, TangentFrame,
};
use hopf_shear::model::{drift, tangent_matrix, ModelParams, Vec2};
use hopf_shear::noise::NoisePath;
use proptest::prelude::*;

fn hopf(alpha: f64, b: f64, sigma: f64) -> ModelParams {
    ModelParams::new(alpha, 1.0, 1.0, b, sigma).unwrap()
}

#[test]
fn renormalisation_preserves_log_growth() {
    let p = hopf(1.0, 10.0, 1.0);
    let cfg = StepConfig::new(&p, 1e-3).unwrap();
    let path = NoisePath::new(99, 1e-3).unwrap();
    let n = 10_000;
    let u0 = Vec2::new(0.6, -0.8);
    let mut frame = TangentFrame::new(u0).unwrap();
    let mut u = u0;
    let mut exponent = 0_i32;
    let mut x = Vec2::new(0.3, 0.4);
    for k in 1..=n {
        x = be_step(&p, &cfg, x, path.increment(k)).unwrap();
        frame = hopf_shear::integrators::tangent_step(&p, &cfg, x, &frame).unwrap();
        u = tangent_matrix(&p, cfg.tau(), x).solve(u);
        // Rescale by exact powers of two to stay in range.
        let e = u.norm().log2().round() as i32;
        if e.abs() > 200 {
            let s = f64::powi(2.0, -e);
            u = Vec2::new(u.x * s, u.y * s);
            exponent += e;
        }
        let d = frame.direction();
        assert!((d.norm_sq() - 1.0).abs() < 1e-12);
    }
    let direct = u.norm().ln() + exponent as f64 * std::f64::consts::LN_2;
    let rel = (frame.log_growth - direct).abs() / direct.abs().max(1.0);
    assert!(rel < 1e-8, "renormalised {} vs direct {direct}", frame.log_growth);
    let cos = frame.direction().dot((1.0 / u.norm()) * u).abs();
    assert!((cos - 1.0).abs() < 1e-10);
}

#[test]
fn trajectories_settle_on_the_discrete_invariant_circle() {
    let tau = 1e-3;
    let path = NoisePath::silent(0, tau).unwrap();
    for b in [0.0, 2.0, 10.0] {
        let p = hopf(1.0, b, 0.0);
        let cfg = StepConfig::new(&p, tau).unwrap();
        let target = discrete_cycle_radius(&p, tau).unwrap();
        for x0 in [Vec2::new(0.1, 0.0), Vec2::new(-2.0, 2.0), Vec2::new(0.0, 0.5)] {
            let r = integrate(&p, &cfg, &path, x0, 40_000).unwrap().norm();
            assert!((r - target).abs() < 1e-9, "b={b}: r={r}, circle {target}");
        }
    }
}

#[test]
fn limit_cycle_radius_near_one_for_mild_shear() {
    let tau = 1e-3;
    let path = NoisePath::silent(0, tau).unwrap();
    for b in [0.0, 0.5] {
        let p = hopf(1.0, b, 0.0);
        let cfg = StepConfig::new(&p, tau).unwrap();
        for x0 in [Vec2::new(0.1, 0.0), Vec2::new(3.0, 0.0)] {
            let r = integrate(&p, &cfg, &path, x0, 40_000).unwrap().norm();
            assert!((r - 1.0).abs() < 1e-3, "b={b}: r={r}");
        }
    }
}

#[test]
fn stable_focus_decays_monotonically() {
    let tau = 1e-3;
    let p = hopf(-1.0, 3.0, 0.0);
    let cfg = StepConfig::new(&p, tau).unwrap();
    let path = NoisePath::silent(0, tau).unwrap();
    let mut last = f64::INFINITY;
    for pt in trajectory(&p, &cfg, &path, Vec2::new(0.1, 0.0), 40_000, None).unwrap() {
        let r = pt.unwrap().state.norm();
        assert!(r <= last);
        last = r;
    }
    assert!(last < 1e-6);
}

#[test]
fn same_seed_same_trajectory() {
    let p = hopf(1.0, 10.0, 1.0);
    let cfg = StepConfig::new(&p, 1e-3).unwrap();
    let run = |seed| {
        let path = NoisePath::new(seed, 1e-3).unwrap();
        trajectory(&p, &cfg, &path, Vec2::new(1.0, 0.0), 5000, Some(Vec2::new(1.0, 0.0)))
            .unwrap()
            .map(|r| r.unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn accepted_steps_satisfy_the_implicit_equation(
        alpha in -3.0..3.0_f64, beta in -3.0..3.0_f64, a in 0.1..3.0_f64, b in -15.0..15.0_f64,
        sigma in 0.0..2.0_f64, frac in 0.01..0.99_f64, r in 0.0..3.0_f64, t in 0.0..6.3_f64,
        zx in -3.0..3.0_f64, zy in -3.0..3.0_f64,
    ) {
        let p = ModelParams::new(alpha, beta, a, b, sigma).unwrap();
        let tau = frac * hopf_shear::model::max_stable_step(&p);
        let cfg = StepConfig::new(&p, tau).unwrap();
        let x = Vec2::new(r * t.cos(), r * t.sin());
        let dw = Vec2::new(zx * tau.sqrt(), zy * tau.sqrt());
        let next = be_step(&p, &cfg, x, dw).unwrap();
        let res = next - x - tau * drift(&p, next) - sigma * dw;
        prop_assert!(res.norm() < 1e-12);
        let (dir, _) = propagate_direction(&p, tau, next, Vec2::new(t.cos(), t.sin())).unwrap();
        prop_assert!((dir.norm_sq() - 1.0).abs() < 1e-12);
    }
}
