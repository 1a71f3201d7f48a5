use hopf_shear::model::{
    direction_angle_rate, direction_drift, drift, drift_jacobian, h_bound, max_stable_step, q_hat, q_polar,
    tangent_matrix, ModelParams, Vec2,
};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = ModelParams> {
    (-3.0..3.0, -3.0..3.0, 0.1..3.0, -15.0..15.0, 0.0..2.0)
        .prop_map(|(al, be, a, b, s)| ModelParams::new(al, be, a, b, s).unwrap())
}

fn state(radius: f64) -> impl Strategy<Value = Vec2> {
    (0.0..radius, 0.0..std::f64::consts::TAU).prop_map(|(r, t)| Vec2::new(r * t.cos(), r * t.sin()))
}

fn unit() -> impl Strategy<Value = Vec2> {
    (0.0..std::f64::consts::TAU).prop_map(|t| Vec2::new(t.cos(), t.sin()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn drift_is_odd(p in params(), x in state(5.0)) {
        let f = drift(&p, x);
        let g = drift(&p, -x);
        prop_assert!((f + g).norm() <= 1e-14 * (1.0 + f.norm()));
    }

    #[test]
    fn jacobian_matches_central_differences(p in params(), x in state(3.0)) {
        let h = 1e-6;
        let jac = drift_jacobian(&p, x);
        let scale = jac.m.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
        for (col, e) in [Vec2::new(h, 0.0), Vec2::new(0.0, h)].into_iter().enumerate() {
            let d = (1.0 / (2.0 * h)) * (drift(&p, x + e) - drift(&p, x - e));
            prop_assert!((d.x - jac.m[0][col]).abs() <= 1e-5 * scale);
            prop_assert!((d.y - jac.m[1][col]).abs() <= 1e-5 * scale);
        }
    }

    #[test]
    fn tangent_matrix_is_identity_minus_tau_jacobian(p in params(), x in state(3.0), tau in 1e-4..0.05) {
        let m = tangent_matrix(&p, tau, x);
        let j = drift_jacobian(&p, x);
        for r in 0..2 {
            for c in 0..2 {
                let id = if r == c { 1.0 } else { 0.0 };
                prop_assert!((m.m[r][c] - (id - tau * j.m[r][c])).abs() <= 1e-12 * (1.0 + j.m[r][c].abs()));
            }
        }
    }

    #[test]
    fn polar_identity(p in params(), x in state(3.0), xi in 0.0..std::f64::consts::PI) {
        let phi = x.y.atan2(x.x);
        let psi = (xi - phi).rem_euclid(std::f64::consts::PI);
        let lhs = q_hat(&p, x, xi);
        prop_assert!((lhs - q_polar(&p, x.norm(), psi)).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn q_polar_has_period_pi(p in params(), g in 0.0..3.0, psi in -4.0..4.0) {
        let d = q_polar(&p, g, psi) - q_polar(&p, g, psi + std::f64::consts::PI);
        prop_assert!(d.abs() <= 1e-12 * (1.0 + q_polar(&p, g, psi).abs()));
    }

    #[test]
    fn h_bound_dominates_stretching(p in params(), x in state(3.0), c in unit()) {
        let h = h_bound(&p, x);
        prop_assert!(h >= 0.0);
        let v = drift_jacobian(&p, x).apply(c);
        prop_assert!(v.norm_sq() <= h * (1.0 + 1e-12));
    }

    #[test]
    fn direction_drift_is_tangent(p in params(), x in state(3.0), c in unit()) {
        let g = direction_drift(&p, x, c).unwrap();
        prop_assert!(g.dot(c).abs() <= 1e-9 * (1.0 + g.norm()));
    }

    #[test]
    fn direction_drift_is_projected_linearisation(p in params(), x in state(3.0), c in unit()) {
        let v = drift_jacobian(&p, x).apply(c);
        let expected = v - v.dot(c) * c;
        let g = direction_drift(&p, x, c).unwrap();
        prop_assert!((g - expected).norm() <= 1e-10 * (1.0 + expected.norm()));
        let xi = c.y.atan2(c.x);
        let rate = direction_angle_rate(&p, x, xi);
        let rotated = rate * Vec2::new(-c.y, c.x);
        prop_assert!((g - rotated).norm() <= 1e-10 * (1.0 + g.norm()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn determinant_positive_below_guard(p in params(), x in state(10.0)) {
        let tau = 0.99 * max_stable_step(&p);
        prop_assert!(tangent_matrix(&p, tau, x).det() > 0.0);
    }
}

#[test]
fn guard_is_monotone_in_alpha() {
    for b in [-10.0, 0.0, 3.0] {
        let mut last = f64::INFINITY;
        for i in 0..40 {
            let alpha = 0.1 * i as f64;
            let p = ModelParams::new(alpha, 1.0, 1.0, b, 1.0).unwrap();
            let m = max_stable_step(&p);
            assert!(m <= last);
            last = m;
            let q = ModelParams::new(-alpha, 1.0, 1.0, b, 1.0).unwrap();
            assert_eq!(max_stable_step(&q), m);
        }
    }
}

#[test]
fn tangent_matrix_tends_to_identity() {
    let p = ModelParams::new(1.0, 2.0, 1.0, 5.0, 1.0).unwrap();
    let x = Vec2::new(0.7, -1.1);
    let j = drift_jacobian(&p, x);
    for tau in [1e-2, 1e-4, 1e-6] {
        let m = tangent_matrix(&p, tau, x);
        for r in 0..2 {
            for c in 0..2 {
                let id = if r == c { 1.0 } else { 0.0 };
                assert!(((m.m[r][c] - id) / tau + j.m[r][c]).abs() < 1e-8);
            }
        }
    }
}
