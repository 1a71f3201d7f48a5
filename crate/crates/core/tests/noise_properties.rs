use hopf_shear::model::Vec2;
use hopf_shear::noise::{NoisePath, OuPath};
use hopf_shear::Error;
use proptest::prelude::*;

const N: usize = 1_000_000;

#[test]
fn increment_moments() {
    let tau = 1e-3;
    let path = NoisePath::new(2718, tau).unwrap();
    let incs = path.increments(1, N);
    for comp in [|v: &Vec2| v.x, |v: &Vec2| v.y] {
        let xs: Vec<f64> = incs.iter().map(comp).collect();
        let mean = xs.iter().sum::<f64>() / N as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (N - 1) as f64;
        assert!(mean.abs() < 4.0 * (tau / N as f64).sqrt(), "mean {mean}");
        assert!((var / tau - 1.0).abs() < 0.01, "variance ratio {}", var / tau);
    }
    let cross = incs.iter().map(|v| v.x * v.y).sum::<f64>() / N as f64;
    assert!(cross.abs() < 4.0 * tau / (N as f64).sqrt());
}

#[test]
fn ou_stationary_variance_and_autocorrelation() {
    let (tau, gamma) = (0.1, 1.0);
    let path = NoisePath::new(31, tau).unwrap();
    let ou = OuPath::new(&path, gamma).unwrap();
    let z: Vec<Vec2> = (0..N as i64).map(|k| ou.value(k).unwrap()).collect();
    for comp in [|v: &Vec2| v.x, |v: &Vec2| v.y] {
        let xs: Vec<f64> = z.iter().map(comp).collect();
        let mean = xs.iter().sum::<f64>() / N as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / N as f64;
        let lag1 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (N - 1) as f64 / var;
        assert!((var * 2.0 * gamma - 1.0).abs() < 0.02, "variance ratio {}", var * 2.0 * gamma);
        assert!((lag1 - (-gamma * tau).exp()).abs() < 0.01, "lag-1 {lag1}");
    }
}

#[test]
fn ou_increment_identity_holds_to_rounding() {
    let (tau, gamma) = (1e-3, 1.5);
    let path = NoisePath::new(5, tau).unwrap();
    let ou = OuPath::new(&path, gamma).unwrap();
    let mut worst = 0.0_f64;
    for k in 1..20_000_i64 {
        let zt = ou.tilde(k).unwrap();
        let r = ou.value(k).unwrap() - ou.value(k - 1).unwrap() + gamma * zt - path.increment(k);
        worst = worst.max(r.norm() / zt.norm());
    }
    assert!(worst <= 1e-14, "worst relative residual {worst}");
}

#[test]
fn ou_tilde_is_shift_equivariant() {
    let path = NoisePath::new(77, 1e-2).unwrap();
    let ou = OuPath::new(&path, 1.0).unwrap();
    for l in [0_i64, 1, 7, 250] {
        let shifted = ou.shift(l);
        for k in 1..50_i64 {
            assert_eq!(ou.tilde(k + l).unwrap(), shifted.tilde(k).unwrap());
            assert_eq!(ou.value(k + l).unwrap(), shifted.value(k).unwrap());
        }
    }
}

#[test]
fn ou_before_anchor_is_an_error() {
    let path = NoisePath::new(1, 1e-2).unwrap();
    let ou = OuPath::new(&path, 1.0).unwrap();
    assert!(matches!(ou.value(-1), Err(Error::BeforeAnchor { .. })));
    assert!(ou.tilde(0).is_err());
    let early = OuPath::anchored_at(&path, 1.0, -100).unwrap();
    assert_eq!(early.first_index(), -100);
    assert!(early.value(-50).is_ok());
    assert_eq!(ou.shift(-10).first_index(), 10);
}

#[test]
fn separate_constructions_reproduce() {
    let a = NoisePath::new(0xDEAD_BEEF, 1e-3).unwrap();
    let b = NoisePath::new(0xDEAD_BEEF, 1e-3).unwrap();
    let oa = OuPath::new(&a, 1.0).unwrap();
    let ob = OuPath::new(&b, 1.0).unwrap();
    // Query in opposite orders.
    let fwd: Vec<Vec2> = (0..500).map(|k| oa.value(k).unwrap()).collect();
    let bwd: Vec<Vec2> = (0..500).rev().map(|k| ob.value(k).unwrap()).collect();
    assert!(fwd.iter().eq(bwd.iter().rev()));
}

proptest! {
    #[test]
    fn shift_closure(seed in any::<u64>(), l in -1_000_000_i64..1_000_000, m in -1000_i64..1000, k in -1000_i64..1000) {
        let p = NoisePath::new(seed, 1e-3).unwrap();
        let s = p.shift(l);
        prop_assert_eq!(s.increment(k).x.to_bits(), p.increment(k + l).x.to_bits());
        prop_assert_eq!(s.increment(k).y.to_bits(), p.increment(k + l).y.to_bits());
        prop_assert_eq!(s.shift(m).increment(k), p.shift(l + m).increment(k));
        prop_assert_eq!(s.shift(-l), p);
    }

    #[test]
    fn refinement_sums_exactly(seed in any::<u64>(), k in -10_000_i64..10_000, parts in 1_usize..300) {
        let p = NoisePath::new(seed, 0.01).unwrap();
        let r = p.refine(k, parts);
        prop_assert_eq!(r.fine.len(), parts);
        let sum = r.fine.iter().fold(Vec2::ZERO, |acc, &d| acc + d);
        prop_assert_eq!(sum, r.coarse);
        prop_assert!((r.coarse - p.increment(k)).norm() <= 1e-12);
        prop_assert_eq!(p.refine(k, parts), r);
    }
}
