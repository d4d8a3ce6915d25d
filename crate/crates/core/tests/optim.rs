use proptest::prelude::*;
use scarcegan::params::ParamSet;
use scarcegan::training::{Adam, AdamConfig};
use scarcegan_autodiff::Array;

/// Scalar Adam written out directly.
fn reference(p0: f64, grads: &[f64], cfg: AdamConfig) -> f64 {
    let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
    for (t, &g) in grads.iter().enumerate() {
        let t = t as i32 + 1;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let mh = m / (1.0 - cfg.beta1.powi(t));
        let vh = v / (1.0 - cfg.beta2.powi(t));
        p -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
    }
    p
}

fn scalar_set(v: f64) -> ParamSet {
    let mut s = ParamSet::new();
    s.insert("w", Array::new(vec![1], vec![v]).unwrap());
    s.insert("idle", Array::new(vec![2], vec![1.0, 2.0]).unwrap());
    s
}

#[test]
fn defaults_match_the_training_setup() {
    let c = AdamConfig::new(0.0025);
    assert_eq!((c.beta1, c.beta2, c.eps), (0.0, 0.99, 1e-8));
}

#[test]
fn unknown_gradient_name_is_an_error() {
    let mut s = scalar_set(0.0);
    let mut adam = Adam::new(AdamConfig::new(0.1), &s);
    assert!(adam.step(&mut s, &[("nope".into(), Array::zeros(&[1]))]).is_err());
}

proptest! {
    #[test]
    fn matches_scalar_reference(
        p0 in -3.0f64..3.0,
        grads in proptest::collection::vec(-5.0f64..5.0, 1..60),
        beta1 in prop_oneof![Just(0.0), Just(0.9)],
    ) {
        let cfg = AdamConfig { beta1, ..AdamConfig::new(0.01) };
        let mut set = scalar_set(p0);
        let mut adam = Adam::new(cfg, &set);
        for &g in &grads {
            adam.step(&mut set, &[("w".into(), Array::new(vec![1], vec![g]).unwrap())]).unwrap();
        }
        let want = reference(p0, &grads, cfg);
        let got = set.get("w").unwrap().data()[0];
        prop_assert!((got - want).abs() <= 1e-12, "{} vs {}", got, want);
        prop_assert_eq!(set.get("idle").unwrap().data(), &[1.0, 2.0]);
        prop_assert_eq!(adam.t, grads.len() as u64);
    }
}
