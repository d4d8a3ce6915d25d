use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scarcegan::networks::{GanModel, NetConfig};
use scarcegan::sampling::{
    gaussian_acceptance, generate_batch, latent_seed, make_grid, regenerate, truncate_w, truncate_z, z_threshold_for_psi,
    SampleConfig, Sampler, TruncationSpace,
};
use scarcegan_autodiff::Array;

fn tiny_image_sampler(fingerprint: &str) -> Sampler {
    let mut cfg = NetConfig::image(16, 3);
    cfg.channel_base = 4;
    cfg.z_dim = 8;
    cfg.w_dim = 8;
    Sampler::new(GanModel::new(cfg, 1).unwrap(), fingerprint)
}

#[test]
fn z_threshold_keeps_psi_of_the_mass() {
    assert_eq!(z_threshold_for_psi(1.0).unwrap(), None);
    for psi in [0.9, 0.7, 0.5, 0.1, 1e-3] {
        let t = z_threshold_for_psi(psi).unwrap().unwrap();
        assert!((gaussian_acceptance(t) - psi).abs() < 1e-12, "psi {psi}");
    }
    assert!(z_threshold_for_psi(0.0).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(truncate_z(&mut rng, 4, Some(0.0)).is_err());
    let t = z_threshold_for_psi(0.5).unwrap();
    let draws = truncate_z(&mut rng, 5000, t).unwrap();
    assert!(draws.iter().all(|v| v.abs() <= t.unwrap()));
}

#[test]
fn batch_manifest_regenerates_and_checks_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    let sampler = tiny_image_sampler("abc");
    let cfg = SampleConfig {
        count: 5,
        seed: 7,
        space: TruncationSpace::ZResampling,
        psi: 0.6,
        ..SampleConfig::default()
    };
    let m = generate_batch(&sampler, &cfg, dir.path()).unwrap();
    assert_eq!(m.images.len(), 5);
    assert_eq!(m.images[3].file, "7_3.png");
    assert_eq!(m.images[3].latent_seed, latent_seed(7, 3));
    assert_eq!(m.w_mean_stderr, None);
    let other = tiny_image_sampler("xyz");
    let err = regenerate(&other, &m, &dir.path().join("b")).unwrap_err().to_string();
    assert!(err.contains("abc") && err.contains("xyz"), "{err}");

    // Sampling one seed alone equals its slot in the batch.
    let all = sampler.sample(&cfg).unwrap();
    let one = sampler.sample_seeds(&[latent_seed(7, 2)], &cfg).unwrap();
    let per = all.len() / 5;
    assert_eq!(one.data(), &all.data()[2 * per..3 * per]);
}

#[test]
fn grid_tiles_row_major() {
    let dir = tempfile::tempdir().unwrap();
    let sampler = tiny_image_sampler("g");
    let cfg = SampleConfig { count: 6, psi: 1.0, ..SampleConfig::default() };
    generate_batch(&sampler, &cfg, dir.path()).unwrap();
    let out = dir.path().join("grid").join("g.png");
    make_grid(dir.path(), 2, 3, &out).unwrap();
    let grid = image::open(&out).unwrap().to_rgb8();
    assert_eq!(grid.dimensions(), (48, 32));
    let tile = image::open(dir.path().join("0_4.png")).unwrap().to_rgb8();
    for y in 0..16 {
        for x in 0..16 {
            assert_eq!(grid.get_pixel(16 + x, 16 + y), tile.get_pixel(x, y));
        }
    }
    let err = make_grid(dir.path(), 3, 3, &out).unwrap_err().to_string();
    assert!(err.contains('6') && err.contains('9'), "{err}");
}

#[test]
fn w_mean_is_cached_and_reports_error() {
    let sampler = tiny_image_sampler("c");
    let a = sampler.w_mean(400, true).unwrap();
    let b = sampler.w_mean(400, true).unwrap();
    assert!(std::sync::Arc::ptr_eq(&a, &b));
    assert!(a.stderr > 0.0 && a.stderr < 1.0);
    assert_eq!(a.mean.len(), 8);
}

proptest! {
    #[test]
    fn truncate_w_interpolates(psi in 0.0f64..=1.0, vals in proptest::collection::vec(-5.0f64..5.0, 12)) {
        let w = Array::new(vec![3, 4], vals).unwrap();
        let mean = Array::new(vec![1, 4], vec![0.5, -1.0, 0.0, 2.0]).unwrap();
        let t = truncate_w(&w, &mean, psi).unwrap();
        for (row, trow) in w.data().chunks(4).zip(t.data().chunks(4)) {
            for ((x, y), mu) in row.iter().zip(trow).zip(mean.data()) {
                prop_assert!((y - (mu + psi * (x - mu))).abs() < 1e-12);
                prop_assert!((y - mu).abs() <= (x - mu).abs() + 1e-12);
            }
        }
    }

    #[test]
    fn latent_seeds_are_distinct(seed in any::<u64>()) {
        let seeds: std::collections::BTreeSet<u64> = (0..64).map(|i| latent_seed(seed, i)).collect();
        prop_assert_eq!(seeds.len(), 64);
    }
}
