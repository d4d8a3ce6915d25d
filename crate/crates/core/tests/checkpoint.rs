use scarcegan::data::{toy, Dataset};
use scarcegan::training::{Checkpoint, TrainConfig, Trainer, CHECKPOINT_MAGIC};
use scarcegan::Error;

fn ring_trainer(seed: u64) -> Trainer {
    let mut cfg = TrainConfig::toy_vector();
    cfg.seed = seed;
    cfg.metric_fakes = 32;
    cfg.r1_interval = 4;
    Trainer::new(cfg, Dataset::new(toy::ring(64, 3), false).unwrap()).unwrap()
}

fn image_trainer() -> Trainer {
    let mut cfg = TrainConfig::toy_image(16);
    cfg.channel_base = 4;
    cfg.minibatch = Some(4);
    cfg.metric_fakes = 8;
    cfg.aug_p = 0.4;
    cfg.ada_interval = 2;
    cfg.freeze_d = 3;
    Trainer::new(cfg, Dataset::new(toy::blobs(8, 16, 3, 1), true).unwrap()).unwrap()
}

#[test]
fn bytes_round_trip_exactly() {
    let mut t = ring_trainer(0);
    for _ in 0..5 {
        t.train_step().unwrap();
    }
    t.snapshot().unwrap();
    let ckpt = t.checkpoint();
    let bytes = ckpt.to_bytes();
    assert_eq!(&bytes[..10], CHECKPOINT_MAGIC);
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.fingerprint(), ckpt.fingerprint());
}

#[test]
fn damaged_files_are_rejected() {
    let bytes = ring_trainer(0).checkpoint().to_bytes();
    for cut in [0, 5, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut {cut}");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    let err = Checkpoint::from_bytes(&magic).unwrap_err().to_string();
    assert!(err.contains("magic"), "{err}");
}

fn assert_resume_matches(mut make: impl FnMut() -> Trainer, split: usize, total: usize) {
    let mut straight = make();
    for _ in 0..total {
        straight.train_step().unwrap();
    }
    let mut first = make();
    for _ in 0..split {
        first.train_step().unwrap();
    }
    let bytes = first.checkpoint().to_bytes();
    let dataset = Dataset::new(toy::ring(64, 3), false).unwrap();
    let ckpt = Checkpoint::from_bytes(&bytes).unwrap();
    let mut resumed = match first.config().mode {
        scarcegan::networks::NetMode::Vector => Trainer::resume(&ckpt, dataset).unwrap(),
        scarcegan::networks::NetMode::Image => {
            Trainer::resume(&ckpt, Dataset::new(toy::blobs(8, 16, 3, 1), true).unwrap()).unwrap()
        }
    };
    for _ in split..total {
        resumed.train_step().unwrap();
    }
    assert_eq!(resumed.checkpoint().to_bytes(), straight.checkpoint().to_bytes());
}

#[test]
fn resume_is_bit_identical_vector() {
    assert_resume_matches(|| ring_trainer(2), 7, 15);
}

#[test]
fn resume_is_bit_identical_with_augmentation() {
    assert_resume_matches(image_trainer, 3, 6);
}

#[test]
fn resume_rejects_mismatched_moments() {
    let t = ring_trainer(0);
    let mut ckpt = t.checkpoint();
    ckpt.tensors.retain(|(n, _)| !n.starts_with("adam_d.v/"));
    let Err(err) = Trainer::resume(&ckpt, Dataset::new(toy::ring(64, 3), false).unwrap()) else {
        panic!("resume accepted a checkpoint without second moments");
    };
    assert!(err.to_string().contains("second moment"), "{err}");
}

#[test]
fn run_writes_outputs_and_best_only_improves() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = TrainConfig::toy_vector();
    cfg.total_kimg = 0.64;
    cfg.snapshot_interval_kimg = 0.16;
    cfg.metric_fakes = 64;
    let report = scarcegan::training::train(cfg, Dataset::new(toy::ring(100, 1), false).unwrap(), Some(dir.path())).unwrap();
    assert_eq!(report.steps, 20);
    for f in ["config.txt", "metrics.jsonl", "final.ckpt", "best.ckpt", "latest.ckpt"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let lines = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), report.history.len());
    let best = report.best.unwrap();
    let min = report.history.iter().filter_map(|m| m.kid).fold(f64::INFINITY, f64::min);
    assert_eq!(best.kid, min);
    let steps: Vec<u64> = report.history.iter().map(|m| m.step).collect();
    assert!(steps.windows(2).all(|w| w[0] < w[1]), "{steps:?}");
    let saved = Checkpoint::load(&dir.path().join("best.ckpt")).unwrap();
    assert!(saved.state.contains(&format!("\"step\":{}", best.step)));
}

#[test]
fn transfer_loads_donor_weights() {
    let dir = tempfile::tempdir().unwrap();
    let donor = ring_trainer(4).checkpoint();
    let path = dir.path().join("donor.ckpt");
    donor.save(&path).unwrap();
    let mut cfg = TrainConfig::toy_vector();
    cfg.metric_fakes = 16;
    cfg.transfer_from = Some(path);
    cfg.seed = 99;
    let t = Trainer::new(cfg, Dataset::new(toy::ring(32, 0), false).unwrap()).unwrap();
    assert_eq!(t.model().discriminator, donor.group("d"));
    assert_eq!(t.step_count(), 0);
}
