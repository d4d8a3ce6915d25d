use std::collections::BTreeSet;
use std::path::Path;

use proptest::prelude::*;
use scarcegan_study::report::{band_of, parse_thresholds};
use scarcegan_study::{session_order, BoundaryRule, RatingInput, Store, StudyError, StudyRequest};

fn write_images(dir: &Path, n: usize, tag: &str) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        std::fs::write(dir.join(format!("{tag}{i:03}.png")), format!("{tag}-{i}")).unwrap();
    }
}

fn request(root: &Path, n_generated: usize, n_real: usize) -> StudyRequest {
    StudyRequest {
        name: "fixture".into(),
        generated_dir: Some(root.join("gen")),
        real_dir: Some(root.join("real")),
        n_generated,
        n_real,
        seed: 9,
        prompt: "How realistic is this image?".into(),
    }
}

fn rate(store: &mut Store, study: &str, rater: &str, image: &str, score: i64) {
    let input = RatingInput {
        rater: rater.into(),
        image_id: image.into(),
        score,
    };
    store.submit(study, &input, 1).unwrap();
}

/// Two raters per image; per-band score pairs chosen to hit every boundary.
fn fixture_pairs() -> Vec<(u8, u8)> {
    let mut v = Vec::new();
    v.extend([(9, 9); 5]);
    v.extend([(10, 8); 4]);
    v.extend([(9, 8); 4]);
    v.extend([(8, 8); 9]);
    v.extend([(8, 7); 8]);
    v.extend([(7, 7); 4]);
    v.extend([(7, 6); 4]);
    v.extend([(6, 6); 6]);
    v.extend([(5, 3); 4]);
    v.extend([(1, 1); 4]);
    v
}

#[test]
fn fifty_two_image_fixture_matches_recount() {
    let tmp = tempfile::tempdir().unwrap();
    write_images(&tmp.path().join("gen"), 60, "g");
    write_images(&tmp.path().join("real"), 10, "r");
    let mut store = Store::open(tmp.path().join("store")).unwrap();
    let study = store.create_study(&request(tmp.path(), 42, 10), 0).unwrap();
    assert_eq!(study.roster.len(), 52);

    let pairs = fixture_pairs();
    let mut log = Vec::new();
    for (img, &(a, b)) in study.roster.iter().zip(&pairs) {
        rate(&mut store, &study.id, "alice", &img.image_id, a as i64);
        rate(&mut store, &study.id, "bob", &img.image_id, b as i64);
        log.push((a as u32, b as u32));
    }

    let report = store.report(&study.id, &[60.0, 70.0, 80.0], BoundaryRule::Strict).unwrap();
    // Integer recount: mean·10 > t  ⇔  10·sum > t·n.
    let above = |t: u32| log.iter().filter(|(a, b)| 10 * (a + b) > t * 2).count();
    assert_eq!(above(60), 38);
    assert_eq!(report.above[0].count, above(60));
    assert_eq!(report.above[1].count, above(70));
    assert_eq!(report.above[2].count, above(80));
    assert_eq!(format!("{:.2}", report.above[0].fraction * 100.0), "73.08");

    let oracle_bands = [
        above(80),
        above(70) - above(80),
        above(60) - above(70),
        log.len() - above(60),
    ];
    let counts: Vec<usize> = report.bands.iter().map(|b| b.count).collect();
    assert_eq!(counts, oracle_bands);
    assert_eq!(counts, [13, 17, 8, 14]);
    let pct: Vec<String> = report.bands.iter().map(|b| format!("{:.2}", b.fraction * 100.0)).collect();
    assert_eq!(pct[..3], ["25.00", "32.69", "15.38"]);
    assert_eq!(report.rater_count, 2);
    assert!(report.unrated.is_empty());

    let inclusive = store.report(&study.id, &[60.0], BoundaryRule::Inclusive).unwrap();
    let at_or_above = log.iter().filter(|(a, b)| 10 * (a + b) >= 60 * 2).count();
    assert_eq!(inclusive.above[0].count, at_or_above);
    assert!(at_or_above > 38);
}

#[test]
fn single_rating_of_six_sits_on_the_boundary() {
    let tmp = tempfile::tempdir().unwrap();
    write_images(&tmp.path().join("gen"), 1, "g");
    let mut store = Store::open(tmp.path().join("store")).unwrap();
    let study = store.create_study(&request(tmp.path(), 1, 0), 0).unwrap();
    rate(&mut store, &study.id, "r", &study.roster[0].image_id, 6);
    let strict = store.report(&study.id, &[60.0], BoundaryRule::Strict).unwrap();
    assert_eq!(strict.images[0].percentage, 60.0);
    assert_eq!(strict.above[0].count, 0);
    let inclusive = store.report(&study.id, &[60.0], BoundaryRule::Inclusive).unwrap();
    assert_eq!(inclusive.above[0].count, 1);
}

#[test]
fn unrated_images_are_listed_not_counted() {
    let tmp = tempfile::tempdir().unwrap();
    write_images(&tmp.path().join("gen"), 4, "g");
    let mut store = Store::open(tmp.path().join("store")).unwrap();
    let study = store.create_study(&request(tmp.path(), 4, 0), 0).unwrap();
    assert!(matches!(store.report(&study.id, &[60.0], BoundaryRule::Strict), Err(StudyError::Contract(_))));
    rate(&mut store, &study.id, "r", &study.roster[0].image_id, 9);
    let report = store.report(&study.id, &[60.0], BoundaryRule::Strict).unwrap();
    assert_eq!(report.unrated.len(), 3);
    assert_eq!(report.above[0].fraction, 1.0);
}

#[test]
fn score_range_is_enforced() {
    let tmp = tempfile::tempdir().unwrap();
    write_images(&tmp.path().join("gen"), 2, "g");
    let mut store = Store::open(tmp.path().join("store")).unwrap();
    let study = store.create_study(&request(tmp.path(), 2, 0), 0).unwrap();
    let image = study.roster[0].image_id.clone();
    for bad in [0, 11, -3] {
        let err = store
            .submit(&study.id, &RatingInput { rater: "r".into(), image_id: image.clone(), score: bad }, 1)
            .unwrap_err();
        assert!(matches!(&err, StudyError::Validation(m) if m.contains("out of range")), "{err}");
    }
    for ok in [1, 10] {
        store
            .submit(&study.id, &RatingInput { rater: "r".into(), image_id: image.clone(), score: ok }, 1)
            .unwrap();
    }
    let missing = store.submit(&study.id, &RatingInput { rater: "r".into(), image_id: "nope".into(), score: 5 }, 1);
    assert!(matches!(missing, Err(StudyError::NotFound(_))));
}

#[test]
fn resubmission_supersedes_and_keeps_audit() {
    let tmp = tempfile::tempdir().unwrap();
    write_images(&tmp.path().join("gen"), 2, "g");
    let mut store = Store::open(tmp.path().join("store")).unwrap();
    let study = store.create_study(&request(tmp.path(), 2, 0), 0).unwrap();
    let image = study.roster[1].image_id.clone();
    let input = |score| RatingInput { rater: "r".into(), image_id: image.clone(), score };
    assert!(store.submit(&study.id, &input(4), 1).unwrap().recorded);
    assert!(!store.submit(&study.id, &input(4), 2).unwrap().recorded);
    assert!(store.submit(&study.id, &input(7), 3).unwrap().recorded);
    assert_eq!(store.audit(&study.id, "r", &image).len(), 2);
    let effective = store.ratings(&study.id);
    assert_eq!(effective.len(), 1);
    assert_eq!(effective[0].score, 7);
    let s = store.session(&study.id, "r").unwrap();
    let entry = s.images.iter().find(|i| i.image_id == image).unwrap();
    assert_eq!(entry.existing_score, Some(7));
}

#[test]
fn ratings_survive_reopen_and_torn_lines() {
    let tmp = tempfile::tempdir().unwrap();
    write_images(&tmp.path().join("gen"), 3, "g");
    let root = tmp.path().join("store");
    let study = {
        let mut store = Store::open(&root).unwrap();
        let study = store.create_study(&request(tmp.path(), 3, 0), 0).unwrap();
        rate(&mut store, &study.id, "a", &study.roster[0].image_id, 8);
        rate(&mut store, &study.id, "a", &study.roster[1].image_id, 3);
        study
    };
    // Simulate a crash halfway through writing a record.
    let ratings = root.join("ratings.jsonl");
    let mut bytes = std::fs::read(&ratings).unwrap();
    bytes.extend_from_slice(b"deadbeef {\"study_id\":\"");
    std::fs::write(&ratings, bytes).unwrap();

    let mut store = Store::open(&root).unwrap();
    assert_eq!(store.skipped_lines(), 1);
    assert_eq!(store.ratings(&study.id).len(), 2);
    rate(&mut store, &study.id, "a", &study.roster[2].image_id, 5);
    drop(store);
    let store = Store::open(&root).unwrap();
    assert_eq!(store.ratings(&study.id).len(), 3);
    assert_eq!(store.skipped_lines(), 1);
    assert_eq!(store.study(&study.id).unwrap(), &study);
}

#[test]
fn creation_errors_are_specific() {
    let tmp = tempfile::tempdir().unwrap();
    write_images(&tmp.path().join("gen"), 5, "g");
    let mut store = Store::open(tmp.path().join("store")).unwrap();
    assert!(matches!(store.create_study(&request(tmp.path(), 0, 0), 0), Err(StudyError::Contract(_))));
    let err = store.create_study(&request(tmp.path(), 8, 0), 0).unwrap_err().to_string();
    assert!(err.contains("has 5 images, 8 requested"), "{err}");
    assert!(err.contains("gen"), "{err}");
}

#[test]
fn study_picks_are_seeded_and_mixed() {
    let tmp = tempfile::tempdir().unwrap();
    write_images(&tmp.path().join("gen"), 60, "g");
    write_images(&tmp.path().join("real"), 20, "r");
    let mut store = Store::open(tmp.path().join("store")).unwrap();
    let a = store.create_study(&request(tmp.path(), 40, 10), 0).unwrap();
    let b = store.create_study(&request(tmp.path(), 40, 10), 0).unwrap();
    assert_ne!(a.id, b.id);
    let sources = |s: &scarcegan_study::Study| s.roster.iter().map(|r| r.source.clone()).collect::<Vec<_>>();
    assert_eq!(sources(&a), sources(&b));
    let real = a.roster.iter().filter(|r| r.origin == scarcegan_study::Origin::Real).count();
    assert_eq!(real, 10);
    let copied = store.image_file(&a.roster[0].image_id).unwrap();
    assert_eq!(std::fs::read(copied).unwrap(), std::fs::read(&a.roster[0].source).unwrap());
}

#[test]
fn session_orders_are_deterministic_and_varied() {
    let tmp = tempfile::tempdir().unwrap();
    write_images(&tmp.path().join("gen"), 50, "g");
    let mut store = Store::open(tmp.path().join("store")).unwrap();
    let study = store.create_study(&request(tmp.path(), 50, 0), 0).unwrap();
    let mut seen = BTreeSet::new();
    for k in 0..100 {
        let rater = format!("rater-{k}");
        let order = session_order(&study, &rater);
        assert_eq!(order, session_order(&study, &rater));
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        seen.insert(order);
    }
    assert!(seen.len() >= 99, "{} distinct orders", seen.len());
}

#[test]
fn threshold_parsing() {
    assert_eq!(parse_thresholds("60, 70,80").unwrap(), vec![60.0, 70.0, 80.0]);
    assert!(parse_thresholds("60,abc").is_err());
}

proptest! {
    #[test]
    fn bands_partition_by_rule(pct in 0.0f64..=100.0) {
        for rule in [BoundaryRule::Strict, BoundaryRule::Inclusive] {
            let b = band_of(pct, rule);
            let expect = [80.0, 70.0, 60.0].iter().take_while(|&&t| !rule.above(pct, t)).count();
            prop_assert_eq!(b, expect);
        }
    }
}
