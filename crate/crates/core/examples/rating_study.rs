//! Creates a blind rating study from folders of blob PNGs, submits scores
//! for two raters and prints the aggregate report.

use scarcegan::data::{save_png, toy};
use scarcegan_study::{BoundaryRule, RatingInput, Store, StudyRequest};

fn folder(dir: &std::path::Path, seed: u64) -> scarcegan::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| scarcegan::Error::Contract(e.to_string()))?;
    let imgs = toy::blobs(6, 16, 3, seed);
    let per = 3 * 16 * 16;
    for i in 0..6 {
        save_png(&dir.join(format!("{i}.png")), &imgs.data()[i * per..(i + 1) * per], &[3, 16, 16])?;
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::temp_dir().join("scarcegan_rating_study");
    let _ = std::fs::remove_dir_all(&root);
    folder(&root.join("generated"), 1)?;
    folder(&root.join("real"), 2)?;
    let mut store = Store::open(root.join("store"))?;
    let req = StudyRequest {
        name: "example".into(),
        generated_dir: Some(root.join("generated")),
        real_dir: Some(root.join("real")),
        n_generated: 6,
        n_real: 4,
        seed: 0,
        prompt: "How realistic is this image?".into(),
    };
    let study = store.create_study(&req, 0)?;
    for (rater, bias) in [("ana", 0i64), ("ben", -1)] {
        let session = store.session(&study.id, rater)?;
        for (k, img) in session.images.iter().enumerate() {
            let score = ((k as i64 * 7) % 10 + 1 + bias).clamp(1, 10);
            store.submit(&study.id, &RatingInput { rater: rater.into(), image_id: img.image_id.clone(), score }, 0)?;
        }
    }
    let report = store.report(&study.id, &[60.0, 70.0, 80.0], BoundaryRule::Strict)?;
    println!("{} images, {} raters", report.images.len(), report.rater_count);
    for t in &report.above {
        println!("above {}%: {} ({:.1}%)", t.threshold, t.count, t.fraction * 100.0);
    }
    for b in &report.bands {
        println!("{:>7}: {}", b.label, b.count);
    }
    Ok(())
}
