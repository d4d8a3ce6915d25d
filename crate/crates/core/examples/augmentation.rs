//! Augments a blob batch at increasing p, writes the results as a PNG
//! grid, and runs the leakage probe for the blit+geometry preset on a clean
//! set and on one where half the images are x-flips of the other half.

use scarcegan::augment::{leakage_probe, AugPipeline};
use scarcegan::data::{save_png, toy};
use scarcegan::sampling::make_grid;
use scarcegan_autodiff::Tensor;

fn main() -> scarcegan::Result<()> {
    let dir = std::env::temp_dir().join("scarcegan_augmentation");
    std::fs::create_dir_all(&dir).map_err(|e| scarcegan::Error::Contract(e.to_string()))?;
    let batch = toy::blobs(8, 16, 3, 4);
    let per = 3 * 16 * 16;
    for (row, p) in [0.0, 0.3, 0.8].into_iter().enumerate() {
        let mut pipe = AugPipeline::preset("bgcfnc", 11)?;
        pipe.p = p;
        let out = pipe.augment(&Tensor::constant(batch.clone()))?;
        for i in 0..8 {
            save_png(&dir.join(format!("{row}_{i}.png")), &out.data()[i * per..(i + 1) * per], &[3, 16, 16])?;
        }
    }
    let grid = make_grid(&dir, 3, 8, &dir.join("grid").join("augmented.png"))?;
    println!("rows p = 0, 0.3, 0.8 -> {}", grid.display());

    let clean = toy::blobs(256, 16, 3, 5);
    let half = scarcegan_autodiff::Array::from_fn(&[256, 3, 16, 16], |i| {
        let (img, col) = (i / per, i % 16);
        let src = if img < 128 { i } else { i - 128 * per - col + 15 - col };
        clean.data()[src]
    });
    let pipe = AugPipeline::preset("bg", 0)?;
    for (label, set) in [("clean", &clean), ("leaking", &half)] {
        for (cat, score) in leakage_probe(&pipe, set)? {
            println!("{label:>7} {}: {score:.3}", cat.name());
        }
    }
    Ok(())
}
