use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use scarcegan_autodiff::Array;

use crate::error::{contract, Error, IoContext, Result};

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Decodes an image as `[C, H, W]` in `[-1, 1]`, with `C` = 1 or 3.
pub fn load_image(path: &Path, channels: usize) -> Result<Array> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    Ok(from_dynamic(&img, channels))
}

pub(crate) fn from_dynamic(img: &DynamicImage, channels: usize) -> Array {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; channels * h * w];
    if channels == 1 {
        let g = img.to_luma8();
        for (i, p) in g.pixels().enumerate() {
            data[i] = p.0[0] as f64 / 127.5 - 1.0;
        }
    } else {
        let rgb = img.to_rgb8();
        for (i, p) in rgb.pixels().enumerate() {
            for c in 0..3 {
                data[c * h * w + i] = p.0[c] as f64 / 127.5 - 1.0;
            }
        }
    }
    Array::new(vec![channels, h, w], data).expect("image shape")
}

/// Quantizes `[C, H, W]` values in `[-1, 1]` to 8-bit interleaved pixels.
pub fn to_rgb8(sample: &[f64], channels: usize) -> Vec<u8> {
    let plane = sample.len() / channels;
    (0..plane)
        .flat_map(|i| (0..channels).map(move |c| (i, c)))
        .map(|(i, c)| ((sample[c * plane + i] + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Writes one `[C, H, W]` sample as PNG.
pub fn save_png(path: &Path, sample: &[f64], shape: &[usize]) -> Result<()> {
    let [c, h, w] = *shape else {
        return Err(contract(format!("PNG export needs [C, H, W], got {shape:?}")));
    };
    let bytes = to_rgb8(sample, c);
    let (w32, h32) = (w as u32, h as u32);
    let res = match c {
        1 => ImageBuffer::<Luma<u8>, _>::from_raw(w32, h32, bytes).map(|b| b.save(path)),
        3 => ImageBuffer::<Rgb<u8>, _>::from_raw(w32, h32, bytes).map(|b| b.save(path)),
        _ => return Err(contract(format!("PNG export needs 1 or 3 channels, got {c}"))),
    };
    match res {
        Some(r) => r.map_err(|e| image_err(path, e)),
        None => Err(image_err(path, "buffer size mismatch")),
    }
}

/// PNG and JPEG files in a directory, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every image in `dir` (sorted by name) into `[n, C, H, W]`. All
/// images must share one size.
pub fn load_image_dir(dir: &Path, channels: usize) -> Result<(Array, Vec<PathBuf>)> {
    let files = list_images(dir)?;
    if files.is_empty() {
        return Err(contract(format!("no images in {}", dir.display())));
    }
    let mut data = Vec::new();
    let mut shape: Option<Vec<usize>> = None;
    for f in &files {
        let img = load_image(f, channels)?;
        match &shape {
            None => shape = Some(img.shape().to_vec()),
            Some(s) if s != img.shape() => {
                return Err(contract(format!(
                    "{} is {:?}, expected {:?} like the rest of {}",
                    f.display(),
                    img.shape(),
                    s,
                    dir.display()
                )))
            }
            _ => {}
        }
        data.extend_from_slice(img.data());
    }
    let mut full = vec![files.len()];
    full.extend(shape.expect("non-empty"));
    Ok((Array::new(full, data)?, files))
}
