use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::io::{from_dynamic, list_images};
use super::Dataset;
use crate::error::{contract, IoContext, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub source: PathBuf,
    pub resolution: usize,
    pub channels: usize,
    pub xflip: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Prepared file, relative to the dataset directory.
    pub file: String,
    /// Source file name.
    pub source: String,
    pub sha256: String,
    /// Virtual mirrored copy of `file`; nothing extra exists on disk.
    pub flipped: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejected {
    pub source: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub resolution: usize,
    pub channels: usize,
    pub xflip: bool,
    pub entries: Vec<ManifestEntry>,
    pub rejected: Vec<Rejected>,
}

impl Manifest {
    /// Hash of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Largest centred square: `(x0, y0, side)`.
pub fn center_crop_box(width: u32, height: u32) -> (u32, u32, u32) {
    let side = width.min(height);
    ((width - side) / 2, (height - side) / 2, side)
}

/// Centre-crops and resizes every decodable image in `dataset.source` into
/// `out_dir`, writing `manifest.json` last. Undecodable or too-small
/// sources are skipped and listed under `rejected`.
pub fn prep_data(dataset: &DatasetSpec, out_dir: &Path) -> Result<Manifest> {
    if dataset.channels != 1 && dataset.channels != 3 {
        return Err(contract(format!("channels must be 1 or 3, got {}", dataset.channels)));
    }
    if dataset.resolution == 0 {
        return Err(contract("resolution must be positive"));
    }
    let files = list_images(&dataset.source)?;
    std::fs::create_dir_all(out_dir).at(out_dir)?;
    let mut entries = Vec::new();
    let mut rejected = Vec::new();
    let r = dataset.resolution as u32;
    for path in &files {
        let source = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let img = match image::open(path) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                rejected.push(Rejected {
                    source,
                    reason: format!("decode error: {e}"),
                });
                continue;
            }
        };
        if img.width().min(img.height()) < r {
            rejected.push(Rejected {
                source,
                reason: format!("{}x{} is smaller than {r}x{r}", img.width(), img.height()),
            });
            continue;
        }
        let (x0, y0, side) = center_crop_box(img.width(), img.height());
        let resized = img.crop_imm(x0, y0, side, side).resize_exact(r, r, FilterType::Triangle);
        let resized = if dataset.channels == 1 {
            image::DynamicImage::ImageLuma8(resized.to_luma8())
        } else {
            image::DynamicImage::ImageRgb8(resized.to_rgb8())
        };
        let file = format!("{:05}.png", entries.len());
        let dest = out_dir.join(&file);
        resized.save(&dest).map_err(|e| crate::Error::Image {
            path: dest.clone(),
            message: e.to_string(),
        })?;
        let bytes = std::fs::read(&dest).at(&dest)?;
        entries.push(ManifestEntry {
            file,
            source,
            sha256: hex::encode(Sha256::digest(&bytes)),
            flipped: false,
        });
    }
    if entries.is_empty() {
        let reasons: Vec<String> = rejected.iter().map(|r| format!("{}: {}", r.source, r.reason)).collect();
        return Err(contract(format!(
            "no usable images in {}{}",
            dataset.source.display(),
            if reasons.is_empty() { String::new() } else { format!(" ({})", reasons.join("; ")) }
        )));
    }
    if dataset.xflip {
        let mirrored: Vec<ManifestEntry> = entries
            .iter()
            .map(|e| ManifestEntry {
                flipped: true,
                ..e.clone()
            })
            .collect();
        entries.extend(mirrored);
    }
    let manifest = Manifest {
        resolution: dataset.resolution,
        channels: dataset.channels,
        xflip: dataset.xflip,
        entries,
        rejected,
    };
    let path = out_dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).at(&path)?;
    Ok(manifest)
}

/// Loads a directory written by [`prep_data`].
pub fn load_prepared(dir: &Path) -> Result<(Dataset, Manifest)> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).at(&path)?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut data = Vec::new();
    let mut count = 0;
    for e in manifest.entries.iter().filter(|e| !e.flipped) {
        let file = dir.join(&e.file);
        let img = image::open(&file).map_err(|err| crate::Error::Image {
            path: file.clone(),
            message: err.to_string(),
        })?;
        let a = from_dynamic(&img, manifest.channels);
        if a.shape()[1..] != [manifest.resolution, manifest.resolution] {
            return Err(contract(format!("{} does not match the manifest resolution", file.display())));
        }
        data.extend_from_slice(a.data());
        count += 1;
    }
    let r = manifest.resolution;
    let arr = scarcegan_autodiff::Array::new(vec![count, manifest.channels, r, r], data)?;
    Ok((Dataset::new(arr, manifest.xflip)?, manifest))
}
