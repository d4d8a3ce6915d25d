//! Truncated latent sampling, bulk PNG export and image grids.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use scarcegan_autodiff::{Array, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::save_png;
use crate::error::{contract, Error, IoContext, Result};
use crate::networks::{map_latent, synthesize, GanModel, NetMode};
use crate::training::{Checkpoint, TrainConfig};

pub const SAMPLE_MANIFEST: &str = "samples.json";
pub const DEFAULT_PSI: f64 = 0.7;
pub const DEFAULT_W_MEAN_SAMPLES: usize = 10_000;
const W_MEAN_SEED: u64 = 0x776d_6561_6e;
const MIN_ACCEPTANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruncationSpace {
    /// Interpolate mapped latents towards their mean.
    WSpaceInterpolation,
    /// Redraw latent coordinates outside a threshold.
    ZResampling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub psi: f64,
    pub count: usize,
    pub seed: u64,
    pub space: TruncationSpace,
    pub w_mean_samples: usize,
    pub use_ema: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            psi: DEFAULT_PSI,
            count: 16,
            seed: 0,
            space: TruncationSpace::WSpaceInterpolation,
            w_mean_samples: DEFAULT_W_MEAN_SAMPLES,
            use_ema: true,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.psi) {
            return Err(contract(format!("psi must be in [0, 1], got {}", self.psi)));
        }
        if self.space == TruncationSpace::WSpaceInterpolation && self.psi < 1.0 && self.w_mean_samples == 0 {
            return Err(contract("w_mean_samples must be positive"));
        }
        Ok(())
    }
}

/// `w̄ + ψ·(w − w̄)`, row-wise when `w_mean` is one row of `w`. ψ = 1
/// returns `w` and ψ = 0 returns `w̄` bit for bit.
pub fn truncate_w(w: &Array, w_mean: &Array, psi: f64) -> Result<Array> {
    let d = w_mean.len();
    if d == 0 || !w.len().is_multiple_of(d) || w.shape().last() != w_mean.shape().last() {
        return Err(contract(format!(
            "w {:?} and w_mean {:?} do not match",
            w.shape(),
            w_mean.shape()
        )));
    }
    if psi == 1.0 {
        return Ok(w.clone());
    }
    let m = w_mean.data();
    let data = w
        .data()
        .chunks(d)
        .flat_map(|row| row.iter().zip(m).map(|(&x, &mu)| if psi == 0.0 { mu } else { mu + psi * (x - mu) }))
        .collect();
    Ok(Array::new(w.shape().to_vec(), data)?)
}

/// Probability that a standard normal coordinate lies in `[-t, t]`.
pub fn gaussian_acceptance(threshold: f64) -> f64 {
    libm::erf(threshold / std::f64::consts::SQRT_2)
}

/// Threshold at which a coordinate is kept with probability `psi`.
/// ψ = 1 has no threshold.
pub fn z_threshold_for_psi(psi: f64) -> Result<Option<f64>> {
    if psi >= 1.0 {
        return Ok(None);
    }
    if psi < MIN_ACCEPTANCE {
        return Err(contract(format!(
            "psi = {psi} keeps less than {MIN_ACCEPTANCE} of each coordinate; resampling would not terminate in practice"
        )));
    }
    let (mut lo, mut hi) = (0.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gaussian_acceptance(mid) < psi {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// Draws `n` standard normal values, redrawing each one until
/// `|z| ≤ threshold`. `None` passes the raw stream through.
pub fn truncate_z(rng: &mut impl Rng, n: usize, threshold: Option<f64>) -> Result<Vec<f64>> {
    let Some(t) = threshold else {
        return Ok((0..n).map(|_| rng.sample(StandardNormal)).collect());
    };
    if !(t > 0.0) {
        return Err(contract(format!("threshold must be > 0, got {t}")));
    }
    if gaussian_acceptance(t) < MIN_ACCEPTANCE {
        return Err(contract(format!(
            "threshold {t} accepts fewer than {MIN_ACCEPTANCE} of draws"
        )));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        loop {
            let v: f64 = rng.sample(StandardNormal);
            if v.abs() <= t {
                out.push(v);
                break;
            }
        }
    }
    Ok(out)
}

/// Seed of the latent for image `index` of a batch seeded with `seed`.
pub fn latent_seed(seed: u64, index: usize) -> u64 {
    let mut x = seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mean mapped latent and its Monte-Carlo standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WMean {
    pub mean: Vec<f64>,
    pub samples: usize,
    /// Largest per-coordinate standard error of the mean.
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub file: String,
    pub index: usize,
    pub latent_seed: u64,
}

/// Everything needed to regenerate a batch exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub seed: u64,
    pub psi: f64,
    pub space: TruncationSpace,
    pub use_ema: bool,
    pub checkpoint: String,
    pub w_mean_samples: usize,
    pub w_mean_stderr: Option<f64>,
    pub images: Vec<SampleEntry>,
}

/// A loaded generator with a per-instance w̄ cache.
pub struct Sampler {
    model: GanModel,
    fingerprint: String,
    w_means: Mutex<HashMap<(usize, bool), Arc<WMean>>>,
}

impl Sampler {
    pub fn new(model: GanModel, fingerprint: impl Into<String>) -> Self {
        Self {
            model,
            fingerprint: fingerprint.into(),
            w_means: Mutex::new(HashMap::new()),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg = TrainConfig::parse(&ckpt.config)?;
        let model = GanModel::from_parts(cfg.net_config(), ckpt.group("g"), ckpt.group("d"), ckpt.group("ema"))?;
        Ok(Self::new(model, ckpt.fingerprint()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn model(&self) -> &GanModel {
        &self.model
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// w̄ over `samples` mapped latents from a fixed stream; computed once
    /// per setting.
    pub fn w_mean(&self, samples: usize, use_ema: bool) -> Result<Arc<WMean>> {
        if samples == 0 {
            return Err(contract("w_mean_samples must be positive"));
        }
        let mut cache = self.w_means.lock().expect("w_mean cache");
        if let Some(w) = cache.get(&(samples, use_ema)) {
            return Ok(w.clone());
        }
        let cfg = &self.model.config;
        let p = self.model.generator_params(use_ema).bind(None, |_| false);
        let mut rng = ChaCha8Rng::seed_from_u64(W_MEAN_SEED);
        let d = cfg.w_dim;
        let (mut sum, mut sq) = (vec![0.0; d], vec![0.0; d]);
        let mut done = 0;
        while done < samples {
            let n = (samples - done).min(1000);
            let z = Array::from_fn(&[n, cfg.z_dim], |_| rng.sample(StandardNormal));
            let w = map_latent(cfg, &p, &Tensor::constant(z))?;
            for row in w.data().chunks(d) {
                for k in 0..d {
                    sum[k] += row[k];
                    sq[k] += row[k] * row[k];
                }
            }
            done += n;
        }
        let n = samples as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let stderr = if samples > 1 {
            (0..d)
                .map(|k| ((sq[k] - n * mean[k] * mean[k]).max(0.0) / (n - 1.0) / n).sqrt())
                .fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        let w = Arc::new(WMean { mean, samples, stderr });
        cache.insert((samples, use_ema), w.clone());
        Ok(w)
    }

    fn latent(&self, seed: u64, cfg: &SampleConfig) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let threshold = match cfg.space {
            TruncationSpace::ZResampling => z_threshold_for_psi(cfg.psi)?,
            TruncationSpace::WSpaceInterpolation => None,
        };
        truncate_z(&mut rng, self.model.config.z_dim, threshold)
    }

    /// Generates the samples for the given latent seeds, `[n, ...]`.
    pub fn sample_seeds(&self, seeds: &[u64], cfg: &SampleConfig) -> Result<Array> {
        cfg.validate()?;
        let net = &self.model.config;
        let p = self.model.generator_params(cfg.use_ema).bind(None, |_| false);
        let w_mean = match cfg.space {
            TruncationSpace::WSpaceInterpolation if cfg.psi < 1.0 => {
                let m = self.w_mean(cfg.w_mean_samples, cfg.use_ema)?;
                Some(Array::new(vec![net.w_dim], m.mean.clone())?)
            }
            _ => None,
        };
        let mut shape = vec![seeds.len()];
        shape.extend(net.sample_shape());
        let mut data = Vec::with_capacity(seeds.len() * net.sample_len());
        for chunk in seeds.chunks(64) {
            let mut z = Vec::with_capacity(chunk.len() * net.z_dim);
            for &s in chunk {
                z.extend(self.latent(s, cfg)?);
            }
            let z = Array::new(vec![chunk.len(), net.z_dim], z)?;
            let mut w = map_latent(net, &p, &Tensor::constant(z))?.value().clone();
            if let Some(m) = &w_mean {
                w = truncate_w(&w, m, cfg.psi)?;
            }
            let out = synthesize(net, &p, &Tensor::constant(w))?;
            data.extend_from_slice(out.data());
        }
        Ok(Array::new(shape, data)?)
    }

    /// `cfg.count` samples, image `i` drawn from `latent_seed(cfg.seed, i)`.
    pub fn sample(&self, cfg: &SampleConfig) -> Result<Array> {
        let seeds: Vec<u64> = (0..cfg.count).map(|i| latent_seed(cfg.seed, i)).collect();
        self.sample_seeds(&seeds, cfg)
    }
}

fn write_pngs(samples: &Array, files: &[String], out_dir: &Path) -> Result<()> {
    let shape = &samples.shape()[1..];
    let per: usize = shape.iter().product();
    for (k, f) in files.iter().enumerate() {
        save_png(&out_dir.join(f), &samples.data()[k * per..(k + 1) * per], shape)?;
    }
    Ok(())
}

/// Writes `cfg.count` PNGs named `{seed}_{index}.png` and, last, the
/// manifest `samples.json`.
pub fn generate_batch(sampler: &Sampler, cfg: &SampleConfig, out_dir: &Path) -> Result<SampleManifest> {
    cfg.validate()?;
    if sampler.model.config.mode != NetMode::Image {
        return Err(contract("PNG export needs an image-mode checkpoint"));
    }
    std::fs::create_dir_all(out_dir).at(out_dir)?;
    let images: Vec<SampleEntry> = (0..cfg.count)
        .map(|i| SampleEntry {
            file: format!("{}_{i}.png", cfg.seed),
            index: i,
            latent_seed: latent_seed(cfg.seed, i),
        })
        .collect();
    let seeds: Vec<u64> = images.iter().map(|e| e.latent_seed).collect();
    let samples = sampler.sample_seeds(&seeds, cfg)?;
    let files: Vec<String> = images.iter().map(|e| e.file.clone()).collect();
    write_pngs(&samples, &files, out_dir)?;
    let truncating_w = cfg.space == TruncationSpace::WSpaceInterpolation && cfg.psi < 1.0 && cfg.count > 0;
    let manifest = SampleManifest {
        seed: cfg.seed,
        psi: cfg.psi,
        space: cfg.space,
        use_ema: cfg.use_ema,
        checkpoint: sampler.fingerprint.clone(),
        w_mean_samples: cfg.w_mean_samples,
        w_mean_stderr: if truncating_w {
            Some(sampler.w_mean(cfg.w_mean_samples, cfg.use_ema)?.stderr)
        } else {
            None
        },
        images,
    };
    let path = out_dir.join(SAMPLE_MANIFEST);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).at(&path)?;
    Ok(manifest)
}

/// Re-creates the images listed in a manifest.
pub fn regenerate(sampler: &Sampler, manifest: &SampleManifest, out_dir: &Path) -> Result<()> {
    if manifest.checkpoint != sampler.fingerprint {
        return Err(contract(format!(
            "manifest was made from checkpoint {}, got {}",
            manifest.checkpoint, sampler.fingerprint
        )));
    }
    let cfg = SampleConfig {
        psi: manifest.psi,
        count: manifest.images.len(),
        seed: manifest.seed,
        space: manifest.space,
        w_mean_samples: manifest.w_mean_samples,
        use_ema: manifest.use_ema,
    };
    std::fs::create_dir_all(out_dir).at(out_dir)?;
    let seeds: Vec<u64> = manifest.images.iter().map(|e| e.latent_seed).collect();
    let samples = sampler.sample_seeds(&seeds, &cfg)?;
    let files: Vec<String> = manifest.images.iter().map(|e| e.file.clone()).collect();
    write_pngs(&samples, &files, out_dir)
}

/// Tiles the first `rows·cols` images of `image_dir` (sorted by name)
/// row-major into one PNG at their original resolution.
pub fn make_grid(image_dir: &Path, rows: usize, cols: usize, out: &Path) -> Result<PathBuf> {
    if rows == 0 || cols == 0 {
        return Err(contract("grid needs at least one row and one column"));
    }
    let files = crate::data::list_image_files(image_dir)?;
    let need = rows * cols;
    if files.len() < need {
        return Err(contract(format!(
            "{}x{} grid needs {need} images, {} has {}",
            rows,
            cols,
            image_dir.display(),
            files.len()
        )));
    }
    let open = |f: &PathBuf| {
        image::open(f).map_err(|e| Error::Image {
            path: f.clone(),
            message: e.to_string(),
        })
    };
    let tiles: Vec<image::DynamicImage> = files[..need].iter().map(open).collect::<Result<_>>()?;
    let (w, h) = (tiles[0].width(), tiles[0].height());
    if let Some((f, _)) = files.iter().zip(&tiles).find(|(_, t)| (t.width(), t.height()) != (w, h)) {
        return Err(contract(format!("{} is not {w}x{h} like the first tile", f.display())));
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).at(parent)?;
    }
    let grey = tiles.iter().all(|t| matches!(t, image::DynamicImage::ImageLuma8(_)));
    let (gw, gh) = (w * cols as u32, h * rows as u32);
    let result = if grey {
        let mut canvas = image::GrayImage::new(gw, gh);
        for (k, t) in tiles.iter().enumerate() {
            let (x, y) = ((k % cols) as i64 * w as i64, (k / cols) as i64 * h as i64);
            image::imageops::replace(&mut canvas, &t.to_luma8(), x, y);
        }
        canvas.save(out)
    } else {
        let mut canvas = image::RgbImage::new(gw, gh);
        for (k, t) in tiles.iter().enumerate() {
            let (x, y) = ((k % cols) as i64 * w as i64, (k / cols) as i64 * h as i64);
            image::imageops::replace(&mut canvas, &t.to_rgb8(), x, y);
        }
        canvas.save(out)
    };
    result.map_err(|e| Error::Image {
        path: out.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(out.to_path_buf())
}

/// Mean Euclidean distance over all sample pairs of `[n, d]` features.
pub fn mean_pairwise_distance(features: &Array) -> Result<f64> {
    let [n, d] = *features.shape() else {
        return Err(contract(format!("features must be [n, d], got {:?}", features.shape())));
    };
    if n < 2 {
        return Err(contract("need at least two samples"));
    }
    let rows: Vec<&[f64]> = features.data().chunks(d).collect();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += rows[i].iter().zip(rows[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}
