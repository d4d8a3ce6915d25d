//! Stochastic discriminator augmentation and its adaptive controller.
//!
//! Fifteen operations grouped into six categories always run in the order
//! blit, geometry, color, filter, noise, cutout. Each enabled operation
//! fires independently per sample with the shared probability `p`. Every
//! operation is a differentiable function of the pixels: blits and
//! geometry are sparse resampling maps, color is a per-sample channel
//! matrix, filtering is a per-sample band gain, noise and cutout are
//! additive and multiplicative constants.

mod ada;
mod leakage;
mod warp;

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use scarcegan_autodiff::{Array, MapBatch, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use warp::{mat_mul, rot2, scale2, Affine4};

pub use ada::AdaState;
pub use leakage::{leakage_probe, LeakageReport, LEAKAGE_WARN_THRESHOLD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Blit,
    Geometry,
    Color,
    Filter,
    Noise,
    Cutout,
}

impl Category {
    /// Application order.
    pub const ALL: [Category; 6] = [
        Category::Blit,
        Category::Geometry,
        Category::Color,
        Category::Filter,
        Category::Noise,
        Category::Cutout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Blit => "blit",
            Category::Geometry => "geometry",
            Category::Color => "color",
            Category::Filter => "filter",
            Category::Noise => "noise",
            Category::Cutout => "cutout",
        }
    }

    pub fn ops(self) -> impl Iterator<Item = AugOp> {
        AugOp::ALL.into_iter().filter(move |op| op.category() == self)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AugOp {
    XFlip,
    Rot90,
    IntTranslate,
    IsoScale,
    Rotate,
    AnisoScale,
    FracTranslate,
    Brightness,
    Contrast,
    LumaFlip,
    Hue,
    Saturation,
    Filter,
    Noise,
    Cutout,
}

pub const OP_COUNT: usize = 15;

impl AugOp {
    pub const ALL: [AugOp; OP_COUNT] = [
        AugOp::XFlip,
        AugOp::Rot90,
        AugOp::IntTranslate,
        AugOp::IsoScale,
        AugOp::Rotate,
        AugOp::AnisoScale,
        AugOp::FracTranslate,
        AugOp::Brightness,
        AugOp::Contrast,
        AugOp::LumaFlip,
        AugOp::Hue,
        AugOp::Saturation,
        AugOp::Filter,
        AugOp::Noise,
        AugOp::Cutout,
    ];

    pub fn category(self) -> Category {
        use AugOp::*;
        match self {
            XFlip | Rot90 | IntTranslate => Category::Blit,
            IsoScale | Rotate | AnisoScale | FracTranslate => Category::Geometry,
            Brightness | Contrast | LumaFlip | Hue | Saturation => Category::Color,
            Filter => Category::Filter,
            Noise => Category::Noise,
            Cutout => Category::Cutout,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Parameter ranges. Log-scale spreads are standard deviations of `log2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugRanges {
    /// Max integer shift as a fraction of the side.
    pub int_translate: f64,
    pub iso_scale_std: f64,
    /// Max rotation as a fraction of half a turn.
    pub rotate_max: f64,
    pub aniso_std: f64,
    /// Std of fractional shift as a fraction of the side.
    pub frac_translate_std: f64,
    pub brightness_std: f64,
    pub contrast_std: f64,
    /// Max hue rotation as a fraction of half a turn.
    pub hue_max: f64,
    pub saturation_std: f64,
    /// Std of `log2` band gains.
    pub filter_std: f64,
    /// Std of the per-sample noise amplitude.
    pub noise_std: f64,
    /// Cutout side as a fraction of the image side.
    pub cutout_size: f64,
}

impl Default for AugRanges {
    fn default() -> Self {
        Self {
            int_translate: 0.125,
            iso_scale_std: 0.2,
            rotate_max: 1.0,
            aniso_std: 0.2,
            frac_translate_std: 0.125,
            brightness_std: 0.2,
            contrast_std: 0.5,
            hue_max: 1.0,
            saturation_std: 1.0,
            filter_std: 1.0,
            noise_std: 0.1,
            cutout_size: 0.5,
        }
    }
}

/// Everything drawn for one sample. Unfired operations hold identity values.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePlan {
    pub fired: [bool; OP_COUNT],
    pub xflip: bool,
    /// Quarter turns counter-clockwise.
    pub rot90: u8,
    /// Cyclic pixel shift `(dx, dy)`.
    pub shift: (i64, i64),
    /// Forward geometry about the image centre, pixel units: `dst = A·src + t`.
    pub affine: [[f64; 2]; 2],
    pub translate: [f64; 2],
    /// `y = M·x + o` over channels, row-major `C×C`.
    pub color: Vec<f64>,
    pub color_offset: Vec<f64>,
    /// Gains for four bands, finest first.
    pub band_gains: [f64; 4],
    pub noise_sigma: f64,
    /// Cutout centre in `[0, 1)²` and half side as a fraction, when fired.
    pub cutout: Option<[f64; 3]>,
}

impl SamplePlan {
    pub fn identity(channels: usize) -> Self {
        let mut color = vec![0.0; channels * channels];
        for c in 0..channels {
            color[c * channels + c] = 1.0;
        }
        Self {
            fired: [false; OP_COUNT],
            xflip: false,
            rot90: 0,
            shift: (0, 0),
            affine: [[1.0, 0.0], [0.0, 1.0]],
            translate: [0.0, 0.0],
            color,
            color_offset: vec![0.0; channels],
            band_gains: [1.0; 4],
            noise_sigma: 0.0,
            cutout: None,
        }
    }

    pub fn any_fired(&self) -> bool {
        self.fired.iter().any(|&f| f)
    }

    pub fn fired_in(&self, cat: Category) -> bool {
        cat.ops().any(|op| self.fired[op.index()])
    }
}

/// Per-batch draws, plus the noise field so application is deterministic.
#[derive(Clone, Debug, PartialEq)]
pub struct AugPlan {
    pub samples: Vec<SamplePlan>,
    /// Unit Gaussian field shaped like the batch; empty when noise is off.
    pub noise: Vec<f64>,
}

impl AugPlan {
    pub fn identity(batch: usize, channels: usize) -> Self {
        Self {
            samples: vec![SamplePlan::identity(channels); batch],
            noise: Vec::new(),
        }
    }

    pub fn fire_counts(&self) -> [usize; OP_COUNT] {
        let mut counts = [0; OP_COUNT];
        for s in &self.samples {
            for (c, &f) in counts.iter_mut().zip(&s.fired) {
                *c += f as usize;
            }
        }
        counts
    }
}

#[derive(Clone, Debug)]
pub struct AugPipeline {
    categories: Vec<Category>,
    pub p: f64,
    pub ranges: AugRanges,
    rng: ChaCha8Rng,
}

impl AugPipeline {
    /// Categories are deduplicated and put in application order.
    pub fn new(categories: &[Category], seed: u64) -> Self {
        let mut categories = categories.to_vec();
        categories.sort();
        categories.dedup();
        Self {
            categories,
            p: 0.0,
            ranges: AugRanges::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// `"bg"` (blit, geometry), `"bgcfnc"` (all six) or `"none"`.
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        Ok(Self::new(&preset_categories(name)?, seed))
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn enabled(&self, cat: Category) -> bool {
        self.categories.contains(&cat)
    }

    pub fn ops(&self) -> impl Iterator<Item = AugOp> + '_ {
        self.categories.iter().flat_map(|c| c.ops())
    }

    /// Raw stream state, for checkpointing.
    pub fn rng_state(&self) -> ([u8; 32], u128) {
        (self.rng.get_seed(), self.rng.get_word_pos())
    }

    pub fn restore_rng(&mut self, seed: [u8; 32], word_pos: u128) {
        self.rng = ChaCha8Rng::from_seed(seed);
        self.rng.set_word_pos(word_pos);
    }

    /// Draws firing decisions and parameters for a batch. Coins and
    /// parameters are drawn for every enabled op whether or not it fires,
    /// so the stream position does not depend on `p`.
    pub fn plan(&mut self, batch: usize, sample_shape: &[usize]) -> AugPlan {
        let image = sample_shape.len() == 3;
        let channels = if image { sample_shape[0] } else { 1 };
        let (h, w) = if image { (sample_shape[1], sample_shape[2]) } else { (1, 1) };
        let ops: Vec<AugOp> = self.ops().collect();
        let r = self.ranges.clone();
        let p = self.p;
        let rng = &mut self.rng;
        let mut samples = Vec::with_capacity(batch);
        for _ in 0..batch {
            let mut s = SamplePlan::identity(channels);
            let mut geo = [[1.0, 0.0], [0.0, 1.0]];
            let mut color = Affine4::identity();
            for &op in &ops {
                let fire = rng.random::<f64>() < p && image;
                let u: [f64; 2] = [rng.random(), rng.random()];
                let g: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
                s.fired[op.index()] = fire;
                if !fire {
                    continue;
                }
                let sym = |v: f64, max: f64| (v * 2.0 - 1.0) * max;
                match op {
                    AugOp::XFlip => s.xflip = true,
                    AugOp::Rot90 => s.rot90 = 1 + ((u[0] * 3.0) as u8).min(2),
                    AugOp::IntTranslate => {
                        s.shift = (
                            (sym(u[0], r.int_translate) * w as f64).round() as i64,
                            (sym(u[1], r.int_translate) * h as f64).round() as i64,
                        );
                    }
                    AugOp::IsoScale => geo = mat_mul(scale2(2f64.powf(g[0] * r.iso_scale_std)), geo),
                    AugOp::Rotate => geo = mat_mul(rot2(sym(u[0], r.rotate_max) * PI), geo),
                    AugOp::AnisoScale => {
                        let a = 2f64.powf(g[0] * r.aniso_std);
                        geo = mat_mul([[a, 0.0], [0.0, 1.0 / a]], geo);
                    }
                    AugOp::FracTranslate => {
                        s.translate = [g[0] * r.frac_translate_std * w as f64, g[1] * r.frac_translate_std * h as f64];
                    }
                    AugOp::Brightness => color = Affine4::translate(g[0] * r.brightness_std).then(&color),
                    AugOp::Contrast => color = Affine4::scale(2f64.powf(g[0] * r.contrast_std)).then(&color),
                    AugOp::LumaFlip => color = Affine4::luma_flip().then(&color),
                    AugOp::Hue => color = Affine4::hue(sym(u[0], r.hue_max) * PI).then(&color),
                    AugOp::Saturation => {
                        color = Affine4::saturation(2f64.powf(g[0] * r.saturation_std)).then(&color)
                    }
                    AugOp::Filter => {
                        let mut lin = g.map(|v| 2f64.powf(v * r.filter_std));
                        let rms = (lin.iter().map(|v| v * v).sum::<f64>() / 4.0).sqrt();
                        lin.iter_mut().for_each(|v| *v /= rms);
                        s.band_gains = lin;
                    }
                    AugOp::Noise => s.noise_sigma = (g[0] * r.noise_std).abs(),
                    AugOp::Cutout => s.cutout = Some([u[0], u[1], r.cutout_size / 2.0]),
                }
            }
            s.affine = geo;
            if s.fired_in(Category::Color) {
                let (m, o) = color.for_channels(channels);
                s.color = m;
                s.color_offset = o;
            }
            samples.push(s);
        }
        let noise = if samples.iter().any(|s| s.fired[AugOp::Noise.index()]) {
            let n = batch * sample_shape.iter().product::<usize>();
            (0..n).map(|_| rng.sample(StandardNormal)).collect()
        } else {
            Vec::new()
        };
        AugPlan { samples, noise }
    }

    /// Augments a batch with fresh draws. Rank-2 (vector) batches pass
    /// through unchanged.
    pub fn augment(&mut self, images: &Tensor) -> Result<Tensor> {
        let shape = images.shape();
        if shape.len() != 4 || self.categories.is_empty() {
            return Ok(images.clone());
        }
        let plan = self.plan(shape[0], &shape[1..]);
        apply_plan(&plan, images)
    }
}

pub fn preset_categories(name: &str) -> Result<Vec<Category>> {
    use Category::*;
    match name {
        "bg" => Ok(vec![Blit, Geometry]),
        "bgcfnc" => Ok(Category::ALL.to_vec()),
        "none" | "" => Ok(Vec::new()),
        other => Err(contract(format!("unknown augmentation preset `{other}` (expected bg, bgcfnc or none)"))),
    }
}

/// Applies a precomputed plan. When nothing fires the input is returned
/// as is.
pub fn apply_plan(plan: &AugPlan, images: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = *images.shape() else {
        return Ok(images.clone());
    };
    if plan.samples.len() != n {
        return Err(contract(format!("plan covers {} samples, batch has {n}", plan.samples.len())));
    }
    let any = |cat: Category| plan.samples.iter().any(|s| s.fired_in(cat));
    let mut x = images.clone();

    if any(Category::Blit) || any(Category::Geometry) {
        let maps = plan.samples.iter().map(|s| Arc::new(warp::sample_map(s, (h, w)))).collect();
        x = x.spatial_map(&MapBatch::per_sample(maps))?;
    }

    if any(Category::Color) {
        let mut m = Vec::with_capacity(n * c * c);
        let mut o = Vec::with_capacity(n * c);
        for s in &plan.samples {
            if s.color.len() != c * c || s.color_offset.len() != c {
                return Err(contract("color plan does not match channel count"));
            }
            m.extend_from_slice(&s.color);
            o.extend_from_slice(&s.color_offset);
        }
        let m = Tensor::constant(Array::new(vec![n, c, c, 1, 1], m)?);
        let o = Tensor::constant(Array::new(vec![n, c, 1, 1], o)?);
        let mixed = x.reshape(&[n, 1, c, h, w])?.mul(&m)?.sum_axes_keepdim(&[2])?;
        x = mixed.reshape(&[n, c, h, w])?.add(&o)?;
    }

    if any(Category::Filter) {
        let bands = warp::bands(&x)?;
        let mut out = x.clone();
        for (i, band) in bands.iter().enumerate() {
            let g: Vec<f64> = plan.samples.iter().map(|s| s.band_gains[i] - 1.0).collect();
            let g = Tensor::constant(Array::new(vec![n, 1, 1, 1], g)?);
            out = out.add(&band.mul(&g)?)?;
        }
        x = out;
    }

    if any(Category::Noise) {
        if plan.noise.len() != n * c * h * w {
            return Err(contract("noise field does not match batch"));
        }
        let per = c * h * w;
        let field: Vec<f64> = plan
            .noise
            .iter()
            .enumerate()
            .map(|(i, &z)| z * plan.samples[i / per].noise_sigma)
            .collect();
        x = x.add(&Tensor::constant(Array::new(vec![n, c, h, w], field)?))?;
    }

    if any(Category::Cutout) {
        let mut mask = vec![1.0; n * h * w];
        for (i, s) in plan.samples.iter().enumerate() {
            let Some([cx, cy, half]) = s.cutout else { continue };
            for y in 0..h {
                let fy = (y as f64 + 0.5) / h as f64;
                for xx in 0..w {
                    let fx = (xx as f64 + 0.5) / w as f64;
                    if (fx - cx).abs() < half && (fy - cy).abs() < half {
                        mask[(i * h + y) * w + xx] = 0.0;
                    }
                }
            }
        }
        x = x.mul(&Tensor::constant(Array::new(vec![n, 1, h, w], mask)?))?;
    }
    Ok(x)
}
