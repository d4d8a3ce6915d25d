//! Heuristic detection of augmentations leaking into generated samples.
//!
//! A leaking generator reproduces augmented variants of its own outputs, so
//! the sample set contains pairs related by an augmentation transform. For
//! blit, geometry, color, filter and noise the score of a category is the
//! fraction of samples that have such a partner (a near-duplicate after
//! applying one of the category's probe transforms, while not being a
//! near-duplicate outright). For cutout it is the fraction of samples
//! holding a flat, near-zero square patch a quarter of the side wide.

use std::collections::BTreeMap;

use scarcegan_autodiff::{Array, SpatialMap, Tensor};

use super::warp::{self, rot2, scale2, Affine4};
use super::{AugOp, AugPipeline, Category, SamplePlan};
use crate::error::{contract, Result};

pub const LEAKAGE_WARN_THRESHOLD: f64 = 0.05;
pub const MIN_PROBE_SAMPLES: usize = 256;

/// Relative distance below which two signatures count as the same image.
const DUPLICATE_TOL: f64 = 0.1;

pub type LeakageReport = BTreeMap<Category, f64>;

pub fn leakage_probe(pipeline: &AugPipeline, samples: &Array) -> Result<LeakageReport> {
    let mut report = LeakageReport::new();
    if pipeline.categories().is_empty() {
        return Ok(report);
    }
    let [n, c, h, w] = *samples.shape() else {
        return Err(contract(format!("leakage probe expects [n, C, H, W], got {:?}", samples.shape())));
    };
    if n < MIN_PROBE_SAMPLES {
        return Err(contract(format!("leakage probe needs at least {MIN_PROBE_SAMPLES} samples, got {n}")));
    }
    let plane = c * h * w;
    let images: Vec<&[f64]> = samples.data().chunks(plane).collect();
    let small = |img: &[f64]| downsample(img, c, h, w);
    let plain: Vec<Vec<f64>> = images.iter().map(|i| small(i)).collect();
    for &cat in pipeline.categories() {
        let score = match cat {
            Category::Blit | Category::Geometry | Category::Color => {
                let transforms = probe_transforms(cat, c, (h, w));
                let variants: Vec<Vec<Vec<f64>>> = images
                    .iter()
                    .map(|img| transforms.iter().map(|t| small(&t(img))).collect())
                    .collect();
                partner_fraction(&plain, &plain, &variants)
            }
            Category::Filter => {
                let sig = band_signatures(samples)?;
                let v: Vec<Vec<Vec<f64>>> = sig.iter().map(|s| vec![s.clone()]).collect();
                partner_fraction(&plain, &sig, &v)
            }
            Category::Noise => {
                let blurred = blurred(samples)?;
                let sig: Vec<Vec<f64>> = blurred.data().chunks(plane).map(small).collect();
                let v: Vec<Vec<Vec<f64>>> = sig.iter().map(|s| vec![s.clone()]).collect();
                partner_fraction(&plain, &sig, &v)
            }
            Category::Cutout => {
                let flagged = images.iter().filter(|img| has_flat_patch(img, c, h, w)).count();
                flagged as f64 / n as f64
            }
        };
        report.insert(cat, score);
    }
    Ok(report)
}

type Transform = Box<dyn Fn(&[f64]) -> Vec<f64>>;

fn spatial(map: SpatialMap, c: usize) -> Transform {
    Box::new(move |img: &[f64]| {
        let p = img.len() / c;
        let mut out = vec![0.0; img.len()];
        for ch in 0..c {
            map.apply_plane(&img[ch * p..(ch + 1) * p], &mut out[ch * p..(ch + 1) * p]);
        }
        out
    })
}

fn probe_transforms(cat: Category, c: usize, hw: (usize, usize)) -> Vec<Transform> {
    let plan = |f: &dyn Fn(&mut SamplePlan)| {
        let mut s = SamplePlan::identity(c);
        f(&mut s);
        warp::sample_map(&s, hw)
    };
    match cat {
        Category::Blit => {
            let mut out = vec![spatial(plan(&|s| s.xflip = true), c)];
            for k in 1..4 {
                out.push(spatial(plan(&|s| s.rot90 = k), c));
            }
            out
        }
        Category::Geometry => {
            let mut mats = Vec::new();
            for deg in [-60.0f64, -30.0, -15.0, 15.0, 30.0, 60.0] {
                mats.push(rot2(deg.to_radians()));
            }
            for s in [0.8, 1.25] {
                mats.push(scale2(s));
            }
            mats.into_iter()
                .map(|m| {
                    spatial(
                        plan(&|s| {
                            s.affine = m;
                            s.fired[AugOp::Rotate.index()] = true;
                        }),
                        c,
                    )
                })
                .collect()
        }
        Category::Color => {
            let mut mats = vec![Affine4::luma_flip()];
            if c == 3 {
                mats.push(Affine4::hue(2.0 * std::f64::consts::FRAC_PI_3));
                mats.push(Affine4::hue(-2.0 * std::f64::consts::FRAC_PI_3));
            }
            mats.into_iter()
                .map(|m| {
                    let (mat, off) = m.for_channels(c);
                    Box::new(move |img: &[f64]| {
                        let p = img.len() / c;
                        let mut out = vec![0.0; img.len()];
                        for i in 0..c {
                            for k in 0..p {
                                out[i * p + k] = off[i] + (0..c).map(|j| mat[i * c + j] * img[j * p + k]).sum::<f64>();
                            }
                        }
                        out
                    }) as Transform
                })
                .collect()
        }
        _ => Vec::new(),
    }
}

/// Area-averages each channel down to at most 8×8.
fn downsample(img: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (fy, fx) = (h.div_ceil(8), w.div_ceil(8));
    let (oh, ow) = (h / fy, w / fx);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh * fy {
            for x in 0..ow * fx {
                out[(ch * oh + y / fy) * ow + x / fx] += img[(ch * h + y) * w + x];
            }
        }
    }
    let k = (fy * fx) as f64;
    out.iter_mut().for_each(|v| *v /= k);
    out
}

fn rel_dist(a: &[f64], b: &[f64]) -> f64 {
    let (mut d, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        d += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    let scale = ((na + nb) / 2.0).sqrt();
    if scale == 0.0 {
        0.0
    } else {
        d.sqrt() / scale
    }
}

/// Fraction of `i` with some `j ≠ i` such that a variant of `i` matches
/// `targets[j]`, while `plain[i]` and `plain[j]` differ.
fn partner_fraction(plain: &[Vec<f64>], targets: &[Vec<f64>], variants: &[Vec<Vec<f64>>]) -> f64 {
    let n = plain.len();
    let hits = (0..n)
        .filter(|&i| {
            (0..n).any(|j| {
                j != i
                    && rel_dist(&plain[i], &plain[j]) >= DUPLICATE_TOL
                    && variants[i].iter().any(|v| rel_dist(v, &targets[j]) < DUPLICATE_TOL)
            })
        })
        .count();
    hits as f64 / n as f64
}

/// Per-band unit-energy signatures, so images differing only by band gains
/// coincide.
fn band_signatures(samples: &Array) -> Result<Vec<Vec<f64>>> {
    let n = samples.shape()[0];
    let bands = warp::bands(&Tensor::constant(samples.clone()))?;
    let per = samples.len() / n;
    Ok((0..n)
        .map(|i| {
            bands
                .iter()
                .take(3)
                .flat_map(|b| {
                    let v = &b.data()[i * per..(i + 1) * per];
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                    v.iter().map(move |x| x / norm)
                })
                .collect()
        })
        .collect())
}

fn blurred(samples: &Array) -> Result<Array> {
    let bands = warp::bands(&Tensor::constant(samples.clone()))?;
    // Drop the finest band: x minus (x − blur₁) is blur₁.
    let x = Tensor::constant(samples.clone());
    Ok(x.sub(&bands[0])?.value().clone())
}

fn has_flat_patch(img: &[f64], c: usize, h: usize, w: usize) -> bool {
    let (ph, pw) = ((h / 4).max(1), (w / 4).max(1));
    let near_zero = |y: usize, x: usize| (0..c).all(|ch| img[(ch * h + y) * w + x].abs() < 0.02);
    // Summed-area table of near-zero pixels.
    let mut sat = vec![0usize; (h + 1) * (w + 1)];
    for y in 0..h {
        for x in 0..w {
            sat[(y + 1) * (w + 1) + x + 1] =
                near_zero(y, x) as usize + sat[y * (w + 1) + x + 1] + sat[(y + 1) * (w + 1) + x] - sat[y * (w + 1) + x];
        }
    }
    (0..=h - ph).any(|y| {
        (0..=w - pw).any(|x| {
            let s = sat[(y + ph) * (w + 1) + x + pw] + sat[y * (w + 1) + x] - sat[y * (w + 1) + x + pw] - sat[(y + ph) * (w + 1) + x];
            s == ph * pw
        })
    })
}
