//! Deterministic feature embeddings standing in for an Inception network.
//!
//! Absolute distances computed on these features are only comparable
//! between runs that share `(kind, seed, dim, input shape)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scarcegan_autodiff::{avgpool2x, Array, MapBatch, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{contract, Result};
use crate::networks::LRELU_SLOPE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorKind {
    /// Fixed random conv stack (images) or random tanh features (vectors).
    SeededRandomConv,
    /// Random features followed by a whitening projection fitted on a
    /// reference set.
    TrainedProbe,
    /// The flattened sample itself; `dim` is ignored.
    RawFlatten,
}

impl ExtractorKind {
    pub fn name(self) -> &'static str {
        match self {
            ExtractorKind::SeededRandomConv => "seeded-random-conv",
            ExtractorKind::TrainedProbe => "trained-probe",
            ExtractorKind::RawFlatten => "raw-flatten",
        }
    }
}

impl fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExtractorKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seeded-random-conv" => Ok(Self::SeededRandomConv),
            "trained-probe" => Ok(Self::TrainedProbe),
            "raw-flatten" => Ok(Self::RawFlatten),
            other => Err(contract(format!(
                "unknown extractor `{other}` (expected seeded-random-conv, trained-probe or raw-flatten)"
            ))),
        }
    }
}

pub const DEFAULT_FEATURE_DIM: usize = 64;

const CONV_WIDTHS: [usize; 3] = [16, 32, 32];

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    kind: ExtractorKind,
    seed: u64,
    dim: usize,
    input_shape: Vec<usize>,
    weights: Vec<Array>,
    /// `(mean, projection [raw, dim])` applied after the random stage.
    fitted: Option<(Vec<f64>, Array)>,
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Array {
    use rand::Rng;
    Array::from_fn(shape, |_| rng.sample::<f64, _>(rand_distr::StandardNormal) * scale)
}

impl FeatureExtractor {
    /// Builds a random-feature or raw extractor for samples of
    /// `input_shape` (`[C, H, W]` or `[d]`).
    pub fn new(kind: ExtractorKind, seed: u64, dim: usize, input_shape: &[usize]) -> Result<Self> {
        match input_shape.len() {
            1 | 3 => {}
            _ => return Err(contract(format!("unsupported sample shape {input_shape:?}"))),
        }
        if kind != ExtractorKind::RawFlatten && dim == 0 {
            return Err(contract("feature dim must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6b69_645f_6665_6174);
        let mut weights = Vec::new();
        if kind != ExtractorKind::RawFlatten {
            if input_shape.len() == 3 {
                let mut cin = input_shape[0];
                for &cout in &CONV_WIDTHS {
                    weights.push(normal(&mut rng, &[cout, cin, 3, 3], (2.0 / (cin * 9) as f64).sqrt()));
                    cin = cout;
                }
            }
            if input_shape.len() == 1 {
                let d = input_shape[0];
                weights.push(normal(&mut rng, &[d, 4 * DEFAULT_FEATURE_DIM], 2.0 / (d as f64).sqrt()));
                weights.push(normal(&mut rng, &[4 * DEFAULT_FEATURE_DIM], 1.0));
            }
            if kind == ExtractorKind::SeededRandomConv {
                let raw = Self::raw_width(input_shape);
                weights.push(normal(&mut rng, &[raw, dim], 1.0 / (raw as f64).sqrt()));
            }
        }
        Ok(Self {
            kind,
            seed,
            dim,
            input_shape: input_shape.to_vec(),
            weights,
            fitted: None,
        })
    }

    /// Random features whitened onto the top `dim` principal directions of
    /// `reference`.
    pub fn trained_probe(seed: u64, dim: usize, reference: &Array) -> Result<Self> {
        let shape = reference.shape();
        if shape.len() < 2 || shape[0] < 2 {
            return Err(contract("probe needs a reference set of at least 2 samples"));
        }
        let mut ex = Self::new(ExtractorKind::TrainedProbe, seed, dim, &shape[1..])?;
        let raw = ex.random_stage(reference)?;
        let (n, r) = (raw.shape()[0], raw.shape()[1]);
        let dim = dim.min(r);
        let x = DMatrix::from_row_slice(n, r, raw.data());
        let mean: Vec<f64> = (0..r).map(|j| x.column(j).sum() / n as f64).collect();
        let mut c = x;
        for j in 0..r {
            c.column_mut(j).add_scalar_mut(-mean[j]);
        }
        let cov = c.transpose() * &c / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut proj = vec![0.0; r * dim];
        for (k, &idx) in order.iter().take(dim).enumerate() {
            let scale = 1.0 / eig.eigenvalues[idx].max(1e-12).sqrt();
            let v = eig.eigenvectors.column(idx);
            // Fix the sign so the fit is reproducible.
            let flip = if v.iter().fold(0.0, |a: f64, &b| if b.abs() > a.abs() { b } else { a }) < 0.0 { -1.0 } else { 1.0 };
            for i in 0..r {
                proj[i * dim + k] = v[i] * scale * flip;
            }
        }
        ex.dim = dim;
        ex.fitted = Some((mean, Array::new(vec![r, dim], proj)?));
        Ok(ex)
    }

    fn raw_width(input_shape: &[usize]) -> usize {
        if input_shape.len() == 3 {
            let c = CONV_WIDTHS[2];
            c * 4 + c
        } else {
            4 * DEFAULT_FEATURE_DIM
        }
    }

    pub fn kind(&self) -> ExtractorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            ExtractorKind::RawFlatten => self.input_shape.iter().product(),
            _ => self.dim,
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Short hash over the configuration and all weights.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{}:{}:{}:{:?}", self.kind, self.seed, self.dim, self.input_shape));
        for w in self.weights.iter().chain(self.fitted.iter().map(|(_, p)| p)) {
            for v in w.data() {
                h.update(v.to_le_bytes());
            }
        }
        if let Some((mean, _)) = &self.fitted {
            for v in mean {
                h.update(v.to_le_bytes());
            }
        }
        format!("{}-{}", self.kind, &hex::encode(h.finalize())[..16])
    }

    fn check(&self, samples: &Array) -> Result<usize> {
        let s = samples.shape();
        if s.len() != self.input_shape.len() + 1 || s[1..] != self.input_shape[..] {
            return Err(contract(format!(
                "extractor expects samples of shape {:?}, got {:?}",
                self.input_shape,
                &s[1.min(s.len())..]
            )));
        }
        Ok(s[0])
    }

    /// Features before any projection, `[n, raw_width]`.
    fn random_stage(&self, samples: &Array) -> Result<Array> {
        let n = self.check(samples)?;
        let gain = std::f64::consts::SQRT_2;
        if self.input_shape.len() == 1 {
            let x = Tensor::constant(samples.clone());
            let w = Tensor::constant(self.weights[0].clone());
            let b = Tensor::constant(self.weights[1].clone());
            return Ok(x.matmul(&w)?.add(&b)?.tanh()?.value().clone());
        }
        let per: usize = self.input_shape.iter().product();
        let raw = Self::raw_width(&self.input_shape);
        let mut out = Vec::with_capacity(n * raw);
        for chunk in samples.data().chunks(per * 32) {
            let m = chunk.len() / per;
            let mut shape = vec![m];
            shape.extend(&self.input_shape);
            let mut h = Tensor::constant(Array::new(shape, chunk.to_vec())?);
            for (i, w) in self.weights.iter().take(3).enumerate() {
                h = h.conv2d(&Tensor::constant(w.clone()), 1, 1)?.leaky_relu(LRELU_SLOPE)?.scale(gain)?;
                let s = h.shape();
                if i < 2 && s[2] >= 4 {
                    let pool = MapBatch::shared(std::sync::Arc::new(avgpool2x((s[2], s[3]))));
                    h = h.spatial_map(&pool)?;
                }
            }
            let s = h.shape().to_vec();
            let (c, hh, ww) = (s[1], s[2], s[3]);
            for img in h.data().chunks(c * hh * ww).take(m) {
                for ch in 0..c {
                    let plane = &img[ch * hh * ww..(ch + 1) * hh * ww];
                    // 2×2 quadrant means.
                    for qy in 0..2 {
                        for qx in 0..2 {
                            let (y0, y1) = (qy * hh / 2, ((qy + 1) * hh / 2).max(qy * hh / 2 + 1).min(hh));
                            let (x0, x1) = (qx * ww / 2, ((qx + 1) * ww / 2).max(qx * ww / 2 + 1).min(ww));
                            let mut t = 0.0;
                            for y in y0..y1 {
                                for x in x0..x1 {
                                    t += plane[y * ww + x];
                                }
                            }
                            out.push(t / ((y1 - y0) * (x1 - x0)) as f64);
                        }
                    }
                }
                for ch in 0..c {
                    let plane = &img[ch * hh * ww..(ch + 1) * hh * ww];
                    let mean = plane.iter().sum::<f64>() / plane.len() as f64;
                    let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane.len() as f64;
                    out.push(var.sqrt());
                }
            }
        }
        Ok(Array::new(vec![n, raw], out)?)
    }

    /// `[n, dim]` features; row `i` depends only on sample `i`.
    pub fn extract(&self, samples: &Array) -> Result<Array> {
        let n = self.check(samples)?;
        let features = match self.kind {
            ExtractorKind::RawFlatten => samples.reshaped(&[n, self.dim()])?,
            ExtractorKind::SeededRandomConv => {
                let raw = self.random_stage(samples)?;
                let proj = Tensor::constant(self.weights.last().expect("projection").clone());
                Tensor::constant(raw).matmul(&proj)?.value().clone()
            }
            ExtractorKind::TrainedProbe => {
                let (mean, proj) = self
                    .fitted
                    .as_ref()
                    .ok_or_else(|| contract("trained probe must be fitted with FeatureExtractor::trained_probe"))?;
                let raw = self.random_stage(samples)?;
                let r = mean.len();
                let centred = Array::from_fn(raw.shape(), |i| raw.data()[i] - mean[i % r]);
                Tensor::constant(centred).matmul(&Tensor::constant(proj.clone()))?.value().clone()
            }
        };
        if !features.all_finite() {
            return Err(contract("non-finite features"));
        }
        Ok(features)
    }
}
