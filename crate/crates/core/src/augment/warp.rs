//! Spatial maps and color matrices behind the augmentation ops.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use scarcegan_autodiff::{MapBatch, SpatialMap, Tensor};

use super::{AugOp, Category, SamplePlan};
use crate::error::Result;

pub(crate) type Mat2 = [[f64; 2]; 2];

pub(crate) fn mat_mul(a: Mat2, b: Mat2) -> Mat2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

pub(crate) fn scale2(s: f64) -> Mat2 {
    [[s, 0.0], [0.0, s]]
}

pub(crate) fn rot2(theta: f64) -> Mat2 {
    let (s, c) = theta.sin_cos();
    [[c, -s], [s, c]]
}

fn inverse(a: Mat2) -> Mat2 {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]]
}

/// Homogeneous RGB transform, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Affine4(pub [[f64; 4]; 4]);

const LUMA: [f64; 3] = [
    0.577_350_269_189_625_8,
    0.577_350_269_189_625_8,
    0.577_350_269_189_625_8,
];

impl Affine4 {
    pub fn identity() -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self(m)
    }

    fn linear(l: [[f64; 3]; 3]) -> Self {
        let mut m = Self::identity();
        for i in 0..3 {
            m.0[i][..3].copy_from_slice(&l[i]);
        }
        m
    }

    pub fn translate(b: f64) -> Self {
        let mut m = Self::identity();
        for row in m.0.iter_mut().take(3) {
            row[3] = b;
        }
        m
    }

    pub fn scale(c: f64) -> Self {
        Self::linear([[c, 0.0, 0.0], [0.0, c, 0.0], [0.0, 0.0, c]])
    }

    /// Householder reflection of the luma axis: `I − 2vvᵀ`.
    pub fn luma_flip() -> Self {
        Self::linear(std::array::from_fn(|i| {
            std::array::from_fn(|j| (i == j) as u8 as f64 - 2.0 * LUMA[i] * LUMA[j])
        }))
    }

    /// Rotation by `theta` about the luma axis.
    pub fn hue(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let v = LUMA;
        let k = [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]];
        Self::linear(std::array::from_fn(|i| {
            std::array::from_fn(|j| c * ((i == j) as u8 as f64) + s * k[i][j] + (1.0 - c) * v[i] * v[j])
        }))
    }

    /// Scales chroma around the luma axis: `vvᵀ + s(I − vvᵀ)`.
    pub fn saturation(sat: f64) -> Self {
        Self::linear(std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                let p = LUMA[i] * LUMA[j];
                p + sat * ((i == j) as u8 as f64 - p)
            })
        }))
    }

    /// `self ∘ prev`: apply `prev` first.
    pub fn then(&self, prev: &Affine4) -> Self {
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..4).map(|k| self.0[i][k] * prev.0[k][j]).sum();
            }
        }
        Self(out)
    }

    /// Channel matrix and offset. A single channel is treated as a grey
    /// pixel on the luma axis, where hue and saturation act trivially.
    pub fn for_channels(&self, channels: usize) -> (Vec<f64>, Vec<f64>) {
        if channels == 3 {
            let m = (0..3).flat_map(|i| self.0[i][..3].to_vec()).collect();
            let o = (0..3).map(|i| self.0[i][3]).collect();
            (m, o)
        } else {
            let m: f64 = (0..3).flat_map(|i| self.0[i][..3].to_vec()).sum::<f64>() / 3.0;
            let o: f64 = (0..3).map(|i| self.0[i][3]).sum::<f64>() / 3.0;
            (vec![m], vec![o])
        }
    }
}

/// Mirror index into `[0, n)` with edge repeat.
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m >= n { period - 1 - m } else { m }) as usize
}

/// Source pixel for a destination pixel under the sample's blits.
fn blit_source(s: &SamplePlan, y: usize, x: usize, hw: (usize, usize)) -> (usize, usize) {
    let (h, w) = hw;
    let mut y = (y as i64 - s.shift.1).rem_euclid(h as i64) as usize;
    let mut x = (x as i64 - s.shift.0).rem_euclid(w as i64) as usize;
    let turns = if h == w { s.rot90 % 4 } else { s.rot90 & 2 };
    for _ in 0..turns {
        if h == w {
            (y, x) = (x, w - 1 - y);
        } else {
            (y, x) = (h - 1 - y, w - 1 - x);
        }
    }
    if s.xflip {
        x = w - 1 - x;
    }
    (y, x)
}

/// Composite map for the blit and geometry stages of one sample.
pub(crate) fn sample_map(s: &SamplePlan, hw: (usize, usize)) -> SpatialMap {
    let (h, w) = hw;
    let geometry = Category::Geometry.ops().any(|op: AugOp| s.fired[op.index()]);
    let inv = inverse(s.affine);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let rows = (0..h * w).map(|i| {
        let (y, x) = (i / w, i % w);
        let taps: Vec<(usize, usize, f64)> = if geometry {
            let dx = x as f64 - cx - s.translate[0];
            let dy = y as f64 - cy - s.translate[1];
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            vec![
                (reflect(y0, h), reflect(x0, w), (1.0 - fx) * (1.0 - fy)),
                (reflect(y0, h), reflect(x0 + 1, w), fx * (1.0 - fy)),
                (reflect(y0 + 1, h), reflect(x0, w), (1.0 - fx) * fy),
                (reflect(y0 + 1, h), reflect(x0 + 1, w), fx * fy),
            ]
        } else {
            vec![(y, x, 1.0)]
        };
        taps.into_iter()
            .map(|(ty, tx, wgt)| {
                let (sy, sx) = blit_source(s, ty, tx, hw);
                (sy * w + sx, wgt)
            })
            .collect()
    });
    SpatialMap::from_rows(hw, hw, rows)
}

/// Sigmas of the three blurs splitting an image into four bands.
pub(crate) const BAND_SIGMAS: [f64; 3] = [1.0, 2.0, 4.0];

fn blur_axis(hw: (usize, usize), sigma: f64, vertical: bool) -> SpatialMap {
    let (h, w) = hw;
    let r = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    let rows = (0..h * w).map(|i| {
        let (y, x) = ((i / w) as i64, (i % w) as i64);
        (-r..=r)
            .zip(&kernel)
            .map(|(k, &g)| {
                let idx = if vertical {
                    reflect(y + k, h) * w + x as usize
                } else {
                    y as usize * w + reflect(x + k, w)
                };
                (idx, g / total)
            })
            .collect()
    });
    SpatialMap::from_rows(hw, hw, rows)
}

fn blur(x: &Tensor, sigma: f64) -> Result<Tensor> {
    type Key = (usize, usize, u64, bool);
    static CACHE: OnceLock<Mutex<HashMap<Key, MapBatch>>> = OnceLock::new();
    let s = x.shape();
    let hw = (s[2], s[3]);
    let get = |vertical: bool| {
        CACHE
            .get_or_init(Default::default)
            .lock()
            .expect("blur cache poisoned")
            .entry((hw.0, hw.1, sigma.to_bits(), vertical))
            .or_insert_with(|| MapBatch::shared(Arc::new(blur_axis(hw, sigma, vertical))))
            .clone()
    };
    Ok(x.spatial_map(&get(false))?.spatial_map(&get(true))?)
}

/// Four bands, finest first, that sum back to `x`.
pub(crate) fn bands(x: &Tensor) -> Result<Vec<Tensor>> {
    let mut levels = vec![x.clone()];
    for sigma in BAND_SIGMAS {
        levels.push(blur(x, sigma)?);
    }
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        out.push(levels[i].sub(&levels[i + 1])?);
    }
    out.push(levels[3].clone());
    Ok(out)
}
