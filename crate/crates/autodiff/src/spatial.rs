//! Sparse linear maps over the spatial plane of an image.
//!
//! Resampling, flips, rotations, pooling and blurs are all linear in the
//! pixels. Representing them as a sparse matrix acting on each `H*W`
//! channel plane gives one primitive whose adjoint is its transpose.

use std::sync::{Arc, OnceLock};

#[derive(Debug)]
pub struct SpatialMap {
    in_hw: (usize, usize),
    out_hw: (usize, usize),
    // CSR over output pixels.
    row_start: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    transposed: OnceLock<Arc<SpatialMap>>,
}

impl SpatialMap {
    /// Builds a map from per-output-pixel `(input_pixel, weight)` lists.
    /// Zero weights are dropped so exact copies stay exact.
    pub fn from_rows(
        in_hw: (usize, usize),
        out_hw: (usize, usize),
        rows: impl IntoIterator<Item = Vec<(usize, f64)>>,
    ) -> Self {
        let in_len = in_hw.0 * in_hw.1;
        let mut row_start = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for row in rows {
            for (c, v) in row {
                assert!(c < in_len, "input pixel {c} out of range");
                if v != 0.0 {
                    cols.push(c as u32);
                    vals.push(v);
                }
            }
            row_start.push(cols.len());
        }
        assert_eq!(row_start.len() - 1, out_hw.0 * out_hw.1, "row count mismatch");
        Self {
            in_hw,
            out_hw,
            row_start,
            cols,
            vals,
            transposed: OnceLock::new(),
        }
    }

    pub fn identity(hw: (usize, usize)) -> Self {
        Self::from_rows(hw, hw, (0..hw.0 * hw.1).map(|i| vec![(i, 1.0)]))
    }

    pub fn in_hw(&self) -> (usize, usize) {
        self.in_hw
    }

    pub fn out_hw(&self) -> (usize, usize) {
        self.out_hw
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `out[r] = sum_k vals[k] * input[cols[k]]` for one plane.
    pub fn apply_plane(&self, input: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_start[r]..self.row_start[r + 1] {
                acc += self.vals[k] * input[self.cols[k] as usize];
            }
            *o = acc;
        }
    }

    pub fn transposed(&self) -> Arc<SpatialMap> {
        self.transposed
            .get_or_init(|| {
                let n_in = self.in_hw.0 * self.in_hw.1;
                let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_in];
                for r in 0..self.row_start.len() - 1 {
                    for k in self.row_start[r]..self.row_start[r + 1] {
                        rows[self.cols[k] as usize].push((r, self.vals[k]));
                    }
                }
                Arc::new(SpatialMap::from_rows(self.out_hw, self.in_hw, rows))
            })
            .clone()
    }
}

/// One shared map, or one map per batch sample.
#[derive(Clone, Debug)]
pub struct MapBatch {
    maps: Arc<Vec<Arc<SpatialMap>>>,
}

impl MapBatch {
    pub fn shared(map: Arc<SpatialMap>) -> Self {
        Self {
            maps: Arc::new(vec![map]),
        }
    }

    pub fn per_sample(maps: Vec<Arc<SpatialMap>>) -> Self {
        assert!(!maps.is_empty());
        let hw = (maps[0].in_hw, maps[0].out_hw);
        assert!(maps.iter().all(|m| (m.in_hw, m.out_hw) == hw), "maps disagree on size");
        Self { maps: Arc::new(maps) }
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn get(&self, sample: usize) -> &SpatialMap {
        if self.maps.len() == 1 {
            &self.maps[0]
        } else {
            &self.maps[sample]
        }
    }

    pub fn in_hw(&self) -> (usize, usize) {
        self.maps[0].in_hw
    }

    pub fn out_hw(&self) -> (usize, usize) {
        self.maps[0].out_hw
    }

    pub fn transposed(&self) -> Self {
        Self {
            maps: Arc::new(self.maps.iter().map(|m| m.transposed()).collect()),
        }
    }
}

/// Bilinear 2x upsampling with edge clamping (half-pixel centres).
pub fn upsample2x(hw: (usize, usize)) -> SpatialMap {
    let (h, w) = hw;
    let axis = |i: usize, n: usize| -> [(usize, f64); 2] {
        let src = (i as f64 + 0.5) / 2.0 - 0.5;
        let lo = src.floor();
        let t = src - lo;
        let clamp = |v: f64| v.max(0.0).min(n as f64 - 1.0) as usize;
        [(clamp(lo), 1.0 - t), (clamp(lo + 1.0), t)]
    };
    let rows = (0..2 * h).flat_map(|i| {
        (0..2 * w).map(move |j| {
            let mut row = Vec::with_capacity(4);
            for (yi, wy) in axis(i, h) {
                for (xj, wx) in axis(j, w) {
                    row.push((yi * w + xj, wy * wx));
                }
            }
            row
        })
    });
    SpatialMap::from_rows(hw, (2 * h, 2 * w), rows)
}

/// 2x2 average pooling.
pub fn avgpool2x(hw: (usize, usize)) -> SpatialMap {
    let (h, w) = hw;
    let (oh, ow) = (h / 2, w / 2);
    let rows = (0..oh).flat_map(|i| {
        (0..ow).map(move |j| {
            vec![
                ((2 * i) * w + 2 * j, 0.25),
                ((2 * i) * w + 2 * j + 1, 0.25),
                ((2 * i + 1) * w + 2 * j, 0.25),
                ((2 * i + 1) * w + 2 * j + 1, 0.25),
            ]
        })
    });
    SpatialMap::from_rows(hw, (oh, ow), rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_preserves_constants() {
        let m = upsample2x((3, 4));
        let mut out = vec![0.0; 6 * 8];
        m.apply_plane(&[2.5; 12], &mut out);
        assert!(out.iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn transpose_is_adjoint() {
        let m = upsample2x((2, 3));
        let x: Vec<f64> = (0..6).map(|i| i as f64 * 0.3 - 1.0).collect();
        let y: Vec<f64> = (0..24).map(|i| (i as f64).sin()).collect();
        let mut mx = vec![0.0; 24];
        m.apply_plane(&x, &mut mx);
        let mut mty = vec![0.0; 6];
        m.transposed().apply_plane(&y, &mut mty);
        let lhs: f64 = mx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&mty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
