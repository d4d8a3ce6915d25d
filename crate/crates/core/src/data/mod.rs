//! Training sets, toy stand-in data and image preparation.

mod io;
mod prep;
pub mod toy;

use scarcegan_autodiff::Array;

use crate::error::{contract, Result};

pub use io::{list_images as list_image_files, load_image, load_image_dir, save_png, to_rgb8};
pub use prep::{load_prepared, prep_data, DatasetSpec, Manifest, ManifestEntry, Rejected, MANIFEST_FILE};

/// In-memory training set. With `xflip`, image datasets expose a mirrored
/// copy of every sample after the originals, doubling `len()` without
/// storing the copies.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    sample_shape: Vec<usize>,
    base: Vec<f64>,
    count: usize,
    xflip: bool,
}

impl Dataset {
    /// `samples` is `[n, ...]`. Flips apply only to `[n, C, H, W]`.
    pub fn new(samples: Array, xflip: bool) -> Result<Self> {
        let shape = samples.shape().to_vec();
        if shape.is_empty() || shape[0] == 0 {
            return Err(contract("dataset is empty"));
        }
        Ok(Self {
            xflip: xflip && shape.len() == 4,
            count: shape[0],
            sample_shape: shape[1..].to_vec(),
            base: samples.into_data(),
        })
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    /// Stored samples, without virtual flips.
    pub fn base_len(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.count * if self.xflip { 2 } else { 1 }
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn xflip(&self) -> bool {
        self.xflip
    }

    fn per(&self) -> usize {
        self.sample_shape.iter().product()
    }

    fn write_sample(&self, index: usize, out: &mut [f64]) {
        let per = self.per();
        let (src, flip) = if index < self.count {
            (index, false)
        } else {
            (index - self.count, true)
        };
        let data = &self.base[src * per..(src + 1) * per];
        if !flip {
            out.copy_from_slice(data);
            return;
        }
        let w = self.sample_shape[2];
        for (row_out, row_in) in out.chunks_mut(w).zip(data.chunks(w)) {
            for (o, i) in row_out.iter_mut().zip(row_in.iter().rev()) {
                *o = *i;
            }
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Array {
        let per = self.per();
        let mut data = vec![0.0; indices.len() * per];
        for (k, &i) in indices.iter().enumerate() {
            self.write_sample(i % self.len(), &mut data[k * per..(k + 1) * per]);
        }
        let mut shape = vec![indices.len()];
        shape.extend(&self.sample_shape);
        Array::new(shape, data).expect("batch shape")
    }

    /// Every effective sample, flips included.
    pub fn all(&self) -> Array {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }
}
