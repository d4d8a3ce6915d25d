//! Plain row-major `f64` storage with shape bookkeeping.
//!
//! `Array` is the value type carried by every [`Tensor`](crate::Tensor); it
//! has no notion of gradients and is `Send + Sync`, so parameter snapshots
//! can be shipped to other threads.

use crate::error::{AutodiffError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let expected = numel(&shape);
        if expected != data.len() {
            return Err(AutodiffError::DataLength {
                shape,
                len: data.len(),
                expected,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = numel(shape);
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element array.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on array of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Array) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Elementwise binary operation with trailing-dimension broadcasting.
    pub(crate) fn zip_broadcast(
        &self,
        other: &Array,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Array> {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Ok(Array {
                shape: self.shape.clone(),
                data,
            });
        }
        let shape = broadcast_shapes(&self.shape, &other.shape, op)?;
        let data = if other.data.len() == 1 {
            let b = other.data[0];
            let a_off = broadcast_offsets(&self.shape, &shape);
            a_off.iter().map(|&i| f(self.data[i], b)).collect()
        } else {
            let a_off = broadcast_offsets(&self.shape, &shape);
            let b_off = broadcast_offsets(&other.shape, &shape);
            a_off
                .iter()
                .zip(&b_off)
                .map(|(&i, &j)| f(self.data[i], other.data[j]))
                .collect()
        };
        Ok(Array { shape, data })
    }

    /// Replicates `self` along broadcast dimensions to `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Array> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        check_broadcastable(&self.shape, shape, "broadcast_to")?;
        let off = broadcast_offsets(&self.shape, shape);
        Ok(Array {
            shape: shape.to_vec(),
            data: off.iter().map(|&i| self.data[i]).collect(),
        })
    }

    /// Sums `self` down to `shape`, the adjoint of [`Array::broadcast_to`].
    pub fn sum_to(&self, shape: &[usize]) -> Result<Array> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        check_broadcastable(shape, &self.shape, "sum_to")?;
        let off = broadcast_offsets(shape, &self.shape);
        let mut out = vec![0.0; numel(shape)];
        for (&o, &v) in off.iter().zip(&self.data) {
            out[o] += v;
        }
        Ok(Array {
            shape: shape.to_vec(),
            data: out,
        })
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

fn check_broadcastable(src: &[usize], dst: &[usize], op: &'static str) -> Result<()> {
    let ok = src.len() <= dst.len()
        && src
            .iter()
            .rev()
            .zip(dst.iter().rev())
            .all(|(&s, &d)| s == d || s == 1);
    if ok {
        Ok(())
    } else {
        Err(AutodiffError::ShapeMismatch {
            op,
            lhs: src.to_vec(),
            rhs: dst.to_vec(),
        })
    }
}

/// For each flat index of `dst`, the flat index of `src` it reads when
/// `src` is broadcast to `dst`.
pub(crate) fn broadcast_offsets(src: &[usize], dst: &[usize]) -> Vec<usize> {
    let nd = dst.len();
    let lead = nd - src.len();
    let mut src_strides = vec![0usize; nd];
    let mut stride = 1;
    for i in (0..src.len()).rev() {
        src_strides[lead + i] = if src[i] == 1 { 0 } else { stride };
        stride *= src[i];
    }
    let total = numel(dst);
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return out;
    }
    let mut idx = vec![0usize; nd];
    let mut offset = 0usize;
    for _ in 0..total {
        out.push(offset);
        for d in (0..nd).rev() {
            idx[d] += 1;
            offset += src_strides[d];
            if idx[d] < dst[d] {
                break;
            }
            offset -= src_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_trailing_alignment() {
        assert_eq!(broadcast_shapes(&[2, 3], &[3], "t").unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shapes(&[4, 1, 3], &[2, 1], "t").unwrap(), vec![4, 2, 3]);
        assert!(broadcast_shapes(&[2, 3], &[2], "t").is_err());
    }

    #[test]
    fn sum_to_matches_explicit_loop() {
        let a = Array::from_fn(&[2, 3, 4], |i| i as f64);
        let s = a.sum_to(&[3, 1]).unwrap();
        let mut expect = [0.0; 3];
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    expect[j] += a.data()[i * 12 + j * 4 + k];
                }
            }
        }
        assert_eq!(s.data(), &expect);
    }

    #[test]
    fn data_length_checked() {
        assert!(matches!(
            Array::new(vec![2, 2], vec![1.0; 3]),
            Err(AutodiffError::DataLength { .. })
        ));
    }
}
