//! Direct-loop 2-D convolution kernels.
//!
//! The three kernels below evaluate the same trilinear form
//! `sum y[n,o,i,j] * x[n,c,i*s+ki-p, j*s+kj-p] * w[o,c,ki,kj]`, each
//! solving for a different operand. Their adjoints are each other, which
//! is what makes recorded backward passes through convolutions closed.

use crate::array::Array;
use crate::error::{AutodiffError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.pad;
        if padded < kernel || self.stride == 0 {
            return None;
        }
        Some((padded - kernel) / self.stride + 1)
    }
}

struct Dims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn for_each_tap(d: &Dims, g: ConvGeom, mut visit: impl FnMut(usize, usize, usize)) {
    let (s, p) = (g.stride as isize, g.pad as isize);
    for n in 0..d.n {
        for o in 0..d.o {
            for c in 0..d.c {
                for ki in 0..d.kh {
                    for kj in 0..d.kw {
                        let wi = ((o * d.c + c) * d.kh + ki) * d.kw + kj;
                        for i in 0..d.oh {
                            let ih = i as isize * s + ki as isize - p;
                            if ih < 0 || ih >= d.h as isize {
                                continue;
                            }
                            let xrow = ((n * d.c + c) * d.h + ih as usize) * d.w;
                            let yrow = ((n * d.o + o) * d.oh + i) * d.ow;
                            for j in 0..d.ow {
                                let iw = j as isize * s + kj as isize - p;
                                if iw < 0 || iw >= d.w as isize {
                                    continue;
                                }
                                visit(xrow + iw as usize, wi, yrow + j);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn expect_rank4(a: &Array, op: &'static str) -> Result<[usize; 4]> {
    match *a.shape() {
        [a0, a1, a2, a3] => Ok([a0, a1, a2, a3]),
        _ => Err(AutodiffError::InvalidShape {
            op,
            message: format!("expected rank-4 tensor, got {:?}", a.shape()),
        }),
    }
}

pub fn conv2d(x: &Array, w: &Array, g: ConvGeom) -> Result<Array> {
    let [n, c, h, wd] = expect_rank4(x, "conv2d")?;
    let [o, wc, kh, kw] = expect_rank4(w, "conv2d")?;
    if wc != c {
        return Err(AutodiffError::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let (oh, ow) = match (g.out_len(h, kh), g.out_len(wd, kw)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(AutodiffError::InvalidShape {
                op: "conv2d",
                message: format!("kernel {kh}x{kw} larger than padded input {h}x{wd}"),
            })
        }
    };
    let d = Dims { n, c, h, w: wd, o, kh, kw, oh, ow };
    let mut y = vec![0.0; n * o * oh * ow];
    let (xd, wdat) = (x.data(), w.data());
    for_each_tap(&d, g, |xi, wi, yi| y[yi] += xd[xi] * wdat[wi]);
    Array::new(vec![n, o, oh, ow], y)
}

/// Adjoint of [`conv2d`] with respect to its input; `in_hw` fixes the
/// spatial size that stride rounding leaves ambiguous.
pub fn conv_transpose2d(y: &Array, w: &Array, g: ConvGeom, in_hw: (usize, usize)) -> Result<Array> {
    let [n, o, oh, ow] = expect_rank4(y, "conv_transpose2d")?;
    let [wo, c, kh, kw] = expect_rank4(w, "conv_transpose2d")?;
    let (h, wd) = in_hw;
    if wo != o || g.out_len(h, kh) != Some(oh) || g.out_len(wd, kw) != Some(ow) {
        return Err(AutodiffError::ShapeMismatch {
            op: "conv_transpose2d",
            lhs: y.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let d = Dims { n, c, h, w: wd, o, kh, kw, oh, ow };
    let mut x = vec![0.0; n * c * h * wd];
    let (yd, wdat) = (y.data(), w.data());
    for_each_tap(&d, g, |xi, wi, yi| x[xi] += yd[yi] * wdat[wi]);
    Array::new(vec![n, c, h, wd], x)
}

/// Adjoint of [`conv2d`] with respect to its weights.
pub fn conv_weight_grad(x: &Array, y: &Array, g: ConvGeom, kernel: (usize, usize)) -> Result<Array> {
    let [n, c, h, wd] = expect_rank4(x, "conv_weight_grad")?;
    let [yn, o, oh, ow] = expect_rank4(y, "conv_weight_grad")?;
    let (kh, kw) = kernel;
    if yn != n || g.out_len(h, kh) != Some(oh) || g.out_len(wd, kw) != Some(ow) {
        return Err(AutodiffError::ShapeMismatch {
            op: "conv_weight_grad",
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    let d = Dims { n, c, h, w: wd, o, kh, kw, oh, ow };
    let mut w = vec![0.0; o * c * kh * kw];
    let (xd, yd) = (x.data(), y.data());
    for_each_tap(&d, g, |xi, wi, yi| w[wi] += xd[xi] * yd[yi]);
    Array::new(vec![o, c, kh, kw], w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_copies_input() {
        let x = Array::from_fn(&[1, 1, 3, 3], |i| i as f64);
        let w = Array::new(vec![1, 1, 3, 3], vec![0., 0., 0., 0., 1., 0., 0., 0., 0.]).unwrap();
        let y = conv2d(&x, &w, ConvGeom { stride: 1, pad: 1 }).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn stride_two_output_size() {
        let x = Array::zeros(&[2, 3, 8, 8]);
        let w = Array::zeros(&[4, 3, 3, 3]);
        let y = conv2d(&x, &w, ConvGeom { stride: 2, pad: 1 }).unwrap();
        assert_eq!(y.shape(), &[2, 4, 4, 4]);
    }
}
