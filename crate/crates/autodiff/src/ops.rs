//! Differentiable primitives.
//!
//! Broadcasting follows trailing-dimension alignment: shapes are compared
//! from the last axis, and an extent of 1 (or a missing leading axis)
//! stretches to match. Nothing else is accepted.

use crate::array::{numel, Array};
use crate::conv::{self, ConvGeom};
use crate::error::{AutodiffError, Result};
use crate::spatial::MapBatch;
use crate::tape::Tensor;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    Offset,
    MatMul,
    Transpose,
    Conv2d(ConvGeom),
    ConvTranspose2d(ConvGeom),
    ConvWeightGrad(ConvGeom),
    Spatial(MapBatch),
    LeakyRelu(f64),
    Softplus,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Sqrt,
    Square,
    SumTo,
    BroadcastTo,
    Reshape,
    Concat(usize),
    Slice { axis: usize, start: usize },
    Pad { axis: usize, start: usize },
}

fn unary(x: &Tensor, op: Op, f: impl Fn(f64) -> f64) -> Result<Tensor> {
    let v = x.value().map(f);
    Tensor::record(op, vec![x.clone()], v)
}

fn binary(a: &Tensor, b: &Tensor, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let v = a.value().zip_broadcast(b.value(), name, f)?;
    Tensor::record(op, vec![a.clone(), b.clone()], v)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn axis_check(shape: &[usize], axis: usize, op: &'static str) -> Result<()> {
    if axis >= shape.len() {
        return Err(AutodiffError::InvalidShape {
            op,
            message: format!("axis {axis} out of range for shape {shape:?}"),
        });
    }
    Ok(())
}

/// `(outer, axis_len, inner)` decomposition of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Op::Add, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Op::Sub, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Op::Mul, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Op::Div, "div", |a, b| a / b)
    }

    pub fn neg(&self) -> Result<Tensor> {
        unary(self, Op::Neg, |v| -v)
    }

    /// Multiplication by a constant.
    pub fn scale(&self, c: f64) -> Result<Tensor> {
        unary(self, Op::Scale(c), |v| v * c)
    }

    /// Addition of a constant.
    pub fn offset(&self, c: f64) -> Result<Tensor> {
        unary(self, Op::Offset, |v| v + c)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.value(), other.value());
        let (m, k, n) = match (a.shape(), b.shape()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "matmul",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                })
            }
        };
        let (ad, bd) = (a.data(), b.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for (o, &bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                    *o += av * bv;
                }
            }
        }
        Tensor::record(Op::MatMul, vec![self.clone(), other.clone()], Array::new(vec![m, n], out)?)
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Tensor> {
        let [m, n] = *self.shape() else {
            return Err(AutodiffError::InvalidShape {
                op: "transpose",
                message: format!("expected rank 2, got {:?}", self.shape()),
            });
        };
        let d = self.data();
        let out = Array::from_fn(&[n, m], |idx| {
            let (j, i) = (idx / m, idx % m);
            d[i * n + j]
        });
        Tensor::record(Op::Transpose, vec![self.clone()], out)
    }

    /// Cross-correlation of `[N,C,H,W]` input with `[O,C,KH,KW]` weights.
    pub fn conv2d(&self, weight: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let g = ConvGeom { stride, pad };
        let v = conv::conv2d(self.value(), weight.value(), g)?;
        Tensor::record(Op::Conv2d(g), vec![self.clone(), weight.clone()], v)
    }

    /// Adjoint of [`Tensor::conv2d`] in its input, producing `[N,C,in_h,in_w]`.
    pub fn conv_transpose2d(&self, weight: &Tensor, stride: usize, pad: usize, in_hw: (usize, usize)) -> Result<Tensor> {
        let g = ConvGeom { stride, pad };
        let v = conv::conv_transpose2d(self.value(), weight.value(), g, in_hw)?;
        Tensor::record(Op::ConvTranspose2d(g), vec![self.clone(), weight.clone()], v)
    }

    /// Adjoint of [`Tensor::conv2d`] in its weights; `self` is the conv
    /// input and `out_grad` the upstream gradient.
    pub fn conv_weight_grad(&self, out_grad: &Tensor, stride: usize, pad: usize, kernel: (usize, usize)) -> Result<Tensor> {
        let g = ConvGeom { stride, pad };
        let v = conv::conv_weight_grad(self.value(), out_grad.value(), g, kernel)?;
        Tensor::record(Op::ConvWeightGrad(g), vec![self.clone(), out_grad.clone()], v)
    }

    /// Applies a sparse spatial map to every channel plane of `[N,C,H,W]`.
    pub fn spatial_map(&self, maps: &MapBatch) -> Result<Tensor> {
        let [n, c, h, w] = *self.shape() else {
            return Err(AutodiffError::InvalidShape {
                op: "spatial_map",
                message: format!("expected rank 4, got {:?}", self.shape()),
            });
        };
        if maps.in_hw() != (h, w) || (maps.len() != 1 && maps.len() != n) {
            return Err(AutodiffError::InvalidShape {
                op: "spatial_map",
                message: format!(
                    "map for {:?} x{} does not fit input {:?}",
                    maps.in_hw(),
                    maps.len(),
                    self.shape()
                ),
            });
        }
        let (oh, ow) = maps.out_hw();
        let (ip, op) = (h * w, oh * ow);
        let mut out = vec![0.0; n * c * op];
        let d = self.data();
        for s in 0..n {
            let m = maps.get(s);
            for ch in 0..c {
                let plane = s * c + ch;
                m.apply_plane(&d[plane * ip..(plane + 1) * ip], &mut out[plane * op..(plane + 1) * op]);
            }
        }
        let v = Array::new(vec![n, c, oh, ow], out)?;
        Tensor::record(Op::Spatial(maps.clone()), vec![self.clone()], v)
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Tensor> {
        unary(self, Op::LeakyRelu(slope), |v| if v > 0.0 { v } else { v * slope })
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&self) -> Result<Tensor> {
        unary(self, Op::Softplus, softplus)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        unary(self, Op::Sigmoid, sigmoid)
    }

    pub fn tanh(&self) -> Result<Tensor> {
        unary(self, Op::Tanh, f64::tanh)
    }

    pub fn exp(&self) -> Result<Tensor> {
        unary(self, Op::Exp, f64::exp)
    }

    pub fn ln(&self) -> Result<Tensor> {
        unary(self, Op::Log, f64::ln)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        unary(self, Op::Sqrt, f64::sqrt)
    }

    pub fn square(&self) -> Result<Tensor> {
        unary(self, Op::Square, |v| v * v)
    }

    /// Sums broadcast axes away so the result has `shape`.
    pub fn sum_to(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let v = self.value().sum_to(shape)?;
        Tensor::record(Op::SumTo, vec![self.clone()], v)
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let v = self.value().broadcast_to(shape)?;
        Tensor::record(Op::BroadcastTo, vec![self.clone()], v)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let v = self.value().reshaped(shape)?;
        Tensor::record(Op::Reshape, vec![self.clone()], v)
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Result<Tensor> {
        self.sum_to(&[])
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.len() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Sum over `axes`, keeping them as extent-1 dimensions.
    pub fn sum_axes_keepdim(&self, axes: &[usize]) -> Result<Tensor> {
        let mut shape = self.shape().to_vec();
        for &a in axes {
            axis_check(&shape, a, "sum_axes")?;
            shape[a] = 1;
        }
        self.sum_to(&shape)
    }

    pub fn mean_axes_keepdim(&self, axes: &[usize]) -> Result<Tensor> {
        let count: usize = axes.iter().map(|&a| self.shape().get(a).copied().unwrap_or(1)).product();
        self.sum_axes_keepdim(axes)?.scale(1.0 / count as f64)
    }

    /// `x * scale[c] + bias[c]` for `x` of shape `[N, C, ...]`.
    pub fn channel_affine(&self, scale: &Tensor, bias: &Tensor) -> Result<Tensor> {
        if self.shape().len() < 2 {
            return Err(AutodiffError::InvalidShape {
                op: "channel_affine",
                message: format!("expected at least rank 2, got {:?}", self.shape()),
            });
        }
        let c = self.shape()[1];
        let mut bshape = vec![c];
        bshape.extend(std::iter::repeat_n(1, self.shape().len() - 2));
        self.mul(&scale.reshape(&bshape)?)?.add(&bias.reshape(&bshape)?)
    }

    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or(AutodiffError::InvalidShape {
            op: "concat",
            message: "no operands".into(),
        })?;
        axis_check(first.shape(), axis, "concat")?;
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for p in parts {
            let ok = p.shape().len() == shape.len()
                && p.shape().iter().enumerate().all(|(i, &d)| i == axis || d == first.shape()[i]);
            if !ok {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            shape[axis] += p.shape()[axis];
        }
        let (outer, total, inner) = split_axis(&shape, axis);
        let mut out = vec![0.0; outer * total * inner];
        let mut at = 0;
        for p in parts {
            let len = p.shape()[axis];
            let d = p.data();
            for o in 0..outer {
                let dst = (o * total + at) * inner;
                out[dst..dst + len * inner].copy_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
            at += len;
        }
        Tensor::record(Op::Concat(axis), parts.to_vec(), Array::new(shape, out)?)
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        axis_check(self.shape(), axis, "slice")?;
        if start > end || end > self.shape()[axis] {
            return Err(AutodiffError::InvalidShape {
                op: "slice",
                message: format!("range {start}..{end} out of bounds for {:?} axis {axis}", self.shape()),
            });
        }
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let w = end - start;
        let mut shape = self.shape().to_vec();
        shape[axis] = w;
        let d = self.data();
        let mut out = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            let src = (o * len + start) * inner;
            out.extend_from_slice(&d[src..src + w * inner]);
        }
        Tensor::record(Op::Slice { axis, start }, vec![self.clone()], Array::new(shape, out)?)
    }

    /// Embeds `self` at offset `start` of a zero tensor whose `axis` extent is `total`.
    pub fn pad_axis(&self, axis: usize, start: usize, total: usize) -> Result<Tensor> {
        axis_check(self.shape(), axis, "pad")?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        if start + len > total {
            return Err(AutodiffError::InvalidShape {
                op: "pad",
                message: format!("{len} elements at {start} exceed extent {total}"),
            });
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = total;
        let mut out = vec![0.0; outer * total * inner];
        let d = self.data();
        for o in 0..outer {
            let dst = (o * total + start) * inner;
            out[dst..dst + len * inner].copy_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
        }
        Tensor::record(Op::Pad { axis, start }, vec![self.clone()], Array::new(shape, out)?)
    }
}

impl Op {
    /// Input adjoints given the upstream gradient `g` of `out`.
    pub(crate) fn vjp(&self, inputs: &[Tensor], out: &Tensor, g: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let x = &inputs[0];
        let pick = |i: usize, f: &dyn Fn() -> Result<Tensor>| -> Result<Option<Tensor>> {
            if needs[i] {
                f().map(Some)
            } else {
                Ok(None)
            }
        };
        let one = |t: Tensor| Ok(vec![Some(t)]);
        match self {
            Op::Leaf => Ok(Vec::new()),
            Op::Add => {
                let b = &inputs[1];
                Ok(vec![pick(0, &|| g.sum_to(x.shape()))?, pick(1, &|| g.sum_to(b.shape()))?])
            }
            Op::Sub => {
                let b = &inputs[1];
                Ok(vec![pick(0, &|| g.sum_to(x.shape()))?, pick(1, &|| g.neg()?.sum_to(b.shape()))?])
            }
            Op::Mul => {
                let b = &inputs[1];
                Ok(vec![
                    pick(0, &|| g.mul(b)?.sum_to(x.shape()))?,
                    pick(1, &|| g.mul(x)?.sum_to(b.shape()))?,
                ])
            }
            Op::Div => {
                let b = &inputs[1];
                Ok(vec![
                    pick(0, &|| g.div(b)?.sum_to(x.shape()))?,
                    pick(1, &|| g.mul(out)?.div(b)?.neg()?.sum_to(b.shape()))?,
                ])
            }
            Op::Neg => one(g.neg()?),
            Op::Scale(c) => one(g.scale(*c)?),
            Op::Offset => one(g.clone()),
            Op::MatMul => {
                let b = &inputs[1];
                Ok(vec![pick(0, &|| g.matmul(&b.t()?))?, pick(1, &|| x.t()?.matmul(g))?])
            }
            Op::Transpose => one(g.t()?),
            Op::Conv2d(geom) => {
                let w = &inputs[1];
                let s = x.shape();
                let ws = w.shape();
                Ok(vec![
                    pick(0, &|| g.conv_transpose2d(w, geom.stride, geom.pad, (s[2], s[3])))?,
                    pick(1, &|| x.conv_weight_grad(g, geom.stride, geom.pad, (ws[2], ws[3])))?,
                ])
            }
            Op::ConvTranspose2d(geom) => {
                // inputs: (upstream y, weights); `g` is shaped like the conv input.
                let w = &inputs[1];
                let ws = w.shape();
                Ok(vec![
                    pick(0, &|| g.conv2d(w, geom.stride, geom.pad))?,
                    pick(1, &|| g.conv_weight_grad(x, geom.stride, geom.pad, (ws[2], ws[3])))?,
                ])
            }
            Op::ConvWeightGrad(geom) => {
                // inputs: (conv input, upstream y); `g` is shaped like the weights.
                let y = &inputs[1];
                let s = x.shape();
                Ok(vec![
                    pick(0, &|| y.conv_transpose2d(g, geom.stride, geom.pad, (s[2], s[3])))?,
                    pick(1, &|| x.conv2d(g, geom.stride, geom.pad))?,
                ])
            }
            Op::Spatial(maps) => one(g.spatial_map(&maps.transposed())?),
            Op::LeakyRelu(slope) => {
                let mask = x.value().map(|v| if v > 0.0 { 1.0 } else { *slope });
                one(g.mul(&Tensor::constant(mask))?)
            }
            Op::Softplus => one(g.mul(&x.sigmoid()?)?),
            Op::Sigmoid => one(g.mul(out)?.mul(&out.neg()?.offset(1.0)?)?),
            Op::Tanh => one(g.mul(&out.square()?.neg()?.offset(1.0)?)?),
            Op::Exp => one(g.mul(out)?),
            Op::Log => one(g.div(x)?),
            Op::Sqrt => one(g.div(out)?.scale(0.5)?),
            Op::Square => one(g.mul(x)?.scale(2.0)?),
            Op::SumTo => one(g.broadcast_to(x.shape())?),
            Op::BroadcastTo => one(g.sum_to(x.shape())?),
            Op::Reshape => one(g.reshape(x.shape())?),
            Op::Concat(axis) => {
                let mut at = 0;
                let mut out = Vec::with_capacity(inputs.len());
                for (i, p) in inputs.iter().enumerate() {
                    let len = p.shape()[*axis];
                    out.push(if needs[i] { Some(g.slice(*axis, at, at + len)?) } else { None });
                    at += len;
                }
                Ok(out)
            }
            Op::Slice { axis, start } => one(g.pad_axis(*axis, *start, x.shape()[*axis])?),
            Op::Pad { axis, start } => {
                let len = x.shape()[*axis];
                one(g.slice(*axis, *start, *start + len)?)
            }
        }
    }
}
