use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use scarcegan_autodiff::{avgpool2x, upsample2x, Array, MapBatch, Tensor};

use super::{dense, DiscriminatorLayer, Init, NetConfig, LRELU_SLOPE};
use crate::error::{contract, Result};
use crate::params::{Bound, ParamSet};

const SQRT2: f64 = std::f64::consts::SQRT_2;

fn cached_map(kind: &'static str, hw: (usize, usize), build: fn((usize, usize)) -> scarcegan_autodiff::SpatialMap) -> MapBatch {
    static CACHE: OnceLock<Mutex<HashMap<(&'static str, (usize, usize)), MapBatch>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    cache
        .lock()
        .expect("map cache poisoned")
        .entry((kind, hw))
        .or_insert_with(|| MapBatch::shared(Arc::new(build(hw))))
        .clone()
}

fn upsample(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    Ok(x.spatial_map(&cached_map("up", (s[2], s[3]), upsample2x))?)
}

fn downsample(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    Ok(x.spatial_map(&cached_map("pool", (s[2], s[3]), avgpool2x))?)
}

fn conv_params(p: &mut ParamSet, init: &mut Init<'_>, name: &str, cin: usize, cout: usize, k: usize, bias: bool) {
    p.insert(format!("{name}.weight"), init.normal(&[cout, cin, k, k]));
    if bias {
        p.insert(format!("{name}.bias"), Array::zeros(&[cout]));
    }
}

fn conv(x: &Tensor, p: &Bound, name: &str, gain: f64) -> Result<Tensor> {
    let w = p.get(&format!("{name}.weight"))?;
    let s = w.shape();
    let fan_in = (s[1] * s[2] * s[3]) as f64;
    let y = x.conv2d(&w.scale(gain / fan_in.sqrt())?, 1, s[2] / 2)?;
    match p.get(&format!("{name}.bias")) {
        Ok(b) => Ok(y.add(&b.reshape(&[s[0], 1, 1])?)?),
        Err(_) => Ok(y),
    }
}

/// Per-pixel feature normalization across channels.
fn pixel_norm(x: &Tensor) -> Result<Tensor> {
    let norm = x.square()?.mean_axes_keepdim(&[1])?.offset(1e-8)?.sqrt()?;
    Ok(x.div(&norm)?)
}

/// Synthesis conv stages as `(name, in_ch, out_ch, upsample_first)`.
fn synthesis_layers(cfg: &NetConfig) -> Vec<(String, usize, usize, bool)> {
    let mut layers = vec![("synthesis.b4.conv".to_string(), cfg.channels_at(4), cfg.channels_at(4), false)];
    let mut res = 8;
    while res <= cfg.resolution {
        let (cin, cout) = (cfg.channels_at(res / 2), cfg.channels_at(res));
        layers.push((format!("synthesis.b{res}.conv0"), cin, cout, true));
        layers.push((format!("synthesis.b{res}.conv1"), cout, cout, false));
        res *= 2;
    }
    layers
}

pub(super) fn build_synthesis(cfg: &NetConfig, init: &mut Init<'_>, g: &mut ParamSet) {
    let c4 = cfg.channels_at(4);
    g.insert("synthesis.const", init.normal(&[c4, 4, 4]));
    let style = |g: &mut ParamSet, init: &mut Init<'_>, name: &str, cin: usize| {
        g.insert(format!("{name}.affine.weight"), init.normal(&[cfg.w_dim, cin]));
        g.insert(format!("{name}.affine.bias"), Array::ones(&[cin]));
    };
    for (name, cin, cout, _) in synthesis_layers(cfg) {
        style(g, init, &name, cin);
        conv_params(g, init, &name, cin, cout, 3, true);
    }
    let last = cfg.channels_at(cfg.resolution);
    style(g, init, "synthesis.torgb", last);
    conv_params(g, init, "synthesis.torgb", last, cfg.channels, 1, true);
}

/// Scales input feature maps by a per-sample, per-channel style from `w`.
fn modulate(x: &Tensor, w: &Tensor, p: &Bound, name: &str) -> Result<Tensor> {
    let s = dense(w, p, &format!("{name}.affine"), 1.0)?;
    let [n, c, _, _] = *x.shape() else {
        return Err(contract("modulate expects rank-4 features"));
    };
    Ok(x.mul(&s.reshape(&[n, c, 1, 1])?)?)
}

pub(super) fn synthesize(cfg: &NetConfig, p: &Bound, w: &Tensor) -> Result<Tensor> {
    let n = w.shape()[0];
    let c4 = cfg.channels_at(4);
    let mut x = p.get("synthesis.const")?.reshape(&[1, c4, 4, 4])?.broadcast_to(&[n, c4, 4, 4])?;
    for (name, _, _, up) in synthesis_layers(cfg) {
        if up {
            x = upsample(&x)?;
        }
        x = modulate(&x, w, p, &name)?;
        x = pixel_norm(&conv(&x, p, &name, SQRT2)?.leaky_relu(LRELU_SLOPE)?)?;
    }
    let x = modulate(&x, w, p, "synthesis.torgb")?;
    Ok(conv(&x, p, "synthesis.torgb", 1.0)?.tanh()?)
}

pub(super) fn build_discriminator(cfg: &NetConfig, init: &mut Init<'_>, d: &mut ParamSet) -> Vec<DiscriminatorLayer> {
    let mut layers = Vec::new();
    let mut add = |d: &mut ParamSet, init: &mut Init<'_>, name: String, cin: usize, cout: usize, k: usize, bias: bool| {
        conv_params(d, init, &name, cin, cout, k, bias);
        let mut params = vec![format!("{name}.weight")];
        if bias {
            params.push(format!("{name}.bias"));
        }
        layers.push(DiscriminatorLayer { name, params });
    };
    let r = cfg.resolution;
    add(d, init, "d.fromrgb".into(), cfg.channels, cfg.channels_at(r), 1, true);
    let mut res = r;
    while res > 4 {
        let (c, c_next) = (cfg.channels_at(res), cfg.channels_at(res / 2));
        add(d, init, format!("d.b{res}.conv0"), c, c, 3, true);
        add(d, init, format!("d.b{res}.conv1"), c, c_next, 3, true);
        add(d, init, format!("d.b{res}.skip"), c, c_next, 1, false);
        res /= 2;
    }
    let c4 = cfg.channels_at(4);
    add(d, init, "d.b4.conv".into(), c4 + 1, c4, 3, true);
    d.insert("d.b4.fc.weight", init.normal(&[c4 * 16, c4]));
    d.insert("d.b4.fc.bias", Array::zeros(&[c4]));
    d.insert("d.b4.out.weight", init.normal(&[c4, 1]));
    d.insert("d.b4.out.bias", Array::zeros(&[1]));
    for name in ["d.b4.fc", "d.b4.out"] {
        layers.push(DiscriminatorLayer {
            name: name.into(),
            params: vec![format!("{name}.weight"), format!("{name}.bias")],
        });
    }
    layers
}

/// Largest group size `<= cap` that divides the batch.
pub fn stddev_group_size(batch: usize, cap: usize) -> usize {
    (1..=cap.min(batch).max(1)).rev().find(|g| batch.is_multiple_of(*g)).unwrap_or(1)
}

/// Appends one channel holding the across-group standard deviation,
/// averaged over features and pixels. Sample `i` belongs to group slot
/// `i % (batch / group)`.
pub fn minibatch_stddev(x: &Tensor, cap: usize) -> Result<Tensor> {
    let [n, c, h, w] = *x.shape() else {
        return Err(contract("minibatch stddev expects rank-4 features"));
    };
    let g = stddev_group_size(n, cap);
    let m = n / g;
    let y = x.reshape(&[g, m, c, h, w])?;
    let centred = y.sub(&y.mean_axes_keepdim(&[0])?)?;
    let sd = centred.square()?.mean_axes_keepdim(&[0])?.offset(1e-8)?.sqrt()?;
    let per_slot = sd.mean_axes_keepdim(&[2, 3, 4])?; // [1, m, 1, 1, 1]
    let feat = per_slot.broadcast_to(&[g, m, 1, h, w])?.reshape(&[n, 1, h, w])?;
    Ok(Tensor::concat(&[x.clone(), feat], 1)?)
}

pub(super) fn discriminate(cfg: &NetConfig, p: &Bound, x: &Tensor) -> Result<Tensor> {
    let mut h = conv(x, p, "d.fromrgb", SQRT2)?.leaky_relu(LRELU_SLOPE)?;
    let mut res = cfg.resolution;
    while res > 4 {
        let t = conv(&h, p, &format!("d.b{res}.conv0"), SQRT2)?.leaky_relu(LRELU_SLOPE)?;
        let t = conv(&t, p, &format!("d.b{res}.conv1"), SQRT2)?.leaky_relu(LRELU_SLOPE)?;
        let t = downsample(&t)?;
        let s = conv(&downsample(&h)?, p, &format!("d.b{res}.skip"), 1.0)?;
        h = t.add(&s)?.scale(std::f64::consts::FRAC_1_SQRT_2)?;
        res /= 2;
    }
    let h = minibatch_stddev(&h, cfg.mbstd_group)?;
    let h = conv(&h, p, "d.b4.conv", SQRT2)?.leaky_relu(LRELU_SLOPE)?;
    let n = h.shape()[0];
    let flat = h.reshape(&[n, cfg.channels_at(4) * 16])?;
    let h = dense(&flat, p, "d.b4.fc", SQRT2)?.leaky_relu(LRELU_SLOPE)?;
    dense(&h, p, "d.b4.out", 1.0)
}
