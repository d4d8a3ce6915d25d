//! Generator (mapping + synthesis) and discriminator networks.
//!
//! Two families share one [`GanModel`] container:
//!
//! * image mode: the mapping network feeds per-stage style scales into a
//!   synthesis network that grows a learned 4×4 constant to the target
//!   resolution; the residual discriminator ends in a minibatch-stddev
//!   layer and a scalar head.
//! * vector mode: 3-layer perceptrons over low-dimensional points, used for
//!   fast end-to-end experiments.
//!
//! All weights use the equalized learning-rate convention: they are stored
//! as unit-variance draws and scaled by a per-layer gain at run time.

mod image;
mod vector;

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scarcegan_autodiff::{Array, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::params::{Bound, ParamSet};

pub use image::{minibatch_stddev, stddev_group_size};

pub const LRELU_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetMode {
    Image,
    Vector,
}

/// Discriminator family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscriminatorArch {
    /// Residual conv net (image mode) or perceptron (vector mode).
    Standard,
    /// `D(x) = a·vec(x) + b`, used for diagnostics with a closed-form R1.
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub mode: NetMode,
    /// Image side length; one of 16, 32, 64 in image mode.
    pub resolution: usize,
    pub channels: usize,
    /// Point dimensionality in vector mode.
    pub data_dim: usize,
    pub z_dim: usize,
    pub w_dim: usize,
    pub channel_base: usize,
    /// Hidden width of the vector-mode perceptrons.
    pub hidden: usize,
    pub d_arch: DiscriminatorArch,
    /// Group size cap for the minibatch-stddev layer.
    pub mbstd_group: usize,
}

impl NetConfig {
    pub fn image(resolution: usize, channels: usize) -> Self {
        Self {
            mode: NetMode::Image,
            resolution,
            channels,
            data_dim: 0,
            z_dim: 64,
            w_dim: 64,
            channel_base: 64,
            hidden: 0,
            d_arch: DiscriminatorArch::Standard,
            mbstd_group: 4,
        }
    }

    pub fn vector(data_dim: usize) -> Self {
        Self {
            mode: NetMode::Vector,
            resolution: 0,
            channels: 0,
            data_dim,
            z_dim: 64,
            w_dim: 64,
            channel_base: 0,
            hidden: 64,
            d_arch: DiscriminatorArch::Standard,
            mbstd_group: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            NetMode::Image => {
                if ![16, 32, 64].contains(&self.resolution) {
                    return Err(contract(format!(
                        "resolution must be 16, 32 or 64, got {}",
                        self.resolution
                    )));
                }
                if self.channels != 1 && self.channels != 3 {
                    return Err(contract(format!("channels must be 1 or 3, got {}", self.channels)));
                }
                if self.channel_base < 4 {
                    return Err(contract("channel_base must be at least 4"));
                }
            }
            NetMode::Vector => {
                if self.data_dim == 0 || self.hidden == 0 {
                    return Err(contract("vector mode needs data_dim and hidden > 0"));
                }
            }
        }
        if self.z_dim == 0 || self.w_dim == 0 {
            return Err(contract("z_dim and w_dim must be positive"));
        }
        Ok(())
    }

    /// Feature maps at a given resolution.
    pub fn channels_at(&self, res: usize) -> usize {
        (self.channel_base * 8 / res).clamp(4, self.channel_base)
    }

    /// Shape of one generated sample.
    pub fn sample_shape(&self) -> Vec<usize> {
        match self.mode {
            NetMode::Image => vec![self.channels, self.resolution, self.resolution],
            NetMode::Vector => vec![self.data_dim],
        }
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }
}

/// One discriminator layer: the unit Freeze-D counts.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorLayer {
    pub name: String,
    pub params: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanModel {
    pub config: NetConfig,
    /// Mapping (`mapping.*`) and synthesis (`synthesis.*`) parameters.
    pub generator: ParamSet,
    pub discriminator: ParamSet,
    /// Moving average of `generator`, used for sampling and evaluation.
    pub ema: ParamSet,
    layer_order: Vec<DiscriminatorLayer>,
}

/// Parameter draw from a seeded stream.
pub(crate) struct Init<'a> {
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    pub fn normal(&mut self, shape: &[usize]) -> Array {
        use rand::Rng;
        Array::from_fn(shape, |_| self.rng.sample::<f64, _>(rand_distr::StandardNormal))
    }
}

impl GanModel {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { rng: &mut rng };
        let mut generator = ParamSet::new();
        build_mapping(&config, &mut init, &mut generator);
        match config.mode {
            NetMode::Image => image::build_synthesis(&config, &mut init, &mut generator),
            NetMode::Vector => vector::build_synthesis(&config, &mut init, &mut generator),
        }
        let mut discriminator = ParamSet::new();
        let layer_order = match (config.mode, config.d_arch) {
            (_, DiscriminatorArch::Linear) => {
                discriminator.insert("d.linear.weight", init.normal(&[config.sample_len(), 1]));
                discriminator.insert("d.linear.bias", Array::zeros(&[1]));
                vec![DiscriminatorLayer {
                    name: "d.linear".into(),
                    params: vec!["d.linear.weight".into(), "d.linear.bias".into()],
                }]
            }
            (NetMode::Image, DiscriminatorArch::Standard) => {
                image::build_discriminator(&config, &mut init, &mut discriminator)
            }
            (NetMode::Vector, DiscriminatorArch::Standard) => {
                vector::build_discriminator(&config, &mut init, &mut discriminator)
            }
        };
        let ema = generator.clone();
        Ok(Self {
            config,
            generator,
            discriminator,
            ema,
            layer_order,
        })
    }

    /// Reassembles a model from stored parameter sets, checking them
    /// against the architecture implied by `config`.
    pub fn from_parts(config: NetConfig, generator: ParamSet, discriminator: ParamSet, ema: ParamSet) -> Result<Self> {
        let template = GanModel::new(config, 0)?;
        let mut issues = template.generator.compatibility_report(&generator, "generator");
        issues.extend(template.discriminator.compatibility_report(&discriminator, "discriminator"));
        issues.extend(template.generator.compatibility_report(&ema, "ema"));
        if !issues.is_empty() {
            return Err(crate::error::Error::Incompatible(issues.join("\n")));
        }
        Ok(Self {
            generator,
            discriminator,
            ema,
            ..template
        })
    }

    /// Discriminator layers ordered from the image input to the score head.
    pub fn layer_order(&self) -> &[DiscriminatorLayer] {
        &self.layer_order
    }

    pub fn generator_params(&self, use_ema: bool) -> &ParamSet {
        if use_ema {
            &self.ema
        } else {
            &self.generator
        }
    }

    /// Human-readable parameter inventory: one `name shape` line per tensor.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for (label, set) in [("G", &self.generator), ("D", &self.discriminator)] {
            for (n, a) in set.iter() {
                out.push_str(&format!("{label} {n} {:?}\n", a.shape()));
            }
            out.push_str(&format!("{label} total {}\n", set.numel()));
        }
        out
    }
}

fn build_mapping(cfg: &NetConfig, init: &mut Init<'_>, g: &mut ParamSet) {
    g.insert("mapping.fc0.weight", init.normal(&[cfg.z_dim, cfg.w_dim]));
    g.insert("mapping.fc0.bias", Array::zeros(&[cfg.w_dim]));
    g.insert("mapping.fc1.weight", init.normal(&[cfg.w_dim, cfg.w_dim]));
    g.insert("mapping.fc1.bias", Array::zeros(&[cfg.w_dim]));
}

/// Fully connected layer with equalized learning rate.
pub(crate) fn dense(x: &Tensor, p: &Bound, name: &str, gain: f64) -> Result<Tensor> {
    let w = p.get(&format!("{name}.weight"))?;
    let fan_in = w.shape()[0] as f64;
    let y = x.matmul(&w.scale(gain / fan_in.sqrt())?)?;
    Ok(y.add(p.get(&format!("{name}.bias"))?)?)
}

fn check_z(cfg: &NetConfig, z: &Tensor) -> Result<()> {
    match z.shape() {
        [_, d] if *d == cfg.z_dim => Ok(()),
        s => Err(contract(format!("latent must be [batch, {}], got {s:?}", cfg.z_dim))),
    }
}

/// `z -> w` through the two-layer mapping network.
pub fn map_latent(cfg: &NetConfig, p: &Bound, z: &Tensor) -> Result<Tensor> {
    check_z(cfg, z)?;
    let norm = z.square()?.mean_axes_keepdim(&[1])?.offset(1e-8)?.sqrt()?;
    let x = z.div(&norm)?;
    let lrelu_gain = 2f64.sqrt();
    let h = dense(&x, p, "mapping.fc0", lrelu_gain)?.leaky_relu(LRELU_SLOPE)?;
    Ok(dense(&h, p, "mapping.fc1", lrelu_gain)?.leaky_relu(LRELU_SLOPE)?)
}

/// `w -> sample` through the synthesis network; output lies in `[-1, 1]`.
pub fn synthesize(cfg: &NetConfig, p: &Bound, w: &Tensor) -> Result<Tensor> {
    match cfg.mode {
        NetMode::Image => image::synthesize(cfg, p, w),
        NetMode::Vector => vector::synthesize(cfg, p, w),
    }
}

pub fn generator_forward(cfg: &NetConfig, p: &Bound, z: &Tensor) -> Result<Tensor> {
    synthesize(cfg, p, &map_latent(cfg, p, z)?)
}

/// Raw discriminator logits, `[batch, 1]`.
pub fn discriminator_forward(cfg: &NetConfig, p: &Bound, x: &Tensor) -> Result<Tensor> {
    let mut expect = vec![x.shape().first().copied().unwrap_or(0)];
    expect.extend(cfg.sample_shape());
    if x.shape() != expect.as_slice() {
        return Err(contract(format!(
            "discriminator input must be {expect:?}, got {:?}",
            x.shape()
        )));
    }
    match (cfg.mode, cfg.d_arch) {
        (_, DiscriminatorArch::Linear) => {
            let n = x.shape()[0];
            let flat = x.reshape(&[n, cfg.sample_len()])?;
            Ok(flat
                .matmul(p.get("d.linear.weight")?)?
                .add(p.get("d.linear.bias")?)?)
        }
        (NetMode::Image, DiscriminatorArch::Standard) => image::discriminate(cfg, p, x),
        (NetMode::Vector, DiscriminatorArch::Standard) => vector::discriminate(cfg, p, x),
    }
}

/// Generates samples from latents without recording gradients.
pub fn generate(model: &GanModel, z: &Tensor, use_ema: bool) -> Result<Tensor> {
    let p = model.generator_params(use_ema).bind(None, |_| false);
    generator_forward(&model.config, &p, &z.detach())
}

/// Scores samples with the live discriminator, without recording.
///
/// When `tape` is given, parameters outside `mask` are bound as leaves so
/// the caller can differentiate the scores; frozen ones stay constants and
/// never receive gradients.
pub fn discriminate(
    model: &GanModel,
    images: &Tensor,
    mask: &FreezeMask,
    tape: Option<&scarcegan_autodiff::Tape>,
) -> Result<(Tensor, Bound)> {
    let p = model.discriminator.bind(tape, |n| !mask.is_frozen(n));
    let scores = discriminator_forward(&model.config, &p, images)?;
    Ok((scores, p))
}

/// Which end of the discriminator Freeze-D counts from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreezeFrom {
    /// Layers nearest the image input (highest resolution).
    Input,
    /// Layers nearest the score head.
    Output,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct FreezeMask {
    frozen_layer_count: usize,
    frozen_param_names: BTreeSet<String>,
}

impl FreezeMask {
    pub fn none() -> Self {
        Self::default()
    }

    /// Freezes `k` layers counted from `from`, capped at the layer count.
    pub fn new(model: &GanModel, k: usize, from: FreezeFrom) -> Self {
        let layers = model.layer_order();
        let k = k.min(layers.len());
        let chosen: Box<dyn Iterator<Item = &DiscriminatorLayer>> = match from {
            FreezeFrom::Input => Box::new(layers.iter().take(k)),
            FreezeFrom::Output => Box::new(layers.iter().rev().take(k)),
        };
        let frozen_param_names = chosen.flat_map(|l| l.params.iter().cloned()).collect();
        Self {
            frozen_layer_count: k,
            frozen_param_names,
        }
    }

    pub fn frozen_layer_count(&self) -> usize {
        self.frozen_layer_count
    }

    pub fn frozen_param_names(&self) -> &BTreeSet<String> {
        &self.frozen_param_names
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen_param_names.contains(name)
    }
}

/// Decay factor for one EMA update: `0.5^(images / (half_life_kimg·1000))`.
pub fn ema_beta(images_seen: usize, half_life_kimg: f64) -> f64 {
    if half_life_kimg <= 0.0 {
        return 0.0;
    }
    0.5f64.powf(images_seen as f64 / (half_life_kimg * 1000.0))
}

/// `ema ← β·ema + (1-β)·live`, written as `live + β·(ema − live)` so that a
/// converged average is a bitwise fixed point.
pub fn ema_update(model: &mut GanModel, images_seen: usize, half_life_kimg: f64) {
    let beta = ema_beta(images_seen, half_life_kimg);
    let live = &model.generator;
    for (name, shadow) in model.ema.iter_mut() {
        let src = live.get(name).expect("ema mirrors generator");
        for (e, &l) in shadow.data_mut().iter_mut().zip(src.data()) {
            *e = l + beta * (*e - l);
        }
    }
}
