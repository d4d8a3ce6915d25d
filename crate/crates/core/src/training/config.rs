//! Training configuration as plain `key = value` text.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::augment::preset_categories;
use crate::error::{contract, Error, Result};
use crate::metrics::ExtractorKind;
use crate::networks::{DiscriminatorArch, FreezeFrom, NetConfig, NetMode};

/// `0.0002 · w·h / M`.
pub fn gamma_heuristic(width: usize, height: usize, minibatch: usize) -> Result<f64> {
    if minibatch == 0 {
        return Err(contract("minibatch must be positive"));
    }
    if width == 0 || height == 0 {
        return Err(contract("image size must be positive"));
    }
    Ok(0.0002 * (width * height) as f64 / minibatch as f64)
}

/// `max(min(devices · min(4096 // R, 32), 64), 1)`.
pub fn default_minibatch(devices: usize, resolution: usize) -> usize {
    (devices * (4096 / resolution.max(1)).min(32)).clamp(1, 64)
}

/// `min(minibatch // devices, 4)`.
pub fn default_mbstd_group(minibatch: usize, devices: usize) -> usize {
    (minibatch / devices.max(1)).min(4)
}

/// EMA half-life in thousands of images: `M · 10 / 32`.
pub fn default_ema_kimg(minibatch: usize) -> f64 {
    minibatch as f64 * 10.0 / 32.0
}

/// Side of the nominal square image used to derive the default γ for
/// point data, which has no pixel grid of its own.
pub const VECTOR_GAMMA_NOMINAL_SIDE: usize = 512;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: NetMode,
    pub resolution: usize,
    pub channels: usize,
    pub data_dim: usize,
    pub z_dim: usize,
    pub w_dim: usize,
    pub channel_base: usize,
    pub hidden: usize,
    pub d_arch: DiscriminatorArch,
    pub devices: usize,
    /// `None` derives it from the resolution.
    pub minibatch: Option<usize>,
    pub mbstd_group: Option<usize>,
    pub learning_rate: f64,
    /// `None` applies the heuristic.
    pub gamma: Option<f64>,
    pub r1_interval: usize,
    pub r1_on_clean: bool,
    pub aug_preset: String,
    pub ada: bool,
    pub aug_p: f64,
    pub ada_target: f64,
    /// Change in `p` per thousand images.
    pub ada_speed: f64,
    pub ada_interval: usize,
    pub freeze_d: usize,
    pub freeze_from: FreezeFrom,
    pub total_kimg: f64,
    pub snapshot_interval_kimg: f64,
    pub ema_kimg: Option<f64>,
    pub seed: u64,
    pub transfer_from: Option<PathBuf>,
    pub xflip: bool,
    pub metric_extractor: ExtractorKind,
    pub metric_seed: u64,
    pub metric_fakes: usize,
    pub metric_kid_block: usize,
    pub metric_fid: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: NetMode::Image,
            resolution: 32,
            channels: 3,
            data_dim: 2,
            z_dim: 64,
            w_dim: 64,
            channel_base: 64,
            hidden: 64,
            d_arch: DiscriminatorArch::Standard,
            devices: 1,
            minibatch: None,
            mbstd_group: None,
            learning_rate: 0.0025,
            gamma: None,
            r1_interval: 16,
            r1_on_clean: false,
            aug_preset: "bg".into(),
            ada: true,
            aug_p: 0.0,
            ada_target: 0.6,
            ada_speed: 1.0 / 500.0,
            ada_interval: 4,
            freeze_d: 0,
            freeze_from: FreezeFrom::Input,
            total_kimg: 10.0,
            snapshot_interval_kimg: 1.0,
            ema_kimg: None,
            seed: 0,
            transfer_from: None,
            xflip: true,
            metric_extractor: ExtractorKind::SeededRandomConv,
            metric_seed: 123,
            metric_fakes: 256,
            metric_kid_block: 100,
            metric_fid: false,
        }
    }
}

/// Every recognised key, in rendering order.
pub const CONFIG_KEYS: &[&str] = &[
    "mode",
    "resolution",
    "channels",
    "data_dim",
    "z_dim",
    "w_dim",
    "channel_base",
    "hidden",
    "d_arch",
    "devices",
    "minibatch",
    "mbstd_group",
    "learning_rate",
    "gamma",
    "r1_interval",
    "r1_on_clean",
    "aug_preset",
    "ada",
    "aug_p",
    "ada_target",
    "ada_speed",
    "ada_interval",
    "freeze_d",
    "freeze_from",
    "total_kimg",
    "snapshot_interval_kimg",
    "ema_kimg",
    "seed",
    "transfer_from",
    "xflip",
    "metric_extractor",
    "metric_seed",
    "metric_fakes",
    "metric_kid_block",
    "metric_fid",
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

fn parse_auto<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "auto" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn auto<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), T::to_string)
}

impl TrainConfig {
    /// Image-mode defaults with a small network, suitable for desk runs.
    pub fn toy_image(resolution: usize) -> Self {
        Self {
            resolution,
            channel_base: 16,
            z_dim: 32,
            w_dim: 32,
            ..Self::default()
        }
    }

    /// Vector-mode defaults for 2-D point data.
    pub fn toy_vector() -> Self {
        Self {
            mode: NetMode::Vector,
            resolution: 0,
            channels: 0,
            data_dim: 2,
            z_dim: 8,
            w_dim: 32,
            hidden: 64,
            aug_preset: "none".into(),
            ada: false,
            xflip: false,
            metric_extractor: ExtractorKind::RawFlatten,
            ..Self::default()
        }
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "mode" => {
                self.mode = match v {
                    "image" => NetMode::Image,
                    "vector" => NetMode::Vector,
                    _ => return Err(Error::Config(format!("`mode`: expected image or vector, got `{v}`"))),
                }
            }
            "resolution" => self.resolution = parse(key, v)?,
            "channels" => self.channels = parse(key, v)?,
            "data_dim" => self.data_dim = parse(key, v)?,
            "z_dim" => self.z_dim = parse(key, v)?,
            "w_dim" => self.w_dim = parse(key, v)?,
            "channel_base" => self.channel_base = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "d_arch" => {
                self.d_arch = match v {
                    "standard" => DiscriminatorArch::Standard,
                    "linear" => DiscriminatorArch::Linear,
                    _ => return Err(Error::Config(format!("`d_arch`: expected standard or linear, got `{v}`"))),
                }
            }
            "devices" => self.devices = parse(key, v)?,
            "minibatch" => self.minibatch = parse_auto(key, v)?,
            "mbstd_group" => self.mbstd_group = parse_auto(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "gamma" => self.gamma = parse_auto(key, v)?,
            "r1_interval" => self.r1_interval = parse(key, v)?,
            "r1_on_clean" => self.r1_on_clean = parse_bool(key, v)?,
            "aug_preset" => self.aug_preset = v.to_string(),
            "ada" => self.ada = parse_bool(key, v)?,
            "aug_p" => self.aug_p = parse(key, v)?,
            "ada_target" => self.ada_target = parse(key, v)?,
            "ada_speed" => self.ada_speed = parse(key, v)?,
            "ada_interval" => self.ada_interval = parse(key, v)?,
            "freeze_d" => self.freeze_d = parse(key, v)?,
            "freeze_from" => {
                self.freeze_from = match v {
                    "input" => FreezeFrom::Input,
                    "output" => FreezeFrom::Output,
                    _ => return Err(Error::Config(format!("`freeze_from`: expected input or output, got `{v}`"))),
                }
            }
            "total_kimg" => self.total_kimg = parse(key, v)?,
            "snapshot_interval_kimg" => self.snapshot_interval_kimg = parse(key, v)?,
            "ema_kimg" => self.ema_kimg = parse_auto(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "transfer_from" => self.transfer_from = if v == "none" { None } else { Some(PathBuf::from(v)) },
            "xflip" => self.xflip = parse_bool(key, v)?,
            "metric_extractor" => {
                self.metric_extractor = v.parse().map_err(|e: Error| Error::Config(format!("`metric_extractor`: {e}")))?
            }
            "metric_seed" => self.metric_seed = parse(key, v)?,
            "metric_fakes" => self.metric_fakes = parse(key, v)?,
            "metric_kid_block" => self.metric_kid_block = parse(key, v)?,
            "metric_fid" => self.metric_fid = parse_bool(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Text form of one key.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "mode" => match self.mode {
                NetMode::Image => "image".into(),
                NetMode::Vector => "vector".into(),
            },
            "resolution" => self.resolution.to_string(),
            "channels" => self.channels.to_string(),
            "data_dim" => self.data_dim.to_string(),
            "z_dim" => self.z_dim.to_string(),
            "w_dim" => self.w_dim.to_string(),
            "channel_base" => self.channel_base.to_string(),
            "hidden" => self.hidden.to_string(),
            "d_arch" => match self.d_arch {
                DiscriminatorArch::Standard => "standard".into(),
                DiscriminatorArch::Linear => "linear".into(),
            },
            "devices" => self.devices.to_string(),
            "minibatch" => auto(&self.minibatch),
            "mbstd_group" => auto(&self.mbstd_group),
            "learning_rate" => self.learning_rate.to_string(),
            "gamma" => auto(&self.gamma),
            "r1_interval" => self.r1_interval.to_string(),
            "r1_on_clean" => self.r1_on_clean.to_string(),
            "aug_preset" => self.aug_preset.clone(),
            "ada" => self.ada.to_string(),
            "aug_p" => self.aug_p.to_string(),
            "ada_target" => self.ada_target.to_string(),
            "ada_speed" => self.ada_speed.to_string(),
            "ada_interval" => self.ada_interval.to_string(),
            "freeze_d" => self.freeze_d.to_string(),
            "freeze_from" => match self.freeze_from {
                FreezeFrom::Input => "input".into(),
                FreezeFrom::Output => "output".into(),
            },
            "total_kimg" => self.total_kimg.to_string(),
            "snapshot_interval_kimg" => self.snapshot_interval_kimg.to_string(),
            "ema_kimg" => auto(&self.ema_kimg),
            "seed" => self.seed.to_string(),
            "transfer_from" => self
                .transfer_from
                .as_ref()
                .map_or_else(|| "none".into(), |p| p.display().to_string()),
            "xflip" => self.xflip.to_string(),
            "metric_extractor" => self.metric_extractor.to_string(),
            "metric_seed" => self.metric_seed.to_string(),
            "metric_fakes" => self.metric_fakes.to_string(),
            "metric_kid_block" => self.metric_kid_block.to_string(),
            "metric_fid" => self.metric_fid.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines over `self`. `#` starts a comment.
    /// Unknown and repeated keys are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: `{key}` given twice", lineno + 1)));
            }
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", lineno + 1, e.to_string().trim_start_matches("config: "))))?;
        }
        Ok(())
    }

    /// Parses over the defaults, then validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text: every key, fixed order. `parse(render())` is exact.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("known key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.mode == NetMode::Image && ![16, 32, 64].contains(&self.resolution) {
            return bad(format!("resolution must be 16, 32 or 64, got {}", self.resolution));
        }
        if self.minibatch == Some(0) {
            return bad("minibatch must be at least 1".into());
        }
        if self.devices == 0 {
            return bad("devices must be at least 1".into());
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("gamma must be > 0, got {g}"));
            }
        }
        if self.r1_interval == 0 {
            return bad("r1_interval must be at least 1".into());
        }
        if self.ada_interval == 0 {
            return bad("ada_interval must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.aug_p) {
            return bad(format!("aug_p must be in [0, 1), got {}", self.aug_p));
        }
        if !(0.0..=1.0).contains(&self.ada_target) {
            return bad(format!("ada_target must be in [0, 1], got {}", self.ada_target));
        }
        if !(self.total_kimg >= 0.0) || !(self.snapshot_interval_kimg > 0.0) {
            return bad("total_kimg must be >= 0 and snapshot_interval_kimg > 0".into());
        }
        if self.metric_fakes < 2 {
            return bad("metric_fakes must be at least 2".into());
        }
        preset_categories(&self.aug_preset).map_err(|e| Error::Config(e.to_string()))?;
        self.net_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn minibatch(&self) -> usize {
        self.minibatch.unwrap_or_else(|| match self.mode {
            NetMode::Image => default_minibatch(self.devices, self.resolution),
            NetMode::Vector => default_minibatch(self.devices, 1),
        })
    }

    pub fn mbstd_group(&self) -> usize {
        self.mbstd_group
            .unwrap_or_else(|| default_mbstd_group(self.minibatch(), self.devices))
            .max(1)
    }

    /// Effective γ. The heuristic uses the image size, or a nominal
    /// square of [`VECTOR_GAMMA_NOMINAL_SIDE`] in vector mode.
    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| {
            let side = match self.mode {
                NetMode::Image => self.resolution,
                NetMode::Vector => VECTOR_GAMMA_NOMINAL_SIDE,
            };
            gamma_heuristic(side, side, self.minibatch()).expect("validated")
        })
    }

    pub fn ema_kimg(&self) -> f64 {
        self.ema_kimg.unwrap_or_else(|| default_ema_kimg(self.minibatch()))
    }

    pub fn total_steps(&self) -> u64 {
        (self.total_kimg * 1000.0 / self.minibatch() as f64).ceil() as u64
    }

    pub fn snapshot_steps(&self) -> u64 {
        ((self.snapshot_interval_kimg * 1000.0 / self.minibatch() as f64).ceil() as u64).max(1)
    }

    pub fn net_config(&self) -> NetConfig {
        let base = match self.mode {
            NetMode::Image => NetConfig::image(self.resolution, self.channels),
            NetMode::Vector => NetConfig::vector(self.data_dim),
        };
        NetConfig {
            z_dim: self.z_dim,
            w_dim: self.w_dim,
            channel_base: self.channel_base,
            hidden: self.hidden,
            d_arch: self.d_arch,
            mbstd_group: self.mbstd_group(),
            ..base
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut c = TrainConfig::toy_vector();
        c.gamma = Some(0.1 + 0.2);
        c.transfer_from = Some("runs/x/final.ckpt".into());
        let text = c.render();
        let back = TrainConfig::parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.render(), text);
    }

    #[test]
    fn unknown_and_duplicate_keys_fail() {
        assert!(TrainConfig::parse("bogus = 1").unwrap_err().to_string().contains("unknown key `bogus`"));
        assert!(TrainConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(TrainConfig::parse("gamma = 0").is_err());
        let c = TrainConfig::parse("# comment\nseed = 7 # trailing\n\n").unwrap();
        assert_eq!(c.seed, 7);
    }
}
