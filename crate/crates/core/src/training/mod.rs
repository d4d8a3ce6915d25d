//! Adversarial training loop, optimizer state and checkpoints.

pub mod adam;
mod checkpoint;
mod config;
mod steps;

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use scarcegan_autodiff::{Array, Tensor};
use serde::{Deserialize, Serialize};

use crate::augment::{AdaState, AugPipeline};
use crate::data::Dataset;
use crate::error::{contract, Error, IoContext, Result};
use crate::metrics::{fid, kid, ExtractorKind, FeatureExtractor, DEFAULT_FEATURE_DIM};
use crate::networks::{ema_update, generate, FreezeMask, GanModel, NetConfig};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{
    default_ema_kimg, default_mbstd_group, default_minibatch, gamma_heuristic, TrainConfig, CONFIG_KEYS,
    VECTOR_GAMMA_NOMINAL_SIDE,
};
pub use steps::{d_grads, g_grads, r1_due, r1_penalty, DStepOutput, GStepOutput, R1Settings};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.txt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";

/// One metric-log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub step: u64,
    pub kimg: f64,
    pub kid: Option<f64>,
    pub fid: Option<f64>,
    pub p: f64,
    pub rt: Option<f64>,
    /// Means over the steps since the previous snapshot; null at step 0.
    pub loss_d: Option<f64>,
    pub loss_g: Option<f64>,
    pub r1: Option<f64>,
}

/// Lowest-KID snapshot so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Best {
    /// Position in the snapshot history, 0 being the initial evaluation.
    pub snapshot: usize,
    pub step: u64,
    pub kimg: f64,
    pub kid: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal, since JSON numbers cannot hold a u128.
    pub word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let (seed, word_pos) = self.parts()?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }

    fn parts(&self) -> Result<([u8; 32], u128)> {
        let seed: [u8; 32] = hex::decode(&self.seed)
            .ok()
            .and_then(|v| v.try_into().ok())
            .ok_or_else(|| Error::Checkpoint("bad rng seed".into()))?;
        let word_pos = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint("bad rng position".into()))?;
        Ok((seed, word_pos))
    }
}

/// Running sums since the last snapshot.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub steps: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub r1_steps: u64,
    pub r1: f64,
}

/// Everything besides parameters and moments that a resumed run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub images: u64,
    pub adam_g: AdamConfig,
    pub adam_g_t: u64,
    pub adam_d: AdamConfig,
    pub adam_d_t: u64,
    pub ada: AdaState,
    pub batch_rng: RngState,
    pub aug_rng: RngState,
    pub history: Vec<MetricPoint>,
    pub best: Option<Best>,
    pub window: Window,
}

/// Losses from one interleaved D/G step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub r1: Option<f64>,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub history: Vec<MetricPoint>,
    pub best: Option<Best>,
    pub steps: u64,
    pub images: u64,
}

impl TrainReport {
    pub fn initial_kid(&self) -> Option<f64> {
        self.history.first().and_then(|m| m.kid)
    }

    pub fn final_kid(&self) -> Option<f64> {
        self.history.last().and_then(|m| m.kid)
    }
}

pub struct Trainer {
    config: TrainConfig,
    model: GanModel,
    mask: FreezeMask,
    adam_g: Adam,
    adam_d: Adam,
    pipeline: AugPipeline,
    ada: AdaState,
    rng: ChaCha8Rng,
    dataset: Dataset,
    extractor: FeatureExtractor,
    real_features: Array,
    metric_latents: Array,
    step: u64,
    images: u64,
    history: Vec<MetricPoint>,
    best: Option<Best>,
    window: Window,
    out_dir: Option<PathBuf>,
}

fn aug_seed(seed: u64) -> u64 {
    seed ^ 0x6175_675f_7069_7065
}

fn normal_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    Array::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal))
}

/// Loads a donor checkpoint's G, D and EMA weights for `net`.
pub fn load_transfer_source(path: &Path, net: &NetConfig) -> Result<GanModel> {
    let ckpt = Checkpoint::load(path)?;
    GanModel::from_parts(net.clone(), ckpt.group("g"), ckpt.group("d"), ckpt.group("ema"))
}

impl Trainer {
    /// Fresh run, or a transfer run when `transfer_from` is set. Optimizer
    /// and controller state always start fresh.
    pub fn new(config: TrainConfig, dataset: Dataset) -> Result<Self> {
        config.validate()?;
        let net = config.net_config();
        let model = match &config.transfer_from {
            Some(path) => load_transfer_source(path, &net)?,
            None => GanModel::new(net, config.seed)?,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let mut ada = AdaState::new(config.ada_target, if config.ada { config.ada_speed } else { 0.0 });
        ada.p = config.aug_p;
        ada.interval = config.ada_interval;
        ada.cap = ada.cap.max(config.aug_p);
        let mut pipeline = AugPipeline::preset(&config.aug_preset, aug_seed(config.seed))?;
        pipeline.p = ada.p;
        let lr = AdamConfig::new(config.learning_rate);
        let adam_g = Adam::new(lr, &model.generator);
        let adam_d = Adam::new(lr, &model.discriminator);
        Self::assemble(config, model, adam_g, adam_d, pipeline, ada, rng, dataset)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        config: TrainConfig,
        model: GanModel,
        adam_g: Adam,
        adam_d: Adam,
        pipeline: AugPipeline,
        ada: AdaState,
        rng: ChaCha8Rng,
        dataset: Dataset,
    ) -> Result<Self> {
        let expect = model.config.sample_shape();
        if dataset.sample_shape() != expect.as_slice() {
            return Err(contract(format!(
                "dataset samples are {:?}, the model expects {:?}",
                dataset.sample_shape(),
                expect
            )));
        }
        let mask = FreezeMask::new(&model, config.freeze_d, config.freeze_from);
        if config.freeze_d > mask.frozen_layer_count() {
            log::warn!(
                "freeze_d = {} exceeds the {} discriminator layers; freezing all of them",
                config.freeze_d,
                mask.frozen_layer_count()
            );
        }
        let reals = dataset.all();
        let extractor = match config.metric_extractor {
            ExtractorKind::TrainedProbe => FeatureExtractor::trained_probe(config.metric_seed, DEFAULT_FEATURE_DIM, &reals)?,
            kind => FeatureExtractor::new(kind, config.metric_seed, DEFAULT_FEATURE_DIM, dataset.sample_shape())?,
        };
        let real_features = extractor.extract(&reals)?;
        let mut mrng = ChaCha8Rng::seed_from_u64(config.metric_seed);
        let metric_latents = normal_array(&mut mrng, &[config.metric_fakes, model.config.z_dim]);
        Ok(Self {
            config,
            model,
            mask,
            adam_g,
            adam_d,
            pipeline,
            ada,
            rng,
            dataset,
            extractor,
            real_features,
            metric_latents,
            step: 0,
            images: 0,
            history: Vec::new(),
            best: None,
            window: Window::default(),
            out_dir: None,
        })
    }

    /// Restores a run exactly where a checkpoint left it.
    pub fn resume(ckpt: &Checkpoint, dataset: Dataset) -> Result<Self> {
        let config = TrainConfig::parse(&ckpt.config)?;
        let state: TrainState = serde_json::from_str(&ckpt.state)?;
        let model = GanModel::from_parts(config.net_config(), ckpt.group("g"), ckpt.group("d"), ckpt.group("ema"))?;
        let adam_g = Adam {
            config: state.adam_g,
            m: ckpt.group("adam_g.m"),
            v: ckpt.group("adam_g.v"),
            t: state.adam_g_t,
        };
        let adam_d = Adam {
            config: state.adam_d,
            m: ckpt.group("adam_d.m"),
            v: ckpt.group("adam_d.v"),
            t: state.adam_d_t,
        };
        for (label, adam, params) in [("G", &adam_g, &model.generator), ("D", &adam_d, &model.discriminator)] {
            let mut issues = params.compatibility_report(&adam.m, &format!("{label} first moment"));
            issues.extend(params.compatibility_report(&adam.v, &format!("{label} second moment")));
            if !issues.is_empty() {
                return Err(Error::Checkpoint(issues.join("\n")));
            }
        }
        let mut pipeline = AugPipeline::preset(&config.aug_preset, aug_seed(config.seed))?;
        let (seed, pos) = state.aug_rng.parts()?;
        pipeline.restore_rng(seed, pos);
        pipeline.p = state.ada.p;
        let rng = state.batch_rng.restore()?;
        let mut t = Self::assemble(config, model, adam_g, adam_d, pipeline, state.ada, rng, dataset)?;
        t.step = state.step;
        t.images = state.images;
        t.history = state.history;
        t.best = state.best;
        t.window = state.window;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &GanModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut GanModel {
        &mut self.model
    }

    pub fn freeze_mask(&self) -> &FreezeMask {
        &self.mask
    }

    pub fn pipeline(&self) -> &AugPipeline {
        &self.pipeline
    }

    pub fn ada(&self) -> &AdaState {
        &self.ada
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn images_seen(&self) -> u64 {
        self.images
    }

    pub fn history(&self) -> &[MetricPoint] {
        &self.history
    }

    pub fn best(&self) -> Option<&Best> {
        self.best.as_ref()
    }

    pub fn adam(&self) -> (&Adam, &Adam) {
        (&self.adam_g, &self.adam_d)
    }

    /// Where `run` writes its log and checkpoints.
    pub fn set_output_dir(&mut self, dir: Option<PathBuf>) {
        self.out_dir = dir;
    }

    fn non_finite(&self, what: &'static str) -> Error {
        Error::NonFinite {
            what,
            step: self.step,
            p: self.ada.p,
            gamma: self.config.gamma(),
        }
    }

    /// One discriminator step followed by one generator step.
    pub fn train_step(&mut self) -> Result<StepReport> {
        let m = self.config.minibatch();
        let z_dim = self.model.config.z_dim;
        let indices: Vec<usize> = (0..m).map(|_| self.rng.random_range(0..self.dataset.len())).collect();
        let real = self.dataset.batch(&indices);
        let z_d = normal_array(&mut self.rng, &[m, z_dim]);
        let fake = generate(&self.model, &Tensor::constant(z_d), false)?.value().clone();

        let r1 = r1_due(self.step, self.config.r1_interval).then(|| R1Settings {
            gamma: self.config.gamma(),
            interval: self.config.r1_interval,
            on_clean: self.config.r1_on_clean,
        });
        let d = d_grads(&self.model, &real, &fake, &mut self.pipeline, &self.mask, r1)?;
        if !d.loss.is_finite() {
            return Err(self.non_finite("d_loss"));
        }
        if !d.r1.is_finite() {
            return Err(self.non_finite("r1"));
        }
        if !steps::grads_finite(&d.grads) {
            return Err(self.non_finite("discriminator gradient"));
        }
        self.adam_d.step(&mut self.model.discriminator, &d.grads)?;
        self.ada.update(&d.real_scores, m);
        self.pipeline.p = self.ada.p;

        let z_g = normal_array(&mut self.rng, &[m, z_dim]);
        let g = g_grads(&self.model, &z_g, &mut self.pipeline)?;
        if !g.loss.is_finite() {
            return Err(self.non_finite("g_loss"));
        }
        if !steps::grads_finite(&g.grads) {
            return Err(self.non_finite("generator gradient"));
        }
        self.adam_g.step(&mut self.model.generator, &g.grads)?;
        ema_update(&mut self.model, m, self.config.ema_kimg());

        self.window.steps += 1;
        self.window.loss_d += d.loss;
        self.window.loss_g += g.loss;
        if r1.is_some() {
            self.window.r1_steps += 1;
            self.window.r1 += d.r1;
        }
        let report = StepReport {
            step: self.step,
            loss_d: d.loss,
            loss_g: g.loss,
            r1: r1.map(|_| d.r1),
            p: self.ada.p,
        };
        self.step += 1;
        self.images += m as u64;
        Ok(report)
    }

    /// EMA samples from the fixed metric latents.
    pub fn metric_fakes(&self) -> Result<Array> {
        let n = self.metric_latents.shape()[0];
        let z_dim = self.metric_latents.shape()[1];
        let mut data = Vec::new();
        let mut shape = Vec::new();
        for start in (0..n).step_by(128) {
            let end = (start + 128).min(n);
            let z = Array::new(
                vec![end - start, z_dim],
                self.metric_latents.data()[start * z_dim..end * z_dim].to_vec(),
            )?;
            let out = generate(&self.model, &Tensor::constant(z), true)?;
            shape = out.shape().to_vec();
            data.extend_from_slice(out.data());
        }
        shape[0] = n;
        Ok(Array::new(shape, data)?)
    }

    /// KID (and FID when enabled) of the EMA generator against the dataset.
    pub fn evaluate(&self) -> Result<(f64, Option<f64>)> {
        let fakes = self.metric_fakes()?;
        if !fakes.all_finite() {
            return Err(self.non_finite("generated sample"));
        }
        let ff = self.extractor.extract(&fakes)?;
        let k = kid(&self.real_features, &ff, self.config.metric_kid_block)?.value;
        let f = if self.config.metric_fid {
            Some(fid(&self.real_features, &ff)?)
        } else {
            None
        };
        Ok((k, f))
    }

    /// Evaluates, appends to the history and log, and refreshes the
    /// best/latest checkpoints.
    pub fn snapshot(&mut self) -> Result<MetricPoint> {
        if self.history.last().is_some_and(|h| h.step >= self.step) {
            return Err(contract(format!("snapshot at step {} already taken", self.step)));
        }
        let (k, f) = self.evaluate()?;
        let w = std::mem::take(&mut self.window);
        let mean = |sum: f64, n: u64| (n > 0).then(|| sum / n as f64);
        let point = MetricPoint {
            step: self.step,
            kimg: self.images as f64 / 1000.0,
            kid: Some(k),
            fid: f,
            p: self.ada.p,
            rt: self.ada.last_rt,
            loss_d: mean(w.loss_d, w.steps),
            loss_g: mean(w.loss_g, w.steps),
            r1: mean(w.r1, w.r1_steps),
        };
        self.history.push(point.clone());
        let improved = self.best.as_ref().is_none_or(|b| k < b.kid);
        if improved {
            self.best = Some(Best {
                snapshot: self.history.len() - 1,
                step: self.step,
                kimg: point.kimg,
                kid: k,
            });
        }
        log::info!(
            "step {} kimg {:.3} kid {:.6} p {:.3} loss_d {:?} loss_g {:?}",
            point.step,
            point.kimg,
            k,
            point.p,
            point.loss_d,
            point.loss_g
        );
        if let Some(dir) = self.out_dir.clone() {
            let path = dir.join(METRICS_FILE);
            let mut f = OpenOptions::new().create(true).append(true).open(&path).at(&path)?;
            writeln!(f, "{}", serde_json::to_string(&point)?).at(&path)?;
            let ckpt = self.checkpoint();
            ckpt.save(&dir.join(LATEST_CHECKPOINT))?;
            if improved {
                ckpt.save(&dir.join(BEST_CHECKPOINT))?;
            }
        }
        Ok(point)
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            step: self.step,
            images: self.images,
            adam_g: self.adam_g.config,
            adam_g_t: self.adam_g.t,
            adam_d: self.adam_d.config,
            adam_d_t: self.adam_d.t,
            ada: self.ada.clone(),
            batch_rng: RngState::capture(&self.rng),
            aug_rng: {
                let (seed, pos) = self.pipeline.rng_state();
                RngState {
                    seed: hex::encode(seed),
                    stream: 0,
                    word_pos: pos.to_string(),
                }
            },
            history: self.history.clone(),
            best: self.best.clone(),
            window: self.window.clone(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint {
            config: self.config.render(),
            tensors: Vec::new(),
            state: serde_json::to_string(&self.state()).expect("state serializes"),
        };
        ckpt.push_group("g", &self.model.generator);
        ckpt.push_group("d", &self.model.discriminator);
        ckpt.push_group("ema", &self.model.ema);
        ckpt.push_group("adam_g.m", &self.adam_g.m);
        ckpt.push_group("adam_g.v", &self.adam_g.v);
        ckpt.push_group("adam_d.m", &self.adam_d.m);
        ckpt.push_group("adam_d.v", &self.adam_d.v);
        ckpt
    }

    /// Trains to `total_kimg`, snapshotting at the start, every
    /// `snapshot_interval_kimg` and at the end.
    pub fn run(&mut self) -> Result<TrainReport> {
        if let Some(dir) = &self.out_dir {
            std::fs::create_dir_all(dir).at(dir)?;
            let path = dir.join(CONFIG_FILE);
            std::fs::write(&path, self.config.render()).at(&path)?;
        }
        if self.history.is_empty() {
            self.snapshot()?;
        }
        let total = self.config.total_steps();
        let every = self.config.snapshot_steps();
        while self.step < total {
            self.train_step()?;
            if self.step.is_multiple_of(every) || self.step == total {
                self.snapshot()?;
            }
        }
        if let Some(dir) = &self.out_dir {
            self.checkpoint().save(&dir.join(FINAL_CHECKPOINT))?;
        }
        Ok(TrainReport {
            history: self.history.clone(),
            best: self.best.clone(),
            steps: self.step,
            images: self.images,
        })
    }
}

/// Runs a full training job, writing `config.txt`, `metrics.jsonl` and
/// checkpoints into `out_dir` when given.
pub fn train(config: TrainConfig, dataset: Dataset, out_dir: Option<&Path>) -> Result<TrainReport> {
    let mut t = Trainer::new(config, dataset)?;
    t.set_output_dir(out_dir.map(Path::to_path_buf));
    t.run()
}
