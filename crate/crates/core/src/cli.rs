//! Command-line front end.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use scarcegan_autodiff::Array;
use scarcegan_study::{BoundaryRule, Store, StudyRequest};

use crate::data::{load_image_dir, load_prepared, prep_data, toy, Dataset, DatasetSpec};
use crate::error::{contract, Error, IoContext, Result};
use crate::harness::{run_sweep, ExperimentPlan};
use crate::metrics::{evaluate, ExtractorKind, FeatureExtractor, MetricChoice, DEFAULT_FEATURE_DIM};
use crate::networks::NetMode;
use crate::sampling::{generate_batch, make_grid, SampleConfig, Sampler, TruncationSpace, DEFAULT_W_MEAN_SAMPLES};
use crate::training::{train, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "scarcegan", version, about = "Limited-data GAN training lab")]
struct Cli {
    /// Log progress at info level.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Centre-crop and resize a folder of images into a training set.
    PrepData(PrepArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Run an experiment plan and write the comparison table.
    Sweep(SweepArgs),
    /// Generate truncated samples from a checkpoint.
    Sample(SampleArgs),
    /// Tile images into one PNG.
    Grid(GridArgs),
    /// KID / FID between two sample sets.
    Metrics(MetricsArgs),
    /// Rating study service.
    #[command(subcommand)]
    Study(StudyCommand),
}

#[derive(Args, Debug)]
struct PrepArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    resolution: usize,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    /// Do not add mirrored copies.
    #[arg(long)]
    no_xflip: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ToyData {
    Ring,
    Blobs,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory written by `prep-data`.
    #[arg(long, conflicts_with = "toy")]
    data: Option<PathBuf>,
    /// Built-in synthetic data instead of `--data`.
    #[arg(long, value_enum)]
    toy: Option<ToyData>,
    #[arg(long, default_value_t = 200)]
    toy_count: usize,
    #[arg(long, default_value_t = 1000)]
    toy_seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Override one config key, `KEY=VALUE`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Experiment plan JSON.
    #[arg(long, required_unless_present = "toy_table")]
    plan: Option<PathBuf>,
    /// Use the built-in nine-run toy plan.
    #[arg(long)]
    toy_table: bool,
    /// kimg per run for `--toy-table`.
    #[arg(long, default_value_t = 0.256)]
    toy_kimg: f64,
    /// Base config shared by all runs, `key = value`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the plan's output root.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Space {
    W,
    Z,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 16)]
    n: usize,
    /// Truncation ψ in [0, 1]; 1 disables truncation.
    #[arg(long, default_value_t = 0.7)]
    trunc: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "w")]
    space: Space,
    /// Sample the live generator instead of its moving average.
    #[arg(long)]
    no_ema: bool,
    #[arg(long, default_value_t = DEFAULT_W_MEAN_SAMPLES)]
    w_mean_samples: usize,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    Kid,
    Fid,
    Both,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Image directory, or a text file with one point per line.
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    fake: PathBuf,
    #[arg(long, value_enum, default_value = "kid")]
    metric: MetricArg,
    /// Feature extractor seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// seeded-random-conv, trained-probe or raw-flatten.
    #[arg(long)]
    extractor: Option<String>,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    /// Print one JSON line.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand, Debug)]
enum StudyCommand {
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value = "study-store")]
        store: PathBuf,
    },
    /// Create a study from image folders.
    Create {
        #[arg(long, default_value = "study-store")]
        store: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long)]
        generated: Option<PathBuf>,
        #[arg(long)]
        real: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        n_generated: usize,
        #[arg(long, default_value_t = 0)]
        n_real: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "")]
        prompt: String,
    },
    /// Print the aggregate report.
    Report {
        #[arg(long)]
        study: String,
        #[arg(long, default_value = "study-store")]
        store: PathBuf,
        #[arg(long, default_value = "60,70,80")]
        thresholds: String,
        /// Count scores equal to a threshold as above it.
        #[arg(long)]
        inclusive: bool,
        #[arg(long)]
        json: bool,
    },
}

/// A failure with the exit status it maps to.
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: 1,
            message: e.to_string(),
        }
    }
}

impl From<scarcegan_study::StudyError> for Failure {
    fn from(e: scarcegan_study::StudyError) -> Self {
        Self {
            code: 1,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: Command) -> std::result::Result<(), Failure> {
    match cmd {
        Command::PrepData(a) => prep(a),
        Command::Train(a) => train_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::Sample(a) => sample(a),
        Command::Grid(a) => {
            let out = make_grid(&a.input, a.rows, a.cols, &a.out)?;
            println!("{}", out.display());
            Ok(())
        }
        Command::Metrics(a) => metrics(a),
        Command::Study(s) => study(s),
    }
}

fn prep(a: PrepArgs) -> std::result::Result<(), Failure> {
    let dataset = DatasetSpec {
        source: a.src,
        resolution: a.resolution,
        channels: a.channels,
        xflip: !a.no_xflip,
    };
    let m = prep_data(&dataset, &a.out)?;
    println!(
        "{} entries ({} files, {} rejected) -> {}",
        m.entries.len(),
        m.entries.iter().filter(|e| !e.flipped).count(),
        m.rejected.len(),
        a.out.display()
    );
    for r in &m.rejected {
        println!("rejected {}: {}", r.source, r.reason);
    }
    Ok(())
}

fn read_config_file(path: &Path) -> std::result::Result<String, Failure> {
    if !path.is_file() {
        return Err(usage(format!(
            "config not found: {} (pass an existing `key = value` file)",
            path.display()
        )));
    }
    Ok(std::fs::read_to_string(path).at(path)?)
}

fn apply_overrides(cfg: &mut TrainConfig, overrides: &[String]) -> std::result::Result<(), Failure> {
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| usage(e.to_string()))?;
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> std::result::Result<(), Failure> {
    let mut cfg = match a.toy {
        Some(ToyData::Ring) => TrainConfig::toy_vector(),
        Some(ToyData::Blobs) => TrainConfig::toy_image(32),
        None => TrainConfig::default(),
    };
    if let Some(path) = &a.config {
        let text = read_config_file(path)?;
        cfg.apply_text(&text).map_err(|e| usage(e.to_string()))?;
    }
    apply_overrides(&mut cfg, &a.overrides)?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let dataset = match (a.toy, &a.data) {
        (Some(ToyData::Ring), _) => Dataset::new(toy::ring(a.toy_count, a.toy_seed), false)?,
        (Some(ToyData::Blobs), _) => Dataset::new(
            toy::blobs(a.toy_count, cfg.resolution, cfg.channels, a.toy_seed),
            cfg.xflip,
        )?,
        (None, Some(dir)) => {
            let (ds, manifest) = load_prepared(dir)?;
            if manifest.xflip != cfg.xflip {
                log::warn!("dataset xflip = {} overrides config xflip = {}", manifest.xflip, cfg.xflip);
            }
            ds
        }
        (None, None) => return Err(usage("train needs --data DIR or --toy ring|blobs")),
    };
    let report = train(cfg, dataset, Some(&a.out))?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |k| format!("{k:.6}"));
    println!(
        "{} steps, {:.3} kimg; KID initial {} final {}",
        report.steps,
        report.images as f64 / 1000.0,
        fmt(report.initial_kid()),
        fmt(report.final_kid())
    );
    if let Some(b) = &report.best {
        println!("best KID {:.6} at snapshot {} (step {}, {:.3} kimg)", b.kid, b.snapshot, b.step, b.kimg);
    }
    println!("outputs in {}", a.out.display());
    Ok(())
}

fn sweep(a: SweepArgs) -> std::result::Result<(), Failure> {
    let mut plan = match (&a.plan, a.toy_table) {
        (Some(p), _) => {
            if !p.is_file() {
                return Err(usage(format!("plan not found: {}", p.display())));
            }
            ExperimentPlan::load(p)?
        }
        (None, _) => ExperimentPlan::toy_table(a.out.clone().unwrap_or_else(|| "sweep".into()), a.toy_kimg),
    };
    if let Some(path) = &a.config {
        let text = read_config_file(path)?;
        let mut probe = TrainConfig::default();
        probe.apply_text(&text).map_err(|e| usage(e.to_string()))?;
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if let Some((k, v)) = line.split_once('=') {
                plan.base_config.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
    }
    if let Some(out) = a.out {
        plan.output_root = out;
    }
    if let Some(w) = a.workers {
        plan.workers = w;
    }
    let report = run_sweep(&plan)?;
    print!("{}", report.to_table());
    println!("report: {}", plan.output_root.join(crate::harness::REPORT_CSV).display());
    Ok(())
}

fn sample(a: SampleArgs) -> std::result::Result<(), Failure> {
    let sampler = Sampler::load(&a.ckpt)?;
    let cfg = SampleConfig {
        psi: a.trunc,
        count: a.n,
        seed: a.seed,
        space: match a.space {
            Space::W => TruncationSpace::WSpaceInterpolation,
            Space::Z => TruncationSpace::ZResampling,
        },
        w_mean_samples: a.w_mean_samples,
        use_ema: !a.no_ema,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if sampler.model().config.mode == NetMode::Vector {
        let pts = sampler.sample(&cfg)?;
        std::fs::create_dir_all(&a.out).at(&a.out)?;
        let path = a.out.join(format!("{}_points.csv", a.seed));
        std::fs::write(&path, points_csv(&pts)).at(&path)?;
        println!("{} points -> {}", a.n, path.display());
        return Ok(());
    }
    let m = generate_batch(&sampler, &cfg, &a.out)?;
    println!("{} images -> {}", m.images.len(), a.out.display());
    Ok(())
}

fn points_csv(pts: &Array) -> String {
    let d = pts.shape()[1];
    pts.data()
        .chunks(d)
        .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") + "\n")
        .collect()
}

/// Loads an image directory or a text file of points.
fn load_samples(path: &Path, channels: usize) -> Result<Array> {
    if path.is_dir() {
        return Ok(load_image_dir(path, channels)?.0);
    }
    let text = std::fs::read_to_string(path).at(path)?;
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| contract(format!("{} line {}: not a list of numbers", path.display(), n + 1)))?;
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(contract(format!("{} line {}: expected {w} values", path.display(), n + 1)))
            }
            _ => {}
        }
        data.extend(vals);
        rows += 1;
    }
    let w = width.ok_or_else(|| contract(format!("{} has no samples", path.display())))?;
    Ok(Array::new(vec![rows, w], data)?)
}

fn metrics(a: MetricsArgs) -> std::result::Result<(), Failure> {
    let real = load_samples(&a.real, a.channels)?;
    let fake = load_samples(&a.fake, a.channels)?;
    if real.shape()[1..] != fake.shape()[1..] {
        return Err(contract(format!(
            "sample shapes differ: {:?} vs {:?}",
            &real.shape()[1..],
            &fake.shape()[1..]
        ))
        .into());
    }
    let kind = match &a.extractor {
        Some(name) => name.parse::<ExtractorKind>().map_err(|e| usage(e.to_string()))?,
        None if real.ndim() == 4 => ExtractorKind::SeededRandomConv,
        None => ExtractorKind::RawFlatten,
    };
    let extractor = match kind {
        ExtractorKind::TrainedProbe => FeatureExtractor::trained_probe(a.seed, DEFAULT_FEATURE_DIM, &real)?,
        k => FeatureExtractor::new(k, a.seed, DEFAULT_FEATURE_DIM, &real.shape()[1..])?,
    };
    let choice = match a.metric {
        MetricArg::Kid => MetricChoice::Kid,
        MetricArg::Fid => MetricChoice::Fid,
        MetricArg::Both => MetricChoice::Both,
    };
    let report = evaluate(&extractor, &real, &fake, choice)?;
    if a.json {
        println!("{}", serde_json::to_string(&report).map_err(Error::from)?);
    } else {
        if let Some(k) = report.kid {
            println!("KID {k:.6} (x1e3 {:.3}){}", k * 1e3, report.kid_std.map(|s| format!(" ± {s:.6}")).unwrap_or_default());
        }
        if let Some(f) = report.fid {
            println!("FID {f:.6}");
        }
        println!("{} real, {} fake, extractor {}", report.n_real, report.n_fake, kind);
    }
    Ok(())
}

fn study(cmd: StudyCommand) -> std::result::Result<(), Failure> {
    match cmd {
        StudyCommand::Serve { port, host, store } => {
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|_| usage(format!("bad listen address {host}:{port}")))?;
            eprintln!("serving {} on http://{addr}", store.display());
            scarcegan_study::service::serve_blocking(store, addr)?;
        }
        StudyCommand::Create {
            store,
            name,
            generated,
            real,
            n_generated,
            n_real,
            seed,
            prompt,
        } => {
            let mut s = Store::open(store)?;
            let now = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            let study = s.create_study(
                &StudyRequest {
                    name,
                    generated_dir: generated,
                    real_dir: real,
                    n_generated,
                    n_real,
                    seed,
                    prompt,
                },
                now,
            )?;
            println!("{}", study.id);
        }
        StudyCommand::Report {
            study,
            store,
            thresholds,
            inclusive,
            json,
        } => {
            let s = Store::open(store)?;
            let thresholds = scarcegan_study::report::parse_thresholds(&thresholds)?;
            let rule = if inclusive { BoundaryRule::Inclusive } else { BoundaryRule::Strict };
            let r = s.report(&study, &thresholds, rule)?;
            if json {
                println!("{}", serde_json::to_string(&r).map_err(Error::from)?);
            } else {
                println!("study {}: {} images rated by {} raters", r.study_id, r.images.len(), r.rater_count);
                for t in &r.above {
                    println!("above {:>5}%: {:>3} ({:.2}%)", t.threshold, t.count, t.fraction * 100.0);
                }
                for b in &r.bands {
                    println!("band {:>7}: {:>3} ({:.2}%)", b.label, b.count, b.fraction * 100.0);
                }
            }
        }
    }
    Ok(())
}
