//! Experiment plans and the sweep runner.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_prepared, toy, Dataset};
use crate::error::{contract, IoContext, Result};
use crate::training::{train, TrainConfig, FINAL_CHECKPOINT};

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const TRAJECTORY_CSV: &str = "kid_trajectory.csv";
pub const CSV_HEADER: &str = "id,setup,freeze_d,aug,gamma,best_kid,best_step,status";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setup {
    Scratch,
    Transfer,
}

impl Setup {
    pub fn name(self) -> &'static str {
        match self {
            Setup::Scratch => "scratch",
            Setup::Transfer => "transfer",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSource {
    /// A directory written by `prep_data`.
    Prepared { dir: PathBuf },
    ToyBlobs {
        count: usize,
        resolution: usize,
        channels: usize,
        seed: u64,
        xflip: bool,
    },
    ToyRing { count: usize, seed: u64 },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Prepared { dir } => Ok(load_prepared(dir)?.0),
            DatasetSource::ToyBlobs {
                count,
                resolution,
                channels,
                seed,
                xflip,
            } => Dataset::new(toy::blobs(*count, *resolution, *channels, *seed), *xflip),
            DatasetSource::ToyRing { count, seed } => Dataset::new(toy::ring(*count, *seed), false),
        }
    }
}

/// Where transfer runs take their starting weights from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DonorSource {
    Checkpoint { path: PathBuf },
    /// Trained once from scratch on `dataset` before the sweep.
    Pretrain {
        dataset: DatasetSource,
        total_kimg: f64,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub id: String,
    pub setup: Setup,
    #[serde(default)]
    pub freeze_d: usize,
    pub aug_preset: String,
    /// `None` applies the heuristic.
    pub gamma: Option<f64>,
    pub total_kimg: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub runs: Vec<RunSpec>,
    pub dataset: DatasetSource,
    pub output_root: PathBuf,
    /// TrainConfig keys shared by every run, as text values.
    #[serde(default)]
    pub base_config: BTreeMap<String, String>,
    #[serde(default)]
    pub donor: Option<DonorSource>,
    #[serde(default = "one")]
    pub workers: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub snapshot: usize,
    pub step: u64,
    pub kimg: f64,
    pub kid: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub id: String,
    pub setup: Setup,
    pub freeze_d: usize,
    pub aug: String,
    pub gamma: Option<f64>,
    pub best_kid: Option<f64>,
    /// Snapshot index of the best KID; its step and kimg are in the
    /// trajectory.
    pub best_step: Option<usize>,
    pub best_kimg: Option<f64>,
    pub status: String,
    pub error: Option<String>,
    pub trajectory: Vec<TrajectoryPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl ExperimentPlan {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for r in &self.runs {
            if r.id.is_empty() || r.id.contains(['/', '\\']) || r.id == "donor" {
                return Err(contract(format!("invalid run id `{}`", r.id)));
            }
            if !ids.insert(&r.id) {
                return Err(contract(format!("run id `{}` appears twice", r.id)));
            }
        }
        if self.runs.iter().any(|r| r.setup == Setup::Transfer) && self.donor.is_none() {
            return Err(contract("transfer runs need a `donor`"));
        }
        self.base().map(|_| ())
    }

    fn base(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (k, v) in &self.base_config {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    fn run_config(&self, run: &RunSpec, donor: Option<&Path>) -> Result<TrainConfig> {
        let mut cfg = self.base()?;
        cfg.seed = run.seed;
        cfg.total_kimg = run.total_kimg;
        cfg.aug_preset = run.aug_preset.clone();
        cfg.gamma = run.gamma;
        cfg.freeze_d = run.freeze_d;
        cfg.transfer_from = match run.setup {
            Setup::Scratch => None,
            Setup::Transfer => Some(donor.ok_or_else(|| contract("no donor checkpoint"))?.to_path_buf()),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The toy counterpart of the nine reported experiments: one scratch
    /// run, then transfer runs over Freeze-D depth and γ, all with the
    /// blit + geometry preset on 32×32 blobs.
    pub fn toy_table(output_root: impl Into<PathBuf>, total_kimg: f64) -> Self {
        let rows: [(&str, Setup, usize, f64); 9] = [
            ("exp2", Setup::Scratch, 0, 10.0),
            ("exp3", Setup::Transfer, 0, 6.5),
            ("exp4", Setup::Transfer, 4, 6.5),
            ("exp5", Setup::Transfer, 13, 6.5),
            ("exp6", Setup::Transfer, 13, 10.0),
            ("exp7", Setup::Transfer, 13, 3.0),
            ("exp8", Setup::Transfer, 13, 2.0),
            ("exp9", Setup::Transfer, 17, 6.5),
            ("exp10", Setup::Transfer, 10, 6.5),
        ];
        let runs = rows
            .iter()
            .map(|&(id, setup, freeze_d, gamma)| RunSpec {
                id: id.into(),
                setup,
                freeze_d,
                aug_preset: "bg".into(),
                gamma: Some(gamma),
                total_kimg,
                seed: 0,
            })
            .collect();
        let base: BTreeMap<String, String> = [
            ("resolution", "32"),
            ("channel_base", "8"),
            ("z_dim", "32"),
            ("w_dim", "32"),
            ("minibatch", "8"),
            ("metric_fakes", "64"),
            ("snapshot_interval_kimg", &format!("{}", total_kimg / 4.0)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Self {
            runs,
            dataset: DatasetSource::ToyBlobs {
                count: 100,
                resolution: 32,
                channels: 3,
                seed: 7,
                xflip: true,
            },
            output_root: output_root.into(),
            base_config: base,
            donor: Some(DonorSource::Pretrain {
                dataset: DatasetSource::ToyBlobs {
                    count: 100,
                    resolution: 32,
                    channels: 3,
                    seed: 8,
                    xflip: true,
                },
                total_kimg,
                seed: 1,
            }),
            workers: 1,
        }
    }
}

fn prepare_donor(plan: &ExperimentPlan) -> Result<Option<PathBuf>> {
    if !plan.runs.iter().any(|r| r.setup == Setup::Transfer) {
        return Ok(None);
    }
    match &plan.donor {
        None => Err(contract("transfer runs need a `donor`")),
        Some(DonorSource::Checkpoint { path }) => Ok(Some(path.clone())),
        Some(DonorSource::Pretrain { dataset, total_kimg, seed }) => {
            let dir = plan.output_root.join("donor");
            let mut cfg = plan.base()?;
            cfg.seed = *seed;
            cfg.total_kimg = *total_kimg;
            cfg.snapshot_interval_kimg = total_kimg.max(1e-3);
            cfg.validate()?;
            train(cfg, dataset.load()?, Some(&dir))?;
            Ok(Some(dir.join(FINAL_CHECKPOINT)))
        }
    }
}

fn execute(plan: &ExperimentPlan, run: &RunSpec, data: &Dataset, donor: Option<&Path>) -> SweepRow {
    let mut row = SweepRow {
        id: run.id.clone(),
        setup: run.setup,
        freeze_d: run.freeze_d,
        aug: run.aug_preset.clone(),
        gamma: run.gamma,
        best_kid: None,
        best_step: None,
        best_kimg: None,
        status: "error".into(),
        error: None,
        trajectory: Vec::new(),
    };
    let dir = plan.output_root.join(&run.id);
    let outcome = catch_unwind(AssertUnwindSafe(|| -> Result<_> {
        let cfg = plan.run_config(run, donor)?;
        let gamma = cfg.gamma();
        Ok((gamma, train(cfg, data.clone(), Some(&dir))?))
    }));
    match outcome {
        Ok(Ok((gamma, report))) => {
            row.gamma = Some(gamma);
            row.trajectory = report
                .history
                .iter()
                .enumerate()
                .map(|(i, m)| TrajectoryPoint {
                    snapshot: i,
                    step: m.step,
                    kimg: m.kimg,
                    kid: m.kid,
                })
                .collect();
            if let Some(b) = report.best {
                row.best_kid = Some(b.kid);
                row.best_step = Some(b.snapshot);
                row.best_kimg = Some(b.kimg);
            }
            row.status = "ok".into();
        }
        Ok(Err(e)) => row.error = Some(e.to_string()),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            row.error = Some(format!("panic: {msg}"));
        }
    }
    if let Some(e) = &row.error {
        log::error!("run {} failed: {e}", run.id);
    }
    row
}

/// Runs every plan entry, isolating failures, and writes `report.csv`,
/// `report.txt` and one `kid_trajectory.csv` per successful run. Rows
/// follow plan order.
pub fn run_sweep(plan: &ExperimentPlan) -> Result<SweepReport> {
    plan.validate()?;
    let root = &plan.output_root;
    std::fs::create_dir_all(root).at(root)?;
    let plan_path = root.join("plan.json");
    std::fs::write(&plan_path, serde_json::to_string_pretty(plan)?).at(&plan_path)?;
    let mut rows = Vec::with_capacity(plan.runs.len());
    if !plan.runs.is_empty() {
        let data = plan.dataset.load()?;
        let donor = prepare_donor(plan)?;
        let workers = plan.workers.clamp(1, plan.runs.len());
        let mut slots: Vec<Option<SweepRow>> = vec![None; plan.runs.len()];
        std::thread::scope(|s| {
            let chunks: Vec<Vec<usize>> = (0..workers)
                .map(|w| (w..plan.runs.len()).step_by(workers).collect())
                .collect();
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|idx| {
                    let (data, donor) = (&data, donor.as_deref());
                    s.spawn(move || {
                        idx.into_iter()
                            .map(|i| (i, execute(plan, &plan.runs[i], data, donor)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, row) in h.join().expect("sweep worker") {
                    slots[i] = Some(row);
                }
            }
        });
        rows = slots.into_iter().map(|r| r.expect("every run reported")).collect();
    }
    let report = SweepReport { rows };
    for row in report.rows.iter().filter(|r| r.status == "ok") {
        let dir = root.join(&row.id);
        let path = dir.join(TRAJECTORY_CSV);
        std::fs::write(&path, report.trajectory_csv(row)).at(&path)?;
    }
    let csv = root.join(REPORT_CSV);
    std::fs::write(&csv, report.to_csv()).at(&csv)?;
    let txt = root.join(REPORT_TXT);
    std::fs::write(&txt, report.to_table()).at(&txt)?;
    Ok(report)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn freeze_cell(row: &SweepRow) -> String {
    match row.setup {
        Setup::Scratch if row.freeze_d == 0 => "NA".into(),
        _ => row.freeze_d.to_string(),
    }
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.id,
                r.setup.name(),
                freeze_cell(r),
                r.aug,
                opt(r.gamma),
                opt(r.best_kid),
                opt(r.best_step),
                r.status
            );
        }
        out
    }

    pub fn trajectory_csv(&self, row: &SweepRow) -> String {
        let mut out = String::from("snapshot,step,kimg,kid\n");
        for p in &row.trajectory {
            let _ = writeln!(out, "{},{},{},{}", p.snapshot, p.step, p.kimg, opt(p.kid));
        }
        out
    }

    /// Aligned text table with KID in units of 10⁻³.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<8} {:<9} {:>8} {:<6} {:>7} {:>12} {:>9} {:>9}  {}\n",
            "id", "setup", "freeze_d", "aug", "gamma", "best_kid_e3", "at_snap", "at_kimg", "status"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<8} {:<9} {:>8} {:<6} {:>7} {:>12} {:>9} {:>9}  {}",
                r.id,
                r.setup.name(),
                freeze_cell(r),
                r.aug,
                r.gamma.map(|g| format!("{g:.4}")).unwrap_or_default(),
                r.best_kid.map(|k| format!("{:.3}", k * 1e3)).unwrap_or_default(),
                opt(r.best_step),
                r.best_kimg.map(|k| format!("{k:.3}")).unwrap_or_default(),
                match &r.error {
                    Some(e) => format!("error: {e}"),
                    None => r.status.clone(),
                }
            );
        }
        out
    }
}
