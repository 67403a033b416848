use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;
use std::thread;

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::loss::{LossConfig, RegKind};
use crate::nn::{load_checkpoint, save_checkpoint, Network};
use crate::procgen::{generate_test_sequences, generate_training_set, FramePair, SequenceSet};

use super::config::ExperimentConfig;
use super::train::{evaluate, finetune, pretrain};

/// One cell of the sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Condition {
    /// The pretrained network, evaluated without fine-tuning.
    Baseline,
    Finetune {
        reg_kind: RegKind,
        alpha: f64,
    },
}

impl Condition {
    pub fn label(&self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::Finetune { reg_kind, .. } => reg_kind.as_str(),
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            Condition::Baseline => 0.0,
            Condition::Finetune { alpha, .. } => *alpha,
        }
    }

    pub fn id(&self) -> String {
        format!("{}@{}", self.label(), self.alpha())
    }

    fn cmp_key(&self, other: &Self) -> Ordering {
        self.label()
            .cmp(other.label())
            .then(self.alpha().total_cmp(&other.alpha()))
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    Failed,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Failed => "failed",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub condition: Condition,
    pub seed: u64,
    pub psnr_db: f64,
    pub smoothness: f64,
    pub pretrain_step_ms: f64,
    pub finetune_step_ms: f64,
    pub status: RunStatus,
    /// Why the run failed, if it did.
    pub error: Option<String>,
    pub checkpoint: Option<PathBuf>,
}

/// The conditions of a sweep in CSV order: baseline, the unregularized
/// fine-tune, every listed regularizer at every strength and augmentation.
pub fn conditions(cfg: &ExperimentConfig) -> Vec<Condition> {
    let mut out = vec![
        Condition::Baseline,
        Condition::Finetune {
            reg_kind: RegKind::None,
            alpha: 0.0,
        },
    ];
    let alphas = cfg.sweep.alphas();
    for &reg_kind in &cfg.sweep.reg_kinds {
        for &alpha in &alphas {
            out.push(Condition::Finetune { reg_kind, alpha });
        }
    }
    if let Some(alpha) = cfg.sweep.augmentation_alpha {
        out.push(Condition::Finetune {
            reg_kind: RegKind::Augmentation,
            alpha,
        });
    }
    out.sort_by(Condition::cmp_key);
    out.dedup();
    out
}

/// Training pairs and test sequences of an experiment.
pub struct Datasets {
    pub train: Vec<FramePair>,
    pub test: SequenceSet,
}

pub fn generate_datasets(cfg: &ExperimentConfig) -> Result<Datasets> {
    Ok(Datasets {
        train: generate_training_set(&cfg.train_scene, cfg.train_count)?,
        test: generate_test_sequences(
            &cfg.test_scene,
            cfg.test_sequences,
            cfg.test_frames,
            cfg.frame_rate,
        )?,
    })
}

pub fn pretrain_checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join("checkpoints")
        .join(format!("pretrain_seed{seed}.ckpt"))
}

fn finetune_checkpoint_path(dir: &Path, cond: &Condition, seed: u64) -> PathBuf {
    dir.join("checkpoints").join(format!(
        "{}_a{}_seed{seed}.ckpt",
        cond.label(),
        cond.alpha()
    ))
}

#[derive(Clone, Debug)]
struct Pretrained {
    network: Network,
    step_ms: f64,
}

/// Loads the pretrained checkpoint of `seed` if one with matching network
/// config exists, otherwise trains and saves it. A sidecar file keeps the
/// step time so that reloaded runs report it too.
fn pretrain_or_load(cfg: &ExperimentConfig, train: &[FramePair], seed: u64) -> Result<Pretrained> {
    let path = pretrain_checkpoint_path(&cfg.output_dir, seed);
    let info = path.with_extension("txt");
    if path.exists() && info.exists() {
        let network = load_checkpoint(&path)?;
        if network.config() == &cfg.network {
            let kv = KeyValues::parse(&fs::read_to_string(&info)?)?;
            return Ok(Pretrained {
                network,
                step_ms: kv.require("step_ms")?,
            });
        }
    }
    let out = pretrain(&cfg.network, train, &cfg.pretrain, seed)?;
    fs::create_dir_all(path.parent().expect("checkpoint dir"))?;
    save_checkpoint(&out.network, &path)?;
    let mut kv = KeyValues::new();
    kv.set("seed", seed);
    kv.set("step_ms", out.train.step_ms);
    kv.set("initial_mse", out.initial_mse);
    kv.set("final_mse", out.final_mse);
    fs::write(&info, kv.to_text())?;
    Ok(Pretrained {
        network: out.network,
        step_ms: out.train.step_ms,
    })
}

fn failed(condition: Condition, seed: u64, pretrain_step_ms: f64, err: &Error) -> RunRecord {
    RunRecord {
        condition,
        seed,
        psnr_db: f64::NAN,
        smoothness: f64::NAN,
        pretrain_step_ms,
        finetune_step_ms: f64::NAN,
        status: RunStatus::Failed,
        error: Some(err.to_string()),
        checkpoint: None,
    }
}

fn run_one(
    cfg: &ExperimentConfig,
    data: &Datasets,
    base: &Pretrained,
    condition: Condition,
    seed: u64,
) -> Result<RunRecord> {
    let (net, finetune_step_ms, checkpoint) = match condition {
        Condition::Baseline => (
            base.network.clone(),
            0.0,
            pretrain_checkpoint_path(&cfg.output_dir, seed),
        ),
        Condition::Finetune { reg_kind, alpha } => {
            let loss = LossConfig {
                reg_kind,
                alpha,
                ..cfg.loss
            };
            let (net, out) = finetune(&base.network, &data.train, &loss, &cfg.finetune, seed)?;
            let path = finetune_checkpoint_path(&cfg.output_dir, &condition, seed);
            save_checkpoint(&net, &path)?;
            (net, out.step_ms, path)
        }
    };
    let rep = evaluate(&net, &data.test, cfg.y_max())?;
    Ok(RunRecord {
        condition,
        seed,
        psnr_db: rep.psnr,
        smoothness: rep.smoothness,
        pretrain_step_ms: base.step_ms,
        finetune_step_ms,
        status: RunStatus::Ok,
        error: None,
        checkpoint: Some(checkpoint),
    })
}

/// Runs `jobs` on `workers` threads; results keep the job order.
fn parallel_map<J: Sync, T: Send>(
    jobs: &[J],
    workers: usize,
    f: impl Fn(&J) -> T + Sync,
) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, AtomicOrdering::Relaxed);
                let Some(job) = jobs.get(k) else { break };
                let out = f(job);
                slots.lock().expect("worker panicked")[k] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub records: Vec<RunRecord>,
    pub summary: Vec<ConditionSummary>,
}

/// Pretrains (or reloads) one network per seed, fine-tunes it under every
/// condition and evaluates each result. Failed runs are recorded, not fatal.
/// Rows come back sorted by (reg_kind, alpha, seed).
pub fn run_sweep_with(cfg: &ExperimentConfig, data: &Datasets) -> Result<SweepResult> {
    cfg.validate()?;
    fs::create_dir_all(cfg.output_dir.join("checkpoints"))?;
    let seeds = cfg.run_seeds();
    let bases = parallel_map(&seeds, cfg.workers, |&s| {
        pretrain_or_load(cfg, &data.train, s)
    });
    let conds = conditions(cfg);
    let jobs: Vec<(Condition, usize)> = conds
        .iter()
        .flat_map(|&c| (0..seeds.len()).map(move |k| (c, k)))
        .collect();
    let records = parallel_map(&jobs, cfg.workers, |&(cond, k)| {
        let seed = seeds[k];
        match &bases[k] {
            Err(e) => failed(cond, seed, f64::NAN, e),
            Ok(base) => run_one(cfg, data, base, cond, seed)
                .unwrap_or_else(|e| failed(cond, seed, base.step_ms, &e)),
        }
    });
    let summary = summarize(&records);
    Ok(SweepResult { records, summary })
}

/// [`run_sweep_with`] on freshly generated data; writes `runs.csv`,
/// `summary.csv`, `summary.dat` and the effective `config.txt` to the output
/// directory.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let data = generate_datasets(cfg)?;
    let res = run_sweep_with(cfg, &data)?;
    fs::write(cfg.output_dir.join("config.txt"), cfg.to_kv().to_text())?;
    write_runs_csv(&cfg.output_dir.join("runs.csv"), &res.records)?;
    write_summary_csv(&cfg.output_dir.join("summary.csv"), &res.summary)?;
    fs::write(
        cfg.output_dir.join("summary.dat"),
        summary_dat(&res.summary),
    )?;
    Ok(res)
}

pub const RUNS_HEADER: [&str; 8] = [
    "reg_kind",
    "alpha",
    "seed",
    "psnr_db",
    "smoothness",
    "pretrain_step_ms",
    "finetune_step_ms",
    "status",
];

/// Shortest representation that parses back to the same value.
fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

pub fn runs_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RUNS_HEADER)?;
    for r in records {
        w.write_record([
            r.condition.label().to_string(),
            num(r.condition.alpha()),
            r.seed.to_string(),
            num(r.psnr_db),
            num(r.smoothness),
            num(r.pretrain_step_ms),
            num(r.finetune_step_ms),
            r.status.as_str().to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_runs_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    fs::write(path, runs_csv(records)?)?;
    Ok(())
}

/// Mean and sample standard deviation over the successful seeds of a condition.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub runs: usize,
    pub failed: usize,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub smoothness_mean: f64,
    pub smoothness_std: f64,
}

/// `(mean, sample std)`; the std of a single value is 0.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(records: &[RunRecord]) -> Vec<ConditionSummary> {
    let mut conds: Vec<Condition> = records.iter().map(|r| r.condition).collect();
    conds.sort_by(Condition::cmp_key);
    conds.dedup();
    conds
        .into_iter()
        .map(|c| {
            let rows: Vec<&RunRecord> = records.iter().filter(|r| r.condition == c).collect();
            let ok: Vec<&&RunRecord> = rows.iter().filter(|r| r.status == RunStatus::Ok).collect();
            let (psnr_mean, psnr_std) = mean_std(&ok.iter().map(|r| r.psnr_db).collect::<Vec<_>>());
            let (smoothness_mean, smoothness_std) =
                mean_std(&ok.iter().map(|r| r.smoothness).collect::<Vec<_>>());
            ConditionSummary {
                condition: c,
                runs: ok.len(),
                failed: rows.len() - ok.len(),
                psnr_mean,
                psnr_std,
                smoothness_mean,
                smoothness_std,
            }
        })
        .collect()
}

pub fn write_summary_csv(path: &Path, summary: &[ConditionSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "reg_kind",
        "alpha",
        "runs",
        "failed",
        "psnr_mean",
        "psnr_std",
        "smoothness_mean",
        "smoothness_std",
    ])?;
    for s in summary {
        w.write_record([
            s.condition.label().to_string(),
            num(s.condition.alpha()),
            s.runs.to_string(),
            s.failed.to_string(),
            num(s.psnr_mean),
            num(s.psnr_std),
            num(s.smoothness_mean),
            num(s.smoothness_std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Whitespace-separated table with one gnuplot index block per condition.
pub fn summary_dat(summary: &[ConditionSummary]) -> String {
    let mut out = String::from("# alpha psnr_mean psnr_std smoothness_mean smoothness_std\n");
    let mut last: Option<&str> = None;
    for s in summary {
        let label = s.condition.label();
        if last != Some(label) {
            if last.is_some() {
                out.push_str("\n\n");
            }
            out.push_str(&format!("# {label}\n"));
            last = Some(label);
        }
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            num(s.condition.alpha()),
            num(s.psnr_mean),
            num(s.psnr_std),
            num(s.smoothness_mean),
            num(s.smoothness_std)
        ));
    }
    out
}
