use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use tempstab::harness::{self, ExperimentConfig};
use tempstab::loss::{LossConfig, RegKind};
use tempstab::metrics::{report, TemporalFilter};
use tempstab::nn::{load_checkpoint, save_checkpoint};
use tempstab::procgen::{self, FramePair, SequenceSet};

#[derive(Parser)]
#[command(
    name = "tempstab",
    version,
    about = "Train image-to-image CNNs with temporal-stability regularization"
)]
struct Cli {
    /// Experiment config in `key = value` format; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the number of parallel sweep workers.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Writes the training set and the test sequences as 16-bit PGM files.
    GenData,
    /// Trains a fresh network on the reconstruction loss only.
    Pretrain,
    /// Continues training a checkpoint under a regularized objective.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides `loss.reg_kind`.
        #[arg(long)]
        reg_kind: Option<RegKind>,
        /// Overrides `loss.alpha`.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Evaluates a checkpoint on the test sequences and prints one CSV line.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset written by `gen-data` (its `test` folder); generated from the config if absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also writes the predictions as a dataset whose `y` frames are the reconstructions.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long, default_value = "eval")]
        condition: String,
    },
    /// Runs every condition of the sweep for every seed and writes `runs.csv` and `summary.csv`.
    Sweep,
    /// Compares the `y` frames of two datasets, masked by the reference's saturation masks.
    Metrics {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        reconstruction: PathBuf,
        #[arg(long, default_value = "reconstruction")]
        condition: String,
        /// PSNR peak; defaults to the reference's `y_max`.
        #[arg(long)]
        peak: Option<f64>,
        /// Uses every pixel instead of the saturated ones.
        #[arg(long)]
        unmasked: bool,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::parse(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn training_set(cfg: &ExperimentConfig) -> anyhow::Result<Vec<FramePair>> {
    eprintln!("generating {} training patches", cfg.train_count);
    Ok(procgen::generate_training_set(
        &cfg.train_scene,
        cfg.train_count,
    )?)
}

fn test_set(cfg: &ExperimentConfig, data: Option<&Path>) -> anyhow::Result<SequenceSet> {
    match data {
        Some(dir) => {
            let (set, y_max) = procgen::read_dataset(dir)?;
            if y_max != cfg.y_max() {
                bail!(
                    "dataset y_max {y_max} differs from config y_max {}",
                    cfg.y_max()
                );
            }
            Ok(set)
        }
        None => Ok(procgen::generate_test_sequences(
            &cfg.test_scene,
            cfg.test_sequences,
            cfg.test_frames,
            cfg.frame_rate,
        )?),
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    let out = &cfg.output_dir;
    match &cli.command {
        Command::GenData => {
            let train = SequenceSet {
                sequences: training_set(&cfg)?.into_iter().map(|p| vec![p]).collect(),
                frame_rate: cfg.frame_rate,
            };
            procgen::write_dataset(&out.join("train"), &train, cfg.y_max())?;
            procgen::write_dataset(&out.join("test"), &test_set(&cfg, None)?, cfg.y_max())?;
            println!("wrote {}", out.display());
        }
        Command::Pretrain => {
            let data = training_set(&cfg)?;
            let res = harness::pretrain(&cfg.network, &data, &cfg.pretrain, cfg.seed)?;
            let path = out.join(format!("pretrain_seed{}.ckpt", cfg.seed));
            fs::create_dir_all(out)?;
            save_checkpoint(&res.network, &path)?;
            println!("checkpoint,initial_mse,final_mse,step_ms");
            println!(
                "{},{},{},{}",
                path.display(),
                res.initial_mse,
                res.final_mse,
                res.train.step_ms
            );
        }
        Command::Finetune {
            checkpoint,
            reg_kind,
            alpha,
        } => {
            let base = load_checkpoint(checkpoint)?;
            if base.config() != &cfg.network {
                bail!("checkpoint network does not match the config's net.* settings");
            }
            let loss = LossConfig {
                reg_kind: reg_kind.unwrap_or(cfg.loss.reg_kind),
                alpha: alpha.unwrap_or(cfg.loss.alpha),
                ..cfg.loss
            };
            loss.validate()?;
            let data = training_set(&cfg)?;
            let (net, res) = harness::finetune(&base, &data, &loss, &cfg.finetune, cfg.seed)?;
            let path = out.join(format!(
                "{}_a{}_seed{}.ckpt",
                loss.reg_kind, loss.alpha, cfg.seed
            ));
            fs::create_dir_all(out)?;
            save_checkpoint(&net, &path)?;
            println!("checkpoint,final_loss,step_ms");
            let last = res.epoch_losses.last().copied().unwrap_or(f64::NAN);
            println!("{},{},{}", path.display(), last, res.step_ms);
        }
        Command::Eval {
            checkpoint,
            data,
            dump,
            condition,
        } => {
            let net = load_checkpoint(checkpoint)?;
            let set = test_set(&cfg, data.as_deref())?;
            let rep = harness::evaluate(&net, &set, cfg.y_max())?;
            if let Some(dir) = dump {
                let recs = harness::predict(&net, &set)?;
                let dumped = SequenceSet {
                    sequences: set
                        .sequences
                        .iter()
                        .zip(recs)
                        .map(|(seq, rec)| {
                            seq.iter()
                                .zip(rec)
                                .map(|(p, y)| FramePair {
                                    y: y.clamp(0.0, cfg.y_max()),
                                    x: p.x.clone(),
                                    mask: p.mask.clone(),
                                })
                                .collect()
                        })
                        .collect(),
                    frame_rate: set.frame_rate,
                };
                procgen::write_dataset(dir, &dumped, cfg.y_max())?;
            }
            println!("condition,psnr_db,smoothness,masked_pixels");
            println!(
                "{condition},{},{},{}",
                rep.psnr, rep.smoothness, rep.masked_pixels
            );
        }
        Command::Sweep => {
            let res = harness::run_sweep(&cfg)?;
            for r in res.records.iter().filter(|r| r.error.is_some()) {
                eprintln!(
                    "{} seed {} failed: {}",
                    r.condition,
                    r.seed,
                    r.error.as_deref().unwrap_or("")
                );
            }
            print!("{}", harness::summary_dat(&res.summary));
        }
        Command::Metrics {
            reference,
            reconstruction,
            condition,
            peak,
            unmasked,
        } => {
            let (r, y_max) = procgen::read_dataset(reference)?;
            let (p, _) = procgen::read_dataset(reconstruction)?;
            let ys = |s: &SequenceSet| -> Vec<Vec<_>> {
                s.sequences
                    .iter()
                    .map(|q| q.iter().map(|f| f.y.clone()).collect())
                    .collect()
            };
            let masks: Vec<Vec<_>> = r
                .sequences
                .iter()
                .map(|q| q.iter().map(|f| f.mask.clone()).collect())
                .collect();
            let filt = TemporalFilter::new(TemporalFilter::DEFAULT_SIGMA_SECONDS, r.frame_rate)?;
            let m = (!unmasked).then_some(masks.as_slice());
            let rep = report(&ys(&r), &ys(&p), m, peak.unwrap_or(y_max), &filt)?;
            println!("condition,psnr_db,smoothness,masked_pixels");
            println!(
                "{condition},{},{},{}",
                rep.psnr, rep.smoothness, rep.masked_pixels
            );
        }
    }
    Ok(())
}
