use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use salient_edge::data::{gen_synthetic, load_dataset, load_map_pairs, save_dataset, DatasetManifest};
use salient_edge::harness::{
    evaluate_model, run_ablation, write_log_csv, Checkpoint, Dtype, ExperimentConfig, OptimizerKind, Trainer,
};
use salient_edge::metrics::evaluate_maps;
use salient_edge::{Error, Result, Variant};

#[derive(Parser)]
#[command(version, about = "Edge-guided salient object detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic split as images/, masks/ and manifest.json.
    GenData {
        #[arg(long, env = "SALIENT_EDGE_OUT", default_value = "runs/data")]
        out: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train one variant; writes config.toml, train_log.csv and checkpoint.bin.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Variant label, e.g. "B" or "B+edge_TDLP+MRF_OTO".
        #[arg(long)]
        variant: Option<Variant>,
        /// Continue from a checkpoint; its config wins over every flag
        /// except `--epochs`.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Store float32 weights instead of float64.
        #[arg(long)]
        f32: bool,
        #[arg(long, env = "SALIENT_EDGE_OUT", default_value = "runs/train")]
        out: PathBuf,
    },
    /// Score a checkpoint and export 8-bit saliency and edge maps.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset folder with images/ and masks/; defaults to the
        /// checkpoint's test split.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, env = "SALIENT_EDGE_OUT", default_value = "runs/eval")]
        out: PathBuf,
    },
    /// Train and evaluate several variants over several seeds.
    Ablate {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Comma-separated variant labels.
        #[arg(long, value_delimiter = ',', default_values_t = [Variant::Baseline, Variant::EdgeTdlp, Variant::TdlpMrfProg, Variant::Full])]
        variants: Vec<Variant>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
        #[arg(long, env = "SALIENT_EDGE_OUT", default_value = "runs/ablation")]
        out: PathBuf,
    },
    /// Metrics and the 256-row PR curve for a folder of predicted maps.
    PrExport {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, env = "SALIENT_EDGE_OUT", default_value = "runs/pr")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the desk-scale preset instead of the full-scale defaults.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    accumulate: Option<usize>,
    #[arg(long, value_enum)]
    optimizer: Option<Optimizer>,
    /// Training set folder with images/ and masks/.
    #[arg(long)]
    train_dir: Option<PathBuf>,
    /// Test set folder with images/ and masks/.
    #[arg(long)]
    test_dir: Option<PathBuf>,
}

impl ExperimentArgs {
    fn resolve(&self, variant: Option<Variant>) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None if self.desk => ExperimentConfig::desk(Variant::Full),
            None => ExperimentConfig::full_scale(Variant::Full),
        };
        if let Some(v) = variant {
            config.model.variant = v;
        }
        if let Some(e) = self.epochs {
            config.epochs = e;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(lr) = self.lr {
            config.optimizer.lr = lr;
        }
        if let Some(a) = self.accumulate {
            config.optimizer.accumulate = a;
        }
        if let Some(o) = self.optimizer {
            config.optimizer.kind = match o {
                Optimizer::Sgd => OptimizerKind::Sgd,
                Optimizer::Adam => OptimizerKind::Adam,
            };
        }
        if let Some(dir) = &self.train_dir {
            config.data.train = directory_manifest("train", dir)?;
        }
        if let Some(dir) = &self.test_dir {
            config.data.test = directory_manifest("test", dir)?;
        }
        config.validate()?;
        Ok(config)
    }
}

fn directory_manifest(split: &str, dir: &Path) -> Result<DatasetManifest> {
    let samples = load_dataset(dir)?;
    let resolution = samples.first().map_or(0, |s| s.resolution().0);
    Ok(DatasetManifest::directory(split, dir, samples.len(), resolution))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            out,
            split,
            count,
            resolution,
            seed,
        } => {
            let samples = gen_synthetic(count, resolution, seed)?;
            let manifest = DatasetManifest::synthetic(split, count, resolution, seed);
            save_dataset(&out, &samples, Some(&manifest))?;
            println!("wrote {count} samples to {}", out.display());
        }
        Command::Train {
            exp,
            variant,
            resume,
            f32,
            out,
        } => {
            create_dir(&out)?;
            let mut trainer = match resume {
                Some(path) => {
                    let ckpt = Checkpoint::load(&path)?;
                    let samples = ckpt.config().data.train.materialize()?;
                    let mut trainer = Trainer::from_checkpoint(ckpt, samples)?;
                    if let Some(e) = exp.epochs {
                        trainer.set_epochs(e);
                    }
                    trainer
                }
                None => {
                    let config = exp.resolve(variant)?;
                    let samples = config.data.train.materialize()?;
                    Trainer::new(config, samples)?
                }
            };
            trainer.config().save(&out.join("config.toml"))?;
            let log = trainer.run()?;
            write_log_csv(&out.join("train_log.csv"), &log)?;
            let dtype = if f32 { Dtype::F32 } else { Dtype::F64 };
            trainer.checkpoint().save(&out.join("checkpoint.bin"), dtype)?;
            if let Some(last) = log.last() {
                println!(
                    "{}: {} updates, final loss {:.3}",
                    trainer.config().model.variant,
                    last.step,
                    last.loss.grand_total()
                );
            }
        }
        Command::Evaluate { checkpoint, data, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let model = ckpt.model()?;
            let samples = match data {
                Some(dir) => load_dataset(&dir)?,
                None => ckpt.config().data.test.materialize()?,
            };
            create_dir(&out)?;
            let report = evaluate_model(&model, &samples, Some(&out))?;
            report.saliency.write_csv(&out.join("metrics.csv"))?;
            report.saliency.write_pr_csv(&out.join("pr.csv"))?;
            let edge_metrics = format!("edge_max_f,images,empty_gt_skipped\n{:.6},{},{}\n", report.edge.max_f, report.edge.images, report.edge.empty_gt_skipped);
            let path = out.join("edge_metrics.csv");
            fs::write(&path, edge_metrics).map_err(|e| Error::Io { path, source: e })?;
            println!(
                "MaxF {:.4}  MAE {:.4}  S {:.4}  edge MaxF {:.4}",
                report.saliency.max_f, report.saliency.mae, report.saliency.s_measure, report.edge.max_f
            );
        }
        Command::Ablate {
            exp,
            variants,
            seeds,
            out,
        } => {
            let config = exp.resolve(None)?;
            create_dir(&out)?;
            config.save(&out.join("config.toml"))?;
            let table = run_ablation(&config, &variants, &seeds, |row| {
                println!(
                    "{:22} seed {}  MaxF {:.4}  MAE {:.4}  S {:.4}  edge MaxF {:.4}",
                    row.variant.label(),
                    row.seed.unwrap_or_default(),
                    row.max_f,
                    row.mae,
                    row.s_measure,
                    row.edge_max_f
                );
            })?;
            table.write_csv(&out.join("ablation.csv"))?;
            println!("wrote {}", out.join("ablation.csv").display());
        }
        Command::PrExport { pred, gt, out } => {
            let (preds, gts) = load_map_pairs(&pred, &gt)?;
            let report = evaluate_maps(&preds, &gts)?;
            create_dir(&out)?;
            report.write_csv(&out.join("metrics.csv"))?;
            report.write_pr_csv(&out.join("pr.csv"))?;
            println!("MaxF {:.4}  MAE {:.4}  S {:.4}", report.max_f, report.mae, report.s_measure);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
