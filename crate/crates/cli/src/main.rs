use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};

use sparsefilter_core::data::{load_cifar10_dir, load_mnist_dir, synthetic_blobs, LabeledDataset};
use sparsefilter_core::report::{export_pruned, render_filters_pgm, render_table, write_report_csv, RunReport};
use sparsefilter_core::train::{
    evaluate, layer_sweep, load_checkpoint, save_checkpoint, write_events, write_metrics_csv,
    Checkpoint, MANIFEST_FILE,
};
use sparsefilter_core::{
    build_lenet, build_vgg11, PruneConfig, PruneScope, RegMode, RegularizerConfig, TrainConfig,
    Trainer,
};

#[derive(Parser)]
#[command(name = "sparsefilter", version, about = "Train conv nets that prune their own filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Model {
    Lenet,
    Vgg11,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DatasetKind {
    Mnist,
    Cifar10,
    Synthetic,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Reg {
    None,
    L1,
    L2,
    Ratio,
}

impl From<Reg> for RegMode {
    fn from(r: Reg) -> Self {
        match r {
            Reg::None => RegMode::None,
            Reg::L1 => RegMode::L1,
            Reg::L2 => RegMode::L2,
            Reg::Ratio => RegMode::Ratio,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scope {
    Global,
    PerLayer,
}

#[derive(clap::Args)]
struct DataArgs {
    #[arg(long, value_enum)]
    dataset: DatasetKind,
    /// Directory holding the IDX files (mnist) or `cifar-10-batches-bin` (cifar10).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Use only the first N test images.
    #[arg(long)]
    test_limit: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network, pruning filters at the end of each epoch.
    Train {
        #[arg(long, value_enum, default_value = "lenet")]
        model: Model,
        #[command(flatten)]
        data: DataArgs,
        /// Use only the first N training images.
        #[arg(long)]
        train_limit: Option<usize>,
        #[arg(long, value_enum, default_value = "none")]
        reg: Reg,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        /// Cumulative normalized-norm mass below which filters are removed.
        #[arg(long, default_value_t = 0.01)]
        threshold: f64,
        #[arg(long, value_enum, default_value = "global")]
        prune_scope: Scope,
        #[arg(long, default_value_t = 1)]
        min_keep: usize,
        /// Train without the end-of-epoch pruning pass.
        #[arg(long)]
        no_prune: bool,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test error of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Sparsity table for one or more run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Render a conv layer's filters (first input channel) as a PGM grid.
    DumpFilters {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Conv layer, counted from 1.
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a structurally smaller checkpoint without the pruned filters.
    ExportPruned {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Zero one conv layer's filters in ascending norm order, recording error.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Conv layer, counted from 1.
        #[arg(long)]
        layer: usize,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

const SYNTHETIC_TRAIN_PER_CLASS: usize = 50;
const SYNTHETIC_TEST_PER_CLASS: usize = 20;

fn input_shape(model: Model, dataset: DatasetKind) -> [usize; 3] {
    match (model, dataset) {
        (_, DatasetKind::Mnist) => [1, 28, 28],
        (_, DatasetKind::Cifar10) | (Model::Vgg11, DatasetKind::Synthetic) => [3, 32, 32],
        (Model::Lenet, DatasetKind::Synthetic) => [1, 28, 28],
    }
}

/// Accepts either a run directory or the checkpoint directory inside it.
fn checkpoint_dir(path: &Path) -> PathBuf {
    if path.join(MANIFEST_FILE).exists() {
        path.to_path_buf()
    } else {
        path.join("checkpoint")
    }
}

fn load(path: &Path) -> Result<Checkpoint> {
    let dir = checkpoint_dir(path);
    load_checkpoint(&dir).with_context(|| format!("reading checkpoint {}", dir.display()))
}

fn load_split(data: &DataArgs, shape: [usize; 3], train: bool, limit: Option<usize>) -> Result<LabeledDataset> {
    let set = match data.dataset {
        DatasetKind::Synthetic => {
            let (per_class, seed) = if train {
                (SYNTHETIC_TRAIN_PER_CLASS, 1)
            } else {
                (SYNTHETIC_TEST_PER_CLASS, 2)
            };
            synthetic_blobs(10, per_class, shape, seed)?
        }
        DatasetKind::Mnist | DatasetKind::Cifar10 => {
            let dir = data.data_dir.as_deref().expect("checked by require_data_dir");
            let set = if data.dataset == DatasetKind::Mnist {
                load_mnist_dir(dir, train)
            } else {
                load_cifar10_dir(dir, train)
            };
            set.with_context(|| format!("loading dataset from {}", dir.display()))?
        }
    };
    if set.image_shape() != shape {
        bail!("dataset images are {:?}, model expects {shape:?}", set.image_shape());
    }
    Ok(match limit {
        Some(n) if n < set.len() => set.take(n)?,
        _ => set,
    })
}

fn require_data_dir(data: &DataArgs) {
    if data.dataset != DatasetKind::Synthetic && data.data_dir.is_none() {
        Cli::command()
            .error(
                ErrorKind::MissingRequiredArgument,
                "--data-dir is required for the mnist and cifar10 datasets",
            )
            .exit();
    }
}

fn conv_index(ckpt: &Checkpoint, layer: usize) -> Result<usize> {
    let count = ckpt.network.conv_count();
    if layer == 0 || layer > count {
        bail!("--layer must be between 1 and {count}");
    }
    Ok(layer - 1)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            model,
            data,
            train_limit,
            reg,
            lambda,
            threshold,
            prune_scope,
            min_keep,
            no_prune,
            epochs,
            batch_size,
            lr,
            momentum,
            seed,
            out,
        } => {
            require_data_dir(&data);
            let config = TrainConfig {
                epochs,
                batch_size,
                lr,
                momentum,
                seed,
                reg: RegularizerConfig::new(reg.into(), lambda)?,
                prune: PruneConfig {
                    threshold,
                    scope: match prune_scope {
                        Scope::Global => PruneScope::Global,
                        Scope::PerLayer => PruneScope::PerLayer,
                    },
                    min_keep,
                },
                prune_enabled: !no_prune,
            };
            config.validate()?;
            config.prune.validate()?;
            let shape = input_shape(model, data.dataset);
            let train = load_split(&data, shape, true, train_limit)?;
            let test = load_split(&data, shape, false, data.test_limit)?;
            let network = match model {
                Model::Lenet => build_lenet(shape, seed)?,
                Model::Vgg11 => build_vgg11(shape, seed)?,
            };
            let conv_layers = network.conv_count();
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut trainer = Trainer::new(network, config)?;
            let mut io_result = Ok(());
            trainer.run(&train, &test, |t| {
                let m = t.history.last().expect("one epoch finished");
                eprintln!(
                    "epoch {:>3}  loss {:.4}  reg {:.4}  error {:.2}%  sparsity {:.1}%  active {:?}",
                    m.epoch, m.loss_task, m.loss_reg, m.test_error_pct, m.total_sparsity_pct, m.active_counts
                );
                if io_result.is_ok() {
                    io_result = save_checkpoint(&out.join("checkpoint"), &t.checkpoint())
                        .and_then(|_| write_metrics_csv(&out.join("metrics.csv"), &t.history, conv_layers))
                        .and_then(|_| write_events(&out.join("events.jsonl"), &t.events));
                }
            })?;
            io_result?;
            println!("{}", out.display());
        }
        Command::Eval { checkpoint, data } => {
            require_data_dir(&data);
            let ckpt = load(&checkpoint)?;
            let test = load_split(&data, ckpt.network.input_shape(), false, data.test_limit)?;
            println!("{:.2}", evaluate(&ckpt.network, &test)?);
        }
        Command::Report { runs, csv } => {
            let rows = runs
                .iter()
                .map(|r| load(r).and_then(|c| Ok(RunReport::from_checkpoint(&c)?)))
                .collect::<Result<Vec<_>>>()?;
            print!("{}", render_table(&rows));
            if let Some(path) = csv {
                write_report_csv(&path, &rows)?;
            }
        }
        Command::DumpFilters { checkpoint, layer, out } => {
            let ckpt = load(&checkpoint)?;
            let l = conv_index(&ckpt, layer)?;
            let weights = &ckpt.network.conv_layer(l).expect("index checked").weights;
            fs::write(&out, render_filters_pgm(weights)?)
                .with_context(|| format!("writing {}", out.display()))?;
        }
        Command::ExportPruned { checkpoint, out } => {
            let small = export_pruned(&load(&checkpoint)?)?;
            save_checkpoint(&out, &small)?;
            println!("{:?}", small.network.conv_filter_counts());
        }
        Command::Sweep { checkpoint, layer, data, out } => {
            require_data_dir(&data);
            let ckpt = load(&checkpoint)?;
            let l = conv_index(&ckpt, layer)?;
            let test = load_split(&data, ckpt.network.input_shape(), false, data.test_limit)?;
            let curve = layer_sweep(&ckpt.network, &ckpt.mask, l, &test)?;
            let mut text = String::from("removed_count,error_pct\n");
            for p in &curve {
                text.push_str(&format!("{},{}\n", p.removed_count, p.error_pct));
            }
            fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
