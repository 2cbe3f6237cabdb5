use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use protgnn::config::TrainConfig;
use protgnn::explain::{explain, export_embeddings};
use protgnn::graph::{
    ba_shapes_dataset, generate_motif_dataset, load_dataset, save_dataset, split_dataset,
    BaShapesParams, Dataset, MotifParams,
};
use protgnn::model::{prepare_examples, Checkpoint, Model};
use protgnn::sampler::EdgeWeighting;
use protgnn::study::{run_hparam_study, write_study, StudyKind};
use protgnn::theorem::scan_dataset;
use protgnn::train::{check_compatible, evaluate, split_indices, train, Split, TrainEvent};
use protgnn::Error;

#[derive(Parser)]
#[command(
    name = "protgnn",
    version,
    about = "Prototype graph neural networks: train, evaluate and explain"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    BaShapes,
    Motif,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with an 80/10/10 split.
    Gen {
        #[arg(long, value_enum)]
        kind: GenKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Motif dataset: number of graphs.
        #[arg(long, default_value_t = 500)]
        graphs: usize,
        #[arg(long, default_value_t = 10)]
        min_background: usize,
        #[arg(long, default_value_t = 15)]
        max_background: usize,
        #[arg(long, default_value_t = 5)]
        cycle_len: usize,
        #[arg(long, default_value_t = 5)]
        degree_cap: usize,
        /// BA-Shapes: base graph size.
        #[arg(long, default_value_t = 300)]
        base_nodes: usize,
        #[arg(long, default_value_t = 80)]
        motifs: usize,
        #[arg(long, default_value_t = 5)]
        attach_edges: usize,
    },
    /// Train a model and write the checkpoint of the selected epoch.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        protgnn_plus: bool,
        /// Optional JSON file for per-epoch metrics.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Accuracy and confusion matrix on a split (JSON on stdout).
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Write an explanation bundle (JSON + DOT) for one instance.
    Explain {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Instance index (graph index, or node index for node tasks).
        #[arg(long)]
        graph: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the sampling-robustness theorem on every instance of a split.
    CheckTheorem {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Include per-instance reports in the output.
        #[arg(long)]
        verbose: bool,
    },
    /// CSV of instance embeddings and prototypes with class tags.
    ExportEmbeddings {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hyper-parameter study; writes report.json and summary.csv.
    Study {
        #[arg(long)]
        kind: StudyKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset to train on; defaults to a 500-graph motif dataset seeded
        /// from the config.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        e if e.is_numeric() => 4,
        _ => 3,
    }
}

fn load_model(ckpt: &PathBuf, data: &PathBuf) -> protgnn::Result<(Model, Dataset)> {
    let model = Model::from_checkpoint(&Checkpoint::load(ckpt)?)?;
    let dataset = load_dataset(data)?;
    check_compatible(&model, &dataset)?;
    Ok((model, dataset))
}

fn print_json(value: &impl serde::Serialize) -> protgnn::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> protgnn::Result<()> {
    match cli.command {
        Command::Gen {
            kind,
            out,
            seed,
            graphs,
            min_background,
            max_background,
            cycle_len,
            degree_cap,
            base_nodes,
            motifs,
            attach_edges,
        } => {
            let dataset = match kind {
                GenKind::Motif => generate_motif_dataset(
                    graphs,
                    seed,
                    &MotifParams {
                        min_background,
                        max_background,
                        cycle_len,
                        degree_cap,
                    },
                )?,
                GenKind::BaShapes => {
                    ba_shapes_dataset(base_nodes, motifs, seed, &BaShapesParams { attach_edges })?
                }
            };
            let dataset = split_dataset(dataset, seed);
            save_dataset(&dataset, &out)?;
            eprintln!(
                "wrote {} ({} instances) to {}",
                dataset.name,
                dataset.num_instances(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            data,
            config,
            out,
            protgnn_plus,
            metrics,
            quiet,
        } => {
            let mut cfg = TrainConfig::load(&config)?;
            cfg.protgnn_plus |= protgnn_plus;
            let dataset = load_dataset(&data)?;
            let result = train(&dataset, &cfg, |event| {
                if quiet {
                    return;
                }
                match event {
                    TrainEvent::Epoch(m) if m.epoch % 10 == 0 || m.epoch == 1 => eprintln!(
                        "epoch {:>4}  loss {:.4}  train {:.3}  val {:.3}",
                        m.epoch, m.loss.total, m.train_accuracy, m.val_accuracy
                    ),
                    TrainEvent::Projection { epoch, records, .. } => {
                        eprintln!("epoch {epoch:>4}  projected {} prototypes", records.len())
                    }
                    TrainEvent::Sampler { epoch, report } if epoch % 10 == 0 => eprintln!(
                        "epoch {:>4}  sampler sim {:.4} -> {:.4}",
                        epoch, report.mean_similarity_before, report.mean_similarity_after
                    ),
                    _ => {}
                }
            });
            match result {
                Ok(outcome) => {
                    outcome.checkpoint.save(&out)?;
                    if let Some(path) = metrics {
                        std::fs::write(path, serde_json::to_string_pretty(&outcome.metrics)?)?;
                    }
                    eprintln!(
                        "best epoch {}  val {:.4}  test {:.4}",
                        outcome.metrics.best_epoch,
                        outcome.metrics.best_val_accuracy,
                        outcome.metrics.test_accuracy
                    );
                    Ok(())
                }
                Err(failure) => {
                    if let Some(ckpt) = failure.last_good {
                        ckpt.save(&out)?;
                        eprintln!(
                            "wrote last good checkpoint (epoch {}) to {}",
                            ckpt.epoch,
                            out.display()
                        );
                    }
                    Err(failure.error)
                }
            }
        }
        Command::Eval { ckpt, data, split } => {
            let (model, dataset) = load_model(&ckpt, &data)?;
            print_json(&evaluate(&model, &dataset, split)?)
        }
        Command::Explain {
            ckpt,
            data,
            graph,
            out,
        } => {
            let (model, dataset) = load_model(&ckpt, &data)?;
            let e = explain(&model, &dataset, graph, &out)?;
            eprintln!(
                "instance {} label {} predicted {}; bundle in {}",
                e.instance,
                e.label,
                e.predicted,
                out.display()
            );
            Ok(())
        }
        Command::CheckTheorem {
            ckpt,
            data,
            delta,
            split,
            verbose,
        } => {
            let (model, dataset) = load_model(&ckpt, &data)?;
            let layer = model
                .prototype_layer()
                .ok_or_else(|| Error::Config("the theorem needs a prototype model".into()))?;
            let weighting = match &model.scorer {
                Some(s) => EdgeWeighting::Learned(s),
                None => EdgeWeighting::AllOnes,
            };
            let examples = prepare_examples(&dataset, model.encoder.config.num_layers)?;
            let items: Vec<_> = split_indices(&dataset, split)?
                .iter()
                .map(|&i| (i, examples[i].input(), examples[i].label))
                .collect();
            let mut summary = scan_dataset(
                &model.store,
                &model.encoder,
                layer,
                weighting,
                &items,
                delta,
            )?;
            if !verbose {
                summary.reports.clear();
            }
            print_json(&summary)
        }
        Command::ExportEmbeddings { ckpt, data, out } => {
            let (model, dataset) = load_model(&ckpt, &data)?;
            export_embeddings(&model, &dataset, &out)?;
            Ok(())
        }
        Command::Study {
            kind,
            config,
            out,
            data,
        } => {
            let cfg = TrainConfig::load(&config)?;
            let dataset = match data {
                Some(path) => load_dataset(path)?,
                None => split_dataset(
                    generate_motif_dataset(500, cfg.seed, &MotifParams::default())?,
                    cfg.seed,
                ),
            };
            let report = run_hparam_study(kind, &cfg, &dataset, |i, run| {
                eprintln!(
                    "run {i}: m {} l1 {} l2 {} l3 {}  test {:.4}",
                    run.m, run.lambda1, run.lambda2, run.lambda3, run.test_accuracy
                )
            })
            .map_err(|f| f.error)?;
            write_study(&report, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
