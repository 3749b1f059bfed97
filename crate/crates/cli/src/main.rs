use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use srforge_cli::commands::{self, Architecture, ModelArg, Phase, DEFAULT_SEED};
use srforge_cli::tiling::{DEFAULT_OVERLAP, DEFAULT_TILE};
use srforge_core::eval::results_table;

/// x2 super-resolution: dataset building, training, evaluation, inference.
///
/// Errors are reported on stderr as one `error[stage]: message` line.
#[derive(Parser)]
#[command(name = "srforge", version)]
struct Cli {
    /// Seed for every random choice; recorded in the outputs.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a procedural HR/LR tile corpus and its pairing file.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        tiles: usize,
        /// HR tile side in pixels; the LR side is half of it.
        #[arg(long, default_value_t = 128)]
        hr_side: usize,
    },
    /// Pair, filter and split LR/HR patches from a tile pairing file.
    BuildDataset {
        /// JSON list of tile pairs.
        #[arg(long)]
        pairing: PathBuf,
        /// Output directory for patches, manifests and summary.
        #[arg(long)]
        out: PathBuf,
        /// Dataset config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Pretrain a generator or run adversarial training.
    Train {
        /// Dataset directory with train.json and val.json.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        model: Architecture,
        #[arg(long, value_enum, default_value = "pretrain")]
        phase: Phase,
        /// Output directory for the run record and weights.
        #[arg(long)]
        out: PathBuf,
        /// Pretrained generator directory (required for --phase gan).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Feature backbone directory for the perceptual loss.
        #[arg(long)]
        backbone: Option<PathBuf>,
        /// Train config JSON (schedule, weights, architecture overrides).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the epoch count of the chosen phase.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score methods on a test manifest; the Bicubic baseline is always included.
    Evaluate {
        /// Test split manifest.
        #[arg(long)]
        test: PathBuf,
        /// Generator directory, optionally as LABEL=DIR; repeatable.
        #[arg(long = "model")]
        models: Vec<ModelArg>,
        /// Per-item CSV output.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Full report JSON output.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Super-resolve a 3-band raster with tiled inference.
    Infer {
        /// Generator directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input SRRAS sidecar (.json) or PNG.
        #[arg(long)]
        input: PathBuf,
        /// Output .json (SRRAS) or .png.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TILE)]
        tile: usize,
        #[arg(long, default_value_t = DEFAULT_OVERLAP)]
        overlap: usize,
    },
    /// Render a captioned montage of test patches, GT plus one column per method.
    CompareFigure {
        #[arg(long)]
        test: PathBuf,
        #[arg(long = "model")]
        models: Vec<ModelArg>,
        /// Number of patches (rows).
        #[arg(long, default_value_t = 3)]
        patches: usize,
        /// Output PNG; a JSON sidecar with the captions is written beside it.
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SynthCorpus { .. } => "synth-corpus",
            Command::BuildDataset { .. } => "build-dataset",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Infer { .. } => "infer",
            Command::CompareFigure { .. } => "compare-figure",
        }
    }
}

fn run(cli: Cli) -> srforge_cli::Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::SynthCorpus { out, tiles, hr_side } => {
            let spec = srforge_core::synthetic::CorpusSpec {
                tiles,
                hr_side,
                ..Default::default()
            };
            let entries = srforge_core::synthetic::write_corpus(&out, &spec, seed)?;
            println!("{} tile pairs written to {}", entries.len(), out.join("pairing.json").display());
        }
        Command::BuildDataset { pairing, out, config } => {
            let s = commands::build_dataset(&commands::BuildDatasetArgs {
                pairing,
                out,
                config,
                seed,
            })?;
            print!("{}", s.table());
        }
        Command::Train {
            data,
            model,
            phase,
            out,
            checkpoint,
            backbone,
            config,
            epochs,
        } => {
            let r = commands::train(&commands::TrainArgs {
                data,
                model,
                phase,
                out: out.clone(),
                checkpoint,
                backbone,
                config,
                epochs,
                seed,
            })?;
            let last = r.epochs.last();
            println!(
                "{} epochs, status {:?}, final val L1 {:.5}; record in {}",
                r.epochs.len(),
                r.status,
                last.map_or(f64::NAN, |e| e.val_l1),
                out.display()
            );
        }
        Command::Evaluate { test, models, csv, json } => {
            let reports = commands::evaluate(&commands::EvaluateArgs {
                test,
                models,
                csv,
                json,
                seed,
            })?;
            print!("{}", results_table(&reports));
        }
        Command::Infer {
            checkpoint,
            input,
            out,
            tile,
            overlap,
        } => {
            let sr = commands::infer(&commands::InferArgs {
                checkpoint,
                input,
                out: out.clone(),
                tile,
                overlap,
            })?;
            println!("{}x{} written to {}", sr.width(), sr.height(), out.display());
        }
        Command::CompareFigure {
            test,
            models,
            patches,
            out,
        } => {
            let s = commands::compare_figure(&commands::FigureArgs {
                test,
                models,
                patches,
                out: out.clone(),
                seed,
            })?;
            println!(
                "{} patches x {} columns written to {}",
                s.items.len(),
                s.methods.len() + 1,
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    if let Err(e) = srforge_cli::configure_threads().and_then(|_| run(cli)) {
        eprintln!("{}", e.diagnostic(name));
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
