use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sigcnn::data::{load_strokes_jsonl, Samples};
use sigcnn::network::DeepCNetConfig;
use sigcnn::raster::RasterConfig;
use sigcnn_cli::config::{preset, RunConfig};
use sigcnn_cli::train::{evaluate_checkpoint, train, Split};
use sigcnn_cli::{inspect, verify};

#[derive(Parser)]
#[command(name = "sigcnn", version, about = "Sparse signature-grid DeepCNet experiments")]
struct Cli {
    /// Worker threads for batch-parallel work. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunSource {
    /// JSON run configuration.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: pendigits-m0..pendigits-m3, mnist-small.
    #[arg(long)]
    preset: Option<String>,
    /// Dataset root used by presets.
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    /// Output directory used by presets.
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunSource {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
            (None, Some(name)) => preset(name, &self.data_dir, &self.out_dir)?,
            (None, None) => bail!("either --config or --preset is required"),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network, logging per-epoch metrics and writing checkpoints.
    Train {
        #[command(flatten)]
        source: RunSource,
    },
    /// Score a checkpoint on the configured dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        source: RunSource,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Print architecture strings, path-count grids or rasterized characters.
    Inspect {
        #[command(subcommand)]
        subject: Subject,
    },
    /// Run a self-check suite: signatures, sparse-dense, gradients or all.
    Verify {
        suite: verify::Suite,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum Subject {
    Architecture {
        #[arg(long)]
        depth: usize,
        #[arg(long)]
        filters: usize,
    },
    /// Input-to-output path counts as CSV.
    Pathcounts {
        #[arg(long)]
        depth: usize,
    },
    /// Dense signature grid of one character from a JSON-lines stroke file.
    Grid {
        #[arg(long)]
        strokes: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 10)]
        scale: usize,
        #[arg(long, default_value_t = 2)]
        level: usize,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .context("starting thread pool")?;
    match cli.command {
        Command::Train { source } => {
            let cfg = source.resolve()?;
            println!("{}", cfg.network.architecture_string());
            let outcome = train(&cfg, |r| {
                println!(
                    "epoch {:3}  loss {:.4}  test error {:.2}%  {:.1}s",
                    r.epoch,
                    r.train_loss,
                    100.0 * r.test_error,
                    r.wall_seconds
                )
            })?;
            if let Some(e) = outcome.final_test_error() {
                println!("final test error {:.4}%", 100.0 * e);
            }
            println!("checkpoint {}", cfg.checkpoint.display());
            Ok(true)
        }
        Command::Eval {
            checkpoint,
            source,
            split,
        } => {
            let cfg = source.resolve()?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            print!("{}", evaluate_checkpoint(&cfg, &checkpoint, split)?.report());
            Ok(true)
        }
        Command::Inspect { subject } => {
            match subject {
                Subject::Architecture { depth, filters } => {
                    let cfg = DeepCNetConfig::new(depth, filters, 1, 2);
                    cfg.validate()?;
                    println!("{}", cfg.architecture_string());
                }
                Subject::Pathcounts { depth } => {
                    DeepCNetConfig::new(depth, 1, 1, 2).validate()?;
                    print!("{}", inspect::pathcounts_csv(depth));
                }
                Subject::Grid {
                    strokes,
                    index,
                    depth,
                    scale,
                    level,
                } => {
                    let ds = load_strokes_jsonl(&strokes)?;
                    let Samples::Strokes(chars) = &ds.samples else {
                        unreachable!()
                    };
                    let Some(ch) = chars.get(index) else {
                        bail!(
                            "{} holds {} characters, index {index} requested",
                            strokes.display(),
                            chars.len()
                        );
                    };
                    let side = DeepCNetConfig::new(depth, 1, 1, 2).input_side();
                    print!("{}", inspect::grid_csv(ch, &RasterConfig::new(side, scale, level))?);
                }
            }
            Ok(true)
        }
        Command::Verify { suite, seed } => {
            let results = verify::run(suite, seed)?;
            for r in &results {
                println!("{r}");
            }
            Ok(results.iter().all(|r| r.passed()))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
