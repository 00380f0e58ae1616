use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use npclab::commands::{self, AnalyzeArgs, GradcheckArgs};
use npclab::error::{exit, LabError, Result};
use npclab::LabConfig;
use npclab_core::LossVariant;

#[derive(Parser)]
#[command(
    name = "npclab",
    version,
    about = "Margin-loss experiments on synthetic embedding tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and evaluate it.
    Train(Common),
    /// Evaluate a saved checkpoint on the configured open-set protocol.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train several loss variants on identical data and tabulate metrics.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Variant specs such as `arcface` or `npcface:m1=0`.
        #[arg(required = true, num_args = 2..)]
        variants: Vec<String>,
    },
    /// Train once per value of one config key.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Hardness correlation and distribution overlap.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Analyse this checkpoint instead of training per-epoch.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Class counts for a side-by-side correlation comparison.
        #[arg(long, value_delimiter = ',')]
        classes: Vec<usize>,
    },
    /// Finite-difference check of end-to-end gradients.
    Gradcheck {
        #[arg(long)]
        variant: String,
        /// `N,C,d`: samples, classes, embedding width.
        #[arg(long, default_value = "4,8,6")]
        shape: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write gradcheck.csv into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Perturb the analytic gradient (negative control).
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Train one model per embedding dimension and compare hard-negative histograms.
    Dimstudy {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
    },
}

fn prepare(common: &Common) -> Result<(LabConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(path) => LabConfig::load(path)?,
        None => LabConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("npclab-out"));
    Ok((cfg, out))
}

fn parse_shape(shape: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<usize> = shape
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| LabError::Config(format!("shape `{shape}` is not N,C,d")))?;
    match parts[..] {
        [n, c, d] => Ok((n, c, d)),
        _ => Err(LabError::Config(format!("shape `{shape}` is not N,C,d"))),
    }
}

fn report(dir: &Path, file: &str) {
    println!("wrote {}", dir.join(file).display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let (cfg, out) = prepare(&common)?;
            commands::train(&cfg, &out, common.quiet)?;
            report(&out, "summary.json");
        }
        Command::Evaluate { common, checkpoint } => {
            let (cfg, out) = prepare(&common)?;
            commands::evaluate(&cfg, &checkpoint, &out)?;
            report(&out, "evaluation.json");
        }
        Command::Compare { common, variants } => {
            let (cfg, out) = prepare(&common)?;
            commands::compare(&cfg, &variants, &out, common.quiet)?;
            report(&out, "compare.csv");
        }
        Command::Sweep { common, param, values } => {
            let (cfg, out) = prepare(&common)?;
            commands::sweep(&cfg, &param, &values, &out, common.quiet)?;
            report(&out, "sweep.csv");
        }
        Command::Analyze {
            common,
            checkpoint,
            classes,
        } => {
            let (cfg, out) = prepare(&common)?;
            let args = AnalyzeArgs {
                checkpoint: checkpoint.as_deref(),
                classes: &classes,
            };
            commands::analyze(&cfg, args, &out, common.quiet)?;
            report(&out, "analysis.json");
        }
        Command::Gradcheck {
            variant,
            shape,
            seed,
            out,
            corrupt,
        } => {
            let variant = LossVariant::parse(&variant)
                .ok_or_else(|| LabError::Config(format!("unknown loss variant `{variant}`")))?;
            let (n, c, d) = parse_shape(&shape)?;
            let args = GradcheckArgs {
                variant,
                n,
                c,
                d,
                seed,
                corrupt,
            };
            let result = commands::gradcheck(&args, out.as_deref())?;
            println!("max relative error: {:e}", result.max_relative_error);
            if !result.passed {
                return Err(LabError::GradCheck {
                    max_error: result.max_relative_error,
                    coordinate: result.worst,
                });
            }
        }
        Command::Dimstudy { common, dims } => {
            let (cfg, out) = prepare(&common)?;
            commands::dimstudy(&cfg, &dims, &out, common.quiet)?;
            report(&out, "dimstudy_histogram.csv");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
