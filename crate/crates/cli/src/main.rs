mod commands;
mod logger;

use std::path::PathBuf;
use std::process::ExitCode;

use aeforce::error::ErrorClass;
use clap::{Args, Parser, Subcommand};

use commands::*;

#[derive(Parser, Debug)]
#[command(
    name = "aeforce",
    version,
    about = "Force-time reconstruction from acoustic emission"
)]
struct Cli {
    /// Flat dotted-key JSON config overlaid on the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Cache per-window spectrograms in DIR (default `<out>/spectrograms`).
    #[arg(long, global = true, num_args = 0..=1, value_name = "DIR")]
    cache_spectrograms: Option<Option<PathBuf>>,
    /// Override one config key, e.g. `--set fine.dt_s=0.5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print info messages to stderr, not just warnings.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Experiment directories, or roots containing them.
    #[arg(long = "data", required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Restrict to these experiment ids.
    #[arg(long = "only", num_args = 1..)]
    pub only: Vec<String>,
    /// Drop these experiment ids.
    #[arg(long = "exclude", num_args = 1..)]
    pub exclude: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert raw AE and force files into a canonical experiment directory.
    Ingest(IngestArgs),
    /// Force-drop, waiting-time and spectrum statistics.
    Stats {
        #[command(flatten)]
        data: DataArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the fine-scale increment model.
    TrainFine {
        #[command(flatten)]
        data: DataArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the coarse-scale force model.
    TrainCoarse {
        #[command(flatten)]
        data: DataArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict and combine both scales for each experiment.
    Predict {
        /// `model_fine.json` written by `train-fine`.
        #[arg(long)]
        fine_model: PathBuf,
        /// `model_coarse.json` written by `train-coarse`.
        #[arg(long)]
        coarse_model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine a fine curve (`t_s,f_mN`) with coarse anchors (`t_s,F_mN`).
    Combine {
        /// CSV with columns `t_s,f_mN`; its first time is the origin.
        #[arg(long)]
        fine: PathBuf,
        /// CSV with columns `t_s,F_mN` at multiples of `coarse.dt_s` after the origin.
        #[arg(long)]
        anchors: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Leave-one-experiment-out fine-scale scores.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Single-feature and subset importance.
    Importance {
        #[command(flatten)]
        data: DataArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Scores for every training composition and held-out experiment.
    Transfer {
        #[command(flatten)]
        data: DataArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic experiments with ground truth.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Experiments to generate (overrides `synth.count`).
        #[arg(long)]
        count: Option<usize>,
        /// Comma-separated snr values for a sweep; `inf` disables noise.
        #[arg(long, value_delimiter = ',')]
        snr: Vec<String>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<aeforce::Error>()) {
        Some(e) if e.class() == ErrorClass::Compute => 4,
        _ => 3,
    }
}

/// The error chain joined by `: `, skipping causes already quoted by their parent.
fn message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let s = cause.to_string();
        if !out.ends_with(&s) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&s);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    logger::init(if cli.verbose {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    });
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()?;
    }
    let cfg = resolve_config(cli.config.as_deref(), cli.seed, &cli.set)?;
    let cache = |out: &std::path::Path| {
        cli.cache_spectrograms
            .clone()
            .map(|d| d.unwrap_or_else(|| out.join("spectrograms")))
    };
    match cli.command {
        Command::Ingest(a) => ingest(&cfg, &a),
        Command::Stats { data, out } => stats(&cfg, &data, &out),
        Command::TrainFine { data, out } => train_fine(&cfg, &data, &out, cache(&out)),
        Command::TrainCoarse { data, out } => train_coarse(&cfg, &data, &out),
        Command::Predict {
            fine_model,
            coarse_model,
            data,
            out,
        } => predict(&cfg, &fine_model, &coarse_model, &data, &out, cache(&out)),
        Command::Combine { fine, anchors, out } => combine(&cfg, &fine, &anchors, &out),
        Command::Evaluate { data, out } => evaluate(&cfg, &data, &out, cache(&out)),
        Command::Importance { data, out } => importance(&cfg, &data, &out, cache(&out)),
        Command::Transfer { data, out } => transfer(&cfg, &data, &out, cache(&out)),
        Command::Synth { out, count, snr } => synth(&cfg, &out, count, &snr),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn message_skips_repeated_sources() {
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        let e = anyhow::Error::new(aeforce::Error::Io {
            path: "x.csv".into(),
            source: io,
        })
        .context("loading");
        assert_eq!(message(&e), "loading: x.csv: gone");
    }

    #[test]
    fn compute_errors_exit_with_four() {
        let e = anyhow::Error::new(aeforce::Error::DegenerateTarget);
        assert_eq!(exit_code(&e), 4);
        assert_eq!(exit_code(&anyhow::anyhow!("plain")), 3);
    }
}
