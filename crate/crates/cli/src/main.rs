//! `corpusseg` command-line experiments.
//!
//! Exit codes: 0 on success, 1 when a built-in assertion fails or a command
//! errors, 2 on usage errors.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use corpusseg::rerank::RankerConfig;

use crate::commands::{GenCorpusArgs, GradcheckArgs, Outcome, RerankArgs, SweepArgs};

/// Invalid arguments detected after parsing; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Parser)]
#[command(
    version,
    about = "Corpus-level segmentation losses, metrics and re-ranking experiments"
)]
struct Cli {
    /// Seed for every random choice the command makes
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Write the report here instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Report format
    #[arg(long, global = true, value_enum, default_value = "text")]
    format: Format,

    /// Pass threshold of assertion-style commands
    #[arg(long, global = true)]
    tolerance: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus mean IOU/UOI of hard predictions against ground truths
    Eval {
        /// Predicted label grids, paired in order with --gt
        #[arg(long, num_args = 1..)]
        pred: Vec<PathBuf>,
        /// Ground-truth label grids
        #[arg(long, num_args = 1..)]
        gt: Vec<PathBuf>,
    },
    /// Compare analytic loss gradients with central finite differences
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 8)]
        height: usize,
        #[arg(long, default_value_t = 8)]
        width: usize,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        /// Finite-difference step
        #[arg(long, default_value_t = commands::DEFAULT_STEP)]
        step: f64,
    },
    /// Tabulate per-class IOU/UOI and their FP/FN gradients on a grid
    Sweep {
        #[arg(long, default_value_t = 1000.0)]
        gt: f64,
        #[arg(long, default_value_t = 0.0)]
        fp_min: f64,
        /// Defaults to GT
        #[arg(long)]
        fp_max: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        fn_min: f64,
        /// Defaults to GT - GT/steps
        #[arg(long)]
        fn_max: Option<f64>,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        /// Write the full table as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train on a synthetic corpus
    Train {
        /// TOML configuration; defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the history CSV here
        #[arg(long)]
        history: Option<PathBuf>,
        /// Write the final parameters here
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Continue one checkpoint under cross-entropy, UOI and the combined loss
    Warmstart {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Start from these parameters instead of a fresh cross-entropy run
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write one history CSV per branch into this directory
        #[arg(long)]
        history_dir: Option<PathBuf>,
    },
    /// Select one proposal per image and score the selections
    Rerank {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        proposal_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        /// kl, ranker, oracle or random
        #[arg(long, default_value = "kl")]
        strategy: String,
        /// Ranker model file (required for --strategy ranker)
        #[arg(long)]
        model: Option<PathBuf>,
        /// Weight of the background-mass term of the KL score
        #[arg(long, default_value_t = commands::DEFAULT_PENALTY)]
        background_penalty: f64,
    },
    /// Train a linear proposal ranker
    Trainranker {
        /// Corpus roots, each with pred/, gt/ and proposals/
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        model_out: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        lambda: f64,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-2)]
        learning_rate: f64,
    },
    /// Write a synthetic re-ranking corpus
    Gencorpus {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 50)]
        images: usize,
        /// Perturbed proposals per image
        #[arg(long, default_value_t = 10)]
        proposals: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        /// Side of the coarse grid
        #[arg(long, default_value_t = 13)]
        coarse: usize,
        #[arg(long, default_value_t = 0.1)]
        flip_rate: f64,
        /// Add the unperturbed ground truth to every set
        #[arg(long)]
        include_gt: bool,
        /// Add the prediction's own full-resolution source to every set
        #[arg(long)]
        embed_pred: bool,
    },
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Eval { pred, gt } => commands::eval(pred, gt),
        Command::Gradcheck {
            trials,
            height,
            width,
            classes,
            step,
        } => commands::gradcheck_cmd(&GradcheckArgs {
            seed,
            trials: *trials,
            height: *height,
            width: *width,
            classes: *classes,
            step: *step,
            tolerance: cli.tolerance.unwrap_or(1e-5),
        }),
        Command::Sweep {
            gt,
            fp_min,
            fp_max,
            fn_min,
            fn_max,
            steps,
            csv,
        } => commands::sweep(&SweepArgs {
            gt: *gt,
            fp_range: (*fp_min, fp_max.unwrap_or(*gt)),
            fn_range: (*fn_min, fn_max.unwrap_or(*gt - *gt / (*steps).max(1) as f64)),
            steps: *steps,
            csv: csv.clone(),
        }),
        Command::Train {
            config,
            history,
            checkpoint,
        } => commands::train_cmd(config.as_deref(), cli.seed, history.as_deref(), checkpoint.as_deref()),
        Command::Warmstart {
            config,
            checkpoint,
            history_dir,
        } => commands::warmstart_cmd(
            config.as_deref(),
            cli.seed,
            checkpoint.as_deref(),
            history_dir.as_deref(),
        ),
        Command::Rerank {
            pred_dir,
            proposal_dir,
            gt_dir,
            strategy,
            model,
            background_penalty,
        } => commands::rerank(&RerankArgs {
            pred_dir: pred_dir.clone(),
            proposal_dir: proposal_dir.clone(),
            gt_dir: gt_dir.clone(),
            strategy: strategy.clone(),
            model: model.clone(),
            background_penalty: *background_penalty,
            seed,
        }),
        Command::Trainranker {
            dirs,
            model_out,
            lambda,
            epochs,
            learning_rate,
        } => commands::trainranker(
            dirs,
            model_out,
            RankerConfig {
                lambda: *lambda,
                epochs: *epochs,
                learning_rate: *learning_rate,
                seed,
            },
        ),
        Command::Gencorpus {
            out_dir,
            images,
            proposals,
            height,
            width,
            classes,
            coarse,
            flip_rate,
            include_gt,
            embed_pred,
        } => commands::gencorpus(&GenCorpusArgs {
            out_dir: out_dir.clone(),
            seed,
            images: *images,
            proposals: *proposals,
            height: *height,
            width: *width,
            classes: *classes,
            coarse: *coarse,
            flip_rate: *flip_rate,
            include_gt: *include_gt,
            embed_pred: *embed_pred,
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    let outcome = match run(&cli) {
        Ok(outcome) => outcome,
        Err(err) => {
            eprintln!("error: {err:#}");
            let usage = err.downcast_ref::<Usage>().is_some();
            return ExitCode::from(if usage { 2 } else { 1 });
        }
    };
    let mut report = outcome.report;
    report.wall_time_s = started.elapsed().as_secs_f64();
    let text = match cli.format {
        Format::Text => report.render(),
        Format::Csv => report.metrics_csv(),
    };
    match &cli.out {
        Some(path) => {
            if let Err(err) = std::fs::write(path, text) {
                eprintln!("error: writing {}: {err}", path.display());
                return ExitCode::from(1);
            }
        }
        None => print!("{text}"),
    }
    if outcome.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
