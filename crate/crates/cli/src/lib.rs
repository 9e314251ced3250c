//! `mcseg` command-line front-end.

pub mod bench;
pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mcseg_core::model::Variant;

pub use bench::{cmd_bench, BenchReport, BenchRow};
pub use commands::{
    checkpoint_path, cmd_diff, cmd_eval, cmd_flow, cmd_infer, cmd_synth, cmd_train, cmd_xval,
    LogRow, TrainOutcome, XvalOutcome,
};
pub use config::{BenchConfig, OptimizerConfig, Predictor, Resolution, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] mcseg_core::Error),
}

impl CliError {
    /// 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        use mcseg_core::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(E::InvalidConfig { .. } | E::InvalidInput(_)) => 1,
            CliError::Core(E::NonFinite(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mcseg", version, about = "Motion-cue video object segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct Overrides {
    /// JSON run configuration; flags below override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub test_dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    /// Comma-separated seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    #[arg(long, global = true)]
    pub width_mult: Option<f64>,
    #[arg(long, global = true)]
    pub height: Option<usize>,
    #[arg(long, global = true)]
    pub width: Option<usize>,
    #[arg(long, global = true)]
    pub hs_iterations: Option<usize>,
    #[arg(long, global = true)]
    pub hs_alpha: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured synthetic suite in DAVIS layout.
    Synth {
        #[command(flatten)]
        o: Overrides,
    },
    /// Frame differences for every consecutive frame pair.
    Diff {
        #[command(flatten)]
        o: Overrides,
    },
    /// Horn–Schunck flow (.flo and color PNG) for every consecutive pair.
    Flow {
        #[command(flatten)]
        o: Overrides,
    },
    /// Train one network per seed.
    Train {
        #[command(flatten)]
        o: Overrides,
    },
    /// Predict masks for every frame with a checkpoint.
    Infer {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score checkpoints (or the oracle / empty predictor) against ground truth.
    Eval {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, value_enum)]
        predictor: Option<Predictor>,
    },
    /// Sequence-level k-fold cross-validation.
    Xval {
        #[command(flatten)]
        o: Overrides,
    },
    /// Time frame differencing against Horn–Schunck.
    Bench {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($src:ident => $dst:expr),* $(,)?) => {
                $(if let Some(v) = &self.$src { $dst = v.clone(); })*
            };
        }
        set!(
            output => c.output,
            dataset => c.dataset,
            variant => c.net.variant,
            seeds => c.seeds,
            epochs => c.epochs,
            batch_size => c.batch_size,
            lr => c.optimizer.lr,
            folds => c.folds,
            width_mult => c.net.width_mult,
            height => c.resolution.height,
            width => c.resolution.width,
            hs_iterations => c.flow.iterations,
            hs_alpha => c.flow.alpha,
        );
        if let Some(t) = &self.test_dataset {
            c.test_dataset = Some(t.clone());
        }
        Ok(c)
    }
}

/// Runs one subcommand and prints a one-line summary.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { o } => {
            let c = o.resolve()?;
            let names = cmd_synth(&c, &c.dataset)?;
            println!("wrote {} clips to {}", names.len(), c.dataset.display());
        }
        Command::Diff { o } => {
            let c = o.resolve()?;
            let n = cmd_diff(&c, &c.dataset)?;
            println!("wrote {n} difference images");
        }
        Command::Flow { o } => {
            let c = o.resolve()?;
            let n = cmd_flow(&c, &c.dataset)?;
            println!("wrote {n} flow fields");
        }
        Command::Train { o } => {
            let c = o.resolve()?;
            let out = cmd_train(&c)?;
            for p in &out.checkpoints {
                println!("{}", p.display());
            }
        }
        Command::Infer { o, checkpoint } => {
            let c = o.resolve()?;
            let n = cmd_infer(&c, &checkpoint)?;
            println!("wrote {n} masks");
        }
        Command::Eval {
            o,
            checkpoint,
            predictor,
        } => {
            let mut c = o.resolve()?;
            if let Some(p) = predictor {
                c.predictor = p;
            }
            let report = cmd_eval(&c, &checkpoint)?;
            for s in &report.summaries {
                println!("{} {}: F {:.4} IoU {:.4}", s.condition, s.variant, s.f, s.iou);
            }
        }
        Command::Xval { o } => {
            let c = o.resolve()?;
            let out = cmd_xval(&c)?;
            for s in &out.pooled.summaries {
                println!("pooled {} {}: F {:.4} IoU {:.4}", s.condition, s.variant, s.f, s.iou);
            }
        }
        Command::Bench {
            o,
            frames,
            repetitions,
            threads,
        } => {
            let mut c = o.resolve()?;
            if frames.is_some() {
                c.bench.frames = frames;
            }
            if let Some(r) = repetitions {
                c.bench.repetitions = r;
            }
            if let Some(t) = threads {
                c.bench.threads = t;
            }
            let report = cmd_bench(&c)?;
            for r in &report.rows {
                println!(
                    "{} {}x{}: mean {:.3} ms, median {:.3} ms, p95 {:.3} ms, ratio {:.1}",
                    r.method, r.width, r.height, r.mean_ms, r.median_ms, r.p95_ms, r.ratio
                );
            }
        }
    }
    Ok(())
}
