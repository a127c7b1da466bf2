//! `tov-forge`: command-line driver for the sampling and pretraining pipeline.

pub mod commands;
pub mod config;
pub mod demo;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{Ablation, GradcheckArgs, PretrainArgs, Stage};

pub const THREADS_ENV: &str = "TOV_FORGE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tov-forge", version, about = "Scene sampling and two-stage contrastive pretraining")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Pipeline config (TOML). Defaults apply when omitted.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config entry, e.g. `--set stage1.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory, replacing `paths.output`.
    #[arg(short, long, global = true)]
    pub output: Option<PathBuf>,
    /// Worker threads; `TOV_FORGE_THREADS` takes precedence.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AblationArg {
    LearningPath,
    Sampling,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a small synthetic workspace with a ready-to-run config.
    Demo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Land-cover guided natural-scene sampling.
    SampleNatural {
        #[command(flatten)]
        common: Common,
    },
    /// OSM-guided man-made scene sampling.
    SampleOsm {
        #[command(flatten)]
        common: Common,
    },
    /// Merge natural and man-made manifests and balance the classes.
    Rebalance {
        #[command(flatten)]
        common: Common,
        /// Manifests to merge; defaults to the two sampler outputs.
        inputs: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Contrastive pretraining on general images, then on sampled scenes.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "both")]
        stage: StageArg,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many optimizer steps; the checkpoint can be resumed.
        #[arg(long)]
        stop_after: Option<usize>,
        /// Stage 2 manifest; defaults to the rebalanced one.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Stage 1 checkpoint that stage 2 starts from.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Few-shot linear probing of one or more checkpoints.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        /// Also probe a randomly initialised encoder.
        #[arg(long)]
        random: bool,
        /// Labelled samples per class; replaces `probe.shots`.
        #[arg(long)]
        shots: Vec<usize>,
    },
    /// Compare analytic and finite-difference gradients on random models.
    Gradcheck {
        #[arg(long, default_value_t = 2)]
        blocks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        cases: usize,
        /// Denominator floor of the relative error.
        #[arg(long)]
        floor: Option<f64>,
        /// Perturb the analytic gradient of this tensor.
        #[arg(long, hide = true)]
        corrupt: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Rerun the toy learning-path or sampling-method comparison.
    Ablate {
        #[arg(value_enum)]
        kind: AblationArg,
        #[arg(long, default_value = "ablation")]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        probe_seeds: usize,
        #[arg(long, default_value_t = 3)]
        pretrain_seeds: usize,
        #[arg(long)]
        threads: Option<usize>,
    },
}

/// Sizes the global rayon pool. Later calls in the same process are no-ops.
pub fn init_threads(flag: Option<usize>, config: Option<usize>) -> Result<()> {
    let env = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(v.trim().parse::<usize>().with_context(|| format!("{THREADS_ENV}={v:?} is not a count"))?),
        Err(_) => None,
    };
    let n = env.or(flag).or(config).unwrap_or(0);
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn load(common: &Common) -> Result<config::Loaded> {
    let mut loaded = config::load(common.config.as_deref(), &common.overrides)?;
    if let Some(out) = &common.output {
        // Relative to the working directory, unlike config entries.
        loaded.config.paths.output = std::path::absolute(out)?;
    }
    init_threads(common.threads, loaded.config.runtime.threads)?;
    Ok(loaded)
}

/// Runs one command. `Ok(false)` means it completed but reported a failure.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Demo { out, seed } => {
            let path = demo::write_demo(&out, &demo::DemoSpec { seed, ..Default::default() })?;
            println!("{}", path.display());
        }
        Command::SampleNatural { common } => {
            commands::sample_natural_cmd(&load(&common)?)?;
        }
        Command::SampleOsm { common } => {
            commands::sample_osm_cmd(&load(&common)?)?;
        }
        Command::Rebalance { common, inputs, seed } => {
            commands::rebalance_cmd(&load(&common)?, &inputs, seed)?;
        }
        Command::Pretrain { common, stage, resume, stop_after, manifest, init } => {
            let stage = match stage {
                StageArg::One => Stage::One,
                StageArg::Two => Stage::Two,
                StageArg::Both => Stage::Both,
            };
            let args = PretrainArgs { stage, resume, stop_after, manifest, init };
            commands::pretrain_cmd(&load(&common)?, &args)?;
        }
        Command::Probe { common, checkpoints, random, shots } => {
            commands::probe_cmd(&load(&common)?, &checkpoints, random, &shots)?;
        }
        Command::Gradcheck { blocks, seed, cases, floor, corrupt, threads } => {
            init_threads(threads, None)?;
            return commands::gradcheck_cmd(&GradcheckArgs { blocks, seed, cases, floor, corrupt });
        }
        Command::Ablate { kind, out, probe_seeds, pretrain_seeds, threads } => {
            init_threads(threads, None)?;
            let kind = match kind {
                AblationArg::LearningPath => Ablation::LearningPath,
                AblationArg::Sampling => Ablation::Sampling,
            };
            commands::ablate_cmd(kind, probe_seeds, pretrain_seeds, &out)?;
        }
    }
    Ok(true)
}
