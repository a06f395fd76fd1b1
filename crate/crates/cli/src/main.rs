//! `gmdiffuse`: train diffusion score models on Gaussian mixtures, generate
//! samples with the reverse SDE, and evaluate the results.

mod commands;
mod config;
mod io;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use commands::RunContext;
use config::RunConfig;
use io::{sha256_file, write_json};

#[derive(Parser)]
#[command(
    name = "gmdiffuse",
    about = "Score-based diffusion learning for Gaussian mixtures",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML or JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Cap the worker-thread count.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the mixture itself to CSV.
    GenMixture {
        #[command(flatten)]
        common: CommonArgs,
        /// Override gen_mixture.count.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Learn the score model stack.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Override train.eps.
        #[arg(long)]
        eps: Option<f64>,
        /// Override train.delta.
        #[arg(long)]
        delta: Option<f64>,
        /// Override train.degree.
        #[arg(long)]
        degree: Option<usize>,
        /// Override train.samples_per_level.
        #[arg(long)]
        samples_per_level: Option<usize>,
    },
    /// Generate samples with a trained stack.
    Sample {
        #[command(flatten)]
        common: CommonArgs,
        /// Override sample.count.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Sample-quality metrics (and score errors when models are given).
    Eval {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Hermite coefficient spectrum of the mixture posterior mean.
    Spectrum {
        #[command(flatten)]
        common: CommonArgs,
    },
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::GenMixture { common, .. }
            | Command::Train { common, .. }
            | Command::Sample { common, .. }
            | Command::Eval { common }
            | Command::Spectrum { common } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::GenMixture { .. } => "gen-mixture",
            Command::Train { .. } => "train",
            Command::Sample { .. } => "sample",
            Command::Eval { .. } => "eval",
            Command::Spectrum { .. } => "spectrum",
        }
    }

    /// Fold command-line overrides into the parsed config.
    fn apply_overrides(&self, cfg: &mut RunConfig) -> Result<()> {
        let common = self.common();
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        if let Some(threads) = common.threads {
            cfg.threads = Some(threads);
        }
        match self {
            Command::GenMixture { count: Some(c), .. } => {
                let section = cfg
                    .gen_mixture
                    .as_mut()
                    .context("--count given but config has no [gen_mixture] section")?;
                section.count = *c;
            }
            Command::Sample { count: Some(c), .. } => {
                let section = cfg
                    .sample
                    .as_mut()
                    .context("--count given but config has no [sample] section")?;
                section.count = *c;
            }
            Command::Train {
                eps,
                delta,
                degree,
                samples_per_level,
                ..
            } if eps.is_some()
                || delta.is_some()
                || degree.is_some()
                || samples_per_level.is_some() =>
            {
                let section = cfg
                    .train
                    .as_mut()
                    .context("train overrides given but config has no [train] section")?;
                if let Some(v) = eps {
                    section.eps = *v;
                }
                if let Some(v) = delta {
                    section.delta = *v;
                }
                if let Some(v) = degree {
                    section.degree = *v;
                }
                if let Some(v) = samples_per_level {
                    section.samples_per_level = *v;
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    inputs: &'a BTreeMap<String, String>,
}

#[derive(Serialize)]
struct ErrorReport {
    error: &'static str,
    message: String,
}

fn run(cli: &Cli) -> Result<()> {
    let common = cli.command.common();
    let mut cfg = RunConfig::from_file(&common.config)?;
    cli.command.apply_overrides(&mut cfg)?;

    if let Some(threads) = cfg.threads {
        // best effort: the global pool can only be installed once
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("creating output directory {}", common.out.display()))?;

    let config_dir = common
        .config
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."));
    let mut ctx = RunContext {
        config: cfg,
        config_dir,
        out: common.out.clone(),
        inputs: BTreeMap::new(),
    };
    ctx.inputs.insert(
        common.config.to_string_lossy().into_owned(),
        sha256_file(&common.config)?,
    );

    match &cli.command {
        Command::GenMixture { .. } => commands::gen_mixture(&mut ctx)?,
        Command::Train { .. } => commands::train(&mut ctx)?,
        Command::Sample { .. } => commands::sample(&mut ctx)?,
        Command::Eval { .. } => commands::eval(&mut ctx)?,
        Command::Spectrum { .. } => commands::spectrum(&mut ctx)?,
    }

    // echo the fully-resolved config and the input manifest for audit
    write_json(&ctx.out.join("echo.json"), &ctx.config)?;
    write_json(
        &ctx.out.join("manifest.json"),
        &Manifest {
            command: cli.command.name(),
            inputs: &ctx.inputs,
        },
    )?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new()
            .filter_or("GMDIFFUSE_LOG", "error")
            .write_style("GMDIFFUSE_LOG_STYLE"),
    )
    .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let report = ErrorReport {
                error: "run_failed",
                message: format!("{err:#}"),
            };
            let json = serde_json::to_string(&report)
                .unwrap_or_else(|_| "{\"error\":\"run_failed\"}".into());
            eprintln!("{json}");
            // best effort: also drop it in the output directory
            let out = cli.command.common().out.join("error.json");
            let _ = std::fs::write(out, &json);
            ExitCode::FAILURE
        }
    }
}
