//! The `sbd` command line: ingest, featurize, train, evaluate, compare,
//! top-entities and synth, each writing one timestamped batch directory.

pub mod batch;
pub mod commands;
pub mod config;
pub mod error;
pub mod synth;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sbd_core::learn::Family;

use crate::batch::Batch;
use crate::config::PipelineConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "sbd", version, about = "Classify social media users by domain interest")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Pipeline config (TOML). Relative paths inside resolve against its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Batch root; for `synth`, the directory receiving the dataset.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Comma-separated model families, e.g. `dt,lr`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub families: Option<Vec<String>>,
    #[arg(long, global = true)]
    pub train_fraction: Option<f64>,
    /// ISO-8601 anchor for the quarter windows.
    #[arg(long, global = true)]
    pub reference_time: Option<String>,
    /// Override any config key, e.g. `--set hyperparams.dt.max_depth=8`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse the archive and profiles into a cleansed corpus batch.
    Ingest,
    /// Annotate a corpus batch and extract the feature matrix.
    Featurize {
        #[arg(long)]
        batch: String,
    },
    /// Fit each family on the training side of a featurize batch.
    Train {
        #[arg(long)]
        batch: String,
    },
    /// Score a train batch's models on the held-out side.
    Evaluate {
        #[arg(long)]
        batch: String,
    },
    /// Train and evaluate every family on one shared split.
    Compare {
        #[arg(long)]
        batch: String,
    },
    /// Most frequently annotated entities of one user.
    TopEntities {
        #[arg(long)]
        batch: String,
        #[arg(long)]
        user: String,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Write a labelled synthetic corpus and a matching config.
    Synth {
        #[arg(long)]
        n_on: usize,
        #[arg(long)]
        n_off: usize,
        /// Share of on-topic tokens drawn from the knowledge base.
        #[arg(long, default_value_t = 0.4)]
        on_fraction: f64,
    },
}

fn effective_config(g: &GlobalArgs) -> Result<PipelineConfig> {
    let mut overrides = g.set.clone();
    if let Some(s) = g.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(f) = g.train_fraction {
        overrides.push(format!("train_fraction={f:?}"));
    }
    if let Some(t) = &g.reference_time {
        overrides.push(format!("reference_time={}", toml::Value::String(t.clone())));
    }
    let mut cfg = PipelineConfig::load(g.config.as_deref(), &overrides)?;
    if let Some(list) = &g.families {
        cfg.families = list
            .iter()
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.parse::<Family>().map_err(CliError::Config))
            .collect::<Result<_>>()?;
        if cfg.families.is_empty() {
            return Err(CliError::Config("--families is empty".into()));
        }
    }
    if let Some(out) = &g.out {
        cfg.paths.output = out.clone();
        cfg.validate()?;
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli, stderr: &mut dyn Write) -> Result<Option<Batch>> {
    if let Command::Synth {
        n_on,
        n_off,
        on_fraction,
    } = &cli.command
    {
        let dir = cli
            .global
            .out
            .as_ref()
            .ok_or_else(|| CliError::Config("synth needs --out <dir>".into()))?;
        let mut cfg = synth::SynthConfig::new(cli.global.seed.unwrap_or(0), *n_on, *n_off);
        cfg.on_fraction = *on_fraction;
        synth::write_corpus(dir, &cfg)?;
        return Ok(None);
    }
    let cfg = effective_config(&cli.global)?;
    let open = |id: &str| Batch::open(&cfg.paths.output, id);
    let batch = match &cli.command {
        Command::Ingest => commands::ingest(&cfg, stderr)?,
        Command::Featurize { batch } => commands::featurize(&cfg, &open(batch)?, stderr)?,
        Command::Train { batch } => commands::train(&cfg, &open(batch)?, stderr)?,
        Command::Evaluate { batch } => commands::evaluate(&cfg, &open(batch)?)?,
        Command::Compare { batch } => commands::compare(&cfg, &open(batch)?, stderr)?,
        Command::TopEntities { batch, user, k } => {
            commands::top_entities_cmd(&cfg, &open(batch)?, user, k.unwrap_or(cfg.top_k))?
        }
        Command::Synth { .. } => unreachable!("handled above"),
    };
    Ok(Some(batch))
}

/// Runs the command line and returns the process exit code. Stdout receives
/// only the new batch id.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                1
            } else {
                let _ = write!(stdout, "{text}");
                0
            };
        }
    };
    match dispatch(&cli, stderr) {
        Ok(Some(batch)) => {
            let _ = writeln!(stdout, "{}", batch.id);
            0
        }
        Ok(None) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
