//! Command-line front end: argument parsing, run configuration, synthetic
//! data and the subcommands.

mod commands;
mod config;
mod synth;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    bundle_dataset, cmd_dump_embeddings, cmd_eval, cmd_extract, cmd_sweep, cmd_train, fused_file, load_dataset, load_manifest,
    metrics_file, norm_sidecar, read_json, write_json, ExtractReport, MetricsReport, SweepReport, BUNDLE_FILE,
    EMBEDDINGS_FILE, FEATURES_FILE, HISTORY_FILE, NORM_FILE, SWEEP_FILE,
};
pub use config::{PathsConfig, RunConfig, SweepConfig};
pub use synth::{cmd_synth, render, stratified_split, Archetype, SynthSpec};

use crate::error::{Error, Result};
use crate::fusion::Strategy;
use crate::trainer::{Arm, Split};

#[derive(Debug, Parser)]
#[command(name = "sslnet", version, about = "Bird-sound classification with fused spectral and embedding branches")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the training (and synthesis) seed.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Overrides `paths.manifest`.
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BundleArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Trained model bundle.
    #[arg(long, value_name = "PATH")]
    pub bundle: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic corpus (WAV files and manifest).
    Synth {
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        clips_per_class: Option<usize>,
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Write the spectral feature archive (and pseudo embeddings).
    Extract(DataArgs),
    /// Train a model and write the bundle and per-epoch history.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        samples_per_class: Option<usize>,
    },
    /// Score a bundle on one split.
    Eval(BundleArgs),
    /// Train and test every strategy at several per-class label budgets.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated, ascending.
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<usize>>,
        /// Comma-separated: fixed, shared, sampling, spectral, semantic.
        #[arg(long, value_delimiter = ',', value_parser = parse_arm)]
        strategies: Option<Vec<Arm>>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Write the fused features of one split as an embedding archive.
    DumpEmbeddings(BundleArgs),
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_arm(s: &str) -> std::result::Result<Arm, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Cli {
    /// The file configuration with every flag applied, validated.
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
            cfg.synth.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.paths.out = Some(out.clone());
        }
        let data = match &self.command {
            Command::Synth {
                classes,
                clips_per_class,
                snr,
                duration,
            } => {
                if let Some(v) = classes {
                    cfg.synth.classes = *v;
                }
                if let Some(v) = clips_per_class {
                    cfg.synth.clips_per_class = *v;
                }
                if let Some(v) = snr {
                    cfg.synth.snr = *v;
                }
                if let Some(v) = duration {
                    cfg.synth.duration = *v;
                }
                None
            }
            Command::Extract(data) => Some(data),
            Command::Train {
                data,
                strategy,
                epochs,
                samples_per_class,
            } => {
                if let Some(s) = strategy {
                    cfg.fusion.strategy = *s;
                }
                if let Some(e) = epochs {
                    cfg.train.epochs = *e;
                }
                if samples_per_class.is_some() {
                    cfg.train.samples_per_class = *samples_per_class;
                }
                Some(data)
            }
            Command::Eval(b) | Command::DumpEmbeddings(b) => Some(&b.data),
            Command::Sweep {
                data,
                budgets,
                strategies,
                epochs,
            } => {
                if let Some(b) = budgets {
                    cfg.sweep.budgets = b.clone();
                }
                if let Some(s) = strategies {
                    cfg.sweep.strategies = s.clone();
                }
                if let Some(e) = epochs {
                    cfg.train.epochs = *e;
                }
                Some(data)
            }
        };
        if let Some(m) = data.and_then(|d| d.manifest.as_ref()) {
            cfg.paths.manifest = Some(m.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Executes one parsed command, printing a short report on stdout.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.run_config()?;
    match &cli.command {
        Command::Synth { .. } => {
            let out = cfg
                .paths
                .out
                .as_deref()
                .ok_or_else(|| Error::config("paths.out", "required (pass --out)"))?;
            let manifest = cmd_synth(&cfg.synth, out)?;
            println!("wrote {} clips and {}", manifest.records().len(), out.join("manifest.csv").display());
        }
        Command::Extract(_) => {
            let manifest = load_manifest(&cfg)?;
            let report = cmd_extract(&cfg, &manifest)?;
            println!("wrote {} records to {}", report.records, report.features.display());
        }
        Command::Train { .. } => {
            let (bundle, history) = cmd_train(&cfg)?;
            if let Some(last) = history.epochs.last() {
                let val = last.val_accuracy.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
                println!(
                    "epochs={} train_loss={:.4} val_accuracy={val} params={}",
                    history.epochs.len(),
                    last.train_loss,
                    bundle.param_count()
                );
            }
        }
        Command::Eval(b) => {
            let metrics = cmd_eval(&cfg, &b.bundle, b.split)?;
            println!("{}", metrics.summary());
        }
        Command::Sweep { .. } => {
            for row in cmd_sweep(&cfg)? {
                println!("strategy={} budget={} {}", row.strategy, row.budget, row.metrics.summary());
            }
        }
        Command::DumpEmbeddings(b) => {
            let path = cmd_dump_embeddings(&cfg, &b.bundle, b.split)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
