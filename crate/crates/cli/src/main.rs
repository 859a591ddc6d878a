//! Command-line front end: `segment`, `train`, `evaluate`, and `report`
//! subcommands over the library pipeline. Stages communicate through files
//! so each one can be rerun or cached independently.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use uvector::config::{load_config, ExperimentConfig, TrainMode};
use uvector::pipeline::{ensure_dataset, evaluate_run, report, train_run};
use uvector::{Error, Result};

#[derive(Parser)]
#[command(name = "uvector", about = "Speaker-embedding experiments on pseudo-labeled speech")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand that reads an experiment config.
#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
    /// Output root; also settable via UVECTOR_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.out_dir = Some(out.clone());
        }
        Ok(cfg)
    }
}

/// Grid flags: every combination of the listed values becomes one run.
#[derive(Args)]
struct GridArgs {
    /// Training mode override (pairwise or triplet).
    #[arg(long)]
    mode: Option<TrainMode>,
    /// Speaker counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    speakers: Vec<usize>,
    /// Wrong-label fractions, comma separated.
    #[arg(long, value_delimiter = ',')]
    impurity: Vec<f64>,
    /// Seeds (network init, batch sampling, and label scrambling all
    /// derive from the cell seed), comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

impl GridArgs {
    fn cells(&self, base: &ExperimentConfig) -> Vec<ExperimentConfig> {
        let speakers =
            if self.speakers.is_empty() { vec![base.data.n_speakers] } else { self.speakers.clone() };
        let impurities =
            if self.impurity.is_empty() { vec![base.train.impurity] } else { self.impurity.clone() };
        let seeds =
            if self.seeds.is_empty() { vec![base.train.sample_seed] } else { self.seeds.clone() };
        let mut cells = Vec::new();
        for &n in &speakers {
            for &imp in &impurities {
                for &seed in &seeds {
                    let mut cfg = base.clone();
                    cfg.name = None;
                    cfg.data.n_speakers = n;
                    cfg.train.impurity = imp;
                    cfg.train.net_seed = seed;
                    cfg.train.sample_seed = seed;
                    cfg.train.impurity_seed = seed;
                    if let Some(mode) = self.mode {
                        cfg.train.mode = mode;
                    }
                    cells.push(cfg);
                }
            }
        }
        cells
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize (or load) audio, run voice activity detection, and write
    /// the train/eval segment manifests.
    Segment {
        #[command(flatten)]
        config: ConfigArgs,
        /// Speaker count override.
        #[arg(long)]
        speakers: Option<usize>,
    },
    /// Train one run per grid cell, writing artifacts under the output
    /// root.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Re-score existing checkpoints and rewrite their metrics CSVs.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Explicit checkpoint path (single grid cell only).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Metrics CSV destination (single grid cell only).
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Aggregate run manifests under a directory into one summary table.
    Report {
        /// Directory containing run subdirectories; defaults to the config
        /// output root.
        #[arg(long)]
        root: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
        /// Also write the table to this file.
        #[arg(long)]
        out_file: Option<PathBuf>,
    },
}

fn cmd_segment(config: &ConfigArgs, speakers: Option<usize>) -> Result<()> {
    let mut cfg = config.load()?;
    if let Some(n) = speakers {
        cfg.data.n_speakers = n;
    }
    cfg.validate()?;
    let files = ensure_dataset(&cfg)?;
    for path in [&files.train_manifest, &files.eval_manifest] {
        let rows = uvector::segmentation::read_manifest(path)?;
        println!("{} ({} segments)", path.display(), rows.len());
    }
    Ok(())
}

fn cmd_train(config: &ConfigArgs, grid: &GridArgs) -> Result<()> {
    let base = config.load()?;
    for cfg in grid.cells(&base) {
        let art = train_run(&cfg)?;
        let m = &art.manifest;
        println!(
            "{}: {} after {} epochs (best ground acc {:.4} at epoch {}), {:.1}s",
            m.name, m.status, m.epochs_run, m.best_ground_acc, m.best_epoch, m.elapsed_s
        );
    }
    Ok(())
}

fn cmd_evaluate(
    config: &ConfigArgs,
    grid: &GridArgs,
    checkpoint: &Option<PathBuf>,
    metrics: &Option<PathBuf>,
) -> Result<()> {
    let base = config.load()?;
    let cells = grid.cells(&base);
    if cells.len() > 1 && (checkpoint.is_some() || metrics.is_some()) {
        return Err(Error::InvalidArg(
            "--checkpoint/--metrics apply to a single grid cell".into(),
        ));
    }
    for cfg in &cells {
        let ckpt = match checkpoint {
            Some(p) => p.clone(),
            None => cfg.out_root().join(cfg.run_name()).join("checkpoint.uvck"),
        };
        if !ckpt.exists() {
            return Err(Error::Checkpoint(format!("{} does not exist; train first", ckpt.display())));
        }
        let rep = evaluate_run(cfg, &ckpt, metrics.as_deref())?;
        let (t, g) = (rep.train_pseudo.scores, rep.eval_ground.scores);
        println!(
            "{}: train acc {:.4} nmi {:.4} ari {:.4} | ground acc {:.4} nmi {:.4} ari {:.4}",
            cfg.run_name(),
            t.acc,
            t.nmi,
            t.ari,
            g.acc,
            g.nmi,
            g.ari
        );
    }
    Ok(())
}

fn cmd_report(root: &Option<PathBuf>, config: &ConfigArgs, out_file: &Option<PathBuf>) -> Result<()> {
    let root = match root {
        Some(r) => r.clone(),
        None => config.load()?.out_root(),
    };
    let table = report(&root)?;
    if let Some(path) = out_file {
        std::fs::write(path, &table)?;
    }
    print!("{table}");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Segment { config, speakers } => cmd_segment(config, *speakers),
        Command::Train { config, grid } => cmd_train(config, grid),
        Command::Evaluate { config, grid, checkpoint, metrics } => {
            cmd_evaluate(config, grid, checkpoint, metrics)
        }
        Command::Report { root, config, out_file } => cmd_report(root, config, out_file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
