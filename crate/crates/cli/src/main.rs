use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{ensure, Result};
use clap::{Args, Parser, Subcommand};
use insitu_cli::replay::ReplayOptions;
use insitu_cli::{convert, prune_snapshot, DatasetSource, NoViewer, PruneMode, Replay, Run, RunConfig};
use insitu_core::cnn::SyntheticSpec;
use insitu_core::{Format, ViewKind};

#[derive(Parser)]
#[command(name = "insitu", version, about = "In-situ visualization and pruning of a small CNN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with instrumentation, streaming and snapshots.
    Run(RunArgs),
    /// Re-derive view files from recorded snapshots.
    Convert {
        snapshot_dir: PathBuf,
        /// View to write; repeat for several (default: all).
        #[arg(long = "view")]
        views: Vec<ViewKind>,
        /// csv, vtp or vtp-ascii; repeat for several.
        #[arg(long = "format", default_value = "vtp")]
        formats: Vec<Format>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream recorded snapshots to a viewer.
    Replay {
        snapshot_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7070")]
        listen: String,
        /// Steps per second.
        #[arg(long, default_value_t = 5.0)]
        rate: f64,
        /// Seconds to wait for a viewer.
        #[arg(long, default_value_t = 30.0)]
        wait: f64,
        #[arg(long = "view")]
        views: Vec<ViewKind>,
    },
    /// Merge correlated filters of a recorded snapshot into a pruned checkpoint.
    Prune {
        snapshot: PathBuf,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value_t = insitu_core::similarity::DEFAULT_THRESHOLD)]
        pcc_threshold: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the correlation matrix as CSV.
        #[arg(long)]
        heatmap: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with MNIST IDX files.
    #[arg(long, conflicts_with = "synthetic")]
    dataset: Option<PathBuf>,
    /// Train on generated Gaussian blobs instead of MNIST.
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    prune_mode: Option<PruneMode>,
    #[arg(long)]
    prune_interval: Option<u64>,
    #[arg(long)]
    pcc_threshold: Option<f64>,
    /// Three distinct flat kernel indices, e.g. `0,1,2`.
    #[arg(long, value_delimiter = ',')]
    traj_dims: Option<Vec<usize>>,
    /// Address to accept a viewer on, e.g. `127.0.0.1:7070`.
    #[arg(long)]
    listen: Option<String>,
    /// Seconds to wait for a viewer before training.
    #[arg(long)]
    wait_for_viewer: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    snapshot_interval: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(path) = self.dataset {
            c.dataset = DatasetSource::Mnist {
                path,
                train_limit: None,
                test_limit: None,
            };
        }
        if self.synthetic {
            c.dataset = DatasetSource::Synthetic(SyntheticSpec::default());
        }
        if let Some(dims) = self.traj_dims {
            ensure!(dims.len() == 3, "--traj-dims takes three indices, got {}", dims.len());
            c.trajectory_dims = [dims[0], dims[1], dims[2]];
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    c.$field = v;
                }
            )*};
        }
        set!(lr, batch_size, epochs, seed, prune_mode, prune_interval, pcc_threshold, out, snapshot_interval, wait_for_viewer);
        if self.max_steps.is_some() {
            c.max_steps = self.max_steps;
        }
        if self.listen.is_some() {
            c.listen = self.listen;
        }
        Ok(c)
    }
}

fn all_or(views: Vec<ViewKind>) -> Vec<ViewKind> {
    if views.is_empty() {
        ViewKind::ALL.to_vec()
    } else {
        views
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => {
            let quiet = args.quiet;
            let config = args.into_config()?;
            let out = config.out.clone();
            let run = Run::prepare(config)?.with_progress(!quiet);
            if let Some(addr) = run.local_addr() {
                eprintln!("listening on {addr}");
            }
            let s = run.execute()?;
            println!(
                "steps {} accuracy {:.4} prunes {} frames {} files {} summary {}",
                s.steps,
                s.final_accuracy,
                s.prunes_applied,
                s.frames_sent,
                s.files_written,
                out.join(insitu_cli::run::SUMMARY_FILE).display()
            );
        }
        Command::Convert {
            snapshot_dir,
            views,
            formats,
            out,
        } => {
            let written = convert(&snapshot_dir, &all_or(views), &formats, &out)?;
            println!("{} files written to {}", written.len(), out.display());
        }
        Command::Replay {
            snapshot_dir,
            listen,
            rate,
            wait,
            views,
        } => {
            ensure!(wait >= 0.0 && wait.is_finite(), "--wait must be a non-negative number of seconds");
            let options = ReplayOptions {
                listen,
                rate,
                wait: Duration::from_secs_f64(wait),
                views: all_or(views),
            };
            let replay = Replay::prepare(&snapshot_dir, options)?;
            eprintln!("listening on {}", replay.local_addr());
            let r = replay.execute()?;
            println!(
                "steps {} frames {} dropped {}",
                r.steps, r.stats.frames_sent, r.stats.steps_dropped
            );
        }
        Command::Prune {
            snapshot,
            layer,
            pcc_threshold,
            out,
            heatmap,
        } => {
            let export = prune_snapshot(&snapshot, layer, pcc_threshold, &out, heatmap.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&export)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<NoViewer>() => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
