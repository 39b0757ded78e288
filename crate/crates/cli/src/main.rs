//! Command-line entry points for the RGB-T tracker.

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rgbt_core::harness::experiment;
use rgbt_core::harness::seqio;
use rgbt_core::harness::synth::{generate_sequence, SyntheticSpec};
use rgbt_core::Config;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "rgbt",
    about = "RGB-T tracking with dynamic modality-aware filter generation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic RGB-T sequence from a JSON spec file.
    Synth {
        /// JSON file describing the sequence (see README for the schema).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (benchmark layout: visible/, infrared/, groundtruth.txt).
        #[arg(long)]
        out: PathBuf,
    },
    /// Track a sequence directory and write one `x,y,w,h` line per frame.
    Track {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Feature/classifier checkpoint (random initialization if omitted).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Attention-network checkpoint enabling global re-detection.
        #[arg(long)]
        attention_checkpoint: Option<PathBuf>,
        /// Dump debug visualizations into this directory.
        #[arg(long)]
        viz: Option<PathBuf>,
    },
    /// Evaluate a result file against ground truth (PR/SR).
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 20.0)]
        pr_threshold: f64,
    },
    /// Train the global attention network on synthetic clips.
    TrainAttention {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint file to write.
        #[arg(long)]
        out: PathBuf,
        /// Override `train.attention_steps`.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        viz: Option<PathBuf>,
    },
    /// Offline multi-domain training of the tracker on synthetic sequences.
    TrackerTrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track + evaluate across values of one config key.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Config key to vary, e.g. mfgnet.kernel_size or mfgnet.mode.
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. 1,2,3,4,5 or off,naive,mfg.
        #[arg(long)]
        values: String,
        /// Sequence directory; a short synthetic sequence if omitted.
        #[arg(long)]
        seq: Option<PathBuf>,
        /// Also write the table as TSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full component ablation grid: filter mode x attention x global search.
    Ablation {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seq: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print every config key with its default and description.
    Keys,
}

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p).with_context(|| format!("loading config {}", p.display())),
        None => {
            let mut cfg = Config::default();
            cfg.apply_env();
            Ok(cfg)
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Synth { spec, seed, out } => {
            let text = std::fs::read_to_string(&spec)
                .with_context(|| format!("reading spec {}", spec.display()))?;
            let spec: SyntheticSpec = serde_json::from_str(&text).context("parsing spec JSON")?;
            let seq = generate_sequence(&spec, seed)?;
            seqio::save_sequence(&out, &seq)?;
            println!(
                "wrote {} frames ({}x{}) to {}",
                seq.len(),
                seq.width(),
                seq.height(),
                out.display()
            );
        }
        Command::Track {
            config,
            seq,
            out,
            checkpoint,
            attention_checkpoint,
            viz,
        } => {
            let cfg = load_config(&config)?;
            let stats = experiment::run_track(
                &cfg,
                &seq,
                &out,
                checkpoint.as_deref(),
                attention_checkpoint.as_deref(),
                viz.as_deref(),
            )?;
            println!(
                "tracked {} frames ({} global, {} short-term updates, {} scheduled updates) -> {}",
                stats.frames,
                stats.global_frames,
                stats.short_updates,
                stats.scheduled_updates,
                out.display()
            );
        }
        Command::Eval {
            pred,
            gt,
            pr_threshold,
        } => {
            let res = experiment::run_eval(&pred, &gt, pr_threshold)?;
            println!("PR@{:.0}px : {:.4}", pr_threshold, res.pr_at);
            println!("SR-AUC    : {:.4}", res.sr_auc);
            println!("SR@0.6    : {:.4}", res.sr_at_06);
        }
        Command::TrainAttention {
            config,
            out,
            steps,
            viz,
        } => {
            let cfg = load_config(&config)?;
            let steps = match steps {
                Some(s) => s,
                None => cfg.get_usize("train.attention_steps")?,
            };
            let report = experiment::run_train_attention(&cfg, steps, &out, viz.as_deref())?;
            println!(
                "attention training: {} steps, loss {:.4} -> {:.4}, checkpoint {}",
                report.steps,
                report.first_loss,
                report.last_loss,
                out.display()
            );
        }
        Command::TrackerTrain { config, out } => {
            let cfg = load_config(&config)?;
            let report = experiment::run_tracker_train(&cfg, &out)?;
            println!(
                "offline training: {} steps, loss {:.4} -> {:.4}, checkpoint {}",
                report.steps,
                report.first_loss,
                report.last_loss,
                out.display()
            );
        }
        Command::Sweep {
            config,
            param,
            values,
            seq,
            out,
        } => {
            let cfg = load_config(&config)?;
            let values: Vec<String> = values.split(',').map(|s| s.trim().to_string()).collect();
            let table = experiment::run_sweep(&cfg, &param, &values, seq.as_deref())?;
            print!("{table}");
            if let Some(path) = out {
                std::fs::write(&path, table.to_tsv())?;
                println!("table written to {}", path.display());
            }
        }
        Command::Ablation { config, seq, out } => {
            let cfg = load_config(&config)?;
            let table = experiment::run_ablation(&cfg, seq.as_deref())?;
            print!("{table}");
            if let Some(path) = out {
                std::fs::write(&path, table.to_tsv())?;
                println!("table written to {}", path.display());
            }
        }
        Command::Keys => {
            println!("{:<28} {:<10} description", "key", "default");
            for (k, d, help) in rgbt_core::config::KEYS {
                println!("{k:<28} {d:<10} {help}");
            }
        }
    }
    Ok(())
}
