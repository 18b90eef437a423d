use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Parser, Subcommand};
use clipft_core::distributed::{SocketConfig, SocketTransport, TransportKind};
use clipft_core::experiment::{
    build_report, emit_report, read_records, report_csv, run_scaling_rank, run_scaling_study, run_sweep, run_zero_shot,
    ExperimentConfig, ExperimentContext, ReportFormat, ResultsStore, ScalingConfig, ScalingReport, Variant,
    RESULTS_ENV,
};
use log::info;

#[derive(Parser)]
#[command(name = "clipft", version, about = "Few-shot contrastive fine-tuning sweeps on shifted synthetic domains")]
struct Cli {
    /// Results store, one JSON record per finished run.
    #[arg(long, env = RESULTS_ENV, default_value = "results/runs.jsonl", global = true)]
    results: PathBuf,

    /// -v for progress, -vv for debug output.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured grid, resuming from the results store, and print the table.
    Sweep {
        /// TOML or JSON experiment config; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// ID/OOD metrics of a variant before any task training.
    ZeroShot {
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Data-parallel SWA fine-tuning of the CLIP model at several worker counts.
    Scaling {
        /// Worker counts, ascending from 1. With --rank, the size of the group.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        workers: Vec<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "in-process")]
        transport: TransportKind,
        /// Run a single rank of a socket group spread over processes.
        #[arg(long, requires = "group_file")]
        rank: Option<usize>,
        /// Rendezvous file shared by the ranks of a socket group.
        #[arg(long)]
        group_file: Option<PathBuf>,
        #[arg(long, default_value_t = 30.0)]
        timeout_secs: f64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        warmup_epochs: Option<usize>,
        #[arg(long)]
        swa_epochs: Option<usize>,
        /// Single-worker learning rate; k workers train at k times this.
        #[arg(long)]
        base_lr: Option<f64>,
        #[arg(long)]
        per_worker_batch: Option<usize>,
        /// Also write scaling.csv and loss_curves.csv here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Aggregate the results store into per-variant tables.
    Report {
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "results")]
        out_dir: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn print_metrics(variant: Variant, seed: u64, m: &clipft_core::experiment::SplitMetrics) {
    println!("variant {variant} seed {seed}");
    for (split, r) in [("id", &m.id), ("ood", &m.ood)] {
        println!("{split:<4}top1 {:.2}  macro_f1 {:.2}  n {}", r.top1, r.macro_f1, r.n_samples);
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    match cli.command {
        Command::Sweep { config } => {
            let cfg = load_config(config.as_deref())?;
            let store = ResultsStore::open(&cli.results, &cfg.config_hash())?;
            info!("results store {} (config {})", cli.results.display(), cfg.config_hash());
            let ctx = ExperimentContext::new(cfg)?;
            let report = run_sweep(&ctx, &store)?;
            print!("{}", report_csv(&report));
        }
        Command::ZeroShot { variant, config, seed } => {
            let ctx = ExperimentContext::new(load_config(config.as_deref())?)?;
            print_metrics(variant, seed, &run_zero_shot(&ctx, variant, seed)?);
        }
        Command::Scaling {
            workers,
            config,
            transport,
            rank,
            group_file,
            timeout_secs,
            epochs,
            warmup_epochs,
            swa_epochs,
            base_lr,
            per_worker_batch,
            out_dir,
        } => {
            let defaults = ScalingConfig::default();
            let scfg = ScalingConfig {
                worker_counts: workers.clone(),
                epochs: epochs.unwrap_or(defaults.epochs),
                warmup_epochs: warmup_epochs.unwrap_or(defaults.warmup_epochs),
                swa_epochs: swa_epochs.unwrap_or(defaults.swa_epochs),
                base_lr: base_lr.unwrap_or(defaults.base_lr),
                per_worker_batch: per_worker_batch.unwrap_or(defaults.per_worker_batch),
                transport,
                timeout_secs,
                ..defaults
            };
            let ctx = ExperimentContext::new(load_config(config.as_deref())?)?;
            let report = match rank {
                Some(rank) => {
                    let [world] = workers[..] else { bail!("--rank needs a single --workers count") };
                    if transport != TransportKind::Socket {
                        bail!("--rank needs --transport socket");
                    }
                    let group = group_file.expect("clap enforces --group-file");
                    let sock = SocketConfig::new(group, Duration::from_secs_f64(timeout_secs));
                    let mut t = SocketTransport::connect(rank, world, &sock)?;
                    let row = run_scaling_rank(&ctx, &scfg, &mut t)?;
                    ScalingReport { config: ScalingConfig { worker_counts: vec![world], ..scfg }, rows: vec![row] }
                }
                None => run_scaling_study(&ctx, &scfg)?,
            };
            print!("{}", report.to_csv());
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("scaling.csv"), report.to_csv())?;
                std::fs::write(dir.join("loss_curves.csv"), report.loss_curves_csv())?;
            }
            if let Some(row) = report.rows.iter().find(|r| r.error.is_some()) {
                bail!("{}-worker run failed: {}", row.workers, row.error.as_deref().unwrap_or_default());
            }
        }
        Command::Report { format, config, out_dir } => {
            let cfg = load_config(config.as_deref())?;
            let hash = cfg.config_hash();
            let records: Vec<_> = read_records(&cli.results)
                .with_context(|| format!("reading {}", cli.results.display()))?
                .into_iter()
                .filter(|r| r.config_hash == hash)
                .collect();
            if records.is_empty() {
                bail!("no runs for config {hash} in {}", cli.results.display());
            }
            let report = build_report(&cfg, &records);
            for path in emit_report(&report, format, &out_dir)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}
