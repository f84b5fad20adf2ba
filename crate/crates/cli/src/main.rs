//! `myoexp`: batch experiments for cross-subject sEMG adaptation.
//!
//! Subcommands: `synth` materializes a synthetic cohort as CSV recordings,
//! `cache-sources` pre-trains and caches source models, `run` executes the
//! full experiment, `report` re-aggregates artifacts from a finished run.
//! Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use myoadapt_cli::config::ExperimentConfig;
use myoadapt_cli::runner::{run_experiment, RunOptions};
use myoadapt_cli::{cache, cohort, exit_code, report};

#[derive(Parser)]
#[command(
    name = "myoexp",
    about = "Cross-subject sEMG adaptation experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic cohort as one CSV per subject.
    Synth {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Train and cache every source subject's model (idempotent).
    CacheSources {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Run the experiment: sources, per-target curves, artifacts.
    Run {
        #[command(flatten)]
        common: ConfigArgs,
        /// Worker threads for the per-target phase (default: one per CPU).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Aggregate mean/best/worst curves from an existing output directory.
    Report {
        /// Output directory of a previous run.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &ConfigArgs) -> myoadapt::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run() -> myoadapt::Result<i32> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth { common } => {
            let cfg = load_config(&common)?;
            let out = cfg.resolved_out_dir()?.to_path_buf();
            let ids = cohort::materialize_cohort(&cfg, &out)?;
            println!("wrote {} recording(s) to {}", ids.len(), out.display());
            for id in ids {
                println!("  {id}.csv");
            }
            Ok(0)
        }
        Command::CacheSources { common } => {
            let cfg = load_config(&common)?;
            cfg.validate()?;
            let cache_dir = cfg.resolved_cache_dir()?;
            let wanted: std::collections::BTreeSet<String> =
                cfg.subjects.sources.iter().cloned().collect();
            let recordings = cohort::build_cohort(&cfg.cohort, cfg.seed, Some(&wanted))?;
            let mut trained = 0;
            let mut cached = 0;
            for recording in &recordings {
                let subject = cohort::process_subject(
                    recording,
                    &cfg.windowing,
                    &cfg.split,
                    cfg.train_stride,
                    cfg.test_stride,
                )?;
                let entry = cache::train_or_load_source(&cache_dir, &subject, &cfg.grid)?;
                if entry.from_cache {
                    cached += 1;
                    println!("{}: cached (C={}, gamma={})", subject.id, entry.grid.c, entry.grid.gamma);
                } else {
                    trained += 1;
                    println!("{}: trained (C={}, gamma={})", subject.id, entry.grid.c, entry.grid.gamma);
                }
            }
            println!("{trained} trained, {cached} from cache");
            Ok(0)
        }
        Command::Run { common, jobs } => {
            let cfg = load_config(&common)?;
            let report = run_experiment(&cfg, &RunOptions { jobs })?;
            let ok = report.summary.targets.iter().filter(|t| t.status == "ok").count();
            let failed = report.summary.targets.len() - ok;
            println!(
                "{ok} target(s) ok, {failed} failed; artifacts in {}",
                report.out_dir.display()
            );
            for target in &report.summary.targets {
                if let Some(err) = &target.error {
                    eprintln!("  {}: {} error during {}: {}", target.id, err.kind, err.stage, err.message);
                }
            }
            Ok(report.exit_code)
        }
        Command::Report { out } => {
            let text = report::report_from_artifacts(&out)?;
            print!("{text}");
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
