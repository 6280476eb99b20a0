use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use spiral_sim::corpus::write_documents_jsonl;
use spiral_sim::dataset::{synthetic_dataset, write_queries, SynthParams};
use spiral_sim::runner::{self, ExperimentConfig, FilterMode, RunOptions};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "spiral", version, about = "Simulate RAG systems feeding generated text back into their corpus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Baseline, zero-shot injection and every loop iteration.
    Run(RunArgs),
    /// Baseline only.
    Baseline(RunArgs),
    /// Continue an interrupted run from its last committed iteration.
    Resume {
        /// Run directory.
        run_dir: PathBuf,
    },
    /// Regenerate plot series and the summary table of a run directory.
    Report {
        run_dir: PathBuf,
    },
    /// Check a configuration without running anything.
    Validate(RunArgs),
    /// Write an offline dataset and a matching configuration.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5000)]
        docs: usize,
        #[arg(long, default_value_t = 200)]
        queries: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replace every remote backend with its offline stand-in.
    #[arg(long)]
    offline: bool,
    #[arg(long, value_parser = clap::value_parser!(FilterMode))]
    filter: Option<FilterMode>,
    #[arg(long)]
    misinfo: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(filter) = self.filter {
            cfg.filter = filter;
        }
        if self.misinfo {
            cfg.misinfo = true;
        }
        if self.offline {
            cfg = cfg.into_offline();
        }
        Ok(cfg)
    }
}

fn synth(out: PathBuf, docs: usize, queries: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let (documents, qs) = synthetic_dataset(SynthParams {
        documents: docs,
        queries,
        seed,
        ..SynthParams::default()
    });
    let corpus_path = out.join("corpus.jsonl");
    let file = File::create(&corpus_path).with_context(|| corpus_path.display().to_string())?;
    write_documents_jsonl(&documents, BufWriter::new(file))?;
    let queries_path = out.join("queries.jsonl");
    let file = File::create(&queries_path).with_context(|| queries_path.display().to_string())?;
    write_queries(BufWriter::new(file), &qs)?;
    let mut cfg = ExperimentConfig::offline_defaults("corpus.jsonl".into(), "queries.jsonl".into(), "run".into());
    cfg.seed = seed;
    let cfg_path = out.join("experiment.toml");
    std::fs::write(&cfg_path, cfg.to_toml()?).with_context(|| cfg_path.display().to_string())?;
    println!("wrote {} documents, {} queries and {}", documents.len(), qs.len(), cfg_path.display());
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let summary = runner::run_experiment(args.resolve()?, RunOptions::default())?;
            println!("run complete: {}", summary.run_dir.join(runner::SUMMARY).display());
        }
        Command::Baseline(args) => {
            let a = runner::run_baseline(args.resolve()?)?;
            println!(
                "baseline: acc@5 {:.2} acc@20 {:.2} em {:.4}",
                a.metrics.acc_at_5, a.metrics.acc_at_20, a.metrics.em_mean
            );
        }
        Command::Resume { run_dir } => {
            let summary = runner::resume(&run_dir, RunOptions::default())?;
            println!(
                "resumed {} ({} phases already committed)",
                summary.run_dir.display(),
                summary.replayed.len()
            );
        }
        Command::Report { run_dir } => {
            let report = runner::emit_plot_series(&run_dir)?;
            if !report.gaps.is_empty() {
                eprintln!("warning: iterations {:?} are missing", report.gaps);
            }
            for f in report.files {
                println!("{}", f.display());
            }
        }
        Command::Validate(args) => {
            let cfg = args.resolve()?;
            if let Err(e) = cfg.validate() {
                bail!("{e}");
            }
            println!("config ok ({})", cfg.config_hash());
        }
        Command::Synth { out, docs, queries, seed } => synth(out, docs, queries, seed)?,
    }
    Ok(())
}
