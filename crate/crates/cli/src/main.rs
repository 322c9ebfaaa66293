//! `deltaspike` command-line driver.

mod config;
mod pipeline;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use deltaspike::ingest::{write_transactions, Format};
use deltaspike::synth::{generate, Label, SynthConfig};
use deltaspike::timeline::ParticipationMode;
use serde::Serialize;

use config::RunConfig;
use pipeline::{write_atomic, Failure, Outcome, Stage};

#[derive(Parser)]
#[command(
    name = "deltaspike",
    version,
    about = "Find bot activity from spikes in inter-transaction time differences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and normalize the input; write the canonical dataset and print a summary.
    Ingest(RunArgs),
    /// Write the delta histogram.
    Histogram(RunArgs),
    /// Fit the power law; write fit JSON and plot data.
    Fit(RunArgs),
    /// Detect spike bins against the fit.
    Detect(RunArgs),
    /// Classify spikes as periodic or irregular over random windows.
    Classify(RunArgs),
    /// Build the per-wallet bot report.
    Report(RunArgs),
    /// Run the full pipeline and print a summary.
    Analyze(RunArgs),
    /// Generate a labeled synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Input transaction file.
    #[arg(long, short)]
    input: Option<PathBuf>,
    /// Input format (csv or jsonl); inferred from the extension by default.
    #[arg(long)]
    format: Option<String>,
    /// Wallet participation: sent, received or both.
    #[arg(long)]
    mode: Option<ParticipationMode>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Classification window length in minutes.
    #[arg(long)]
    window_minutes: Option<u64>,
    /// Number of random windows.
    #[arg(long)]
    samples: Option<usize>,
    /// Window sampling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override any configuration key, e.g. `--set detect.sigma=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// `key = value` scenario file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a scenario key, e.g. `--set humans.count=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, short, default_value = "synth")]
    out: PathBuf,
    /// Transaction file format.
    #[arg(long, default_value = "csv")]
    format: String,
}

fn split_override(s: &str) -> anyhow::Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{s}`"))
}

fn run_config(args: &RunArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        cfg.apply_text(&text)
            .with_context(|| format!("in {}", path.display()))?;
    }
    if let Some(p) = &args.input {
        cfg.input = Some(p.clone());
    }
    if let Some(f) = &args.format {
        cfg.set("format", f).map_err(anyhow::Error::msg)?;
    }
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
    if let Some(w) = args.window_minutes {
        cfg.window_minutes = w;
    }
    if let Some(n) = args.samples {
        cfg.samples = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    for o in &args.overrides {
        let (k, v) = split_override(o)?;
        cfg.set(k, v).map_err(anyhow::Error::msg)?;
    }
    Ok(cfg)
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("summary serializes"));
}

fn run_stage(args: &RunArgs, stage: Stage, summary: bool) -> Outcome<()> {
    let cfg = run_config(args).map_err(Failure::Config)?;
    let out = pipeline::run(&cfg, stage)?;
    if summary {
        println!("transactions: {}", out.dataset.len());
        println!("deltas: {}", out.histogram.total);
        if let Some(fit) = &out.fit {
            println!(
                "fit: alpha={:.4} x_min={} n_tail={} ks={:.4}",
                fit.alpha, fit.x_min, fit.n_tail, fit.ks
            );
        }
        if let Some(c) = &out.classification {
            for a in &c.classified {
                println!(
                    "spike {} min: {} (recurrence {:.3}, score {:.1})",
                    a.spike.delta_minutes, a.kind, a.recurrence_rate, a.spike.score
                );
            }
            for u in &c.unclassified {
                println!("spike {} min: unclassified ({})", u.spike.delta_minutes, u.reason);
            }
        }
        if let Some(r) = &out.report {
            println!("flagged wallets: {}", r.flagged().count());
        }
    }
    for p in &out.written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct SynthSummary {
    seed: u64,
    tx_count: usize,
    wallet_count: usize,
    humans: usize,
    periodic_bots: usize,
    burst_bots: usize,
    transactions: PathBuf,
    ground_truth: PathBuf,
}

fn synth(args: &SynthArgs) -> Outcome<()> {
    let mut cfg = SynthConfig::default();
    let format: Format = args.format.parse().map_err(|e| Failure::Config(anyhow!("{e}")))?;
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Config(anyhow!("cannot read scenario {}: {e}", path.display())))?;
        cfg.apply_text(&text)
            .map_err(|e| Failure::Config(anyhow!("in {}: {e}", path.display())))?;
    }
    for o in &args.overrides {
        let (k, v) = split_override(o).map_err(Failure::Config)?;
        cfg.set(k, v).map_err(|e| Failure::Config(e.into()))?;
    }
    let (ds, truth) = generate(&cfg).map_err(|e| Failure::Config(e.into()))?;
    fs::create_dir_all(&args.out)
        .map_err(|e| Failure::Config(anyhow!("cannot create output directory {}: {e}", args.out.display())))?;
    let transactions = args.out.join(format!("transactions.{format}"));
    let ground_truth = args.out.join("ground_truth.csv");
    write_atomic(&transactions, |w| Ok(write_transactions(ds.transactions(), format, w)?)).map_err(Failure::Data)?;
    write_atomic(&ground_truth, |w| Ok(truth.write_csv(w)?)).map_err(Failure::Data)?;
    print_json(&SynthSummary {
        seed: cfg.seed,
        tx_count: ds.len(),
        wallet_count: ds.wallet_count(),
        humans: truth.count(Label::Human),
        periodic_bots: truth.count(Label::PeriodicBot),
        burst_bots: truth.count(Label::BurstBot),
        transactions,
        ground_truth,
    });
    Ok(())
}

fn dispatch(cli: Cli) -> Outcome<()> {
    match cli.command {
        Command::Ingest(args) => {
            let cfg = run_config(&args).map_err(Failure::Config)?;
            print_json(&pipeline::ingest(&cfg)?);
            Ok(())
        }
        Command::Histogram(args) => run_stage(&args, Stage::Histogram, false),
        Command::Fit(args) => run_stage(&args, Stage::Fit, false),
        Command::Detect(args) => run_stage(&args, Stage::Detect, false),
        Command::Classify(args) => run_stage(&args, Stage::Classify, false),
        Command::Report(args) => run_stage(&args, Stage::Report, false),
        Command::Analyze(args) => run_stage(&args, Stage::Report, true),
        Command::Synth(args) => synth(&args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.exit_code())
        }
    }
}
