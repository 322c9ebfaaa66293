//! Pipeline stages and artifact writing.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use deltaspike::anomaly::{classify_anomalies, detect_spikes, Classification, Spike};
use deltaspike::attribution::{build_report, clusters_for, BotReport};
use deltaspike::ingest::{parse_transactions, write_transactions, Dataset, Format};
use deltaspike::powerlaw::{fit_discrete_power_law, write_plot_data, FitExport, PowerLawFit};
use deltaspike::timeline::{aggregate_histogram, all_deltas, DeltaHistogram};
use serde::Serialize;

use crate::config::RunConfig;

/// A failed command, carrying its exit code class.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Data(anyhow::Error),
    Fit(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Data(_) => 2,
            Failure::Fit(_) => 3,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Data(e) | Failure::Fit(e) => e,
        }
    }
}

pub type Outcome<T> = Result<T, Failure>;

pub const DATASET_CACHE: &str = "dataset.csv";
pub const HISTOGRAM: &str = "histogram.csv";
pub const FIT: &str = "fit.json";
pub const PLOT_DATA: &str = "plot_data.tsv";
pub const SPIKES: &str = "spikes.json";
pub const ANOMALIES: &str = "anomalies.json";
pub const RECURRENCE: &str = "recurrence.tsv";
pub const REPORT: &str = "report.json";

/// Writes through a sibling temporary file renamed into place on success.
pub fn write_atomic<F>(path: &Path, fill: F) -> anyhow::Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> anyhow::Result<()>,
{
    let name = path
        .file_name()
        .ok_or_else(|| anyhow!("{} is not a file path", path.display()))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let result = (|| -> anyhow::Result<()> {
        let mut w = BufWriter::new(File::create(&tmp)?);
        fill(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn load_dataset(cfg: &RunConfig) -> Outcome<Dataset> {
    let path = cfg.input().map_err(Failure::Config)?;
    let opts = cfg.parse_options().map_err(Failure::Config)?;
    let file = File::open(path).map_err(|e| Failure::Data(anyhow!("cannot open input {}: {e}", path.display())))?;
    let parsed = parse_transactions(io::BufReader::new(file), &opts)
        .map_err(|e| Failure::Data(anyhow!("{}: {e}", path.display())))?;
    Ok(Dataset::from_parsed(parsed))
}

fn prepare_out_dir(cfg: &RunConfig) -> Outcome<()> {
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Failure::Config(anyhow!("cannot create output directory {}: {e}", cfg.out_dir.display())))
}

fn io_failure(e: anyhow::Error) -> Failure {
    Failure::Data(e)
}

#[derive(Debug, Serialize)]
pub struct IngestSummary {
    pub input: String,
    pub tx_count: usize,
    pub wallet_count: usize,
    pub span_start: Option<i64>,
    pub span_end: Option<i64>,
    pub rows_read: usize,
    pub rows_skipped: usize,
    pub duplicates_dropped: usize,
    pub dataset: PathBuf,
}

pub fn ingest(cfg: &RunConfig) -> Outcome<IngestSummary> {
    let ds = load_dataset(cfg)?;
    prepare_out_dir(cfg)?;
    let dataset = cfg.out_dir.join(DATASET_CACHE);
    write_atomic(&dataset, |w| Ok(write_transactions(ds.transactions(), Format::Csv, w)?)).map_err(io_failure)?;
    let span = ds.span();
    Ok(IngestSummary {
        input: cfg.input().map_err(Failure::Config)?.display().to_string(),
        tx_count: ds.len(),
        wallet_count: ds.wallet_count(),
        span_start: span.map(|s| s.0),
        span_end: span.map(|s| s.1),
        rows_read: ds.rows_read,
        rows_skipped: ds.rows_skipped,
        duplicates_dropped: ds.duplicates_dropped,
        dataset,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Histogram,
    Fit,
    Detect,
    Classify,
    Report,
}

/// Everything a run produced, up to the requested stage.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub dataset: Dataset,
    pub histogram: DeltaHistogram,
    pub fit: Option<PowerLawFit>,
    pub spikes: Vec<Spike>,
    pub classification: Option<Classification>,
    pub report: Option<BotReport>,
    pub written: Vec<PathBuf>,
}

#[derive(Serialize)]
struct SpikeExport<'a> {
    #[serde(flatten)]
    spike: &'a Spike,
    config_hash: &'a str,
}

pub fn run(cfg: &RunConfig, stage: Stage) -> Outcome<RunOutput> {
    cfg.validate().map_err(Failure::Config)?;
    let ds = load_dataset(cfg)?;
    prepare_out_dir(cfg)?;
    let hash = cfg.hash();
    let meta = format!("config_hash={hash}");
    let mut out = RunOutput::default();
    let emit = |out: &mut RunOutput, name: &str| {
        let p = cfg.out_dir.join(name);
        out.written.push(p.clone());
        p
    };

    let histogram = aggregate_histogram(&all_deltas(&ds, cfg.mode), None);
    let path = emit(&mut out, HISTOGRAM);
    write_atomic(&path, |w| Ok(histogram.write_csv(w, Some(&meta))?)).map_err(io_failure)?;
    out.dataset = ds;
    out.histogram = histogram;
    if stage == Stage::Histogram {
        return Ok(out);
    }

    let fit = fit_discrete_power_law(&out.histogram.bins, cfg.x_min_lo..=cfg.x_min_hi, cfg.min_tail)
        .map_err(|e| Failure::Fit(anyhow!("power-law fit failed: {e}")))?;
    let path = emit(&mut out, FIT);
    write_json(&path, &FitExport::new(&fit, Some(hash.clone()))).map_err(io_failure)?;
    let path = emit(&mut out, PLOT_DATA);
    write_atomic(&path, |w| {
        Ok(write_plot_data(&out.histogram.bins, &fit, w, Some(&meta))?)
    })
    .map_err(io_failure)?;
    out.fit = Some(fit);
    if stage == Stage::Fit {
        return Ok(out);
    }

    let spikes = detect_spikes(&out.histogram.bins, &fit, &cfg.spike_params());
    if stage == Stage::Detect {
        let export: Vec<_> = spikes
            .iter()
            .map(|spike| SpikeExport {
                spike,
                config_hash: &hash,
            })
            .collect();
        let path = emit(&mut out, SPIKES);
        write_json(&path, &export).map_err(io_failure)?;
        out.spikes = spikes;
        return Ok(out);
    }

    let classification = classify_anomalies(
        &out.dataset,
        cfg.mode,
        &spikes,
        &fit,
        &cfg.window_config(),
        &cfg.spike_params(),
    )
    .map_err(|e| Failure::Config(anyhow!("{e}")))?;
    let records = classification.records(&spikes, Some(&hash));
    let path = emit(&mut out, ANOMALIES);
    write_json(&path, &records).map_err(io_failure)?;
    let path = emit(&mut out, RECURRENCE);
    write_atomic(&path, |w| Ok(classification.write_window_table(w, Some(&meta))?)).map_err(io_failure)?;
    out.spikes = spikes;
    if stage == Stage::Classify {
        out.classification = Some(classification);
        return Ok(out);
    }

    let clusters =
        clusters_for(&classification, &out.histogram, &out.dataset).map_err(|e| Failure::Data(anyhow!("{e}")))?;
    let mut config = serde_json::to_value(cfg).expect("config serializes");
    config["config_hash"] = serde_json::Value::String(hash.clone());
    let report = build_report(
        config,
        Some(FitExport::new(&fit, None)),
        classification.records(&out.spikes, None),
        &clusters,
        &cfg.report_params(),
    );
    let path = emit(&mut out, REPORT);
    write_json(&path, &report).map_err(io_failure)?;
    out.classification = Some(classification);
    out.report = Some(report);
    Ok(out)
}
