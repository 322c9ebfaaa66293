//! Spike detection against the power-law null, and periodic/irregular
//! classification by re-detection inside randomly placed time windows.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;
use thiserror::Error;

use crate::ingest::Dataset;
use crate::powerlaw::{fit_discrete_power_law, PowerLawFit, DEFAULT_MIN_TAIL, DEFAULT_XMIN_RANGE};
use crate::timeline::{aggregate_histogram, timed_deltas, DeltaHistogram, ParticipationMode, TimedDelta};

#[derive(Debug, Error, PartialEq)]
pub enum AnomalyError {
    #[error("window [{0}, {1}) is empty")]
    EmptyWindow(i64, i64),

    #[error("invalid window configuration: {0}")]
    InvalidWindowConfig(String),
}

/// A bin whose observed count exceeds the power-law expectation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spike {
    pub delta_minutes: u64,
    pub observed: u64,
    pub expected: f64,
    pub score: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeParams {
    pub sigma_threshold: f64,
    pub min_count: u64,
}

impl Default for SpikeParams {
    fn default() -> Self {
        Self {
            sigma_threshold: 6.0,
            min_count: 30,
        }
    }
}

/// Excess over expectation in units of `sqrt(max(E, 1))`.
pub fn spike_score(observed: u64, expected: f64) -> f64 {
    (observed as f64 - expected) / expected.max(1.0).sqrt()
}

/// `P(X ≥ observed)` for `X ~ Poisson(expected)`.
pub fn poisson_upper_tail(observed: u64, expected: f64) -> f64 {
    if observed == 0 {
        return 1.0;
    }
    gamma_lr(observed as f64, expected).clamp(0.0, 1.0)
}

fn qualifies(observed: u64, expected: f64, sigma: f64, min_count: u64) -> bool {
    observed >= min_count && spike_score(observed, expected) >= sigma
}

/// Bins `k ≥ x_min` with `observed ≥ min_count` and score at or above the
/// threshold, highest score first.
pub fn detect_spikes(counts: &BTreeMap<u64, u64>, fit: &PowerLawFit, params: &SpikeParams) -> Vec<Spike> {
    let mut spikes: Vec<Spike> = counts
        .range(fit.x_min.max(1)..)
        .filter_map(|(&k, &observed)| {
            let expected = fit.expected(k);
            if !qualifies(observed, expected, params.sigma_threshold, params.min_count) {
                return None;
            }
            Some(Spike {
                delta_minutes: k,
                observed,
                expected,
                score: spike_score(observed, expected),
                p_value: poisson_upper_tail(observed, expected),
            })
        })
        .collect();
    spikes.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.delta_minutes.cmp(&b.delta_minutes)));
    spikes
}

/// Histogram of the gaps whose two endpoints both lie in `[start, end)`.
pub fn windowed_histogram(
    ds: &Dataset,
    mode: ParticipationMode,
    window: (i64, i64),
) -> Result<DeltaHistogram, AnomalyError> {
    let (start, end) = window;
    if end <= start {
        return Err(AnomalyError::EmptyWindow(start, end));
    }
    let records: Vec<_> = timed_deltas(ds, mode)
        .into_iter()
        .filter(|d| d.prior_ts >= start && d.current_ts < end)
        .map(|d| d.record)
        .collect();
    Ok(aggregate_histogram(&records, Some(window)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NullModel {
    /// Global `(alpha, x_min)` with expected counts scaled to the window's
    /// tail size.
    #[default]
    Rescaled,
    /// Refit inside each window; falls back to `Rescaled` when the window
    /// cannot be fitted.
    Refit,
}

impl FromStr for NullModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rescaled" => Ok(Self::Rescaled),
            "refit" => Ok(Self::Refit),
            other => Err(format!("unknown null model `{other}` (expected rescaled or refit)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_minutes: u64,
    pub num_samples: usize,
    pub seed: u64,
    /// Recurrence rate at or above which a spike is periodic.
    pub periodic_threshold: f64,
    pub null_model: NullModel,
    /// Also scan half-overlapping windows tiling the span, to locate spikes
    /// the random windows miss. They never enter the recurrence rate.
    pub sweep: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_minutes: 2880,
            num_samples: 40,
            seed: 1,
            periodic_threshold: 0.9,
            null_model: NullModel::Rescaled,
            sweep: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Periodic,
    Irregular,
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnomalyKind::Periodic => "periodic",
            AnomalyKind::Irregular => "irregular",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyClassification {
    pub spike: Spike,
    pub kind: AnomalyKind,
    pub recurrence_rate: f64,
    /// Merged `[start, end)` intervals of the windows where the spike
    /// re-qualified.
    pub occurrence_windows: Vec<(i64, i64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnclassifiedReason {
    /// The gap does not fit inside one window.
    GapExceedsWindow,
    /// No evaluated window reproduced the spike.
    NotReproducibleInWindows,
}

impl fmt::Display for UnclassifiedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::GapExceedsWindow => "gap exceeds window length",
            Self::NotReproducibleInWindows => "not reproducible in windows",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnclassifiedSpike {
    pub spike: Spike,
    pub reason: UnclassifiedReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowSource {
    Random,
    Sweep,
}

/// One spike bin evaluated in one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowObservation {
    pub delta_minutes: u64,
    pub source: WindowSource,
    pub window: (i64, i64),
    pub n_tail: u64,
    pub observed: u64,
    pub expected: f64,
    pub min_count: u64,
    pub qualifies: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Classification {
    pub classified: Vec<AnomalyClassification>,
    pub unclassified: Vec<UnclassifiedSpike>,
    pub windows: Vec<WindowObservation>,
}

/// Gaps sorted by first endpoint, for window range scans.
struct WindowIndex {
    deltas: Vec<TimedDelta>,
}

impl WindowIndex {
    fn new(ds: &Dataset, mode: ParticipationMode) -> Self {
        let mut deltas = timed_deltas(ds, mode);
        deltas.sort_by_key(|d| d.prior_ts);
        Self { deltas }
    }

    fn counts(&self, (start, end): (i64, i64)) -> BTreeMap<u64, u64> {
        let lo = self.deltas.partition_point(|d| d.prior_ts < start);
        let hi = self.deltas.partition_point(|d| d.prior_ts < end);
        let mut counts = BTreeMap::new();
        for d in &self.deltas[lo..hi] {
            if d.current_ts < end {
                *counts.entry(d.record.delta_minutes).or_insert(0) += 1;
            }
        }
        counts
    }
}

/// Random window starts, drawn up front from the seed.
pub fn sample_window_starts(t_min: i64, t_max: i64, wcfg: &WindowConfig) -> Vec<i64> {
    let length = wcfg.window_minutes as i64 * 60;
    let mut rng = ChaCha8Rng::seed_from_u64(wcfg.seed);
    (0..wcfg.num_samples)
        .map(|_| rng.random_range(t_min..=t_max - length))
        .collect()
}

fn sweep_starts(t_min: i64, t_max: i64, length: i64) -> Vec<i64> {
    let stride = (length / 2).max(60);
    let last = t_max - length;
    let mut starts: Vec<i64> = (0..).map(|i| t_min + i * stride).take_while(|&s| s <= last).collect();
    if starts.last() != Some(&last) {
        starts.push(last);
    }
    starts
}

fn merge_intervals(mut intervals: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    intervals.sort_unstable();
    let mut merged: Vec<(i64, i64)> = Vec::new();
    for (s, e) in intervals {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    merged
}

/// Re-detects each spike in `num_samples` random windows of fixed length.
///
/// Expected counts inside a window come from the global fit scaled to the
/// window's tail size (or a per-window refit, see [`NullModel`]); `min_count`
/// is scaled by the same ratio. A spike is periodic when it re-qualifies in
/// at least `periodic_threshold` of the windows.
pub fn classify_anomalies(
    ds: &Dataset,
    mode: ParticipationMode,
    spikes: &[Spike],
    fit: &PowerLawFit,
    wcfg: &WindowConfig,
    params: &SpikeParams,
) -> Result<Classification, AnomalyError> {
    let mut out = Classification::default();
    if spikes.is_empty() {
        return Ok(out);
    }
    let (t_min, t_max) = ds
        .span()
        .ok_or_else(|| AnomalyError::InvalidWindowConfig("dataset is empty".into()))?;
    let length = wcfg.window_minutes as i64 * 60;
    if wcfg.window_minutes == 0 {
        return Err(AnomalyError::InvalidWindowConfig(
            "window length must be positive".into(),
        ));
    }
    if length > t_max - t_min {
        return Err(AnomalyError::InvalidWindowConfig(format!(
            "window of {} minutes exceeds the dataset span of {} minutes",
            wcfg.window_minutes,
            (t_max - t_min) / 60
        )));
    }
    if wcfg.num_samples == 0 {
        return Err(AnomalyError::InvalidWindowConfig(
            "num_samples must be at least 1".into(),
        ));
    }
    if !(wcfg.periodic_threshold > 0.0 && wcfg.periodic_threshold <= 1.0) {
        return Err(AnomalyError::InvalidWindowConfig(
            "periodic threshold must lie in (0, 1]".into(),
        ));
    }

    let index = WindowIndex::new(ds, mode);
    let mut windows: Vec<(WindowSource, (i64, i64))> = sample_window_starts(t_min, t_max, wcfg)
        .into_iter()
        .map(|s| (WindowSource::Random, (s, s + length)))
        .collect();
    if wcfg.sweep {
        windows.extend(
            sweep_starts(t_min, t_max, length)
                .into_iter()
                .map(|s| (WindowSource::Sweep, (s, s + length))),
        );
    }

    let classifiable: Vec<&Spike> = spikes
        .iter()
        .filter(|s| s.delta_minutes < wcfg.window_minutes)
        .collect();
    for s in spikes.iter().filter(|s| s.delta_minutes >= wcfg.window_minutes) {
        out.unclassified.push(UnclassifiedSpike {
            spike: *s,
            reason: UnclassifiedReason::GapExceedsWindow,
        });
    }

    for &(source, window) in &windows {
        let counts = index.counts(window);
        let n_tail: u64 = counts.range(fit.x_min..).map(|(_, c)| c).sum();
        let null = match wcfg.null_model {
            NullModel::Rescaled => fit.rescaled(n_tail),
            NullModel::Refit => fit_discrete_power_law(&counts, DEFAULT_XMIN_RANGE, DEFAULT_MIN_TAIL)
                .map(|f| f.rescaled(counts.range(f.x_min..).map(|(_, c)| c).sum()))
                .unwrap_or_else(|_| fit.rescaled(n_tail)),
        };
        let scaled_min = if fit.n_tail == 0 {
            params.min_count
        } else {
            (params.min_count as f64 * n_tail as f64 / fit.n_tail as f64).ceil() as u64
        }
        .max(1);
        for s in &classifiable {
            let observed = counts.get(&s.delta_minutes).copied().unwrap_or(0);
            let expected = null.expected(s.delta_minutes);
            out.windows.push(WindowObservation {
                delta_minutes: s.delta_minutes,
                source,
                window,
                n_tail,
                observed,
                expected,
                min_count: scaled_min,
                qualifies: qualifies(observed, expected, params.sigma_threshold, scaled_min),
            });
        }
    }

    for s in classifiable {
        let obs = out.windows.iter().filter(|w| w.delta_minutes == s.delta_minutes);
        let random_hits = obs
            .clone()
            .filter(|w| w.source == WindowSource::Random && w.qualifies)
            .count();
        let hits: Vec<(i64, i64)> = obs.filter(|w| w.qualifies).map(|w| w.window).collect();
        if hits.is_empty() {
            out.unclassified.push(UnclassifiedSpike {
                spike: *s,
                reason: UnclassifiedReason::NotReproducibleInWindows,
            });
            continue;
        }
        let recurrence_rate = random_hits as f64 / wcfg.num_samples as f64;
        let kind = if recurrence_rate >= wcfg.periodic_threshold {
            AnomalyKind::Periodic
        } else {
            AnomalyKind::Irregular
        };
        out.classified.push(AnomalyClassification {
            spike: *s,
            kind,
            recurrence_rate,
            occurrence_windows: merge_intervals(hits),
        });
    }
    Ok(out)
}

/// Row of the anomaly export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub delta_minutes: u64,
    pub observed: u64,
    pub expected: f64,
    pub score: f64,
    pub p_value: f64,
    /// `periodic`, `irregular`, or `unclassified`.
    pub kind: String,
    pub recurrence_rate: Option<f64>,
    pub occurrence_windows: Vec<(i64, i64)>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config_hash: Option<String>,
}

impl Classification {
    /// Export rows in the order of `spikes` (score descending).
    pub fn records(&self, spikes: &[Spike], config_hash: Option<&str>) -> Vec<AnomalyRecord> {
        spikes
            .iter()
            .filter_map(|s| {
                let base = |kind: String, rate, windows, reason| AnomalyRecord {
                    delta_minutes: s.delta_minutes,
                    observed: s.observed,
                    expected: s.expected,
                    score: s.score,
                    p_value: s.p_value,
                    kind,
                    recurrence_rate: rate,
                    occurrence_windows: windows,
                    reason,
                    config_hash: config_hash.map(str::to_string),
                };
                if let Some(c) = self
                    .classified
                    .iter()
                    .find(|c| c.spike.delta_minutes == s.delta_minutes)
                {
                    return Some(base(
                        c.kind.to_string(),
                        Some(c.recurrence_rate),
                        c.occurrence_windows.clone(),
                        None,
                    ));
                }
                self.unclassified
                    .iter()
                    .find(|u| u.spike.delta_minutes == s.delta_minutes)
                    .map(|u| base("unclassified".into(), None, Vec::new(), Some(u.reason.to_string())))
            })
            .collect()
    }

    pub fn get(&self, delta_minutes: u64) -> Option<&AnomalyClassification> {
        self.classified.iter().find(|c| c.spike.delta_minutes == delta_minutes)
    }

    /// Tab-separated per-window recurrence table.
    pub fn write_window_table<W: Write>(&self, mut out: W, meta: Option<&str>) -> io::Result<()> {
        if let Some(m) = meta {
            writeln!(out, "# {m}")?;
        }
        writeln!(
            out,
            "delta_minutes\tsource\twindow_start\twindow_end\tn_tail\tobserved\texpected\tmin_count\tqualifies"
        )?;
        for w in &self.windows {
            let source = match w.source {
                WindowSource::Random => "random",
                WindowSource::Sweep => "sweep",
            };
            writeln!(
                out,
                "{}\t{source}\t{}\t{}\t{}\t{}\t{:.6e}\t{}\t{}",
                w.delta_minutes, w.window.0, w.window.1, w.n_tail, w.observed, w.expected, w.min_count, w.qualifies
            )?;
        }
        out.flush()
    }
}
