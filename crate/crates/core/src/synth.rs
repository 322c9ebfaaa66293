//! Seeded synthetic transaction logs with labeled wallets.
//!
//! Three populations are generated:
//!
//! * **humans**: each wallet's gaps are i.i.d. draws from a discrete power
//!   law, paying one-off recipients with dispersed values;
//! * **pools** (periodic bots): a sender that runs a payout batch every
//!   `period` minutes (± uniform jitter) for the whole span. Each member is
//!   paid every `m` batches for some `m` in the payout interval range, so
//!   members' receive-side gaps sit at integer multiples of the period;
//! * **burst wallets**: wallets active on a single day only, each making two
//!   transfers exactly `common_gap` minutes apart.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{normalize, Dataset, Transaction};
use crate::kv::{parse_kv, parse_value};
use crate::powerlaw::{zeta_raw, ALPHA_EPS};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
}

const DAY_SECONDS: i64 = 86_400;

/// Inverse-transform sampler for `P(X = k) ∝ k^(−α)`, `k ≥ x_min`.
///
/// Survival values `P(X ≥ k)` for the first [`Self::TABLE`] values of `k`
/// are tabulated; deeper draws bisect on the Hurwitz-zeta survival function.
#[derive(Debug, Clone)]
pub struct DiscretePowerLaw {
    alpha: f64,
    x_min: u64,
    norm: f64,
    survival: Vec<f64>,
}

impl DiscretePowerLaw {
    const TABLE: usize = 4096;

    pub fn new(alpha: f64, x_min: u64) -> Result<Self, SynthError> {
        if alpha.is_nan() || alpha <= 1.0 + ALPHA_EPS || x_min == 0 {
            return Err(SynthError::InvalidConfig(format!(
                "power law needs alpha > 1 and x_min >= 1 (got alpha={alpha}, x_min={x_min})"
            )));
        }
        let norm = zeta_raw(alpha, x_min as f64);
        let mut survival = Vec::with_capacity(Self::TABLE);
        let mut z = norm;
        for i in 0..Self::TABLE as u64 {
            let k = x_min + i;
            // re-anchor periodically to keep subtraction error bounded
            if i % 512 == 0 {
                z = zeta_raw(alpha, k as f64);
            }
            survival.push(z / norm);
            z -= (k as f64).powf(-alpha);
        }
        Ok(Self {
            alpha,
            x_min,
            norm,
            survival,
        })
    }

    fn survival_at(&self, k: u64) -> f64 {
        match self.survival.get((k - self.x_min) as usize) {
            Some(&s) => s,
            None => zeta_raw(self.alpha, k as f64) / self.norm,
        }
    }

    /// Largest `k` with `P(X ≥ k) ≥ u`, for `u ∈ (0, 1]`.
    pub fn quantile(&self, u: f64) -> u64 {
        let last = *self.survival.last().expect("table is nonempty");
        if u > last {
            // first index whose survival drops below u, minus one
            let idx = self.survival.partition_point(|&s| s >= u);
            return self.x_min + idx as u64 - 1;
        }
        let mut lo = self.x_min + self.survival.len() as u64 - 1;
        let mut hi = lo.saturating_mul(2);
        while self.survival_at(hi) >= u {
            lo = hi;
            if hi >= u64::MAX / 4 {
                return hi;
            }
            hi = hi.saturating_mul(2);
        }
        // invariant: S(lo) >= u > S(hi)
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.survival_at(mid) >= u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u = 1.0 - rng.random::<f64>();
        self.quantile(u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Human,
    PeriodicBot,
    BurstBot,
}

impl Label {
    pub fn is_bot(self) -> bool {
        !matches!(self, Label::Human)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Human => "human",
            Label::PeriodicBot => "periodic_bot",
            Label::BurstBot => "burst_bot",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "human" => Ok(Label::Human),
            "periodic_bot" => Ok(Label::PeriodicBot),
            "burst_bot" => Ok(Label::BurstBot),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// Wallet → label for every generated address.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruth {
    pub labels: BTreeMap<String, Label>,
}

impl GroundTruth {
    pub fn bots(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().filter(|(_, l)| l.is_bot()).map(|(w, _)| w.as_str())
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.values().filter(|&&l| l == label).count()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "wallet,label")?;
        for (w, l) in &self.labels {
            writeln!(out, "{w},{l}")?;
        }
        out.flush()
    }

    pub fn read_csv(text: &str) -> Result<Self, String> {
        let mut labels = BTreeMap::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let (w, l) = line
                .split_once(',')
                .ok_or_else(|| format!("line {}: expected wallet,label", i + 1))?;
            labels.insert(w.to_string(), l.trim().parse()?);
        }
        Ok(Self { labels })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanConfig {
    pub count: usize,
    pub alpha: f64,
    pub x_min: u64,
    pub mean_events: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub count: usize,
    pub period_minutes: u64,
    /// Each batch fires within `± jitter` of its schedule slot.
    pub jitter_minutes: f64,
    /// Members paid by each pool.
    pub payout_destinations: usize,
    /// Members are paid every `m` batches, `m` in
    /// `min_payout_interval..=max_payout_interval`. Interval `m` is assigned
    /// to a share of members proportional to `m`, which gives every multiple
    /// of the period a similar number of gaps.
    pub min_payout_interval: u64,
    pub max_payout_interval: u64,
    /// Fixed payout shared by every pool; `None` draws dispersed values.
    pub payout_value: Option<u128>,
    /// Label pool members `periodic_bot` instead of `human`.
    pub members_as_bots: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstConfig {
    pub count: usize,
    /// Zero-based day index counted from the span start.
    pub burst_day: u64,
    pub common_gap_minutes: u64,
    pub common_destination: bool,
    pub common_value: bool,
    /// Give each burst wallet one or two extra transfers outside the burst day.
    pub background_events: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// `[start, end)` epoch seconds.
    pub span: (i64, i64),
    pub humans: HumanConfig,
    pub periodic_bots: PoolConfig,
    pub burst_bots: BurstConfig,
}

/// 2018-05-01T00:00:00Z
pub const DEFAULT_SPAN_START: i64 = 1_525_132_800;

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 2018,
            span: (DEFAULT_SPAN_START, DEFAULT_SPAN_START + 60 * DAY_SECONDS),
            humans: HumanConfig {
                count: 2000,
                alpha: 2.5,
                x_min: 1,
                mean_events: 50.0,
            },
            periodic_bots: PoolConfig {
                count: 20,
                period_minutes: 1440,
                jitter_minutes: 0.5,
                payout_destinations: 40,
                min_payout_interval: 2,
                max_payout_interval: 6,
                payout_value: Some(50_000_000_000_000_000),
                members_as_bots: false,
            },
            burst_bots: BurstConfig {
                count: 200,
                burst_day: 17,
                common_gap_minutes: 1032,
                common_destination: true,
                common_value: true,
                background_events: false,
            },
        }
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(format!("{key} = `{value}`: expected a boolean")),
    }
}

impl SynthConfig {
    /// Sets one key. Keys are the dotted field paths, e.g. `humans.alpha`;
    /// `span_days` sets the span end relative to its start.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SynthError> {
        let r: Result<(), String> = (|| {
            match key {
                "seed" => self.seed = parse_value(key, value)?,
                "span_start" => {
                    let len = self.span.1 - self.span.0;
                    self.span.0 = parse_value(key, value)?;
                    self.span.1 = self.span.0 + len;
                }
                "span_days" => self.span.1 = self.span.0 + parse_value::<i64>(key, value)? * DAY_SECONDS,
                "humans.count" => self.humans.count = parse_value(key, value)?,
                "humans.alpha" => self.humans.alpha = parse_value(key, value)?,
                "humans.x_min" => self.humans.x_min = parse_value(key, value)?,
                "humans.mean_events" => self.humans.mean_events = parse_value(key, value)?,
                "periodic_bots.count" => self.periodic_bots.count = parse_value(key, value)?,
                "periodic_bots.period_minutes" => self.periodic_bots.period_minutes = parse_value(key, value)?,
                "periodic_bots.jitter_minutes" => self.periodic_bots.jitter_minutes = parse_value(key, value)?,
                "periodic_bots.payout_destinations" => {
                    self.periodic_bots.payout_destinations = parse_value(key, value)?
                }
                "periodic_bots.min_payout_interval" => {
                    self.periodic_bots.min_payout_interval = parse_value(key, value)?
                }
                "periodic_bots.max_payout_interval" => {
                    self.periodic_bots.max_payout_interval = parse_value(key, value)?
                }
                "periodic_bots.payout_value" => {
                    self.periodic_bots.payout_value = match value {
                        "" | "none" | "dispersed" => None,
                        v => Some(parse_value(key, v)?),
                    }
                }
                "periodic_bots.members_as_bots" => self.periodic_bots.members_as_bots = parse_bool(key, value)?,
                "burst_bots.count" => self.burst_bots.count = parse_value(key, value)?,
                "burst_bots.burst_day" => self.burst_bots.burst_day = parse_value(key, value)?,
                "burst_bots.common_gap_minutes" => self.burst_bots.common_gap_minutes = parse_value(key, value)?,
                "burst_bots.common_destination" => self.burst_bots.common_destination = parse_bool(key, value)?,
                "burst_bots.common_value" => self.burst_bots.common_value = parse_bool(key, value)?,
                "burst_bots.background_events" => self.burst_bots.background_events = parse_bool(key, value)?,
                _ => return Err(format!("unknown synth key `{key}`")),
            }
            Ok(())
        })();
        r.map_err(SynthError::InvalidConfig)
    }

    /// Applies a `key = value` file on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), SynthError> {
        for (k, v) in parse_kv(text).map_err(|e| SynthError::InvalidConfig(e.to_string()))? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn burst_day_interval(&self) -> (i64, i64) {
        let start = self.span.0 + self.burst_bots.burst_day as i64 * DAY_SECONDS;
        (start, start + DAY_SECONDS)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        let (start, end) = self.span;
        if start <= 0 || end <= start {
            return bad(format!("span [{start}, {end}) is empty or not positive"));
        }
        let span_minutes = (end - start) / 60;
        let h = &self.humans;
        if h.count > 0 {
            if !h.alpha.is_finite() || h.alpha <= 1.0 + ALPHA_EPS {
                return bad(format!("humans.alpha = {} must exceed 1", h.alpha));
            }
            if h.x_min == 0 {
                return bad("humans.x_min must be at least 1".into());
            }
            if h.mean_events.is_nan() || h.mean_events < 1.0 {
                return bad("humans.mean_events must be at least 1".into());
            }
        }
        let p = &self.periodic_bots;
        if p.count > 0 {
            if p.period_minutes == 0 {
                return bad("periodic_bots.period_minutes must be positive".into());
            }
            if p.period_minutes as i64 > span_minutes {
                return bad(format!(
                    "periodic_bots.period_minutes = {} exceeds the span ({span_minutes} minutes)",
                    p.period_minutes
                ));
            }
            if p.jitter_minutes.is_nan() || p.jitter_minutes < 0.0 || p.jitter_minutes >= p.period_minutes as f64 / 2.0
            {
                return bad("periodic_bots.jitter_minutes must lie in [0, period/2)".into());
            }
            if p.payout_destinations == 0 {
                return bad("periodic_bots.payout_destinations must be at least 1".into());
            }
            if p.min_payout_interval == 0 || p.min_payout_interval > p.max_payout_interval {
                return bad("periodic_bots payout intervals must satisfy 1 <= min <= max".into());
            }
            // the first `min` members cover every phase, so no batch is empty
            if (p.payout_destinations as u64) < p.min_payout_interval {
                return bad("periodic_bots.payout_destinations must be at least min_payout_interval".into());
            }
        }
        let b = &self.burst_bots;
        if b.count > 0 {
            if b.common_gap_minutes == 0 || b.common_gap_minutes >= 1439 {
                return bad("burst_bots.common_gap_minutes must lie in [1, 1439) to fit one day".into());
            }
            let (_, day_end) = self.burst_day_interval();
            if day_end > end {
                return bad(format!("burst_bots.burst_day = {} lies outside the span", b.burst_day));
            }
        }
        Ok(())
    }
}

/// Independent, reproducible substream per (class, index).
fn substream(seed: u64, class: u64, index: u64) -> ChaCha8Rng {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ mix(class)) ^ index))
}

mod tag {
    pub const HUMAN: u8 = 0x01;
    pub const RECIPIENT: u8 = 0x02;
    pub const POOL: u8 = 0x03;
    pub const MEMBER: u8 = 0x04;
    pub const BURST: u8 = 0x05;
    pub const CONTRACT: u8 = 0x06;
}

fn address(tag: u8, index: u64) -> String {
    format!("0x{tag:02x}{index:038x}")
}

/// Log-uniform between 1e14 and 1e20 wei.
fn dispersed_value<R: Rng>(rng: &mut R) -> u128 {
    10f64.powf(rng.random_range(14.0..20.0)) as u128
}

struct Builder {
    txs: Vec<Transaction>,
    truth: GroundTruth,
    next_id: u64,
    next_recipient: u64,
}

impl Builder {
    fn emit(&mut self, timestamp: i64, from: &str, to: &str, value: u128) {
        self.txs.push(Transaction {
            tx_id: format!("0x{:016x}", self.next_id),
            timestamp,
            from_wallet: from.to_string(),
            to_wallet: Some(to.to_string()),
            value,
        });
        self.next_id += 1;
    }

    fn label(&mut self, wallet: &str, label: Label) {
        self.truth.labels.insert(wallet.to_string(), label);
    }

    fn fresh_recipient(&mut self) -> String {
        let a = address(tag::RECIPIENT, self.next_recipient);
        self.next_recipient += 1;
        self.label(&a, Label::Human);
        a
    }
}

/// Generates a dataset and its ground truth. Identical configs give identical
/// output.
pub fn generate(config: &SynthConfig) -> Result<(Dataset, GroundTruth), SynthError> {
    config.validate()?;
    let (start, end) = config.span;
    let mut b = Builder {
        txs: Vec::new(),
        truth: GroundTruth::default(),
        next_id: 0,
        next_recipient: 0,
    };

    let h = &config.humans;
    if h.count > 0 {
        let gaps = DiscretePowerLaw::new(h.alpha, h.x_min)?;
        let extra = (h.mean_events > 1.0).then(|| Poisson::new(h.mean_events - 1.0).expect("positive mean"));
        for i in 0..h.count as u64 {
            let mut rng = substream(config.seed, tag::HUMAN as u64, i);
            let wallet = address(tag::HUMAN, i);
            b.label(&wallet, Label::Human);
            let n_events = 1 + extra.as_ref().map_or(0, |p| p.sample(&mut rng) as u64);
            let mut t = rng.random_range(start..end);
            for e in 0..n_events {
                if e > 0 {
                    let k = gaps.sample(&mut rng) as i64;
                    t = t
                        .saturating_add(k.saturating_mul(60))
                        .saturating_add(rng.random_range(0..60));
                }
                if t >= end {
                    break;
                }
                let to = b.fresh_recipient();
                let value = dispersed_value(&mut rng);
                b.emit(t, &wallet, &to, value);
            }
        }
    }

    let p = &config.periodic_bots;
    let member_label = if p.members_as_bots {
        Label::PeriodicBot
    } else {
        Label::Human
    };
    for pool in 0..p.count as u64 {
        let mut rng = substream(config.seed, tag::POOL as u64, pool);
        let sender = address(tag::POOL, pool);
        b.label(&sender, Label::PeriodicBot);
        // (interval, copy) pairs; interval m appears m times
        let pattern: Vec<(u64, u64)> = (p.min_payout_interval..=p.max_payout_interval)
            .flat_map(|m| (0..m).map(move |c| (m, c)))
            .collect();
        let members: Vec<(String, u64, u64)> = (0..p.payout_destinations as u64)
            .map(|j| {
                let (interval, copy) = pattern[j as usize % pattern.len()];
                let phase = (copy + j / pattern.len() as u64) % interval;
                (
                    address(tag::MEMBER, pool * p.payout_destinations as u64 + j),
                    interval,
                    phase,
                )
            })
            .collect();
        for (m, _, _) in &members {
            b.label(m, member_label);
        }
        let period = p.period_minutes as i64 * 60;
        let jitter = (p.jitter_minutes * 60.0).round() as i64;
        let origin = start + jitter + rng.random_range(0..period);
        for slot in 0.. {
            let nominal = origin + slot * period;
            if nominal - jitter >= end {
                break;
            }
            let offset = if jitter > 0 {
                rng.random_range(-jitter..=jitter)
            } else {
                0
            };
            let value = p.payout_value.unwrap_or_else(|| dispersed_value(&mut rng));
            let t = nominal + offset;
            if t < start || t >= end {
                continue;
            }
            let slot = slot as u64;
            for (m, interval, phase) in &members {
                if slot % interval == *phase {
                    b.emit(t, &sender, m, value);
                }
            }
        }
    }

    let bc = &config.burst_bots;
    if bc.count > 0 {
        let (day_start, day_end) = config.burst_day_interval();
        let contract = address(tag::CONTRACT, 0);
        if bc.common_destination {
            b.label(&contract, Label::Human);
        }
        let gap = bc.common_gap_minutes as i64 * 60;
        let common_value: u128 = 1_000_000_000_000_000;
        for i in 0..bc.count as u64 {
            let mut rng = substream(config.seed, tag::BURST as u64, i);
            let wallet = address(tag::BURST, i);
            b.label(&wallet, Label::BurstBot);
            // both events, including the sub-minute offset, stay inside the day
            let first = rng.random_range(day_start..day_end - gap - 60);
            let second = first + gap + rng.random_range(0..60);
            for t in [first, second] {
                let to = if bc.common_destination {
                    contract.clone()
                } else {
                    b.fresh_recipient()
                };
                let value = if bc.common_value {
                    common_value
                } else {
                    dispersed_value(&mut rng)
                };
                b.emit(t, &wallet, &to, value);
            }
            if bc.background_events {
                for _ in 0..rng.random_range(1..=2) {
                    let t = loop {
                        let t = rng.random_range(start..end);
                        if t < day_start || t >= day_end {
                            break t;
                        }
                    };
                    let to = b.fresh_recipient();
                    let value = dispersed_value(&mut rng);
                    b.emit(t, &wallet, &to, value);
                }
            }
        }
    }

    Ok((normalize(b.txs), b.truth))
}
