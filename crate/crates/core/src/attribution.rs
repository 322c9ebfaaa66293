//! Wallet clusters behind spikes, their shared transaction properties, and
//! the per-wallet bot-evidence report.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anomaly::{AnomalyKind, AnomalyRecord, Classification, Spike};
use crate::ingest::{Dataset, Transaction};
use crate::powerlaw::FitExport;
use crate::timeline::{DeltaHistogram, DeltaRecord};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AttributionError {
    #[error("bin {0} has no membership records")]
    MissingBin(u64),

    #[error("transaction {0} referenced by a delta record is not in the dataset")]
    UnknownTransaction(String),

    #[error("cannot score an empty record list")]
    EmptyRecords,
}

/// Maximum empirical frequency of each property over the records' current
/// transactions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PropertyShares {
    pub same_value_share: f64,
    pub same_destination_share: f64,
    pub same_source_share: f64,
    pub dominant_value: Option<u128>,
    pub dominant_destination: Option<String>,
    pub dominant_source: Option<String>,
}

impl PropertyShares {
    pub fn max_share(&self) -> f64 {
        self.same_value_share
            .max(self.same_destination_share)
            .max(self.same_source_share)
    }
}

/// Most frequent key and its count; ties go to the smallest key so the result
/// does not depend on record order.
fn mode<K: Ord + Clone>(items: impl Iterator<Item = K>) -> Option<(K, usize)> {
    let mut freq: BTreeMap<K, usize> = BTreeMap::new();
    for k in items {
        *freq.entry(k).or_insert(0) += 1;
    }
    freq.into_iter().fold(None, |best, (k, c)| match best {
        Some((_, bc)) if bc >= c => best,
        _ => Some((k, c)),
    })
}

/// Scores records against a prebuilt transaction index.
pub fn score_properties_indexed(
    records: &[DeltaRecord],
    index: &HashMap<&str, &Transaction>,
) -> Result<PropertyShares, AttributionError> {
    if records.is_empty() {
        return Err(AttributionError::EmptyRecords);
    }
    let txs = records
        .iter()
        .map(|r| {
            index
                .get(r.current_tx.as_str())
                .copied()
                .ok_or_else(|| AttributionError::UnknownTransaction(r.current_tx.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = txs.len() as f64;
    let value = mode(txs.iter().map(|t| t.value));
    let source = mode(txs.iter().map(|t| t.from_wallet.as_str()));
    let with_dest: Vec<&str> = txs.iter().filter_map(|t| t.to_wallet.as_deref()).collect();
    let dest = mode(with_dest.iter().copied());
    Ok(PropertyShares {
        same_value_share: value.map_or(0.0, |(_, c)| c as f64 / n),
        same_destination_share: dest.map_or(0.0, |(_, c)| c as f64 / with_dest.len() as f64),
        same_source_share: source.map_or(0.0, |(_, c)| c as f64 / n),
        dominant_value: value.map(|(v, _)| v),
        dominant_destination: dest.map(|(d, _)| d.to_string()),
        dominant_source: source.map(|(s, _)| s.to_string()),
    })
}

/// Value, destination and source shares of the records' current transactions.
/// Transactions without a destination are left out of the destination share.
pub fn score_properties(records: &[DeltaRecord], ds: &Dataset) -> Result<PropertyShares, AttributionError> {
    score_properties_indexed(records, &ds.tx_index())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeCluster {
    pub delta_minutes: u64,
    pub wallets: BTreeSet<String>,
    pub records: Vec<DeltaRecord>,
    pub shares: PropertyShares,
}

impl SpikeCluster {
    pub fn records_of(&self, wallet: &str) -> usize {
        self.records.iter().filter(|r| r.wallet == wallet).count()
    }
}

pub fn extract_cluster(
    spike: &Spike,
    histogram: &DeltaHistogram,
    index: &HashMap<&str, &Transaction>,
) -> Result<SpikeCluster, AttributionError> {
    let records = histogram
        .membership
        .get(&spike.delta_minutes)
        .filter(|r| !r.is_empty())
        .ok_or(AttributionError::MissingBin(spike.delta_minutes))?;
    Ok(SpikeCluster {
        delta_minutes: spike.delta_minutes,
        wallets: records.iter().map(|r| r.wallet.clone()).collect(),
        records: records.clone(),
        shares: score_properties_indexed(records, index)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportParams {
    pub min_records_per_wallet: usize,
    /// Record threshold for irregular spikes. A one-off burst leaves each
    /// wallet a single gap at the spike bin.
    pub min_records_irregular: usize,
    pub min_property_share: f64,
}

impl Default for ReportParams {
    fn default() -> Self {
        Self {
            min_records_per_wallet: 3,
            min_records_irregular: 1,
            min_property_share: 0.5,
        }
    }
}

impl ReportParams {
    fn min_records(&self, kind: AnomalyKind) -> usize {
        match kind {
            AnomalyKind::Periodic => self.min_records_per_wallet,
            AnomalyKind::Irregular => self.min_records_irregular,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceRule {
    PeriodicSpikeMembership,
    IrregularSpikeMembership,
    SharedValue,
    SharedDestination,
    /// Shared sender; not one of the two properties the detection method was
    /// originally described with.
    SharedSource,
}

impl fmt::Display for EvidenceRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PeriodicSpikeMembership => "periodic_spike_membership",
            Self::IrregularSpikeMembership => "irregular_spike_membership",
            Self::SharedValue => "shared_value",
            Self::SharedDestination => "shared_destination",
            Self::SharedSource => "shared_source",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub rule: EvidenceRule,
    pub delta_minutes: u64,
    /// Wallet's record count for membership rules, cluster share otherwise.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeMembership {
    pub delta_minutes: u64,
    pub kind: AnomalyKind,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalletReport {
    pub wallet: String,
    pub spike_memberships: Vec<SpikeMembership>,
    pub evidence: Vec<Evidence>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub delta_minutes: u64,
    pub kind: AnomalyKind,
    pub wallet_count: usize,
    pub record_count: usize,
    pub same_value_share: f64,
    pub same_destination_share: f64,
    pub same_source_share: f64,
    /// Wei, as a decimal string.
    pub dominant_value: Option<String>,
    pub dominant_destination: Option<String>,
    pub dominant_source: Option<String>,
    /// Scored properties beyond shared value and destination.
    pub extensions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BotReport {
    pub config: serde_json::Value,
    pub fit: Option<FitExport>,
    pub spikes: Vec<AnomalyRecord>,
    pub clusters: Vec<ClusterSummary>,
    /// Sorted by address.
    pub wallets: Vec<WalletReport>,
}

impl BotReport {
    pub fn flagged(&self) -> impl Iterator<Item = &str> {
        self.wallets.iter().filter(|w| w.flagged).map(|w| w.wallet.as_str())
    }
}

/// Builds clusters for every classified spike.
pub fn clusters_for(
    classification: &Classification,
    histogram: &DeltaHistogram,
    ds: &Dataset,
) -> Result<Vec<(AnomalyKind, SpikeCluster)>, AttributionError> {
    let index = ds.tx_index();
    classification
        .classified
        .iter()
        .map(|c| Ok((c.kind, extract_cluster(&c.spike, histogram, &index)?)))
        .collect()
}

/// A wallet is flagged when some cluster gives it at least the kind's record
/// threshold and the cluster's strongest shared property reaches
/// `min_property_share`.
pub fn build_report(
    config: serde_json::Value,
    fit: Option<FitExport>,
    spikes: Vec<AnomalyRecord>,
    clusters: &[(AnomalyKind, SpikeCluster)],
    params: &ReportParams,
) -> BotReport {
    let mut wallets: BTreeMap<&str, WalletReport> = BTreeMap::new();
    let mut summaries = Vec::with_capacity(clusters.len());
    for (kind, cluster) in clusters {
        let s = &cluster.shares;
        summaries.push(ClusterSummary {
            delta_minutes: cluster.delta_minutes,
            kind: *kind,
            wallet_count: cluster.wallets.len(),
            record_count: cluster.records.len(),
            same_value_share: s.same_value_share,
            same_destination_share: s.same_destination_share,
            same_source_share: s.same_source_share,
            dominant_value: s.dominant_value.map(|v| v.to_string()),
            dominant_destination: s.dominant_destination.clone(),
            dominant_source: s.dominant_source.clone(),
            extensions: vec!["same_source_share".to_string()],
        });

        let mut per_wallet: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &cluster.records {
            *per_wallet.entry(r.wallet.as_str()).or_insert(0) += 1;
        }
        let shared: Vec<(EvidenceRule, f64)> = [
            (EvidenceRule::SharedValue, s.same_value_share),
            (EvidenceRule::SharedDestination, s.same_destination_share),
            (EvidenceRule::SharedSource, s.same_source_share),
        ]
        .into_iter()
        .filter(|&(_, share)| share >= params.min_property_share)
        .collect();
        let membership_rule = match kind {
            AnomalyKind::Periodic => EvidenceRule::PeriodicSpikeMembership,
            AnomalyKind::Irregular => EvidenceRule::IrregularSpikeMembership,
        };
        for (wallet, n) in per_wallet {
            let entry = wallets.entry(wallet).or_insert_with(|| WalletReport {
                wallet: wallet.to_string(),
                spike_memberships: Vec::new(),
                evidence: Vec::new(),
                flagged: false,
            });
            entry.spike_memberships.push(SpikeMembership {
                delta_minutes: cluster.delta_minutes,
                kind: *kind,
                records: n,
            });
            if n >= params.min_records(*kind) && !shared.is_empty() {
                entry.evidence.push(Evidence {
                    rule: membership_rule,
                    delta_minutes: cluster.delta_minutes,
                    value: n as f64,
                });
                entry.evidence.extend(shared.iter().map(|&(rule, share)| Evidence {
                    rule,
                    delta_minutes: cluster.delta_minutes,
                    value: share,
                }));
            }
        }
    }
    let wallets = wallets
        .into_values()
        .map(|mut w| {
            w.flagged = !w.evidence.is_empty();
            w
        })
        .collect();
    BotReport {
        config,
        fit,
        spikes,
        clusters: summaries,
        wallets,
    }
}
