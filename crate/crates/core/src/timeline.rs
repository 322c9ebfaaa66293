//! Per-wallet event timelines, inter-transaction gaps and the global gap
//! histogram.
//!
//! Gaps are measured in whole minutes, floored: bin 1440 holds gaps in
//! `[1440 min, 1441 min)`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ingest::Dataset;

/// Which side of a transfer counts as an event in a wallet's timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParticipationMode {
    Sent,
    Received,
    #[default]
    Both,
}

impl FromStr for ParticipationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sent" => Ok(Self::Sent),
            "received" => Ok(Self::Received),
            "both" => Ok(Self::Both),
            other => Err(format!(
                "unknown participation mode `{other}` (expected sent, received or both)"
            )),
        }
    }
}

impl fmt::Display for ParticipationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sent => "sent",
            Self::Received => "received",
            Self::Both => "both",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalletTimeline {
    pub wallet: String,
    pub timestamps: Vec<i64>,
    pub tx_ids: Vec<String>,
}

/// One gap between consecutive events of a wallet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DeltaRecord {
    pub wallet: String,
    pub delta_minutes: u64,
    pub prior_tx: String,
    pub current_tx: String,
}

/// A [`DeltaRecord`] together with the timestamps of both endpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedDelta {
    pub record: DeltaRecord,
    pub prior_ts: i64,
    pub current_ts: i64,
}

pub(crate) fn minutes_between(prior: i64, current: i64) -> u64 {
    debug_assert!(current >= prior);
    ((current - prior) / 60) as u64
}

/// Groups the dataset's transactions into one timeline per participating
/// wallet. A self-transfer is a single event.
pub fn build_timelines(ds: &Dataset, mode: ParticipationMode) -> BTreeMap<String, WalletTimeline> {
    let mut map: BTreeMap<String, WalletTimeline> = BTreeMap::new();
    let mut push = |wallet: &str, ts: i64, id: &str| {
        let tl = map.entry(wallet.to_string()).or_insert_with(|| WalletTimeline {
            wallet: wallet.to_string(),
            timestamps: Vec::new(),
            tx_ids: Vec::new(),
        });
        tl.timestamps.push(ts);
        tl.tx_ids.push(id.to_string());
    };
    // Dataset order is (timestamp, tx_id), so every timeline comes out sorted
    // with ties broken by tx_id.
    for t in ds.transactions() {
        let sends = matches!(mode, ParticipationMode::Sent | ParticipationMode::Both);
        let receives = matches!(mode, ParticipationMode::Received | ParticipationMode::Both);
        if sends {
            push(&t.from_wallet, t.timestamp, &t.tx_id);
        }
        if receives {
            if let Some(to) = &t.to_wallet {
                if !(sends && *to == t.from_wallet) {
                    push(to, t.timestamp, &t.tx_id);
                }
            }
        }
    }
    map
}

/// Gaps between consecutive events, in timeline order.
pub fn compute_deltas(tl: &WalletTimeline) -> Vec<DeltaRecord> {
    timed_deltas_of(tl).map(|d| d.record).collect()
}

fn timed_deltas_of(tl: &WalletTimeline) -> impl Iterator<Item = TimedDelta> + '_ {
    tl.timestamps
        .windows(2)
        .zip(tl.tx_ids.windows(2))
        .map(|(ts, ids)| TimedDelta {
            record: DeltaRecord {
                wallet: tl.wallet.clone(),
                delta_minutes: minutes_between(ts[0], ts[1]),
                prior_tx: ids[0].clone(),
                current_tx: ids[1].clone(),
            },
            prior_ts: ts[0],
            current_ts: ts[1],
        })
}

/// Every gap of every wallet in the dataset, with endpoint timestamps.
pub fn timed_deltas(ds: &Dataset, mode: ParticipationMode) -> Vec<TimedDelta> {
    build_timelines(ds, mode).values().flat_map(timed_deltas_of).collect()
}

/// Every gap of every wallet in the dataset.
pub fn all_deltas(ds: &Dataset, mode: ParticipationMode) -> Vec<DeltaRecord> {
    build_timelines(ds, mode).values().flat_map(compute_deltas).collect()
}

/// Gap histogram with per-bin provenance.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DeltaHistogram {
    pub bins: BTreeMap<u64, u64>,
    pub membership: BTreeMap<u64, Vec<DeltaRecord>>,
    pub total: u64,
    /// `[start, end)` in epoch seconds, when computed over a window.
    pub window: Option<(i64, i64)>,
}

fn membership_order(a: &DeltaRecord, b: &DeltaRecord) -> std::cmp::Ordering {
    a.wallet
        .cmp(&b.wallet)
        .then_with(|| a.current_tx.cmp(&b.current_tx))
        .then_with(|| a.prior_tx.cmp(&b.prior_tx))
}

impl DeltaHistogram {
    pub fn count(&self, delta_minutes: u64) -> u64 {
        self.bins.get(&delta_minutes).copied().unwrap_or(0)
    }

    /// Largest populated bin.
    pub fn max_bin(&self) -> Option<u64> {
        self.bins.keys().next_back().copied()
    }

    /// Bin-wise sum with canonical membership order. The window of the result
    /// is dropped unless both sides agree.
    pub fn merge(mut self, other: DeltaHistogram) -> DeltaHistogram {
        for (k, c) in other.bins {
            *self.bins.entry(k).or_insert(0) += c;
        }
        for (k, mut recs) in other.membership {
            let slot = self.membership.entry(k).or_default();
            slot.append(&mut recs);
            slot.sort_by(membership_order);
        }
        self.total += other.total;
        if self.window != other.window {
            self.window = None;
        }
        self
    }

    /// Writes `delta_minutes,count` rows in ascending bin order, preceded by
    /// an optional `# key=value` metadata line.
    pub fn write_csv<W: Write>(&self, mut out: W, meta: Option<&str>) -> io::Result<()> {
        if let Some(m) = meta {
            writeln!(out, "# {m}")?;
        }
        writeln!(out, "delta_minutes,count")?;
        for (k, c) in &self.bins {
            writeln!(out, "{k},{c}")?;
        }
        out.flush()
    }
}

/// Tallies records into bins. Membership lists are ordered by wallet, then
/// current transaction.
pub fn aggregate_histogram(records: &[DeltaRecord], window: Option<(i64, i64)>) -> DeltaHistogram {
    let mut hist = DeltaHistogram {
        window,
        ..Default::default()
    };
    for r in records {
        *hist.bins.entry(r.delta_minutes).or_insert(0) += 1;
        hist.membership.entry(r.delta_minutes).or_default().push(r.clone());
    }
    for recs in hist.membership.values_mut() {
        recs.sort_by(membership_order);
    }
    hist.total = records.len() as u64;
    hist
}

/// Number of wallets per degree in the undirected simple wallet graph.
/// Parallel transfers count once; self-loops are ignored.
pub fn degree_distribution(ds: &Dataset) -> BTreeMap<usize, usize> {
    let mut adjacency: HashMap<&str, HashSet<&str>> = HashMap::new();
    for t in ds.transactions() {
        let Some(to) = t.to_wallet.as_deref() else { continue };
        let from = t.from_wallet.as_str();
        if from == to {
            continue;
        }
        adjacency.entry(from).or_default().insert(to);
        adjacency.entry(to).or_default().insert(from);
    }
    let mut dist = BTreeMap::new();
    for peers in adjacency.values() {
        *dist.entry(peers.len()).or_insert(0) += 1;
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{normalize, Transaction};

    fn tx(id: &str, ts: i64, from: &str, to: &str) -> Transaction {
        Transaction {
            tx_id: id.into(),
            timestamp: ts,
            from_wallet: from.into(),
            to_wallet: Some(to.into()),
            value: 1,
        }
    }

    fn timeline(ts: &[i64]) -> WalletTimeline {
        WalletTimeline {
            wallet: "W".into(),
            timestamps: ts.to_vec(),
            tx_ids: (0..ts.len()).map(|i| format!("t{i}")).collect(),
        }
    }

    #[test]
    fn empty_dataset_has_no_timelines() {
        assert!(build_timelines(&normalize(vec![]), ParticipationMode::Both).is_empty());
    }

    #[test]
    fn mode_selects_sides() {
        let ds = normalize(vec![tx("1", 100, "A", "B")]);
        let sent = build_timelines(&ds, ParticipationMode::Sent);
        assert_eq!(sent.keys().collect::<Vec<_>>(), vec!["A"]);
        let recv = build_timelines(&ds, ParticipationMode::Received);
        assert_eq!(recv.keys().collect::<Vec<_>>(), vec!["B"]);
        let both = build_timelines(&ds, ParticipationMode::Both);
        assert_eq!(both.keys().collect::<Vec<_>>(), vec!["A", "B"]);
        assert_eq!(both["A"].timestamps, vec![100]);
    }

    #[test]
    fn self_transfer_is_one_event() {
        let ds = normalize(vec![tx("1", 100, "A", "A")]);
        assert_eq!(build_timelines(&ds, ParticipationMode::Both)["A"].timestamps.len(), 1);
        assert_eq!(
            build_timelines(&ds, ParticipationMode::Received)["A"].timestamps.len(),
            1
        );
    }

    #[test]
    fn contract_creation_has_no_receiver() {
        let mut t = tx("1", 100, "A", "x");
        t.to_wallet = None;
        let ds = normalize(vec![t]);
        assert!(build_timelines(&ds, ParticipationMode::Received).is_empty());
        assert!(degree_distribution(&ds).is_empty());
    }

    #[test]
    fn deltas_floor_to_minutes() {
        assert!(compute_deltas(&timeline(&[1000])).is_empty());
        let d: Vec<u64> = compute_deltas(&timeline(&[0, 60, 3725]))
            .iter()
            .map(|r| r.delta_minutes)
            .collect();
        assert_eq!(d, vec![1, 61]);
        let d: Vec<u64> = compute_deltas(&timeline(&[0, 59]))
            .iter()
            .map(|r| r.delta_minutes)
            .collect();
        assert_eq!(d, vec![0]);
        let recs = compute_deltas(&timeline(&[0, 60, 3725]));
        assert_eq!((recs[1].prior_tx.as_str(), recs[1].current_tx.as_str()), ("t1", "t2"));
    }

    #[test]
    fn histogram_counts() {
        assert_eq!(aggregate_histogram(&[], None).total, 0);
        let recs: Vec<DeltaRecord> = [1u64, 1, 5]
            .iter()
            .enumerate()
            .map(|(i, &d)| DeltaRecord {
                wallet: format!("w{i}"),
                delta_minutes: d,
                prior_tx: "p".into(),
                current_tx: format!("c{i}"),
            })
            .collect();
        let h = aggregate_histogram(&recs, None);
        assert_eq!(h.bins, BTreeMap::from([(1, 2), (5, 1)]));
        assert_eq!(h.total, 3);
        assert_eq!(h.membership[&1].len(), 2);
    }

    #[test]
    fn degree_examples() {
        let star = normalize(vec![tx("1", 1, "A", "B"), tx("2", 2, "A", "C"), tx("3", 3, "A", "D")]);
        assert_eq!(degree_distribution(&star), BTreeMap::from([(3, 1), (1, 3)]));
        let dup = normalize(vec![tx("1", 1, "A", "B"), tx("2", 2, "B", "A")]);
        assert_eq!(degree_distribution(&dup), BTreeMap::from([(1, 2)]));
    }

    #[test]
    fn histogram_csv_layout() {
        let recs = vec![DeltaRecord {
            wallet: "w".into(),
            delta_minutes: 7,
            prior_tx: "a".into(),
            current_tx: "b".into(),
        }];
        let mut buf = Vec::new();
        aggregate_histogram(&recs, None)
            .write_csv(&mut buf, Some("config_hash=abc"))
            .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "# config_hash=abc\ndelta_minutes,count\n7,1\n"
        );
    }
}
