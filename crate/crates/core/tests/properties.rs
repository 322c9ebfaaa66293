//! Property tests for invariants that hold across arbitrary inputs.

use std::collections::{BTreeMap, BTreeSet};

use deltaspike::anomaly::{
    classify_anomalies, detect_spikes, windowed_histogram, AnomalyKind, Spike, SpikeParams, WindowConfig,
};
use deltaspike::attribution::{build_report, extract_cluster, score_properties, ReportParams};
use deltaspike::ingest::{normalize, Dataset, Transaction};
use deltaspike::powerlaw::{expected_counts, ks_distance, mle_alpha, PowerLawFit};
use deltaspike::synth::{generate, SynthConfig};
use deltaspike::timeline::{aggregate_histogram, all_deltas, build_timelines, ParticipationMode};
use proptest::prelude::*;

const WALLETS: [&str; 5] = ["0xa1", "0xb2", "0xc3", "0xd4", "0xe5"];

fn tx_strategy() -> impl Strategy<Value = Transaction> {
    (
        0..5usize,
        proptest::option::weighted(0.9, 0..5usize),
        0..3_000_000i64,
        0..4u128,
        0..1_000_000u32,
    )
        .prop_map(|(from, to, ts, value, id)| Transaction {
            tx_id: format!("0x{id:06x}"),
            timestamp: 1_500_000_000 + ts,
            from_wallet: WALLETS[from].to_string(),
            to_wallet: to.map(|t| WALLETS[t].to_string()),
            value,
        })
}

fn dataset_strategy(max: usize) -> impl Strategy<Value = Dataset> {
    proptest::collection::vec(tx_strategy(), 0..max).prop_map(normalize)
}

fn mode_strategy() -> impl Strategy<Value = ParticipationMode> {
    prop_oneof![
        Just(ParticipationMode::Sent),
        Just(ParticipationMode::Received),
        Just(ParticipationMode::Both)
    ]
}

fn counts_strategy() -> impl Strategy<Value = BTreeMap<u64, u64>> {
    proptest::collection::btree_map(1..500u64, 1..200u64, 3..60)
}

fn shifted(ds: &Dataset, by: i64) -> Dataset {
    normalize(
        ds.transactions()
            .iter()
            .cloned()
            .map(|mut t| {
                t.timestamp += by;
                t
            })
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn histogram_ignores_time_shift(ds in dataset_strategy(80), mode in mode_strategy(), by in -1_000_000i64..1_000_000) {
        let a = aggregate_histogram(&all_deltas(&ds, mode), None);
        let b = aggregate_histogram(&all_deltas(&shifted(&ds, by), mode), None);
        prop_assert_eq!(a.bins, b.bins);
        prop_assert_eq!(a.membership, b.membership);
    }

    #[test]
    fn one_delta_per_consecutive_event_pair(ds in dataset_strategy(80), mode in mode_strategy()) {
        let expected: usize = build_timelines(&ds, mode).values().map(|t| t.timestamps.len().saturating_sub(1)).sum();
        let hist = aggregate_histogram(&all_deltas(&ds, mode), None);
        prop_assert_eq!(hist.total as usize, expected);
        prop_assert_eq!(hist.bins.values().sum::<u64>(), hist.total);
    }

    #[test]
    fn full_span_window_equals_aggregate(ds in dataset_strategy(80), mode in mode_strategy()) {
        prop_assume!(!ds.is_empty());
        let (t0, t1) = ds.span().unwrap();
        let all = aggregate_histogram(&all_deltas(&ds, mode), None);
        let win = windowed_histogram(&ds, mode, (t0, t1 + 1)).unwrap();
        prop_assert_eq!(all.bins, win.bins);
        prop_assert_eq!(all.membership, win.membership);
    }

    #[test]
    fn mle_ignores_uniform_count_scaling(counts in counts_strategy(), m in 2..20u64) {
        let scaled: BTreeMap<u64, u64> = counts.iter().map(|(&k, &c)| (k, c * m)).collect();
        let (a, _) = mle_alpha(&counts, 1, 1).unwrap();
        let (b, _) = mle_alpha(&scaled, 1, 1).unwrap();
        prop_assert!((a - b).abs() < 1e-5, "{} vs {}", a, b);
    }

    #[test]
    fn ks_ignores_uniform_count_scaling(counts in counts_strategy(), m in 2..20u64, alpha in 1.2..4.0f64) {
        let scaled: BTreeMap<u64, u64> = counts.iter().map(|(&k, &c)| (k, c * m)).collect();
        let a = ks_distance(&counts, alpha, 1).unwrap();
        let b = ks_distance(&scaled, alpha, 1).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn expected_counts_follow_the_power_law(alpha in 1.1..5.0f64, x_min in 1..50u64, n in 1..1_000_000u64, k in 0..500u64) {
        let fit = PowerLawFit::new(alpha, x_min, n).unwrap();
        let k = x_min + k;
        let e = expected_counts(&fit, 2 * k);
        let ratio = e.get(2 * k).unwrap() / e.get(k).unwrap();
        prop_assert!((ratio - 2f64.powf(-alpha)).abs() < 1e-12);
    }

    #[test]
    fn raising_sigma_only_removes_spikes(counts in counts_strategy(), s1 in 0.5..10.0f64, s2 in 0.5..10.0f64) {
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        let fit = PowerLawFit::new(2.0, 1, counts.values().sum()).unwrap();
        let at = |sigma| -> BTreeSet<u64> {
            detect_spikes(&counts, &fit, &SpikeParams { sigma_threshold: sigma, min_count: 1 })
                .into_iter()
                .map(|s| s.delta_minutes)
                .collect()
        };
        prop_assert!(at(hi).is_subset(&at(lo)));
    }

    #[test]
    fn recurrence_rate_is_a_fraction(ds in dataset_strategy(100), seed in 0..1000u64, samples in 1..20usize) {
        let mode = ParticipationMode::Both;
        let hist = aggregate_histogram(&all_deltas(&ds, mode), None);
        prop_assume!(hist.total > 0);
        let (t0, t1) = ds.span().unwrap();
        prop_assume!(t1 - t0 >= 6000 * 60);
        let fit = PowerLawFit::new(2.5, 1, hist.total).unwrap();
        let params = SpikeParams { sigma_threshold: 0.5, min_count: 1 };
        let spikes = detect_spikes(&hist.bins, &fit, &params);
        let wcfg = WindowConfig { window_minutes: 6000, num_samples: samples, seed, ..WindowConfig::default() };
        let c = classify_anomalies(&ds, mode, &spikes, &fit, &wcfg, &params).unwrap();
        prop_assert_eq!(c.classified.len() + c.unclassified.len(), spikes.len());
        for a in &c.classified {
            prop_assert!((0.0..=1.0).contains(&a.recurrence_rate));
            prop_assert!(a.recurrence_rate > 0.0 || a.kind == AnomalyKind::Irregular);
        }
    }

    #[test]
    fn shares_ignore_record_order(ds in dataset_strategy(80), rotate in 0..100usize) {
        let records = all_deltas(&ds, ParticipationMode::Both);
        prop_assume!(!records.is_empty());
        let mut reordered = records.clone();
        reordered.reverse();
        let len = reordered.len();
        reordered.rotate_left(rotate % len);
        prop_assert_eq!(score_properties(&records, &ds).unwrap(), score_properties(&reordered, &ds).unwrap());
    }

    #[test]
    fn raising_share_threshold_only_unflags(ds in dataset_strategy(100), m1 in 0.0..=1.0f64, m2 in 0.0..=1.0f64) {
        let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
        let hist = aggregate_histogram(&all_deltas(&ds, ParticipationMode::Both), None);
        let index = ds.tx_index();
        let clusters: Vec<(AnomalyKind, _)> = hist
            .bins
            .iter()
            .enumerate()
            .map(|(i, (&k, &c))| {
                let spike = Spike { delta_minutes: k, observed: c, expected: 0.0, score: 0.0, p_value: 1.0 };
                let kind = if i % 2 == 0 { AnomalyKind::Periodic } else { AnomalyKind::Irregular };
                (kind, extract_cluster(&spike, &hist, &index).unwrap())
            })
            .collect();
        let flagged = |share| -> BTreeSet<String> {
            let params = ReportParams { min_property_share: share, ..ReportParams::default() };
            build_report(serde_json::Value::Null, None, Vec::new(), &clusters, &params)
                .flagged()
                .map(str::to_string)
                .collect()
        };
        prop_assert!(flagged(hi).is_subset(&flagged(lo)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn synthesis_is_deterministic(seed in 0..10_000u64) {
        let mut cfg = SynthConfig { seed, ..SynthConfig::default() };
        cfg.humans.count = 100;
        cfg.periodic_bots.count = 2;
        cfg.burst_bots.count = 10;
        prop_assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    }
}
