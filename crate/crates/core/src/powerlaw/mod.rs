//! Discrete power-law fitting of the gap histogram tail.
//!
//! The model is `p(k) = k^(−α) / ζ(α, x_min)` for integer `k ≥ x_min`. The
//! exponent is the maximum-likelihood estimate for a fixed `x_min`; `x_min`
//! itself is the candidate whose fit has the smallest Kolmogorov-Smirnov
//! distance to the empirical tail.

mod zeta;

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use zeta::zeta_raw;

/// Lower edge of the admissible exponent range is `1 + ALPHA_EPS`.
pub const ALPHA_EPS: f64 = 1e-6;
/// Upper edge of the exponent search bracket.
pub const ALPHA_MAX: f64 = 6.0;
/// Golden-section termination width.
pub const ALPHA_TOL: f64 = 1e-6;
pub const DEFAULT_MIN_TAIL: u64 = 50;
pub const DEFAULT_XMIN_RANGE: RangeInclusive<u64> = 1..=1440;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerLawError {
    #[error("exponent {0} must exceed 1 + {ALPHA_EPS}")]
    InvalidExponent(f64),

    #[error("x_min must be at least 1")]
    InvalidXmin,

    #[error("k = {k} lies below x_min = {x_min}")]
    BelowXmin { k: u64, x_min: u64 },

    #[error("tail above x_min = {x_min} holds {n_tail} gaps, need at least {required}")]
    InsufficientTail { x_min: u64, n_tail: u64, required: u64 },

    #[error("tail above x_min = {x_min} is degenerate (likelihood maximized at the search boundary)")]
    DegenerateTail { x_min: u64 },

    #[error("tail above x_min = {0} is empty")]
    EmptyTail(u64),

    #[error("no x_min candidate has a sufficient, non-degenerate tail")]
    NoViableXmin,
}

pub type Result<T> = std::result::Result<T, PowerLawError>;

/// `Σ_{k=x_min}^∞ k^(−alpha)`.
pub fn hurwitz_zeta(alpha: f64, x_min: u64) -> Result<f64> {
    if !alpha.is_finite() || alpha <= 1.0 + ALPHA_EPS {
        return Err(PowerLawError::InvalidExponent(alpha));
    }
    if x_min == 0 {
        return Err(PowerLawError::InvalidXmin);
    }
    Ok(zeta_raw(alpha, x_min as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub x_min: u64,
    pub n_tail: u64,
    pub ks: f64,
    pub log_likelihood: f64,
    /// `ζ(alpha, x_min)`.
    pub zeta: f64,
}

impl PowerLawFit {
    /// Builds a fit from parameters, computing the normalization.
    pub fn new(alpha: f64, x_min: u64, n_tail: u64) -> Result<Self> {
        Ok(Self {
            alpha,
            x_min,
            n_tail,
            ks: 0.0,
            log_likelihood: f64::NAN,
            zeta: hurwitz_zeta(alpha, x_min)?,
        })
    }

    /// Model probability of exactly `k`.
    pub fn pmf(&self, k: u64) -> f64 {
        if k < self.x_min {
            return 0.0;
        }
        (k as f64).powf(-self.alpha) / self.zeta
    }

    /// Model expected count at `k`, `n_tail * pmf(k)`.
    pub fn expected(&self, k: u64) -> f64 {
        self.n_tail as f64 * self.pmf(k)
    }

    /// Same shape, different tail size.
    pub fn rescaled(&self, n_tail: u64) -> Self {
        Self { n_tail, ..*self }
    }
}

/// Model tail probability `P(X ≥ k) = ζ(α, k) / ζ(α, x_min)`.
pub fn tail_cdf_model(fit: &PowerLawFit, k: u64) -> Result<f64> {
    if k < fit.x_min {
        return Err(PowerLawError::BelowXmin { k, x_min: fit.x_min });
    }
    Ok(hurwitz_zeta(fit.alpha, k)? / fit.zeta)
}

/// Tail view of a histogram: bins `≥ 1` in ascending order with suffix sums.
struct Tail {
    bins: Vec<(u64, u64)>,
    /// `suffix_count[i] = Σ_{j≥i} count_j`
    suffix_count: Vec<u64>,
    /// `suffix_log[i] = Σ_{j≥i} count_j ln k_j`
    suffix_log: Vec<f64>,
}

impl Tail {
    fn new(counts: &BTreeMap<u64, u64>) -> Self {
        let bins: Vec<(u64, u64)> = counts
            .range(1..)
            .filter(|(_, &c)| c > 0)
            .map(|(&k, &c)| (k, c))
            .collect();
        let mut suffix_count = vec![0u64; bins.len() + 1];
        let mut suffix_log = vec![0f64; bins.len() + 1];
        for i in (0..bins.len()).rev() {
            let (k, c) = bins[i];
            suffix_count[i] = suffix_count[i + 1] + c;
            suffix_log[i] = suffix_log[i + 1] + c as f64 * (k as f64).ln();
        }
        Self {
            bins,
            suffix_count,
            suffix_log,
        }
    }

    fn first_at_or_above(&self, x_min: u64) -> usize {
        self.bins.partition_point(|&(k, _)| k < x_min)
    }
}

fn log_likelihood(alpha: f64, x_min: u64, n: u64, sum_log: f64) -> f64 {
    -(n as f64) * zeta_raw(alpha, x_min as f64).ln() - alpha * sum_log
}

/// Maximizes a unimodal function on `[lo, hi]`; returns the argmax.
fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

fn mle_on_tail(tail: &Tail, idx: usize, x_min: u64, min_tail: u64) -> Result<(f64, f64)> {
    let n = tail.suffix_count[idx];
    if n < min_tail.max(1) {
        return Err(PowerLawError::InsufficientTail {
            x_min,
            n_tail: n,
            required: min_tail,
        });
    }
    if tail.bins.len() - idx < 2 {
        return Err(PowerLawError::DegenerateTail { x_min });
    }
    let sum_log = tail.suffix_log[idx];
    let lo = 1.0 + ALPHA_EPS;
    let alpha = golden_section_max(|a| log_likelihood(a, x_min, n, sum_log), lo, ALPHA_MAX, ALPHA_TOL);
    if alpha - lo < 2.0 * ALPHA_TOL || ALPHA_MAX - alpha < 2.0 * ALPHA_TOL {
        return Err(PowerLawError::DegenerateTail { x_min });
    }
    Ok((alpha, log_likelihood(alpha, x_min, n, sum_log)))
}

/// Maximum-likelihood exponent for a fixed `x_min`, with the log-likelihood at
/// the optimum. Bin 0 never belongs to a tail.
pub fn mle_alpha(counts: &BTreeMap<u64, u64>, x_min: u64, min_tail: u64) -> Result<(f64, f64)> {
    if x_min == 0 {
        return Err(PowerLawError::InvalidXmin);
    }
    let tail = Tail::new(counts);
    mle_on_tail(&tail, tail.first_at_or_above(x_min), x_min, min_tail)
}

/// KS distance over the observed tail bins. Returns `None` as soon as the
/// running maximum exceeds `abort_above`.
fn ks_on_tail(bins: &[(u64, u64)], n: u64, alpha: f64, x_min: u64, abort_above: f64) -> Option<f64> {
    let norm = zeta_raw(alpha, x_min as f64);
    let n = n as f64;
    let mut remaining = n;
    let mut zeta_k = norm;
    let mut k_prev = x_min;
    let mut worst = 0.0f64;
    for &(k, c) in bins {
        if k != k_prev {
            if k - k_prev <= 64 {
                for j in k_prev..k {
                    zeta_k -= (j as f64).powf(-alpha);
                }
                zeta_k = zeta_k.max(0.0);
            } else {
                zeta_k = zeta_raw(alpha, k as f64);
            }
            k_prev = k;
        }
        let empirical = remaining / n;
        let model = zeta_k / norm;
        // Both tails are nonincreasing, so once both sit at or below the
        // running maximum no later bin can exceed it.
        if empirical <= worst && model <= worst {
            break;
        }
        worst = worst.max((empirical - model).abs());
        if worst > abort_above {
            return None;
        }
        remaining -= c as f64;
    }
    Some(worst)
}

/// `max_k |P_emp(X ≥ k) − P_model(X ≥ k)|` over observed bins `k ≥ x_min`.
pub fn ks_distance(counts: &BTreeMap<u64, u64>, alpha: f64, x_min: u64) -> Result<f64> {
    if x_min == 0 {
        return Err(PowerLawError::InvalidXmin);
    }
    if alpha.is_nan() || alpha <= 1.0 + ALPHA_EPS {
        return Err(PowerLawError::InvalidExponent(alpha));
    }
    let tail = Tail::new(counts);
    let idx = tail.first_at_or_above(x_min);
    let n = tail.suffix_count[idx];
    if n == 0 {
        return Err(PowerLawError::EmptyTail(x_min));
    }
    Ok(ks_on_tail(&tail.bins[idx..], n, alpha, x_min, f64::INFINITY).unwrap_or(f64::INFINITY))
}

/// Fits every viable `x_min` in range and keeps the one with the smallest KS
/// distance; ties go to the smaller `x_min`.
pub fn fit_discrete_power_law(
    counts: &BTreeMap<u64, u64>,
    x_min_range: RangeInclusive<u64>,
    min_tail: u64,
) -> Result<PowerLawFit> {
    let tail = Tail::new(counts);
    let mut best: Option<PowerLawFit> = None;
    let start = (*x_min_range.start()).max(1);
    for x_min in start..=*x_min_range.end() {
        let idx = tail.first_at_or_above(x_min);
        let n = tail.suffix_count[idx];
        // Tail size and distinct-bin count only shrink as x_min grows.
        if n < min_tail.max(1) || tail.bins.len() - idx < 2 {
            break;
        }
        let Ok((alpha, ll)) = mle_on_tail(&tail, idx, x_min, min_tail) else {
            continue;
        };
        let bound = best.map_or(f64::INFINITY, |b| b.ks);
        if let Some(ks) = ks_on_tail(&tail.bins[idx..], n, alpha, x_min, bound) {
            if best.is_none_or(|b| ks < b.ks) {
                best = Some(PowerLawFit {
                    alpha,
                    x_min,
                    n_tail: n,
                    ks,
                    log_likelihood: ll,
                    zeta: zeta_raw(alpha, x_min as f64),
                });
            }
        }
    }
    best.ok_or(PowerLawError::NoViableXmin)
}

/// Expected per-bin counts of a fit over `[x_min, max_bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedCounts {
    pub x_min: u64,
    values: Vec<f64>,
}

impl ExpectedCounts {
    pub fn get(&self, k: u64) -> Option<f64> {
        k.checked_sub(self.x_min)
            .and_then(|i| self.values.get(i as usize))
            .copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, &e)| (self.x_min + i as u64, e))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `E(k) = n_tail · k^(−α) / ζ(α, x_min)` for `k` in `[x_min, max_bin]`.
pub fn expected_counts(fit: &PowerLawFit, max_bin: u64) -> ExpectedCounts {
    let values = (fit.x_min..=max_bin.max(fit.x_min.saturating_sub(1)))
        .map(|k| fit.expected(k))
        .collect();
    ExpectedCounts {
        x_min: fit.x_min,
        values,
    }
}

/// JSON shape of an exported fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitExport {
    pub alpha: f64,
    pub x_min: u64,
    pub n_tail: u64,
    pub ks: f64,
    pub log_likelihood: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config_hash: Option<String>,
}

impl FitExport {
    pub fn new(fit: &PowerLawFit, config_hash: Option<String>) -> Self {
        Self {
            alpha: fit.alpha,
            x_min: fit.x_min,
            n_tail: fit.n_tail,
            ks: fit.ks,
            log_likelihood: fit.log_likelihood,
            config_hash,
        }
    }
}

/// Tab-separated `(k, observed, expected)` rows for every observed bin in the
/// fitted tail.
pub fn write_plot_data<W: Write>(
    counts: &BTreeMap<u64, u64>,
    fit: &PowerLawFit,
    mut out: W,
    meta: Option<&str>,
) -> io::Result<()> {
    if let Some(m) = meta {
        writeln!(out, "# {m}")?;
    }
    writeln!(out, "k\tobserved\texpected")?;
    for (&k, &c) in counts.range(fit.x_min..) {
        writeln!(out, "{k}\t{c}\t{:.6e}", fit.expected(k))?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    const ZETA2: f64 = std::f64::consts::PI * std::f64::consts::PI / 6.0;

    #[test]
    fn zeta_identities() {
        assert!((hurwitz_zeta(2.0, 1).unwrap() - 1.644_934_066_8).abs() < 1e-9);
        assert!((hurwitz_zeta(2.0, 2).unwrap() - 0.644_934_066_8).abs() < 1e-9);
        assert!(matches!(hurwitz_zeta(1.0, 1), Err(PowerLawError::InvalidExponent(_))));
        assert!(matches!(
            hurwitz_zeta(1.0 + 1e-7, 1),
            Err(PowerLawError::InvalidExponent(_))
        ));
        assert!(hurwitz_zeta(1.0 + 2e-6, 1).is_ok());
        assert!(matches!(hurwitz_zeta(2.0, 0), Err(PowerLawError::InvalidXmin)));
    }

    #[test]
    fn tail_cdf_examples() {
        let fit = PowerLawFit::new(2.0, 1, 100).unwrap();
        assert_eq!(tail_cdf_model(&fit, 1).unwrap(), 1.0);
        assert!((tail_cdf_model(&fit, 2).unwrap() - (ZETA2 - 1.0) / ZETA2).abs() < 1e-12);
        assert!((tail_cdf_model(&fit, 2).unwrap() - 0.39207).abs() < 1e-5);
        let fit5 = PowerLawFit::new(2.5, 5, 100).unwrap();
        assert!(matches!(tail_cdf_model(&fit5, 4), Err(PowerLawError::BelowXmin { .. })));
        let mut prev = 1.0;
        for k in 6..200 {
            let v = tail_cdf_model(&fit5, k).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn degenerate_and_insufficient_tails() {
        let one_bin = BTreeMap::from([(3u64, 500u64)]);
        assert!(matches!(
            mle_alpha(&one_bin, 1, 50),
            Err(PowerLawError::DegenerateTail { .. })
        ));
        let at_xmin = BTreeMap::from([(1u64, 500u64), (2, 0)]);
        assert!(matches!(
            mle_alpha(&at_xmin, 1, 50),
            Err(PowerLawError::DegenerateTail { .. })
        ));
        let small = BTreeMap::from([(1u64, 10u64), (2, 5)]);
        assert!(matches!(
            mle_alpha(&small, 1, 50),
            Err(PowerLawError::InsufficientTail { .. })
        ));
    }

    #[test]
    fn bin_zero_is_never_tail() {
        let counts = BTreeMap::from([(0u64, 100_000u64), (1, 1000), (2, 1000)]);
        let without = BTreeMap::from([(1u64, 1000u64), (2, 1000)]);
        assert_eq!(mle_alpha(&counts, 1, 50).unwrap(), mle_alpha(&without, 1, 50).unwrap());
        let fit = fit_discrete_power_law(&counts, 0..=10, 50).unwrap();
        assert_eq!(fit.n_tail, 2000);
    }

    #[test]
    fn empty_histogram_has_no_viable_xmin() {
        assert_eq!(
            fit_discrete_power_law(&BTreeMap::new(), DEFAULT_XMIN_RANGE, DEFAULT_MIN_TAIL),
            Err(PowerLawError::NoViableXmin)
        );
    }

    #[test]
    fn ks_empty_tail_rejected() {
        let counts = BTreeMap::from([(1u64, 3u64)]);
        assert_eq!(ks_distance(&counts, 2.0, 5), Err(PowerLawError::EmptyTail(5)));
    }

    #[test]
    fn expected_counts_examples() {
        let fit = PowerLawFit::new(2.0, 1, 1000).unwrap();
        let e = expected_counts(&fit, 100);
        assert!((e.get(1).unwrap() - 607.927_101_854).abs() < 1e-6);
        for k in 1..=50 {
            let ratio = e.get(2 * k).unwrap() / e.get(k).unwrap();
            assert!((ratio - 2f64.powf(-2.0)).abs() < 1e-14);
        }
        assert_eq!(e.get(0), None);
        assert_eq!(e.get(101), None);
        assert_eq!(e.len(), 100);
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let x = golden_section_max(|x| -(x - 2.345).powi(2), 1.0, 6.0, 1e-9);
        assert!((x - 2.345).abs() < 1e-8);
    }
}
