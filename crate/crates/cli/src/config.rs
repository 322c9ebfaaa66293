//! Run configuration: a flat `key = value` file with command-line overrides.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use deltaspike::anomaly::{NullModel, SpikeParams, WindowConfig};
use deltaspike::attribution::ReportParams;
use deltaspike::ingest::{Format, ParseOptions, Schema};
use deltaspike::kv::{parse_kv, parse_value};
use deltaspike::powerlaw::{DEFAULT_MIN_TAIL, DEFAULT_XMIN_RANGE};
use deltaspike::timeline::ParticipationMode;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    /// Inferred from the input extension when unset.
    pub format: Option<Format>,
    pub schema: Schema,
    pub strict: bool,
    pub delimiter: char,
    pub mode: ParticipationMode,
    pub x_min_lo: u64,
    pub x_min_hi: u64,
    pub min_tail: u64,
    pub sigma: f64,
    pub min_count: u64,
    pub window_minutes: u64,
    pub samples: usize,
    pub seed: u64,
    pub periodic_threshold: f64,
    pub null_model: NullModel,
    pub sweep: bool,
    pub min_records: usize,
    pub min_records_irregular: usize,
    pub min_share: f64,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let w = WindowConfig::default();
        let s = SpikeParams::default();
        let r = ReportParams::default();
        Self {
            input: None,
            format: None,
            schema: Schema::default(),
            strict: false,
            delimiter: ',',
            mode: ParticipationMode::Both,
            x_min_lo: *DEFAULT_XMIN_RANGE.start(),
            x_min_hi: *DEFAULT_XMIN_RANGE.end(),
            min_tail: DEFAULT_MIN_TAIL,
            sigma: s.sigma_threshold,
            min_count: s.min_count,
            window_minutes: w.window_minutes,
            samples: w.num_samples,
            seed: w.seed,
            periodic_threshold: w.periodic_threshold,
            null_model: w.null_model,
            sweep: w.sweep,
            min_records: r.min_records_per_wallet,
            min_records_irregular: r.min_records_irregular,
            min_share: r.min_property_share,
            out_dir: PathBuf::from("out"),
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

impl RunConfig {
    /// Keys accepted by [`RunConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "input",
        "format",
        "schema.tx_id",
        "schema.timestamp",
        "schema.from_wallet",
        "schema.to_wallet",
        "schema.value",
        "schema.to_wallet_nullable",
        "strict",
        "delimiter",
        "mode",
        "fit.x_min_lo",
        "fit.x_min_hi",
        "fit.min_tail",
        "detect.sigma",
        "detect.min_count",
        "window.minutes",
        "window.samples",
        "window.seed",
        "window.periodic_threshold",
        "window.null_model",
        "window.sweep",
        "report.min_records",
        "report.min_records_irregular",
        "report.min_share",
        "out_dir",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "input" => self.input = Some(PathBuf::from(value)),
            "format" => self.format = Some(value.parse().map_err(|e| format!("{key}: {e}"))?),
            "schema.to_wallet_nullable" => self.schema.to_wallet_nullable = parse_bool(key, value)?,
            k if k.starts_with("schema.") => {
                if !self.schema.set(&k["schema.".len()..], value) {
                    return Err(format!("unknown key `{key}`"));
                }
            }
            "strict" => self.strict = parse_bool(key, value)?,
            "delimiter" => {
                let mut chars = value.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) if c.is_ascii() => self.delimiter = c,
                    _ if value == "\\t" || value == "tab" => self.delimiter = '\t',
                    _ => return Err(format!("{key} = `{value}`: expected one ASCII character")),
                }
            }
            "mode" => self.mode = parse_value(key, value)?,
            "fit.x_min_lo" => self.x_min_lo = parse_value(key, value)?,
            "fit.x_min_hi" => self.x_min_hi = parse_value(key, value)?,
            "fit.min_tail" => self.min_tail = parse_value(key, value)?,
            "detect.sigma" => self.sigma = parse_value(key, value)?,
            "detect.min_count" => self.min_count = parse_value(key, value)?,
            "window.minutes" => self.window_minutes = parse_value(key, value)?,
            "window.samples" => self.samples = parse_value(key, value)?,
            "window.seed" => self.seed = parse_value(key, value)?,
            "window.periodic_threshold" => self.periodic_threshold = parse_value(key, value)?,
            "window.null_model" => self.null_model = parse_value(key, value)?,
            "window.sweep" => self.sweep = parse_bool(key, value)?,
            "report.min_records" => self.min_records = parse_value(key, value)?,
            "report.min_records_irregular" => self.min_records_irregular = parse_value(key, value)?,
            "report.min_share" => self.min_share = parse_value(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(format!("unknown key `{key}`; known keys: {}", Self::KEYS.join(", "))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_kv(text)? {
            self.set(&k, &v).map_err(anyhow::Error::msg)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_min_lo == 0 || self.x_min_lo > self.x_min_hi {
            bail!("fit x_min range must satisfy 1 <= x_min_lo <= x_min_hi");
        }
        if self.min_tail == 0 {
            bail!("fit.min_tail must be at least 1");
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            bail!("detect.sigma must be a positive number");
        }
        if self.window_minutes == 0 {
            bail!("window.minutes must be positive");
        }
        if self.samples == 0 {
            bail!("window.samples must be at least 1");
        }
        if !(self.periodic_threshold > 0.0 && self.periodic_threshold <= 1.0) {
            bail!("window.periodic_threshold must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.min_share) {
            bail!("report.min_share must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn input(&self) -> Result<&PathBuf> {
        self.input
            .as_ref()
            .context("no input given (set `input` or pass --input)")
    }

    pub fn parse_options(&self) -> Result<ParseOptions> {
        let format = match self.format {
            Some(f) => f,
            None => format_from_path(self.input()?)?,
        };
        Ok(ParseOptions {
            format,
            schema: self.schema.clone(),
            strict: self.strict,
            delimiter: self.delimiter as u8,
        })
    }

    pub fn spike_params(&self) -> SpikeParams {
        SpikeParams {
            sigma_threshold: self.sigma,
            min_count: self.min_count,
        }
    }

    pub fn window_config(&self) -> WindowConfig {
        WindowConfig {
            window_minutes: self.window_minutes,
            num_samples: self.samples,
            seed: self.seed,
            periodic_threshold: self.periodic_threshold,
            null_model: self.null_model,
            sweep: self.sweep,
        }
    }

    pub fn report_params(&self) -> ReportParams {
        ReportParams {
            min_records_per_wallet: self.min_records,
            min_records_irregular: self.min_records_irregular,
            min_property_share: self.min_share,
        }
    }

    /// Hex SHA-256 of the effective configuration. The output directory is
    /// left out so that runs into different directories agree.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

pub fn format_from_path(path: &std::path::Path) -> Result<Format> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => ext
            .parse()
            .with_context(|| format!("cannot infer format of {}; set `format`", path.display())),
        None => bail!("cannot infer format of {}; set `format`", path.display()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_override() {
        let mut c = RunConfig::default();
        c.apply_text("window.minutes = 1440\nmode = sent\n# note\nschema.tx_id = hash\n")
            .unwrap();
        c.set("window.minutes", "10080").unwrap();
        assert_eq!(c.window_minutes, 10080);
        assert_eq!(c.mode, ParticipationMode::Sent);
        assert_eq!(c.schema.tx_id, "hash");
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("schema.nope", "1").is_err());
    }

    #[test]
    fn hash_ignores_out_dir() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn every_key_is_settable() {
        for key in RunConfig::KEYS {
            let value = match *key {
                "format" => "csv",
                "mode" => "both",
                "window.null_model" => "refit",
                "delimiter" => ";",
                k if k.starts_with("schema.to_wallet_nullable") || k == "strict" || k == "window.sweep" => "true",
                k if k.starts_with("schema.") || k == "input" || k == "out_dir" => "x",
                _ => "1",
            };
            RunConfig::default()
                .set(key, value)
                .unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }
}
