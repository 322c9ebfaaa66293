//! Parsing, validation and canonical ordering of transaction exports.
//!
//! Two source formats are understood: CSV with a header row and JSON Lines.
//! Both are mapped onto the five canonical fields through a [`Schema`].

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unknown input format `{0}` (expected csv or jsonl)")]
    UnknownFormat(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("malformed record at row {row}: {reason}")]
    Malformed { row: usize, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// One value transfer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub from_wallet: String,
    /// Absent for contract creation.
    pub to_wallet: Option<String>,
    /// Smallest currency unit (wei).
    pub value: u128,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "ndjson" => Ok(Format::Jsonl),
            other => Err(IngestError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Format::Csv => f.write_str("csv"),
            Format::Jsonl => f.write_str("jsonl"),
        }
    }
}

/// Maps canonical field names to source column names (CSV) or keys (JSONL).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub tx_id: String,
    pub timestamp: String,
    pub from_wallet: String,
    pub to_wallet: String,
    pub value: String,
    /// Whether an empty/null/missing `to_wallet` is accepted.
    pub to_wallet_nullable: bool,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            tx_id: "tx_id".into(),
            timestamp: "timestamp".into(),
            from_wallet: "from_wallet".into(),
            to_wallet: "to_wallet".into(),
            value: "value".into(),
            to_wallet_nullable: true,
        }
    }
}

impl Schema {
    /// Overrides one canonical field's source name. Returns `false` for an
    /// unknown canonical field.
    pub fn set(&mut self, canonical: &str, source: &str) -> bool {
        let slot = match canonical {
            "tx_id" => &mut self.tx_id,
            "timestamp" => &mut self.timestamp,
            "from_wallet" => &mut self.from_wallet,
            "to_wallet" => &mut self.to_wallet,
            "value" => &mut self.value,
            _ => return false,
        };
        *slot = source.to_string();
        true
    }
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub format: Format,
    pub schema: Schema,
    pub strict: bool,
    /// CSV only.
    pub delimiter: u8,
}

impl ParseOptions {
    pub fn new(format: Format) -> Self {
        Self {
            format,
            schema: Schema::default(),
            strict: false,
            delimiter: b',',
        }
    }
}

/// Output of [`parse_transactions`]: the well-formed records plus counters.
#[derive(Debug, Clone, Default)]
pub struct Parsed {
    pub transactions: Vec<Transaction>,
    pub rows_read: usize,
    pub rows_skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TimestampKind {
    Epoch,
    Iso,
}

/// Raw field as found in the source, before validation.
enum RawField<'a> {
    Missing,
    Null,
    Text(&'a str),
    Number(String),
}

fn parse_epoch(text: &str) -> Option<i64> {
    let t = text.trim();
    if t.is_empty() {
        return None;
    }
    let (int_part, frac_part) = match t.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (t, None),
    };
    if let Some(f) = frac_part {
        if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
    }
    let digits = int_part.strip_prefix('-').unwrap_or(int_part);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    // Truncation toward zero: the fractional part is simply dropped.
    int_part.parse::<i64>().ok()
}

fn parse_iso(text: &str) -> Option<i64> {
    let t = text.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(t) {
        return Some(dt.timestamp());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
    ] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(t, fmt) {
            return Some(naive.and_utc().timestamp());
        }
    }
    None
}

fn classify_timestamp(raw: &RawField<'_>) -> Option<TimestampKind> {
    match raw {
        RawField::Number(_) => Some(TimestampKind::Epoch),
        RawField::Text(t) if parse_epoch(t).is_some() => Some(TimestampKind::Epoch),
        RawField::Text(t) if parse_iso(t).is_some() => Some(TimestampKind::Iso),
        _ => None,
    }
}

fn parse_value(raw: &RawField<'_>) -> Result<u128, String> {
    let text = match raw {
        RawField::Missing => return Err("missing value".into()),
        RawField::Null => return Err("null value".into()),
        RawField::Text(t) => t.trim().to_string(),
        RawField::Number(n) => n.clone(),
    };
    if text.starts_with('-') {
        return Err(format!("negative value `{text}`"));
    }
    if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("value `{text}` is not a non-negative integer"));
    }
    text.parse::<u128>().map_err(|e| format!("value `{text}`: {e}"))
}

fn required_text(raw: &RawField<'_>, name: &str) -> Result<String, String> {
    match raw {
        RawField::Text(t) if !t.trim().is_empty() => Ok(t.trim().to_string()),
        RawField::Number(n) => Ok(n.clone()),
        RawField::Missing => Err(format!("missing {name}")),
        _ => Err(format!("empty {name}")),
    }
}

/// Per-stream state shared by both readers.
struct RecordBuilder<'s> {
    schema: &'s Schema,
    ts_kind: Option<TimestampKind>,
}

impl RecordBuilder<'_> {
    fn build(
        &mut self,
        tx_id: RawField<'_>,
        timestamp: RawField<'_>,
        from: RawField<'_>,
        to: RawField<'_>,
        value: RawField<'_>,
    ) -> Result<Transaction, String> {
        let tx_id = required_text(&tx_id, "tx_id")?;
        let kind = classify_timestamp(&timestamp).ok_or_else(|| match &timestamp {
            RawField::Missing => "missing timestamp".to_string(),
            RawField::Text(t) => format!("unparseable timestamp `{t}`"),
            _ => "unparseable timestamp".to_string(),
        })?;
        match self.ts_kind {
            None => self.ts_kind = Some(kind),
            Some(k) if k != kind => {
                return Err("timestamp format differs from the first record".into());
            }
            Some(_) => {}
        }
        let ts = match (&timestamp, kind) {
            (RawField::Number(n), _) => parse_epoch(n),
            (RawField::Text(t), TimestampKind::Epoch) => parse_epoch(t),
            (RawField::Text(t), TimestampKind::Iso) => parse_iso(t),
            _ => None,
        }
        .ok_or_else(|| "unparseable timestamp".to_string())?;
        if ts <= 0 {
            return Err(format!("timestamp {ts} is not positive"));
        }
        let from_wallet = required_text(&from, "from_wallet")?;
        let to_wallet = match to {
            RawField::Text(t) if !t.trim().is_empty() => Some(t.trim().to_string()),
            RawField::Number(n) => Some(n),
            _ if self.schema.to_wallet_nullable => None,
            _ => return Err("missing to_wallet".into()),
        };
        let value = parse_value(&value)?;
        Ok(Transaction {
            tx_id,
            timestamp: ts,
            from_wallet,
            to_wallet,
            value,
        })
    }
}

/// Parses a transaction export.
///
/// In non-strict mode malformed records are skipped and counted; in strict
/// mode the first one aborts with its 1-based row number.
pub fn parse_transactions<R: Read>(source: R, opts: &ParseOptions) -> Result<Parsed, IngestError> {
    match opts.format {
        Format::Csv => parse_csv(source, opts),
        Format::Jsonl => parse_jsonl(source, opts),
    }
}

fn parse_csv<R: Read>(source: R, opts: &ParseOptions) -> Result<Parsed, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let mut out = Parsed::default();

    let headers = reader.headers()?.clone();
    // A completely empty stream has no header and no records.
    if headers.is_empty() {
        return Ok(out);
    }
    let column = |name: &str| -> Result<usize, IngestError> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| IngestError::Schema(format!("column `{name}` not found in CSV header")))
    };
    let s = &opts.schema;
    let c_id = column(&s.tx_id)?;
    let c_ts = column(&s.timestamp)?;
    let c_from = column(&s.from_wallet)?;
    let c_to = match column(&s.to_wallet) {
        Ok(c) => Some(c),
        Err(_) if s.to_wallet_nullable => None,
        Err(e) => return Err(e),
    };
    let c_value = column(&s.value)?;

    let mut builder = RecordBuilder {
        schema: s,
        ts_kind: None,
    };
    let mut record = csv::StringRecord::new();
    loop {
        let row = out.rows_read + 1;
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                out.rows_read += 1;
                let field = |c: usize| match record.get(c) {
                    Some(v) => RawField::Text(v),
                    None => RawField::Missing,
                };
                let to = c_to.map(field).unwrap_or(RawField::Missing);
                match builder.build(field(c_id), field(c_ts), field(c_from), to, field(c_value)) {
                    Ok(tx) => out.transactions.push(tx),
                    Err(reason) if opts.strict => return Err(IngestError::Malformed { row, reason }),
                    Err(_) => out.rows_skipped += 1,
                }
            }
            Err(e) => {
                if let csv::ErrorKind::Io(_) = e.kind() {
                    return Err(e.into());
                }
                out.rows_read += 1;
                if opts.strict {
                    return Err(IngestError::Malformed {
                        row,
                        reason: e.to_string(),
                    });
                }
                out.rows_skipped += 1;
            }
        }
    }
    Ok(out)
}

fn json_field<'a>(obj: &'a serde_json::Map<String, serde_json::Value>, key: &str) -> RawField<'a> {
    match obj.get(key) {
        None => RawField::Missing,
        Some(serde_json::Value::Null) => RawField::Null,
        Some(serde_json::Value::String(s)) => RawField::Text(s),
        Some(serde_json::Value::Number(n)) => RawField::Number(n.to_string()),
        Some(serde_json::Value::Bool(b)) => RawField::Number(b.to_string()),
        Some(_) => RawField::Null,
    }
}

fn parse_jsonl<R: Read>(source: R, opts: &ParseOptions) -> Result<Parsed, IngestError> {
    let reader = BufReader::new(source);
    let mut out = Parsed::default();
    let s = &opts.schema;
    let mut builder = RecordBuilder {
        schema: s,
        ts_kind: None,
    };
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.rows_read += 1;
        let row = line_no + 1;
        let result = match serde_json::from_str::<serde_json::Value>(&line) {
            Ok(serde_json::Value::Object(obj)) => builder.build(
                json_field(&obj, &s.tx_id),
                json_field(&obj, &s.timestamp),
                json_field(&obj, &s.from_wallet),
                json_field(&obj, &s.to_wallet),
                json_field(&obj, &s.value),
            ),
            Ok(_) => Err("line is not a JSON object".to_string()),
            Err(e) => Err(format!("invalid JSON: {e}")),
        };
        match result {
            Ok(tx) => out.transactions.push(tx),
            Err(reason) if opts.strict => return Err(IngestError::Malformed { row, reason }),
            Err(_) => out.rows_skipped += 1,
        }
    }
    Ok(out)
}

/// Canonical, time-ordered, deduplicated transaction set.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    transactions: Vec<Transaction>,
    pub rows_read: usize,
    pub rows_skipped: usize,
    pub duplicates_dropped: usize,
}

impl Dataset {
    pub fn transactions(&self) -> &[Transaction] {
        &self.transactions
    }

    pub fn len(&self) -> usize {
        self.transactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transactions.is_empty()
    }

    /// `[t_min, t_max]` of the retained transactions.
    pub fn span(&self) -> Option<(i64, i64)> {
        Some((
            self.transactions.first()?.timestamp,
            self.transactions.last()?.timestamp,
        ))
    }

    pub fn into_transactions(self) -> Vec<Transaction> {
        self.transactions
    }

    /// Lookup table from tx_id to transaction.
    pub fn tx_index(&self) -> HashMap<&str, &Transaction> {
        self.transactions.iter().map(|t| (t.tx_id.as_str(), t)).collect()
    }

    /// Number of distinct addresses appearing as sender or receiver.
    pub fn wallet_count(&self) -> usize {
        let mut seen: HashSet<&str> = HashSet::new();
        for t in &self.transactions {
            seen.insert(&t.from_wallet);
            if let Some(to) = &t.to_wallet {
                seen.insert(to);
            }
        }
        seen.len()
    }

    /// Normalizes a parse result, carrying its row counters over.
    pub fn from_parsed(parsed: Parsed) -> Self {
        let mut ds = normalize(parsed.transactions);
        ds.rows_read += parsed.rows_skipped;
        ds.rows_skipped = parsed.rows_skipped;
        ds
    }
}

/// Deduplicates by tx_id (first occurrence in input order wins) and sorts by
/// `(timestamp, tx_id)`.
pub fn normalize(txs: Vec<Transaction>) -> Dataset {
    let rows_read = txs.len();
    let mut seen: HashSet<String> = HashSet::with_capacity(txs.len());
    let mut kept = Vec::with_capacity(txs.len());
    for tx in txs {
        if seen.insert(tx.tx_id.clone()) {
            kept.push(tx);
        }
    }
    let duplicates_dropped = rows_read - kept.len();
    kept.sort_unstable_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.tx_id.cmp(&b.tx_id)));
    Dataset {
        transactions: kept,
        rows_read,
        rows_skipped: 0,
        duplicates_dropped,
    }
}

/// Writes transactions in a format [`parse_transactions`] reads back with the
/// default schema.
pub fn write_transactions<W: Write>(txs: &[Transaction], format: Format, out: W) -> Result<(), IngestError> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(["tx_id", "timestamp", "from_wallet", "to_wallet", "value"])?;
            for t in txs {
                let ts = t.timestamp.to_string();
                let value = t.value.to_string();
                w.write_record([
                    t.tx_id.as_str(),
                    ts.as_str(),
                    t.from_wallet.as_str(),
                    t.to_wallet.as_deref().unwrap_or(""),
                    value.as_str(),
                ])?;
            }
            w.flush()?;
        }
        Format::Jsonl => {
            let mut out = std::io::BufWriter::new(out);
            for t in txs {
                // Values are written as decimal strings so that amounts beyond
                // 2^64 survive any JSON reader.
                let line = serde_json::json!({
                    "tx_id": t.tx_id,
                    "timestamp": t.timestamp,
                    "from_wallet": t.from_wallet,
                    "to_wallet": t.to_wallet,
                    "value": t.value.to_string(),
                });
                writeln!(out, "{line}")?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(id: &str, ts: i64) -> Transaction {
        Transaction {
            tx_id: id.into(),
            timestamp: ts,
            from_wallet: "A".into(),
            to_wallet: Some("B".into()),
            value: 1,
        }
    }

    #[test]
    fn empty_stream_yields_nothing() {
        for fmt in [Format::Csv, Format::Jsonl] {
            let p = parse_transactions(&b""[..], &ParseOptions::new(fmt)).unwrap();
            assert!(p.transactions.is_empty());
            assert_eq!(p.rows_read, 0);
        }
    }

    #[test]
    fn jsonl_missing_value_is_skipped() {
        let src = r#"{"tx_id":"a","timestamp":100,"from_wallet":"A","to_wallet":"B","value":"5"}
{"tx_id":"b","timestamp":200,"from_wallet":"A","to_wallet":"B"}
{"value":7,"to_wallet":null,"from_wallet":"C","timestamp":300,"tx_id":"c","extra":true}
"#;
        let p = parse_transactions(src.as_bytes(), &ParseOptions::new(Format::Jsonl)).unwrap();
        assert_eq!(p.transactions.len(), 2);
        assert_eq!(p.rows_read, 3);
        assert_eq!(p.rows_skipped, 1);
        assert_eq!(p.transactions[1].to_wallet, None);
        assert_eq!(p.transactions[1].value, 7);
    }

    #[test]
    fn strict_csv_rejects_negative_value() {
        let src = "tx_id,timestamp,from_wallet,to_wallet,value\na,100,A,B,3\nb,200,A,B,-5\n";
        let mut opts = ParseOptions::new(Format::Csv);
        opts.strict = true;
        match parse_transactions(src.as_bytes(), &opts) {
            Err(IngestError::Malformed { row, reason }) => {
                assert_eq!(row, 2);
                assert!(reason.contains("negative"), "{reason}");
            }
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_format_tag() {
        assert!(matches!(
            "parquet".parse::<Format>(),
            Err(IngestError::UnknownFormat(_))
        ));
        assert_eq!("JSONL".parse::<Format>().unwrap(), Format::Jsonl);
    }

    #[test]
    fn csv_column_order_and_mapping() {
        let src = "amount;to;hash;from;time\n10;B;h1;A;2018-05-18T00:00:30Z\n\"1\";;h2;A;2018-05-18T00:01:59.9Z\n";
        let mut opts = ParseOptions::new(Format::Csv);
        opts.delimiter = b';';
        for (c, s) in [
            ("tx_id", "hash"),
            ("timestamp", "time"),
            ("from_wallet", "from"),
            ("to_wallet", "to"),
            ("value", "amount"),
        ] {
            assert!(opts.schema.set(c, s));
        }
        let p = parse_transactions(src.as_bytes(), &opts).unwrap();
        assert_eq!(p.transactions.len(), 2);
        assert_eq!(p.transactions[0].timestamp, 1526601630);
        assert_eq!(p.transactions[1].timestamp, 1526601719);
        assert_eq!(p.transactions[1].to_wallet, None);
    }

    #[test]
    fn missing_schema_column() {
        let src = "tx_id,timestamp,from_wallet,value\na,1,A,1\n";
        let mut opts = ParseOptions::new(Format::Csv);
        assert_eq!(parse_transactions(src.as_bytes(), &opts).unwrap().transactions.len(), 1);
        opts.schema.to_wallet_nullable = false;
        assert!(matches!(
            parse_transactions(src.as_bytes(), &opts),
            Err(IngestError::Schema(_))
        ));
    }

    #[test]
    fn mixed_timestamp_formats_are_malformed() {
        let src =
            "tx_id,timestamp,from_wallet,to_wallet,value\na,100,A,B,1\nb,2018-05-18T00:00:00Z,A,B,1\nc,100.75,A,B,1\n";
        let p = parse_transactions(src.as_bytes(), &ParseOptions::new(Format::Csv)).unwrap();
        assert_eq!(p.rows_skipped, 1);
        assert_eq!(
            p.transactions.iter().map(|t| t.timestamp).collect::<Vec<_>>(),
            vec![100, 100]
        );
    }

    #[test]
    fn non_positive_timestamp_rejected() {
        let src = "tx_id,timestamp,from_wallet,to_wallet,value\na,0,A,B,1\n";
        let p = parse_transactions(src.as_bytes(), &ParseOptions::new(Format::Csv)).unwrap();
        assert_eq!(p.rows_skipped, 1);
    }

    #[test]
    fn large_wei_values() {
        let src =
            r#"{"tx_id":"a","timestamp":5,"from_wallet":"A","to_wallet":"B","value":123456789012345678901234567890}"#;
        let p = parse_transactions(src.as_bytes(), &ParseOptions::new(Format::Jsonl)).unwrap();
        assert_eq!(p.transactions[0].value, 123456789012345678901234567890u128);
    }

    #[test]
    fn normalize_empty() {
        let ds = normalize(vec![]);
        assert!(ds.is_empty());
        assert_eq!(ds.span(), None);
    }

    #[test]
    fn normalize_keeps_first_duplicate() {
        let mut first = tx("a", 10);
        first.value = 1;
        let mut second = tx("a", 5);
        second.value = 2;
        let ds = normalize(vec![first.clone(), second]);
        assert_eq!(ds.transactions(), &[first]);
        assert_eq!(ds.duplicates_dropped, 1);
        assert_eq!(ds.rows_read, ds.len() + ds.rows_skipped + ds.duplicates_dropped);
    }

    #[test]
    fn from_parsed_counters_balance() {
        let src = "tx_id,timestamp,from_wallet,to_wallet,value\na,1,A,B,1\na,2,A,B,1\nb,x,A,B,1\nc,3,A,B,1\n";
        let p = parse_transactions(src.as_bytes(), &ParseOptions::new(Format::Csv)).unwrap();
        let ds = Dataset::from_parsed(p);
        assert_eq!(
            (ds.rows_read, ds.rows_skipped, ds.duplicates_dropped, ds.len()),
            (4, 1, 1, 2)
        );
        assert_eq!(ds.span(), Some((1, 3)));
    }

    #[test]
    fn writers_round_trip() {
        let txs = vec![
            tx("a", 10),
            Transaction {
                to_wallet: None,
                value: u128::MAX,
                ..tx("b, \"quoted\"", 20)
            },
        ];
        for fmt in [Format::Csv, Format::Jsonl] {
            let mut buf = Vec::new();
            write_transactions(&txs, fmt, &mut buf).unwrap();
            let mut opts = ParseOptions::new(fmt);
            opts.strict = true;
            let back = parse_transactions(&buf[..], &opts).unwrap();
            assert_eq!(back.transactions, txs, "{fmt}");
        }
    }
}
