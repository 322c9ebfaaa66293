//! Detection of bot-operated wallets from spike anomalies in the distribution
//! of per-wallet inter-transaction time differences.
//!
//! The pipeline runs [`ingest`] → [`timeline`] → [`powerlaw`] → [`anomaly`] →
//! [`attribution`]; [`synth`] produces labeled datasets for testing it.

pub mod anomaly;
pub mod attribution;
pub mod ingest;
pub mod kv;
pub mod powerlaw;
pub mod synth;
pub mod timeline;
