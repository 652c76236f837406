//! Structured-text (TOML) documents for thresholds, zones and reports.
//!
//! Reals are written with Rust's shortest round-trip formatting, so reading a
//! document back yields bit-identical values. Documents carry a provenance
//! block with the tool version, seeds, the exact parameters and SHA-256
//! digests of every input file; nothing time- or host-dependent is recorded.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crc_threeway::ZoneReport;
use crate::domain::{CalibrationResult, MetricsReport, ZoneThresholds};
use crate::error::{Error, Result};
use crate::synth::McOutcome;

pub const TOOL_NAME: &str = "pixcrc";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub parameters: toml::Table,
    /// Input path -> SHA-256 of its contents.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(command: &str) -> Self {
        Provenance {
            tool: TOOL_NAME.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seeds: Vec::new(),
            parameters: toml::Table::new(),
            inputs: BTreeMap::new(),
        }
    }

    pub fn param(mut self, key: &str, value: impl Into<toml::Value>) -> Self {
        self.parameters.insert(key.to_string(), value.into());
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seeds.push(seed);
        self
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        self.inputs
            .insert(path.display().to_string(), file_digest(path)?);
        Ok(self)
    }
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdDocument {
    pub provenance: Provenance,
    pub calibration: CalibrationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonesDocument {
    pub provenance: Provenance,
    pub zones: ZoneThresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationDocument {
    pub provenance: Provenance,
    /// Free-form notes on conventions (pooling, AP convention, CI method).
    pub conventions: BTreeMap<String, String>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplyDocument {
    pub provenance: Provenance,
    pub zones: ZoneThresholds,
    pub report: ZoneReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McDocument {
    pub provenance: Provenance,
    pub outcome: McOutcome,
    #[serde(default)]
    pub checks: BTreeMap<String, f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDocument {
    pub provenance: Provenance,
    pub train: usize,
    pub calibration: usize,
    pub test: usize,
    /// Image ids per partition, in partition order.
    pub train_ids: Vec<u32>,
    pub calibration_ids: Vec<u32>,
    pub test_ids: Vec<u32>,
}

pub fn to_text<T: Serialize>(doc: &T) -> Result<String> {
    toml::to_string(doc).map_err(|e| Error::Format(e.to_string()))
}

pub fn from_text<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_document<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    fs::write(path, to_text(doc)?)?;
    Ok(())
}

pub fn read_document<T: DeserializeOwned>(path: &Path) -> Result<T> {
    from_text(&fs::read_to_string(path)?)
}
