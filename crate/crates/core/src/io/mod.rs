//! File formats: price CSV input, the key-value pipeline config, tabular
//! outputs and graph export.
//!
//! Every file written here starts with (or, for JSON, carries) the hash of
//! the configuration that produced it and the date window it covers.

mod config;
mod graph;
mod prices;
mod tables;

use std::fmt;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use config::{parse_groups, read_groups, AssetInput, DateWindow, PipelineConfig, RegressionSpec};
pub use graph::{export_graph, graph_to_dot, graph_to_json, import_graph_json, parse_graph_json, GraphDocument, GraphFormat, GRAPH_SCHEMA, GRAPH_SCHEMA_VERSION};
pub use prices::{load_price_csv, load_price_table, write_price_csv, ColumnMap, PriceTable};
pub use tables::{
    indicators_to_csv, losses_to_csv, KeyedTable, matrix_to_csv, parse_losses_csv, parse_matrix_csv, parse_probability_csv,
    probabilities_to_csv, read_losses_csv, read_matrix_csv, read_probability_csv,
};

/// Where an output came from: the configuration hash and the covered dates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub window: Option<Window>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, window: Option<(NaiveDate, NaiveDate)>) -> Self {
        Self {
            config_hash: config_hash.into(),
            window: window.map(|(start, end)| Window { start, end }),
        }
    }

    /// Hash of an arbitrary canonical description (e.g. command arguments).
    pub fn of_text(text: &str, window: Option<(NaiveDate, NaiveDate)>) -> Self {
        Self::new(sha256_hex(text), window)
    }

    pub fn with_window(&self, window: Option<(NaiveDate, NaiveDate)>) -> Self {
        Self::new(self.config_hash.clone(), window)
    }

    /// Leading comment line for CSV and DOT files (without the comment marker).
    fn header(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config_hash={} window=", self.config_hash)?;
        match self.window {
            Some(w) => write!(f, "{}..{}", w.start, w.end),
            None => f.write_str("none"),
        }
    }
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}
