//! Dataset pipeline: CSV ingest, null-column cleaning, label codec,
//! textualization, vocabulary, splits, and the canonical bundle file.
//!
//! Flow records come from IoT traffic captures exported as CSV with two
//! target columns: `Attack_type` (class name) and `Attack_label` (binary
//! attack flag). Feature columns containing any null become unusable for
//! text encoding and are dropped whole.

pub mod bundle;
pub mod codec;
pub mod presets;
pub mod split;
pub mod text;

pub use bundle::{BundleRecord, CleaningReport, DatasetBundle, SourceReport};
pub use codec::{ClassId, LabelCodec};
pub use split::{kfold, partition_rounds, RoundData, RoundSchedule, Split};
pub use text::{textualize, Vocab, CLS_ID, PAD_ID, UNK_ID};

use crate::error::{Error, Result};
use std::path::Path;

pub const TYPE_COLUMN: &str = "Attack_type";
pub const LABEL_COLUMN: &str = "Attack_label";

/// One traffic flow: named feature values plus its class targets.
#[derive(Debug, Clone)]
pub struct FlowRecord {
    pub features: Vec<(String, String)>,
    pub class: String,
    pub label: u8,
}

/// A value that cannot be textualized: empty or an explicit null marker.
pub fn is_null(value: &str) -> bool {
    let v = value.trim();
    v.is_empty() || v.eq_ignore_ascii_case("nan") || v.eq_ignore_ascii_case("null") || v.eq_ignore_ascii_case("na")
}

/// Reads a capture CSV. Returns records (with every feature column, nulls
/// included) and the feature column names in file order.
pub fn load_csv(path: &Path) -> Result<(Vec<FlowRecord>, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let type_idx = headers
        .iter()
        .position(|h| h == TYPE_COLUMN)
        .ok_or_else(|| Error::Schema(format!("{}: missing column {TYPE_COLUMN}", path.display())))?;
    let label_idx = headers
        .iter()
        .position(|h| h == LABEL_COLUMN)
        .ok_or_else(|| Error::Schema(format!("{}: missing column {LABEL_COLUMN}", path.display())))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != type_idx && *i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let mut records = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Schema(format!("{} row {}: {e}", path.display(), line + 2)))?;
        if row.len() != headers.len() {
            return Err(Error::Schema(format!(
                "{} row {}: {} fields, expected {}",
                path.display(),
                line + 2,
                row.len(),
                headers.len()
            )));
        }
        let class = row[type_idx].trim().to_string();
        if class.is_empty() {
            return Err(Error::Schema(format!(
                "{} row {}: empty {TYPE_COLUMN}",
                path.display(),
                line + 2
            )));
        }
        let label: u8 = row[label_idx]
            .trim()
            .parse()
            .map_err(|_| Error::Schema(format!("{} row {}: bad {LABEL_COLUMN}", path.display(), line + 2)))?;
        let features = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != type_idx && *i != label_idx)
            .map(|(i, h)| (h.clone(), row[i].to_string()))
            .collect();
        records.push(FlowRecord { features, class, label });
    }
    if records.is_empty() {
        return Err(Error::Data(format!("{}: no rows", path.display())));
    }
    Ok((records, feature_names))
}

/// Drops every feature column that contains a null in any record. Returns the
/// dropped column names in original order.
pub fn drop_null_columns(records: &mut Vec<FlowRecord>, feature_names: &[String]) -> Result<Vec<String>> {
    let mut has_null = vec![false; feature_names.len()];
    for rec in records.iter() {
        for (j, (_, v)) in rec.features.iter().enumerate() {
            if !has_null[j] && is_null(v) {
                has_null[j] = true;
            }
        }
    }
    let dropped: Vec<String> = feature_names
        .iter()
        .zip(has_null.iter())
        .filter(|(_, &d)| d)
        .map(|(n, _)| n.clone())
        .collect();
    if dropped.len() == feature_names.len() {
        return Err(Error::Data("every feature column contains nulls".into()));
    }
    for rec in records.iter_mut() {
        let mut j = 0;
        rec.features.retain(|_| {
            let keep = !has_null[j];
            j += 1;
            keep
        });
    }
    Ok(dropped)
}
