//! Canonical dataset bundle: everything a training run needs, in one JSON
//! file. Records are stored textualized; split and round membership reference
//! records by index into the bundle's own record list.

use super::codec::LabelCodec;
use super::split::{split_exact, split_fraction, RoundData, RoundSchedule, Split};
use super::text::{textualize, Vocab};
use super::FlowRecord;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleRecord {
    pub text: String,
    pub class: String,
    pub label: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub version: u32,
    pub seed: u64,
    pub sources: Vec<String>,
    pub max_len: usize,
    pub classes: LabelCodec,
    pub vocab: Vocab,
    pub records: Vec<BundleRecord>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub schedule: RoundSchedule,
}

/// Cleaning outcome per source file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceReport {
    pub path: String,
    pub rows: usize,
    pub kept_columns: usize,
    pub dropped_columns: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CleaningReport {
    pub sources: Vec<SourceReport>,
}

/// Assembles a bundle from cleaned records.
///
/// `budget` carries exact per-class (train, test) counts; when `None`, all
/// records are kept and split per-class by `train_fraction`. Vocabulary is
/// built from training-split texts only.
pub fn build_bundle(
    records: &[FlowRecord],
    sources: Vec<String>,
    budget: Option<&[(String, usize, usize)]>,
    train_fraction: f64,
    schedule: RoundSchedule,
    max_len: usize,
    seed: u64,
) -> Result<DatasetBundle> {
    if records.is_empty() {
        return Err(Error::Data("no records to bundle".into()));
    }
    let (selected, split): (Vec<usize>, Split) = match budget {
        Some(rows) => {
            let want: Vec<(String, usize)> = rows.iter().map(|(c, tr, te)| (c.clone(), tr + te)).collect();
            let picked = super::split::few_shot_sample(records, &want, seed)?;
            let subset: Vec<FlowRecord> = picked.iter().map(|&i| records[i].clone()).collect();
            let split = split_exact(&subset, rows, seed)?;
            (picked, split)
        }
        None => {
            let picked: Vec<usize> = (0..records.len()).collect();
            let split = split_fraction(records, train_fraction, seed)?;
            (picked, split)
        }
    };
    let bundle_records: Vec<BundleRecord> = selected
        .iter()
        .map(|&i| BundleRecord {
            text: textualize(&records[i]),
            class: super::codec::normalize_class(&records[i].class),
            label: records[i].label,
        })
        .collect();
    let classes = LabelCodec::build(bundle_records.iter().map(|r| r.class.as_str()))?;
    schedule.validate_against(&classes)?;
    let vocab = Vocab::build(split.train.iter().map(|&i| bundle_records[i].text.as_str()));
    if max_len == 0 {
        return Err(Error::Config("max_len must be positive".into()));
    }
    Ok(DatasetBundle {
        version: BUNDLE_VERSION,
        seed,
        sources,
        max_len,
        classes,
        vocab,
        records: bundle_records,
        train: split.train,
        test: split.test,
        schedule,
    })
}

impl DatasetBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut bundle: DatasetBundle = serde_json::from_slice(&bytes)?;
        if bundle.version != BUNDLE_VERSION {
            return Err(Error::Format(format!(
                "bundle version {} unsupported (expected {BUNDLE_VERSION})",
                bundle.version
            )));
        }
        bundle.classes = bundle.classes.rebuild_index()?;
        bundle.vocab = bundle.vocab.rebuild_index();
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.records.len();
        for &i in self.train.iter().chain(self.test.iter()) {
            if i >= n {
                return Err(Error::OutOfRange { what: "record index", got: i, limit: n });
            }
        }
        for idx in &self.train {
            if self.test.contains(idx) {
                return Err(Error::Data(format!("record {idx} in both train and test")));
            }
        }
        for r in &self.records {
            self.classes.encode(&r.class)?;
        }
        self.schedule.validate_against(&self.classes)?;
        Ok(())
    }

    /// Train/test indices filtered per schedule round by record class.
    pub fn rounds(&self) -> Result<Vec<RoundData>> {
        (0..self.schedule.len())
            .map(|r| {
                let ids = self.schedule.class_ids(r, &self.classes)?;
                let keep = |i: &usize| -> bool {
                    self.classes
                        .encode(&self.records[*i].class)
                        .map(|id| ids.contains(&id))
                        .unwrap_or(false)
                };
                let train = self.train.iter().filter(|i| keep(i)).copied().collect();
                let test = self.test.iter().filter(|i| keep(i)).copied().collect();
                Ok(RoundData { round: r, class_ids: ids, train, test })
            })
            .collect()
    }

    /// Token ids and class id for each listed record index.
    pub fn tokenize_records(&self, indices: &[usize]) -> Result<Vec<(Vec<u32>, u16)>> {
        indices
            .iter()
            .map(|&i| {
                let rec = self
                    .records
                    .get(i)
                    .ok_or(Error::OutOfRange { what: "record index", got: i, limit: self.records.len() })?;
                Ok((self.vocab.tokenize(&rec.text, self.max_len)?, self.classes.encode(&rec.class)?))
            })
            .collect()
    }
}
