//! Rendering of stored run reports to the stable CSV and JSON shapes.
//!
//! Numbers are written with Rust's shortest-roundtrip float formatting, the
//! same representation `serde_json` emits, so the CSV and JSON renderings of
//! one report carry bit-identical values.

use crate::continual::{ExperimentReport, RoundReport, TrainMode};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const METRIC_COLUMNS: &str = "round,epoch,loss,accuracy,precision,recall,f1";
pub const TREND_COLUMNS: &str = "round,model,mode,f1";

pub fn mode_label(mode: TrainMode) -> &'static str {
    match mode {
        TrainMode::Full => "full",
        TrainMode::LoraOnly => "lora",
    }
}

/// Per-round epoch table: one row per recorded epoch checkpoint.
pub fn metrics_round_csv(round: &RoundReport) -> String {
    let mut out = String::from(METRIC_COLUMNS);
    out.push('\n');
    for e in &round.epochs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            round.round,
            e.epoch,
            e.loss,
            e.scores.accuracy,
            e.scores.precision,
            e.scores.recall,
            e.scores.f1
        ));
    }
    out
}

/// One point of the cross-run score series, ready for either rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendEntry {
    pub round: u32,
    pub model: String,
    pub mode: String,
    pub f1: f64,
}

pub fn trend_entries(report: &ExperimentReport) -> Vec<TrendEntry> {
    report
        .runs
        .iter()
        .flat_map(|run| {
            run.rounds.iter().map(move |r| TrendEntry {
                round: r.round,
                model: report.model.clone(),
                mode: mode_label(run.mode).into(),
                f1: r.cumulative.f1,
            })
        })
        .collect()
}

pub fn trend_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(TREND_COLUMNS);
    out.push('\n');
    for e in trend_entries(report) {
        out.push_str(&format!("{},{},{},{}\n", e.round, e.model, e.mode, e.f1));
    }
    out
}

pub fn trend_json(report: &ExperimentReport) -> Result<String> {
    let mut out = serde_json::to_string_pretty(&trend_entries(report))?;
    out.push('\n');
    Ok(out)
}

/// Loads a stored experiment report from a run directory or a direct path to
/// its `report.json`.
pub fn load_report(path: &Path) -> Result<ExperimentReport> {
    let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    let bytes = std::fs::read(&file)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", file.display()))))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Format(format!("{}: not a run report: {e}", file.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continual::metrics::{Confusion, Scores};
    use crate::continual::{EpochMetrics, RoundReport, RunReport};

    fn sample_report() -> ExperimentReport {
        let confusion = Confusion::new(2);
        let scores =
            Scores { accuracy: 0.875, precision: 0.8, recall: 0.75, f1: 0.7742857142857142 };
        let epochs = vec![
            EpochMetrics { epoch: 1, loss: 1.25, scores, confusion: confusion.clone() },
            EpochMetrics { epoch: 4, loss: 0.5, scores, confusion: confusion.clone() },
        ];
        let rounds = vec![
            RoundReport {
                round: 0,
                new_classes: vec![0, 1],
                known_classes: vec![0, 1],
                epochs,
                cumulative: scores,
                cumulative_confusion: confusion,
            },
        ];
        ExperimentReport {
            seed: 7,
            model: "compact".into(),
            label_space: 2,
            class_names: vec!["a".into(), "b".into()],
            runs: vec![RunReport {
                mode: TrainMode::LoraOnly,
                rounds,
                forgetting: Vec::new(),
            }],
        }
    }

    #[test]
    fn metrics_csv_has_the_stable_columns_and_full_precision() {
        let report = sample_report();
        let csv = metrics_round_csv(&report.runs[0].rounds[0]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(METRIC_COLUMNS));
        let first = lines.next().unwrap();
        assert_eq!(first, "0,1,1.25,0.875,0.8,0.75,0.7742857142857142");
        assert_eq!(lines.count(), 1);
    }

    #[test]
    fn csv_and_json_trend_renderings_agree_on_values() {
        let report = sample_report();
        let csv = trend_csv(&report);
        let json: Vec<TrendEntry> = serde_json::from_str(&trend_json(&report).unwrap()).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), json.len());
        for (row, entry) in rows.iter().zip(&json) {
            let cols: Vec<&str> = row.split(',').collect();
            assert_eq!(cols[0].parse::<u32>().unwrap(), entry.round);
            assert_eq!(cols[1], entry.model);
            assert_eq!(cols[2], entry.mode);
            assert_eq!(cols[3].parse::<f64>().unwrap(), entry.f1);
        }
    }

    #[test]
    fn report_round_trips_through_disk() {
        let report = sample_report();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&report).unwrap()).unwrap();
        // by file and by directory
        let by_file = load_report(&path).unwrap();
        let by_dir = load_report(dir.path()).unwrap();
        assert_eq!(serde_json::to_vec(&by_file).unwrap(), serde_json::to_vec(&by_dir).unwrap());
        assert_eq!(by_file.model, "compact");
        assert!(load_report(&dir.path().join("missing.json")).is_err());
    }
}
