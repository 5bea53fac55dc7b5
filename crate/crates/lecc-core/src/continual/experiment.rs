//! End-to-end class-incremental runs over a dataset bundle: train each
//! scheduled round, evaluate the cumulative test set after every round, and
//! collect the per-epoch tables, the per-round trend series, and the
//! forgetting report.
//!
//! The adapter arm bootstraps on round 0 by training the whole backbone,
//! then freezes it and expresses round 0 as a head-only adapter; every later
//! round trains adapter and head parameters only. The full arm keeps the
//! backbone trainable throughout and carries a fresh cumulative head per
//! round, so its history lives in the weights alone.

use super::forgetting::{forgetting_eval, ForgettingEntry, RoundTests};
use super::metrics::{self, Confusion, Scores};
use super::predict::BundleRuntime;
use super::{
    head_predict, train_round, EpochMetrics, RoundArtifact, RoundState, Sample, TrainMode,
    TrainSpec,
};
use crate::data::{ClassId, DatasetBundle, RoundData};
use crate::error::{Error, Result};
use crate::lora::{Adapter, AdapterBundle, AdapterWeights};
use crate::model::{fingerprint, Backbone, BackboneConfig};
use crate::nn::rng::{derive_seed, seeded};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentMode {
    Full,
    Lora,
    Both,
}

impl FromStr for ExperimentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ExperimentMode::Full),
            "lora" => Ok(ExperimentMode::Lora),
            "both" => Ok(ExperimentMode::Both),
            other => Err(Error::Config(format!("unknown mode {other:?} (full, lora, both)"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Backbone size preset; `None` uses the compact default.
    pub preset: Option<String>,
    pub spec: TrainSpec,
    pub mode: ExperimentMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig { preset: None, spec: TrainSpec::default(), mode: ExperimentMode::Lora }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub new_classes: Vec<ClassId>,
    pub known_classes: Vec<ClassId>,
    pub epochs: Vec<EpochMetrics>,
    /// Scores on the union of test subsets for all rounds so far.
    pub cumulative: Scores,
    pub cumulative_confusion: Confusion,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: TrainMode,
    pub rounds: Vec<RoundReport>,
    pub forgetting: Vec<ForgettingEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    /// Backbone preset name, or `compact` for the default configuration.
    pub model: String,
    pub label_space: usize,
    pub class_names: Vec<String>,
    pub runs: Vec<RunReport>,
}

/// One point of the per-round score series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub mode: TrainMode,
    pub round: u32,
    pub accuracy: f64,
    pub f1: f64,
}

impl ExperimentReport {
    pub fn trend(&self) -> Vec<TrendRow> {
        self.runs
            .iter()
            .flat_map(|run| {
                run.rounds.iter().map(|r| TrendRow {
                    mode: run.mode,
                    round: r.round,
                    accuracy: r.cumulative.accuracy,
                    f1: r.cumulative.f1,
                })
            })
            .collect()
    }
}

/// Everything the adapter arm leaves behind for later inference or transfer.
#[derive(Debug)]
pub struct LoraArtifacts {
    pub backbone: Backbone<f32>,
    pub bundle: AdapterBundle,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub artifacts: Option<LoraArtifacts>,
}

pub(crate) fn backbone_for(
    dataset: &DatasetBundle,
    preset: Option<&str>,
    seed: u64,
) -> Result<Backbone<f32>> {
    let vocab = dataset.vocab.size();
    let bb = match preset {
        Some(name) => BackboneConfig::preset(name, vocab, dataset.max_len, seed)?,
        None => BackboneConfig::new(vocab, dataset.max_len, seed),
    };
    Backbone::init(bb)
}

/// What the shared round-0 bootstrap leaves behind: a frozen backbone and
/// the head-only adapter expressing the bootstrap classes.
pub(crate) struct Bootstrap {
    pub backbone: Backbone<f32>,
    pub adapter: Adapter,
    pub epochs: Vec<EpochMetrics>,
}

/// Trains round 0 with the backbone free, then freezes it for good and
/// wraps the trained head as a head-only adapter stamped round 0.
pub(crate) fn bootstrap_round(
    dataset: &DatasetBundle,
    rd0: &RoundData,
    preset: Option<&str>,
    spec: &TrainSpec,
) -> Result<Bootstrap> {
    let label_space = dataset.classes.len();
    let train0 = dataset.tokenize_records(&rd0.train)?;
    let val0 = dataset.tokenize_records(&rd0.test)?;
    let mut backbone = backbone_for(dataset, preset, spec.seed)?;
    let mut spec0 = spec.clone();
    spec0.mode = TrainMode::Full;
    let mut state0 = RoundState::new(fingerprint(&backbone));
    let out0 = train_round(&mut backbone, &train0, &val0, label_space, &spec0, &mut state0)?;
    let head0 = match out0.artifact {
        RoundArtifact::Head(h) => h,
        RoundArtifact::Adapter(_) => unreachable!("full mode emits a head"),
    };
    backbone.set_frozen(true);
    let fp = fingerprint(&backbone);
    let adapter = Adapter::from_training(
        0,
        &AdapterWeights::<f32>::empty(spec.lora.rank, spec.lora.alpha),
        &head0,
        fp,
    )?;
    Ok(Bootstrap { backbone, adapter, epochs: out0.epochs })
}

/// New-round training rows plus, when the fraction is positive, a seeded
/// sample of each earlier round's training rows.
fn assemble_train(
    dataset: &DatasetBundle,
    rounds: &[RoundData],
    current: usize,
    fraction: f64,
    seed: u64,
) -> Result<Vec<Sample>> {
    let mut rows = dataset.tokenize_records(&rounds[current].train)?;
    if fraction > 0.0 {
        for prior in &rounds[..current] {
            let k = ((prior.train.len() as f64) * fraction).ceil() as usize;
            let mut rng =
                seeded(derive_seed(seed, &format!("rehearsal:{current}:{}", prior.round)));
            let picked: Vec<usize> =
                prior.train.choose_multiple(&mut rng, k.min(prior.train.len())).copied().collect();
            rows.extend(dataset.tokenize_records(&picked)?);
        }
    }
    Ok(rows)
}

struct ArmScaffold {
    cumulative_test: Vec<Sample>,
    tests_by_round: Vec<RoundTests>,
}

impl ArmScaffold {
    fn new() -> Self {
        ArmScaffold { cumulative_test: Vec::new(), tests_by_round: Vec::new() }
    }

    fn absorb(&mut self, rd: &RoundData, rows: Vec<Sample>) {
        self.cumulative_test.extend(rows.iter().cloned());
        self.tests_by_round.push(RoundTests {
            round: rd.round as u32,
            scope: rd.class_ids.clone(),
            rows,
        });
    }
}

fn full_arm(
    dataset: &DatasetBundle,
    rounds: &[RoundData],
    cfg: &ExperimentConfig,
) -> Result<RunReport> {
    let label_space = dataset.classes.len();
    let mut spec = cfg.spec.clone();
    spec.mode = TrainMode::Full;
    let mut backbone = backbone_for(dataset, cfg.preset.as_deref(), cfg.spec.seed)?;
    let mut state = RoundState::new(fingerprint(&backbone));
    let mut scaffold = ArmScaffold::new();
    let mut reports = Vec::with_capacity(rounds.len());
    for rd in rounds {
        let train = assemble_train(dataset, rounds, rd.round, spec.rehearsal_fraction, spec.seed)?;
        let val = dataset.tokenize_records(&rd.test)?;
        let out = train_round(&mut backbone, &train, &val, label_space, &spec, &mut state)?;
        let mut head = match out.artifact {
            RoundArtifact::Head(h) => h,
            RoundArtifact::Adapter(_) => unreachable!("full mode emits a head"),
        };
        scaffold.absorb(rd, val);
        let confusion = metrics::evaluate(
            |ids| head_predict(&mut backbone, None, &mut head, ids),
            &scaffold.cumulative_test,
            label_space,
        )?;
        let cumulative = confusion.scores(state.known())?;
        reports.push(RoundReport {
            round: rd.round as u32,
            new_classes: rd.class_ids.clone(),
            known_classes: state.known().to_vec(),
            epochs: out.epochs,
            cumulative,
            cumulative_confusion: confusion,
        });
    }
    Ok(RunReport { mode: TrainMode::Full, rounds: reports, forgetting: Vec::new() })
}

fn lora_arm(
    dataset: &DatasetBundle,
    rounds: &[RoundData],
    cfg: &ExperimentConfig,
) -> Result<(RunReport, LoraArtifacts)> {
    let label_space = dataset.classes.len();
    let mut spec = cfg.spec.clone();
    spec.mode = TrainMode::LoraOnly;
    let mut scaffold = ArmScaffold::new();
    let mut reports = Vec::with_capacity(rounds.len());

    // round 0 bootstraps the shared representation with a full train, then
    // the backbone freezes for good and round 0 becomes a head-only adapter
    let rd0 = &rounds[0];
    let boot = bootstrap_round(dataset, rd0, cfg.preset.as_deref(), &spec)?;
    let mut backbone = boot.backbone;
    let out0_epochs = boot.epochs;
    let fp = fingerprint(&backbone);
    let mut bundle = AdapterBundle::new(fp);
    bundle.push(boot.adapter)?;
    let mut state = RoundState::resume(bundle);

    let val0 = dataset.tokenize_records(&rd0.test)?;
    scaffold.absorb(rd0, val0);
    let (cumulative, confusion) =
        bundle_eval(&mut backbone, state.bundle(), &scaffold.cumulative_test, state.known(), label_space)?;
    reports.push(RoundReport {
        round: 0,
        new_classes: rd0.class_ids.clone(),
        known_classes: state.known().to_vec(),
        epochs: out0_epochs,
        cumulative,
        cumulative_confusion: confusion,
    });

    for rd in &rounds[1..] {
        let train = assemble_train(dataset, rounds, rd.round, spec.rehearsal_fraction, spec.seed)?;
        let val = dataset.tokenize_records(&rd.test)?;
        let out = train_round(&mut backbone, &train, &val, label_space, &spec, &mut state)?;
        scaffold.absorb(rd, val);
        let (cumulative, confusion) = bundle_eval(
            &mut backbone,
            state.bundle(),
            &scaffold.cumulative_test,
            state.known(),
            label_space,
        )?;
        reports.push(RoundReport {
            round: rd.round as u32,
            new_classes: rd.class_ids.clone(),
            known_classes: state.known().to_vec(),
            epochs: out.epochs,
            cumulative,
            cumulative_confusion: confusion,
        });
    }

    let forgetting =
        forgetting_eval(&mut backbone, state.bundle(), &scaffold.tests_by_round, label_space)?;
    let run = RunReport { mode: TrainMode::LoraOnly, rounds: reports, forgetting };
    Ok((run, LoraArtifacts { backbone, bundle: state.into_bundle() }))
}

fn bundle_eval(
    backbone: &mut Backbone<f32>,
    bundle: &AdapterBundle,
    rows: &[Sample],
    scope: &[ClassId],
    label_space: usize,
) -> Result<(Scores, Confusion)> {
    let mut runtime = BundleRuntime::new(bundle, backbone)?;
    let confusion = metrics::evaluate(
        |ids| runtime.predict(backbone, ids).map(|(class, _)| class),
        rows,
        label_space,
    )?;
    let scores = confusion.scores(scope)?;
    Ok((scores, confusion))
}

/// Runs the scheduled rounds in order for each requested arm.
pub fn run_experiment(dataset: &DatasetBundle, cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.spec.validate()?;
    let rounds = dataset.rounds()?;
    if rounds.is_empty() {
        return Err(Error::Data("dataset schedule has no rounds".into()));
    }
    let mut runs = Vec::new();
    let mut artifacts = None;
    if matches!(cfg.mode, ExperimentMode::Full | ExperimentMode::Both) {
        runs.push(full_arm(dataset, &rounds, cfg)?);
    }
    if matches!(cfg.mode, ExperimentMode::Lora | ExperimentMode::Both) {
        let (run, arts) = lora_arm(dataset, &rounds, cfg)?;
        runs.push(run);
        artifacts = Some(arts);
    }
    let report = ExperimentReport {
        seed: cfg.spec.seed,
        model: cfg.preset.clone().unwrap_or_else(|| "compact".into()),
        label_space: dataset.classes.len(),
        class_names: dataset.classes.names().to_vec(),
        runs,
    };
    Ok(ExperimentOutput { report, artifacts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::bundle::build_bundle;
    use crate::data::{FlowRecord, RoundSchedule};

    fn records(classes: &[&str], per_class: usize) -> Vec<FlowRecord> {
        let mut out = Vec::new();
        for (ci, class) in classes.iter().enumerate() {
            for i in 0..per_class {
                out.push(FlowRecord {
                    features: vec![
                        ("proto".into(), format!("p{ci}")),
                        ("dport".into(), format!("{}", 20 + ci * 3)),
                        ("flag".into(), format!("f{}", i % 2)),
                    ],
                    class: (*class).into(),
                    label: u8::from(ci != 0),
                });
            }
        }
        out
    }

    fn dataset(classes: &[&str], rounds: Vec<Vec<String>>) -> DatasetBundle {
        let recs = records(classes, 14);
        build_bundle(
            &recs,
            vec!["test".into()],
            None,
            0.7,
            RoundSchedule::new(rounds).unwrap(),
            16,
            77,
        )
        .unwrap()
    }

    fn quick_config(mode: ExperimentMode) -> ExperimentConfig {
        ExperimentConfig {
            preset: None,
            spec: TrainSpec {
                epochs: 4,
                lr: 2e-3,
                batch_size: 8,
                rehearsal_fraction: 0.25,
                seed: 5,
                ..Default::default()
            },
            mode,
        }
    }

    #[test]
    fn adapter_arm_produces_one_adapter_per_round_and_stays_frozen() {
        let data = dataset(
            &["alpha", "beta", "gamma", "delta", "iota", "kappa"],
            vec![
                vec!["alpha".into(), "beta".into()],
                vec!["gamma".into(), "delta".into()],
                vec!["iota".into(), "kappa".into()],
            ],
        );
        let out = run_experiment(&data, &quick_config(ExperimentMode::Lora)).unwrap();
        let arts = out.artifacts.expect("adapter arm keeps its artifacts");
        assert_eq!(arts.bundle.len(), 3);
        assert!(arts.backbone.is_frozen());
        assert_eq!(fingerprint(&arts.backbone), arts.bundle.fingerprint());
        // round 0 is head-only, later rounds carry low-rank targets
        assert!(arts.bundle.adapters()[0].targets.is_empty());
        assert!(!arts.bundle.adapters()[1].targets.is_empty());

        let run = &out.report.runs[0];
        assert_eq!(run.mode, TrainMode::LoraOnly);
        assert_eq!(run.rounds.len(), 3);
        let known: Vec<usize> = run.rounds.iter().map(|r| r.known_classes.len()).collect();
        assert_eq!(known, vec![2, 4, 6]);
        assert_eq!(run.forgetting.len(), 2);
        assert_eq!(out.report.trend().len(), 3);
    }

    #[test]
    fn single_round_schedule_reduces_to_plain_classification() {
        let data = dataset(&["alpha", "beta"], vec![vec!["alpha".into(), "beta".into()]]);
        let out = run_experiment(&data, &quick_config(ExperimentMode::Lora)).unwrap();
        let run = &out.report.runs[0];
        assert_eq!(run.rounds.len(), 1);
        assert!(run.forgetting.is_empty());
        assert_eq!(out.artifacts.unwrap().bundle.len(), 1);
    }

    #[test]
    fn both_mode_runs_each_arm_once() {
        let data = dataset(
            &["alpha", "beta", "gamma", "delta"],
            vec![vec!["alpha".into(), "beta".into()], vec!["gamma".into(), "delta".into()]],
        );
        let out = run_experiment(&data, &quick_config(ExperimentMode::Both)).unwrap();
        let modes: Vec<TrainMode> = out.report.runs.iter().map(|r| r.mode).collect();
        assert_eq!(modes, vec![TrainMode::Full, TrainMode::LoraOnly]);
        assert!(out.artifacts.is_some());
        assert_eq!(out.report.trend().len(), 4);
    }

    #[test]
    fn identical_configs_produce_identical_reports() {
        let data = dataset(
            &["alpha", "beta", "gamma", "delta"],
            vec![vec!["alpha".into(), "beta".into()], vec!["gamma".into(), "delta".into()]],
        );
        let cfg = quick_config(ExperimentMode::Lora);
        let a = run_experiment(&data, &cfg).unwrap();
        let b = run_experiment(&data, &cfg).unwrap();
        assert_eq!(
            serde_json::to_vec(&a.report).unwrap(),
            serde_json::to_vec(&b.report).unwrap()
        );
        assert_eq!(
            a.artifacts.unwrap().bundle.to_bytes(),
            b.artifacts.unwrap().bundle.to_bytes()
        );
    }

    #[test]
    fn mode_strings_parse_and_reject() {
        assert_eq!("full".parse::<ExperimentMode>().unwrap(), ExperimentMode::Full);
        assert_eq!("lora".parse::<ExperimentMode>().unwrap(), ExperimentMode::Lora);
        assert_eq!("both".parse::<ExperimentMode>().unwrap(), ExperimentMode::Both);
        assert!("hybrid".parse::<ExperimentMode>().is_err());
    }
}
