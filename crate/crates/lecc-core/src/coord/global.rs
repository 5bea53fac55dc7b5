//! Multi-device continual learning over a coordinator: one shared bootstrap
//! round, per-device class domains, and adapter exchange as the only traffic.
//!
//! Devices never share training rows or gradients. Each trains adapters whose
//! heads cover its own cumulative classes, so same-round submissions from
//! different devices are disjoint and merge cleanly. After submitting a round
//! every device waits until the coordinator has processed the whole fleet's
//! submissions for it; that barrier keeps the validation gate's baseline
//! independent of thread interleaving, which is what makes reruns
//! byte-identical.

use super::aggregate::ValidationGate;
use super::edge::EdgeNode;
use super::server::{loopback_session, Coordinator, SubmissionRecord};
use super::transport::Transport;
use crate::continual::experiment::bootstrap_round;
use crate::continual::{
    evaluate, train_round, BundleRuntime, EpochMetrics, RoundArtifact, RoundState, Sample, Scores,
    TrainMode, TrainSpec,
};
use crate::data::{ClassId, DatasetBundle};
use crate::error::{Error, Result};
use crate::lora::{Adapter, AdapterBundle};
use crate::model::{fingerprint, Backbone};
use crate::nn::rng::{derive_seed, seeded};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

/// How long a device waits for the rest of the fleet at a round boundary.
const FLEET_TIMEOUT: Duration = Duration::from_secs(300);
const POLL_TICK: Duration = Duration::from_millis(10);

const NO_SCORES: Scores = Scores { accuracy: 0.0, precision: 0.0, recall: 0.0, f1: 0.0 };

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalConfig {
    /// Backbone size preset; `None` uses the compact default.
    pub preset: Option<String>,
    pub spec: TrainSpec,
    pub devices: usize,
    /// Tolerated macro-F1 drop on the coordinator's holdout before a
    /// submission is turned away.
    pub epsilon: f64,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        GlobalConfig {
            preset: None,
            spec: TrainSpec::default(),
            devices: 2,
            epsilon: ValidationGate::DEFAULT_EPSILON,
        }
    }
}

impl GlobalConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.devices == 0 {
            return Err(Error::Config("device count must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        Ok(())
    }

    /// Training spec for one device: adapter-only, with a seed stream of its
    /// own so devices do not mirror each other's initializations.
    pub fn device_spec(&self, node_id: u32) -> TrainSpec {
        let mut spec = self.spec.clone();
        spec.mode = TrainMode::LoraOnly;
        spec.seed = derive_seed(self.spec.seed, &format!("device:{node_id}"));
        spec
    }
}

/// One device's share of one global round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceRound {
    pub round: u32,
    pub class_ids: Vec<ClassId>,
    /// Record indices into the dataset, restricted to this device's classes.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits every post-bootstrap round across the fleet: classes go round-robin
/// by position, records follow their class. Every device must end up with at
/// least one class per round, so a fleet can be at most as wide as the
/// narrowest scheduled round.
pub fn device_rounds(
    dataset: &DatasetBundle,
    devices: usize,
    device: usize,
) -> Result<Vec<DeviceRound>> {
    if device >= devices {
        return Err(Error::Config(format!("device {device} out of range for {devices} devices")));
    }
    let rounds = dataset.rounds()?;
    if rounds.len() < 2 {
        return Err(Error::Config("a fleet run needs at least two scheduled rounds".into()));
    }
    rounds[1..]
        .iter()
        .map(|rd| {
            let class_ids: Vec<ClassId> = rd
                .class_ids
                .iter()
                .enumerate()
                .filter(|(i, _)| i % devices == device)
                .map(|(_, &c)| c)
                .collect();
            if class_ids.is_empty() {
                return Err(Error::Config(format!(
                    "round {} brings {} classes, not enough for {devices} devices",
                    rd.round,
                    rd.class_ids.len(),
                )));
            }
            let member = |&i: &usize| {
                dataset
                    .classes
                    .encode(&dataset.records[i].class)
                    .map(|c| class_ids.contains(&c))
                    .unwrap_or(false)
            };
            Ok(DeviceRound {
                round: rd.round as u32,
                train: rd.train.iter().copied().filter(member).collect(),
                test: rd.test.iter().copied().filter(member).collect(),
                class_ids,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceRoundReport {
    pub round: u32,
    pub new_classes: Vec<ClassId>,
    pub epochs: Vec<EpochMetrics>,
    pub accepted: bool,
    /// Coordinator reject reason when not accepted.
    pub rejection: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceReport {
    pub node_id: u32,
    /// Classes this device trained on across all its rounds.
    pub classes: Vec<ClassId>,
    pub rounds: Vec<DeviceRoundReport>,
    /// Scores on the other devices' test rows before the exchange, i.e. with
    /// only the bootstrap bundle and locally trained adapters.
    pub cross_before: Scores,
    /// Same rows after applying the fleet's merged bundle.
    pub cross_after: Scores,
    /// The device's own test rows under the merged bundle.
    pub own_after: Scores,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalReport {
    pub seed: u64,
    pub devices: usize,
    /// Scheduled rounds including the bootstrap round.
    pub rounds: usize,
    pub bootstrap_classes: Vec<ClassId>,
    pub bootstrap_epochs: Vec<EpochMetrics>,
    pub nodes: Vec<DeviceReport>,
    pub bundle_adapters: usize,
    pub bundle_bytes: usize,
}

#[derive(Debug)]
pub struct GlobalOutput {
    pub report: GlobalReport,
    pub bundle: AdapterBundle,
    pub backbone: Backbone<f32>,
    /// Arrival-ordered coordinator log; diagnostic, not part of the report.
    pub submissions: Vec<SubmissionRecord>,
}

/// The device's new-round rows plus a seeded sample of each of its own
/// earlier rounds. Rehearsal never reaches across devices.
fn assemble_device_train(
    dataset: &DatasetBundle,
    mine: &[DeviceRound],
    current: usize,
    fraction: f64,
    seed: u64,
) -> Result<Vec<Sample>> {
    let mut rows = dataset.tokenize_records(&mine[current].train)?;
    if fraction > 0.0 {
        for prior in &mine[..current] {
            let k = ((prior.train.len() as f64) * fraction).ceil() as usize;
            let mut rng = seeded(derive_seed(
                seed,
                &format!("rehearsal:{}:{}", mine[current].round, prior.round),
            ));
            let picked: Vec<usize> =
                prior.train.choose_multiple(&mut rng, k.min(prior.train.len())).copied().collect();
            rows.extend(dataset.tokenize_records(&picked)?);
        }
    }
    Ok(rows)
}

/// Bundle scores over `rows`, restricted to `scope`. Empty rows or an empty
/// scope (a one-device fleet has no foreign domain) score zero across the
/// board rather than erroring.
fn scored(
    backbone: &mut Backbone<f32>,
    bundle: &AdapterBundle,
    rows: &[Sample],
    scope: &[ClassId],
    label_space: usize,
) -> Result<Scores> {
    if rows.is_empty() || scope.is_empty() {
        return Ok(NO_SCORES);
    }
    let mut runtime = BundleRuntime::new(bundle, backbone)?;
    let confusion =
        evaluate(|ids| runtime.predict(backbone, ids).map(|(c, _)| c), rows, label_space)?;
    confusion.scores(scope)
}

/// Re-registers until the coordinator has processed `expected` submissions,
/// accepted or rejected. Each poll re-applies the merged bundle, so on return
/// the node already holds the settled state.
fn wait_for_fleet<T: Transport>(
    node: &mut EdgeNode<T>,
    backbone: &Backbone<f32>,
    expected: usize,
) -> Result<()> {
    let start = Instant::now();
    loop {
        let status = node.register(backbone)?;
        if status.submissions >= expected {
            return Ok(());
        }
        if start.elapsed() > FLEET_TIMEOUT {
            return Err(Error::State("fleet exchange never settled"));
        }
        thread::sleep(POLL_TICK);
    }
}

/// Runs one device against a live coordinator: register, then per round
/// train on the device's own slice, submit the adapter, and hold at the
/// round boundary until the whole fleet's submissions are in. Returns the
/// device report and the final merged bundle it settled on.
///
/// The same routine backs the in-process simulation and the socket-connected
/// edge command, so both produce identical numbers for identical inputs.
pub fn device_flow<T: Transport>(
    dataset: &DatasetBundle,
    cfg: &GlobalConfig,
    node_id: u32,
    backbone: &mut Backbone<f32>,
    transport: T,
) -> Result<(DeviceReport, AdapterBundle)> {
    let label_space = dataset.classes.len();
    let mine = device_rounds(dataset, cfg.devices, node_id as usize)?;
    let spec = cfg.device_spec(node_id);
    let fp = fingerprint(backbone);

    let mut node = EdgeNode::new(node_id, backbone, transport)?;
    node.register(backbone)?;

    let mut state = RoundState::starting_at(fp, mine[0].round);
    let mut rounds = Vec::with_capacity(mine.len());
    for (k, dr) in mine.iter().enumerate() {
        if state.round() != dr.round {
            return Err(Error::State("device rounds must be consecutive"));
        }
        let train = assemble_device_train(dataset, &mine, k, spec.rehearsal_fraction, spec.seed)?;
        let val = dataset.tokenize_records(&dr.test)?;
        let out = train_round(backbone, &train, &val, label_space, &spec, &mut state)?;
        let adapter = match out.artifact {
            RoundArtifact::Adapter(a) => a,
            RoundArtifact::Head(_) => unreachable!("adapter-only mode emits adapters"),
        };
        let metrics = out
            .epochs
            .last()
            .map(|e| serde_json::to_value(e.scores))
            .transpose()?
            .unwrap_or(serde_json::Value::Null);
        let (accepted, rejection) = match node.submit(backbone, &adapter, &metrics) {
            Ok(_) => (true, None),
            Err(Error::Rejected(reason)) => (false, Some(reason)),
            Err(e) => return Err(e),
        };
        rounds.push(DeviceRoundReport {
            round: dr.round,
            new_classes: dr.class_ids.clone(),
            epochs: out.epochs,
            accepted,
            rejection,
        });
        wait_for_fleet(&mut node, backbone, cfg.devices * (k + 1))?;
    }

    let mut own: Vec<ClassId> =
        mine.iter().flat_map(|r| r.class_ids.iter().copied()).collect();
    own.sort_unstable();

    // the foreign domain: classes other devices brought, and their test rows
    let all = dataset.rounds()?;
    let mut cross: Vec<ClassId> = all[1..]
        .iter()
        .flat_map(|rd| rd.class_ids.iter().copied())
        .filter(|c| !own.contains(c))
        .collect();
    cross.sort_unstable();
    cross.dedup();
    let cross_idx: Vec<usize> = all[1..]
        .iter()
        .flat_map(|rd| rd.test.iter().copied())
        .filter(|&i| {
            dataset
                .classes
                .encode(&dataset.records[i].class)
                .map(|c| cross.contains(&c))
                .unwrap_or(false)
        })
        .collect();
    let cross_rows = dataset.tokenize_records(&cross_idx)?;
    let own_idx: Vec<usize> = mine.iter().flat_map(|r| r.test.iter().copied()).collect();
    let own_rows = dataset.tokenize_records(&own_idx)?;

    let final_bundle = node.bundle().clone();
    // the exchange-free view: whatever the coordinator seeded before the
    // fleet's first round, plus everything trained here
    let mut local: Vec<Adapter> = final_bundle
        .adapters()
        .iter()
        .filter(|a| a.round < mine[0].round)
        .cloned()
        .collect();
    local.extend(state.into_bundle().adapters().iter().cloned());
    let before_bundle = AdapterBundle::from_adapters(fp, local)?;

    let cross_before = scored(backbone, &before_bundle, &cross_rows, &cross, label_space)?;
    let cross_after = scored(backbone, &final_bundle, &cross_rows, &cross, label_space)?;
    let own_after = scored(backbone, &final_bundle, &own_rows, &own, label_space)?;

    let report =
        DeviceReport { node_id, classes: own, rounds, cross_before, cross_after, own_after };
    Ok((report, final_bundle))
}

/// Bootstraps a shared frozen backbone, then runs `devices` concurrent
/// device flows against an in-process coordinator over loopback transports.
/// All devices leave with byte-identical bundles, and the report is
/// deterministic for a fixed dataset and config regardless of scheduling.
pub fn run_global(dataset: &DatasetBundle, cfg: &GlobalConfig) -> Result<GlobalOutput> {
    cfg.validate()?;
    let all = dataset.rounds()?;
    for d in 0..cfg.devices {
        device_rounds(dataset, cfg.devices, d)?;
    }

    let boot = bootstrap_round(dataset, &all[0], cfg.preset.as_deref(), &cfg.spec)?;
    let backbone = boot.backbone;
    let fp = fingerprint(&backbone);
    let initial = AdapterBundle::from_adapters(fp, vec![boot.adapter])?;
    let holdout = dataset.tokenize_records(&dataset.test)?;
    let gate = ValidationGate::new(holdout, cfg.epsilon, dataset.classes.len());
    let coordinator = Arc::new(Coordinator::new(backbone.clone(), initial, gate)?);

    let results: Vec<Result<(DeviceReport, AdapterBundle)>> = thread::scope(|s| {
        let mut sessions = Vec::with_capacity(cfg.devices);
        let mut workers = Vec::with_capacity(cfg.devices);
        for d in 0..cfg.devices {
            let (client, handle) = loopback_session(&coordinator);
            sessions.push(handle);
            let mut bb = backbone.clone();
            workers.push(s.spawn(move || device_flow(dataset, cfg, d as u32, &mut bb, client)));
        }
        let results: Vec<_> =
            workers.into_iter().map(|w| w.join().expect("device thread panicked")).collect();
        for h in sessions {
            h.join().expect("session thread panicked");
        }
        results
    });
    let mut outcomes = Vec::with_capacity(cfg.devices);
    for r in results {
        outcomes.push(r?);
    }

    let final_bundle = coordinator.bundle_snapshot();
    let final_bytes = final_bundle.to_bytes();
    for (_, b) in &outcomes {
        if b.to_bytes() != final_bytes {
            return Err(Error::State("devices diverged from the coordinator"));
        }
    }

    let report = GlobalReport {
        seed: cfg.spec.seed,
        devices: cfg.devices,
        rounds: all.len(),
        bootstrap_classes: all[0].class_ids.clone(),
        bootstrap_epochs: boot.epochs,
        nodes: outcomes.iter().map(|(r, _)| r.clone()).collect(),
        bundle_adapters: final_bundle.len(),
        bundle_bytes: final_bytes.len(),
    };
    Ok(GlobalOutput {
        report,
        bundle: final_bundle,
        backbone,
        submissions: coordinator.submission_log(),
    })
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
                // several varied value tokens per row so samples stay
                // distinguishable to adapters that never trained on them
                out.push(FlowRecord {
                    features: vec![
                        ("proto".into(), format!("p{ci}")),
                        ("dport".into(), format!("{}", 20 + ci * 3)),
                        ("sport".into(), format!("{}", 1000 + (i * 13) % 29)),
                        ("bytes".into(), format!("{}", 40 + ci * 7 + (i % 5))),
                        ("ttl".into(), format!("{}", 32 + (i % 4) * 16)),
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

    fn quick_config(devices: usize) -> GlobalConfig {
        GlobalConfig {
            preset: None,
            spec: TrainSpec {
                epochs: 4,
                lr: 2e-3,
                batch_size: 8,
                rehearsal_fraction: 0.25,
                seed: 5,
                ..Default::default()
            },
            devices,
            // toy-scale adapters should not be turned away by the gate here
            epsilon: 1.0,
        }
    }

    fn six_class_dataset() -> DatasetBundle {
        dataset(
            &["alpha", "beta", "gamma", "delta", "iota", "kappa"],
            vec![
                vec!["alpha".into(), "beta".into()],
                vec!["gamma".into(), "delta".into()],
                vec!["iota".into(), "kappa".into()],
            ],
        )
    }

    #[test]
    fn partition_is_disjoint_and_complete() {
        let data = six_class_dataset();
        let a = device_rounds(&data, 2, 0).unwrap();
        let b = device_rounds(&data, 2, 1).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(b.len(), 2);
        let rounds = data.rounds().unwrap();
        for (k, rd) in rounds[1..].iter().enumerate() {
            let mut together = a[k].class_ids.clone();
            together.extend(&b[k].class_ids);
            together.sort_unstable();
            let mut expect = rd.class_ids.clone();
            expect.sort_unstable();
            assert_eq!(together, expect, "round {} classes split without loss", rd.round);
            assert!(a[k].class_ids.iter().all(|c| !b[k].class_ids.contains(c)));

            let mut train = a[k].train.clone();
            train.extend(&b[k].train);
            train.sort_unstable();
            let mut expect = rd.train.clone();
            expect.sort_unstable();
            assert_eq!(train, expect, "round {} train rows split without loss", rd.round);
        }
        // each row actually belongs to its device's classes
        for dr in a.iter().chain(&b) {
            for &i in dr.train.iter().chain(&dr.test) {
                let c = data.classes.encode(&data.records[i].class).unwrap();
                assert!(dr.class_ids.contains(&c));
            }
        }
    }

    #[test]
    fn fleet_wider_than_the_narrowest_round_is_refused() {
        let data = six_class_dataset();
        assert!(matches!(device_rounds(&data, 3, 2), Err(Error::Config(_))));
        assert!(matches!(
            run_global(&data, &quick_config(3)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn exchange_merges_disjoint_domains() {
        // four classes per post-bootstrap round: every device's head grows
        // to width 4, wide enough for its confident predictions to outrank
        // the two-class bootstrap head in the unified score space
        let data = dataset(
            &[
                "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota",
                "kappa",
            ],
            vec![
                vec!["alpha".into(), "beta".into()],
                vec!["gamma".into(), "delta".into(), "epsilon".into(), "zeta".into()],
                vec!["eta".into(), "theta".into(), "iota".into(), "kappa".into()],
            ],
        );
        // width-4 device heads need the post-plateau budget: at 2e-3 a fresh
        // head on frozen features stalls at chance for this schedule, and
        // routing between the two domain experts needs each one trained to a
        // saturated one-hot on its own classes
        let mut cfg = quick_config(2);
        cfg.spec.epochs = 25;
        cfg.spec.lr = 1e-2;
        cfg.spec.rehearsal_fraction = 0.5;
        let out = run_global(&data, &cfg).unwrap();

        assert_eq!(out.report.nodes.len(), 2);
        assert_eq!(out.report.rounds, 3);
        assert_eq!(out.bundle.len(), 5, "bootstrap plus two devices times two rounds");
        assert!(out.backbone.is_frozen());
        assert_eq!(out.bundle.fingerprint(), fingerprint(&out.backbone));
        assert_eq!(out.submissions.len(), 4);
        assert!(out.submissions.iter().all(|s| s.outcome == "accepted"));

        let [a, b] = &out.report.nodes[..] else { panic!("two nodes") };
        assert!(a.classes.iter().all(|c| !b.classes.contains(c)), "domains stay disjoint");
        for node in [a, b] {
            assert_eq!(node.classes.len(), 4);
            assert_eq!(node.rounds.len(), 2);
            assert!(node.rounds.iter().all(|r| r.accepted));
            // without the exchange the device cannot name foreign classes
            assert_eq!(node.cross_before.accuracy, 0.0);
            assert!(node.cross_after.accuracy > 0.0, "merged bundle reaches foreign classes");
            assert!(node.own_after.accuracy > 0.0);
        }
    }

    #[test]
    fn reruns_are_byte_identical() {
        let data = dataset(
            &["alpha", "beta", "gamma", "delta"],
            vec![vec!["alpha".into(), "beta".into()], vec!["gamma".into(), "delta".into()]],
        );
        let cfg = quick_config(2);
        let one = run_global(&data, &cfg).unwrap();
        let two = run_global(&data, &cfg).unwrap();
        assert_eq!(
            serde_json::to_vec(&one.report).unwrap(),
            serde_json::to_vec(&two.report).unwrap()
        );
        assert_eq!(one.bundle.to_bytes(), two.bundle.to_bytes());
    }

    #[test]
    fn single_device_fleet_degenerates_to_local_learning() {
        // a three-wide device head, so its scores can beat the bootstrap's
        let data = dataset(
            &["alpha", "beta", "gamma", "delta", "epsilon"],
            vec![
                vec!["alpha".into(), "beta".into()],
                vec!["gamma".into(), "delta".into(), "epsilon".into()],
            ],
        );
        let out = run_global(&data, &quick_config(1)).unwrap();
        assert_eq!(out.report.nodes.len(), 1);
        assert_eq!(out.bundle.len(), 2);
        let node = &out.report.nodes[0];
        assert_eq!(node.classes.len(), 3);
        // no foreign domain to speak of
        assert_eq!(node.cross_before, NO_SCORES);
        assert_eq!(node.cross_after, NO_SCORES);
        assert!(node.own_after.accuracy > 0.0);
    }
}
