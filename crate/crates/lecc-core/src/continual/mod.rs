//! The round engine: per-round training in full-fine-tune or adapter-only
//! mode, multi-round inference over an adapter bundle, metric accounting, and
//! forgetting evaluation across rounds.

pub mod experiment;
pub mod forgetting;
pub mod metrics;
pub mod predict;

pub use experiment::{
    run_experiment, ExperimentConfig, ExperimentMode, ExperimentReport, RoundReport, RunReport,
    TrendRow,
};
pub use forgetting::{forgetting_eval, ForgettingEntry, RoundTests};
pub use metrics::{evaluate, Confusion, Scores};
pub use predict::{aggregate_unified, argmax_class, zscore, BundleRuntime};

use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::lora::{Adapter, AdapterBundle, AdapterWeights, LoraConfig};
use crate::model::{self, fingerprint, Backbone, Head};
use crate::nn::rng::{derive_seed, seeded};
use crate::nn::{cross_entropy, sc, AdamW, AdamWConfig, Scalar};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Token ids plus truth class, the unit every trainer and evaluator consumes.
pub type Sample = (Vec<u32>, ClassId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Every backbone parameter trains alongside the head.
    Full,
    /// The backbone stays frozen; only adapter and head parameters train.
    LoraOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Fraction of each earlier round's training rows mixed back in when a
    /// round's training set is assembled. Zero keeps the strict no-replay
    /// setting; the trainer itself only sees the assembled rows.
    pub rehearsal_fraction: f64,
    pub mode: TrainMode,
    pub seed: u64,
    pub lora: LoraConfig,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            epochs: 15,
            lr: 2e-5,
            batch_size: 16,
            rehearsal_fraction: 0.0,
            mode: TrainMode::LoraOnly,
            seed: 0,
            lora: LoraConfig::default(),
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 4 {
            return Err(Error::Config(format!("epochs {} below the minimum of 4", self.epochs)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.rehearsal_fraction) {
            return Err(Error::Config(format!(
                "rehearsal fraction {} outside [0, 1)",
                self.rehearsal_fraction
            )));
        }
        Ok(())
    }
}

/// Progress across rounds: the next round id, the cumulative class set, and
/// the adapter bundle built so far.
#[derive(Debug, Clone)]
pub struct RoundState {
    next_round: u32,
    known: Vec<ClassId>,
    bundle: AdapterBundle,
}

impl RoundState {
    pub fn new(fingerprint: u32) -> Self {
        RoundState { next_round: 0, known: Vec::new(), bundle: AdapterBundle::new(fingerprint) }
    }

    /// Rebuilds state from an existing bundle: the next round follows the
    /// last bundled one, known classes are the union over all adapters.
    pub fn resume(bundle: AdapterBundle) -> Self {
        let next_round = bundle.last_round().map_or(0, |r| r + 1);
        let mut known: Vec<ClassId> =
            bundle.adapters().iter().flat_map(|a| a.classes.iter().copied()).collect();
        known.sort_unstable();
        known.dedup();
        RoundState { next_round, known, bundle }
    }

    /// Fresh state that joins an ongoing schedule at `next_round`: no known
    /// classes yet, rounds stamped with globally meaningful ids. Used by
    /// devices whose round 0 happened elsewhere.
    pub fn starting_at(fingerprint: u32, next_round: u32) -> Self {
        RoundState { next_round, known: Vec::new(), bundle: AdapterBundle::new(fingerprint) }
    }

    /// Id of the round that will train next.
    pub fn round(&self) -> u32 {
        self.next_round
    }

    pub fn known(&self) -> &[ClassId] {
        &self.known
    }

    pub fn bundle(&self) -> &AdapterBundle {
        &self.bundle
    }

    pub fn into_bundle(self) -> AdapterBundle {
        self.bundle
    }

    fn advance(&mut self, classes: &[ClassId], adapter: Option<Adapter>) -> Result<()> {
        if let Some(a) = adapter {
            self.bundle.push(a)?;
        }
        self.known.extend_from_slice(classes);
        self.known.sort_unstable();
        self.known.dedup();
        self.next_round += 1;
        Ok(())
    }
}

/// Training metrics for one recorded epoch: mean training loss plus
/// validation scores with the confusion matrix they derive from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub scores: Scores,
    pub confusion: Confusion,
}

/// What a round leaves behind: a serializable adapter when the backbone was
/// frozen, otherwise the new head for the updated backbone.
#[derive(Debug)]
pub enum RoundArtifact<F: Scalar> {
    Adapter(Adapter),
    Head(Head<F>),
}

#[derive(Debug)]
pub struct RoundOutcome<F: Scalar> {
    pub artifact: RoundArtifact<F>,
    pub epochs: Vec<EpochMetrics>,
}

/// Epochs whose validation metrics are recorded: 1, 2, 5, 10, 15 where they
/// fit, and always the final epoch.
pub fn checkpoint_epochs(total: usize) -> Vec<usize> {
    let mut out: Vec<usize> = [1, 2, 5, 10, 15].into_iter().filter(|&e| e <= total).collect();
    if !out.contains(&total) {
        out.push(total);
    }
    out
}

fn class_index<F: Scalar>(head: &Head<F>, label: ClassId) -> Result<usize> {
    head.classes()
        .binary_search(&label)
        .map_err(|_| Error::Label(format!("class {label} not covered by the head")))
}

/// Argmax over a single-row logit matrix; ties keep the first (lowest) class.
fn head_predict<F: Scalar>(
    backbone: &mut Backbone<F>,
    adapter: Option<&mut AdapterWeights<F>>,
    head: &mut Head<F>,
    ids: &[u32],
) -> Result<ClassId> {
    let logits = model::forward(backbone, adapter, head, ids)?;
    let row = logits.row(0);
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    Ok(head.classes()[best])
}

/// Trains one round on the given samples and advances `state`.
///
/// Full mode updates every backbone parameter plus a fresh head covering the
/// cumulative class set. Adapter-only mode requires a frozen backbone whose
/// fingerprint matches the bundle, trains exactly the adapter and head
/// parameters, and emits a serializable adapter; the fingerprint is checked
/// again afterwards so any write to the backbone surfaces as an error.
///
/// The configured learning rate is the peak of an epoch-level cosine decay
/// ending at 5% of it: fresh heads on a frozen backbone need a large early
/// step to break out of the uniform-logit plateau, and a small late step to
/// settle instead of oscillating.
///
/// Validation runs at the checkpoint epochs; `label_space` sizes the
/// confusion matrices (the full label-codec width, not just known classes).
pub fn train_round<F: Scalar>(
    backbone: &mut Backbone<F>,
    train: &[Sample],
    validation: &[Sample],
    label_space: usize,
    spec: &TrainSpec,
    state: &mut RoundState,
) -> Result<RoundOutcome<F>> {
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::Data("round has no training samples".into()));
    }
    if validation.is_empty() {
        return Err(Error::Data("round has no validation samples".into()));
    }
    let mut new_classes: Vec<ClassId> = train.iter().map(|(_, c)| *c).collect();
    new_classes.sort_unstable();
    new_classes.dedup();
    new_classes.retain(|c| !state.known.contains(c));
    if new_classes.is_empty() {
        return Err(Error::Data(format!("round {} introduces no new class", state.round())));
    }
    let mut head_classes = state.known.clone();
    head_classes.extend_from_slice(&new_classes);
    head_classes.sort_unstable();

    let round = state.round();
    let mut adapter: Option<AdapterWeights<F>> = match spec.mode {
        TrainMode::Full => {
            if backbone.is_frozen() {
                return Err(Error::State("full fine-tune requires a trainable backbone"));
            }
            None
        }
        TrainMode::LoraOnly => {
            if !backbone.is_frozen() {
                return Err(Error::State("adapter training requires a frozen backbone"));
            }
            let fp = fingerprint(backbone);
            if state.bundle.fingerprint() != fp {
                return Err(Error::Incompatible { theirs: state.bundle.fingerprint(), ours: fp });
            }
            Some(AdapterWeights::init(
                backbone.layers(),
                backbone.dim(),
                &spec.lora,
                derive_seed(spec.seed, &format!("adapter:{round}")),
            )?)
        }
    };
    let fp_before = fingerprint(backbone);
    let mut head =
        Head::init(backbone.dim(), &head_classes, derive_seed(spec.seed, &format!("head:{round}")))?;

    let mut opt: AdamW<F> = AdamW::new(AdamWConfig { lr: spec.lr, ..Default::default() });
    let checkpoints = checkpoint_epochs(spec.epochs);
    let mut recorded = Vec::with_capacity(checkpoints.len());
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=spec.epochs {
        let progress = if spec.epochs > 1 {
            (epoch - 1) as f64 / (spec.epochs - 1) as f64
        } else {
            0.0
        };
        opt.set_lr(spec.lr * (0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())));
        let mut rng = seeded(derive_seed(spec.seed, &format!("shuffle:{round}:{epoch}")));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(spec.batch_size) {
            backbone.zero_grad();
            head.zero_grad();
            if let Some(a) = adapter.as_mut() {
                a.zero_grad();
            }
            let inv: F = sc(1.0 / batch.len() as f64);
            for &i in batch {
                let (ids, label) = &train[i];
                let logits = model::forward(backbone, adapter.as_mut(), &mut head, ids)?;
                let target = class_index(&head, *label)?;
                let (loss, mut dlogits) = cross_entropy(&logits, &[target])?;
                dlogits.scale(inv);
                model::backward(backbone, adapter.as_mut(), &mut head, &dlogits)?;
                epoch_loss += loss.as_f64();
            }
            match adapter.as_mut() {
                None => {
                    let mut params = backbone.params_mut();
                    params.extend(head.params_mut());
                    opt.step(&mut params)?;
                }
                Some(a) => {
                    let mut params = a.params_mut();
                    params.extend(head.params_mut());
                    opt.step(&mut params)?;
                }
            }
        }
        if checkpoints.contains(&epoch) {
            let confusion = metrics::evaluate(
                |ids| head_predict(backbone, adapter.as_mut(), &mut head, ids),
                validation,
                label_space,
            )?;
            let scores = confusion.scores(&head_classes)?;
            recorded.push(EpochMetrics {
                epoch,
                loss: epoch_loss / train.len() as f64,
                scores,
                confusion,
            });
        }
    }

    let artifact = match adapter {
        None => {
            state.advance(&new_classes, None)?;
            RoundArtifact::Head(head)
        }
        Some(weights) => {
            let fp_after = fingerprint(backbone);
            if fp_after != fp_before {
                return Err(Error::State("backbone changed during adapter training"));
            }
            let artifact = Adapter::from_training(round, &weights, &head, fp_after)?;
            state.advance(&new_classes, Some(artifact.clone()))?;
            RoundArtifact::Adapter(artifact)
        }
    };
    Ok(RoundOutcome { artifact, epochs: recorded })
}
