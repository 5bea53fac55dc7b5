//! Multi-round inference: every adapter in the bundle scores the sample, each
//! logit vector is z-score normalized so vectors from differently-calibrated
//! heads become comparable, and the per-class scores are merged into one
//! unified structure with later rounds overwriting earlier ones.

use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::lora::{AdapterBundle, AdapterWeights};
use crate::model::{self, fingerprint, Backbone, Head};
use crate::nn::Scalar;

/// Subtract the mean and divide by the population standard deviation. A
/// zero-variance vector carries no ranking information and maps to all zeros.
pub fn zscore(logits: &[f64]) -> Vec<f64> {
    let n = logits.len() as f64;
    if logits.is_empty() {
        return Vec::new();
    }
    let mean = logits.iter().sum::<f64>() / n;
    let var = logits.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return vec![0.0; logits.len()];
    }
    let sd = var.sqrt();
    logits.iter().map(|x| (x - mean) / sd).collect()
}

/// Merges per-adapter `(classes, raw logits)` pairs, given in round order,
/// into `(class, normalized score)` entries sorted by class id. A class
/// scored by several adapters keeps the score from the latest one.
pub fn aggregate_unified(parts: &[(&[ClassId], &[f64])]) -> Result<Vec<(ClassId, f64)>> {
    if parts.is_empty() {
        return Err(Error::State("no adapters to aggregate"));
    }
    let mut unified: Vec<(ClassId, f64)> = Vec::new();
    for (classes, logits) in parts {
        if classes.len() != logits.len() {
            return Err(Error::Dimension {
                op: "aggregate_unified",
                lhs: format!("{} classes", classes.len()),
                rhs: format!("{} logits", logits.len()),
            });
        }
        let normalized = zscore(logits);
        for (&class, &score) in classes.iter().zip(normalized.iter()) {
            match unified.binary_search_by_key(&class, |e| e.0) {
                Ok(i) => unified[i].1 = score,
                Err(i) => unified.insert(i, (class, score)),
            }
        }
    }
    Ok(unified)
}

/// Highest-scoring class; ties go to the lowest class id.
pub fn argmax_class(unified: &[(ClassId, f64)]) -> Result<ClassId> {
    let mut best: Option<(ClassId, f64)> = None;
    for &(class, score) in unified {
        let better = match best {
            None => true,
            Some((_, top)) => score > top,
        };
        if better {
            best = Some((class, score));
        }
    }
    best.map(|(c, _)| c).ok_or(Error::State("empty unified score structure"))
}

/// A bundle loaded for inference: runtime adapter weights and heads in round
/// order, bound to one backbone by fingerprint.
#[derive(Debug)]
pub struct BundleRuntime<F: Scalar> {
    rounds: Vec<RuntimeRound<F>>,
}

#[derive(Debug)]
struct RuntimeRound<F: Scalar> {
    weights: AdapterWeights<F>,
    head: Head<F>,
}

impl<F: Scalar> BundleRuntime<F> {
    pub fn new(bundle: &AdapterBundle, backbone: &Backbone<F>) -> Result<Self> {
        if bundle.is_empty() {
            return Err(Error::State("empty adapter bundle"));
        }
        let fp = fingerprint(backbone);
        if bundle.fingerprint() != fp {
            return Err(Error::Incompatible { theirs: bundle.fingerprint(), ours: fp });
        }
        let rounds = bundle
            .adapters()
            .iter()
            .map(|a| {
                let (weights, head) = a.runtime::<F>()?;
                Ok(RuntimeRound { weights, head })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BundleRuntime { rounds })
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// Union of classes covered by the loaded adapters, sorted.
    pub fn known_classes(&self) -> Vec<ClassId> {
        let mut all: Vec<ClassId> =
            self.rounds.iter().flat_map(|r| r.head.classes().iter().copied()).collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    /// Runs the sample through every adapter and aggregates normalized
    /// scores. Returns the predicted class and the unified score structure.
    pub fn predict(
        &mut self,
        backbone: &mut Backbone<F>,
        ids: &[u32],
    ) -> Result<(ClassId, Vec<(ClassId, f64)>)> {
        let mut per_adapter: Vec<(Vec<ClassId>, Vec<f64>)> = Vec::with_capacity(self.rounds.len());
        for round in self.rounds.iter_mut() {
            let logits = model::forward(backbone, Some(&mut round.weights), &mut round.head, ids)?;
            let raw: Vec<f64> = logits.row(0).iter().map(|v| v.as_f64()).collect();
            per_adapter.push((round.head.classes().to_vec(), raw));
        }
        let views: Vec<(&[ClassId], &[f64])> =
            per_adapter.iter().map(|(c, l)| (c.as_slice(), l.as_slice())).collect();
        let unified = aggregate_unified(&views)?;
        Ok((argmax_class(&unified)?, unified))
    }
}
