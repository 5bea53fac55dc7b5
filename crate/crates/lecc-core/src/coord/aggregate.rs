//! Merging submitted adapters into the shared bundle, and the holdout gate
//! that keeps degrading submissions out.
//!
//! Placement is canonical: within a round, adapters sit sorted by their first
//! covered class, so the merged bundle's bytes do not depend on submission
//! arrival order. The gate compares each candidate against the bundle
//! restricted to earlier rounds only, which keeps accept decisions for
//! same-round siblings independent of each other.

use crate::continual::{evaluate, BundleRuntime, Sample};
use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::lora::{Adapter, AdapterBundle};
use crate::model::Backbone;

/// Where a validated submission lands in the bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// New disjoint coverage: insert at this index.
    Insert(usize),
    /// Same round, identical class set: replace the artifact at this index
    /// with a consolidated average.
    Consolidate(usize),
}

/// Decides how a candidate combines with the current bundle: disjoint class
/// sets join it, an identical class set consolidates, and anything in
/// between is ambiguous and refused.
pub fn placement(bundle: &AdapterBundle, candidate: &Adapter) -> Result<Placement> {
    if candidate.backbone_fp != bundle.fingerprint() {
        return Err(Error::Incompatible {
            theirs: candidate.backbone_fp,
            ours: bundle.fingerprint(),
        });
    }
    for (i, peer) in bundle.adapters().iter().enumerate() {
        if peer.round != candidate.round {
            continue;
        }
        if peer.classes == candidate.classes {
            return Ok(Placement::Consolidate(i));
        }
        if peer.classes.iter().any(|c| candidate.classes.contains(c)) {
            return Err(Error::Rejected("ambiguous-overlap".into()));
        }
    }
    let key = |a: &Adapter| (a.round, a.classes.first().copied().unwrap_or(0));
    let at = bundle.adapters().partition_point(|p| key(p) <= key(candidate));
    Ok(Placement::Insert(at))
}

/// Rebuilds the bundle with the artifact placed, re-validating every
/// invariant on the way.
pub fn integrated(
    bundle: &AdapterBundle,
    artifact: Adapter,
    place: Placement,
) -> Result<AdapterBundle> {
    let mut list = bundle.adapters().to_vec();
    match place {
        Placement::Insert(i) => list.insert(i, artifact),
        Placement::Consolidate(i) => list[i] = artifact,
    }
    AdapterBundle::from_adapters(bundle.fingerprint(), list)
}

/// Element-wise mean of same-shaped adapters: every A, every B, the head
/// weight, and the head bias. The result is a fresh artifact for the same
/// round and class set.
pub fn average(group: &[Adapter]) -> Result<Adapter> {
    let first = group.first().ok_or(Error::State("nothing to average"))?;
    for other in &group[1..] {
        compatible(first, other)?;
    }
    let mut out = first.clone();
    for other in &group[1..] {
        for (t, o) in out.targets.iter_mut().zip(&other.targets) {
            t.a.add_assign(&o.a);
            t.b.add_assign(&o.b);
        }
        out.head.weight.add_assign(&other.head.weight);
        out.head.bias.add_assign(&other.head.bias);
    }
    let inv = 1.0 / group.len() as f32;
    for t in &mut out.targets {
        t.a.scale(inv);
        t.b.scale(inv);
    }
    out.head.weight.scale(inv);
    out.head.bias.scale(inv);
    Ok(out)
}

/// Averaging requires agreement on everything except the learned values.
fn compatible(a: &Adapter, b: &Adapter) -> Result<()> {
    if a.backbone_fp != b.backbone_fp {
        return Err(Error::Incompatible { theirs: b.backbone_fp, ours: a.backbone_fp });
    }
    let same = a.round == b.round
        && a.classes == b.classes
        && a.rank == b.rank
        && a.alpha == b.alpha
        && a.targets.len() == b.targets.len()
        && a.targets.iter().zip(&b.targets).all(|(x, y)| {
            x.layer == y.layer
                && x.target == y.target
                && x.a.shape() == y.a.shape()
                && x.b.shape() == y.b.shape()
        })
        && a.head.weight.shape() == b.head.weight.shape();
    if !same {
        return Err(Error::Rejected("mismatched-adapter-structure".into()));
    }
    Ok(())
}

/// Macro F1 of a bundle on the given rows, averaged over `scope` classes.
pub fn bundle_macro_f1(
    backbone: &mut Backbone<f32>,
    bundle: &AdapterBundle,
    rows: &[Sample],
    scope: &[ClassId],
    label_space: usize,
) -> Result<f64> {
    let mut runtime = BundleRuntime::new(bundle, backbone)?;
    let confusion =
        evaluate(|ids| runtime.predict(backbone, ids).map(|(c, _)| c), rows, label_space)?;
    Ok(confusion.scores(scope)?.f1)
}

/// Accepts a candidate only if holdout macro F1 over the classes known
/// before the candidate's round does not drop by more than `epsilon`.
#[derive(Debug, Clone)]
pub struct ValidationGate {
    pub holdout: Vec<Sample>,
    pub epsilon: f64,
    pub label_space: usize,
}

impl ValidationGate {
    pub const DEFAULT_EPSILON: f64 = 0.02;

    pub fn new(holdout: Vec<Sample>, epsilon: f64, label_space: usize) -> Self {
        ValidationGate { holdout, epsilon, label_space }
    }

    /// A gate with no holdout accepts everything, as does epsilon 1.0.
    pub fn permissive(label_space: usize) -> Self {
        ValidationGate { holdout: Vec::new(), epsilon: 1.0, label_space }
    }

    /// The baseline is the bundle restricted to rounds before the
    /// candidate's, so the verdict does not depend on which same-round
    /// sibling happened to arrive first.
    pub fn check(
        &self,
        backbone: &mut Backbone<f32>,
        current: &AdapterBundle,
        candidate: &Adapter,
    ) -> Result<()> {
        if self.holdout.is_empty() {
            return Ok(());
        }
        let prior: Vec<Adapter> = current
            .adapters()
            .iter()
            .filter(|a| a.round < candidate.round)
            .cloned()
            .collect();
        if prior.is_empty() {
            return Ok(());
        }
        let mut scope: Vec<ClassId> =
            prior.iter().flat_map(|a| a.classes.iter().copied()).collect();
        scope.sort_unstable();
        scope.dedup();
        let fp = current.fingerprint();
        let before_bundle = AdapterBundle::from_adapters(fp, prior.clone())?;
        let before =
            bundle_macro_f1(backbone, &before_bundle, &self.holdout, &scope, self.label_space)?;
        let mut with_candidate = prior;
        with_candidate.push(candidate.clone());
        let after_bundle = AdapterBundle::from_adapters(fp, with_candidate)?;
        let after =
            bundle_macro_f1(backbone, &after_bundle, &self.holdout, &scope, self.label_space)?;
        if before - after > self.epsilon {
            return Err(Error::Rejected("holdout-degradation".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lora::artifact::dense_delta;
    use crate::lora::{AdapterWeights, LoraConfig};
    use crate::model::{fingerprint, Backbone, BackboneConfig, Head};
    use crate::nn::rng::{normal_matrix, seeded};
    use crate::nn::Matrix;

    fn tiny_backbone() -> Backbone<f32> {
        let cfg = BackboneConfig {
            layers: 1,
            dim: 4,
            heads: 2,
            ff: 6,
            vocab: 8,
            max_len: 4,
            seed: 3,
        };
        Backbone::init(cfg).unwrap()
    }

    /// Head with zero weights and a fixed bias: the same logits for every
    /// input, which makes gate outcomes exactly predictable.
    fn constant_adapter(round: u32, classes: &[u16], bias: &[f32], fp: u32) -> Adapter {
        let weight = Matrix::zeros(4, classes.len());
        let bias = Matrix::from_vec(1, classes.len(), bias.to_vec()).unwrap();
        let head = Head::from_parts(weight, bias, classes.to_vec()).unwrap();
        let w = AdapterWeights::<f32>::empty(2, 4.0);
        Adapter::from_training(round, &w, &head, fp).unwrap()
    }

    fn lora_adapter(round: u32, classes: &[u16], seed: u64, fp: u32) -> Adapter {
        let cfg = LoraConfig { rank: 2, ..Default::default() };
        let mut w: AdapterWeights<f32> = AdapterWeights::init(1, 4, &cfg, seed).unwrap();
        let mut rng = seeded(seed + 1000);
        for e in &mut w.entries {
            e.weights.b.value = normal_matrix(2, 4, 0.05, &mut rng);
        }
        let head = Head::init(4, classes, seed).unwrap();
        Adapter::from_training(round, &w, &head, fp).unwrap()
    }

    fn holdout_rows(classes: &[u16], per_class: usize) -> Vec<Sample> {
        let mut rows = Vec::new();
        for (i, &c) in classes.iter().enumerate() {
            for j in 0..per_class {
                rows.push((vec![2, (1 + i) as u32, (1 + j) as u32 % 8], c));
            }
        }
        rows
    }

    #[test]
    fn disjoint_submissions_insert_in_canonical_order() {
        let fp = 9;
        let mut bundle = AdapterBundle::new(fp);
        bundle.push(lora_adapter(0, &[0, 1], 1, fp)).unwrap();

        let late_first = lora_adapter(1, &[4, 5], 2, fp);
        let place = placement(&bundle, &late_first).unwrap();
        assert_eq!(place, Placement::Insert(1));
        let bundle = integrated(&bundle, late_first, place).unwrap();

        // arrives second but covers earlier class ids: lands before [4, 5]
        let early_second = lora_adapter(1, &[2, 3], 3, fp);
        let place = placement(&bundle, &early_second).unwrap();
        assert_eq!(place, Placement::Insert(1));
        let merged = integrated(&bundle, early_second, place).unwrap();

        let firsts: Vec<u16> = merged.adapters().iter().map(|a| a.classes[0]).collect();
        assert_eq!(firsts, vec![0, 2, 4]);

        // byte output is independent of arrival order
        let mut other = AdapterBundle::new(fp);
        other.push(lora_adapter(0, &[0, 1], 1, fp)).unwrap();
        let a = lora_adapter(1, &[2, 3], 3, fp);
        let p = placement(&other, &a).unwrap();
        let other = integrated(&other, a, p).unwrap();
        let b = lora_adapter(1, &[4, 5], 2, fp);
        let p = placement(&other, &b).unwrap();
        let other = integrated(&other, b, p).unwrap();
        assert_eq!(other.to_bytes(), merged.to_bytes());
    }

    #[test]
    fn identical_class_sets_consolidate_and_partial_overlap_is_refused() {
        let fp = 9;
        let mut bundle = AdapterBundle::new(fp);
        bundle.push(lora_adapter(1, &[0, 1], 1, fp)).unwrap();

        let twin = lora_adapter(1, &[0, 1], 2, fp);
        assert_eq!(placement(&bundle, &twin).unwrap(), Placement::Consolidate(0));

        let partial = lora_adapter(1, &[1, 2], 3, fp);
        match placement(&bundle, &partial) {
            Err(Error::Rejected(reason)) => assert_eq!(reason, "ambiguous-overlap"),
            other => panic!("expected ambiguous-overlap, got {other:?}"),
        }

        let foreign = lora_adapter(1, &[4, 5], 4, 1234);
        assert!(matches!(placement(&bundle, &foreign), Err(Error::Incompatible { .. })));
    }

    #[test]
    fn average_is_the_element_wise_mean() {
        let fp = 9;
        let a = lora_adapter(2, &[0, 1], 10, fp);
        let b = lora_adapter(2, &[0, 1], 20, fp);
        let mean = average(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(mean.round, 2);
        assert_eq!(mean.classes, vec![0, 1]);
        for ((m, x), y) in mean.targets.iter().zip(&a.targets).zip(&b.targets) {
            for k in 0..m.a.data().len() {
                let want = (x.a.data()[k] + y.a.data()[k]) / 2.0;
                assert_eq!(m.a.data()[k], want);
            }
            for k in 0..m.b.data().len() {
                let want = (x.b.data()[k] + y.b.data()[k]) / 2.0;
                assert_eq!(m.b.data()[k], want);
            }
        }
        let wm = &mean.head.weight;
        let want = (a.head.weight.get(1, 1) + b.head.weight.get(1, 1)) / 2.0;
        assert_eq!(wm.get(1, 1), want);

        // averaging an adapter with itself is the identity
        let same = average(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(same, a);
    }

    #[test]
    fn average_refuses_structural_mismatches() {
        let fp = 9;
        let a = lora_adapter(2, &[0, 1], 10, fp);
        let other_classes = lora_adapter(2, &[0, 2], 11, fp);
        assert!(average(&[a.clone(), other_classes]).is_err());
        let other_round = lora_adapter(3, &[0, 1], 12, fp);
        assert!(average(&[a.clone(), other_round]).is_err());
        let cfg = LoraConfig { rank: 3, ..Default::default() };
        let w: AdapterWeights<f32> = AdapterWeights::init(1, 4, &cfg, 13).unwrap();
        let head = Head::init(4, &[0, 1], 13).unwrap();
        let other_rank = Adapter::from_training(2, &w, &head, fp).unwrap();
        assert!(average(&[a, other_rank]).is_err());
        assert!(average(&[]).is_err());
    }

    #[test]
    fn averaged_factors_do_not_average_the_product() {
        // mean(B1 A1, B2 A2) and mean(B)(mean A) disagree except in
        // degenerate cases, so consolidation must keep factors, not products
        let fp = 9;
        let a = lora_adapter(2, &[0, 1], 31, fp);
        let b = lora_adapter(2, &[0, 1], 47, fp);
        let mean = average(&[a.clone(), b.clone()]).unwrap();
        for i in 0..mean.targets.len() {
            let of_mean: Matrix<f64> = dense_delta(&mean.targets[i], mean.alpha as f64).unwrap();
            let da: Matrix<f64> = dense_delta(&a.targets[i], a.alpha as f64).unwrap();
            let db: Matrix<f64> = dense_delta(&b.targets[i], b.alpha as f64).unwrap();
            let mut mean_of = da;
            mean_of.add_assign(&db);
            mean_of.scale(0.5);
            assert!(
                of_mean.max_abs_diff(&mean_of) > 1e-6,
                "target {i}: products coincide, the test lost its teeth"
            );
        }
    }

    #[test]
    fn gate_accepts_until_prior_classes_degrade() {
        let mut backbone = tiny_backbone();
        let fp = fingerprint(&backbone);
        let mut bundle = AdapterBundle::new(fp);
        // always predicts class 0 among [0, 1, 2]
        bundle.push(constant_adapter(0, &[0, 1, 2], &[5.0, 0.0, 0.0], fp)).unwrap();
        let gate = ValidationGate::new(holdout_rows(&[0, 1, 2], 2), 0.02, 7);

        // candidate covering fresh classes with a weaker constant score
        // leaves every prior prediction alone
        let harmless = constant_adapter(1, &[3, 4], &[5.0, 0.0], fp);
        gate.check(&mut backbone, &bundle, &harmless).unwrap();

        // a 4-class one-hot z-scores above the prior's 3-class one-hot, so
        // it hijacks every row and prior macro F1 collapses
        let hijack = constant_adapter(1, &[3, 4, 5, 6], &[9.0, 0.0, 0.0, 0.0], fp);
        match gate.check(&mut backbone, &bundle, &hijack) {
            Err(Error::Rejected(reason)) => assert_eq!(reason, "holdout-degradation"),
            other => panic!("expected holdout-degradation, got {other:?}"),
        }

        // epsilon 1.0 tolerates any drop
        let lax = ValidationGate::new(holdout_rows(&[0, 1, 2], 2), 1.0, 7);
        lax.check(&mut backbone, &bundle, &hijack).unwrap();

        // no holdout means no gate
        let open = ValidationGate::permissive(7);
        open.check(&mut backbone, &bundle, &hijack).unwrap();
    }

    #[test]
    fn gate_accepts_zero_delta_resubmission_of_the_same_head() {
        let mut backbone = tiny_backbone();
        let fp = fingerprint(&backbone);
        let prior = constant_adapter(0, &[0, 1, 2], &[5.0, 0.0, 0.0], fp);
        let mut bundle = AdapterBundle::new(fp);
        bundle.push(prior.clone()).unwrap();
        let gate = ValidationGate::new(holdout_rows(&[0, 1, 2], 2), 0.02, 7);

        // fresh-round adapter whose low-rank B is zero and whose head equals
        // the prior head: behavior is unchanged, so the gate lets it through
        let cfg = LoraConfig { rank: 2, ..Default::default() };
        let w: AdapterWeights<f32> = AdapterWeights::init(1, 4, &cfg, 77).unwrap();
        let head = Head::from_parts(
            prior.head.weight.cast(),
            prior.head.bias.cast(),
            prior.classes.clone(),
        )
        .unwrap();
        let zero_delta = Adapter::from_training(1, &w, &head, fp).unwrap();
        assert!(zero_delta.targets.iter().all(|t| t.b.max_abs() == 0.0));
        gate.check(&mut backbone, &bundle, &zero_delta).unwrap();
    }

    #[test]
    fn gate_passes_first_round_unconditionally() {
        let mut backbone = tiny_backbone();
        let fp = fingerprint(&backbone);
        let bundle = AdapterBundle::new(fp);
        let gate = ValidationGate::new(holdout_rows(&[0, 1], 2), 0.0, 7);
        let first = constant_adapter(0, &[0, 1], &[1.0, 0.0], fp);
        gate.check(&mut backbone, &bundle, &first).unwrap();
    }
}
