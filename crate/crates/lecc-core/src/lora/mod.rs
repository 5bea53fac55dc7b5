//! Low-rank adapters: per-round trainable attention deltas plus the round's
//! classification head, packaged as a distributable artifact.

pub mod artifact;
pub mod bundle;

pub use artifact::{Adapter, AdapterTargetWeights, HeadWeights};
pub use bundle::AdapterBundle;

use crate::error::{Error, Result};
use crate::model::Backbone;
use crate::nn::rng::{derive_seed, seeded};
use crate::nn::{LowRank, Matrix, Parameter, Scalar};
use serde::{Deserialize, Serialize};

/// Which attention projection a low-rank delta applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Target {
    Query,
    Value,
}

impl Target {
    pub fn tag(self) -> u8 {
        match self {
            Target::Query => 0,
            Target::Value => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Target::Query),
            1 => Ok(Target::Value),
            other => Err(Error::Format(format!("unknown adapter target tag {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::Query => "q",
            Target::Value => "v",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<Target>,
    pub init_std: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig {
            rank: 8,
            alpha: 16.0,
            targets: vec![Target::Query, Target::Value],
            init_std: 0.02,
        }
    }
}

impl LoraConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.rank == 0 || self.rank > dim {
            return Err(Error::Config(format!("rank {} invalid for dim {dim}", self.rank)));
        }
        if self.alpha <= 0.0 {
            return Err(Error::Config(format!("alpha {} must be positive", self.alpha)));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("no adapter targets selected".into()));
        }
        let mut t = self.targets.clone();
        t.sort_unstable();
        t.dedup();
        if t.len() != self.targets.len() {
            return Err(Error::Config("duplicate adapter targets".into()));
        }
        Ok(())
    }
}

/// One trainable delta: which layer and projection it patches.
#[derive(Debug, Clone)]
pub struct AdapterEntry<F: Scalar> {
    pub layer: usize,
    pub target: Target,
    pub weights: LowRank<F>,
}

/// Trainable adapter state for one round: every (layer, target) delta.
#[derive(Debug, Clone)]
pub struct AdapterWeights<F: Scalar> {
    pub entries: Vec<AdapterEntry<F>>,
    pub rank: usize,
    pub alpha: f64,
}

impl<F: Scalar> AdapterWeights<F> {
    /// Fresh adapter: `A ~ N(0, init_std^2)`, `B = 0`, one entry per
    /// (layer, target) in layer-major order.
    pub fn init(layers: usize, dim: usize, cfg: &LoraConfig, seed: u64) -> Result<Self> {
        cfg.validate(dim)?;
        let mut entries = Vec::with_capacity(layers * cfg.targets.len());
        let mut targets = cfg.targets.clone();
        targets.sort_unstable();
        for layer in 0..layers {
            for &target in &targets {
                let mut rng = seeded(derive_seed(seed, &format!("lora:{layer}:{}", target.tag())));
                entries.push(AdapterEntry {
                    layer,
                    target,
                    weights: LowRank::init(dim, dim, cfg.rank, cfg.alpha, cfg.init_std, &mut rng)?,
                });
            }
        }
        Ok(AdapterWeights { entries, rank: cfg.rank, alpha: cfg.alpha })
    }

    /// No deltas at all: the head-only case where the backbone itself was
    /// trained in the same round.
    pub fn empty(rank: usize, alpha: f64) -> Self {
        AdapterWeights { entries: Vec::new(), rank, alpha }
    }

    /// Total number of low-rank parameters (A and B matrices only).
    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|e| e.weights.param_count()).sum()
    }

    /// Simultaneous mutable access to the query and value deltas of one layer.
    pub fn layer_entries_mut(&mut self, layer: usize) -> (Option<&mut LowRank<F>>, Option<&mut LowRank<F>>) {
        let iq = self
            .entries
            .iter()
            .position(|e| e.layer == layer && e.target == Target::Query);
        let iv = self
            .entries
            .iter()
            .position(|e| e.layer == layer && e.target == Target::Value);
        match (iq, iv) {
            (Some(q), Some(v)) => {
                let (lo, hi, q_first) = if q < v { (q, v, true) } else { (v, q, false) };
                let (head, tail) = self.entries.split_at_mut(hi);
                let a = &mut head[lo].weights;
                let b = &mut tail[0].weights;
                if q_first {
                    (Some(a), Some(b))
                } else {
                    (Some(b), Some(a))
                }
            }
            (Some(q), None) => (Some(&mut self.entries[q].weights), None),
            (None, Some(v)) => (None, Some(&mut self.entries[v].weights)),
            (None, None) => (None, None),
        }
    }

    /// A then B per entry, in entry order. Stable across calls, so the list
    /// can key optimizer state.
    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        self.entries
            .iter_mut()
            .flat_map(|e| [&mut e.weights.a, &mut e.weights.b])
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.weights.a.zero_grad();
            e.weights.b.zero_grad();
        }
    }
}

/// Folds an adapter's deltas into a copy of the backbone: `W' = W + scale*a*b`
/// per target. The merged model runs adapter-free; its fingerprint changes.
pub fn merge<F: Scalar>(base: &Backbone<F>, adapter: &Adapter) -> Result<Backbone<F>> {
    let ours = crate::model::fingerprint(base);
    if adapter.backbone_fp != ours {
        return Err(Error::Incompatible {
            theirs: adapter.backbone_fp,
            ours,
        });
    }
    let mut merged = base.clone();
    for t in &adapter.targets {
        if t.layer as usize >= merged.layers() {
            return Err(Error::OutOfRange {
                what: "adapter layer",
                got: t.layer as usize,
                limit: merged.layers(),
            });
        }
        let delta: Matrix<F> = artifact::dense_delta(t, adapter.alpha as f64)?;
        let block = &mut merged.blocks[t.layer as usize];
        let p = match t.target {
            Target::Query => &mut block.attn.wq.w,
            Target::Value => &mut block.attn.wv.w,
        };
        if delta.shape() != p.value.shape() {
            return Err(Error::Dimension {
                op: "merge",
                lhs: delta.shape_str(),
                rhs: p.value.shape_str(),
            });
        }
        p.value.add_assign(&delta);
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_counts_match_shape_arithmetic() {
        // rank 8 on q and v over 2 layers of dim 64: 2*2*(8*64 + 64*8)
        let w: AdapterWeights<f32> = AdapterWeights::init(2, 64, &LoraConfig::default(), 1).unwrap();
        assert_eq!(w.param_count(), 4096);
        assert_eq!(w.entries.len(), 4);
    }

    #[test]
    fn layer_entry_lookup_returns_distinct_targets() {
        let mut w: AdapterWeights<f32> = AdapterWeights::init(2, 8, &LoraConfig::default(), 1).unwrap();
        let (q, v) = w.layer_entries_mut(1);
        let q = q.unwrap();
        let v = v.unwrap();
        q.b.value.set(0, 0, 1.0);
        v.b.value.set(0, 0, 2.0);
        assert_ne!(q.b.value.get(0, 0), v.b.value.get(0, 0));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = LoraConfig::default();
        cfg.rank = 0;
        assert!(cfg.validate(64).is_err());
        let mut cfg = LoraConfig::default();
        cfg.targets = vec![Target::Query, Target::Query];
        assert!(cfg.validate(64).is_err());
        let cfg = LoraConfig { rank: 65, ..Default::default() };
        assert!(cfg.validate(64).is_err());
    }

    #[test]
    fn doubling_alpha_doubles_the_dense_delta_exactly() {
        let mut rng = seeded(2);
        let a: Matrix<f64> = crate::nn::normal_matrix(4, 2, 0.1, &mut rng);
        let b: Matrix<f64> = crate::nn::normal_matrix(2, 4, 0.1, &mut rng);
        let lr1 = LowRank::from_parts(a.clone(), b.clone(), 8.0).unwrap();
        let lr2 = LowRank::from_parts(a, b, 16.0).unwrap();
        let d1 = lr1.dense_delta();
        let d2 = lr2.dense_delta();
        for (x, y) in d1.data().iter().zip(d2.data().iter()) {
            assert_eq!(*y, 2.0 * *x);
        }
    }

    #[test]
    fn query_only_config_leaves_value_slot_empty() {
        let cfg = LoraConfig { targets: vec![Target::Query], ..Default::default() };
        let mut w: AdapterWeights<f32> = AdapterWeights::init(1, 8, &cfg, 3).unwrap();
        let (q, v) = w.layer_entries_mut(0);
        assert!(q.is_some());
        assert!(v.is_none());
    }
}
