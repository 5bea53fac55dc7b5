//! Encoder-classifier backbone: embeddings, post-norm transformer blocks,
//! CLS pooling, and per-round classification heads.
//!
//! The backbone is the shared, eventually frozen part; heads and low-rank
//! adapter deltas are the per-round trainable parts. Forward trims trailing
//! PAD before running the blocks; interior PAD positions stay masked out of
//! attention, so logits are unchanged by padding either way.

pub mod checkpoint;

pub use checkpoint::{fingerprint, load_backbone, save_backbone};

use crate::data::text::PAD_ID;
use crate::error::{Error, Result};
use crate::lora::AdapterWeights;
use crate::nn::rng::{derive_seed, normal_matrix, seeded};
use crate::nn::{
    Embedding, FeedForward, LayerNorm, Linear, Matrix, MultiHeadAttention, Parameter, Scalar,
};
use serde::{Deserialize, Serialize};

/// Initialization scale for sublayer weight matrices; norms start at identity.
pub const INIT_STD: f64 = 0.02;

/// Initialization scale for the token and position tables. Larger than the
/// sublayer scale on purpose: once the backbone freezes, tokens that never
/// appeared in the bootstrap round keep their initial embeddings forever, and
/// adapters can only separate classes whose tokens were distinguishable to
/// begin with. At 0.02 the frozen stack collapses unseen tokens to nearly
/// identical CLS vectors and head gradients cancel on balanced batches.
pub const EMBED_STD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ff: usize,
    pub vocab: usize,
    pub max_len: usize,
    pub seed: u64,
}

/// Capacity presets, ordered smallest to largest. Each scales layers and
/// width together with the feed-forward width fixed at twice the model width.
pub const PRESET_NAMES: [&str; 3] = ["tinyt5", "distilgpt2", "distilbert"];

impl BackboneConfig {
    /// Desk-scale default: 2 layers, width 64, 4 heads, feed-forward 128.
    pub fn new(vocab: usize, max_len: usize, seed: u64) -> Self {
        BackboneConfig {
            layers: 2,
            dim: 64,
            heads: 4,
            ff: 128,
            vocab,
            max_len,
            seed,
        }
    }

    pub fn preset(name: &str, vocab: usize, max_len: usize, seed: u64) -> Result<Self> {
        let (layers, dim, heads) = match name {
            "tinyt5" => (2, 64, 4),
            "distilgpt2" => (3, 128, 8),
            "distilbert" => (6, 384, 8),
            other => {
                return Err(Error::Config(format!(
                    "unknown model preset {other:?}, expected one of {PRESET_NAMES:?}"
                )))
            }
        };
        Ok(BackboneConfig {
            layers,
            dim,
            heads,
            ff: 2 * dim,
            vocab,
            max_len,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.dim == 0 || self.heads == 0 || self.ff == 0 {
            return Err(Error::Config("layers, dim, heads, and ff must be positive".into()));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.vocab < 3 {
            return Err(Error::Config(format!(
                "vocab {} too small for the reserved PAD/UNK/CLS ids",
                self.vocab
            )));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        // checkpoint fields are fixed-width
        let u16_max = u16::MAX as usize;
        if self.layers > u16_max
            || self.dim > u16_max
            || self.heads > u16_max
            || self.ff > u16_max
            || self.max_len > u16_max
        {
            return Err(Error::Config("dimension exceeds checkpoint field width".into()));
        }
        if self.vocab > u32::MAX as usize {
            return Err(Error::Config("vocab exceeds checkpoint field width".into()));
        }
        Ok(())
    }

    /// Total backbone parameter count from the shapes alone.
    pub fn param_count(&self) -> usize {
        let (l, d, f) = (self.layers, self.dim, self.ff);
        self.vocab * d + self.max_len * d + l * (4 * d * d + 2 * d * f + 4 * d)
    }
}

/// One post-norm transformer block: attention and feed-forward sublayers,
/// each wrapped as `norm(x + sublayer(x))`.
#[derive(Debug, Clone)]
pub struct Block<F: Scalar> {
    pub attn: MultiHeadAttention<F>,
    pub ln1: LayerNorm<F>,
    pub ff: FeedForward<F>,
    pub ln2: LayerNorm<F>,
}

impl<F: Scalar> Block<F> {
    fn forward(
        &mut self,
        x: &Matrix<F>,
        pad: &[bool],
        lora_q: Option<&mut crate::nn::LowRank<F>>,
        lora_v: Option<&mut crate::nn::LowRank<F>>,
    ) -> Result<Matrix<F>> {
        let a = self.attn.forward(x, pad, lora_q, lora_v)?;
        let mut h = x.clone();
        h.add_assign(&a);
        let h1 = self.ln1.forward(&h)?;
        let f = self.ff.forward(&h1)?;
        let mut h2 = h1.clone();
        h2.add_assign(&f);
        self.ln2.forward(&h2)
    }

    fn backward(
        &mut self,
        upstream: &Matrix<F>,
        lora_q: Option<&mut crate::nn::LowRank<F>>,
        lora_v: Option<&mut crate::nn::LowRank<F>>,
    ) -> Result<Matrix<F>> {
        let d2 = self.ln2.backward(upstream)?;
        let mut dh1 = self.ff.backward(&d2)?;
        dh1.add_assign(&d2);
        let d1 = self.ln1.backward(&dh1)?;
        let mut dx = self.attn.backward(&d1, lora_q, lora_v)?;
        dx.add_assign(&d1);
        Ok(dx)
    }
}

#[derive(Debug, Clone)]
pub struct Backbone<F: Scalar> {
    config: BackboneConfig,
    pub embedding: Embedding<F>,
    pub blocks: Vec<Block<F>>,
    frozen: bool,
    last_seq: Option<usize>,
}

impl<F: Scalar> Backbone<F> {
    /// Deterministic initialization: one derived stream per backbone, weights
    /// drawn in declaration order.
    pub fn init(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(derive_seed(config.seed, "backbone"));
        let embedding =
            Embedding::new(config.vocab, config.max_len, config.dim, EMBED_STD, &mut rng);
        let mut blocks = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            blocks.push(Block {
                attn: MultiHeadAttention::new(config.dim, config.heads, INIT_STD, true, &mut rng)?,
                ln1: LayerNorm::new(config.dim, true),
                ff: FeedForward::new(config.dim, config.ff, INIT_STD, true, &mut rng),
                ln2: LayerNorm::new(config.dim, true),
            });
        }
        Ok(Backbone {
            config,
            embedding,
            blocks,
            frozen: false,
            last_seq: None,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn layers(&self) -> usize {
        self.config.layers
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Freezing marks every backbone parameter non-trainable (and drops any
    /// pending gradients); adapters and heads stay independent.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
        for p in self.params_mut() {
            p.set_trainable(!frozen);
        }
    }

    /// All parameters in declaration order: token, position, then per block
    /// `wq wk wv wo ln1 ff ln2`. Checkpoint layout and optimizer state both
    /// key off this order.
    pub fn params(&self) -> Vec<&Parameter<F>> {
        let mut out = vec![&self.embedding.token, &self.embedding.position];
        for b in &self.blocks {
            out.push(&b.attn.wq.w);
            out.push(&b.attn.wk.w);
            out.push(&b.attn.wv.w);
            out.push(&b.attn.wo.w);
            out.push(&b.ln1.gain);
            out.push(&b.ln1.bias);
            out.push(&b.ff.w1.w);
            out.push(&b.ff.w2.w);
            out.push(&b.ln2.gain);
            out.push(&b.ln2.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut out: Vec<&mut Parameter<F>> = Vec::with_capacity(2 + 10 * self.blocks.len());
        out.push(&mut self.embedding.token);
        out.push(&mut self.embedding.position);
        for b in &mut self.blocks {
            out.push(&mut b.attn.wq.w);
            out.push(&mut b.attn.wk.w);
            out.push(&mut b.attn.wv.w);
            out.push(&mut b.attn.wo.w);
            out.push(&mut b.ln1.gain);
            out.push(&mut b.ln1.bias);
            out.push(&mut b.ff.w1.w);
            out.push(&mut b.ff.w2.w);
            out.push(&mut b.ln2.gain);
            out.push(&mut b.ln2.bias);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Hidden states for one tokenized sample, shape `seq x dim`. Trailing
    /// PAD is trimmed up front; any interior PAD stays masked in attention.
    pub fn forward(&mut self, ids: &[u32], mut adapter: Option<&mut AdapterWeights<F>>) -> Result<Matrix<F>> {
        let eff = ids
            .iter()
            .rposition(|&id| id != PAD_ID)
            .map(|p| p + 1)
            .ok_or_else(|| Error::Data("cannot run forward on an all-PAD sequence".into()))?;
        let ids = &ids[..eff];
        let pad: Vec<bool> = ids.iter().map(|&id| id == PAD_ID).collect();
        let mut x = self.embedding.forward(ids)?;
        for (l, block) in self.blocks.iter_mut().enumerate() {
            x = match adapter.as_deref_mut() {
                Some(ad) => {
                    let (q, v) = ad.layer_entries_mut(l);
                    block.forward(&x, &pad, q, v)?
                }
                None => block.forward(&x, &pad, None, None)?,
            };
        }
        self.last_seq = Some(eff);
        Ok(x)
    }

    /// Backpropagates `upstream` (gradient of the hidden states) and
    /// accumulates into every trainable parameter.
    pub fn backward(&mut self, upstream: &Matrix<F>, mut adapter: Option<&mut AdapterWeights<F>>) -> Result<()> {
        self.last_seq = None;
        let mut grad = upstream.clone();
        for (l, block) in self.blocks.iter_mut().enumerate().rev() {
            grad = match adapter.as_deref_mut() {
                Some(ad) => {
                    let (q, v) = ad.layer_entries_mut(l);
                    block.backward(&grad, q, v)?
                }
                None => block.backward(&grad, None, None)?,
            };
        }
        self.embedding.backward(&grad)
    }

    fn pooled_seq_len(&self) -> Result<usize> {
        self.last_seq.ok_or(Error::State("model backward without forward"))
    }
}

/// Per-round classification head over a sorted set of class ids.
#[derive(Debug, Clone)]
pub struct Head<F: Scalar> {
    pub linear: Linear<F>,
    pub bias: Parameter<F>,
    classes: Vec<u16>,
}

impl<F: Scalar> Head<F> {
    /// Fresh head for the given classes: weight ~ N(0, 0.02^2), bias zero.
    /// Class ids may arrive in any order; duplicates are rejected.
    pub fn init(dim: usize, class_ids: &[u16], seed: u64) -> Result<Self> {
        if class_ids.is_empty() {
            return Err(Error::Label("head needs at least one class".into()));
        }
        let mut classes = class_ids.to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() != class_ids.len() {
            return Err(Error::Label("duplicate class ids in head".into()));
        }
        let mut rng = seeded(derive_seed(seed, "head"));
        Ok(Head {
            linear: Linear::new(normal_matrix(dim, classes.len(), INIT_STD, &mut rng), true),
            bias: Parameter::new(Matrix::zeros(1, classes.len()), true),
            classes,
        })
    }

    pub fn from_parts(weight: Matrix<F>, bias: Matrix<F>, classes: Vec<u16>) -> Result<Self> {
        if weight.cols() != classes.len() || bias.cols() != classes.len() || bias.rows() != 1 {
            return Err(Error::Dimension {
                op: "head_parts",
                lhs: weight.shape_str(),
                rhs: format!("{} classes", classes.len()),
            });
        }
        if classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Label("head class ids must be sorted and unique".into()));
        }
        Ok(Head {
            linear: Linear::new(weight, true),
            bias: Parameter::new(bias, true),
            classes,
        })
    }

    pub fn classes(&self) -> &[u16] {
        &self.classes
    }

    pub fn width(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.linear.d_in()
    }

    pub fn param_count(&self) -> usize {
        self.linear.w.len() + self.bias.len()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        vec![&mut self.linear.w, &mut self.bias]
    }

    pub fn zero_grad(&mut self) {
        self.linear.w.zero_grad();
        self.bias.zero_grad();
    }

    pub fn forward(&mut self, pooled: &Matrix<F>) -> Result<Matrix<F>> {
        let mut z = self.linear.forward(pooled, None)?;
        for i in 0..z.rows() {
            let row = z.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v + self.bias.value.get(0, j);
            }
        }
        Ok(z)
    }

    pub fn backward(&mut self, upstream: &Matrix<F>) -> Result<Matrix<F>> {
        let mut db = Matrix::zeros(1, upstream.cols());
        for i in 0..upstream.rows() {
            for j in 0..upstream.cols() {
                db.set(0, j, db.get(0, j) + upstream.get(i, j));
            }
        }
        self.bias.accumulate(&db);
        self.linear.backward(upstream, None)
    }
}

/// Logits for one tokenized sample: backbone hidden states, CLS pooling
/// (position 0), then the head. Shape `1 x |C|`.
pub fn forward<F: Scalar>(
    backbone: &mut Backbone<F>,
    adapter: Option<&mut AdapterWeights<F>>,
    head: &mut Head<F>,
    ids: &[u32],
) -> Result<Matrix<F>> {
    if head.dim() != backbone.dim() {
        return Err(Error::Dimension {
            op: "head_attach",
            lhs: format!("backbone dim {}", backbone.dim()),
            rhs: format!("head dim {}", head.dim()),
        });
    }
    let hidden = backbone.forward(ids, adapter)?;
    let mut pooled = Matrix::zeros(1, backbone.dim());
    pooled.row_mut(0).copy_from_slice(hidden.row(0));
    head.forward(&pooled)
}

/// Companion to [`forward`]: takes the logit gradient and accumulates into
/// head, adapter, and (when trainable) backbone parameters.
pub fn backward<F: Scalar>(
    backbone: &mut Backbone<F>,
    adapter: Option<&mut AdapterWeights<F>>,
    head: &mut Head<F>,
    dlogits: &Matrix<F>,
) -> Result<()> {
    let seq = backbone.pooled_seq_len()?;
    let dpooled = head.backward(dlogits)?;
    let mut dhidden = Matrix::zeros(seq, backbone.dim());
    dhidden.row_mut(0).copy_from_slice(dpooled.row(0));
    backbone.backward(&dhidden, adapter)
}
