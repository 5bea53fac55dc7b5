//! The shippable adapter artifact: one round's low-rank deltas plus its
//! classification head, with a backbone fingerprint and CRC.
//!
//! File layout (all little-endian): magic `LADP`, version u16, round-id u32,
//! class-count u16 + class-ids u16 each, rank u16, alpha f32, target-count
//! u16 + per target (layer u16, target-tag u8, d_in u16, d_out u16, A
//! row-major `r x d_in` f32, B row-major `d_out x r` f32), head out-width
//! u16, head dim u16, head weight row-major `|C| x d` f32, head bias `|C|`
//! f32, backbone fingerprint u32, CRC32 over all preceding bytes.
//!
//! In memory the factors sit input-major (`a: d_in x r`, `b: r x d_out`) to
//! match the forward kernel; the writer transposes at the byte boundary.
//! Scaling alpha/rank is applied at forward time, never baked into stored B.

use super::{AdapterEntry, AdapterWeights, Target};
use crate::bytes::{append_crc, put_f32, put_u16, put_u32, Reader};
use crate::error::{Error, Result};
use crate::model::Head;
use crate::nn::{LowRank, Matrix, Scalar};
use std::path::Path;

pub const ADAPTER_MAGIC: &[u8; 4] = b"LADP";
pub const ADAPTER_VERSION: u16 = 1;

/// One serialized (layer, projection) delta, stored memory-oriented.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterTargetWeights {
    pub layer: u16,
    pub target: Target,
    /// `d_in x rank`
    pub a: Matrix<f32>,
    /// `rank x d_out`
    pub b: Matrix<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    /// `dim x |C|`
    pub weight: Matrix<f32>,
    /// `1 x |C|`
    pub bias: Matrix<f32>,
}

/// Immutable once trained; safe to clone and ship between threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    pub round: u32,
    /// Sorted, equal to the head's class list.
    pub classes: Vec<u16>,
    pub rank: u16,
    pub alpha: f32,
    pub targets: Vec<AdapterTargetWeights>,
    pub head: HeadWeights,
    pub backbone_fp: u32,
}

impl Adapter {
    /// Packages trained round state. Covered classes come from the head, so
    /// the two can never disagree.
    pub fn from_training<F: Scalar>(
        round: u32,
        weights: &AdapterWeights<F>,
        head: &Head<F>,
        backbone_fp: u32,
    ) -> Result<Self> {
        if weights.rank > u16::MAX as usize {
            return Err(Error::OutOfRange {
                what: "adapter rank",
                got: weights.rank,
                limit: u16::MAX as usize,
            });
        }
        let targets = weights
            .entries
            .iter()
            .map(|e| AdapterTargetWeights {
                layer: e.layer as u16,
                target: e.target,
                a: e.weights.a.value.cast(),
                b: e.weights.b.value.cast(),
            })
            .collect();
        Ok(Adapter {
            round,
            classes: head.classes().to_vec(),
            rank: weights.rank as u16,
            alpha: weights.alpha as f32,
            targets,
            head: HeadWeights {
                weight: head.linear.w.value.cast(),
                bias: head.bias.value.cast(),
            },
            backbone_fp,
        })
    }

    /// Rebuilds live forward-pass state from the artifact.
    pub fn runtime<F: Scalar>(&self) -> Result<(AdapterWeights<F>, Head<F>)> {
        let mut entries = Vec::with_capacity(self.targets.len());
        for t in &self.targets {
            entries.push(AdapterEntry {
                layer: t.layer as usize,
                target: t.target,
                weights: LowRank::from_parts(t.a.cast(), t.b.cast(), self.alpha as f64)?,
            });
        }
        let weights = AdapterWeights {
            entries,
            rank: self.rank as usize,
            alpha: self.alpha as f64,
        };
        let head = Head::from_parts(
            self.head.weight.cast(),
            self.head.bias.cast(),
            self.classes.clone(),
        )?;
        Ok((weights, head))
    }

    /// Low-rank parameters only; the head is excluded from footprint math.
    pub fn param_count(&self) -> usize {
        self.targets
            .iter()
            .map(|t| t.a.rows() * t.a.cols() + t.b.rows() * t.b.cols())
            .sum()
    }

    pub fn footprint_ratio(&self, backbone_param_count: usize) -> f64 {
        self.param_count() as f64 / backbone_param_count as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(ADAPTER_MAGIC);
        put_u16(&mut buf, ADAPTER_VERSION);
        put_u32(&mut buf, self.round);
        put_u16(&mut buf, self.classes.len() as u16);
        for &c in &self.classes {
            put_u16(&mut buf, c);
        }
        put_u16(&mut buf, self.rank);
        put_f32(&mut buf, self.alpha);
        put_u16(&mut buf, self.targets.len() as u16);
        for t in &self.targets {
            put_u16(&mut buf, t.layer);
            buf.push(t.target.tag());
            put_u16(&mut buf, t.a.rows() as u16);
            put_u16(&mut buf, t.b.cols() as u16);
            for &v in t.a.transpose().data() {
                put_f32(&mut buf, v);
            }
            for &v in t.b.transpose().data() {
                put_f32(&mut buf, v);
            }
        }
        put_u16(&mut buf, self.classes.len() as u16);
        put_u16(&mut buf, self.head.weight.rows() as u16);
        for &v in self.head.weight.transpose().data() {
            put_f32(&mut buf, v);
        }
        for &v in self.head.bias.row(0) {
            put_f32(&mut buf, v);
        }
        put_u32(&mut buf, self.backbone_fp);
        append_crc(&mut buf);
        buf
    }

    /// Parses one adapter from the cursor, consuming exactly its bytes and
    /// verifying its own trailing CRC. Usable both for standalone files and
    /// for adapters concatenated inside a bundle body.
    pub(crate) fn from_reader(r: &mut Reader) -> Result<Self> {
        let start = r.pos();
        r.expect_magic(ADAPTER_MAGIC, "adapter")?;
        let version = r.u16()?;
        if version != ADAPTER_VERSION {
            return Err(Error::Format(format!("unsupported adapter version {version}")));
        }
        let round = r.u32()?;
        let n_classes = r.u16()? as usize;
        let mut classes = Vec::with_capacity(n_classes);
        for _ in 0..n_classes {
            classes.push(r.u16()?);
        }
        if classes.is_empty() || classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("adapter class ids must be sorted, unique, non-empty".into()));
        }
        let rank = r.u16()?;
        let alpha = r.f32()?;
        let n_targets = r.u16()? as usize;
        let mut targets = Vec::with_capacity(n_targets);
        for _ in 0..n_targets {
            let layer = r.u16()?;
            let target = Target::from_tag(r.u8()?)?;
            let d_in = r.u16()? as usize;
            let d_out = r.u16()? as usize;
            if rank == 0 {
                return Err(Error::Format("adapter with targets must have rank >= 1".into()));
            }
            let a_file = Matrix::from_vec(rank as usize, d_in, r.f32_slice(rank as usize * d_in)?)?;
            let b_file = Matrix::from_vec(d_out, rank as usize, r.f32_slice(d_out * rank as usize)?)?;
            targets.push(AdapterTargetWeights {
                layer,
                target,
                a: a_file.transpose(),
                b: b_file.transpose(),
            });
        }
        let head_out = r.u16()? as usize;
        let head_dim = r.u16()? as usize;
        if head_out != n_classes {
            return Err(Error::Format(format!(
                "head width {head_out} does not match {n_classes} covered classes"
            )));
        }
        let w_file = Matrix::from_vec(head_out, head_dim, r.f32_slice(head_out * head_dim)?)?;
        let bias = Matrix::from_vec(1, head_out, r.f32_slice(head_out)?)?;
        let backbone_fp = r.u32()?;
        let body = r.span(start);
        let stored = r.u32()?;
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum {
                expected: stored,
                actual: computed,
            });
        }
        Ok(Adapter {
            round,
            classes,
            rank,
            alpha,
            targets,
            head: HeadWeights {
                weight: w_file.transpose(),
                bias,
            },
            backbone_fp,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let adapter = Self::from_reader(&mut r)?;
        if !r.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes after adapter",
                r.remaining()
            )));
        }
        Ok(adapter)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Dense per-target delta `scale * a * b`, cast to the requested scalar.
pub fn dense_delta<F: Scalar>(t: &AdapterTargetWeights, alpha: f64) -> Result<Matrix<F>> {
    let lr: LowRank<F> = LowRank::from_parts(t.a.cast(), t.b.cast(), alpha)?;
    Ok(lr.dense_delta())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lora::LoraConfig;
    use crate::model::{Backbone, BackboneConfig};
    use crate::nn::rng::{normal_matrix, seeded};

    fn trained_adapter() -> Adapter {
        let cfg = LoraConfig { rank: 3, ..Default::default() };
        let mut w: AdapterWeights<f32> = AdapterWeights::init(2, 8, &cfg, 5).unwrap();
        let mut rng = seeded(6);
        for e in &mut w.entries {
            e.weights.b.value = normal_matrix(3, 8, 0.05, &mut rng);
        }
        let head = Head::init(8, &[0, 2, 5], 9).unwrap();
        Adapter::from_training(4, &w, &head, 0xDEAD_BEEF).unwrap()
    }

    #[test]
    fn byte_round_trip_is_identity() {
        let a = trained_adapter();
        let bytes = a.to_bytes();
        let b = Adapter::from_bytes(&bytes).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.to_bytes(), bytes);
    }

    #[test]
    fn file_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adapter.bin");
        let a = trained_adapter();
        a.save(&path).unwrap();
        assert_eq!(Adapter::load(&path).unwrap(), a);
    }

    #[test]
    fn every_single_bit_flip_is_rejected() {
        let bytes = trained_adapter().to_bytes();
        // sampling every 97th bit keeps the sweep fast while touching every
        // section of the layout
        for bit in (0..bytes.len() * 8).step_by(97) {
            let mut bad = bytes.clone();
            bad[bit / 8] ^= 1 << (bit % 8);
            assert!(Adapter::from_bytes(&bad).is_err(), "bit {bit} accepted");
        }
    }

    #[test]
    fn truncated_adapter_is_rejected() {
        let bytes = trained_adapter().to_bytes();
        for cut in [3, 9, bytes.len() / 2, bytes.len() - 1] {
            assert!(Adapter::from_bytes(&bytes[..cut]).is_err(), "cut {cut} accepted");
        }
    }

    #[test]
    fn serialized_size_matches_layout_arithmetic() {
        let a = trained_adapter();
        let (r, d, n_c, n_t) = (3usize, 8usize, 3usize, 4usize);
        let per_target = 2 + 1 + 2 + 2 + 4 * (r * d) + 4 * (d * r);
        let want = 4 + 2 + 4           // magic, version, round
            + 2 + 2 * n_c              // class list
            + 2 + 4                    // rank, alpha
            + 2 + n_t * per_target     // targets
            + 2 + 2 + 4 * (n_c * d) + 4 * n_c // head dims, weight, bias
            + 4 + 4;                   // fingerprint, crc
        assert_eq!(a.to_bytes().len(), want);
    }

    #[test]
    fn runtime_round_trip_preserves_forward_math() {
        let a = trained_adapter();
        let (w, head) = a.runtime::<f32>().unwrap();
        assert_eq!(w.entries.len(), 4);
        assert_eq!(head.classes(), &[0, 2, 5]);
        let back = Adapter::from_training(a.round, &w, &head, a.backbone_fp).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn head_only_adapter_round_trips() {
        let w = AdapterWeights::<f32>::empty(8, 16.0);
        let head = Head::init(8, &[0, 1], 1).unwrap();
        let a = Adapter::from_training(0, &w, &head, 7).unwrap();
        let b = Adapter::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.param_count(), 0);
        assert!(b.targets.is_empty());
    }

    #[test]
    fn footprint_of_default_desk_adapter_is_under_five_percent() {
        let cfg = LoraConfig::default();
        let w: AdapterWeights<f32> = AdapterWeights::init(2, 64, &cfg, 1).unwrap();
        let head = Head::init(64, &[0, 1, 2], 1).unwrap();
        let a = Adapter::from_training(0, &w, &head, 0).unwrap();
        let backbone = BackboneConfig::new(2000, 128, 1);
        let ratio = a.footprint_ratio(backbone.param_count());
        assert!(ratio > 0.0 && ratio < 0.05, "ratio {ratio}");
        assert_eq!(a.param_count(), 4096);
    }

    #[test]
    fn merge_equivalence_and_round_trip() {
        use crate::model::{forward, Head};
        let bcfg = BackboneConfig {
            layers: 2,
            dim: 8,
            heads: 2,
            ff: 12,
            vocab: 16,
            max_len: 6,
            seed: 3,
        };
        let mut base: Backbone<f32> = Backbone::init(bcfg).unwrap();
        let fp = crate::model::fingerprint(&base);
        let cfg = LoraConfig { rank: 2, ..Default::default() };
        let mut w: AdapterWeights<f32> = AdapterWeights::init(2, 8, &cfg, 5).unwrap();
        let mut rng = seeded(11);
        for e in &mut w.entries {
            e.weights.b.value = normal_matrix(2, 8, 0.03, &mut rng);
        }
        let head_src = Head::init(8, &[0, 1, 2], 2).unwrap();
        let adapter = Adapter::from_training(1, &w, &head_src, fp).unwrap();

        let mut merged = super::super::merge(&base, &adapter).unwrap();
        let (mut rt_w, _) = adapter.runtime::<f32>().unwrap();
        let mut head_a = head_src.clone();
        let mut head_b = head_src.clone();
        for ids in [[2u32, 5, 7], [2, 3, 4], [2, 9, 1], [2, 6, 6], [2, 1, 8]] {
            let via_adapter = forward(&mut base, Some(&mut rt_w), &mut head_a, &ids).unwrap();
            let via_merged = forward(&mut merged, None, &mut head_b, &ids).unwrap();
            assert!(
                via_adapter.max_abs_diff(&via_merged) <= 1e-5,
                "paths diverge: {}",
                via_adapter.max_abs_diff(&via_merged)
            );
        }

        // subtracting the dense deltas recovers the base weights
        for t in &adapter.targets {
            let delta: Matrix<f32> = dense_delta(t, adapter.alpha as f64).unwrap();
            let block = &mut merged.blocks[t.layer as usize];
            let p = match t.target {
                Target::Query => &mut block.attn.wq.w,
                Target::Value => &mut block.attn.wv.w,
            };
            p.value.sub_assign(&delta);
        }
        for (m, b) in merged.params().iter().zip(base.params().iter()) {
            assert!(m.value.max_abs_diff(&b.value) <= 1e-6);
        }
    }

    #[test]
    fn merge_rejects_foreign_backbone() {
        let bcfg = BackboneConfig {
            layers: 1,
            dim: 4,
            heads: 2,
            ff: 6,
            vocab: 8,
            max_len: 4,
            seed: 3,
        };
        let base: Backbone<f32> = Backbone::init(bcfg).unwrap();
        let w: AdapterWeights<f32> =
            AdapterWeights::init(1, 4, &LoraConfig { rank: 2, ..Default::default() }, 5).unwrap();
        let head = Head::init(4, &[0, 1], 2).unwrap();
        let adapter = Adapter::from_training(1, &w, &head, 12345).unwrap();
        assert!(matches!(
            super::super::merge(&base, &adapter),
            Err(Error::Incompatible { .. })
        ));
    }

    #[test]
    fn zero_adapter_merge_is_bit_identical() {
        let bcfg = BackboneConfig {
            layers: 1,
            dim: 4,
            heads: 2,
            ff: 6,
            vocab: 8,
            max_len: 4,
            seed: 3,
        };
        let base: Backbone<f32> = Backbone::init(bcfg).unwrap();
        let fp = crate::model::fingerprint(&base);
        let w: AdapterWeights<f32> =
            AdapterWeights::init(1, 4, &LoraConfig { rank: 2, ..Default::default() }, 5).unwrap();
        let head = Head::init(4, &[0, 1], 2).unwrap();
        let adapter = Adapter::from_training(1, &w, &head, fp).unwrap();
        let merged = super::super::merge(&base, &adapter).unwrap();
        assert_eq!(crate::model::fingerprint(&merged), fp);
    }
}
