//! An ordered collection of adapters sharing one backbone.
//!
//! The byte form is `count u16 + concatenated adapter files`, the same
//! encoding the wire protocol's BUNDLE body uses, so a persisted bundle and
//! a transmitted one are the identical byte string. Each adapter carries its
//! own CRC; an empty bundle stores no fingerprint, so loading requires the
//! expected fingerprint from context.

use super::artifact::Adapter;
use crate::bytes::{put_u16, Reader};
use crate::error::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterBundle {
    fingerprint: u32,
    adapters: Vec<Adapter>,
}

impl AdapterBundle {
    pub fn new(fingerprint: u32) -> Self {
        AdapterBundle {
            fingerprint,
            adapters: Vec::new(),
        }
    }

    pub fn from_adapters(fingerprint: u32, adapters: Vec<Adapter>) -> Result<Self> {
        let mut bundle = AdapterBundle::new(fingerprint);
        for a in adapters {
            bundle.push(a)?;
        }
        Ok(bundle)
    }

    pub fn fingerprint(&self) -> u32 {
        self.fingerprint
    }

    pub fn adapters(&self) -> &[Adapter] {
        &self.adapters
    }

    pub fn len(&self) -> usize {
        self.adapters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adapters.is_empty()
    }

    pub fn last_round(&self) -> Option<u32> {
        self.adapters.last().map(|a| a.round)
    }

    /// Appends in round order. Round ids never decrease; adapters within one
    /// round must cover pairwise disjoint class sets (different devices), so
    /// later-round-wins prediction is order independent.
    pub fn push(&mut self, adapter: Adapter) -> Result<()> {
        if adapter.backbone_fp != self.fingerprint {
            return Err(Error::Incompatible {
                theirs: adapter.backbone_fp,
                ours: self.fingerprint,
            });
        }
        if let Some(last) = self.adapters.last() {
            if adapter.round < last.round {
                return Err(Error::Rejected(format!(
                    "adapter round {} arrives after round {}",
                    adapter.round, last.round
                )));
            }
        }
        for peer in self.adapters.iter().filter(|p| p.round == adapter.round) {
            if peer.classes.iter().any(|c| adapter.classes.contains(c)) {
                return Err(Error::Rejected(format!(
                    "round {} adapters overlap on covered classes",
                    adapter.round
                )));
            }
        }
        self.adapters.push(adapter);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        put_u16(&mut buf, self.adapters.len() as u16);
        for a in &self.adapters {
            buf.extend_from_slice(&a.to_bytes());
        }
        buf
    }

    /// Parses a `count + adapters` body without binding to a fingerprint.
    pub fn parse_adapters(bytes: &[u8]) -> Result<Vec<Adapter>> {
        let mut r = Reader::new(bytes);
        let count = r.u16()? as usize;
        let mut adapters = Vec::with_capacity(count);
        for _ in 0..count {
            adapters.push(Adapter::from_reader(&mut r)?);
        }
        if !r.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes after {count} bundled adapters",
                r.remaining()
            )));
        }
        Ok(adapters)
    }

    pub fn from_bytes(bytes: &[u8], fingerprint: u32) -> Result<Self> {
        Self::from_adapters(fingerprint, Self::parse_adapters(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path, fingerprint: u32) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, fingerprint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lora::{AdapterWeights, LoraConfig};
    use crate::model::Head;
    use crate::nn::rng::{normal_matrix, seeded};

    fn adapter(round: u32, classes: &[u16], fp: u32) -> Adapter {
        let cfg = LoraConfig { rank: 2, ..Default::default() };
        let mut w: AdapterWeights<f32> = AdapterWeights::init(1, 4, &cfg, round as u64).unwrap();
        let mut rng = seeded(round as u64 + 50);
        for e in &mut w.entries {
            e.weights.b.value = normal_matrix(2, 4, 0.05, &mut rng);
        }
        let head = Head::init(4, classes, round as u64).unwrap();
        Adapter::from_training(round, &w, &head, fp).unwrap()
    }

    #[test]
    fn bundle_round_trips_through_bytes_and_files() {
        let mut bundle = AdapterBundle::new(9);
        bundle.push(adapter(0, &[0, 1], 9)).unwrap();
        bundle.push(adapter(1, &[0, 1, 2], 9)).unwrap();
        bundle.push(adapter(2, &[0, 1, 2, 3], 9)).unwrap();
        let bytes = bundle.to_bytes();
        let back = AdapterBundle::from_bytes(&bytes, 9).unwrap();
        assert_eq!(back, bundle);
        assert_eq!(back.to_bytes(), bytes);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bundle.bin");
        bundle.save(&path).unwrap();
        assert_eq!(AdapterBundle::load(&path, 9).unwrap(), bundle);
    }

    #[test]
    fn empty_bundle_round_trips() {
        let bundle = AdapterBundle::new(4);
        let bytes = bundle.to_bytes();
        assert_eq!(bytes, vec![0, 0]);
        let back = AdapterBundle::from_bytes(&bytes, 4).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.fingerprint(), 4);
    }

    #[test]
    fn wrong_fingerprint_is_rejected() {
        let mut bundle = AdapterBundle::new(9);
        assert!(matches!(
            bundle.push(adapter(0, &[0, 1], 8)),
            Err(Error::Incompatible { .. })
        ));
    }

    #[test]
    fn round_order_and_same_round_overlap_are_enforced() {
        let mut bundle = AdapterBundle::new(9);
        bundle.push(adapter(2, &[0, 1], 9)).unwrap();
        assert!(bundle.push(adapter(1, &[2, 3], 9)).is_err());
        // same round, disjoint classes: two devices contributing in parallel
        bundle.push(adapter(2, &[4, 5], 9)).unwrap();
        assert!(bundle.push(adapter(2, &[5, 6], 9)).is_err());
        bundle.push(adapter(3, &[0, 1, 4, 5], 9)).unwrap();
        assert_eq!(bundle.len(), 3);
        assert_eq!(bundle.last_round(), Some(3));
    }

    #[test]
    fn corrupted_member_fails_the_whole_parse() {
        let mut bundle = AdapterBundle::new(9);
        bundle.push(adapter(0, &[0, 1], 9)).unwrap();
        bundle.push(adapter(1, &[2, 3], 9)).unwrap();
        let mut bytes = bundle.to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        assert!(AdapterBundle::from_bytes(&bytes, 9).is_err());
    }

    #[test]
    fn count_must_match_contents() {
        let mut bundle = AdapterBundle::new(9);
        bundle.push(adapter(0, &[0, 1], 9)).unwrap();
        let mut bytes = bundle.to_bytes();
        bytes[0] = 2; // claims two adapters, contains one
        assert!(AdapterBundle::from_bytes(&bytes, 9).is_err());
        bytes[0] = 0; // claims zero, leaves trailing bytes
        assert!(AdapterBundle::from_bytes(&bytes, 9).is_err());
    }
}
