//! Label codec: stable class-name to class-id mapping.
//!
//! Ids are assigned by lexicographic order of the normalized names, so two
//! datasets sharing class names always agree on ids. Normalization trims and
//! replaces internal whitespace with underscores, which also unifies the
//! space/underscore spelling variants seen across capture exports.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub type ClassId = u16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelCodec {
    names: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, ClassId>,
}

pub fn normalize_class(name: &str) -> String {
    name.trim().split_whitespace().collect::<Vec<_>>().join("_")
}

impl LabelCodec {
    pub fn build<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut set: Vec<String> = Vec::new();
        for raw in names {
            let n = normalize_class(raw);
            if n.is_empty() {
                return Err(Error::Label("class name empty after normalization".into()));
            }
            if !set.contains(&n) {
                set.push(n);
            }
        }
        if set.is_empty() {
            return Err(Error::Label("no class names given".into()));
        }
        set.sort();
        Ok(Self::from_sorted(set))
    }

    fn from_sorted(names: Vec<String>) -> Self {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as ClassId))
            .collect();
        LabelCodec { names, index }
    }

    /// Restores the lookup index after deserialization.
    pub fn rebuild_index(mut self) -> Result<Self> {
        let mut sorted = self.names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted != self.names {
            return Err(Error::Label("codec names not sorted and unique".into()));
        }
        self.index = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as ClassId))
            .collect();
        Ok(self)
    }

    pub fn encode(&self, name: &str) -> Result<ClassId> {
        let n = normalize_class(name);
        self.index
            .get(&n)
            .copied()
            .ok_or_else(|| Error::Label(format!("unknown class {n}")))
    }

    pub fn decode(&self, id: ClassId) -> Result<&str> {
        self.names
            .get(id as usize)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::OutOfRange {
                what: "class id",
                got: id as usize,
                limit: self.names.len(),
            })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        (0..self.names.len()).map(|i| i as ClassId)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_follow_lexicographic_order() {
        let c = LabelCodec::build(["Normal", "Backdoor", "XSS"]).unwrap();
        assert_eq!(c.encode("Backdoor").unwrap(), 0);
        assert_eq!(c.encode("Normal").unwrap(), 1);
        assert_eq!(c.encode("XSS").unwrap(), 2);
        assert_eq!(c.decode(2).unwrap(), "XSS");
    }

    #[test]
    fn encode_decode_round_trips_every_class() {
        let c = LabelCodec::build(["DDoS_UDP", "Password", "Normal"]).unwrap();
        for id in c.ids() {
            assert_eq!(c.encode(c.decode(id).unwrap()).unwrap(), id);
        }
    }

    #[test]
    fn space_and_underscore_spellings_unify() {
        let c = LabelCodec::build(["SQL injection", "Port Scanning"]).unwrap();
        assert_eq!(c.encode("SQL_injection").unwrap(), c.encode("SQL injection").unwrap());
        assert_eq!(c.decode(0).unwrap(), "Port_Scanning");
    }

    #[test]
    fn unknown_class_is_a_label_error() {
        let c = LabelCodec::build(["Normal"]).unwrap();
        assert!(c.encode("Ransomware").is_err());
    }

    #[test]
    fn empty_input_rejected() {
        assert!(LabelCodec::build([]).is_err());
        assert!(LabelCodec::build(["  "]).is_err());
    }
}
