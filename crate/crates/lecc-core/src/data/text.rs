//! Flow textualization and the token vocabulary.
//!
//! A record becomes `"CLS name:value name:value ..."`. Values written with a
//! decimal point or exponent are treated as continuous and bucketed to three
//! significant digits so near-equal measurements share a token; integer-looking
//! values (ports, flags) pass through verbatim.

use super::FlowRecord;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const RESERVED: u32 = 3;

const PAD_TOKEN: &str = "PAD";
const UNK_TOKEN: &str = "UNK";
const CLS_TOKEN: &str = "CLS";

fn sanitize(s: &str) -> String {
    s.trim().split_whitespace().collect::<Vec<_>>().join("_")
}

/// Rounds to three significant digits; large and small magnitudes switch to
/// exponent form so the token count stays bounded.
fn sig3(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{:.2e}", x);
    }
    let factor = 10f64.powi(mag - 2);
    let rounded = (x / factor).round() * factor;
    let decimals = (2 - mag).max(0) as usize;
    let s = format!("{rounded:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn bucket_value(v: &str) -> String {
    let t = v.trim();
    if (t.contains('.') || t.contains('e') || t.contains('E')) && !t.ends_with('.') {
        if let Ok(x) = t.parse::<f64>() {
            return sig3(x);
        }
    }
    sanitize(t)
}

/// Renders one record as a token text. The CLS marker always leads.
pub fn textualize(record: &FlowRecord) -> String {
    let mut out = String::from(CLS_TOKEN);
    for (name, value) in &record.features {
        out.push(' ');
        out.push_str(&sanitize(name));
        out.push(':');
        out.push_str(&bucket_value(value));
    }
    out
}

/// Whitespace token vocabulary. Ids 0..=2 are PAD, UNK, CLS; learned tokens
/// start at 3 in first-appearance order over the training texts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn build<'a>(training_texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tokens = Vec::new();
        let mut index = HashMap::new();
        for text in training_texts {
            for tok in text.split_whitespace() {
                if tok == PAD_TOKEN || tok == UNK_TOKEN || tok == CLS_TOKEN {
                    continue;
                }
                if !index.contains_key(tok) {
                    index.insert(tok.to_string(), RESERVED + tokens.len() as u32);
                    tokens.push(tok.to_string());
                }
            }
        }
        Vocab { tokens, index }
    }

    pub fn rebuild_index(mut self) -> Self {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), RESERVED + i as u32))
            .collect();
        self
    }

    /// Total id space including the three reserved ids.
    pub fn size(&self) -> usize {
        self.tokens.len() + RESERVED as usize
    }

    pub fn id_of(&self, token: &str) -> u32 {
        match token {
            PAD_TOKEN => PAD_ID,
            UNK_TOKEN => UNK_ID,
            CLS_TOKEN => CLS_ID,
            t => self.index.get(t).copied().unwrap_or(UNK_ID),
        }
    }

    /// Fixed-length id sequence: truncated or right-padded with PAD.
    pub fn tokenize(&self, text: &str, max_len: usize) -> Result<Vec<u32>> {
        if max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        let mut ids: Vec<u32> = text.split_whitespace().map(|t| self.id_of(t)).collect();
        ids.truncate(max_len);
        while ids.len() < max_len {
            ids.push(PAD_ID);
        }
        Ok(ids)
    }
}
