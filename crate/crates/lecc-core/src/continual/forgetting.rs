//! Measures what later rounds cost earlier ones: each earlier round's test
//! subset is scored with the bundle as it stood at that round and again with
//! the full current bundle.

use super::metrics::{self};
use super::predict::BundleRuntime;
use super::Sample;
use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::lora::AdapterBundle;
use crate::model::Backbone;
use crate::nn::Scalar;
use serde::{Deserialize, Serialize};

/// Test subset for one round, with the classes macro scores average over.
#[derive(Debug, Clone)]
pub struct RoundTests {
    pub round: u32,
    pub scope: Vec<ClassId>,
    pub rows: Vec<Sample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForgettingEntry {
    pub round: u32,
    /// Macro-F1 on the round's test subset under the bundle truncated to
    /// rounds <= round.
    pub before: f64,
    /// Same subset under the full current bundle.
    pub after: f64,
}

fn bundle_f1<F: Scalar>(
    backbone: &mut Backbone<F>,
    bundle: &AdapterBundle,
    tests: &RoundTests,
    label_space: usize,
) -> Result<f64> {
    let mut runtime = BundleRuntime::new(bundle, backbone)?;
    let confusion = metrics::evaluate(
        |ids| runtime.predict(backbone, ids).map(|(class, _)| class),
        &tests.rows,
        label_space,
    )?;
    Ok(confusion.scores(&tests.scope)?.f1)
}

/// Before/after F1 for every round older than the bundle's latest. A bundle
/// holding a single round has nothing older to lose, so the report is empty.
pub fn forgetting_eval<F: Scalar>(
    backbone: &mut Backbone<F>,
    bundle: &AdapterBundle,
    tests: &[RoundTests],
    label_space: usize,
) -> Result<Vec<ForgettingEntry>> {
    let last = match bundle.last_round() {
        None => return Err(Error::State("empty adapter bundle")),
        Some(r) => r,
    };
    let mut rounds: Vec<u32> = bundle.adapters().iter().map(|a| a.round).collect();
    rounds.dedup();
    let mut report = Vec::new();
    for &r in rounds.iter().filter(|&&r| r < last) {
        let subset = tests
            .iter()
            .find(|t| t.round == r)
            .ok_or_else(|| Error::Data(format!("no test subset for round {r}")))?;
        let prefix: Vec<_> =
            bundle.adapters().iter().filter(|a| a.round <= r).cloned().collect();
        let prefix = AdapterBundle::from_adapters(bundle.fingerprint(), prefix)?;
        report.push(ForgettingEntry {
            round: r,
            before: bundle_f1(backbone, &prefix, subset, label_space)?,
            after: bundle_f1(backbone, bundle, subset, label_space)?,
        });
    }
    Ok(report)
}
