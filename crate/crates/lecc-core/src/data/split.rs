//! Deterministic sampling, train/test splitting, round partitioning, and
//! stratified k-fold assignment.

use super::codec::{ClassId, LabelCodec};
use super::FlowRecord;
use crate::error::{Error, Result};
use crate::nn::rng::{derive_seed, seeded};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Class-incremental schedule: which class names arrive at each round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoundSchedule {
    pub rounds: Vec<Vec<String>>,
}

impl RoundSchedule {
    pub fn new(rounds: Vec<Vec<String>>) -> Result<Self> {
        let s = RoundSchedule { rounds };
        s.validate_shape()?;
        Ok(s)
    }

    /// Rounds must be non-empty; rounds after the first introduce at least
    /// two classes; no class appears twice.
    fn validate_shape(&self) -> Result<()> {
        if self.rounds.is_empty() {
            return Err(Error::Config("schedule has no rounds".into()));
        }
        let mut seen: Vec<String> = Vec::new();
        for (r, classes) in self.rounds.iter().enumerate() {
            if classes.is_empty() {
                return Err(Error::Config(format!("round {r} introduces no classes")));
            }
            if r > 0 && classes.len() < 2 {
                return Err(Error::Config(format!(
                    "round {r} introduces {} class, rounds after the first need at least 2",
                    classes.len()
                )));
            }
            for c in classes {
                let n = super::codec::normalize_class(c);
                if seen.contains(&n) {
                    return Err(Error::Config(format!("class {n} scheduled twice")));
                }
                seen.push(n);
            }
        }
        Ok(())
    }

    /// Checks every scheduled class exists in the codec.
    pub fn validate_against(&self, codec: &LabelCodec) -> Result<()> {
        self.validate_shape()?;
        for classes in &self.rounds {
            for c in classes {
                codec.encode(c)?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn class_ids(&self, round: usize, codec: &LabelCodec) -> Result<Vec<ClassId>> {
        let classes = self
            .rounds
            .get(round)
            .ok_or(Error::OutOfRange { what: "round", got: round, limit: self.rounds.len() })?;
        let mut ids: Vec<ClassId> = classes.iter().map(|c| codec.encode(c)).collect::<Result<_>>()?;
        ids.sort_unstable();
        Ok(ids)
    }

    /// All class ids known once `round` has completed, ascending.
    pub fn cumulative_ids(&self, round: usize, codec: &LabelCodec) -> Result<Vec<ClassId>> {
        let mut ids = Vec::new();
        for r in 0..=round {
            ids.extend(self.class_ids(r, codec)?);
        }
        ids.sort_unstable();
        Ok(ids)
    }
}

/// Train/test partition as indices into a shared record list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn indices_by_class(records: &[FlowRecord]) -> Vec<(String, Vec<usize>)> {
    let mut classes: Vec<String> = Vec::new();
    let mut buckets: Vec<Vec<usize>> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let name = super::codec::normalize_class(&r.class);
        match classes.iter().position(|c| *c == name) {
            Some(k) => buckets[k].push(i),
            None => {
                classes.push(name);
                buckets.push(vec![i]);
            }
        }
    }
    let mut pairs: Vec<(String, Vec<usize>)> = classes.into_iter().zip(buckets).collect();
    pairs.sort_by(|a, b| a.0.cmp(&b.0));
    pairs
}

/// Uniform per-class sample without replacement. `counts` maps class name to
/// how many records to keep; classes absent from `counts` are excluded.
pub fn few_shot_sample(records: &[FlowRecord], counts: &[(String, usize)], seed: u64) -> Result<Vec<usize>> {
    let by_class = indices_by_class(records);
    let mut out = Vec::new();
    for (class, want) in counts {
        let name = super::codec::normalize_class(class);
        let bucket = by_class
            .iter()
            .find(|(c, _)| *c == name)
            .map(|(_, idx)| idx)
            .ok_or_else(|| Error::Data(format!("class {name} not present in records")))?;
        if bucket.len() < *want {
            return Err(Error::Data(format!(
                "class {name} has {} records, {want} requested",
                bucket.len()
            )));
        }
        let mut idx = bucket.clone();
        let mut rng = seeded(derive_seed(seed, &format!("fewshot:{name}")));
        idx.shuffle(&mut rng);
        out.extend(idx.into_iter().take(*want));
    }
    if out.is_empty() {
        return Err(Error::Data("few-shot selection is empty".into()));
    }
    Ok(out)
}

/// Per-class split by exact (train, test) counts.
pub fn split_exact(records: &[FlowRecord], counts: &[(String, usize, usize)], seed: u64) -> Result<Split> {
    let by_class = indices_by_class(records);
    let mut split = Split { train: Vec::new(), test: Vec::new() };
    for (class, n_train, n_test) in counts {
        let name = super::codec::normalize_class(class);
        let bucket = by_class
            .iter()
            .find(|(c, _)| *c == name)
            .map(|(_, idx)| idx)
            .ok_or_else(|| Error::Data(format!("class {name} not present in records")))?;
        if bucket.len() < n_train + n_test {
            return Err(Error::Data(format!(
                "class {name} has {} records, {} requested",
                bucket.len(),
                n_train + n_test
            )));
        }
        let mut idx = bucket.clone();
        let mut rng = seeded(derive_seed(seed, &format!("split:{name}")));
        idx.shuffle(&mut rng);
        split.train.extend(idx.iter().take(*n_train).copied());
        split.test.extend(idx.iter().skip(*n_train).take(*n_test).copied());
    }
    Ok(split)
}

/// Per-class split by fraction (train share), preserving class proportions.
pub fn split_fraction(records: &[FlowRecord], train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let by_class = indices_by_class(records);
    let mut split = Split { train: Vec::new(), test: Vec::new() };
    for (class, bucket) in &by_class {
        let mut idx = bucket.clone();
        let mut rng = seeded(derive_seed(seed, &format!("split:{class}")));
        idx.shuffle(&mut rng);
        let n_train = ((idx.len() as f64) * train_fraction).round() as usize;
        split.train.extend(idx.iter().take(n_train).copied());
        split.test.extend(idx.iter().skip(n_train).copied());
    }
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::Data("split produced an empty side".into()));
    }
    Ok(split)
}

/// Per-round view of a split: indices filtered to the classes introduced at
/// that round.
#[derive(Debug, Clone)]
pub struct RoundData {
    pub round: usize,
    pub class_ids: Vec<ClassId>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits train/test indices across schedule rounds by record class. Records
/// of classes outside the schedule are omitted.
pub fn partition_rounds(
    records: &[FlowRecord],
    split: &Split,
    schedule: &RoundSchedule,
    codec: &LabelCodec,
) -> Result<Vec<RoundData>> {
    schedule.validate_against(codec)?;
    let mut rounds = Vec::with_capacity(schedule.len());
    for r in 0..schedule.len() {
        let ids = schedule.class_ids(r, codec)?;
        let keep = |i: &usize| -> bool {
            codec
                .encode(&records[*i].class)
                .map(|id| ids.contains(&id))
                .unwrap_or(false)
        };
        let train = split.train.iter().filter(|i| keep(i)).copied().collect();
        let test = split.test.iter().filter(|i| keep(i)).copied().collect();
        rounds.push(RoundData { round: r, class_ids: ids, train, test });
    }
    Ok(rounds)
}

/// Stratified k-fold: per-class shuffle, then round-robin fold assignment, so
/// per-fold class counts differ by at most one sample.
pub fn kfold(records: &[FlowRecord], k: usize, seed: u64) -> Result<Vec<Split>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if records.len() < k {
        return Err(Error::Data(format!("{} records cannot fill {k} folds", records.len())));
    }
    let by_class = indices_by_class(records);
    let mut fold_members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (class, bucket) in &by_class {
        let mut idx = bucket.clone();
        let mut rng = seeded(derive_seed(seed, &format!("fold:{class}")));
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            fold_members[j % k].push(i);
        }
    }
    Ok((0..k)
        .map(|f| Split {
            train: (0..k).filter(|j| *j != f).flat_map(|j| fold_members[j].iter().copied()).collect(),
            test: fold_members[f].clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(spec: &[(&str, usize)]) -> Vec<FlowRecord> {
        let mut out = Vec::new();
        for (class, n) in spec {
            for i in 0..*n {
                out.push(FlowRecord {
                    features: vec![("f".into(), format!("{i}"))],
                    class: class.to_string(),
                    label: u8::from(*class != "Normal"),
                });
            }
        }
        out
    }

    #[test]
    fn few_shot_sample_returns_exact_counts() {
        let recs = records(&[("Normal", 300), ("XSS", 280)]);
        let picked = few_shot_sample(&recs, &[("Normal".into(), 250), ("XSS".into(), 142)], 7).unwrap();
        assert_eq!(picked.len(), 392);
        let normals = picked.iter().filter(|&&i| recs[i].class == "Normal").count();
        assert_eq!(normals, 250);
        // no duplicates
        let mut sorted = picked.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), picked.len());
    }

    #[test]
    fn few_shot_sample_rejects_short_classes() {
        let recs = records(&[("Normal", 10)]);
        assert!(few_shot_sample(&recs, &[("Normal".into(), 11)], 7).is_err());
    }

    #[test]
    fn split_fraction_preserves_class_proportions() {
        let recs = records(&[("Normal", 100), ("XSS", 50)]);
        let s = split_fraction(&recs, 0.6, 3).unwrap();
        let train_normals = s.train.iter().filter(|&&i| recs[i].class == "Normal").count();
        let test_normals = s.test.iter().filter(|&&i| recs[i].class == "Normal").count();
        assert_eq!(train_normals, 60);
        assert_eq!(test_normals, 40);
        assert_eq!(s.train.len() + s.test.len(), 150);
    }

    #[test]
    fn split_fraction_rejects_degenerate_fractions() {
        let recs = records(&[("Normal", 10)]);
        assert!(split_fraction(&recs, 0.0, 1).is_err());
        assert!(split_fraction(&recs, 1.0, 1).is_err());
    }

    #[test]
    fn split_exact_is_disjoint_and_seed_stable() {
        let recs = records(&[("Normal", 250)]);
        let a = split_exact(&recs, &[("Normal".into(), 145, 105)], 9).unwrap();
        let b = split_exact(&recs, &[("Normal".into(), 145, 105)], 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 145);
        assert_eq!(a.test.len(), 105);
        assert!(!a.train.iter().any(|i| a.test.contains(i)));
    }

    #[test]
    fn schedule_rejects_single_class_later_rounds_and_duplicates() {
        assert!(RoundSchedule::new(vec![vec!["A".into()], vec!["B".into()]]).is_err());
        assert!(RoundSchedule::new(vec![vec!["A".into(), "A".into()]]).is_err());
        assert!(RoundSchedule::new(vec![]).is_err());
        assert!(RoundSchedule::new(vec![vec!["A".into()], vec!["B".into(), "C".into()]]).is_ok());
    }

    #[test]
    fn partition_rounds_is_a_partition_of_scheduled_classes() {
        let recs = records(&[("A", 40), ("B", 40), ("C", 40)]);
        let codec = LabelCodec::build(["A", "B", "C"]).unwrap();
        let schedule = RoundSchedule::new(vec![vec!["A".into()], vec!["B".into(), "C".into()]]).unwrap();
        let split = split_fraction(&recs, 0.5, 11).unwrap();
        let rounds = partition_rounds(&recs, &split, &schedule, &codec).unwrap();
        assert_eq!(rounds.len(), 2);
        let total_train: usize = rounds.iter().map(|r| r.train.len()).sum();
        assert_eq!(total_train, split.train.len());
        for r in &rounds {
            for &i in &r.train {
                assert!(r.class_ids.contains(&codec.encode(&recs[i].class).unwrap()));
            }
        }
    }

    #[test]
    fn kfold_is_stratified_within_one_sample() {
        let recs = records(&[("A", 23), ("B", 17)]);
        let folds = kfold(&recs, 5, 2).unwrap();
        assert_eq!(folds.len(), 5);
        for f in &folds {
            let a = f.test.iter().filter(|&&i| recs[i].class == "A").count();
            let b = f.test.iter().filter(|&&i| recs[i].class == "B").count();
            assert!((4..=5).contains(&a), "A count {a}");
            assert!((3..=4).contains(&b), "B count {b}");
            assert_eq!(f.train.len() + f.test.len(), 40);
        }
    }
}
