//! Built-in few-shot budgets and round schedules.
//!
//! `table3` is the per-class sample budget used throughout the desk-scale
//! experiments (2250 train / 1500 test across 15 classes); `table2` is the
//! matching 7-round class-incremental schedule.

use super::split::RoundSchedule;
use crate::error::{Error, Result};

/// Per-class (name, train, test) budget.
pub fn few_shot_preset(name: &str) -> Result<Vec<(String, usize, usize)>> {
    match name {
        "table3" => Ok(TABLE3
            .iter()
            .map(|(c, tr, te)| (c.to_string(), *tr, *te))
            .collect()),
        other => Err(Error::Config(format!("unknown few-shot preset {other}"))),
    }
}

pub fn schedule_preset(name: &str) -> Result<RoundSchedule> {
    match name {
        "table2" => RoundSchedule::new(
            TABLE2
                .iter()
                .map(|round| round.iter().map(|c| c.to_string()).collect())
                .collect(),
        ),
        other => Err(Error::Config(format!("unknown schedule preset {other}"))),
    }
}

const TABLE3: &[(&str, usize, usize)] = &[
    ("Normal", 145, 105),
    ("DDoS_UDP", 155, 95),
    ("Password", 146, 104),
    ("XSS", 142, 108),
    ("Backdoor", 152, 98),
    ("SQL_injection", 136, 114),
    ("Fingerprinting", 150, 100),
    ("MITM", 158, 92),
    ("Port_Scanning", 156, 94),
    ("Uploading", 155, 95),
    ("DDoS_TCP", 142, 108),
    ("DDoS_ICMP", 155, 95),
    ("DDoS_HTTP", 153, 97),
    ("Ransomware", 156, 94),
    ("Vulnerability_scanner", 149, 101),
];

const TABLE2: &[&[&str]] = &[
    &["Normal", "DDoS_UDP", "Password"],
    &["XSS", "Backdoor"],
    &["SQL_injection", "Fingerprinting"],
    &["MITM", "Port_Scanning"],
    &["Uploading", "DDoS_TCP"],
    &["DDoS_ICMP", "DDoS_HTTP"],
    &["Ransomware", "Vulnerability_scanner"],
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_totals_are_sixty_forty() {
        let rows = few_shot_preset("table3").unwrap();
        assert_eq!(rows.len(), 15);
        let train: usize = rows.iter().map(|r| r.1).sum();
        let test: usize = rows.iter().map(|r| r.2).sum();
        assert_eq!(train, 2250);
        assert_eq!(test, 1500);
    }

    #[test]
    fn schedule_covers_every_budget_class_once() {
        let schedule = schedule_preset("table2").unwrap();
        assert_eq!(schedule.len(), 7);
        assert_eq!(schedule.rounds[0].len(), 3);
        let scheduled: usize = schedule.rounds.iter().map(|r| r.len()).sum();
        assert_eq!(scheduled, 15);
        let budget = few_shot_preset("table3").unwrap();
        for round in &schedule.rounds {
            for class in round {
                assert!(budget.iter().any(|(c, _, _)| c == class), "{class} missing from budget");
            }
        }
    }

    #[test]
    fn unknown_preset_names_are_config_errors() {
        assert!(few_shot_preset("nope").is_err());
        assert!(schedule_preset("nope").is_err());
    }
}
