//! Seeded synthetic traffic generator.
//!
//! Produces capture-shaped CSVs for experiments and tests when no real
//! dataset is on disk: named flow features, two target columns, per-class
//! signature values mixed with shared background noise, and a tail of
//! null-bearing columns that the cleaning stage is expected to drop.

use crate::nn::rng::{derive_seed, seeded};
use rand::Rng;

/// Column layout of a generated capture.
#[derive(Debug, Clone, Copy)]
pub struct SynthShape {
    pub feature_columns: usize,
    pub null_columns: usize,
}

/// 68 raw feature columns, 7 of them null-bearing: 61 survive cleaning.
pub const EDGE_SHAPE: SynthShape = SynthShape { feature_columns: 68, null_columns: 7 };

/// 47 raw feature columns, 3 of them null-bearing: 44 survive cleaning.
pub const TON_SHAPE: SynthShape = SynthShape { feature_columns: 47, null_columns: 3 };

pub fn shape_by_name(name: &str) -> Option<SynthShape> {
    match name {
        "edge" => Some(EDGE_SHAPE),
        "ton" => Some(TON_SHAPE),
        _ => None,
    }
}

const BASE_NAMES: &[&str] = &[
    "tcp.dstport", "tcp.srcport", "tcp.flags", "tcp.window", "tcp.ack", "tcp.seq", "tcp.len",
    "udp.dstport", "udp.srcport", "udp.len", "ip.ttl", "ip.len", "ip.proto", "ip.flags",
    "frame.len", "frame.protocols", "mqtt.conflag.cleansess", "mqtt.msgtype", "mqtt.qos",
    "http.request.method", "http.response.code", "http.content_length", "dns.qry.type",
    "dns.qry.name.len", "dns.retransmission", "icmp.type", "icmp.code", "icmp.seq",
    "arp.opcode", "arp.hw.size", "tcp.connection.syn", "tcp.connection.fin",
    "tcp.connection.rst", "tcp.checksum.status", "mbtcp.trans_id", "mbtcp.unit_id",
];

/// Attack family names available to the generator; index 0 is the benign
/// class. Extend `n` past the builtin list and the names wrap numerically.
pub fn class_names(n: usize) -> Vec<String> {
    const FAMILIES: &[&str] = &[
        "Normal", "DDoS_UDP", "Password", "XSS", "Backdoor", "SQL_injection", "Fingerprinting",
        "MITM", "Port_Scanning", "Uploading", "DDoS_TCP", "DDoS_ICMP", "DDoS_HTTP", "Ransomware",
        "Vulnerability_scanner", "DDoS_DNS", "Brute_Force", "Crypto_Mining", "Spoofing", "Botnet",
        "Exfiltration", "Worm", "Trojan", "Keylogger",
    ];
    (0..n)
        .map(|i| {
            if i < FAMILIES.len() {
                FAMILIES[i].to_string()
            } else {
                format!("Family_{i}")
            }
        })
        .collect()
}

fn feature_names(shape: SynthShape) -> Vec<String> {
    (0..shape.feature_columns)
        .map(|j| {
            if j < BASE_NAMES.len() {
                BASE_NAMES[j].to_string()
            } else {
                format!("flow.stat.{j}")
            }
        })
        .collect()
}

/// Index of the k-th signature column for class `ic`, always outside the
/// null-bearing tail.
fn signature_column(ic: usize, k: usize, usable: usize) -> usize {
    (ic * 3 + k * 11 + 5) % usable
}

fn background_value(j: usize, rng: &mut impl Rng) -> String {
    match j % 4 {
        0 => format!("{}", j * 3 + rng.gen_range(0..5)),
        1 => format!("{:.4}", (j as f64) * 0.37 + rng.gen_range(-0.5..0.5)),
        2 => format!("v{}_{}", j, rng.gen_range(0..4)),
        _ => format!("{}", 1000 + j * 13 + rng.gen_range(0..8)),
    }
}

/// Generates a capture CSV: `rows_per_class` rows for each class, feature
/// columns per `shape`, targets `Attack_type` and `Attack_label` at the end.
pub fn generate_csv(classes: &[String], rows_per_class: usize, shape: SynthShape, seed: u64) -> String {
    assert!(shape.null_columns < shape.feature_columns, "need usable columns");
    let names = feature_names(shape);
    let usable = shape.feature_columns - shape.null_columns;
    let mut rng = seeded(derive_seed(seed, "synth"));
    let mut out = String::new();
    out.push_str(&names.join(","));
    out.push_str(",Attack_type,Attack_label\n");
    for (ic, class) in classes.iter().enumerate() {
        let sig_cols: Vec<usize> = (0..3).map(|k| signature_column(ic, k, usable)).collect();
        for row in 0..rows_per_class {
            for (j, _) in names.iter().enumerate() {
                if j >= usable {
                    // null-bearing tail; row 0 is always null so cleaning is deterministic
                    if row == 0 || rng.gen_bool(0.25) {
                        out.push(',');
                        continue;
                    }
                    out.push_str(&background_value(j, &mut rng));
                    out.push(',');
                    continue;
                }
                let sig_k = sig_cols.iter().position(|&c| c == j);
                let value = match sig_k {
                    Some(k) if rng.gen_bool(0.92) => format!("{}", 7000 + ic * 29 + k * 3),
                    _ => background_value(j, &mut rng),
                };
                out.push_str(&value);
                out.push(',');
            }
            out.push_str(class);
            out.push(',');
            out.push(if ic == 0 && class == "Normal" { '0' } else { '1' });
            out.push('\n');
        }
    }
    out
}
