//! The coordinator: registers nodes, gates and merges their submissions
//! under one lock, and hands every caller the full bundle on contact.
//!
//! All bundle mutation happens inside a single mutex-guarded section, so
//! concurrent connections serialize at the exchange and the registry,
//! consolidation groups, and bundle can never tear. Responses to a HELLO or
//! an accepted SUBMIT always carry the complete current bundle, which is how
//! late joiners and previously unreachable nodes catch up.

use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::net::TcpListener;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, SystemTime};

use super::aggregate::{average, integrated, placement, Placement, ValidationGate};
use super::transport::{Loopback, TcpTransport, Transport};
use super::wire::{Message, MsgType};
use crate::bytes::Reader;
use crate::error::{Error, Result};
use crate::lora::{Adapter, AdapterBundle};
use crate::model::{fingerprint, Backbone};
use serde::{Deserialize, Serialize};

/// Per-node bookkeeping: what it runs, where it got to, what it has seen.
#[derive(Debug, Clone)]
pub struct NodeInfo {
    pub fingerprint: u32,
    pub last_round: Option<u32>,
    /// Bundle length at the node's most recent delivery.
    pub delivered_adapters: usize,
    pub last_contact: SystemTime,
}

#[derive(Debug, Default)]
pub struct NodeRegistry {
    nodes: BTreeMap<u32, NodeInfo>,
}

impl NodeRegistry {
    pub fn register(&mut self, node_id: u32, fp: u32) {
        let now = SystemTime::now();
        self.nodes
            .entry(node_id)
            .and_modify(|n| {
                n.fingerprint = fp;
                n.last_contact = now;
            })
            .or_insert(NodeInfo {
                fingerprint: fp,
                last_round: None,
                delivered_adapters: 0,
                last_contact: now,
            });
    }

    pub fn contains(&self, node_id: u32) -> bool {
        self.nodes.contains_key(&node_id)
    }

    pub fn get(&self, node_id: u32) -> Option<&NodeInfo> {
        self.nodes.get(&node_id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn saw_round(&mut self, node_id: u32, round: u32) {
        if let Some(n) = self.nodes.get_mut(&node_id) {
            n.last_round = Some(n.last_round.map_or(round, |r| r.max(round)));
            n.last_contact = SystemTime::now();
        }
    }

    fn delivered(&mut self, node_id: u32, adapters: usize) {
        if let Some(n) = self.nodes.get_mut(&node_id) {
            n.delivered_adapters = adapters;
            n.last_contact = SystemTime::now();
        }
    }
}

/// Progress counters a node can poll to learn when an exchange has settled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordStatus {
    /// Submissions processed so far, accepted and rejected alike.
    pub submissions: usize,
    pub adapters: usize,
    pub last_round: Option<u32>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubmissionRecord {
    pub node_id: u32,
    pub round: u32,
    pub bytes: usize,
    pub metrics: serde_json::Value,
    /// `accepted`, or the reject reason sent back.
    pub outcome: String,
}

/// Maps an error to the reason string carried in a REJECT body.
pub fn reject_reason(e: &Error) -> String {
    match e {
        Error::Checksum { .. } => "bad-checksum".into(),
        Error::Incompatible { .. } => "incompatible-backbone".into(),
        Error::Rejected(reason) => reason.clone(),
        Error::Format(_) => "malformed-submission".into(),
        other => other.code().into(),
    }
}

struct CoordState {
    backbone: Backbone<f32>,
    fingerprint: u32,
    bundle: AdapterBundle,
    /// Raw accepted submissions per (round, class set); consolidation
    /// averages over the whole group, not pairwise.
    groups: BTreeMap<(u32, Vec<u16>), Vec<Adapter>>,
    registry: NodeRegistry,
    submissions: Vec<SubmissionRecord>,
    gate: ValidationGate,
}

pub struct Coordinator {
    state: Mutex<CoordState>,
}

impl Coordinator {
    /// The backbone must already be frozen; its fingerprint must match the
    /// starting bundle.
    pub fn new(backbone: Backbone<f32>, bundle: AdapterBundle, gate: ValidationGate) -> Result<Self> {
        if !backbone.is_frozen() {
            return Err(Error::State("coordinator requires a frozen backbone"));
        }
        let fp = fingerprint(&backbone);
        if bundle.fingerprint() != fp {
            return Err(Error::Incompatible { theirs: bundle.fingerprint(), ours: fp });
        }
        Ok(Coordinator {
            state: Mutex::new(CoordState {
                backbone,
                fingerprint: fp,
                bundle,
                groups: BTreeMap::new(),
                registry: NodeRegistry::default(),
                submissions: Vec::new(),
                gate,
            }),
        })
    }

    pub fn fingerprint(&self) -> u32 {
        self.state.lock().unwrap().fingerprint
    }

    pub fn bundle_snapshot(&self) -> AdapterBundle {
        self.state.lock().unwrap().bundle.clone()
    }

    pub fn status(&self) -> CoordStatus {
        let s = self.state.lock().unwrap();
        CoordStatus {
            submissions: s.submissions.len(),
            adapters: s.bundle.len(),
            last_round: s.bundle.last_round(),
        }
    }

    pub fn submission_log(&self) -> Vec<SubmissionRecord> {
        self.state.lock().unwrap().submissions.clone()
    }

    pub fn node_count(&self) -> usize {
        self.state.lock().unwrap().registry.len()
    }

    pub fn node_info(&self, node_id: u32) -> Option<NodeInfo> {
        self.state.lock().unwrap().registry.get(node_id).cloned()
    }

    pub fn save_bundle(&self, path: &Path) -> Result<()> {
        self.state.lock().unwrap().bundle.save(path)
    }

    /// Serves one connection until the peer closes, an unrecoverable frame
    /// arrives, or `stop` is raised. Timeout-flavored read errors are poll
    /// ticks, not failures.
    pub fn handle_connection(&self, transport: &mut dyn Transport, stop: &AtomicBool) {
        loop {
            if stop.load(Ordering::Relaxed) {
                return;
            }
            match transport.recv() {
                Ok(None) => return,
                Ok(Some(msg)) => {
                    let (responses, close) = self.handle_message(&msg);
                    for r in &responses {
                        if transport.send(r).is_err() {
                            return;
                        }
                    }
                    if close {
                        return;
                    }
                }
                Err(Error::Io(e))
                    if e.kind() == ErrorKind::WouldBlock || e.kind() == ErrorKind::TimedOut =>
                {
                    continue;
                }
                Err(e) => {
                    let reply = match &e {
                        Error::Checksum { .. } => {
                            Message::text(MsgType::Reject, 0, 0, &reject_reason(&e))
                        }
                        _ => Message::text(MsgType::Error, 0, 0, &e.to_string()),
                    };
                    let _ = transport.send(&reply);
                    return;
                }
            }
        }
    }

    /// Computes the responses for one message and whether the connection
    /// should close afterwards.
    fn handle_message(&self, msg: &Message) -> (Vec<Message>, bool) {
        match msg.msg_type {
            MsgType::Hello => self.on_hello(msg),
            MsgType::Submit => self.on_submit(msg),
            MsgType::Bundle => self.on_fetch(msg),
            MsgType::Ack | MsgType::Reject | MsgType::Error => (
                vec![Message::text(
                    MsgType::Error,
                    msg.node_id,
                    msg.round_id,
                    "unexpected message type",
                )],
                true,
            ),
        }
    }

    fn on_hello(&self, msg: &Message) -> (Vec<Message>, bool) {
        let Ok(raw) = <[u8; 4]>::try_from(msg.body.as_slice()) else {
            return (
                vec![Message::text(
                    MsgType::Error,
                    msg.node_id,
                    msg.round_id,
                    "hello body must be a 4-byte fingerprint",
                )],
                true,
            );
        };
        let theirs = u32::from_le_bytes(raw);
        let mut s = self.state.lock().unwrap();
        if theirs != s.fingerprint {
            let reason = reject_reason(&Error::Incompatible { theirs, ours: s.fingerprint });
            return (
                vec![Message::text(MsgType::Reject, msg.node_id, msg.round_id, &reason)],
                false,
            );
        }
        s.registry.register(msg.node_id, theirs);
        let replies = ack_and_bundle(&mut s, msg);
        (replies, false)
    }

    fn on_submit(&self, msg: &Message) -> (Vec<Message>, bool) {
        let mut s = self.state.lock().unwrap();
        let parsed = parse_submission(&msg.body);
        let (round, metrics, verdict) = match parsed {
            Ok((adapter, metrics)) => {
                let round = adapter.round;
                let verdict = integrate_submission(&mut s, msg, adapter);
                (round, metrics, verdict)
            }
            Err(e) => (msg.round_id, serde_json::Value::Null, Err(e)),
        };
        let outcome = match &verdict {
            Ok(()) => "accepted".to_string(),
            Err(e) => reject_reason(e),
        };
        s.submissions.push(SubmissionRecord {
            node_id: msg.node_id,
            round,
            bytes: msg.body.len(),
            metrics,
            outcome: outcome.clone(),
        });
        match verdict {
            Ok(()) => {
                let replies = ack_and_bundle(&mut s, msg);
                (replies, false)
            }
            Err(_) => {
                (vec![Message::text(MsgType::Reject, msg.node_id, msg.round_id, &outcome)], false)
            }
        }
    }

    fn on_fetch(&self, msg: &Message) -> (Vec<Message>, bool) {
        if !msg.body.is_empty() {
            return (
                vec![Message::text(
                    MsgType::Error,
                    msg.node_id,
                    msg.round_id,
                    "bundle requests carry no body",
                )],
                true,
            );
        }
        let mut s = self.state.lock().unwrap();
        let reply = bundle_message(&mut s, msg.node_id);
        (vec![reply], false)
    }
}

/// SUBMIT body: one self-delimiting adapter, then a JSON metrics summary.
fn parse_submission(body: &[u8]) -> Result<(Adapter, serde_json::Value)> {
    let mut r = Reader::new(body);
    let adapter = Adapter::from_reader(&mut r)?;
    let rest = r.take(r.remaining())?;
    let metrics = if rest.is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::from_slice(rest)
            .map_err(|e| Error::Format(format!("metrics summary is not valid JSON: {e}")))?
    };
    Ok((adapter, metrics))
}

/// The serialized critical section: fingerprint gate, placement, group
/// consolidation, holdout gate, then commit. Any error leaves every piece
/// of state untouched.
fn integrate_submission(s: &mut CoordState, msg: &Message, adapter: Adapter) -> Result<()> {
    if !s.registry.contains(msg.node_id) {
        return Err(Error::Rejected("not-registered".into()));
    }
    if adapter.round != msg.round_id {
        return Err(Error::Rejected("round-mismatch".into()));
    }
    if adapter.backbone_fp != s.fingerprint {
        return Err(Error::Incompatible { theirs: adapter.backbone_fp, ours: s.fingerprint });
    }
    let place = placement(&s.bundle, &adapter)?;
    let key = (adapter.round, adapter.classes.clone());
    let (artifact, group) = match place {
        Placement::Insert(_) => (adapter.clone(), vec![adapter]),
        Placement::Consolidate(i) => {
            let mut group = s
                .groups
                .get(&key)
                .cloned()
                .unwrap_or_else(|| vec![s.bundle.adapters()[i].clone()]);
            group.push(adapter);
            (average(&group)?, group)
        }
    };
    let CoordState { backbone, bundle, gate, .. } = s;
    gate.check(backbone, bundle, &artifact)?;
    s.bundle = integrated(&s.bundle, artifact, place)?;
    s.groups.insert(key, group);
    s.registry.saw_round(msg.node_id, msg.round_id);
    Ok(())
}

fn bundle_message(s: &mut CoordState, node_id: u32) -> Message {
    let body = s.bundle.to_bytes();
    let round = s.bundle.last_round().unwrap_or(0);
    s.registry.delivered(node_id, s.bundle.len());
    Message::new(MsgType::Bundle, node_id, round, body)
}

/// ACK carrying the status counters, then the full current bundle.
fn ack_and_bundle(s: &mut CoordState, msg: &Message) -> Vec<Message> {
    let status = CoordStatus {
        submissions: s.submissions.len(),
        adapters: s.bundle.len(),
        last_round: s.bundle.last_round(),
    };
    let ack = Message::new(
        MsgType::Ack,
        msg.node_id,
        msg.round_id,
        serde_json::to_vec(&status).expect("status serializes"),
    );
    vec![ack, bundle_message(s, msg.node_id)]
}

/// Spawns a thread serving one in-process session against this coordinator;
/// the session ends when the returned client end is dropped.
pub fn loopback_session(coord: &Arc<Coordinator>) -> (Loopback, JoinHandle<()>) {
    let (client, mut server) = Loopback::pair();
    let c = Arc::clone(coord);
    let handle = thread::spawn(move || {
        let stop = AtomicBool::new(false);
        c.handle_connection(&mut server, &stop);
    });
    (client, handle)
}

/// Accepts TCP connections until `stop` is raised, serving each on its own
/// thread. Returns after every connection thread has finished.
pub fn serve(coord: Arc<Coordinator>, listener: TcpListener, stop: Arc<AtomicBool>) -> Result<()> {
    listener.set_nonblocking(true)?;
    let mut handles = Vec::new();
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                // periodic read timeouts let connection threads notice stop
                stream.set_read_timeout(Some(Duration::from_millis(200)))?;
                let c = Arc::clone(&coord);
                let s = Arc::clone(&stop);
                handles.push(thread::spawn(move || {
                    let mut t = TcpTransport::new(stream);
                    c.handle_connection(&mut t, &s);
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(20));
            }
            Err(e) => return Err(e.into()),
        }
    }
    for h in handles {
        let _ = h.join();
    }
    Ok(())
}
