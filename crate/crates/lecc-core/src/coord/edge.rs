//! Edge-node client: registers with the coordinator, submits trained
//! adapters, and applies fetched bundles atomically.
//!
//! The node never owns the backbone; callers pass their frozen instance in,
//! which keeps training (needing `&mut`) and inference on one copy. A fetched
//! bundle is fully parsed and its runtime fully built before anything is
//! swapped in, so concurrent readers see either the old state or the new,
//! never a mix. An empty bundle leaves the current state alone.

use super::server::CoordStatus;
use super::transport::Transport;
use super::wire::{Message, MsgType};
use crate::continual::BundleRuntime;
use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::lora::{Adapter, AdapterBundle};
use crate::model::{fingerprint, Backbone};

pub struct EdgeNode<T: Transport> {
    node_id: u32,
    fingerprint: u32,
    transport: T,
    bundle: AdapterBundle,
    runtime: Option<BundleRuntime<f32>>,
}

impl<T: Transport> EdgeNode<T> {
    pub fn new(node_id: u32, backbone: &Backbone<f32>, transport: T) -> Result<Self> {
        if !backbone.is_frozen() {
            return Err(Error::State("edge nodes run a frozen backbone"));
        }
        let fp = fingerprint(backbone);
        Ok(EdgeNode {
            node_id,
            fingerprint: fp,
            transport,
            bundle: AdapterBundle::new(fp),
            runtime: None,
        })
    }

    pub fn node_id(&self) -> u32 {
        self.node_id
    }

    pub fn bundle(&self) -> &AdapterBundle {
        &self.bundle
    }

    pub fn known_classes(&self) -> Vec<ClassId> {
        self.runtime.as_ref().map(BundleRuntime::known_classes).unwrap_or_default()
    }

    /// Introduces the node and applies the catch-up bundle the coordinator
    /// responds with. Safe to repeat; doubles as a status poll.
    pub fn register(&mut self, backbone: &Backbone<f32>) -> Result<CoordStatus> {
        let hello = Message::new(
            MsgType::Hello,
            self.node_id,
            0,
            self.fingerprint.to_le_bytes().to_vec(),
        );
        self.transport.send(&hello)?;
        let (status, body) = self.expect_ack_bundle()?;
        self.apply_bytes(backbone, &body)?;
        Ok(status)
    }

    /// Ships one trained adapter with its metrics summary, then applies the
    /// merged bundle from the acknowledgment. A coordinator refusal surfaces
    /// as [`Error::Rejected`] with the wire reason, leaving local state as is.
    pub fn submit(
        &mut self,
        backbone: &Backbone<f32>,
        adapter: &Adapter,
        metrics: &serde_json::Value,
    ) -> Result<CoordStatus> {
        let mut body = adapter.to_bytes();
        if !metrics.is_null() {
            body.extend_from_slice(&serde_json::to_vec(metrics)?);
        }
        let msg = Message::new(MsgType::Submit, self.node_id, adapter.round, body);
        self.transport.send(&msg)?;
        let (status, bundle_body) = self.expect_ack_bundle()?;
        self.apply_bytes(backbone, &bundle_body)?;
        Ok(status)
    }

    /// Requests and applies the coordinator's current bundle.
    pub fn fetch(&mut self, backbone: &Backbone<f32>) -> Result<()> {
        let msg = Message::new(MsgType::Bundle, self.node_id, 0, Vec::new());
        self.transport.send(&msg)?;
        match self.transport.recv()? {
            Some(reply) if reply.msg_type == MsgType::Bundle => {
                self.apply_bytes(backbone, &reply.body)
            }
            Some(reply) => Err(unexpected(&reply)),
            None => Err(Error::Protocol("connection closed before the bundle".into())),
        }
    }

    /// Swaps in a bundle. The runtime is built and validated first; only
    /// then do both fields change together. Empty bundles are a no-op.
    pub fn apply(&mut self, backbone: &Backbone<f32>, bundle: AdapterBundle) -> Result<()> {
        if bundle.is_empty() {
            return Ok(());
        }
        if bundle.fingerprint() != self.fingerprint {
            return Err(Error::Incompatible {
                theirs: bundle.fingerprint(),
                ours: self.fingerprint,
            });
        }
        let runtime = BundleRuntime::new(&bundle, backbone)?;
        self.bundle = bundle;
        self.runtime = Some(runtime);
        Ok(())
    }

    pub fn predict(
        &mut self,
        backbone: &mut Backbone<f32>,
        ids: &[u32],
    ) -> Result<(ClassId, Vec<(ClassId, f64)>)> {
        let runtime = self
            .runtime
            .as_mut()
            .ok_or(Error::State("no adapters applied yet"))?;
        runtime.predict(backbone, ids)
    }

    fn apply_bytes(&mut self, backbone: &Backbone<f32>, body: &[u8]) -> Result<()> {
        let bundle = AdapterBundle::from_bytes(body, self.fingerprint)?;
        self.apply(backbone, bundle)
    }

    fn expect_ack_bundle(&mut self) -> Result<(CoordStatus, Vec<u8>)> {
        let ack = match self.transport.recv()? {
            Some(msg) if msg.msg_type == MsgType::Ack => msg,
            Some(msg) => return Err(unexpected(&msg)),
            None => return Err(Error::Protocol("connection closed before the ack".into())),
        };
        let status: CoordStatus = serde_json::from_slice(&ack.body)
            .map_err(|e| Error::Protocol(format!("unreadable ack status: {e}")))?;
        match self.transport.recv()? {
            Some(msg) if msg.msg_type == MsgType::Bundle => Ok((status, msg.body)),
            Some(msg) => Err(unexpected(&msg)),
            None => Err(Error::Protocol("connection closed before the bundle".into())),
        }
    }
}

fn unexpected(msg: &Message) -> Error {
    match msg.msg_type {
        MsgType::Reject => Error::Rejected(msg.body_text()),
        MsgType::Error => Error::Protocol(format!("coordinator error: {}", msg.body_text())),
        other => Error::Protocol(format!("unexpected {other:?} response")),
    }
}
