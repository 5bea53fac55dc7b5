//! Adapter exchange between edge nodes and a coordinator: length-prefixed
//! checksummed frames, TCP and in-process transports, merge and validation
//! logic, the coordinator service, the edge-node client, and a multi-device
//! fleet simulation.

pub mod aggregate;
pub mod edge;
pub mod global;
pub mod server;
pub mod transport;
pub mod wire;

pub use aggregate::{average, bundle_macro_f1, ValidationGate};
pub use edge::EdgeNode;
pub use global::{
    device_flow, device_rounds, run_global, DeviceReport, DeviceRound, DeviceRoundReport,
    GlobalConfig, GlobalOutput, GlobalReport,
};
pub use server::{
    loopback_session, reject_reason, serve, CoordStatus, Coordinator, NodeInfo, NodeRegistry,
    SubmissionRecord,
};
pub use transport::{Loopback, TcpTransport, Transport};
pub use wire::{Message, MsgType};
