//! Frame and message codec for the exchange protocol.
//!
//! A frame is a big-endian u32 payload length followed by the payload:
//! magic `LECC`, version u16, message type u8, node id u32, round id u32,
//! body length u32, body bytes, then CRC32 over everything before it.
//! All payload integers are little-endian.

use crate::bytes::{put_u16, put_u32, Reader};
use crate::error::{Error, Result};

pub const WIRE_MAGIC: &[u8; 4] = b"LECC";
pub const WIRE_VERSION: u16 = 1;

/// Payload bytes before the body: magic, version, type, node, round,
/// body length, plus the trailing CRC32.
pub const PAYLOAD_OVERHEAD: usize = 4 + 2 + 1 + 4 + 4 + 4 + 4;

/// Upper bound on a payload; a length prefix beyond this is treated as a
/// protocol violation rather than an allocation request.
pub const MAX_PAYLOAD: usize = 32 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsgType {
    Hello = 1,
    Submit = 2,
    Bundle = 3,
    Ack = 4,
    Reject = 5,
    Error = 6,
}

impl MsgType {
    pub fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            1 => MsgType::Hello,
            2 => MsgType::Submit,
            3 => MsgType::Bundle,
            4 => MsgType::Ack,
            5 => MsgType::Reject,
            6 => MsgType::Error,
            _ => return Err(Error::Format(format!("unknown message type {tag}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub msg_type: MsgType,
    pub node_id: u32,
    pub round_id: u32,
    pub body: Vec<u8>,
}

impl Message {
    pub fn new(msg_type: MsgType, node_id: u32, round_id: u32, body: Vec<u8>) -> Self {
        Message { msg_type, node_id, round_id, body }
    }

    /// Shorthand for control messages whose body is human-readable text.
    pub fn text(msg_type: MsgType, node_id: u32, round_id: u32, text: &str) -> Self {
        Message { msg_type, node_id, round_id, body: text.as_bytes().to_vec() }
    }

    pub fn body_text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

/// Serializes a message to a complete frame, length prefix included.
pub fn encode(msg: &Message) -> Vec<u8> {
    let payload_len = PAYLOAD_OVERHEAD + msg.body.len();
    let mut out = Vec::with_capacity(4 + payload_len);
    out.extend_from_slice(&(payload_len as u32).to_be_bytes());
    out.extend_from_slice(WIRE_MAGIC);
    put_u16(&mut out, WIRE_VERSION);
    out.push(msg.msg_type as u8);
    put_u32(&mut out, msg.node_id);
    put_u32(&mut out, msg.round_id);
    put_u32(&mut out, msg.body.len() as u32);
    out.extend_from_slice(&msg.body);
    let crc = crc32fast::hash(&out[4..]);
    put_u32(&mut out, crc);
    out
}

/// Parses one payload (frame minus the length prefix).
pub fn decode_payload(payload: &[u8]) -> Result<Message> {
    if payload.len() < PAYLOAD_OVERHEAD {
        return Err(Error::Format(format!("payload of {} bytes is too short", payload.len())));
    }
    let stored = u32::from_le_bytes(payload[payload.len() - 4..].try_into().unwrap());
    let actual = crc32fast::hash(&payload[..payload.len() - 4]);
    if stored != actual {
        return Err(Error::Checksum { expected: stored, actual });
    }
    let mut r = Reader::new(&payload[..payload.len() - 4]);
    r.expect_magic(WIRE_MAGIC, "message")?;
    let version = r.u16()?;
    if version != WIRE_VERSION {
        return Err(Error::Format(format!("unsupported protocol version {version}")));
    }
    let msg_type = MsgType::from_tag(r.u8()?)?;
    let node_id = r.u32()?;
    let round_id = r.u32()?;
    let body_len = r.u32()? as usize;
    if body_len != r.remaining() {
        return Err(Error::Format(format!(
            "body length {body_len} does not match the {} bytes present",
            r.remaining()
        )));
    }
    let body = r.take(body_len)?.to_vec();
    Ok(Message { msg_type, node_id, round_id, body })
}

/// Parses a complete frame, validating the length prefix.
pub fn decode_frame(frame: &[u8]) -> Result<Message> {
    if frame.len() < 4 {
        return Err(Error::Format("frame shorter than its length prefix".into()));
    }
    let len = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(Error::Protocol(format!("frame of {len} bytes exceeds the payload cap")));
    }
    if len != frame.len() - 4 {
        return Err(Error::Format(format!(
            "frame length {len} does not match the {} payload bytes present",
            frame.len() - 4
        )));
    }
    decode_payload(&frame[4..])
}
