//! Message transports: TCP sockets and an in-process loopback channel.
//!
//! Both carry the exact frame bytes produced by [`wire::encode`], so a run
//! over the loopback is byte-for-byte the run a socket would see.

use std::io::{ErrorKind, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{channel, Receiver, Sender};

use crate::coord::wire::{self, Message, MAX_PAYLOAD};
use crate::error::{Error, Result};

pub trait Transport: Send {
    fn send(&mut self, msg: &Message) -> Result<()>;

    /// Receives the next message; `Ok(None)` means the peer closed between
    /// frames. A close mid-frame is an error.
    fn recv(&mut self) -> Result<Option<Message>>;
}

pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> Self {
        TcpTransport { stream }
    }

    pub fn connect(addr: &str) -> Result<Self> {
        Ok(TcpTransport { stream: TcpStream::connect(addr)? })
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, msg: &Message) -> Result<()> {
        self.stream.write_all(&wire::encode(msg))?;
        self.stream.flush()?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Option<Message>> {
        let mut prefix = [0u8; 4];
        match self.stream.read_exact(&mut prefix) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_be_bytes(prefix) as usize;
        if len > MAX_PAYLOAD {
            return Err(Error::Protocol(format!("frame of {len} bytes exceeds the payload cap")));
        }
        let mut payload = vec![0u8; len];
        self.stream.read_exact(&mut payload)?;
        Ok(Some(wire::decode_payload(&payload)?))
    }
}

/// One end of an in-process duplex channel carrying whole frames.
pub struct Loopback {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl Loopback {
    /// Creates a connected pair; messages sent on one end arrive at the other.
    pub fn pair() -> (Loopback, Loopback) {
        let (atx, brx) = channel();
        let (btx, arx) = channel();
        (Loopback { tx: atx, rx: arx }, Loopback { tx: btx, rx: brx })
    }

    /// Test hook: injects a pre-encoded frame, bypassing the codec.
    #[cfg(test)]
    pub(crate) fn raw_send(&self, frame: Vec<u8>) {
        let _ = self.tx.send(frame);
    }
}

impl Transport for Loopback {
    fn send(&mut self, msg: &Message) -> Result<()> {
        self.tx
            .send(wire::encode(msg))
            .map_err(|_| Error::Protocol("loopback peer hung up".into()))
    }

    fn recv(&mut self) -> Result<Option<Message>> {
        let frame = match self.rx.recv() {
            Ok(frame) => frame,
            Err(_) => return Ok(None),
        };
        Ok(Some(wire::decode_frame(&frame)?))
    }
}
