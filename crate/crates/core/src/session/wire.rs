//! Self-delimiting authenticated frames.
//!
//! ```text
//! "CVQK" | version u8 | msg_type u8 | block_id u32 BE | payload_len u32 BE
//!        | payload | tag [16]
//! ```
//! The tag covers header and payload.

use std::io::{self, Read, Write};

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::{Result, SessionError};

pub const MAGIC: [u8; 4] = *b"CVQK";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 14;
pub const TAG_LEN: usize = 16;
/// Upper bound on a single payload; anything larger is a protocol error.
pub const MAX_PAYLOAD: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum MsgType {
    Hello = 1,
    BlockMeta = 2,
    SiftReveal = 3,
    EstimateReveal = 4,
    Syndromes = 5,
    PaSeeds = 6,
    KeyConfirm = 7,
    Abort = 8,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<Self> {
        use MsgType::*;
        Some(match v {
            1 => Hello,
            2 => BlockMeta,
            3 => SiftReveal,
            4 => EstimateReveal,
            5 => Syndromes,
            6 => PaSeeds,
            7 => KeyConfirm,
            8 => Abort,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub block_id: u32,
    pub payload: Vec<u8>,
}

/// Authentication backend. The default implementation is HMAC-SHA256
/// truncated to 16 bytes; any keyed MAC can be substituted.
pub trait Authenticator: Send + Sync {
    fn tag(&self, message: &[u8]) -> [u8; TAG_LEN];

    fn verify(&self, message: &[u8], tag: &[u8; TAG_LEN]) -> bool {
        // Constant-time comparison.
        self.tag(message)
            .iter()
            .zip(tag)
            .fold(0u8, |acc, (a, b)| acc | (a ^ b))
            == 0
    }
}

#[derive(Clone)]
pub struct HmacAuthenticator {
    key: Vec<u8>,
}

impl HmacAuthenticator {
    pub fn new(key: &[u8]) -> Result<Self> {
        if key.is_empty() {
            return Err(SessionError::Config("empty authentication key".into()));
        }
        Ok(HmacAuthenticator { key: key.to_vec() })
    }

    fn mac(&self) -> Hmac<Sha256> {
        <Hmac<Sha256> as KeyInit>::new_from_slice(&self.key).expect("HMAC accepts any key length")
    }

    /// HMAC-SHA256 over `parts`, full 32-byte output.
    pub fn digest(&self, parts: &[&[u8]]) -> [u8; 32] {
        let mut mac = self.mac();
        for p in parts {
            mac.update(p);
        }
        mac.finalize().into_bytes().into()
    }
}

impl Authenticator for HmacAuthenticator {
    fn tag(&self, message: &[u8]) -> [u8; TAG_LEN] {
        let full = self.digest(&[message]);
        full[..TAG_LEN].try_into().unwrap()
    }

    fn verify(&self, message: &[u8], tag: &[u8; TAG_LEN]) -> bool {
        let mut mac = self.mac();
        mac.update(message);
        mac.verify_truncated_left(tag).is_ok()
    }
}

impl Frame {
    pub fn new(msg_type: MsgType, block_id: u32, payload: Vec<u8>) -> Self {
        Frame {
            msg_type,
            block_id,
            payload,
        }
    }

    fn header(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[..4].copy_from_slice(&MAGIC);
        h[4] = VERSION;
        h[5] = self.msg_type as u8;
        h[6..10].copy_from_slice(&self.block_id.to_be_bytes());
        h[10..14].copy_from_slice(&(self.payload.len() as u32).to_be_bytes());
        h
    }

    pub fn encode(&self, auth: &dyn Authenticator) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len() + TAG_LEN);
        out.extend_from_slice(&self.header());
        out.extend_from_slice(&self.payload);
        let tag = auth.tag(&out);
        out.extend_from_slice(&tag);
        out
    }

    /// Reads one frame. `Ok(None)` on a clean end of stream before any
    /// header byte.
    pub fn read_from<R: Read>(r: &mut R, auth: &dyn Authenticator) -> Result<Option<Frame>> {
        let mut header = [0u8; HEADER_LEN];
        let mut got = 0;
        while got < HEADER_LEN {
            match r.read(&mut header[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => return Err(SessionError::Protocol("truncated frame header".into())),
                Ok(k) => got += k,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        if header[..4] != MAGIC {
            return Err(SessionError::Protocol("bad magic".into()));
        }
        if header[4] != VERSION {
            return Err(SessionError::Protocol(format!("unsupported version {}", header[4])));
        }
        let msg_type = MsgType::from_u8(header[5])
            .ok_or_else(|| SessionError::Protocol(format!("unknown message type {}", header[5])))?;
        let block_id = u32::from_be_bytes(header[6..10].try_into().unwrap());
        let len = u32::from_be_bytes(header[10..14].try_into().unwrap()) as usize;
        if len > MAX_PAYLOAD {
            return Err(SessionError::Protocol(format!("payload of {len} bytes")));
        }
        let mut body = vec![0u8; HEADER_LEN + len + TAG_LEN];
        body[..HEADER_LEN].copy_from_slice(&header);
        r.read_exact(&mut body[HEADER_LEN..]).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                SessionError::Protocol("truncated frame".into())
            } else {
                e.into()
            }
        })?;
        let tag: [u8; TAG_LEN] = body[HEADER_LEN + len..].try_into().unwrap();
        if !auth.verify(&body[..HEADER_LEN + len], &tag) {
            return Err(SessionError::Authentication { msg_type: header[5], block_id });
        }
        body.truncate(HEADER_LEN + len);
        body.drain(..HEADER_LEN);
        Ok(Some(Frame {
            msg_type,
            block_id,
            payload: body,
        }))
    }

    pub fn write_to<W: Write>(&self, w: &mut W, auth: &dyn Authenticator) -> Result<()> {
        w.write_all(&self.encode(auth))?;
        w.flush()?;
        Ok(())
    }
}

/// Little-endian payload builder.
#[derive(Debug, Default)]
pub(crate) struct PayloadWriter(pub Vec<u8>);

impl PayloadWriter {
    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.0.push(v);
        self
    }
    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.0.extend_from_slice(v);
        self
    }
}

pub(crate) struct PayloadReader<'a> {
    data: &'a [u8],
    what: &'static str,
}

impl<'a> PayloadReader<'a> {
    pub fn new(data: &'a [u8], what: &'static str) -> Self {
        PayloadReader { data, what }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() < n {
            return Err(SessionError::Protocol(format!("{} payload too short", self.what)));
        }
        let (head, tail) = self.data.split_at(n);
        self.data = tail;
        Ok(head)
    }
    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.data)
    }
    pub fn finish(&self) -> Result<()> {
        if self.data.is_empty() {
            Ok(())
        } else {
            Err(SessionError::Protocol(format!("{} payload has trailing bytes", self.what)))
        }
    }
}
