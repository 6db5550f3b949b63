//! Sync wire protocol shared by the device queue and the middleware.
//!
//! Every frame is `body_len: u32 LE | type: u8 | body[body_len]`. Inside
//! bodies, integers are little-endian and variable-length fields (strings and
//! byte blobs) carry a `u32 LE` length prefix. Keys and digests are raw 32
//! bytes.
//!
//! | type | frame         | body                                                     |
//! |------|---------------|----------------------------------------------------------|
//! | 0x01 | HELLO         | proto_version u8, device_id str                          |
//! | 0x02 | PUT_RECORD    | key, manifest bytes                                      |
//! | 0x03 | PUT_DOC_CHUNK | key, doc_id str, seq u32, total u32, chunk bytes         |
//! | 0x04 | DOC_DONE      | key, digest                                              |
//! | 0x05 | ACK           | key                                                      |
//! | 0x06 | NACK          | key, reason str                                          |
//! | 0x07 | STATUS_REQ    | count u16, app_id str × count                            |
//! | 0x08 | STATUS_RESP   | count u16, (app_id str, status u8) × count               |
//! | 0x09 | BYE           | (empty)                                                  |
//!
//! Status codes are 0 Draft, 1 Submitted, 2 UnderReview, 3 Approved,
//! 4 Rejected, and 0xFF for an id the server does not know.

use std::fmt;

use crate::records::Status;

pub const PROTO_VERSION: u8 = 1;
pub const FRAME_HEADER_LEN: usize = 5;
pub const MAX_FRAME_BODY: u32 = 16 * 1024 * 1024;
pub const STATUS_UNKNOWN: u8 = 0xFF;

/// Idempotency key: SHA-256 over an item's payload and its record id.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ItemKey(pub [u8; 32]);

impl ItemKey {
    pub const ZERO: ItemKey = ItemKey([0; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).ok()?;
        Some(Self(out))
    }
}

impl fmt::Debug for ItemKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ItemKey({}…)", &self.to_hex()[..12])
    }
}

impl fmt::Display for ItemKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Frame {
    Hello {
        proto_version: u8,
        device_id: String,
    },
    PutRecord {
        key: ItemKey,
        manifest: Vec<u8>,
    },
    PutDocChunk {
        key: ItemKey,
        doc_id: String,
        seq: u32,
        total: u32,
        chunk: Vec<u8>,
    },
    DocDone {
        key: ItemKey,
        digest: [u8; 32],
    },
    Ack {
        key: ItemKey,
    },
    Nack {
        key: ItemKey,
        reason: String,
    },
    StatusReq {
        app_ids: Vec<String>,
    },
    StatusResp {
        entries: Vec<(String, Option<Status>)>,
    },
    Bye,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("frame truncated")]
    Truncated,
    #[error("unknown frame type 0x{0:02x}")]
    UnknownType(u8),
    #[error("frame body of {0} bytes exceeds limit")]
    Oversized(u32),
    #[error("invalid UTF-8 in {0}")]
    BadUtf8(&'static str),
    #[error("{0} trailing bytes in frame body")]
    TrailingBytes(usize),
    #[error("invalid field: {0}")]
    InvalidField(&'static str),
}

impl Frame {
    pub fn type_code(&self) -> u8 {
        match self {
            Frame::Hello { .. } => 0x01,
            Frame::PutRecord { .. } => 0x02,
            Frame::PutDocChunk { .. } => 0x03,
            Frame::DocDone { .. } => 0x04,
            Frame::Ack { .. } => 0x05,
            Frame::Nack { .. } => 0x06,
            Frame::StatusReq { .. } => 0x07,
            Frame::StatusResp { .. } => 0x08,
            Frame::Bye => 0x09,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::new();
        match self {
            Frame::Hello {
                proto_version,
                device_id,
            } => {
                body.push(*proto_version);
                put_bytes(&mut body, device_id.as_bytes());
            }
            Frame::PutRecord { key, manifest } => {
                body.extend_from_slice(&key.0);
                put_bytes(&mut body, manifest);
            }
            Frame::PutDocChunk {
                key,
                doc_id,
                seq,
                total,
                chunk,
            } => {
                body.extend_from_slice(&key.0);
                put_bytes(&mut body, doc_id.as_bytes());
                body.extend_from_slice(&seq.to_le_bytes());
                body.extend_from_slice(&total.to_le_bytes());
                put_bytes(&mut body, chunk);
            }
            Frame::DocDone { key, digest } => {
                body.extend_from_slice(&key.0);
                body.extend_from_slice(digest);
            }
            Frame::Ack { key } => body.extend_from_slice(&key.0),
            Frame::Nack { key, reason } => {
                body.extend_from_slice(&key.0);
                put_bytes(&mut body, reason.as_bytes());
            }
            Frame::StatusReq { app_ids } => {
                body.extend_from_slice(&(app_ids.len() as u16).to_le_bytes());
                for id in app_ids {
                    put_bytes(&mut body, id.as_bytes());
                }
            }
            Frame::StatusResp { entries } => {
                body.extend_from_slice(&(entries.len() as u16).to_le_bytes());
                for (id, status) in entries {
                    put_bytes(&mut body, id.as_bytes());
                    body.push(status.map_or(STATUS_UNKNOWN, Status::code));
                }
            }
            Frame::Bye => {}
        }
        let mut out = Vec::with_capacity(FRAME_HEADER_LEN + body.len());
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.push(self.type_code());
        out.extend_from_slice(&body);
        out
    }

    pub fn encoded_len(&self) -> usize {
        // Cheap enough for the sizes involved; keeps one source of truth.
        self.encode().len()
    }

    /// Decode one frame from the front of `buf`. `Ok(None)` means more bytes
    /// are needed; otherwise returns the frame and the bytes consumed.
    pub fn try_decode(buf: &[u8]) -> Result<Option<(Frame, usize)>, ProtocolError> {
        if buf.len() < FRAME_HEADER_LEN {
            return Ok(None);
        }
        let len = u32::from_le_bytes(buf[..4].try_into().unwrap());
        if len > MAX_FRAME_BODY {
            return Err(ProtocolError::Oversized(len));
        }
        let end = FRAME_HEADER_LEN + len as usize;
        if buf.len() < end {
            return Ok(None);
        }
        let frame = Self::decode_body(buf[4], &buf[FRAME_HEADER_LEN..end])?;
        Ok(Some((frame, end)))
    }

    /// Decode a buffer holding exactly one frame.
    pub fn decode(buf: &[u8]) -> Result<Frame, ProtocolError> {
        match Self::try_decode(buf)? {
            Some((frame, used)) if used == buf.len() => Ok(frame),
            Some((_, used)) => Err(ProtocolError::TrailingBytes(buf.len() - used)),
            None => Err(ProtocolError::Truncated),
        }
    }

    fn decode_body(kind: u8, body: &[u8]) -> Result<Frame, ProtocolError> {
        let mut r = Reader { buf: body, pos: 0 };
        let frame = match kind {
            0x01 => Frame::Hello {
                proto_version: r.u8()?,
                device_id: r.string("device_id")?,
            },
            0x02 => Frame::PutRecord {
                key: r.key()?,
                manifest: r.bytes()?.to_vec(),
            },
            0x03 => {
                let key = r.key()?;
                let doc_id = r.string("doc_id")?;
                let seq = r.u32()?;
                let total = r.u32()?;
                if total == 0 || seq >= total {
                    return Err(ProtocolError::InvalidField("chunk seq/total"));
                }
                Frame::PutDocChunk {
                    key,
                    doc_id,
                    seq,
                    total,
                    chunk: r.bytes()?.to_vec(),
                }
            }
            0x04 => Frame::DocDone {
                key: r.key()?,
                digest: r.array32()?,
            },
            0x05 => Frame::Ack { key: r.key()? },
            0x06 => Frame::Nack {
                key: r.key()?,
                reason: r.string("reason")?,
            },
            0x07 => {
                let n = r.u16()?;
                let app_ids = (0..n).map(|_| r.string("app_id")).collect::<Result<_, _>>()?;
                Frame::StatusReq { app_ids }
            }
            0x08 => {
                let n = r.u16()?;
                let mut entries = Vec::with_capacity(n as usize);
                for _ in 0..n {
                    let id = r.string("app_id")?;
                    let code = r.u8()?;
                    let status = match code {
                        STATUS_UNKNOWN => None,
                        c => Some(Status::from_code(c).ok_or(ProtocolError::InvalidField("status code"))?),
                    };
                    entries.push((id, status));
                }
                Frame::StatusResp { entries }
            }
            0x09 => Frame::Bye,
            other => return Err(ProtocolError::UnknownType(other)),
        };
        match body.len() - r.pos {
            0 => Ok(frame),
            n => Err(ProtocolError::TrailingBytes(n)),
        }
    }

    /// Key the frame refers to, if any.
    pub fn key(&self) -> Option<ItemKey> {
        match self {
            Frame::PutRecord { key, .. }
            | Frame::PutDocChunk { key, .. }
            | Frame::DocDone { key, .. }
            | Frame::Ack { key }
            | Frame::Nack { key, .. } => Some(*key),
            _ => None,
        }
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        let end = self.pos.checked_add(n).ok_or(ProtocolError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(ProtocolError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ProtocolError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn array32(&mut self) -> Result<[u8; 32], ProtocolError> {
        Ok(self.take(32)?.try_into().unwrap())
    }

    fn key(&mut self) -> Result<ItemKey, ProtocolError> {
        self.array32().map(ItemKey)
    }

    fn bytes(&mut self) -> Result<&'a [u8], ProtocolError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn string(&mut self, field: &'static str) -> Result<String, ProtocolError> {
        let b = self.bytes()?;
        String::from_utf8(b.to_vec()).map_err(|_| ProtocolError::BadUtf8(field))
    }
}

/// Server reaction to one inbound frame.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct Reply {
    pub frames: Vec<Frame>,
    /// Close the connection after sending `frames`.
    pub close: bool,
}

impl Reply {
    pub fn one(frame: Frame) -> Self {
        Self {
            frames: vec![frame],
            close: false,
        }
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn closing(frame: Frame) -> Self {
        Self {
            frames: vec![frame],
            close: true,
        }
    }
}

/// The server end of a connection, fed one decoded frame at a time.
pub trait FrameHandler {
    fn handle(&mut self, frame: Frame, now_ms: u64) -> Reply;

    /// Reaction to bytes that do not decode as a frame.
    fn malformed(&mut self, _err: &ProtocolError) -> Reply {
        Reply::closing(Frame::Nack {
            key: ItemKey::ZERO,
            reason: "protocol".into(),
        })
    }
}
