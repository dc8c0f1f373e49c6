//! Binary wire format for cluster messages.
//!
//! ```text
//! +----------------------+---------+-------------------------+
//! | len: u32 (LE)        | tag: u8 | body (len - 1 bytes)    |
//! +----------------------+---------+-------------------------+
//! ```
//!
//! `len` counts the tag and the body. Integers are fixed-width little-endian,
//! floats are IEEE-754 binary64 little-endian, and every array is preceded by
//! its element count as a `u32`. Strings are UTF-8 with a `u32` byte count.

use std::io::{self, Read, Write};

use thiserror::Error;

/// Frames larger than this are rejected before any allocation.
pub const DEFAULT_MAX_FRAME: u32 = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello {
        worker_id: u32,
    },
    Heartbeat {
        worker_id: u32,
        seq: u64,
    },
    /// Compute the gradient sum over `samples` at weights `version`.
    Assign {
        worker_id: u32,
        epoch: u64,
        iter: u64,
        version: u64,
        samples: Vec<u64>,
    },
    PushGrad {
        worker_id: u32,
        iter: u64,
        version: u64,
        local_batch: u32,
        loss_sum: f64,
        grad: Vec<f64>,
    },
    PullWeights {
        worker_id: u32,
    },
    Weights {
        version: u64,
        payload: Vec<f64>,
    },
    Resize {
        roster: Vec<u32>,
    },
    Shutdown,
    /// Scheduler's reply to `Hello`: the assigned id and the run config.
    Setup {
        worker_id: u32,
        config: String,
    },
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::Hello { .. } => 1,
            Message::Heartbeat { .. } => 2,
            Message::Assign { .. } => 3,
            Message::PushGrad { .. } => 4,
            Message::PullWeights { .. } => 5,
            Message::Weights { .. } => 6,
            Message::Resize { .. } => 7,
            Message::Shutdown => 8,
            Message::Setup { .. } => 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("truncated frame: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("unknown message tag {tag} at offset {offset}")]
    UnknownTag { tag: u8, offset: usize },
    #[error("declared frame length {declared} at offset 0 exceeds limit {limit}")]
    LengthOverflow { declared: u64, limit: u32 },
    #[error("empty frame at offset 0")]
    EmptyFrame,
    #[error("{extra} trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("invalid utf-8 string at offset {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("connection closed")]
    Closed,
    #[error("io: {0}")]
    Io(String),
}

impl From<io::Error> for WireError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            WireError::Closed
        } else {
            WireError::Io(e.to_string())
        }
    }
}

struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("array longer than u32::MAX"));
    }
}

/// Encodes a complete frame, length prefix included.
pub fn encode(msg: &Message) -> Vec<u8> {
    let mut e = Enc(vec![0; 4]);
    e.u8(msg.tag());
    match msg {
        Message::Hello { worker_id } | Message::PullWeights { worker_id } => e.u32(*worker_id),
        Message::Heartbeat { worker_id, seq } => {
            e.u32(*worker_id);
            e.u64(*seq);
        }
        Message::Assign {
            worker_id,
            epoch,
            iter,
            version,
            samples,
        } => {
            e.u32(*worker_id);
            e.u64(*epoch);
            e.u64(*iter);
            e.u64(*version);
            e.len(samples.len());
            samples.iter().for_each(|s| e.u64(*s));
        }
        Message::PushGrad {
            worker_id,
            iter,
            version,
            local_batch,
            loss_sum,
            grad,
        } => {
            e.u32(*worker_id);
            e.u64(*iter);
            e.u64(*version);
            e.u32(*local_batch);
            e.f64(*loss_sum);
            e.len(grad.len());
            grad.iter().for_each(|g| e.f64(*g));
        }
        Message::Weights { version, payload } => {
            e.u64(*version);
            e.len(payload.len());
            payload.iter().for_each(|g| e.f64(*g));
        }
        Message::Resize { roster } => {
            e.len(roster.len());
            roster.iter().for_each(|r| e.u32(*r));
        }
        Message::Shutdown => {}
        Message::Setup { worker_id, config } => {
            e.u32(*worker_id);
            e.len(config.len());
            e.0.extend_from_slice(config.as_bytes());
        }
    }
    let body = u32::try_from(e.0.len() - 4).expect("frame longer than u32::MAX");
    e.0[..4].copy_from_slice(&body.to_le_bytes());
    e.0
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() - self.pos < n {
            return Err(WireError::Truncated {
                offset: self.pos,
                needed: n,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    /// Element count, checked against the remaining bytes before allocating.
    fn count(&mut self, width: usize) -> Result<usize, WireError> {
        let at = self.pos;
        let n = self.u32()? as usize;
        if n.saturating_mul(width) > self.buf.len() - self.pos {
            return Err(WireError::Truncated {
                offset: at + 4,
                needed: n * width,
            });
        }
        Ok(n)
    }
}

/// Decodes one frame from the front of `buf`; returns the message and the
/// number of bytes consumed.
pub fn decode_prefix(buf: &[u8], limit: u32) -> Result<(Message, usize), WireError> {
    let mut d = Dec { buf, pos: 0 };
    let len = d.u32()?;
    if len > limit {
        return Err(WireError::LengthOverflow {
            declared: len as u64,
            limit,
        });
    }
    if len == 0 {
        return Err(WireError::EmptyFrame);
    }
    let end = 4 + len as usize;
    if buf.len() < end {
        return Err(WireError::Truncated {
            offset: buf.len(),
            needed: end - buf.len(),
        });
    }
    let mut d = Dec {
        buf: &buf[..end],
        pos: 4,
    };
    let msg = decode_body(&mut d)?;
    if d.pos != end {
        return Err(WireError::TrailingBytes {
            offset: d.pos,
            extra: end - d.pos,
        });
    }
    Ok((msg, end))
}

/// Decodes exactly one frame occupying all of `buf`.
pub fn decode(buf: &[u8]) -> Result<Message, WireError> {
    let (msg, used) = decode_prefix(buf, DEFAULT_MAX_FRAME)?;
    if used != buf.len() {
        return Err(WireError::TrailingBytes {
            offset: used,
            extra: buf.len() - used,
        });
    }
    Ok(msg)
}

fn decode_body(d: &mut Dec<'_>) -> Result<Message, WireError> {
    let tag_at = d.pos;
    let tag = d.u8()?;
    let msg = match tag {
        1 => Message::Hello { worker_id: d.u32()? },
        2 => Message::Heartbeat {
            worker_id: d.u32()?,
            seq: d.u64()?,
        },
        3 => {
            let worker_id = d.u32()?;
            let epoch = d.u64()?;
            let iter = d.u64()?;
            let version = d.u64()?;
            let n = d.count(8)?;
            let samples = (0..n).map(|_| d.u64()).collect::<Result<_, _>>()?;
            Message::Assign {
                worker_id,
                epoch,
                iter,
                version,
                samples,
            }
        }
        4 => {
            let worker_id = d.u32()?;
            let iter = d.u64()?;
            let version = d.u64()?;
            let local_batch = d.u32()?;
            let loss_sum = d.f64()?;
            let n = d.count(8)?;
            let grad = (0..n).map(|_| d.f64()).collect::<Result<_, _>>()?;
            Message::PushGrad {
                worker_id,
                iter,
                version,
                local_batch,
                loss_sum,
                grad,
            }
        }
        5 => Message::PullWeights { worker_id: d.u32()? },
        6 => {
            let version = d.u64()?;
            let n = d.count(8)?;
            let payload = (0..n).map(|_| d.f64()).collect::<Result<_, _>>()?;
            Message::Weights { version, payload }
        }
        7 => {
            let n = d.count(4)?;
            let roster = (0..n).map(|_| d.u32()).collect::<Result<_, _>>()?;
            Message::Resize { roster }
        }
        8 => Message::Shutdown,
        9 => {
            let worker_id = d.u32()?;
            let n = d.count(1)?;
            let at = d.pos;
            let bytes = d.take(n)?;
            let config = std::str::from_utf8(bytes)
                .map_err(|_| WireError::InvalidUtf8 { offset: at })?
                .to_owned();
            Message::Setup { worker_id, config }
        }
        tag => return Err(WireError::UnknownTag { tag, offset: tag_at }),
    };
    Ok(msg)
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<(), WireError> {
    w.write_all(&encode(msg))?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. Oversized frames fail before the body is read, and the
/// caller is expected to drop the connection.
pub fn read_message<R: Read>(r: &mut R, limit: u32) -> Result<Message, WireError> {
    let mut head = [0u8; 4];
    r.read_exact(&mut head)?;
    let len = u32::from_le_bytes(head);
    if len > limit {
        return Err(WireError::LengthOverflow {
            declared: len as u64,
            limit,
        });
    }
    let mut frame = vec![0u8; 4 + len as usize];
    frame[..4].copy_from_slice(&head);
    r.read_exact(&mut frame[4..])?;
    decode_prefix(&frame, limit).map(|(m, _)| m)
}
