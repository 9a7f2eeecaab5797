use thiserror::Error;

use crate::ids::{AngleId, CellId, PatchId, ProgramId};

/// One upwind datum: the value of `from` needed by the downwind cell `to`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StreamRecord {
    pub from: CellId,
    pub to: CellId,
    pub value: f64,
}

/// A routed message between two patch-programs.
#[derive(Clone, Debug, PartialEq)]
pub struct Stream {
    pub src: ProgramId,
    pub tgt: ProgramId,
    /// Assigned by the runtime when the stream is sent; 0 until then.
    pub seq: u64,
    pub payload: Vec<StreamRecord>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StreamDecodeError {
    #[error("stream buffer truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("bad stream magic {0:#x}")]
    Magic(u32),
    #[error("{0} trailing bytes after stream")]
    Trailing(usize),
}

const MAGIC: u32 = 0x5053_5452;
const HEADER_LEN: usize = 4 * 6 + 8;
const RECORD_LEN: usize = 4 + 4 + 8;

impl Stream {
    pub fn new(src: ProgramId, tgt: ProgramId) -> Self {
        Self {
            src,
            tgt,
            seq: 0,
            payload: Vec::new(),
        }
    }

    pub fn push(&mut self, from: CellId, to: CellId, value: f64) {
        self.payload.push(StreamRecord { from, to, value });
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + RECORD_LEN * self.payload.len()
    }

    /// Little-endian wire form:
    /// `magic, src.patch, src.task, tgt.patch, tgt.task, count: u32; seq: u64`
    /// followed by `count` records of `from: u32, to: u32, value: f64`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        for word in [
            MAGIC,
            self.src.patch.0,
            self.src.task.0,
            self.tgt.patch.0,
            self.tgt.task.0,
            self.payload.len() as u32,
        ] {
            out.extend_from_slice(&word.to_le_bytes());
        }
        out.extend_from_slice(&self.seq.to_le_bytes());
        for r in &self.payload {
            out.extend_from_slice(&r.from.0.to_le_bytes());
            out.extend_from_slice(&r.to.0.to_le_bytes());
            out.extend_from_slice(&r.value.to_bits().to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, StreamDecodeError> {
        let need = |n: usize| {
            if bytes.len() < n {
                Err(StreamDecodeError::Truncated {
                    need: n,
                    have: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(HEADER_LEN)?;
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        if u32_at(0) != MAGIC {
            return Err(StreamDecodeError::Magic(u32_at(0)));
        }
        let src = ProgramId::new(PatchId(u32_at(4)), AngleId(u32_at(8)));
        let tgt = ProgramId::new(PatchId(u32_at(12)), AngleId(u32_at(16)));
        let count = u32_at(20) as usize;
        let seq = u64_at(24);
        let total = HEADER_LEN + count * RECORD_LEN;
        need(total)?;
        if bytes.len() > total {
            return Err(StreamDecodeError::Trailing(bytes.len() - total));
        }
        let payload = (0..count)
            .map(|k| {
                let at = HEADER_LEN + k * RECORD_LEN;
                StreamRecord {
                    from: CellId(u32_at(at)),
                    to: CellId(u32_at(at + 4)),
                    value: f64::from_bits(u64_at(at + 8)),
                }
            })
            .collect();
        Ok(Self {
            src,
            tgt,
            seq,
            payload,
        })
    }
}
