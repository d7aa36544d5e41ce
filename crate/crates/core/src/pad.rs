//! Carriage of serialized data groups through fixed-size PAD fields.
//!
//! Each group is framed as `0xFD, len_hi, len_lo, group bytes` and the framed
//! byte stream is cut greedily into PAD fields, so a group may straddle any
//! number of audio frames. Idle space is `0x00`, which the extractor skips
//! wherever it expects a marker.

use std::collections::VecDeque;

use thiserror::Error;

use crate::frame::PadField;
use crate::mot::{DataGroup, GroupError, MIN_GROUP_LEN};

pub const GROUP_MARKER: u8 = 0xFD;
const IDLE: u8 = 0x00;
const FRAMING_LEN: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PadError {
    #[error("data group of {0} bytes exceeds the 65535-byte sub-frame limit")]
    GroupTooLarge(usize),
    #[error("PAD capacity {0} is outside 1..=255")]
    InvalidCapacity(usize),
    #[error("byte 0x{byte:02X} at stream offset {offset} where a group marker was expected")]
    BadMarker { offset: u64, byte: u8 },
    #[error(transparent)]
    Group(#[from] GroupError),
}

/// Transmit side: queues serialized groups and hands out one PAD field per
/// audio frame.
#[derive(Debug, Clone)]
pub struct PadPacker {
    pending: VecDeque<u8>,
    capacity: usize,
}

impl PadPacker {
    pub fn new(capacity: usize) -> Result<Self, PadError> {
        if !(1..=255).contains(&capacity) {
            return Err(PadError::InvalidCapacity(capacity));
        }
        Ok(Self { pending: VecDeque::new(), capacity })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Queues one serialized data group behind its marker and length.
    pub fn enqueue(&mut self, group_bytes: &[u8]) -> Result<(), PadError> {
        let len = u16::try_from(group_bytes.len()).map_err(|_| PadError::GroupTooLarge(group_bytes.len()))?;
        self.pending.push_back(GROUP_MARKER);
        self.pending.extend(len.to_be_bytes());
        self.pending.extend(group_bytes);
        Ok(())
    }

    pub fn enqueue_group(&mut self, group: &DataGroup) -> Result<(), PadError> {
        self.enqueue(&group.to_bytes())
    }

    /// Bytes still waiting to be sent.
    pub fn backlog(&self) -> usize {
        self.pending.len()
    }

    pub fn is_idle(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn pack_next_pad(&mut self) -> PadField {
        let take = self.pending.len().min(self.capacity);
        let mut bytes: Vec<u8> = self.pending.drain(..take).collect();
        bytes.resize(self.capacity, IDLE);
        PadField::new(bytes)
    }
}

/// Receive side: a byte-stream state machine fed one PAD field at a time.
///
/// Output depends only on the concatenated byte stream, never on where the
/// PAD boundaries fall. After a bad marker the extractor hunts for the next
/// `0xFD` whose framing is self-consistent and whose CRC verifies.
#[derive(Debug, Default)]
pub struct PadExtractor {
    carry: Vec<u8>,
    /// Stream offset of `carry[0]`.
    offset: u64,
    resyncing: bool,
}

enum Step {
    Need,
    Skip(usize),
    Emit(usize, Result<DataGroup, PadError>),
}

impl PadExtractor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Bytes received but not yet resolved into groups.
    pub fn carried(&self) -> usize {
        self.carry.len()
    }

    pub fn is_resyncing(&self) -> bool {
        self.resyncing
    }

    /// Returns every group completed by `pad`, in stream order, interleaved
    /// with framing and CRC errors at the point they occurred.
    pub fn extract_from_pad(&mut self, pad: &PadField) -> Vec<Result<DataGroup, PadError>> {
        self.feed(pad.as_bytes())
    }

    pub fn feed(&mut self, bytes: &[u8]) -> Vec<Result<DataGroup, PadError>> {
        self.carry.extend_from_slice(bytes);
        let mut out = Vec::new();
        let mut pos = 0;
        loop {
            let step = if self.resyncing { self.hunt(pos) } else { self.synced(pos) };
            match step {
                Step::Need => break,
                Step::Skip(n) => pos += n,
                Step::Emit(n, item) => {
                    pos += n;
                    out.push(item);
                }
            }
        }
        self.carry.drain(..pos);
        self.offset += pos as u64;
        out
    }

    fn synced(&mut self, pos: usize) -> Step {
        let rest = &self.carry[pos..];
        match rest.first() {
            None => Step::Need,
            Some(&IDLE) => Step::Skip(rest.iter().take_while(|&&b| b == IDLE).count()),
            Some(&GROUP_MARKER) => {
                let Some(len) = framed_len(rest) else { return Step::Need };
                if rest.len() < FRAMING_LEN + len {
                    return Step::Need;
                }
                let group = DataGroup::from_bytes(&rest[FRAMING_LEN..FRAMING_LEN + len]).map_err(PadError::from);
                Step::Emit(FRAMING_LEN + len, group)
            }
            Some(&byte) => {
                self.resyncing = true;
                Step::Emit(1, Err(PadError::BadMarker { offset: self.offset + pos as u64, byte }))
            }
        }
    }

    fn hunt(&mut self, pos: usize) -> Step {
        let rest = &self.carry[pos..];
        let Some(at) = rest.iter().position(|&b| b == GROUP_MARKER) else {
            return if rest.is_empty() { Step::Need } else { Step::Skip(rest.len()) };
        };
        if at > 0 {
            return Step::Skip(at);
        }
        let Some(len) = framed_len(rest) else { return Step::Need };
        // the candidate's own data-length field must agree with its framing
        if len < MIN_GROUP_LEN {
            return Step::Skip(1);
        }
        if rest.len() < FRAMING_LEN + 6 {
            return Step::Need;
        }
        let inner = usize::from(u16::from_be_bytes([rest[FRAMING_LEN + 4], rest[FRAMING_LEN + 5]]));
        if inner + MIN_GROUP_LEN != len {
            return Step::Skip(1);
        }
        if rest.len() < FRAMING_LEN + len {
            return Step::Need;
        }
        match DataGroup::from_bytes(&rest[FRAMING_LEN..FRAMING_LEN + len]) {
            Ok(group) => {
                self.resyncing = false;
                Step::Emit(FRAMING_LEN + len, Ok(group))
            }
            Err(_) => Step::Skip(1),
        }
    }
}

fn framed_len(rest: &[u8]) -> Option<usize> {
    (rest.len() >= FRAMING_LEN).then(|| usize::from(u16::from_be_bytes([rest[1], rest[2]])))
}
