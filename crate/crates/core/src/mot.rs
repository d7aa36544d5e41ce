//! Multimedia Object Transfer: objects carrying XML messages, their byte
//! image, segmentation into CRC-protected data groups, reassembly, and the
//! validity window signalled through header-extension parameters.
//!
//! An object serializes as the 7-byte header core, the header-extension
//! parameters in order, then the body. The core packs, MSB first:
//!
//! ```text
//! body_size:28 | header_size:13 | content_type:6 | content_subtype:9
//! ```
//!
//! A data group serializes as
//!
//! ```text
//! transport_id u16 | last:1 segment_number:15 | data_len u16 | data | crc u16
//! ```
//!
//! with the CRC-16/X.25 computed over everything before it.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

pub const CORE_LEN: usize = 7;

pub const CONTENT_TYPE_GENERAL_DATA: u8 = 0;
pub const CONTENT_SUBTYPE_MIME_HTTP: u16 = 1;

pub const PARAM_CONTENT_NAME: u8 = 0x0C;
pub const PARAM_START_VALIDITY: u8 = 0x0A;
pub const PARAM_EXPIRE_TIME: u8 = 0x04;

/// ContentName value identifying XML annotation.
pub const CONTENT_NAME_XML: &[u8] = b"TEXT/XML";

const MAX_BODY_SIZE: usize = (1 << 28) - 1;
const MAX_HEADER_SIZE: usize = (1 << 13) - 1;
const MAX_SEGMENT_NUMBER: usize = (1 << 15) - 1;
const GROUP_HEADER_LEN: usize = 6;
/// Smallest serialized data group: header, no data, CRC.
pub const MIN_GROUP_LEN: usize = GROUP_HEADER_LEN + 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MotError {
    #[error("object body is empty")]
    EmptyBody,
    #[error("start validity {start} is not before expire time {expire}")]
    InvalidValidity { start: i64, expire: i64 },
    #[error("object body of {0} bytes exceeds the 28-bit size field")]
    BodyTooLarge(usize),
    #[error("header of {0} bytes exceeds the 13-bit size field")]
    HeaderTooLarge(usize),
    #[error("parameter 0x{param_id:02X} value of {len} bytes exceeds 255")]
    ParameterTooLong { param_id: u8, len: usize },
    #[error("object truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{field} declares {declared} bytes but {actual} are present")]
    SizeMismatch { field: &'static str, declared: usize, actual: usize },
    #[error("timestamp parameter 0x{param_id:02X} has {len} bytes, expected 8")]
    MalformedTimestamp { param_id: u8, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MotHeaderCore {
    pub body_size: u32,
    pub header_size: u16,
    pub content_type: u8,
    pub content_subtype: u16,
}

impl MotHeaderCore {
    pub fn to_bytes(&self) -> [u8; CORE_LEN] {
        let packed = (u64::from(self.body_size & 0x0FFF_FFFF) << 28)
            | (u64::from(self.header_size & 0x1FFF) << 15)
            | (u64::from(self.content_type & 0x3F) << 9)
            | u64::from(self.content_subtype & 0x1FF);
        let be = packed.to_be_bytes();
        be[1..].try_into().expect("7 bytes")
    }

    pub fn from_bytes(bytes: &[u8; CORE_LEN]) -> Self {
        let mut be = [0u8; 8];
        be[1..].copy_from_slice(bytes);
        let packed = u64::from_be_bytes(be);
        Self {
            body_size: (packed >> 28) as u32 & 0x0FFF_FFFF,
            header_size: (packed >> 15) as u16 & 0x1FFF,
            content_type: (packed >> 9) as u8 & 0x3F,
            content_subtype: packed as u16 & 0x1FF,
        }
    }
}

/// A header-extension parameter, encoded as `param_id, len, value`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotParameter {
    pub param_id: u8,
    pub value: Vec<u8>,
}

impl MotParameter {
    pub fn encoded_len(&self) -> usize {
        2 + self.value.len()
    }
}

/// Start and end of the period during which an object's content applies,
/// as Unix seconds. The window is half-open: `[start, expire)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ValidityWindow {
    pub start_validity: Option<i64>,
    pub expire_time: Option<i64>,
}

impl ValidityWindow {
    pub fn always() -> Self {
        Self::default()
    }

    pub fn between(start: i64, expire: i64) -> Self {
        Self { start_validity: Some(start), expire_time: Some(expire) }
    }

    fn check(&self) -> Result<(), MotError> {
        match (self.start_validity, self.expire_time) {
            (Some(start), Some(expire)) if start >= expire => Err(MotError::InvalidValidity { start, expire }),
            _ => Ok(()),
        }
    }

    pub fn state_at(&self, now: i64) -> ValidityState {
        if self.start_validity.is_some_and(|start| now < start) {
            ValidityState::Pending
        } else if self.expire_time.is_some_and(|expire| now >= expire) {
            ValidityState::Expired
        } else {
            ValidityState::Active
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ValidityState {
    Pending,
    Active,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotObject {
    pub core: MotHeaderCore,
    pub parameters: Vec<MotParameter>,
    pub body: Vec<u8>,
}

impl MotObject {
    pub fn parameter(&self, param_id: u8) -> Option<&MotParameter> {
        self.parameters.iter().find(|p| p.param_id == param_id)
    }

    pub fn content_name(&self) -> Option<&[u8]> {
        self.parameter(PARAM_CONTENT_NAME).map(|p| p.value.as_slice())
    }

    /// True for General Data / MIME-HTTP objects named `TEXT/XML`.
    pub fn is_xml(&self) -> bool {
        self.core.content_type == CONTENT_TYPE_GENERAL_DATA
            && self.core.content_subtype == CONTENT_SUBTYPE_MIME_HTTP
            && self.content_name() == Some(CONTENT_NAME_XML)
    }

    pub fn validity(&self) -> Result<ValidityWindow, MotError> {
        let timestamp = |param_id| {
            self.parameter(param_id)
                .map(|p| {
                    <[u8; 8]>::try_from(p.value.as_slice())
                        .map(i64::from_be_bytes)
                        .map_err(|_| MotError::MalformedTimestamp { param_id, len: p.value.len() })
                })
                .transpose()
        };
        Ok(ValidityWindow {
            start_validity: timestamp(PARAM_START_VALIDITY)?,
            expire_time: timestamp(PARAM_EXPIRE_TIME)?,
        })
    }
}

/// Wraps an XML message in a MOT object with ContentName `TEXT/XML` and the
/// validity parameters that are set in `validity`.
pub fn build_mot_object(xml_bytes: &[u8], validity: &ValidityWindow) -> Result<MotObject, MotError> {
    if xml_bytes.is_empty() {
        return Err(MotError::EmptyBody);
    }
    validity.check()?;
    let mut parameters =
        vec![MotParameter { param_id: PARAM_CONTENT_NAME, value: CONTENT_NAME_XML.to_vec() }];
    if let Some(start) = validity.start_validity {
        parameters.push(MotParameter { param_id: PARAM_START_VALIDITY, value: start.to_be_bytes().to_vec() });
    }
    if let Some(expire) = validity.expire_time {
        parameters.push(MotParameter { param_id: PARAM_EXPIRE_TIME, value: expire.to_be_bytes().to_vec() });
    }
    assemble_object(CONTENT_TYPE_GENERAL_DATA, CONTENT_SUBTYPE_MIME_HTTP, parameters, xml_bytes.to_vec())
}

/// Builds an object with consistent size fields from its parts.
pub fn assemble_object(
    content_type: u8,
    content_subtype: u16,
    parameters: Vec<MotParameter>,
    body: Vec<u8>,
) -> Result<MotObject, MotError> {
    if body.len() > MAX_BODY_SIZE {
        return Err(MotError::BodyTooLarge(body.len()));
    }
    if let Some(p) = parameters.iter().find(|p| p.value.len() > 255) {
        return Err(MotError::ParameterTooLong { param_id: p.param_id, len: p.value.len() });
    }
    let header_size = CORE_LEN + parameters.iter().map(MotParameter::encoded_len).sum::<usize>();
    if header_size > MAX_HEADER_SIZE {
        return Err(MotError::HeaderTooLarge(header_size));
    }
    Ok(MotObject {
        core: MotHeaderCore {
            body_size: body.len() as u32,
            header_size: header_size as u16,
            content_type: content_type & 0x3F,
            content_subtype: content_subtype & 0x1FF,
        },
        parameters,
        body,
    })
}

pub fn serialize_object(obj: &MotObject) -> Vec<u8> {
    let mut out = Vec::with_capacity(usize::from(obj.core.header_size) + obj.body.len());
    out.extend_from_slice(&obj.core.to_bytes());
    for p in &obj.parameters {
        out.push(p.param_id);
        out.push(p.value.len() as u8);
        out.extend_from_slice(&p.value);
    }
    out.extend_from_slice(&obj.body);
    out
}

/// Parses an object image, checking both size fields against the bytes
/// present. Unknown parameter ids are kept as-is.
pub fn parse_object(bytes: &[u8]) -> Result<MotObject, MotError> {
    let core_bytes: &[u8; CORE_LEN] = bytes
        .get(..CORE_LEN)
        .and_then(|b| b.try_into().ok())
        .ok_or(MotError::Truncated { needed: CORE_LEN, available: bytes.len() })?;
    let core = MotHeaderCore::from_bytes(core_bytes);
    let header_size = usize::from(core.header_size);
    let body_size = core.body_size as usize;
    if header_size < CORE_LEN {
        return Err(MotError::SizeMismatch { field: "header_size", declared: header_size, actual: CORE_LEN });
    }
    if bytes.len() < header_size {
        return Err(MotError::Truncated { needed: header_size, available: bytes.len() });
    }
    let mut parameters = Vec::new();
    let mut pos = CORE_LEN;
    while pos < header_size {
        if pos + 2 > header_size {
            return Err(MotError::SizeMismatch { field: "header_size", declared: header_size, actual: pos + 2 });
        }
        let (param_id, len) = (bytes[pos], usize::from(bytes[pos + 1]));
        let end = pos + 2 + len;
        if end > header_size {
            return Err(MotError::SizeMismatch { field: "header_size", declared: header_size, actual: end });
        }
        parameters.push(MotParameter { param_id, value: bytes[pos + 2..end].to_vec() });
        pos = end;
    }
    let body = &bytes[header_size..];
    if body.len() != body_size {
        return Err(MotError::SizeMismatch { field: "body_size", declared: body_size, actual: body.len() });
    }
    Ok(MotObject { core, parameters, body: body.to_vec() })
}

pub fn check_validity(obj: &MotObject, now: i64) -> Result<ValidityState, MotError> {
    Ok(obj.validity()?.state_at(now))
}

/// CRC-16/X.25: polynomial 0x1021 reflected, init 0xFFFF, final XOR 0xFFFF.
pub fn crc16(bytes: &[u8]) -> u16 {
    let mut crc = 0xFFFFu16;
    for &b in bytes {
        crc ^= u16::from(b);
        for _ in 0..8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ 0x8408 } else { crc >> 1 };
        }
    }
    !crc
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SegmentError {
    #[error("nothing to segment")]
    EmptyInput,
    #[error("segment size {0} is outside 1..=65535")]
    InvalidSegmentSize(usize),
    #[error("object needs more than 32768 segments")]
    TooManySegments,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroupError {
    #[error("data group of {0} bytes is shorter than its fixed fields")]
    TooShort(usize),
    #[error("CRC mismatch on segment {segment_number}")]
    CrcFailure { transport_id: u16, segment_number: u16 },
    #[error("data length field says {declared} bytes, group holds {actual}")]
    LengthMismatch { declared: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReassemblyError {
    #[error("CRC mismatch on segment {0}")]
    CrcFailure(u16),
    #[error("missing segments {0:?}")]
    MissingSegments(Vec<u16>),
    #[error("segment {0} received twice")]
    DuplicateSegment(u16),
    #[error("no segment carries the last flag")]
    NoTerminalSegment,
    #[error("segment {terminal} is flagged last but segment {beyond} follows it")]
    TerminalNotLast { terminal: u16, beyond: u16 },
    #[error("groups belong to more than one transport id")]
    MixedTransportIds,
}

/// One segment of a serialized MOT object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataGroup {
    pub transport_id: u16,
    pub segment_number: u16,
    pub last: bool,
    pub data: Vec<u8>,
    pub crc: u16,
}

impl DataGroup {
    /// Builds a group and computes its CRC.
    pub fn new(transport_id: u16, segment_number: u16, last: bool, data: Vec<u8>) -> Self {
        let mut group = Self { transport_id, segment_number: segment_number & 0x7FFF, last, data, crc: 0 };
        group.crc = group.computed_crc();
        group
    }

    fn header_bytes(&self) -> [u8; GROUP_HEADER_LEN] {
        let flags = (u16::from(self.last) << 15) | (self.segment_number & 0x7FFF);
        let mut h = [0u8; GROUP_HEADER_LEN];
        h[..2].copy_from_slice(&self.transport_id.to_be_bytes());
        h[2..4].copy_from_slice(&flags.to_be_bytes());
        h[4..].copy_from_slice(&(self.data.len() as u16).to_be_bytes());
        h
    }

    pub fn computed_crc(&self) -> u16 {
        let mut covered = Vec::with_capacity(GROUP_HEADER_LEN + self.data.len());
        covered.extend_from_slice(&self.header_bytes());
        covered.extend_from_slice(&self.data);
        crc16(&covered)
    }

    pub fn crc_ok(&self) -> bool {
        self.crc == self.computed_crc()
    }

    pub fn encoded_len(&self) -> usize {
        MIN_GROUP_LEN + self.data.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.header_bytes());
        out.extend_from_slice(&self.data);
        out.extend_from_slice(&self.crc.to_be_bytes());
        out
    }

    /// Decodes one serialized group occupying all of `bytes`. The CRC is
    /// checked before any field is trusted, so a corrupted length field
    /// surfaces as a CRC failure.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GroupError> {
        if bytes.len() < MIN_GROUP_LEN {
            return Err(GroupError::TooShort(bytes.len()));
        }
        let (covered, crc_bytes) = bytes.split_at(bytes.len() - 2);
        let crc = u16::from_be_bytes([crc_bytes[0], crc_bytes[1]]);
        let transport_id = u16::from_be_bytes([bytes[0], bytes[1]]);
        let flags = u16::from_be_bytes([bytes[2], bytes[3]]);
        if crc16(covered) != crc {
            return Err(GroupError::CrcFailure { transport_id, segment_number: flags & 0x7FFF });
        }
        let declared = usize::from(u16::from_be_bytes([bytes[4], bytes[5]]));
        let data = &covered[GROUP_HEADER_LEN..];
        if declared != data.len() {
            return Err(GroupError::LengthMismatch { declared, actual: data.len() });
        }
        Ok(Self {
            transport_id,
            segment_number: flags & 0x7FFF,
            last: flags & 0x8000 != 0,
            data: data.to_vec(),
            crc,
        })
    }
}

/// Cuts an object image into data groups of `segment_size` data bytes; only
/// the final group may be shorter.
pub fn segment(obj_bytes: &[u8], transport_id: u16, segment_size: usize) -> Result<Vec<DataGroup>, SegmentError> {
    if obj_bytes.is_empty() {
        return Err(SegmentError::EmptyInput);
    }
    if !(1..=usize::from(u16::MAX)).contains(&segment_size) {
        return Err(SegmentError::InvalidSegmentSize(segment_size));
    }
    let count = obj_bytes.len().div_ceil(segment_size);
    if count > MAX_SEGMENT_NUMBER + 1 {
        return Err(SegmentError::TooManySegments);
    }
    Ok(obj_bytes
        .chunks(segment_size)
        .enumerate()
        .map(|(i, chunk)| DataGroup::new(transport_id, i as u16, i + 1 == count, chunk.to_vec()))
        .collect())
}

/// Joins the groups of one transport id back into the object image. Arrival
/// order does not matter.
pub fn reassemble(groups: &[DataGroup]) -> Result<Vec<u8>, ReassemblyError> {
    if let Some(first) = groups.first() {
        if groups.iter().any(|g| g.transport_id != first.transport_id) {
            return Err(ReassemblyError::MixedTransportIds);
        }
    }
    let mut by_number: BTreeMap<u16, &DataGroup> = BTreeMap::new();
    for group in groups {
        if !group.crc_ok() {
            return Err(ReassemblyError::CrcFailure(group.segment_number));
        }
        if by_number.insert(group.segment_number, group).is_some() {
            return Err(ReassemblyError::DuplicateSegment(group.segment_number));
        }
    }
    let terminal = terminal_of(by_number.values().copied())?;
    let missing: Vec<u16> = (0..=terminal).filter(|n| !by_number.contains_key(n)).collect();
    if !missing.is_empty() {
        return Err(ReassemblyError::MissingSegments(missing));
    }
    Ok(by_number.values().flat_map(|g| g.data.iter().copied()).collect())
}

fn terminal_of<'a>(groups: impl Iterator<Item = &'a DataGroup> + Clone) -> Result<u16, ReassemblyError> {
    let mut terminals = groups.clone().filter(|g| g.last).map(|g| g.segment_number);
    let terminal = terminals.next().ok_or(ReassemblyError::NoTerminalSegment)?;
    if let Some(other) = terminals.next() {
        let (terminal, beyond) = (terminal.min(other), terminal.max(other));
        return Err(ReassemblyError::TerminalNotLast { terminal, beyond });
    }
    if let Some(beyond) = groups.map(|g| g.segment_number).filter(|&n| n > terminal).max() {
        return Err(ReassemblyError::TerminalNotLast { terminal, beyond });
    }
    Ok(terminal)
}

/// Incremental reassembly across many transport ids, fed one group at a
/// time as they come out of the PAD stream.
#[derive(Debug, Default)]
pub struct Reassembler {
    partial: HashMap<u16, BTreeMap<u16, DataGroup>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletedObject {
    pub transport_id: u16,
    pub bytes: Vec<u8>,
}

impl Reassembler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a group; returns the object image once its last missing segment
    /// arrives.
    pub fn push(&mut self, group: DataGroup) -> Result<Option<CompletedObject>, ReassemblyError> {
        if !group.crc_ok() {
            return Err(ReassemblyError::CrcFailure(group.segment_number));
        }
        let transport_id = group.transport_id;
        let segments = self.partial.entry(transport_id).or_default();
        if let Some(existing) = segments.get(&group.segment_number) {
            if *existing == group {
                return Ok(None);
            }
            return Err(ReassemblyError::DuplicateSegment(group.segment_number));
        }
        segments.insert(group.segment_number, group);
        let complete = segments
            .values()
            .find(|g| g.last)
            .is_some_and(|t| segments.len() == usize::from(t.segment_number) + 1);
        if !complete {
            return Ok(None);
        }
        let groups: Vec<DataGroup> = self.partial.remove(&transport_id).unwrap_or_default().into_values().collect();
        reassemble(&groups).map(|bytes| Some(CompletedObject { transport_id, bytes }))
    }

    /// Transport ids with segments still outstanding.
    pub fn pending_transports(&self) -> Vec<u16> {
        let mut ids: Vec<u16> = self.partial.keys().copied().collect();
        ids.sort_unstable();
        ids
    }
}
