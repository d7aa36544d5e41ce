//! DAB transmission frames: FIC signalling, per-subchannel audio frames with
//! their PAD fields, and the byte container used to carry a frame stream over
//! a file or socket.
//!
//! # Stream container
//!
//! ```text
//! "DABS" | frame_index u32
//! FIC:  count u16, then per FIG: (type << 5 | len) u8, extension u8, payload[len]
//! MSC:  count u8,  then per subchannel: id u8, audio_len u16, audio, pad_len u8, pad
//! ```
//!
//! All multi-byte integers are big-endian.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use thiserror::Error;

/// Stream container frame marker.
pub const FRAME_MAGIC: &[u8; 4] = b"DABS";

/// PAD bytes per audio frame unless a stream is configured otherwise.
pub const DEFAULT_PAD_CAPACITY: usize = 58;

/// Largest FIG payload.
pub const MAX_FIG_PAYLOAD: usize = 29;

/// Highest subchannel id.
pub const MAX_SUBCHANNEL_ID: u8 = 63;

/// User application type announcing MOT objects that carry XML messages.
pub const USER_APP_MOT_XML: u16 = 0b000_0000_0110;

const MAX_USER_APP_TYPE: u16 = (1 << 11) - 1;
const MAX_APP_DATA: usize = 31;
const MAX_LABEL_CHARS: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("FIG payload of {0} bytes exceeds {MAX_FIG_PAYLOAD}")]
    PayloadOverflow(usize),
    #[error("{field} value {value} out of range")]
    ValueOutOfRange { field: &'static str, value: u64 },
    #[error("expected FIG 0/13, got FIG {fig_type}/{extension}")]
    WrongFigKind { fig_type: u8, extension: u8 },
    #[error("FIG 0/13 payload ends mid-entry at byte {0}")]
    TruncatedPayload(usize),
    #[error("character {0:?} is not printable ASCII")]
    NonAsciiCharacter(char),
    #[error("dynamic label has {0} characters, limit is {MAX_LABEL_CHARS}")]
    LabelTooLong(usize),
    #[error("PAD and audio maps cover different subchannels")]
    KeyMismatch,
    #[error("FIG 0/13 references subchannel {0} which is not in the frame")]
    UnknownSubchannel(u8),
}

/// Fast Information Group: one typed record of the FIC.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FastInfoGroup {
    fig_type: u8,
    extension: u8,
    payload: Vec<u8>,
}

impl FastInfoGroup {
    pub fn new(fig_type: u8, extension: u8, payload: Vec<u8>) -> Result<Self, FrameError> {
        if fig_type > 7 {
            return Err(FrameError::ValueOutOfRange { field: "fig_type", value: fig_type.into() });
        }
        if extension > 31 {
            return Err(FrameError::ValueOutOfRange { field: "extension", value: extension.into() });
        }
        if payload.len() > MAX_FIG_PAYLOAD {
            return Err(FrameError::PayloadOverflow(payload.len()));
        }
        Ok(Self { fig_type, extension, payload })
    }

    pub fn fig_type(&self) -> u8 {
        self.fig_type
    }

    pub fn extension(&self) -> u8 {
        self.extension
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn is_user_app_info(&self) -> bool {
        self.fig_type == 0 && self.extension == 13
    }
}

/// One FIG 0/13 entry: which user application a subchannel carries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserAppInfo {
    pub subchannel_id: u8,
    /// 11-bit user application type; [`USER_APP_MOT_XML`] for XML messages.
    pub user_app_type: u16,
    pub app_data: Vec<u8>,
}

impl UserAppInfo {
    pub fn mot_xml(subchannel_id: u8) -> Self {
        Self { subchannel_id, user_app_type: USER_APP_MOT_XML, app_data: Vec::new() }
    }

    fn encoded_len(&self) -> usize {
        3 + self.app_data.len()
    }
}

/// Encodes FIG 0/13 entries. Each entry is one subchannel byte, then a
/// big-endian u16 holding the user application type in its top 11 bits and
/// the app data length in its low 5 bits, then the app data.
pub fn encode_fig_0_13(entries: &[UserAppInfo]) -> Result<FastInfoGroup, FrameError> {
    let mut payload = Vec::new();
    for entry in entries {
        if entry.subchannel_id > MAX_SUBCHANNEL_ID {
            return Err(FrameError::ValueOutOfRange {
                field: "subchannel_id",
                value: entry.subchannel_id.into(),
            });
        }
        if entry.user_app_type > MAX_USER_APP_TYPE {
            return Err(FrameError::ValueOutOfRange {
                field: "user_app_type",
                value: entry.user_app_type.into(),
            });
        }
        if entry.app_data.len() > MAX_APP_DATA {
            return Err(FrameError::ValueOutOfRange {
                field: "app_data length",
                value: entry.app_data.len() as u64,
            });
        }
        payload.push(entry.subchannel_id);
        let packed = (entry.user_app_type << 5) | entry.app_data.len() as u16;
        payload.extend_from_slice(&packed.to_be_bytes());
        payload.extend_from_slice(&entry.app_data);
    }
    if payload.len() > MAX_FIG_PAYLOAD {
        return Err(FrameError::PayloadOverflow(payload.len()));
    }
    FastInfoGroup::new(0, 13, payload)
}

pub fn decode_fig_0_13(fig: &FastInfoGroup) -> Result<Vec<UserAppInfo>, FrameError> {
    if !fig.is_user_app_info() {
        return Err(FrameError::WrongFigKind { fig_type: fig.fig_type, extension: fig.extension });
    }
    let bytes = fig.payload();
    let mut entries = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        if pos + 3 > bytes.len() {
            return Err(FrameError::TruncatedPayload(pos));
        }
        let packed = u16::from_be_bytes([bytes[pos + 1], bytes[pos + 2]]);
        let data_len = usize::from(packed & 0x1F);
        if pos + 3 + data_len > bytes.len() {
            return Err(FrameError::TruncatedPayload(pos));
        }
        entries.push(UserAppInfo {
            subchannel_id: bytes[pos],
            user_app_type: packed >> 5,
            app_data: bytes[pos + 3..pos + 3 + data_len].to_vec(),
        });
        pos += 3 + data_len;
    }
    Ok(entries)
}

/// Splits entries over as many FIG 0/13 groups as the 29-byte payload limit
/// requires.
pub fn encode_fig_0_13_groups(entries: &[UserAppInfo]) -> Result<Vec<FastInfoGroup>, FrameError> {
    let mut figs = Vec::new();
    let mut batch: Vec<UserAppInfo> = Vec::new();
    let mut batch_len = 0;
    for entry in entries {
        if batch_len + entry.encoded_len() > MAX_FIG_PAYLOAD && !batch.is_empty() {
            figs.push(encode_fig_0_13(&batch)?);
            batch.clear();
            batch_len = 0;
        }
        batch_len += entry.encoded_len();
        batch.push(entry.clone());
    }
    if !batch.is_empty() {
        figs.push(encode_fig_0_13(&batch)?);
    }
    Ok(figs)
}

/// Programme Associated Data field of one audio frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PadField(Vec<u8>);

impl PadField {
    pub fn new(bytes: Vec<u8>) -> Self {
        Self(bytes)
    }

    pub fn idle(capacity: usize) -> Self {
        Self(vec![0; capacity])
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioFrame {
    /// Simulated audio; never interpreted.
    pub audio_payload: Vec<u8>,
    pub pad: PadField,
}

/// One DAB transmission frame: the FIC and, per subchannel, the audio frame
/// carried in the MSC.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransmissionFrame {
    pub frame_index: u32,
    pub fic: Vec<FastInfoGroup>,
    pub subchannels: BTreeMap<u8, AudioFrame>,
}

impl TransmissionFrame {
    /// Returns the PAD field of `subchannel`, if the frame carries it.
    pub fn demux(&self, subchannel: u8) -> Option<&PadField> {
        self.subchannels.get(&subchannel).map(|af| &af.pad)
    }

    /// All FIG 0/13 entries of this frame. Undecodable FIGs are skipped.
    pub fn user_apps(&self) -> impl Iterator<Item = UserAppInfo> + '_ {
        self.fic
            .iter()
            .filter(|fig| fig.is_user_app_info())
            .filter_map(|fig| decode_fig_0_13(fig).ok())
            .flatten()
    }

    /// True when the FIC announces MOT XML on `subchannel`.
    pub fn signals_xml(&self, subchannel: u8) -> bool {
        self.user_apps()
            .any(|ua| ua.subchannel_id == subchannel && ua.user_app_type == USER_APP_MOT_XML)
    }
}

pub fn mux_frame(
    fic_entries: Vec<FastInfoGroup>,
    pad_chunks: BTreeMap<u8, PadField>,
    audio: BTreeMap<u8, Vec<u8>>,
    frame_index: u32,
) -> Result<TransmissionFrame, FrameError> {
    if !pad_chunks.keys().eq(audio.keys()) {
        return Err(FrameError::KeyMismatch);
    }
    if let Some(&id) = pad_chunks.keys().find(|&&id| id > MAX_SUBCHANNEL_ID) {
        return Err(FrameError::ValueOutOfRange { field: "subchannel_id", value: id.into() });
    }
    for fig in fic_entries.iter().filter(|f| f.is_user_app_info()) {
        for entry in decode_fig_0_13(fig)? {
            if !pad_chunks.contains_key(&entry.subchannel_id) {
                return Err(FrameError::UnknownSubchannel(entry.subchannel_id));
            }
        }
    }
    let subchannels = pad_chunks
        .into_iter()
        .zip(audio)
        .map(|((id, pad), (_, audio_payload))| (id, AudioFrame { audio_payload, pad }))
        .collect();
    Ok(TransmissionFrame { frame_index, fic: fic_entries, subchannels })
}

/// Legacy dynamic label: unstructured display text. Encoding is the ASCII
/// bytes verbatim, so a receiver has no way to tell which part of
/// "Dancing Queen by ABBA" is the artiste.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DynamicLabel(String);

impl DynamicLabel {
    pub fn new(text: impl Into<String>) -> Result<Self, FrameError> {
        let text = text.into();
        if let Some(c) = text.chars().find(|c| !(' '..='~').contains(c)) {
            return Err(FrameError::NonAsciiCharacter(c));
        }
        if text.len() > MAX_LABEL_CHARS {
            return Err(FrameError::LabelTooLong(text.len()));
        }
        Ok(Self(text))
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

pub fn encode_dynamic_label(text: &str) -> Result<Vec<u8>, FrameError> {
    DynamicLabel::new(text).map(|label| label.0.into_bytes())
}

pub fn decode_dynamic_label(bytes: &[u8]) -> Result<DynamicLabel, FrameError> {
    DynamicLabel::new(bytes.iter().map(|&b| char::from(b)).collect::<String>())
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("bad frame magic at offset {offset}")]
    BadMagic { offset: u64 },
    #[error("stream truncated inside the frame starting at offset {offset}")]
    Truncated { offset: u64 },
    #[error("invalid frame at offset {offset}: {source}")]
    InvalidFrame { offset: u64, source: FrameError },
    #[error("{field} of {len} bytes does not fit the container")]
    Oversize { field: &'static str, len: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Serializes one frame into the stream container.
pub fn encode_frame(frame: &TransmissionFrame) -> Result<Vec<u8>, StreamError> {
    let mut out = Vec::with_capacity(64);
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&frame.frame_index.to_be_bytes());
    let fig_count = u16::try_from(frame.fic.len())
        .map_err(|_| StreamError::Oversize { field: "FIC", len: frame.fic.len() })?;
    out.extend_from_slice(&fig_count.to_be_bytes());
    for fig in &frame.fic {
        out.push(fig.fig_type << 5 | fig.payload.len() as u8);
        out.push(fig.extension);
        out.extend_from_slice(&fig.payload);
    }
    let sub_count = u8::try_from(frame.subchannels.len())
        .map_err(|_| StreamError::Oversize { field: "MSC", len: frame.subchannels.len() })?;
    out.push(sub_count);
    for (&id, af) in &frame.subchannels {
        out.push(id);
        let audio_len = u16::try_from(af.audio_payload.len())
            .map_err(|_| StreamError::Oversize { field: "audio", len: af.audio_payload.len() })?;
        out.extend_from_slice(&audio_len.to_be_bytes());
        out.extend_from_slice(&af.audio_payload);
        let pad_len = u8::try_from(af.pad.len())
            .map_err(|_| StreamError::Oversize { field: "PAD", len: af.pad.len() })?;
        out.push(pad_len);
        out.extend_from_slice(af.pad.as_bytes());
    }
    Ok(out)
}

pub fn write_frame<W: Write>(out: &mut W, frame: &TransmissionFrame) -> Result<(), StreamError> {
    out.write_all(&encode_frame(frame)?)?;
    Ok(())
}

/// Decodes the first frame of `bytes`, returning it with the number of bytes
/// it occupied. `Ok(None)` means the buffer does not yet hold a whole frame.
pub fn decode_frame(bytes: &[u8]) -> Result<Option<(TransmissionFrame, usize)>, StreamError> {
    let mut reader = FrameReader::new(bytes);
    match reader.read_frame() {
        Ok(Some(frame)) => Ok(Some((frame, reader.offset() as usize))),
        Ok(None) | Err(StreamError::Truncated { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Reads container frames from a byte source.
///
/// Iteration yields `Err` once on a malformed or truncated frame and then
/// stops, since the container has no resynchronization point other than the
/// magic.
pub struct FrameReader<R> {
    inner: R,
    offset: u64,
    failed: bool,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0, failed: false }
    }

    /// Byte offset of the next unread frame.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    /// Reads the next frame, `Ok(None)` on a clean end of stream.
    pub fn read_frame(&mut self) -> Result<Option<TransmissionFrame>, StreamError> {
        let start = self.offset;
        let mut cursor = Cursor { inner: &mut self.inner, read: 0, start };
        let mut magic = [0u8; 4];
        if !cursor.fill_or_eof(&mut magic)? {
            return Ok(None);
        }
        if &magic != FRAME_MAGIC {
            return Err(StreamError::BadMagic { offset: start });
        }
        let frame_index = u32::from_be_bytes(cursor.array()?);
        let fig_count = u16::from_be_bytes(cursor.array()?);
        let mut fic = Vec::with_capacity(usize::from(fig_count).min(64));
        for _ in 0..fig_count {
            let [head, extension] = cursor.array()?;
            let payload = cursor.vec(usize::from(head & 0x1F))?;
            let fig = FastInfoGroup::new(head >> 5, extension, payload)
                .map_err(|source| StreamError::InvalidFrame { offset: start, source })?;
            fic.push(fig);
        }
        let [sub_count] = cursor.array()?;
        let mut subchannels = BTreeMap::new();
        for _ in 0..sub_count {
            let [id] = cursor.array()?;
            let audio_len = u16::from_be_bytes(cursor.array()?);
            let audio_payload = cursor.vec(usize::from(audio_len))?;
            let [pad_len] = cursor.array()?;
            let pad = PadField::new(cursor.vec(usize::from(pad_len))?);
            subchannels.insert(id, AudioFrame { audio_payload, pad });
        }
        self.offset += cursor.read;
        Ok(Some(TransmissionFrame { frame_index, fic, subchannels }))
    }
}

impl<R: Read> Iterator for FrameReader<R> {
    type Item = Result<TransmissionFrame, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.read_frame() {
            Ok(frame) => frame.map(Ok),
            Err(err) => {
                self.failed = true;
                Some(Err(err))
            }
        }
    }
}

struct Cursor<'a, R> {
    inner: &'a mut R,
    read: u64,
    start: u64,
}

impl<R: Read> Cursor<'_, R> {
    /// Fills `buf`; `Ok(false)` only if the source was already at EOF.
    fn fill_or_eof(&mut self, buf: &mut [u8]) -> Result<bool, StreamError> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) if filled == 0 && self.read == 0 => return Ok(false),
                Ok(0) => return Err(StreamError::Truncated { offset: self.start }),
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.read += buf.len() as u64;
        Ok(true)
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<(), StreamError> {
        if buf.is_empty() {
            return Ok(());
        }
        if self.fill_or_eof(buf)? {
            Ok(())
        } else {
            Err(StreamError::Truncated { offset: self.start })
        }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], StreamError> {
        let mut buf = [0u8; N];
        self.fill(&mut buf)?;
        Ok(buf)
    }

    fn vec(&mut self, len: usize) -> Result<Vec<u8>, StreamError> {
        let mut buf = vec![0u8; len];
        self.fill(&mut buf)?;
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Packs the entry layout through a bit string, independent of the
    /// shift arithmetic in `encode_fig_0_13`.
    fn bit_oracle(entry: &UserAppInfo) -> Vec<u8> {
        let mut bits = format!("{:08b}{:011b}{:05b}", entry.subchannel_id, entry.user_app_type, entry.app_data.len());
        for b in &entry.app_data {
            bits.push_str(&format!("{b:08b}"));
        }
        bits.as_bytes()
            .chunks(8)
            .map(|c| u8::from_str_radix(std::str::from_utf8(c).unwrap(), 2).unwrap())
            .collect()
    }

    #[test]
    fn fig_0_13_single_entry_bytes() {
        let entry = UserAppInfo::mot_xml(3);
        assert_eq!(bit_oracle(&entry), [0x03, 0x00, 0xC0]);
        let fig = encode_fig_0_13(std::slice::from_ref(&entry)).unwrap();
        assert_eq!((fig.fig_type(), fig.extension()), (0, 13));
        assert_eq!(fig.payload(), bit_oracle(&entry).as_slice());
    }

    #[test]
    fn fig_0_13_with_app_data_matches_oracle() {
        let entry = UserAppInfo { subchannel_id: 63, user_app_type: 0x5A5, app_data: vec![1, 2, 3] };
        assert_eq!(encode_fig_0_13(std::slice::from_ref(&entry)).unwrap().payload(), bit_oracle(&entry).as_slice());
    }

    #[test]
    fn fig_0_13_empty() {
        let fig = encode_fig_0_13(&[]).unwrap();
        assert!(fig.payload().is_empty());
        assert!(decode_fig_0_13(&fig).unwrap().is_empty());
    }

    #[test]
    fn fig_0_13_two_entries_roundtrip() {
        let entries = vec![UserAppInfo::mot_xml(1), UserAppInfo::mot_xml(2)];
        assert_eq!(decode_fig_0_13(&encode_fig_0_13(&entries).unwrap()).unwrap(), entries);
    }

    #[test]
    fn fig_0_13_decode_known_payload() {
        let fig = FastInfoGroup::new(0, 13, vec![0x03, 0x00, 0xC0]).unwrap();
        assert_eq!(decode_fig_0_13(&fig).unwrap(), vec![UserAppInfo::mot_xml(3)]);
    }

    #[test]
    fn fig_0_13_truncated() {
        let fig = FastInfoGroup::new(0, 13, vec![0x03, 0x00]).unwrap();
        assert_eq!(decode_fig_0_13(&fig), Err(FrameError::TruncatedPayload(0)));
        // declared 2 bytes of app data, only 1 present
        let fig = FastInfoGroup::new(0, 13, vec![0x03, 0x00, 0xC2, 0xAA]).unwrap();
        assert_eq!(decode_fig_0_13(&fig), Err(FrameError::TruncatedPayload(0)));
    }

    #[test]
    fn fig_0_13_wrong_kind() {
        let fig = FastInfoGroup::new(0, 2, vec![]).unwrap();
        assert_eq!(decode_fig_0_13(&fig), Err(FrameError::WrongFigKind { fig_type: 0, extension: 2 }));
    }

    #[test]
    fn fig_0_13_overflow_and_ranges() {
        let ten: Vec<_> = (0..10).map(UserAppInfo::mot_xml).collect();
        assert_eq!(encode_fig_0_13(&ten), Err(FrameError::PayloadOverflow(30)));
        let bad_type = UserAppInfo { subchannel_id: 1, user_app_type: 2048, app_data: vec![] };
        assert!(matches!(encode_fig_0_13(&[bad_type]), Err(FrameError::ValueOutOfRange { .. })));
        let bad_sub = UserAppInfo::mot_xml(64);
        assert!(matches!(encode_fig_0_13(&[bad_sub]), Err(FrameError::ValueOutOfRange { .. })));
        let bad_data = UserAppInfo { subchannel_id: 1, user_app_type: 6, app_data: vec![0; 32] };
        assert!(matches!(encode_fig_0_13(&[bad_data]), Err(FrameError::ValueOutOfRange { .. })));
    }

    #[test]
    fn fig_groups_split_at_payload_limit() {
        let entries: Vec<_> = (0..20).map(UserAppInfo::mot_xml).collect();
        let figs = encode_fig_0_13_groups(&entries).unwrap();
        assert_eq!(figs.len(), 3);
        let back: Vec<_> = figs.iter().flat_map(|f| decode_fig_0_13(f).unwrap()).collect();
        assert_eq!(back, entries);
    }

    #[test]
    fn dynamic_label_is_verbatim_ascii() {
        let bytes = encode_dynamic_label("Dancing Queen by ABBA").unwrap();
        assert_eq!(bytes.len(), 21);
        assert_eq!(bytes, b"Dancing Queen by ABBA");
        assert_eq!(decode_dynamic_label(&bytes).unwrap().text(), "Dancing Queen by ABBA");
        assert!(encode_dynamic_label("").unwrap().is_empty());
        assert_eq!(encode_dynamic_label("café"), Err(FrameError::NonAsciiCharacter('é')));
        assert_eq!(encode_dynamic_label("a\tb"), Err(FrameError::NonAsciiCharacter('\t')));
        assert_eq!(encode_dynamic_label(&"x".repeat(129)), Err(FrameError::LabelTooLong(129)));
    }

    fn pads(ids: &[u8]) -> (BTreeMap<u8, PadField>, BTreeMap<u8, Vec<u8>>) {
        let pad = ids.iter().map(|&id| (id, PadField::new(vec![id; 4]))).collect();
        let audio = ids.iter().map(|&id| (id, vec![0xA0 | id])).collect();
        (pad, audio)
    }

    #[test]
    fn mux_isolates_subchannels() {
        let (pad, audio) = pads(&[1, 2, 3]);
        let frame = mux_frame(vec![], pad, audio, 7).unwrap();
        for id in 1..=3 {
            assert_eq!(frame.demux(id).unwrap().as_bytes(), &[id; 4]);
        }
        assert!(frame.demux(4).is_none());
    }

    #[test]
    fn mux_empty_and_mismatch() {
        let frame = mux_frame(vec![], BTreeMap::new(), BTreeMap::new(), 0).unwrap();
        assert!(frame.subchannels.is_empty());
        let (pad, _) = pads(&[1]);
        let (_, audio) = pads(&[2]);
        assert_eq!(mux_frame(vec![], pad, audio, 0), Err(FrameError::KeyMismatch));
    }

    #[test]
    fn mux_rejects_fig_for_absent_subchannel() {
        let (pad, audio) = pads(&[1]);
        let fig = encode_fig_0_13(&[UserAppInfo::mot_xml(5)]).unwrap();
        assert_eq!(mux_frame(vec![fig], pad, audio, 0), Err(FrameError::UnknownSubchannel(5)));
    }

    #[test]
    fn container_layout_is_bit_exact() {
        let (pad, audio) = pads(&[3]);
        let fig = encode_fig_0_13(&[UserAppInfo::mot_xml(3)]).unwrap();
        let frame = mux_frame(vec![fig], pad, audio, 0x01020304).unwrap();
        let bytes = encode_frame(&frame).unwrap();
        #[rustfmt::skip]
        let expected = [
            b'D', b'A', b'B', b'S', 0x01, 0x02, 0x03, 0x04,
            0x00, 0x01, 0x03, 13, 0x03, 0x00, 0xC0,
            0x01, 0x03, 0x00, 0x01, 0xA3, 0x04, 3, 3, 3, 3,
        ];
        assert_eq!(bytes, expected);
        let mut reader = FrameReader::new(&bytes[..]);
        assert_eq!(reader.read_frame().unwrap().unwrap(), frame);
        assert!(reader.read_frame().unwrap().is_none());
    }

    #[test]
    fn reader_reports_truncation_offset() {
        let (pad, audio) = pads(&[1, 2]);
        let frame = mux_frame(vec![], pad, audio, 0).unwrap();
        let one = encode_frame(&frame).unwrap();
        let mut stream = one.clone();
        stream.extend_from_slice(&one[..one.len() - 3]);
        let results: Vec<_> = FrameReader::new(&stream[..]).collect();
        assert_eq!(results.len(), 2);
        assert!(results[0].is_ok());
        match &results[1] {
            Err(StreamError::Truncated { offset }) => assert_eq!(*offset, one.len() as u64),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reader_rejects_bad_magic() {
        let results: Vec<_> = FrameReader::new(&b"XXXX0000"[..]).collect();
        assert!(matches!(results[..], [Err(StreamError::BadMagic { offset: 0 })]));
    }

    #[test]
    fn signals_xml_requires_type_6_for_that_subchannel() {
        let (pad, audio) = pads(&[1, 2]);
        let other_type = UserAppInfo { subchannel_id: 1, user_app_type: 2, app_data: vec![] };
        let fig = encode_fig_0_13(&[other_type, UserAppInfo::mot_xml(2)]).unwrap();
        let frame = mux_frame(vec![fig], pad, audio, 0).unwrap();
        assert!(!frame.signals_xml(1));
        assert!(frame.signals_xml(2));
    }
}
