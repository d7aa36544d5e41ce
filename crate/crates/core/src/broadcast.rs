//! Transmitter side: turns a scenario (ensemble layout plus scheduled DABml
//! messages) into a deterministic stream of transmission frames, and reads a
//! stream back into a human-readable report.
//!
//! # Scenario files
//!
//! One directive per line; `#` starts a comment.
//!
//! ```text
//! ensemble Campus DAB
//! subchannel 1 Campus Radio
//! subchannel 2 Announcements
//! frames 50
//! pad-capacity 58
//! segment-size 256
//! message frame=0 subchannel=1 file=abba.xml
//! message frame=5 subchannel=2 file=notice.xml start=1760000000 expire=1760003600
//! ```
//!
//! `file=` paths are relative to the scenario file. `start`/`expire` are Unix
//! seconds and become the object's validity window.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::io::{Read, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dabml::{self, parse_envelope, serialize_envelope, DabmlMessage};
use crate::frame::{
    self, encode_fig_0_13_groups, mux_frame, FrameError, FrameReader, PadField, StreamError, TransmissionFrame,
    UserAppInfo, DEFAULT_PAD_CAPACITY, MAX_SUBCHANNEL_ID,
};
use crate::mot::{self, build_mot_object, parse_object, serialize_object, MotError, Reassembler, SegmentError, ValidityWindow};
use crate::pad::{PadError, PadExtractor, PadPacker};

pub const DEFAULT_SEGMENT_SIZE: usize = 256;
const AUDIO_FILLER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledMessage {
    pub at_frame: u32,
    pub subchannel: u8,
    pub payload: DabmlMessage,
    pub validity: ValidityWindow,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BroadcastScenario {
    pub ensemble_label: String,
    pub subchannels: Vec<(u8, String)>,
    pub scheduled_messages: Vec<ScheduledMessage>,
    pub frame_count: u32,
    pub pad_capacity: usize,
    pub segment_size: usize,
}

impl Default for BroadcastScenario {
    fn default() -> Self {
        Self {
            ensemble_label: String::new(),
            subchannels: Vec::new(),
            scheduled_messages: Vec::new(),
            frame_count: 0,
            pad_capacity: DEFAULT_PAD_CAPACITY,
            segment_size: DEFAULT_SEGMENT_SIZE,
        }
    }
}

#[derive(Debug, Error)]
pub enum BroadcastError {
    #[error("scenario line {line}: {message}")]
    Scenario { line: usize, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("subchannel {subchannel} still has {backlog} bytes queued after the last frame")]
    ScheduleOverflow { subchannel: u8, backlog: usize },
    #[error(transparent)]
    Mot(#[from] MotError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Pad(#[from] PadError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn config(message: impl Into<String>) -> BroadcastError {
    BroadcastError::Config(message.into())
}

/// Reads a scenario file; message files resolve against its directory.
pub fn load_scenario(path: &Path) -> Result<BroadcastScenario, BroadcastError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| BroadcastError::Io { path: path.display().to_string(), source })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_scenario(&text, |name| {
        let file = base.join(name);
        std::fs::read(&file).map_err(|e| format!("cannot read {}: {e}", file.display()))
    })
}

/// Parses scenario text. `read_file` supplies the bytes of each `file=`
/// reference.
pub fn parse_scenario(
    text: &str,
    mut read_file: impl FnMut(&str) -> Result<Vec<u8>, String>,
) -> Result<BroadcastScenario, BroadcastError> {
    let mut scenario = BroadcastScenario::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |message: String| BroadcastError::Scenario { line, message };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (directive, rest) = content.split_once(char::is_whitespace).unwrap_or((content, ""));
        let rest = rest.trim();
        match directive {
            "ensemble" => scenario.ensemble_label = rest.to_owned(),
            "subchannel" => {
                let (id, label) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
                let id = id.parse().map_err(|_| err(format!("bad subchannel id {id:?}")))?;
                scenario.subchannels.push((id, label.trim().to_owned()));
            }
            "frames" => scenario.frame_count = rest.parse().map_err(|_| err(format!("bad frame count {rest:?}")))?,
            "pad-capacity" => {
                scenario.pad_capacity = rest.parse().map_err(|_| err(format!("bad PAD capacity {rest:?}")))?
            }
            "segment-size" => {
                scenario.segment_size = rest.parse().map_err(|_| err(format!("bad segment size {rest:?}")))?
            }
            "message" => scenario.scheduled_messages.push(parse_message_line(rest, &mut read_file).map_err(err)?),
            other => return Err(err(format!("unknown directive {other:?}"))),
        }
    }
    Ok(scenario)
}

fn parse_message_line(
    rest: &str,
    read_file: &mut impl FnMut(&str) -> Result<Vec<u8>, String>,
) -> Result<ScheduledMessage, String> {
    let mut fields = BTreeMap::new();
    for pair in rest.split_whitespace() {
        let (key, value) = pair.split_once('=').ok_or_else(|| format!("expected key=value, got {pair:?}"))?;
        fields.insert(key, value);
    }
    let required = |key: &str| fields.get(key).copied().ok_or_else(|| format!("message needs {key}="));
    let at_frame = required("frame")?.parse().map_err(|_| "bad frame=".to_owned())?;
    let subchannel = required("subchannel")?.parse().map_err(|_| "bad subchannel=".to_owned())?;
    let file = required("file")?;
    let bytes = read_file(file)?;
    let payload = parse_envelope(&bytes).map_err(|e| format!("{file}: {e}"))?;
    let timestamp = |key: &str| {
        fields.get(key).map(|v| v.parse::<i64>().map_err(|_| format!("bad {key}= value {v:?}"))).transpose()
    };
    let validity = ValidityWindow { start_validity: timestamp("start")?, expire_time: timestamp("expire")? };
    if let Some(unknown) = fields.keys().find(|k| !["frame", "subchannel", "file", "start", "expire"].contains(k)) {
        return Err(format!("unknown message field {unknown}="));
    }
    Ok(ScheduledMessage { at_frame, subchannel, payload, validity })
}

impl BroadcastScenario {
    pub fn check(&self) -> Result<(), BroadcastError> {
        let mut ids = BTreeSet::new();
        for (id, _) in &self.subchannels {
            if *id > MAX_SUBCHANNEL_ID {
                return Err(config(format!("subchannel id {id} exceeds {MAX_SUBCHANNEL_ID}")));
            }
            if !ids.insert(*id) {
                return Err(config(format!("subchannel {id} declared twice")));
            }
        }
        if !(1..=255).contains(&self.pad_capacity) {
            return Err(config(format!("PAD capacity {} outside 1..=255", self.pad_capacity)));
        }
        if !(1..=usize::from(u16::MAX)).contains(&self.segment_size) {
            return Err(config(format!("segment size {} outside 1..=65535", self.segment_size)));
        }
        if self.scheduled_messages.len() > usize::from(u16::MAX) {
            return Err(config("more messages than transport ids"));
        }
        for msg in &self.scheduled_messages {
            if msg.at_frame >= self.frame_count {
                return Err(config(format!("message at frame {} but only {} frames", msg.at_frame, self.frame_count)));
            }
            if !ids.contains(&msg.subchannel) {
                return Err(config(format!("message for undeclared subchannel {}", msg.subchannel)));
            }
            if let Some(v) = dabml::validate(&msg.payload).into_iter().next() {
                return Err(config(format!("invalid message at frame {}: {}: {}", msg.at_frame, v.path, v.message)));
            }
        }
        Ok(())
    }

    /// Subchannels that carry XML somewhere in the scenario.
    pub fn xml_subchannels(&self) -> BTreeSet<u8> {
        self.scheduled_messages.iter().map(|m| m.subchannel).collect()
    }
}

/// The serialized data groups for one message, ready for a PAD packer.
pub fn message_groups(
    msg: &ScheduledMessage,
    transport_id: u16,
    segment_size: usize,
) -> Result<Vec<mot::DataGroup>, BroadcastError> {
    let xml = serialize_envelope(&msg.payload);
    let object = build_mot_object(&xml, &msg.validity)?;
    Ok(mot::segment(&serialize_object(&object), transport_id, segment_size)?)
}

fn audio_filler(frame_index: u32, subchannel: u8) -> Vec<u8> {
    (0..AUDIO_FILLER_LEN as u8).map(|i| (frame_index as u8).wrapping_add(subchannel).wrapping_add(i)).collect()
}

/// Builds every frame of the scenario. Transport ids are assigned from 1 in
/// order of scheduled frame, ties in scenario order.
pub fn plan_broadcast(scenario: &BroadcastScenario) -> Result<Vec<TransmissionFrame>, BroadcastError> {
    scenario.check()?;
    let announcements: Vec<UserAppInfo> = scenario.xml_subchannels().into_iter().map(UserAppInfo::mot_xml).collect();
    let fic = encode_fig_0_13_groups(&announcements)?;

    let mut order: Vec<&ScheduledMessage> = scenario.scheduled_messages.iter().collect();
    order.sort_by_key(|m| m.at_frame);
    let mut by_frame: BTreeMap<u32, Vec<(u16, &ScheduledMessage)>> = BTreeMap::new();
    for (i, msg) in order.into_iter().enumerate() {
        by_frame.entry(msg.at_frame).or_default().push((i as u16 + 1, msg));
    }

    let mut packers: BTreeMap<u8, PadPacker> = scenario
        .subchannels
        .iter()
        .map(|(id, _)| Ok((*id, PadPacker::new(scenario.pad_capacity)?)))
        .collect::<Result<_, PadError>>()?;

    let mut frames = Vec::with_capacity(scenario.frame_count as usize);
    for frame_index in 0..scenario.frame_count {
        for (transport_id, msg) in by_frame.remove(&frame_index).unwrap_or_default() {
            let packer = packers.get_mut(&msg.subchannel).expect("checked subchannel");
            for group in message_groups(msg, transport_id, scenario.segment_size)? {
                packer.enqueue_group(&group)?;
            }
        }
        let pads: BTreeMap<u8, PadField> = packers.iter_mut().map(|(id, p)| (*id, p.pack_next_pad())).collect();
        let audio = pads.keys().map(|&id| (id, audio_filler(frame_index, id))).collect();
        frames.push(mux_frame(fic.clone(), pads, audio, frame_index)?);
    }
    if let Some((&subchannel, packer)) = packers.iter().find(|(_, p)| !p.is_idle()) {
        return Err(BroadcastError::ScheduleOverflow { subchannel, backlog: packer.backlog() });
    }
    Ok(frames)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BroadcastSummary {
    pub frames: usize,
    pub messages: usize,
    pub bytes: u64,
}

/// Plans the scenario and writes the frame stream. With `fps` set, frames
/// are paced to that rate.
pub fn run_broadcast<W: Write>(
    scenario: &BroadcastScenario,
    out: &mut W,
    fps: Option<f64>,
) -> Result<BroadcastSummary, BroadcastError> {
    let frames = plan_broadcast(scenario)?;
    let started = Instant::now();
    let mut bytes = 0u64;
    for (n, frame) in frames.iter().enumerate() {
        if let Some(fps) = fps.filter(|f| *f > 0.0) {
            let due = started + Duration::from_secs_f64(n as f64 / fps);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        let encoded = frame::encode_frame(frame)?;
        out.write_all(&encoded).map_err(StreamError::from)?;
        bytes += encoded.len() as u64;
    }
    out.flush().map_err(StreamError::from)?;
    Ok(BroadcastSummary { frames: frames.len(), messages: scenario.scheduled_messages.len(), bytes })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectSummary {
    pub frame_index: u32,
    pub subchannel: u8,
    pub transport_id: u16,
    pub content_name: Option<String>,
    pub body_len: usize,
    pub payload_tag: Option<String>,
    pub digest: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InspectReport {
    pub frames: usize,
    pub lines: Vec<String>,
    pub objects: Vec<ObjectSummary>,
    pub errors: Vec<String>,
    /// Offset of the frame cut short by the end of the stream.
    pub truncated_at: Option<u64>,
}

impl fmt::Display for InspectReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for line in &self.lines {
            writeln!(f, "{line}")?;
        }
        for err in &self.errors {
            writeln!(f, "error: {err}")?;
        }
        write!(f, "{} frames, {} MOT objects, {} errors", self.frames, self.objects.len(), self.errors.len())?;
        if let Some(offset) = self.truncated_at {
            write!(f, ", truncated at offset {offset}")?;
        }
        writeln!(f)
    }
}

/// Walks a frame stream and describes what it carries. Every subchannel's
/// PAD is examined whether or not the FIC announces it.
pub fn inspect_stream<R: Read>(source: R) -> InspectReport {
    let mut report = InspectReport::default();
    let mut extractors: BTreeMap<u8, (PadExtractor, Reassembler)> = BTreeMap::new();
    let mut reader = FrameReader::new(source);
    loop {
        let frame = match reader.read_frame() {
            Ok(Some(frame)) => frame,
            Ok(None) => break,
            Err(StreamError::Truncated { offset }) => {
                report.truncated_at = Some(offset);
                report.errors.push(format!("truncated frame at offset {offset}"));
                break;
            }
            Err(err) => {
                report.errors.push(err.to_string());
                break;
            }
        };
        report.frames += 1;
        let mut line = format!("frame {}:", frame.frame_index);
        for fig in &frame.fic {
            let _ = write!(line, " FIG {}/{}", fig.fig_type(), fig.extension());
            if fig.is_user_app_info() {
                match frame::decode_fig_0_13(fig) {
                    Ok(entries) => {
                        let apps: Vec<String> = entries
                            .iter()
                            .map(|e| format!("sub {} type {}", e.subchannel_id, e.user_app_type))
                            .collect();
                        let _ = write!(line, " [{}]", apps.join(", "));
                    }
                    Err(e) => report.errors.push(format!("frame {}: {e}", frame.frame_index)),
                }
            }
        }
        let subs: Vec<String> = frame.subchannels.iter().map(|(id, af)| format!("{id}(pad {})", af.pad.len())).collect();
        let _ = write!(line, "; subchannels {}", subs.join(" "));
        report.lines.push(line);

        for (&id, af) in &frame.subchannels {
            let (extractor, reassembler) = extractors.entry(id).or_default();
            for item in extractor.extract_from_pad(&af.pad) {
                let group = match item {
                    Ok(group) => group,
                    Err(e) => {
                        report.errors.push(format!("frame {} sub {id}: {e}", frame.frame_index));
                        continue;
                    }
                };
                report.lines.push(format!(
                    "  sub {id}: data group tid={} seg={} last={} len={}",
                    group.transport_id,
                    group.segment_number,
                    group.last,
                    group.data.len()
                ));
                match reassembler.push(group) {
                    Ok(Some(done)) => {
                        let summary = summarize_object(frame.frame_index, id, done);
                        report.lines.push(format!(
                            "  sub {id}: MOT object tid={} ContentName {} body {} bytes payload {} sha256 {}",
                            summary.transport_id,
                            summary.content_name.as_deref().unwrap_or("-"),
                            summary.body_len,
                            summary.payload_tag.as_deref().unwrap_or("-"),
                            summary.digest
                        ));
                        report.objects.push(summary);
                    }
                    Ok(None) => {}
                    Err(e) => report.errors.push(format!("frame {} sub {id}: {e}", frame.frame_index)),
                }
            }
        }
    }
    report
}

fn summarize_object(frame_index: u32, subchannel: u8, done: mot::CompletedObject) -> ObjectSummary {
    let digest = |bytes: &[u8]| Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect::<String>();
    match parse_object(&done.bytes) {
        Ok(obj) => ObjectSummary {
            frame_index,
            subchannel,
            transport_id: done.transport_id,
            content_name: obj.content_name().map(|n| String::from_utf8_lossy(n).into_owned()),
            body_len: obj.body.len(),
            payload_tag: obj
                .is_xml()
                .then(|| parse_envelope(&obj.body).map(|m| m.payload.tag().to_owned()).ok())
                .flatten(),
            digest: digest(&obj.body),
        },
        Err(_) => ObjectSummary {
            frame_index,
            subchannel,
            transport_id: done.transport_id,
            content_name: None,
            body_len: done.bytes.len(),
            payload_tag: None,
            digest: digest(&done.bytes),
        },
    }
}
