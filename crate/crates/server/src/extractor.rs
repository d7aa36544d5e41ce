//! The subchannel XML extractor: watches one subchannel, pulls data groups
//! out of its PAD while the FIC announces MOT XML there, reassembles MOT
//! objects and turns them into decoded-message events.

use std::io::{self, Read};
use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::Sender;

use dabxml_core::dabml::parse_envelope;
use dabxml_core::frame::{decode_frame, StreamError, TransmissionFrame};
use dabxml_core::mot::{parse_object, CompletedObject, GroupError, Reassembler, ValidityState};
use dabxml_core::pad::{PadError, PadExtractor};

use crate::events::{ExtractionErrorKind, ServerEvent, TimedEvent};

/// Current time in Unix seconds. Injected so tests can step time.
pub type Clock = Arc<dyn Fn() -> i64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| chrono::Utc::now().timestamp())
}

const POLL: Duration = Duration::from_millis(50);

#[derive(Debug)]
struct Held {
    start: i64,
    event: ServerEvent,
    window: dabxml_core::mot::ValidityWindow,
}

#[derive(Debug)]
pub struct SubchannelExtractor {
    subchannel: u8,
    expected_pad: Option<usize>,
    pad: PadExtractor,
    reassembler: Reassembler,
    held: Vec<Held>,
}

fn error(kind: ExtractionErrorKind, detail: impl Into<String>) -> ServerEvent {
    ServerEvent::ExtractionError { kind, detail: detail.into() }
}

impl SubchannelExtractor {
    pub fn new(subchannel: u8, expected_pad: Option<usize>) -> Self {
        Self { subchannel, expected_pad, pad: PadExtractor::new(), reassembler: Reassembler::new(), held: Vec::new() }
    }

    pub fn subchannel(&self) -> u8 {
        self.subchannel
    }

    /// Objects decoded but waiting for their start of validity.
    pub fn held(&self) -> usize {
        self.held.len()
    }

    pub fn process_frame(&mut self, frame: &TransmissionFrame, now: i64) -> Vec<ServerEvent> {
        let mut out = self.release_due(now);
        if !frame.signals_xml(self.subchannel) {
            return out;
        }
        let Some(pad) = frame.demux(self.subchannel) else {
            out.push(error(
                ExtractionErrorKind::Stream,
                format!("frame {} announces subchannel {} but does not carry it", frame.frame_index, self.subchannel),
            ));
            return out;
        };
        if let Some(expected) = self.expected_pad.filter(|&e| e != pad.len()) {
            out.push(error(
                ExtractionErrorKind::PadCapacity,
                format!("frame {} PAD is {} bytes, configured {expected}", frame.frame_index, pad.len()),
            ));
        }
        for item in self.pad.extract_from_pad(pad) {
            let group = match item {
                Ok(group) => group,
                Err(e) => {
                    let kind = match e {
                        PadError::Group(GroupError::CrcFailure { .. }) => ExtractionErrorKind::CrcFailure,
                        PadError::BadMarker { .. } => ExtractionErrorKind::BadMarker,
                        _ => ExtractionErrorKind::Reassembly,
                    };
                    out.push(error(kind, e.to_string()));
                    continue;
                }
            };
            match self.reassembler.push(group) {
                Ok(Some(object)) => out.extend(self.complete(object, now)),
                Ok(None) => {}
                Err(e) => out.push(error(ExtractionErrorKind::Reassembly, e.to_string())),
            }
        }
        out
    }

    fn complete(&mut self, object: CompletedObject, now: i64) -> Option<ServerEvent> {
        let tid = object.transport_id;
        let parsed = match parse_object(&object.bytes) {
            Ok(parsed) => parsed,
            Err(e) => return Some(error(ExtractionErrorKind::MotObject, format!("tid {tid}: {e}"))),
        };
        if !parsed.is_xml() {
            return Some(error(ExtractionErrorKind::NotXml, format!("tid {tid} is not TEXT/XML")));
        }
        let window = match parsed.validity() {
            Ok(window) => window,
            Err(e) => return Some(error(ExtractionErrorKind::MotObject, format!("tid {tid}: {e}"))),
        };
        let state = window.state_at(now);
        if state == ValidityState::Expired {
            return Some(error(ExtractionErrorKind::Expired, format!("tid {tid} expired before it arrived")));
        }
        let message = match parse_envelope(&parsed.body) {
            Ok(message) => Arc::new(message),
            Err(e) => return Some(error(ExtractionErrorKind::Envelope(e.kind()), format!("tid {tid}: {e}"))),
        };
        let event = ServerEvent::XmlMessageDecoded {
            message,
            transport_id: tid,
            validity: ValidityState::Active,
            body: Arc::new(parsed.body),
        };
        if state == ValidityState::Pending {
            let start = window.start_validity.unwrap_or(now);
            let at = self.held.partition_point(|h| h.start <= start);
            self.held.insert(at, Held { start, event, window });
            return None;
        }
        Some(event)
    }

    /// Emits held objects whose start of validity has come.
    pub fn release_due(&mut self, now: i64) -> Vec<ServerEvent> {
        let due = self.held.partition_point(|h| h.start <= now);
        self.held
            .drain(..due)
            .map(|h| match h.window.state_at(now) {
                ValidityState::Expired => {
                    let tid = match h.event {
                        ServerEvent::XmlMessageDecoded { transport_id, .. } => transport_id,
                        _ => 0,
                    };
                    error(ExtractionErrorKind::Expired, format!("tid {tid} expired while held"))
                }
                _ => h.event,
            })
            .collect()
    }
}

/// Disconnected sink: the server is shutting down.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SinkClosed;

fn send_all(sink: &Sender<TimedEvent>, events: Vec<ServerEvent>) -> Result<(), SinkClosed> {
    for event in events {
        sink.send(TimedEvent::now(event)).map_err(|_| SinkClosed)?;
    }
    Ok(())
}

/// Feeds already-decoded frames through `extractor`, sending events as they
/// arise. Stream errors become `ExtractionError` events and end the run.
pub fn run_extractor<I>(
    frames: I,
    extractor: &mut SubchannelExtractor,
    clock: &Clock,
    sink: &Sender<TimedEvent>,
) -> Result<(), SinkClosed>
where
    I: IntoIterator<Item = Result<TransmissionFrame, StreamError>>,
{
    for frame in frames {
        match frame {
            Ok(frame) => send_all(sink, extractor.process_frame(&frame, clock()))?,
            Err(e) => return send_all(sink, vec![error(ExtractionErrorKind::Stream, e.to_string())]),
        }
    }
    Ok(())
}

/// Reads a container byte stream, processing frames as they complete and
/// releasing held objects while input is idle. Returns at end of input or
/// when `stop` is raised.
pub fn pump_stream<R: Read>(
    mut source: R,
    extractor: &mut SubchannelExtractor,
    clock: &Clock,
    sink: &Sender<TimedEvent>,
    stop: &AtomicBool,
) -> Result<(), SinkClosed> {
    let mut buf = Vec::new();
    let mut chunk = vec![0u8; 16 * 1024];
    while !stop.load(Ordering::Relaxed) {
        let read = match source.read(&mut chunk) {
            Ok(0) => None,
            Ok(n) => Some(n),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut | io::ErrorKind::Interrupted) => {
                Some(0)
            }
            Err(e) => return send_all(sink, vec![error(ExtractionErrorKind::Stream, e.to_string())]),
        };
        let Some(n) = read else {
            if !buf.is_empty() {
                send_all(sink, vec![error(ExtractionErrorKind::Stream, format!("{} trailing bytes", buf.len()))])?;
            }
            return Ok(());
        };
        buf.extend_from_slice(&chunk[..n]);
        let mut used = 0;
        loop {
            match decode_frame(&buf[used..]) {
                Ok(Some((frame, len))) => {
                    used += len;
                    send_all(sink, extractor.process_frame(&frame, clock()))?;
                }
                Ok(None) => break,
                Err(e) => return send_all(sink, vec![error(ExtractionErrorKind::Stream, e.to_string())]),
            }
        }
        buf.drain(..used);
        send_all(sink, extractor.release_due(clock()))?;
    }
    Ok(())
}

/// Keeps releasing held objects after input has ended.
fn drain_held(extractor: &mut SubchannelExtractor, clock: &Clock, sink: &Sender<TimedEvent>, stop: &AtomicBool) {
    while extractor.held() > 0 && !stop.load(Ordering::Relaxed) {
        if send_all(sink, extractor.release_due(clock())).is_err() {
            return;
        }
        std::thread::sleep(POLL);
    }
}

pub(crate) fn serve_file(
    path: &std::path::Path,
    mut extractor: SubchannelExtractor,
    clock: Clock,
    sink: Sender<TimedEvent>,
    stop: Arc<AtomicBool>,
) {
    match std::fs::File::open(path) {
        Ok(file) => {
            if pump_stream(io::BufReader::new(file), &mut extractor, &clock, &sink, &stop).is_err() {
                return;
            }
        }
        Err(e) => {
            let _ = send_all(&sink, vec![error(ExtractionErrorKind::Stream, format!("{}: {e}", path.display()))]);
            return;
        }
    }
    drain_held(&mut extractor, &clock, &sink, &stop);
}

pub(crate) fn serve_tcp(
    listener: TcpListener,
    mut extractor: SubchannelExtractor,
    clock: Clock,
    sink: Sender<TimedEvent>,
    stop: Arc<AtomicBool>,
) {
    if let Err(e) = listener.set_nonblocking(true) {
        log::error!("broadcast listener: {e}");
        return;
    }
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                log::info!("broadcast source connected from {peer}");
                let configured = stream.set_nonblocking(false).and_then(|_| stream.set_read_timeout(Some(POLL)));
                if let Err(e) = configured {
                    log::warn!("broadcast source {peer}: {e}");
                    continue;
                }
                if pump_stream(stream, &mut extractor, &clock, &sink, &stop).is_err() {
                    return;
                }
                // a new connection starts a new byte stream
                extractor.pad = PadExtractor::new();
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                if send_all(&sink, extractor.release_due(clock())).is_err() {
                    return;
                }
                std::thread::sleep(POLL);
            }
            Err(e) => {
                log::warn!("broadcast accept: {e}");
                std::thread::sleep(POLL);
            }
        }
    }
}
