use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, SecondsFormat, Utc};

use dabxml_core::dabml::{Action, DabmlMessage, Payload, ReceiverStatus};
use dabxml_core::mot::ValidityState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExtractionErrorKind {
    CrcFailure,
    BadMarker,
    Reassembly,
    MotObject,
    NotXml,
    Expired,
    Envelope(&'static str),
    PadCapacity,
    Stream,
}

impl fmt::Display for ExtractionErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtractionErrorKind::Envelope(kind) => f.write_str(kind),
            other => write!(f, "{other:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerEvent {
    XmlMessageDecoded {
        message: Arc<DabmlMessage>,
        transport_id: u16,
        validity: ValidityState,
        /// The envelope exactly as received, for saving.
        body: Arc<Vec<u8>>,
    },
    ObjectSaved {
        destination: String,
    },
    HardwareResult {
        correlation_id: u64,
        command: String,
        outcome: Result<ReceiverStatus, String>,
    },
    /// Autonomous frequency correction on the hardware thread.
    AfcCorrected {
        status: ReceiverStatus,
    },
    ExtractionError {
        kind: ExtractionErrorKind,
        detail: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedEvent {
    pub at: DateTime<Utc>,
    pub event: ServerEvent,
}

impl TimedEvent {
    pub fn now(event: ServerEvent) -> Self {
        Self { at: Utc::now(), event }
    }
}

pub fn timestamp(at: &DateTime<Utc>) -> String {
    at.to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn describe_payload(payload: &Payload) -> String {
    match payload {
        Payload::AudioContent(a) => {
            let fields: Vec<String> = [("artiste", &a.artiste), ("songTitle", &a.song_title), ("genre", &a.genre)]
                .into_iter()
                .filter_map(|(k, v)| v.as_ref().map(|v| format!("{k}={v:?}")))
                .chain(a.extra.iter().map(|(k, v)| format!("{k}={v:?}")))
                .collect();
            format!("audioContent {}", fields.join(" "))
        }
        Payload::DataContent(d) => format!("dataContent {} {:?}", d.content_kind, d.name),
        Payload::HardwareControl(hc) => {
            format!("hardwareControl {}", hc.actions.iter().map(Action::to_string).collect::<Vec<_>>().join(" "))
        }
        other => other.tag().to_owned(),
    }
}

pub fn describe_status(s: &ReceiverStatus) -> String {
    let recording = match &s.recording {
        Some(r) => format!(" recording={}:{}", r.subchannel, r.destination),
        None => String::new(),
    };
    format!(
        "ensemble={:?} subchannel={} volume={} afc={} muted={}{recording}",
        s.ensemble, s.subchannel, s.volume, s.afc_offset, s.muted
    )
}

impl fmt::Display for ServerEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ServerEvent::XmlMessageDecoded { message, transport_id, validity, .. } => write!(
                f,
                "decoded tid={transport_id} validity={validity:?} {}",
                describe_payload(&message.payload)
            ),
            ServerEvent::ObjectSaved { destination } => write!(f, "saved {destination}"),
            ServerEvent::HardwareResult { correlation_id, command, outcome } => match outcome {
                Ok(status) => write!(f, "hardware #{correlation_id} {command} ok {}", describe_status(status)),
                Err(e) => write!(f, "hardware #{correlation_id} {command} error {e}"),
            },
            ServerEvent::AfcCorrected { status } => write!(f, "afc corrected to {}", status.afc_offset),
            ServerEvent::ExtractionError { kind, detail } => write!(f, "extraction error {kind}: {detail}"),
        }
    }
}

impl fmt::Display for TimedEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", timestamp(&self.at), self.event)
    }
}
