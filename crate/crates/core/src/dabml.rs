//! DABml: the XML vocabulary for describing broadcast content and
//! controlling the receiver, carried in a SOAP-style envelope.
//!
//! The four schema tags are `audioContent`, `dataContent`, `hardwareControl`
//! and `behaviours`. Requests and replies exchanged with network clients add
//! `query`, `contentInfo`, `receiverState` and `receipt`, with the reply
//! status carried as header entries (`status`, `kind`, `detail`).
//!
//! Parsing resolves namespaces, so the envelope and wrapper prefixes are free
//! to differ from the ones [`serialize_envelope`] writes. Payload elements are
//! matched by local name.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use quick_xml::escape::escape;
use quick_xml::events::Event;
use quick_xml::name::ResolveResult;
use quick_xml::NsReader;
use thiserror::Error;

pub const SOAP_ENV_NS: &str = "http://schemas.xmlsoap.org/soap/envelope/";
pub const SOAP_ENCODING_STYLE: &str = "http://schemas.xmlsoap.org/soap/encoding/";
pub const DABML_NS: &str = "http://location/dabml/";

pub const MAX_VOLUME: u32 = 100;
pub const MAX_SUBCHANNEL: u32 = 63;

/// Header key carrying the reply status, `ok` or `error`.
pub const HEADER_STATUS: &str = "status";
/// Header key naming the error kind of an error reply.
pub const HEADER_KIND: &str = "kind";
/// Header key with human-readable reply detail.
pub const HEADER_DETAIL: &str = "detail";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AudioContent {
    pub artiste: Option<String>,
    pub song_title: Option<String>,
    pub genre: Option<String>,
    /// Unrecognized child elements, by tag name.
    pub extra: BTreeMap<String, String>,
}

impl AudioContent {
    pub fn field(&self, name: &str) -> Option<&str> {
        match name {
            "artiste" => self.artiste.as_deref(),
            "songTitle" => self.song_title.as_deref(),
            "genre" => self.genre.as_deref(),
            other => self.extra.get(other).map(String::as_str),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DataContent {
    /// e.g. "image" or "webpage"
    pub content_kind: String,
    pub name: String,
    pub uri: Option<String>,
    pub extra: BTreeMap<String, String>,
}

impl DataContent {
    pub fn field(&self, name: &str) -> Option<&str> {
        match name {
            "contentKind" => Some(&self.content_kind),
            "name" => Some(&self.name),
            "uri" => self.uri.as_deref(),
            other => self.extra.get(other).map(String::as_str),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    SetVolume(u32),
    SelectSubchannel(u32),
    TuneEnsemble(String),
    RecordStart { subchannel: u32, destination: String },
    RecordStop,
    AfcAdjust(i32),
}

impl Action {
    pub fn tag(&self) -> &'static str {
        match self {
            Action::SetVolume(_) => "setVolume",
            Action::SelectSubchannel(_) => "selectSubchannel",
            Action::TuneEnsemble(_) => "tuneEnsemble",
            Action::RecordStart { .. } => "recordStart",
            Action::RecordStop => "recordStop",
            Action::AfcAdjust(_) => "afcAdjust",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::SetVolume(level) => write!(f, "setVolume({level})"),
            Action::SelectSubchannel(id) => write!(f, "selectSubchannel({id})"),
            Action::TuneEnsemble(label) => write!(f, "tuneEnsemble({label})"),
            Action::RecordStart { subchannel, destination } => write!(f, "recordStart({subchannel}, {destination})"),
            Action::RecordStop => f.write_str("recordStop"),
            Action::AfcAdjust(offset) => write!(f, "afcAdjust({offset})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardwareControl {
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContentSection {
    Audio,
    Data,
}

impl ContentSection {
    pub fn tag(self) -> &'static str {
        match self {
            ContentSection::Audio => "audioContent",
            ContentSection::Data => "dataContent",
        }
    }
}

/// A content field addressed as `audioContent.<tag>` or `dataContent.<tag>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FieldPath {
    pub section: ContentSection,
    pub field: String,
}

impl FieldPath {
    pub fn audio(field: &str) -> Self {
        Self { section: ContentSection::Audio, field: field.to_owned() }
    }

    pub fn data(field: &str) -> Self {
        Self { section: ContentSection::Data, field: field.to_owned() }
    }
}

impl fmt::Display for FieldPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.section.tag(), self.field)
    }
}

impl FromStr for FieldPath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (section, field) = s.split_once('.').ok_or_else(|| format!("field path {s:?} has no section"))?;
        let section = match section {
            "audioContent" => ContentSection::Audio,
            "dataContent" => ContentSection::Data,
            other => return Err(format!("unknown content section {other:?}")),
        };
        Ok(Self { section, field: field.to_owned() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatchKind {
    /// Exact, case-sensitive.
    Equals,
    /// Case-insensitive substring.
    Contains,
}

impl MatchKind {
    pub fn tag(self) -> &'static str {
        match self {
            MatchKind::Equals => "equals",
            MatchKind::Contains => "contains",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TriggerClause {
    pub field: FieldPath,
    pub kind: MatchKind,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reaction {
    Device(Action),
    SaveToDisk(String),
    Notify(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviourDef {
    pub behaviour_id: String,
    pub trigger: Vec<TriggerClause>,
    pub reactions: Vec<Reaction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryKind {
    ContentInfo,
    ReceiverState,
    Behaviours,
}

impl QueryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryKind::ContentInfo => "contentInfo",
            QueryKind::ReceiverState => "receiverState",
            QueryKind::Behaviours => "behaviours",
        }
    }
}

/// Latest content the server has seen, returned for a content query.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContentInfo {
    pub audio: Option<AudioContent>,
    pub data: Option<DataContent>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recording {
    pub subchannel: u32,
    pub destination: String,
}

/// Snapshot of the simulated receiver as reported to clients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceiverStatus {
    pub ensemble: String,
    pub subchannel: u32,
    pub volume: u32,
    pub afc_offset: i32,
    pub recording: Option<Recording>,
    pub muted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    AudioContent(AudioContent),
    DataContent(DataContent),
    HardwareControl(HardwareControl),
    Behaviours(Vec<BehaviourDef>),
    Query(QueryKind),
    ContentInfo(ContentInfo),
    ReceiverState(ReceiverStatus),
    /// Reply items, e.g. the ids of behaviours just added.
    Receipt(Vec<String>),
}

impl Payload {
    pub fn tag(&self) -> &'static str {
        match self {
            Payload::AudioContent(_) => "audioContent",
            Payload::DataContent(_) => "dataContent",
            Payload::HardwareControl(_) => "hardwareControl",
            Payload::Behaviours(_) => "behaviours",
            Payload::Query(_) => "query",
            Payload::ContentInfo(_) => "contentInfo",
            Payload::ReceiverState(_) => "receiverState",
            Payload::Receipt(_) => "receipt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DabmlMessage {
    pub header_entries: BTreeMap<String, String>,
    pub payload: Payload,
}

impl DabmlMessage {
    pub fn new(payload: Payload) -> Self {
        Self { header_entries: BTreeMap::new(), payload }
    }

    pub fn with_header(mut self, key: &str, value: impl Into<String>) -> Self {
        self.header_entries.insert(key.to_owned(), value.into());
        self
    }

    pub fn ok(payload: Payload) -> Self {
        Self::new(payload).with_header(HEADER_STATUS, "ok")
    }

    pub fn error(kind: &str, detail: impl Into<String>) -> Self {
        Self::new(Payload::Receipt(Vec::new()))
            .with_header(HEADER_STATUS, "error")
            .with_header(HEADER_KIND, kind)
            .with_header(HEADER_DETAIL, detail)
    }

    pub fn status(&self) -> Option<&str> {
        self.header_entries.get(HEADER_STATUS).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DabmlError {
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("document root is not a SOAP envelope")]
    NotAnEnvelope,
    #[error("envelope has no DABml body")]
    MissingBody,
    #[error("body carries unknown payload element <{0}>")]
    UnknownPayload(String),
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
}

impl DabmlError {
    /// Stable name of the error kind, used in error replies.
    pub fn kind(&self) -> &'static str {
        match self {
            DabmlError::MalformedXml(_) => "MalformedXml",
            DabmlError::NotAnEnvelope => "NotAnEnvelope",
            DabmlError::MissingBody => "MissingBody",
            DabmlError::UnknownPayload(_) => "UnknownPayload",
            DabmlError::SchemaViolation { .. } => "SchemaViolation",
        }
    }

    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        DabmlError::SchemaViolation { path: path.into(), message: message.into() }
    }
}

// ---------------------------------------------------------------------------
// serialization

struct XmlWriter {
    out: String,
    depth: usize,
}

impl XmlWriter {
    fn indent(&mut self) {
        for _ in 0..self.depth {
            self.out.push_str("  ");
        }
    }

    fn open(&mut self, tag: &str) {
        self.indent();
        self.out.push('<');
        self.out.push_str(tag);
        self.out.push_str(">\n");
        self.depth += 1;
    }

    fn close(&mut self, tag: &str) {
        self.depth -= 1;
        self.indent();
        self.out.push_str("</");
        self.out.push_str(tag);
        self.out.push_str(">\n");
    }

    fn leaf(&mut self, tag: &str, text: &str) {
        self.indent();
        self.out.push('<');
        self.out.push_str(tag);
        self.out.push('>');
        self.out.push_str(&escape(text));
        self.out.push_str("</");
        self.out.push_str(tag);
        self.out.push_str(">\n");
    }

    fn empty(&mut self, tag: &str) {
        self.indent();
        self.out.push('<');
        self.out.push_str(tag);
        self.out.push_str("/>\n");
    }
}

/// Writes the envelope as indented UTF-8 XML.
pub fn serialize_envelope(msg: &DabmlMessage) -> Vec<u8> {
    let mut w = XmlWriter { out: String::with_capacity(512), depth: 0 };
    w.out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    w.out.push_str(&format!(
        "<SOAP-ENV:Envelope xmlns:SOAP-ENV=\"{SOAP_ENV_NS}\" SOAP-ENV:encodingStyle=\"{SOAP_ENCODING_STYLE}\">\n"
    ));
    w.depth = 1;
    w.open("SOAP-ENV:Header");
    for (key, value) in &msg.header_entries {
        w.leaf(key, value);
    }
    w.close("SOAP-ENV:Header");
    w.open("SOAP-ENV:Body");
    w.indent();
    w.out.push_str(&format!("<dabml:DAB xmlns:dabml=\"{DABML_NS}\">\n"));
    w.depth += 1;
    write_payload(&mut w, &msg.payload);
    w.close("dabml:DAB");
    w.close("SOAP-ENV:Body");
    w.out.push_str("</SOAP-ENV:Envelope>\n");
    w.out.into_bytes()
}

fn write_payload(w: &mut XmlWriter, payload: &Payload) {
    match payload {
        Payload::AudioContent(audio) => write_audio(w, audio),
        Payload::DataContent(data) => write_data(w, data),
        Payload::HardwareControl(hc) => {
            w.open("hardwareControl");
            for action in &hc.actions {
                write_action(w, action);
            }
            w.close("hardwareControl");
        }
        Payload::Behaviours(defs) => {
            w.open("behaviours");
            for def in defs {
                write_behaviour(w, def);
            }
            w.close("behaviours");
        }
        Payload::Query(kind) => w.leaf("query", kind.as_str()),
        Payload::ContentInfo(info) => {
            w.open("contentInfo");
            if let Some(audio) = &info.audio {
                write_audio(w, audio);
            }
            if let Some(data) = &info.data {
                write_data(w, data);
            }
            w.close("contentInfo");
        }
        Payload::ReceiverState(state) => {
            w.open("receiverState");
            w.leaf("ensemble", &state.ensemble);
            w.leaf("subchannel", &state.subchannel.to_string());
            w.leaf("volume", &state.volume.to_string());
            w.leaf("afcOffset", &state.afc_offset.to_string());
            if let Some(rec) = &state.recording {
                w.open("recording");
                w.leaf("subchannel", &rec.subchannel.to_string());
                w.leaf("destination", &rec.destination);
                w.close("recording");
            }
            w.leaf("muted", if state.muted { "true" } else { "false" });
            w.close("receiverState");
        }
        Payload::Receipt(items) => {
            if items.is_empty() {
                w.empty("receipt");
            } else {
                w.open("receipt");
                for item in items {
                    w.leaf("item", item);
                }
                w.close("receipt");
            }
        }
    }
}

fn write_audio(w: &mut XmlWriter, audio: &AudioContent) {
    w.open("audioContent");
    if let Some(v) = &audio.artiste {
        w.leaf("artiste", v);
    }
    if let Some(v) = &audio.song_title {
        w.leaf("songTitle", v);
    }
    if let Some(v) = &audio.genre {
        w.leaf("genre", v);
    }
    for (k, v) in &audio.extra {
        w.leaf(k, v);
    }
    w.close("audioContent");
}

fn write_data(w: &mut XmlWriter, data: &DataContent) {
    w.open("dataContent");
    w.leaf("contentKind", &data.content_kind);
    w.leaf("name", &data.name);
    if let Some(uri) = &data.uri {
        w.leaf("uri", uri);
    }
    for (k, v) in &data.extra {
        w.leaf(k, v);
    }
    w.close("dataContent");
}

fn write_action(w: &mut XmlWriter, action: &Action) {
    match action {
        Action::SetVolume(level) => w.leaf("setVolume", &level.to_string()),
        Action::SelectSubchannel(id) => w.leaf("selectSubchannel", &id.to_string()),
        Action::TuneEnsemble(label) => w.leaf("tuneEnsemble", label),
        Action::RecordStart { subchannel, destination } => {
            w.open("recordStart");
            w.leaf("subchannel", &subchannel.to_string());
            w.leaf("destination", destination);
            w.close("recordStart");
        }
        Action::RecordStop => w.empty("recordStop"),
        Action::AfcAdjust(offset) => w.leaf("afcAdjust", &offset.to_string()),
    }
}

fn write_behaviour(w: &mut XmlWriter, def: &BehaviourDef) {
    w.open("behaviour");
    w.leaf("id", &def.behaviour_id);
    w.open("trigger");
    for clause in &def.trigger {
        w.open("clause");
        w.leaf("field", &clause.field.to_string());
        w.leaf("match", clause.kind.tag());
        w.leaf("value", &clause.value);
        w.close("clause");
    }
    w.close("trigger");
    w.open("reactions");
    for reaction in &def.reactions {
        match reaction {
            Reaction::Device(action) => {
                w.open("device");
                write_action(w, action);
                w.close("device");
            }
            Reaction::SaveToDisk(dest) => w.leaf("saveToDisk", dest),
            Reaction::Notify(text) => w.leaf("notify", text),
        }
    }
    w.close("reactions");
    w.close("behaviour");
}

// ---------------------------------------------------------------------------
// parsing

#[derive(Debug, Default)]
struct Element {
    ns: Option<String>,
    name: String,
    children: Vec<Element>,
    text: String,
}

impl Element {
    fn is(&self, ns: &str, name: &str) -> bool {
        self.ns.as_deref() == Some(ns) && self.name == name
    }
}

fn malformed(err: impl fmt::Display) -> DabmlError {
    DabmlError::MalformedXml(err.to_string())
}

fn resolved_ns(ns: ResolveResult<'_>) -> Result<Option<String>, DabmlError> {
    match ns {
        ResolveResult::Bound(ns) => Ok(Some(String::from_utf8_lossy(ns.as_ref()).into_owned())),
        ResolveResult::Unbound => Ok(None),
        ResolveResult::Unknown(prefix) => {
            Err(malformed(format!("undeclared prefix {:?}", String::from_utf8_lossy(&prefix))))
        }
    }
}

fn parse_tree(xml: &str) -> Result<Element, DabmlError> {
    let mut reader = NsReader::from_str(xml);
    reader.config_mut().trim_text(false);
    let mut stack: Vec<Element> = Vec::new();
    let mut root: Option<Element> = None;
    loop {
        let (ns, event) = reader.read_resolved_event().map_err(malformed)?;
        match event {
            Event::Start(_) | Event::Empty(_) if root.is_some() => {
                return Err(malformed("content after the document element"));
            }
            Event::Start(start) => {
                let element = Element {
                    ns: resolved_ns(ns)?,
                    name: String::from_utf8_lossy(start.local_name().as_ref()).into_owned(),
                    ..Element::default()
                };
                stack.push(element);
            }
            Event::Empty(start) => {
                let element = Element {
                    ns: resolved_ns(ns)?,
                    name: String::from_utf8_lossy(start.local_name().as_ref()).into_owned(),
                    ..Element::default()
                };
                match stack.last_mut() {
                    Some(parent) => parent.children.push(element),
                    None => root = Some(element),
                }
            }
            Event::End(_) => {
                let element = stack.pop().ok_or_else(|| malformed("unbalanced end tag"))?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(element),
                    None => root = Some(element),
                }
            }
            Event::Text(text) => {
                let text = text.unescape().map_err(malformed)?;
                match stack.last_mut() {
                    Some(current) => current.text.push_str(&text),
                    None if text.trim().is_empty() => {}
                    None => return Err(malformed("text outside the document element")),
                }
            }
            Event::CData(cdata) => {
                let text = std::str::from_utf8(&cdata).map_err(malformed)?;
                match stack.last_mut() {
                    Some(current) => current.text.push_str(text),
                    None => return Err(malformed("CDATA outside the document element")),
                }
            }
            Event::Eof => break,
            Event::Decl(_) | Event::PI(_) | Event::Comment(_) | Event::DocType(_) => {}
        }
    }
    if !stack.is_empty() {
        return Err(malformed("unclosed element at end of input"));
    }
    root.ok_or_else(|| malformed("empty document"))
}

/// Parses an envelope and validates its payload; any schema problem is
/// reported as [`DabmlError::SchemaViolation`].
pub fn parse_envelope(bytes: &[u8]) -> Result<DabmlMessage, DabmlError> {
    let xml = std::str::from_utf8(bytes).map_err(malformed)?;
    let root = parse_tree(xml)?;
    if !root.is(SOAP_ENV_NS, "Envelope") {
        return Err(DabmlError::NotAnEnvelope);
    }
    let mut header_entries = BTreeMap::new();
    if let Some(header) = root.children.iter().find(|c| c.is(SOAP_ENV_NS, "Header")) {
        for entry in &header.children {
            header_entries.insert(entry.name.clone(), leaf(entry, "Header")?.to_owned());
        }
    }
    let body = root.children.iter().find(|c| c.is(SOAP_ENV_NS, "Body")).ok_or(DabmlError::MissingBody)?;
    let wrapper = body.children.first().ok_or(DabmlError::MissingBody)?;
    if !wrapper.is(DABML_NS, "DAB") {
        return Err(DabmlError::UnknownPayload(wrapper.name.clone()));
    }
    let payload_el = match wrapper.children.as_slice() {
        [] => return Err(DabmlError::MissingBody),
        [single] => single,
        [_, second, ..] => {
            return Err(DabmlError::schema("DAB", format!("second payload element <{}>", second.name)))
        }
    };
    let payload = parse_payload(payload_el)?;
    let msg = DabmlMessage { header_entries, payload };
    if let Some(v) = validate(&msg).into_iter().next() {
        return Err(DabmlError::SchemaViolation { path: v.path, message: v.message });
    }
    Ok(msg)
}

fn leaf<'a>(el: &'a Element, path: &str) -> Result<&'a str, DabmlError> {
    if let Some(child) = el.children.first() {
        return Err(DabmlError::schema(
            format!("{path}.{}", el.name),
            format!("unexpected element <{}> inside a text field", child.name),
        ));
    }
    Ok(&el.text)
}

fn number<T: FromStr>(el: &Element, path: &str) -> Result<T, DabmlError> {
    let text = leaf(el, path)?;
    text.trim().parse().map_err(|_| DabmlError::schema(path, format!("{text:?} is not a valid number")))
}

fn only_child<'a>(el: &'a Element, path: &str) -> Result<&'a Element, DabmlError> {
    match el.children.as_slice() {
        [single] => Ok(single),
        _ => Err(DabmlError::schema(path, format!("<{}> needs exactly one child element", el.name))),
    }
}

fn child<'a>(el: &'a Element, name: &str, path: &str) -> Result<&'a Element, DabmlError> {
    el.children
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| DabmlError::schema(path, format!("missing <{name}>")))
}

fn parse_payload(el: &Element) -> Result<Payload, DabmlError> {
    Ok(match el.name.as_str() {
        "audioContent" => Payload::AudioContent(parse_audio(el, "audioContent")?),
        "dataContent" => Payload::DataContent(parse_data(el, "dataContent")?),
        "hardwareControl" => Payload::HardwareControl(HardwareControl {
            actions: el
                .children
                .iter()
                .enumerate()
                .map(|(i, c)| parse_action(c, &format!("actions[{i}]")))
                .collect::<Result<_, _>>()?,
        }),
        "behaviours" => Payload::Behaviours(
            el.children
                .iter()
                .enumerate()
                .map(|(i, c)| parse_behaviour(c, &format!("behaviours[{i}]")))
                .collect::<Result<_, _>>()?,
        ),
        "query" => Payload::Query(match leaf(el, "query")?.trim() {
            "contentInfo" => QueryKind::ContentInfo,
            "receiverState" => QueryKind::ReceiverState,
            "behaviours" => QueryKind::Behaviours,
            other => return Err(DabmlError::schema("query", format!("unknown query {other:?}"))),
        }),
        "contentInfo" => {
            let mut info = ContentInfo::default();
            for c in &el.children {
                match c.name.as_str() {
                    "audioContent" => info.audio = Some(parse_audio(c, "contentInfo.audioContent")?),
                    "dataContent" => info.data = Some(parse_data(c, "contentInfo.dataContent")?),
                    other => return Err(DabmlError::schema("contentInfo", format!("unexpected <{other}>"))),
                }
            }
            Payload::ContentInfo(info)
        }
        "receiverState" => Payload::ReceiverState(parse_status(el)?),
        "receipt" => Payload::Receipt(
            el.children
                .iter()
                .map(|c| leaf(c, "receipt").map(str::to_owned))
                .collect::<Result<_, _>>()?,
        ),
        other => return Err(DabmlError::UnknownPayload(other.to_owned())),
    })
}

fn parse_audio(el: &Element, path: &str) -> Result<AudioContent, DabmlError> {
    let mut audio = AudioContent::default();
    for c in &el.children {
        let text = leaf(c, path)?.to_owned();
        match c.name.as_str() {
            "artiste" => audio.artiste = Some(text),
            "songTitle" => audio.song_title = Some(text),
            "genre" => audio.genre = Some(text),
            other => {
                audio.extra.insert(other.to_owned(), text);
            }
        }
    }
    Ok(audio)
}

fn parse_data(el: &Element, path: &str) -> Result<DataContent, DabmlError> {
    let mut data = DataContent::default();
    for c in &el.children {
        let text = leaf(c, path)?.to_owned();
        match c.name.as_str() {
            "contentKind" => data.content_kind = text,
            "name" => data.name = text,
            "uri" => data.uri = Some(text),
            other => {
                data.extra.insert(other.to_owned(), text);
            }
        }
    }
    Ok(data)
}

fn parse_action(el: &Element, path: &str) -> Result<Action, DabmlError> {
    Ok(match el.name.as_str() {
        "setVolume" => Action::SetVolume(number(el, &format!("{path}.level"))?),
        "selectSubchannel" => Action::SelectSubchannel(number(el, &format!("{path}.subchannel"))?),
        "tuneEnsemble" => Action::TuneEnsemble(leaf(el, path)?.to_owned()),
        "recordStart" => Action::RecordStart {
            subchannel: number(child(el, "subchannel", path)?, &format!("{path}.subchannel"))?,
            destination: leaf(child(el, "destination", path)?, path)?.to_owned(),
        },
        "recordStop" => Action::RecordStop,
        "afcAdjust" => Action::AfcAdjust(number(el, &format!("{path}.offset"))?),
        other => return Err(DabmlError::schema(path, format!("unknown action <{other}>"))),
    })
}

fn parse_behaviour(el: &Element, path: &str) -> Result<BehaviourDef, DabmlError> {
    if el.name != "behaviour" {
        return Err(DabmlError::schema(path, format!("expected <behaviour>, found <{}>", el.name)));
    }
    let behaviour_id = leaf(child(el, "id", path)?, path)?.to_owned();
    let trigger = match el.children.iter().find(|c| c.name == "trigger") {
        None => Vec::new(),
        Some(t) => t
            .children
            .iter()
            .enumerate()
            .map(|(i, clause)| {
                let cpath = format!("{path}.trigger[{i}]");
                let field = leaf(child(clause, "field", &cpath)?, &cpath)?;
                let field = field.trim().parse().map_err(|m| DabmlError::schema(format!("{cpath}.field"), m))?;
                let kind = match leaf(child(clause, "match", &cpath)?, &cpath)?.trim() {
                    "equals" => MatchKind::Equals,
                    "contains" => MatchKind::Contains,
                    other => return Err(DabmlError::schema(format!("{cpath}.match"), format!("unknown match {other:?}"))),
                };
                let value = leaf(child(clause, "value", &cpath)?, &cpath)?.to_owned();
                Ok(TriggerClause { field, kind, value })
            })
            .collect::<Result<_, _>>()?,
    };
    let reactions = match el.children.iter().find(|c| c.name == "reactions") {
        None => Vec::new(),
        Some(r) => r
            .children
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let rpath = format!("{path}.reactions[{i}]");
                Ok(match c.name.as_str() {
                    "device" => Reaction::Device(parse_action(only_child(c, &rpath)?, &rpath)?),
                    "saveToDisk" => Reaction::SaveToDisk(leaf(c, &rpath)?.to_owned()),
                    "notify" => Reaction::Notify(leaf(c, &rpath)?.to_owned()),
                    other => return Err(DabmlError::schema(rpath, format!("unknown reaction <{other}>"))),
                })
            })
            .collect::<Result<_, _>>()?,
    };
    Ok(BehaviourDef { behaviour_id, trigger, reactions })
}

fn parse_status(el: &Element) -> Result<ReceiverStatus, DabmlError> {
    let path = "receiverState";
    let recording = match el.children.iter().find(|c| c.name == "recording") {
        None => None,
        Some(r) => Some(Recording {
            subchannel: number(child(r, "subchannel", path)?, "receiverState.recording.subchannel")?,
            destination: leaf(child(r, "destination", path)?, path)?.to_owned(),
        }),
    };
    let muted = match leaf(child(el, "muted", path)?, path)?.trim() {
        "true" => true,
        "false" => false,
        other => return Err(DabmlError::schema("receiverState.muted", format!("{other:?} is not a boolean"))),
    };
    Ok(ReceiverStatus {
        ensemble: leaf(child(el, "ensemble", path)?, path)?.to_owned(),
        subchannel: number(child(el, "subchannel", path)?, "receiverState.subchannel")?,
        volume: number(child(el, "volume", path)?, "receiverState.volume")?,
        afc_offset: number(child(el, "afcOffset", path)?, "receiverState.afcOffset")?,
        recording,
        muted,
    })
}

// ---------------------------------------------------------------------------
// validation

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

struct Checker {
    found: Vec<Violation>,
}

impl Checker {
    fn flag(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.found.push(Violation { path: path.into(), message: message.into() });
    }

    fn text(&mut self, path: &str, value: &str) {
        if let Some(c) = value.chars().find(|&c| c.is_control() && c != '\n' && c != '\t') {
            self.flag(path, format!("control character {c:?} cannot be carried in XML text"));
        }
    }

    fn tag_name(&mut self, path: &str, name: &str) {
        if !is_xml_name(name) {
            self.flag(path, format!("{name:?} is not usable as an element name"));
        }
    }

    fn file_name(&mut self, path: &str, name: &str) {
        if !is_plain_file_name(name) {
            self.flag(path, format!("{name:?} is not a plain file name"));
        }
    }
}

fn is_xml_name(name: &str) -> bool {
    let mut chars = name.chars();
    let Some(first) = chars.next() else { return false };
    (first.is_ascii_alphabetic() || first == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !name.to_ascii_lowercase().starts_with("xml")
}

/// A destination name that stays inside the output directory.
pub fn is_plain_file_name(name: &str) -> bool {
    !name.trim().is_empty()
        && name != "."
        && name != ".."
        && !name.contains(['/', '\\', '\0'])
        && !name.chars().any(char::is_control)
}

/// Lists every schema violation in `msg`, each with a field path.
pub fn validate(msg: &DabmlMessage) -> Vec<Violation> {
    let mut ck = Checker { found: Vec::new() };
    for (key, value) in &msg.header_entries {
        ck.tag_name(&format!("header.{key}"), key);
        ck.text(&format!("header.{key}"), value);
    }
    match &msg.payload {
        Payload::AudioContent(audio) => check_audio(&mut ck, "audioContent", audio),
        Payload::DataContent(data) => check_data(&mut ck, "dataContent", data),
        Payload::HardwareControl(hc) => {
            if hc.actions.is_empty() {
                ck.flag("actions", "hardwareControl needs at least one action");
            }
            for (i, action) in hc.actions.iter().enumerate() {
                check_action(&mut ck, &format!("actions[{i}]"), action);
            }
        }
        Payload::Behaviours(defs) => {
            if defs.is_empty() {
                ck.flag("behaviours", "no behaviours defined");
            }
            let mut seen = HashSet::new();
            for (i, def) in defs.iter().enumerate() {
                let path = format!("behaviours[{i}]");
                if !seen.insert(def.behaviour_id.as_str()) {
                    ck.flag(format!("{path}.id"), format!("duplicate behaviour id {:?}", def.behaviour_id));
                }
                check_behaviour(&mut ck, &path, def);
            }
        }
        Payload::Query(_) => {}
        Payload::ContentInfo(info) => {
            if let Some(audio) = &info.audio {
                check_audio(&mut ck, "contentInfo.audioContent", audio);
            }
            if let Some(data) = &info.data {
                check_data(&mut ck, "contentInfo.dataContent", data);
            }
        }
        Payload::ReceiverState(state) => {
            ck.text("receiverState.ensemble", &state.ensemble);
            if state.volume > MAX_VOLUME {
                ck.flag("receiverState.volume", format!("volume {} exceeds {MAX_VOLUME}", state.volume));
            }
            if state.subchannel > MAX_SUBCHANNEL {
                ck.flag("receiverState.subchannel", format!("subchannel {} exceeds {MAX_SUBCHANNEL}", state.subchannel));
            }
            if let Some(rec) = &state.recording {
                ck.text("receiverState.recording.destination", &rec.destination);
            }
        }
        Payload::Receipt(items) => {
            for (i, item) in items.iter().enumerate() {
                ck.text(&format!("receipt[{i}]"), item);
            }
        }
    }
    ck.found
}

/// Validates a single behaviour definition on its own.
pub fn validate_behaviour(def: &BehaviourDef) -> Vec<Violation> {
    let mut ck = Checker { found: Vec::new() };
    check_behaviour(&mut ck, "behaviour", def);
    ck.found
}

fn check_extra(ck: &mut Checker, path: &str, extra: &BTreeMap<String, String>, reserved: &[&str]) {
    for (key, value) in extra {
        let fpath = format!("{path}.{key}");
        ck.tag_name(&fpath, key);
        if reserved.contains(&key.as_str()) {
            ck.flag(&fpath, "extra field shadows a schema field");
        }
        ck.text(&fpath, value);
    }
}

fn check_audio(ck: &mut Checker, path: &str, audio: &AudioContent) {
    if audio.artiste.is_none() && audio.song_title.is_none() && audio.genre.is_none() && audio.extra.is_empty() {
        ck.flag(path, "audioContent carries no fields");
    }
    for (name, value) in [("artiste", &audio.artiste), ("songTitle", &audio.song_title), ("genre", &audio.genre)] {
        if let Some(v) = value {
            ck.text(&format!("{path}.{name}"), v);
        }
    }
    check_extra(ck, path, &audio.extra, &["artiste", "songTitle", "genre"]);
}

fn check_data(ck: &mut Checker, path: &str, data: &DataContent) {
    if data.name.is_empty() {
        ck.flag(format!("{path}.name"), "dataContent needs a name");
    }
    ck.text(&format!("{path}.contentKind"), &data.content_kind);
    ck.text(&format!("{path}.name"), &data.name);
    if let Some(uri) = &data.uri {
        ck.text(&format!("{path}.uri"), uri);
    }
    check_extra(ck, path, &data.extra, &["contentKind", "name", "uri"]);
}

fn check_action(ck: &mut Checker, path: &str, action: &Action) {
    match action {
        Action::SetVolume(level) if *level > MAX_VOLUME => {
            ck.flag(format!("{path}.level"), format!("volume {level} exceeds {MAX_VOLUME}"));
        }
        Action::SelectSubchannel(id) if *id > MAX_SUBCHANNEL => {
            ck.flag(format!("{path}.subchannel"), format!("subchannel {id} exceeds {MAX_SUBCHANNEL}"));
        }
        Action::TuneEnsemble(label) => {
            if label.trim().is_empty() {
                ck.flag(format!("{path}.label"), "ensemble label is empty");
            }
            ck.text(&format!("{path}.label"), label);
        }
        Action::RecordStart { subchannel, destination } => {
            if *subchannel > MAX_SUBCHANNEL {
                ck.flag(format!("{path}.subchannel"), format!("subchannel {subchannel} exceeds {MAX_SUBCHANNEL}"));
            }
            ck.file_name(&format!("{path}.destination"), destination);
        }
        _ => {}
    }
}

fn check_behaviour(ck: &mut Checker, path: &str, def: &BehaviourDef) {
    if def.behaviour_id.trim().is_empty() {
        ck.flag(format!("{path}.id"), "behaviour id is empty");
    }
    ck.text(&format!("{path}.id"), &def.behaviour_id);
    if def.trigger.is_empty() {
        ck.flag(format!("{path}.trigger"), "trigger has no clauses");
    }
    for (i, clause) in def.trigger.iter().enumerate() {
        let cpath = format!("{path}.trigger[{i}]");
        ck.tag_name(&format!("{cpath}.field"), &clause.field.field);
        ck.text(&format!("{cpath}.value"), &clause.value);
    }
    if def.reactions.is_empty() {
        ck.flag(format!("{path}.reactions"), "behaviour has no reactions");
    }
    for (i, reaction) in def.reactions.iter().enumerate() {
        let rpath = format!("{path}.reactions[{i}]");
        match reaction {
            Reaction::Device(action) => check_action(ck, &rpath, action),
            Reaction::SaveToDisk(dest) => ck.file_name(&rpath, dest),
            Reaction::Notify(text) => ck.text(&rpath, text),
        }
    }
}
