//! Thread wiring: the main interpreter thread, the extractor, the hardware
//! thread and the HTTP listener, joined by bounded queues.

use std::collections::{HashMap, VecDeque};
use std::net::{SocketAddr, TcpListener};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{bounded, Receiver, Select, Sender};
use thiserror::Error;

use dabxml_core::behaviour::{BehaviourError, BehaviourStore};
use dabxml_core::dabml::{
    parse_envelope, serialize_envelope, Action, ContentInfo, DabmlMessage, Payload, QueryKind, Reaction,
    ReceiverStatus,
};

use crate::config::{InputSource, ServerConfig};
use crate::events::{describe_payload, timestamp, ServerEvent, TimedEvent};
use crate::extractor::{serve_file, serve_tcp, system_clock, Clock, SubchannelExtractor};
use crate::hardware::{run_hardware, AuditCounts, HardwareCommand, HardwareContext, MutationAudit, SimulatedReceiver};
use crate::http::serve_http;

const EVENT_QUEUE: usize = 256;
const REQUEST_QUEUE: usize = 64;
const COMMAND_QUEUE: usize = 64;
const STARTUP_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("cannot bind {what} on {addr}: {source}")]
    Bind { what: &'static str, addr: SocketAddr, source: std::io::Error },
    #[error("receiver start-up failed: {0}")]
    Startup(String),
    #[error("server has stopped")]
    Stopped,
}

/// Reply to one posted envelope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientReply {
    pub message: DabmlMessage,
    pub bytes: Vec<u8>,
    /// The request could not be parsed at all.
    pub rejected: bool,
}

/// Counters for request/reply and command/result accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServerStats {
    pub requests: u64,
    pub replies: u64,
    pub commands_issued: u64,
    pub results_received: u64,
    pub messages_decoded: u64,
    pub extraction_errors: u64,
    pub objects_saved: u64,
}

pub(crate) enum Request {
    Dabml { body: Vec<u8>, reply: Sender<ClientReply> },
    Events { reply: Sender<Vec<String>> },
    State { reply: Sender<ReceiverStatus> },
    Stats { reply: Sender<ServerStats> },
    Shutdown,
}

pub struct StartOptions {
    pub clock: Clock,
    pub serve_http: bool,
}

impl Default for StartOptions {
    fn default() -> Self {
        Self { clock: system_clock(), serve_http: true }
    }
}

pub struct ServerHandle {
    requests: Sender<Request>,
    http_addr: Option<SocketAddr>,
    broadcast_addr: Option<SocketAddr>,
    stop: Arc<AtomicBool>,
    audit: Arc<MutationAudit>,
    http: Option<Arc<tiny_http::Server>>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn start(config: ServerConfig, options: StartOptions) -> Result<Self, ServerError> {
        config.check()?;
        let (events_tx, events_rx) = bounded::<TimedEvent>(EVENT_QUEUE);
        let (requests_tx, requests_rx) = bounded::<Request>(REQUEST_QUEUE);
        let (commands_tx, commands_rx) = bounded::<HardwareCommand>(COMMAND_QUEUE);
        let stop = Arc::new(AtomicBool::new(false));
        let audit = Arc::new(MutationAudit::default());
        let mut threads = Vec::new();

        let listener = match &config.input {
            InputSource::Tcp(addr) => Some(
                TcpListener::bind(addr).map_err(|source| ServerError::Bind { what: "broadcast input", addr: *addr, source })?,
            ),
            _ => None,
        };
        let broadcast_addr = listener.as_ref().and_then(|l| l.local_addr().ok());
        let http = if options.serve_http {
            let server = tiny_http::Server::http(config.http_addr).map_err(|e| ServerError::Bind {
                what: "HTTP endpoint",
                addr: config.http_addr,
                source: std::io::Error::other(e.to_string()),
            })?;
            Some(Arc::new(server))
        } else {
            None
        };
        let http_addr = http.as_ref().and_then(|s| s.server_addr().to_ip());

        let hardware = HardwareContext {
            receiver: SimulatedReceiver::new(&config.ensembles, config.afc_drift, Arc::clone(&audit)),
            defaults: config.defaults.clone(),
            output_dir: config.output_dir.clone(),
            afc_tick: config.afc_tick(),
        };
        let hw_events = events_tx.clone();
        threads.push(spawn("hardware", move || run_hardware(hardware, commands_rx, hw_events)));

        // the first hardware event is the outcome of the start-up tuning
        let startup = events_rx.recv_timeout(STARTUP_TIMEOUT).map_err(|_| ServerError::Startup("no reply".into()))?;
        let snapshot = match &startup.event {
            ServerEvent::HardwareResult { outcome: Ok(status), .. } => status.clone(),
            ServerEvent::HardwareResult { outcome: Err(e), .. } => return Err(ServerError::Startup(e.clone())),
            other => return Err(ServerError::Startup(format!("unexpected {other}"))),
        };

        let extractor = SubchannelExtractor::new(config.watched_subchannel, config.pad_capacity);
        let (clock, sink, flag) = (options.clock, events_tx.clone(), Arc::clone(&stop));
        match (&config.input, listener) {
            (InputSource::File(path), _) => {
                let path = path.clone();
                threads.push(spawn("extractor", move || serve_file(&path, extractor, clock, sink, flag)));
            }
            (InputSource::Tcp(_), Some(listener)) => {
                threads.push(spawn("extractor", move || serve_tcp(listener, extractor, clock, sink, flag)));
            }
            _ => {}
        }

        let mut main = MainThread::new(&config, snapshot, commands_tx, events_tx);
        main.log_event(&startup);
        threads.push(spawn("main", move || main.run(events_rx, requests_rx)));

        if let Some(server) = &http {
            let (server, requests) = (Arc::clone(server), requests_tx.clone());
            threads.push(spawn("http", move || serve_http(&server, &requests)));
        }
        log::info!(
            "receiver server up: http {:?}, input {}, watching subchannel {}",
            http_addr,
            config.input,
            config.watched_subchannel
        );
        Ok(Self { requests: requests_tx, http_addr, broadcast_addr, stop, audit, http, threads })
    }

    pub fn http_addr(&self) -> Option<SocketAddr> {
        self.http_addr
    }

    /// Where a TCP broadcast source should connect.
    pub fn broadcast_addr(&self) -> Option<SocketAddr> {
        self.broadcast_addr
    }

    fn ask<T>(&self, build: impl FnOnce(Sender<T>) -> Request) -> Result<T, ServerError> {
        let (tx, rx) = bounded(1);
        self.requests.send(build(tx)).map_err(|_| ServerError::Stopped)?;
        rx.recv().map_err(|_| ServerError::Stopped)
    }

    /// Posts raw envelope bytes, as the HTTP endpoint does.
    pub fn submit(&self, body: Vec<u8>) -> Result<ClientReply, ServerError> {
        self.ask(|reply| Request::Dabml { body, reply })
    }

    pub fn submit_message(&self, msg: &DabmlMessage) -> Result<DabmlMessage, ServerError> {
        self.submit(serialize_envelope(msg)).map(|r| r.message)
    }

    /// The event log, oldest first.
    pub fn events(&self) -> Result<Vec<String>, ServerError> {
        self.ask(|reply| Request::Events { reply })
    }

    pub fn state(&self) -> Result<ReceiverStatus, ServerError> {
        self.ask(|reply| Request::State { reply })
    }

    pub fn stats(&self) -> Result<ServerStats, ServerError> {
        self.ask(|reply| Request::Stats { reply })
    }

    pub fn audit(&self) -> AuditCounts {
        self.audit.counts()
    }

    /// Blocks until the server stops (only via [`Self::shutdown`] from elsewhere).
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        let _ = self.requests.send(Request::Shutdown);
        if let Some(http) = self.http.take() {
            http.unblock();
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if !self.threads.is_empty() {
            self.stop_threads();
        }
    }
}

fn spawn(name: &str, body: impl FnOnce() + Send + 'static) -> JoinHandle<()> {
    std::thread::Builder::new().name(name.to_owned()).spawn(body).expect("spawn thread")
}

struct PendingReply {
    remaining: usize,
    last_status: Option<ReceiverStatus>,
    errors: Vec<String>,
    reply: Sender<ClientReply>,
}

struct MainThread {
    store: BehaviourStore,
    latest: ContentInfo,
    snapshot: ReceiverStatus,
    log: VecDeque<String>,
    log_len: usize,
    commands: Sender<HardwareCommand>,
    outbox: VecDeque<HardwareCommand>,
    next_id: u64,
    waiting: HashMap<u64, u64>,
    replies: HashMap<u64, PendingReply>,
    stats: ServerStats,
    // keeps the event queue connected after producers finish
    _events: Sender<TimedEvent>,
}

fn reply_to(reply: &Sender<ClientReply>, message: DabmlMessage, rejected: bool) {
    let bytes = serialize_envelope(&message);
    let _ = reply.send(ClientReply { message, bytes, rejected });
}

impl MainThread {
    fn new(config: &ServerConfig, snapshot: ReceiverStatus, commands: Sender<HardwareCommand>, events: Sender<TimedEvent>) -> Self {
        Self {
            store: BehaviourStore::new(),
            latest: ContentInfo::default(),
            snapshot,
            log: VecDeque::new(),
            log_len: config.event_log_len,
            commands,
            outbox: VecDeque::new(),
            next_id: 1,
            waiting: HashMap::new(),
            replies: HashMap::new(),
            stats: ServerStats::default(),
            _events: events,
        }
    }

    fn run(mut self, events: Receiver<TimedEvent>, requests: Receiver<Request>) {
        loop {
            let mut sel = Select::new();
            let ev = sel.recv(&events);
            let rq = sel.recv(&requests);
            let hw = (!self.outbox.is_empty()).then(|| sel.send(&self.commands));
            let op = sel.select();
            match op.index() {
                i if i == ev => match op.recv(&events) {
                    Ok(event) => self.on_event(event),
                    Err(_) => return,
                },
                i if i == rq => match op.recv(&requests) {
                    Ok(Request::Shutdown) | Err(_) => return,
                    Ok(request) => self.on_request(request),
                },
                i if Some(i) == hw => {
                    let cmd = self.outbox.pop_front().expect("outbox checked");
                    if op.send(&self.commands, cmd).is_err() {
                        return;
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    fn note(&mut self, line: String) {
        log::debug!("{line}");
        if self.log.len() == self.log_len {
            self.log.pop_front();
        }
        self.log.push_back(line);
    }

    fn log_event(&mut self, event: &TimedEvent) {
        self.note(event.to_string());
    }

    fn now_line(&mut self, text: String) {
        self.note(format!("{} {text}", timestamp(&chrono::Utc::now())));
    }

    fn issue(&mut self, build: impl FnOnce(u64) -> HardwareCommand, client: Option<u64>) {
        let id = self.next_id;
        self.next_id += 1;
        if let Some(ticket) = client {
            self.waiting.insert(id, ticket);
        }
        self.stats.commands_issued += 1;
        self.outbox.push_back(build(id));
    }

    /// The one path for device actions, whatever their origin.
    fn forward_actions(&mut self, actions: &[Action], client: Option<u64>) {
        for action in actions {
            let action = action.clone();
            self.issue(|correlation_id| HardwareCommand::Apply { correlation_id, action }, client);
        }
    }

    fn on_event(&mut self, event: TimedEvent) {
        self.log_event(&event);
        match event.event {
            ServerEvent::XmlMessageDecoded { message, body, .. } => {
                self.stats.messages_decoded += 1;
                match &message.payload {
                    Payload::AudioContent(audio) => self.latest.audio = Some(audio.clone()),
                    Payload::DataContent(data) => self.latest.data = Some(data.clone()),
                    Payload::HardwareControl(hc) => return self.forward_actions(&hc.actions, None),
                    other => return self.now_line(format!("ignored {} received over the air", other.tag())),
                }
                for fired in self.store.match_message(&message) {
                    match fired.reaction {
                        Reaction::Device(action) => self.forward_actions(&[action], None),
                        Reaction::SaveToDisk(destination) => {
                            let bytes = Arc::clone(&body);
                            self.issue(|correlation_id| HardwareCommand::Save { correlation_id, destination, bytes }, None)
                        }
                        Reaction::Notify(text) => self.now_line(format!("notify [{}] {text}", fired.behaviour_id)),
                    }
                }
            }
            ServerEvent::HardwareResult { correlation_id, outcome, .. } => {
                self.stats.results_received += 1;
                if let Ok(status) = &outcome {
                    self.snapshot = status.clone();
                }
                if let Some(ticket) = self.waiting.remove(&correlation_id) {
                    self.settle(ticket, outcome);
                }
            }
            ServerEvent::AfcCorrected { status } => self.snapshot = status,
            ServerEvent::ObjectSaved { .. } => self.stats.objects_saved += 1,
            ServerEvent::ExtractionError { .. } => self.stats.extraction_errors += 1,
        }
    }

    fn settle(&mut self, ticket: u64, outcome: Result<ReceiverStatus, String>) {
        let Some(pending) = self.replies.get_mut(&ticket) else { return };
        pending.remaining -= 1;
        match outcome {
            Ok(status) => pending.last_status = Some(status),
            Err(e) => pending.errors.push(e),
        }
        if pending.remaining > 0 {
            return;
        }
        let pending = self.replies.remove(&ticket).expect("present");
        let message = match (pending.errors.is_empty(), pending.last_status) {
            (true, Some(status)) => DabmlMessage::ok(Payload::ReceiverState(status)),
            _ => DabmlMessage::error("HardwareError", pending.errors.join("; ")),
        };
        self.answer(&pending.reply, message, false);
    }

    fn answer(&mut self, reply: &Sender<ClientReply>, message: DabmlMessage, rejected: bool) {
        self.stats.replies += 1;
        let status = message.status().unwrap_or("-").to_owned();
        self.now_line(format!("reply {status} {}", describe_payload(&message.payload)));
        reply_to(reply, message, rejected);
    }

    fn on_request(&mut self, request: Request) {
        match request {
            Request::Dabml { body, reply } => self.on_client(&body, reply),
            Request::Events { reply } => {
                let _ = reply.send(self.log.iter().cloned().collect());
            }
            Request::State { reply } => {
                let _ = reply.send(self.snapshot.clone());
            }
            Request::Stats { reply } => {
                let _ = reply.send(self.stats);
            }
            Request::Shutdown => {}
        }
    }

    fn on_client(&mut self, body: &[u8], reply: Sender<ClientReply>) {
        self.stats.requests += 1;
        let msg = match parse_envelope(body) {
            Ok(msg) => msg,
            Err(e) => {
                self.now_line(format!("client request rejected: {e}"));
                return self.answer(&reply, DabmlMessage::error(e.kind(), e.to_string()), true);
            }
        };
        self.now_line(format!("client {}", describe_payload(&msg.payload)));
        let answer = match msg.payload {
            Payload::HardwareControl(hc) => {
                let ticket = self.next_id;
                self.replies.insert(
                    ticket,
                    PendingReply { remaining: hc.actions.len(), last_status: None, errors: Vec::new(), reply },
                );
                return self.forward_actions(&hc.actions, Some(ticket));
            }
            Payload::Behaviours(defs) => self.add_behaviours(defs),
            Payload::Query(QueryKind::ContentInfo) => DabmlMessage::ok(Payload::ContentInfo(self.latest.clone())),
            Payload::Query(QueryKind::ReceiverState) => DabmlMessage::ok(Payload::ReceiverState(self.snapshot.clone())),
            Payload::Query(QueryKind::Behaviours) => {
                DabmlMessage::ok(Payload::Receipt(self.store.iter().map(|d| d.behaviour_id.clone()).collect()))
            }
            other => DabmlMessage::error("UnsupportedRequest", format!("{} cannot be sent to the server", other.tag())),
        };
        self.answer(&reply, answer, false);
    }

    /// Adds all definitions or none.
    fn add_behaviours(&mut self, defs: Vec<dabxml_core::dabml::BehaviourDef>) -> DabmlMessage {
        let mut added = Vec::new();
        for def in defs {
            match self.store.add_behaviour(def) {
                Ok(ack) => added.push(ack.behaviour_id),
                Err(e) => {
                    for id in &added {
                        let _ = self.store.remove_behaviour(id);
                    }
                    let kind = match e {
                        BehaviourError::DuplicateId(_) => "DuplicateId",
                        BehaviourError::InvalidDefinition(_) => "InvalidDefinition",
                        BehaviourError::NotFound(_) => "NotFound",
                    };
                    return DabmlMessage::error(kind, e.to_string());
                }
            }
        }
        DabmlMessage::ok(Payload::Receipt(added))
    }
}
