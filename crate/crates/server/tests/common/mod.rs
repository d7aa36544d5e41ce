#![allow(dead_code)]

use std::collections::BTreeMap;
use std::net::TcpStream;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::Rng;

use dabxml_core::broadcast::{run_broadcast, BroadcastScenario, ScheduledMessage};
use dabxml_core::dabml::{
    parse_envelope, Action, AudioContent, BehaviourDef, ContentInfo, DabmlMessage, DataContent, FieldPath,
    HardwareControl, MatchKind, Payload, QueryKind, Reaction, ReceiverStatus, Recording, TriggerClause,
};
use dabxml_core::mot::ValidityWindow;
use dabxml_server::{InputSource, ServerConfig, ServerHandle, StartOptions};

pub fn abba() -> DabmlMessage {
    DabmlMessage::new(Payload::AudioContent(AudioContent {
        artiste: Some("ABBA".into()),
        song_title: Some("Dancing Queen".into()),
        ..AudioContent::default()
    }))
}

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden").join(name)
}

pub fn scenario(messages: Vec<(u32, u8, DabmlMessage, ValidityWindow)>, frames: u32) -> BroadcastScenario {
    BroadcastScenario {
        ensemble_label: "Campus DAB".into(),
        subchannels: vec![(1, "Campus Radio".into()), (2, "Announcements".into())],
        scheduled_messages: messages
            .into_iter()
            .map(|(at_frame, subchannel, payload, validity)| ScheduledMessage { at_frame, subchannel, payload, validity })
            .collect(),
        frame_count: frames,
        ..BroadcastScenario::default()
    }
}

pub struct TestServer {
    pub handle: ServerHandle,
    pub output: tempfile::TempDir,
}

impl TestServer {
    pub fn start(tweak: impl FnOnce(&mut ServerConfig)) -> Self {
        let output = tempfile::tempdir().unwrap();
        let mut config = ServerConfig::simple("Campus DAB", &[1, 2], 1);
        config.http_addr = "127.0.0.1:0".parse().unwrap();
        config.input = InputSource::Tcp("127.0.0.1:0".parse().unwrap());
        config.output_dir = output.path().to_owned();
        config.pad_capacity = Some(58);
        tweak(&mut config);
        let handle = ServerHandle::start(config, StartOptions::default()).unwrap();
        Self { handle, output }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.handle.http_addr().unwrap())
    }

    pub fn broadcast(&self, scenario: &BroadcastScenario) {
        let mut stream = TcpStream::connect(self.handle.broadcast_addr().unwrap()).unwrap();
        run_broadcast(scenario, &mut stream, None).unwrap();
    }

    pub fn post(&self, msg: &DabmlMessage) -> DabmlMessage {
        self.post_bytes(&dabxml_core::dabml::serialize_envelope(msg)).1
    }

    pub fn post_bytes(&self, body: &[u8]) -> (u16, DabmlMessage) {
        let response = match ureq::post(&self.url("/dabml")).set("Content-Type", "text/xml").send_bytes(body) {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(e) => panic!("{e}"),
        };
        let status = response.status();
        let mut bytes = Vec::new();
        std::io::Read::read_to_end(&mut response.into_reader(), &mut bytes).unwrap();
        (status, parse_envelope(&bytes).unwrap())
    }

    pub fn http_state(&self) -> ReceiverStatus {
        let body = ureq::get(&self.url("/state")).call().unwrap().into_string().unwrap();
        match parse_envelope(body.as_bytes()).unwrap().payload {
            Payload::ReceiverState(s) => s,
            other => panic!("unexpected {other:?}"),
        }
    }

    pub fn http_events(&self) -> Vec<String> {
        ureq::get(&self.url("/events")).call().unwrap().into_string().unwrap().lines().map(str::to_owned).collect()
    }
}

pub fn wait_until(timeout: Duration, mut done: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + timeout;
    while Instant::now() < deadline {
        if done() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    done()
}

pub fn loud_on_abba() -> DabmlMessage {
    DabmlMessage::new(Payload::Behaviours(vec![BehaviourDef {
        behaviour_id: "abba-loud".into(),
        trigger: vec![TriggerClause { field: FieldPath::audio("artiste"), kind: MatchKind::Equals, value: "ABBA".into() }],
        reactions: vec![Reaction::Device(Action::SetVolume(80)), Reaction::SaveToDisk("abba.xml".into())],
    }]))
}

pub fn control(actions: Vec<Action>) -> DabmlMessage {
    DabmlMessage::new(Payload::HardwareControl(HardwareControl { actions }))
}

// random valid messages -----------------------------------------------------

const ALPHABET: &[char] = &['a', 'B', 'z', '0', ' ', '&', '<', '>', '"', '\'', 'é', 'ß', '\n', '\t', '-', ':', '/'];

pub fn text(rng: &mut StdRng) -> String {
    let len = rng.gen_range(0..24);
    (0..len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect()
}

fn nonblank(rng: &mut StdRng) -> String {
    format!("x{}", text(rng))
}

fn tag(rng: &mut StdRng) -> String {
    format!("f{}", rng.gen_range(0..1000))
}

fn file_name(rng: &mut StdRng) -> String {
    format!("obj{}.xml", rng.gen_range(0..1000))
}

fn maybe<T>(rng: &mut StdRng, f: impl FnOnce(&mut StdRng) -> T) -> Option<T> {
    rng.gen_bool(0.6).then(|| f(rng))
}

fn audio(rng: &mut StdRng) -> AudioContent {
    let mut a = AudioContent {
        artiste: maybe(rng, text),
        song_title: maybe(rng, text),
        genre: maybe(rng, text),
        extra: (0..rng.gen_range(0..3)).map(|_| (tag(rng), text(rng))).collect(),
    };
    if a.artiste.is_none() && a.song_title.is_none() && a.genre.is_none() && a.extra.is_empty() {
        a.artiste = Some(text(rng));
    }
    a
}

fn data(rng: &mut StdRng) -> DataContent {
    DataContent {
        content_kind: text(rng),
        name: nonblank(rng),
        uri: maybe(rng, text),
        extra: (0..rng.gen_range(0..3)).map(|_| (tag(rng), text(rng))).collect(),
    }
}

fn action(rng: &mut StdRng) -> Action {
    match rng.gen_range(0..6) {
        0 => Action::SetVolume(rng.gen_range(0..=100)),
        1 => Action::SelectSubchannel(rng.gen_range(0..=63)),
        2 => Action::TuneEnsemble(nonblank(rng)),
        3 => Action::RecordStart { subchannel: rng.gen_range(0..=63), destination: file_name(rng) },
        4 => Action::RecordStop,
        _ => Action::AfcAdjust(rng.gen()),
    }
}

fn reaction(rng: &mut StdRng) -> Reaction {
    match rng.gen_range(0..3) {
        0 => Reaction::Device(action(rng)),
        1 => Reaction::SaveToDisk(file_name(rng)),
        _ => Reaction::Notify(text(rng)),
    }
}

fn behaviour(rng: &mut StdRng, i: usize) -> BehaviourDef {
    BehaviourDef {
        behaviour_id: format!("b{i}"),
        trigger: (0..rng.gen_range(1..4))
            .map(|_| TriggerClause {
                field: if rng.gen() { FieldPath::audio(&tag(rng)) } else { FieldPath::data(&tag(rng)) },
                kind: if rng.gen() { MatchKind::Equals } else { MatchKind::Contains },
                value: text(rng),
            })
            .collect(),
        reactions: (0..rng.gen_range(1..4)).map(|_| reaction(rng)).collect(),
    }
}

pub fn random_message(rng: &mut StdRng) -> DabmlMessage {
    let payload = match rng.gen_range(0..8) {
        0 => Payload::AudioContent(audio(rng)),
        1 => Payload::DataContent(data(rng)),
        2 => Payload::HardwareControl(HardwareControl { actions: (0..rng.gen_range(1..5)).map(|_| action(rng)).collect() }),
        3 => Payload::Behaviours((0..rng.gen_range(1..4)).map(|i| behaviour(rng, i)).collect()),
        4 => Payload::Query([QueryKind::ContentInfo, QueryKind::ReceiverState, QueryKind::Behaviours][rng.gen_range(0..3)]),
        5 => Payload::ContentInfo(ContentInfo { audio: maybe(rng, audio), data: maybe(rng, data) }),
        6 => Payload::ReceiverState(ReceiverStatus {
            ensemble: nonblank(rng),
            subchannel: rng.gen_range(0..=63),
            volume: rng.gen_range(0..=100),
            afc_offset: rng.gen(),
            recording: maybe(rng, |rng| Recording { subchannel: rng.gen_range(0..=63), destination: file_name(rng) }),
            muted: rng.gen(),
        }),
        _ => Payload::Receipt((0..rng.gen_range(0..4)).map(|_| text(rng)).collect()),
    };
    let header_entries: BTreeMap<String, String> = (0..rng.gen_range(0..3)).map(|_| (tag(rng), text(rng))).collect();
    DabmlMessage { header_entries, payload }
}
