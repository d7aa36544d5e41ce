use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::collection::{btree_map, vec};
use proptest::option;
use proptest::prelude::*;

use dabxml_core::behaviour::BehaviourStore;
use dabxml_core::dabml::{
    parse_envelope, serialize_envelope, validate, Action, AudioContent, BehaviourDef, ContentInfo, DabmlError,
    DabmlMessage, DataContent, FieldPath, HardwareControl, MatchKind, Payload, QueryKind, Reaction, ReceiverStatus,
    Recording, TriggerClause,
};
use dabxml_core::frame::{
    decode_dynamic_label, decode_fig_0_13, encode_dynamic_label, encode_fig_0_13_groups, encode_frame, mux_frame,
    FastInfoGroup, FrameReader, PadField, UserAppInfo,
};
use dabxml_core::mot::{
    build_mot_object, parse_object, reassemble, segment, serialize_object, DataGroup, GroupError, MotHeaderCore,
    ValidityState, ValidityWindow, CORE_LEN,
};
use dabxml_core::pad::{PadExtractor, PadPacker};

// ---------------------------------------------------------------------------
// frame model

fn user_app() -> impl Strategy<Value = UserAppInfo> {
    (0u8..=63, 0u16..2048, vec(any::<u8>(), 0..6)).prop_map(|(subchannel_id, user_app_type, app_data)| UserAppInfo {
        subchannel_id,
        user_app_type,
        app_data,
    })
}

proptest! {
    #[test]
    fn fig_0_13_is_a_bijection(entries in vec(user_app(), 0..20)) {
        let figs = encode_fig_0_13_groups(&entries).unwrap();
        let decoded: Vec<UserAppInfo> = figs.iter().flat_map(|f| decode_fig_0_13(f).unwrap()).collect();
        prop_assert_eq!(&decoded, &entries);
        let again = encode_fig_0_13_groups(&decoded).unwrap();
        prop_assert_eq!(again, figs);
    }

    #[test]
    fn dynamic_label_roundtrip(text in "[ -~]{0,128}") {
        let bytes = encode_dynamic_label(&text).unwrap();
        let label = decode_dynamic_label(&bytes).unwrap();
        prop_assert_eq!(label.text(), text.as_str());
    }

    #[test]
    fn frame_container_roundtrip(
        index in any::<u32>(),
        entries in vec(user_app(), 0..8),
        pads in btree_map(0u8..=63, (vec(any::<u8>(), 0..40), vec(any::<u8>(), 0..255)), 0..5),
    ) {
        // announcements may only name subchannels present in the frame
        let ids: Vec<u8> = pads.keys().copied().collect();
        let entries: Vec<UserAppInfo> = if ids.is_empty() {
            vec![]
        } else {
            entries.into_iter().map(|e| UserAppInfo { subchannel_id: ids[e.subchannel_id as usize % ids.len()], ..e }).collect()
        };
        let fic = encode_fig_0_13_groups(&entries).unwrap();
        let pad_chunks = pads.iter().map(|(id, (_, pad))| (*id, PadField::new(pad.clone()))).collect();
        let audio = pads.iter().map(|(id, (audio, _))| (*id, audio.clone())).collect();
        let frame = mux_frame(fic, pad_chunks, audio, index).unwrap();
        let bytes = encode_frame(&frame).unwrap();
        let mut reader = FrameReader::new(bytes.as_slice());
        prop_assert_eq!(reader.read_frame().unwrap(), Some(frame));
        prop_assert_eq!(reader.read_frame().unwrap(), None);
    }
}

#[test]
fn every_user_app_type_survives_the_container() {
    for user_app_type in 0u16..2048 {
        let entry = UserAppInfo { subchannel_id: 5, user_app_type, app_data: vec![] };
        let fic = encode_fig_0_13_groups(std::slice::from_ref(&entry)).unwrap();
        let frame = mux_frame(
            fic,
            BTreeMap::from([(5, PadField::idle(8))]),
            BTreeMap::from([(5, vec![0xAA; 4])]),
            user_app_type.into(),
        )
        .unwrap();
        let bytes = encode_frame(&frame).unwrap();
        let parsed = FrameReader::new(bytes.as_slice()).read_frame().unwrap().unwrap();
        assert_eq!(parsed.user_apps().collect::<Vec<_>>(), vec![entry]);
    }
}

#[test]
fn fig_rejects_oversized_type() {
    let entry = UserAppInfo { subchannel_id: 1, user_app_type: 2048, app_data: vec![] };
    assert!(encode_fig_0_13_groups(&[entry]).is_err());
    assert!(FastInfoGroup::new(8, 0, vec![]).is_err());
}

// ---------------------------------------------------------------------------
// MOT

fn validity() -> impl Strategy<Value = ValidityWindow> {
    (option::of(-1_000_000i64..4_000_000_000), option::of(1i64..100_000)).prop_map(|(start, span)| match (start, span) {
        (Some(s), Some(d)) => ValidityWindow::between(s, s + d),
        (None, Some(d)) => ValidityWindow { start_validity: None, expire_time: Some(d) },
        (start, None) => ValidityWindow { start_validity: start, expire_time: None },
    })
}

fn rank(state: ValidityState) -> u8 {
    match state {
        ValidityState::Pending => 0,
        ValidityState::Active => 1,
        ValidityState::Expired => 2,
    }
}

proptest! {
    #[test]
    fn mot_segment_shuffle_reassemble(
        body in vec(any::<u8>(), 1..3000),
        window in validity(),
        tid in any::<u16>(),
        size in 1usize..600,
        seed in any::<u64>(),
    ) {
        let object = build_mot_object(&body, &window).unwrap();
        let bytes = serialize_object(&object);
        let mut groups = segment(&bytes, tid, size).unwrap();
        shuffle(&mut groups, seed);
        let parsed = parse_object(&reassemble(&groups).unwrap()).unwrap();
        prop_assert_eq!(&parsed.body, &body);
        prop_assert_eq!(parsed.validity().unwrap(), window);
        prop_assert!(parsed.is_xml());

        let core = MotHeaderCore::from_bytes(bytes[..CORE_LEN].try_into().unwrap());
        prop_assert_eq!(core.body_size as usize, body.len());
        prop_assert_eq!(core.header_size as usize + body.len(), bytes.len());
    }

    #[test]
    fn validity_is_monotone(window in validity(), mut times in vec(-2_000_000i64..4_100_000_000, 2..40)) {
        times.sort_unstable();
        let ranks: Vec<u8> = times.iter().map(|&t| rank(window.state_at(t))).collect();
        prop_assert!(ranks.windows(2).all(|w| w[0] <= w[1]), "{:?}", ranks);
    }
}

fn shuffle<T>(items: &mut [T], seed: u64) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    items.shuffle(&mut rand::rngs::StdRng::seed_from_u64(seed));
}

#[test]
fn crc_catches_every_single_bit_flip() {
    let group = DataGroup::new(0x0102, 3, true, b"<a>crc</a>".to_vec());
    let bytes = group.to_bytes();
    for bit in 0..bytes.len() * 8 {
        let mut flipped = bytes.clone();
        flipped[bit / 8] ^= 0x80 >> (bit % 8);
        match DataGroup::from_bytes(&flipped) {
            Err(GroupError::CrcFailure { .. }) => {}
            other => panic!("bit {bit}: {other:?}"),
        }
    }
}

// ---------------------------------------------------------------------------
// PAD transport

fn groups() -> impl Strategy<Value = Vec<DataGroup>> {
    vec((any::<u16>(), 0u16..0x8000, any::<bool>(), vec(any::<u8>(), 0..300)), 0..12)
        .prop_map(|gs| gs.into_iter().map(|(t, s, l, d)| DataGroup::new(t, s, l, d)).collect())
}

fn pad_stream(groups: &[DataGroup], capacity: usize) -> Vec<u8> {
    let mut packer = PadPacker::new(capacity).unwrap();
    for g in groups {
        packer.enqueue_group(g).unwrap();
    }
    let mut stream = Vec::new();
    while !packer.is_idle() {
        let pad = packer.pack_next_pad();
        assert_eq!(pad.len(), capacity);
        stream.extend(pad.into_bytes());
    }
    stream.extend(packer.pack_next_pad().into_bytes());
    stream
}

fn chunked<T: std::fmt::Debug + PartialEq>(
    stream: &[u8],
    cuts: &[usize],
    mut feed: impl FnMut(&[u8]) -> Vec<T>,
) -> Vec<T> {
    let mut points: Vec<usize> = cuts.iter().map(|c| c % (stream.len() + 1)).collect();
    points.push(0);
    points.push(stream.len());
    points.sort_unstable();
    points.windows(2).flat_map(|w| feed(&stream[w[0]..w[1]])).collect()
}

proptest! {
    #[test]
    fn pad_roundtrip(gs in groups(), capacity in 4usize..=255) {
        let stream = pad_stream(&gs, capacity);
        let mut extractor = PadExtractor::new();
        let out: Vec<DataGroup> = stream
            .chunks(capacity)
            .flat_map(|c| extractor.extract_from_pad(&PadField::new(c.to_vec())))
            .map(Result::unwrap)
            .collect();
        prop_assert_eq!(out, gs);
        prop_assert_eq!(extractor.carried(), 0);
    }

    #[test]
    fn extraction_ignores_chunk_boundaries(
        gs in groups(),
        capacity in 4usize..=255,
        cuts in vec(any::<usize>(), 0..30),
        damage in vec((any::<usize>(), any::<u8>()), 0..4),
    ) {
        let mut stream = pad_stream(&gs, capacity);
        for (at, byte) in damage {
            if !stream.is_empty() {
                let len = stream.len();
                stream[at % len] = byte;
            }
        }
        let whole = PadExtractor::new().feed(&stream);
        let mut extractor = PadExtractor::new();
        let pieces = chunked(&stream, &cuts, |c| extractor.feed(c));
        prop_assert_eq!(pieces, whole);
    }
}

// ---------------------------------------------------------------------------
// DABml

fn text() -> impl Strategy<Value = String> {
    "[ -~éüß\t\n]{0,16}"
}

fn word() -> impl Strategy<Value = String> {
    "[A-Za-z][A-Za-z0-9 '&<>\"]{0,12}"
}

fn tag() -> impl Strategy<Value = String> {
    "[A-Za-z_][A-Za-z0-9_.-]{0,8}".prop_filter("xml-prefixed", |s| !s.to_ascii_lowercase().starts_with("xml"))
}

fn file_name() -> impl Strategy<Value = String> {
    "[a-z0-9_]{1,10}\\.(xml|mp2|html)"
}

fn extras(reserved: &'static [&'static str]) -> impl Strategy<Value = BTreeMap<String, String>> {
    btree_map(tag().prop_filter("reserved", move |t| !reserved.contains(&t.as_str())), text(), 0..3)
}

fn audio() -> impl Strategy<Value = AudioContent> {
    (option::of(text()), option::of(text()), option::of(text()), extras(&["artiste", "songTitle", "genre"]))
        .prop_map(|(artiste, song_title, genre, extra)| AudioContent { artiste, song_title, genre, extra })
        .prop_filter("empty audio", |a| a.artiste.is_some() || a.song_title.is_some() || a.genre.is_some() || !a.extra.is_empty())
}

fn data() -> impl Strategy<Value = DataContent> {
    (text(), word(), option::of(text()), extras(&["contentKind", "name", "uri"]))
        .prop_map(|(content_kind, name, uri, extra)| DataContent { content_kind, name, uri, extra })
}

fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        (0u32..=100).prop_map(Action::SetVolume),
        (0u32..=63).prop_map(Action::SelectSubchannel),
        word().prop_map(Action::TuneEnsemble),
        (0u32..=63, file_name()).prop_map(|(subchannel, destination)| Action::RecordStart { subchannel, destination }),
        Just(Action::RecordStop),
        any::<i32>().prop_map(Action::AfcAdjust),
    ]
}

fn clause() -> impl Strategy<Value = TriggerClause> {
    (any::<bool>(), tag(), any::<bool>(), text()).prop_map(|(audio, field, equals, value)| TriggerClause {
        field: if audio { FieldPath::audio(&field) } else { FieldPath::data(&field) },
        kind: if equals { MatchKind::Equals } else { MatchKind::Contains },
        value,
    })
}

fn reaction() -> impl Strategy<Value = Reaction> {
    prop_oneof![action().prop_map(Reaction::Device), file_name().prop_map(Reaction::SaveToDisk), text().prop_map(Reaction::Notify)]
}

fn behaviours() -> impl Strategy<Value = Vec<BehaviourDef>> {
    vec((vec(clause(), 1..4), vec(reaction(), 1..4)), 1..4).prop_map(|defs| {
        defs.into_iter()
            .enumerate()
            .map(|(i, (trigger, reactions))| BehaviourDef { behaviour_id: format!("b{i}"), trigger, reactions })
            .collect()
    })
}

fn status() -> impl Strategy<Value = ReceiverStatus> {
    (word(), 0u32..=63, 0u32..=100, any::<i32>(), option::of((0u32..=63, file_name())), any::<bool>()).prop_map(
        |(ensemble, subchannel, volume, afc_offset, recording, muted)| ReceiverStatus {
            ensemble,
            subchannel,
            volume,
            afc_offset,
            recording: recording.map(|(subchannel, destination)| Recording { subchannel, destination }),
            muted,
        },
    )
}

fn payload() -> impl Strategy<Value = Payload> {
    prop_oneof![
        audio().prop_map(Payload::AudioContent),
        data().prop_map(Payload::DataContent),
        vec(action(), 1..5).prop_map(|actions| Payload::HardwareControl(HardwareControl { actions })),
        behaviours().prop_map(Payload::Behaviours),
        prop_oneof![Just(QueryKind::ContentInfo), Just(QueryKind::ReceiverState), Just(QueryKind::Behaviours)]
            .prop_map(Payload::Query),
        (option::of(audio()), option::of(data())).prop_map(|(audio, data)| Payload::ContentInfo(ContentInfo { audio, data })),
        status().prop_map(Payload::ReceiverState),
        vec(text(), 0..4).prop_map(Payload::Receipt),
    ]
}

fn message() -> impl Strategy<Value = DabmlMessage> {
    (btree_map(tag(), text(), 0..3), payload()).prop_map(|(header_entries, payload)| DabmlMessage { header_entries, payload })
}

fn rename_prefixes(xml: &str, soap: &str, dab: &str) -> String {
    xml.replace("<SOAP-ENV:", &format!("<{soap}:"))
        .replace("</SOAP-ENV:", &format!("</{soap}:"))
        .replace("xmlns:SOAP-ENV=\"", &format!("xmlns:{soap}=\""))
        .replace(" SOAP-ENV:encodingStyle=\"", &format!(" {soap}:encodingStyle=\""))
        .replace("<dabml:", &format!("<{dab}:"))
        .replace("</dabml:", &format!("</{dab}:"))
        .replace("xmlns:dabml=\"", &format!("xmlns:{dab}=\""))
}

fn error_kind(err: &DabmlError) -> &'static str {
    match err {
        DabmlError::MalformedXml(_) => "MalformedXml",
        DabmlError::NotAnEnvelope => "NotAnEnvelope",
        DabmlError::MissingBody => "MissingBody",
        DabmlError::UnknownPayload(_) => "UnknownPayload",
        DabmlError::SchemaViolation { .. } => "SchemaViolation",
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn generated_messages_are_valid(msg in message()) {
        prop_assert_eq!(validate(&msg), vec![]);
    }

    #[test]
    fn envelope_roundtrip(msg in message()) {
        let xml = serialize_envelope(&msg);
        prop_assert_eq!(parse_envelope(&xml).unwrap(), msg);
    }

    #[test]
    fn prefixes_are_immaterial(msg in message(), soap in "[a-w][a-z0-9]{0,5}", dab in "[a-w][a-z0-9]{0,5}") {
        prop_assume!(soap != dab);
        let xml = String::from_utf8(serialize_envelope(&msg)).unwrap();
        let renamed = rename_prefixes(&xml, &soap, &dab);
        prop_assert_eq!(parse_envelope(renamed.as_bytes()).unwrap(), msg);
    }

    #[test]
    fn arbitrary_bytes_classify(bytes in vec(any::<u8>(), 0..400)) {
        if let Err(e) = parse_envelope(&bytes) {
            prop_assert_eq!(e.kind(), error_kind(&e));
        }
    }

    #[test]
    fn damaged_envelopes_classify(msg in message(), hits in vec((any::<usize>(), any::<u8>()), 1..6), cut in any::<usize>()) {
        let mut xml = serialize_envelope(&msg);
        for (at, byte) in hits {
            let len = xml.len();
            xml[at % len] = byte;
        }
        let keep = cut % (xml.len() + 1);
        for input in [&xml[..], &xml[..keep]] {
            match parse_envelope(input) {
                Ok(parsed) => prop_assert_eq!(validate(&parsed), vec![]),
                Err(e) => prop_assert_eq!(e.kind(), error_kind(&e)),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// behaviour matching

const VOCAB: [&str; 6] = ["ABBA", "abba", "Dancing Queen", "Queen", "jazz", "Maths"];

fn vocab() -> impl Strategy<Value = String> {
    proptest::sample::select(&VOCAB[..]).prop_map(str::to_owned)
}

fn vocab_clause() -> impl Strategy<Value = TriggerClause> {
    (proptest::sample::select(&["artiste", "songTitle", "genre"][..]), any::<bool>(), vocab()).prop_map(
        |(field, equals, value)| TriggerClause {
            field: FieldPath::audio(field),
            kind: if equals { MatchKind::Equals } else { MatchKind::Contains },
            value,
        },
    )
}

fn vocab_message() -> impl Strategy<Value = Arc<DabmlMessage>> {
    (option::of(vocab()), option::of(vocab()), option::of(vocab()))
        .prop_filter("empty", |(a, s, g)| a.is_some() || s.is_some() || g.is_some())
        .prop_map(|(artiste, song_title, genre)| {
            Arc::new(DabmlMessage::new(Payload::AudioContent(AudioContent {
                artiste,
                song_title,
                genre,
                extra: BTreeMap::new(),
            })))
        })
}

fn fires(trigger: Vec<TriggerClause>, msg: &Arc<DabmlMessage>) -> bool {
    let mut store = BehaviourStore::new();
    store.add_behaviour(BehaviourDef { behaviour_id: "x".into(), trigger, reactions: vec![Reaction::Notify("n".into())] }).unwrap();
    !store.match_message(msg).is_empty()
}

proptest! {
    #[test]
    fn extra_clause_never_widens(trigger in vec(vocab_clause(), 1..4), extra in vocab_clause(), msg in vocab_message()) {
        let mut narrowed = trigger.clone();
        narrowed.push(extra);
        prop_assert!(!fires(narrowed, &msg) || fires(trigger, &msg));
    }

    #[test]
    fn matching_is_pure(defs in vec((vec(vocab_clause(), 1..3), vec(reaction(), 1..3)), 0..6), msg in vocab_message()) {
        let mut store = BehaviourStore::new();
        for (i, (trigger, reactions)) in defs.into_iter().enumerate() {
            store.add_behaviour(BehaviourDef { behaviour_id: format!("b{i}"), trigger, reactions }).unwrap();
        }
        let before: Vec<BehaviourDef> = store.iter().cloned().collect();
        let first = store.match_message(&msg);
        let second = store.match_message(&msg);
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(store.iter().cloned().collect::<Vec<_>>(), before);
        for fired in &first {
            prop_assert!(store.get(&fired.behaviour_id).is_some());
        }
    }
}
