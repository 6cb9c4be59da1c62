use std::sync::Arc;

use chrono::{TimeZone, Utc};
use mentor_core::model::*;
use mentor_core::model::Strategy;
use mentor_core::store::*;
use proptest::prelude::*;

mod support;
use support::synth;

fn session_with(contents: Vec<(bool, String)>, closed: bool) -> Session {
    let t0 = Utc.with_ymd_and_hms(2025, 3, 1, 12, 0, 0).unwrap();
    let mut s = Session::new("prop", Condition::Mentor, t0);
    s.bundle_version = Some("1.0.0".into());
    for (i, (mentor, text)) in contents.into_iter().enumerate() {
        let role = if mentor { Role::Mentor } else { Role::Mentee };
        s.turns.push(Turn::new(i, role, text, t0 + chrono::Duration::seconds(i as i64)));
    }
    if closed {
        s.closed = true;
        s.phase.phase = Phase::Closed;
    }
    s.agenda = QuestionAgenda::from_texts(&["Is the colour right?"]);
    s.warnings.push("a warning".into());
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encode_decode_round_trips(
        contents in prop::collection::vec((any::<bool>(), "\\PC{1,40}(\n\\PC{0,20})?"), 0..12),
        closed in any::<bool>(),
    ) {
        let s = session_with(contents, closed);
        let decoded = decode_session(&encode_session(&s)).unwrap();
        prop_assert_eq!(&decoded, &s);
        // re-encoding is byte-stable
        prop_assert_eq!(encode_session(&decoded), encode_session(&s));
    }
}

#[test]
fn synthetic_coded_sessions_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let c = synth::corpus(13, 10);
    for s in &c.sessions {
        store.save_session(s).unwrap();
    }
    for s in &c.sessions {
        assert_eq!(&store.load_session(&s.id).unwrap(), s);
    }
    let ids = store.list_sessions().unwrap();
    assert_eq!(ids.len(), 10);
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn concurrent_saves_of_distinct_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(SessionStore::open(dir.path()).unwrap());
    let c = synth::corpus(17, 32);
    std::thread::scope(|scope| {
        for chunk in c.sessions.chunks(4) {
            let store = store.clone();
            scope.spawn(move || {
                for s in chunk {
                    for _ in 0..3 {
                        store.save_session(s).unwrap();
                    }
                }
            });
        }
    });
    let index = store.index().unwrap();
    assert_eq!(index.len(), 32);
    for s in &c.sessions {
        assert_eq!(index[&s.id].condition, s.condition);
        assert_eq!(&store.load_session(&s.id).unwrap(), s);
    }
}

#[test]
fn truncated_and_corrupt_files_are_reported() {
    let s = session_with(vec![(false, "hi".into()), (true, "hello".into())], false);
    let text = encode_session(&s);
    let lines: Vec<&str> = text.lines().collect();

    let truncated = lines[..lines.len() - 1].join("\n");
    assert!(matches!(decode_session(&truncated), Err(StoreError::CorruptRecord { .. })));

    let mut broken = lines.clone();
    broken[1] = "{not json";
    match decode_session(&broken.join("\n")) {
        Err(StoreError::CorruptRecord { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }

    let newer = text.replacen("\"schema_version\":1", "\"schema_version\":99", 1);
    assert!(matches!(
        decode_session(&newer),
        Err(StoreError::SchemaVersionMismatch { found: 99, supported: 1 })
    ));
}

#[test]
fn missing_and_invalid_ids() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    assert!(matches!(store.load_session("nope"), Err(StoreError::NotFound(_))));
    assert!(matches!(store.load_session("../etc/passwd"), Err(StoreError::InvalidId(_))));
    assert!(!store.exists("nope"));
}

#[test]
fn blobs_are_content_addressed() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::open(dir.path()).unwrap();
    let r1 = store.put_blob(b"png bytes").unwrap();
    let r2 = store.put_blob(b"png bytes").unwrap();
    assert_eq!(r1, r2);
    assert!(r1.starts_with("sha256:"));
    assert_eq!(store.get_blob(&r1).unwrap(), b"png bytes");
    assert!(matches!(store.get_blob("sha256:zz"), Err(StoreError::NotFound(_))));
}

#[test]
fn transcript_styles() {
    let mut s = session_with(vec![(false, "How is my chart?".into()), (true, "[Coaching] What do you see?".into())], false);
    let mut a = Annotation::new(AnnotationSource::ExplicitLabel);
    a.strategies.push(StrategyTag::plain(Strategy::Coaching));
    s.turns[1].annotation = Some(a);
    let plain = export_transcript(&s, TranscriptStyle::Plain);
    let annotated = export_transcript(&s, TranscriptStyle::Annotated);
    assert!(plain.contains("MENTEE: How is my chart?"));
    assert!(!plain.contains('⟨'));
    assert!(annotated.contains("[Coaching] What do you see? ⟨Coaching⟩"));
    assert_eq!(export_transcript(&s, TranscriptStyle::Plain), plain);
}
