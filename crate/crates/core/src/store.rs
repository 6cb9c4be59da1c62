//! On-disk persistence: one JSON Lines file per session, a session index,
//! content-addressed attachment blobs and coding-run records.
//!
//! ```text
//! <root>/index.json
//! <root>/sessions/<id>.jsonl
//! <root>/fixtures/<digest>.json
//! <root>/blobs/<sha256>
//! <root>/runs/<run-id>.json
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::annotator::CodingRun;
use crate::model::{
    Attachment, Condition, PhaseState, PhaseTransition, QuestionAgenda, Role, Session, Turn,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("corrupt record at line {line}: {detail}")]
    CorruptRecord { line: usize, detail: String },
    #[error("schema version {found} is newer than supported version {supported}")]
    SchemaVersionMismatch { found: u32, supported: u32 },
    #[error("invalid session id `{0}`")]
    InvalidId(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub path: String,
    pub condition: Condition,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    id: String,
    condition: Condition,
    created_at: DateTime<Utc>,
    bundle_version: Option<String>,
    schema_version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct StateTrailer {
    phase: PhaseState,
    agenda: QuestionAgenda,
    #[serde(default)]
    attachments: Vec<Attachment>,
    closed: bool,
    #[serde(default)]
    warnings: Vec<String>,
    #[serde(default)]
    coding_run: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Header(Header),
    Turn(Turn),
    Transition(PhaseTransition),
    State(StateTrailer),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranscriptStyle {
    Plain,
    Annotated,
}

impl std::str::FromStr for TranscriptStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "plain" => Ok(TranscriptStyle::Plain),
            "annotated" => Ok(TranscriptStyle::Annotated),
            other => Err(format!("unknown transcript style `{other}` (plain|annotated)")),
        }
    }
}

/// A store rooted at one directory. Cheap to share behind an `Arc`.
#[derive(Debug)]
pub struct SessionStore {
    root: PathBuf,
    index_lock: Mutex<()>,
}

impl SessionStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["sessions", "fixtures", "blobs", "runs"] {
            let dir = root.join(sub);
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(SessionStore {
            root,
            index_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn fixtures_dir(&self) -> PathBuf {
        self.root.join("fixtures")
    }

    pub fn blobs_dir(&self) -> PathBuf {
        self.root.join("blobs")
    }

    fn session_path(&self, id: &str) -> Result<PathBuf, StoreError> {
        if id.is_empty()
            || !id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            || id.starts_with('.')
        {
            return Err(StoreError::InvalidId(id.to_string()));
        }
        Ok(self.root.join("sessions").join(format!("{id}.jsonl")))
    }

    /// Writes the session atomically and records it in the index.
    pub fn save_session(&self, session: &Session) -> Result<(), StoreError> {
        let path = self.session_path(&session.id)?;
        let body = encode_session(session);
        if std::fs::read_to_string(&path).ok().as_deref() != Some(body.as_str()) {
            write_atomic(&path, body.as_bytes())?;
        }
        self.update_index(|index| {
            index.insert(
                session.id.clone(),
                IndexEntry {
                    path: format!("sessions/{}.jsonl", session.id),
                    condition: session.condition,
                    created_at: session.created_at,
                },
            );
        })
    }

    pub fn load_session(&self, id: &str) -> Result<Session, StoreError> {
        let path = self.session_path(id)?;
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(id.to_string()))
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        decode_session(&text)
    }

    pub fn exists(&self, id: &str) -> bool {
        self.session_path(id).map(|p| p.exists()).unwrap_or(false)
    }

    pub fn index(&self) -> Result<BTreeMap<String, IndexEntry>, StoreError> {
        let path = self.root.join("index.json");
        match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| StoreError::CorruptRecord {
                line: e.line(),
                detail: format!("index.json: {e}"),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(BTreeMap::new()),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    /// Ids of every indexed session, sorted.
    pub fn list_sessions(&self) -> Result<Vec<String>, StoreError> {
        Ok(self.index()?.into_keys().collect())
    }

    fn update_index(&self, f: impl FnOnce(&mut BTreeMap<String, IndexEntry>)) -> Result<(), StoreError> {
        let _guard = self.index_lock.lock().unwrap_or_else(|p| p.into_inner());
        let mut index = self.index()?;
        f(&mut index);
        let body = serde_json::to_vec_pretty(&index).expect("index serializes");
        write_atomic(&self.root.join("index.json"), &body)
    }

    /// Stores attachment bytes and returns their `sha256:<hex>` reference.
    pub fn put_blob(&self, bytes: &[u8]) -> Result<String, StoreError> {
        let hash = hex::encode(Sha256::digest(bytes));
        let path = self.blobs_dir().join(&hash);
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok(format!("sha256:{hash}"))
    }

    pub fn get_blob(&self, reference: &str) -> Result<Vec<u8>, StoreError> {
        let hash = reference.strip_prefix("sha256:").unwrap_or(reference);
        if hash.len() != 64 || !hash.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(StoreError::NotFound(reference.to_string()));
        }
        let path = self.blobs_dir().join(hash);
        std::fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => StoreError::NotFound(reference.to_string()),
            _ => io_err(&path)(e),
        })
    }

    pub fn save_run(&self, run: &CodingRun) -> Result<(), StoreError> {
        let path = self.root.join("runs").join(format!("{}.json", run.id));
        let body = serde_json::to_vec_pretty(run).expect("run serializes");
        write_atomic(&path, &body)
    }

    pub fn load_run(&self, id: &str) -> Result<CodingRun, StoreError> {
        let path = self.root.join("runs").join(format!("{id}.json"));
        let bytes = std::fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => StoreError::NotFound(id.to_string()),
            _ => io_err(&path)(e),
        })?;
        serde_json::from_slice(&bytes).map_err(|e| StoreError::CorruptRecord {
            line: e.line(),
            detail: e.to_string(),
        })
    }
}

fn write_atomic(target: &Path, body: &[u8]) -> Result<(), StoreError> {
    let dir = target.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(body).map_err(io_err(target))?;
    tmp.as_file().sync_all().map_err(io_err(target))?;
    tmp.persist(target).map_err(|e| io_err(target)(e.error))?;
    Ok(())
}

/// Serializes a session to its JSON Lines form.
pub fn encode_session(session: &Session) -> String {
    let mut lines = Vec::with_capacity(session.turns.len() + session.transitions.len() + 2);
    lines.push(Line::Header(Header {
        id: session.id.clone(),
        condition: session.condition,
        created_at: session.created_at,
        bundle_version: session.bundle_version.clone(),
        schema_version: SCHEMA_VERSION,
    }));
    lines.extend(session.turns.iter().cloned().map(Line::Turn));
    lines.extend(session.transitions.iter().copied().map(Line::Transition));
    lines.push(Line::State(StateTrailer {
        phase: session.phase.clone(),
        agenda: session.agenda.clone(),
        attachments: session.attachments.clone(),
        closed: session.closed,
        warnings: session.warnings.clone(),
        coding_run: session.coding_run.clone(),
    }));
    let mut out = String::new();
    for line in &lines {
        out.push_str(&serde_json::to_string(line).expect("session lines serialize"));
        out.push('\n');
    }
    out
}

/// Parses the JSON Lines form. Line numbers in errors are 1-based.
pub fn decode_session(text: &str) -> Result<Session, StoreError> {
    let mut session: Option<Session> = None;
    let mut saw_state = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let corrupt = |detail: String| StoreError::CorruptRecord { line: line_no, detail };
        let line: Line = serde_json::from_str(raw).map_err(|e| corrupt(e.to_string()))?;
        match (line, session.as_mut()) {
            (Line::Header(h), None) => {
                if h.schema_version > SCHEMA_VERSION {
                    return Err(StoreError::SchemaVersionMismatch {
                        found: h.schema_version,
                        supported: SCHEMA_VERSION,
                    });
                }
                let mut s = Session::new(h.id, h.condition, h.created_at);
                s.bundle_version = h.bundle_version;
                session = Some(s);
            }
            (Line::Header(_), Some(_)) => return Err(corrupt("duplicate header".into())),
            (_, None) => return Err(corrupt("record before header".into())),
            (Line::Turn(t), Some(s)) => {
                if t.index != s.turns.len() {
                    return Err(corrupt(format!("turn index {} out of order", t.index)));
                }
                s.turns.push(t);
            }
            (Line::Transition(t), Some(s)) => s.transitions.push(t),
            (Line::State(st), Some(s)) => {
                s.phase = st.phase;
                s.agenda = st.agenda;
                s.attachments = st.attachments;
                s.closed = st.closed;
                s.warnings = st.warnings;
                s.coding_run = st.coding_run;
                saw_state = true;
            }
        }
    }
    let lines = text.lines().count();
    let session = session.ok_or(StoreError::CorruptRecord {
        line: 1,
        detail: "missing header".into(),
    })?;
    if !saw_state {
        return Err(StoreError::CorruptRecord {
            line: lines + 1,
            detail: "missing state record (truncated file)".into(),
        });
    }
    Ok(session)
}

/// Renders a readable transcript. Annotated style appends codebook tags as
/// `⟨Tag⟩` suffixes.
pub fn export_transcript(session: &Session, style: TranscriptStyle) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Session {} ({})", session.id, session.condition);
    for turn in &session.turns {
        let who = match turn.role {
            Role::Mentee => "MENTEE",
            Role::Mentor => "MENTOR",
            Role::System => "SYSTEM",
        };
        out.push('\n');
        let _ = write!(out, "{who}: {}", turn.content.trim_end());
        if style == TranscriptStyle::Annotated {
            if let Some(a) = &turn.annotation {
                let mut tags: Vec<String> = Vec::new();
                tags.extend(a.strategies.iter().map(|t| t.to_string()));
                tags.extend(a.behaviors.iter().map(|t| t.to_string()));
                tags.extend(a.principles.iter().map(|t| t.to_string()));
                tags.extend(a.discourse_act.iter().map(|t| t.to_string()));
                tags.extend(a.feedback_levels.iter().map(|t| t.to_string()));
                for tag in tags {
                    let _ = write!(out, " ⟨{tag}⟩");
                }
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{append_turn, Annotation, AnnotationSource, Strategy, StrategyTag};
    use chrono::TimeZone;

    fn ts() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2025, 3, 1, 12, 0, 0).unwrap()
    }

    fn sample() -> Session {
        let mut s = Session::new("s-1", Condition::Baseline, ts());
        append_turn(&mut s, Turn::new(0, Role::Mentee, "How is my chart?", ts())).unwrap();
        let mut reply = Turn::new(1, Role::Mentor, "[Coaching] What is it for?", ts());
        let mut a = Annotation::new(AnnotationSource::ExplicitLabel);
        a.strategies.push(StrategyTag::plain(Strategy::Coaching));
        reply.annotation = Some(a);
        append_turn(&mut s, reply).unwrap();
        s
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path()).unwrap();
        let s = sample();
        store.save_session(&s).unwrap();
        assert_eq!(store.load_session("s-1").unwrap(), s);
        assert_eq!(store.list_sessions().unwrap(), vec!["s-1".to_string()]);
    }

    #[test]
    fn unknown_id_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path()).unwrap();
        assert!(matches!(store.load_session("nope"), Err(StoreError::NotFound(_))));
        assert!(matches!(store.load_session("../etc"), Err(StoreError::InvalidId(_))));
    }

    #[test]
    fn truncated_file_reports_line() {
        let text = encode_session(&sample());
        let mut lines: Vec<&str> = text.lines().collect();
        let last = lines.len() - 1;
        let cut = &lines[1][..lines[1].len() / 2];
        lines[1] = cut;
        lines.truncate(last);
        let err = decode_session(&lines.join("\n")).unwrap_err();
        assert!(matches!(err, StoreError::CorruptRecord { line: 2, .. }), "{err:?}");

        let dropped_state: Vec<&str> = text.lines().take(3).collect();
        let err = decode_session(&dropped_state.join("\n")).unwrap_err();
        assert!(matches!(err, StoreError::CorruptRecord { .. }));
    }

    #[test]
    fn newer_schema_rejected() {
        let text = encode_session(&sample()).replacen("\"schema_version\":1", "\"schema_version\":99", 1);
        assert!(matches!(
            decode_session(&text),
            Err(StoreError::SchemaVersionMismatch { found: 99, .. })
        ));
    }

    #[test]
    fn transcripts() {
        let s = sample();
        let plain = export_transcript(&s, TranscriptStyle::Plain);
        assert_eq!(
            plain,
            "# Session s-1 (baseline)\n\nMENTEE: How is my chart?\n\nMENTOR: [Coaching] What is it for?\n"
        );
        let annotated = export_transcript(&s, TranscriptStyle::Annotated);
        assert!(annotated.contains("What is it for? ⟨Coaching⟩"));
        let empty = Session::new("e", Condition::Mentor, ts());
        assert_eq!(export_transcript(&empty, TranscriptStyle::Plain), "# Session e (mentor)\n");
    }

    #[test]
    fn blobs_are_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path()).unwrap();
        let r = store.put_blob(b"\x89PNG....").unwrap();
        assert!(r.starts_with("sha256:"));
        assert_eq!(store.put_blob(b"\x89PNG....").unwrap(), r);
        assert_eq!(store.get_blob(&r).unwrap(), b"\x89PNG....");
    }
}
