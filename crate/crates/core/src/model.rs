//! Domain types shared by every part of the engine: sessions, turns, phase
//! state, the mentorship codebook enums, and structural validation.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("session is closed")]
    SessionClosed,
    #[error("turn index mismatch: expected {expected}, got {got}")]
    IndexMismatch { expected: usize, got: usize },
    #[error("turn content is empty")]
    EmptyContent,
    #[error("unknown {kind} label `{value}`")]
    UnknownLabel { kind: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Mentor,
    Baseline,
}

impl Condition {
    pub const ALL: [Condition; 2] = [Condition::Mentor, Condition::Baseline];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Mentor => "mentor",
            Condition::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mentor" => Ok(Condition::Mentor),
            "baseline" => Ok(Condition::Baseline),
            other => Err(ModelError::UnknownLabel {
                kind: "condition",
                value: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Mentee,
    Mentor,
    System,
}

/// Position in the guided feedback loop. Ordering is the lifecycle order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "await_artifact")]
    AwaitArtifact,
    #[serde(rename = "p1_clarify")]
    P1Clarify,
    #[serde(rename = "p2_diagnose")]
    P2Diagnose,
    #[serde(rename = "p3_reflect")]
    P3Reflect,
    #[serde(rename = "closed")]
    Closed,
}

impl Phase {
    pub const FEEDBACK: [Phase; 3] = [Phase::P1Clarify, Phase::P2Diagnose, Phase::P3Reflect];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::AwaitArtifact => "await_artifact",
            Phase::P1Clarify => "p1_clarify",
            Phase::P2Diagnose => "p2_diagnose",
            Phase::P3Reflect => "p3_reflect",
            Phase::Closed => "closed",
        }
    }

    pub fn next(self) -> Option<Phase> {
        match self {
            Phase::AwaitArtifact => Some(Phase::P1Clarify),
            Phase::P1Clarify => Some(Phase::P2Diagnose),
            Phase::P2Diagnose => Some(Phase::P3Reflect),
            Phase::P3Reflect => Some(Phase::Closed),
            Phase::Closed => None,
        }
    }

    pub fn is_feedback(self) -> bool {
        Phase::FEEDBACK.contains(&self)
    }

    /// Number of goals in the phase's checklist.
    pub fn goal_count(self) -> usize {
        match self {
            Phase::P1Clarify | Phase::P2Diagnose => 3,
            Phase::P3Reflect => 2,
            Phase::AwaitArtifact | Phase::Closed => 0,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

macro_rules! closed_enum {
    ($(#[$meta:meta])* $name:ident, $kind:literal, [$($variant:ident),+ $(,)?]) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => stringify!($variant)),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = ModelError;

            /// Exact, case-insensitive match. Unknown labels are rejected, never coerced.
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let trimmed = s.trim();
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str().eq_ignore_ascii_case(trimmed))
                    .ok_or_else(|| ModelError::UnknownLabel {
                        kind: $kind,
                        value: trimmed.to_string(),
                    })
            }
        }
    };
}

closed_enum!(
    /// Feedback methods from the mentorship codebook.
    Strategy,
    "strategy",
    [Coaching, Modeling, Scaffolding, Scoping, Bounding, Articulating, Exploring, Reflecting]
);
closed_enum!(ScaffoldKind, "scaffold kind", [Hint, Principle, KnowledgeResource]);
closed_enum!(BehaviorTag, "behavior", [Affirm, Support, Confirm]);
closed_enum!(PrincipleTag, "principle", [Verbalize, Generalize, Exemplify]);
closed_enum!(
    /// Mentee discourse acts, a reduced DAMSL set.
    DiscourseAct,
    "discourse act",
    [StatementInform, StatementOpinion, InfoRequest, Answer, Accept, Other]
);
closed_enum!(
    /// Levels of the nested model for visualization design and validation.
    NestedLevel,
    "nested level",
    [DomainProblem, DataTaskAbstraction, EncodingInteraction, AlgorithmDesign]
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StrategyTag {
    pub value: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaffold_kind: Option<ScaffoldKind>,
}

impl StrategyTag {
    pub fn plain(value: Strategy) -> Self {
        debug_assert!(value != Strategy::Scaffolding);
        StrategyTag {
            value,
            scaffold_kind: None,
        }
    }

    pub fn scaffolding(kind: ScaffoldKind) -> Self {
        StrategyTag {
            value: Strategy::Scaffolding,
            scaffold_kind: Some(kind),
        }
    }

    pub fn is_well_formed(&self) -> bool {
        (self.value == Strategy::Scaffolding) == self.scaffold_kind.is_some()
    }
}

impl fmt::Display for StrategyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.scaffold_kind {
            Some(kind) => write!(f, "{}:{}", self.value, kind),
            None => write!(f, "{}", self.value),
        }
    }
}

impl FromStr for StrategyTag {
    type Err = ModelError;

    /// Parses `Coaching` or `Scaffolding:Hint` forms.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, kind) = match s.split_once(':') {
            Some((h, k)) => (h, Some(k.parse::<ScaffoldKind>()?)),
            None => (s, None),
        };
        let value: Strategy = head.parse()?;
        let tag = StrategyTag {
            value,
            scaffold_kind: kind,
        };
        if tag.is_well_formed() {
            Ok(tag)
        } else {
            Err(ModelError::UnknownLabel {
                kind: "strategy",
                value: s.trim().to_string(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnnotationSource {
    ExplicitLabel,
    LlmJudge,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    #[serde(default)]
    pub strategies: Vec<StrategyTag>,
    #[serde(default)]
    pub behaviors: Vec<BehaviorTag>,
    #[serde(default)]
    pub principles: Vec<PrincipleTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discourse_act: Option<DiscourseAct>,
    #[serde(default)]
    pub feedback_levels: Vec<NestedLevel>,
    pub source: AnnotationSource,
}

impl Annotation {
    pub fn new(source: AnnotationSource) -> Self {
        Annotation {
            strategies: Vec::new(),
            behaviors: Vec::new(),
            principles: Vec::new(),
            discourse_act: None,
            feedback_levels: Vec::new(),
            source,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.strategies.is_empty()
            && self.behaviors.is_empty()
            && self.principles.is_empty()
            && self.discourse_act.is_none()
            && self.feedback_levels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttachmentKind {
    ArtifactImage,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub kind: AttachmentKind,
    pub media_type: String,
    /// `sha256:<hex>` reference into the blob store.
    pub bytes_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    /// Number of turns in the session when the attachment arrived.
    #[serde(default)]
    pub at_turn: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    MultipleStrategies,
    MissingMilestoneOverview,
    MissingStarter,
    MissingCurrentQuestionMarker,
    DisallowedStrategy,
    MissingVisualVerification,
}

/// A mentor response that broke one of the per-phase format rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseViolation {
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub role: Role,
    pub content: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<Attachment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<Annotation>,
    /// Engine-authored text (the greeting), not model output.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub scripted: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<ResponseViolation>,
}

impl Turn {
    pub fn new(index: usize, role: Role, content: impl Into<String>, timestamp: DateTime<Utc>) -> Self {
        Turn {
            index,
            role,
            content: content.into(),
            timestamp,
            attachments: Vec::new(),
            annotation: None,
            scripted: false,
            violations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub goal_id: String,
    pub description: String,
    pub satisfied: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GoalChecklist {
    pub items: Vec<Goal>,
}

impl GoalChecklist {
    /// Fresh, all-unsatisfied checklist. Goal ids are `<phase>.<n>` (1-based).
    pub fn for_phase<S: AsRef<str>>(phase: Phase, descriptions: &[S]) -> Self {
        let items = descriptions
            .iter()
            .enumerate()
            .map(|(i, d)| Goal {
                goal_id: format!("{}.{}", phase.as_str(), i + 1),
                description: d.as_ref().to_string(),
                satisfied: false,
                evidence: None,
            })
            .collect();
        GoalChecklist { items }
    }

    pub fn all_satisfied(&self) -> bool {
        self.items.iter().all(|g| g.satisfied)
    }

    pub fn unmet(&self) -> Vec<String> {
        self.items
            .iter()
            .filter(|g| !g.satisfied)
            .map(|g| g.goal_id.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseState {
    pub phase: Phase,
    pub goals: GoalChecklist,
    /// Index into the agenda's question list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_question: Option<usize>,
    /// Whether the current phase has been announced with its milestone overview.
    #[serde(default)]
    pub introduced: bool,
}

impl PhaseState {
    pub fn new(phase: Phase) -> Self {
        PhaseState {
            phase,
            goals: GoalChecklist::default(),
            active_question: None,
            introduced: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuestionStatus {
    Pending,
    Active,
    Resolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopedQuestion {
    pub id: u32,
    pub text: String,
    pub status: QuestionStatus,
    /// Turn count when the question became active.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activated_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QuestionAgenda {
    pub questions: Vec<ScopedQuestion>,
    pub confirmed: bool,
}

impl QuestionAgenda {
    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Self {
        QuestionAgenda {
            questions: texts
                .iter()
                .enumerate()
                .map(|(i, t)| ScopedQuestion {
                    id: i as u32 + 1,
                    text: t.as_ref().to_string(),
                    status: QuestionStatus::Pending,
                    activated_at: None,
                })
                .collect(),
            confirmed: false,
        }
    }

    pub fn first_pending(&self) -> Option<usize> {
        self.questions
            .iter()
            .position(|q| q.status == QuestionStatus::Pending)
    }

    pub fn unresolved_ids(&self) -> Vec<u32> {
        self.questions
            .iter()
            .filter(|q| q.status != QuestionStatus::Resolved)
            .map(|q| q.id)
            .collect()
    }
}

/// One accepted phase change, kept as session history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTransition {
    pub from: Phase,
    pub to: Phase,
    /// Turn count at the moment of the transition.
    pub at_turn: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub condition: Condition,
    pub created_at: DateTime<Utc>,
    /// Version of the prompt bundle driving the session; absent for baseline.
    pub bundle_version: Option<String>,
    pub turns: Vec<Turn>,
    pub phase: PhaseState,
    pub agenda: QuestionAgenda,
    pub attachments: Vec<Attachment>,
    pub closed: bool,
    pub transitions: Vec<PhaseTransition>,
    pub warnings: Vec<String>,
    /// Coding run that last annotated the session.
    pub coding_run: Option<String>,
}

impl Session {
    pub fn new(id: impl Into<String>, condition: Condition, created_at: DateTime<Utc>) -> Self {
        let phase = match condition {
            Condition::Mentor => Phase::AwaitArtifact,
            Condition::Baseline => Phase::P1Clarify,
        };
        Session {
            id: id.into(),
            condition,
            created_at,
            bundle_version: None,
            turns: Vec::new(),
            phase: PhaseState::new(phase),
            agenda: QuestionAgenda::default(),
            attachments: Vec::new(),
            closed: false,
            transitions: Vec::new(),
            warnings: Vec::new(),
            coding_run: None,
        }
    }

    pub fn next_index(&self) -> usize {
        self.turns.len()
    }

    pub fn last_turn(&self) -> Option<&Turn> {
        self.turns.last()
    }

    /// Index of the first mentor turn that is model output rather than scripted text.
    pub fn first_feedback_turn(&self) -> Option<usize> {
        self.turns
            .iter()
            .position(|t| t.role == Role::Mentor && !t.scripted)
    }

    pub fn artifact(&self) -> Option<&Attachment> {
        self.attachments
            .iter()
            .find(|a| a.kind == AttachmentKind::ArtifactImage)
    }
}

/// Appends a turn, enforcing the append-time invariants.
pub fn append_turn(session: &mut Session, turn: Turn) -> Result<(), ModelError> {
    if session.closed {
        return Err(ModelError::SessionClosed);
    }
    let expected = session.next_index();
    if turn.index != expected {
        return Err(ModelError::IndexMismatch {
            expected,
            got: turn.index,
        });
    }
    if matches!(turn.role, Role::Mentee | Role::Mentor) && turn.content.trim().is_empty() {
        return Err(ModelError::EmptyContent);
    }
    session.turns.push(turn);
    Ok(())
}

/// One broken invariant found by [`validate_session`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantViolation {
    pub invariant: &'static str,
    pub location: String,
    pub detail: String,
}

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.invariant, self.location, self.detail)
    }
}

/// Checks every structural invariant of a session. Empty result means valid.
pub fn validate_session(session: &Session) -> Vec<InvariantViolation> {
    let mut out = Vec::new();
    let mut push = |invariant: &'static str, location: String, detail: String| {
        out.push(InvariantViolation {
            invariant,
            location,
            detail,
        })
    };

    for (pos, turn) in session.turns.iter().enumerate() {
        if turn.index != pos {
            push(
                "contiguous_turn_indices",
                format!("turns[{pos}]"),
                format!("index {} at position {pos}", turn.index),
            );
        }
        if matches!(turn.role, Role::Mentee | Role::Mentor) && turn.content.trim().is_empty() {
            push("non_empty_content", format!("turns[{pos}]"), "empty content".into());
        }
        if let Some(ann) = &turn.annotation {
            if ann.discourse_act.is_some() && turn.role != Role::Mentee {
                push(
                    "discourse_act_on_mentee_only",
                    format!("turns[{pos}]"),
                    format!("{:?} turn carries a discourse act", turn.role),
                );
            }
            if !ann.feedback_levels.is_empty() && turn.role != Role::Mentor {
                push(
                    "feedback_levels_on_mentor_only",
                    format!("turns[{pos}]"),
                    format!("{:?} turn carries feedback levels", turn.role),
                );
            }
            for tag in &ann.strategies {
                if !tag.is_well_formed() {
                    push(
                        "scaffold_kind_iff_scaffolding",
                        format!("turns[{pos}]"),
                        format!("malformed tag {tag}"),
                    );
                }
            }
        }
    }

    let first_feedback = session.first_feedback_turn().unwrap_or(usize::MAX);
    let early_artifacts = session
        .attachments
        .iter()
        .filter(|a| a.kind == AttachmentKind::ArtifactImage && a.at_turn <= first_feedback)
        .count();
    if early_artifacts > 1 {
        push(
            "single_artifact_before_feedback",
            "attachments".into(),
            format!("{early_artifacts} artifact images before the first feedback turn"),
        );
    }
    for (i, a) in session.attachments.iter().enumerate() {
        if a.kind == AttachmentKind::ArtifactImage && !a.media_type.starts_with("image/") {
            push(
                "artifact_is_image",
                format!("attachments[{i}]"),
                format!("media type {}", a.media_type),
            );
        }
    }

    if session.closed != (session.phase.phase == Phase::Closed) {
        push(
            "closed_iff_closed_phase",
            "phase".into(),
            format!("closed={} phase={}", session.closed, session.phase.phase),
        );
    }
    if session.condition == Condition::Baseline && session.bundle_version.is_some() {
        push(
            "baseline_without_bundle",
            "bundle_version".into(),
            "baseline session references a mentorship bundle".into(),
        );
    }

    let phase = session.phase.phase;
    if let Some(q) = session.phase.active_question {
        if phase != Phase::P2Diagnose {
            push(
                "active_question_only_in_p2",
                "phase.active_question".into(),
                format!("active question {q} while in {phase}"),
            );
        }
        match session.agenda.questions.get(q) {
            Some(sq) if sq.status == QuestionStatus::Active => {}
            Some(sq) => push(
                "active_question_consistent",
                "phase.active_question".into(),
                format!("question {} has status {:?}", sq.id, sq.status),
            ),
            None => push(
                "active_question_consistent",
                "phase.active_question".into(),
                format!("index {q} out of range"),
            ),
        }
    }
    let active = session
        .agenda
        .questions
        .iter()
        .filter(|q| q.status == QuestionStatus::Active)
        .count();
    if active > 1 {
        push(
            "single_active_question",
            "agenda.questions".into(),
            format!("{active} questions are Active"),
        );
    }
    if session.agenda.confirmed && session.agenda.questions.is_empty() {
        push(
            "confirmed_agenda_non_empty",
            "agenda".into(),
            "agenda confirmed with no questions".into(),
        );
    }

    let goal_ids: BTreeSet<&str> = session
        .phase
        .goals
        .items
        .iter()
        .map(|g| g.goal_id.as_str())
        .collect();
    if goal_ids.len() != session.phase.goals.items.len() {
        push(
            "unique_goal_ids",
            "phase.goals".into(),
            "duplicate goal ids".into(),
        );
    }
    if session.condition == Condition::Mentor && session.phase.goals.items.len() != phase.goal_count()
    {
        push(
            "goal_checklist_size",
            "phase.goals".into(),
            format!(
                "{} goals in {phase}, expected {}",
                session.phase.goals.items.len(),
                phase.goal_count()
            ),
        );
    }

    let mut cursor: Option<Phase> = None;
    for (i, t) in session.transitions.iter().enumerate() {
        if t.to <= t.from {
            push(
                "phase_monotonicity",
                format!("transitions[{i}]"),
                format!("{} -> {}", t.from, t.to),
            );
        }
        if let Some(prev) = cursor {
            if t.from != prev {
                push(
                    "phase_history_chain",
                    format!("transitions[{i}]"),
                    format!("starts at {} but previous ended at {prev}", t.from),
                );
            }
        }
        if t.to == Phase::P2Diagnose
            && (!session.agenda.confirmed || session.agenda.questions.is_empty())
        {
            push(
                "p2_requires_confirmed_agenda",
                format!("transitions[{i}]"),
                "entered P2 without a confirmed, non-empty agenda".into(),
            );
        }
        cursor = Some(t.to);
    }
    if let Some(last) = cursor {
        if last != phase {
            push(
                "phase_history_chain",
                "phase".into(),
                format!("history ends at {last} but state is {phase}"),
            );
        }
    }

    out
}
