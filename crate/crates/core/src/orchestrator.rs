//! The guided feedback loop: phase gating, strategy constraints, graduated
//! sequencing within a question, and mentor turn production.

use std::sync::Arc;

use chrono::Duration;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError};
use crate::labels;
use crate::model::{
    append_turn, Attachment, AttachmentKind, Condition, GoalChecklist, ModelError, Phase, PhaseState,
    PhaseTransition, QuestionAgenda, QuestionStatus, ResponseViolation, Role, Session, Strategy,
    StrategyTag, Turn, ViolationKind,
};
use crate::prompt::{
    assemble_system_prompt, render_milestone_overview, render_starter, PromptBundle, CURRENT_QUESTION_PREFIX,
    MILESTONE_HEADER,
};

/// Phrase the first P1 reply must contain.
pub const VISUAL_VERIFICATION_ANCHOR: &str = "What I see from the visualization";

/// Graduated order within one P2 question.
pub const GRADUATED_SEQUENCE: [Strategy; 3] = [Strategy::Coaching, Strategy::Scaffolding, Strategy::Modeling];

const AFFIRMATIVE: &[&str] = &[
    "yes", "yeah", "yep", "yup", "correct", "right", "exactly", "sure", "ok", "okay", "perfect",
    "absolutely", "sounds good", "looks good", "that's it", "that is it", "that matches", "accurate",
];

const NEGATIVE: &[&str] = &["no", "not", "nope", "wrong", "incorrect", "actually", "missing"];

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("operation not allowed in phase {actual}")]
    WrongPhase { actual: Phase },
    #[error("attachment is not an image ({0})")]
    NotAnImage(String),
    #[error("session is closed")]
    SessionClosed,
    #[error("an artifact image must be uploaded first")]
    AwaitingArtifact,
    #[error("no active question")]
    NoActiveQuestion,
    #[error("phase goals unmet: {0:?}")]
    GoalsUnmet(Vec<String>),
    #[error("agenda questions unresolved: {0:?}")]
    QuestionsUnresolved(Vec<u32>),
    #[error("question agenda not confirmed by the mentee")]
    AgendaUnconfirmed,
    #[error("no unanswered mentee message")]
    NothingPending,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl OrchestratorError {
    pub fn retryable(&self) -> bool {
        matches!(self, OrchestratorError::Gateway(e) if e.retryable())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationMode {
    /// One corrective regeneration on violation; anything left is stored on the turn.
    Strict,
    /// Violations are stored on the turn without regeneration.
    Lenient,
}

#[derive(Debug, Clone)]
pub struct OrchestratorConfig {
    pub validation: ValidationMode,
    pub temperature: f64,
    pub judge_temperature: f64,
    pub max_tokens: u32,
    pub judge_max_tokens: u32,
    /// Corrective re-asks after a non-conforming judge answer.
    pub judge_retries: u32,
    /// Turns of transcript shown to judges.
    pub judge_tail: usize,
    /// When set, the engine writes the milestone overview and starter itself.
    pub prepend_phase_intro: bool,
    /// Wall-clock budget after which the session is closed.
    pub time_budget: Option<Duration>,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            validation: ValidationMode::Strict,
            temperature: 0.7,
            judge_temperature: 0.0,
            max_tokens: 1200,
            judge_max_tokens: 16,
            judge_retries: 2,
            judge_tail: 12,
            prepend_phase_intro: true,
            time_budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentorReply {
    pub turn: Turn,
    pub detected_strategy: Option<StrategyTag>,
    pub violations: Vec<ResponseViolation>,
    pub state_after: PhaseState,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Verdict {
    Yes(Option<usize>),
    No,
}

pub struct Orchestrator {
    gateway: Gateway,
    bundle: Arc<PromptBundle>,
    config: OrchestratorConfig,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator")
            .field("gateway", &self.gateway)
            .field("bundle_version", &self.bundle.version)
            .field("config", &self.config)
            .finish()
    }
}

impl Orchestrator {
    pub fn new(gateway: Gateway, bundle: Arc<PromptBundle>) -> Self {
        Orchestrator {
            gateway,
            bundle,
            config: OrchestratorConfig::default(),
            clock: Arc::new(SystemClock),
        }
    }

    pub fn with_config(mut self, config: OrchestratorConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn bundle(&self) -> &PromptBundle {
        &self.bundle
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn now(&self) -> chrono::DateTime<chrono::Utc> {
        self.clock.now()
    }

    /// Creates a session. Mentor sessions open with the scripted greeting and
    /// wait for an artifact; baseline sessions start empty.
    pub fn start_session(&self, condition: Condition, id: impl Into<String>) -> Session {
        let mut session = Session::new(id, condition, self.clock.now());
        if condition == Condition::Mentor {
            session.bundle_version = Some(self.bundle.version.clone());
            let mut greeting = Turn::new(0, Role::Mentor, self.bundle.greeting.clone(), self.clock.now());
            greeting.scripted = true;
            session.turns.push(greeting);
        }
        session
    }

    pub fn submit_attachment(&self, session: &mut Session, mut attachment: Attachment) -> Result<(), OrchestratorError> {
        if session.closed {
            return Err(OrchestratorError::SessionClosed);
        }
        if attachment.kind != AttachmentKind::ArtifactImage || !attachment.media_type.starts_with("image/") {
            return Err(OrchestratorError::NotAnImage(attachment.media_type));
        }
        attachment.at_turn = session.turns.len();
        match session.condition {
            Condition::Mentor => {
                if session.phase.phase != Phase::AwaitArtifact {
                    return Err(OrchestratorError::WrongPhase {
                        actual: session.phase.phase,
                    });
                }
                session.attachments.push(attachment);
                self.enter_phase(session, Phase::P1Clarify);
            }
            Condition::Baseline => {
                if session.artifact().is_some() || session.first_feedback_turn().is_some() {
                    return Err(OrchestratorError::WrongPhase {
                        actual: session.phase.phase,
                    });
                }
                session.attachments.push(attachment);
            }
        }
        Ok(())
    }

    /// Appends a mentee turn without answering it (used for session openers).
    pub fn append_mentee(&self, session: &mut Session, content: &str) -> Result<usize, OrchestratorError> {
        if session.closed {
            return Err(OrchestratorError::SessionClosed);
        }
        let index = session.next_index();
        append_turn(session, Turn::new(index, Role::Mentee, content, self.clock.now()))?;
        self.note_confirmation(session, content);
        Ok(index)
    }

    pub fn handle_mentee_message(&self, session: &mut Session, content: &str) -> Result<MentorReply, OrchestratorError> {
        if session.closed {
            return Err(OrchestratorError::SessionClosed);
        }
        if session.condition == Condition::Mentor && session.phase.phase == Phase::AwaitArtifact {
            return Err(OrchestratorError::AwaitingArtifact);
        }
        self.append_mentee(session, content)?;
        self.respond(session)
    }

    /// Answers the last mentee turn if it has no reply yet.
    pub fn retry_pending(&self, session: &mut Session) -> Result<MentorReply, OrchestratorError> {
        if session.closed {
            return Err(OrchestratorError::SessionClosed);
        }
        if session.condition == Condition::Mentor && session.phase.phase == Phase::AwaitArtifact {
            return Err(OrchestratorError::AwaitingArtifact);
        }
        match session.last_turn() {
            Some(t) if t.role == Role::Mentee => self.respond(session),
            _ => Err(OrchestratorError::NothingPending),
        }
    }

    pub fn has_pending(&self, session: &Session) -> bool {
        session.last_turn().is_some_and(|t| t.role == Role::Mentee)
    }

    fn respond(&self, session: &mut Session) -> Result<MentorReply, OrchestratorError> {
        if session.condition == Condition::Baseline {
            return self.respond_baseline(session);
        }

        let mut close_after = false;
        match session.phase.phase {
            Phase::P1Clarify => {
                self.evaluate_phase_goals(session);
                if self.gate_open(session).is_ok() {
                    self.advance_phase(session)?;
                }
            }
            Phase::P2Diagnose => {
                self.evaluate_phase_goals(session);
                self.judge_question_resolved(session);
                if self.gate_open(session).is_ok() {
                    self.advance_phase(session)?;
                }
            }
            Phase::P3Reflect => {
                self.evaluate_phase_goals(session);
                close_after = self.gate_open(session).is_ok();
            }
            Phase::AwaitArtifact | Phase::Closed => {}
        }

        let introducing = !session.phase.introduced;
        let ordered = self.select_allowed_strategies(session);
        let system = assemble_system_prompt(&self.bundle, session, &ordered);
        let mut messages = vec![ChatMessage::system(system)];
        messages.extend(self.history(session));
        let request = self.mentor_request(session, messages.clone(), "mentor");

        let raw = self.gateway.complete(&request)?.content;
        let mut content = self.compose(session, &raw, introducing);
        let mut violations = self.validate_mentor_response(&content, session);

        if !violations.is_empty() && self.config.validation == ValidationMode::Strict {
            let mut retry = messages;
            retry.push(ChatMessage::assistant(raw));
            retry.push(ChatMessage::user(corrective_note(&violations)));
            let request = self.mentor_request(session, retry, "mentor-correction");
            match self.gateway.complete(&request) {
                Ok(resp) => {
                    content = self.compose(session, &resp.content, introducing);
                    violations = self.validate_mentor_response(&content, session);
                }
                Err(e) => session
                    .warnings
                    .push(format!("corrective regeneration failed: {e}")),
            }
        }

        let detected = labels::strategy_tags(&content).into_iter().next();
        if session.phase.phase == Phase::P1Clarify && detected.map(|t| t.value) == Some(Strategy::Scoping) {
            let items = labels::numbered_items(&labels::strip_milestone(&content));
            if !items.is_empty() {
                session.agenda = QuestionAgenda::from_texts(&items);
            }
        }

        let index = session.next_index();
        let mut turn = Turn::new(index, Role::Mentor, content, self.clock.now());
        turn.violations = violations.clone();
        append_turn(session, turn.clone())?;
        session.phase.introduced = true;

        if close_after {
            self.advance_phase(session)?;
        }
        self.enforce_time_budget(session);

        Ok(MentorReply {
            turn,
            detected_strategy: detected,
            violations,
            state_after: session.phase.clone(),
        })
    }

    fn respond_baseline(&self, session: &mut Session) -> Result<MentorReply, OrchestratorError> {
        let request = ChatRequest::new(self.gateway.model_id(), self.history(session))
            .with_temperature(self.config.temperature)
            .with_max_tokens(self.config.max_tokens)
            .tag("session", session.id.clone())
            .tag("condition", "baseline")
            .tag("purpose", "mentor");
        let content = self.gateway.complete(&request)?.content;
        let index = session.next_index();
        let turn = Turn::new(index, Role::Mentor, content, self.clock.now());
        append_turn(session, turn.clone())?;
        self.enforce_time_budget(session);
        Ok(MentorReply {
            turn,
            detected_strategy: None,
            violations: Vec::new(),
            state_after: session.phase.clone(),
        })
    }

    fn mentor_request(&self, session: &Session, messages: Vec<ChatMessage>, purpose: &str) -> ChatRequest {
        let mut req = ChatRequest::new(self.gateway.model_id(), messages)
            .with_temperature(self.config.temperature)
            .with_max_tokens(self.config.max_tokens)
            .tag("session", session.id.clone())
            .tag("condition", session.condition.as_str())
            .tag("phase", session.phase.phase.as_str())
            .tag("purpose", purpose)
            .tag("introduced", session.phase.introduced.to_string());
        if let Some(q) = session.phase.active_question.and_then(|i| session.agenda.questions.get(i)) {
            req = req.tag("question", q.text.clone());
        }
        let ordered = self.select_allowed_strategies(session);
        if let Some(first) = ordered.first() {
            req = req.tag("strategy", first.as_str());
        }
        req
    }

    /// Conversation turns as chat messages; the artifact image rides on the
    /// first mentee message after it was uploaded.
    fn history(&self, session: &mut Session) -> Vec<ChatMessage> {
        let artifact = session.artifact().cloned();
        let mut image_placed = false;
        let mut omitted = false;
        let mut out = Vec::new();
        for t in &session.turns {
            let mut msg = match t.role {
                Role::Mentee => ChatMessage::user(t.content.clone()),
                Role::Mentor => ChatMessage::assistant(t.content.clone()),
                Role::System => continue,
            };
            if let (Some(a), Role::Mentee, false) = (&artifact, t.role, image_placed) {
                if t.index >= a.at_turn {
                    image_placed = true;
                    if self.gateway.supports_vision() {
                        msg.image_refs.push(a.bytes_ref.clone());
                    } else {
                        let caption = a.caption.as_deref().unwrap_or("design artifact");
                        msg.content = format!("{}\n\n[image omitted: {caption}]", msg.content);
                        omitted = true;
                    }
                }
            }
            out.push(msg);
        }
        let note = "model lacks vision support; artifact image replaced by its caption";
        if omitted && !session.warnings.iter().any(|w| w == note) {
            session.warnings.push(note.to_string());
        }
        out
    }

    /// Prepends the milestone overview and starter when a phase is first introduced.
    fn compose(&self, session: &Session, raw: &str, introducing: bool) -> String {
        let raw = raw.trim();
        if !introducing || !self.config.prepend_phase_intro || !session.phase.phase.is_feedback() {
            return raw.to_string();
        }
        let Ok(overview) = render_milestone_overview(&self.bundle, &session.phase) else {
            return raw.to_string();
        };
        let starter = render_starter(session.phase.phase, &self.bundle).unwrap_or_default();
        let body = labels::strip_milestone(raw);
        let body = body.trim();
        let body = body.strip_prefix(starter.as_str()).unwrap_or(body).trim();
        format!("{overview}\n\n{starter}\n\n{body}")
    }

    /// Checks a mentor reply against the current phase's format rules.
    pub fn validate_mentor_response(&self, content: &str, session: &Session) -> Vec<ResponseViolation> {
        let mut out = Vec::new();
        if session.condition != Condition::Mentor {
            return out;
        }
        let phase = session.phase.phase;
        let distinct = labels::distinct_labels(content);
        if distinct.len() > 1 {
            out.push(ResponseViolation {
                kind: ViolationKind::MultipleStrategies,
                detail: format!(
                    "labels {}",
                    distinct.iter().map(|s| format!("[{s}]")).collect::<Vec<_>>().join(", ")
                ),
            });
        }
        let allowed = self
            .bundle
            .phase(phase)
            .map(|p| p.allowed_strategies.clone())
            .unwrap_or_default();
        let outside: Vec<String> = distinct
            .iter()
            .filter(|s| !allowed.contains(s))
            .map(|s| format!("[{s}]"))
            .collect();
        if !outside.is_empty() {
            out.push(ResponseViolation {
                kind: ViolationKind::DisallowedStrategy,
                detail: format!("{} not allowed in {phase}", outside.join(", ")),
            });
        } else if phase == Phase::P2Diagnose
            && distinct.contains(&Strategy::Modeling)
            && !self.used_for_active_question(session).contains(&Strategy::Coaching)
            && !distinct.contains(&Strategy::Coaching)
        {
            out.push(ResponseViolation {
                kind: ViolationKind::DisallowedStrategy,
                detail: "[Modeling] before [Coaching] for the current question".into(),
            });
        }

        if phase.is_feedback() && !session.phase.introduced {
            if !content.contains(MILESTONE_HEADER) {
                out.push(ResponseViolation {
                    kind: ViolationKind::MissingMilestoneOverview,
                    detail: format!("first {phase} reply lacks the milestone overview"),
                });
            }
            if let Some(spec) = self.bundle.phase(phase) {
                if !content.contains(spec.starter_format.as_str()) {
                    out.push(ResponseViolation {
                        kind: ViolationKind::MissingStarter,
                        detail: format!("first {phase} reply lacks the starter"),
                    });
                }
            }
        }
        if phase == Phase::P2Diagnose && !content.contains(CURRENT_QUESTION_PREFIX) {
            out.push(ResponseViolation {
                kind: ViolationKind::MissingCurrentQuestionMarker,
                detail: format!("P2 reply lacks \"{CURRENT_QUESTION_PREFIX}\""),
            });
        }
        if phase == Phase::P1Clarify
            && !self.has_p1_feedback(session)
            && !content.contains(VISUAL_VERIFICATION_ANCHOR)
        {
            out.push(ResponseViolation {
                kind: ViolationKind::MissingVisualVerification,
                detail: format!("first P1 feedback lacks \"{VISUAL_VERIFICATION_ANCHOR}\""),
            });
        }
        out
    }

    fn has_p1_feedback(&self, session: &Session) -> bool {
        let entered = session
            .transitions
            .iter()
            .find(|t| t.to == Phase::P1Clarify)
            .map(|t| t.at_turn)
            .unwrap_or(0);
        session
            .turns
            .iter()
            .skip(entered)
            .any(|t| t.role == Role::Mentor && !t.scripted)
    }

    /// Strategies already used by mentor turns since the active question began.
    fn used_for_active_question(&self, session: &Session) -> Vec<Strategy> {
        let Some(q) = session.phase.active_question.and_then(|i| session.agenda.questions.get(i)) else {
            return Vec::new();
        };
        let from = q.activated_at.unwrap_or(0);
        let mut used = Vec::new();
        for t in session.turns.iter().skip(from).filter(|t| t.role == Role::Mentor) {
            for s in labels::distinct_labels(&t.content) {
                if !used.contains(&s) {
                    used.push(s);
                }
            }
        }
        used
    }

    /// The phase's allowed strategies, in P2 ordered along the graduated
    /// sequence with stages already used for the active question removed.
    pub fn select_allowed_strategies(&self, session: &Session) -> Vec<Strategy> {
        let phase = session.phase.phase;
        let allowed = self
            .bundle
            .phase(phase)
            .map(|p| p.allowed_strategies.clone())
            .unwrap_or_default();
        if phase != Phase::P2Diagnose {
            return allowed;
        }
        let used = self.used_for_active_question(session);
        let remaining: Vec<Strategy> = GRADUATED_SEQUENCE
            .iter()
            .copied()
            .filter(|s| allowed.contains(s) && !used.contains(s))
            .collect();
        if remaining.is_empty() {
            GRADUATED_SEQUENCE.iter().copied().filter(|s| allowed.contains(s)).collect()
        } else {
            remaining
        }
    }

    /// Judges each unsatisfied goal of the current phase. Satisfied goals stay satisfied.
    pub fn evaluate_phase_goals(&self, session: &mut Session) -> GoalChecklist {
        if !session.phase.phase.is_feedback() || session.condition != Condition::Mentor {
            return session.phase.goals.clone();
        }
        for i in 0..session.phase.goals.items.len() {
            if session.phase.goals.items[i].satisfied {
                continue;
            }
            let goal = session.phase.goals.items[i].clone();
            let system = format!(
                "You evaluate a design mentoring conversation. Decide whether the goal below has been met.\n\
                 Reply with exactly one line: SATISFIED <turn index of the evidence> or UNSATISFIED.\n\n\
                 Goal: {}",
                goal.description
            );
            let user = format!("Transcript:\n{}", self.transcript_tail(session));
            let base = ChatRequest::new(
                self.gateway.model_id(),
                vec![ChatMessage::system(system), ChatMessage::user(user)],
            )
            .with_temperature(self.config.judge_temperature)
            .with_max_tokens(self.config.judge_max_tokens)
            .tag("session", session.id.clone())
            .tag("purpose", "judge-goal")
            .tag("goal_id", goal.goal_id.clone())
            .tag("phase", session.phase.phase.as_str())
            .tag("agenda_size", session.agenda.questions.len().to_string());
            match self.judge(base, "SATISFIED", "UNSATISFIED") {
                Ok(Verdict::Yes(evidence)) => {
                    let g = &mut session.phase.goals.items[i];
                    g.satisfied = true;
                    g.evidence = evidence;
                }
                Ok(Verdict::No) => {}
                Err(JudgeFailure::Format(answer)) => session.warnings.push(format!(
                    "JudgeFormatError for goal {}: `{}`",
                    goal.goal_id,
                    answer.trim()
                )),
                Err(JudgeFailure::Transport(e)) => session
                    .warnings
                    .push(format!("goal judge unavailable for {}: {e}", goal.goal_id)),
            }
        }
        session.phase.goals.clone()
    }

    fn judge_question_resolved(&self, session: &mut Session) {
        let Some(q) = session.phase.active_question.and_then(|i| session.agenda.questions.get(i)).cloned() else {
            return;
        };
        let system = format!(
            "You evaluate a design mentoring conversation. Decide whether the mentee's current question \
             has been discussed enough and the mentee is ready to move on.\n\
             Reply with exactly one line: RESOLVED <turn index of the evidence> or UNRESOLVED.\n\n\
             Current question: {}",
            q.text
        );
        let user = format!("Transcript:\n{}", self.transcript_tail(session));
        let base = ChatRequest::new(
            self.gateway.model_id(),
            vec![ChatMessage::system(system), ChatMessage::user(user)],
        )
        .with_temperature(self.config.judge_temperature)
        .with_max_tokens(self.config.judge_max_tokens)
        .tag("session", session.id.clone())
        .tag("purpose", "judge-question")
        .tag("question_id", q.id.to_string());
        match self.judge(base, "RESOLVED", "UNRESOLVED") {
            Ok(Verdict::Yes(_)) => {
                let _ = self.next_question(session);
            }
            Ok(Verdict::No) => {}
            Err(JudgeFailure::Format(answer)) => session.warnings.push(format!(
                "JudgeFormatError for question {}: `{}`",
                q.id,
                answer.trim()
            )),
            Err(JudgeFailure::Transport(e)) => session
                .warnings
                .push(format!("question judge unavailable for {}: {e}", q.id)),
        }
    }

    fn judge(&self, base: ChatRequest, yes: &str, no: &str) -> Result<Verdict, JudgeFailure> {
        let mut request = base;
        let mut last = String::new();
        for attempt in 0..=self.config.judge_retries {
            let answer = self
                .gateway
                .complete(&request)
                .map_err(JudgeFailure::Transport)?
                .content;
            if let Some(v) = parse_verdict(&answer, yes, no) {
                return Ok(v);
            }
            last = answer.clone();
            if attempt < self.config.judge_retries {
                request.messages.push(ChatMessage::assistant(answer));
                request.messages.push(ChatMessage::user(format!(
                    "Answer with exactly `{yes} <turn index>` or `{no}` and nothing else."
                )));
            }
        }
        Err(JudgeFailure::Format(last))
    }

    fn transcript_tail(&self, session: &Session) -> String {
        let skip = session.turns.len().saturating_sub(self.config.judge_tail);
        session
            .turns
            .iter()
            .skip(skip)
            .filter(|t| t.role != Role::System)
            .map(|t| {
                let who = if t.role == Role::Mentee { "MENTEE" } else { "MENTOR" };
                format!("[{}] {who}: {}", t.index, t.content)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn note_confirmation(&self, session: &mut Session, content: &str) {
        if session.phase.phase != Phase::P1Clarify
            || session.agenda.questions.is_empty()
            || session.agenda.confirmed
        {
            return;
        }
        // only a reply directly after the mentor's agenda restatement counts
        let prev_is_scoping = session
            .turns
            .iter()
            .rev()
            .nth(1)
            .is_some_and(|t| t.role == Role::Mentor && labels::distinct_labels(&t.content).contains(&Strategy::Scoping));
        if prev_is_scoping && is_affirmative(content) {
            session.agenda.confirmed = true;
        }
    }

    fn gate_open(&self, session: &Session) -> Result<(), OrchestratorError> {
        let state = &session.phase;
        if !state.phase.is_feedback() {
            return Err(OrchestratorError::WrongPhase { actual: state.phase });
        }
        if !state.goals.all_satisfied() {
            return Err(OrchestratorError::GoalsUnmet(state.goals.unmet()));
        }
        match state.phase {
            Phase::P1Clarify if !session.agenda.confirmed || session.agenda.questions.is_empty() => {
                Err(OrchestratorError::AgendaUnconfirmed)
            }
            Phase::P2Diagnose => {
                let open = session.agenda.unresolved_ids();
                if open.is_empty() {
                    Ok(())
                } else {
                    Err(OrchestratorError::QuestionsUnresolved(open))
                }
            }
            _ => Ok(()),
        }
    }

    /// Moves one phase forward once the gate passes.
    pub fn advance_phase(&self, session: &mut Session) -> Result<PhaseState, OrchestratorError> {
        if session.closed {
            return Err(OrchestratorError::SessionClosed);
        }
        self.gate_open(session)?;
        let next = session
            .phase
            .phase
            .next()
            .ok_or(OrchestratorError::WrongPhase {
                actual: session.phase.phase,
            })?;
        self.enter_phase(session, next);
        Ok(session.phase.clone())
    }

    fn enter_phase(&self, session: &mut Session, next: Phase) {
        let from = session.phase.phase;
        session.transitions.push(PhaseTransition {
            from,
            to: next,
            at_turn: session.turns.len(),
        });
        let mut state = PhaseState::new(next);
        if let Some(spec) = self.bundle.phase(next) {
            state.goals = GoalChecklist::for_phase(next, &spec.goal_descriptions);
        }
        session.phase = state;
        if next == Phase::P2Diagnose {
            self.activate(session, session.agenda.first_pending());
        }
        if next == Phase::Closed {
            session.closed = true;
        }
    }

    fn activate(&self, session: &mut Session, idx: Option<usize>) {
        session.phase.active_question = idx;
        if let Some(i) = idx {
            let at = session.turns.len();
            let q = &mut session.agenda.questions[i];
            q.status = QuestionStatus::Active;
            q.activated_at = Some(at);
        }
    }

    /// Resolves the active question and activates the next pending one.
    pub fn next_question(&self, session: &mut Session) -> Result<PhaseState, OrchestratorError> {
        if session.phase.phase != Phase::P2Diagnose {
            return Err(OrchestratorError::WrongPhase {
                actual: session.phase.phase,
            });
        }
        let idx = session.phase.active_question.ok_or(OrchestratorError::NoActiveQuestion)?;
        session.agenda.questions[idx].status = QuestionStatus::Resolved;
        let next = session.agenda.first_pending();
        self.activate(session, next);
        Ok(session.phase.clone())
    }

    /// Ends the session early (time budget or an explicit stop).
    pub fn close_session(&self, session: &mut Session, reason: &str) {
        if session.closed {
            return;
        }
        session.transitions.push(PhaseTransition {
            from: session.phase.phase,
            to: Phase::Closed,
            at_turn: session.turns.len(),
        });
        if let Some(i) = session.phase.active_question {
            session.agenda.questions[i].status = QuestionStatus::Pending;
        }
        session.phase = PhaseState::new(Phase::Closed);
        session.closed = true;
        session.warnings.push(format!("closed early: {reason}"));
    }

    fn enforce_time_budget(&self, session: &mut Session) {
        if let Some(budget) = self.config.time_budget {
            if !session.closed && self.clock.now() - session.created_at >= budget {
                self.close_session(session, "time budget exhausted");
            }
        }
    }
}

enum JudgeFailure {
    Format(String),
    Transport(GatewayError),
}

fn parse_verdict(answer: &str, yes: &str, no: &str) -> Option<Verdict> {
    let line = answer.trim();
    if line.lines().count() != 1 {
        return None;
    }
    let mut parts = line.split_whitespace();
    let head = parts.next()?.trim_end_matches(['.', ':']);
    let rest: Vec<&str> = parts.collect();
    if head.eq_ignore_ascii_case(no) && rest.is_empty() {
        return Some(Verdict::No);
    }
    if head.eq_ignore_ascii_case(yes) {
        return match rest.as_slice() {
            [] => Some(Verdict::Yes(None)),
            [n] => n.trim_matches(['[', ']', '.']).parse().ok().map(|i| Verdict::Yes(Some(i))),
            _ => None,
        };
    }
    None
}

fn corrective_note(violations: &[ResponseViolation]) -> String {
    let mut out = String::from("Your previous response broke these rules:\n");
    for v in violations {
        out.push_str(&format!("- {:?}: {}\n", v.kind, v.detail));
    }
    out.push_str("Rewrite the response so it follows every rule. Use exactly one feedback strategy label.");
    out
}

/// Whether a mentee reply reads as agreement.
pub fn is_affirmative(content: &str) -> bool {
    let lower = content.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|w| !w.is_empty())
        .collect();
    let first_clause: Vec<&str> = words.iter().take(6).copied().collect();
    if first_clause.iter().any(|w| NEGATIVE.contains(w)) {
        return false;
    }
    AFFIRMATIVE.iter().any(|a| {
        if a.contains(' ') {
            lower.contains(a)
        } else {
            words.iter().take(8).any(|w| w == a)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_parsing() {
        assert_eq!(parse_verdict("SATISFIED 4", "SATISFIED", "UNSATISFIED"), Some(Verdict::Yes(Some(4))));
        assert_eq!(parse_verdict("UNSATISFIED", "SATISFIED", "UNSATISFIED"), Some(Verdict::No));
        assert_eq!(parse_verdict("satisfied [7]", "SATISFIED", "UNSATISFIED"), Some(Verdict::Yes(Some(7))));
        assert_eq!(parse_verdict("maybe", "SATISFIED", "UNSATISFIED"), None);
        assert_eq!(parse_verdict("SATISFIED because", "SATISFIED", "UNSATISFIED"), None);
        assert_eq!(parse_verdict("UNSATISFIED 3", "SATISFIED", "UNSATISFIED"), None);
    }

    #[test]
    fn affirmative_lexicon() {
        assert!(is_affirmative("Yes, that's right."));
        assert!(is_affirmative("That matches what I want"));
        assert!(is_affirmative("okay let's go"));
        assert!(!is_affirmative("No, I also want to ask about labels"));
        assert!(!is_affirmative("Not quite, the second one is wrong"));
        assert!(!is_affirmative("I made the chart in Tableau"));
    }
}
