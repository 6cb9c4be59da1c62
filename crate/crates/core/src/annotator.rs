//! Codes transcripts with the mentorship codebook (strategies, behaviors,
//! principles), mentee discourse acts and nested-model feedback levels.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError};
use crate::labels;
use crate::model::{
    Annotation, AnnotationSource, BehaviorTag, DiscourseAct, NestedLevel, PrincipleTag, Role, Session, StrategyTag,
    Turn,
};
use crate::prompt::{PromptBundle, MARK_CURRENT, MARK_DONE, MARK_UPCOMING};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodingMode {
    ExplicitLabel,
    LlmJudge,
    Manual,
}

impl std::str::FromStr for CodingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "explicit" | "explicitlabel" => Ok(CodingMode::ExplicitLabel),
            "llm" | "llmjudge" => Ok(CodingMode::LlmJudge),
            "manual" => Ok(CodingMode::Manual),
            _ => Err(format!("unknown coding mode `{s}` (explicit|llm|manual)")),
        }
    }
}

/// One pass of coding over a set of sessions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodingRun {
    pub id: String,
    pub mode: CodingMode,
    pub session_ids: Vec<String>,
    pub bundle_version: String,
    pub created_at: DateTime<Utc>,
    /// Judge model, recorded for LLM-judge runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_model_id: Option<String>,
    /// Turns left unannotated, as `<session>#<turn>: <reason>`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotateError {
    #[error("turn {index} is a {role:?} turn; expected {expected:?}")]
    WrongRole { index: usize, role: Role, expected: Role },
    #[error("turn {0} has empty content")]
    EmptyContent(usize),
    #[error("judge output did not match the contract after retries: `{0}`")]
    JudgeFormat(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("LLM-judge coding needs a gateway")]
    NoGateway,
}

const AFFIRM_CUES: &[&str] = &[
    "great", "nice", "good job", "well done", "excellent", "i like", "i love", "love the", "good start",
    "thoughtful", "impressive", "good question", "great question", "solid", "strong",
];
const SUPPORT_CUES: &[&str] = &[
    "it's okay", "it is okay", "it's normal", "don't worry", "no worries", "common challenge", "common issue",
    "right track", "understandable", "many designers", "totally fine", "it's fine", "happens to",
    "you're not alone", "good instinct",
];
const CONFIRM_CUES: &[&str] = &[
    "does that", "is that", "did i", "correct", "right?", "make sense", "makes sense", "sound", "match",
    "accurate", "capture", "understand", "clear",
];

/// Mentor-turn body without engine scaffolding: milestone block, phase
/// starters, the visual-verification header and progress marks.
fn feedback_body(text: &str, bundle: &PromptBundle) -> String {
    let mut body = labels::strip_milestone(text);
    for spec in bundle.phases.values() {
        body = body.replace(spec.starter_format.as_str(), "");
        if let Some(v) = &spec.visual_verification {
            body = body.replace(v.as_str(), "");
        }
    }
    for mark in [MARK_DONE, MARK_CURRENT, MARK_UPCOMING] {
        body = body.replace(mark, "");
    }
    body
}

fn strip_labels(text: &str) -> String {
    let mut out = text.to_string();
    for s in crate::model::Strategy::ALL {
        for form in [format!("[{s}]"), format!("[{}]", s.as_str().to_lowercase())] {
            out = out.replace(&form, "");
        }
    }
    out
}

/// Affirm/Support from the opening sentences, Confirm from a closing
/// verification question.
pub fn detect_behaviors(text: &str, bundle: &PromptBundle) -> Vec<BehaviorTag> {
    let body = strip_labels(&feedback_body(text, bundle));
    let sents = labels::sentences(&body);
    let mut out = Vec::new();
    let opening: String = sents.iter().take(2).cloned().collect::<Vec<_>>().join(" ").to_lowercase();
    if AFFIRM_CUES.iter().any(|c| opening.contains(c)) {
        out.push(BehaviorTag::Affirm);
    }
    if SUPPORT_CUES.iter().any(|c| opening.contains(c)) {
        out.push(BehaviorTag::Support);
    }
    if let Some(last) = sents.last() {
        let l = last.to_lowercase();
        if l.ends_with('?') && CONFIRM_CUES.iter().any(|c| l.contains(c)) {
            out.push(BehaviorTag::Confirm);
        }
    }
    out
}

/// Deterministic coding from the labels the mentor writes itself.
pub fn tag_explicit_labels(turn: &Turn, bundle: &PromptBundle) -> Annotation {
    let mut a = Annotation::new(AnnotationSource::ExplicitLabel);
    if turn.role != Role::Mentor {
        return a;
    }
    a.strategies = labels::strategy_tags(&turn.content);
    a.behaviors = detect_behaviors(&turn.content, bundle);
    a.principles = labels::principle_markers(&turn.content, bundle);
    a
}

/// Codes one session in place with explicit labels. Scripted turns are skipped.
pub fn annotate_explicit(session: &mut Session, bundle: &PromptBundle) {
    for turn in session.turns.iter_mut() {
        if turn.role == Role::Mentor && !turn.scripted {
            turn.annotation = Some(tag_explicit_labels(turn, bundle));
        }
    }
}

fn parse_list<T: std::str::FromStr>(line: &str, key: &str) -> Option<Vec<T>> {
    let rest = line.trim().strip_prefix(key)?.trim_start().strip_prefix(':')?.trim();
    if rest.eq_ignore_ascii_case("none") || rest.is_empty() {
        return Some(Vec::new());
    }
    rest.split(',').map(|v| v.trim().parse::<T>().ok()).collect()
}

/// Parses the strategy judge contract:
/// `STRATEGIES: ...`, `BEHAVIORS: ...`, `PRINCIPLES: ...`, one per line.
pub fn parse_strategy_judgement(answer: &str) -> Option<Annotation> {
    let lines: Vec<&str> = answer.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let [s, b, p] = lines.as_slice() else {
        return None;
    };
    let mut a = Annotation::new(AnnotationSource::LlmJudge);
    a.strategies = parse_list::<StrategyTag>(s, "STRATEGIES")?;
    a.behaviors = parse_list::<BehaviorTag>(b, "BEHAVIORS")?;
    a.principles = parse_list::<PrincipleTag>(p, "PRINCIPLES")?;
    dedup(&mut a.strategies);
    dedup(&mut a.behaviors);
    dedup(&mut a.principles);
    Some(a)
}

fn dedup<T: PartialEq + Clone>(v: &mut Vec<T>) {
    let mut out: Vec<T> = Vec::with_capacity(v.len());
    for x in v.drain(..) {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    *v = out;
}

/// Parses `LEVEL | item` lines, or a single `NONE`.
pub fn parse_levels(answer: &str) -> Option<Vec<(String, NestedLevel)>> {
    let lines: Vec<&str> = answer.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if lines.len() == 1 && lines[0].eq_ignore_ascii_case("none") {
        return Some(Vec::new());
    }
    if lines.is_empty() {
        return None;
    }
    lines
        .iter()
        .map(|l| {
            let (level, item) = l.split_once('|')?;
            let item = item.trim();
            if item.is_empty() {
                return None;
            }
            Some((item.to_string(), level.trim().parse::<NestedLevel>().ok()?))
        })
        .collect()
}

fn render_transcript_line(turn: &Turn) -> String {
    let who = if turn.role == Role::Mentee { "MENTEE" } else { "MENTOR" };
    format!("{who}: {}", turn.content)
}

fn catalog_prompt(bundle: &PromptBundle) -> String {
    let mut out = String::from(
        "You code mentor turns from design feedback conversations with a fixed codebook.\n\n# Strategies\n",
    );
    for s in crate::model::Strategy::ALL {
        let e = bundle.strategy(*s);
        out.push_str(&format!("- {}: {}\n  Example: {}\n", s, e.overall_goal, e.example));
        for kind in crate::model::ScaffoldKind::ALL {
            if let Some(sub) = e.sub_kinds.get(kind.as_str()) {
                out.push_str(&format!("  - Scaffolding:{kind}: {}\n", sub.description));
            }
        }
    }
    out.push_str("\n# Behaviors\n");
    for b in BehaviorTag::ALL {
        if let Some(e) = bundle.behaviors.entries.get(b.as_str()) {
            out.push_str(&format!("- {b}: {}\n", e.description));
        }
    }
    out.push_str("\n# Principles\n");
    for p in &bundle.principles.entries {
        out.push_str(&format!("- {}: {}\n", p.tag, p.guidance.join(" ")));
    }
    out.push_str(
        "\nReply with exactly three lines and nothing else:\n\
         STRATEGIES: <comma-separated names, Scaffolding written as Scaffolding:Hint, Scaffolding:Principle or Scaffolding:KnowledgeResource, or NONE>\n\
         BEHAVIORS: <comma-separated names or NONE>\n\
         PRINCIPLES: <comma-separated names or NONE>",
    );
    out
}

const ACT_PROMPT: &str = "You classify one mentee message from a design feedback conversation into exactly one discourse act.\n\
- StatementInform: provides factual context about the design, data or situation.\n\
- StatementOpinion: expresses a view, preference or judgement.\n\
- InfoRequest: asks the mentor for information, clarification or elaboration.\n\
- Answer: responds to a question the mentor just asked.\n\
- Accept: agrees with or accepts the mentor's suggestion or plan.\n\
- Other: anything else (greetings, thanks, off-topic).\n\
Reply with the act name only.";

const LEVEL_PROMPT: &str = "You extract discrete design suggestions from one mentor message and assign each exactly one level of the nested model for visualization design:\n\
- DomainProblem: goal or audience framing.\n\
- DataTaskAbstraction: metric, data or task choices.\n\
- EncodingInteraction: visual encoding or interaction changes.\n\
- AlgorithmDesign: implementation technique.\n\
Reply with one line per suggestion as `LEVEL | suggestion`, or the single word NONE when the message has no suggestions.";

/// LLM-judge coding of individual turns.
pub struct LlmCoder<'a> {
    gateway: &'a Gateway,
    bundle: &'a PromptBundle,
    retries: u32,
}

impl<'a> LlmCoder<'a> {
    pub fn new(gateway: &'a Gateway, bundle: &'a PromptBundle) -> Self {
        LlmCoder {
            gateway,
            bundle,
            retries: 2,
        }
    }

    fn ask<T>(
        &self,
        base: ChatRequest,
        correction: &str,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, AnnotateError> {
        let mut request = base;
        let mut last = String::new();
        for attempt in 0..=self.retries {
            let answer = self.gateway.complete(&request)?.content;
            match parse(&answer) {
                Ok(v) => return Ok(v),
                Err(why) => {
                    last = answer.clone();
                    if attempt < self.retries {
                        request.messages.push(ChatMessage::assistant(answer));
                        request.messages.push(ChatMessage::user(format!("{why} {correction}")));
                    }
                }
            }
        }
        Err(AnnotateError::JudgeFormat(last))
    }

    fn base(&self, system: String, user: String, purpose: &str, turn: &Turn) -> ChatRequest {
        ChatRequest::new(self.gateway.model_id(), vec![ChatMessage::system(system), ChatMessage::user(user)])
            .with_temperature(0.0)
            .with_max_tokens(400)
            .tag("purpose", purpose)
            .tag("turn_index", turn.index.to_string())
    }

    fn check(turn: &Turn, expected: Role) -> Result<(), AnnotateError> {
        if turn.role != expected {
            return Err(AnnotateError::WrongRole {
                index: turn.index,
                role: turn.role,
                expected,
            });
        }
        if turn.content.trim().is_empty() {
            return Err(AnnotateError::EmptyContent(turn.index));
        }
        Ok(())
    }

    pub fn tag_strategies(&self, turn: &Turn) -> Result<Annotation, AnnotateError> {
        Self::check(turn, Role::Mentor)?;
        let user = format!("Mentor turn:\n{}", feedback_body(&turn.content, self.bundle).trim());
        let base = self.base(catalog_prompt(self.bundle), user, "annotate-strategies", turn);
        self.ask(base, "Use exactly the three-line format with codebook names only.", |a| {
            parse_strategy_judgement(a).ok_or_else(|| "That reply did not follow the format.".to_string())
        })
    }

    pub fn classify_discourse_act(&self, turn: &Turn, preceding_mentor: Option<&Turn>) -> Result<DiscourseAct, AnnotateError> {
        Self::check(turn, Role::Mentee)?;
        let mentor_asked = preceding_mentor.is_some_and(|m| labels::strip_quoted(&m.content).contains('?'));
        let context = preceding_mentor
            .map(render_transcript_line)
            .unwrap_or_else(|| "(no preceding mentor turn)".into());
        let user = format!("Preceding turn:\n{context}\n\nMessage to classify:\n{}", render_transcript_line(turn));
        let base = self
            .base(ACT_PROMPT.to_string(), user, "annotate-act", turn)
            .tag("mentor_asked", mentor_asked.to_string());
        self.ask(base, "Reply with one act name only.", |a| {
            let act: DiscourseAct = a.trim().trim_end_matches('.').parse().map_err(|_| "Unknown act.".to_string())?;
            if act == DiscourseAct::Answer && !mentor_asked {
                return Err("Answer requires the preceding mentor turn to ask a question.".to_string());
            }
            Ok(act)
        })
    }

    pub fn extract_feedback_items(&self, turn: &Turn) -> Result<Vec<(String, NestedLevel)>, AnnotateError> {
        Self::check(turn, Role::Mentor)?;
        let user = format!("Mentor message:\n{}", feedback_body(&turn.content, self.bundle).trim());
        let base = self.base(LEVEL_PROMPT.to_string(), user, "annotate-levels", turn);
        self.ask(base, "Use `LEVEL | suggestion` lines or NONE.", |a| {
            parse_levels(a).ok_or_else(|| "That reply did not follow the format.".to_string())
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum Job {
    Strategies(usize, usize),
    Levels(usize, usize),
    Act(usize, usize),
}

enum JobResult {
    Strategies(Annotation),
    Levels(Vec<NestedLevel>),
    Act(DiscourseAct),
}

/// Runs coding passes and records them as [`CodingRun`]s.
pub struct Annotator {
    bundle: Arc<PromptBundle>,
    gateway: Option<Gateway>,
    parallelism: usize,
    clock: Arc<dyn Clock>,
}

impl Annotator {
    pub fn new(bundle: Arc<PromptBundle>) -> Self {
        Annotator {
            bundle,
            gateway: None,
            parallelism: 4,
            clock: Arc::new(SystemClock),
        }
    }

    pub fn with_gateway(mut self, gateway: Gateway) -> Self {
        self.gateway = Some(gateway);
        self
    }

    pub fn with_parallelism(mut self, n: usize) -> Self {
        self.parallelism = n.max(1);
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Codes every session in place and returns the run record. Each coded
    /// session's `coding_run` points at the run.
    pub fn annotate(
        &self,
        sessions: &mut [Session],
        mode: CodingMode,
        run_id: Option<String>,
    ) -> Result<CodingRun, AnnotateError> {
        let id = run_id.unwrap_or_else(|| format!("run-{}", uuid::Uuid::new_v4()));
        let mut run = CodingRun {
            id: id.clone(),
            mode,
            session_ids: sessions.iter().map(|s| s.id.clone()).collect(),
            bundle_version: self.bundle.version.clone(),
            created_at: self.clock.now(),
            judge_model_id: None,
            failures: Vec::new(),
        };
        match mode {
            CodingMode::ExplicitLabel => {
                for s in sessions.iter_mut() {
                    annotate_explicit(s, &self.bundle);
                }
            }
            CodingMode::LlmJudge => {
                let gateway = self.gateway.as_ref().ok_or(AnnotateError::NoGateway)?;
                run.judge_model_id = Some(gateway.model_id().to_string());
                run.failures = self.annotate_llm(sessions, gateway);
            }
            CodingMode::Manual => {}
        }
        for s in sessions.iter_mut() {
            s.coding_run = Some(id.clone());
        }
        Ok(run)
    }

    fn annotate_llm(&self, sessions: &mut [Session], gateway: &Gateway) -> Vec<String> {
        let mut jobs = Vec::new();
        for (si, s) in sessions.iter().enumerate() {
            for (ti, t) in s.turns.iter().enumerate() {
                match t.role {
                    Role::Mentor if !t.scripted => {
                        jobs.push(Job::Strategies(si, ti));
                        jobs.push(Job::Levels(si, ti));
                    }
                    Role::Mentee => jobs.push(Job::Act(si, ti)),
                    _ => {}
                }
            }
        }

        let coder = LlmCoder::new(gateway, &self.bundle);
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<(usize, Result<JobResult, AnnotateError>)>> = Mutex::new(Vec::new());
        let shared: &[Session] = sessions;
        std::thread::scope(|scope| {
            for _ in 0..self.parallelism.min(jobs.len().max(1)) {
                scope.spawn(|| loop {
                    let n = next.fetch_add(1, Ordering::SeqCst);
                    let Some(job) = jobs.get(n) else { break };
                    let out = match *job {
                        Job::Strategies(s, t) => coder.tag_strategies(&shared[s].turns[t]).map(JobResult::Strategies),
                        Job::Levels(s, t) => coder
                            .extract_feedback_items(&shared[s].turns[t])
                            .map(|items| JobResult::Levels(items.into_iter().map(|(_, l)| l).collect())),
                        Job::Act(s, t) => {
                            let prev = shared[s].turns[..t].iter().rev().find(|x| x.role == Role::Mentor);
                            coder
                                .classify_discourse_act(&shared[s].turns[t], prev)
                                .map(JobResult::Act)
                        }
                    };
                    results.lock().unwrap().push((n, out));
                });
            }
        });

        let mut results = results.into_inner().unwrap();
        results.sort_by_key(|(n, _)| *n);
        let mut failures = Vec::new();
        let mut fresh: BTreeMap<(usize, usize), Annotation> = BTreeMap::new();
        let mut failed: std::collections::BTreeSet<(usize, usize)> = Default::default();
        for (n, out) in results {
            let (si, ti) = match jobs[n] {
                Job::Strategies(s, t) | Job::Levels(s, t) | Job::Act(s, t) => (s, t),
            };
            let entry = fresh
                .entry((si, ti))
                .or_insert_with(|| Annotation::new(AnnotationSource::LlmJudge));
            match out {
                Ok(JobResult::Strategies(a)) => {
                    entry.strategies = a.strategies;
                    entry.behaviors = a.behaviors;
                    entry.principles = a.principles;
                }
                Ok(JobResult::Levels(levels)) => entry.feedback_levels = levels,
                Ok(JobResult::Act(act)) => entry.discourse_act = Some(act),
                Err(e) => {
                    failed.insert((si, ti));
                    failures.push(format!("{}#{}: {e}", sessions[si].id, ti));
                }
            }
        }
        for ((si, ti), ann) in fresh {
            if !failed.contains(&(si, ti)) {
                sessions[si].turns[ti].annotation = Some(ann);
            }
        }
        failures
    }
}

/// Field of a manual code row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeField {
    Strategy,
    Behavior,
    Principle,
    Act,
    Level,
}

impl std::str::FromStr for CodeField {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "strategy" => Ok(CodeField::Strategy),
            "behavior" => Ok(CodeField::Behavior),
            "principle" => Ok(CodeField::Principle),
            "act" => Ok(CodeField::Act),
            "level" => Ok(CodeField::Level),
            other => Err(format!("unknown field `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct ManualCodeRow {
    pub session_id: String,
    pub turn_index: usize,
    pub field: String,
    pub value: String,
    pub coder_id: String,
}

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {detail}")]
    Invalid { row: usize, detail: String },
}

/// Codes produced outside the tool, one row per (turn, field, value, coder).
#[derive(Debug, Clone, Default)]
pub struct ManualCodes {
    rows: Vec<(String, usize, CodeField, String, String)>,
}

impl ManualCodes {
    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self, ImportError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        for (i, rec) in rdr.deserialize::<ManualCodeRow>().enumerate() {
            let row = rec?;
            let invalid = |detail: String| ImportError::Invalid { row: i + 2, detail };
            let field: CodeField = row.field.parse().map_err(invalid)?;
            let ok = match field {
                CodeField::Strategy => row.value.parse::<StrategyTag>().is_ok(),
                CodeField::Behavior => row.value.parse::<BehaviorTag>().is_ok(),
                CodeField::Principle => row.value.parse::<PrincipleTag>().is_ok(),
                CodeField::Act => row.value.parse::<DiscourseAct>().is_ok(),
                CodeField::Level => row.value.parse::<NestedLevel>().is_ok(),
            };
            if !ok {
                return Err(invalid(format!("`{}` is not a valid {:?} code", row.value, field)));
            }
            rows.push((row.session_id, row.turn_index, field, row.value, row.coder_id));
        }
        Ok(ManualCodes { rows })
    }

    pub fn coders(&self) -> Vec<String> {
        let mut out: Vec<String> = self.rows.iter().map(|r| r.4.clone()).collect();
        out.sort();
        out.dedup();
        out
    }

    /// Writes one coder's codes onto the sessions as Manual annotations.
    pub fn apply(&self, sessions: &mut [Session], coder: &str) -> Result<usize, ImportError> {
        let mut applied = 0;
        for (i, (sid, idx, field, value, c)) in self.rows.iter().enumerate() {
            if c != coder {
                continue;
            }
            let invalid = |detail: String| ImportError::Invalid { row: i + 2, detail };
            let session = sessions
                .iter_mut()
                .find(|s| &s.id == sid)
                .ok_or_else(|| invalid(format!("unknown session `{sid}`")))?;
            let turn = session
                .turns
                .get_mut(*idx)
                .ok_or_else(|| invalid(format!("turn {idx} out of range")))?;
            let role = turn.role;
            let ann = turn
                .annotation
                .get_or_insert_with(|| Annotation::new(AnnotationSource::Manual));
            if ann.source != AnnotationSource::Manual {
                *ann = Annotation::new(AnnotationSource::Manual);
            }
            match field {
                CodeField::Strategy => push_unique(&mut ann.strategies, value.parse().expect("validated")),
                CodeField::Behavior => push_unique(&mut ann.behaviors, value.parse().expect("validated")),
                CodeField::Principle => push_unique(&mut ann.principles, value.parse().expect("validated")),
                CodeField::Act if role == Role::Mentee => ann.discourse_act = Some(value.parse().expect("validated")),
                CodeField::Level if role == Role::Mentor => {
                    ann.feedback_levels.push(value.parse().expect("validated"))
                }
                CodeField::Act | CodeField::Level => {
                    return Err(invalid(format!("{field:?} code on a {role:?} turn")));
                }
            }
            applied += 1;
        }
        Ok(applied)
    }

    /// Aligned label sequences for two coders on one field. Each unit is a
    /// (session, turn) both coders coded; its label is the sorted value set.
    pub fn aligned(&self, field: CodeField, coder_a: &str, coder_b: &str) -> (Vec<String>, Vec<String>) {
        let collect = |coder: &str| {
            let mut m: BTreeMap<(String, usize), Vec<String>> = BTreeMap::new();
            for (sid, idx, f, value, c) in &self.rows {
                if *f == field && c == coder {
                    m.entry((sid.clone(), *idx)).or_default().push(value.clone());
                }
            }
            m.into_iter()
                .map(|(k, mut v)| {
                    v.sort();
                    v.dedup();
                    (k, v.join("+"))
                })
                .collect::<BTreeMap<_, _>>()
        };
        let a = collect(coder_a);
        let b = collect(coder_b);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (k, va) in &a {
            if let Some(vb) = b.get(k) {
                xs.push(va.clone());
                ys.push(vb.clone());
            }
        }
        (xs, ys)
    }
}

fn push_unique<T: PartialEq>(v: &mut Vec<T>, x: T) {
    if !v.contains(&x) {
        v.push(x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ScaffoldKind, Strategy};
    use chrono::TimeZone;

    fn turn(role: Role, text: &str) -> Turn {
        Turn::new(0, role, text, Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap())
    }

    #[test]
    fn explicit_scoping() {
        let b = PromptBundle::default_bundle();
        let a = tag_explicit_labels(
            &turn(Role::Mentor, "Thanks. [Scoping] So, here's my understanding of your questions:\n1. A?\n2. B?"),
            &b,
        );
        assert_eq!(a.strategies, vec![StrategyTag::plain(Strategy::Scoping)]);
        assert_eq!(a.source, AnnotationSource::ExplicitLabel);
        let none = tag_explicit_labels(&turn(Role::Mentor, "Plain advice."), &b);
        assert!(none.strategies.is_empty());
    }

    #[test]
    fn explicit_hint_and_principle() {
        let b = PromptBundle::default_bundle();
        let a = tag_explicit_labels(
            &turn(Role::Mentor, "💭 Great start! [Scaffolding] Hints: The first thing to do is sort the bars. Does that make sense?"),
            &b,
        );
        assert_eq!(a.strategies, vec![StrategyTag::scaffolding(ScaffoldKind::Hint)]);
        assert_eq!(a.principles, vec![PrincipleTag::Verbalize]);
        assert_eq!(a.behaviors, vec![BehaviorTag::Affirm, BehaviorTag::Confirm]);
    }

    #[test]
    fn support_cue() {
        let b = PromptBundle::default_bundle();
        let a = detect_behaviors("[Coaching] Don't worry, this is a common challenge. What is the goal?", &b);
        assert_eq!(a, vec![BehaviorTag::Support]);
    }

    #[test]
    fn judgement_contract() {
        let a = parse_strategy_judgement("STRATEGIES: Modeling, Scaffolding:Hint\nBEHAVIORS: NONE\nPRINCIPLES: Exemplify").unwrap();
        assert_eq!(
            a.strategies,
            vec![StrategyTag::plain(Strategy::Modeling), StrategyTag::scaffolding(ScaffoldKind::Hint)]
        );
        assert!(a.behaviors.is_empty());
        assert_eq!(a.principles, vec![PrincipleTag::Exemplify]);
        assert!(parse_strategy_judgement("STRATEGIES: Mentoring\nBEHAVIORS: NONE\nPRINCIPLES: NONE").is_none());
        assert!(parse_strategy_judgement("STRATEGIES: Scaffolding\nBEHAVIORS: NONE\nPRINCIPLES: NONE").is_none());
        assert!(parse_strategy_judgement("Modeling").is_none());
    }

    #[test]
    fn level_contract() {
        assert_eq!(parse_levels("NONE"), Some(vec![]));
        assert_eq!(
            parse_levels("EncodingInteraction | switch violin plots to stacked bars\nDataTaskAbstraction | use growth rate"),
            Some(vec![
                ("switch violin plots to stacked bars".to_string(), NestedLevel::EncodingInteraction),
                ("use growth rate".to_string(), NestedLevel::DataTaskAbstraction),
            ])
        );
        assert_eq!(parse_levels("Visual | x"), None);
        assert_eq!(parse_levels(""), None);
    }

    #[test]
    fn manual_import_and_alignment() {
        let csv = "session_id,turn_index,field,value,coder_id\n\
                   s1,1,strategy,Coaching,a\n\
                   s1,1,strategy,Coaching,b\n\
                   s1,3,strategy,Modeling,a\n\
                   s1,3,strategy,Scaffolding:Hint,b\n";
        let codes = ManualCodes::from_reader(csv.as_bytes()).unwrap();
        assert_eq!(codes.coders(), vec!["a", "b"]);
        let (x, y) = codes.aligned(CodeField::Strategy, "a", "b");
        assert_eq!(x, vec!["Coaching", "Modeling"]);
        assert_eq!(y, vec!["Coaching", "Scaffolding:Hint"]);

        let bad = "session_id,turn_index,field,value,coder_id\ns1,1,strategy,Mentoring,a\n";
        assert!(matches!(ManualCodes::from_reader(bad.as_bytes()), Err(ImportError::Invalid { row: 2, .. })));
    }
}
