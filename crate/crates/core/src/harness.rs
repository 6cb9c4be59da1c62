//! Counterbalanced two-condition runs with scripted or simulated mentees.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::SteppingClock;
use crate::gateway::{ChatMessage, ChatRequest, Gateway};
use crate::model::{Attachment, AttachmentKind, Condition, Role, Session};
use crate::orchestrator::{Orchestrator, OrchestratorConfig};
use crate::prompt::PromptBundle;
use crate::store::SessionStore;

/// A 1x1 transparent PNG used when a persona names no artifact file.
pub const PLACEHOLDER_PNG: &[u8] = &[
    0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00, 0x00,
    0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00, 0x00, 0x1F, 0x15, 0xC4, 0x89, 0x00, 0x00, 0x00, 0x0D, 0x49,
    0x44, 0x41, 0x54, 0x78, 0x9C, 0x63, 0x00, 0x01, 0x00, 0x00, 0x05, 0x00, 0x01, 0x0D, 0x0A, 0x2D, 0xB4, 0x00, 0x00,
    0x00, 0x00, 0x49, 0x45, 0x4E, 0x44, 0xAE, 0x42, 0x60, 0x82,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PersonaRole {
    Student,
    Researcher,
    DataAnalyst,
    Designer,
    SoftwareDeveloper,
    TeacherEducator,
    Freelancer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VizExpertise {
    Novice,
    Beginner,
    Intermediate,
    Advanced,
    Expert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MenteePersona {
    pub name: String,
    pub role: PersonaRole,
    pub viz_expertise: VizExpertise,
    /// Artifact description and the design questions, used by the simulated mentee.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audience: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<String>,
    /// Fixed replies, used in order instead of simulation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<Vec<String>>,
    /// Image file of the artifact, relative to the plan file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_caption: Option<String>,
}

impl MenteePersona {
    pub fn slug(&self) -> String {
        let mut out = String::new();
        for c in self.name.chars() {
            if c.is_ascii_alphanumeric() {
                out.push(c.to_ascii_lowercase());
            } else if !out.ends_with('-') && !out.is_empty() {
                out.push('-');
            }
        }
        out.trim_end_matches('-').to_string()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        match (&self.script, &self.scenario) {
            (Some(s), _) if s.is_empty() => Err(HarnessError::InvalidPersona {
                name: self.name.clone(),
                reason: "script mode needs at least one reply".into(),
            }),
            (Some(_), _) => Ok(()),
            (None, Some(sc)) if !sc.trim().is_empty() => Ok(()),
            _ => Err(HarnessError::InvalidPersona {
                name: self.name.clone(),
                reason: "needs a script or a scenario".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionOrder {
    MentorFirst,
    BaselineFirst,
}

impl ConditionOrder {
    pub fn conditions(self) -> [Condition; 2] {
        match self {
            ConditionOrder::MentorFirst => [Condition::Mentor, Condition::Baseline],
            ConditionOrder::BaselineFirst => [Condition::Baseline, Condition::Mentor],
        }
    }
}

fn default_opener() -> String {
    "Let's start a design feedback session!".to_string()
}

fn default_time_budget() -> Option<u64> {
    Some(10)
}

fn default_max_exchanges() -> usize {
    6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub personas: Vec<MenteePersona>,
    #[serde(default)]
    pub seed: u64,
    /// Per-persona order; computed from the seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_assignment: Option<Vec<ConditionOrder>>,
    #[serde(default = "default_opener")]
    pub opener: String,
    /// Wall-clock budget per session in minutes (simulated clock).
    #[serde(default = "default_time_budget")]
    pub time_budget_minutes: Option<u64>,
    #[serde(default = "default_max_exchanges")]
    pub max_exchanges: usize,
    /// Session start instant; the harness clock advances one second per reading.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<DateTime<Utc>>,
}

impl RunPlan {
    pub fn new(personas: Vec<MenteePersona>, seed: u64) -> Self {
        RunPlan {
            personas,
            seed,
            order_assignment: None,
            opener: default_opener(),
            time_budget_minutes: default_time_budget(),
            max_exchanges: default_max_exchanges(),
            start: None,
        }
    }

    pub fn from_path(path: &Path) -> Result<(Self, PathBuf), HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Plan(format!("{}: {e}", path.display())))?;
        let plan: RunPlan = serde_json::from_str(&text).map_err(|e| HarnessError::Plan(e.to_string()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((plan, base))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.personas.is_empty() {
            return Err(HarnessError::Plan("plan has no personas".into()));
        }
        for p in &self.personas {
            p.validate()?;
        }
        let mut slugs: Vec<String> = self.personas.iter().map(|p| p.slug()).collect();
        slugs.sort();
        let n = slugs.len();
        slugs.dedup();
        if slugs.len() != n {
            return Err(HarnessError::Plan("persona names must be unique".into()));
        }
        if let Some(orders) = &self.order_assignment {
            if orders.len() != self.personas.len() {
                return Err(HarnessError::Plan("order_assignment length differs from personas".into()));
            }
            if !is_balanced(orders) {
                return Err(HarnessError::Plan("order_assignment is not counterbalanced".into()));
            }
        }
        Ok(())
    }

    pub fn orders(&self) -> Vec<ConditionOrder> {
        self.order_assignment
            .clone()
            .unwrap_or_else(|| assign_orders(self.personas.len(), self.seed))
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("persona `{name}`: {reason}")]
    InvalidPersona { name: String, reason: String },
    #[error("plan: {0}")]
    Plan(String),
}

pub fn is_balanced(orders: &[ConditionOrder]) -> bool {
    let mentor_first = orders.iter().filter(|o| **o == ConditionOrder::MentorFirst).count() as i64;
    (mentor_first - (orders.len() as i64 - mentor_first)).abs() <= 1
}

/// Counterbalanced, seeded order assignment.
pub fn assign_orders(n: usize, seed: u64) -> Vec<ConditionOrder> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut half = [ConditionOrder::MentorFirst, ConditionOrder::BaselineFirst];
    half.shuffle(&mut rng);
    let mut orders: Vec<ConditionOrder> = (0..n).map(|i| half[i % 2]).collect();
    orders.shuffle(&mut rng);
    orders
}

#[derive(Debug, Default)]
pub struct RunOutcome {
    pub sessions: Vec<Session>,
    /// `<session id>: <error>` for sessions that stopped on an error.
    pub failures: Vec<String>,
}

fn mentee_system(persona: &MenteePersona) -> String {
    format!(
        "You are role-playing a visualization practitioner in a design feedback conversation.\n\
         Name: {}\nRole: {:?}\nVisualization expertise: {:?}\nScenario: {}\nAudience: {}\nConstraint: {}\n\
         Reply as this practitioner in at most 3 sentences.",
        persona.name,
        persona.role,
        persona.viz_expertise,
        persona.scenario.as_deref().unwrap_or("").replace('\n', " "),
        persona.audience.as_deref().unwrap_or("my colleagues"),
        persona.constraint.as_deref().unwrap_or("it has to fit on a single slide"),
    )
}

fn simulated_reply(gateway: &Gateway, persona: &MenteePersona, session: &Session) -> Result<String, crate::gateway::GatewayError> {
    let mut messages = vec![ChatMessage::system(mentee_system(persona))];
    for t in &session.turns {
        match t.role {
            Role::Mentor => messages.push(ChatMessage::user(t.content.clone())),
            Role::Mentee => messages.push(ChatMessage::assistant(t.content.clone())),
            Role::System => {}
        }
    }
    let request = ChatRequest::new(gateway.model_id(), messages)
        .with_temperature(0.7)
        .with_max_tokens(200)
        .tag("purpose", "mentee-sim")
        .tag("session", session.id.clone());
    Ok(gateway.complete(&request)?.content.trim().to_string())
}

fn run_session(
    orch: &Orchestrator,
    persona: &MenteePersona,
    condition: Condition,
    plan: &RunPlan,
    artifact: &[u8],
    blob_ref: &str,
) -> (Session, Option<String>) {
    let id = format!("{}-{}", persona.slug(), condition);
    let mut session = orch.start_session(condition, id);
    let caption = persona
        .artifact_caption
        .clone()
        .or_else(|| persona.scenario.as_ref().and_then(|s| crate::labels::sentences(s).into_iter().next()));
    let attachment = Attachment {
        kind: AttachmentKind::ArtifactImage,
        media_type: crate::gateway::sniff_media_type(artifact).to_string(),
        bytes_ref: blob_ref.to_string(),
        caption,
        at_turn: 0,
    };
    if let Err(e) = orch.submit_attachment(&mut session, attachment) {
        return (session, Some(e.to_string()));
    }
    if plan.max_exchanges == 0 {
        let _ = orch.append_mentee(&mut session, &plan.opener);
        return (session, None);
    }
    let mut next = plan.opener.clone();
    let mut script = persona.script.clone().map(|s| s.into_iter());
    for exchange in 0..plan.max_exchanges {
        if let Err(e) = orch.handle_mentee_message(&mut session, &next) {
            return (session, Some(e.to_string()));
        }
        if session.closed || exchange + 1 == plan.max_exchanges {
            break;
        }
        next = match script.as_mut() {
            Some(it) => match it.next() {
                Some(line) => line,
                None => break,
            },
            None => match simulated_reply(orch.gateway(), persona, &session) {
                Ok(text) if !text.is_empty() => text,
                Ok(_) => break,
                Err(e) => return (session, Some(format!("simulated mentee: {e}"))),
            },
        };
    }
    (session, None)
}

/// (persona index, condition position, session, failure).
type SessionResult = (usize, usize, Session, Option<String>);

/// Runs every persona through both conditions in its assigned order.
/// Personas run concurrently; each persona's sessions run one after the other.
pub fn run_plan(
    plan: &RunPlan,
    base_dir: &Path,
    gateway: &Gateway,
    bundle: Arc<PromptBundle>,
    store: Option<&SessionStore>,
) -> Result<RunOutcome, HarnessError> {
    plan.validate()?;
    let orders = plan.orders();
    let start = plan
        .start
        .unwrap_or_else(|| Utc.with_ymd_and_hms(2025, 1, 1, 9, 0, 0).unwrap());
    let config = OrchestratorConfig {
        time_budget: plan.time_budget_minutes.map(|m| Duration::minutes(m as i64)),
        ..OrchestratorConfig::default()
    };

    let mut artifacts = Vec::new();
    for p in &plan.personas {
        let bytes = match &p.artifact {
            Some(rel) => {
                let path = base_dir.join(rel);
                std::fs::read(&path).map_err(|e| HarnessError::Plan(format!("{}: {e}", path.display())))?
            }
            None => PLACEHOLDER_PNG.to_vec(),
        };
        artifacts.push(bytes);
    }

    let results: Mutex<Vec<SessionResult>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for (pi, persona) in plan.personas.iter().enumerate() {
            let order = orders[pi];
            let bytes = &artifacts[pi];
            let bundle = bundle.clone();
            let config = config.clone();
            let results = &results;
            scope.spawn(move || {
                let blob_ref = match store {
                    Some(s) => s.put_blob(bytes).unwrap_or_default(),
                    None => format!("sha256:{}", hex::encode(<sha2::Sha256 as sha2::Digest>::digest(bytes))),
                };
                for (ci, condition) in order.conditions().into_iter().enumerate() {
                    let clock = Arc::new(SteppingClock::new(start, Duration::seconds(1)));
                    let orch = Orchestrator::new(gateway.clone(), bundle.clone())
                        .with_config(config.clone())
                        .with_clock(clock);
                    let (session, failure) = run_session(&orch, persona, condition, plan, bytes, &blob_ref);
                    results.lock().unwrap().push((pi, ci, session, failure));
                }
            });
        }
    });

    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(pi, ci, _, _)| (*pi, *ci));
    let mut outcome = RunOutcome::default();
    for (_, _, session, failure) in results {
        if let Some(f) = failure {
            outcome.failures.push(format!("{}: {f}", session.id));
        }
        if let Some(store) = store {
            if let Err(e) = store.save_session(&session) {
                outcome.failures.push(format!("{}: {e}", session.id));
            }
        }
        outcome.sessions.push(session);
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_are_balanced_and_seeded() {
        for n in 1..20 {
            for seed in 0..5 {
                let o = assign_orders(n, seed);
                assert_eq!(o.len(), n);
                assert!(is_balanced(&o));
                assert_eq!(o, assign_orders(n, seed));
            }
        }
        let four = assign_orders(4, 1);
        assert_eq!(four.iter().filter(|o| **o == ConditionOrder::MentorFirst).count(), 2);
    }

    #[test]
    fn persona_validation() {
        let mut p = MenteePersona {
            name: "Ana Lee".into(),
            role: PersonaRole::Student,
            viz_expertise: VizExpertise::Novice,
            scenario: None,
            audience: None,
            constraint: None,
            script: None,
            artifact: None,
            artifact_caption: None,
        };
        assert!(p.validate().is_err());
        p.script = Some(vec![]);
        assert!(p.validate().is_err());
        p.script = Some(vec!["hi".into()]);
        assert!(p.validate().is_ok());
        assert_eq!(p.slug(), "ana-lee");
    }
}
