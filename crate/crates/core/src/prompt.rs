//! Prompt bundle: the mentorship instructions held as data, plus the
//! renderers for every scripted format the mentor must reproduce exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BehaviorTag, Phase, PhaseState, PrincipleTag, ScaffoldKind, Session, Strategy};

/// Bundle shipped with the repository.
pub const DEFAULT_BUNDLE_JSON: &str = include_str!("../../../assets/bundle.default.json");

pub const MILESTONE_HEADER: &str = "Design Mentorship Process:";
pub const CURRENT_PHASE_PREFIX: &str = "We're currently in:";
pub const CURRENT_QUESTION_PREFIX: &str = "Current question:";
pub const MARK_DONE: &str = "✅";
pub const MARK_CURRENT: &str = "🔄";
pub const MARK_UPCOMING: &str = "⬜";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("bundle parse error: {0}")]
    Parse(String),
    #[error("bundle is missing strategy `{0}`")]
    MissingStrategy(String),
    #[error("bundle section `{0}` is empty")]
    EmptySection(String),
    #[error("reading bundle: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("phase {0} has no renderable format")]
pub struct InvalidPhase(pub Phase);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogText {
    pub description: String,
    pub example: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorSection {
    pub rules: String,
    pub entries: BTreeMap<String, CatalogText>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrincipleSpec {
    pub tag: PrincipleTag,
    pub title: String,
    pub emoji: String,
    pub guidance: Vec<String>,
    pub example: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrincipleSection {
    pub preamble: String,
    pub entries: Vec<PrincipleSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub title: String,
    pub overview: String,
    pub starter_format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_verification: Option<String>,
    pub allowed_strategies: Vec<Strategy>,
    pub goal_preamble: String,
    pub goal_descriptions: Vec<String>,
    #[serde(default)]
    pub extra_rules: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubKindEntry {
    pub name: String,
    pub description: String,
    pub example: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyCatalogEntry {
    pub name: String,
    pub overall_goal: String,
    pub behavioral_principles: Vec<String>,
    pub example: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sub_kinds: BTreeMap<String, SubKindEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategySection {
    pub preamble: String,
    pub entries: BTreeMap<String, StrategyCatalogEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub version: String,
    pub persona: String,
    pub behaviors: BehaviorSection,
    #[serde(default)]
    pub flow: String,
    pub principles: PrincipleSection,
    pub phases: BTreeMap<String, PhaseSpec>,
    pub strategies: StrategySection,
    pub greeting: String,
    #[serde(default)]
    pub openers: Vec<String>,
}

impl PromptBundle {
    /// The bundle shipped in `assets/bundle.default.json`.
    pub fn default_bundle() -> PromptBundle {
        load_bundle(DEFAULT_BUNDLE_JSON).expect("shipped bundle is valid")
    }

    pub fn from_path(path: &Path) -> Result<PromptBundle, BundleError> {
        let text = std::fs::read_to_string(path)?;
        load_bundle(&text)
    }

    pub fn phase(&self, phase: Phase) -> Option<&PhaseSpec> {
        self.phases.get(phase.as_str())
    }

    pub fn strategy(&self, strategy: Strategy) -> &StrategyCatalogEntry {
        &self.strategies.entries[strategy.as_str()]
    }

    pub fn principle(&self, tag: PrincipleTag) -> &PrincipleSpec {
        self.principles
            .entries
            .iter()
            .find(|p| p.tag == tag)
            .expect("validated bundle has every principle")
    }
}

fn require(path: &str, text: &str) -> Result<(), BundleError> {
    if text.trim().is_empty() {
        Err(BundleError::EmptySection(path.to_string()))
    } else {
        Ok(())
    }
}

/// Parses and validates a bundle document.
pub fn load_bundle(source: &str) -> Result<PromptBundle, BundleError> {
    let bundle: PromptBundle =
        serde_json::from_str(source).map_err(|e| BundleError::Parse(e.to_string()))?;
    validate_bundle(&bundle)?;
    Ok(bundle)
}

fn validate_bundle(b: &PromptBundle) -> Result<(), BundleError> {
    require("version", &b.version)?;
    require("persona", &b.persona)?;
    require("greeting", &b.greeting)?;
    require("behaviors.rules", &b.behaviors.rules)?;
    for tag in BehaviorTag::ALL {
        let entry = b
            .behaviors
            .entries
            .get(tag.as_str())
            .ok_or_else(|| BundleError::EmptySection(format!("behaviors.entries.{tag}")))?;
        require(&format!("behaviors.entries.{tag}.description"), &entry.description)?;
        require(&format!("behaviors.entries.{tag}.example"), &entry.example)?;
    }
    for key in b.behaviors.entries.keys() {
        key.parse::<BehaviorTag>()
            .map_err(|e| BundleError::Parse(e.to_string()))?;
    }

    require("principles.preamble", &b.principles.preamble)?;
    if b.principles.entries.len() != PrincipleTag::ALL.len() {
        return Err(BundleError::Parse(format!(
            "expected {} principles, found {}",
            PrincipleTag::ALL.len(),
            b.principles.entries.len()
        )));
    }
    for tag in PrincipleTag::ALL {
        let p = b
            .principles
            .entries
            .iter()
            .find(|p| p.tag == *tag)
            .ok_or_else(|| BundleError::EmptySection(format!("principles.{tag}")))?;
        require(&format!("principles.{tag}.title"), &p.title)?;
        require(&format!("principles.{tag}.emoji"), &p.emoji)?;
        require(&format!("principles.{tag}.example"), &p.example)?;
    }

    require("strategies.preamble", &b.strategies.preamble)?;
    for key in b.strategies.entries.keys() {
        key.parse::<Strategy>()
            .map_err(|e| BundleError::Parse(e.to_string()))?;
    }
    for s in Strategy::ALL {
        let entry = b
            .strategies
            .entries
            .get(s.as_str())
            .ok_or_else(|| BundleError::MissingStrategy(s.as_str().to_string()))?;
        let path = format!("strategies.{s}");
        require(&format!("{path}.name"), &entry.name)?;
        require(&format!("{path}.overall_goal"), &entry.overall_goal)?;
        require(&format!("{path}.example"), &entry.example)?;
        if *s == Strategy::Scaffolding {
            for kind in ScaffoldKind::ALL {
                let sub = entry.sub_kinds.get(kind.as_str()).ok_or_else(|| {
                    BundleError::EmptySection(format!("{path}.sub_kinds.{kind}"))
                })?;
                require(&format!("{path}.sub_kinds.{kind}.example"), &sub.example)?;
            }
        }
    }

    for phase in Phase::FEEDBACK {
        let path = format!("phases.{phase}");
        let spec = b
            .phases
            .get(phase.as_str())
            .ok_or_else(|| BundleError::EmptySection(path.clone()))?;
        require(&format!("{path}.title"), &spec.title)?;
        require(&format!("{path}.starter_format"), &spec.starter_format)?;
        if spec.allowed_strategies.is_empty() {
            return Err(BundleError::EmptySection(format!("{path}.allowed_strategies")));
        }
        if spec.goal_descriptions.len() != phase.goal_count() {
            return Err(BundleError::Parse(format!(
                "{path} needs {} goals, found {}",
                phase.goal_count(),
                spec.goal_descriptions.len()
            )));
        }
        for (i, g) in spec.goal_descriptions.iter().enumerate() {
            require(&format!("{path}.goal_descriptions[{i}]"), g)?;
        }
    }
    require(
        "phases.p1_clarify.visual_verification",
        b.phases["p1_clarify"]
            .visual_verification
            .as_deref()
            .unwrap_or(""),
    )?;
    Ok(())
}

/// Renders the three-line milestone overview for a feedback phase.
pub fn render_milestone_overview(bundle: &PromptBundle, state: &PhaseState) -> Result<String, InvalidPhase> {
    let current = state.phase;
    if !current.is_feedback() {
        return Err(InvalidPhase(current));
    }
    let mut out = String::new();
    out.push_str(MILESTONE_HEADER);
    out.push('\n');
    for phase in Phase::FEEDBACK {
        let mark = match phase.cmp(&current) {
            std::cmp::Ordering::Less => MARK_DONE,
            std::cmp::Ordering::Equal => MARK_CURRENT,
            std::cmp::Ordering::Greater => MARK_UPCOMING,
        };
        let title = &bundle.phase(phase).ok_or(InvalidPhase(phase))?.title;
        let _ = writeln!(out, "- {mark} {title}");
    }
    let current_title = &bundle.phase(current).ok_or(InvalidPhase(current))?.title;
    let _ = write!(out, "\n{CURRENT_PHASE_PREFIX} {current_title}");
    Ok(out)
}

/// The phase's starter line. P1 also carries the visual-verification header.
pub fn render_starter(phase: Phase, bundle: &PromptBundle) -> Result<String, InvalidPhase> {
    let spec = bundle.phase(phase).ok_or(InvalidPhase(phase))?;
    let mut out = spec.starter_format.clone();
    if phase == Phase::P1Clarify {
        if let Some(header) = &spec.visual_verification {
            out.push_str("\n\n");
            out.push_str(header);
        }
    }
    Ok(out)
}

pub fn render_current_question(text: &str) -> String {
    format!("**{CURRENT_QUESTION_PREFIX} {text}**")
}

fn strategy_line(allowed: &[Strategy]) -> String {
    let labels: Vec<String> = allowed.iter().map(|s| format!("[{s}]")).collect();
    match labels.len() {
        0 => String::new(),
        1 => labels[0].clone(),
        2 => labels.join(", "),
        n => format!("{}, or {}", labels[..n - 1].join(", "), labels[n - 1]),
    }
}

fn render_catalog_entry(out: &mut String, entry: &StrategyCatalogEntry) {
    let _ = writeln!(out, "## {}", entry.name);
    let _ = writeln!(out, "### Overall Goal\n{}\n", entry.overall_goal);
    let _ = writeln!(out, "### Behavioral Principles");
    for p in &entry.behavioral_principles {
        let _ = writeln!(out, "- {p}");
    }
    out.push('\n');
    if !entry.sub_kinds.is_empty() {
        let _ = writeln!(out, "### Specific strategies");
        for kind in ScaffoldKind::ALL {
            if let Some(sub) = entry.sub_kinds.get(kind.as_str()) {
                let _ = writeln!(out, "- {}: {}", sub.name, sub.description);
                let _ = writeln!(out, "Example: {}", sub.example);
            }
        }
        out.push('\n');
    } else {
        let _ = writeln!(out, "### Example\n{}\n", entry.example);
    }
}

/// Builds the system prompt for a mentor-condition session at its current phase.
///
/// `ordered_strategies` is the preferred order for this turn (from the
/// orchestrator's graduated sequence); pass the phase's allowed set when no
/// preference applies.
pub fn assemble_system_prompt(bundle: &PromptBundle, session: &Session, ordered_strategies: &[Strategy]) -> String {
    let phase = session.phase.phase;
    let mut out = String::new();
    out.push_str(&bundle.persona);
    out.push_str("\n\n");
    out.push_str(&bundle.behaviors.rules);
    out.push_str("\n\n");
    for tag in BehaviorTag::ALL {
        if let Some(entry) = bundle.behaviors.entries.get(tag.as_str()) {
            let _ = writeln!(out, "## {tag}\n- {}\n- Example: {}\n", entry.description, entry.example);
        }
    }

    out.push_str(&bundle.principles.preamble);
    out.push_str("\n\n");
    for p in &bundle.principles.entries {
        let _ = writeln!(out, "## {} {}", p.emoji, p.title);
        for g in &p.guidance {
            let _ = writeln!(out, "- {g}");
        }
        let _ = writeln!(out, "- Example: {}\n", p.example);
    }

    if !bundle.flow.is_empty() {
        out.push_str(&bundle.flow);
        out.push_str("\n\n");
    }

    if let Some(spec) = bundle.phase(phase) {
        let _ = writeln!(out, "# Current Phase\n{}\n", spec.overview);
        let _ = writeln!(out, "## Starter Format\nFormat: \"{}\"", spec.starter_format);
        if let Some(v) = &spec.visual_verification {
            let _ = writeln!(out, "- Recognize what you see from the uploaded visualization\nFormat: {v}");
        }
        out.push('\n');
        let _ = writeln!(out, "## Feedback Strategies and Behaviors");
        let _ = writeln!(out, "- Strategy: {}", strategy_line(&spec.allowed_strategies));
        for rule in &spec.extra_rules {
            if rule.starts_with(' ') {
                let _ = writeln!(out, "{rule}");
            } else {
                let _ = writeln!(out, "- {rule}");
            }
        }
        out.push('\n');

        if phase == Phase::P2Diagnose {
            if let Some(q) = session
                .phase
                .active_question
                .and_then(|i| session.agenda.questions.get(i))
            {
                let _ = writeln!(
                    out,
                    "## Current Question\nClearly indicate the focus using:\n{}\n",
                    render_current_question(&q.text)
                );
            }
            if let Some(next) = ordered_strategies.first() {
                let order: Vec<String> = ordered_strategies.iter().map(|s| format!("[{s}]")).collect();
                let _ = writeln!(
                    out,
                    "## Graduated Sequence\nFor the current question, use {} next. Remaining order: {}.\n",
                    format_args!("[{next}]"),
                    order.join(" then ")
                );
            }
        }

        out.push_str(&bundle.strategies.preamble);
        out.push_str("\n\n");
        for s in &spec.allowed_strategies {
            render_catalog_entry(&mut out, bundle.strategy(*s));
        }

        let _ = writeln!(out, "## Phase Goal\n{}", spec.goal_preamble);
        for g in &spec.goal_descriptions {
            let _ = writeln!(out, "- {g}");
        }
        out.push('\n');
    }

    out.push_str("# Response Rules\n");
    out.push_str("- Do not use multiple feedback strategies at a time.\n");
    out.push_str("- Label the one feedback strategy you use in square brackets, e.g., [Scoping].\n");
    if !session.phase.introduced {
        out.push_str(
            "- The Milestone Overview and Starter Format for this phase are already shown above your reply; continue directly after them.\n",
        );
    }
    out
}
