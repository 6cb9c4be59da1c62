//! A rule-based, deterministic stand-in for a chat model.
//!
//! It answers every request kind the engine issues (mentor replies, goal and
//! question judges, annotation judges, simulated mentees) by reading the
//! request's `purpose` tag and a few surface features of the text. It exists
//! so the full pipeline can run and record fixtures without network access;
//! its output says nothing about how a real model would behave.

use super::{ChatMessage, ChatProvider, ChatRequest, ChatResponse, GatewayError, MessageRole};
use crate::labels;
use crate::model::{BehaviorTag, PrincipleTag, Strategy, StrategyTag};

pub const SIMULATED_MODEL: &str = "simulated-mentor-1";

#[derive(Debug, Default, Clone, Copy)]
pub struct SimulatedProvider;

impl SimulatedProvider {
    pub fn new() -> Self {
        SimulatedProvider
    }
}

impl ChatProvider for SimulatedProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let text = match request.meta("purpose").unwrap_or("mentor") {
            "mentor" | "mentor-correction" => match request.meta("condition") {
                Some("baseline") => baseline_reply(request),
                _ => mentor_reply(request),
            },
            "judge-goal" => judge_goal(request),
            "judge-question" => judge_question(request),
            "annotate-strategies" => annotate_strategies(request),
            "annotate-act" => annotate_act(request),
            "annotate-levels" => annotate_levels(request),
            "mentee-sim" => mentee_reply(request),
            other => {
                return Err(GatewayError::InvalidRequest(format!(
                    "simulated provider has no behaviour for purpose `{other}`"
                )))
            }
        };
        Ok(ChatResponse::stop(text))
    }
}

fn by_role(request: &ChatRequest, role: MessageRole) -> Vec<&ChatMessage> {
    request.messages.iter().filter(|m| m.role == role).collect()
}

fn last_user(request: &ChatRequest) -> &str {
    request
        .messages
        .iter()
        .rev()
        .find(|m| m.role == MessageRole::User)
        .map(|m| m.content.as_str())
        .unwrap_or("")
}

fn contains_any(haystack: &str, needles: &[&str]) -> bool {
    let lower = haystack.to_lowercase();
    needles.iter().any(|n| lower.contains(n))
}

/// Question sentences the mentee has asked so far, in order, deduplicated.
fn mentee_questions(request: &ChatRequest) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for m in by_role(request, MessageRole::User) {
        for s in labels::sentences(&m.content) {
            let s = s.trim().trim_start_matches(['-', '*', ' ']).to_string();
            if s.ends_with('?') && s.split_whitespace().count() >= 3 && !out.contains(&s) {
                out.push(s);
            }
        }
    }
    out
}

fn used_labels(request: &ChatRequest) -> Vec<Strategy> {
    by_role(request, MessageRole::Assistant)
        .iter()
        .flat_map(|m| labels::distinct_labels(&m.content))
        .collect()
}

fn mentor_reply(request: &ChatRequest) -> String {
    let phase = request.meta("phase").unwrap_or("p1_clarify");
    let used = used_labels(request);
    match phase {
        "p1_clarify" => {
            if !used.contains(&Strategy::Articulating) {
                "The chart places several categories side by side, and colour carries most of the grouping, \
                 so the eye jumps between the legend and the marks.\n\n\
                 [Articulating] Great start sharing this. Before we look at changes, could you walk me through \
                 who this visualization is for and what you want them to take away? And which design \
                 questions are on your mind?"
                    .to_string()
            } else if !used.contains(&Strategy::Bounding) {
                "[Bounding] Thanks, that helps me see your intent. Are there constraints we should respect, \
                 such as the medium, the data you can use, or parts of the design you want to keep? \
                 Is that a fair way to frame it?"
                    .to_string()
            } else {
                let qs = mentee_questions(request);
                let qs = if qs.is_empty() {
                    vec!["How can the current design communicate its main message more clearly?".to_string()]
                } else {
                    qs
                };
                let list: Vec<String> = qs.iter().enumerate().map(|(i, q)| format!("{}. {q}", i + 1)).collect();
                format!(
                    "[Scoping] So, here's my understanding of your questions:\n\n{}\n\nDoes that match what you want to discuss?",
                    list.join("\n")
                )
            }
        }
        "p2_diagnose" => {
            let question = request.meta("question").unwrap_or("the current question");
            let strategy = request
                .meta("strategy")
                .and_then(|s| s.parse::<Strategy>().ok())
                .unwrap_or(Strategy::Coaching);
            let marker = format!("**Current question: {question}**");
            match strategy {
                Strategy::Scaffolding => format!(
                    "🧭 {marker}\n\n[Scaffolding] Hints: You're on the right track. The first thing to do is to \
                     decide which comparison matters most, then let position carry it and keep colour for a \
                     single highlight. Designers often apply the same rule to any chart where colour is doing \
                     too much work. Does that make sense?"
                ),
                Strategy::Modeling => format!(
                    "🌍 {marker}\n\n[Modeling] Here's how I would approach it: sort the categories by value, \
                     use one neutral colour with a single accent for the category you discuss, and add a short \
                     annotation next to the key mark. For example, a sorted bar chart with one highlighted bar \
                     lets readers find the answer without the legend. Would you like to move on to the next question?"
                ),
                _ => format!(
                    "💭 {marker}\n\n[Coaching] Let's look at the current design together. When a reader first \
                     glances at the chart, what do you think they notice first, and is that the thing you want \
                     them to notice?"
                ),
            }
        }
        "p3_reflect" => {
            if !used.contains(&Strategy::Exploring) {
                "[Exploring] You've worked through your questions. Which changes would you try first, and \
                 what alternative designs would you like to sketch before deciding?"
                    .to_string()
            } else if !used.contains(&Strategy::Reflecting) {
                "[Reflecting] Looking back at this session, what did you learn about your own design process, \
                 and what would you do differently next time?"
                    .to_string()
            } else {
                "[Reflecting] That's a useful lesson to carry forward. Starting from the comparison your \
                 audience needs will guide the next version. Thanks for working through this with me."
                    .to_string()
            }
        }
        _ => "[Coaching] Could you tell me more about your design?".to_string(),
    }
}

fn baseline_reply(request: &ChatRequest) -> String {
    let n = by_role(request, MessageRole::Assistant).len();
    let replies = [
        "Here are several suggestions to improve your visualization:\n\n\
         1. Simplify the colour palette. Use a single neutral colour for most categories and one accent colour \
         for the category you want to emphasise.\n\
         2. Sort the categories by value so that readers can compare them quickly.\n\
         3. Add direct labels next to the marks instead of relying on a legend.\n\
         4. Remove gridlines and borders that do not carry information.\n\
         5. Add a clear title that states the main takeaway rather than describing the chart.\n\
         6. Consider switching to a horizontal bar chart if category names are long.\n\n\
         These changes should make the chart easier to read and help your audience focus on the key message.",
        "A different chart type can work better because it matches the comparison your audience needs to make. \
         Bar charts use position along a common scale, which people judge accurately, while colour and area are \
         harder to compare. You could also add a reference line for the average so that above and below average \
         categories stand out. If the data covers several time points, a small multiples layout with one panel \
         per category keeps each trend readable without overlapping lines. Finally, make sure the axis starts \
         at zero for bars and that the units are stated in the axis title.",
        "For the colours, use a sequential palette if the values are ordered and a categorical palette with \
         no more than six hues otherwise. Check the palette with a colour-blindness simulator and keep enough \
         contrast against the background. You can use a tool such as ColorBrewer to choose the palette. \
         Use the same colour for the same category across all your charts so readers do not have to relearn \
         the mapping. Let me know if you want me to suggest specific hex values.",
        "You're welcome. Good luck with the next version of your chart.",
    ];
    replies[n.min(replies.len() - 1)].to_string()
}

struct TranscriptTurn {
    index: usize,
    mentee: bool,
    text: String,
}

fn parse_transcript(text: &str) -> Vec<TranscriptTurn> {
    let mut out: Vec<TranscriptTurn> = Vec::new();
    for line in text.lines() {
        let parsed = line.strip_prefix('[').and_then(|rest| {
            let (idx, rest) = rest.split_once("] ")?;
            let idx: usize = idx.parse().ok()?;
            let (who, body) = rest.split_once(": ")?;
            match who {
                "MENTEE" => Some((idx, true, body)),
                "MENTOR" => Some((idx, false, body)),
                _ => None,
            }
        });
        match parsed {
            Some((index, mentee, body)) => out.push(TranscriptTurn {
                index,
                mentee,
                text: body.to_string(),
            }),
            None => {
                if let Some(last) = out.last_mut() {
                    last.text.push('\n');
                    last.text.push_str(line);
                }
            }
        }
    }
    out
}

fn latest(turns: &[TranscriptTurn], mentee: bool, pred: impl Fn(&str) -> bool) -> Option<usize> {
    turns
        .iter()
        .rev()
        .find(|t| t.mentee == mentee && pred(&t.text))
        .map(|t| t.index)
}

fn judge_goal(request: &ChatRequest) -> String {
    let turns = parse_transcript(last_user(request));
    let goal = request.meta("goal_id").unwrap_or("");
    let has_label = |s: Strategy| move |t: &str| labels::distinct_labels(t).contains(&s);
    let evidence = match goal {
        "p1_clarify.1" => latest(&turns, false, |t| {
            has_label(Strategy::Scoping)(t) && !labels::numbered_items(t).is_empty()
        }),
        "p1_clarify.2" => latest(&turns, true, |t| contains_any(t, &["because", "audience", "so that", "goal"])),
        "p1_clarify.3" => latest(&turns, true, |t| t.contains('?')),
        "p2_diagnose.1" => latest(&turns, false, |t| {
            has_label(Strategy::Scaffolding)(t) || has_label(Strategy::Modeling)(t)
        }),
        "p2_diagnose.2" => latest(&turns, true, |t| {
            contains_any(t, &["makes sense", "i see", "understand", "got it", "that helps"])
        }),
        "p2_diagnose.3" => latest(&turns, true, |t| contains_any(t, &["i could", "i think", "maybe i", "i'll", "i will", "i might"])),
        "p3_reflect.1" => latest(&turns, true, |t| contains_any(t, &["my plan", "first", "i will", "i'll"])),
        "p3_reflect.2" => latest(&turns, true, |t| contains_any(t, &["learned", "realize", "next time", "reflect"])),
        _ => None,
    };
    match evidence {
        Some(i) => format!("SATISFIED {i}"),
        None => "UNSATISFIED".to_string(),
    }
}

fn judge_question(request: &ChatRequest) -> String {
    let turns = parse_transcript(last_user(request));
    let last_mentee = turns.iter().rev().find(|t| t.mentee);
    match last_mentee {
        Some(t) if contains_any(&t.text, &["move on", "next question", "that's enough", "covered"]) => {
            format!("RESOLVED {}", t.index)
        }
        _ => "UNRESOLVED".to_string(),
    }
}

fn after_header<'a>(text: &'a str, header: &str) -> &'a str {
    text.find(header).map(|i| &text[i + header.len()..]).unwrap_or(text)
}

fn annotate_strategies(request: &ChatRequest) -> String {
    let body = after_header(last_user(request), "Mentor turn:\n");
    let mut strategies: Vec<StrategyTag> = labels::strategy_tags(body);
    if strategies.is_empty() {
        let questions = body.matches('?').count();
        let numbered = labels::numbered_items(body).len();
        if numbered > 0 && contains_any(body, &["your questions", "my understanding"]) {
            strategies.push(StrategyTag::plain(Strategy::Scoping));
        } else if numbered > 0 || contains_any(body, &["consider", "you could", "use ", "add "]) {
            strategies.push(StrategyTag::plain(Strategy::Modeling));
        } else if questions > 0 {
            strategies.push(StrategyTag::plain(Strategy::Coaching));
        }
    }
    let lower = body.to_lowercase();
    let first = labels::sentences(body)
        .into_iter()
        .filter(|s| labels::bracket_labels(s).is_empty() || s.len() > 20)
        .take(2)
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    let mut behaviors = Vec::new();
    if ["great", "nice", "good start", "well done"].iter().any(|c| first.contains(c)) {
        behaviors.push(BehaviorTag::Affirm);
    }
    if ["right track", "don't worry", "common"].iter().any(|c| first.contains(c)) {
        behaviors.push(BehaviorTag::Support);
    }
    if let Some(last) = labels::sentences(body).last() {
        let l = last.to_lowercase();
        if l.ends_with('?') && ["does that", "is that", "match", "make sense"].iter().any(|c| l.contains(c)) {
            behaviors.push(BehaviorTag::Confirm);
        }
    }
    let mut principles = Vec::new();
    for (emoji, tag) in [("💭", PrincipleTag::Verbalize), ("🧭", PrincipleTag::Generalize), ("🌍", PrincipleTag::Exemplify)] {
        if body.contains(emoji) {
            principles.push(tag);
        }
    }
    if principles.is_empty() && lower.contains("for example") {
        principles.push(PrincipleTag::Exemplify);
    }
    let join = |v: Vec<String>| if v.is_empty() { "NONE".to_string() } else { v.join(", ") };
    format!(
        "STRATEGIES: {}\nBEHAVIORS: {}\nPRINCIPLES: {}",
        join(strategies.iter().map(|s| s.to_string()).collect()),
        join(behaviors.iter().map(|s| s.to_string()).collect()),
        join(principles.iter().map(|s| s.to_string()).collect()),
    )
}

fn annotate_act(request: &ChatRequest) -> String {
    let msg = after_header(last_user(request), "Message to classify:\nMENTEE: ").trim();
    let mentor_asked = request.meta("mentor_asked") == Some("true");
    let lower = msg.to_lowercase();
    let act = if ["okay", "ok,", "sure", "sounds good", "let's try", "yes, that's right", "i'll try"]
        .iter()
        .any(|c| lower.starts_with(c))
    {
        "Accept"
    } else if msg.ends_with('?') || lower.starts_with("can you") || lower.starts_with("could you") {
        "InfoRequest"
    } else if lower.starts_with("let's start") || lower.starts_with("thanks") || lower.starts_with("hello") {
        "Other"
    } else if mentor_asked {
        "Answer"
    } else if ["i think", "i feel", "i like", "i prefer"].iter().any(|c| lower.contains(c)) {
        "StatementOpinion"
    } else {
        "StatementInform"
    };
    act.to_string()
}

const LEVEL_CUES: [(&str, &[&str]); 4] = [
    ("AlgorithmDesign", &["library", "d3", "python", "performance", "algorithm", "render", "code", "tool such as"]),
    ("DomainProblem", &["audience", "stakeholder", "takeaway", "purpose", "story", "decision"]),
    ("DataTaskAbstraction", &["metric", "aggregate", "normalize", "average", "rate", "time points", "units"]),
    ("EncodingInteraction", &["colour", "color", "bar", "label", "legend", "axis", "sort", "layout", "palette", "annotation", "gridline", "title", "chart"]),
];

fn annotate_levels(request: &ChatRequest) -> String {
    let body = after_header(last_user(request), "Mentor message:\n");
    let mut lines = Vec::new();
    for s in labels::sentences(body) {
        let s = s.trim_start_matches(|c: char| c.is_ascii_digit() || c == '.' || c == ' ');
        if s.ends_with('?') || s.contains("Current question") {
            continue;
        }
        let lower = s.to_lowercase();
        let suggestion = ["use ", "sort ", "add ", "remove ", "simplify", "consider", "switch", "keep ", "make sure", "check ", "let position"]
            .iter()
            .any(|c| lower.contains(c));
        if !suggestion {
            continue;
        }
        if let Some((level, _)) = LEVEL_CUES.iter().find(|(_, cues)| cues.iter().any(|c| lower.contains(c))) {
            lines.push(format!("{level} | {}", s.trim()));
        }
    }
    if lines.is_empty() {
        "NONE".to_string()
    } else {
        lines.join("\n")
    }
}

fn system_field<'a>(request: &'a ChatRequest, key: &str) -> Option<&'a str> {
    let system = request.messages.iter().find(|m| m.role == MessageRole::System)?;
    system
        .content
        .lines()
        .find_map(|l| l.strip_prefix(key))
        .map(str::trim)
}

fn mentee_reply(request: &ChatRequest) -> String {
    let mentor = last_user(request);
    let scenario = system_field(request, "Scenario:").unwrap_or("");
    let audience = system_field(request, "Audience:").unwrap_or("my colleagues");
    let constraint = system_field(request, "Constraint:").unwrap_or("it has to fit on a single slide");
    let used = labels::distinct_labels(mentor);
    let first = used.first().copied();
    let questions: Vec<String> = labels::sentences(scenario)
        .into_iter()
        .filter(|s| s.ends_with('?'))
        .collect();
    match first {
        Some(Strategy::Articulating) => {
            let qs = if questions.is_empty() {
                "Is the chart easy to read?".to_string()
            } else {
                questions.join(" ")
            };
            format!(
                "The chart is for {audience}, because they need to compare the groups quickly. \
                 I have a couple of questions. {qs}"
            )
        }
        Some(Strategy::Bounding) => format!("The main constraint is that {constraint}, and I'd like to keep the same dataset."),
        Some(Strategy::Scoping) => "Yes, that's right.".to_string(),
        Some(Strategy::Coaching) => "I think readers notice the bright colours first, not the comparison I care about. Maybe I could tone the colours down.".to_string(),
        Some(Strategy::Scaffolding) => "I see, that makes sense. I could sort the categories and keep one accent colour.".to_string(),
        Some(Strategy::Modeling) => "That helps, I understand the idea now. Let's move on to the next question.".to_string(),
        Some(Strategy::Exploring) => "My plan is to first sort the bars and then try a version with direct labels.".to_string(),
        Some(Strategy::Reflecting) => "I learned that I should start from what my audience needs to compare, and next time I will sketch that first.".to_string(),
        _ => {
            let n = by_role(request, MessageRole::User).len();
            match n {
                0 | 1 => "Thanks. Can you explain why that would work better for my audience?".to_string(),
                2 => "Okay, I'll try that. What should I do about the colours?".to_string(),
                3 => "Thanks, that's helpful.".to_string(),
                _ => String::new(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(purpose: &str, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest::new(SIMULATED_MODEL, messages).tag("purpose", purpose)
    }

    #[test]
    fn goal_judge_reads_transcript() {
        let r = req(
            "judge-goal",
            vec![
                ChatMessage::system("judge"),
                ChatMessage::user("Transcript:\n[1] MENTEE: hi\n[2] MENTOR: [Articulating] who?\n[3] MENTEE: Is the colour right?"),
            ],
        )
        .tag("goal_id", "p1_clarify.3");
        assert_eq!(SimulatedProvider.complete(&r).unwrap().content, "SATISFIED 3");
        let r = r.tag("goal_id", "p1_clarify.1");
        assert_eq!(SimulatedProvider.complete(&r).unwrap().content, "UNSATISFIED");
    }

    #[test]
    fn unknown_purpose_is_an_error() {
        let r = req("dance", vec![ChatMessage::user("x")]);
        assert!(SimulatedProvider.complete(&r).is_err());
    }

    #[test]
    fn scoping_lists_mentee_questions() {
        let r = req(
            "mentor",
            vec![
                ChatMessage::system("sys"),
                ChatMessage::user("Hi."),
                ChatMessage::assistant("[Articulating] who is it for?"),
                ChatMessage::user("Managers. Does the colour work? Is the layout clear?"),
                ChatMessage::assistant("[Bounding] constraints?"),
                ChatMessage::user("One slide."),
            ],
        )
        .tag("phase", "p1_clarify");
        let out = SimulatedProvider.complete(&r).unwrap().content;
        assert_eq!(labels::numbered_items(&out), vec!["Does the colour work?", "Is the layout clear?"]);
    }
}
