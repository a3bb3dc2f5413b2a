//! Task decomposition: few-shot prompt assembly and action-list parsing.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::RetrievalExample;
use crate::embed::EmbeddingProvider;
pub use crate::llm::PromptMessages;
use crate::llm::{LlmClient, LlmError, LlmExchange};
use crate::retrieve::{RetrievalIndex, RetrieveError};

pub const DEFAULT_DECOMPOSE_TEMPLATE: &str = include_str!("../templates/decompose.txt");

/// Shots used when no count is given.
pub const DEFAULT_SHOTS: usize = 1;
/// Shot count for the N-shot variant.
pub const DEFAULT_N_SHOTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Tap,
    LongTap,
    Input,
    Swipe,
    Back,
    Scroll,
}

impl ActionKind {
    pub const ALL: [ActionKind; 6] = [
        ActionKind::Tap,
        ActionKind::LongTap,
        ActionKind::Input,
        ActionKind::Swipe,
        ActionKind::Back,
        ActionKind::Scroll,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Tap => "tap",
            ActionKind::LongTap => "long_tap",
            ActionKind::Input => "input",
            ActionKind::Swipe => "swipe",
            ActionKind::Back => "back",
            ActionKind::Scroll => "scroll",
        }
    }

    fn takes_direction(self) -> bool {
        matches!(self, ActionKind::Swipe | ActionKind::Scroll)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionKind {
    type Err = String;

    /// Case-insensitive; `long tap` and `long-tap` are accepted for `long_tap`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_lowercase().replace([' ', '-'], "_");
        ActionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == key)
            .ok_or_else(|| s.trim().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_lowercase();
        Direction::ALL
            .into_iter()
            .find(|d| d.as_str() == key)
            .ok_or_else(|| s.to_string())
    }
}

/// One executable action of a plan.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionStep {
    /// 1-based position in the plan.
    pub index: usize,
    pub kind: ActionKind,
    /// Empty only for `back`.
    pub target_phrase: String,
    /// Present exactly for `input`.
    pub value: Option<String>,
    pub direction: Option<Direction>,
}

impl ActionStep {
    pub fn tap(index: usize, target: &str) -> Self {
        Self::simple(index, ActionKind::Tap, target)
    }

    pub fn long_tap(index: usize, target: &str) -> Self {
        Self::simple(index, ActionKind::LongTap, target)
    }

    pub fn input(index: usize, target: &str, value: &str) -> Self {
        Self {
            value: Some(value.to_string()),
            ..Self::simple(index, ActionKind::Input, target)
        }
    }

    pub fn back(index: usize) -> Self {
        Self::simple(index, ActionKind::Back, "")
    }

    fn simple(index: usize, kind: ActionKind, target: &str) -> Self {
        Self {
            index,
            kind,
            target_phrase: target.to_string(),
            value: None,
            direction: None,
        }
    }

    /// Checks the per-kind field rules.
    pub fn validate(&self) -> Result<(), String> {
        if self.kind == ActionKind::Back {
            if !self.target_phrase.is_empty() {
                return Err("back takes no target".into());
            }
        } else if self.target_phrase.trim().is_empty() {
            return Err(format!("{} needs a target", self.kind));
        }
        match (self.kind, &self.value) {
            (ActionKind::Input, None) => return Err("input needs a value".into()),
            (k, Some(_)) if k != ActionKind::Input => {
                return Err(format!("{k} does not take a value"))
            }
            _ => {}
        }
        if self.direction.is_some() && !self.kind.takes_direction() {
            return Err(format!("{} does not take a direction", self.kind));
        }
        Ok(())
    }
}

impl fmt::Display for ActionStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}. [{}]", self.index, self.kind)?;
        if !(self.kind == ActionKind::Back && self.target_phrase.is_empty()) {
            write!(f, " [{}]", self.target_phrase)?;
        }
        if let Some(value) = &self.value {
            write!(f, " [{value}]")?;
        }
        if let Some(direction) = self.direction {
            write!(f, " [{}]", direction.as_str())?;
        }
        Ok(())
    }
}

/// Example-store form of a step: `{"action", "target", "value"?, "direction"?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub action: String,
    #[serde(default)]
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<String>,
}

impl StepRecord {
    pub fn into_step(self, index: usize) -> Result<ActionStep, String> {
        let kind: ActionKind = self
            .action
            .parse()
            .map_err(|k| format!("unknown action kind {k:?}"))?;
        let direction = self
            .direction
            .map(|d| d.parse::<Direction>().map_err(|d| format!("unknown direction {d:?}")))
            .transpose()?;
        let step = ActionStep {
            index,
            kind,
            target_phrase: self.target.trim().to_string(),
            value: self.value,
            direction,
        };
        step.validate()?;
        Ok(step)
    }

    pub fn from_step(step: &ActionStep) -> Self {
        Self {
            action: step.kind.as_str().to_string(),
            target: step.target_phrase.clone(),
            value: step.value.clone(),
            direction: step.direction.map(|d| d.as_str().to_string()),
        }
    }
}

/// Renders a plan on one line: `1. [tap] [me] 2. [tap] [settings]`.
pub fn format_plan(steps: &[ActionStep]) -> String {
    steps
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("completion is empty")]
    EmptyCompletion,
    #[error("malformed step at byte {position}: {text:?}")]
    MalformedStep { position: usize, text: String },
    #[error("unknown action kind {0:?}")]
    UnknownActionKind(String),
    #[error("step numbered {found} where {expected} was expected")]
    NonContiguousNumbering { expected: usize, found: usize },
}

/// Steps parsed from a completion plus any prose around the list.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedPlan {
    pub steps: Vec<ActionStep>,
    pub discarded: Vec<String>,
}

fn step_head() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d+)\s*\.").unwrap())
}

fn list_start() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)(?:^|\s)(\d+)\s*\.\s*\[").unwrap())
}

fn bracket() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[ \t\r]*\[([^\[\]\n]*)\]").unwrap())
}

fn snippet(text: &str) -> String {
    text.trim().chars().take(60).collect()
}

/// Parses a numbered list of bracketed actions such as
/// `1. [tap] [me] 2. [input] [username] [TEST]`.
pub fn parse_actions(completion: &str) -> Result<Vec<ActionStep>, ParseError> {
    parse_plan(completion).map(|p| p.steps)
}

/// Like [`parse_actions`], also returning text before and after the first
/// well-formed numbered list.
pub fn parse_plan(completion: &str) -> Result<ParsedPlan, ParseError> {
    if completion.trim().is_empty() {
        return Err(ParseError::EmptyCompletion);
    }
    let Some(start) = list_start().captures(completion) else {
        return Err(ParseError::MalformedStep {
            position: 0,
            text: snippet(completion),
        });
    };
    let start = start.get(1).expect("group").start();
    let mut plan = ParsedPlan::default();
    if !completion[..start].trim().is_empty() {
        plan.discarded.push(completion[..start].trim().to_string());
    }

    let mut pos = start;
    loop {
        let rest = &completion[pos..];
        let Some(head) = step_head().captures(rest) else {
            if !rest.trim().is_empty() {
                plan.discarded.push(rest.trim().to_string());
            }
            break;
        };
        let step_pos = pos + head.get(1).expect("group").start();
        let number: usize = head[1].parse().map_err(|_| ParseError::MalformedStep {
            position: step_pos,
            text: snippet(rest),
        })?;
        let mut cursor = pos + head.get(0).expect("match").end();
        let mut parts = Vec::new();
        while let Some(m) = bracket().captures(&completion[cursor..]) {
            parts.push(m[1].trim().to_string());
            cursor += m.get(0).expect("match").end();
        }
        let expected = plan.steps.len() + 1;
        if number != expected {
            return Err(ParseError::NonContiguousNumbering {
                expected,
                found: number,
            });
        }
        let malformed = || ParseError::MalformedStep {
            position: step_pos,
            text: snippet(&completion[step_pos..cursor.max(step_pos + 1).min(completion.len())]),
        };
        let step = build_step(number, &parts, malformed)?;
        plan.steps.push(step);
        pos = cursor;
    }
    Ok(plan)
}

fn build_step(
    index: usize,
    parts: &[String],
    malformed: impl Fn() -> ParseError,
) -> Result<ActionStep, ParseError> {
    let (kind_raw, args) = parts.split_first().ok_or_else(&malformed)?;
    let kind: ActionKind = kind_raw
        .parse()
        .map_err(ParseError::UnknownActionKind)?;
    let mut step = ActionStep::simple(index, kind, "");
    match (kind, args) {
        (ActionKind::Back, []) => {}
        (ActionKind::Back, [t]) if t.is_empty() => {}
        (ActionKind::Tap | ActionKind::LongTap, [target]) => step.target_phrase = target.clone(),
        (ActionKind::Input, [target, value]) => {
            step.target_phrase = target.clone();
            step.value = Some(value.clone());
        }
        (ActionKind::Swipe | ActionKind::Scroll, [target]) => step.target_phrase = target.clone(),
        (ActionKind::Swipe | ActionKind::Scroll, [target, direction]) => {
            step.target_phrase = target.clone();
            step.direction = Some(direction.parse().map_err(|_| malformed())?);
        }
        _ => return Err(malformed()),
    }
    step.validate().map_err(|_| malformed())?;
    Ok(step)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("cannot read template {path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("template is missing the {0} placeholder")]
    MissingPlaceholder(&'static str),
}

/// Text with `{name}` placeholders, substituted in a single pass so that
/// substituted values are never re-expanded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn new(
        text: impl Into<String>,
        required: &[&'static str],
    ) -> Result<Self, TemplateError> {
        let text = text.into();
        for name in required {
            if !text.contains(name) {
                return Err(TemplateError::MissingPlaceholder(name));
            }
        }
        Ok(Self { text })
    }

    pub fn decomposition() -> Self {
        Self::new(DEFAULT_DECOMPOSE_TEMPLATE, &["{task}", "{examples}"]).expect("bundled template")
    }

    pub fn load_decomposition(path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TemplateError::Unreadable {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::new(text, &["{task}", "{examples}"])
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.text.len() + 256);
        let mut rest = self.text.as_str();
        'outer: while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let tail = &rest[open..];
            for (name, value) in values {
                let token_len = name.len() + 2;
                if tail.len() >= token_len
                    && tail[1..].starts_with(name)
                    && tail[1 + name.len()..].starts_with('}')
                {
                    out.push_str(value);
                    rest = &tail[token_len..];
                    continue 'outer;
                }
            }
            out.push('{');
            rest = &tail[1..];
        }
        out.push_str(rest);
        out
    }
}

/// One example block as shown to the model.
pub fn format_example_block(example: &RetrievalExample) -> String {
    format!(
        "Here is an example:\n  Task description -> \"{}\"\n  Actions -> {}\n",
        example.description.trim(),
        format_plan(&example.steps)
    )
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecomposeError {
    #[error("task description is empty")]
    EmptyTask,
    #[error("shots requested but no retrieval index configured")]
    NoIndex,
    #[error("retrieval: {0}")]
    Retrieval(#[from] RetrieveError),
    #[error("llm: {0}")]
    Llm(#[from] LlmError),
    #[error("parse: {error}")]
    Parse {
        error: ParseError,
        exchange: Box<LlmExchange>,
    },
}

impl DecomposeError {
    /// The paid exchange, when the failure happened after the LLM answered.
    pub fn exchange(&self) -> Option<&LlmExchange> {
        match self {
            DecomposeError::Parse { exchange, .. } => Some(exchange),
            _ => None,
        }
    }
}

pub fn build_decomposition_prompt(
    task: &str,
    shots: &[RetrievalExample],
    template: &PromptTemplate,
) -> Result<PromptMessages, DecomposeError> {
    let task = task.trim();
    if task.is_empty() {
        return Err(DecomposeError::EmptyTask);
    }
    let examples: String = shots.iter().map(format_example_block).collect();
    let body = template.render(&[("examples", &examples), ("task", task)]);
    Ok(PromptMessages::user(body.trim_end()))
}

/// Retrieval-backed shot source for [`decompose`].
#[derive(Clone, Copy)]
pub struct ShotRetriever<'a> {
    pub index: &'a RetrievalIndex,
    pub provider: &'a dyn EmbeddingProvider,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub steps: Vec<ActionStep>,
    pub exchange: LlmExchange,
    /// Ids of the examples placed in the prompt, in rank order.
    pub shot_ids: Vec<String>,
    pub discarded: Vec<String>,
}

/// Retrieves `shots_k` examples, prompts the model once, and parses its plan.
pub fn decompose(
    task: &str,
    retriever: Option<ShotRetriever<'_>>,
    llm: &dyn LlmClient,
    shots_k: usize,
    template: &PromptTemplate,
) -> Result<Decomposition, DecomposeError> {
    if task.trim().is_empty() {
        return Err(DecomposeError::EmptyTask);
    }
    let shots: Vec<RetrievalExample> = if shots_k == 0 {
        Vec::new()
    } else {
        let r = retriever.ok_or(DecomposeError::NoIndex)?;
        r.index
            .top_k(task, shots_k, r.provider)?
            .into_iter()
            .map(|ranked| ranked.example)
            .collect()
    };
    let prompt = build_decomposition_prompt(task, &shots, template)?;
    let exchange = llm.complete(&prompt)?;
    match parse_plan(&exchange.completion_text) {
        Ok(plan) => Ok(Decomposition {
            steps: plan.steps,
            exchange,
            shot_ids: shots.into_iter().map(|s| s.id).collect(),
            discarded: plan.discarded,
        }),
        Err(error) => Err(DecomposeError::Parse {
            error,
            exchange: Box::new(exchange),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_settings() -> RetrievalExample {
        RetrievalExample {
            id: "ex1".into(),
            description: "open settings".into(),
            activity: "Settings".into(),
            steps: vec![ActionStep::tap(1, "me"), ActionStep::tap(2, "settings")],
            expect_screen: None,
        }
    }

    #[test]
    fn parses_the_literal_two_tap_plan() {
        let steps = parse_actions("1. [tap] [me] 2. [tap] [settings]").unwrap();
        assert_eq!(steps, vec![ActionStep::tap(1, "me"), ActionStep::tap(2, "settings")]);
    }

    #[test]
    fn parses_input_value_and_direction() {
        let steps =
            parse_actions("1. [input] [username] [TEST]\n2. [swipe] [feed] [down]\n3. [back]")
                .unwrap();
        assert_eq!(steps[0], ActionStep::input(1, "username", "TEST"));
        assert_eq!(steps[1].direction, Some(Direction::Down));
        assert_eq!(steps[2], ActionStep::back(3));
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse_actions(""), Err(ParseError::EmptyCompletion));
        assert_eq!(parse_actions("  \n "), Err(ParseError::EmptyCompletion));
        assert!(matches!(
            parse_actions("I would tap settings"),
            Err(ParseError::MalformedStep { position: 0, .. })
        ));
        assert_eq!(
            parse_actions("1. [click] [me]"),
            Err(ParseError::UnknownActionKind("click".into()))
        );
        assert_eq!(
            parse_actions("1. [tap] [me] 3. [tap] [x]"),
            Err(ParseError::NonContiguousNumbering { expected: 2, found: 3 })
        );
        assert!(matches!(
            parse_actions("1. [tap] [me] 2. tap settings"),
            Err(ParseError::MalformedStep { .. })
        ));
        assert!(matches!(
            parse_actions("1. [input] [username]"),
            Err(ParseError::MalformedStep { .. })
        ));
        assert!(matches!(
            parse_actions("1. [tap]"),
            Err(ParseError::MalformedStep { .. })
        ));
        assert!(matches!(
            parse_actions("1. [swipe] [list] [sideways]"),
            Err(ParseError::MalformedStep { .. })
        ));
    }

    #[test]
    fn surrounding_prose_is_discarded_and_recorded() {
        let plan = parse_plan(
            "Sure! Here are the actions:\n1. [tap] [me]\n2. [tap] [settings] ...\nHope it helps.",
        )
        .unwrap();
        assert_eq!(plan.steps.len(), 2);
        assert_eq!(plan.discarded[0], "Sure! Here are the actions:");
        assert_eq!(plan.discarded[1], "...\nHope it helps.");
    }

    #[test]
    fn kind_aliases() {
        assert_eq!("Long Tap".parse::<ActionKind>(), Ok(ActionKind::LongTap));
        assert_eq!("long-tap".parse::<ActionKind>(), Ok(ActionKind::LongTap));
        assert!("press".parse::<ActionKind>().is_err());
    }

    #[test]
    fn one_shot_prompt_layout() {
        let prompt = build_decomposition_prompt(
            "change username to TEST",
            &[open_settings()],
            &PromptTemplate::decomposition(),
        )
        .unwrap();
        let text = prompt.text();
        assert!(text.starts_with("I want you to act as a professional developer."));
        assert!(text.contains(
            "Here is an example:\n  Task description -> \"open settings\"\n  Actions -> 1. [tap] [me] 2. [tap] [settings]\n"
        ));
        assert!(text.ends_with(
            "Here is the testing task:\n  Task description -> \"change username to TEST\"\n  Actions ->"
        ));
        assert_eq!(prompt.messages().len(), 1);
    }

    #[test]
    fn zero_and_two_shot_prompts() {
        let template = PromptTemplate::decomposition();
        let zero = build_decomposition_prompt("open settings", &[], &template).unwrap();
        assert!(!zero.text().contains("Here is an example:"));
        assert!(zero.text().contains("Here is the testing task:"));

        let mut second = open_settings();
        second.description = "delete all events".into();
        let two = build_decomposition_prompt("x", &[open_settings(), second], &template).unwrap();
        let text = two.text();
        assert_eq!(text.matches("Here is an example:").count(), 2);
        assert!(text.find("open settings").unwrap() < text.find("delete all events").unwrap());
        assert_eq!(
            build_decomposition_prompt(" ", &[], &template),
            Err(DecomposeError::EmptyTask)
        );
    }

    #[test]
    fn template_substitution_is_single_pass() {
        let t = PromptTemplate::new("A {task} B {examples} {other}", &["{task}"]).unwrap();
        assert_eq!(
            t.render(&[("task", "{examples}"), ("examples", "E")]),
            "A {examples} B E {other}"
        );
        assert_eq!(
            PromptTemplate::new("no placeholders", &["{task}"]),
            Err(TemplateError::MissingPlaceholder("{task}"))
        );
    }

    #[test]
    fn step_record_validation() {
        let rec = |action: &str, target: &str, value: Option<&str>| StepRecord {
            action: action.into(),
            target: target.into(),
            value: value.map(String::from),
            direction: None,
        };
        assert!(rec("input", "name", None).into_step(1).is_err());
        assert!(rec("back", "x", None).into_step(1).is_err());
        assert!(rec("tap", "", None).into_step(1).is_err());
        assert!(rec("tap", "x", Some("v")).into_step(1).is_err());
        assert!(rec("jump", "x", None).into_step(1).is_err());
        assert_eq!(
            rec("input", "name", Some("TEST")).into_step(4).unwrap(),
            ActionStep::input(4, "name", "TEST")
        );
    }
}
