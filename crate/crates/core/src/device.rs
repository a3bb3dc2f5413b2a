//! Device sessions: capture the current screen, perform one action.
//!
//! Two drivers ship here. [`SimulatedDevice`] walks a declarative app model
//! (screens plus a transition table) and needs nothing outside the process.
//! [`CommandDevice`] shells out to configured command templates, which is how
//! a real device is driven (for Android: `adb` and `uiautomator dump`).

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decompose::{ActionKind, ActionStep, Direction};
use crate::embed::{normalize_text, resource_id_suffix};
use crate::hierarchy::{HierarchyError, HierarchyNode, UIElement, UIScreen};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("session is closed")]
    SessionClosed,
    #[error("screen capture failed: {0}")]
    CaptureFailed(String),
    #[error("no transition from {screen:?} for {kind} on element {element}")]
    NoTransition {
        screen: String,
        element: String,
        kind: ActionKind,
    },
    #[error("device command failed: {0}")]
    CommandFailed(String),
    #[error("element {0} does not come from the latest capture")]
    StaleElement(usize),
    #[error("{0} needs a target element")]
    MissingElement(ActionKind),
    #[error("malformed app model: {0}")]
    MalformedModel(String),
    #[error("transition {from:?} -> {to:?} references an unknown screen")]
    DanglingTransition { from: String, to: String },
    #[error("element_match {pattern:?} matches {count} elements on screen {screen:?}")]
    AmbiguousElementMatch {
        screen: String,
        pattern: String,
        count: usize,
    },
}

impl From<HierarchyError> for DeviceError {
    fn from(e: HierarchyError) -> Self {
        DeviceError::CaptureFailed(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerformResult {
    pub screen_changed: bool,
}

pub trait DeviceSession: Send {
    fn session_id(&self) -> &str;
    fn capture_screen(&mut self) -> Result<UIScreen, DeviceError>;
    /// `element` must come from the latest capture; it may be `None` only
    /// for `back`.
    fn perform(
        &mut self,
        element: Option<&UIElement>,
        step: &ActionStep,
    ) -> Result<PerformResult, DeviceError>;
    fn close(&mut self);
}

/// Opens independent sessions, one per task run.
pub trait DeviceFactory: Send + Sync {
    fn open(&self) -> Result<Box<dyn DeviceSession>, DeviceError>;
}

static SESSION_COUNTER: AtomicU64 = AtomicU64::new(0);

fn next_session_id(prefix: &str) -> String {
    format!("{prefix}-{}", SESSION_COUNTER.fetch_add(1, Ordering::Relaxed))
}

// ---------------------------------------------------------------------------
// App model

/// Inline node of an app-model screen; rendered with UIAutomator attribute
/// names so both drivers yield the same [`UIScreen`] shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub class: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub text: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub desc: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub id: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub clickable: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub long_clickable: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub editable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<NodeSpec>,
}

impl NodeSpec {
    pub fn render(&self) -> HierarchyNode {
        let mut node = HierarchyNode::new(self.class.clone())
            .with_attr("class", self.class.clone())
            .with_attr("text", self.text.clone())
            .with_attr("content-desc", self.desc.clone())
            .with_attr("resource-id", self.id.clone())
            .with_attr("clickable", self.clickable.to_string())
            .with_attr("long-clickable", self.long_clickable.to_string());
        if self.editable {
            node = node.with_attr("editable", "true");
        }
        if let Some(bounds) = &self.bounds {
            node = node.with_attr("bounds", bounds.clone());
        }
        node.children = self.children.iter().map(NodeSpec::render).collect();
        node
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreenSpec {
    pub hierarchy: NodeSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub from: String,
    pub element_match: String,
    pub action: ActionKind,
    /// Literal value or `*`; only meaningful for `input`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_pattern: Option<String>,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AppModelFile {
    #[serde(default)]
    name: String,
    initial_screen: String,
    screens: BTreeMap<String, ScreenSpec>,
    transitions: Vec<Transition>,
}

/// Validated app model with every screen pre-rendered.
#[derive(Debug, Clone, PartialEq)]
pub struct AppModel {
    pub name: String,
    pub initial_screen: String,
    pub screens: BTreeMap<String, ScreenSpec>,
    pub transitions: Vec<Transition>,
    rendered: BTreeMap<String, UIScreen>,
    /// Element id each transition's `element_match` resolves to.
    resolved: Vec<usize>,
}

/// Element whose text, description, id suffix or full resource id equals
/// `pattern` after normalization.
pub fn element_matches(element: &UIElement, pattern: &str) -> bool {
    let needle = normalize_text(pattern);
    [
        element.text.as_str(),
        element.content_desc.as_str(),
        resource_id_suffix(&element.resource_id),
        element.resource_id.as_str(),
    ]
    .iter()
    .any(|f| !f.trim().is_empty() && normalize_text(f) == needle)
}

impl AppModel {
    pub fn from_json(text: &str) -> Result<Self, DeviceError> {
        let file: AppModelFile =
            serde_json::from_str(text).map_err(|e| DeviceError::MalformedModel(e.to_string()))?;
        Self::validate(file)
    }

    fn validate(file: AppModelFile) -> Result<Self, DeviceError> {
        if !file.screens.contains_key(&file.initial_screen) {
            return Err(DeviceError::MalformedModel(format!(
                "initial screen {:?} is not defined",
                file.initial_screen
            )));
        }
        let rendered: BTreeMap<String, UIScreen> = file
            .screens
            .iter()
            .map(|(id, spec)| (id.clone(), UIScreen::from_root(id.clone(), spec.hierarchy.render())))
            .collect();
        let mut resolved = Vec::with_capacity(file.transitions.len());
        for t in &file.transitions {
            let (Some(from), true) = (rendered.get(&t.from), rendered.contains_key(&t.to)) else {
                return Err(DeviceError::DanglingTransition {
                    from: t.from.clone(),
                    to: t.to.clone(),
                });
            };
            if t.input_pattern.is_some() && t.action != ActionKind::Input {
                return Err(DeviceError::MalformedModel(format!(
                    "input_pattern on a {} transition from {:?}",
                    t.action, t.from
                )));
            }
            if t.action == ActionKind::Back {
                return Err(DeviceError::MalformedModel(
                    "back is handled by the navigation stack, not transitions".into(),
                ));
            }
            let hits: Vec<usize> = from
                .elements
                .iter()
                .filter(|e| element_matches(e, &t.element_match))
                .map(|e| e.element_id)
                .collect();
            match hits.as_slice() {
                [one] => resolved.push(*one),
                [] => {
                    return Err(DeviceError::MalformedModel(format!(
                        "element_match {:?} matches nothing on {:?}",
                        t.element_match, t.from
                    )))
                }
                many => {
                    return Err(DeviceError::AmbiguousElementMatch {
                        screen: t.from.clone(),
                        pattern: t.element_match.clone(),
                        count: many.len(),
                    })
                }
            }
        }
        Ok(Self {
            name: file.name,
            initial_screen: file.initial_screen,
            screens: file.screens,
            transitions: file.transitions,
            rendered,
            resolved,
        })
    }

    pub fn screen(&self, id: &str) -> Option<&UIScreen> {
        self.rendered.get(id)
    }

    fn find_transition(&self, from: &str, element_id: usize, step: &ActionStep) -> Option<&Transition> {
        self.transitions
            .iter()
            .zip(&self.resolved)
            .find(|(t, &resolved)| {
                t.from == from
                    && resolved == element_id
                    && t.action == step.kind
                    && match (&t.input_pattern, &step.value) {
                        (None, _) => true,
                        (Some(p), _) if p == "*" => true,
                        (Some(p), Some(v)) => p == v,
                        (Some(_), None) => false,
                    }
            })
            .map(|(t, _)| t)
    }
}

pub fn load_app_model(path: impl AsRef<Path>) -> Result<AppModel, DeviceError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| DeviceError::MalformedModel(format!("{}: {e}", path.display())))?;
    AppModel::from_json(&text)
}

// ---------------------------------------------------------------------------
// Simulated driver

#[derive(Debug, Clone)]
pub struct SimulatedDevice {
    model: Arc<AppModel>,
}

impl SimulatedDevice {
    pub fn new(model: AppModel) -> Self {
        Self {
            model: Arc::new(model),
        }
    }

    pub fn model(&self) -> &AppModel {
        &self.model
    }

    pub fn session(&self) -> SimulatedSession {
        SimulatedSession {
            id: next_session_id("sim"),
            model: self.model.clone(),
            current: self.model.initial_screen.clone(),
            back_stack: Vec::new(),
            last_capture: None,
            closed: false,
        }
    }
}

impl DeviceFactory for SimulatedDevice {
    fn open(&self) -> Result<Box<dyn DeviceSession>, DeviceError> {
        Ok(Box::new(self.session()))
    }
}

pub struct SimulatedSession {
    id: String,
    model: Arc<AppModel>,
    current: String,
    back_stack: Vec<String>,
    last_capture: Option<UIScreen>,
    closed: bool,
}

impl SimulatedSession {
    pub fn current_screen_id(&self) -> &str {
        &self.current
    }
}

fn check_fresh(last: Option<&UIScreen>, element: &UIElement) -> Result<(), DeviceError> {
    match last {
        Some(screen) if screen.elements.get(element.element_id) == Some(element) => Ok(()),
        _ => Err(DeviceError::StaleElement(element.element_id)),
    }
}

impl DeviceSession for SimulatedSession {
    fn session_id(&self) -> &str {
        &self.id
    }

    fn capture_screen(&mut self) -> Result<UIScreen, DeviceError> {
        if self.closed {
            return Err(DeviceError::SessionClosed);
        }
        let screen = self
            .model
            .screen(&self.current)
            .cloned()
            .ok_or_else(|| DeviceError::CaptureFailed(format!("unknown screen {}", self.current)))?;
        self.last_capture = Some(screen.clone());
        Ok(screen)
    }

    fn perform(
        &mut self,
        element: Option<&UIElement>,
        step: &ActionStep,
    ) -> Result<PerformResult, DeviceError> {
        if self.closed {
            return Err(DeviceError::SessionClosed);
        }
        let last = self.last_capture.take();
        if step.kind == ActionKind::Back {
            return Ok(match self.back_stack.pop() {
                Some(previous) => {
                    self.current = previous;
                    PerformResult { screen_changed: true }
                }
                None => PerformResult { screen_changed: false },
            });
        }
        let element = element.ok_or(DeviceError::MissingElement(step.kind))?;
        check_fresh(last.as_ref(), element)?;
        let transition = self
            .model
            .find_transition(&self.current, element.element_id, step)
            .ok_or_else(|| DeviceError::NoTransition {
                screen: self.current.clone(),
                element: crate::embed::element_repr(element)
                    .unwrap_or_else(|_| format!("#{}", element.element_id)),
                kind: step.kind,
            })?;
        let changed = transition.to != self.current;
        if changed {
            let previous = std::mem::replace(&mut self.current, transition.to.clone());
            self.back_stack.push(previous);
        }
        Ok(PerformResult { screen_changed: changed })
    }

    fn close(&mut self) {
        self.closed = true;
        self.last_capture = None;
    }
}

// ---------------------------------------------------------------------------
// External-command adapter

fn default_delay_ms() -> u64 {
    1000
}

/// Shell command templates for a real device.
///
/// Placeholders: `{x}` `{y}` (center of the target's bounds), `{x2}` `{y2}`
/// (swipe end point, 400px from the center in `{direction}`), `{text}`
/// (input value, shell-quoted) and `{direction}`. The dump command must
/// print a UIAutomator XML dump on standard output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandAdapterConfig {
    pub dump: String,
    pub tap: String,
    pub long_tap: String,
    pub input: String,
    pub swipe: String,
    #[serde(default)]
    pub scroll: Option<String>,
    pub back: String,
    #[serde(default = "default_delay_ms")]
    pub post_action_delay_ms: u64,
}

impl CommandAdapterConfig {
    /// Templates for a device reachable through `adb` (`serial` selects one
    /// of several attached devices).
    pub fn adb(serial: Option<&str>) -> Self {
        let adb = match serial {
            Some(s) => format!("adb -s {s}"),
            None => "adb".to_string(),
        };
        Self {
            dump: format!(
                "{adb} shell uiautomator dump /sdcard/window_dump.xml >/dev/null && {adb} exec-out cat /sdcard/window_dump.xml"
            ),
            tap: format!("{adb} shell input tap {{x}} {{y}}"),
            long_tap: format!("{adb} shell input swipe {{x}} {{y}} {{x}} {{y}} 800"),
            input: format!("{adb} shell input tap {{x}} {{y}} && {adb} shell input text {{text}}"),
            swipe: format!("{adb} shell input swipe {{x}} {{y}} {{x2}} {{y2}} 300"),
            scroll: None,
            back: format!("{adb} shell input keyevent KEYCODE_BACK"),
            post_action_delay_ms: default_delay_ms(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DeviceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| DeviceError::CommandFailed(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| DeviceError::CommandFailed(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct CommandDevice {
    config: Arc<CommandAdapterConfig>,
}

impl CommandDevice {
    pub fn new(config: CommandAdapterConfig) -> Self {
        Self {
            config: Arc::new(config),
        }
    }
}

impl DeviceFactory for CommandDevice {
    fn open(&self) -> Result<Box<dyn DeviceSession>, DeviceError> {
        Ok(Box::new(CommandSession {
            id: next_session_id("cmd"),
            config: self.config.clone(),
            last_capture: None,
            closed: false,
        }))
    }
}

pub struct CommandSession {
    id: String,
    config: Arc<CommandAdapterConfig>,
    last_capture: Option<UIScreen>,
    closed: bool,
}

/// POSIX single-quote escaping.
fn shell_quote(value: &str) -> String {
    format!("'{}'", value.replace('\'', r"'\''"))
}

fn run_shell(command: &str) -> Result<String, DeviceError> {
    let output = Command::new("sh")
        .arg("-c")
        .arg(command)
        .output()
        .map_err(|e| DeviceError::CommandFailed(format!("{command}: {e}")))?;
    if !output.status.success() {
        return Err(DeviceError::CommandFailed(format!(
            "{command}: exit {} {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    Ok(String::from_utf8_lossy(&output.stdout).into_owned())
}

fn fill(template: &str, values: &[(&str, String)]) -> String {
    values.iter().fold(template.to_string(), |acc, (key, value)| {
        acc.replace(&format!("{{{key}}}"), value)
    })
}

impl DeviceSession for CommandSession {
    fn session_id(&self) -> &str {
        &self.id
    }

    fn capture_screen(&mut self) -> Result<UIScreen, DeviceError> {
        if self.closed {
            return Err(DeviceError::SessionClosed);
        }
        let xml = run_shell(&self.config.dump).map_err(|e| DeviceError::CaptureFailed(e.to_string()))?;
        let digest = hex::encode(Sha256::digest(xml.as_bytes()));
        let screen = UIScreen::from_xml(format!("dump-{}", &digest[..12]), &xml)?;
        self.last_capture = Some(screen.clone());
        Ok(screen)
    }

    fn perform(
        &mut self,
        element: Option<&UIElement>,
        step: &ActionStep,
    ) -> Result<PerformResult, DeviceError> {
        if self.closed {
            return Err(DeviceError::SessionClosed);
        }
        let last = self.last_capture.take();
        let command = if step.kind == ActionKind::Back {
            self.config.back.clone()
        } else {
            let element = element.ok_or(DeviceError::MissingElement(step.kind))?;
            check_fresh(last.as_ref(), element)?;
            let bounds = element.bounds.ok_or_else(|| {
                DeviceError::CommandFailed(format!("element {} has no bounds", element.element_id))
            })?;
            let (x, y) = bounds.center();
            let direction = step.direction.unwrap_or(Direction::Up);
            let (dx, dy) = match direction {
                Direction::Up => (0, -400),
                Direction::Down => (0, 400),
                Direction::Left => (-400, 0),
                Direction::Right => (400, 0),
            };
            let template = match step.kind {
                ActionKind::Tap => &self.config.tap,
                ActionKind::LongTap => &self.config.long_tap,
                ActionKind::Input => &self.config.input,
                ActionKind::Swipe => &self.config.swipe,
                ActionKind::Scroll => self.config.scroll.as_ref().unwrap_or(&self.config.swipe),
                ActionKind::Back => unreachable!("handled above"),
            };
            fill(
                template,
                &[
                    ("x2", (x + dx).to_string()),
                    ("y2", (y + dy).to_string()),
                    ("x", x.to_string()),
                    ("y", y.to_string()),
                    ("text", shell_quote(step.value.as_deref().unwrap_or(""))),
                    ("direction", direction.as_str().to_string()),
                ],
            )
        };
        run_shell(&command)?;
        if self.config.post_action_delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.config.post_action_delay_ms));
        }
        let after = self.capture_screen()?;
        let changed = last.is_none_or(|before| before.raw_root != after.raw_root);
        Ok(PerformResult { screen_changed: changed })
    }

    fn close(&mut self) {
        self.closed = true;
        self.last_capture = None;
    }
}
