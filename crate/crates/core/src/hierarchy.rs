//! UIAutomator view-hierarchy parsing and simplification.
//!
//! Raw dumps are deeply nested: most containers exist only for layout and
//! hold a single child. [`simplify`] splices those containers out so the tree
//! keeps only branching structure, leaves, and interactive nodes, and
//! [`extract_elements`] flattens what remains into the atomic elements that
//! element mapping scores against.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::resource_id_suffix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierarchyError {
    #[error("xml parse error at {position}: {reason}")]
    XmlParseError { position: String, reason: String },
    #[error("document is empty")]
    EmptyDocument,
}

/// Simple class names that accept input on their own, even when the dump
/// does not flag them clickable.
const WIDGET_CLASSES: &[&str] = &[
    "EditText",
    "AutoCompleteTextView",
    "MultiAutoCompleteTextView",
    "Button",
    "ImageButton",
    "CheckBox",
    "CheckedTextView",
    "RadioButton",
    "Switch",
    "ToggleButton",
    "Spinner",
    "SeekBar",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HierarchyNode {
    pub class_name: String,
    pub attributes: BTreeMap<String, String>,
    pub children: Vec<HierarchyNode>,
}

impl HierarchyNode {
    pub fn new(class_name: impl Into<String>) -> Self {
        Self {
            class_name: class_name.into(),
            attributes: BTreeMap::new(),
            children: Vec::new(),
        }
    }

    pub fn with_attr(mut self, key: &str, value: impl Into<String>) -> Self {
        self.attributes.insert(key.to_string(), value.into());
        self
    }

    pub fn with_child(mut self, child: HierarchyNode) -> Self {
        self.children.push(child);
        self
    }

    pub fn attr(&self, key: &str) -> &str {
        self.attributes.get(key).map(String::as_str).unwrap_or("")
    }

    fn flag(&self, key: &str) -> bool {
        self.attr(key).eq_ignore_ascii_case("true")
    }

    pub fn simple_class(&self) -> &str {
        match self.class_name.rfind('.') {
            Some(pos) => &self.class_name[pos + 1..],
            None => &self.class_name,
        }
    }

    /// Clickable, long-clickable, editable, or an input widget class.
    pub fn is_interactive(&self) -> bool {
        self.flag("clickable")
            || self.flag("long-clickable")
            || self.flag("editable")
            || WIDGET_CLASSES.contains(&self.simple_class())
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    fn has_textual_evidence(&self) -> bool {
        ["text", "content-desc", "resource-id"]
            .iter()
            .any(|k| !self.attr(k).trim().is_empty())
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(HierarchyNode::node_count).sum::<usize>()
    }

    /// Number of levels; a lone node has depth 1.
    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(HierarchyNode::depth).max().unwrap_or(0)
    }

    /// Pre-order iterator over the subtree.
    pub fn iter(&self) -> impl Iterator<Item = &HierarchyNode> {
        let mut stack = vec![self];
        std::iter::from_fn(move || {
            let node = stack.pop()?;
            stack.extend(node.children.iter().rev());
            Some(node)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bounds {
    pub left: i32,
    pub top: i32,
    pub right: i32,
    pub bottom: i32,
}

impl Bounds {
    /// Parses the UIAutomator `[l,t][r,b]` form. Malformed or degenerate
    /// rectangles yield `None`.
    pub fn parse(raw: &str) -> Option<Self> {
        let nums: Vec<i32> = raw
            .split(['[', ']', ','])
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<i32>())
            .collect::<Result<_, _>>()
            .ok()?;
        let [left, top, right, bottom] = nums.as_slice() else {
            return None;
        };
        let expected = format!("[{left},{top}][{right},{bottom}]");
        if raw.replace(' ', "") != expected || right <= left || bottom <= top {
            return None;
        }
        Some(Self {
            left: *left,
            top: *top,
            right: *right,
            bottom: *bottom,
        })
    }

    pub fn center(&self) -> (i32, i32) {
        ((self.left + self.right) / 2, (self.top + self.bottom) / 2)
    }
}

/// One atomic element of a simplified screen.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UIElement {
    /// Document-order ordinal within the simplified tree.
    pub element_id: usize,
    pub text: String,
    pub content_desc: String,
    pub resource_id: String,
    pub class_name: String,
    pub bounds: Option<Bounds>,
    pub interactive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UIScreen {
    pub screen_id: String,
    pub raw_root: HierarchyNode,
    pub simplified_root: HierarchyNode,
    pub elements: Vec<UIElement>,
}

impl UIScreen {
    pub fn from_root(screen_id: impl Into<String>, raw_root: HierarchyNode) -> Self {
        let simplified_root = simplify(&raw_root);
        let elements = extract_elements(&simplified_root);
        Self {
            screen_id: screen_id.into(),
            raw_root,
            simplified_root,
            elements,
        }
    }

    pub fn from_xml(screen_id: impl Into<String>, xml: &str) -> Result<Self, HierarchyError> {
        Ok(Self::from_root(screen_id, parse_hierarchy(xml)?))
    }

    pub fn compact(&self) -> String {
        serialize_compact(&self.simplified_root)
    }
}

pub fn parse_hierarchy(xml_text: &str) -> Result<HierarchyNode, HierarchyError> {
    if xml_text.trim().is_empty() {
        return Err(HierarchyError::EmptyDocument);
    }
    let doc = roxmltree::Document::parse(xml_text).map_err(|e| HierarchyError::XmlParseError {
        position: e.pos().to_string(),
        reason: e.to_string(),
    })?;
    Ok(convert(doc.root_element()))
}

fn convert(node: roxmltree::Node<'_, '_>) -> HierarchyNode {
    let attributes: BTreeMap<String, String> = node
        .attributes()
        .map(|a| (a.name().to_string(), a.value().to_string()))
        .collect();
    let class_name = attributes
        .get("class")
        .filter(|c| !c.is_empty())
        .cloned()
        .unwrap_or_else(|| node.tag_name().name().to_string());
    HierarchyNode {
        class_name,
        attributes,
        children: node.children().filter(|c| c.is_element()).map(convert).collect(),
    }
}

/// Splices out every non-interactive node with exactly one child, bottom-up,
/// so chains collapse to their first branching or atomic descendant. The root
/// is not exempt.
pub fn simplify(root: &HierarchyNode) -> HierarchyNode {
    let children: Vec<HierarchyNode> = root.children.iter().map(simplify).collect();
    if children.len() == 1 && !root.is_interactive() {
        return children.into_iter().next().expect("one child");
    }
    HierarchyNode {
        class_name: root.class_name.clone(),
        attributes: root.attributes.clone(),
        children,
    }
}

/// Atomic elements in document order: every interactive node, plus leaves
/// that carry text, a content description, or a resource id.
pub fn extract_elements(root: &HierarchyNode) -> Vec<UIElement> {
    root.iter()
        .filter(|n| n.is_interactive() || (n.is_leaf() && n.has_textual_evidence()))
        .enumerate()
        .map(|(ordinal, n)| UIElement {
            element_id: ordinal,
            text: n.attr("text").to_string(),
            content_desc: n.attr("content-desc").to_string(),
            resource_id: n.attr("resource-id").to_string(),
            class_name: n.class_name.clone(),
            bounds: Bounds::parse(n.attr("bounds")),
            interactive: n.is_interactive(),
        })
        .collect()
}

/// One line per atomic element: `[ordinal] Class text="…" desc="…" id="…"`.
pub fn serialize_compact(root: &HierarchyNode) -> String {
    let mut out = String::new();
    for element in extract_elements(root) {
        if !out.is_empty() {
            out.push('\n');
        }
        write_element_line(&mut out, &element);
    }
    out
}

fn write_element_line(out: &mut String, element: &UIElement) {
    let class = match element.class_name.rfind('.') {
        Some(pos) => &element.class_name[pos + 1..],
        None => element.class_name.as_str(),
    };
    let _ = write!(out, "[{}] {}", element.element_id, class);
    let fields = [
        ("text", element.text.as_str()),
        ("desc", element.content_desc.as_str()),
        ("id", resource_id_suffix(&element.resource_id)),
    ];
    for (key, value) in fields {
        if !value.trim().is_empty() {
            let _ = write!(out, " {key}=\"{}\"", escape(value));
        }
    }
}

fn escape(value: &str) -> String {
    let mut s = String::with_capacity(value.len());
    for c in value.chars() {
        match c {
            '"' => s.push_str("\\\""),
            '\\' => s.push_str("\\\\"),
            '\n' => s.push_str("\\n"),
            '\r' => {}
            _ => s.push(c),
        }
    }
    s
}
