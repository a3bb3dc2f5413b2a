//! WebAssembly bindings behind `www/index.html`.
//!
//! Each export takes plain strings and returns a JSON document, so the page
//! needs no generated type glue beyond `wasm-bindgen`'s string passing.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use cat_core::corpus::{parse_examples_lenient, ExampleSet};
use cat_core::decompose::format_plan;
use cat_core::embed::{element_repr, HashedTrigramProvider};
use cat_core::hierarchy::{parse_hierarchy, UIElement, UIScreen};
use cat_core::mapper::{map_by_similarity, score_elements, SimilarityResult};
use cat_core::retrieve::build_index;

const SAMPLE_HIERARCHY: &str = include_str!("../../core/fixtures/hierarchy/chat_list.xml");
const SAMPLE_CORPUS: &str = include_str!("../../core/fixtures/suite/corpus.jsonl");

#[derive(Debug, Serialize)]
pub struct Simplified {
    pub raw_nodes: usize,
    pub raw_depth: usize,
    pub simplified_nodes: usize,
    pub simplified_depth: usize,
    pub elements: usize,
    pub compact: String,
}

#[derive(Debug, Serialize)]
pub struct ScoredElement {
    pub element_id: usize,
    pub label: String,
    pub score: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Mapping {
    pub scores: Vec<ScoredElement>,
    /// Chosen element, or `None` when the optimizer would be consulted.
    pub matched: Option<usize>,
    pub best_score: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Retrieved {
    pub rank: usize,
    pub id: String,
    pub description: String,
    pub activity: String,
    pub score: f64,
    pub plan: String,
}

pub fn simplify_xml(xml: &str) -> Result<Simplified, String> {
    let raw = parse_hierarchy(xml).map_err(|e| e.to_string())?;
    let screen = UIScreen::from_root("input", raw);
    Ok(Simplified {
        raw_nodes: screen.raw_root.node_count(),
        raw_depth: screen.raw_root.depth(),
        simplified_nodes: screen.simplified_root.node_count(),
        simplified_depth: screen.simplified_root.depth(),
        elements: screen.elements.len(),
        compact: screen.compact(),
    })
}

fn label(element: &UIElement) -> String {
    element_repr(element).unwrap_or_else(|_| element.class_name.clone())
}

pub fn map_target_on(xml: &str, target: &str, threshold: f64) -> Result<Mapping, String> {
    let screen = UIScreen::from_xml("input", xml).map_err(|e| e.to_string())?;
    let provider = HashedTrigramProvider::new();
    let scores = score_elements(target, &screen, &provider).map_err(|e| e.to_string())?;
    let (matched, best_score) = match map_by_similarity(target, &screen, &provider, threshold).map_err(|e| e.to_string())? {
        SimilarityResult::Matched(m) => (Some(m.matched.element_id), Some(m.best_score)),
        SimilarityResult::BelowThreshold { best_score } => (None, best_score.is_finite().then_some(best_score)),
    };
    Ok(Mapping {
        scores: screen
            .elements
            .iter()
            .zip(scores)
            .map(|(e, score)| ScoredElement {
                element_id: e.element_id,
                label: label(e),
                score,
            })
            .collect(),
        matched,
        best_score,
    })
}

pub fn retrieve_from(corpus_jsonl: &str, query: &str, k: usize) -> Result<Vec<Retrieved>, String> {
    let (examples, issues) = parse_examples_lenient(corpus_jsonl);
    if let Some(first) = issues.first() {
        return Err(first.to_string());
    }
    let set = ExampleSet::from_examples(examples).map_err(|e| e.to_string())?;
    let provider = HashedTrigramProvider::new();
    let index = build_index(&set, &provider).map_err(|e| e.to_string())?;
    let ranked = index.top_k(query, k, &provider).map_err(|e| e.to_string())?;
    Ok(ranked
        .into_iter()
        .map(|r| Retrieved {
            rank: r.rank,
            plan: format_plan(&r.example.steps),
            id: r.example.id,
            description: r.example.description,
            activity: r.example.activity,
            score: r.score,
        })
        .collect())
}

fn to_js<T: Serialize>(result: Result<T, String>) -> Result<String, JsError> {
    result
        .map(|v| serde_json::to_string(&v).expect("plain data serializes"))
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sampleHierarchy)]
pub fn sample_hierarchy() -> String {
    SAMPLE_HIERARCHY.to_string()
}

#[wasm_bindgen(js_name = sampleCorpus)]
pub fn sample_corpus() -> String {
    SAMPLE_CORPUS.to_string()
}

/// Simplifies a UIAutomator dump; returns node counts and the compact listing.
#[wasm_bindgen(js_name = simplifyHierarchy)]
pub fn simplify_hierarchy(xml: &str) -> Result<String, JsError> {
    to_js(simplify_xml(xml))
}

/// Scores every element of the dump against `target`.
#[wasm_bindgen(js_name = mapTarget)]
pub fn map_target(xml: &str, target: &str, threshold: f64) -> Result<String, JsError> {
    to_js(map_target_on(xml, target, threshold))
}

/// Ranks corpus examples by similarity to `query`.
#[wasm_bindgen]
pub fn retrieve(corpus_jsonl: &str, query: &str, k: usize) -> Result<String, JsError> {
    to_js(retrieve_from(corpus_jsonl, query, k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_simplifies() {
        let s = simplify_xml(SAMPLE_HIERARCHY).unwrap();
        assert_eq!(s.raw_nodes, 37);
        assert!(s.simplified_nodes < s.raw_nodes);
        assert!(s.compact.contains("[1] ImageButton desc=\"Search\""));
    }

    #[test]
    fn search_button_maps_by_similarity() {
        let m = map_target_on(SAMPLE_HIERARCHY, "search", 0.8).unwrap();
        assert_eq!(m.matched, Some(1));
        assert_eq!(m.scores.len(), simplify_xml(SAMPLE_HIERARCHY).unwrap().elements);
        let strict = map_target_on(SAMPLE_HIERARCHY, "search", 1.0);
        assert!(strict.unwrap().best_score.is_some());
    }

    #[test]
    fn retrieval_ranks_the_sample_corpus() {
        let r = retrieve_from(SAMPLE_CORPUS, "open settings", 3).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r[0].rank, 1);
        assert!(r.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(r[0].plan.starts_with("1. ["));
    }

    #[test]
    fn bad_input_is_reported() {
        assert!(simplify_xml("<hierarchy>").is_err());
        assert!(map_target_on(SAMPLE_HIERARCHY, "x", 1.5).unwrap_err().contains("threshold"));
        assert!(retrieve_from("{not json", "q", 1).unwrap_err().contains("line 1"));
    }
}
