//! Target-phrase to on-screen element mapping.
//!
//! Similarity against every atomic element is the primary route. Only when
//! the best score falls below the threshold is the model asked, once, to
//! name a semantically related element from the compact screen listing.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::PromptTemplate;
use crate::embed::{
    cosine, element_repr, embed_text, normalize_text, resource_id_suffix, EmbedError,
    EmbeddingProvider,
};
use crate::hierarchy::{UIElement, UIScreen};
use crate::llm::{LlmClient, LlmError, LlmExchange, PromptMessages};

pub const DEFAULT_MAPPING_TEMPLATE: &str = include_str!("../templates/mapping.txt");
pub const DEFAULT_THRESHOLD: f64 = 0.80;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("screen has no atomic elements")]
    NoElements,
    #[error("embedding failed: {0}")]
    Embedding(#[from] EmbedError),
    #[error("threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("optimizer answer has no bracketed element")]
    NoBrackets,
    #[error("optimizer answer {0:?} is not on screen")]
    NotOnScreen(String),
    #[error("optimizer answer {phrase:?} matches several elements {candidates:?}")]
    Ambiguous {
        phrase: String,
        candidates: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingMethod {
    Similarity,
    LlmOptimizer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingOutcome {
    pub matched: UIElement,
    pub best_score: f64,
    pub method: MappingMethod,
    pub exchange: Option<LlmExchange>,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum SimilarityResult {
    Matched(MappingOutcome),
    /// `best_score` is `-inf` when no element carried textual evidence.
    BelowThreshold { best_score: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapperConfig {
    pub threshold: f64,
    pub optimizer_enabled: bool,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            optimizer_enabled: true,
        }
    }
}

/// Scores of every element against `target`, clamped to `[0, 1]`; `None`
/// for elements without textual evidence.
pub fn score_elements(
    target: &str,
    screen: &UIScreen,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<Option<f64>>, MapError> {
    let target_vec = embed_text(provider, target)?;
    screen
        .elements
        .iter()
        .map(|element| match element_repr(element) {
            Ok(repr) => {
                let v = embed_text(provider, &repr)?;
                Ok(Some(cosine(&target_vec, &v)?.clamp(0.0, 1.0)))
            }
            Err(EmbedError::AllFieldsEmpty) => Ok(None),
            Err(e) => Err(e.into()),
        })
        .collect()
}

pub fn map_by_similarity(
    target: &str,
    screen: &UIScreen,
    provider: &dyn EmbeddingProvider,
    threshold: f64,
) -> Result<SimilarityResult, MapError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MapError::InvalidThreshold(threshold));
    }
    if screen.elements.is_empty() {
        return Err(MapError::NoElements);
    }
    let scores = score_elements(target, screen, provider)?;
    let mut best: Option<(usize, f64)> = None;
    for (pos, score) in scores.iter().enumerate() {
        if let Some(score) = *score {
            // Strict comparison keeps the lowest element id among ties.
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((pos, score));
            }
        }
    }
    Ok(match best {
        Some((pos, score)) if score >= threshold => SimilarityResult::Matched(MappingOutcome {
            matched: screen.elements[pos].clone(),
            best_score: score,
            method: MappingMethod::Similarity,
            exchange: None,
        }),
        Some((_, score)) => SimilarityResult::BelowThreshold { best_score: score },
        None => SimilarityResult::BelowThreshold {
            best_score: f64::NEG_INFINITY,
        },
    })
}

pub fn build_mapping_prompt(target: &str, screen: &UIScreen) -> PromptMessages {
    let template = PromptTemplate::new(DEFAULT_MAPPING_TEMPLATE, &["{target}", "{screen}"])
        .expect("bundled template");
    let body = template.render(&[("target", target.trim()), ("screen", &screen.compact())]);
    PromptMessages::user(body.trim_end())
}

fn first_bracket() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([^\[\]]+)\]").unwrap())
}

fn unique(phrase: &str, hits: Vec<&UIElement>) -> Result<Option<UIElement>, MapError> {
    match hits.as_slice() {
        [] => Ok(None),
        [one] => Ok(Some((*one).clone())),
        many => Err(MapError::Ambiguous {
            phrase: phrase.to_string(),
            candidates: many.iter().map(|e| e.element_id).collect(),
        }),
    }
}

/// Resolves the first bracketed phrase of an optimizer answer to an element.
///
/// A bare ordinal (`[3]`, as printed in the compact listing) selects that
/// element. Otherwise an element whose text, description, or id suffix equals
/// the phrase exactly wins; failing that, a case-insensitive match against
/// the same fields or containment in the element's canonical text.
pub fn parse_identified_element(completion: &str, screen: &UIScreen) -> Result<UIElement, MapError> {
    let phrase = first_bracket()
        .captures(completion)
        .map(|c| c[1].trim().trim_matches('"').trim().to_string())
        .filter(|p| !p.is_empty())
        .ok_or(MapError::NoBrackets)?;

    if let Ok(ordinal) = phrase.parse::<usize>() {
        if let Some(e) = screen.elements.iter().find(|e| e.element_id == ordinal) {
            return Ok(e.clone());
        }
    }

    let fields = |e: &UIElement| {
        [
            e.text.trim().to_string(),
            e.content_desc.trim().to_string(),
            resource_id_suffix(&e.resource_id).to_string(),
        ]
    };
    let exact = screen
        .elements
        .iter()
        .filter(|e| fields(e).iter().any(|f| !f.is_empty() && *f == phrase))
        .collect();
    if let Some(e) = unique(&phrase, exact)? {
        return Ok(e);
    }

    let needle = normalize_text(&phrase);
    let loose = screen
        .elements
        .iter()
        .filter(|e| {
            fields(e).iter().any(|f| normalize_text(f) == needle)
                || element_repr(e).is_ok_and(|r| r.contains(&needle))
        })
        .collect();
    unique(&phrase, loose)?.ok_or(MapError::NotOnScreen(phrase))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResolveError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("mapping failed (best score {best_score}, optimizer used: {optimizer_used})")]
    MappingFailed {
        best_score: f64,
        optimizer_used: bool,
        /// Why the optimizer answer was unusable, when it ran.
        reason: Option<MapError>,
        exchange: Option<Box<LlmExchange>>,
    },
    #[error("optimizer call failed: {0}")]
    Llm(#[from] LlmError),
}

impl ResolveError {
    pub fn exchange(&self) -> Option<&LlmExchange> {
        match self {
            ResolveError::MappingFailed { exchange, .. } => exchange.as_deref(),
            _ => None,
        }
    }
}

/// Similarity first; on a miss, at most one optimizer call.
pub fn resolve(
    target: &str,
    screen: &UIScreen,
    provider: &dyn EmbeddingProvider,
    llm: &dyn LlmClient,
    config: &MapperConfig,
) -> Result<MappingOutcome, ResolveError> {
    let best_score = match map_by_similarity(target, screen, provider, config.threshold)? {
        SimilarityResult::Matched(outcome) => return Ok(outcome),
        SimilarityResult::BelowThreshold { best_score } => best_score,
    };
    if !config.optimizer_enabled {
        return Err(ResolveError::MappingFailed {
            best_score,
            optimizer_used: false,
            reason: None,
            exchange: None,
        });
    }
    let exchange = llm.complete(&build_mapping_prompt(target, screen))?;
    match parse_identified_element(&exchange.completion_text, screen) {
        Ok(matched) => Ok(MappingOutcome {
            matched,
            best_score,
            method: MappingMethod::LlmOptimizer,
            exchange: Some(exchange),
        }),
        Err(reason) => Err(ResolveError::MappingFailed {
            best_score,
            optimizer_used: true,
            reason: Some(reason),
            exchange: Some(Box::new(exchange)),
        }),
    }
}
