//! Search-pattern measures over a session's event list.
//!
//! Only `TextSearch` (T) and `ImageSearch` (I) are search events. A
//! transition is a consecutive pair of search events; it is "with
//! generation" when at least one `Modify` event falls strictly between the
//! pair. Every function here is a pure function of the events.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{EventKind, SessionEvent};
use crate::corpus::ImageSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SearchType {
    #[serde(rename = "T")]
    Text,
    #[serde(rename = "I")]
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: SearchType,
    pub to: SearchType,
    pub gen_between: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionSplit {
    pub with_gen: u64,
    pub without_gen: u64,
}

impl TransitionSplit {
    pub fn total(&self) -> u64 {
        self.with_gen + self.without_gen
    }

    fn add(&mut self, gen_between: bool) {
        if gen_between {
            self.with_gen += 1;
        } else {
            self.without_gen += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionCounts {
    #[serde(rename = "TT")]
    pub tt: TransitionSplit,
    #[serde(rename = "TI")]
    pub ti: TransitionSplit,
    #[serde(rename = "II")]
    pub ii: TransitionSplit,
    #[serde(rename = "IT")]
    pub it: TransitionSplit,
}

impl TransitionCounts {
    pub fn total(&self) -> u64 {
        self.tt.total() + self.ti.total() + self.ii.total() + self.it.total()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionCounts {
    #[serde(rename = "T")]
    pub text_searches: u64,
    #[serde(rename = "I")]
    pub image_searches: u64,
    pub show_more: u64,
    pub saves: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PatternReport {
    pub counts: ActionCounts,
    pub transitions: TransitionCounts,
    /// Image searches whose query image was generated, over all image searches.
    pub search_by_generation_rate: f64,
    /// Currently saved images that a generated-image search surfaced before
    /// they were saved, over all currently saved images.
    pub saved_via_generation_rate: f64,
}

fn ordered(events: &[SessionEvent]) -> Vec<&SessionEvent> {
    let mut sorted: Vec<&SessionEvent> = events.iter().collect();
    sorted.sort_by_key(|e| e.seq);
    sorted
}

pub fn transitions(events: &[SessionEvent]) -> Vec<Transition> {
    let mut out = Vec::new();
    let mut previous: Option<SearchType> = None;
    let mut modified_since = false;
    for event in ordered(events) {
        let current = match &event.kind {
            EventKind::TextSearch { .. } => SearchType::Text,
            EventKind::ImageSearch { .. } => SearchType::Image,
            EventKind::Modify { .. } => {
                modified_since = true;
                continue;
            }
            _ => continue,
        };
        if let Some(from) = previous {
            out.push(Transition {
                from,
                to: current,
                gen_between: modified_since,
            });
        }
        previous = Some(current);
        modified_since = false;
    }
    out
}

pub fn pattern_report(events: &[SessionEvent]) -> PatternReport {
    let mut counts = ActionCounts::default();
    let mut generated_image_searches = 0u64;
    // Query tokens of searches whose query image was generated.
    let mut generated_tokens: HashSet<&str> = HashSet::new();
    // Ids surfaced so far by generated-image searches (including show-more pages).
    let mut surfaced_by_generation: HashSet<&str> = HashSet::new();
    // Current saved set: id -> attributed to a generated-image search.
    let mut saved: HashMap<&str, bool> = HashMap::new();

    for event in ordered(events) {
        match &event.kind {
            EventKind::TextSearch { .. } => counts.text_searches += 1,
            EventKind::ImageSearch {
                image_source,
                query_token,
                results,
                ..
            } => {
                counts.image_searches += 1;
                if *image_source == ImageSource::Generated {
                    generated_image_searches += 1;
                    if let Some(token) = query_token {
                        generated_tokens.insert(token);
                    }
                    surfaced_by_generation.extend(results.iter().map(String::as_str));
                }
            }
            EventKind::ShowMore {
                query_token,
                results,
            } => {
                counts.show_more += 1;
                if generated_tokens.contains(query_token.as_str()) {
                    surfaced_by_generation.extend(results.iter().map(String::as_str));
                }
            }
            EventKind::Save { image_id } => {
                counts.saves += 1;
                let attributed = surfaced_by_generation.contains(image_id.as_str());
                saved
                    .entry(image_id)
                    .and_modify(|a| *a |= attributed)
                    .or_insert(attributed);
            }
            EventKind::Unsave { image_id } => {
                saved.remove(image_id.as_str());
            }
            EventKind::Modify { .. }
            | EventKind::ConcretizeShown { .. }
            | EventKind::ConcretizeAccepted { .. } => {}
        }
    }

    let mut transition_counts = TransitionCounts::default();
    for t in transitions(events) {
        let split = match (t.from, t.to) {
            (SearchType::Text, SearchType::Text) => &mut transition_counts.tt,
            (SearchType::Text, SearchType::Image) => &mut transition_counts.ti,
            (SearchType::Image, SearchType::Image) => &mut transition_counts.ii,
            (SearchType::Image, SearchType::Text) => &mut transition_counts.it,
        };
        split.add(t.gen_between);
    }

    let ratio = |num: u64, den: u64| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let attributed = saved.values().filter(|a| **a).count() as u64;
    PatternReport {
        counts,
        transitions: transition_counts,
        search_by_generation_rate: ratio(generated_image_searches, counts.image_searches),
        saved_via_generation_rate: ratio(attributed, saved.len() as u64),
    }
}

/// The last `n` text-search queries, oldest first.
pub fn recent_text_queries(events: &[SessionEvent], n: usize) -> Vec<String> {
    let queries: Vec<String> = ordered(events)
        .into_iter()
        .filter_map(|e| match &e.kind {
            EventKind::TextSearch { query, .. } => Some(query.clone()),
            _ => None,
        })
        .collect();
    queries[queries.len().saturating_sub(n)..].to_vec()
}

/// Currently saved image ids in save order, oldest first. Unsaving removes an
/// image; saving it again puts it at the end.
pub fn saved_images(events: &[SessionEvent]) -> Vec<String> {
    let mut saved: Vec<String> = Vec::new();
    for event in ordered(events) {
        match &event.kind {
            EventKind::Save { image_id } if !saved.contains(image_id) => {
                saved.push(image_id.clone())
            }
            EventKind::Unsave { image_id } => saved.retain(|id| id != image_id),
            _ => {}
        }
    }
    saved
}
