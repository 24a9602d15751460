//! Prompt templates for query concretization and editing-keyword suggestion.
//!
//! Templates are skeletons of `{name}` placeholders. `prompt1`/`prompt2` are
//! fixed instruction blocks; the rest must be bound by the caller. Only
//! `{identifier}` sequences are placeholders, so literal JSON braces in the
//! instruction text pass through untouched, and substituted values are never
//! rescanned.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::LlmError;

pub const SYSTEM_PROMPT: &str = "You are a helpful and creative assistant that can suggest effective search queries to find new and inspiring designs. You return your final answer as a valid JSON object.";

const CONCRETIZE_SKELETON: &str = "{prompt1}\n[Current Search Query]\n{curr_query}\n{prompt2}";

const CONCRETIZE_PROMPT1: &str = "We would like to request you to ideate search queries to help designers explore and find useful reference images. The designer has now entered one text query into the image search system. However, there is currently an unspecified part of this query. If the designer looks for search results with this query, he/she can get too many different search results, so the designer wants to be recommended a more specific search query in the query they enter. These are described below.";

const CONCRETIZE_PROMPT2: &str = "\nPlease suggest five search queries by following the steps. First, explain the non-specific parts of the current search query and how to specify them. Second, complete the current search query by adding more details to the end regarding color, shape, style, etc. Please add at least three words. Avoid changing the entire meaning of the query, but focus on specifying the unspecified parts in various aspects.\n\nReturn your output as a valid JSON object of the following format:\n{\"explanation\":\n<explain how you generate the specified queries in the first and second steps>,\n\"search_queries\":\n[<list of five suggested queries that designer can use>]}";

const KEYWORDS_SKELETON: &str = "{prompt1}\n[Description of Current Image]\n{curr_image}\n[Search Query History]\n{search_history}\n[Descriptions of Saved Images]\n{saved_images}\n{prompt2}";

const KEYWORDS_PROMPT1: &str = "We would like to request you to ideate search terms to help designers explore and find useful reference images. The designer is currently looking at an image. They are trying to think about new search terms that can help them find images that are similar but more inspiring than the current image. The designer has already tried various search queries that were unsuccessful in the past and saved a couple of images to their profile. These are described below.";

const KEYWORDS_PROMPT2: &str = "\nPlease suggest several search terms or words. Consider the current image, the previous search history, and the saved images to predict what the designer's intentions may be. You should imagine what type of design the designer is working on and what type of reference images they may be looking for. If the [Search Query History] and [Descriptions of Saved Images] are empty, just refer only to the [Description of Current Image] to predict the designer's intent. Provide a comprehensive explanation about what you imagine the designer's intention to be and the type of reference images that may satisfy or diversify this intent.\n\nThen, suggest search terms that can help satisfy the designer's intent. You should suggest search terms that designers can add to their search queries to look for images that satisfy their intentions. As an alternative, also suggest terms that can help diversity the designer's intent. These search terms should be different from the designers current intent and should help them explore other, different types of designs. When suggesting search terms, you should avoid suggesting search terms that are already included in the current image, the search history, or the descriptions of saved images. Ensure that your suggested terms are completely new to the designer. Ensure that you only suggest words and avoid suggesting phrases.\n\nReturn your output as a valid JSON object of the following format:\n{\"explanation\":\n<explain how you generate the specified queries in the first and second steps>,\n\"aligned_search_terms\":\n[<list of five suggested words that align with the designer's current intentions>],\n\"diversified_search_terms\":\n[<list of five suggested words that differ from the designer's current intentions>]}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Concretize,
    Keywords,
}

impl TemplateId {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Concretize => "concretize",
            TemplateId::Keywords => "keywords",
        }
    }

    fn skeleton(self) -> &'static str {
        match self {
            TemplateId::Concretize => CONCRETIZE_SKELETON,
            TemplateId::Keywords => KEYWORDS_SKELETON,
        }
    }

    fn fixed_block(self, name: &str) -> Option<&'static str> {
        match (self, name) {
            (TemplateId::Concretize, "prompt1") => Some(CONCRETIZE_PROMPT1),
            (TemplateId::Concretize, "prompt2") => Some(CONCRETIZE_PROMPT2),
            (TemplateId::Keywords, "prompt1") => Some(KEYWORDS_PROMPT1),
            (TemplateId::Keywords, "prompt2") => Some(KEYWORDS_PROMPT2),
            _ => None,
        }
    }

    /// Placeholders the caller must bind.
    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateId::Concretize => &["curr_query"],
            TemplateId::Keywords => &["curr_image", "search_history", "saved_images"],
        }
    }
}

impl std::fmt::Display for TemplateId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub template_id: TemplateId,
    pub system_prompt: String,
    pub user_prompt: String,
}

pub type Bindings = BTreeMap<String, String>;

pub fn concretize_bindings(current_query: &str) -> Bindings {
    Bindings::from([("curr_query".to_owned(), current_query.to_owned())])
}

/// Lists render one entry per line, oldest first; an empty list renders as
/// an empty section body.
pub fn keyword_bindings(
    current_image: &str,
    search_history: &[String],
    saved_images: &[String],
) -> Bindings {
    Bindings::from([
        ("curr_image".to_owned(), current_image.to_owned()),
        ("search_history".to_owned(), search_history.join("\n")),
        ("saved_images".to_owned(), saved_images.join("\n")),
    ])
}

pub fn render_template(
    template_id: TemplateId,
    bindings: &Bindings,
) -> Result<PromptBundle, LlmError> {
    let skeleton = template_id.skeleton();
    let mut out = String::with_capacity(skeleton.len() + 2048);
    let mut rest = skeleton;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match placeholder_name(after) {
            Some(name) => {
                let value = template_id
                    .fixed_block(name)
                    .or_else(|| bindings.get(name).map(String::as_str))
                    .ok_or_else(|| LlmError::MissingBinding(name.to_owned()))?;
                out.push_str(value);
                rest = &after[name.len() + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(PromptBundle {
        template_id,
        system_prompt: SYSTEM_PROMPT.to_owned(),
        user_prompt: out,
    })
}

/// `s` starts just after a `{`; returns the identifier if `s` is `ident}...`.
fn placeholder_name(s: &str) -> Option<&str> {
    let end = s.find('}')?;
    let name = &s[..end];
    let mut chars = name.chars();
    let first = chars.next()?;
    if !(first.is_ascii_lowercase() || first == '_') {
        return None;
    }
    chars
        .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        .then_some(name)
}
