//! Extraction of the first JSON object from free-form model output, and a
//! small field-level schema for the response contracts.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::LlmError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldKind {
    Text,
    TextList { exact_len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldRule {
    pub name: &'static str,
    pub kind: FieldKind,
}

/// Required top-level fields of a response object. Extra fields are allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseSchema {
    pub fields: Vec<FieldRule>,
}

impl ResponseSchema {
    /// `{explanation, search_queries[count]}`
    pub fn concretize(count: usize) -> Self {
        Self {
            fields: vec![
                FieldRule {
                    name: "explanation",
                    kind: FieldKind::Text,
                },
                FieldRule {
                    name: "search_queries",
                    kind: FieldKind::TextList { exact_len: count },
                },
            ],
        }
    }

    /// `{explanation, aligned_search_terms[count], diversified_search_terms[count]}`
    pub fn keywords(count: usize) -> Self {
        Self {
            fields: vec![
                FieldRule {
                    name: "explanation",
                    kind: FieldKind::Text,
                },
                FieldRule {
                    name: "aligned_search_terms",
                    kind: FieldKind::TextList { exact_len: count },
                },
                FieldRule {
                    name: "diversified_search_terms",
                    kind: FieldKind::TextList { exact_len: count },
                },
            ],
        }
    }

    pub fn validate(&self, value: &Value) -> Result<(), String> {
        let object = value.as_object().ok_or("response is not a JSON object")?;
        for rule in &self.fields {
            let field = object
                .get(rule.name)
                .ok_or_else(|| format!("missing field `{}`", rule.name))?;
            match rule.kind {
                FieldKind::Text => {
                    if !field.is_string() {
                        return Err(format!("`{}` must be a string", rule.name));
                    }
                }
                FieldKind::TextList { exact_len } => {
                    let items = field
                        .as_array()
                        .ok_or_else(|| format!("`{}` must be an array", rule.name))?;
                    if items.len() != exact_len {
                        return Err(format!(
                            "`{}` must have exactly {exact_len} entries, got {}",
                            rule.name,
                            items.len()
                        ));
                    }
                    if let Some(pos) = items.iter().position(|v| !v.is_string()) {
                        return Err(format!("`{}[{pos}]` must be a string", rule.name));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmJsonEnvelope {
    pub raw_text: String,
    pub parsed: Value,
    pub attempts: u32,
}

impl LlmJsonEnvelope {
    pub fn text(&self, field: &str) -> Option<&str> {
        self.parsed.get(field).and_then(Value::as_str)
    }

    pub fn text_list(&self, field: &str) -> Vec<String> {
        self.parsed
            .get(field)
            .and_then(Value::as_array)
            .map(|items| {
                items
                    .iter()
                    .filter_map(|v| v.as_str().map(str::to_owned))
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// End (exclusive byte index) of the balanced `{...}` starting at `start`,
/// honouring JSON string literals and escapes.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + offset + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// First balanced `{...}` span in `text` that parses as a JSON object.
pub fn extract_first_object(text: &str) -> Option<Value> {
    let mut search_from = 0;
    while let Some(rel) = text[search_from..].find('{') {
        let start = search_from + rel;
        if let Some(end) = balanced_end(text, start) {
            if let Ok(value @ Value::Object(_)) = serde_json::from_str::<Value>(&text[start..end]) {
                return Some(value);
            }
        }
        search_from = start + 1;
    }
    None
}

/// Pulls the first JSON object out of `raw_text` (which may wrap it in prose
/// or code fences) and validates it. Pure in `raw_text` and `schema`.
pub fn parse_json_object(
    raw_text: &str,
    schema: &ResponseSchema,
) -> Result<LlmJsonEnvelope, LlmError> {
    let parsed = extract_first_object(raw_text).ok_or(LlmError::NoJsonFound)?;
    schema
        .validate(&parsed)
        .map_err(LlmError::SchemaViolation)?;
    Ok(LlmJsonEnvelope {
        raw_text: raw_text.to_owned(),
        parsed,
        attempts: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIVE: &str = r#"{"explanation": "x", "search_queries": ["a","b","c","d","e"]}"#;

    #[test]
    fn fenced_json_parses() {
        let raw = format!("Sure! Here you go:\n```json\n{FIVE}\n```\nEnjoy.");
        let env = parse_json_object(&raw, &ResponseSchema::concretize(5)).unwrap();
        assert_eq!(env.attempts, 1);
        assert_eq!(env.text_list("search_queries").len(), 5);
        assert_eq!(env.text("explanation"), Some("x"));
    }

    #[test]
    fn four_queries_violate_schema() {
        let raw = r#"{"explanation": "x", "search_queries": ["a","b","c","d"]}"#;
        assert!(matches!(
            parse_json_object(raw, &ResponseSchema::concretize(5)),
            Err(LlmError::SchemaViolation(_))
        ));
    }

    #[test]
    fn prose_without_braces() {
        assert!(matches!(
            parse_json_object("I cannot help with that.", &ResponseSchema::concretize(5)),
            Err(LlmError::NoJsonFound)
        ));
    }

    #[test]
    fn braces_inside_strings_and_leading_noise() {
        let raw = r#"note {not json} then {"explanation": "use {braces} and \"quotes\"", "search_queries": ["a}","b","c","d","e"]} trailing {"#;
        let env = parse_json_object(raw, &ResponseSchema::concretize(5)).unwrap();
        assert_eq!(env.text_list("search_queries")[0], "a}");
    }

    #[test]
    fn wrong_types() {
        let raw = r#"{"explanation": 3, "search_queries": ["a","b","c","d","e"]}"#;
        assert!(matches!(
            parse_json_object(raw, &ResponseSchema::concretize(5)),
            Err(LlmError::SchemaViolation(_))
        ));
        let raw = r#"{"explanation": "", "search_queries": ["a","b","c","d",5]}"#;
        assert!(matches!(
            parse_json_object(raw, &ResponseSchema::concretize(5)),
            Err(LlmError::SchemaViolation(_))
        ));
    }

    #[test]
    fn keyword_schema() {
        let raw = r#"{"explanation":"e","aligned_search_terms":["a","b","c","d","e"],"diversified_search_terms":["f","g","h","i","j"]}"#;
        assert!(parse_json_object(raw, &ResponseSchema::keywords(5)).is_ok());
        let raw = r#"{"explanation":"e","aligned_search_terms":["a","b","c","d","e"]}"#;
        assert!(parse_json_object(raw, &ResponseSchema::keywords(5)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn parsing_is_pure(noise in "[a-z {}\\[\\]\"]{0,40}") {
                let raw = format!("{noise}{FIVE}");
                let schema = ResponseSchema::concretize(5);
                let a = parse_json_object(&raw, &schema).map(|e| e.parsed).map_err(|e| e.to_string());
                let b = parse_json_object(&raw, &schema).map(|e| e.parsed).map_err(|e| e.to_string());
                prop_assert_eq!(a, b);
            }

            #[test]
            fn embedded_object_found_after_plain_prose(prefix in "[a-zA-Z .,!]{0,60}", suffix in "[a-zA-Z .,!]{0,60}") {
                let raw = format!("{prefix}{FIVE}{suffix}");
                let env = parse_json_object(&raw, &ResponseSchema::concretize(5)).unwrap();
                prop_assert_eq!(env.text_list("search_queries").len(), 5);
            }
        }
    }
}
