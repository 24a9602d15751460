use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{GenerationMode, ImageSource};

/// What happened. Search events carry the query token and the ids of the
/// page they surfaced so that saves can be attributed to the search that
/// showed them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum EventKind {
    TextSearch {
        query: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        query_token: Option<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        results: Vec<String>,
    },
    ImageSearch {
        image_id: String,
        image_source: ImageSource,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        query_token: Option<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        results: Vec<String>,
    },
    ShowMore {
        query_token: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        results: Vec<String>,
    },
    Save {
        image_id: String,
    },
    Unsave {
        image_id: String,
    },
    Modify {
        mode: GenerationMode,
        image_id: String,
        result_id: String,
    },
    ConcretizeShown {
        query: String,
    },
    ConcretizeAccepted {
        query: String,
    },
}

impl EventKind {
    pub fn is_search(&self) -> bool {
        matches!(
            self,
            EventKind::TextSearch { .. } | EventKind::ImageSearch { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            EventKind::TextSearch { .. } => "TextSearch",
            EventKind::ImageSearch { .. } => "ImageSearch",
            EventKind::ShowMore { .. } => "ShowMore",
            EventKind::Save { .. } => "Save",
            EventKind::Unsave { .. } => "Unsave",
            EventKind::Modify { .. } => "Modify",
            EventKind::ConcretizeShown { .. } => "ConcretizeShown",
            EventKind::ConcretizeAccepted { .. } => "ConcretizeAccepted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub session_id: String,
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_line_shape() {
        let event = SessionEvent {
            session_id: "s1".into(),
            seq: 3,
            timestamp: DateTime::parse_from_rfc3339("2024-05-01T10:00:00Z")
                .unwrap()
                .into(),
            kind: EventKind::ImageSearch {
                image_id: "gen-000001".into(),
                image_source: ImageSource::Generated,
                query_token: Some("qt-4".into()),
                results: vec!["a".into()],
            },
        };
        let line = serde_json::to_string(&event).unwrap();
        assert_eq!(
            line,
            r#"{"session_id":"s1","seq":3,"timestamp":"2024-05-01T10:00:00Z","type":"ImageSearch","image_id":"gen-000001","image_source":"generated","query_token":"qt-4","results":["a"]}"#
        );
        assert_eq!(serde_json::from_str::<SessionEvent>(&line).unwrap(), event);
    }

    #[test]
    fn minimal_search_event_parses() {
        let line = r#"{"session_id":"s","seq":1,"timestamp":"2024-05-01T10:00:00Z","type":"TextSearch","query":"poster"}"#;
        let event: SessionEvent = serde_json::from_str(line).unwrap();
        assert!(event.kind.is_search());
    }
}
