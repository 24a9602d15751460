//! Offline pattern analysis of session logs.

use std::fmt::Write;
use std::path::Path;

use genquery_core::session::{
    load_log, pattern_report, PatternReport, SessionError, SessionEvent, TransitionSplit,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SessionAnalysis {
    pub session_id: String,
    pub report: PatternReport,
}

/// One report per session, in order of first appearance. An empty log yields
/// a single all-zero report.
pub fn analyze_events(events: &[SessionEvent]) -> Vec<SessionAnalysis> {
    let mut order: Vec<&str> = Vec::new();
    for e in events {
        if !order.contains(&e.session_id.as_str()) {
            order.push(&e.session_id);
        }
    }
    if order.is_empty() {
        return vec![SessionAnalysis {
            session_id: String::new(),
            report: PatternReport::default(),
        }];
    }
    order
        .into_iter()
        .map(|id| {
            let own: Vec<SessionEvent> = events
                .iter()
                .filter(|e| e.session_id == id)
                .cloned()
                .collect();
            SessionAnalysis {
                session_id: id.to_owned(),
                report: pattern_report(&own),
            }
        })
        .collect()
}

pub fn analyze_log(path: impl AsRef<Path>) -> Result<Vec<SessionAnalysis>, SessionError> {
    Ok(analyze_events(&load_log(path)?))
}

pub fn render_table(analysis: &SessionAnalysis) -> String {
    let r = &analysis.report;
    let mut out = String::new();
    let name = if analysis.session_id.is_empty() {
        "(empty log)"
    } else {
        &analysis.session_id
    };
    let _ = writeln!(out, "session {name}");
    let _ = writeln!(
        out,
        "  actions  T={}  I={}  show_more={}  saves={}",
        r.counts.text_searches, r.counts.image_searches, r.counts.show_more, r.counts.saves
    );
    let _ = writeln!(
        out,
        "  {:<4} {:>9} {:>12} {:>6}",
        "pair", "with_gen", "without_gen", "total"
    );
    let rows: [(&str, TransitionSplit); 4] = [
        ("TT", r.transitions.tt),
        ("TI", r.transitions.ti),
        ("II", r.transitions.ii),
        ("IT", r.transitions.it),
    ];
    for (label, split) in rows {
        let _ = writeln!(
            out,
            "  {label:<4} {:>9} {:>12} {:>6}",
            split.with_gen,
            split.without_gen,
            split.total()
        );
    }
    let _ = writeln!(
        out,
        "  search_by_generation_rate  {:.4}",
        r.search_by_generation_rate
    );
    let _ = writeln!(
        out,
        "  saved_via_generation_rate  {:.4}",
        r.saved_via_generation_rate
    );
    out
}

/// The bare report for a single-session log, otherwise an object keyed by
/// session id.
pub fn to_json(analyses: &[SessionAnalysis]) -> serde_json::Value {
    match analyses {
        [one] => serde_json::to_value(one.report).unwrap_or_default(),
        many => serde_json::Value::Object(
            many.iter()
                .map(|a| {
                    (
                        a.session_id.clone(),
                        serde_json::to_value(a.report).unwrap_or_default(),
                    )
                })
                .collect(),
        ),
    }
}
