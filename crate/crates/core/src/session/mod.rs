//! Append-only session event logs and search-pattern analytics.
//!
//! Each session is persisted as `<dir>/<session_id>.jsonl`, one
//! [`SessionEvent`] per line. An event is flushed to disk before its sequence
//! number is returned.

mod analytics;
mod event;

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::Utc;

pub use analytics::{
    pattern_report, recent_text_queries, saved_images, transitions, ActionCounts, PatternReport,
    SearchType, Transition, TransitionCounts, TransitionSplit,
};
pub use event::{EventKind, SessionEvent};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("unknown session: {0}")]
    UnknownSession(String),
    #[error("invalid session id: {0:?}")]
    InvalidSessionId(String),
    #[error("malformed log at line {line}: {detail}")]
    MalformedLog { line: usize, detail: String },
    #[error("storage failure: {0}")]
    StorageFailure(#[from] std::io::Error),
}

/// Session ids double as file names: 1–128 chars of `[A-Za-z0-9_.-]`, not
/// starting with a dot.
pub fn validate_session_id(id: &str) -> Result<(), SessionError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(SessionError::InvalidSessionId(id.to_owned()))
    }
}

/// Parses a JSON-lines session log. Blank lines are ignored; sequence numbers
/// must strictly increase per session.
pub fn parse_log(text: &str) -> Result<Vec<SessionEvent>, SessionError> {
    let mut events = Vec::new();
    let mut last_seq: HashMap<String, u64> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let event: SessionEvent =
            serde_json::from_str(line).map_err(|e| SessionError::MalformedLog {
                line: i + 1,
                detail: e.to_string(),
            })?;
        if let Some(prev) = last_seq.get(&event.session_id) {
            if event.seq <= *prev {
                return Err(SessionError::MalformedLog {
                    line: i + 1,
                    detail: format!("seq {} does not follow {prev}", event.seq),
                });
            }
        }
        last_seq.insert(event.session_id.clone(), event.seq);
        events.push(event);
    }
    Ok(events)
}

pub fn load_log(path: impl AsRef<Path>) -> Result<Vec<SessionEvent>, SessionError> {
    parse_log(&fs::read_to_string(path)?)
}

struct SessionLog {
    events: Vec<SessionEvent>,
    file: Option<File>,
}

/// All sessions known to the service. One writer per session; many sessions
/// proceed concurrently.
pub struct SessionStore {
    dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionLog>>>>,
}

impl std::fmt::Debug for SessionStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionStore")
            .field("dir", &self.dir)
            .finish()
    }
}

impl SessionStore {
    /// Store persisting each session under `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, SessionError> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(Self {
            dir: Some(dir.as_ref().to_path_buf()),
            sessions: RwLock::new(HashMap::new()),
        })
    }

    /// Store that keeps events in memory only.
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    fn log_path(&self, session_id: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("{session_id}.jsonl")))
    }

    pub fn log_file(&self, session_id: &str) -> Option<PathBuf> {
        self.log_path(session_id)
    }

    fn lookup(
        &self,
        session_id: &str,
        create: bool,
    ) -> Result<Option<Arc<Mutex<SessionLog>>>, SessionError> {
        validate_session_id(session_id)?;
        if let Some(log) = self
            .sessions
            .read()
            .expect("session map poisoned")
            .get(session_id)
        {
            return Ok(Some(log.clone()));
        }
        let path = self.log_path(session_id);
        let on_disk = path.as_ref().is_some_and(|p| p.exists());
        if !create && !on_disk {
            return Ok(None);
        }
        let mut sessions = self.sessions.write().expect("session map poisoned");
        if let Some(log) = sessions.get(session_id) {
            return Ok(Some(log.clone()));
        }
        let events = match &path {
            Some(p) if on_disk => load_log(p)?,
            _ => Vec::new(),
        };
        let file = match &path {
            Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
            None => None,
        };
        let log = Arc::new(Mutex::new(SessionLog { events, file }));
        sessions.insert(session_id.to_owned(), log.clone());
        Ok(Some(log))
    }

    pub fn exists(&self, session_id: &str) -> bool {
        matches!(self.lookup(session_id, false), Ok(Some(_)))
    }

    /// Appends an event, creating the session on first use. Returns its seq.
    pub fn record_event(&self, session_id: &str, kind: EventKind) -> Result<u64, SessionError> {
        let log = self
            .lookup(session_id, true)?
            .expect("create=true always yields a session");
        let mut log = log.lock().expect("session log poisoned");
        let seq = log.events.last().map_or(1, |e| e.seq + 1);
        let event = SessionEvent {
            session_id: session_id.to_owned(),
            seq,
            timestamp: Utc::now(),
            kind,
        };
        if let Some(file) = log.file.as_mut() {
            let mut line = serde_json::to_string(&event).map_err(std::io::Error::other)?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.sync_data()?;
        }
        log.events.push(event);
        Ok(seq)
    }

    /// Snapshot of a session's events.
    pub fn events(&self, session_id: &str) -> Result<Vec<SessionEvent>, SessionError> {
        let log = self
            .lookup(session_id, false)?
            .ok_or_else(|| SessionError::UnknownSession(session_id.to_owned()))?;
        let events = log.lock().expect("session log poisoned").events.clone();
        Ok(events)
    }

    pub fn transitions(&self, session_id: &str) -> Result<Vec<Transition>, SessionError> {
        Ok(transitions(&self.events(session_id)?))
    }

    pub fn pattern_report(&self, session_id: &str) -> Result<PatternReport, SessionError> {
        Ok(pattern_report(&self.events(session_id)?))
    }
}
