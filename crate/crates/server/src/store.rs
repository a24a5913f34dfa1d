//! Session persistence.
//!
//! One append-only JSON-lines file. Every mutation appends the session's new
//! state and the event it produced in a single synced write before the
//! change becomes visible. On open the log is replayed (a torn final line is
//! ignored) and rewritten compactly.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use dbox_core::mapping::CodeMapping;
use dbox_core::steptree::StepTree;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::Event;

pub const LOG_FILE: &str = "sessions.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub id: String,
    pub problem_id: String,
    pub created_at: DateTime<Utc>,
    pub tree: StepTree,
    pub code: String,
    pub mapping: Option<CodeMapping>,
    pub events: Vec<Event>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session store I/O on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt session record at {}:{line}: {reason}", path.display())]
    Corrupt { path: PathBuf, line: usize, reason: String },
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct StateRecord {
    id: String,
    problem_id: String,
    created_at: DateTime<Utc>,
    /// Canonical wire JSON, stored verbatim.
    tree: String,
    code: String,
    mapping: Option<CodeMapping>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
enum Record {
    State(StateRecord),
    #[serde(rename_all = "camelCase")]
    Event { session_id: String, event: Event },
}

impl StateRecord {
    fn of(session: &Session) -> Self {
        StateRecord {
            id: session.id.clone(),
            problem_id: session.problem_id.clone(),
            created_at: session.created_at,
            tree: session.tree.to_wire_json(),
            code: session.code.clone(),
            mapping: session.mapping.clone(),
        }
    }
}

pub struct Store {
    sink: Option<(PathBuf, File)>,
}

impl Store {
    /// Keeps nothing on disk.
    pub fn memory() -> Self {
        Store { sink: None }
    }

    /// Opens (creating if needed) the log in `dir` and returns every session
    /// it holds.
    pub fn open(dir: &Path) -> Result<(Store, Vec<Session>), StoreError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| StoreError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        restrict(dir).map_err(io(dir))?;
        let path = dir.join(LOG_FILE);
        let sessions = if path.exists() { replay(&path)? } else { Vec::new() };

        let tmp = dir.join(format!("{LOG_FILE}.tmp"));
        {
            let mut file = File::create(&tmp).map_err(io(&tmp))?;
            let mut body = String::new();
            for session in &sessions {
                body.push_str(&line(&Record::State(StateRecord::of(session))));
                for event in &session.events {
                    body.push_str(&line(&Record::Event { session_id: session.id.clone(), event: event.clone() }));
                }
            }
            file.write_all(body.as_bytes()).map_err(io(&tmp))?;
            file.sync_all().map_err(io(&tmp))?;
        }
        std::fs::rename(&tmp, &path).map_err(io(&path))?;
        let file = OpenOptions::new().append(true).open(&path).map_err(io(&path))?;
        Ok((Store { sink: Some((path, file)) }, sessions))
    }

    pub fn path(&self) -> Option<&Path> {
        self.sink.as_ref().map(|(p, _)| p.as_path())
    }

    /// Durably records `session`'s state and, if given, the event that led
    /// to it.
    pub fn commit(&mut self, session: &Session, event: Option<&Event>) -> Result<(), StoreError> {
        let Some((path, file)) = &mut self.sink else { return Ok(()) };
        let mut body = line(&Record::State(StateRecord::of(session)));
        if let Some(event) = event {
            body.push_str(&line(&Record::Event { session_id: session.id.clone(), event: event.clone() }));
        }
        let io = |source| StoreError::Io { path: path.clone(), source };
        file.write_all(body.as_bytes()).map_err(io)?;
        file.sync_data().map_err(|source| StoreError::Io { path: path.clone(), source })
    }
}

fn line(record: &Record) -> String {
    serde_json::to_string(record).expect("records serialize") + "\n"
}

#[cfg(unix)]
fn restrict(dir: &Path) -> std::io::Result<()> {
    use std::os::unix::fs::PermissionsExt;
    std::fs::set_permissions(dir, std::fs::Permissions::from_mode(0o700))
}

#[cfg(not(unix))]
fn restrict(_dir: &Path) -> std::io::Result<()> {
    Ok(())
}

fn replay(path: &Path) -> Result<Vec<Session>, StoreError> {
    let file = File::open(path).map_err(|source| StoreError::Io { path: path.to_path_buf(), source })?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|source| StoreError::Io { path: path.to_path_buf(), source })?;
    let corrupt = |line: usize, reason: String| StoreError::Corrupt { path: path.to_path_buf(), line, reason };

    let mut order = Vec::new();
    let mut sessions: BTreeMap<String, Session> = BTreeMap::new();
    let last = lines.len();
    for (i, text) in lines.iter().enumerate() {
        if text.trim().is_empty() {
            continue;
        }
        let record: Record = match serde_json::from_str(text) {
            Ok(record) => record,
            Err(e) if i + 1 == last => {
                tracing::warn!(line = i + 1, error = %e, "ignoring torn final record");
                break;
            }
            Err(e) => return Err(corrupt(i + 1, e.to_string())),
        };
        match record {
            Record::State(state) => {
                let tree = StepTree::from_wire_json(&state.tree).map_err(|e| corrupt(i + 1, e.to_string()))?;
                match sessions.get_mut(&state.id) {
                    Some(session) => {
                        session.tree = tree;
                        session.code = state.code;
                        session.mapping = state.mapping;
                    }
                    None => {
                        order.push(state.id.clone());
                        sessions.insert(
                            state.id.clone(),
                            Session {
                                id: state.id,
                                problem_id: state.problem_id,
                                created_at: state.created_at,
                                tree,
                                code: state.code,
                                mapping: state.mapping,
                                events: Vec::new(),
                            },
                        );
                    }
                }
            }
            Record::Event { session_id, event } => match sessions.get_mut(&session_id) {
                Some(session) => session.events.push(event),
                None => return Err(corrupt(i + 1, format!("event for unknown session {session_id}"))),
            },
        }
    }
    Ok(order.into_iter().filter_map(|id| sessions.remove(&id)).collect())
}
