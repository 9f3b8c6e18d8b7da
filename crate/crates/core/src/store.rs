//! On-disk persistence for scenarios, event logs and session metrics.
//!
//! Layout under the store root:
//!
//! ```text
//! <scenario-id>/scenario-v<version>.scn
//! <scenario-id>/<session-id>/events.jsonl
//! <scenario-id>/<session-id>/metrics.json
//! ```
//!
//! `events.jsonl` holds one JSON event per line and is only ever appended
//! to; each append is flushed and synced before it is acknowledged.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::model::{EventKind, Scenario, SessionEvent, SessionMetrics};
use crate::parser::{parse_scenario, print_scenario};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{what} `{id}` not found")]
    NotFound { what: &'static str, id: String },
    #[error("seq {seq} of session `{session_id}` already holds a different event")]
    SeqConflict { session_id: String, seq: u64 },
    #[error("session `{session_id}` expects seq {expected}, got {got}")]
    SequenceGap { session_id: String, expected: u64, got: u64 },
    #[error("scenario `{id}` version {version} already stored with different content")]
    ScenarioConflict { id: String, version: u32 },
    #[error("{path}: corrupt record at byte {offset}: {reason}")]
    Corrupt { path: PathBuf, offset: u64, reason: String },
    #[error("`{0}` cannot be used as a storage name")]
    InvalidId(String),
    #[error("first event of a session must be SessionStarted")]
    MissingStart,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::NotFound { .. } => "not-found",
            StoreError::SeqConflict { .. } => "seq-conflict",
            StoreError::SequenceGap { .. } => "sequence-gap",
            StoreError::ScenarioConflict { .. } => "scenario-conflict",
            StoreError::Corrupt { .. } => "corrupt-log",
            StoreError::InvalidId(_) => "invalid-id",
            StoreError::MissingStart => "protocol-violation",
            StoreError::Io { .. } => "io-error",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

fn check_name(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidId(id.to_string()))
    }
}

/// A session's complete record: its log plus metrics once finalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceBundle {
    pub scenario_id: String,
    pub scenario_version: u32,
    pub session_id: String,
    pub seed: u64,
    pub events: Vec<SessionEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<SessionMetrics>,
}

impl TraceBundle {
    /// Builds a bundle from a log whose first event is SessionStarted.
    pub fn from_events(events: Vec<SessionEvent>, metrics: Option<SessionMetrics>) -> Result<Self, StoreError> {
        let Some(SessionEvent { session_id, kind: EventKind::SessionStarted(start), .. }) = events.first() else {
            return Err(StoreError::MissingStart);
        };
        Ok(TraceBundle {
            scenario_id: start.scenario_id.clone(),
            scenario_version: start.scenario_version,
            session_id: session_id.clone(),
            seed: start.seed,
            events,
            metrics,
        })
    }
}

/// Parses JSON Lines event records. Every record must end with a newline;
/// a trailing partial record is reported with its byte offset.
pub fn parse_event_records(bytes: &[u8], path: &Path) -> Result<Vec<(usize, SessionEvent)>, StoreError> {
    let corrupt =
        |offset: usize, reason: String| StoreError::Corrupt { path: path.to_path_buf(), offset: offset as u64, reason };
    let mut events = Vec::new();
    let mut offset = 0;
    while offset < bytes.len() {
        let Some(len) = bytes[offset..].iter().position(|b| *b == b'\n') else {
            return Err(corrupt(offset, "truncated record".into()));
        };
        let line = &bytes[offset..offset + len];
        let event: SessionEvent =
            serde_json::from_slice(line).map_err(|e| corrupt(offset, format!("unparsable record: {e}")))?;
        events.push((offset, event));
        offset += len + 1;
    }
    Ok(events)
}

/// Parses a stored event log, additionally requiring seqs 0, 1, 2, ...
pub fn parse_event_log(bytes: &[u8], path: &Path) -> Result<Vec<SessionEvent>, StoreError> {
    let records = parse_event_records(bytes, path)?;
    let mut events = Vec::with_capacity(records.len());
    for (offset, event) in records {
        if event.seq != events.len() as u64 {
            return Err(StoreError::Corrupt {
                path: path.to_path_buf(),
                offset: offset as u64,
                reason: format!("expected seq {}, found {}", events.len(), event.seq),
            });
        }
        events.push(event);
    }
    Ok(events)
}

#[derive(Debug)]
struct SessionSlot {
    scenario_id: String,
    dir: PathBuf,
    events: Option<Vec<SessionEvent>>,
}

impl SessionSlot {
    fn events_path(&self) -> PathBuf {
        self.dir.join(EVENTS_FILE)
    }

    fn load(&mut self) -> Result<&mut Vec<SessionEvent>, StoreError> {
        if self.events.is_none() {
            let path = self.events_path();
            let bytes = match fs::read(&path) {
                Ok(b) => b,
                Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
                Err(e) => return Err(io_err(&path)(e)),
            };
            self.events = Some(parse_event_log(&bytes, &path)?);
        }
        Ok(self.events.as_mut().expect("just loaded"))
    }
}

/// Result of storing a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Created,
    Unchanged,
}

/// Append-only store rooted at a directory. Safe to share across threads:
/// appends to one session are serialized, different sessions proceed
/// independently.
#[derive(Debug)]
pub struct MetricsStore {
    root: PathBuf,
    scenarios: RwLock<BTreeMap<(String, u32), Arc<Scenario>>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionSlot>>>>,
}

impl MetricsStore {
    /// Opens (creating if needed) a store and indexes its contents. Event
    /// logs are read lazily.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        let mut scenarios = BTreeMap::new();
        let mut sessions = HashMap::new();
        for entry in sorted_dir(&root)? {
            if !entry.is_dir() {
                continue;
            }
            let scenario_id = entry.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            for child in sorted_dir(&entry)? {
                let name = child.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
                if child.is_dir() {
                    if child.join(EVENTS_FILE).exists() {
                        let slot = SessionSlot { scenario_id: scenario_id.clone(), dir: child.clone(), events: None };
                        sessions.insert(name, Arc::new(Mutex::new(slot)));
                    }
                } else if name.starts_with("scenario-v") && name.ends_with(".scn") {
                    let text = fs::read_to_string(&child).map_err(io_err(&child))?;
                    let scenario = parse_scenario(&text).map_err(|d| StoreError::Corrupt {
                        path: child.clone(),
                        offset: d.first().and_then(|d| d.location.offset).unwrap_or(0) as u64,
                        reason: d.first().map_or_else(String::new, |d| d.message.clone()),
                    })?;
                    scenarios.insert((scenario.id().to_string(), scenario.version()), Arc::new(scenario));
                }
            }
        }
        Ok(MetricsStore { root, scenarios: RwLock::new(scenarios), sessions: RwLock::new(sessions) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Stores a scenario. Re-storing identical content is a no-op; the same
    /// id and version with different content is rejected.
    pub fn put_scenario(&self, scenario: &Scenario) -> Result<PutOutcome, StoreError> {
        check_name(scenario.id())?;
        let key = (scenario.id().to_string(), scenario.version());
        let mut map = self.scenarios.write().expect("scenario index poisoned");
        if let Some(existing) = map.get(&key) {
            return if **existing == *scenario {
                Ok(PutOutcome::Unchanged)
            } else {
                Err(StoreError::ScenarioConflict { id: key.0, version: key.1 })
            };
        }
        let dir = self.root.join(scenario.id());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(format!("scenario-v{}.scn", scenario.version()));
        write_atomic(&path, print_scenario(scenario).as_bytes())?;
        map.insert(key, Arc::new(scenario.clone()));
        Ok(PutOutcome::Created)
    }

    pub fn scenario(&self, id: &str, version: u32) -> Result<Arc<Scenario>, StoreError> {
        self.scenarios
            .read()
            .expect("scenario index poisoned")
            .get(&(id.to_string(), version))
            .cloned()
            .ok_or_else(|| StoreError::NotFound { what: "scenario", id: format!("{id}@{version}") })
    }

    /// Highest stored version of a scenario.
    pub fn latest_scenario(&self, id: &str) -> Result<Arc<Scenario>, StoreError> {
        self.scenarios
            .read()
            .expect("scenario index poisoned")
            .range((id.to_string(), 0)..=(id.to_string(), u32::MAX))
            .next_back()
            .map(|(_, s)| s.clone())
            .ok_or_else(|| StoreError::NotFound { what: "scenario", id: id.to_string() })
    }

    pub fn scenario_keys(&self) -> Vec<(String, u32)> {
        self.scenarios.read().expect("scenario index poisoned").keys().cloned().collect()
    }

    /// Session ids, optionally restricted to one scenario id, sorted.
    pub fn session_ids(&self, scenario_id: Option<&str>) -> Vec<String> {
        let map = self.sessions.read().expect("session index poisoned");
        let mut ids: Vec<String> = map
            .iter()
            .filter(|(_, slot)| {
                scenario_id.is_none_or(|s| slot.lock().expect("session slot poisoned").scenario_id == s)
            })
            .map(|(id, _)| id.clone())
            .collect();
        ids.sort();
        ids
    }

    fn slot(&self, session_id: &str) -> Result<Arc<Mutex<SessionSlot>>, StoreError> {
        self.sessions
            .read()
            .expect("session index poisoned")
            .get(session_id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound { what: "session", id: session_id.to_string() })
    }

    /// Durably appends one event. Idempotent on (session, seq): resending
    /// the identical event is acknowledged without writing.
    pub fn append_event(&self, event: &SessionEvent) -> Result<(), StoreError> {
        let slot = match self.slot(&event.session_id) {
            Ok(slot) => slot,
            Err(StoreError::NotFound { .. }) => self.create_session(event)?,
            Err(e) => return Err(e),
        };
        let mut slot = slot.lock().expect("session slot poisoned");
        let path = slot.events_path();
        let events = slot.load()?;
        let next = events.len() as u64;
        if event.seq < next {
            return if events[event.seq as usize] == *event {
                Ok(())
            } else {
                Err(StoreError::SeqConflict { session_id: event.session_id.clone(), seq: event.seq })
            };
        }
        if event.seq > next {
            return Err(StoreError::SequenceGap {
                session_id: event.session_id.clone(),
                expected: next,
                got: event.seq,
            });
        }
        let mut line = serde_json::to_string(event).expect("events serialize");
        line.push('\n');
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        file.write_all(line.as_bytes()).map_err(io_err(&path))?;
        file.sync_data().map_err(io_err(&path))?;
        events.push(event.clone());
        Ok(())
    }

    fn create_session(&self, event: &SessionEvent) -> Result<Arc<Mutex<SessionSlot>>, StoreError> {
        let EventKind::SessionStarted(start) = &event.kind else {
            return Err(StoreError::NotFound { what: "session", id: event.session_id.clone() });
        };
        if event.seq != 0 {
            return Err(StoreError::MissingStart);
        }
        check_name(&event.session_id)?;
        self.scenario(&start.scenario_id, start.scenario_version)?;
        let mut map = self.sessions.write().expect("session index poisoned");
        if let Some(slot) = map.get(&event.session_id) {
            return Ok(slot.clone());
        }
        let dir = self.root.join(&start.scenario_id).join(&event.session_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let slot =
            Arc::new(Mutex::new(SessionSlot { scenario_id: start.scenario_id.clone(), dir, events: Some(Vec::new()) }));
        map.insert(event.session_id.clone(), slot.clone());
        Ok(slot)
    }

    pub fn load_events(&self, session_id: &str) -> Result<Vec<SessionEvent>, StoreError> {
        let slot = self.slot(session_id)?;
        let mut slot = slot.lock().expect("session slot poisoned");
        Ok(slot.load()?.clone())
    }

    /// Writes the session's metrics summary, replacing any previous one.
    pub fn put_metrics(&self, metrics: &SessionMetrics) -> Result<(), StoreError> {
        let slot = self.slot(&metrics.session_id)?;
        let slot = slot.lock().expect("session slot poisoned");
        write_atomic(&slot.dir.join(METRICS_FILE), metrics.to_canonical_json().as_bytes())
    }

    pub fn metrics(&self, session_id: &str) -> Result<Option<SessionMetrics>, StoreError> {
        let slot = self.slot(session_id)?;
        let path = slot.lock().expect("session slot poisoned").dir.join(METRICS_FILE);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| StoreError::Corrupt {
                path,
                offset: 0,
                reason: e.to_string(),
            }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn load_trace(&self, session_id: &str) -> Result<TraceBundle, StoreError> {
        let events = self.load_events(session_id)?;
        let metrics = self.metrics(session_id)?;
        TraceBundle::from_events(events, metrics)
    }

    /// Path of a session's directory, for tooling and tests.
    pub fn session_dir(&self, session_id: &str) -> Result<PathBuf, StoreError> {
        Ok(self.slot(session_id)?.lock().expect("session slot poisoned").dir.clone())
    }
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        out.push(entry.map_err(io_err(dir))?.path());
    }
    out.sort();
    Ok(out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}
