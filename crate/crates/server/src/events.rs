//! Interaction log.

use std::fmt;
use std::sync::Mutex;

use chrono::{DateTime, DurationRound, SecondsFormat, TimeDelta, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

/// Closed set of logged interactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    FromEditorToStepTree,
    CheckStepTree,
    CheckMatch,
    CopyToComments,
    RunCode,
    CodeEdit,
    TreeEdit,
    HintGeneral,
    HintDetailed,
    HintReveal,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    #[serde(serialize_with = "write_time", deserialize_with = "read_time")]
    pub t: DateTime<Utc>,
    pub kind: EventKind,
    pub payload: Value,
}

fn write_time<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Micros, true))
}

fn read_time<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
    let text = String::deserialize(d)?;
    DateTime::parse_from_rfc3339(&text).map(|t| t.with_timezone(&Utc)).map_err(serde::de::Error::custom)
}

/// Newline-delimited export, one event per line.
pub fn export_ndjson(events: &[Event]) -> String {
    events.iter().map(|e| serde_json::to_string(e).expect("events serialize") + "\n").collect()
}

/// Wall clock that never repeats or goes backwards, at microsecond
/// resolution.
#[derive(Debug, Default)]
pub struct Clock {
    last: Mutex<Option<DateTime<Utc>>>,
}

impl Clock {
    pub fn new() -> Self {
        Clock::default()
    }

    /// Starts after `floor`, e.g. the newest persisted timestamp.
    pub fn after(floor: Option<DateTime<Utc>>) -> Self {
        Clock { last: Mutex::new(floor) }
    }

    pub fn now(&self) -> DateTime<Utc> {
        let tick = TimeDelta::microseconds(1);
        let now = Utc::now().duration_trunc(tick).expect("microsecond truncation");
        let mut last = self.last.lock().expect("clock lock");
        let next = match *last {
            Some(prev) if now <= prev => prev + tick,
            _ => now,
        };
        *last = Some(next);
        next
    }
}
