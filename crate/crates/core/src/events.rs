//! The totally ordered event log and its JSONL wire format.
//!
//! Every event carries `t` (seconds), `seq` (append order, the tie-breaker
//! at equal times), and `kind`, plus kind-specific payload fields. Events
//! serialize one JSON object per line with a stable key order, which makes
//! the file a usable golden-test surface: identical runs produce
//! byte-identical logs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Seconds;

#[derive(Debug, Error)]
pub enum EventLogError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    SignalChange,
    TimerExpiry,
    ProvisionRequested,
    SiteReady,
    RoundStart,
    RoundCommit,
    DeprovisionRequested,
    DrainComplete,
    SiteOffline,
    ModeChange,
    RunComplete,
}

/// Per-site training result summary carried by `RoundCommit` events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateSummary {
    pub batches: u64,
    pub rows: u64,
    pub train_seconds: Seconds,
    pub reported: bool,
    /// Consumed `(shard, start_row, end_row)` ranges.
    pub consumed: Vec<(usize, u64, u64)>,
}

/// Run totals carried by the `RunComplete` event, enabling self-contained
/// consistency checks over a log file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub energy_kwh: f64,
    pub curtailed_fraction: f64,
    pub emissions_g: f64,
    pub rounds: u64,
    pub steps_total: u64,
}

/// One log line. Fields beyond the envelope are kind-specific and omitted
/// when unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub t: Seconds,
    pub seq: u64,
    pub kind: EventKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub site: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curtailed: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub members: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub round: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solo: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub participants: Option<Vec<String>>,
    /// Per-site `(shard, start_row)` assignments at round start.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assignments: Option<BTreeMap<String, Vec<(usize, u64)>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub updates: Option<BTreeMap<String, UpdateSummary>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub version: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub progress_total: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<RunSummary>,
}

impl LogEvent {
    pub fn new(t: Seconds, seq: u64, kind: EventKind) -> Self {
        Self {
            t,
            seq,
            kind,
            region: None,
            site: None,
            curtailed: None,
            timer: None,
            mode: None,
            members: None,
            round: None,
            solo: None,
            participants: None,
            assignments: None,
            updates: None,
            version: None,
            progress_total: None,
            reason: None,
            summary: None,
        }
    }
}

/// An append-ordered sequence of log events.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    events: Vec<LogEvent>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_events(events: Vec<LogEvent>) -> Self {
        Self { events }
    }

    pub fn push(&mut self, event: LogEvent) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[LogEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LogEvent> {
        self.events.iter()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("log events always serialize"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, EventLogError> {
        let mut events = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let event = serde_json::from_str(line)
                .map_err(|source| EventLogError::Parse { line: idx + 1, source })?;
            events.push(event);
        }
        Ok(Self { events })
    }
}
