//! Marginal-emissions traces and the curtailment signal derived from them.
//!
//! A [`CarbonTrace`] is a piecewise-constant step function of marginal
//! operating emissions rate (gCO₂/kWh) over time. Values are carried forward
//! until the next sample (last observation carried forward), and past the
//! last sample. A region counts as curtailed at time `t` when the rate is
//! strictly below the configured threshold.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Seconds;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("trace for region {0} has no samples")]
    Empty(String),
    #[error("lookup at t={t} precedes first sample at t={start}")]
    BeforeStart { t: Seconds, start: Seconds },
    #[error("inverted interval [{start}, {end})")]
    InvertedInterval { start: Seconds, end: Seconds },
    #[error("power must be finite and >= 0, got {0}")]
    InvalidPower(f64),
    #[error("sample at t={t}: {reason}")]
    InvalidSample { t: Seconds, reason: String },
}

/// One `(timestamp, moer)` sample. Timestamps are seconds since the scenario
/// epoch and must be strictly increasing within a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: Seconds,
    pub moer: f64,
}

/// Per-region marginal operating emissions rate over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarbonTrace {
    region_id: String,
    samples: Vec<TraceSample>,
}

/// Threshold below which a region counts as curtailed.
///
/// The comparison is strict: a rate exactly equal to the threshold is not
/// curtailed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurtailmentConfig {
    pub threshold: f64,
}

impl Default for CurtailmentConfig {
    fn default() -> Self {
        Self { threshold: 100.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Curtailed,
    NotCurtailed,
}

/// A maximal constant-kind interval `[start, end)` of the curtailment signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: Seconds,
    pub end: Seconds,
    pub kind: WindowKind,
}

impl CarbonTrace {
    /// Builds a trace from samples, validating ordering and value ranges.
    pub fn new(region_id: impl Into<String>, samples: Vec<TraceSample>) -> Result<Self, TraceError> {
        let region_id = region_id.into();
        if samples.is_empty() {
            return Err(TraceError::Empty(region_id));
        }
        for pair in samples.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(TraceError::InvalidSample {
                    t: pair[1].t,
                    reason: "timestamps must be strictly increasing".into(),
                });
            }
        }
        for s in &samples {
            if !s.moer.is_finite() || s.moer < 0.0 {
                return Err(TraceError::InvalidSample {
                    t: s.t,
                    reason: format!("moer must be finite and >= 0, got {}", s.moer),
                });
            }
        }
        Ok(Self { region_id, samples })
    }

    pub fn region_id(&self) -> &str {
        &self.region_id
    }

    pub fn samples(&self) -> &[TraceSample] {
        &self.samples
    }

    /// Timestamp of the first sample.
    pub fn start(&self) -> Seconds {
        self.samples[0].t
    }

    /// Step-function lookup: value of the latest sample with timestamp <= `t`.
    /// Carries the last value forward past the final sample.
    pub fn moer_at(&self, t: Seconds) -> Result<f64, TraceError> {
        let idx = self.samples.partition_point(|s| s.t <= t);
        if idx == 0 {
            return Err(TraceError::BeforeStart { t, start: self.start() });
        }
        Ok(self.samples[idx - 1].moer)
    }

    /// The boolean curtailment signal at `t`: true iff the rate is strictly
    /// below the threshold.
    pub fn curtailed_at(&self, cfg: &CurtailmentConfig, t: Seconds) -> Result<bool, TraceError> {
        Ok(self.moer_at(t)? < cfg.threshold)
    }

    /// Maximal constant-kind windows tiling `[first sample, horizon)`.
    /// Adjacent windows alternate kind.
    pub fn windows(&self, cfg: &CurtailmentConfig, horizon: Seconds) -> Result<Vec<Window>, TraceError> {
        let start = self.start();
        if horizon < start {
            return Err(TraceError::BeforeStart { t: horizon, start });
        }
        let mut out: Vec<Window> = Vec::new();
        if horizon == start {
            return Ok(out);
        }
        for s in &self.samples {
            if s.t >= horizon {
                break;
            }
            let kind = if s.moer < cfg.threshold {
                WindowKind::Curtailed
            } else {
                WindowKind::NotCurtailed
            };
            match out.last_mut() {
                Some(last) if last.kind == kind => last.end = horizon,
                Some(last) => {
                    last.end = s.t;
                    out.push(Window { start: s.t, end: horizon, kind });
                }
                None => out.push(Window { start: s.t, end: horizon, kind }),
            }
        }
        Ok(out)
    }

    /// Exact emissions of drawing `power_kw` over `[start, end)`:
    /// the sum over constant-rate segments of power × hours × rate.
    pub fn integrate_emissions(
        &self,
        power_kw: f64,
        start: Seconds,
        end: Seconds,
    ) -> Result<f64, TraceError> {
        if end < start {
            return Err(TraceError::InvertedInterval { start, end });
        }
        if !power_kw.is_finite() || power_kw < 0.0 {
            return Err(TraceError::InvalidPower(power_kw));
        }
        let mut total = 0.0;
        for (seg_start, seg_end, moer) in self.segments(start, end)? {
            total += power_kw * ((seg_end - seg_start) as f64 / 3600.0) * moer;
        }
        Ok(total)
    }

    /// Splits `[start, end)` at every sample boundary, yielding
    /// `(seg_start, seg_end, moer)` triples with constant rate.
    pub fn segments(
        &self,
        start: Seconds,
        end: Seconds,
    ) -> Result<Vec<(Seconds, Seconds, f64)>, TraceError> {
        if end < start {
            return Err(TraceError::InvertedInterval { start, end });
        }
        if start < self.start() {
            return Err(TraceError::BeforeStart { t: start, start: self.start() });
        }
        let mut out = Vec::new();
        if start == end {
            return Ok(out);
        }
        let mut cursor = start;
        let mut moer = self.moer_at(start)?;
        for s in &self.samples {
            if s.t <= start {
                continue;
            }
            if s.t >= end {
                break;
            }
            if s.moer != moer {
                out.push((cursor, s.t, moer));
                cursor = s.t;
                moer = s.moer;
            }
        }
        out.push((cursor, end, moer));
        Ok(out)
    }
}

/// Parses the trace CSV wire format: rows of `timestamp,moer` where the
/// timestamp is either integer seconds from the scenario epoch or an
/// ISO-8601 UTC instant (requires `epoch`). An optional header row is
/// skipped.
pub fn parse_trace(
    text: &str,
    region_id: &str,
    epoch: Option<DateTime<Utc>>,
) -> Result<CarbonTrace, TraceError> {
    let mut samples = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let ts_field = fields.next().unwrap_or("").trim();
        let moer_field = fields.next().unwrap_or("").trim();
        if fields.next().is_some() {
            return Err(TraceError::Parse {
                line: line_no,
                reason: "expected exactly two fields: timestamp,moer".into(),
            });
        }
        let t = match parse_timestamp(ts_field, epoch) {
            Ok(t) => t,
            Err(reason) => {
                // An unparseable first row is treated as the optional header.
                if idx == 0 {
                    continue;
                }
                return Err(TraceError::Parse { line: line_no, reason });
            }
        };
        let moer: f64 = moer_field.parse().map_err(|_| TraceError::Parse {
            line: line_no,
            reason: format!("invalid moer value {moer_field:?}"),
        })?;
        if !moer.is_finite() || moer < 0.0 {
            return Err(TraceError::Parse {
                line: line_no,
                reason: format!("moer must be finite and >= 0, got {moer}"),
            });
        }
        if let Some(prev) = samples.last() {
            let prev: &TraceSample = prev;
            if t == prev.t {
                return Err(TraceError::Parse {
                    line: line_no,
                    reason: format!("duplicate timestamp {t}"),
                });
            }
            if t < prev.t {
                return Err(TraceError::Parse {
                    line: line_no,
                    reason: format!("non-monotone timestamp {t} after {}", prev.t),
                });
            }
        }
        samples.push(TraceSample { t, moer });
    }
    CarbonTrace::new(region_id, samples)
}

fn parse_timestamp(field: &str, epoch: Option<DateTime<Utc>>) -> Result<Seconds, String> {
    if let Ok(t) = field.parse::<i64>() {
        return Ok(t);
    }
    let instant = DateTime::parse_from_rfc3339(field)
        .map_err(|_| format!("invalid timestamp {field:?}"))?
        .with_timezone(&Utc);
    let epoch = epoch.ok_or_else(|| {
        format!("ISO-8601 timestamp {field:?} requires a scenario epoch")
    })?;
    Ok(instant.timestamp() - epoch.timestamp())
}
