//! Energy, curtailed-energy-fraction, and operational-emissions ledgers.
//!
//! Sites draw constant power while provisioned. Every powered interval is
//! split at each emissions-rate change of the site's region, so each ledger
//! entry has a constant rate, a single curtailment state, and an exact
//! emissions integral (energy × rate).

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{CarbonTrace, CurtailmentConfig, TraceError};
use crate::Seconds;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("interval [{start}, {end}) for site {site} has non-positive length")]
    EmptyInterval { site: String, start: Seconds, end: Seconds },
    #[error("interval [{start}, {end}) for site {site} overlaps an existing interval ending at {last_end}")]
    Overlap { site: String, start: Seconds, end: Seconds, last_end: Seconds },
    #[error("power must be finite and >= 0, got {0}")]
    InvalidPower(f64),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Constant power draw of one provisioned site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SitePowerModel {
    pub site_id: String,
    pub power_kw: f64,
}

/// One constant-rate consumption segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyInterval {
    pub site_id: String,
    pub start: Seconds,
    pub end: Seconds,
    pub energy_kwh: f64,
    pub curtailed: bool,
    pub emissions_g: f64,
}

/// Append-only ledger of per-site consumption intervals.
#[derive(Debug, Clone, Default)]
pub struct EnergyLedger {
    intervals: Vec<EnergyInterval>,
    last_end: BTreeMap<String, Seconds>,
}

/// Run-level counters supplied by the simulation loop at finalize time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunCounters {
    pub wall_clock_s: Seconds,
    pub training_s: Seconds,
    pub overhead_s: Seconds,
    pub rounds: u64,
    pub steps_total: u64,
}

/// Aggregated run totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub total_energy_kwh: f64,
    pub curtailed_energy_kwh: f64,
    pub curtailed_fraction: f64,
    pub total_emissions_g: f64,
    pub wall_clock_s: Seconds,
    pub training_s: Seconds,
    pub overhead_s: Seconds,
    pub rounds: u64,
    pub steps_total: u64,
}

impl EnergyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `[start, end)` of consumption at `power_kw` for one site,
    /// appending one interval per constant-rate segment of the region trace.
    /// Intervals for a site must be recorded in time order and must not
    /// overlap.
    pub fn record_interval(
        &mut self,
        site_id: &str,
        power_kw: f64,
        start: Seconds,
        end: Seconds,
        trace: &CarbonTrace,
        cfg: &CurtailmentConfig,
    ) -> Result<(), LedgerError> {
        if end <= start {
            return Err(LedgerError::EmptyInterval { site: site_id.into(), start, end });
        }
        if !power_kw.is_finite() || power_kw < 0.0 {
            return Err(LedgerError::InvalidPower(power_kw));
        }
        if let Some(&last_end) = self.last_end.get(site_id) {
            if start < last_end {
                return Err(LedgerError::Overlap { site: site_id.into(), start, end, last_end });
            }
        }
        for (seg_start, seg_end, moer) in trace.segments(start, end)? {
            let energy_kwh = power_kw * ((seg_end - seg_start) as f64 / 3600.0);
            self.intervals.push(EnergyInterval {
                site_id: site_id.into(),
                start: seg_start,
                end: seg_end,
                energy_kwh,
                curtailed: moer < cfg.threshold,
                emissions_g: energy_kwh * moer,
            });
        }
        self.last_end.insert(site_id.into(), end);
        Ok(())
    }

    pub fn intervals(&self) -> &[EnergyInterval] {
        &self.intervals
    }

    pub fn total_energy_kwh(&self) -> f64 {
        self.intervals.iter().map(|i| i.energy_kwh).sum()
    }

    /// Aggregates the ledger into a run report. An empty ledger reports
    /// zeros with a curtailed fraction of zero.
    pub fn finalize(&self, counters: RunCounters) -> RunReport {
        let mut total = 0.0;
        let mut curtailed = 0.0;
        let mut emissions = 0.0;
        for i in &self.intervals {
            total += i.energy_kwh;
            if i.curtailed {
                curtailed += i.energy_kwh;
            }
            emissions += i.emissions_g;
        }
        let fraction = if total > 0.0 { curtailed / total } else { 0.0 };
        RunReport {
            total_energy_kwh: total,
            curtailed_energy_kwh: curtailed,
            curtailed_fraction: fraction,
            total_emissions_g: emissions,
            wall_clock_s: counters.wall_clock_s,
            training_s: counters.training_s,
            overhead_s: counters.overhead_s,
            rounds: counters.rounds,
            steps_total: counters.steps_total,
        }
    }

    /// Writes `site_id,start,end,kwh,curtailed,emissions_g` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "site_id,start,end,kwh,curtailed,emissions_g")?;
        for i in &self.intervals {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                i.site_id, i.start, i.end, i.energy_kwh, i.curtailed, i.emissions_g
            )?;
        }
        Ok(())
    }
}

impl RunReport {
    /// Writes one `field,value` row per report field, values printed with
    /// full round-trip precision.
    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "field,value")?;
        writeln!(out, "total_energy_kwh,{}", self.total_energy_kwh)?;
        writeln!(out, "curtailed_energy_kwh,{}", self.curtailed_energy_kwh)?;
        writeln!(out, "curtailed_fraction,{}", self.curtailed_fraction)?;
        writeln!(out, "total_emissions_g,{}", self.total_emissions_g)?;
        writeln!(out, "wall_clock_s,{}", self.wall_clock_s)?;
        writeln!(out, "training_s,{}", self.training_s)?;
        writeln!(out, "overhead_s,{}", self.overhead_s)?;
        writeln!(out, "rounds,{}", self.rounds)?;
        writeln!(out, "steps_total,{}", self.steps_total)?;
        Ok(())
    }
}
