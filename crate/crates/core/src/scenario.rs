//! Declarative run configuration.
//!
//! Scenarios are flat TOML files: top-level keys for the epoch, horizon, and
//! seed, one `[sites.<id>]` table per site, and `[curtailment]`,
//! `[hysteresis]`, `[rounds]`, `[shards]`, `[trainer]`, and `[accounting]`
//! sections. Every field not given takes its documented default, and the
//! resolved configuration (defaults included) can be serialized back out,
//! which is what the run artifacts echo.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::RoundConfig;
use crate::lifecycle::HysteresisParams;
use crate::trace::{parse_trace, CarbonTrace, CurtailmentConfig};
use crate::trainer::TrainerSpec;
use crate::Seconds;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("failed to parse scenario: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid scenario:\n{}", issues.join("\n"))]
    Invalid { issues: Vec<String> },
    #[error("region {region}: missing trace file {path}")]
    MissingTrace { region: String, path: String },
    #[error("region {region}: {source}")]
    Trace { region: String, source: crate::trace::TraceError },
}

/// One training site: which region's signal gates it, its power draw, and
/// optional per-site capability overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteConfig {
    pub region: String,
    pub power_kw: f64,
    /// Ignore the curtailment signal for provisioning (baseline scenarios);
    /// accounting still uses the real signal.
    #[serde(default)]
    pub always_on: bool,
    /// Overrides `[trainer].steps_per_second` for this site.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_per_second: Option<f64>,
    /// Relative share of the shard deal for heterogeneous fleets.
    #[serde(default = "default_weight")]
    pub weight: u32,
}

fn default_weight() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShardsConfig {
    pub count: usize,
    pub size: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountingConfig {
    /// Power multiplier while a site is provisioning (before it connects).
    #[serde(default = "default_idle_fraction")]
    pub idle_power_fraction: f64,
}

fn default_idle_fraction() -> f64 {
    1.0
}

impl Default for AccountingConfig {
    fn default() -> Self {
        Self { idle_power_fraction: default_idle_fraction() }
    }
}

/// Drops one site's report at commit time of one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureInjection {
    pub site: String,
    pub round: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Absolute instant of t=0, used to convert ISO-8601 trace timestamps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<String>,
    pub horizon: Seconds,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub curtailment: CurtailmentConfig,
    #[serde(default)]
    pub hysteresis: HysteresisParams,
    #[serde(default)]
    pub rounds: RoundConfig,
    pub shards: ShardsConfig,
    #[serde(default = "default_trainer")]
    pub trainer: TrainerSpec,
    #[serde(default)]
    pub accounting: AccountingConfig,
    pub sites: BTreeMap<String, SiteConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FailureInjection>,
}

fn default_trainer() -> TrainerSpec {
    TrainerSpec::default()
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(text)?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario always serializes")
    }

    pub fn epoch_instant(&self) -> Result<Option<DateTime<Utc>>, String> {
        match &self.epoch {
            None => Ok(None),
            Some(raw) => DateTime::parse_from_rfc3339(raw)
                .map(|dt| Some(dt.with_timezone(&Utc)))
                .map_err(|e| format!("epoch: invalid ISO-8601 instant {raw:?}: {e}")),
        }
    }

    /// The scenario-wide trainer spec with the scenario seed applied as the
    /// default data seed.
    pub fn effective_trainer(&self) -> TrainerSpec {
        let mut spec = self.trainer.clone();
        if spec.data_seed == 0 {
            spec.data_seed = self.seed;
        }
        spec
    }

    /// The effective trainer spec for one site: [`Self::effective_trainer`]
    /// plus per-site overrides.
    pub fn trainer_for(&self, site: &SiteConfig) -> TrainerSpec {
        let mut spec = self.effective_trainer();
        if let Some(sps) = site.steps_per_second {
            spec.steps_per_second = sps;
        }
        spec
    }

    /// All referenced region ids, deduplicated and sorted.
    pub fn regions(&self) -> Vec<String> {
        let mut regions: Vec<String> = self.sites.values().map(|s| s.region.clone()).collect();
        regions.sort();
        regions.dedup();
        regions
    }

    /// Validates field-level invariants, returning every problem found.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut issues = Vec::new();
        if self.horizon <= 0 {
            issues.push(format!("horizon: must be > 0, got {}", self.horizon));
        }
        if let Err(e) = self.epoch_instant() {
            issues.push(e);
        }
        if !(self.curtailment.threshold.is_finite() && self.curtailment.threshold > 0.0) {
            issues.push(format!(
                "curtailment.threshold: must be > 0, got {}",
                self.curtailment.threshold
            ));
        }
        if let Err(e) = self.hysteresis.validate() {
            issues.push(format!("hysteresis.{e}"));
        }
        if let Err(e) = self.rounds.validate() {
            issues.push(format!("rounds: {e}"));
        }
        if self.shards.count == 0 {
            issues.push("shards.count: must be >= 1".into());
        }
        if self.shards.size == 0 {
            issues.push("shards.size: must be >= 1".into());
        }
        if let Err(e) = self.trainer.validate() {
            issues.push(format!("trainer: {e}"));
        }
        if !(self.accounting.idle_power_fraction.is_finite()
            && (0.0..=1.0).contains(&self.accounting.idle_power_fraction))
        {
            issues.push(format!(
                "accounting.idle_power_fraction: must be in [0, 1], got {}",
                self.accounting.idle_power_fraction
            ));
        }
        if self.sites.is_empty() {
            issues.push("sites: at least one site is required".into());
        }
        for (id, site) in &self.sites {
            if !is_plain_id(id) {
                issues.push(format!(
                    "sites.{id}: site ids must match [A-Za-z0-9_-]+"
                ));
            }
            if !is_plain_id(&site.region) {
                issues.push(format!(
                    "sites.{id}.region: region ids must match [A-Za-z0-9_-]+"
                ));
            }
            if !(site.power_kw.is_finite() && site.power_kw > 0.0) {
                issues.push(format!("sites.{id}.power_kw: must be > 0, got {}", site.power_kw));
            }
            if site.weight == 0 {
                issues.push(format!("sites.{id}.weight: must be >= 1"));
            }
            if let Some(sps) = site.steps_per_second {
                if !(sps.is_finite() && sps > 0.0) {
                    issues.push(format!("sites.{id}.steps_per_second: must be > 0, got {sps}"));
                }
            }
            if let Err(e) = self.trainer_for(site).validate() {
                issues.push(format!("sites.{id}: {e}"));
            }
        }
        for f in &self.failures {
            if !self.sites.contains_key(&f.site) {
                issues.push(format!("failures: unknown site {}", f.site));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid { issues })
        }
    }

    /// Cross-checks scenario and traces: every region covered, every trace
    /// starting at or before t=0.
    pub fn validate_traces(
        &self,
        traces: &BTreeMap<String, CarbonTrace>,
    ) -> Result<(), ScenarioError> {
        let mut issues = Vec::new();
        for region in self.regions() {
            match traces.get(&region) {
                None => issues.push(format!("region {region}: no trace loaded")),
                Some(trace) => {
                    if trace.start() > 0 {
                        issues.push(format!(
                            "region {region}: trace starts at t={} but must cover t=0",
                            trace.start()
                        ));
                    }
                }
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid { issues })
        }
    }
}

fn is_plain_id(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Loads `<region_id>.csv` from `dir` for every region the scenario
/// references.
pub fn load_traces(
    scenario: &Scenario,
    dir: &Path,
) -> Result<BTreeMap<String, CarbonTrace>, ScenarioError> {
    let epoch = scenario
        .epoch_instant()
        .map_err(|e| ScenarioError::Invalid { issues: vec![e] })?;
    let mut traces = BTreeMap::new();
    for region in scenario.regions() {
        let path = dir.join(format!("{region}.csv"));
        let text = fs::read_to_string(&path).map_err(|_| ScenarioError::MissingTrace {
            region: region.clone(),
            path: path.display().to_string(),
        })?;
        let trace = parse_trace(&text, &region, epoch)
            .map_err(|source| ScenarioError::Trace { region: region.clone(), source })?;
        traces.insert(region, trace);
    }
    Ok(traces)
}

impl Scenario {
    /// A minimal scenario for tests and benches: one region per site, all
    /// fields defaulted.
    pub fn synthetic(
        sites: &[(&str, &str)],
        shards: ShardsConfig,
        horizon: Seconds,
    ) -> Self {
        let sites = sites
            .iter()
            .map(|(id, region)| {
                (
                    id.to_string(),
                    SiteConfig {
                        region: region.to_string(),
                        power_kw: 2.0,
                        always_on: false,
                        steps_per_second: None,
                        weight: 1,
                    },
                )
            })
            .collect();
        Scenario {
            epoch: None,
            horizon,
            seed: 1,
            curtailment: CurtailmentConfig::default(),
            hysteresis: HysteresisParams::default(),
            rounds: RoundConfig::default(),
            shards,
            trainer: TrainerSpec { data_seed: 1, ..TrainerSpec::default() },
            accounting: AccountingConfig::default(),
            sites,
            failures: Vec::new(),
        }
    }
}
