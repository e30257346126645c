//! Execution modes, work-weighted averaging, and round mechanics.
//!
//! The execution mode follows the size of the active set: no active sites
//! suspends training, one site trains solo with no synchronization overhead,
//! two or more train in timed federated rounds. Round results combine by
//! weighting each site's model with the fraction of batches it processed,
//! and model aggregation commits atomically with the progress merge.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sharding::{assign_shards, ShardError, ShardTable};
use crate::trainer::{local_train, ModelState, SiteUpdate, TrainerError, TrainerSpec};
use crate::Seconds;

#[derive(Debug, Error)]
pub enum CoordinatorError {
    #[error("update from {site} has dimension {got}, expected {expected}")]
    DimensionMismatch { site: String, got: usize, expected: usize },
    #[error("no trainer spec for site {0}")]
    MissingTrainer(String),
    #[error("round requires a federated mode (>= 2 active sites), got {0}")]
    NotFederated(usize),
    #[error("solo mode requires exactly the one active site")]
    NotSolo,
    #[error(transparent)]
    Shard(#[from] ShardError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecutionMode {
    Idle,
    Solo(String),
    Federated(BTreeSet<String>),
}

impl ExecutionMode {
    pub fn label(&self) -> &'static str {
        match self {
            ExecutionMode::Idle => "idle",
            ExecutionMode::Solo(_) => "solo",
            ExecutionMode::Federated(_) => "federated",
        }
    }
}

/// Derives the execution mode from the active set.
pub fn mode_of(active: &BTreeSet<String>) -> ExecutionMode {
    match active.len() {
        0 => ExecutionMode::Idle,
        1 => ExecutionMode::Solo(active.iter().next().unwrap().clone()),
        _ => ExecutionMode::Federated(active.clone()),
    }
}

/// Round duration and the fixed per-round overheads charged before training
/// starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundConfig {
    pub delta_round: Seconds,
    pub overhead_serialize: Seconds,
    pub overhead_setup_teardown: Seconds,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self { delta_round: 600, overhead_serialize: 60, overhead_setup_teardown: 55 }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.overhead_serialize < 0 || self.overhead_setup_teardown < 0 {
            return Err("round overheads must be >= 0".into());
        }
        if self.delta_round <= self.overhead_serialize + self.overhead_setup_teardown {
            return Err(format!(
                "delta_round ({}) must exceed total overhead ({})",
                self.delta_round,
                self.overhead_serialize + self.overhead_setup_teardown
            ));
        }
        Ok(())
    }

    pub fn overhead_total(&self) -> Seconds {
        self.overhead_serialize + self.overhead_setup_teardown
    }

    /// Per-site training time inside one full round.
    pub fn training_budget(&self) -> Seconds {
        self.delta_round - self.overhead_total()
    }
}

/// One committed federated round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_index: u64,
    pub start: Seconds,
    pub end: Seconds,
    pub participants: Vec<String>,
    pub updates: Vec<SiteUpdate>,
    pub aggregated: ModelState,
}

/// Work-weighted model averaging: each update contributes with weight
/// `b_s / sum(b)`. With no processed batches the prior model is returned
/// unchanged (version included); otherwise the version increments.
///
/// Summation runs in the given update order, elementwise, so the result is
/// bitwise reproducible for a fixed ordering.
pub fn aggregate(prior: &ModelState, updates: &[SiteUpdate]) -> Result<ModelState, CoordinatorError> {
    let expected = prior.dim();
    for u in updates {
        if u.theta.dim() != expected {
            return Err(CoordinatorError::DimensionMismatch {
                site: u.site_id.clone(),
                got: u.theta.dim(),
                expected,
            });
        }
    }
    let total_batches: u64 = updates.iter().map(|u| u.batches).sum();
    if total_batches == 0 {
        return Ok(prior.clone());
    }
    let total = total_batches as f64;
    let mut params = vec![0.0; expected];
    for u in updates {
        let weight = u.batches as f64 / total;
        for (acc, v) in params.iter_mut().zip(&u.theta.params) {
            *acc += weight * v;
        }
    }
    Ok(ModelState { params, version: prior.version + 1 })
}

/// Applies model aggregation and the progress merge as one atomic commit:
/// either both the model and the table advance, or neither does.
pub fn commit(
    model: &ModelState,
    table: &ShardTable,
    updates: &[SiteUpdate],
) -> Result<(ModelState, ShardTable), CoordinatorError> {
    let mut next_table = table.clone();
    for u in updates {
        next_table.merge_progress(&u.progress)?;
    }
    let next_model = aggregate(model, updates)?;
    Ok((next_model, next_table))
}

/// Runs one uninterrupted federated round: assign, train every site for the
/// full budget, and commit. The event-driven engine composes the same
/// primitives to handle joins and drains mid-round.
pub fn run_round(
    theta: &ModelState,
    active: &BTreeSet<String>,
    table: &ShardTable,
    cfg: &RoundConfig,
    trainers: &BTreeMap<String, TrainerSpec>,
    round_index: u64,
    start: Seconds,
) -> Result<(ModelState, ShardTable, RoundRecord), CoordinatorError> {
    if active.len() < 2 {
        return Err(CoordinatorError::NotFederated(active.len()));
    }
    let sites: Vec<String> = active.iter().cloned().collect();
    let assignments = assign_shards(table, &sites)?;
    let budget = cfg.training_budget();
    let mut updates = Vec::new();
    for site in &sites {
        let spec = trainers.get(site).ok_or_else(|| CoordinatorError::MissingTrainer(site.clone()))?;
        if let Some(asg) = assignments.get(site) {
            updates.push(local_train(theta, spec, asg, table, budget)?);
        }
    }
    let (next_model, next_table) = commit(theta, table, &updates)?;
    let record = RoundRecord {
        round_index,
        start,
        end: start + cfg.delta_round,
        participants: sites,
        updates,
        aggregated: next_model.clone(),
    };
    Ok((next_model, next_table, record))
}

/// Runs solo mode for `duration` seconds: the site holds every incomplete
/// shard and trains with no per-round overhead; its result becomes the
/// global model on exit.
pub fn run_solo(
    theta: &ModelState,
    site: &str,
    table: &ShardTable,
    trainers: &BTreeMap<String, TrainerSpec>,
    duration: Seconds,
) -> Result<(ModelState, ShardTable, SiteUpdate), CoordinatorError> {
    let spec = trainers.get(site).ok_or_else(|| CoordinatorError::MissingTrainer(site.to_string()))?;
    let assignments = assign_shards(table, &[site.to_string()])?;
    let update = match assignments.get(site) {
        Some(asg) => local_train(theta, spec, asg, table, duration)?,
        None => return Err(CoordinatorError::NotSolo),
    };
    let (next_model, next_table) = commit(theta, table, std::slice::from_ref(&update))?;
    Ok((next_model, next_table, update))
}
