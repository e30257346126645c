//! Local training over assigned shards.
//!
//! Two trainer kinds share one contract: given the global model, a shard
//! assignment, and a time budget, consume rows in optimizer-step quanta and
//! return the updated model, the number of steps completed, and per-shard
//! progress.
//!
//! - `numeric` runs sequential mini-batch SGD on a synthetic linear
//!   regression problem. Rows materialize from a counter-based generator, so
//!   the same `(seed, shard, row)` always yields the same sample on every
//!   platform, and the floating-point reduction order is fixed, making whole
//!   runs bit-reproducible.
//! - `throughput` moves only the counters and leaves the model untouched,
//!   for scheduling studies where the numerics don't matter.
//!
//! The optimizer step is the atomic work quantum: a site stopped by a timer
//! or a drain still finishes the step it is in, which is modeled as
//! completing at least one step whenever the budget is positive and work
//! remains.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sharding::{ShardAssignment, ShardTable};
use crate::Seconds;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("training budget must be >= 0, got {0}")]
    NegativeBudget(Seconds),
    #[error("assignment references shard {shard} at row {start_row}, but the shard has only {size} rows")]
    ShardComplete { shard: usize, start_row: u64, size: u64 },
    #[error("unknown shard {0} in assignment")]
    UnknownShard(usize),
    #[error("invalid trainer config: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerKind {
    Numeric,
    Throughput,
}

/// Per-site trainer configuration.
///
/// `steps_per_second` is the optimizer-step rate of the whole site;
/// one step consumes `micro_batch_rows * grad_accum * local_ranks` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSpec {
    pub kind: TrainerKind,
    pub steps_per_second: f64,
    pub micro_batch_rows: u64,
    pub grad_accum: u64,
    pub local_ranks: u64,
    pub learning_rate: f64,
    pub data_seed: u64,
    pub noise_scale: f64,
    pub dim: usize,
}

impl Default for TrainerSpec {
    fn default() -> Self {
        Self {
            kind: TrainerKind::Throughput,
            steps_per_second: 0.45,
            micro_batch_rows: 8,
            grad_accum: 4,
            local_ranks: 4,
            learning_rate: 0.05,
            data_seed: 0,
            noise_scale: 0.0,
            dim: 8,
        }
    }
}

impl TrainerSpec {
    pub fn validate(&self) -> Result<(), TrainerError> {
        if !(self.steps_per_second.is_finite() && self.steps_per_second > 0.0) {
            return Err(TrainerError::InvalidSpec(format!(
                "steps_per_second must be > 0, got {}",
                self.steps_per_second
            )));
        }
        if self.micro_batch_rows == 0 || self.grad_accum == 0 || self.local_ranks == 0 {
            return Err(TrainerError::InvalidSpec(
                "micro_batch_rows, grad_accum, and local_ranks must be >= 1".into(),
            ));
        }
        if self.kind == TrainerKind::Numeric {
            if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
                return Err(TrainerError::InvalidSpec(format!(
                    "learning_rate must be > 0, got {}",
                    self.learning_rate
                )));
            }
            if self.dim == 0 {
                return Err(TrainerError::InvalidSpec("dim must be >= 1".into()));
            }
            if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
                return Err(TrainerError::InvalidSpec(format!(
                    "noise_scale must be >= 0, got {}",
                    self.noise_scale
                )));
            }
        }
        Ok(())
    }

    /// Rows consumed by one full optimizer step.
    pub fn rows_per_step(&self) -> u64 {
        self.micro_batch_rows * self.grad_accum * self.local_ranks
    }

    /// Whole steps that fit in `budget` seconds.
    pub fn steps_for_budget(&self, budget: Seconds) -> u64 {
        if budget <= 0 {
            return 0;
        }
        (budget as f64 * self.steps_per_second).floor() as u64
    }

    /// Whole seconds needed to run `steps` optimizer steps.
    pub fn seconds_for_steps(&self, steps: u64) -> Seconds {
        if steps == 0 {
            return 0;
        }
        (steps as f64 / self.steps_per_second).ceil() as Seconds
    }
}

/// The global (or per-site) parameter vector plus a commit counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub params: Vec<f64>,
    pub version: u64,
}

impl ModelState {
    pub fn zeros(dim: usize) -> Self {
        Self { params: vec![0.0; dim], version: 0 }
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }
}

/// A contiguous block of consumed rows within one shard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsumedRange {
    pub shard: usize,
    pub start_row: u64,
    pub end_row: u64,
}

/// A site's round result: updated model, batches processed, and per-shard
/// progress values for its assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteUpdate {
    pub site_id: String,
    pub theta: ModelState,
    pub batches: u64,
    pub progress: BTreeMap<usize, u64>,
    pub consumed: Vec<ConsumedRange>,
    pub train_seconds: Seconds,
    pub rows_consumed: u64,
}

/// Runs local training for up to `budget` seconds over `assignment`.
///
/// Steps are `floor(budget * steps_per_second)`, bumped to one when the
/// budget is positive but shorter than a step (the in-flight step completes
/// past the timer), and capped by the rows remaining in the assignment.
/// `train_seconds` reports the time actually attributable to training: the
/// whole budget when the budget binds, or the (possibly shorter or slightly
/// longer) step time otherwise.
pub fn local_train(
    theta: &ModelState,
    spec: &TrainerSpec,
    assignment: &ShardAssignment,
    table: &ShardTable,
    budget: Seconds,
) -> Result<SiteUpdate, TrainerError> {
    if budget < 0 {
        return Err(TrainerError::NegativeBudget(budget));
    }
    spec.validate()?;

    // Remaining rows per assigned shard, in assignment order.
    let mut avail: Vec<(usize, u64, u64)> = Vec::with_capacity(assignment.entries.len());
    let mut total_avail: u64 = 0;
    for e in &assignment.entries {
        let size = table.size_of(e.shard).map_err(|_| TrainerError::UnknownShard(e.shard))?;
        if e.start_row >= size {
            return Err(TrainerError::ShardComplete { shard: e.shard, start_row: e.start_row, size });
        }
        let rows = size - e.start_row;
        avail.push((e.shard, e.start_row, rows));
        total_avail += rows;
    }

    let rows_per_step = spec.rows_per_step();
    let step_cap = total_avail.div_ceil(rows_per_step);
    let mut steps = spec.steps_for_budget(budget);
    let budget_bound = steps;
    if steps == 0 && budget > 0 && total_avail > 0 {
        steps = 1;
    }
    steps = steps.min(step_cap);
    let rows_consumed = (steps * rows_per_step).min(total_avail);

    let train_seconds = if steps == 0 {
        0
    } else if steps == step_cap && step_cap <= budget_bound.max(1) {
        // Ran out of assigned rows before the timer.
        spec.seconds_for_steps(steps)
    } else {
        budget.max(spec.seconds_for_steps(steps))
    };

    // Materialize consumed ranges and per-shard progress.
    let mut consumed = Vec::new();
    let mut progress = BTreeMap::new();
    let mut left = rows_consumed;
    for &(shard, start_row, rows) in &avail {
        if left == 0 {
            break;
        }
        let take = rows.min(left);
        consumed.push(ConsumedRange { shard, start_row, end_row: start_row + take });
        progress.insert(shard, start_row + take);
        left -= take;
    }

    let theta_out = match spec.kind {
        TrainerKind::Throughput => theta.clone(),
        TrainerKind::Numeric => run_sgd(theta, spec, &consumed),
    };

    Ok(SiteUpdate {
        site_id: assignment.site_id.clone(),
        theta: theta_out,
        batches: steps,
        progress,
        consumed,
        train_seconds,
        rows_consumed,
    })
}

/// Sequential mini-batch SGD over the consumed row stream. Rows feed in
/// assignment order; each chunk of `rows_per_step` rows is one optimizer
/// step, with the gradient reduced in ascending stream order so the
/// trajectory is independent of how rows are notionally laid out across
/// ranks.
fn run_sgd(theta: &ModelState, spec: &TrainerSpec, consumed: &[ConsumedRange]) -> ModelState {
    let rows_per_step = spec.rows_per_step() as usize;
    let mut params = theta.params.clone();
    let mut batch: Vec<(Vec<f64>, f64)> = Vec::with_capacity(rows_per_step);
    let flush = |params: &mut Vec<f64>, batch: &mut Vec<(Vec<f64>, f64)>| {
        if batch.is_empty() {
            return;
        }
        let grad = batch_gradient(params, batch);
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= spec.learning_rate * g;
        }
        batch.clear();
    };
    for range in consumed {
        for row in range.start_row..range.end_row {
            batch.push(generate_row(spec.data_seed, range.shard, row, spec.dim, spec.noise_scale));
            if batch.len() == rows_per_step {
                flush(&mut params, &mut batch);
            }
        }
    }
    flush(&mut params, &mut batch);
    ModelState { params, version: theta.version }
}

/// Gradient of `f(theta) = 1/2 * mean((x.theta - y)^2)` over `rows`,
/// accumulated in row order.
pub fn batch_gradient(theta: &[f64], rows: &[(Vec<f64>, f64)]) -> Vec<f64> {
    let mut grad = vec![0.0; theta.len()];
    for (x, y) in rows {
        let residual = dot(x, theta) - y;
        for (g, xi) in grad.iter_mut().zip(x) {
            *g += residual * xi;
        }
    }
    let n = rows.len() as f64;
    for g in &mut grad {
        *g /= n;
    }
    grad
}

/// `f(theta) = 1/2 * mean((x.theta - y)^2)` over `rows`.
pub fn batch_objective(theta: &[f64], rows: &[(Vec<f64>, f64)]) -> f64 {
    let mut sum = 0.0;
    for (x, y) in rows {
        let residual = dot(x, theta) - y;
        sum += residual * residual;
    }
    0.5 * sum / rows.len() as f64
}

/// Objective over the entire shard table (every row of every shard).
pub fn dataset_objective(spec: &TrainerSpec, sizes: &[u64], theta: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0u64;
    for (shard, &size) in sizes.iter().enumerate() {
        for row in 0..size {
            let (x, y) = generate_row(spec.data_seed, shard, row, spec.dim, spec.noise_scale);
            let residual = dot(&x, theta) - y;
            sum += residual * residual;
            count += 1;
        }
    }
    0.5 * sum / count as f64
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Deterministic synthetic regression pair for `(seed, shard, row)`:
/// features uniform in [-1, 1), label `<x, theta_star> + noise_scale * u`
/// with `u` uniform in [-1, 1). Bit-identical across platforms.
pub fn generate_row(
    data_seed: u64,
    shard: usize,
    row: u64,
    dim: usize,
    noise_scale: f64,
) -> (Vec<f64>, f64) {
    let truth = ground_truth(data_seed, dim);
    let base = mix_chain(&[data_seed, STREAM_ROW, shard as u64, row]);
    let x: Vec<f64> = (0..dim).map(|k| unit_symmetric(mix(base ^ GOLDEN.wrapping_mul(k as u64 + 1)))).collect();
    let mut y = dot(&x, &truth);
    if noise_scale > 0.0 {
        y += noise_scale * unit_symmetric(mix(base ^ STREAM_NOISE));
    }
    (x, y)
}

/// The fixed regression target for `data_seed`, uniform in [-1, 1)^dim.
pub fn ground_truth(data_seed: u64, dim: usize) -> Vec<f64> {
    let base = mix_chain(&[data_seed, STREAM_TRUTH]);
    (0..dim).map(|k| unit_symmetric(mix(base ^ GOLDEN.wrapping_mul(k as u64 + 1)))).collect()
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const STREAM_ROW: u64 = 0x726f_7773;
const STREAM_TRUTH: u64 = 0x0074_7275_7468;
const STREAM_NOISE: u64 = 0x006e_6f69_7365;

// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix_chain(parts: &[u64]) -> u64 {
    let mut h = 0u64;
    for &p in parts {
        h = mix(h ^ p.wrapping_mul(GOLDEN));
    }
    h
}

/// Maps a u64 to [-1, 1) using the top 53 bits.
fn unit_symmetric(bits: u64) -> f64 {
    let unit = (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    2.0 * unit - 1.0
}
