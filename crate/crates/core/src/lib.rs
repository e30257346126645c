//! Core library for simulating curtailment-aware federated training.
//!
//! The simulator replays marginal-emissions traces to derive a per-region
//! curtailment signal, drives hysteresis-debounced site lifecycles from that
//! signal, runs timed federated rounds with work-weighted model averaging
//! over a pluggable trainer, tracks shard-level data progress, and produces
//! energy and operational-emissions ledgers together with a deterministic
//! event log.
//!
//! The crate is organised around the stages of that pipeline:
//!
//! - [`trace`]: emissions traces, the curtailment signal, window enumeration,
//!   and emissions integration
//! - [`lifecycle`]: per-site provisioning state machines with time-based
//!   hysteresis
//! - [`sharding`]: the shard table, progress vector, and assignment logic
//! - [`trainer`]: local training (deterministic SGD or throughput-only)
//! - [`coordinator`]: execution modes, round mechanics, and work-weighted
//!   averaging
//! - [`accounting`]: energy intervals, curtailed-energy fraction, and
//!   emissions reports
//! - [`scenario`]: the declarative run configuration
//! - [`engine`]: the discrete-event loop wiring everything together
//! - [`replay`]: post-hoc validation of event logs

pub mod accounting;
pub mod coordinator;
pub mod engine;
pub mod events;
pub mod lifecycle;
pub mod replay;
pub mod scenario;
pub mod sharding;
pub mod trace;
pub mod trainer;

/// Simulation time in whole seconds since the scenario epoch.
///
/// All event times are integers; this keeps the event queue free of
/// floating-point drift.
pub type Seconds = i64;

pub use accounting::{EnergyInterval, EnergyLedger, RunCounters, RunReport};
pub use coordinator::{ExecutionMode, RoundConfig, RoundRecord};
pub use engine::{run, RunOutput, SimError, SoloRecord};
pub use events::{EventKind, EventLog, LogEvent};
pub use lifecycle::{HysteresisParams, LifecycleEvent, LifecycleEventKind, SiteLifecycle, SiteState};
pub use scenario::Scenario;
pub use sharding::{ShardAssignment, ShardTable};
pub use trace::{CarbonTrace, CurtailmentConfig, Window, WindowKind};
pub use trainer::{ModelState, SiteUpdate, TrainerKind, TrainerSpec};
