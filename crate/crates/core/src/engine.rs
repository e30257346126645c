//! Deterministic discrete-event simulation loop.
//!
//! The engine replays region traces into per-site curtailment signals,
//! drives one lifecycle state machine per site, switches the coordinator
//! between idle, solo, and federated execution, runs timed rounds with
//! mid-round joins and graceful drains, and charges every provisioned second
//! to the energy ledger.
//!
//! Determinism: the clock is integer seconds, the queue orders events by
//! `(time, insertion seq)`, signal changes are seeded before any runtime
//! timer so they win ties, all site iteration is in sorted order, and
//! training itself is a pure function of its inputs. Identical inputs yield
//! byte-identical event logs and bit-identical models.
//!
//! Training is simulated in whole segments rather than per-step events: a
//! solo span or a round participation is evaluated lazily, at the moment an
//! event (commit, drain, join, horizon) pins down its actual duration.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use thiserror::Error;

use crate::accounting::{EnergyLedger, LedgerError, RunCounters, RunReport};
use crate::coordinator::{commit, CoordinatorError, RoundRecord};
use crate::events::{EventKind, EventLog, LogEvent, RunSummary, UpdateSummary};
use crate::lifecycle::{
    LifecycleError, LifecycleEvent, LifecycleEventKind, SiteLifecycle, SiteState,
};
use crate::scenario::{Scenario, ScenarioError, SiteConfig};
use crate::sharding::{assign_shards_weighted, AssignedShard, ShardAssignment, ShardError, ShardTable};
use crate::trace::{CarbonTrace, TraceError};
use crate::trainer::{local_train, ConsumedRange, ModelState, SiteUpdate, TrainerError, TrainerSpec};
use crate::Seconds;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
    #[error(transparent)]
    Shard(#[from] ShardError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Coordinator(#[from] CoordinatorError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: EventLog,
    pub report: RunReport,
    pub model: ModelState,
    pub ledger: EnergyLedger,
    pub rounds: Vec<RoundRecord>,
    pub solo: Vec<SoloRecord>,
    /// Every training invocation's consumed row ranges, including reports
    /// dropped by failure injection. Instrumentation for exactly-once
    /// analysis.
    pub consumption: Vec<Consumption>,
}

/// One committed solo training span.
#[derive(Debug, Clone)]
pub struct SoloRecord {
    pub site_id: String,
    pub start: Seconds,
    pub end: Seconds,
    pub update: SiteUpdate,
}

#[derive(Debug, Clone)]
pub struct Consumption {
    pub site_id: String,
    pub round: Option<u64>,
    pub reported: bool,
    pub ranges: Vec<ConsumedRange>,
}

/// Runs a scenario against its region traces.
pub fn run(
    scenario: &Scenario,
    traces: &BTreeMap<String, CarbonTrace>,
) -> Result<RunOutput, SimError> {
    scenario.validate()?;
    scenario.validate_traces(traces)?;
    let mut engine = Engine::new(scenario, traces)?;
    engine.seed_queue()?;
    engine.run_loop()?;
    engine.into_output()
}

#[derive(Debug)]
enum Payload {
    Signal { region: String, curtailed: bool },
    Boot,
    Timer { site: String, gen: u64 },
    Ready { site: String },
    Commit { gen: u64 },
    SoloDone { gen: u64 },
    DrainDone { site: String },
    Horizon,
}

#[derive(Debug)]
struct Queued {
    time: Seconds,
    qseq: u64,
    payload: Payload,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.qseq == other.qseq
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.qseq).cmp(&(other.time, other.qseq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PowerPhase {
    Off,
    Provisioning(Seconds),
    On(Seconds),
}

struct SiteRt {
    config: SiteConfig,
    trainer: TrainerSpec,
    lc: SiteLifecycle,
    timer_gen: u64,
    power: PowerPhase,
}

struct Participation {
    train_start: Seconds,
    budget: Seconds,
    assignment: ShardAssignment,
    drained: bool,
    update: Option<SiteUpdate>,
}

struct Round {
    index: u64,
    start: Seconds,
    natural_end: Seconds,
    theta0: ModelState,
    commit_gen: u64,
    parts: BTreeMap<String, Participation>,
}

struct SoloSeg {
    site: String,
    start: Seconds,
    assignment: ShardAssignment,
    gen: u64,
}

enum ModeState {
    Idle,
    Solo(SoloSeg),
    Federated(Round),
}

struct Engine<'a> {
    scenario: &'a Scenario,
    traces: &'a BTreeMap<String, CarbonTrace>,
    queue: BinaryHeap<Reverse<Queued>>,
    next_qseq: u64,
    clock: Seconds,
    sites: BTreeMap<String, SiteRt>,
    mode: ModeState,
    model: ModelState,
    table: ShardTable,
    ledger: EnergyLedger,
    log: EventLog,
    log_seq: u64,
    failures: BTreeSet<(String, u64)>,
    commit_gen_counter: u64,
    solo_gen_counter: u64,
    next_round_index: u64,
    counters: RunCounters,
    records: Vec<RoundRecord>,
    solo_records: Vec<SoloRecord>,
    consumption: Vec<Consumption>,
    done: Option<RunReport>,
}

impl<'a> Engine<'a> {
    fn new(
        scenario: &'a Scenario,
        traces: &'a BTreeMap<String, CarbonTrace>,
    ) -> Result<Self, SimError> {
        let mut sites = BTreeMap::new();
        for (id, config) in &scenario.sites {
            sites.insert(
                id.clone(),
                SiteRt {
                    config: config.clone(),
                    trainer: scenario.trainer_for(config),
                    lc: SiteLifecycle::new(id.clone()),
                    timer_gen: 0,
                    power: PowerPhase::Off,
                },
            );
        }
        let table = ShardTable::uniform(scenario.shards.count, scenario.shards.size)?;
        let model = ModelState::zeros(scenario.trainer.dim);
        let failures = scenario
            .failures
            .iter()
            .map(|f| (f.site.clone(), f.round))
            .collect();
        Ok(Self {
            scenario,
            traces,
            queue: BinaryHeap::new(),
            next_qseq: 0,
            clock: 0,
            sites,
            mode: ModeState::Idle,
            model,
            table,
            ledger: EnergyLedger::new(),
            log: EventLog::new(),
            log_seq: 0,
            failures,
            commit_gen_counter: 0,
            solo_gen_counter: 0,
            next_round_index: 0,
            counters: RunCounters::default(),
            records: Vec::new(),
            solo_records: Vec::new(),
            consumption: Vec::new(),
            done: None,
        })
    }

    fn push(&mut self, time: Seconds, payload: Payload) {
        let qseq = self.next_qseq;
        self.next_qseq += 1;
        self.queue.push(Reverse(Queued { time, qseq, payload }));
    }

    fn emit(&mut self, t: Seconds, kind: EventKind) -> LogEvent {
        let seq = self.log_seq;
        self.log_seq += 1;
        LogEvent::new(t, seq, kind)
    }

    fn log_event(&mut self, event: LogEvent) {
        self.log.push(event);
    }

    /// Seeds the initial signal state per region, every signal transition up
    /// to the horizon, the always-on boot, and the horizon sentinel. Signal
    /// events are inserted first so they outrank runtime timers at equal
    /// times.
    fn seed_queue(&mut self) -> Result<(), SimError> {
        let cfg = &self.scenario.curtailment;
        for region in self.scenario.regions() {
            let trace = &self.traces[&region];
            let initial = trace.curtailed_at(cfg, 0)?;
            self.push(0, Payload::Signal { region: region.clone(), curtailed: initial });
        }
        self.push(0, Payload::Boot);
        for region in self.scenario.regions() {
            let trace = &self.traces[&region];
            for w in trace.windows(cfg, self.scenario.horizon)? {
                if w.start > 0 && w.start < self.scenario.horizon {
                    self.push(
                        w.start,
                        Payload::Signal {
                            region: region.clone(),
                            curtailed: w.kind == crate::trace::WindowKind::Curtailed,
                        },
                    );
                }
            }
        }
        self.push(self.scenario.horizon, Payload::Horizon);
        Ok(())
    }

    fn run_loop(&mut self) -> Result<(), SimError> {
        while self.done.is_none() {
            let Some(Reverse(ev)) = self.queue.pop() else {
                return Err(SimError::Internal("queue drained before completion".into()));
            };
            self.clock = ev.time;
            match ev.payload {
                Payload::Signal { region, curtailed } => self.on_signal(&region, curtailed)?,
                Payload::Boot => self.on_boot()?,
                Payload::Timer { site, gen } => self.on_timer(&site, gen)?,
                Payload::Ready { site } => self.on_ready(&site)?,
                Payload::Commit { gen } => self.on_commit(gen)?,
                Payload::SoloDone { gen } => self.on_solo_done(gen)?,
                Payload::DrainDone { site } => self.on_drain_done(&site)?,
                Payload::Horizon => self.on_horizon()?,
            }
        }
        Ok(())
    }

    fn on_signal(&mut self, region: &str, curtailed: bool) -> Result<(), SimError> {
        let t = self.clock;
        let mut ev = self.emit(t, EventKind::SignalChange);
        ev.region = Some(region.to_string());
        ev.curtailed = Some(curtailed);
        self.log_event(ev);

        let ids: Vec<String> = self
            .sites
            .iter()
            .filter(|(_, rt)| rt.config.region == region && !rt.config.always_on)
            .map(|(id, _)| id.clone())
            .collect();
        for id in ids {
            let params = self.scenario.hysteresis;
            let events = self
                .sites
                .get_mut(&id)
                .unwrap()
                .lc
                .observe_signal(&params, t, curtailed)?;
            self.apply_lifecycle_events(&id, events)?;
            self.refresh_timer(&id);
        }
        Ok(())
    }

    fn on_boot(&mut self) -> Result<(), SimError> {
        let always_on: Vec<String> = self
            .sites
            .iter()
            .filter(|(_, rt)| rt.config.always_on)
            .map(|(id, _)| id.clone())
            .collect();
        for id in always_on {
            let params = self.scenario.hysteresis;
            let events = self.sites.get_mut(&id).unwrap().lc.observe_signal(&params, 0, true)?;
            self.apply_lifecycle_events(&id, events)?;
            self.refresh_timer(&id);
        }
        Ok(())
    }

    fn on_timer(&mut self, site: &str, gen: u64) -> Result<(), SimError> {
        let t = self.clock;
        let params = self.scenario.hysteresis;
        let (valid, label) = {
            let rt = &self.sites[site];
            let label = match rt.lc.state() {
                SiteState::ArmingUp { .. } => "tau_up",
                SiteState::ArmingDown { .. } => "tau_down",
                _ => "",
            };
            (rt.timer_gen == gen, label)
        };
        if !valid {
            return Ok(());
        }
        let mut ev = self.emit(t, EventKind::TimerExpiry);
        ev.site = Some(site.to_string());
        ev.timer = Some(label.to_string());
        self.log_event(ev);

        let events = self.sites.get_mut(site).unwrap().lc.on_timer(&params, t)?;
        self.apply_lifecycle_events(site, events)?;
        self.refresh_timer(site);
        Ok(())
    }

    fn apply_lifecycle_events(
        &mut self,
        site: &str,
        events: Vec<LifecycleEvent>,
    ) -> Result<(), SimError> {
        for event in events {
            match event.kind {
                LifecycleEventKind::ProvisionRequested => {
                    let mut ev = self.emit(event.time, EventKind::ProvisionRequested);
                    ev.site = Some(site.to_string());
                    self.log_event(ev);
                    let rt = self.sites.get_mut(site).unwrap();
                    debug_assert_eq!(rt.power, PowerPhase::Off);
                    rt.power = PowerPhase::Provisioning(event.time);
                    let ready_at = rt.lc.ready_at().ok_or_else(|| {
                        SimError::Internal(format!("{site}: provisioning without ready_at"))
                    })?;
                    self.push(ready_at, Payload::Ready { site: site.to_string() });
                }
                LifecycleEventKind::DeprovisionRequested => {
                    let mut ev = self.emit(event.time, EventKind::DeprovisionRequested);
                    ev.site = Some(site.to_string());
                    self.log_event(ev);
                    self.begin_drain(site, event.time)?;
                }
                other => {
                    return Err(SimError::Internal(format!(
                        "unexpected lifecycle event {other:?} from signal path"
                    )))
                }
            }
            if self.done.is_some() {
                break;
            }
        }
        Ok(())
    }

    fn refresh_timer(&mut self, site: &str) {
        let params = self.scenario.hysteresis;
        let clock = self.clock;
        let rt = self.sites.get_mut(site).unwrap();
        rt.timer_gen += 1;
        let gen = rt.timer_gen;
        if let Some(at) = rt.lc.next_timer(&params) {
            self.push(at.max(clock), Payload::Timer { site: site.to_string(), gen });
        }
    }

    fn on_ready(&mut self, site: &str) -> Result<(), SimError> {
        let t = self.clock;
        let events = self.sites.get_mut(site).unwrap().lc.site_ready(t)?;
        debug_assert!(events.iter().all(|e| e.kind == LifecycleEventKind::SiteReady));
        let mut ev = self.emit(t, EventKind::SiteReady);
        ev.site = Some(site.to_string());
        self.log_event(ev);
        self.power_on(site, t)?;
        self.refresh_timer(site);

        match std::mem::replace(&mut self.mode, ModeState::Idle) {
            ModeState::Idle => {
                self.log_mode_change(t, "solo", vec![site.to_string()]);
                let seg = self.start_solo(site, t)?;
                self.mode = ModeState::Solo(seg);
            }
            ModeState::Solo(seg) => {
                self.flush_solo(seg, t)?;
                if self.done.is_some() {
                    return Ok(());
                }
                let members = self.active_sites();
                if members.len() < 2 {
                    return Err(SimError::Internal(format!(
                        "federated transition with {} active sites",
                        members.len()
                    )));
                }
                self.log_mode_change(t, "federated", members.clone());
                let round = self.start_round(t, &members)?;
                self.mode = ModeState::Federated(round);
            }
            ModeState::Federated(mut round) => {
                self.join_round(&mut round, site, t);
                self.mode = ModeState::Federated(round);
            }
        }
        Ok(())
    }

    fn on_commit(&mut self, gen: u64) -> Result<(), SimError> {
        let t = self.clock;
        match std::mem::replace(&mut self.mode, ModeState::Idle) {
            ModeState::Federated(round) if round.commit_gen == gen => {
                self.commit_round(round, t, true)
            }
            other => {
                self.mode = other;
                Ok(())
            }
        }
    }

    fn on_solo_done(&mut self, gen: u64) -> Result<(), SimError> {
        let t = self.clock;
        match std::mem::replace(&mut self.mode, ModeState::Idle) {
            ModeState::Solo(seg) if seg.gen == gen => {
                let site = seg.site.clone();
                self.flush_solo(seg, t)?;
                if self.done.is_none() {
                    // Work remained after the predicted finish (step-rate
                    // rounding); continue solo from here.
                    let seg = self.start_solo(&site, t)?;
                    self.mode = ModeState::Solo(seg);
                }
                Ok(())
            }
            other => {
                self.mode = other;
                Ok(())
            }
        }
    }

    fn on_drain_done(&mut self, site: &str) -> Result<(), SimError> {
        let t = self.clock;
        let events = self.sites.get_mut(site).unwrap().lc.drain_complete(t)?;
        for event in events {
            let kind = match event.kind {
                LifecycleEventKind::DrainComplete => EventKind::DrainComplete,
                LifecycleEventKind::SiteOffline => EventKind::SiteOffline,
                other => {
                    return Err(SimError::Internal(format!(
                        "unexpected lifecycle event {other:?} from drain_complete"
                    )))
                }
            };
            let mut ev = self.emit(event.time, kind);
            ev.site = Some(site.to_string());
            self.log_event(ev);
        }
        self.power_off(site, t)?;
        self.refresh_timer(site);
        Ok(())
    }

    fn on_horizon(&mut self) -> Result<(), SimError> {
        let t = self.clock;
        match std::mem::replace(&mut self.mode, ModeState::Idle) {
            ModeState::Idle => {}
            ModeState::Solo(seg) => self.flush_solo(seg, t)?,
            ModeState::Federated(round) => self.commit_round(round, t, false)?,
        }
        if self.done.is_none() {
            self.run_complete(t, "horizon")?;
        }
        Ok(())
    }

    /// The sites currently up and training: Active, plus ArmingDown (still
    /// working through the hysteresis period).
    fn active_sites(&self) -> Vec<String> {
        self.sites
            .iter()
            .filter(|(_, rt)| rt.lc.is_active())
            .map(|(id, _)| id.clone())
            .collect()
    }

    fn log_mode_change(&mut self, t: Seconds, mode: &str, members: Vec<String>) {
        let mut ev = self.emit(t, EventKind::ModeChange);
        ev.mode = Some(mode.to_string());
        ev.members = Some(members);
        self.log_event(ev);
    }

    // ------------------------------------------------------------------
    // Solo mode
    // ------------------------------------------------------------------

    fn start_solo(&mut self, site: &str, t: Seconds) -> Result<SoloSeg, SimError> {
        let sites = vec![(site.to_string(), 1u32)];
        let mut assignments = assign_shards_weighted(&self.table, &sites)?;
        let assignment = assignments.remove(site).ok_or_else(|| {
            SimError::Internal("solo start with no incomplete work".into())
        })?;
        self.solo_gen_counter += 1;
        let gen = self.solo_gen_counter;
        let spec = &self.sites[site].trainer;
        let remaining: u64 = assignment
            .entries
            .iter()
            .map(|e| self.table.sizes()[e.shard] - e.start_row)
            .sum();
        let steps_needed = remaining.div_ceil(spec.rows_per_step());
        let finish = t + spec.seconds_for_steps(steps_needed);
        self.push(finish, Payload::SoloDone { gen });
        Ok(SoloSeg { site: site.to_string(), start: t, assignment, gen })
    }

    /// Trains the solo segment over its actual duration and commits the
    /// result as the new global model.
    fn flush_solo(&mut self, seg: SoloSeg, t: Seconds) -> Result<(), SimError> {
        self.solo_gen_counter += 1; // invalidate any pending SoloDone
        let budget = t - seg.start;
        let spec = self.sites[&seg.site].trainer.clone();
        let update = local_train(&self.model, &spec, &seg.assignment, &self.table, budget)?;
        let (model, table) = commit(&self.model, &self.table, std::slice::from_ref(&update))?;
        self.model = model;
        self.table = table;

        self.counters.training_s += update.train_seconds;
        self.counters.steps_total += update.batches;
        self.consumption.push(Consumption {
            site_id: seg.site.clone(),
            round: None,
            reported: true,
            ranges: update.consumed.clone(),
        });

        let mut updates = BTreeMap::new();
        updates.insert(seg.site.clone(), summarize(&update, true));
        let mut ev = self.emit(t, EventKind::RoundCommit);
        ev.solo = Some(true);
        ev.updates = Some(updates);
        ev.version = Some(self.model.version);
        ev.progress_total = Some(self.table.total_progress());
        self.log_event(ev);

        self.solo_records.push(SoloRecord {
            site_id: seg.site.clone(),
            start: seg.start,
            end: t,
            update,
        });

        if self.table.is_complete() {
            self.run_complete(t, "work_done")?;
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Federated rounds
    // ------------------------------------------------------------------

    fn start_round(&mut self, t: Seconds, members: &[String]) -> Result<Round, SimError> {
        let cfg = self.scenario.rounds;
        let weighted: Vec<(String, u32)> = members
            .iter()
            .map(|id| (id.clone(), self.sites[id].config.weight))
            .collect();
        let mut assignments = assign_shards_weighted(&self.table, &weighted)?;
        let index = self.next_round_index;
        self.next_round_index += 1;

        let mut parts = BTreeMap::new();
        for id in members {
            let assignment = assignments
                .remove(id)
                .unwrap_or_else(|| ShardAssignment { site_id: id.clone(), entries: Vec::new() });
            parts.insert(
                id.clone(),
                Participation {
                    train_start: t + cfg.overhead_total(),
                    budget: cfg.training_budget(),
                    assignment,
                    drained: false,
                    update: None,
                },
            );
        }
        self.counters.overhead_s += members.len() as Seconds * cfg.overhead_total();

        let mut ev = self.emit(t, EventKind::RoundStart);
        ev.round = Some(index);
        ev.participants = Some(members.to_vec());
        ev.assignments = Some(
            parts
                .iter()
                .map(|(id, p)| {
                    (id.clone(), p.assignment.entries.iter().map(|e| (e.shard, e.start_row)).collect())
                })
                .collect(),
        );
        self.log_event(ev);

        self.commit_gen_counter += 1;
        let round = Round {
            index,
            start: t,
            natural_end: t + cfg.delta_round,
            theta0: self.model.clone(),
            commit_gen: self.commit_gen_counter,
            parts,
        };
        let commit_at = self.commit_time_for(&round);
        self.push(commit_at, Payload::Commit { gen: round.commit_gen });
        Ok(round)
    }

    /// When every live participant will have exhausted its assignment, if
    /// that happens before the natural end of the round.
    fn commit_time_for(&self, round: &Round) -> Seconds {
        let mut latest: Option<Seconds> = None;
        for (id, part) in &round.parts {
            if part.drained {
                continue;
            }
            let spec = &self.sites[id].trainer;
            let avail: u64 = part
                .assignment
                .entries
                .iter()
                .map(|e| self.table.sizes()[e.shard] - e.start_row)
                .sum();
            let steps_needed = avail.div_ceil(spec.rows_per_step());
            let finish = part.train_start + spec.seconds_for_steps(steps_needed).min(part.budget);
            latest = Some(latest.map_or(finish, |l| l.max(finish)));
        }
        latest
            .unwrap_or(self.clock)
            .clamp(self.clock, round.natural_end)
    }

    fn reschedule_commit(&mut self, round: &mut Round) {
        self.commit_gen_counter += 1;
        round.commit_gen = self.commit_gen_counter;
        let at = self.commit_time_for(round);
        self.push(at, Payload::Commit { gen: round.commit_gen });
    }

    /// A site that becomes ready mid-round joins immediately: it receives
    /// the round-start model and whatever assigned shards no current
    /// participant can reach before the round ends. With too little time
    /// left to set up, it waits for the next round.
    fn join_round(&mut self, round: &mut Round, site: &str, t: Seconds) {
        let cfg = self.scenario.rounds;
        let budget = round.natural_end - t - cfg.overhead_setup_teardown;
        if budget <= 0 {
            return;
        }
        self.counters.overhead_s += cfg.overhead_setup_teardown;

        let mut pool: Vec<AssignedShard> = Vec::new();
        for (id, part) in round.parts.iter_mut() {
            let reachable = if part.drained {
                // Shards the drained site never touched are free.
                let touched: BTreeSet<usize> = part
                    .update
                    .as_ref()
                    .map(|u| u.consumed.iter().map(|c| c.shard).collect())
                    .unwrap_or_default();
                part.assignment
                    .entries
                    .iter()
                    .map(|e| touched.contains(&e.shard))
                    .collect::<Vec<bool>>()
            } else {
                let spec = &self.sites[id].trainer;
                let cap_rows = spec.steps_for_budget(part.budget).max(1) * spec.rows_per_step();
                let mut cum = 0u64;
                part.assignment
                    .entries
                    .iter()
                    .map(|e| {
                        let within = cum < cap_rows;
                        cum += self.table.sizes()[e.shard] - e.start_row;
                        within
                    })
                    .collect::<Vec<bool>>()
            };
            let mut keep = Vec::new();
            for (entry, keep_it) in part.assignment.entries.iter().zip(&reachable) {
                if *keep_it {
                    keep.push(*entry);
                } else {
                    pool.push(*entry);
                }
            }
            part.assignment.entries = keep;
        }
        pool.sort_by(|a, b| b.start_row.cmp(&a.start_row).then(a.shard.cmp(&b.shard)));

        round.parts.insert(
            site.to_string(),
            Participation {
                train_start: t + cfg.overhead_setup_teardown,
                budget,
                assignment: ShardAssignment { site_id: site.to_string(), entries: pool },
                drained: false,
                update: None,
            },
        );
        self.reschedule_commit(round);
    }

    fn begin_drain(&mut self, site: &str, t: Seconds) -> Result<(), SimError> {
        match std::mem::replace(&mut self.mode, ModeState::Idle) {
            ModeState::Solo(seg) if seg.site == site => {
                let seg_start = seg.start;
                self.flush_solo(seg, t)?;
                if self.done.is_some() {
                    return Ok(());
                }
                let train_seconds = self
                    .solo_records
                    .last()
                    .map(|r| r.update.train_seconds)
                    .unwrap_or(0);
                let drain_done = t.max(seg_start + train_seconds);
                self.push(drain_done, Payload::DrainDone { site: site.to_string() });
                self.log_mode_change(t, "idle", Vec::new());
                self.mode = ModeState::Idle;
                Ok(())
            }
            ModeState::Federated(mut round) => {
                if let Some(part) = round.parts.get_mut(site) {
                    if !part.drained {
                        let budget = (t - part.train_start).clamp(0, part.budget);
                        let update = local_train(
                            &round.theta0,
                            &self.sites[site].trainer,
                            &part.assignment,
                            &self.table,
                            budget,
                        )?;
                        let drain_done = if budget > 0 {
                            t.max(part.train_start + update.train_seconds)
                        } else {
                            t
                        };
                        part.drained = true;
                        part.update = Some(update);
                        self.push(drain_done, Payload::DrainDone { site: site.to_string() });
                        self.reschedule_commit(&mut round);
                        self.mode = ModeState::Federated(round);
                        return Ok(());
                    }
                }
                // Not a participant this round (joined too late): nothing in
                // flight to finish.
                self.push(t, Payload::DrainDone { site: site.to_string() });
                self.mode = ModeState::Federated(round);
                Ok(())
            }
            ModeState::Solo(other) => Err(SimError::Internal(format!(
                "drain of {site} while {} holds solo mode",
                other.site
            ))),
            ModeState::Idle => Err(SimError::Internal(format!(
                "drain of {site} while idle"
            ))),
        }
    }

    fn commit_round(&mut self, mut round: Round, t: Seconds, continue_after: bool) -> Result<(), SimError> {
        // Evaluate every live participant over its actual training window.
        for (id, part) in round.parts.iter_mut() {
            if part.drained {
                continue;
            }
            let budget = (t - part.train_start).clamp(0, part.budget);
            let update = local_train(
                &round.theta0,
                &self.sites[id].trainer,
                &part.assignment,
                &self.table,
                budget,
            )?;
            part.update = Some(update);
        }

        let mut reported: Vec<SiteUpdate> = Vec::new();
        let mut summaries = BTreeMap::new();
        for (id, part) in &round.parts {
            let Some(update) = &part.update else {
                return Err(SimError::Internal(format!("participant {id} has no update")));
            };
            let is_reported = !self.failures.contains(&(id.clone(), round.index));
            summaries.insert(id.clone(), summarize(update, is_reported));
            self.counters.steps_total += update.batches;
            self.counters.training_s += update.train_seconds;
            self.consumption.push(Consumption {
                site_id: id.clone(),
                round: Some(round.index),
                reported: is_reported,
                ranges: update.consumed.clone(),
            });
            if is_reported {
                reported.push(update.clone());
            }
        }

        let (model, table) = commit(&self.model, &self.table, &reported)?;
        self.model = model;
        self.table = table;
        self.counters.rounds += 1;

        let mut ev = self.emit(t, EventKind::RoundCommit);
        ev.round = Some(round.index);
        ev.updates = Some(summaries);
        ev.version = Some(self.model.version);
        ev.progress_total = Some(self.table.total_progress());
        self.log_event(ev);

        self.records.push(RoundRecord {
            round_index: round.index,
            start: round.start,
            end: t,
            participants: round.parts.keys().cloned().collect(),
            updates: reported,
            aggregated: self.model.clone(),
        });

        if self.table.is_complete() {
            return self.run_complete(t, "work_done");
        }
        if !continue_after {
            return Ok(());
        }

        let active = self.active_sites();
        match active.len() {
            0 => {
                self.log_mode_change(t, "idle", Vec::new());
                self.mode = ModeState::Idle;
            }
            1 => {
                self.log_mode_change(t, "solo", active.clone());
                let seg = self.start_solo(&active[0], t)?;
                self.mode = ModeState::Solo(seg);
            }
            _ => {
                let round = self.start_round(t, &active)?;
                self.mode = ModeState::Federated(round);
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Power accounting
    // ------------------------------------------------------------------

    fn power_on(&mut self, site: &str, t: Seconds) -> Result<(), SimError> {
        let rt = self.sites.get_mut(site).unwrap();
        let PowerPhase::Provisioning(since) = rt.power else {
            return Err(SimError::Internal(format!("{site}: power_on without provisioning phase")));
        };
        rt.power = PowerPhase::On(t);
        if t > since {
            let power = self.sites[site].config.power_kw * self.scenario.accounting.idle_power_fraction;
            self.record_power(site, power, since, t)?;
        }
        Ok(())
    }

    fn power_off(&mut self, site: &str, t: Seconds) -> Result<(), SimError> {
        let rt = self.sites.get_mut(site).unwrap();
        let PowerPhase::On(since) = rt.power else {
            return Err(SimError::Internal(format!("{site}: power_off while not on")));
        };
        rt.power = PowerPhase::Off;
        if t > since {
            let power = self.sites[site].config.power_kw;
            self.record_power(site, power, since, t)?;
        }
        Ok(())
    }

    fn record_power(
        &mut self,
        site: &str,
        power_kw: f64,
        start: Seconds,
        end: Seconds,
    ) -> Result<(), SimError> {
        let region = &self.sites[site].config.region;
        let trace = &self.traces[region];
        self.ledger
            .record_interval(site, power_kw, start, end, trace, &self.scenario.curtailment)?;
        Ok(())
    }

    fn run_complete(&mut self, t: Seconds, reason: &str) -> Result<(), SimError> {
        let ids: Vec<String> = self.sites.keys().cloned().collect();
        for id in ids {
            match self.sites[&id].power {
                PowerPhase::Off => {}
                PowerPhase::Provisioning(since) => {
                    self.sites.get_mut(&id).unwrap().power = PowerPhase::Off;
                    if t > since {
                        let power = self.sites[&id].config.power_kw
                            * self.scenario.accounting.idle_power_fraction;
                        self.record_power(&id, power, since, t)?;
                    }
                }
                PowerPhase::On(since) => {
                    self.sites.get_mut(&id).unwrap().power = PowerPhase::Off;
                    if t > since {
                        let power = self.sites[&id].config.power_kw;
                        self.record_power(&id, power, since, t)?;
                    }
                }
            }
        }
        self.counters.wall_clock_s = t;
        let report = self.ledger.finalize(self.counters);
        let mut ev = self.emit(t, EventKind::RunComplete);
        ev.reason = Some(reason.to_string());
        ev.summary = Some(RunSummary {
            energy_kwh: report.total_energy_kwh,
            curtailed_fraction: report.curtailed_fraction,
            emissions_g: report.total_emissions_g,
            rounds: report.rounds,
            steps_total: report.steps_total,
        });
        self.log_event(ev);
        self.done = Some(report);
        Ok(())
    }

    fn into_output(self) -> Result<RunOutput, SimError> {
        let report = self
            .done
            .ok_or_else(|| SimError::Internal("run ended without completion".into()))?;
        Ok(RunOutput {
            log: self.log,
            report,
            model: self.model,
            ledger: self.ledger,
            rounds: self.records,
            solo: self.solo_records,
            consumption: self.consumption,
        })
    }
}

fn summarize(update: &SiteUpdate, reported: bool) -> UpdateSummary {
    UpdateSummary {
        batches: update.batches,
        rows: update.rows_consumed,
        train_seconds: update.train_seconds,
        reported,
        consumed: update
            .consumed
            .iter()
            .map(|c| (c.shard, c.start_row, c.end_row))
            .collect(),
    }
}

/// Lets the energy ledger of a finished run be re-derived in tests.
pub fn ledger_for(
    scenario: &Scenario,
    traces: &BTreeMap<String, CarbonTrace>,
    log: &EventLog,
) -> Result<EnergyLedger, SimError> {
    let mut ledger = EnergyLedger::new();
    let mut provisioning: BTreeMap<String, Seconds> = BTreeMap::new();
    let mut powered: BTreeMap<String, Seconds> = BTreeMap::new();
    let mut end = 0;
    for ev in log.iter() {
        end = end.max(ev.t);
        match ev.kind {
            EventKind::ProvisionRequested => {
                provisioning.insert(ev.site.clone().unwrap_or_default(), ev.t);
            }
            EventKind::SiteReady => {
                let site = ev.site.clone().unwrap_or_default();
                if let Some(since) = provisioning.remove(&site) {
                    if ev.t > since {
                        let cfg = &scenario.sites[&site];
                        let power = cfg.power_kw * scenario.accounting.idle_power_fraction;
                        ledger.record_interval(
                            &site,
                            power,
                            since,
                            ev.t,
                            &traces[&cfg.region],
                            &scenario.curtailment,
                        )?;
                    }
                }
                powered.insert(site, ev.t);
            }
            EventKind::SiteOffline => {
                let site = ev.site.clone().unwrap_or_default();
                if let Some(since) = powered.remove(&site) {
                    if ev.t > since {
                        let cfg = &scenario.sites[&site];
                        ledger.record_interval(
                            &site,
                            cfg.power_kw,
                            since,
                            ev.t,
                            &traces[&cfg.region],
                            &scenario.curtailment,
                        )?;
                    }
                }
            }
            _ => {}
        }
    }
    for (site, since) in provisioning {
        if end > since {
            let cfg = &scenario.sites[&site];
            let power = cfg.power_kw * scenario.accounting.idle_power_fraction;
            ledger.record_interval(&site, power, since, end, &traces[&cfg.region], &scenario.curtailment)?;
        }
    }
    for (site, since) in powered {
        if end > since {
            let cfg = &scenario.sites[&site];
            ledger.record_interval(&site, cfg.power_kw, since, end, &traces[&cfg.region], &scenario.curtailment)?;
        }
    }
    Ok(ledger)
}
