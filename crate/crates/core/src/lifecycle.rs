//! Per-site provisioning lifecycle with time-based hysteresis.
//!
//! A site provisions only after the curtailment signal has been continuously
//! high for `tau_up`, and deprovisions only after it has been continuously
//! low for `tau_down`. Provisioning, once requested, cannot be aborted: if
//! the signal drops while the site is coming up, the site still becomes
//! ready and then immediately starts arming down. Deprovisioning is a
//! graceful drain: the site finishes its in-flight work, reports, and only
//! then goes offline.
//!
//! The machine is driven by three kinds of stimuli, all supplied by the
//! caller: signal observations ([`SiteLifecycle::observe_signal`]), timer
//! expiries ([`SiteLifecycle::on_timer`], at the instant returned by
//! [`SiteLifecycle::next_timer`]), and completion callbacks
//! ([`SiteLifecycle::site_ready`], [`SiteLifecycle::drain_complete`]).
//! Replaying the same stimuli always yields the same event sequence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Seconds;

#[derive(Debug, Error)]
pub enum LifecycleError {
    #[error("site {site}: observation at t={t} precedes last observation at t={last}")]
    TimeRegression { site: String, t: Seconds, last: Seconds },
    #[error("site {site}: {op} is invalid in state {state:?}")]
    InvalidState { site: String, op: &'static str, state: SiteState },
    #[error("site {site}: site_ready at t={t} does not match scheduled ready_at={ready_at}")]
    ReadyTimeMismatch { site: String, t: Seconds, ready_at: Seconds },
}

/// Hysteresis durations and the fixed startup lag between a provisioning
/// request and the site connecting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HysteresisParams {
    pub tau_up: Seconds,
    pub tau_down: Seconds,
    pub provision_delay: Seconds,
}

impl Default for HysteresisParams {
    fn default() -> Self {
        Self { tau_up: 10, tau_down: 600, provision_delay: 300 }
    }
}

impl HysteresisParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.tau_up < 0 {
            return Err(format!("tau_up must be >= 0, got {}", self.tau_up));
        }
        if self.tau_down < 0 {
            return Err(format!("tau_down must be >= 0, got {}", self.tau_down));
        }
        if self.provision_delay < 0 {
            return Err(format!("provision_delay must be >= 0, got {}", self.provision_delay));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SiteState {
    Offline,
    ArmingUp { signal_high_since: Seconds },
    Provisioning { ready_at: Seconds },
    Active { since: Seconds },
    ArmingDown { signal_low_since: Seconds, active_since: Seconds },
    Draining { since: Seconds },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LifecycleEventKind {
    ProvisionRequested,
    SiteReady,
    DeprovisionRequested,
    DrainComplete,
    SiteOffline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LifecycleEvent {
    pub time: Seconds,
    pub site_id: String,
    pub kind: LifecycleEventKind,
}

/// Hysteresis-debounced provisioning state machine for one site.
#[derive(Debug, Clone)]
pub struct SiteLifecycle {
    site_id: String,
    state: SiteState,
    last_signal: bool,
    // Time of the most recent signal flip; seeds the ArmingDown clock when a
    // site comes up under an already-low signal.
    last_flip: Seconds,
    last_observed: Seconds,
}

impl SiteLifecycle {
    pub fn new(site_id: impl Into<String>) -> Self {
        Self {
            site_id: site_id.into(),
            state: SiteState::Offline,
            last_signal: false,
            last_flip: Seconds::MIN,
            last_observed: Seconds::MIN,
        }
    }

    pub fn site_id(&self) -> &str {
        &self.site_id
    }

    pub fn state(&self) -> SiteState {
        self.state
    }

    pub fn last_signal(&self) -> bool {
        self.last_signal
    }

    /// Whether the site is up and training (includes the hysteresis period
    /// while arming down, during which work continues).
    pub fn is_active(&self) -> bool {
        matches!(self.state, SiteState::Active { .. } | SiteState::ArmingDown { .. })
    }

    /// Feeds one observation of the curtailment signal at time `t`.
    ///
    /// Signal edges move the machine between armed and steady states but
    /// emit no events on their own; events fire from `on_timer` once a
    /// hysteresis period has run its course. The caller must observe at
    /// every signal change and invoke `on_timer` at every instant returned
    /// by `next_timer`. This method also runs the timer check inline, so a
    /// caller observing exactly at an expiry sees the transition.
    pub fn observe_signal(
        &mut self,
        params: &HysteresisParams,
        t: Seconds,
        curtailed: bool,
    ) -> Result<Vec<LifecycleEvent>, LifecycleError> {
        self.check_time(t)?;
        if curtailed != self.last_signal {
            self.last_signal = curtailed;
            self.last_flip = t;
        }
        self.apply_edge(t);
        Ok(self.tick(params, t))
    }

    /// Runs the hysteresis timer check at time `t`.
    pub fn on_timer(
        &mut self,
        params: &HysteresisParams,
        t: Seconds,
    ) -> Result<Vec<LifecycleEvent>, LifecycleError> {
        self.check_time(t)?;
        Ok(self.tick(params, t))
    }

    /// The next instant at which `on_timer` could change state, if any.
    pub fn next_timer(&self, params: &HysteresisParams) -> Option<Seconds> {
        match self.state {
            SiteState::ArmingUp { signal_high_since } if self.last_signal => {
                Some(signal_high_since + params.tau_up)
            }
            SiteState::ArmingDown { signal_low_since, .. } if !self.last_signal => {
                Some(signal_low_since + params.tau_down)
            }
            _ => None,
        }
    }

    /// Scheduled connect time while provisioning.
    pub fn ready_at(&self) -> Option<Seconds> {
        match self.state {
            SiteState::Provisioning { ready_at } => Some(ready_at),
            _ => None,
        }
    }

    /// Completes provisioning at the scheduled ready time. The site becomes
    /// active, or starts arming down immediately if the signal dropped while
    /// it was coming up.
    pub fn site_ready(
        &mut self,
        t: Seconds,
    ) -> Result<Vec<LifecycleEvent>, LifecycleError> {
        self.check_time(t)?;
        let ready_at = match self.state {
            SiteState::Provisioning { ready_at } => ready_at,
            _ => {
                return Err(LifecycleError::InvalidState {
                    site: self.site_id.clone(),
                    op: "site_ready",
                    state: self.state,
                })
            }
        };
        if t != ready_at {
            return Err(LifecycleError::ReadyTimeMismatch {
                site: self.site_id.clone(),
                t,
                ready_at,
            });
        }
        self.state = if self.last_signal {
            SiteState::Active { since: t }
        } else {
            SiteState::ArmingDown { signal_low_since: self.last_flip, active_since: t }
        };
        Ok(vec![self.event(t, LifecycleEventKind::SiteReady)])
    }

    /// Forces a drain from Active or ArmingDown.
    pub fn begin_drain(&mut self, t: Seconds) -> Result<(), LifecycleError> {
        self.check_time(t)?;
        match self.state {
            SiteState::Active { .. } | SiteState::ArmingDown { .. } => {
                self.state = SiteState::Draining { since: t };
                Ok(())
            }
            _ => Err(LifecycleError::InvalidState {
                site: self.site_id.clone(),
                op: "begin_drain",
                state: self.state,
            }),
        }
    }

    /// Finishes a drain: the site goes offline, and immediately re-arms if
    /// the signal is high again.
    pub fn drain_complete(&mut self, t: Seconds) -> Result<Vec<LifecycleEvent>, LifecycleError> {
        self.check_time(t)?;
        if !matches!(self.state, SiteState::Draining { .. }) {
            return Err(LifecycleError::InvalidState {
                site: self.site_id.clone(),
                op: "drain_complete",
                state: self.state,
            });
        }
        let events = vec![
            self.event(t, LifecycleEventKind::DrainComplete),
            self.event(t, LifecycleEventKind::SiteOffline),
        ];
        // The debounce period restarts from scratch after a drain.
        self.state = if self.last_signal {
            SiteState::ArmingUp { signal_high_since: t }
        } else {
            SiteState::Offline
        };
        Ok(events)
    }

    fn check_time(&mut self, t: Seconds) -> Result<(), LifecycleError> {
        if t < self.last_observed {
            return Err(LifecycleError::TimeRegression {
                site: self.site_id.clone(),
                t,
                last: self.last_observed,
            });
        }
        self.last_observed = t;
        Ok(())
    }

    fn apply_edge(&mut self, t: Seconds) {
        self.state = match self.state {
            SiteState::Offline if self.last_signal => SiteState::ArmingUp { signal_high_since: t },
            SiteState::ArmingUp { .. } if !self.last_signal => SiteState::Offline,
            SiteState::Active { since } if !self.last_signal => {
                SiteState::ArmingDown { signal_low_since: t, active_since: since }
            }
            SiteState::ArmingDown { active_since, .. } if self.last_signal => {
                SiteState::Active { since: active_since }
            }
            // Provisioning and Draining are committed; the flip is recorded
            // and acted on once the phase completes.
            other => other,
        };
    }

    fn tick(&mut self, params: &HysteresisParams, t: Seconds) -> Vec<LifecycleEvent> {
        match self.state {
            SiteState::ArmingUp { signal_high_since }
                if self.last_signal && t >= signal_high_since + params.tau_up =>
            {
                self.state = SiteState::Provisioning { ready_at: t + params.provision_delay };
                vec![self.event(t, LifecycleEventKind::ProvisionRequested)]
            }
            SiteState::ArmingDown { signal_low_since, .. }
                if !self.last_signal && t >= signal_low_since + params.tau_down =>
            {
                self.state = SiteState::Draining { since: t };
                vec![self.event(t, LifecycleEventKind::DeprovisionRequested)]
            }
            _ => Vec::new(),
        }
    }

    fn event(&self, time: Seconds, kind: LifecycleEventKind) -> LifecycleEvent {
        LifecycleEvent { time, site_id: self.site_id.clone(), kind }
    }
}
