//! Post-hoc validation of event logs.
//!
//! [`replay_check`] re-verifies a finished run's log against the scenario
//! and traces: hysteresis debounce on every provisioning decision, lifecycle
//! pairing and flapping rules, mode/round causality, disjointness of
//! consumed work, progress monotonicity, and energy conservation between the
//! log's lifecycle events and the totals reported at completion. It returns
//! the first violation found, as a value rather than an error.

use std::collections::BTreeMap;

use crate::engine::ledger_for;
use crate::events::{EventKind, EventLog};
use crate::scenario::Scenario;
use crate::trace::{CarbonTrace, Window, WindowKind};
use crate::Seconds;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Violation { rule: String, detail: String },
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }

    fn violation(rule: &str, detail: String) -> Self {
        Verdict::Violation { rule: rule.to_string(), detail }
    }
}

pub fn replay_check(
    log: &EventLog,
    scenario: &Scenario,
    traces: &BTreeMap<String, CarbonTrace>,
) -> Verdict {
    let windows = match region_windows(scenario, traces) {
        Ok(w) => w,
        Err(detail) => return Verdict::violation("trace", detail),
    };

    let mut pending_provision: BTreeMap<String, Seconds> = BTreeMap::new();
    let mut offline_since_provision: BTreeMap<String, u64> = BTreeMap::new();
    let mut provision_seen: BTreeMap<String, bool> = BTreeMap::new();
    let mut current_mode = String::from("idle");
    let mut last_progress_total = 0u64;
    let mut reported_rows: BTreeMap<usize, Vec<(u64, u64)>> = BTreeMap::new();
    let mut run_complete = 0usize;

    for ev in log.iter() {
        match ev.kind {
            EventKind::ProvisionRequested => {
                let site = ev.site.clone().unwrap_or_default();
                if provision_seen.get(&site).copied().unwrap_or(false) {
                    let offs = offline_since_provision.get(&site).copied().unwrap_or(0);
                    if offs != 1 {
                        return Verdict::violation(
                            "no-flapping",
                            format!(
                                "site {site}: {offs} SiteOffline events between provisions before t={}",
                                ev.t
                            ),
                        );
                    }
                }
                provision_seen.insert(site.clone(), true);
                offline_since_provision.insert(site.clone(), 0);
                if let Some(v) = check_debounce(scenario, &windows, &site, ev.t, true) {
                    return v;
                }
                pending_provision.insert(site, ev.t);
            }
            EventKind::SiteReady => {
                let site = ev.site.clone().unwrap_or_default();
                match pending_provision.remove(&site) {
                    Some(requested) => {
                        let expected = requested + scenario.hysteresis.provision_delay;
                        if ev.t != expected {
                            return Verdict::violation(
                                "ready-delay",
                                format!(
                                    "site {site}: SiteReady at t={}, expected t={expected}",
                                    ev.t
                                ),
                            );
                        }
                    }
                    None => {
                        return Verdict::violation(
                            "ledger-overlap",
                            format!("site {site}: SiteReady at t={} without a pending provision", ev.t),
                        )
                    }
                }
            }
            EventKind::DeprovisionRequested => {
                let site = ev.site.clone().unwrap_or_default();
                if let Some(v) = check_debounce(scenario, &windows, &site, ev.t, false) {
                    return v;
                }
            }
            EventKind::SiteOffline => {
                let site = ev.site.clone().unwrap_or_default();
                *offline_since_provision.entry(site).or_insert(0) += 1;
            }
            EventKind::ModeChange => {
                current_mode = ev.mode.clone().unwrap_or_default();
            }
            EventKind::RoundStart => {
                if current_mode != "federated" {
                    return Verdict::violation(
                        "mode-causality",
                        format!("RoundStart at t={} outside a federated span", ev.t),
                    );
                }
            }
            EventKind::RoundCommit => {
                if let Some(total) = ev.progress_total {
                    if total < last_progress_total {
                        return Verdict::violation(
                            "progress-monotonicity",
                            format!(
                                "progress total dropped from {last_progress_total} to {total} at t={}",
                                ev.t
                            ),
                        );
                    }
                    last_progress_total = total;
                }
                if let Some(updates) = &ev.updates {
                    // Within one commit, consumed ranges of distinct sites
                    // must not overlap.
                    let mut per_shard: BTreeMap<usize, Vec<(u64, u64, &str)>> = BTreeMap::new();
                    for (site, u) in updates {
                        for &(shard, start, end) in &u.consumed {
                            per_shard.entry(shard).or_default().push((start, end, site));
                        }
                    }
                    for (shard, mut ranges) in per_shard {
                        ranges.sort();
                        for pair in ranges.windows(2) {
                            if pair[1].0 < pair[0].1 {
                                return Verdict::violation(
                                    "round-partition",
                                    format!(
                                        "shard {shard}: sites {} and {} overlap in commit at t={}",
                                        pair[0].2, pair[1].2, ev.t
                                    ),
                                );
                            }
                        }
                    }
                    // Across the run, reported consumption is exactly-once.
                    for (site, u) in updates {
                        if !u.reported {
                            continue;
                        }
                        for &(shard, start, end) in &u.consumed {
                            let ranges = reported_rows.entry(shard).or_default();
                            for &(s, e) in ranges.iter() {
                                if start < e && s < end {
                                    return Verdict::violation(
                                        "reported-overlap",
                                        format!(
                                            "shard {shard}: reported rows [{start},{end}) from {site} overlap [{s},{e})"
                                        ),
                                    );
                                }
                            }
                            ranges.push((start, end));
                        }
                    }
                }
            }
            EventKind::RunComplete => {
                run_complete += 1;
                if let Some(summary) = &ev.summary {
                    match ledger_for(scenario, traces, log) {
                        Ok(ledger) => {
                            let report = ledger.finalize(Default::default());
                            if !close(report.total_energy_kwh, summary.energy_kwh)
                                || !close(report.total_emissions_g, summary.emissions_g)
                            {
                                return Verdict::violation(
                                    "energy-conservation",
                                    format!(
                                        "ledger rebuilt from log gives {} kWh / {} g, summary says {} kWh / {} g",
                                        report.total_energy_kwh,
                                        report.total_emissions_g,
                                        summary.energy_kwh,
                                        summary.emissions_g
                                    ),
                                );
                            }
                        }
                        Err(e) => {
                            return Verdict::violation("ledger-overlap", e.to_string());
                        }
                    }
                }
            }
            _ => {}
        }
    }

    if run_complete != 1 {
        return Verdict::violation(
            "termination",
            format!("expected exactly one RunComplete, found {run_complete}"),
        );
    }
    Verdict::Pass
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-12)
}

fn region_windows(
    scenario: &Scenario,
    traces: &BTreeMap<String, CarbonTrace>,
) -> Result<BTreeMap<String, Vec<Window>>, String> {
    let mut out = BTreeMap::new();
    for region in scenario.regions() {
        let trace = traces
            .get(&region)
            .ok_or_else(|| format!("region {region}: no trace"))?;
        let windows = trace
            .windows(&scenario.curtailment, scenario.horizon)
            .map_err(|e| format!("region {region}: {e}"))?;
        out.insert(region, windows);
    }
    Ok(out)
}

/// Checks that the gating signal held `expect` continuously for the full
/// hysteresis period ending at `t`.
fn check_debounce(
    scenario: &Scenario,
    windows: &BTreeMap<String, Vec<Window>>,
    site: &str,
    t: Seconds,
    expect: bool,
) -> Option<Verdict> {
    let rule = if expect { "debounce-up" } else { "debounce-down" };
    let Some(config) = scenario.sites.get(site) else {
        return Some(Verdict::violation(rule, format!("unknown site {site}")));
    };
    if config.always_on {
        // Always-on sites are gated by a constant-high signal.
        return if expect {
            None
        } else {
            Some(Verdict::violation(
                rule,
                format!("site {site}: deprovision of an always-on site at t={t}"),
            ))
        };
    }
    let tau = if expect { scenario.hysteresis.tau_up } else { scenario.hysteresis.tau_down };
    let from = t - tau;
    let Some(ws) = windows.get(&config.region) else {
        return Some(Verdict::violation(rule, format!("region {} has no windows", config.region)));
    };
    let want = if expect { WindowKind::Curtailed } else { WindowKind::NotCurtailed };
    let holds = ws
        .iter()
        .any(|w| w.kind == want && w.start <= from && w.end > t);
    if holds {
        None
    } else {
        Some(Verdict::violation(
            rule,
            format!(
                "site {site}: event at t={t} without {tau} s of continuous signal={}",
                expect as u8
            ),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::LogEvent;
    use crate::scenario::ShardsConfig;
    use crate::trace::{CarbonTrace, TraceSample};

    fn setup() -> (Scenario, BTreeMap<String, CarbonTrace>) {
        let scenario = Scenario::synthetic(
            &[("ca1", "california")],
            ShardsConfig { count: 2, size: 100 },
            10_000,
        );
        let trace = CarbonTrace::new(
            "california",
            vec![
                TraceSample { t: 0, moer: 400.0 },
                TraceSample { t: 100, moer: 40.0 },
                TraceSample { t: 5000, moer: 400.0 },
            ],
        )
        .unwrap();
        let traces = BTreeMap::from([("california".to_string(), trace)]);
        (scenario, traces)
    }

    #[test]
    fn premature_provision_is_a_debounce_violation() {
        let (scenario, traces) = setup();
        let mut log = EventLog::new();
        let mut ev = LogEvent::new(105, 0, EventKind::ProvisionRequested);
        ev.site = Some("ca1".into());
        log.push(ev);
        let mut done = LogEvent::new(200, 1, EventKind::RunComplete);
        done.reason = Some("horizon".into());
        log.push(done);
        let verdict = replay_check(&log, &scenario, &traces);
        assert_eq!(
            verdict,
            Verdict::Violation {
                rule: "debounce-up".into(),
                detail: "site ca1: event at t=105 without 10 s of continuous signal=1".into()
            }
        );
    }

    #[test]
    fn overlapping_power_spans_are_a_ledger_violation() {
        let (scenario, traces) = setup();
        let mut log = EventLog::new();
        for (t, kind) in [(110, EventKind::ProvisionRequested), (410, EventKind::SiteReady)] {
            let mut ev = LogEvent::new(t, 0, kind);
            ev.site = Some("ca1".into());
            log.push(ev);
        }
        // A second SiteReady without going offline in between.
        let mut dup = LogEvent::new(500, 2, EventKind::SiteReady);
        dup.site = Some("ca1".into());
        log.push(dup);
        let mut done = LogEvent::new(600, 3, EventKind::RunComplete);
        done.reason = Some("horizon".into());
        log.push(done);
        let verdict = replay_check(&log, &scenario, &traces);
        assert!(
            matches!(&verdict, Verdict::Violation { rule, .. } if rule == "ledger-overlap"),
            "{verdict:?}"
        );
    }

    #[test]
    fn missing_run_complete_is_flagged() {
        let (scenario, traces) = setup();
        let log = EventLog::new();
        let verdict = replay_check(&log, &scenario, &traces);
        assert!(matches!(&verdict, Verdict::Violation { rule, .. } if rule == "termination"));
    }
}
