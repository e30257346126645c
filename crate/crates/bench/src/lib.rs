//! Shared fixtures for the criterion benches.

use std::collections::BTreeMap;

use curtailsim_core::scenario::{Scenario, ShardsConfig};
use curtailsim_core::trace::{CarbonTrace, TraceSample};
use curtailsim_core::Seconds;

pub fn trace(region: &str, samples: &[(Seconds, f64)]) -> CarbonTrace {
    CarbonTrace::new(
        region,
        samples.iter().map(|&(t, moer)| TraceSample { t, moer }).collect(),
    )
    .unwrap()
}

/// A three-site day with staggered curtailment windows, sized so a full run
/// takes a few hundred simulated rounds.
pub fn staggered_day() -> (Scenario, BTreeMap<String, CarbonTrace>) {
    let mut scenario = Scenario::synthetic(
        &[("a1", "east"), ("b1", "west"), ("c1", "south")],
        ShardsConfig { count: 64, size: 40_000 },
        172_800,
    );
    scenario.trainer.data_seed = 17;
    let traces = BTreeMap::from([
        ("east".to_string(), trace("east", &[(0, 40.0), (30_000, 400.0), (60_000, 35.0)])),
        ("west".to_string(), trace("west", &[(0, 350.0), (20_000, 45.0), (90_000, 420.0)])),
        ("south".to_string(), trace("south", &[(0, 30.0), (50_000, 380.0), (70_000, 25.0)])),
    ]);
    (scenario, traces)
}
