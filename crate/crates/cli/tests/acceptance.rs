//! Acceptance suite: one test per release criterion, each printing a
//! `[PASS]` line. Run with `cargo test -p curtailsim-cli --test acceptance`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use curtailsim_cli::commands::{cmd_run, RunOptions};
use curtailsim_cli::EXIT_OK;
use curtailsim_core::coordinator::aggregate;
use curtailsim_core::engine::{run, RunOutput};
use curtailsim_core::events::EventKind;
use curtailsim_core::lifecycle::HysteresisParams;
use curtailsim_core::replay::{replay_check, Verdict};
use curtailsim_core::scenario::{load_traces, FailureInjection, Scenario, ShardsConfig};
use curtailsim_core::trace::{CarbonTrace, TraceSample};
use curtailsim_core::trainer::{
    batch_gradient, batch_objective, dataset_objective, generate_row, ModelState, SiteUpdate,
};
use curtailsim_core::Seconds;

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

fn trace(region: &str, samples: &[(Seconds, f64)]) -> CarbonTrace {
    CarbonTrace::new(
        region,
        samples.iter().map(|&(t, moer)| TraceSample { t, moer }).collect(),
    )
    .unwrap()
}

fn load_bundled(name: &str) -> (Scenario, BTreeMap<String, CarbonTrace>) {
    let scenario = Scenario::load(&assets().join("scenarios").join(name)).unwrap();
    let traces = load_traces(&scenario, &assets().join("traces")).unwrap();
    (scenario, traces)
}

fn update(site: &str, batches: u64, params: Vec<f64>) -> SiteUpdate {
    SiteUpdate {
        site_id: site.into(),
        theta: ModelState { params, version: 0 },
        batches,
        progress: BTreeMap::new(),
        consumed: Vec::new(),
        train_seconds: 0,
        rows_consumed: 0,
    }
}

/// Criterion 1: with the default 600 s round and 60+55 s overheads, a
/// two-site federated run trains 485/600 of each round and the default
/// throughput trainer completes 218-222 steps per round.
#[test]
fn acceptance_01_utilization_arithmetic() {
    let mut scenario = Scenario::synthetic(
        &[("a1", "east"), ("b1", "west")],
        ShardsConfig { count: 64, size: 100_000 },
        10_000,
    );
    scenario.trainer.data_seed = 3;
    let traces = BTreeMap::from([
        ("east".to_string(), trace("east", &[(0, 30.0)])),
        ("west".to_string(), trace("west", &[(0, 30.0)])),
    ]);
    let out = run(&scenario, &traces).unwrap();
    let full_rounds: Vec<_> = out.rounds.iter().filter(|r| r.end - r.start == 600).collect();
    assert!(full_rounds.len() >= 5, "expected several full rounds");
    for record in full_rounds {
        for u in &record.updates {
            let fraction = u.train_seconds as f64 / 600.0;
            assert!(
                (fraction - 0.8083).abs() <= 0.001,
                "round {} site {}: training fraction {fraction}",
                record.round_index,
                u.site_id
            );
            assert!(
                (218..=222).contains(&u.batches),
                "round {} site {}: {} steps",
                record.round_index,
                u.site_id,
                u.batches
            );
        }
    }
    println!("[PASS] criterion 1: per-round training fraction 485/600 +- 0.001, 218-222 steps/round");
}

/// Criterion 2: the bundled three-region day reproduces the narrated event
/// sequence at the derived times, and the full log matches the golden file
/// byte for byte.
#[test]
fn acceptance_02_timeline_reproduction() {
    let (scenario, traces) = load_bundled("curtailment_aware.toml");
    let out = run(&scenario, &traces).unwrap();

    // Hand-derived schedule: california's window opens at t=300, so with
    // tau_up=10 provisioning triggers at 310 and the site connects at 610.
    // The window closes at 7200 and tau_down=600 drains the site at 7800;
    // the next window (7900) re-provisions at 7910, ready 8210. South
    // Australia opens at 16800 -> federated at 17110. California closes at
    // 23100 -> drain at 23700, commit at 23710 hands the run to the solo
    // survivor. Texas opens at 37200 -> federated again at 37510.
    let expect: Vec<(Seconds, EventKind, Option<&str>)> = vec![
        (310, EventKind::ProvisionRequested, Some("california")),
        (610, EventKind::SiteReady, Some("california")),
        (7800, EventKind::DeprovisionRequested, Some("california")),
        (7800, EventKind::SiteOffline, Some("california")),
        (7910, EventKind::ProvisionRequested, Some("california")),
        (8210, EventKind::SiteReady, Some("california")),
        (16810, EventKind::ProvisionRequested, Some("south_australia")),
        (17110, EventKind::ModeChange, None),
        (23700, EventKind::DeprovisionRequested, Some("california")),
        (23700, EventKind::SiteOffline, Some("california")),
        (37210, EventKind::ProvisionRequested, Some("texas")),
        (37510, EventKind::ModeChange, None),
        (56879, EventKind::RunComplete, None),
    ];
    let mut cursor = 0;
    for ev in out.log.iter() {
        if cursor == expect.len() {
            break;
        }
        let (t, kind, site) = &expect[cursor];
        if ev.t == *t && ev.kind == *kind && site.is_none_or(|s| ev.site.as_deref() == Some(s)) {
            // Mode changes in the expectation list are the federated ones.
            if *kind != EventKind::ModeChange || ev.mode.as_deref() == Some("federated") {
                cursor += 1;
            }
        }
    }
    assert_eq!(
        cursor,
        expect.len(),
        "event sequence diverged at expectation {cursor}: {:?}",
        expect.get(cursor)
    );

    let last = out.log.events().last().unwrap();
    assert_eq!(last.reason.as_deref(), Some("work_done"));

    // Texas's 400 s signal gap at t=45000 must ride through tau_down.
    assert!(!out.log.iter().any(|e| {
        e.kind == EventKind::DeprovisionRequested
            && e.site.as_deref() == Some("texas")
            && e.t < 46_000
    }));

    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/demo_events.jsonl");
    let golden = std::fs::read_to_string(&golden_path).expect("golden log present");
    assert_eq!(out.log.to_jsonl(), golden, "events.jsonl diverges from the golden log");
    println!("[PASS] criterion 2: narrated timeline reproduced; golden events.jsonl byte-identical");
}

/// Criterion 3: work-weighted averaging properties over 1,000 randomized
/// instances, checked against an independent evaluation.
#[test]
fn acceptance_03_aggregation_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let prior = ModelState::zeros(0);

    // Single-update identity, bitwise.
    let u = update("one", 7, vec![1.25, -3.5, 0.125]);
    let got = aggregate(&ModelState::zeros(3), std::slice::from_ref(&u)).unwrap();
    assert_eq!(got.params, u.theta.params);

    // Equal-batch mean.
    let got = aggregate(
        &ModelState::zeros(2),
        &[update("a", 4, vec![1.0, 3.0]), update("b", 4, vec![3.0, 5.0])],
    )
    .unwrap();
    assert_eq!(got.params, vec![2.0, 4.0]);
    let _ = prior;

    for case in 0..1000 {
        let dim = rng.gen_range(1..=16);
        let sites = rng.gen_range(1..=6);
        let updates: Vec<SiteUpdate> = (0..sites)
            .map(|i| {
                let params: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
                let batches = if i == 0 { rng.gen_range(1..=500u64) } else { rng.gen_range(0..=500u64) };
                update(&format!("s{i}"), batches, params)
            })
            .collect();
        let total: u64 = updates.iter().map(|u| u.batches).sum();
        let got = aggregate(&ModelState::zeros(dim), &updates).unwrap();

        // Weights sum to one.
        let weight_sum: f64 = updates.iter().map(|u| u.batches as f64 / total as f64).sum();
        assert!((weight_sum - 1.0).abs() <= 1e-12, "case {case}: weight sum {weight_sum}");

        // Independent evaluation: reversed site order with compensated
        // summation.
        for k in 0..dim {
            let mut acc = 0.0;
            let mut comp = 0.0;
            for u in updates.iter().rev() {
                let term = (u.batches as f64 / total as f64) * u.theta.params[k];
                let y = term - comp;
                let t = acc + y;
                comp = (t - acc) - y;
                acc = t;
            }
            let rel = (got.params[k] - acc).abs() / acc.abs().max(1.0);
            assert!(rel <= 1e-12, "case {case} component {k}: {} vs {acc}", got.params[k]);

            // Elementwise convex-combination bounds.
            let lo = updates.iter().map(|u| u.theta.params[k]).fold(f64::INFINITY, f64::min);
            let hi = updates.iter().map(|u| u.theta.params[k]).fold(f64::NEG_INFINITY, f64::max);
            let eps = 1e-11 * lo.abs().max(hi.abs()).max(1.0);
            assert!(
                got.params[k] >= lo - eps && got.params[k] <= hi + eps,
                "case {case} component {k}: {} outside [{lo}, {hi}]",
                got.params[k]
            );
        }

        // Scale equivariance: scaling every batch count leaves the result
        // bitwise unchanged.
        for scale in [2u64, 3, 10] {
            let scaled: Vec<SiteUpdate> = updates
                .iter()
                .map(|u| SiteUpdate { batches: u.batches * scale, ..u.clone() })
                .collect();
            let again = aggregate(&ModelState::zeros(dim), &scaled).unwrap();
            assert_eq!(again.params, got.params, "case {case} scale {scale}");
        }
    }
    println!("[PASS] criterion 3: aggregation identity/mean/weight-sum/convexity over 1000 random instances");
}

struct RandomCase {
    scenario: Scenario,
    traces: BTreeMap<String, CarbonTrace>,
}

/// Random scenario whose regions all end up curtailed for good, so every
/// run finishes its work.
fn random_case(rng: &mut ChaCha8Rng) -> RandomCase {
    let n_sites = rng.gen_range(1..=4usize);
    let shard_count = rng.gen_range(1..=64usize);
    let shard_size = rng.gen_range(64..=512u64);
    let site_defs: Vec<(String, String)> = (0..n_sites)
        .map(|i| (format!("site{i}"), format!("region{i}")))
        .collect();
    let refs: Vec<(&str, &str)> = site_defs.iter().map(|(s, r)| (s.as_str(), r.as_str())).collect();
    let mut scenario = Scenario::synthetic(
        &refs,
        ShardsConfig { count: shard_count, size: shard_size },
        3_000_000,
    );
    scenario.hysteresis = HysteresisParams {
        tau_up: rng.gen_range(0..=60),
        tau_down: rng.gen_range(0..=900),
        provision_delay: rng.gen_range(0..=400),
    };
    scenario.trainer.data_seed = rng.gen();

    let mut traces = BTreeMap::new();
    for (_, region) in &site_defs {
        let mut samples = Vec::new();
        let mut t = 0;
        let mut curtailed = rng.gen_bool(0.5);
        while t < 60_000 {
            let moer = if curtailed { rng.gen_range(5.0..95.0) } else { rng.gen_range(110.0..500.0) };
            samples.push((t, moer));
            t += rng.gen_range(30..8000);
            curtailed = !curtailed;
        }
        samples.push((60_000, rng.gen_range(5.0..95.0)));
        traces.insert(region.clone(), trace(region, &samples));
    }
    RandomCase { scenario, traces }
}

/// Checks that reported consumption covers every row of every shard exactly
/// once (ranges disjoint, union complete).
fn check_exactly_once(out: &RunOutput, shard_count: usize, shard_size: u64) {
    let mut per_shard: BTreeMap<usize, Vec<(u64, u64)>> = BTreeMap::new();
    for c in &out.consumption {
        for r in &c.ranges {
            per_shard.entry(r.shard).or_default().push((r.start_row, r.end_row));
        }
    }
    assert_eq!(per_shard.len(), shard_count, "every shard consumed");
    for (shard, mut ranges) in per_shard {
        ranges.sort();
        let mut cursor = 0;
        for (start, end) in ranges {
            assert_eq!(start, cursor, "shard {shard}: gap or overlap at row {start}");
            cursor = end;
        }
        assert_eq!(cursor, shard_size, "shard {shard}: incomplete consumption");
    }
}

/// Criterion 4: exactly-once consumption over 200 randomized scenarios, and
/// at-least-once with monotone progress under one injected non-reporting
/// site per scenario.
#[test]
fn acceptance_04_exactly_once_consumption() {
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    for case in 0..200 {
        let RandomCase { scenario, traces } = random_case(&mut rng);
        let out = run(&scenario, &traces)
            .unwrap_or_else(|e| panic!("case {case} failed: {e}"));
        let last = out.log.events().last().unwrap();
        assert_eq!(last.reason.as_deref(), Some("work_done"), "case {case} must finish");
        check_exactly_once(&out, scenario.shards.count, scenario.shards.size);

        // Same scenario with a dropped report: rows may repeat but never
        // vanish, and committed progress never decreases.
        let mut faulty = scenario.clone();
        let victim = faulty.sites.keys().next().unwrap().clone();
        faulty.failures.push(FailureInjection { site: victim, round: 0 });
        let out = run(&faulty, &traces).unwrap();
        let last = out.log.events().last().unwrap();
        assert_eq!(last.reason.as_deref(), Some("work_done"), "case {case} (faulty) must finish");

        let mut per_shard: BTreeMap<usize, Vec<(u64, u64)>> = BTreeMap::new();
        for c in &out.consumption {
            for r in &c.ranges {
                per_shard.entry(r.shard).or_default().push((r.start_row, r.end_row));
            }
        }
        assert_eq!(per_shard.len(), faulty.shards.count);
        for (shard, ranges) in per_shard {
            let mut covered = vec![false; faulty.shards.size as usize];
            for (start, end) in ranges {
                for row in start..end {
                    covered[row as usize] = true;
                }
            }
            assert!(covered.iter().all(|&c| c), "case {case} shard {shard}: missing rows");
        }
        let mut last_total = 0;
        for ev in out.log.iter() {
            if let Some(total) = ev.progress_total {
                assert!(total >= last_total, "case {case}: progress decreased");
                last_total = total;
            }
        }
    }
    println!("[PASS] criterion 4: exactly-once over 200 random scenarios; at-least-once under injected failure");
}

/// Criterion 5: zero debounce violations over the randomized suite, and
/// sub-threshold pulse/gap fuzzing produces no provisioning events at all.
#[test]
fn acceptance_05_hysteresis_debounce() {
    let mut rng = ChaCha8Rng::seed_from_u64(1004); // same suite as criterion 4
    for case in 0..200 {
        let RandomCase { scenario, traces } = random_case(&mut rng);
        let out = run(&scenario, &traces).unwrap();
        let verdict = replay_check(&out.log, &scenario, &traces);
        assert!(verdict.is_pass(), "case {case}: {verdict:?}");
    }

    // Pulse fuzz: curtailment pulses of tau_up - 1 seconds never provision.
    let mut scenario = Scenario::synthetic(
        &[("s0", "pulse")],
        ShardsConfig { count: 1, size: 1000 },
        100_000,
    );
    scenario.hysteresis = HysteresisParams { tau_up: 10, tau_down: 600, provision_delay: 300 };
    let mut samples = vec![(0, 400.0)];
    let mut t = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(1005);
    while t < 90_000 {
        samples.push((t, 40.0));
        samples.push((t + 9, 400.0)); // tau_up - 1
        t += rng.gen_range(100..500);
    }
    let traces = BTreeMap::from([("pulse".to_string(), trace("pulse", &samples))]);
    let out = run(&scenario, &traces).unwrap();
    assert!(
        !out.log.iter().any(|e| e.kind == EventKind::ProvisionRequested),
        "pulse shorter than tau_up must never provision"
    );

    // Gap fuzz: signal gaps of tau_down - 1 seconds never deprovision.
    let mut scenario = Scenario::synthetic(
        &[("s0", "gap")],
        ShardsConfig { count: 64, size: 1_000_000 },
        100_000,
    );
    scenario.hysteresis = HysteresisParams { tau_up: 10, tau_down: 600, provision_delay: 300 };
    let mut samples = vec![(0, 40.0)];
    let mut t = 5000;
    let mut rng = ChaCha8Rng::seed_from_u64(1006);
    while t < 90_000 {
        samples.push((t, 400.0));
        samples.push((t + 599, 40.0)); // tau_down - 1
        t += rng.gen_range(1000..4000);
    }
    let traces = BTreeMap::from([("gap".to_string(), trace("gap", &samples))]);
    let out = run(&scenario, &traces).unwrap();
    assert_eq!(
        out.log.iter().filter(|e| e.kind == EventKind::ProvisionRequested).count(),
        1
    );
    assert!(
        !out.log.iter().any(|e| e.kind == EventKind::DeprovisionRequested),
        "gap shorter than tau_down must never deprovision"
    );
    println!("[PASS] criterion 5: zero debounce violations over 200 scenarios; pulse/gap fuzz clean");
}

/// Criterion 6: ledger emissions match hand integrals on piecewise-constant
/// traces, and the tau_down-overrun scenario's curtailed fraction equals its
/// closed form exactly.
#[test]
fn acceptance_06_accounting_exactness() {
    // Randomized piecewise-constant traces vs an independent integrator.
    let mut rng = ChaCha8Rng::seed_from_u64(1007);
    for case in 0..50 {
        let mut samples = Vec::new();
        let mut t = 0;
        while t < 20_000 {
            samples.push((t, rng.gen_range(0.0..600.0)));
            t += rng.gen_range(100..3000);
        }
        let tr = trace("r", &samples);
        let power = rng.gen_range(0.5..5.0);
        let (a, b) = (rng.gen_range(0..5000), rng.gen_range(10_000..30_000));
        let got = tr.integrate_emissions(power, a, b).unwrap();
        // Independent: walk the raw samples directly.
        let mut expect = 0.0;
        for (i, &(ts, moer)) in samples.iter().enumerate() {
            let seg_start = ts.max(a);
            let seg_end = samples.get(i + 1).map(|&(n, _)| n).unwrap_or(b).min(b);
            if seg_end > seg_start {
                expect += power * ((seg_end - seg_start) as f64) / 3600.0 * moer;
            }
        }
        let rel = (got - expect).abs() / expect.abs().max(1e-12);
        assert!(rel <= 1e-9, "case {case}: {got} vs {expect}");
    }

    // One site, one window [0, 5000), tau_down = 600: the only non-curtailed
    // draw is the hysteresis overrun.
    let mut scenario = Scenario::synthetic(
        &[("s0", "overrun")],
        ShardsConfig { count: 64, size: 1_000_000 },
        20_000,
    );
    scenario.hysteresis = HysteresisParams { tau_up: 10, tau_down: 600, provision_delay: 300 };
    let traces = BTreeMap::from([(
        "overrun".to_string(),
        trace("overrun", &[(0, 50.0), (5000, 400.0)]),
    )]);
    let out = run(&scenario, &traces).unwrap();

    // Ledger intervals: provisioning [10,310), training [310,5000), overrun
    // [5000,5600). Mirror the per-interval arithmetic exactly.
    let kwh = |seconds: Seconds| 2.0 * (seconds as f64 / 3600.0);
    let curtailed = kwh(300) + kwh(4690);
    let total = curtailed + kwh(600);
    assert_eq!(out.report.curtailed_energy_kwh, curtailed);
    assert_eq!(out.report.total_energy_kwh, total);
    assert_eq!(out.report.curtailed_fraction, curtailed / total);
    println!("[PASS] criterion 6: emissions match hand integrals (1e-9); overrun fraction exact");
}

/// Criterion 7: the curtailment-aware numeric run matches a centralized run
/// over the same rows to within 10% relative on the final objective, and
/// both reach 5% of the initial objective.
#[test]
fn acceptance_07_convergence_preservation() {
    let (centralized, traces_c) = load_bundled("convergence_centralized.toml");
    let (curtailed, traces_k) = load_bundled("convergence_curtailed.toml");
    let out_c = run(&centralized, &traces_c).unwrap();
    let out_k = run(&curtailed, &traces_k).unwrap();
    assert_eq!(
        out_c.log.events().last().unwrap().reason.as_deref(),
        Some("work_done")
    );
    assert_eq!(
        out_k.log.events().last().unwrap().reason.as_deref(),
        Some("work_done")
    );
    // Identical total rows by construction.
    assert_eq!(out_c.report.steps_total, out_k.report.steps_total);

    let spec = centralized.effective_trainer();
    let sizes = vec![centralized.shards.size; centralized.shards.count];
    let f_init = dataset_objective(&spec, &sizes, &vec![0.0; spec.dim]);
    let f_c = dataset_objective(&spec, &sizes, &out_c.model.params);
    let f_k = dataset_objective(&spec, &sizes, &out_k.model.params);
    assert!(f_c <= 0.05 * f_init, "centralized: {f_c} vs init {f_init}");
    assert!(f_k <= 0.05 * f_init, "curtailment-aware: {f_k} vs init {f_init}");
    let rel = (f_k - f_c).abs() / f_c.abs().max(1e-300);
    assert!(rel <= 0.10, "objectives diverge: {f_k} vs {f_c} (rel {rel})");
    println!(
        "[PASS] criterion 7: f_init={f_init:.3}, centralized={f_c:.3e}, curtailment-aware={f_k:.3e} (rel diff {rel:.1e})"
    );
}

/// Criterion 8: on the bundled demo (off-window rate >= 300, in-window
/// <= 50), curtailment-aware emissions are below 25% of the always-on
/// single-region baseline.
#[test]
fn acceptance_08_emissions_ordering() {
    let (aware, traces_a) = load_bundled("curtailment_aware.toml");
    let (baseline, traces_b) = load_bundled("centralized.toml");
    let out_aware = run(&aware, &traces_a).unwrap();
    let out_base = run(&baseline, &traces_b).unwrap();
    // Same work budget consumed.
    assert_eq!(out_aware.report.steps_total, out_base.report.steps_total);
    let ratio = out_aware.report.total_emissions_g / out_base.report.total_emissions_g;
    assert!(
        ratio < 0.25,
        "emissions ratio {ratio}: {} vs {}",
        out_aware.report.total_emissions_g,
        out_base.report.total_emissions_g
    );
    println!(
        "[PASS] criterion 8: curtailment-aware emits {:.0} g vs always-on {:.0} g (ratio {:.3})",
        out_aware.report.total_emissions_g, out_base.report.total_emissions_g, ratio
    );
}

/// Criterion 9: two cmd_run invocations with identical inputs produce
/// byte-identical events.jsonl, summary.csv, and model.bin.
#[test]
fn acceptance_09_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let code = cmd_run(&RunOptions {
            scenario: assets().join("scenarios/convergence_curtailed.toml"),
            traces: assets().join("traces"),
            out: out.clone(),
            seed: None,
            horizon: None,
        });
        assert_eq!(code, EXIT_OK);
    }
    for file in ["events.jsonl", "summary.csv", "model.bin"] {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    println!("[PASS] criterion 9: byte-identical events.jsonl, summary.csv, model.bin across runs");
}

/// Criterion 10: analytic batch gradients match central finite differences
/// within 1e-5 relative at random parameter points.
#[test]
fn acceptance_10_gradient_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let dim = 6;
    let rows: Vec<(Vec<f64>, f64)> =
        (0..16).map(|row| generate_row(42, 0, row, dim, 0.01)).collect();
    for point in 0..3 {
        let theta: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let grad = batch_gradient(&theta, &rows);
        for k in 0..dim {
            let h = 1e-6 * theta[k].abs().max(1.0);
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[k] += h;
            minus[k] -= h;
            let fd = (batch_objective(&plus, &rows) - batch_objective(&minus, &rows)) / (2.0 * h);
            let rel = (grad[k] - fd).abs() / fd.abs().max(grad[k].abs()).max(1e-10);
            assert!(rel <= 1e-5, "point {point} component {k}: {} vs {fd}", grad[k]);
        }
    }
    println!("[PASS] criterion 10: analytic gradient matches central differences within 1e-5");
}

/// The comparison direction from the bundled demo: the elastic schedule
/// consumes at least as much energy as the centralized baseline (overhead
/// rounds add draw) while emitting far less.
#[test]
fn bundled_demo_energy_direction() {
    let (aware, traces_a) = load_bundled("curtailment_aware.toml");
    let (baseline, traces_b) = load_bundled("centralized.toml");
    let out_aware = run(&aware, &traces_a).unwrap();
    let out_base = run(&baseline, &traces_b).unwrap();
    assert!(out_aware.report.total_energy_kwh >= out_base.report.total_energy_kwh);
    let verdict = replay_check(&out_aware.log, &aware, &traces_a);
    assert_eq!(verdict, Verdict::Pass);
}
