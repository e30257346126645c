//! The `validate`, `run`, and `compare` commands.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use curtailsim_core::engine::{run, RunOutput};
use curtailsim_core::scenario::{load_traces, Scenario, ScenarioError};
use curtailsim_core::trace::CarbonTrace;
use curtailsim_core::trainer::{dataset_objective, TrainerKind};
use curtailsim_core::Seconds;

use crate::{EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION};

pub struct RunOptions {
    pub scenario: PathBuf,
    pub traces: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub horizon: Option<Seconds>,
}

/// Parses and cross-checks a scenario and its traces. Exit 0 when clean,
/// 2 with one diagnostic per stderr line otherwise.
pub fn cmd_validate(scenario_path: &Path, trace_dir: &Path) -> i32 {
    match load_and_validate(scenario_path, trace_dir, None, None) {
        Ok(_) => {
            println!("ok: {}", scenario_path.display());
            EXIT_OK
        }
        Err(issues) => {
            report(&issues);
            EXIT_VALIDATION
        }
    }
}

/// Runs one scenario and writes the artifact set into `--out`.
pub fn cmd_run(opts: &RunOptions) -> i32 {
    let (scenario, traces) =
        match load_and_validate(&opts.scenario, &opts.traces, opts.seed, opts.horizon) {
            Ok(pair) => pair,
            Err(issues) => {
                report(&issues);
                return EXIT_VALIDATION;
            }
        };
    let output = match run(&scenario, &traces) {
        Ok(output) => output,
        Err(e) => {
            report(&[format!("simulation failed: {e}")]);
            return EXIT_RUNTIME;
        }
    };
    if let Err(e) = write_artifacts(&opts.out, &scenario, &output) {
        report(&[format!("failed to write artifacts: {e}")]);
        remove_artifacts(&opts.out);
        return EXIT_RUNTIME;
    }
    print_summary(&opts.scenario, &scenario, &output);
    EXIT_OK
}

/// Runs several scenarios over the same traces and writes a comparison
/// table (CSV plus aligned text). Per-run artifacts land in
/// `--out/<scenario-stem>/`.
pub fn cmd_compare(
    scenario_paths: &[PathBuf],
    trace_dir: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    horizon: Option<Seconds>,
) -> i32 {
    if scenario_paths.len() < 2 {
        report(&["compare requires at least two scenarios".into()]);
        return EXIT_VALIDATION;
    }
    let mut rows: Vec<CompareRow> = Vec::new();
    for path in scenario_paths {
        let (scenario, traces) = match load_and_validate(path, trace_dir, seed, horizon) {
            Ok(pair) => pair,
            Err(issues) => {
                report(&issues);
                return EXIT_VALIDATION;
            }
        };
        let output = match run(&scenario, &traces) {
            Ok(output) => output,
            Err(e) => {
                report(&[format!("{}: simulation failed: {e}", path.display())]);
                return EXIT_RUNTIME;
            }
        };
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
        let sub = out_dir.join(&stem);
        if let Err(e) = write_artifacts(&sub, &scenario, &output) {
            report(&[format!("failed to write artifacts for {stem}: {e}")]);
            remove_artifacts(&sub);
            return EXIT_RUNTIME;
        }
        rows.push(CompareRow::build(stem, &scenario, &output));
    }
    if let Err(e) = write_compare(out_dir, &rows) {
        report(&[format!("failed to write comparison: {e}")]);
        return EXIT_RUNTIME;
    }
    print_compare(&rows);
    EXIT_OK
}

fn load_and_validate(
    scenario_path: &Path,
    trace_dir: &Path,
    seed: Option<u64>,
    horizon: Option<Seconds>,
) -> Result<(Scenario, BTreeMap<String, CarbonTrace>), Vec<String>> {
    let mut scenario = Scenario::load(scenario_path).map_err(issues_of)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
        // A seed given on the command line wins over the file's data_seed.
        scenario.trainer.data_seed = 0;
    }
    if let Some(horizon) = horizon {
        scenario.horizon = horizon;
    }
    scenario.validate().map_err(issues_of)?;
    let traces = load_traces(&scenario, trace_dir).map_err(issues_of)?;
    scenario.validate_traces(&traces).map_err(issues_of)?;
    Ok((scenario, traces))
}

fn issues_of(e: ScenarioError) -> Vec<String> {
    match e {
        ScenarioError::Invalid { issues } => issues,
        other => vec![other.to_string()],
    }
}

fn report(issues: &[String]) {
    for issue in issues {
        eprintln!("error: {issue}");
    }
}

const ARTIFACT_FILES: [&str; 5] = [
    "events.jsonl",
    "energy.csv",
    "summary.csv",
    "model.bin",
    "scenario_resolved.toml",
];

fn write_artifacts(out_dir: &Path, scenario: &Scenario, output: &RunOutput) -> std::io::Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("events.jsonl"), output.log.to_jsonl())?;

    let mut energy = Vec::new();
    output.ledger.write_csv(&mut energy)?;
    fs::write(out_dir.join("energy.csv"), energy)?;

    let mut summary = Vec::new();
    output.report.write_summary_csv(&mut summary)?;
    fs::write(out_dir.join("summary.csv"), summary)?;

    let mut model = Vec::with_capacity(output.model.params.len() * 8);
    for value in &output.model.params {
        model.extend_from_slice(&value.to_le_bytes());
    }
    fs::write(out_dir.join("model.bin"), model)?;

    fs::write(out_dir.join("scenario_resolved.toml"), scenario.to_toml())?;
    Ok(())
}

fn remove_artifacts(out_dir: &Path) {
    for name in ARTIFACT_FILES {
        let _ = fs::remove_file(out_dir.join(name));
    }
}

fn print_summary(path: &Path, scenario: &Scenario, output: &RunOutput) {
    let report = &output.report;
    let reason = output
        .log
        .events()
        .last()
        .and_then(|e| e.reason.clone())
        .unwrap_or_default();
    println!("{}: {}", path.display(), reason);
    println!("  runtime:            {} s ({:.2} h)", report.wall_clock_s, report.wall_clock_s as f64 / 3600.0);
    println!("  rounds:             {}", report.rounds);
    println!("  steps:              {}", report.steps_total);
    println!("  training time:      {} s", report.training_s);
    println!("  overhead time:      {} s", report.overhead_s);
    println!("  energy:             {:.6} kWh", report.total_energy_kwh);
    println!("  curtailed fraction: {:.4}", report.curtailed_fraction);
    println!("  emissions:          {:.1} gCO2", report.total_emissions_g);
    if scenario.trainer.kind == TrainerKind::Numeric {
        let spec = scenario.effective_trainer();
        let sizes = vec![scenario.shards.size; scenario.shards.count];
        let objective = dataset_objective(&spec, &sizes, &output.model.params);
        println!("  final objective:    {objective:.6e}");
    }
}

struct CompareRow {
    scenario: String,
    runtime_h: f64,
    objective: Option<f64>,
    energy_kwh: f64,
    curtailed_fraction: f64,
    emissions_g: f64,
}

impl CompareRow {
    fn build(name: String, scenario: &Scenario, output: &RunOutput) -> Self {
        let objective = (scenario.trainer.kind == TrainerKind::Numeric).then(|| {
            let spec = scenario.effective_trainer();
            let sizes = vec![scenario.shards.size; scenario.shards.count];
            dataset_objective(&spec, &sizes, &output.model.params)
        });
        CompareRow {
            scenario: name,
            runtime_h: output.report.wall_clock_s as f64 / 3600.0,
            objective,
            energy_kwh: output.report.total_energy_kwh,
            curtailed_fraction: output.report.curtailed_fraction,
            emissions_g: output.report.total_emissions_g,
        }
    }

    fn objective_cell(&self) -> String {
        self.objective.map(|o| format!("{o:.6e}")).unwrap_or_default()
    }
}

fn write_compare(out_dir: &Path, rows: &[CompareRow]) -> std::io::Result<()> {
    fs::create_dir_all(out_dir)?;
    let mut file = fs::File::create(out_dir.join("compare.csv"))?;
    writeln!(file, "scenario,runtime_h,final_objective,energy_kwh,curtailed_fraction,emissions_g")?;
    for r in rows {
        writeln!(
            file,
            "{},{},{},{},{},{}",
            r.scenario,
            r.runtime_h,
            r.objective_cell(),
            r.energy_kwh,
            r.curtailed_fraction,
            r.emissions_g
        )?;
    }
    Ok(())
}

fn print_compare(rows: &[CompareRow]) {
    let width = rows.iter().map(|r| r.scenario.len()).max().unwrap_or(8).max(8);
    println!(
        "{:<width$}  {:>10}  {:>14}  {:>12}  {:>10}  {:>12}",
        "scenario", "runtime_h", "objective", "energy_kwh", "curtailed", "emissions_g"
    );
    for r in rows {
        println!(
            "{:<width$}  {:>10.3}  {:>14}  {:>12.4}  {:>10.4}  {:>12.1}",
            r.scenario,
            r.runtime_h,
            r.objective_cell(),
            r.energy_kwh,
            r.curtailed_fraction,
            r.emissions_g
        );
    }
}
