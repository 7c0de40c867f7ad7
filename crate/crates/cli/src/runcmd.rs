//! `run` subcommand: execute every (seed, method) pair of a configuration
//! and persist `results.csv`, `config.lock`, and `summary.json`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use bregal::acquisition::Method;
use bregal::driver::{run_classification, run_regression, AcquisitionSpec, RoundRecord};
use bregal::losses::WeightFn;

use crate::config::{ExperimentConfig, Resolved, Task, WeightSpec};
use crate::CliError;

struct Row {
    seed: u64,
    method: &'static str,
    round: usize,
    metric: String,
    value: f64,
}

#[derive(Serialize)]
struct MeanSem {
    mean: f64,
    sem: f64,
}

#[derive(Serialize)]
struct MethodSummary {
    round: usize,
    metrics: BTreeMap<String, MeanSem>,
}

#[derive(Serialize)]
struct Summary {
    rounds: usize,
    seeds: usize,
    methods: BTreeMap<String, MethodSummary>,
}

fn acquisition_spec(resolved: &Resolved, method: Method) -> AcquisitionSpec {
    let weight = match method {
        Method::EvrWeighted | Method::EpigWeighted => resolved.weight.clone(),
        _ => WeightFn::Constant,
    };
    let mut spec = AcquisitionSpec::new(method, weight);
    spec.n_y_draws = resolved.config.mc_y_draws;
    spec.n_z_draws = resolved.config.mc_z_draws;
    spec
}

fn mean_sem(values: &[f64]) -> MeanSem {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sem = if n < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    };
    MeanSem { mean, sem }
}

pub fn cmd_run(config_path: &Path) -> Result<(), CliError> {
    let resolved = ExperimentConfig::from_path(config_path)
        .and_then(ExperimentConfig::resolve)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let mut rows: Vec<Row> = Vec::new();
    let mut finals: BTreeMap<&'static str, Vec<RoundRecord>> = BTreeMap::new();
    for &seed in &resolved.seeds {
        let task = resolved
            .build_task(seed)
            .map_err(|e| CliError::Config(e.to_string()))?;
        if let (Task::Classification(t), WeightSpec::ClassWeights(w)) =
            (&task, &resolved.config.weight)
        {
            if w.values.len() != t.n_classes {
                return Err(CliError::Config(format!(
                    "weight.class-weights.values: {} entries for a task with {} classes",
                    w.values.len(),
                    t.n_classes
                )));
            }
        }
        for &method in &resolved.methods {
            let spec = acquisition_spec(&resolved, method);
            let records = match &task {
                Task::Regression(t) => run_regression(
                    t,
                    resolved.gp_model.as_ref().expect("validated model kind"),
                    &spec,
                    &resolved.eval,
                    resolved.config.rounds,
                    seed,
                ),
                Task::Classification(t) => run_classification(
                    t,
                    resolved.ensemble.as_ref().expect("validated model kind"),
                    &spec,
                    &resolved.eval,
                    resolved.config.rounds,
                    seed,
                ),
            }
            .map_err(|e| {
                CliError::Runtime(format!("seed {seed} method {}: {e}", method.label()))
            })?;
            for record in &records {
                for (metric, value) in &record.metrics {
                    rows.push(Row {
                        seed,
                        method: method.label(),
                        round: record.round,
                        metric: metric.clone(),
                        value: *value,
                    });
                }
            }
            finals
                .entry(method.label())
                .or_default()
                .push(records.last().expect("driver yields >= 1 record").clone());
        }
    }
    rows.sort_by(|a, b| (a.seed, a.method, a.round).cmp(&(b.seed, b.method, b.round)));

    std::fs::create_dir_all(&resolved.output_dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", resolved.output_dir.display())))?;
    let io = |path: &Path| {
        let shown = path.display().to_string();
        move |e: std::io::Error| CliError::Io(format!("{shown}: {e}"))
    };

    let results_path = resolved.output_dir.join("results.csv");
    let mut out = String::from("seed,method,round,metric,value\n");
    for r in &rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.seed, r.method, r.round, r.metric, r.value
        ));
    }
    std::fs::write(&results_path, out).map_err(io(&results_path))?;

    let lock_path = resolved.output_dir.join("config.lock");
    let lock = toml::to_string_pretty(&resolved.config)
        .map_err(|e| CliError::Io(format!("serialising config.lock: {e}")))?;
    std::fs::write(&lock_path, lock).map_err(io(&lock_path))?;

    let summary = Summary {
        rounds: resolved.config.rounds,
        seeds: resolved.seeds.len(),
        methods: finals
            .into_iter()
            .map(|(label, records)| {
                let round = records.iter().map(|r| r.round).max().unwrap_or(0);
                let mut metrics = BTreeMap::new();
                for (name, _) in &records[0].metrics {
                    let values: Vec<f64> = records
                        .iter()
                        .filter_map(|r| {
                            r.metrics
                                .iter()
                                .find(|(n, _)| n == name)
                                .map(|(_, v)| *v)
                        })
                        .collect();
                    metrics.insert(name.clone(), mean_sem(&values));
                }
                (label.to_string(), MethodSummary { round, metrics })
            })
            .collect(),
    };
    let summary_path = resolved.output_dir.join("summary.json");
    let mut f = std::fs::File::create(&summary_path).map_err(io(&summary_path))?;
    serde_json::to_writer_pretty(&mut f, &summary)
        .map_err(|e| CliError::Io(format!("{}: {e}", summary_path.display())))?;
    f.write_all(b"\n").map_err(io(&summary_path))?;
    Ok(())
}
