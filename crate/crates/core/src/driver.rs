//! Pool-based active-learning driver: acquire, label, retrain, evaluate.
//!
//! One run produces a record per evaluation: the initial model at round 0
//! plus one record per acquisition. Tasks carry pre-drawn labels, so runs
//! that share a task are paired; model-training seeds depend on
//! `(master seed, round)` only, and acquisition seeds on
//! `(master seed, round, method)`, so adding a method to an experiment
//! never perturbs another method's streams.

use std::time::Instant;

use crate::acquisition::{
    class_weight_vector, epig_weighted_scores, evr_scores, evr_weighted_scores, random_select,
    AcquisitionConfig, Method,
};
use crate::beliefs::GaussianBelief;
use crate::datasets::{ClassificationTask, RegressionTask};
use crate::ensemble::{train_ensemble, ForestConfig, TreeEnsemble};
use crate::gp::{fit, robust_hyperparameters, GpPosterior, Kernel, MaternNu, RobustHyperparams};
use crate::losses::WeightFn;
use crate::rng::derive_seed;
use crate::{Error, Result};

const TAG_MODEL: u64 = 0;
const TAG_ACQUIRE: u64 = 1;

/// Predictive probabilities below this are clamped in the log-loss metrics
/// and counted in the record's diagnostic counter.
pub const PROB_FLOOR: f64 = 1e-12;

/// GP hyperparameter policy: fixed values, or robust plug-in rules
/// recomputed every third round.
#[derive(Clone, Debug)]
pub enum GpModelConfig {
    Fixed {
        kernel: Kernel,
        mean_const: f64,
        noise_var: f64,
    },
    RobustPlugin {
        nu: MaternNu,
    },
}

/// Forest size for classification runs; training seeds are derived per
/// round.
#[derive(Clone, Copy, Debug)]
pub struct EnsembleSpec {
    pub n_trees: usize,
}

/// Which scorer a run uses and with what weighting and draw counts.
#[derive(Clone, Debug)]
pub struct AcquisitionSpec {
    pub method: Method,
    pub weight: WeightFn,
    pub n_y_draws: usize,
    pub n_z_draws: usize,
}

impl AcquisitionSpec {
    pub fn new(method: Method, weight: WeightFn) -> Self {
        AcquisitionSpec {
            method,
            weight,
            n_y_draws: 64,
            n_z_draws: 256,
        }
    }

    fn per_round(&self, master_seed: u64, round: usize) -> AcquisitionConfig {
        AcquisitionConfig {
            method: self.method,
            weight: self.weight.clone(),
            n_y_draws: self.n_y_draws,
            n_z_draws: self.n_z_draws,
            seed: round_seeds(master_seed, round, self.method).1,
        }
    }
}

/// The `(model, acquisition)` seed pair a run derives for a given round,
/// exposed so callers can log the streams a configuration will consume.
pub fn round_seeds(master_seed: u64, round: usize, method: Method) -> (u64, u64) {
    (
        derive_seed(master_seed, &[TAG_MODEL, round as u64]),
        derive_seed(master_seed, &[TAG_ACQUIRE, round as u64, method as u64]),
    )
}

/// Evaluation-loss settings: the weight for the weighted metrics and the
/// asymmetry of the one-sided exponential metric.
#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub weight: WeightFn,
    pub linex_alpha: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            weight: WeightFn::Constant,
            linex_alpha: 1.0,
        }
    }
}

/// One evaluation point of a run. `chosen` is the pool index acquired in
/// this round (absent at round 0); `class_counts` are cumulative labelled
/// counts per class including the initial set.
#[derive(Clone, Debug)]
pub struct RoundRecord {
    pub round: usize,
    pub method: Method,
    pub chosen: Option<usize>,
    pub metrics: Vec<(String, f64)>,
    pub class_counts: Option<Vec<usize>>,
    pub clamp_count: usize,
    pub wall_secs: f64,
    pub truncated: bool,
}

fn at_round<T>(round: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Numerical(format!("round {round}: {e}")))
}

fn check_finite(metrics: &[(String, f64)]) -> Result<()> {
    for (name, value) in metrics {
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "metric {name} evaluated to {value}"
            )));
        }
    }
    Ok(())
}

/// Regression metrics on label-predictive beliefs: mean squared error of
/// the predictive mean (`sel`), its weighted form with the weighted
/// predictive mean as point prediction (`sel_w`), Gaussian log loss (`nll`,
/// `nll_w`), and the asymmetric exponential loss at its in-space Bayes act
/// `b* = m - alpha v / 2` (`linex`).
pub fn regression_metrics(
    beliefs: &[GaussianBelief],
    test_y: &[f64],
    eval: &EvalConfig,
) -> Result<Vec<(String, f64)>> {
    if beliefs.len() != test_y.len() || beliefs.is_empty() {
        return Err(Error::Shape("metrics need matched nonempty rows".into()));
    }
    if !(eval.linex_alpha > 0.0) {
        return Err(Error::InvalidParameter("linex alpha must be positive".into()));
    }
    let n = beliefs.len() as f64;
    let alpha = eval.linex_alpha;
    let (mut sel, mut nll, mut linex) = (0.0, 0.0, 0.0);
    let (mut sel_w, mut nll_w, mut w_sum) = (0.0, 0.0, 0.0);
    for (b, &y) in beliefs.iter().zip(test_y) {
        let e = y - b.mean;
        sel += e * e;
        let neg_lp = -b.log_pdf(y);
        nll += neg_lp;
        let w = eval.weight.weight(y)?;
        let e_w = y - b.weighted_mean(&eval.weight)?;
        sel_w += w * e_w * e_w;
        nll_w += w * neg_lp;
        w_sum += w;
        let d = alpha * ((b.mean - alpha * b.var / 2.0) - y);
        linex += d.exp() - d - 1.0;
    }
    if !(w_sum > 0.0) {
        return Err(Error::DegenerateBelief(
            "evaluation weights sum to zero".into(),
        ));
    }
    let metrics = vec![
        ("sel".to_string(), sel / n),
        ("sel_w".to_string(), sel_w / w_sum),
        ("nll".to_string(), nll / n),
        ("nll_w".to_string(), nll_w / w_sum),
        ("linex".to_string(), linex / n),
    ];
    check_finite(&metrics)?;
    Ok(metrics)
}

/// Classification log-loss metrics from predictive class probabilities.
/// Returns the metrics and the number of clamped probabilities.
pub fn classification_metrics(
    probs: &[Vec<f64>],
    test_y: &[usize],
    class_weights: &[f64],
) -> Result<(Vec<(String, f64)>, usize)> {
    if probs.len() != test_y.len() || probs.is_empty() {
        return Err(Error::Shape("metrics need matched nonempty rows".into()));
    }
    let k = class_weights.len();
    let n = probs.len() as f64;
    let mut clamps = 0usize;
    let (mut nll, mut nll_w, mut w_sum) = (0.0, 0.0, 0.0);
    for (q, &y) in probs.iter().zip(test_y) {
        if q.len() != k || y >= k {
            return Err(Error::Shape("class dimensions disagree".into()));
        }
        let mut p = q[y];
        if p < PROB_FLOOR {
            p = PROB_FLOOR;
            clamps += 1;
        }
        let neg_lp = -p.ln();
        nll += neg_lp;
        nll_w += class_weights[y] * neg_lp;
        w_sum += class_weights[y];
    }
    let metrics = vec![
        ("nll".to_string(), nll / n),
        ("nll_w".to_string(), nll_w / w_sum),
    ];
    check_finite(&metrics)?;
    Ok((metrics, clamps))
}

fn fit_gp(
    model: &GpModelConfig,
    cache: &mut Option<RobustHyperparams>,
    round: usize,
    x: &[Vec<f64>],
    y: &[f64],
) -> Result<GpPosterior> {
    match model {
        GpModelConfig::Fixed {
            kernel,
            mean_const,
            noise_var,
        } => fit(kernel.clone(), *mean_const, *noise_var, x.to_vec(), y),
        GpModelConfig::RobustPlugin { nu } => {
            if round % 3 == 0 || cache.is_none() {
                *cache = Some(robust_hyperparameters(x, y, *nu)?);
            }
            let h = cache.as_ref().unwrap();
            fit(h.kernel(*nu)?, h.mean_const, h.noise_var, x.to_vec(), y)
        }
    }
}

/// Runs one regression trial: round 0 evaluates the initial model, then
/// each round scores the remaining pool, labels the winner, refits, and
/// re-evaluates. A drained pool ends the run early with the last record
/// flagged truncated.
pub fn run_regression(
    task: &RegressionTask,
    model: &GpModelConfig,
    acq: &AcquisitionSpec,
    eval: &EvalConfig,
    n_rounds: usize,
    master_seed: u64,
) -> Result<Vec<RoundRecord>> {
    if matches!(acq.method, Method::Epig | Method::EpigWeighted) {
        return Err(Error::InvalidParameter(format!(
            "{} scores class distributions, not regression posteriors",
            acq.method.label()
        )));
    }
    let mut labelled: Vec<usize> = task.initial.clone();
    let mut available: Vec<usize> =
        (0..task.pool_x.len()).filter(|i| !labelled.contains(i)).collect();
    let mut cache: Option<RobustHyperparams> = None;
    let mut records = Vec::with_capacity(n_rounds + 1);
    let mut acquired: Option<usize> = None;

    for round in 0..=n_rounds {
        let start = Instant::now();
        let x: Vec<Vec<f64>> = labelled.iter().map(|&i| task.pool_x[i].clone()).collect();
        let y: Vec<f64> = labelled.iter().map(|&i| task.pool_y[i]).collect();
        let post = at_round(round, fit_gp(model, &mut cache, round, &x, &y))?;
        let beliefs = at_round(round, post.predict_label(&task.test_x))?;
        let metrics = at_round(round, regression_metrics(&beliefs, &task.test_y, eval))?;
        records.push(RoundRecord {
            round,
            method: acq.method,
            chosen: acquired.take(),
            metrics,
            class_counts: None,
            clamp_count: 0,
            wall_secs: start.elapsed().as_secs_f64(),
            truncated: false,
        });
        if round == n_rounds {
            break;
        }
        if available.is_empty() {
            records.last_mut().unwrap().truncated = true;
            break;
        }
        let config = acq.per_round(master_seed, round + 1);
        let candidates: Vec<Vec<f64>> =
            available.iter().map(|&i| task.pool_x[i].clone()).collect();
        let scored = match acq.method {
            Method::Random => random_select(candidates.len(), config.seed),
            Method::Evr => evr_scores(&post, &candidates, &task.context_x).map(|r| r.best),
            Method::EvrWeighted => {
                evr_weighted_scores(&post, &candidates, &task.context_x, &config).map(|r| r.best)
            }
            Method::Epig | Method::EpigWeighted => unreachable!(),
        };
        let pick = at_round(round + 1, scored)?;
        let pool_index = available.remove(pick);
        labelled.push(pool_index);
        acquired = Some(pool_index);
    }
    Ok(records)
}

/// Runs one classification trial: the forest is retrained every round from
/// a seed derived from `(master seed, round)`, so paired methods sharing a
/// task see identical models whenever their labelled sets coincide.
pub fn run_classification(
    task: &ClassificationTask,
    model: &EnsembleSpec,
    acq: &AcquisitionSpec,
    eval: &EvalConfig,
    n_rounds: usize,
    master_seed: u64,
) -> Result<Vec<RoundRecord>> {
    if matches!(acq.method, Method::Evr | Method::EvrWeighted) {
        return Err(Error::InvalidParameter(format!(
            "{} scores Gaussian posteriors, not class distributions",
            acq.method.label()
        )));
    }
    let k = task.n_classes;
    let eval_weights = class_weight_vector(&eval.weight, k)?;
    let acq_weights = class_weight_vector(&acq.weight, k)?;
    let mut labelled: Vec<usize> = task.initial.clone();
    let mut available: Vec<usize> =
        (0..task.pool_x.len()).filter(|i| !labelled.contains(i)).collect();
    let initial_counts = {
        let mut c = vec![0usize; k];
        for &i in &labelled {
            c[task.pool_y[i]] += 1;
        }
        c
    };
    let mut counts = initial_counts.clone();
    let initial_total: usize = initial_counts.iter().sum();
    let mut records = Vec::with_capacity(n_rounds + 1);
    let mut acquired: Option<usize> = None;

    for round in 0..=n_rounds {
        let start = Instant::now();
        let x: Vec<Vec<f64>> = labelled.iter().map(|&i| task.pool_x[i].clone()).collect();
        let y: Vec<usize> = labelled.iter().map(|&i| task.pool_y[i]).collect();
        let ens = at_round(
            round,
            train_ensemble(
                &x,
                &y,
                k,
                &ForestConfig {
                    n_trees: model.n_trees,
                    seed: round_seeds(master_seed, round, acq.method).0,
                },
            ),
        )?;
        let probs = at_round(
            round,
            task.test_x
                .iter()
                .map(|xi| ens.posterior_predictive(xi))
                .collect::<Result<Vec<_>>>(),
        )?;
        let (mut metrics, clamp_count) = at_round(
            round,
            classification_metrics(&probs, &task.test_y, &eval_weights),
        )?;
        let n_acquired = labelled.len() - initial_total;
        for (class, &c) in counts.iter().enumerate() {
            let share = if n_acquired == 0 {
                0.0
            } else {
                (c - initial_counts[class]) as f64 / n_acquired as f64
            };
            metrics.push((format!("acq_share_class_{class}"), share));
        }
        records.push(RoundRecord {
            round,
            method: acq.method,
            chosen: acquired.take(),
            metrics,
            class_counts: Some(counts.clone()),
            clamp_count,
            wall_secs: start.elapsed().as_secs_f64(),
            truncated: false,
        });
        if round == n_rounds {
            break;
        }
        if available.is_empty() {
            records.last_mut().unwrap().truncated = true;
            break;
        }
        let config = acq.per_round(master_seed, round + 1);
        let candidates: Vec<Vec<f64>> =
            available.iter().map(|&i| task.pool_x[i].clone()).collect();
        let scored = match acq.method {
            Method::Random => random_select(candidates.len(), config.seed),
            Method::Epig | Method::EpigWeighted => {
                epig_weighted_scores(&ens, &candidates, &task.context_x, &acq_weights)
                    .map(|r| r.best)
            }
            Method::Evr | Method::EvrWeighted => unreachable!(),
        };
        let pick = at_round(round + 1, scored)?;
        let pool_index = available.remove(pick);
        labelled.push(pool_index);
        counts[task.pool_y[pool_index]] += 1;
        acquired = Some(pool_index);
    }
    Ok(records)
}

/// `TreeEnsemble` is re-exported for callers that evaluate extra metrics on
/// the final model of a run.
pub type ClassifierModel = TreeEnsemble;
