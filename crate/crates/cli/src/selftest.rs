//! `selftest` subcommand: quick numeric identity suites over the library's
//! core contracts, printed one line per suite. The full oracle and property
//! batteries live in the workspace test targets; this is a fast smoke check
//! for installed binaries.

use rand::Rng;

use bregal::acquisition::evr_scores;
use bregal::beliefs::GaussianBelief;
use bregal::driver::{run_regression, AcquisitionSpec, EvalConfig, GpModelConfig};
use bregal::gp::{fit, GpPosterior, Kernel};
use bregal::losses::{
    eval_discrepancy_decomposition, DiscreteBelief, LossSpec, Potential, Transform, WeightFn,
};
use bregal::rng::stream;

use bregal::acquisition::Method;

use crate::CliError;

type Check = fn() -> Result<(), String>;

pub fn cmd_selftest() -> Result<(), CliError> {
    let suites: [(&str, Check); 5] = [
        ("bayes-act-optimality", bayes_act_optimality),
        ("gp-one-step-refit", gp_one_step_refit),
        ("evr-closed-form-refit", evr_closed_form_refit),
        ("exponential-weight-summary", exponential_weight_summary),
        ("run-determinism", run_determinism),
    ];
    let mut failures = 0;
    for (name, suite) in suites {
        match suite() {
            Ok(()) => println!("{name}: ok"),
            Err(msg) => {
                println!("{name}: FAIL ({msg})");
                failures += 1;
            }
        }
    }
    if failures == 0 {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{failures} selftest suite(s) failed")))
    }
}

fn random_belief(r: &mut impl Rng, atoms: usize, lo: f64, hi: f64) -> DiscreteBelief {
    let zs: Vec<f64> = (0..atoms).map(|_| r.random_range(lo..hi)).collect();
    let raw: Vec<f64> = (0..atoms).map(|_| r.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
    DiscreteBelief::from_scalars(&zs, &probs).expect("valid belief")
}

fn expected_loss(loss: &LossSpec, q: &DiscreteBelief, act: &[f64]) -> Result<f64, String> {
    let mut total = 0.0;
    for (s, &p) in q.states().iter().zip(q.probs()) {
        total += p * loss.eval(s, act).map_err(|e| e.to_string())?;
    }
    Ok(total)
}

/// The closed-form entropy must equal the expected loss at the Bayes act,
/// and no sampled act may beat the Bayes act beyond rounding.
fn bayes_act_optimality() -> Result<(), String> {
    let mut r = stream(2024, &[90]);
    for trial in 0..30u32 {
        let scalar = random_belief(&mut r, 6, -2.0, 2.0);
        let cases = [
            (
                LossSpec::new(
                    Potential::Quadratic,
                    Transform::Identity,
                    WeightFn::exp_pos(0.5).map_err(|e| e.to_string())?,
                ),
                scalar.clone(),
            ),
            (
                LossSpec::new(
                    Potential::NegLog,
                    Transform::neg_exp(0.5).map_err(|e| e.to_string())?,
                    WeightFn::Constant,
                ),
                scalar.clone(),
            ),
            (
                LossSpec::new(
                    Potential::NegEntropy,
                    Transform::one_hot(3).map_err(|e| e.to_string())?,
                    WeightFn::class_weights(vec![2.0, 1.0, 0.5]).map_err(|e| e.to_string())?,
                ),
                {
                    let raw = [
                        r.random_range(0.05..1.0),
                        r.random_range(0.05..1.0),
                        r.random_range(0.05..1.0),
                    ];
                    let t: f64 = raw.iter().sum();
                    DiscreteBelief::from_scalars(
                        &[0.0, 1.0, 2.0],
                        &[raw[0] / t, raw[1] / t, raw[2] / t],
                    )
                    .map_err(|e| e.to_string())?
                },
            ),
        ];
        for (loss, q) in cases {
            let act = loss.bayes_act(&q).map_err(|e| e.to_string())?;
            let h = loss.generalised_entropy(&q).map_err(|e| e.to_string())?;
            let at_act = expected_loss(&loss, &q, &act.act)?;
            if (h - at_act).abs() > 1e-9 {
                return Err(format!("trial {trial}: entropy {h} vs loss-at-act {at_act}"));
            }
            for _ in 0..50 {
                let mut challenger: Vec<f64> = act
                    .act
                    .iter()
                    .map(|&a| {
                        let scale = a.abs().max(0.05);
                        (a + scale * r.random_range(-0.5..0.5)).max(1e-6)
                    })
                    .collect();
                if challenger.len() > 1 {
                    // One-hot acts live on the probability simplex.
                    let total: f64 = challenger.iter().sum();
                    for c in &mut challenger {
                        *c /= total;
                    }
                }
                let alt = expected_loss(&loss, &q, &challenger)?;
                if alt < at_act - 1e-9 {
                    return Err(format!(
                        "trial {trial}: act beaten by {:.3e}",
                        at_act - alt
                    ));
                }
            }
        }
    }
    Ok(())
}

fn random_gp(seed: u64) -> (GpPosterior, Vec<Vec<f64>>, Vec<f64>, f64) {
    let mut r = stream(seed, &[91]);
    let n = 5;
    let x: Vec<Vec<f64>> = (0..n).map(|_| vec![r.random_range(-2.0..2.0)]).collect();
    let y: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let noise = 0.1;
    let post = fit(
        Kernel::rbf(1.0, 1.2).expect("valid kernel"),
        0.3,
        noise,
        x.clone(),
        &y,
    )
    .expect("well conditioned");
    (post, x, y, noise)
}

/// Rank-one update quantities must match a refit with the candidate added.
fn gp_one_step_refit() -> Result<(), String> {
    for seed in 0..5u64 {
        let (post, x, y, noise) = random_gp(seed);
        let mut r = stream(seed, &[92]);
        let candidate = vec![r.random_range(-2.0..2.0)];
        let contexts: Vec<Vec<f64>> = (0..3).map(|_| vec![r.random_range(-2.0..2.0)]).collect();
        let up = post
            .one_step_update(&candidate, &contexts)
            .map_err(|e| e.to_string())?;
        let y_new = up.x_mean + 0.7;
        let mut x2 = x.clone();
        x2.push(candidate.clone());
        let mut y2 = y.clone();
        y2.push(y_new);
        let refit = fit(Kernel::rbf(1.0, 1.2).unwrap(), 0.3, noise, x2, &y2)
            .map_err(|e| e.to_string())?;
        let before = post.predict(&contexts).map_err(|e| e.to_string())?;
        let after = refit.predict(&contexts).map_err(|e| e.to_string())?;
        for j in 0..contexts.len() {
            let mean_pred = before[j].mean + up.beta[j] * (y_new - up.x_mean);
            if (after[j].mean - mean_pred).abs() > 1e-8 {
                return Err(format!(
                    "seed {seed} context {j}: mean {} vs {}",
                    after[j].mean, mean_pred
                ));
            }
            if (after[j].var - up.v_next[j]).abs() > 1e-8 {
                return Err(format!(
                    "seed {seed} context {j}: var {} vs {}",
                    after[j].var, up.v_next[j]
                ));
            }
        }
    }
    Ok(())
}

/// The closed-form variance-reduction score must match refits.
fn evr_closed_form_refit() -> Result<(), String> {
    for seed in 5..10u64 {
        let (post, x, y, noise) = random_gp(seed);
        let mut r = stream(seed, &[93]);
        let candidates: Vec<Vec<f64>> =
            (0..4).map(|_| vec![r.random_range(-2.0..2.0)]).collect();
        let contexts: Vec<Vec<f64>> = (0..3).map(|_| vec![r.random_range(-2.0..2.0)]).collect();
        let report =
            evr_scores(&post, &candidates, &contexts).map_err(|e| e.to_string())?;
        let before = post.predict(&contexts).map_err(|e| e.to_string())?;
        for (i, cand) in candidates.iter().enumerate() {
            let mut x2 = x.clone();
            x2.push(cand.clone());
            let mut y2 = y.clone();
            y2.push(0.0);
            let refit = fit(Kernel::rbf(1.0, 1.2).unwrap(), 0.3, noise, x2, &y2)
                .map_err(|e| e.to_string())?;
            let after = refit.predict(&contexts).map_err(|e| e.to_string())?;
            let reduction: f64 = before
                .iter()
                .zip(&after)
                .map(|(b, a)| b.var - a.var)
                .sum::<f64>()
                / contexts.len() as f64;
            if (report.scores[i] - reduction).abs() > 1e-8 {
                return Err(format!(
                    "seed {seed} candidate {i}: {} vs refit {reduction}",
                    report.scores[i]
                ));
            }
        }
    }
    Ok(())
}

/// The analytic exponential-tilt summary must agree with quadrature.
fn exponential_weight_summary() -> Result<(), String> {
    let mut r = stream(4, &[94]);
    for trial in 0..20u32 {
        let b = GaussianBelief::new(r.random_range(-2.0..2.0), r.random_range(0.1..2.0))
            .map_err(|e| e.to_string())?;
        let alpha = r.random_range(0.1..1.5);
        let analytic = b.weighted_summary_analytic(alpha);
        let quad = b
            .weighted_summary_quadrature(&WeightFn::exp_pos(alpha).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let close = |a: f64, q: f64| (a - q).abs() <= 1e-6 * (1.0 + a.abs().max(q.abs()));
        if !close(analytic.w_bar, quad.w_bar)
            || !close(analytic.mean_w, quad.mean_w)
            || !close(analytic.u_w, quad.u_w)
        {
            return Err(format!(
                "trial {trial}: analytic ({}, {}, {}) vs quadrature ({}, {}, {})",
                analytic.w_bar, analytic.mean_w, analytic.u_w, quad.w_bar, quad.mean_w, quad.u_w
            ));
        }
        let p = DiscreteBelief::from_scalars(&[0.1, 0.4, 0.9], &[0.5, 0.3, 0.2])
            .map_err(|e| e.to_string())?;
        let q = DiscreteBelief::from_scalars(&[0.1, 0.4, 0.9], &[0.2, 0.5, 0.3])
            .map_err(|e| e.to_string())?;
        let d = eval_discrepancy_decomposition(Potential::Quadratic, &p, &q)
            .map_err(|e| e.to_string())?;
        if (d.total - d.estimation - d.irreducible).abs() > 1e-10 {
            return Err(format!("decomposition residual {}", d.total - d.estimation - d.irreducible));
        }
    }
    Ok(())
}

/// Identical seeds must reproduce a short run record-for-record.
fn run_determinism() -> Result<(), String> {
    let task = bregal::datasets::synth_1d(11);
    let model = GpModelConfig::Fixed {
        kernel: Kernel::rbf(25.0, 1.0).expect("valid kernel"),
        mean_const: 0.0,
        noise_var: 0.04,
    };
    let run = || {
        run_regression(
            &task,
            &model,
            &AcquisitionSpec::new(Method::Evr, WeightFn::Constant),
            &EvalConfig::default(),
            2,
            17,
        )
        .map_err(|e| e.to_string())
    };
    let a = run()?;
    let b = run()?;
    for (ra, rb) in a.iter().zip(&b) {
        if ra.metrics != rb.metrics || ra.chosen != rb.chosen {
            return Err(format!("round {} diverged across reruns", ra.round));
        }
    }
    Ok(())
}
