//! Weighted summaries of Gaussian beliefs.
//!
//! The acquisition layer repeatedly needs three numbers for a belief
//! `z ~ N(m, v)` under a weight `w`:
//!
//! ```text
//! w_bar  = E[w(z)]                     total weighted mass
//! mean_w = E[w(z) z] / w_bar           weighted mean
//! u_w    = E[w(z) (z - mean_w)^2]      weighted spread (= w_bar * Var_w)
//! ```
//!
//! For exponential tilts `w(z) = exp(t z)` everything is closed form:
//! the reweighted law is `N(m + t v, v)`, `w_bar = exp(t m + t^2 v / 2)`,
//! and `u_w = w_bar * v`. Other weights go through a fixed-grid quadrature
//! (deterministic) or self-normalised Monte Carlo (seeded).

use rand::Rng;
use rand_distr::StandardNormal;

use crate::losses::WeightFn;
use crate::rng;
use crate::{Error, Result};

/// Atom count of the deterministic quadrature grid.
pub const QUADRATURE_ATOMS: usize = 2001;
/// Half-width of the quadrature grid in posterior standard deviations.
pub const QUADRATURE_SPAN: f64 = 8.0;

/// A scalar Gaussian belief with strictly positive variance.
#[derive(Clone, Copy, Debug)]
pub struct GaussianBelief {
    pub mean: f64,
    pub var: f64,
}

/// Weighted moments of a belief; see the module docs for definitions.
#[derive(Clone, Copy, Debug)]
pub struct WeightedSummary {
    pub w_bar: f64,
    pub mean_w: f64,
    pub u_w: f64,
}

impl GaussianBelief {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        if !mean.is_finite() || !var.is_finite() || var <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "Gaussian belief needs finite mean and positive variance, got N({mean}, {var})"
            )));
        }
        Ok(GaussianBelief { mean, var })
    }

    pub fn std_dev(&self) -> f64 {
        self.var.sqrt()
    }

    /// Log density at `y`.
    pub fn log_pdf(&self, y: f64) -> f64 {
        let d = y - self.mean;
        -0.5 * (d * d / self.var + self.var.ln() + (2.0 * std::f64::consts::PI).ln())
    }

    /// Closed-form summary for `w(z) = exp(tilt * z)`.
    pub fn weighted_summary_analytic(&self, tilt: f64) -> WeightedSummary {
        let w_bar = (tilt * self.mean + 0.5 * tilt * tilt * self.var).exp();
        WeightedSummary {
            w_bar,
            mean_w: self.mean + tilt * self.var,
            u_w: w_bar * self.var,
        }
    }

    /// Deterministic summary on a fixed grid of `QUADRATURE_ATOMS` atoms
    /// spanning `mean +- QUADRATURE_SPAN * sd`; the reference path for
    /// weights without a closed form.
    pub fn weighted_summary_quadrature(&self, weight: &WeightFn) -> Result<WeightedSummary> {
        let sd = self.std_dev();
        let lo = self.mean - QUADRATURE_SPAN * sd;
        let step = 2.0 * QUADRATURE_SPAN * sd / (QUADRATURE_ATOMS - 1) as f64;
        let mut mass = 0.0;
        let mut zs = Vec::with_capacity(QUADRATURE_ATOMS);
        let mut ps = Vec::with_capacity(QUADRATURE_ATOMS);
        for i in 0..QUADRATURE_ATOMS {
            let z = lo + step * i as f64;
            let d = (z - self.mean) / sd;
            let p = (-0.5 * d * d).exp();
            mass += p;
            zs.push(z);
            ps.push(p);
        }
        let mut w_bar = 0.0;
        let mut first = 0.0;
        for i in 0..QUADRATURE_ATOMS {
            let p = ps[i] / mass;
            let w = weight.weight(zs[i])?;
            w_bar += p * w;
            first += p * w * zs[i];
        }
        if w_bar <= 0.0 || !w_bar.is_finite() {
            return Err(Error::DegenerateBelief(format!(
                "weighted mass {w_bar} on the quadrature grid"
            )));
        }
        let mean_w = first / w_bar;
        let mut u_w = 0.0;
        for i in 0..QUADRATURE_ATOMS {
            let p = ps[i] / mass;
            let d = zs[i] - mean_w;
            u_w += p * weight.weight(zs[i])? * d * d;
        }
        Ok(WeightedSummary { w_bar, mean_w, u_w })
    }

    /// Self-normalised Monte Carlo summary from `n` draws of the seeded
    /// stream. Zero weights are fine sample-by-sample; an all-zero batch is
    /// a degenerate belief.
    pub fn weighted_summary_mc(
        &self,
        weight: &WeightFn,
        n: usize,
        seed: u64,
    ) -> Result<WeightedSummary> {
        if n == 0 {
            return Err(Error::InsufficientData("mc summary needs n > 0".into()));
        }
        let mut rng = rng::stream(seed, &[]);
        let sd = self.std_dev();
        let mut zs = Vec::with_capacity(n);
        let mut ws = Vec::with_capacity(n);
        let mut w_sum = 0.0;
        let mut wz_sum = 0.0;
        for _ in 0..n {
            let eps: f64 = rng.sample(StandardNormal);
            let z = self.mean + sd * eps;
            let w = weight.weight(z)?;
            w_sum += w;
            wz_sum += w * z;
            zs.push(z);
            ws.push(w);
        }
        if w_sum <= 0.0 {
            return Err(Error::DegenerateBelief(
                "all Monte Carlo draws received zero weight".into(),
            ));
        }
        let mean_w = wz_sum / w_sum;
        let u_w = zs
            .iter()
            .zip(&ws)
            .map(|(z, w)| w * (z - mean_w) * (z - mean_w))
            .sum::<f64>()
            / n as f64;
        Ok(WeightedSummary {
            w_bar: w_sum / n as f64,
            mean_w,
            u_w,
        })
    }

    /// Exact summary: analytic for exponential tilts, quadrature otherwise.
    pub fn weighted_summary_exact(&self, weight: &WeightFn) -> Result<WeightedSummary> {
        match weight.tilt() {
            Some(t) => Ok(self.weighted_summary_analytic(t)),
            None => self.weighted_summary_quadrature(weight),
        }
    }

    /// Weighted mean point prediction under this belief; the Bayes act of a
    /// weighted squared error.
    pub fn weighted_mean(&self, weight: &WeightFn) -> Result<f64> {
        Ok(self.weighted_summary_exact(weight)?.mean_w)
    }
}
