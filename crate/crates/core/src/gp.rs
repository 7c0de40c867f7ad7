//! Exact Gaussian process regression.
//!
//! Fitting factors `A = K + noise_var * I` once per round with an adaptive
//! jitter; predictions, cross covariances, and the rank-one "what if we
//! labelled x_new" update all reuse that factor. The one-step update is the
//! workhorse of acquisition scoring: posterior variances after acquiring a
//! candidate do not depend on its (unknown) label,
//!
//! ```text
//! tau^2      = v_n(x_new) + noise_var
//! beta(c)    = s_n(c, x_new) / tau^2
//! m_n+1(c)   = m_n(c) + beta(c) * (y_new - m_n(x_new))
//! v_n+1(c)   = v_n(c) - s_n(c, x_new)^2 / tau^2
//! ```
//!
//! Hyperparameters for tabular tasks come from robust plug-in rules (median
//! based noise, ridge split of linear vs stationary signal, and a length
//! scale solving `kappa_nu(r0 / l) = 1/2` at the median nearest-neighbour
//! distance) rather than marginal likelihood optimisation.

use nalgebra::{DMatrix, DVector};

use crate::beliefs::GaussianBelief;
use crate::{Error, Result};

/// Smoothness of the Matern correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaternNu {
    ThreeHalves,
    FiveHalves,
}

/// Matern correlation `kappa_nu(t)` at scaled distance `t >= 0`; equals 1 at
/// zero and decreases to 0.
pub fn matern_correlation(nu: MaternNu, t: f64) -> f64 {
    match nu {
        MaternNu::ThreeHalves => {
            let s = 3f64.sqrt() * t;
            (1.0 + s) * (-s).exp()
        }
        MaternNu::FiveHalves => {
            let s = 5f64.sqrt() * t;
            (1.0 + s + 5.0 * t * t / 3.0) * (-s).exp()
        }
    }
}

/// Covariance function over feature vectors.
#[derive(Clone, Debug)]
pub enum Kernel {
    /// `signal_var * exp(-|x - y|^2 / (2 l^2))`.
    Rbf { signal_var: f64, lengthscale: f64 },
    /// `var * <x, y>`.
    Linear { var: f64 },
    /// `signal_var * kappa_nu(|x - y| / l)`.
    Matern {
        nu: MaternNu,
        signal_var: f64,
        lengthscale: f64,
    },
    Sum(Vec<Kernel>),
}

impl Kernel {
    pub fn rbf(signal_var: f64, lengthscale: f64) -> Result<Self> {
        if !(signal_var > 0.0) || !(lengthscale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "RBF needs positive signal_var and lengthscale, got {signal_var}, {lengthscale}"
            )));
        }
        Ok(Kernel::Rbf {
            signal_var,
            lengthscale,
        })
    }

    pub fn matern(nu: MaternNu, signal_var: f64, lengthscale: f64) -> Result<Self> {
        if !(signal_var > 0.0) || !(lengthscale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "Matern needs positive signal_var and lengthscale, got {signal_var}, {lengthscale}"
            )));
        }
        Ok(Kernel::Matern {
            nu,
            signal_var,
            lengthscale,
        })
    }

    pub fn linear(var: f64) -> Result<Self> {
        if !(var >= 0.0) || !var.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "linear kernel needs nonnegative var, got {var}"
            )));
        }
        Ok(Kernel::Linear { var })
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Kernel::Rbf {
                signal_var,
                lengthscale,
            } => {
                let d2: f64 = x
                    .iter()
                    .zip(y)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                signal_var * (-0.5 * d2 / (lengthscale * lengthscale)).exp()
            }
            Kernel::Linear { var } => var * x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>(),
            Kernel::Matern {
                nu,
                signal_var,
                lengthscale,
            } => {
                let d: f64 = x
                    .iter()
                    .zip(y)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                signal_var * matern_correlation(*nu, d / lengthscale)
            }
            Kernel::Sum(parts) => parts.iter().map(|k| k.eval(x, y)).sum(),
        }
    }
}

/// Rank-one posterior update quantities for one candidate; see module docs.
#[derive(Clone, Debug)]
pub struct OneStepUpdate {
    /// Posterior mean at the candidate, `m_n(x_new)`.
    pub x_mean: f64,
    /// Predictive label variance at the candidate, `v_n(x_new) + noise_var`.
    pub tau_sq: f64,
    /// Cross covariance `s_n(c_j, x_new)` per context.
    pub s: Vec<f64>,
    /// `s / tau_sq`, the mean-shift coefficient per unit label surprise.
    pub beta: Vec<f64>,
    /// Post-acquisition latent variance per context, label independent.
    pub v_next: Vec<f64>,
}

/// Exact GP posterior over a (possibly empty) labelled set.
#[derive(Clone, Debug)]
pub struct GpPosterior {
    kernel: Kernel,
    mean_const: f64,
    noise_var: f64,
    x: Vec<Vec<f64>>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    alpha: DVector<f64>,
    jitter: f64,
}

/// Fits the posterior: builds `K + noise_var I`, factors it with an adaptive
/// jitter ladder (from 1e-10 to 1e-4 of the mean diagonal, doubling), and
/// stores `A^{-1}(y - mean_const)`.
pub fn fit(
    kernel: Kernel,
    mean_const: f64,
    noise_var: f64,
    x: Vec<Vec<f64>>,
    y: &[f64],
) -> Result<GpPosterior> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "got {} inputs and {} labels",
            x.len(),
            y.len()
        )));
    }
    if !(noise_var > 0.0) || !noise_var.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "noise variance must be positive, got {noise_var}"
        )));
    }
    if !mean_const.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite labels or mean".into()));
    }
    let n = x.len();
    if n > 0 {
        let d = x[0].len();
        if d == 0 || x.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("inconsistent feature dimensions".into()));
        }
    }
    if n == 0 {
        return Ok(GpPosterior {
            kernel,
            mean_const,
            noise_var,
            x,
            chol: None,
            alpha: DVector::zeros(0),
            jitter: 0.0,
        });
    }

    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let k = kernel.eval(&x[i], &x[j]);
            a[(i, j)] = k;
            a[(j, i)] = k;
        }
        a[(i, i)] += noise_var;
    }
    let mean_diag = a.diagonal().sum() / n as f64;
    let cap = 1e-4 * mean_diag;
    let mut jitter = 0.0;
    let chol = loop {
        let mut attempt = a.clone();
        for i in 0..n {
            attempt[(i, i)] += jitter;
        }
        if let Some(c) = nalgebra::Cholesky::new(attempt) {
            break c;
        }
        jitter = if jitter == 0.0 {
            1e-10 * mean_diag
        } else {
            2.0 * jitter
        };
        if jitter > cap {
            return Err(Error::IllConditionedKernel { cap });
        }
    };
    let resid = DVector::from_iterator(n, y.iter().map(|&v| v - mean_const));
    let alpha = chol.solve(&resid);
    Ok(GpPosterior {
        kernel,
        mean_const,
        noise_var,
        x,
        chol: Some(chol),
        alpha,
        jitter,
    })
}

impl GpPosterior {
    pub fn n_train(&self) -> usize {
        self.x.len()
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn mean_const(&self) -> f64 {
        self.mean_const
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// Jitter that was actually added to the factor's diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn k_train(&self, q: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.x.len(), self.x.iter().map(|r| self.kernel.eval(r, q)))
    }

    /// Latent posterior `f(x) ~ N(m, v)` per query point. Variances are in
    /// `(0, k(x,x) + jitter]`; add `noise_var` for label predictions.
    pub fn predict(&self, xs: &[Vec<f64>]) -> Result<Vec<GaussianBelief>> {
        xs.iter()
            .map(|q| {
                let kxx = self.kernel.eval(q, q);
                let (m, v) = match &self.chol {
                    None => (self.mean_const, kxx),
                    Some(chol) => {
                        let kx = self.k_train(q);
                        let m = self.mean_const + kx.dot(&self.alpha);
                        let v = kxx - kx.dot(&chol.solve(&kx));
                        (m, v)
                    }
                };
                // Strictly positive by theory; rounding can graze zero.
                GaussianBelief::new(m, v.max(1e-18 * kxx.max(1.0)))
            })
            .collect()
    }

    /// Label predictive `y(x) ~ N(m, v + noise_var)`.
    pub fn predict_label(&self, xs: &[Vec<f64>]) -> Result<Vec<GaussianBelief>> {
        Ok(self
            .predict(xs)?
            .into_iter()
            .map(|b| GaussianBelief {
                mean: b.mean,
                var: b.var + self.noise_var,
            })
            .collect())
    }

    /// Posterior cross covariance `s_n(c, x_new)` for each context; reduces
    /// to the prior kernel when the training set is empty.
    pub fn cross_cov(&self, contexts: &[Vec<f64>], x_new: &[f64]) -> Result<Vec<f64>> {
        match &self.chol {
            None => Ok(contexts
                .iter()
                .map(|c| self.kernel.eval(c, x_new))
                .collect()),
            Some(chol) => {
                let kx = self.k_train(x_new);
                let solved = chol.solve(&kx);
                Ok(contexts
                    .iter()
                    .map(|c| {
                        let kc = self.k_train(c);
                        self.kernel.eval(c, x_new) - kc.dot(&solved)
                    })
                    .collect())
            }
        }
    }

    /// Rank-one update quantities for acquiring `x_new`, evaluated at the
    /// given contexts. Post-update variances below `-1e-10` are a numerical
    /// failure; small negative grazes are clamped to zero.
    pub fn one_step_update(
        &self,
        x_new: &[f64],
        contexts: &[Vec<f64>],
    ) -> Result<OneStepUpdate> {
        let at_x = &self.predict(std::slice::from_ref(&x_new.to_vec()))?[0];
        let tau_sq = at_x.var + self.noise_var;
        let s = self.cross_cov(contexts, x_new)?;
        let v_now = self.predict(contexts)?;
        let mut beta = Vec::with_capacity(s.len());
        let mut v_next = Vec::with_capacity(s.len());
        for (sj, bj) in s.iter().zip(&v_now) {
            beta.push(sj / tau_sq);
            let v = bj.var - sj * sj / tau_sq;
            if v < -1e-10 {
                return Err(Error::Numerical(format!(
                    "one-step variance {v} at context; cross covariance inconsistent"
                )));
            }
            v_next.push(v.max(0.0));
        }
        Ok(OneStepUpdate {
            x_mean: at_x.mean,
            tau_sq,
            s,
            beta,
            v_next,
        })
    }
}

/// Plug-in hyperparameters for the tabular composite kernel
/// `linear_var * <x,x'> + signal_var * kappa_nu(|x-x'| / lengthscale)`.
#[derive(Clone, Copy, Debug)]
pub struct RobustHyperparams {
    pub mean_const: f64,
    pub noise_var: f64,
    pub linear_var: f64,
    pub signal_var: f64,
    pub lengthscale: f64,
}

impl RobustHyperparams {
    pub fn kernel(&self, nu: MaternNu) -> Result<Kernel> {
        Ok(Kernel::Sum(vec![
            Kernel::linear(self.linear_var)?,
            Kernel::matern(nu, self.signal_var.max(1e-12), self.lengthscale)?,
        ]))
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Index of the nearest neighbour of each row (ties to the lowest index).
fn nearest_neighbours(x: &[Vec<f64>]) -> Vec<usize> {
    let n = x.len();
    let mut out = vec![0usize; n];
    for i in 0..n {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..n {
            if i == j {
                continue;
            }
            let d2: f64 = x[i]
                .iter()
                .zip(&x[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2 < best.0 {
                best = (d2, j);
            }
        }
        out[i] = best.1;
    }
    out
}

/// Robust plug-in hyperparameters from (standardised) features and raw
/// labels; no likelihood optimisation anywhere.
///
/// - centre: median of `y`;
/// - noise: scaled median absolute nearest-neighbour label gap,
///   `1.4826 / sqrt(2) * median |y_i - y_j(i)|`, floored for constant labels;
/// - linear/stationary split: a tiny-ridge linear fit explains what it can,
///   the residual MAD above the noise level becomes the Matern amplitude;
/// - lengthscale: solves `kappa_nu(r0 / l) = 1/2` with `r0` the median
///   nearest-neighbour distance (bisection, monotone in `l`).
pub fn robust_hyperparameters(
    x: &[Vec<f64>],
    y: &[f64],
    nu: MaternNu,
) -> Result<RobustHyperparams> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::InsufficientData(format!(
            "robust hyperparameters need n >= 2 matched rows, got {} and {}",
            n,
            y.len()
        )));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("inconsistent feature dimensions".into()));
    }

    let mean_const = median(&mut y.to_vec());

    let nn = nearest_neighbours(x);
    let mut gaps: Vec<f64> = (0..n).map(|i| (y[i] - y[nn[i]]).abs()).collect();
    let sigma_n = (1.4826 / 2f64.sqrt()) * median(&mut gaps);
    let sigma_n = sigma_n.max(1e-6 * (1.0 + mean_const.abs()));
    let noise_var = sigma_n * sigma_n;

    // Ridge fit of centred labels on the features; the penalty only has to
    // keep the normal equations invertible.
    let xm = DMatrix::from_fn(n, d, |i, j| x[i][j]);
    let yc = DVector::from_iterator(n, y.iter().map(|&v| v - mean_const));
    let ridge = 1e-6 * n as f64;
    let mut gram = &xm.transpose() * &xm;
    for i in 0..d {
        gram[(i, i)] += ridge;
    }
    let beta = nalgebra::Cholesky::new(gram)
        .map(|c| c.solve(&(xm.transpose() * &yc)))
        .ok_or_else(|| Error::Numerical("ridge normal equations not PD".into()))?;
    let fitted = &xm * &beta;
    let fit_mean = fitted.sum() / n as f64;
    let linear_var = fitted.iter().map(|f| (f - fit_mean) * (f - fit_mean)).sum::<f64>() / n as f64;

    let mut resid_abs: Vec<f64> = (0..n).map(|i| (yc[i] - fitted[i]).abs()).collect();
    let resid_scale = 1.4826 * median(&mut resid_abs);
    let signal_var = (resid_scale * resid_scale - noise_var).max(1e-12);

    let mut nn_dist: Vec<f64> = (0..n)
        .map(|i| {
            x[i].iter()
                .zip(&x[nn[i]])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let r0 = median(&mut nn_dist).max(1e-12);
    let lengthscale = lengthscale_for(nu, r0);

    Ok(RobustHyperparams {
        mean_const,
        noise_var,
        linear_var,
        signal_var,
        lengthscale,
    })
}

/// Solves `kappa_nu(r0 / l) = 1/2` for `l` by bisection on
/// `[1e-3 r0, 1e3 r0]`; the correlation is monotone in `l`, so the root is
/// unique (about `1.032 r0` for nu = 3/2).
pub fn lengthscale_for(nu: MaternNu, r0: f64) -> f64 {
    let (mut lo, mut hi) = (1e-3 * r0, 1e3 * r0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if matern_correlation(nu, r0 / mid) < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
