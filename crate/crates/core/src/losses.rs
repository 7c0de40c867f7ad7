//! Weighted Bregman losses and their closed-form summaries.
//!
//! A loss here is `l(z, a) = w(z) * D_phi(T(z), a)`: a strictly convex
//! potential `phi`, an outcome transform `T` into the potential's domain,
//! and a strictly positive weight `w` expressing which outcomes matter.
//! For a discrete belief `q` the minimum expected loss is attained at the
//! weighted mean act `a* = E_{q_w}[T(z)]` with `q_w(z) = w(z) q(z) / w_bar`,
//! and equals the weighted Jensen gap
//!
//! ```text
//! h(q) = w_bar * ( E_{q_w}[phi(T(z))] - phi(E_{q_w}[T(z)]) ).
//! ```
//!
//! Both are computed exactly; no optimiser is involved.

use std::fmt;
use std::sync::Arc;

use crate::{Error, Result};

/// Entries of simplex points are clamped to `[SIMPLEX_FLOOR, 1]` and
/// renormalised before a `NegEntropy` gradient is evaluated, so boundary
/// beliefs stay inside the open domain. The potential's value instead uses
/// the continuous extension `0 * log 0 = 0`, which keeps the Shannon and KL
/// special cases exact at one-hot corners.
pub const SIMPLEX_FLOOR: f64 = 1e-12;

/// Strictly convex potential defining a Bregman divergence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Potential {
    /// `phi(u) = |u|^2` on all of R^K.
    Quadratic,
    /// `phi(p) = sum_i p_i log p_i` on the open probability simplex.
    NegEntropy,
    /// `phi(u) = -sum_i log u_i` on positive orthants.
    NegLog,
}

impl Potential {
    /// Validates `u` against the (closure of the) domain.
    fn validate(&self, u: &[f64]) -> Result<()> {
        if u.is_empty() {
            return Err(Error::Shape("potential input is empty".into()));
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("potential input is not finite".into()));
        }
        match self {
            Potential::Quadratic => {}
            Potential::NegLog => {
                if u.iter().any(|&x| x <= 0.0) {
                    return Err(Error::Domain(format!(
                        "NegLog needs strictly positive entries, got {u:?}"
                    )));
                }
            }
            Potential::NegEntropy => {
                if u.iter().any(|&x| x < -1e-9) {
                    return Err(Error::Domain(format!(
                        "NegEntropy needs nonnegative entries, got {u:?}"
                    )));
                }
                let sum: f64 = u.iter().sum();
                if (sum - 1.0).abs() > 1e-6 {
                    return Err(Error::Domain(format!(
                        "NegEntropy input must lie on the simplex, entries sum to {sum}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `phi(u)`; `NegEntropy` takes the continuous extension at the simplex
    /// boundary.
    pub fn value(&self, u: &[f64]) -> Result<f64> {
        self.validate(u)?;
        Ok(match self {
            Potential::Quadratic => u.iter().map(|x| x * x).sum(),
            Potential::NegEntropy => u
                .iter()
                .map(|&x| if x > 0.0 { x * x.ln() } else { 0.0 })
                .sum(),
            Potential::NegLog => -u.iter().map(|&x| x.ln()).sum::<f64>(),
        })
    }

    /// `grad phi(u)`; `NegEntropy` clamps to `[SIMPLEX_FLOOR, 1]` and
    /// renormalises first, since the gradient diverges at the boundary.
    pub fn gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.validate(u)?;
        Ok(match self {
            Potential::Quadratic => u.iter().map(|x| 2.0 * x).collect(),
            Potential::NegEntropy => {
                let mut v: Vec<f64> = u.iter().map(|&x| x.clamp(SIMPLEX_FLOOR, 1.0)).collect();
                let s: f64 = v.iter().sum();
                for x in &mut v {
                    *x /= s;
                }
                v.iter().map(|&x| 1.0 + x.ln()).collect()
            }
            Potential::NegLog => u.iter().map(|&x| -1.0 / x).collect(),
        })
    }
}

/// `D_phi(u, v) = phi(u) - phi(v) - <grad phi(v), u - v>`.
///
/// Nonnegative, zero iff `u == v` (after the simplex clamp), and convex in
/// `u`. For `NegEntropy` on the simplex this is the KL divergence; for
/// `NegLog` in one dimension it is the Itakura-Saito distance.
pub fn bregman_divergence(phi: Potential, u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "bregman_divergence got dims {} and {}",
            u.len(),
            v.len()
        )));
    }
    let grad = phi.gradient(v)?;
    let inner: f64 = grad
        .iter()
        .zip(u.iter().zip(v.iter()))
        .map(|(g, (a, b))| g * (a - b))
        .sum();
    Ok(phi.value(u)? - phi.value(v)? - inner)
}

/// Maps an outcome into the potential's domain.
#[derive(Clone, Debug, PartialEq)]
pub enum Transform {
    /// `T(z) = z`.
    Identity,
    /// Class index `k` in `{0, .., K-1}` to the k-th standard basis vector.
    OneHot(usize),
    /// `T(z) = (z^lambda - 1) / lambda` on `z > 0`, `lambda != 0`.
    BoxCox(f64),
    /// `T(z) = exp(-alpha z)`, `alpha > 0`; pairs with `NegLog` to give the
    /// linex loss `exp(alpha (b - z)) - alpha (b - z) - 1`.
    NegExp(f64),
}

impl Transform {
    pub fn box_cox(lambda: f64) -> Result<Self> {
        if lambda == 0.0 || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Box-Cox lambda must be finite and nonzero, got {lambda}"
            )));
        }
        Ok(Transform::BoxCox(lambda))
    }

    pub fn neg_exp(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "NegExp alpha must be positive, got {alpha}"
            )));
        }
        Ok(Transform::NegExp(alpha))
    }

    pub fn one_hot(classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "OneHot needs at least 2 classes, got {classes}"
            )));
        }
        Ok(Transform::OneHot(classes))
    }

    /// `T(z)`. Scalar transforms apply elementwise; `OneHot` expects a
    /// single integer-valued coordinate.
    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            Transform::Identity => Ok(z.to_vec()),
            Transform::OneHot(k) => {
                if z.len() != 1 {
                    return Err(Error::Shape(
                        "OneHot expects a scalar class index".into(),
                    ));
                }
                let idx = z[0].round();
                if (z[0] - idx).abs() > 1e-9 || idx < 0.0 || idx >= *k as f64 {
                    return Err(Error::Domain(format!(
                        "class index {} outside 0..{k}",
                        z[0]
                    )));
                }
                let mut e = vec![0.0; *k];
                e[idx as usize] = 1.0;
                Ok(e)
            }
            Transform::BoxCox(l) => z
                .iter()
                .map(|&x| {
                    if x <= 0.0 {
                        Err(Error::Domain(format!("Box-Cox needs z > 0, got {x}")))
                    } else {
                        Ok((x.powf(*l) - 1.0) / l)
                    }
                })
                .collect(),
            Transform::NegExp(a) => Ok(z.iter().map(|&x| (-a * x).exp()).collect()),
        }
    }

    /// `T^{-1}(u)` for the injective scalar transforms; `OneHot` has no
    /// inverse on the simplex interior.
    pub fn invert(&self, u: &[f64]) -> Result<Vec<f64>> {
        match self {
            Transform::Identity => Ok(u.to_vec()),
            Transform::OneHot(_) => Err(Error::InvalidParameter(
                "OneHot is not invertible".into(),
            )),
            Transform::BoxCox(l) => u
                .iter()
                .map(|&x| {
                    let base = l * x + 1.0;
                    if base <= 0.0 {
                        Err(Error::Domain(format!(
                            "Box-Cox inverse needs lambda*u + 1 > 0, got {base}"
                        )))
                    } else {
                        Ok(base.powf(1.0 / l))
                    }
                })
                .collect(),
            Transform::NegExp(a) => u
                .iter()
                .map(|&x| {
                    if x <= 0.0 {
                        Err(Error::Domain(format!(
                            "NegExp inverse needs u > 0, got {x}"
                        )))
                    } else {
                        Ok(-x.ln() / a)
                    }
                })
                .collect(),
        }
    }
}

/// Strictly positive weight over outcomes.
#[derive(Clone)]
pub enum WeightFn {
    /// `w(z) = 1`.
    Constant,
    /// `w(z) = exp(alpha z)`, `alpha > 0`.
    ExpPos(f64),
    /// `w(z) = exp(-alpha z)`, `alpha > 0`.
    ExpNeg(f64),
    /// Per-class weights indexed by the integer-valued outcome.
    ClassWeights(Vec<f64>),
    /// Arbitrary weight; must evaluate to a finite positive value wherever
    /// a loss summary touches it (zero is tolerated only by the Monte Carlo
    /// belief summaries, which self-normalise).
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for WeightFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightFn::Constant => write!(f, "Constant"),
            WeightFn::ExpPos(a) => write!(f, "ExpPos({a})"),
            WeightFn::ExpNeg(a) => write!(f, "ExpNeg({a})"),
            WeightFn::ClassWeights(w) => write!(f, "ClassWeights({w:?})"),
            WeightFn::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl WeightFn {
    pub fn exp_pos(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "ExpPos alpha must be positive, got {alpha}"
            )));
        }
        Ok(WeightFn::ExpPos(alpha))
    }

    pub fn exp_neg(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "ExpNeg alpha must be positive, got {alpha}"
            )));
        }
        Ok(WeightFn::ExpNeg(alpha))
    }

    pub fn class_weights(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "class weights must be strictly positive, got {w:?}"
            )));
        }
        Ok(WeightFn::ClassWeights(w))
    }

    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        WeightFn::Custom(Arc::new(f))
    }

    /// Exponential tilt `theta` when `w(z) = exp(theta z)` exactly
    /// (`Constant` tilts by zero); `None` for class and custom weights.
    pub fn tilt(&self) -> Option<f64> {
        match self {
            WeightFn::Constant => Some(0.0),
            WeightFn::ExpPos(a) => Some(*a),
            WeightFn::ExpNeg(a) => Some(-*a),
            _ => None,
        }
    }

    /// `w(z)`. Zero is returned as-is; negative or non-finite values are
    /// rejected.
    pub fn weight(&self, z: f64) -> Result<f64> {
        let w = match self {
            WeightFn::Constant => 1.0,
            WeightFn::ExpPos(a) => (a * z).exp(),
            WeightFn::ExpNeg(a) => (-a * z).exp(),
            WeightFn::ClassWeights(ws) => {
                let idx = z.round();
                if (z - idx).abs() > 1e-9 || idx < 0.0 || idx >= ws.len() as f64 {
                    return Err(Error::Domain(format!(
                        "class weight index {z} outside 0..{}",
                        ws.len()
                    )));
                }
                ws[idx as usize]
            }
            WeightFn::Custom(f) => f(z),
        };
        if w.is_nan() || w < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "weight function returned {w} at z = {z}"
            )));
        }
        Ok(w)
    }

    /// `log w(z)`, exact for the exponential kinds so that weighted means
    /// can take a log-sum-exp path without overflow.
    pub fn log_weight(&self, z: f64) -> Result<f64> {
        match self {
            WeightFn::ExpPos(a) => Ok(a * z),
            WeightFn::ExpNeg(a) => Ok(-a * z),
            _ => Ok(self.weight(z)?.ln()),
        }
    }
}

/// Finitely supported belief over world states.
///
/// States are points in a common R^d; classification beliefs use the class
/// index as a one-dimensional state. Probabilities are validated to be
/// nonnegative and to sum to one within 1e-12.
#[derive(Clone, Debug)]
pub struct DiscreteBelief {
    states: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl DiscreteBelief {
    pub fn new(states: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        if states.is_empty() || states.len() != probs.len() {
            return Err(Error::Shape(format!(
                "belief needs matching nonempty states/probs, got {} and {}",
                states.len(),
                probs.len()
            )));
        }
        let dim = states[0].len();
        if dim == 0 || states.iter().any(|s| s.len() != dim) {
            return Err(Error::Shape("belief states must share a nonzero dim".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "belief probabilities must be nonnegative, got {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "belief probabilities sum to {sum}, expected 1 within 1e-12"
            )));
        }
        Ok(DiscreteBelief { states, probs })
    }

    pub fn from_scalars(zs: &[f64], probs: &[f64]) -> Result<Self> {
        Self::new(zs.iter().map(|&z| vec![z]).collect(), probs.to_vec())
    }

    pub fn uniform_scalars(zs: &[f64]) -> Result<Self> {
        let n = zs.len();
        if n == 0 {
            return Err(Error::Shape("uniform belief needs support".into()));
        }
        Self::from_scalars(zs, &vec![1.0 / n as f64; n])
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    /// Mean state `E_q[z]`.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.state_dim()];
        for (s, &p) in self.states.iter().zip(&self.probs) {
            for (mi, si) in m.iter_mut().zip(s) {
                *mi += p * si;
            }
        }
        m
    }

    /// Total weighted mass `w_bar = E_q[w(z)]` and the reweighted
    /// probabilities `q_w(k) = w(z_k) q(k) / w_bar`, computed with
    /// log-sum-exp so exponential weights cannot overflow the normaliser.
    pub fn reweighted(&self, weight: &WeightFn) -> Result<(f64, Vec<f64>)> {
        let scalar_needed = !matches!(weight, WeightFn::Constant);
        if scalar_needed && self.state_dim() != 1 {
            return Err(Error::Shape(
                "non-constant weights need scalar world states".into(),
            ));
        }
        let mut logs = vec![f64::NEG_INFINITY; self.probs.len()];
        for (k, (s, &p)) in self.states.iter().zip(&self.probs).enumerate() {
            if p == 0.0 {
                continue;
            }
            let lw = weight.log_weight(s[0])?;
            if lw == f64::NEG_INFINITY {
                return Err(Error::InvalidParameter(format!(
                    "weight is zero at support point {:?}",
                    s
                )));
            }
            logs[k] = lw + p.ln();
        }
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Err(Error::DegenerateBelief(
                "no support point carries weighted mass".into(),
            ));
        }
        let shifted: Vec<f64> = logs.iter().map(|&l| (l - m).exp()).collect();
        let norm: f64 = shifted.iter().sum();
        // q_w stays well defined even when w_bar itself over- or underflows;
        // consumers that need w_bar as a number check finiteness themselves.
        let w_bar = m.exp() * norm;
        Ok((w_bar, shifted.iter().map(|&s| s / norm).collect()))
    }
}

/// Minimising act together with its pre-image when the transform is
/// injective.
#[derive(Clone, Debug)]
pub struct BayesAct {
    /// `a* = E_{q_w}[T(z)]`, a point in the potential's domain.
    pub act: Vec<f64>,
    /// `T^{-1}(a*)` for Identity, Box-Cox, and NegExp transforms.
    pub in_space: Option<Vec<f64>>,
}

/// A weighted Bregman loss `w(z) * D_phi(T(z), a)`.
#[derive(Clone, Debug)]
pub struct LossSpec {
    pub potential: Potential,
    pub transform: Transform,
    pub weight: WeightFn,
}

impl LossSpec {
    pub fn new(potential: Potential, transform: Transform, weight: WeightFn) -> Self {
        LossSpec {
            potential,
            transform,
            weight,
        }
    }

    /// Plain squared error `(z - a)^2`.
    pub fn squared_error() -> Self {
        Self::new(Potential::Quadratic, Transform::Identity, WeightFn::Constant)
    }

    /// `w(z) (z - a)^2`.
    pub fn weighted_squared_error(weight: WeightFn) -> Self {
        Self::new(Potential::Quadratic, Transform::Identity, weight)
    }

    /// Linex loss `exp(alpha (b - z)) - alpha (b - z) - 1` expressed through
    /// its action `a = exp(-alpha b)`.
    pub fn linex(alpha: f64) -> Result<Self> {
        Ok(Self::new(
            Potential::NegLog,
            Transform::neg_exp(alpha)?,
            WeightFn::Constant,
        ))
    }

    /// Box-Cox squared error `(z^lambda - b^lambda)^2 / lambda^2` through
    /// `a = T(b)`.
    pub fn box_cox(lambda: f64) -> Result<Self> {
        Ok(Self::new(
            Potential::Quadratic,
            Transform::box_cox(lambda)?,
            WeightFn::Constant,
        ))
    }

    /// Log loss over `classes` labels; its generalised entropy is Shannon
    /// entropy.
    pub fn log_loss(classes: usize) -> Result<Self> {
        Ok(Self::new(
            Potential::NegEntropy,
            Transform::one_hot(classes)?,
            WeightFn::Constant,
        ))
    }

    /// Log loss with per-class weights.
    pub fn weighted_log_loss(class_weights: Vec<f64>) -> Result<Self> {
        let k = class_weights.len();
        Ok(Self::new(
            Potential::NegEntropy,
            Transform::one_hot(k)?,
            WeightFn::class_weights(class_weights)?,
        ))
    }

    fn weight_at(&self, z: &[f64]) -> Result<f64> {
        match self.weight {
            WeightFn::Constant => Ok(1.0),
            _ => {
                if z.len() != 1 {
                    return Err(Error::Shape(
                        "non-constant weights need scalar world states".into(),
                    ));
                }
                let w = self.weight.weight(z[0])?;
                if w == 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "weight is zero at z = {}",
                        z[0]
                    )));
                }
                Ok(w)
            }
        }
    }

    /// `l(z, a) = w(z) * D_phi(T(z), a)`.
    pub fn eval(&self, z: &[f64], act: &[f64]) -> Result<f64> {
        let u = self.transform.apply(z)?;
        Ok(self.weight_at(z)? * bregman_divergence(self.potential, &u, act)?)
    }

    /// Exact minimiser of `E_q[l(z, a)]` over acts.
    pub fn bayes_act(&self, q: &DiscreteBelief) -> Result<BayesAct> {
        let (_, q_w) = q.reweighted(&self.weight)?;
        let transformed: Vec<Vec<f64>> = q
            .states()
            .iter()
            .map(|s| self.transform.apply(s))
            .collect::<Result<_>>()?;
        let dim = transformed[0].len();
        let mut act = vec![0.0; dim];
        for (t, &p) in transformed.iter().zip(&q_w) {
            for (ai, ti) in act.iter_mut().zip(t) {
                *ai += p * ti;
            }
        }
        let in_space = match self.transform {
            Transform::OneHot(_) => None,
            _ => Some(self.transform.invert(&act)?),
        };
        Ok(BayesAct { act, in_space })
    }

    /// Minimum expected loss `h(q) = min_a E_q[l(z, a)]` via the weighted
    /// Jensen gap; always finite and nonnegative.
    pub fn generalised_entropy(&self, q: &DiscreteBelief) -> Result<f64> {
        let (w_bar, q_w) = q.reweighted(&self.weight)?;
        let transformed: Vec<Vec<f64>> = q
            .states()
            .iter()
            .map(|s| self.transform.apply(s))
            .collect::<Result<_>>()?;
        let dim = transformed[0].len();
        let mut mean_t = vec![0.0; dim];
        let mut mean_phi = 0.0;
        for (t, &p) in transformed.iter().zip(&q_w) {
            if p == 0.0 {
                continue;
            }
            mean_phi += p * self.potential.value(t)?;
            for (mi, ti) in mean_t.iter_mut().zip(t) {
                *mi += p * ti;
            }
        }
        let gap = mean_phi - self.potential.value(&mean_t)?;
        let h = w_bar * gap;
        if !h.is_finite() {
            return Err(Error::Numerical(format!(
                "generalised entropy is not finite (w_bar {w_bar}, gap {gap})"
            )));
        }
        // Jensen's inequality makes the gap nonnegative; tiny negatives are
        // rounding from the clamp and are truncated.
        Ok(h.max(0.0))
    }
}

/// Split of an evaluation-time expected divergence around a model's mean
/// prediction: `total = estimation + irreducible` with
/// `estimation = D_phi(E_eval[z], E_model[z])`.
#[derive(Clone, Copy, Debug)]
pub struct Decomposition {
    pub total: f64,
    pub estimation: f64,
    pub irreducible: f64,
}

/// Decomposes `E_{p_eval}[D_phi(z, E_{p_model}[z])]` into the divergence of
/// the two means plus the eval belief's own spread. Both beliefs must share
/// support; all three terms are computed independently rather than by
/// subtraction.
pub fn eval_discrepancy_decomposition(
    phi: Potential,
    p_model: &DiscreteBelief,
    p_eval: &DiscreteBelief,
) -> Result<Decomposition> {
    if p_model.states() != p_eval.states() {
        return Err(Error::Shape(
            "decomposition needs beliefs on a shared support".into(),
        ));
    }
    let m_model = p_model.mean();
    let m_eval = p_eval.mean();
    let mut total = 0.0;
    let mut irreducible = 0.0;
    for (s, &p) in p_eval.states().iter().zip(p_eval.probs()) {
        if p == 0.0 {
            continue;
        }
        total += p * bregman_divergence(phi, s, &m_model)?;
        irreducible += p * bregman_divergence(phi, s, &m_eval)?;
    }
    Ok(Decomposition {
        total,
        estimation: bregman_divergence(phi, &m_eval, &m_model)?,
        irreducible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    /// Dense grid minimisation of the expected loss, the independent check
    /// for the closed forms. Scalar action grids only.
    fn grid_min_expected_loss(
        loss: &LossSpec,
        q: &DiscreteBelief,
        lo: f64,
        hi: f64,
        steps: usize,
    ) -> (f64, f64) {
        let mut best = (f64::INFINITY, lo);
        for i in 0..=steps {
            let a = lo + (hi - lo) * i as f64 / steps as f64;
            let e = expected_loss(loss, q, &[a]);
            if e < best.0 {
                best = (e, a);
            }
        }
        (best.0, best.1)
    }

    fn expected_loss(loss: &LossSpec, q: &DiscreteBelief, act: &[f64]) -> f64 {
        q.states()
            .iter()
            .zip(q.probs())
            .map(|(s, &p)| p * loss.eval(s, act).unwrap())
            .sum()
    }

    #[test]
    fn quadratic_divergence_is_squared_distance() {
        let d = bregman_divergence(Potential::Quadratic, &[1.0], &[3.0]).unwrap();
        assert_relative_eq!(d, 4.0, max_relative = 1e-14);
        let d2 =
            bregman_divergence(Potential::Quadratic, &[1.0, -2.0], &[3.0, 1.0]).unwrap();
        assert_relative_eq!(d2, 4.0 + 9.0, max_relative = 1e-14);
    }

    #[test]
    fn neg_entropy_divergence_is_kl() {
        let d = bregman_divergence(Potential::NegEntropy, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert!(d.abs() < 1e-12);
        // Point mass against uniform: KL = log 2 exactly under the
        // continuous extension of phi.
        let d = bregman_divergence(Potential::NegEntropy, &[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert_relative_eq!(d, std::f64::consts::LN_2, epsilon = 1e-14);
        // Divergence against a boundary point is finite thanks to the
        // gradient clamp.
        let d = bregman_divergence(Potential::NegEntropy, &[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!(d.is_finite() && d > 1.0);
    }

    #[test]
    fn neg_log_rejects_nonpositive() {
        assert!(bregman_divergence(Potential::NegLog, &[1.0], &[0.0]).is_err());
        assert!(bregman_divergence(Potential::NegLog, &[-1.0], &[1.0]).is_err());
        assert!(Potential::NegEntropy.value(&[0.7, -0.3]).is_err());
    }

    #[test]
    fn linex_loss_matches_closed_form() {
        let linex = LossSpec::linex(1.0).unwrap();
        // Action is a = T(b) = exp(-b).
        let act = |b: f64| vec![(-b_f64(b)).exp()];
        fn b_f64(b: f64) -> f64 {
            b
        }
        assert!(linex.eval(&[2.0], &act(2.0)).unwrap().abs() < 1e-12);
        // z = 1, b = 2: exp(1) - 1 - 1.
        let l = linex.eval(&[1.0], &act(2.0)).unwrap();
        assert_relative_eq!(l, 0.7182818284590451, max_relative = 1e-12);
    }

    #[test]
    fn box_cox_loss_matches_closed_form() {
        let bc = LossSpec::box_cox(2.0).unwrap();
        // (z^2 - b^2)^2 / 4 with z = 3, b = 1: (9 - 1)^2 / 4 = 16.
        let act = Transform::box_cox(2.0).unwrap().apply(&[1.0]).unwrap();
        let l = bc.eval(&[3.0], &act).unwrap();
        assert_relative_eq!(l, 16.0, max_relative = 1e-12);
    }

    #[test]
    fn bayes_act_unweighted_mean() {
        let loss = LossSpec::squared_error();
        let q = DiscreteBelief::uniform_scalars(&[0.0, 2.0]).unwrap();
        let act = loss.bayes_act(&q).unwrap();
        assert_relative_eq!(act.act[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(act.in_space.unwrap()[0], 1.0, max_relative = 1e-14);
    }

    #[test]
    fn bayes_act_exponential_weight() {
        let loss = LossSpec::weighted_squared_error(WeightFn::exp_pos(1.0).unwrap());
        let q = DiscreteBelief::uniform_scalars(&[0.0, 1.0]).unwrap();
        let act = loss.bayes_act(&q).unwrap();
        // e / (1 + e)
        assert_relative_eq!(act.act[0], 0.7310585786300049, max_relative = 1e-12);
    }

    #[test]
    fn bayes_act_linex_in_space() {
        let loss = LossSpec::linex(1.0).unwrap();
        let q = DiscreteBelief::uniform_scalars(&[0.0, 1.0]).unwrap();
        let act = loss.bayes_act(&q).unwrap();
        assert_relative_eq!(act.act[0], 0.6839397205857212, max_relative = 1e-12);
        let b = act.in_space.unwrap()[0];
        assert_relative_eq!(b, 0.3798854930417225, max_relative = 1e-12);
        // The in-space act must also minimise over a dense grid of b.
        let grid: Vec<f64> = (0..20001).map(|i| -1.0 + 2.0 * i as f64 / 20000.0).collect();
        let mut best = (f64::INFINITY, 0.0);
        for &bb in &grid {
            let e = expected_loss(&loss, &q, &[(-bb).exp()]);
            if e < best.0 {
                best = (e, bb);
            }
        }
        assert!((best.1 - b).abs() < 2e-4);
    }

    #[test]
    fn generalised_entropy_examples() {
        // Point mass: zero for every loss family.
        let point = DiscreteBelief::from_scalars(&[1.3], &[1.0]).unwrap();
        assert!(LossSpec::squared_error()
            .generalised_entropy(&point)
            .unwrap()
            .abs()
            < 1e-14);
        assert!(LossSpec::linex(1.0)
            .unwrap()
            .generalised_entropy(&point)
            .unwrap()
            .abs()
            < 1e-12);

        // Quadratic entropy is the variance.
        let q = DiscreteBelief::uniform_scalars(&[0.0, 2.0]).unwrap();
        let h = LossSpec::squared_error().generalised_entropy(&q).unwrap();
        assert_relative_eq!(h, 1.0, max_relative = 1e-14);

        // Log-loss entropy is Shannon entropy.
        let q = DiscreteBelief::uniform_scalars(&[0.0, 1.0]).unwrap();
        let h = LossSpec::log_loss(2).unwrap().generalised_entropy(&q).unwrap();
        assert_relative_eq!(h, std::f64::consts::LN_2, epsilon = 1e-9);
    }

    #[test]
    fn shannon_special_case_tracks_entropy_formula() {
        // NegEntropy + OneHot + constant weight against -sum p log p on
        // random beliefs.
        let mut rng = crate::rng::stream(11, &[0]);
        for k in 2..=5usize {
            let loss = LossSpec::log_loss(k).unwrap();
            for _ in 0..40 {
                let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                let probs: Vec<f64> = raw.iter().map(|x| x / s).collect();
                let states: Vec<f64> = (0..k).map(|i| i as f64).collect();
                let q = DiscreteBelief::from_scalars(&states, &probs).unwrap();
                let h = loss.generalised_entropy(&q).unwrap();
                let shannon: f64 = -probs.iter().map(|&p| p * p.ln()).sum::<f64>();
                assert_relative_eq!(h, shannon, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn entropy_matches_grid_minimisation() {
        let mut rng = crate::rng::stream(17, &[1]);
        for trial in 0..30 {
            let n = rng.random_range(2..=8);
            let zs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let q = DiscreteBelief::from_scalars(&zs, &probs).unwrap();

            let weight = match trial % 3 {
                0 => WeightFn::Constant,
                1 => WeightFn::exp_pos(0.7).unwrap(),
                _ => WeightFn::exp_neg(0.5).unwrap(),
            };
            let loss = LossSpec::weighted_squared_error(weight);
            let h = loss.generalised_entropy(&q).unwrap();
            let lo = zs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let (gmin, _) = grid_min_expected_loss(&loss, &q, lo, hi, 400_000);
            assert!(
                (gmin - h).abs() < 1e-5,
                "grid {gmin} vs closed form {h} on trial {trial}"
            );
            assert!(gmin >= h - 1e-9, "closed form above the grid minimum");
        }
    }

    #[test]
    fn bayes_act_never_beaten_on_grid() {
        let mut rng = crate::rng::stream(23, &[2]);
        for _ in 0..20 {
            let n = rng.random_range(2..=6);
            let zs: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
            let q = DiscreteBelief::uniform_scalars(&zs).unwrap();
            let loss = LossSpec::linex(1.0).unwrap();
            let star = loss.bayes_act(&q).unwrap().act;
            let e_star = expected_loss(&loss, &q, &star);
            let umin = zs.iter().map(|&z| (-z).exp()).fold(f64::INFINITY, f64::min);
            let umax = zs.iter().map(|&z| (-z).exp()).fold(f64::NEG_INFINITY, f64::max);
            for i in 0..=50_000 {
                let a = umin + (umax - umin) * i as f64 / 50_000.0;
                assert!(expected_loss(&loss, &q, &[a]) >= e_star - 1e-9);
            }
        }
    }

    #[test]
    fn scale_covariance_of_weight() {
        // Replacing w by c*w scales the entropy by exactly c and leaves the
        // act unchanged.
        let q = DiscreteBelief::from_scalars(&[0.0, 1.0, 2.0], &[0.2, 0.5, 0.3]).unwrap();
        let c = 7.25;
        let base = LossSpec::weighted_squared_error(WeightFn::custom(|z| (0.8 * z).exp()));
        let scaled =
            LossSpec::weighted_squared_error(WeightFn::custom(move |z| c * (0.8 * z).exp()));
        let h1 = base.generalised_entropy(&q).unwrap();
        let h2 = scaled.generalised_entropy(&q).unwrap();
        assert_relative_eq!(h2, c * h1, max_relative = 1e-12);
        let a1 = base.bayes_act(&q).unwrap().act;
        let a2 = scaled.bayes_act(&q).unwrap().act;
        assert_relative_eq!(a1[0], a2[0], max_relative = 1e-12);
    }

    #[test]
    fn class_weight_reweighting() {
        let loss = LossSpec::weighted_log_loss(vec![50.0, 1.0]).unwrap();
        let q = DiscreteBelief::uniform_scalars(&[0.0, 1.0]).unwrap();
        let (w_bar, q_w) = q.reweighted(&loss.weight).unwrap();
        assert_relative_eq!(w_bar, 25.5, max_relative = 1e-14);
        assert_relative_eq!(q_w[0], 50.0 / 51.0, max_relative = 1e-14);
        assert_relative_eq!(q_w[1], 1.0 / 51.0, max_relative = 1e-14);
    }

    #[test]
    fn extreme_exponential_weight_stays_finite() {
        // log-sum-exp path: naive weighting of exp(600) magnitudes loses the
        // normaliser, the shifted path does not.
        let q = DiscreteBelief::uniform_scalars(&[600.0, 601.0]).unwrap();
        let loss = LossSpec::weighted_squared_error(WeightFn::exp_pos(1.0).unwrap());
        let act = loss.bayes_act(&q).unwrap();
        assert!(act.act[0].is_finite());
        assert_relative_eq!(act.act[0], 600.0 + 0.7310585786300049, max_relative = 1e-9);

        // Past exp(709) the total mass genuinely overflows f64: the act is
        // still finite but the entropy must surface an error, not infinity.
        let q = DiscreteBelief::uniform_scalars(&[800.0, 801.0]).unwrap();
        let act = loss.bayes_act(&q).unwrap();
        assert_relative_eq!(act.act[0], 800.0 + 0.7310585786300049, max_relative = 1e-9);
        assert!(loss.generalised_entropy(&q).is_err());
    }

    #[test]
    fn degenerate_weight_errors() {
        let q = DiscreteBelief::uniform_scalars(&[0.0, 1.0]).unwrap();
        let loss = LossSpec::weighted_squared_error(WeightFn::custom(|_| 0.0));
        assert!(loss.bayes_act(&q).is_err());
        let neg = LossSpec::weighted_squared_error(WeightFn::custom(|_| -1.0));
        assert!(neg.generalised_entropy(&q).is_err());
    }

    #[test]
    fn decomposition_examples() {
        // Identical beliefs: estimation error is zero.
        let q = DiscreteBelief::from_scalars(&[0.0, 1.0, 3.0], &[0.3, 0.4, 0.3]).unwrap();
        let d = eval_discrepancy_decomposition(Potential::Quadratic, &q, &q).unwrap();
        assert!(d.estimation.abs() < 1e-14);
        assert_relative_eq!(d.total, d.irreducible, max_relative = 1e-12);

        // Model at 0, eval uniform on {0, 2}: total 2 = estimation 1 + spread 1.
        let p_model = DiscreteBelief::from_scalars(&[0.0, 2.0], &[1.0, 0.0]).unwrap();
        let p_eval = DiscreteBelief::uniform_scalars(&[0.0, 2.0]).unwrap();
        let d = eval_discrepancy_decomposition(Potential::Quadratic, &p_model, &p_eval).unwrap();
        assert_relative_eq!(d.total, 2.0, max_relative = 1e-12);
        assert_relative_eq!(d.estimation, 1.0, max_relative = 1e-12);
        assert_relative_eq!(d.irreducible, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn decomposition_identity_on_simplex() {
        let mut rng = crate::rng::stream(31, &[3]);
        for _ in 0..50 {
            let k = rng.random_range(2..=4);
            let n = rng.random_range(2..=6);
            let states: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    raw.iter().map(|x| x / s).collect()
                })
                .collect();
            let mk_probs = |rng: &mut rand_chacha::ChaCha8Rng| {
                let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|x| x / s).collect::<Vec<f64>>()
            };
            let p_model = DiscreteBelief::new(states.clone(), mk_probs(&mut rng)).unwrap();
            let p_eval = DiscreteBelief::new(states, mk_probs(&mut rng)).unwrap();
            let d =
                eval_discrepancy_decomposition(Potential::NegEntropy, &p_model, &p_eval).unwrap();
            assert!(
                (d.total - d.estimation - d.irreducible).abs() < 1e-10,
                "pythagorean identity violated: {d:?}"
            );
        }
    }

    #[test]
    fn transform_validation() {
        assert!(Transform::box_cox(0.0).is_err());
        assert!(Transform::neg_exp(0.0).is_err());
        assert!(Transform::neg_exp(-1.0).is_err());
        assert!(WeightFn::class_weights(vec![1.0, -2.0]).is_err());
        assert!(WeightFn::class_weights(vec![]).is_err());
        let oh = Transform::one_hot(3).unwrap();
        assert_eq!(oh.apply(&[1.0]).unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(oh.apply(&[3.0]).is_err());
        assert!(oh.apply(&[0.5]).is_err());
        assert!(oh.invert(&[0.2, 0.5, 0.3]).is_err());
    }

    #[test]
    fn belief_validation() {
        assert!(DiscreteBelief::from_scalars(&[0.0, 1.0], &[0.6, 0.39]).is_err());
        assert!(DiscreteBelief::from_scalars(&[0.0], &[-0.2]).is_err());
        assert!(DiscreteBelief::from_scalars(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn divergence_nonnegative_quadratic(
            u in proptest::collection::vec(-50.0..50.0f64, 1..4),
            v in proptest::collection::vec(-50.0..50.0f64, 1..4),
        ) {
            prop_assume!(u.len() == v.len());
            let d = bregman_divergence(Potential::Quadratic, &u, &v).unwrap();
            prop_assert!(d >= 0.0);
        }

        #[test]
        fn divergence_nonnegative_neg_log(
            u in proptest::collection::vec(0.01..20.0f64, 1..4),
            v in proptest::collection::vec(0.01..20.0f64, 1..4),
        ) {
            prop_assume!(u.len() == v.len());
            let d = bregman_divergence(Potential::NegLog, &u, &v).unwrap();
            prop_assert!(d >= 0.0);
            if u.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-12) {
                prop_assert!(d.abs() < 1e-10);
            }
        }

        #[test]
        fn gradient_matches_finite_differences(
            u in proptest::collection::vec(0.05..5.0f64, 2..4),
            phi_idx in 0..3usize,
        ) {
            let phi = [Potential::Quadratic, Potential::NegLog, Potential::NegEntropy][phi_idx];
            let point = if phi == Potential::NegEntropy {
                let s: f64 = u.iter().sum();
                u.iter().map(|x| x / s).collect::<Vec<_>>()
            } else {
                u.clone()
            };
            // Central differences along unnormalised coordinates only make
            // sense off the simplex, so NegEntropy is checked through the
            // one-dimensional restriction p -> (p, 1-p, rest fixed).
            if phi == Potential::NegEntropy {
                let g = phi.gradient(&point).unwrap();
                let eps = 1e-6;
                let mut up = point.clone();
                let mut dn = point.clone();
                up[0] += eps; up[1] -= eps;
                dn[0] -= eps; dn[1] += eps;
                prop_assume!(up.iter().all(|&x| x > 1e-4) && dn.iter().all(|&x| x > 1e-4));
                let fd = (phi.value(&up).unwrap() - phi.value(&dn).unwrap()) / (2.0 * eps);
                prop_assert!(((g[0] - g[1]) - fd).abs() < 1e-5);
            } else {
                let g = phi.gradient(&point).unwrap();
                for i in 0..point.len() {
                    let eps = 1e-6 * point[i].abs().max(1.0);
                    let mut up = point.clone();
                    let mut dn = point.clone();
                    up[i] += eps;
                    dn[i] -= eps;
                    let fd = (phi.value(&up).unwrap() - phi.value(&dn).unwrap()) / (2.0 * eps);
                    prop_assert!((g[i] - fd).abs() / g[i].abs().max(1.0) < 1e-5);
                }
            }
        }

        #[test]
        fn strict_convexity_on_segments(
            a in 0.1..5.0f64,
            b in 0.1..5.0f64,
            t in 0.05..0.95f64,
            phi_idx in 0..2usize,
        ) {
            prop_assume!((a - b).abs() > 1e-3);
            let phi = [Potential::Quadratic, Potential::NegLog][phi_idx];
            let mid = t * a + (1.0 - t) * b;
            let lhs = phi.value(&[mid]).unwrap();
            let rhs = t * phi.value(&[a]).unwrap() + (1.0 - t) * phi.value(&[b]).unwrap();
            prop_assert!(lhs < rhs);
        }

        #[test]
        fn entropy_nonnegative_for_random_beliefs(
            zs in proptest::collection::vec(-3.0..3.0f64, 2..6),
            tilt in -1.0..1.0f64,
        ) {
            let q = DiscreteBelief::uniform_scalars(&zs).unwrap();
            let weight = if tilt.abs() < 0.05 {
                WeightFn::Constant
            } else if tilt > 0.0 {
                WeightFn::exp_pos(tilt).unwrap()
            } else {
                WeightFn::exp_neg(-tilt).unwrap()
            };
            let h = LossSpec::weighted_squared_error(weight).generalised_entropy(&q).unwrap();
            prop_assert!(h >= 0.0);
        }
    }
}
