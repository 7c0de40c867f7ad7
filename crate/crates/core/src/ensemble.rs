//! Random forests as approximate posteriors.
//!
//! Each tree is trained on a bootstrap resample with per-split feature
//! subsampling, so the member trees play the role of posterior parameter
//! samples: `member_probs` exposes one class distribution per tree and the
//! predictive is their plain average. Leaves carry Laplace-smoothed counts,
//! keeping every member probability strictly inside (0, 1), which the
//! information-based scorers rely on.

use rand::Rng;

use crate::rng;
use crate::{Error, Result};

/// Anything that yields per-member class probabilities; implemented by
/// [`TreeEnsemble`] and by synthetic posteriors in tests.
pub trait MemberPredictor {
    fn n_members(&self) -> usize;
    fn n_classes(&self) -> usize;
    /// Class probabilities per member, `n_members x n_classes`, each row on
    /// the simplex.
    fn member_probs(&self, x: &[f64]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        probs: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Clone, Debug)]
struct DecisionTree {
    root: Node,
    in_bag: Vec<bool>,
}

impl DecisionTree {
    fn probs<'a>(&'a self, x: &[f64]) -> &'a [f64] {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { probs } => return probs,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }
}

/// Training knobs; everything else (unbounded depth, min leaf of one,
/// sqrt(D) features per split, +1 leaf smoothing) is fixed.
#[derive(Clone, Copy, Debug)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            seed: 0,
        }
    }
}

/// A trained forest over `n_classes` labels.
#[derive(Clone, Debug)]
pub struct TreeEnsemble {
    trees: Vec<DecisionTree>,
    n_classes: usize,
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    n_sub: usize,
}

impl TreeBuilder<'_> {
    fn leaf(&self, idx: &[usize]) -> Node {
        let mut counts = vec![0usize; self.n_classes];
        for &i in idx {
            counts[self.y[i]] += 1;
        }
        let denom = (idx.len() + self.n_classes) as f64;
        Node::Leaf {
            probs: counts.iter().map(|&c| (c + 1) as f64 / denom).collect(),
        }
    }

    fn gini(counts: &[usize], total: usize) -> f64 {
        if total == 0 {
            return 0.0;
        }
        let t = total as f64;
        1.0 - counts
            .iter()
            .map(|&c| {
                let p = c as f64 / t;
                p * p
            })
            .sum::<f64>()
    }

    /// Best (threshold, weighted Gini) for one feature, or None if the
    /// feature is constant on the node.
    fn best_threshold(&self, idx: &[usize], feature: usize) -> Option<(f64, f64)> {
        let mut pairs: Vec<(f64, usize)> =
            idx.iter().map(|&i| (self.x[i][feature], self.y[i])).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let n = pairs.len();
        let mut right = vec![0usize; self.n_classes];
        for &(_, c) in &pairs {
            right[c] += 1;
        }
        let mut left = vec![0usize; self.n_classes];
        let mut best: Option<(f64, f64)> = None;
        for i in 0..n - 1 {
            left[pairs[i].1] += 1;
            right[pairs[i].1] -= 1;
            if pairs[i].0 == pairs[i + 1].0 {
                continue;
            }
            let nl = i + 1;
            let nr = n - nl;
            let score = (nl as f64 * Self::gini(&left, nl)
                + nr as f64 * Self::gini(&right, nr))
                / n as f64;
            let thr = 0.5 * (pairs[i].0 + pairs[i + 1].0);
            if best.map_or(true, |(_, s)| score < s) {
                best = Some((thr, score));
            }
        }
        best
    }

    fn build(&self, idx: Vec<usize>, rng: &mut rand_chacha::ChaCha8Rng) -> Node {
        let first = self.y[idx[0]];
        if idx.iter().all(|&i| self.y[i] == first) {
            return self.leaf(&idx);
        }
        let d = self.x[0].len();
        // Partial Fisher-Yates draw of the feature subset.
        let mut order: Vec<usize> = (0..d).collect();
        for i in 0..self.n_sub.min(d) {
            let j = rng.random_range(i..d);
            order.swap(i, j);
        }
        let mut chosen: Option<(usize, f64, f64)> = None;
        for &f in order.iter().take(self.n_sub.min(d)) {
            if let Some((thr, score)) = self.best_threshold(&idx, f) {
                if chosen.map_or(true, |(_, _, s)| score < s) {
                    chosen = Some((f, thr, score));
                }
            }
        }
        if chosen.is_none() {
            // Sampled features were constant here; fall back to scanning all
            // features so splittable nodes never stall.
            for f in 0..d {
                if let Some((thr, score)) = self.best_threshold(&idx, f) {
                    if chosen.map_or(true, |(_, _, s)| score < s) {
                        chosen = Some((f, thr, score));
                    }
                }
            }
        }
        let Some((feature, threshold, _)) = chosen else {
            return self.leaf(&idx); // all features constant, mixed labels
        };
        let (li, ri): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| self.x[i][feature] <= threshold);
        Node::Split {
            feature,
            threshold,
            left: Box::new(self.build(li, rng)),
            right: Box::new(self.build(ri, rng)),
        }
    }
}

/// Trains a forest; tree `t` draws its bootstrap and split features from a
/// stream derived from `(config.seed, t)`, so results are independent of
/// training order.
pub fn train_ensemble(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    config: &ForestConfig,
) -> Result<TreeEnsemble> {
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(Error::InsufficientData(format!(
            "training needs matched nonempty rows, got {} and {}",
            n,
            y.len()
        )));
    }
    if n_classes < 2 {
        return Err(Error::InvalidParameter("need at least 2 classes".into()));
    }
    if y.iter().any(|&c| c >= n_classes) {
        return Err(Error::InvalidParameter("label outside class range".into()));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("inconsistent feature dimensions".into()));
    }
    if config.n_trees == 0 {
        return Err(Error::InvalidParameter("need at least one tree".into()));
    }
    let builder = TreeBuilder {
        x,
        y,
        n_classes,
        n_sub: ((d as f64).sqrt().floor() as usize).max(1),
    };
    let trees = (0..config.n_trees)
        .map(|t| {
            let mut rng = rng::stream(config.seed, &[t as u64]);
            let mut in_bag = vec![false; n];
            let idx: Vec<usize> = (0..n)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    in_bag[i] = true;
                    i
                })
                .collect();
            DecisionTree {
                root: builder.build(idx, &mut rng),
                in_bag,
            }
        })
        .collect();
    Ok(TreeEnsemble { trees, n_classes })
}

impl TreeEnsemble {
    /// Posterior predictive: the plain average of member distributions.
    pub fn posterior_predictive(&self, x: &[f64]) -> Result<Vec<f64>> {
        let members = self.member_probs(x)?;
        let mut mean = vec![0.0; self.n_classes];
        for row in &members {
            for (m, p) in mean.iter_mut().zip(row) {
                *m += p;
            }
        }
        for m in &mut mean {
            *m /= members.len() as f64;
        }
        Ok(mean)
    }

    /// Predictive reweighted by per-class importance.
    pub fn weighted_predictive(&self, x: &[f64], class_weights: &[f64]) -> Result<Vec<f64>> {
        weighted_class_probs(&self.posterior_predictive(x)?, class_weights)
    }

    /// Accuracy of out-of-bag votes; samples that every tree bagged are
    /// skipped.
    pub fn oob_accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> Result<f64> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::Shape("oob needs matched nonempty rows".into()));
        }
        let mut hits = 0usize;
        let mut total = 0usize;
        for (i, (xi, &yi)) in x.iter().zip(y).enumerate() {
            let mut agg = vec![0.0; self.n_classes];
            let mut any = false;
            for tree in &self.trees {
                if i < tree.in_bag.len() && !tree.in_bag[i] {
                    for (a, p) in agg.iter_mut().zip(tree.probs(xi)) {
                        *a += p;
                    }
                    any = true;
                }
            }
            if !any {
                continue;
            }
            let pred = agg
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            total += 1;
            if pred == yi {
                hits += 1;
            }
        }
        if total == 0 {
            return Err(Error::InsufficientData("no out-of-bag sample".into()));
        }
        Ok(hits as f64 / total as f64)
    }
}

impl MemberPredictor for TreeEnsemble {
    fn n_members(&self) -> usize {
        self.trees.len()
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn member_probs(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if self.trees.is_empty() {
            return Err(Error::InsufficientData("ensemble has no members".into()));
        }
        Ok(self.trees.iter().map(|t| t.probs(x).to_vec()).collect())
    }
}

/// `w_c p_c / sum_k w_k p_k`; the class-conditional reweighting used by the
/// weighted predictive and the weighted information gain.
pub fn weighted_class_probs(probs: &[f64], class_weights: &[f64]) -> Result<Vec<f64>> {
    if probs.len() != class_weights.len() {
        return Err(Error::Shape(format!(
            "got {} probabilities and {} class weights",
            probs.len(),
            class_weights.len()
        )));
    }
    if class_weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidParameter(
            "class weights must be strictly positive".into(),
        ));
    }
    let raw: Vec<f64> = probs.iter().zip(class_weights).map(|(p, w)| p * w).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateBelief(
            "weighted class mass is zero".into(),
        ));
    }
    Ok(raw.iter().map(|r| r / total).collect())
}
