//! Loss-calibrated Bayesian active learning.
//!
//! The crate is organised around one idea: once the downstream loss is a
//! weighted Bregman divergence `w(z) * D_phi(T(z), a)`, the expected loss of
//! the best action under a belief has a closed form (a weighted Jensen gap),
//! and acquisition functions that chase reductions of that quantity can be
//! computed analytically or with cheap one-step posterior updates instead of
//! retraining per candidate.
//!
//! Modules build on each other bottom-up:
//!
//! - [`losses`]: potentials, outcome transforms, weight functions, Bayes
//!   acts, and generalised entropies on discrete beliefs.
//! - [`beliefs`]: weighted summaries of Gaussian beliefs (analytic,
//!   quadrature, Monte Carlo).
//! - [`gp`]: exact Gaussian process regression with one-step posterior
//!   updates and robust plug-in hyperparameters.
//! - [`ensemble`]: random forests whose member trees act as posterior
//!   parameter samples.
//! - [`acquisition`]: variance reduction (plain and weighted) for GPs and
//!   weighted expected information gain for ensembles.
//! - [`datasets`]: synthetic tasks and CSV ingestion with frozen
//!   standardisation and pre-drawn labels.
//! - [`driver`]: the pool-based acquire/update/evaluate loop and its metrics.

pub mod acquisition;
pub mod beliefs;
pub mod datasets;
pub mod driver;
pub mod ensemble;
mod error;
pub mod gp;
pub mod losses;
pub mod rng;

pub use error::{Error, Result};
