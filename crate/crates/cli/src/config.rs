//! Declarative experiment configuration: a single TOML file describing the
//! task, model, methods, weighting, and run bookkeeping. Unknown keys are
//! rejected everywhere, and a resolved config serialises back to an
//! equivalent file (written as `config.lock`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use bregal::acquisition::Method;
use bregal::datasets::{
    load_csv_classification, load_csv_regression, synth_1d, synth_blobs, BlobsConfig,
    ClassificationTask, CsvClassificationConfig, CsvRegressionConfig, RegressionTask,
};
use bregal::driver::{round_seeds, EnsembleSpec, EvalConfig, GpModelConfig};
use bregal::gp::{Kernel, MaternNu};
use bregal::losses::WeightFn;

/// Environment variable that overrides the config's `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "BREGAL_OUTPUT_DIR";

fn default_weight() -> WeightSpec {
    WeightSpec::Constant
}

fn default_linex_alpha() -> f64 {
    1.0
}

fn default_y_draws() -> usize {
    64
}

fn default_z_draws() -> usize {
    256
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub model: ModelSpec,
    pub methods: Vec<String>,
    #[serde(default = "default_weight")]
    pub weight: WeightSpec,
    pub rounds: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default = "default_linex_alpha")]
    pub linex_alpha: f64,
    #[serde(default = "default_y_draws")]
    pub mc_y_draws: usize,
    #[serde(default = "default_z_draws")]
    pub mc_z_draws: usize,
    /// Informational section written into `config.lock`; ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived: Option<DerivedSeeds>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskSpec {
    #[serde(rename = "synth-1d")]
    Synth1d,
    SynthBlobs(BlobsSpec),
    CsvRegression(CsvRegressionSpec),
    CsvClassification(CsvClassificationSpec),
}

impl TaskSpec {
    pub fn is_regression(&self) -> bool {
        matches!(self, TaskSpec::Synth1d | TaskSpec::CsvRegression(_))
    }
}

fn d_per_class() -> usize {
    120
}
fn d_test_per_class() -> usize {
    25
}
fn d_context_per_class() -> usize {
    15
}
fn d_initial_per_class() -> usize {
    5
}
fn d_spread() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobsSpec {
    #[serde(default = "d_per_class")]
    pub per_class: usize,
    #[serde(default = "d_test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "d_context_per_class")]
    pub context_per_class: usize,
    #[serde(default = "d_initial_per_class")]
    pub initial_per_class: usize,
    #[serde(default = "d_spread")]
    pub spread: f64,
}

impl BlobsSpec {
    fn to_core(&self) -> BlobsConfig {
        BlobsConfig {
            per_class: self.per_class,
            test_per_class: self.test_per_class,
            context_per_class: self.context_per_class,
            initial_per_class: self.initial_per_class,
            spread: self.spread,
        }
    }
}

fn d_n_initial() -> usize {
    10
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvRegressionSpec {
    pub path: PathBuf,
    pub target_column: String,
    pub test_size: usize,
    pub n_contexts: usize,
    #[serde(default)]
    pub contexts_from_test: bool,
    #[serde(default = "d_n_initial")]
    pub n_initial: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvClassificationSpec {
    pub path: PathBuf,
    pub target_column: String,
    pub test_per_class: usize,
    pub context_per_class: usize,
    #[serde(default = "d_initial_per_class")]
    pub initial_per_class: usize,
}

fn d_n_trees() -> usize {
    100
}
fn d_mean_const() -> f64 {
    0.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelSpec {
    /// Exact GP with plug-in hyperparameter rules recomputed every third
    /// round; `nu` is the Matern smoothness (1.5 or 2.5).
    GpRobust(GpRobustSpec),
    /// Exact GP with a fixed squared-exponential kernel.
    GpFixedRbf(GpFixedRbfSpec),
    /// Bagged decision-tree ensemble for classification.
    Ensemble(EnsembleModelSpec),
}

fn d_nu() -> f64 {
    2.5
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpRobustSpec {
    #[serde(default = "d_nu")]
    pub nu: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpFixedRbfSpec {
    pub lengthscale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
    #[serde(default = "d_mean_const")]
    pub mean_const: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleModelSpec {
    #[serde(default = "d_n_trees")]
    pub n_trees: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightSpec {
    Constant,
    ExpPos(AlphaSpec),
    ExpNeg(AlphaSpec),
    ClassWeights(ClassWeightsSpec),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaSpec {
    pub alpha: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassWeightsSpec {
    pub values: Vec<f64>,
}

impl WeightSpec {
    pub fn to_core(&self) -> WeightFn {
        match self {
            WeightSpec::Constant => WeightFn::Constant,
            WeightSpec::ExpPos(a) => WeightFn::ExpPos(a.alpha),
            WeightSpec::ExpNeg(a) => WeightFn::ExpNeg(a.alpha),
            WeightSpec::ClassWeights(v) => WeightFn::ClassWeights(v.values.clone()),
        }
    }
}

/// Seed streams a run will consume, recorded in the lock file so reruns can
/// be audited without re-deriving them.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivedSeeds {
    pub runs: Vec<DerivedRun>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivedRun {
    pub seed: u64,
    pub method: String,
    /// Model-training stream at round 0 (method-independent), in hex since
    /// derived seeds span the full u64 range and TOML integers do not.
    pub model_seed: String,
    /// Acquisition stream for the first acquisition (round 1), in hex.
    pub acquisition_seed: String,
}

/// A configuration error that should surface as exit code 2; the message
/// names the offending key or value.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl std::error::Error for ConfigError {}

/// Either task flavour, built per seed from the task spec.
pub enum Task {
    Regression(RegressionTask),
    Classification(ClassificationTask),
}

/// A validated configuration: parsed methods, normalised seed/method order,
/// the resolved output directory, and core-layer model settings.
pub struct Resolved {
    pub config: ExperimentConfig,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub weight: WeightFn,
    pub eval: EvalConfig,
    pub gp_model: Option<GpModelConfig>,
    pub ensemble: Option<EnsembleSpec>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    /// Validates the config and normalises it: methods and seeds are sorted
    /// and must be unique, the output dir honours the environment override,
    /// and the `derived` table is recomputed.
    pub fn resolve(mut self) -> Result<Resolved, ConfigError> {
        let mut methods = Vec::new();
        for name in &self.methods {
            let m = Method::parse(name).map_err(|e| ConfigError(format!("methods: {e}")))?;
            methods.push(m);
        }
        if methods.is_empty() {
            return Err(ConfigError("methods: list is empty".into()));
        }
        methods.sort_by_key(|m| m.label());
        methods.dedup();
        if methods.len() != self.methods.len() {
            return Err(ConfigError("methods: duplicate entries".into()));
        }
        let mut seeds = self.seeds.clone();
        if seeds.is_empty() {
            return Err(ConfigError("seeds: list is empty".into()));
        }
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(ConfigError("seeds: duplicate entries".into()));
        }

        let regression = self.task.is_regression();
        for m in &methods {
            let fits = match m {
                Method::Random => true,
                Method::Evr | Method::EvrWeighted => regression,
                Method::Epig | Method::EpigWeighted => !regression,
            };
            if !fits {
                return Err(ConfigError(format!(
                    "methods: `{}` does not apply to a {} task",
                    m.label(),
                    if regression { "regression" } else { "classification" }
                )));
            }
        }

        let mut gp_model = None;
        let mut ensemble = None;
        match (&self.model, regression) {
            (ModelSpec::GpRobust(s), true) => {
                let nu = match s.nu {
                    x if x == 1.5 => MaternNu::ThreeHalves,
                    x if x == 2.5 => MaternNu::FiveHalves,
                    other => {
                        return Err(ConfigError(format!(
                            "model.gp-robust.nu: must be 1.5 or 2.5, got {other}"
                        )))
                    }
                };
                gp_model = Some(GpModelConfig::RobustPlugin { nu });
            }
            (ModelSpec::GpFixedRbf(s), true) => {
                let kernel = Kernel::rbf(s.signal_var, s.lengthscale).map_err(|e| {
                    ConfigError(format!("model.gp-fixed-rbf: {e}"))
                })?;
                if !(s.noise_var > 0.0) {
                    return Err(ConfigError(
                        "model.gp-fixed-rbf.noise_var: must be positive".into(),
                    ));
                }
                gp_model = Some(GpModelConfig::Fixed {
                    kernel,
                    mean_const: s.mean_const,
                    noise_var: s.noise_var,
                });
            }
            (ModelSpec::Ensemble(s), false) => {
                if s.n_trees == 0 {
                    return Err(ConfigError("model.ensemble.n_trees: must be positive".into()));
                }
                ensemble = Some(EnsembleSpec { n_trees: s.n_trees });
            }
            (ModelSpec::Ensemble(_), true) => {
                return Err(ConfigError(
                    "model: ensemble models apply to classification tasks".into(),
                ))
            }
            (_, false) => {
                return Err(ConfigError(
                    "model: GP models apply to regression tasks".into(),
                ))
            }
        }

        match &self.weight {
            WeightSpec::ExpPos(a) | WeightSpec::ExpNeg(a) => {
                if !(a.alpha > 0.0) {
                    return Err(ConfigError("weight.alpha: must be positive".into()));
                }
            }
            WeightSpec::ClassWeights(v) => {
                if v.values.is_empty() || v.values.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
                    return Err(ConfigError(
                        "weight.class-weights.values: need positive finite entries".into(),
                    ));
                }
                if regression {
                    return Err(ConfigError(
                        "weight.class-weights: applies to classification tasks".into(),
                    ));
                }
            }
            WeightSpec::Constant => {}
        }
        if !(self.linex_alpha > 0.0) {
            return Err(ConfigError("linex_alpha: must be positive".into()));
        }
        if self.mc_y_draws == 0 || self.mc_z_draws == 0 {
            return Err(ConfigError("mc_y_draws/mc_z_draws: must be positive".into()));
        }

        let output_dir = match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) => PathBuf::from(dir),
            None => self.output_dir.clone(),
        };

        self.methods = methods.iter().map(|m| m.label().to_string()).collect();
        self.seeds = seeds.clone();
        self.output_dir = output_dir.clone();
        self.derived = Some(DerivedSeeds {
            runs: seeds
                .iter()
                .flat_map(|&seed| {
                    methods.iter().map(move |&m| DerivedRun {
                        seed,
                        method: m.label().to_string(),
                        model_seed: format!("{:#018x}", round_seeds(seed, 0, m).0),
                        acquisition_seed: format!("{:#018x}", round_seeds(seed, 1, m).1),
                    })
                })
                .collect(),
        });

        let weight = self.weight.to_core();
        let eval = EvalConfig {
            weight: weight.clone(),
            linex_alpha: self.linex_alpha,
        };
        Ok(Resolved {
            methods,
            seeds,
            output_dir,
            weight,
            eval,
            gp_model,
            ensemble,
            config: self,
        })
    }
}

impl Resolved {
    /// Builds the task for one master seed. Tasks are pre-drawn, so every
    /// method run on the same seed sees identical splits and labels.
    pub fn build_task(&self, seed: u64) -> Result<Task, ConfigError> {
        match &self.config.task {
            TaskSpec::Synth1d => Ok(Task::Regression(synth_1d(seed))),
            TaskSpec::SynthBlobs(spec) => synth_blobs(seed, &spec.to_core())
                .map(Task::Classification)
                .map_err(|e| ConfigError(format!("task.synth-blobs: {e}"))),
            TaskSpec::CsvRegression(spec) => {
                let cfg = CsvRegressionConfig {
                    target_column: spec.target_column.clone(),
                    test_size: spec.test_size,
                    n_contexts: spec.n_contexts,
                    contexts_from_test: spec.contexts_from_test,
                    n_initial: spec.n_initial,
                    seed,
                };
                load_csv_regression(&spec.path, &cfg)
                    .map(Task::Regression)
                    .map_err(|e| ConfigError(format!("task.csv-regression: {e}")))
            }
            TaskSpec::CsvClassification(spec) => {
                let cfg = CsvClassificationConfig {
                    target_column: spec.target_column.clone(),
                    test_per_class: spec.test_per_class,
                    context_per_class: spec.context_per_class,
                    initial_per_class: spec.initial_per_class,
                    seed,
                };
                load_csv_classification(&spec.path, &cfg)
                    .map(Task::Classification)
                    .map_err(|e| ConfigError(format!("task.csv-classification: {e}")))
            }
        }
    }
}
