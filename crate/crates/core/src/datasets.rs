//! Task construction: synthetic benchmarks, CSV ingestion, feature
//! standardization, and stratified splits.
//!
//! Every noisy label is drawn once, at task construction, from streams
//! derived from the task seed. Acquisition order therefore cannot change
//! label values, which keeps method comparisons paired: all methods run
//! against byte-identical tasks.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::rng;
use crate::{Error, Result};

/// Observation noise variance of the synthetic 1-D benchmark.
pub const SYNTH_NOISE_VAR: f64 = 0.04;

const TAG_POOL_LABELS: u64 = 0;
const TAG_TEST_LABELS: u64 = 1;
const TAG_INITIAL: u64 = 2;
const TAG_BLOB_CLASS: u64 = 3;
const TAG_REG_SPLIT: u64 = 10;
const TAG_CLS_SPLIT: u64 = 11;

/// Pool-based regression task. `initial` indexes into the pool; pool and
/// test labels are pre-drawn.
#[derive(Clone, Debug)]
pub struct RegressionTask {
    pub pool_x: Vec<Vec<f64>>,
    pub pool_y: Vec<f64>,
    pub context_x: Vec<Vec<f64>>,
    pub test_x: Vec<Vec<f64>>,
    pub test_y: Vec<f64>,
    pub initial: Vec<usize>,
    pub seed: u64,
}

/// Pool-based classification task with per-class strata.
#[derive(Clone, Debug)]
pub struct ClassificationTask {
    pub pool_x: Vec<Vec<f64>>,
    pub pool_y: Vec<usize>,
    pub context_x: Vec<Vec<f64>>,
    pub test_x: Vec<Vec<f64>>,
    pub test_y: Vec<usize>,
    pub initial: Vec<usize>,
    pub n_classes: usize,
    pub seed: u64,
}

/// Per-feature affine transform frozen at fit time. Zero-variance columns
/// keep unit scale so the transform stays invertible.
#[derive(Clone, Debug)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Standardizer> {
        if rows.is_empty() {
            return Err(Error::InsufficientData(
                "standardizer needs at least one row".into(),
            ));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("inconsistent feature dimensions".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut scale = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in scale.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut scale {
            *s = (*s / n).sqrt();
            if *s <= 0.0 {
                *s = 1.0;
            }
        }
        Ok(Standardizer { mean, scale })
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn transform_all(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.transform(r)).collect()
    }
}

/// Noiseless target of the synthetic 1-D benchmark: a sine plus two bumps
/// and one dip, each a scaled Gaussian density.
pub fn synth_1d_true(x: f64) -> f64 {
    fn density(x: f64, mu: f64, sd: f64) -> f64 {
        let z = (x - mu) / sd;
        (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
    }
    2.0 * (2.0 * x).sin() + 8.0 * density(x, 2.5, 0.5) + 10.0 * density(x, 7.5, 0.25)
        - 6.0 * density(x, -4.5, 0.5)
}

/// One noisy observation of the synthetic target.
pub fn synth_1d_label(x: f64, rng: &mut ChaCha8Rng) -> f64 {
    synth_1d_true(x) + SYNTH_NOISE_VAR.sqrt() * rng.sample::<f64, _>(StandardNormal)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn sample_without_replacement(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// The synthetic 1-D benchmark: candidate, context, and test grids of 65,
/// 49, and 97 evenly spaced points on [-8, 8]; three initial labels drawn
/// uniformly from the candidate grid.
pub fn synth_1d(seed: u64) -> RegressionTask {
    let pool_x: Vec<Vec<f64>> = linspace(-8.0, 8.0, 65).into_iter().map(|v| vec![v]).collect();
    let context_x: Vec<Vec<f64>> =
        linspace(-8.0, 8.0, 49).into_iter().map(|v| vec![v]).collect();
    let test_x: Vec<Vec<f64>> = linspace(-8.0, 8.0, 97).into_iter().map(|v| vec![v]).collect();

    let mut pool_rng = rng::stream(seed, &[TAG_POOL_LABELS]);
    let pool_y: Vec<f64> = pool_x.iter().map(|x| synth_1d_label(x[0], &mut pool_rng)).collect();
    let mut test_rng = rng::stream(seed, &[TAG_TEST_LABELS]);
    let test_y: Vec<f64> = test_x.iter().map(|x| synth_1d_label(x[0], &mut test_rng)).collect();

    let mut init_rng = rng::stream(seed, &[TAG_INITIAL]);
    let initial = sample_without_replacement(pool_x.len(), 3, &mut init_rng);

    RegressionTask {
        pool_x,
        pool_y,
        context_x,
        test_x,
        test_y,
        initial,
        seed,
    }
}

/// Sizes for the synthetic blob classification task. `per_class` points are
/// generated per class and split into test, context, and pool strata; the
/// initial labelled set takes `initial_per_class` pool points per class.
#[derive(Clone, Copy, Debug)]
pub struct BlobsConfig {
    pub per_class: usize,
    pub test_per_class: usize,
    pub context_per_class: usize,
    pub initial_per_class: usize,
    pub spread: f64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        BlobsConfig {
            per_class: 120,
            test_per_class: 25,
            context_per_class: 15,
            initial_per_class: 5,
            spread: 1.0,
        }
    }
}

/// Four overlapping Gaussian blobs on a 2-D grid of centres, one class per
/// blob, with stratified per-class test/context/initial splits. Classes 0 and
/// 3 occupy the bottom row of the grid and classes 1 and 2 the top row, so the
/// first and last class are horizontal neighbours.
pub fn synth_blobs(seed: u64, config: &BlobsConfig) -> Result<ClassificationTask> {
    const CENTRES: [[f64; 2]; 4] = [[0.0, 0.0], [2.5, 2.5], [0.0, 2.5], [2.5, 0.0]];
    let n_classes = 4usize;
    let reserved = config.test_per_class + config.context_per_class + config.initial_per_class;
    if config.per_class <= reserved {
        return Err(Error::InvalidParameter(format!(
            "per_class {} cannot cover strata of {}",
            config.per_class, reserved
        )));
    }
    if !(config.spread > 0.0) {
        return Err(Error::InvalidParameter("spread must be positive".into()));
    }
    let mut pool_x = Vec::new();
    let mut pool_y = Vec::new();
    let mut context_x = Vec::new();
    let mut test_x = Vec::new();
    let mut test_y = Vec::new();
    let mut initial = Vec::new();
    for class in 0..n_classes {
        let centre = CENTRES[class];
        let mut r = rng::stream(seed, &[TAG_BLOB_CLASS, class as u64]);
        let points: Vec<Vec<f64>> = (0..config.per_class)
            .map(|_| {
                vec![
                    centre[0] + config.spread * r.sample::<f64, _>(StandardNormal),
                    centre[1] + config.spread * r.sample::<f64, _>(StandardNormal),
                ]
            })
            .collect();
        let order = sample_without_replacement(points.len(), points.len(), &mut r);
        let (test_ids, rest) = order.split_at(config.test_per_class);
        let (ctx_ids, pool_ids) = rest.split_at(config.context_per_class);
        for &i in test_ids {
            test_x.push(points[i].clone());
            test_y.push(class);
        }
        for &i in ctx_ids {
            context_x.push(points[i].clone());
        }
        let pool_start = pool_x.len();
        for &i in pool_ids {
            pool_x.push(points[i].clone());
            pool_y.push(class);
        }
        initial.extend(pool_start..pool_start + config.initial_per_class);
    }
    Ok(ClassificationTask {
        pool_x,
        pool_y,
        context_x,
        test_x,
        test_y,
        initial,
        n_classes,
        seed,
    })
}

fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Dataset(format!("row {}: {e}", i + 2)))?;
        if record.len() != headers.len() {
            return Err(Error::Dataset(format!(
                "row {} has {} fields, header has {}",
                i + 2,
                record.len(),
                headers.len()
            )));
        }
        let mut row = Vec::with_capacity(headers.len());
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Dataset(format!(
                    "row {} column {:?}: non-numeric value {:?}",
                    i + 2,
                    headers[j],
                    cell
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Dataset(format!(
                    "row {} column {:?}: non-finite value",
                    i + 2,
                    headers[j]
                )));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Dataset(format!("{}: no data rows", path.display())));
    }
    Ok((headers, rows))
}

fn split_target(
    headers: &[String],
    rows: &[Vec<f64>],
    target_column: &str,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let target = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| {
            Error::Dataset(format!(
                "target column {target_column:?} not found; header has {headers:?}"
            ))
        })?;
    let features: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .filter(|(j, _)| *j != target)
                .map(|(_, &v)| v)
                .collect()
        })
        .collect();
    let labels: Vec<f64> = rows.iter().map(|r| r[target]).collect();
    Ok((features, labels))
}

/// How a tabular regression task is carved out of one CSV file.
#[derive(Clone, Debug)]
pub struct CsvRegressionConfig {
    pub target_column: String,
    pub test_size: usize,
    pub n_contexts: usize,
    /// Use the test inputs as contexts instead of a separate pool draw.
    pub contexts_from_test: bool,
    pub n_initial: usize,
    pub seed: u64,
}

impl CsvRegressionConfig {
    pub fn new(target_column: &str, test_size: usize, n_contexts: usize, seed: u64) -> Self {
        CsvRegressionConfig {
            target_column: target_column.to_string(),
            test_size,
            n_contexts,
            contexts_from_test: false,
            n_initial: 10,
            seed,
        }
    }
}

/// Loads a regression task: uniform test split, the remainder as pool with
/// held-out labels, contexts drawn separately from the pool by default.
/// Features are standardized with a transform fitted on the non-test rows.
pub fn load_csv_regression(path: &Path, config: &CsvRegressionConfig) -> Result<RegressionTask> {
    let (headers, rows) = read_numeric_csv(path)?;
    let (features, labels) = split_target(&headers, &rows, &config.target_column)?;
    let n = features.len();
    if config.test_size == 0 || config.test_size >= n {
        return Err(Error::InvalidParameter(format!(
            "test split of {} from {} rows",
            config.test_size, n
        )));
    }
    let n_pool = n - config.test_size;
    if config.n_initial == 0 || config.n_initial >= n_pool {
        return Err(Error::InvalidParameter(format!(
            "{} initial labels from a pool of {}",
            config.n_initial, n_pool
        )));
    }
    if !config.contexts_from_test && (config.n_contexts == 0 || config.n_contexts > n_pool) {
        return Err(Error::InvalidParameter(format!(
            "{} contexts from a pool of {}",
            config.n_contexts, n_pool
        )));
    }

    let mut r = rng::stream(config.seed, &[TAG_REG_SPLIT]);
    let test_ids = sample_without_replacement(n, config.test_size, &mut r);
    let mut is_test = vec![false; n];
    for &i in &test_ids {
        is_test[i] = true;
    }
    let pool_ids: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();

    let fit_rows: Vec<Vec<f64>> = pool_ids.iter().map(|&i| features[i].clone()).collect();
    let standardizer = Standardizer::fit(&fit_rows)?;

    let pool_x = standardizer.transform_all(&fit_rows);
    let pool_y: Vec<f64> = pool_ids.iter().map(|&i| labels[i]).collect();
    let test_x: Vec<Vec<f64>> = test_ids
        .iter()
        .map(|&i| standardizer.transform(&features[i]))
        .collect();
    let test_y: Vec<f64> = test_ids.iter().map(|&i| labels[i]).collect();
    let context_x = if config.contexts_from_test {
        test_x.clone()
    } else {
        sample_without_replacement(pool_x.len(), config.n_contexts, &mut r)
            .into_iter()
            .map(|i| pool_x[i].clone())
            .collect()
    };
    let initial = sample_without_replacement(pool_x.len(), config.n_initial, &mut r);

    Ok(RegressionTask {
        pool_x,
        pool_y,
        context_x,
        test_x,
        test_y,
        initial,
        seed: config.seed,
    })
}

/// How a tabular classification task is carved out of one CSV file.
#[derive(Clone, Debug)]
pub struct CsvClassificationConfig {
    pub target_column: String,
    pub test_per_class: usize,
    pub context_per_class: usize,
    pub initial_per_class: usize,
    pub seed: u64,
}

impl CsvClassificationConfig {
    pub fn new(
        target_column: &str,
        test_per_class: usize,
        context_per_class: usize,
        seed: u64,
    ) -> Self {
        CsvClassificationConfig {
            target_column: target_column.to_string(),
            test_per_class,
            context_per_class,
            initial_per_class: 5,
            seed,
        }
    }
}

/// Loads a classification task with stratified per-class test and context
/// subsamples; remaining rows form the pool with `initial_per_class` labels
/// revealed per class. Class labels are remapped to `0..K-1` in sorted
/// order of the raw values.
pub fn load_csv_classification(
    path: &Path,
    config: &CsvClassificationConfig,
) -> Result<ClassificationTask> {
    let (headers, rows) = read_numeric_csv(path)?;
    let (features, raw_labels) = split_target(&headers, &rows, &config.target_column)?;
    let mut classes: Vec<i64> = Vec::new();
    let mut labels = Vec::with_capacity(raw_labels.len());
    for (i, &v) in raw_labels.iter().enumerate() {
        if (v - v.round()).abs() > 1e-9 || v < 0.0 {
            return Err(Error::Dataset(format!(
                "row {}: class label {v} is not a nonnegative integer",
                i + 2
            )));
        }
        let c = v.round() as i64;
        if !classes.contains(&c) {
            classes.push(c);
        }
        labels.push(c);
    }
    classes.sort_unstable();
    if classes.len() < 2 {
        return Err(Error::Dataset("need at least two classes".into()));
    }
    let labels: Vec<usize> = labels
        .iter()
        .map(|c| classes.iter().position(|x| x == c).unwrap())
        .collect();
    let n_classes = classes.len();

    let reserved = config.test_per_class + config.context_per_class + config.initial_per_class;
    if config.test_per_class == 0 || config.initial_per_class == 0 {
        return Err(Error::InvalidParameter(
            "test and initial strata must be nonempty".into(),
        ));
    }
    let mut pool_rows: Vec<usize> = Vec::new();
    let mut pool_y: Vec<usize> = Vec::new();
    let mut test_rows: Vec<usize> = Vec::new();
    let mut test_y: Vec<usize> = Vec::new();
    let mut ctx_rows: Vec<usize> = Vec::new();
    let mut initial: Vec<usize> = Vec::new();
    for class in 0..n_classes {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < reserved {
            return Err(Error::Dataset(format!(
                "class {} has {} rows, strata need {}",
                classes[class],
                members.len(),
                reserved
            )));
        }
        let mut r = rng::stream(config.seed, &[TAG_CLS_SPLIT, class as u64]);
        let order = sample_without_replacement(members.len(), members.len(), &mut r);
        let (test_ids, rest) = order.split_at(config.test_per_class);
        let (ctx_ids, pool_ids) = rest.split_at(config.context_per_class);
        for &i in test_ids {
            test_rows.push(members[i]);
            test_y.push(class);
        }
        for &i in ctx_ids {
            ctx_rows.push(members[i]);
        }
        let pool_start = pool_rows.len();
        for &i in pool_ids {
            pool_rows.push(members[i]);
            pool_y.push(class);
        }
        initial.extend(pool_start..pool_start + config.initial_per_class);
    }

    let fit_rows: Vec<Vec<f64>> = pool_rows
        .iter()
        .chain(&ctx_rows)
        .map(|&i| features[i].clone())
        .collect();
    let standardizer = Standardizer::fit(&fit_rows)?;
    let pool_x: Vec<Vec<f64>> = pool_rows
        .iter()
        .map(|&i| standardizer.transform(&features[i]))
        .collect();
    let context_x: Vec<Vec<f64>> = ctx_rows
        .iter()
        .map(|&i| standardizer.transform(&features[i]))
        .collect();
    let test_x: Vec<Vec<f64>> = test_rows
        .iter()
        .map(|&i| standardizer.transform(&features[i]))
        .collect();

    Ok(ClassificationTask {
        pool_x,
        pool_y,
        context_x,
        test_x,
        test_y,
        initial,
        n_classes,
        seed: config.seed,
    })
}
