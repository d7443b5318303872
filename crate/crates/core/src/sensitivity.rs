//! Per-sample weight sensitivities via forgetful online learning.
//!
//! For each selected training sample x_i, the parent model is fine-tuned
//! on a small "focus set" built around x_i and the resulting parameter
//! vector is recorded as one row. Reset mode restores the parent before
//! every episode (rows are independent and collection parallelizes);
//! sequential mode carries the fine-tuned state forward through the
//! episodes in key order (strictly serial).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read as _, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::net::{train, ModelState, OptimizerKind, ParameterVector, TrainConfig};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMode {
    Reset,
    Sequential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocusSetConfig {
    /// Copies of the focal sample; with `regularize` also the number of
    /// other training points drawn alongside them.
    pub n: usize,
    /// Mix in `n` random other training points so the fine-tune stays
    /// anchored to the full training distribution.
    pub regularize: bool,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    /// Mini-batch size for fine-tuning; 0 means the whole focus set.
    pub finetune_batch: usize,
    pub seed: u64,
}

impl Default for FocusSetConfig {
    fn default() -> Self {
        FocusSetConfig {
            n: 200,
            regularize: true,
            finetune_epochs: 1,
            finetune_lr: 2e-2,
            finetune_batch: 1,
            seed: 0,
        }
    }
}

impl FocusSetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("focus set needs n >= 1".into()));
        }
        if !(self.finetune_lr.is_finite() && self.finetune_lr >= 0.0) {
            return Err(Error::Config("finetune_lr must be non-negative".into()));
        }
        Ok(())
    }
}

/// Training view used by episode collection: prepared model inputs and
/// targets plus the per-sample ordering keys, all parallel slices.
#[derive(Clone, Copy)]
pub struct TrainSet<'a> {
    pub inputs: &'a [Vec<f64>],
    pub targets: &'a [Vec<f64>],
    pub keys: &'a [f64],
}

impl<'a> TrainSet<'a> {
    pub fn new(inputs: &'a [Vec<f64>], targets: &'a [Vec<f64>], keys: &'a [f64]) -> Result<Self> {
        if inputs.len() != targets.len() || inputs.len() != keys.len() {
            return Err(Error::Dimension(format!(
                "train set slices disagree: {} inputs, {} targets, {} keys",
                inputs.len(),
                targets.len(),
                keys.len()
            )));
        }
        Ok(TrainSet { inputs, targets, keys })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedEpisode {
    pub index: usize,
    pub key: f64,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMatrix {
    pub mode: SensitivityMode,
    /// Rows hold anomalies (value - baseline) instead of totals.
    pub store_anomalies: bool,
    /// Index of each episode's focal sample in the source training set.
    pub episode_indices: Vec<usize>,
    pub episode_keys: Vec<f64>,
    /// episodes x K parameter values (or anomalies).
    pub rows: Vec<Vec<f64>>,
    /// Parent parameters the episodes started from.
    pub baseline: ParameterVector,
    /// Episodes dropped because fine-tuning failed (reset mode only).
    pub failed: Vec<FailedEpisode>,
}

impl SensitivityMatrix {
    pub fn n_episodes(&self) -> usize {
        self.rows.len()
    }

    pub fn param_count(&self) -> usize {
        self.baseline.len()
    }

    /// Episode row as total parameter values, whatever the storage mode.
    pub fn total_row(&self, i: usize) -> Vec<f64> {
        if self.store_anomalies {
            self.rows[i]
                .iter()
                .zip(&self.baseline.values)
                .map(|(d, b)| d + b)
                .collect()
        } else {
            self.rows[i].clone()
        }
    }

    /// Episode row as anomalies from the baseline.
    pub fn anomaly_row(&self, i: usize) -> Vec<f64> {
        if self.store_anomalies {
            self.rows[i].clone()
        } else {
            self.rows[i]
                .iter()
                .zip(&self.baseline.values)
                .map(|(w, b)| w - b)
                .collect()
        }
    }

    /// Column of total values for one parameter across episodes.
    pub fn total_column(&self, k: usize) -> Vec<f64> {
        let base = self.baseline.values[k];
        self.rows
            .iter()
            .map(|r| if self.store_anomalies { r[k] + base } else { r[k] })
            .collect()
    }

    /// Column of anomalies from baseline for one parameter.
    pub fn anomaly_column(&self, k: usize) -> Vec<f64> {
        let base = self.baseline.values[k];
        self.rows
            .iter()
            .map(|r| if self.store_anomalies { r[k] } else { r[k] - base })
            .collect()
    }

    /// Switch the storage representation (exact elementwise conversion).
    pub fn with_anomaly_storage(mut self, store_anomalies: bool) -> Self {
        if self.store_anomalies == store_anomalies {
            return self;
        }
        for row in &mut self.rows {
            for (v, b) in row.iter_mut().zip(&self.baseline.values) {
                *v = if store_anomalies { *v - b } else { *v + b };
            }
        }
        self.store_anomalies = store_anomalies;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.param_count();
        if self.episode_indices.len() != self.rows.len()
            || self.episode_keys.len() != self.rows.len()
        {
            return Err(Error::Dimension(
                "episode metadata length differs from row count".into(),
            ));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Dimension(format!(
                    "row {i} has {} values for {k} parameters",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("sensitivity row {i}")));
            }
        }
        Ok(())
    }
}

/// Assemble the focus set for episode `i`: `cfg.n` copies of sample `i`,
/// plus (when `regularize`) `cfg.n` distinct other training points drawn
/// uniformly (with replacement, and a warning, only when the pool is too
/// small). Deterministic per (seed, i).
pub fn build_focus_set(
    train: &TrainSet,
    i: usize,
    cfg: &FocusSetConfig,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    cfg.validate()?;
    if i >= train.len() {
        return Err(Error::Config(format!(
            "episode index {i} out of range for {} samples",
            train.len()
        )));
    }
    let mut inputs = Vec::with_capacity(if cfg.regularize { 2 * cfg.n } else { cfg.n });
    let mut targets = Vec::with_capacity(inputs.capacity());
    for _ in 0..cfg.n {
        inputs.push(train.inputs[i].clone());
        targets.push(train.targets[i].clone());
    }
    if cfg.regularize {
        let pool: Vec<usize> = (0..train.len()).filter(|&j| j != i).collect();
        let mut rng = rng::rng_from_seed(rng::derive2(cfg.seed, 0, i as u64));
        if pool.is_empty() {
            return Err(Error::Config(
                "regularized focus set needs at least 2 training samples".into(),
            ));
        }
        let picks: Vec<usize> = if pool.len() >= cfg.n {
            // distinct draws: partial Fisher-Yates over the pool
            let mut pool = pool;
            for d in 0..cfg.n {
                let j = d + uniform_index(&mut rng, pool.len() - d);
                pool.swap(d, j);
            }
            pool.truncate(cfg.n);
            pool
        } else {
            log::warn!(
                "focus set wants {} distinct regularizers but only {} candidates exist; \
                 sampling with replacement",
                cfg.n,
                pool.len()
            );
            (0..cfg.n).map(|_| pool[uniform_index(&mut rng, pool.len())]).collect()
        };
        for j in picks {
            inputs.push(train.inputs[j].clone());
            targets.push(train.targets[j].clone());
        }
    }
    Ok((inputs, targets))
}

fn uniform_index(rng: &mut impl rand::RngCore, n: usize) -> usize {
    debug_assert!(n > 0);
    let n = n as u64;
    let zone = u64::MAX - (u64::MAX % n);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return (x % n) as usize;
        }
    }
}

/// One fine-tuning episode: clone `start`, train it on the focus set of
/// sample `i` with SGD at the configured step size, return the tuned
/// model. `start` is untouched.
pub fn run_episode(
    start: &ModelState,
    train_set: &TrainSet,
    i: usize,
    cfg: &FocusSetConfig,
) -> Result<ModelState> {
    let (inputs, targets) = build_focus_set(train_set, i, cfg)?;
    if cfg.finetune_lr == 0.0 || cfg.finetune_epochs == 0 {
        return Ok(start.clone());
    }
    let tc = TrainConfig {
        epochs: cfg.finetune_epochs,
        batch_size: if cfg.finetune_batch == 0 { inputs.len() } else { cfg.finetune_batch },
        learning_rate: cfg.finetune_lr,
        optimizer: OptimizerKind::Sgd,
        shuffle: true,
        shuffle_seed: rng::derive2(cfg.seed, 1, i as u64),
        divergence_limit: 1e12,
        context: format!("fine-tuning episode {i}"),
    };
    let (tuned, _) = train(start, &inputs, &targets, &tc)?;
    Ok(tuned)
}

/// Reset-mode collection: every episode starts from `parent`. Episodes
/// whose fine-tuning diverges are dropped and reported in `failed`.
/// Parallel across episodes; row order follows `episode_indices`.
pub fn collect_reset(
    parent: &ModelState,
    train_set: &TrainSet,
    episode_indices: &[usize],
    cfg: &FocusSetConfig,
    store_anomalies: bool,
) -> Result<SensitivityMatrix> {
    cfg.validate()?;
    if let Some(&bad) = episode_indices.iter().find(|&&i| i >= train_set.len()) {
        return Err(Error::Config(format!(
            "episode index {bad} out of range for {} samples",
            train_set.len()
        )));
    }
    let results: Vec<std::result::Result<ModelState, String>> =
        exec::map_indices(episode_indices.len(), |e| {
            run_episode(parent, train_set, episode_indices[e], cfg)
                .map_err(|err| err.to_string())
        });

    let mut rows = Vec::with_capacity(episode_indices.len());
    let mut keys = Vec::with_capacity(episode_indices.len());
    let mut kept_indices = Vec::with_capacity(episode_indices.len());
    let mut failed = Vec::new();
    for (e, res) in results.into_iter().enumerate() {
        let i = episode_indices[e];
        match res {
            Ok(model) => {
                let row = if store_anomalies {
                    model
                        .params
                        .values
                        .iter()
                        .zip(&parent.params.values)
                        .map(|(w, b)| w - b)
                        .collect()
                } else {
                    model.params.values
                };
                rows.push(row);
                keys.push(train_set.keys[i]);
                kept_indices.push(i);
            }
            Err(message) => {
                log::warn!("episode {i} dropped: {message}");
                failed.push(FailedEpisode { index: i, key: train_set.keys[i], message });
            }
        }
    }

    let matrix = SensitivityMatrix {
        mode: SensitivityMode::Reset,
        store_anomalies,
        episode_indices: kept_indices,
        episode_keys: keys,
        rows,
        baseline: parent.params.clone(),
        failed,
    };
    matrix.validate()?;
    Ok(matrix)
}

/// Sequential-mode collection over every sample of `train_set`, which
/// must be strictly increasing in key. Each episode fine-tunes the
/// previous episode's result; the final model is returned alongside the
/// matrix so callers can check it still performs like the parent.
pub fn collect_sequential(
    parent: &ModelState,
    train_set: &TrainSet,
    cfg: &FocusSetConfig,
    store_anomalies: bool,
) -> Result<(SensitivityMatrix, ModelState)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("sequential collection over an empty set".into()));
    }
    for w in train_set.keys.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::Config(format!(
                "sequential collection needs strictly increasing keys ({} then {})",
                w[0], w[1]
            )));
        }
    }

    let mut current = parent.clone();
    let mut rows = Vec::with_capacity(train_set.len());
    for i in 0..train_set.len() {
        current = run_episode(&current, train_set, i, cfg)?;
        let row = if store_anomalies {
            current
                .params
                .values
                .iter()
                .zip(&parent.params.values)
                .map(|(w, b)| w - b)
                .collect()
        } else {
            current.params.values.clone()
        };
        rows.push(row);
    }

    let matrix = SensitivityMatrix {
        mode: SensitivityMode::Sequential,
        store_anomalies,
        episode_indices: (0..train_set.len()).collect(),
        episode_keys: train_set.keys.to_vec(),
        rows,
        baseline: parent.params.clone(),
        failed: Vec::new(),
    };
    matrix.validate()?;
    Ok((matrix, current))
}

// ---------------------------------------------------------------------
// Persistence: a meta JSON plus a values file. Values go to CSV up to
// `CSV_MAX_ELEMENTS` matrix entries; larger matrices switch to raw
// little-endian f64, row-major, with the layout recorded in the meta.

pub const CSV_MAX_ELEMENTS: usize = 4_000_000;

#[derive(Serialize, Deserialize)]
struct SensitivityMeta {
    format: String,
    mode: SensitivityMode,
    store_anomalies: bool,
    episode_indices: Vec<usize>,
    episode_keys: Vec<f64>,
    baseline: Vec<f64>,
    failed: Vec<FailedEpisode>,
    n_episodes: usize,
    param_count: usize,
    /// "csv" or "f64le-rowmajor"
    values_format: String,
    values_file: String,
}

const META_FORMAT: &str = "weightcast/sensitivity-v1";

/// Write `<base>.json` plus `<base>_values.csv` or `<base>_values.bin`
/// under `dir`; returns the paths written.
pub fn save_sensitivity(dir: &Path, base: &str, m: &SensitivityMatrix) -> Result<Vec<PathBuf>> {
    m.validate()?;
    let elements = m.n_episodes() * m.param_count();
    let (values_format, values_name) = if elements <= CSV_MAX_ELEMENTS {
        ("csv", format!("{base}_values.csv"))
    } else {
        ("f64le-rowmajor", format!("{base}_values.bin"))
    };
    let meta = SensitivityMeta {
        format: META_FORMAT.into(),
        mode: m.mode,
        store_anomalies: m.store_anomalies,
        episode_indices: m.episode_indices.clone(),
        episode_keys: m.episode_keys.clone(),
        baseline: m.baseline.values.clone(),
        failed: m.failed.clone(),
        n_episodes: m.n_episodes(),
        param_count: m.param_count(),
        values_format: values_format.into(),
        values_file: values_name.clone(),
    };
    let meta_path = dir.join(format!("{base}.json"));
    let values_path = dir.join(&values_name);
    {
        let mut w = BufWriter::new(File::create(&meta_path)?);
        serde_json::to_writer_pretty(&mut w, &meta)?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    if values_format == "csv" {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&values_path)?));
        let header: Vec<String> = (0..m.param_count()).map(|k| format!("p{k}")).collect();
        w.write_record(&header)?;
        for row in &m.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
    } else {
        let mut w = BufWriter::new(File::create(&values_path)?);
        for row in &m.rows {
            for v in row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    Ok(vec![meta_path, values_path])
}

pub fn load_sensitivity(dir: &Path, base: &str) -> Result<SensitivityMatrix> {
    let meta_path = dir.join(format!("{base}.json"));
    let meta: SensitivityMeta = serde_json::from_reader(BufReader::new(
        File::open(&meta_path).map_err(|e| Error::Artifact {
            path: meta_path.clone(),
            message: format!("cannot open sensitivity meta: {e}"),
        })?,
    ))?;
    if meta.format != META_FORMAT {
        return Err(Error::Artifact {
            path: meta_path,
            message: format!("unsupported sensitivity format {:?}", meta.format),
        });
    }
    let values_path = dir.join(&meta.values_file);
    let mut rows = Vec::with_capacity(meta.n_episodes);
    match meta.values_format.as_str() {
        "csv" => {
            let mut r = csv::Reader::from_reader(BufReader::new(File::open(&values_path)?));
            for (i, record) in r.records().enumerate() {
                let record = record?;
                let row: Vec<f64> = record
                    .iter()
                    .enumerate()
                    .map(|(k, s)| {
                        s.parse::<f64>().map_err(|e| Error::CsvCell {
                            path: values_path.clone(),
                            row: i + 2,
                            column: format!("p{k}"),
                            message: e.to_string(),
                        })
                    })
                    .collect::<Result<_>>()?;
                rows.push(row);
            }
        }
        "f64le-rowmajor" => {
            let mut buf = Vec::new();
            File::open(&values_path)?.read_to_end(&mut buf)?;
            let expect = meta.n_episodes * meta.param_count * 8;
            if buf.len() != expect {
                return Err(Error::Artifact {
                    path: values_path,
                    message: format!("expected {expect} bytes, found {}", buf.len()),
                });
            }
            for e in 0..meta.n_episodes {
                let row: Vec<f64> = (0..meta.param_count)
                    .map(|k| {
                        let off = (e * meta.param_count + k) * 8;
                        f64::from_le_bytes(buf[off..off + 8].try_into().unwrap())
                    })
                    .collect();
                rows.push(row);
            }
        }
        other => {
            return Err(Error::Artifact {
                path: values_path,
                message: format!("unknown values format {other:?}"),
            })
        }
    }
    let m = SensitivityMatrix {
        mode: meta.mode,
        store_anomalies: meta.store_anomalies,
        episode_indices: meta.episode_indices,
        episode_keys: meta.episode_keys,
        rows,
        baseline: ParameterVector::new(meta.baseline),
        failed: meta.failed,
    };
    m.validate()?;
    Ok(m)
}
