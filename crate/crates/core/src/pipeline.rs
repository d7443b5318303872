//! End-to-end orchestration: dataset -> parent -> sensitivities ->
//! regression -> child evaluation, either in memory (`run_once`,
//! `run_ensemble`) or as file-backed stages that communicate only
//! through artifacts in an output directory (`stage_*`, `run_all`).
//!
//! Every stage rewrites `config.resolved.toml` and a per-stage manifest
//! with sha256 checksums of the files it read and wrote, so a finished
//! directory records its own provenance and two runs can be compared
//! byte for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{
    EpisodeSelection, Experiment, PredictorKind, RegressionFamilyKind, RunConfig,
};
use crate::data::{
    eos_meta, gen_tipping, gen_toy_eos, load_csv, split_by_key, stratified_quantile_sample,
    tipping_meta, write_csv, CsvSchema, Dataset, Sample, SplitDirection,
};
use crate::error::{Error, Result};
use crate::eval::{
    apply_models, box_stats, fraction_positive, grouped_rmse, rmse_windows, window_diffs,
    write_box_csv, write_grouped_csv, write_reports_csv, write_series_csv, BoxStats, EvalReport,
    EvalWindow, GroupRmse, PairedSeries, WINDOW_BEYOND_EOT, WINDOW_FIXED_TAIL, WINDOW_WITHIN,
};
use crate::exec;
use crate::net::{
    build_network, load_checkpoint, save_checkpoint, train, Checkpoint, ModelState, NetworkSpec,
    TrainConfig,
};
use crate::predictors::{fit_eof, EofBasis, FeatureMapSpec, PredictorMatrix, Standardizer};
use crate::rng;
use crate::sensitivity::{
    collect_reset, collect_sequential, load_sensitivity, save_sensitivity, SensitivityMatrix,
    SensitivityMode, TrainSet,
};
use crate::weightreg::{
    build_mask, fit_linear, fit_nn_regressor, load_regression, predict_child, save_regression,
    NnRegressorSpec, WeightRegressionModel,
};

// ---------------------------------------------------------------------
// Frontend: everything fitted on the training split that turns a raw
// sample into model inputs and regression predictors. Frozen once and
// reused verbatim by every later stage, so out-of-distribution targets
// are transformed with training-period statistics only.

pub const FRONTEND_FORMAT: &str = "weightcast/frontend-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frontend {
    pub format: String,
    pub kind: PredictorKind,
    /// Orthonormal basis over the input field (EOF mode only).
    pub eof: Option<EofBasis>,
    /// Positions of the selected feature columns (raw mode only).
    pub raw_indices: Vec<usize>,
    pub raw_names: Vec<String>,
    pub input_standardizer: Option<Standardizer>,
    pub target_standardizer: Option<Standardizer>,
    pub eot: f64,
    pub direction: SplitDirection,
}

impl Frontend {
    /// Fit the frontend on the training side of the key split.
    pub fn build(cfg: &RunConfig, ds: &Dataset) -> Result<Self> {
        let (inside, _) = split_by_key(ds, cfg.split.eot, cfg.split.direction);
        if inside.is_empty() {
            return Err(Error::Config(format!(
                "no samples on the training side of the split at {}",
                cfg.split.eot
            )));
        }
        let (eof, raw_indices, raw_names) = match cfg.predictors.kind {
            PredictorKind::Eof => {
                let fields: Vec<Vec<f64>> =
                    inside.samples.iter().map(|s| s.input.clone()).collect();
                (Some(fit_eof(&fields, cfg.predictors.eof_k)?), Vec::new(), Vec::new())
            }
            PredictorKind::Raw => {
                let names: Vec<String> = if cfg.predictors.columns.is_empty() {
                    ds.meta.feature_names.clone()
                } else {
                    cfg.predictors.columns.clone()
                };
                let mut indices = Vec::with_capacity(names.len());
                for name in &names {
                    let j = ds
                        .meta
                        .feature_names
                        .iter()
                        .position(|f| f == name)
                        .ok_or_else(|| {
                            Error::MissingColumn(format!(
                                "predictor column {name:?} is not an input feature"
                            ))
                        })?;
                    indices.push(j);
                }
                (None, indices, names)
            }
        };
        let mut fe = Frontend {
            format: FRONTEND_FORMAT.into(),
            kind: cfg.predictors.kind,
            eof,
            raw_indices,
            raw_names,
            input_standardizer: None,
            target_standardizer: None,
            eot: cfg.split.eot,
            direction: cfg.split.direction,
        };
        if cfg.parent.standardize_inputs {
            let rows: Vec<Vec<f64>> = inside
                .samples
                .iter()
                .map(|s| fe.raw_row(s))
                .collect::<Result<_>>()?;
            fe.input_standardizer = Some(Standardizer::fit(&rows)?);
        }
        if cfg.parent.standardize_targets {
            let rows: Vec<Vec<f64>> =
                inside.samples.iter().map(|s| s.target.clone()).collect();
            fe.target_standardizer = Some(Standardizer::fit(&rows)?);
        }
        Ok(fe)
    }

    /// Regression predictors for one sample, in original units: either
    /// the sample's EOF projections or its selected raw columns.
    pub fn raw_row(&self, s: &Sample) -> Result<Vec<f64>> {
        match self.kind {
            PredictorKind::Eof => {
                let basis = self.eof.as_ref().ok_or_else(|| {
                    Error::Config("frontend is missing its EOF basis".into())
                })?;
                basis.project(&s.input)
            }
            PredictorKind::Raw => self
                .raw_indices
                .iter()
                .map(|&j| {
                    s.input.get(j).copied().ok_or_else(|| {
                        Error::Dimension(format!(
                            "sample has {} inputs, predictor wants column {j}",
                            s.input.len()
                        ))
                    })
                })
                .collect(),
        }
    }

    /// What the parent network actually consumes: `raw_row`, optionally
    /// standardized with training-period statistics.
    pub fn model_input(&self, s: &Sample) -> Result<Vec<f64>> {
        let raw = self.raw_row(s)?;
        match &self.input_standardizer {
            Some(st) => st.apply(&raw),
            None => Ok(raw),
        }
    }

    pub fn model_input_width(&self) -> usize {
        match self.kind {
            PredictorKind::Eof => self.eof.as_ref().map_or(0, |b| b.k()),
            PredictorKind::Raw => self.raw_indices.len(),
        }
    }

    pub fn predictor_names(&self) -> Vec<String> {
        match self.kind {
            PredictorKind::Eof => {
                (1..=self.model_input_width()).map(|i| format!("pc{i}")).collect()
            }
            PredictorKind::Raw => self.raw_names.clone(),
        }
    }

    pub fn standardized_targets(&self, t: &[f64]) -> Result<Vec<f64>> {
        match &self.target_standardizer {
            Some(st) => st.apply(t),
            None => Ok(t.to_vec()),
        }
    }

    /// Map network outputs back to original target units.
    pub fn raw_outputs(&self, y: &[f64]) -> Result<Vec<f64>> {
        match &self.target_standardizer {
            Some(st) => st.invert(y),
            None => Ok(y.to_vec()),
        }
    }
}

pub fn save_frontend(path: &Path, fe: &Frontend) -> Result<()> {
    write_json_pretty(path, fe)
}

pub fn load_frontend(path: &Path) -> Result<Frontend> {
    let text = fs::read_to_string(path)?;
    let fe: Frontend = serde_json::from_str(&text)?;
    if fe.format != FRONTEND_FORMAT {
        return Err(Error::Artifact {
            path: path.to_path_buf(),
            message: format!("unknown frontend format {:?}", fe.format),
        });
    }
    Ok(fe)
}

// ---------------------------------------------------------------------
// In-memory stages.

/// Build or load the configured dataset. Synthetic generators take
/// their seed from `[seeds] data`, not from the generator section.
pub fn generate_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match cfg.experiment {
        Experiment::Tipping => {
            let mut g = cfg.data.tipping.clone();
            g.seed = cfg.seeds.data;
            gen_tipping(&g)
        }
        Experiment::ToyEos => {
            let mut g = cfg.data.toy_eos.clone();
            g.seed = cfg.seeds.data;
            gen_toy_eos(&g)
        }
        Experiment::Csv => {
            let spec = cfg.data.csv.as_ref().ok_or_else(|| {
                Error::Config("experiment = \"csv\" needs a [data.csv] section".into())
            })?;
            let schema = CsvSchema {
                key_col: spec.key_col.clone(),
                input_cols: spec.input_cols.clone(),
                target_cols: spec.target_cols.clone(),
                aux_cols: Vec::new(),
                ordered: spec.ordered,
            };
            load_csv(&spec.path, &schema)
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedParent {
    pub model: ModelState,
    pub frontend: Frontend,
    /// Batch-mean MSE over the training rows, standardized units.
    pub train_loss: f64,
    /// RMSE over the held-out rows, original target units.
    pub val_rmse: Option<f64>,
}

/// Fit the frontend and train the parent network on the training split.
pub fn train_parent_model(cfg: &RunConfig, ds: &Dataset) -> Result<TrainedParent> {
    ds.validate()?;
    let frontend = Frontend::build(cfg, ds)?;
    let (inside, _) = split_by_key(ds, cfg.split.eot, cfg.split.direction);
    let n = inside.len();
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for s in &inside.samples {
        inputs.push(frontend.model_input(s)?);
        targets.push(frontend.standardized_targets(&s.target)?);
    }

    let n_val = ((cfg.parent.val_fraction * n as f64).floor() as usize).min(n.saturating_sub(1));
    let mut order: Vec<usize> = (0..n).collect();
    if n_val > 0 {
        let mut r = rng::rng_from_seed(rng::derive(cfg.seeds.parent, 3));
        order.shuffle(&mut r);
    }
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_inputs: Vec<Vec<f64>> = train_idx.iter().map(|&i| inputs[i].clone()).collect();
    let train_targets: Vec<Vec<f64>> = train_idx.iter().map(|&i| targets[i].clone()).collect();

    let spec = NetworkSpec::elu_stack(
        frontend.model_input_width(),
        &cfg.parent.hidden,
        ds.meta.target_names.len(),
        rng::derive(cfg.seeds.parent, 0),
    );
    let start = build_network(&spec)?;
    let tc = TrainConfig {
        epochs: cfg.parent.epochs,
        batch_size: cfg.parent.batch_size,
        learning_rate: cfg.parent.learning_rate,
        shuffle_seed: rng::derive(cfg.seeds.parent, 1),
        context: "parent training".into(),
        ..TrainConfig::default()
    };
    let (model, report) = train(&start, &train_inputs, &train_targets, &tc)?;

    let val_rmse = if val_idx.is_empty() {
        None
    } else {
        let mut sq = 0.0;
        let mut m = 0usize;
        for &i in val_idx {
            let out = frontend.raw_outputs(&model.forward(&inputs[i])?)?;
            for (p, t) in out.iter().zip(&inside.samples[i].target) {
                sq += (p - t) * (p - t);
                m += 1;
            }
        }
        Some((sq / m as f64).sqrt())
    };
    log::info!(
        "parent trained: loss {:.3e}{}",
        report.final_loss,
        val_rmse.map_or(String::new(), |v| format!(", validation rmse {v:.3e}"))
    );
    Ok(TrainedParent { model, frontend, train_loss: report.final_loss, val_rmse })
}

/// Run fine-tuning episodes over the training split and record the
/// per-episode weights. The regression mask doubles as the fine-tune
/// mask, so only the parameters the regression will model get to move.
pub fn collect_sensitivities(
    cfg: &RunConfig,
    ds: &Dataset,
    parent: &ModelState,
    frontend: &Frontend,
) -> Result<SensitivityMatrix> {
    let (inside, _) = split_by_key(ds, frontend.eot, frontend.direction);
    if inside.is_empty() {
        return Err(Error::Config("no training samples to collect episodes from".into()));
    }
    let mut inputs = Vec::with_capacity(inside.len());
    let mut targets = Vec::with_capacity(inside.len());
    let mut keys = Vec::with_capacity(inside.len());
    for s in &inside.samples {
        inputs.push(frontend.model_input(s)?);
        targets.push(frontend.standardized_targets(&s.target)?);
        keys.push(s.key);
    }

    let selector = cfg.regression.mask.resolve()?;
    let reg_mask = build_mask(&parent.spec, &selector)?;
    let combined: Vec<bool> = reg_mask
        .iter()
        .zip(&parent.trainable_mask)
        .map(|(a, b)| *a && *b)
        .collect();
    let start = parent.clone().with_mask(combined)?;

    let mut focus = cfg.sensitivity.focus.clone();
    focus.seed = cfg.seeds.sensitivity;

    let episodes: Vec<usize> = match &cfg.sensitivity.selection {
        EpisodeSelection::All => (0..inside.len()).collect(),
        EpisodeSelection::Stratified { columns, q, m_per_bin } => stratified_quantile_sample(
            &inside,
            columns,
            *q,
            *m_per_bin,
            rng::derive(cfg.seeds.sensitivity, 1),
        )?,
    };

    let train_set = TrainSet::new(&inputs, &targets, &keys)?;
    match cfg.sensitivity.mode {
        SensitivityMode::Reset => collect_reset(&start, &train_set, &episodes, &focus, false),
        SensitivityMode::Sequential if episodes.len() == inside.len() => {
            let (m, _) = collect_sequential(&start, &train_set, &focus, false)?;
            Ok(m)
        }
        SensitivityMode::Sequential => {
            // visit only the selected episodes, still in key order
            let sub_inputs: Vec<Vec<f64>> =
                episodes.iter().map(|&i| inputs[i].clone()).collect();
            let sub_targets: Vec<Vec<f64>> =
                episodes.iter().map(|&i| targets[i].clone()).collect();
            let sub_keys: Vec<f64> = episodes.iter().map(|&i| keys[i]).collect();
            let sub = TrainSet::new(&sub_inputs, &sub_targets, &sub_keys)?;
            let (mut m, _) = collect_sequential(&start, &sub, &focus, false)?;
            m.episode_indices = m.episode_indices.iter().map(|&e| episodes[e]).collect();
            Ok(m)
        }
    }
}

/// Regress every masked parameter against the episode predictors.
pub fn fit_regression_model(
    cfg: &RunConfig,
    ds: &Dataset,
    parent: &ModelState,
    frontend: &Frontend,
    sens: &SensitivityMatrix,
) -> Result<WeightRegressionModel> {
    let (inside, _) = split_by_key(ds, frontend.eot, frontend.direction);
    let mut rows = Vec::with_capacity(sens.n_episodes());
    for &i in &sens.episode_indices {
        let s = inside.samples.get(i).ok_or_else(|| {
            Error::Dimension(format!(
                "episode index {i} outside the training split ({} samples)",
                inside.len()
            ))
        })?;
        rows.push(frontend.raw_row(s)?);
    }
    let predictors =
        PredictorMatrix::from_rows(rows, frontend.predictor_names(), cfg.predictors.standardize)?;
    let mask = build_mask(&parent.spec, &cfg.regression.mask.resolve()?)?;
    match cfg.regression.family {
        RegressionFamilyKind::Linear => {
            let feature_spec = FeatureMapSpec {
                degree: cfg.regression.degree,
                include_interactions: cfg.regression.include_interactions,
                standardize_before: cfg.regression.standardize_features,
            };
            fit_linear(sens, &predictors, mask, feature_spec, cfg.regression.ridge_lambda, cfg.regression.prune)
        }
        RegressionFamilyKind::SharedNn => {
            let spec = NnRegressorSpec { seed: cfg.seeds.regression, ..cfg.regression.nn.clone() };
            fit_nn_regressor(sens, &predictors, mask, &spec)
        }
    }
}

/// The evaluation windows for one run: the whole key range, the two
/// sides of the training split, the configured fixed tail, and any
/// extra windows, with distinct names enforced.
pub fn build_windows(cfg: &RunConfig, eot: f64, direction: SplitDirection) -> Result<Vec<EvalWindow>> {
    let mut windows = vec![EvalWindow::full_period()];
    match direction {
        SplitDirection::LessEq => {
            windows.push(EvalWindow {
                name: WINDOW_WITHIN.into(),
                lo: None,
                hi: Some(eot),
                exclusive_lo: false,
                exclusive_hi: false,
            });
            windows.push(EvalWindow::beyond_eot(eot));
        }
        SplitDirection::GreaterEq => {
            windows.push(EvalWindow {
                name: WINDOW_WITHIN.into(),
                lo: Some(eot),
                hi: None,
                exclusive_lo: false,
                exclusive_hi: false,
            });
            windows.push(EvalWindow {
                name: WINDOW_BEYOND_EOT.into(),
                lo: None,
                hi: Some(eot),
                exclusive_lo: false,
                exclusive_hi: true,
            });
        }
    }
    if let Some(tail) = cfg.eval.tail_window()? {
        windows.push(tail);
    }
    for w in &cfg.eval.extra_windows {
        w.validate()?;
        windows.push(w.clone());
    }
    let mut seen = BTreeSet::new();
    for w in &windows {
        if !seen.insert(w.name.clone()) {
            return Err(Error::Config(format!("duplicate evaluation window name {:?}", w.name)));
        }
    }
    Ok(windows)
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: EvalReport,
    pub series: PairedSeries,
    pub grouped: Option<Vec<GroupRmse>>,
}

/// Synthesize a child per sample at that sample's own predictors, run
/// parent and children over the whole dataset, and score both in
/// original target units.
pub fn evaluate_run(
    cfg: &RunConfig,
    ds: &Dataset,
    parent: &ModelState,
    frontend: &Frontend,
    reg: &WeightRegressionModel,
) -> Result<RunOutput> {
    let n = ds.len();
    let mut raw_rows = Vec::with_capacity(n);
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let mut keys = Vec::with_capacity(n);
    for s in &ds.samples {
        raw_rows.push(frontend.raw_row(s)?);
        inputs.push(frontend.model_input(s)?);
        targets.push(s.target.clone());
        keys.push(s.key);
    }
    let mut series =
        apply_models(parent, &inputs, &targets, &keys, |i| predict_child(reg, parent, &raw_rows[i]))?;
    if let Some(st) = &frontend.target_standardizer {
        for row in series.parent.iter_mut().chain(series.child.iter_mut()) {
            *row = st.invert(row)?;
        }
    }

    let windows = build_windows(cfg, frontend.eot, frontend.direction)?;
    let mut report = rmse_windows(&series, &windows)?;
    report.eot = Some(frontend.eot);
    report.meta = run_meta(cfg);

    let grouped = match &cfg.eval.grouped {
        Some(g) => {
            let column = ds.column(&g.column)?;
            Some(grouped_rmse(&series, &column, &g.bins)?)
        }
        None => None,
    };
    Ok(RunOutput { report, series, grouped })
}

fn run_meta(cfg: &RunConfig) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::new();
    let experiment = match cfg.experiment {
        Experiment::Tipping => "tipping",
        Experiment::ToyEos => "toy_eos",
        Experiment::Csv => "csv",
    };
    let family = match cfg.regression.family {
        RegressionFamilyKind::Linear => "linear",
        RegressionFamilyKind::SharedNn => "shared_nn",
    };
    let predictors = match cfg.predictors.kind {
        PredictorKind::Eof => format!("eof k={}", cfg.predictors.eof_k),
        PredictorKind::Raw => "raw".into(),
    };
    meta.insert("experiment".into(), experiment.into());
    meta.insert("family".into(), family.into());
    meta.insert("degree".into(), cfg.regression.degree.to_string());
    meta.insert("predictors".into(), predictors);
    meta.insert("seed_data".into(), cfg.seeds.data.to_string());
    meta.insert("seed_parent".into(), cfg.seeds.parent.to_string());
    meta.insert("seed_sensitivity".into(), cfg.seeds.sensitivity.to_string());
    meta.insert("seed_regression".into(), cfg.seeds.regression.to_string());
    meta
}

/// The whole pipeline in memory, for a single configuration.
pub fn run_once(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let ds = generate_dataset(cfg)?;
    let parent = train_parent_model(cfg, &ds)?;
    let sens = collect_sensitivities(cfg, &ds, &parent.model, &parent.frontend)?;
    let reg = fit_regression_model(cfg, &ds, &parent.model, &parent.frontend, &sens)?;
    evaluate_run(cfg, &ds, &parent.model, &parent.frontend, &reg)
}

// ---------------------------------------------------------------------
// Ensembles: repeat the pipeline with per-run seeds and a per-run
// training cutoff drawn uniformly from the configured range.

/// Training cutoff for one ensemble member.
pub fn draw_eot(cfg: &RunConfig, run: usize) -> f64 {
    let e = &cfg.ensemble;
    if e.eot_lo == e.eot_hi {
        return e.eot_lo;
    }
    let mut r = rng::rng_from_seed(rng::derive2(cfg.seeds.ensemble, 7, run as u64));
    e.eot_lo + r.random::<f64>() * (e.eot_hi - e.eot_lo)
}

/// Per-member configuration: fresh seeds for every stage plus the
/// drawn cutoff, everything else shared.
pub fn member_config(cfg: &RunConfig, run: usize) -> RunConfig {
    let mut member = cfg.clone();
    let r = run as u64;
    member.split.eot = draw_eot(cfg, run);
    member.seeds.data = rng::derive2(cfg.seeds.data, 11, r);
    member.seeds.parent = rng::derive2(cfg.seeds.parent, 12, r);
    member.seeds.sensitivity = rng::derive2(cfg.seeds.sensitivity, 13, r);
    member.seeds.regression = rng::derive2(cfg.seeds.regression, 14, r);
    member
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FailedRun {
    pub run: usize,
    pub eot: f64,
    pub message: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EnsembleOutput {
    /// Reports of the successful members, in run order.
    pub reports: Vec<EvalReport>,
    /// Cutoff for each successful member, aligned with `reports`.
    pub run_eots: Vec<f64>,
    pub failed: Vec<FailedRun>,
    /// Box statistics of the parent-minus-child RMSE differences, per
    /// window, pooled over members.
    pub window_boxes: Vec<(String, BoxStats)>,
    /// Share of members with a positive difference, per window.
    pub fraction_positive: BTreeMap<String, f64>,
    /// Same differences bucketed by each member's cutoff.
    pub eot_buckets: Vec<(String, BoxStats)>,
}

pub fn run_ensemble(cfg: &RunConfig) -> Result<EnsembleOutput> {
    cfg.validate()?;
    let n = cfg.ensemble.n_runs;
    let results: Vec<(f64, std::result::Result<EvalReport, String>)> =
        exec::map_indices(n, |r| {
            let member = member_config(cfg, r);
            let eot = member.split.eot;
            let report = run_once(&member).map(|o| o.report).map_err(|e| e.to_string());
            (eot, report)
        });

    let mut out = EnsembleOutput::default();
    for (run, (eot, result)) in results.into_iter().enumerate() {
        match result {
            Ok(mut report) => {
                report.meta.insert("run".into(), run.to_string());
                out.run_eots.push(eot);
                out.reports.push(report);
            }
            Err(message) => {
                log::warn!("ensemble member {run} failed: {message}");
                out.failed.push(FailedRun { run, eot, message });
            }
        }
    }
    if out.reports.is_empty() {
        return Err(Error::Config(format!(
            "all {n} ensemble members failed; first error: {}",
            out.failed.first().map_or("none", |f| f.message.as_str())
        )));
    }

    let mut names: Vec<String> = Vec::new();
    for report in &out.reports {
        for w in &report.windows {
            if !names.contains(&w.window) {
                names.push(w.window.clone());
            }
        }
    }
    for name in &names {
        let diffs = window_diffs(&out.reports, name);
        if diffs.is_empty() {
            continue;
        }
        out.window_boxes.push((name.clone(), box_stats(&diffs)?));
        out.fraction_positive.insert(name.clone(), fraction_positive(&diffs));
    }

    // Bucket the headline differences by each member's cutoff; prefer
    // the fixed tail (same window for every member) when configured.
    let bucket_window = if out.reports.iter().any(|r| r.window(WINDOW_FIXED_TAIL).is_some()) {
        WINDOW_FIXED_TAIL
    } else {
        WINDOW_BEYOND_EOT
    };
    let e = &cfg.ensemble;
    let span = e.eot_hi - e.eot_lo;
    let n_buckets = if span > 0.0 { (span / e.bucket_width).ceil() as usize } else { 1 }.max(1);
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); n_buckets];
    for (report, &eot) in out.reports.iter().zip(&out.run_eots) {
        let Some(diff) = report.window(bucket_window).and_then(|w| w.diff) else {
            continue;
        };
        let b = if span > 0.0 {
            (((eot - e.eot_lo) / e.bucket_width).floor() as usize).min(n_buckets - 1)
        } else {
            0
        };
        buckets[b].push(diff);
    }
    for (b, values) in buckets.iter().enumerate() {
        if values.is_empty() {
            continue;
        }
        let lo = e.eot_lo + b as f64 * e.bucket_width;
        let hi = (lo + e.bucket_width).min(e.eot_hi);
        out.eot_buckets.push((format!("eot_{lo}-{hi}"), box_stats(values)?));
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// File-backed stages. Artifacts live flat in one output directory and
// every stage re-reads its inputs from disk, so stages can run in
// separate processes.

pub const MANIFEST_FORMAT: &str = "weightcast/manifest-v1";
pub const SENSITIVITY_BASE: &str = "sensitivity";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub stage: String,
    pub tool_version: String,
    /// Checksum of `config.resolved.toml` as used by this stage.
    pub config_sha256: String,
    /// File name -> sha256 of every artifact read / written.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Headline numbers (sample counts, losses, window differences).
    pub stats: BTreeMap<String, f64>,
}

#[derive(Clone, Debug)]
pub struct Workspace {
    pub dir: PathBuf,
}

impl Workspace {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Workspace { dir: dir.into() }
    }

    pub fn create(&self) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        Ok(())
    }

    pub fn config_echo_path(&self) -> PathBuf {
        self.dir.join("config.resolved.toml")
    }
    pub fn dataset_path(&self) -> PathBuf {
        self.dir.join("dataset.csv")
    }
    pub fn parent_path(&self) -> PathBuf {
        self.dir.join("parent.json")
    }
    pub fn frontend_path(&self) -> PathBuf {
        self.dir.join("frontend.json")
    }
    pub fn regression_path(&self) -> PathBuf {
        self.dir.join("regression.json")
    }
    pub fn report_path(&self) -> PathBuf {
        self.dir.join("report.json")
    }
    pub fn series_path(&self) -> PathBuf {
        self.dir.join("series.csv")
    }
    pub fn windows_path(&self) -> PathBuf {
        self.dir.join("windows.csv")
    }
    pub fn grouped_path(&self) -> PathBuf {
        self.dir.join("grouped.csv")
    }
    pub fn ensemble_json_path(&self) -> PathBuf {
        self.dir.join("ensemble.json")
    }
    pub fn ensemble_runs_path(&self) -> PathBuf {
        self.dir.join("ensemble-runs.csv")
    }
    pub fn ensemble_boxes_path(&self) -> PathBuf {
        self.dir.join("ensemble-boxes.csv")
    }
    pub fn ensemble_buckets_path(&self) -> PathBuf {
        self.dir.join("ensemble-buckets.csv")
    }
    pub fn manifest_path(&self, stage: &str) -> PathBuf {
        self.dir.join(format!("manifest-{stage}.json"))
    }

    /// The sensitivity artifacts currently on disk.
    pub fn sensitivity_paths(&self) -> Vec<PathBuf> {
        [
            format!("{SENSITIVITY_BASE}.json"),
            format!("{SENSITIVITY_BASE}_values.csv"),
            format!("{SENSITIVITY_BASE}_values.bin"),
        ]
        .iter()
        .map(|name| self.dir.join(name))
        .filter(|p| p.exists())
        .collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_config_echo(ws: &Workspace, cfg: &RunConfig) -> Result<()> {
    fs::write(ws.config_echo_path(), cfg.to_toml_string()?)?;
    Ok(())
}

fn file_key(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn finish_manifest(
    ws: &Workspace,
    stage: &str,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    stats: BTreeMap<String, f64>,
) -> Result<Manifest> {
    let mut manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        stage: stage.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: sha256_file(&ws.config_echo_path())?,
        inputs: BTreeMap::new(),
        outputs: BTreeMap::new(),
        stats,
    };
    for path in inputs {
        manifest.inputs.insert(file_key(path), sha256_file(path)?);
    }
    for path in outputs {
        manifest.outputs.insert(file_key(path), sha256_file(path)?);
    }
    write_json_pretty(&ws.manifest_path(stage), &manifest)?;
    Ok(manifest)
}

fn dataset_schema(cfg: &RunConfig) -> Result<CsvSchema> {
    match cfg.experiment {
        Experiment::Tipping => Ok(CsvSchema::for_dataset(&tipping_meta(&cfg.data.tipping), Vec::new())),
        Experiment::ToyEos => Ok(CsvSchema::for_dataset(&eos_meta(), Vec::new())),
        Experiment::Csv => {
            let spec = cfg.data.csv.as_ref().ok_or_else(|| {
                Error::Config("experiment = \"csv\" needs a [data.csv] section".into())
            })?;
            Ok(CsvSchema {
                key_col: spec.key_col.clone(),
                input_cols: spec.input_cols.clone(),
                target_cols: spec.target_cols.clone(),
                aux_cols: Vec::new(),
                ordered: spec.ordered,
            })
        }
    }
}

fn read_dataset(ws: &Workspace, cfg: &RunConfig) -> Result<Dataset> {
    load_csv(&ws.dataset_path(), &dataset_schema(cfg)?)
}

fn read_parent(ws: &Workspace) -> Result<ModelState> {
    load_checkpoint(&ws.parent_path())?.into_model()
}

/// Write the dataset the later stages will read.
pub fn stage_generate(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let ws = Workspace::new(out);
    ws.create()?;
    write_config_echo(&ws, cfg)?;
    let ds = generate_dataset(cfg)?;
    write_csv(&ws.dataset_path(), &ds)?;
    log::info!("wrote {} samples to {}", ds.len(), ws.dataset_path().display());
    let mut stats = BTreeMap::new();
    stats.insert("n_samples".into(), ds.len() as f64);
    finish_manifest(&ws, "generate", &[], &[ws.dataset_path()], stats)
}

/// Train the parent and freeze the frontend.
pub fn stage_train_parent(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let ws = Workspace::new(out);
    ws.create()?;
    write_config_echo(&ws, cfg)?;
    let ds = read_dataset(&ws, cfg)?;
    let trained = train_parent_model(cfg, &ds)?;

    let mut seeds = BTreeMap::new();
    seeds.insert("data".to_string(), cfg.seeds.data);
    seeds.insert("parent".to_string(), cfg.seeds.parent);
    let ckpt = Checkpoint::from_model(
        &trained.model,
        Some(TrainConfig::default().optimizer),
        Some(cfg.parent.learning_rate),
        seeds,
    );
    save_checkpoint(&ws.parent_path(), &ckpt)?;
    save_frontend(&ws.frontend_path(), &trained.frontend)?;

    let mut stats = BTreeMap::new();
    stats.insert("train_loss".into(), trained.train_loss);
    if let Some(v) = trained.val_rmse {
        stats.insert("val_rmse".into(), v);
    }
    finish_manifest(
        &ws,
        "train-parent",
        &[ws.dataset_path()],
        &[ws.parent_path(), ws.frontend_path()],
        stats,
    )
}

/// Collect the per-episode weight matrix.
pub fn stage_collect(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let ws = Workspace::new(out);
    ws.create()?;
    write_config_echo(&ws, cfg)?;
    let ds = read_dataset(&ws, cfg)?;
    let parent = read_parent(&ws)?;
    let frontend = load_frontend(&ws.frontend_path())?;
    let matrix = collect_sensitivities(cfg, &ds, &parent, &frontend)?;
    let files = save_sensitivity(&ws.dir, SENSITIVITY_BASE, &matrix)?;

    let mut stats = BTreeMap::new();
    stats.insert("n_episodes".into(), matrix.n_episodes() as f64);
    stats.insert("n_params".into(), matrix.param_count() as f64);
    stats.insert("n_failed_episodes".into(), matrix.failed.len() as f64);
    finish_manifest(
        &ws,
        "collect",
        &[ws.dataset_path(), ws.parent_path(), ws.frontend_path()],
        &files,
        stats,
    )
}

/// Fit the per-parameter regression against the episode predictors.
pub fn stage_fit(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let ws = Workspace::new(out);
    ws.create()?;
    write_config_echo(&ws, cfg)?;
    let ds = read_dataset(&ws, cfg)?;
    let parent = read_parent(&ws)?;
    let frontend = load_frontend(&ws.frontend_path())?;
    let matrix = load_sensitivity(&ws.dir, SENSITIVITY_BASE)?;
    let model = fit_regression_model(cfg, &ds, &parent, &frontend, &matrix)?;
    save_regression(&ws.regression_path(), &model)?;

    let mut stats = BTreeMap::new();
    stats.insert("n_predicted_params".into(), model.predicted_indices().len() as f64);
    let mut inputs = vec![ws.dataset_path(), ws.parent_path(), ws.frontend_path()];
    inputs.extend(ws.sensitivity_paths());
    finish_manifest(&ws, "fit", &inputs, &[ws.regression_path()], stats)
}

/// Synthesize children, evaluate parent and children, write the report.
pub fn stage_predict_eval(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let ws = Workspace::new(out);
    ws.create()?;
    write_config_echo(&ws, cfg)?;
    let ds = read_dataset(&ws, cfg)?;
    let parent = read_parent(&ws)?;
    let frontend = load_frontend(&ws.frontend_path())?;
    let reg = load_regression(&ws.regression_path(), &parent)?;
    let output = evaluate_run(cfg, &ds, &parent, &frontend, &reg)?;

    write_json_pretty(&ws.report_path(), &output.report)?;
    write_series_csv(&ws.series_path(), &output.series)?;
    write_reports_csv(&ws.windows_path(), std::slice::from_ref(&output.report))?;
    let mut outputs = vec![ws.report_path(), ws.series_path(), ws.windows_path()];
    if let Some(grouped) = &output.grouped {
        write_grouped_csv(&ws.grouped_path(), grouped)?;
        outputs.push(ws.grouped_path());
    }

    let mut stats = BTreeMap::new();
    for w in &output.report.windows {
        if let Some(d) = w.diff {
            stats.insert(format!("diff_{}", w.window), d);
        }
    }
    finish_manifest(
        &ws,
        "predict-eval",
        &[ws.dataset_path(), ws.parent_path(), ws.frontend_path(), ws.regression_path()],
        &outputs,
        stats,
    )
}

/// Run the configured ensemble in memory and write its summaries.
pub fn stage_ensemble(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let ws = Workspace::new(out);
    ws.create()?;
    write_config_echo(&ws, cfg)?;
    let ensemble = run_ensemble(cfg)?;

    write_json_pretty(&ws.ensemble_json_path(), &ensemble)?;
    write_reports_csv(&ws.ensemble_runs_path(), &ensemble.reports)?;
    write_box_csv(&ws.ensemble_boxes_path(), &ensemble.window_boxes)?;
    write_box_csv(&ws.ensemble_buckets_path(), &ensemble.eot_buckets)?;

    let mut stats = BTreeMap::new();
    stats.insert("n_runs_ok".into(), ensemble.reports.len() as f64);
    stats.insert("n_runs_failed".into(), ensemble.failed.len() as f64);
    for (name, b) in &ensemble.window_boxes {
        stats.insert(format!("median_diff_{name}"), b.median);
    }
    for (name, frac) in &ensemble.fraction_positive {
        stats.insert(format!("fraction_positive_{name}"), *frac);
    }
    finish_manifest(
        &ws,
        "ensemble",
        &[],
        &[
            ws.ensemble_json_path(),
            ws.ensemble_runs_path(),
            ws.ensemble_boxes_path(),
            ws.ensemble_buckets_path(),
        ],
        stats,
    )
}

/// The five single-run stages, chained through the output directory.
pub fn run_all(cfg: &RunConfig, out: &Path) -> Result<Vec<Manifest>> {
    Ok(vec![
        stage_generate(cfg, out)?,
        stage_train_parent(cfg, out)?,
        stage_collect(cfg, out)?,
        stage_fit(cfg, out)?,
        stage_predict_eval(cfg, out)?,
    ])
}
