//! Run configuration: one TOML file drives the whole pipeline. Every
//! field has a default, so a config can be as short as
//! `experiment = "tipping"`; the manifest echoes the fully resolved
//! config back so silent defaults are always visible.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{EosConfig, SplitDirection, TippingConfig};
use crate::error::{Error, Result};
use crate::eval::{EvalWindow, GroupBins};
use crate::sensitivity::{FocusSetConfig, SensitivityMode};
use crate::weightreg::{MaskSelector, NnRegressorSpec, PruneConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Tipping,
    ToyEos,
    Csv,
}

/// External dataset brought in through a CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvDataConfig {
    pub path: PathBuf,
    pub key_col: String,
    pub input_cols: Vec<String>,
    pub target_cols: Vec<String>,
    #[serde(default)]
    pub ordered: bool,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub tipping: TippingConfig,
    pub toy_eos: EosConfig,
    pub csv: Option<CsvDataConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Key threshold separating training data from the extrapolation
    /// regime (year for the tipping run, depth for the density run).
    pub eot: f64,
    /// Which side of the threshold is the training side.
    pub direction: SplitDirection,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { eot: 1000.0, direction: SplitDirection::LessEq }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParentConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Standardize model inputs with statistics from the training side.
    pub standardize_inputs: bool,
    /// Standardize targets likewise; predictions are mapped back.
    pub standardize_targets: bool,
    /// Fraction of training rows held out to report validation loss.
    pub val_fraction: f64,
}

impl Default for ParentConfig {
    fn default() -> Self {
        ParentConfig {
            hidden: vec![16],
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            standardize_inputs: true,
            standardize_targets: true,
            val_fraction: 0.1,
        }
    }
}

/// Which training samples get a sensitivity episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EpisodeSelection {
    /// Every training sample.
    All,
    /// Stratified quantile sample: for each listed column, q bins with up
    /// to m_per_bin draws each; the union over columns is used.
    Stratified {
        columns: Vec<String>,
        q: usize,
        m_per_bin: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    pub mode: SensitivityMode,
    pub selection: EpisodeSelection,
    /// Focus-set shape; its `seed` field is overridden by `[seeds]`.
    pub focus: FocusSetConfig,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            mode: SensitivityMode::Reset,
            selection: EpisodeSelection::All,
            focus: FocusSetConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    /// Leading principal components of the input fields, basis fitted on
    /// the training side only.
    Eof,
    /// Named dataset columns as-is.
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    pub eof_k: usize,
    /// Raw mode: dataset columns to use; empty means all feature columns.
    pub columns: Vec<String>,
    pub standardize: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            kind: PredictorKind::Eof,
            eof_k: 4,
            columns: Vec::new(),
            standardize: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionFamilyKind {
    Linear,
    SharedNn,
}

/// TOML-friendly mask selector: `"all"`, `"final_layer"`, or a list of
/// 0-based layer indices like `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaskSpec {
    Named(String),
    Layers(Vec<usize>),
}

impl MaskSpec {
    pub fn resolve(&self) -> Result<MaskSelector> {
        match self {
            MaskSpec::Named(s) if s == "all" => Ok(MaskSelector::All),
            MaskSpec::Named(s) if s == "final_layer" => Ok(MaskSelector::FinalLayer),
            MaskSpec::Named(s) => Err(Error::Config(format!(
                "unknown mask {s:?}; use \"all\", \"final_layer\", or a layer list"
            ))),
            MaskSpec::Layers(layers) => Ok(MaskSelector::Layers(layers.clone())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionConfig {
    pub family: RegressionFamilyKind,
    pub degree: usize,
    pub include_interactions: bool,
    /// Feed standardized predictors into the polynomial feature map.
    pub standardize_features: bool,
    pub ridge_lambda: f64,
    pub prune: PruneConfig,
    pub mask: MaskSpec,
    /// Shared-network family settings; its `seed` is overridden by
    /// `[seeds]`.
    pub nn: NnRegressorSpec,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            family: RegressionFamilyKind::Linear,
            degree: 1,
            include_interactions: true,
            standardize_features: true,
            ridge_lambda: 1e-8,
            prune: PruneConfig::default(),
            mask: MaskSpec::Named("all".into()),
            nn: NnRegressorSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupedConfig {
    pub column: String,
    pub bins: GroupBins,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Fixed far-extrapolation window [lo, hi]; set `tail = []` to skip
    /// it.
    pub tail: Vec<f64>,
    /// Extra windows evaluated alongside the standard ones.
    pub extra_windows: Vec<EvalWindow>,
    /// Optional per-bin RMSE profile over a dataset column.
    pub grouped: Option<GroupedConfig>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tail: vec![1800.0, 2200.0],
            extra_windows: Vec::new(),
            grouped: None,
        }
    }
}

impl EvalConfig {
    pub fn tail_window(&self) -> Result<Option<EvalWindow>> {
        match self.tail.as_slice() {
            [] => Ok(None),
            [lo, hi] => Ok(Some(EvalWindow::fixed_tail(*lo, *hi)?)),
            other => Err(Error::Config(format!(
                "eval.tail needs exactly two values [lo, hi] or [], got {} values",
                other.len()
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_runs: usize,
    /// Uniform end-of-training draw per run; lo == hi pins it.
    pub eot_lo: f64,
    pub eot_hi: f64,
    /// Width of the per-EOT aggregation buckets.
    pub bucket_width: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { n_runs: 30, eot_lo: 800.0, eot_hi: 1800.0, bucket_width: 100.0 }
    }
}

/// Every stream of randomness in a run, spelled out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub parent: u64,
    pub sensitivity: u64,
    pub regression: u64,
    pub ensemble: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { data: 0, parent: 1, sensitivity: 2, regression: 3, ensemble: 4 }
    }
}

impl Seeds {
    pub fn set(&mut self, key: &str, value: u64) -> Result<()> {
        match key {
            "data" => self.data = value,
            "parent" => self.parent = value,
            "sensitivity" => self.sensitivity = value,
            "regression" => self.regression = value,
            "ensemble" => self.ensemble = value,
            other => {
                return Err(Error::Config(format!(
                    "unknown seed {other:?}; valid seeds: data, parent, \
                     sensitivity, regression, ensemble"
                )))
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub parent: ParentConfig,
    pub sensitivity: SensitivityConfig,
    pub predictors: PredictorConfig,
    pub regression: RegressionConfig,
    pub eval: EvalConfig,
    pub ensemble: EnsembleConfig,
    pub seeds: Seeds,
}

impl Default for RunConfig {
    /// Synthetic tipping experiment end to end.
    fn default() -> Self {
        RunConfig {
            experiment: Experiment::Tipping,
            data: DataConfig::default(),
            split: SplitConfig::default(),
            parent: ParentConfig::default(),
            sensitivity: SensitivityConfig::default(),
            predictors: PredictorConfig::default(),
            regression: RegressionConfig::default(),
            eval: EvalConfig::default(),
            ensemble: EnsembleConfig::default(),
            seeds: Seeds::default(),
        }
    }
}

impl RunConfig {
    /// Toy density experiment: raw 6-column predictors, degree-2
    /// features, stratified episode selection, depth as the key.
    pub fn toy_eos() -> Self {
        RunConfig {
            experiment: Experiment::ToyEos,
            split: SplitConfig { eot: 2000.0, direction: SplitDirection::LessEq },
            parent: ParentConfig { hidden: vec![8], epochs: 40, ..ParentConfig::default() },
            sensitivity: SensitivityConfig {
                selection: EpisodeSelection::Stratified {
                    columns: vec!["rho".into()],
                    q: 300,
                    m_per_bin: 2,
                },
                focus: FocusSetConfig { finetune_epochs: 3, ..FocusSetConfig::default() },
                ..SensitivityConfig::default()
            },
            predictors: PredictorConfig {
                kind: PredictorKind::Raw,
                ..PredictorConfig::default()
            },
            regression: RegressionConfig {
                degree: 2,
                include_interactions: false,
                ridge_lambda: 1e-3,
                ..RegressionConfig::default()
            },
            eval: EvalConfig {
                tail: Vec::new(),
                grouped: Some(GroupedConfig {
                    column: "depth".into(),
                    bins: GroupBins::Unique,
                }),
                ..EvalConfig::default()
            },
            ensemble: EnsembleConfig {
                n_runs: 10,
                eot_lo: 2000.0,
                eot_hi: 2000.0,
                bucket_width: 500.0,
            },
            ..RunConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment == Experiment::Csv && self.data.csv.is_none() {
            return Err(Error::Config(
                "experiment = \"csv\" needs a [data.csv] section".into(),
            ));
        }
        self.data.tipping.validate()?;
        self.data.toy_eos.validate()?;
        if !self.split.eot.is_finite() {
            return Err(Error::Config("split.eot must be finite".into()));
        }
        if self.parent.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("parent.hidden sizes must be >= 1".into()));
        }
        if self.parent.batch_size == 0 {
            return Err(Error::Config("parent.batch_size must be at least 1".into()));
        }
        if !(self.parent.learning_rate.is_finite() && self.parent.learning_rate > 0.0) {
            return Err(Error::Config("parent.learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.parent.val_fraction) {
            return Err(Error::Config(
                "parent.val_fraction must be in [0, 1)".into(),
            ));
        }
        self.sensitivity.focus.validate()?;
        if let EpisodeSelection::Stratified { columns, q, m_per_bin } =
            &self.sensitivity.selection
        {
            if columns.is_empty() || *q == 0 || *m_per_bin == 0 {
                return Err(Error::Config(
                    "stratified selection needs columns, q >= 1 and m_per_bin >= 1"
                        .into(),
                ));
            }
        }
        if self.predictors.kind == PredictorKind::Eof && self.predictors.eof_k == 0 {
            return Err(Error::Config("predictors.eof_k must be >= 1".into()));
        }
        if self.regression.degree == 0 {
            return Err(Error::Config("regression.degree must be >= 1".into()));
        }
        if !(self.regression.ridge_lambda.is_finite()
            && self.regression.ridge_lambda >= 0.0)
        {
            return Err(Error::Config(
                "regression.ridge_lambda must be finite and >= 0".into(),
            ));
        }
        self.regression.mask.resolve()?;
        self.regression.nn.validate()?;
        self.eval.tail_window()?;
        for w in &self.eval.extra_windows {
            w.validate()?;
        }
        if self.ensemble.n_runs == 0 {
            return Err(Error::Config("ensemble.n_runs must be >= 1".into()));
        }
        if !(self.ensemble.eot_lo <= self.ensemble.eot_hi)
            || !self.ensemble.eot_lo.is_finite()
            || !self.ensemble.eot_hi.is_finite()
        {
            return Err(Error::Config(format!(
                "ensemble EOT range out of order: [{}, {}]",
                self.ensemble.eot_lo, self.ensemble.eot_hi
            )));
        }
        if !(self.ensemble.bucket_width.is_finite() && self.ensemble.bucket_width > 0.0) {
            return Err(Error::Config("ensemble.bucket_width must be positive".into()));
        }
        Ok(())
    }

    /// Fully resolved config as TOML, defaults included — the manifest
    /// echo.
    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Artifact {
        path: path.to_path_buf(),
        message: format!("cannot read config: {e}"),
    })?;
    let cfg: RunConfig = toml::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg: RunConfig = toml::from_str("experiment = \"tipping\"").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
        assert_eq!(cfg.predictors.eof_k, 4);
        assert_eq!(cfg.sensitivity.focus.n, 200);
        assert_eq!(cfg.eval.tail, vec![1800.0, 2200.0]);
    }

    #[test]
    fn default_echo_roundtrips() {
        for cfg in [RunConfig::default(), RunConfig::toy_eos()] {
            let text = cfg.to_toml_string().unwrap();
            let back: RunConfig = toml::from_str(&text).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn unknown_field_is_named_in_the_error() {
        let err = toml::from_str::<RunConfig>(
            "experiment = \"tipping\"\n[parent]\nepochz = 3\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("epochz"), "{err}");
    }

    #[test]
    fn field_values_reach_the_right_places() {
        let text = r#"
            experiment = "toy_eos"
            [data.toy_eos]
            n_depth = 50
            [split]
            eot = 2000.0
            [sensitivity]
            mode = "sequential"
            [sensitivity.selection]
            kind = "stratified"
            columns = ["rho"]
            q = 300
            m_per_bin = 2
            [sensitivity.focus]
            n = 50
            finetune_lr = 0.001
            [predictors]
            kind = "raw"
            columns = ["sal", "temp"]
            [regression]
            degree = 2
            mask = "final_layer"
            [regression.prune]
            enabled = true
            [eval]
            tail = []
            [ensemble]
            n_runs = 3
            eot_lo = 2000.0
            eot_hi = 2000.0
            [seeds]
            parent = 99
        "#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.data.toy_eos.n_depth, 50);
        assert_eq!(cfg.sensitivity.mode, SensitivityMode::Sequential);
        assert_eq!(
            cfg.sensitivity.selection,
            EpisodeSelection::Stratified {
                columns: vec!["rho".into()],
                q: 300,
                m_per_bin: 2
            }
        );
        assert_eq!(cfg.sensitivity.focus.n, 50);
        assert_eq!(cfg.predictors.columns, vec!["sal", "temp"]);
        assert_eq!(cfg.regression.mask.resolve().unwrap(), MaskSelector::FinalLayer);
        assert!(cfg.regression.prune.enabled);
        assert!(cfg.eval.tail.is_empty());
        assert!(cfg.eval.tail_window().unwrap().is_none());
        assert_eq!(cfg.seeds.parent, 99);
        assert_eq!(cfg.seeds.data, 0, "unspecified seeds keep defaults");
    }

    #[test]
    fn mask_spec_variants() {
        let named: MaskSpec = toml::from_str::<toml::Value>("m = \"all\"")
            .unwrap()
            .get("m")
            .unwrap()
            .clone()
            .try_into()
            .unwrap();
        assert_eq!(named.resolve().unwrap(), MaskSelector::All);
        let layers: MaskSpec = toml::from_str::<toml::Value>("m = [0, 2]")
            .unwrap()
            .get("m")
            .unwrap()
            .clone()
            .try_into()
            .unwrap();
        assert_eq!(layers.resolve().unwrap(), MaskSelector::Layers(vec![0, 2]));
        assert!(MaskSpec::Named("middle".into()).resolve().is_err());
    }

    #[test]
    fn validation_rejects_bad_cross_fields() {
        let mut cfg = RunConfig::default();
        cfg.experiment = Experiment::Csv;
        assert!(cfg.validate().is_err(), "csv experiment needs [data.csv]");

        let mut cfg = RunConfig::default();
        cfg.parent.val_fraction = 1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.ensemble.eot_lo = 1800.0;
        cfg.ensemble.eot_hi = 800.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.eval.tail = vec![2200.0, 1800.0];
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.eval.tail = vec![1800.0];
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.regression.degree = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn seed_overrides_by_name() {
        let mut seeds = Seeds::default();
        seeds.set("parent", 7).unwrap();
        seeds.set("ensemble", 11).unwrap();
        assert_eq!(seeds.parent, 7);
        assert_eq!(seeds.ensemble, 11);
        let err = seeds.set("banana", 1).unwrap_err();
        assert!(err.to_string().contains("valid seeds"));
    }

    #[test]
    fn toy_eos_defaults_are_coherent() {
        let cfg = RunConfig::toy_eos();
        cfg.validate().unwrap();
        assert_eq!(cfg.split.eot, 2000.0);
        assert!(cfg.eval.tail.is_empty());
        assert_eq!(cfg.predictors.kind, PredictorKind::Raw);
        assert_eq!(cfg.regression.degree, 2);
        assert!(cfg.eval.grouped.is_some());
    }
}
