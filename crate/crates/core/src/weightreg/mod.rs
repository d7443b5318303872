//! Per-parameter weight regressions: map predictor rows to parameter
//! values, so whole networks can be synthesized at predictor points the
//! parent never trained on. Two families: independent linear/polynomial
//! fits per parameter, and one shared multi-head network.

mod linear;
mod nn;

pub use linear::{fit_linear, PruneConfig};
pub use nn::{fit_nn_regressor, NnRegressorSpec};

use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::net::{ModelState, NetworkSpec, ParameterVector};
use crate::predictors::{poly_features, FeatureMapSpec, Standardizer};

/// Which parameters a regression predicts; the rest are inherited from
/// the parent baseline.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSelector {
    All,
    FinalLayer,
    /// Specific weight layers, 0-based from the input side.
    Layers(Vec<usize>),
}

pub fn build_mask(spec: &NetworkSpec, selector: &MaskSelector) -> Result<Vec<bool>> {
    let k = spec.param_count();
    Ok(match selector {
        MaskSelector::All => vec![true; k],
        MaskSelector::FinalLayer => {
            let mut mask = vec![false; k];
            for i in spec.final_layer_range() {
                mask[i] = true;
            }
            mask
        }
        MaskSelector::Layers(layers) => {
            let mut mask = vec![false; k];
            for &l in layers {
                if l >= spec.depth() {
                    return Err(Error::Config(format!(
                        "mask names layer {l}, network has layers 0..{}",
                        spec.depth()
                    )));
                }
                for i in spec.layer_range(l) {
                    mask[i] = true;
                }
            }
            mask
        }
    })
}

/// Independent linear/polynomial fits, one coefficient vector per
/// predicted parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFamily {
    pub feature_spec: FeatureMapSpec,
    /// Predicted parameter indices, ascending; aligned with `coefficients`.
    pub predicted: Vec<usize>,
    pub coefficients: Vec<Vec<f64>>,
    /// Slope t-statistics per predicted parameter (recorded when pruning
    /// ran; intercept position holds 0).
    pub t_stats: Option<Vec<Vec<f64>>>,
}

/// One shared network with a linear head per predicted parameter,
/// trained on per-head standardized weight anomalies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnFamily {
    pub predicted: Vec<usize>,
    /// Anomaly mean per predicted parameter.
    pub head_mean: Vec<f64>,
    /// Anomaly standard deviation per predicted parameter; 0 marks a
    /// constant head served without the network.
    pub head_sd: Vec<f64>,
    /// Positions within `predicted` that have live (sd > 0) heads, in
    /// network output order.
    pub live_heads: Vec<usize>,
    /// Shared network; absent when every head is constant.
    pub net: Option<ModelState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum RegressionFamily {
    Linear(LinearFamily),
    SharedNn(NnFamily),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightRegressionModel {
    pub family: RegressionFamily,
    /// Per-parameter flag: true = predicted by the regression.
    pub mask: Vec<bool>,
    /// Parent parameters served for unmasked entries.
    pub baseline: ParameterVector,
    /// Frozen predictor standardization (from the training predictor
    /// matrix); applied to every incoming row when present.
    pub standardizer: Option<Standardizer>,
    pub predictor_names: Vec<String>,
}

impl WeightRegressionModel {
    pub fn predictor_width(&self) -> usize {
        self.predictor_names.len()
    }

    /// Parameter indices the fit predicts (ascending).
    pub fn predicted_indices(&self) -> &[usize] {
        match &self.family {
            RegressionFamily::Linear(f) => &f.predicted,
            RegressionFamily::SharedNn(f) => &f.predicted,
        }
    }
}

/// Evaluate the regression at one predictor row (raw, pre-standardized
/// units). Masked parameters come from the fit; everything else is the
/// baseline value, bit for bit.
pub fn predict_params(model: &WeightRegressionModel, r_t: &[f64]) -> Result<ParameterVector> {
    if r_t.len() != model.predictor_width() {
        return Err(Error::Dimension(format!(
            "predictor row has {} values, regression was fitted on {}",
            r_t.len(),
            model.predictor_width()
        )));
    }
    let mut out = model.baseline.clone();
    match &model.family {
        RegressionFamily::Linear(fam) => {
            let row = if fam.feature_spec.standardize_before {
                match &model.standardizer {
                    Some(s) => s.apply(r_t)?,
                    None => r_t.to_vec(),
                }
            } else {
                r_t.to_vec()
            };
            let feats = poly_features(&row, &fam.feature_spec);
            for (pos, &k) in fam.predicted.iter().enumerate() {
                let beta = &fam.coefficients[pos];
                let v: f64 = beta.iter().zip(&feats).map(|(b, f)| b * f).sum();
                if !v.is_finite() {
                    return Err(Error::NonFinitePrediction {
                        param_index: k,
                        predictors: r_t.to_vec(),
                    });
                }
                out.values[k] = v;
            }
        }
        RegressionFamily::SharedNn(fam) => {
            let row = match &model.standardizer {
                Some(s) => s.apply(r_t)?,
                None => r_t.to_vec(),
            };
            let net_out: Vec<f64> = match &fam.net {
                Some(net) => net.forward(&row)?,
                None => Vec::new(),
            };
            let mut live_pos = vec![usize::MAX; fam.predicted.len()];
            for (o, &h) in fam.live_heads.iter().enumerate() {
                live_pos[h] = o;
            }
            for (h, &k) in fam.predicted.iter().enumerate() {
                let anomaly = if fam.head_sd[h] > 0.0 {
                    fam.head_mean[h] + fam.head_sd[h] * net_out[live_pos[h]]
                } else {
                    fam.head_mean[h]
                };
                let v = model.baseline.values[k] + anomaly;
                if !v.is_finite() {
                    return Err(Error::NonFinitePrediction {
                        param_index: k,
                        predictors: r_t.to_vec(),
                    });
                }
                out.values[k] = v;
            }
        }
    }
    Ok(out)
}

/// Wrap a predicted parameter vector into a runnable model with the
/// parent's architecture.
pub fn make_child(parent: &ModelState, predicted: ParameterVector) -> Result<ModelState> {
    if predicted.len() != parent.param_count() {
        return Err(Error::Dimension(format!(
            "predicted vector has {} values, parent has {}",
            predicted.len(),
            parent.param_count()
        )));
    }
    Ok(ModelState {
        spec: parent.spec.clone(),
        params: predicted,
        trainable_mask: parent.trainable_mask.clone(),
    })
}

/// Predict-and-wrap in one step.
pub fn predict_child(
    model: &WeightRegressionModel,
    parent: &ModelState,
    r_t: &[f64],
) -> Result<ModelState> {
    make_child(parent, predict_params(model, r_t)?)
}

// ---------------------------------------------------------------------
// Persistence. The baseline is referenced by checksum rather than
// embedded: loading requires the parent model and verifies the hash.

fn baseline_sha256(values: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

#[derive(Serialize, Deserialize)]
struct RegressionFile {
    format: String,
    #[serde(flatten)]
    family: RegressionFamily,
    mask: Vec<bool>,
    standardizer: Option<Standardizer>,
    predictor_names: Vec<String>,
    baseline_sha256: String,
    baseline_len: usize,
}

const REGRESSION_FORMAT: &str = "weightcast/regression-v1";

pub fn save_regression(path: &Path, model: &WeightRegressionModel) -> Result<()> {
    let file = RegressionFile {
        format: REGRESSION_FORMAT.into(),
        family: model.family.clone(),
        mask: model.mask.clone(),
        standardizer: model.standardizer.clone(),
        predictor_names: model.predictor_names.clone(),
        baseline_sha256: baseline_sha256(&model.baseline.values),
        baseline_len: model.baseline.len(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &file)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Load a regression and re-attach the baseline from `parent`, verifying
/// the stored checksum so a mismatched parent is rejected loudly.
pub fn load_regression(path: &Path, parent: &ModelState) -> Result<WeightRegressionModel> {
    let file: RegressionFile = serde_json::from_reader(BufReader::new(
        File::open(path).map_err(|e| Error::Artifact {
            path: path.to_path_buf(),
            message: format!("cannot open regression: {e}"),
        })?,
    ))?;
    if file.format != REGRESSION_FORMAT {
        return Err(Error::Artifact {
            path: path.to_path_buf(),
            message: format!("unsupported regression format {:?}", file.format),
        });
    }
    let have = baseline_sha256(&parent.params.values);
    if have != file.baseline_sha256 || parent.param_count() != file.baseline_len {
        return Err(Error::Artifact {
            path: path.to_path_buf(),
            message: format!(
                "regression was fitted against a different parent \
                 (baseline checksum {} != {have})",
                file.baseline_sha256
            ),
        });
    }
    if file.mask.len() != parent.param_count() {
        return Err(Error::Dimension(
            "regression mask length differs from parent parameter count".into(),
        ));
    }
    Ok(WeightRegressionModel {
        family: file.family,
        mask: file.mask,
        baseline: parent.params.clone(),
        standardizer: file.standardizer,
        predictor_names: file.predictor_names,
    })
}
