//! Shared nonlinear regressor: one network maps predictor rows to every
//! predicted parameter at once, with a linear head per parameter.
//!
//! Targets are weight anomalies (episode value minus baseline),
//! standardized per head so every head contributes to the loss at
//! comparable scale regardless of how much its weight actually moved.
//! Heads whose anomalies never vary are served as exact constants and
//! excluded from the network entirely.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{build_network, train, NetworkSpec, OptimizerKind, TrainConfig};
use crate::predictors::PredictorMatrix;
use crate::sensitivity::SensitivityMatrix;
use crate::stats;

use super::{NnFamily, RegressionFamily, WeightRegressionModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnRegressorSpec {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for NnRegressorSpec {
    fn default() -> Self {
        NnRegressorSpec {
            hidden: vec![32, 32],
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl NnRegressorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden layer sizes must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Fit the shared multi-head network on standardized weight anomalies.
pub fn fit_nn_regressor(
    sens: &SensitivityMatrix,
    predictors: &PredictorMatrix,
    mask: Vec<bool>,
    spec: &NnRegressorSpec,
) -> Result<WeightRegressionModel> {
    sens.validate()?;
    spec.validate()?;
    if mask.len() != sens.param_count() {
        return Err(Error::Dimension(format!(
            "mask covers {} parameters, sensitivity matrix has {}",
            mask.len(),
            sens.param_count()
        )));
    }
    if predictors.len() != sens.n_episodes() {
        return Err(Error::Dimension(format!(
            "{} predictor rows for {} episodes",
            predictors.len(),
            sens.n_episodes()
        )));
    }
    if sens.n_episodes() == 0 {
        return Err(Error::Config("cannot fit a regression on zero episodes".into()));
    }
    let predicted: Vec<usize> = (0..mask.len()).filter(|&k| mask[k]).collect();
    if predicted.is_empty() {
        log::warn!("regression mask selects no parameters; children will equal the parent");
    }

    let n = sens.n_episodes();
    let mut head_mean = Vec::with_capacity(predicted.len());
    let mut head_sd = Vec::with_capacity(predicted.len());
    let mut columns = Vec::with_capacity(predicted.len());
    for &k in &predicted {
        let col = sens.anomaly_column(k);
        head_mean.push(stats::mean(&col));
        head_sd.push(if n < 2 { 0.0 } else { stats::sample_sd(&col) });
        columns.push(col);
    }
    let live_heads: Vec<usize> =
        (0..predicted.len()).filter(|&h| head_sd[h] > 0.0).collect();

    let net = if live_heads.is_empty() {
        if !predicted.is_empty() {
            log::warn!(
                "all {} masked parameters have constant anomalies; serving \
                 constants without a network",
                predicted.len()
            );
        }
        None
    } else {
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|i| predictors.transformed_row(i))
            .collect::<Result<_>>()?;
        let targets: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                live_heads
                    .iter()
                    .map(|&h| (columns[h][i] - head_mean[h]) / head_sd[h])
                    .collect()
            })
            .collect();
        let net_spec = NetworkSpec::elu_stack(
            predictors.width(),
            &spec.hidden,
            live_heads.len(),
            spec.seed,
        );
        let init = build_network(&net_spec)?;
        let cfg = TrainConfig {
            epochs: spec.epochs,
            batch_size: spec.batch_size,
            learning_rate: spec.learning_rate,
            optimizer: OptimizerKind::adam(),
            shuffle: true,
            shuffle_seed: spec.seed,
            context: "shared weight regressor".into(),
            ..TrainConfig::default()
        };
        let (fitted, report) = train(&init, &inputs, &targets, &cfg)?;
        log::info!(
            "shared regressor: {} live heads of {}, final loss {:.3e} after {} epochs",
            live_heads.len(),
            predicted.len(),
            report.final_loss,
            report.epochs_run
        );
        Some(fitted)
    };

    Ok(WeightRegressionModel {
        family: RegressionFamily::SharedNn(NnFamily {
            predicted,
            head_mean,
            head_sd,
            live_heads,
            net,
        }),
        mask,
        baseline: sens.baseline.clone(),
        standardizer: predictors.standardizer.clone(),
        predictor_names: predictors.names.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ParameterVector;
    use crate::sensitivity::SensitivityMode;
    use crate::weightreg::predict_params;

    fn sens_from(rows: Vec<Vec<f64>>, baseline: Vec<f64>) -> SensitivityMatrix {
        let n = rows.len();
        SensitivityMatrix {
            mode: SensitivityMode::Reset,
            store_anomalies: false,
            episode_indices: (0..n).collect(),
            episode_keys: (0..n).map(|i| i as f64).collect(),
            rows,
            baseline: ParameterVector::new(baseline),
            failed: vec![],
        }
    }

    #[test]
    fn constant_heads_served_exactly_without_network() {
        // every episode saw the same parameters: anomalies are constant,
        // so the "regression" must return them exactly at any point
        let rows = vec![vec![1.5, -0.25], vec![1.5, -0.25], vec![1.5, -0.25]];
        let sens = sens_from(rows, vec![1.0, 0.75]);
        let pred = PredictorMatrix::from_rows(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec!["r".into()],
            true,
        )
        .unwrap();
        let model = fit_nn_regressor(
            &sens,
            &pred,
            vec![true, true],
            &NnRegressorSpec::default(),
        )
        .unwrap();
        let RegressionFamily::SharedNn(fam) = &model.family else { panic!() };
        assert!(fam.net.is_none());
        assert!(fam.live_heads.is_empty());
        for r in [-5.0, 0.0, 11.0] {
            let out = predict_params(&model, &[r]).unwrap();
            assert!((out.values[0] - 1.5).abs() < 1e-15);
            assert!((out.values[1] + 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn mixed_constant_and_live_heads() {
        // head 0 varies linearly with the predictor, head 1 is frozen
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let r = i as f64 / 39.0;
                vec![0.2 + 0.5 * r, 3.0]
            })
            .collect();
        let preds: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 39.0]).collect();
        let sens = sens_from(rows, vec![0.0, 3.0]);
        let pred = PredictorMatrix::from_rows(preds, vec!["r".into()], true).unwrap();
        let spec = NnRegressorSpec {
            hidden: vec![8],
            epochs: 400,
            batch_size: 8,
            learning_rate: 3e-3,
            seed: 7,
        };
        let model = fit_nn_regressor(&sens, &pred, vec![true, true], &spec).unwrap();
        let RegressionFamily::SharedNn(fam) = &model.family else { panic!() };
        assert_eq!(fam.live_heads, vec![0]);
        assert_eq!(fam.net.as_ref().unwrap().spec.output_dim(), 1);
        // constant head exact everywhere, live head accurate inside the
        // training range
        for r in [0.1, 0.5, 0.9] {
            let out = predict_params(&model, &[r]).unwrap();
            assert!((out.values[1] - 3.0).abs() < 1e-15);
            assert!(
                (out.values[0] - (0.2 + 0.5 * r)).abs() < 0.02,
                "at {r}: {}",
                out.values[0]
            );
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()])
            .collect();
        let preds: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.1]).collect();
        let sens = sens_from(rows.clone(), vec![0.0, 0.0]);
        let pred =
            PredictorMatrix::from_rows(preds.clone(), vec!["r".into()], true).unwrap();
        let spec = NnRegressorSpec {
            hidden: vec![4],
            epochs: 30,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 3,
        };
        let a = fit_nn_regressor(&sens, &pred, vec![true, true], &spec).unwrap();
        let b = fit_nn_regressor(&sens, &pred, vec![true, true], &spec).unwrap();
        let pa = predict_params(&a, &[0.55]).unwrap();
        let pb = predict_params(&b, &[0.55]).unwrap();
        for (x, y) in pa.values.iter().zip(&pb.values) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn unmasked_params_stay_baseline() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![i as f64 * 0.01, 42.0 + i as f64, -1.0])
            .collect();
        let preds: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let baseline = vec![0.0, 40.0, -1.0 + 1e-16];
        let sens = sens_from(rows, baseline.clone());
        let pred = PredictorMatrix::from_rows(preds, vec!["r".into()], true).unwrap();
        let spec = NnRegressorSpec {
            hidden: vec![4],
            epochs: 10,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 0,
        };
        let model =
            fit_nn_regressor(&sens, &pred, vec![true, true, false], &spec).unwrap();
        let out = predict_params(&model, &[4.5]).unwrap();
        assert_eq!(out.values[2].to_bits(), baseline[2].to_bits());
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(NnRegressorSpec { learning_rate: 0.0, ..Default::default() }
            .validate()
            .is_err());
        assert!(NnRegressorSpec { hidden: vec![4, 0], ..Default::default() }
            .validate()
            .is_err());
        assert!(NnRegressorSpec { batch_size: 0, ..Default::default() }
            .validate()
            .is_err());
    }
}
