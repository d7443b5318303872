//! Independent least-squares fits, one per predicted parameter. All fits
//! share a single design matrix, so the normal matrix is factorized once
//! and each parameter costs one triangular solve.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::exec;
use crate::predictors::{poly_feature_len, poly_features, FeatureMapSpec, PredictorMatrix};
use crate::sensitivity::SensitivityMatrix;

use super::{LinearFamily, RegressionFamily, WeightRegressionModel};

/// Drop slopes whose fitted t-statistic falls below the threshold, then
/// refit the intercept so the surviving fit still passes through the
/// feature centroid.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub enabled: bool,
    pub t_threshold: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig { enabled: false, t_threshold: 2.0 }
    }
}

fn feature_row(
    predictors: &PredictorMatrix,
    i: usize,
    spec: &FeatureMapSpec,
) -> Result<Vec<f64>> {
    let raw = &predictors.rows[i];
    let row = if spec.standardize_before {
        match &predictors.standardizer {
            Some(s) => s.apply(raw)?,
            None => raw.clone(),
        }
    } else {
        raw.clone()
    };
    Ok(poly_features(&row, spec))
}

/// Fit one ridge-regularized least-squares model per masked parameter
/// against the episode predictor rows. The targets are the episodes'
/// total parameter values; the penalty `ridge_lambda` applies to slopes
/// only, never the intercept, so `ridge_lambda = 0` is plain OLS.
pub fn fit_linear(
    sens: &SensitivityMatrix,
    predictors: &PredictorMatrix,
    mask: Vec<bool>,
    feature_spec: FeatureMapSpec,
    ridge_lambda: f64,
    prune: PruneConfig,
) -> Result<WeightRegressionModel> {
    sens.validate()?;
    feature_spec.validate()?;
    feature_spec.warn_if_high_degree();
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
    if !(ridge_lambda.is_finite() && ridge_lambda >= 0.0) {
        return Err(Error::Config("ridge_lambda must be finite and >= 0".into()));
    }

    let n = sens.n_episodes();
    let f = poly_feature_len(predictors.width(), &feature_spec);
    let predicted: Vec<usize> =
        (0..mask.len()).filter(|&k| mask[k]).collect();
    if predicted.is_empty() {
        log::warn!("regression mask selects no parameters; children will equal the parent");
        return Ok(WeightRegressionModel {
            family: RegressionFamily::Linear(LinearFamily {
                feature_spec,
                predicted,
                coefficients: Vec::new(),
                t_stats: None,
            }),
            mask,
            baseline: sens.baseline.clone(),
            standardizer: predictors.standardizer.clone(),
            predictor_names: predictors.names.clone(),
        });
    }

    let x: Vec<Vec<f64>> = (0..n)
        .map(|i| feature_row(predictors, i, &feature_spec))
        .collect::<Result<_>>()?;

    // Normal matrix XtX + lambda*D with D zero on the intercept.
    let mut a = DMatrix::<f64>::zeros(f, f);
    for row in &x {
        for j in 0..f {
            for l in j..f {
                a[(j, l)] += row[j] * row[l];
            }
        }
    }
    for j in 0..f {
        for l in 0..j {
            a[(j, l)] = a[(l, j)];
        }
    }
    for j in 1..f {
        a[(j, j)] += ridge_lambda;
    }

    let singular = Error::SingularNormalMatrix { param_index: predicted[0] };
    let chol: Cholesky<f64, Dyn> = match Cholesky::new(a.clone()) {
        Some(c) => c,
        None => return Err(singular),
    };
    // Rounding can let a rank-deficient matrix through factorization with
    // a tiny pivot; reject those too instead of returning garbage fits.
    let max_diag = (0..f).map(|j| a[(j, j)]).fold(0.0_f64, f64::max);
    for j in 0..f {
        let pivot = chol.l_dirty()[(j, j)];
        if !(pivot * pivot > max_diag * 1e-14) {
            return Err(singular);
        }
    }

    let prune_dof = n.saturating_sub(f);
    let prune_active = prune.enabled && prune_dof > 0;
    if prune.enabled && !prune_active {
        log::warn!(
            "skipping t-statistic pruning: {n} episodes leave no residual \
             degrees of freedom for {f} features"
        );
    }
    // Diagonal of the inverse normal matrix, shared by every parameter's
    // standard errors.
    let ainv_diag: Vec<f64> = if prune_active {
        let mut ident = DMatrix::<f64>::identity(f, f);
        chol.solve_mut(&mut ident);
        (0..f).map(|j| ident[(j, j)]).collect()
    } else {
        Vec::new()
    };
    let col_means: Vec<f64> = (0..f)
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();

    let fits: Vec<Result<(Vec<f64>, Vec<f64>)>> = exec::map_indices(predicted.len(), |pos| {
        let k = predicted[pos];
        let y = sens.total_column(k);
        let mut xty = DVector::<f64>::zeros(f);
        for (row, &yi) in x.iter().zip(&y) {
            for j in 0..f {
                xty[j] += row[j] * yi;
            }
        }
        let beta_v = chol.solve(&xty);
        let mut beta: Vec<f64> = beta_v.iter().copied().collect();
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::SingularNormalMatrix { param_index: k });
        }
        let mut t_stats = vec![0.0; f];
        if prune_active {
            let rss: f64 = x
                .iter()
                .zip(&y)
                .map(|(row, &yi)| {
                    let fit: f64 = row.iter().zip(&beta).map(|(r, b)| r * b).sum();
                    (yi - fit) * (yi - fit)
                })
                .sum();
            let s2 = rss / prune_dof as f64;
            let mut any_pruned = false;
            for j in 1..f {
                let se = (s2 * ainv_diag[j]).sqrt();
                let t = if se > 0.0 {
                    beta[j] / se
                } else if beta[j] == 0.0 {
                    0.0
                } else {
                    f64::INFINITY * beta[j].signum()
                };
                t_stats[j] = t;
                if t.abs() < prune.t_threshold {
                    beta[j] = 0.0;
                    any_pruned = true;
                }
            }
            if any_pruned {
                let y_mean = y.iter().sum::<f64>() / n as f64;
                let kept: f64 = (1..f).map(|j| beta[j] * col_means[j]).sum();
                beta[0] = y_mean - kept;
            }
        }
        Ok((beta, t_stats))
    });

    let mut coefficients = Vec::with_capacity(predicted.len());
    let mut t_stats = Vec::with_capacity(predicted.len());
    for fit in fits {
        let (beta, t) = fit?;
        coefficients.push(beta);
        t_stats.push(t);
    }

    Ok(WeightRegressionModel {
        family: RegressionFamily::Linear(LinearFamily {
            feature_spec,
            predicted,
            coefficients,
            t_stats: if prune_active { Some(t_stats) } else { None },
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

    fn raw_spec(degree: usize) -> FeatureMapSpec {
        FeatureMapSpec { degree, include_interactions: true, standardize_before: false }
    }

    #[test]
    fn recovers_exact_line() {
        let sens = sens_from(vec![vec![1.0], vec![3.0], vec![5.0]], vec![0.0]);
        let pred = PredictorMatrix::from_rows(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec!["r".into()],
            false,
        )
        .unwrap();
        let model = fit_linear(
            &sens,
            &pred,
            vec![true],
            raw_spec(1),
            0.0,
            PruneConfig::default(),
        )
        .unwrap();
        let RegressionFamily::Linear(fam) = &model.family else { panic!() };
        assert!((fam.coefficients[0][0] - 1.0).abs() < 1e-10);
        assert!((fam.coefficients[0][1] - 2.0).abs() < 1e-10);
        let out = predict_params(&model, &[3.0]).unwrap();
        assert!((out.values[0] - 7.0).abs() < 1e-9);
    }

    #[test]
    fn constant_target_is_intercept_only() {
        let sens = sens_from(vec![vec![4.2], vec![4.2], vec![4.2]], vec![0.0]);
        let pred = PredictorMatrix::from_rows(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec!["r".into()],
            false,
        )
        .unwrap();
        let model = fit_linear(
            &sens,
            &pred,
            vec![true],
            raw_spec(1),
            1e-8,
            PruneConfig::default(),
        )
        .unwrap();
        let RegressionFamily::Linear(fam) = &model.family else { panic!() };
        assert!((fam.coefficients[0][0] - 4.2).abs() < 1e-12);
        assert!(fam.coefficients[0][1].abs() < 1e-12);
    }

    #[test]
    fn recovers_multivariate_quadratic() {
        // y = 0.5 + 1.5 a - 2 b + 0.25 a^2 + 3 b^2 - a b, noiseless.
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for i in 0..20 {
            let a = (i as f64) * 0.3 - 2.0;
            let b = ((i * 7 + 3) % 11) as f64 * 0.25 - 1.0;
            rows.push(vec![a, b]);
            ys.push(vec![
                0.5 + 1.5 * a - 2.0 * b + 0.25 * a * a + 3.0 * b * b - a * b,
            ]);
        }
        let sens = sens_from(ys, vec![0.0]);
        let pred =
            PredictorMatrix::from_rows(rows, vec!["a".into(), "b".into()], false).unwrap();
        let model = fit_linear(
            &sens,
            &pred,
            vec![true],
            raw_spec(2),
            0.0,
            PruneConfig::default(),
        )
        .unwrap();
        let RegressionFamily::Linear(fam) = &model.family else { panic!() };
        // feature order: 1, a, b, a^2, b^2, ab
        let want = [0.5, 1.5, -2.0, 0.25, 3.0, -1.0];
        for (got, want) in fam.coefficients[0].iter().zip(want) {
            assert!((got - want).abs() < 1e-8, "got {got}, want {want}");
        }
    }

    #[test]
    fn residuals_orthogonal_and_fit_passes_centroid() {
        // Unrealizable target: residuals are nonzero but must be
        // orthogonal to every feature column, and the fitted values must
        // average to the target mean.
        let rows: Vec<Vec<f64>> = (0..15)
            .map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos()])
            .collect();
        let ys: Vec<Vec<f64>> = (0..15)
            .map(|i| vec![((i * i) % 7) as f64 - 3.0])
            .collect();
        let sens = sens_from(ys.clone(), vec![0.0]);
        let pred = PredictorMatrix::from_rows(
            rows.clone(),
            vec!["a".into(), "b".into()],
            false,
        )
        .unwrap();
        let model = fit_linear(
            &sens,
            &pred,
            vec![true],
            raw_spec(1),
            0.0,
            PruneConfig::default(),
        )
        .unwrap();
        let RegressionFamily::Linear(fam) = &model.family else { panic!() };
        let beta = &fam.coefficients[0];
        let feats: Vec<Vec<f64>> =
            rows.iter().map(|r| poly_features(r, &fam.feature_spec)).collect();
        let resid: Vec<f64> = feats
            .iter()
            .zip(&ys)
            .map(|(f, y)| y[0] - f.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        for j in 0..3 {
            let dot: f64 = feats.iter().zip(&resid).map(|(f, r)| f[j] * r).sum();
            assert!(dot.abs() < 1e-8, "column {j} not orthogonal: {dot}");
        }
        let y_mean = ys.iter().map(|y| y[0]).sum::<f64>() / 15.0;
        let fit_mean = feats
            .iter()
            .map(|f| f.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>())
            .sum::<f64>()
            / 15.0;
        assert!((fit_mean - y_mean).abs() < 1e-10);
    }

    #[test]
    fn tiny_ridge_matches_ols() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 * 0.5 - 3.0]).collect();
        let ys: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| vec![1.0 - 0.8 * r[0] + 0.1 * (r[0] * 3.0).sin()])
            .collect();
        let sens = sens_from(ys, vec![0.0]);
        let pred = PredictorMatrix::from_rows(rows, vec!["r".into()], false).unwrap();
        let fit = |lambda| {
            let m = fit_linear(
                &sens,
                &pred,
                vec![true],
                raw_spec(1),
                lambda,
                PruneConfig::default(),
            )
            .unwrap();
            let RegressionFamily::Linear(fam) = m.family else { panic!() };
            fam.coefficients[0].clone()
        };
        let ols = fit(0.0);
        let tiny = fit(1e-12);
        for (a, b) in ols.iter().zip(&tiny) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn duplicate_predictors_are_singular_without_ridge() {
        let rows = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        let sens = sens_from(vec![vec![1.0], vec![2.0], vec![3.0]], vec![0.0]);
        let pred =
            PredictorMatrix::from_rows(rows, vec!["a".into(), "b".into()], false).unwrap();
        let err = fit_linear(
            &sens,
            &pred,
            vec![true],
            raw_spec(1),
            0.0,
            PruneConfig::default(),
        )
        .unwrap_err();
        match &err {
            Error::SingularNormalMatrix { param_index } => assert_eq!(*param_index, 0),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(err.to_string().contains("ridge_lambda"));
        // the same fit succeeds once regularized
        fit_linear(&sens, &pred, vec![true], raw_spec(1), 1e-6, PruneConfig::default())
            .unwrap();
    }

    #[test]
    fn unmasked_params_served_bit_exact() {
        let baseline = vec![0.1 + 0.2, -7.25, std::f64::consts::PI];
        let rows = vec![
            vec![1.0, 2.0, 3.0],
            vec![2.0, 3.0, 4.0],
            vec![3.0, 5.0, 6.0],
            vec![4.0, 6.0, 9.0],
        ];
        let sens = sens_from(rows, baseline.clone());
        let pred = PredictorMatrix::from_rows(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            vec!["r".into()],
            false,
        )
        .unwrap();
        let model = fit_linear(
            &sens,
            &pred,
            vec![true, false, true],
            raw_spec(1),
            0.0,
            PruneConfig::default(),
        )
        .unwrap();
        let out = predict_params(&model, &[1.5]).unwrap();
        assert_eq!(out.values[1].to_bits(), baseline[1].to_bits());
        assert_ne!(out.values[0].to_bits(), baseline[0].to_bits());
    }

    #[test]
    fn pruning_drops_weak_slope_and_refits_intercept() {
        // y depends on the first predictor plus noise; the second is
        // irrelevant, so its slope should fail the t-test and vanish.
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for i in 0..30 {
            let a = i as f64 * 0.2;
            let b = ((i * 13 + 5) % 17) as f64 * 0.3 - 2.0;
            let noise = (((i * 29 + 11) % 23) as f64 - 11.0) * 0.05;
            rows.push(vec![a, b]);
            ys.push(vec![3.0 + 5.0 * a + noise]);
        }
        let sens = sens_from(ys.clone(), vec![0.0]);
        let pred = PredictorMatrix::from_rows(
            rows.clone(),
            vec!["a".into(), "b".into()],
            false,
        )
        .unwrap();
        let prune = PruneConfig { enabled: true, t_threshold: 2.0 };
        let model =
            fit_linear(&sens, &pred, vec![true], raw_spec(1), 0.0, prune).unwrap();
        let RegressionFamily::Linear(fam) = &model.family else { panic!() };
        let beta = &fam.coefficients[0];
        let t = &fam.t_stats.as_ref().unwrap()[0];
        assert_eq!(beta[2], 0.0, "irrelevant slope should be pruned, t={}", t[2]);
        assert!(t[1].abs() > 2.0);
        assert!(t[2].abs() < 2.0);
        // refit intercept: fitted plane still passes through (x-bar, y-bar)
        let y_mean = ys.iter().map(|y| y[0]).sum::<f64>() / 30.0;
        let a_mean = rows.iter().map(|r| r[0]).sum::<f64>() / 30.0;
        assert!((beta[0] + beta[1] * a_mean - y_mean).abs() < 1e-12);
    }

    #[test]
    fn zero_threshold_prunes_nothing() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
        let ys: Vec<Vec<f64>> = (0..10).map(|i| vec![(i % 4) as f64 - 1.5]).collect();
        let sens = sens_from(ys, vec![0.0]);
        let pred = PredictorMatrix::from_rows(
            rows,
            vec!["a".into(), "b".into()],
            false,
        )
        .unwrap();
        let plain = fit_linear(
            &sens,
            &pred,
            vec![true],
            raw_spec(1),
            0.0,
            PruneConfig::default(),
        )
        .unwrap();
        let pruned = fit_linear(
            &sens,
            &pred,
            vec![true],
            raw_spec(1),
            0.0,
            PruneConfig { enabled: true, t_threshold: 0.0 },
        )
        .unwrap();
        let RegressionFamily::Linear(a) = &plain.family else { panic!() };
        let RegressionFamily::Linear(b) = &pruned.family else { panic!() };
        assert_eq!(a.coefficients, b.coefficients);
        assert!(b.t_stats.is_some());
    }

    #[test]
    fn pruning_skipped_without_residual_dof() {
        // two rows, two features: saturated fit, nothing to test against
        let sens = sens_from(vec![vec![1.0], vec![2.0]], vec![0.0]);
        let pred = PredictorMatrix::from_rows(
            vec![vec![0.0], vec![1.0]],
            vec!["r".into()],
            false,
        )
        .unwrap();
        let model = fit_linear(
            &sens,
            &pred,
            vec![true],
            raw_spec(1),
            0.0,
            PruneConfig { enabled: true, t_threshold: 2.0 },
        )
        .unwrap();
        let RegressionFamily::Linear(fam) = &model.family else { panic!() };
        assert!(fam.t_stats.is_none());
        assert!((fam.coefficients[0][0] - 1.0).abs() < 1e-10);
        assert!((fam.coefficients[0][1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn standardized_features_predict_in_raw_units() {
        // standardization is an internal detail: predictions must agree
        // with the raw-unit fit on realizable data
        let rows: Vec<Vec<f64>> = (0..9).map(|i| vec![10.0 + i as f64 * 5.0]).collect();
        let ys: Vec<Vec<f64>> = rows.iter().map(|r| vec![0.3 * r[0] - 2.0]).collect();
        let sens = sens_from(ys, vec![0.0]);
        let pred_std =
            PredictorMatrix::from_rows(rows.clone(), vec!["r".into()], true).unwrap();
        let spec = FeatureMapSpec { degree: 1, include_interactions: true, standardize_before: true };
        let model =
            fit_linear(&sens, &pred_std, vec![true], spec, 0.0, PruneConfig::default())
                .unwrap();
        for r in [0.0, 25.0, 80.0] {
            let out = predict_params(&model, &[r]).unwrap();
            assert!(
                (out.values[0] - (0.3 * r - 2.0)).abs() < 1e-9,
                "at {r}: {}",
                out.values[0]
            );
        }
    }

    #[test]
    fn dimension_and_config_errors() {
        let sens = sens_from(vec![vec![1.0], vec![2.0]], vec![0.0]);
        let pred = PredictorMatrix::from_rows(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec!["r".into()],
            false,
        )
        .unwrap();
        // row count mismatch
        assert!(fit_linear(
            &sens,
            &pred,
            vec![true],
            raw_spec(1),
            0.0,
            PruneConfig::default()
        )
        .is_err());
        // mask length mismatch
        let pred2 = PredictorMatrix::from_rows(
            vec![vec![0.0], vec![1.0]],
            vec!["r".into()],
            false,
        )
        .unwrap();
        assert!(fit_linear(
            &sens,
            &pred2,
            vec![true, true],
            raw_spec(1),
            0.0,
            PruneConfig::default()
        )
        .is_err());
    }

    #[test]
    fn all_false_mask_yields_pure_baseline_children() {
        let sens = sens_from(vec![vec![1.0], vec![2.0]], vec![0.625]);
        let pred = PredictorMatrix::from_rows(
            vec![vec![0.0], vec![1.0]],
            vec!["r".into()],
            false,
        )
        .unwrap();
        let model = fit_linear(
            &sens,
            &pred,
            vec![false],
            raw_spec(1),
            0.0,
            PruneConfig::default(),
        )
        .unwrap();
        let out = predict_params(&model, &[42.0]).unwrap();
        assert_eq!(out.values[0].to_bits(), 0.625_f64.to_bits());
    }
}
