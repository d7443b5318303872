//! Low-dimensional predictors for the weight regressions: EOF principal
//! components of a field, or raw input columns, with optional frozen
//! per-column standardization and polynomial feature maps.

mod eof;
mod features;

pub use eof::{fit_eof, EofBasis};
pub use features::{feature_names, poly_feature_len, poly_features, FeatureMapSpec};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::stats::{mean, sample_sd};

/// Per-column affine transform fitted once on training rows and then
/// frozen: out-of-distribution rows are transformed with the stored
/// (mean, sd), never refitted. Constant columns (sd = 0) are centered
/// only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map(|r| r.len()).ok_or_else(|| {
            Error::Dimension("cannot fit a standardizer on zero rows".into())
        })?;
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Dimension("ragged rows in standardizer fit".into()));
        }
        let mut means = Vec::with_capacity(width);
        let mut sds = Vec::with_capacity(width);
        let mut col = vec![0.0; rows.len()];
        for j in 0..width {
            for (i, r) in rows.iter().enumerate() {
                col[i] = r[j];
            }
            means.push(mean(&col));
            sds.push(sample_sd(&col));
        }
        Ok(Standardizer { mean: means, sd: sds })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.width() {
            return Err(Error::Dimension(format!(
                "standardizer fitted on {} columns, row has {}",
                self.width(),
                row.len()
            )));
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { v - m })
            .collect())
    }

    /// Invert `apply` (used for reading model outputs back in data units).
    pub fn invert(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.width() {
            return Err(Error::Dimension(format!(
                "standardizer fitted on {} columns, row has {}",
                self.width(),
                row.len()
            )));
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| if *s > 0.0 { v * s + m } else { v + m })
            .collect())
    }
}

/// Predictor rows (raw, unstandardized) plus the frozen standardization
/// fitted on them. One row per training episode / sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorMatrix {
    pub rows: Vec<Vec<f64>>,
    pub names: Vec<String>,
    pub standardizer: Option<Standardizer>,
}

impl PredictorMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>, names: Vec<String>, standardize: bool) -> Result<Self> {
        let width = rows.first().map(|r| r.len()).ok_or_else(|| {
            Error::Dimension("predictor matrix needs at least one row".into())
        })?;
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Dimension("ragged predictor rows".into()));
        }
        if names.len() != width {
            return Err(Error::Dimension(format!(
                "{} names for {width} predictor columns",
                names.len()
            )));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("predictor matrix".into()));
        }
        let standardizer = if standardize { Some(Standardizer::fit(&rows)?) } else { None };
        Ok(PredictorMatrix { rows, names, standardizer })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    /// Transform any row (training or OOD) with the frozen stats; identity
    /// when standardization is off.
    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>> {
        match &self.standardizer {
            Some(s) => s.apply(row),
            None => {
                if row.len() != self.width() {
                    return Err(Error::Dimension(format!(
                        "predictor row has {} values, expected {}",
                        row.len(),
                        self.width()
                    )));
                }
                Ok(row.to_vec())
            }
        }
    }

    pub fn transformed_row(&self, i: usize) -> Result<Vec<f64>> {
        self.transform(&self.rows[i])
    }
}

/// Predictor rows taken directly from named dataset columns.
pub fn raw_predictors(ds: &Dataset, columns: &[String], standardize: bool) -> Result<PredictorMatrix> {
    if columns.is_empty() {
        return Err(Error::Config("no predictor columns listed".into()));
    }
    let cols: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| ds.column(c))
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = (0..ds.len())
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect();
    PredictorMatrix::from_rows(rows, columns.to_vec(), standardize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn standardized_training_columns_have_zero_mean_unit_sd() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![i as f64, 100.0 - 3.0 * i as f64, 7.0])
            .collect();
        let pm = PredictorMatrix::from_rows(
            rows.clone(),
            vec!["a".into(), "b".into(), "c".into()],
            true,
        )
        .unwrap();
        let std_rows: Vec<Vec<f64>> =
            (0..pm.len()).map(|i| pm.transformed_row(i).unwrap()).collect();
        for j in 0..2 {
            let col: Vec<f64> = std_rows.iter().map(|r| r[j]).collect();
            assert!(stats::mean(&col).abs() < 1e-12, "column {j} mean");
            assert!((stats::sample_sd(&col) - 1.0).abs() < 1e-12, "column {j} sd");
        }
        // constant column: centered to exactly zero, not divided
        assert!(std_rows.iter().all(|r| r[2] == 0.0));
    }

    #[test]
    fn ood_rows_use_frozen_stats() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let pm = PredictorMatrix::from_rows(rows, vec!["x".into()], true).unwrap();
        let s = pm.standardizer.as_ref().unwrap();
        // mean 4.5, sd of 0..9
        let sd = s.sd[0];
        let t = pm.transform(&[104.5]).unwrap();
        assert!((t[0] - 100.0 / sd).abs() < 1e-12);
        // and invert returns the original
        let back = s.invert(&t).unwrap();
        assert!((back[0] - 104.5).abs() < 1e-12);
    }

    #[test]
    fn raw_predictors_pull_named_columns() {
        use crate::data::{gen_toy_eos, EosConfig};
        let ds = gen_toy_eos(&EosConfig {
            n_lat: 2,
            n_lon: 2,
            n_depth: 3,
            ..EosConfig::default()
        })
        .unwrap();
        let pm = raw_predictors(&ds, &["temp".into(), "depth".into()], false).unwrap();
        assert_eq!(pm.len(), ds.len());
        assert_eq!(pm.rows[0][0], ds.samples[0].input[1]);
        assert_eq!(pm.rows[5][1], ds.samples[5].key);
        assert!(raw_predictors(&ds, &["nope".into()], false).is_err());
    }

    #[test]
    fn standardize_then_transform_is_deterministic() {
        let rows: Vec<Vec<f64>> = (0..25).map(|i| vec![(i as f64).sin(), i as f64]).collect();
        let a = PredictorMatrix::from_rows(rows.clone(), vec!["s".into(), "i".into()], true)
            .unwrap();
        let b = PredictorMatrix::from_rows(rows, vec!["s".into(), "i".into()], true).unwrap();
        assert_eq!(a, b);
    }
}
