use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observation: model inputs, regression target(s), an ordering /
/// split key (time, depth, ...), and named auxiliary values that ride
/// along for grouping and reporting (e.g. coordinates).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub key: f64,
    #[serde(default)]
    pub aux: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub key_name: String,
    /// Whether samples are promised to be in non-decreasing key order
    /// (strictly increasing when keys are unique); checked by `validate`.
    pub ordered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn keys(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.key).collect()
    }

    /// Column lookup by name: the key, an input feature, a target, or an
    /// aux value — in that precedence order.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        if name == self.meta.key_name {
            return Ok(self.keys());
        }
        if let Some(i) = self.meta.feature_names.iter().position(|n| n == name) {
            return Ok(self.samples.iter().map(|s| s.input[i]).collect());
        }
        if let Some(i) = self.meta.target_names.iter().position(|n| n == name) {
            return Ok(self.samples.iter().map(|s| s.target[i]).collect());
        }
        if self.samples.first().map_or(false, |s| s.aux.contains_key(name)) {
            return self
                .samples
                .iter()
                .map(|s| {
                    s.aux
                        .get(name)
                        .copied()
                        .ok_or_else(|| Error::MissingColumn(name.to_string()))
                })
                .collect();
        }
        Err(Error::MissingColumn(name.to_string()))
    }

    /// Check structural consistency: uniform widths, finite values, and
    /// monotone keys when the dataset declares itself ordered.
    pub fn validate(&self) -> Result<()> {
        let nf = self.meta.feature_names.len();
        let nt = self.meta.target_names.len();
        for (i, s) in self.samples.iter().enumerate() {
            if s.input.len() != nf {
                return Err(Error::Dimension(format!(
                    "sample {i}: {} input values, {} feature names",
                    s.input.len(),
                    nf
                )));
            }
            if s.target.len() != nt {
                return Err(Error::Dimension(format!(
                    "sample {i}: {} target values, {} target names",
                    s.target.len(),
                    nt
                )));
            }
            if !s.key.is_finite()
                || s.input.iter().any(|v| !v.is_finite())
                || s.target.iter().any(|v| !v.is_finite())
                || s.aux.values().any(|v| !v.is_finite())
            {
                return Err(Error::NonFinite(format!("sample {i}")));
            }
        }
        if self.meta.ordered {
            for w in self.samples.windows(2) {
                if w[0].key > w[1].key {
                    return Err(Error::Config(format!(
                        "dataset declared ordered but key {} precedes {}",
                        w[0].key, w[1].key
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset {
            samples: vec![
                Sample {
                    input: vec![1.0, 2.0],
                    target: vec![3.0],
                    key: 0.0,
                    aux: BTreeMap::from([("lat".to_string(), 45.0)]),
                },
                Sample {
                    input: vec![4.0, 5.0],
                    target: vec![6.0],
                    key: 1.0,
                    aux: BTreeMap::from([("lat".to_string(), 46.0)]),
                },
            ],
            meta: DatasetMeta {
                feature_names: vec!["u".into(), "v".into()],
                target_names: vec!["y".into()],
                key_name: "t".into(),
                ordered: true,
            },
        }
    }

    #[test]
    fn column_precedence_and_lookup() {
        let ds = tiny();
        assert_eq!(ds.column("t").unwrap(), vec![0.0, 1.0]);
        assert_eq!(ds.column("u").unwrap(), vec![1.0, 4.0]);
        assert_eq!(ds.column("y").unwrap(), vec![3.0, 6.0]);
        assert_eq!(ds.column("lat").unwrap(), vec![45.0, 46.0]);
        assert!(ds.column("zzz").is_err());
    }

    #[test]
    fn validate_catches_disorder_and_nan() {
        let mut ds = tiny();
        ds.validate().unwrap();
        ds.samples.swap(0, 1);
        assert!(ds.validate().is_err());
        let mut ds = tiny();
        ds.samples[0].input[0] = f64::INFINITY;
        assert!(ds.validate().is_err());
        let mut ds = tiny();
        ds.samples[1].target = vec![];
        assert!(ds.validate().is_err());
    }
}
