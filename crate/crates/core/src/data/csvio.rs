//! Dataset CSV interchange. Layout: key column, then input features,
//! then targets, then aux columns. Values print as the shortest decimal
//! that round-trips the f64, so a write/read cycle is value-exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Dataset, DatasetMeta, Sample};

/// Column roles for reading a dataset out of a CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub key_col: String,
    pub input_cols: Vec<String>,
    pub target_cols: Vec<String>,
    #[serde(default)]
    pub aux_cols: Vec<String>,
    /// Declare the file ordered by key (validated on load).
    #[serde(default)]
    pub ordered: bool,
}

impl CsvSchema {
    pub fn for_dataset(meta: &DatasetMeta, aux_cols: Vec<String>) -> Self {
        CsvSchema {
            key_col: meta.key_name.clone(),
            input_cols: meta.feature_names.clone(),
            target_cols: meta.target_names.clone(),
            aux_cols,
            ordered: meta.ordered,
        }
    }
}

pub fn write_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let file = File::create(path)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let aux_names: Vec<String> = ds
        .samples
        .first()
        .map(|s| s.aux.keys().cloned().collect())
        .unwrap_or_default();
    let mut header = vec![ds.meta.key_name.clone()];
    header.extend(ds.meta.feature_names.iter().cloned());
    header.extend(ds.meta.target_names.iter().cloned());
    header.extend(aux_names.iter().cloned());
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for s in &ds.samples {
        record.clear();
        record.push(s.key.to_string());
        record.extend(s.input.iter().map(|v| v.to_string()));
        record.extend(s.target.iter().map(|v| v.to_string()));
        for name in &aux_names {
            let v = s.aux.get(name).ok_or_else(|| {
                Error::MissingColumn(format!("aux column {name} missing from a sample"))
            })?;
            record.push(v.to_string());
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::Artifact {
        path: path.to_path_buf(),
        message: format!("cannot open csv: {e}"),
    })?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let headers = reader.headers()?.clone();
    let col = |name: &String| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.clone()))
    };
    let key_idx = col(&schema.key_col)?;
    let input_idx: Vec<usize> = schema.input_cols.iter().map(col).collect::<Result<_>>()?;
    let target_idx: Vec<usize> = schema.target_cols.iter().map(col).collect::<Result<_>>()?;
    let aux_idx: Vec<usize> = schema.aux_cols.iter().map(col).collect::<Result<_>>()?;

    let parse = |record: &csv::StringRecord, idx: usize, row: usize, name: &str| -> Result<f64> {
        let raw = record.get(idx).ok_or_else(|| Error::CsvCell {
            path: path.to_path_buf(),
            row,
            column: name.to_string(),
            message: "missing field".into(),
        })?;
        raw.trim().parse::<f64>().map_err(|e| Error::CsvCell {
            path: path.to_path_buf(),
            row,
            column: name.to_string(),
            message: format!("{e} (value {raw:?})"),
        })
    };

    let mut samples = Vec::new();
    for (row0, record) in reader.records().enumerate() {
        let record = record?;
        let row = row0 + 2; // 1-based, counting the header line
        let key = parse(&record, key_idx, row, &schema.key_col)?;
        let input = input_idx
            .iter()
            .zip(&schema.input_cols)
            .map(|(&i, n)| parse(&record, i, row, n))
            .collect::<Result<Vec<f64>>>()?;
        let target = target_idx
            .iter()
            .zip(&schema.target_cols)
            .map(|(&i, n)| parse(&record, i, row, n))
            .collect::<Result<Vec<f64>>>()?;
        let mut aux = BTreeMap::new();
        for (&i, n) in aux_idx.iter().zip(&schema.aux_cols) {
            aux.insert(n.clone(), parse(&record, i, row, n)?);
        }
        samples.push(Sample { input, target, key, aux });
    }

    let ds = Dataset {
        samples,
        meta: DatasetMeta {
            feature_names: schema.input_cols.clone(),
            target_names: schema.target_cols.clone(),
            key_name: schema.key_col.clone(),
            ordered: schema.ordered,
        },
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_tipping, TippingConfig};

    #[test]
    fn roundtrip_is_value_exact() {
        let ds = gen_tipping(&TippingConfig {
            t_max: 50,
            tip_center: 30.0,
            field_dim: 5,
            ..TippingConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        write_csv(&path, &ds).unwrap();
        let schema = CsvSchema::for_dataset(&ds.meta, vec![]);
        let back = load_csv(&path, &schema).unwrap();
        assert_eq!(back.meta, ds.meta);
        assert_eq!(back.len(), ds.len());
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            assert_eq!(a.key.to_bits(), b.key.to_bits());
            for (x, y) in a.input.iter().zip(&b.input) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.target.iter().zip(&b.target) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn bad_cell_reports_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,a,y\n1,2.0,3.0\n2,oops,4.0\n").unwrap();
        let schema = CsvSchema {
            key_col: "t".into(),
            input_cols: vec!["a".into()],
            target_cols: vec!["y".into()],
            aux_cols: vec![],
            ordered: true,
        };
        match load_csv(&path, &schema) {
            Err(Error::CsvCell { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "a");
            }
            other => panic!("expected cell error, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_reported_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cols.csv");
        std::fs::write(&path, "t,a\n1,2\n").unwrap();
        let schema = CsvSchema {
            key_col: "t".into(),
            input_cols: vec!["a".into()],
            target_cols: vec!["missing_y".into()],
            aux_cols: vec![],
            ordered: false,
        };
        match load_csv(&path, &schema) {
            Err(Error::MissingColumn(name)) => assert_eq!(name, "missing_y"),
            other => panic!("expected missing column, got {other:?}"),
        }
    }

    #[test]
    fn aux_columns_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("aux.csv");
        std::fs::write(&path, "z,s,rho,lat\n0,34.5,1027.5,-45\n10,34.4,1028.0,-45\n").unwrap();
        let schema = CsvSchema {
            key_col: "z".into(),
            input_cols: vec!["s".into()],
            target_cols: vec!["rho".into()],
            aux_cols: vec!["lat".into()],
            ordered: true,
        };
        let ds = load_csv(&path, &schema).unwrap();
        assert_eq!(ds.samples[1].aux["lat"], -45.0);
        let out = dir.path().join("aux2.csv");
        write_csv(&out, &ds).unwrap();
        let again = load_csv(&out, &schema).unwrap();
        assert_eq!(again, ds);
    }
}
