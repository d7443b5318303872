use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ModelState, NetworkSpec, OptimizerKind, ParameterVector};

/// On-disk model snapshot. JSON is used deliberately: serde_json prints
/// the shortest decimal that round-trips each f64, so parameters survive
/// save/load bit-exactly while staying human-inspectable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub spec: NetworkSpec,
    pub params: Vec<f64>,
    pub trainable_mask: Vec<bool>,
    pub optimizer: Option<OptimizerKind>,
    pub learning_rate: Option<f64>,
    /// Seeds that produced this model, keyed by purpose.
    pub seeds: BTreeMap<String, u64>,
}

pub const CHECKPOINT_FORMAT: &str = "weightcast/model-v1";

impl Checkpoint {
    pub fn from_model(
        model: &ModelState,
        optimizer: Option<OptimizerKind>,
        learning_rate: Option<f64>,
        seeds: BTreeMap<String, u64>,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            spec: model.spec.clone(),
            params: model.params.values.clone(),
            trainable_mask: model.trainable_mask.clone(),
            optimizer,
            learning_rate,
            seeds,
        }
    }

    pub fn into_model(self) -> Result<ModelState> {
        let spec = self.spec;
        spec.validate()?;
        if self.params.len() != spec.param_count() {
            return Err(Error::Dimension(format!(
                "checkpoint holds {} parameters, spec needs {}",
                self.params.len(),
                spec.param_count()
            )));
        }
        if self.trainable_mask.len() != self.params.len() {
            return Err(Error::Dimension(
                "checkpoint mask length differs from parameter count".into(),
            ));
        }
        Ok(ModelState {
            spec,
            params: ParameterVector::new(self.params),
            trainable_mask: self.trainable_mask,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, ckpt)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::Artifact {
        path: path.to_path_buf(),
        message: format!("cannot open checkpoint: {e}"),
    })?;
    let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(Error::Artifact {
            path: path.to_path_buf(),
            message: format!(
                "unsupported checkpoint format {:?} (expected {CHECKPOINT_FORMAT:?})",
                ckpt.format
            ),
        });
    }
    Ok(ckpt)
}
