//! Versioned JSON checkpoints and the loss-history CSV.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{ModelConfig, MotionModel};
use crate::trainer::{EpochRecord, TrainConfig};

pub const CHECKPOINT_FORMAT: &str = "timgcn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Hash of the run configuration that produced this checkpoint.
    pub config_hash: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn from_model(model: &MotionModel, train: &TrainConfig, config_hash: impl Into<String>) -> Self {
        let params = model
            .arrays()
            .into_iter()
            .map(|(name, m)| NamedArray {
                name,
                rows: m.rows(),
                cols: m.cols(),
                data: m.as_slice().to_vec(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.into(),
            model: model.config.clone(),
            train: train.clone(),
            params,
        }
    }

    /// Rebuilds the model, checking every array's name and shape.
    pub fn to_model(&self) -> Result<MotionModel> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                self.format, self.version
            )));
        }
        let mut model = MotionModel::zeros(self.model.clone())?;
        let names: Vec<String> = model.arrays().into_iter().map(|(n, _)| n).collect();
        if names.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} arrays, model expects {}",
                self.params.len(),
                names.len()
            )));
        }
        for ((slot, name), saved) in model.arrays_mut().into_iter().zip(&names).zip(&self.params) {
            if &saved.name != name || (saved.rows, saved.cols) != slot.shape() {
                return Err(Error::Config(format!(
                    "checkpoint array `{}` {}x{} does not match `{name}` {}x{}",
                    saved.name,
                    saved.rows,
                    saved.cols,
                    slot.rows(),
                    slot.cols()
                )));
            }
            *slot = Matrix::new(saved.rows, saved.cols, saved.data.clone())?;
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            msg: e.to_string(),
        })
    }
}

/// `epoch,mean_loss,lr` rows.
pub fn format_history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,mean_loss,lr\n");
    for r in history {
        let _ = writeln!(out, "{},{},{}", r.epoch, r.mean_loss, r.lr);
    }
    out
}

pub fn parse_history_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::Numeric(e.to_string()))?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let bad = |what: &str| Error::Parse {
                path: "loss_history.csv".into(),
                line: rec.position().map_or(0, |p| p.line()),
                msg: format!("bad {what}"),
            };
            Ok(EpochRecord {
                epoch: field(0).parse().map_err(|_| bad("epoch"))?,
                mean_loss: field(1).parse().map_err(|_| bad("mean_loss"))?,
                lr: field(2).parse().map_err(|_| bad("lr"))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tim::TimConfig;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let cfg = ModelConfig::new(TimConfig::tim_5_10(), 6, 5, 4, 1).unwrap();
        let model = MotionModel::init(cfg, 3).unwrap();
        let ck = Checkpoint::from_model(&model, &TrainConfig::default(), "abc");
        let back: Checkpoint = serde_json::from_str(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_model().unwrap(), model);
    }

    #[test]
    fn mismatched_arrays_are_rejected() {
        let cfg = ModelConfig::new(TimConfig::tim_5_10(), 6, 5, 4, 1).unwrap();
        let model = MotionModel::init(cfg, 3).unwrap();
        let mut ck = Checkpoint::from_model(&model, &TrainConfig::default(), "abc");
        ck.params[0].name = "nope".into();
        assert!(ck.to_model().is_err());
        let mut ck = Checkpoint::from_model(&model, &TrainConfig::default(), "abc");
        ck.version = 99;
        assert!(ck.to_model().is_err());
    }

    #[test]
    fn history_csv_round_trip() {
        let h = vec![
            EpochRecord {
                epoch: 0,
                mean_loss: 12.5,
                lr: 5e-4,
            },
            EpochRecord {
                epoch: 1,
                mean_loss: 0.1 + 0.2,
                lr: 4.8e-4,
            },
        ];
        let text = format_history_csv(&h);
        assert!(text.starts_with("epoch,mean_loss,lr\n0,12.5,0.0005\n"));
        assert_eq!(parse_history_csv(&text).unwrap(), h);
    }
}
