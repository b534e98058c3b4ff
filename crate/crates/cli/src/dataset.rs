//! Loading motion sequences for a run and cutting them into train/test windows.

use sha2::{Digest, Sha256};
use timgcn_core::data::{center_root, format_motion_csv, load_motion_csv, make_windows, synth_motion};
use timgcn_core::{Matrix, MotionSequence, TrainWindow};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    All,
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            other => Err(format!("unknown split `{other}` (train|test|all)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub sequences: Vec<MotionSequence>,
    pub fps: f64,
    pub coords: usize,
}

impl Dataset {
    /// Reads or generates every sequence the config names, applying root centering.
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let raw = match cfg.data.source.synth_spec() {
            Some(spec) => vec![synth_motion(&spec)?],
            None => cfg
                .data
                .source
                .csv_paths()
                .iter()
                .map(|p| load_motion_csv(cfg.base_dir.join(p)))
                .collect::<timgcn_core::Result<Vec<_>>>()?,
        };
        let seqs = match cfg.data.root_joint {
            Some(r) => raw
                .iter()
                .map(|s| center_root(s, r))
                .collect::<timgcn_core::Result<_>>()?,
            None => raw,
        };
        Self::new(seqs, cfg.data.fps)
    }

    /// Checks that all sequences agree on frame rate and coordinate count.
    pub fn new(sequences: Vec<MotionSequence>, expected_fps: Option<f64>) -> Result<Self> {
        let first = sequences
            .first()
            .ok_or_else(|| CliError::validation("no motion sequences"))?;
        let (fps, coords) = (first.fps, first.coords());
        let mut bad = Vec::new();
        for (i, s) in sequences.iter().enumerate() {
            if s.fps != fps {
                bad.push(format!("sequence {i}: fps {} differs from {fps}", s.fps));
            }
            if s.coords() != coords {
                bad.push(format!("sequence {i}: K={} differs from K={coords}", s.coords()));
            }
        }
        if let Some(want) = expected_fps {
            if want != fps {
                bad.push(format!("data.fps {want} but the data is recorded at {fps} fps"));
            }
        }
        if bad.is_empty() {
            Ok(Self { sequences, fps, coords })
        } else {
            Err(CliError::Validation(bad))
        }
    }

    /// SHA-256 of the canonical CSV text of every sequence.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.sequences {
            h.update(format_motion_csv(s).as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Windows from one split. Each sequence's trailing `test_fraction` of
    /// frames is the test part, so train and test windows never overlap.
    pub fn windows(
        &self,
        split: Split,
        test_fraction: f64,
        input_len: usize,
        pred_len: usize,
        stride: usize,
    ) -> Result<Vec<TrainWindow>> {
        let mut out = Vec::new();
        for (i, s) in self.sequences.iter().enumerate() {
            let part = split_part(s, split, test_fraction);
            let ws = make_windows(&part, input_len, pred_len, stride)
                .map_err(|e| CliError::validation(format!("sequence {i}, {split:?} split: {e}")))?;
            out.extend(ws);
        }
        Ok(out)
    }
}

fn split_part(s: &MotionSequence, split: Split, test_fraction: f64) -> MotionSequence {
    let n = s.frames();
    let n_test = (n as f64 * test_fraction).round() as usize;
    let range = match split {
        Split::Train => 0..n - n_test,
        Split::Test => n - n_test..n,
        Split::All => 0..n,
    };
    let k = s.coords();
    let values = Matrix::from_fn(range.len(), k, |r, c| s.values.get(range.start + r, c));
    MotionSequence { values, ..s.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(frames: usize) -> MotionSequence {
        let m = Matrix::from_fn(frames, 3, |r, c| (r * 3 + c) as f64);
        MotionSequence::with_generic_names(25.0, m).unwrap()
    }

    #[test]
    fn splits_partition_frames() {
        let d = Dataset::new(vec![ramp(100)], None).unwrap();
        let train = d.windows(Split::Train, 0.2, 5, 5, 1).unwrap();
        let test = d.windows(Split::Test, 0.2, 5, 5, 1).unwrap();
        assert_eq!(train.len(), 80 - 10 + 1);
        assert_eq!(test.len(), 20 - 10 + 1);
        let last_train_frame = train.last().unwrap().target.get(0, 9) / 3.0;
        let first_test_frame = test[0].target.get(0, 0) / 3.0;
        assert_eq!(last_train_frame, 79.0);
        assert_eq!(first_test_frame, 80.0);
        assert_eq!(d.windows(Split::All, 0.2, 5, 5, 1).unwrap().len(), 91);
    }

    #[test]
    fn mismatched_sequences_are_rejected() {
        let a = ramp(20);
        let b = MotionSequence::with_generic_names(50.0, Matrix::zeros(20, 6)).unwrap();
        let err = Dataset::new(vec![a, b], Some(30.0)).unwrap_err();
        match err {
            CliError::Validation(v) => assert_eq!(v.len(), 3),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn too_short_split_is_a_validation_error() {
        let d = Dataset::new(vec![ramp(30)], None).unwrap();
        assert_eq!(d.windows(Split::Test, 0.2, 5, 5, 1).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn hash_tracks_content() {
        let a = Dataset::new(vec![ramp(20)], None).unwrap();
        let b = Dataset::new(vec![ramp(21)], None).unwrap();
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
