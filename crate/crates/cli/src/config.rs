//! JSON run configuration: model, training, data and ablation sections.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use timgcn_core::data::ms_to_frames;
use timgcn_core::tim::{embedding_dim, TimConfig};
use timgcn_core::{HorizonSet, ModelConfig, SynthSpec, TrainConfig};

use crate::ablation::Variant;
use crate::error::{CliError, Result};

/// A TIM preset name (`tim-5-10`, `tim-5-10-15`) or explicit branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimSpec {
    Preset(String),
    Explicit(TimConfig),
}

impl Default for TimSpec {
    fn default() -> Self {
        TimSpec::Preset(timgcn_core::tim::PRESET_5_10.into())
    }
}

impl TimSpec {
    pub fn resolve(&self) -> Option<TimConfig> {
        match self {
            TimSpec::Preset(name) => TimConfig::preset(name),
            TimSpec::Explicit(cfg) => Some(cfg.clone()),
        }
    }
}

fn default_hidden() -> usize {
    64
}
fn default_blocks() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub tim: TimSpec,
    #[serde(default)]
    pub per_coordinate_params: bool,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_blocks")]
    pub num_blocks: usize,
    #[serde(default)]
    pub dropout_rate: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            tim: TimSpec::default(),
            per_coordinate_params: false,
            hidden_dim: default_hidden(),
            num_blocks: default_blocks(),
            dropout_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synth(SynthSpec),
    /// Shorthand for [`SynthSpec::periodic`].
    Periodic(PeriodicSpec),
    /// Motion CSV files, relative paths resolved against the config file.
    Csv(Vec<PathBuf>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicSpec {
    pub joints: usize,
    pub fps: f64,
    /// Seconds.
    pub duration: f64,
    pub components_per_coord: usize,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

impl DataSource {
    /// The explicit synthetic spec, if this source is synthetic.
    pub fn synth_spec(&self) -> Option<SynthSpec> {
        match self {
            DataSource::Synth(s) => Some(s.clone()),
            DataSource::Periodic(p) => Some(SynthSpec::periodic(
                p.joints,
                p.fps,
                p.duration,
                p.components_per_coord,
                p.noise_std,
                p.seed,
            )),
            DataSource::Csv(_) => None,
        }
    }

    /// CSV files named by this source; empty for synthetic sources.
    pub fn csv_paths(&self) -> &[PathBuf] {
        match self {
            DataSource::Csv(paths) => paths,
            _ => &[],
        }
    }
}

fn default_pred_len() -> usize {
    25
}
fn default_stride() -> usize {
    1
}
fn default_test_fraction() -> f64 {
    0.2
}
pub const DEFAULT_FPS: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    /// `M_J`; defaults to the TIM's longest subsequence.
    #[serde(default)]
    pub input_len: Option<usize>,
    /// `T`.
    #[serde(default = "default_pred_len")]
    pub pred_len: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub root_joint: Option<usize>,
    /// Expected frame rate of CSV sources; checked against each file.
    #[serde(default)]
    pub fps: Option<f64>,
    #[serde(default)]
    pub horizons_ms: HorizonSet,
    /// Trailing fraction of every sequence held out for evaluation.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_ablation_horizons() -> HorizonSet {
    HorizonSet::new(vec![560.0, 1000.0]).expect("valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSection {
    #[serde(default = "Variant::all_names")]
    pub variants: Vec<String>,
    #[serde(default = "default_ablation_horizons")]
    pub horizons_ms: HorizonSet,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            variants: Variant::all_names(),
            horizons_ms: default_ablation_horizons(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataSection,
    #[serde(default)]
    pub ablation: Option<AblationSection>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Directory relative CSV paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// The part of a [`RunConfig`] that determines results (no output paths).
#[derive(Serialize)]
struct HashedPart<'a> {
    model: &'a ModelSection,
    train: &'a TrainConfig,
    data: &'a DataSection,
    ablation: &'a Option<AblationSection>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn tim_config(&self) -> Option<TimConfig> {
        self.model.tim.resolve()
    }

    /// `M_J` implied by the TIM configuration.
    pub fn input_len(&self) -> Option<usize> {
        self.tim_config().map(|t| t.input_len())
    }

    /// Frame rate used for horizon mapping before any CSV is read.
    pub fn nominal_fps(&self) -> f64 {
        match self.data.source.synth_spec() {
            Some(spec) => spec.fps,
            None => self.data.fps.unwrap_or(DEFAULT_FPS),
        }
    }

    /// Every violated constraint; empty when the config is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let tim = self.tim_config();
        if tim.is_none() {
            if let TimSpec::Preset(name) = &self.model.tim {
                bad.push(format!("model.tim: unknown preset `{name}`"));
            }
        }
        if self.model.hidden_dim == 0 {
            bad.push("model.hidden_dim must be >= 1".into());
        }
        if self.model.num_blocks == 0 {
            bad.push("model.num_blocks must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.model.dropout_rate) {
            bad.push(format!("model.dropout_rate {} outside [0, 1)", self.model.dropout_rate));
        }
        bad.extend(self.train.violations());

        let d = &self.data;
        if let (Some(m), Some(t)) = (d.input_len, &tim) {
            if m != t.input_len() {
                bad.push(format!(
                    "data.input_len {m} disagrees with the TIM's longest subsequence {}",
                    t.input_len()
                ));
            }
        }
        if d.pred_len == 0 {
            bad.push("data.pred_len must be >= 1".into());
        }
        if d.stride == 0 {
            bad.push("data.stride must be >= 1".into());
        }
        if !(0.0..1.0).contains(&d.test_fraction) {
            bad.push(format!("data.test_fraction {} outside [0, 1)", d.test_fraction));
        }
        if let Some(fps) = d.fps {
            if fps.is_nan() || fps <= 0.0 {
                bad.push(format!("data.fps must be > 0, got {fps}"));
            }
        }
        let fps = self.nominal_fps();
        let mut check_horizons = |field: &str, set: &HorizonSet| {
            if let Err(e) = set.validate() {
                bad.push(format!("{field}: {e}"));
                return;
            }
            if fps > 0.0 {
                for &ms in set.ms() {
                    let frames = ms_to_frames(ms, fps);
                    if frames > d.pred_len {
                        bad.push(format!(
                            "{field}: {ms} ms is {frames} frames at {fps} fps, beyond data.pred_len {}",
                            d.pred_len
                        ));
                    }
                }
            }
        };
        check_horizons("data.horizons_ms", &d.horizons_ms);
        if let Some(ab) = &self.ablation {
            check_horizons("ablation.horizons_ms", &ab.horizons_ms);
            if ab.variants.len() < 2 {
                bad.push("ablation.variants must list at least 2 variants".into());
            }
            for v in &ab.variants {
                if Variant::from_name(v).is_none() {
                    bad.push(format!(
                        "ablation.variants: unknown variant `{v}` (known: {})",
                        Variant::all_names().join(", ")
                    ));
                }
            }
        }
        match d.source.synth_spec() {
            Some(spec) => {
                if let Err(e) = spec.validate() {
                    bad.push(format!("data.source: {e}"));
                }
                if let Some(r) = d.root_joint {
                    if r >= spec.joints {
                        bad.push(format!("data.root_joint {r} >= joint count {}", spec.joints));
                    }
                }
            }
            None if d.source.csv_paths().is_empty() => bad.push("data.source.csv lists no files".into()),
            None => {}
        }
        bad
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.violations();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(bad))
        }
    }

    pub fn model_config(&self, tim: TimConfig, coords: usize) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::new(
            tim,
            coords,
            self.data.pred_len,
            self.model.hidden_dim,
            self.model.num_blocks,
        )?;
        cfg.per_coordinate_params = self.model.per_coordinate_params;
        cfg.gcn.dropout_rate = self.model.dropout_rate;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 over the result-determining sections.
    pub fn hash(&self) -> String {
        let part = HashedPart {
            model: &self.model,
            train: &self.train,
            data: &self.data,
            ablation: &self.ablation,
        };
        let json = serde_json::to_string(&part).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.tim_config().map(|t| embedding_dim(&t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth_config() -> RunConfig {
        let json = r#"{
            "train": {"epochs": 2},
            "data": {"source": {"synth": {"joints": 2, "fps": 25, "duration": 4,
                "components": [[{"amplitude": 10, "frequency": 1, "phase": 0}],[],[],[],[],[]]}}}
        }"#;
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn defaults_are_filled() {
        let cfg = synth_config();
        assert_eq!(cfg.model.hidden_dim, 64);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.train.decay, 0.96);
        assert_eq!(cfg.data.pred_len, 25);
        assert_eq!(cfg.input_len(), Some(10));
        assert_eq!(cfg.embedding_dim(), Some(223));
        assert!(cfg.violations().is_empty(), "{:?}", cfg.violations());
    }

    #[test]
    fn every_violation_is_listed() {
        let mut cfg = synth_config();
        cfg.model.tim = TimSpec::Preset("tim-7".into());
        cfg.train.batch_size = 0;
        cfg.data.pred_len = 10;
        cfg.data.stride = 0;
        let bad = cfg.violations();
        assert!(bad.iter().any(|b| b.contains("tim-7")));
        assert!(bad.iter().any(|b| b.contains("batch_size")));
        assert!(bad.iter().any(|b| b.contains("stride")));
        assert!(bad.iter().any(|b| b.contains("1000 ms")));
    }

    #[test]
    fn input_len_must_match_tim() {
        let mut cfg = synth_config();
        cfg.data.input_len = Some(12);
        assert_eq!(cfg.violations().len(), 1);
    }

    #[test]
    fn explicit_tim_parses() {
        let json = r#"{"tim": {"branches": [{"subseq_len": 4, "kernels": [{"count": 2, "size": 2}]}]}}"#;
        let m: ModelSection = serde_json::from_str(json).unwrap();
        assert_eq!(m.tim.resolve().unwrap().input_len(), 4);
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = synth_config();
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.train.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
