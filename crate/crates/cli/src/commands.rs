//! The five workflows behind the `timgcn` binary. Each returns its results
//! as values and writes its files under the given output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::Value;
use timgcn_core::checkpoint::format_history_csv;
use timgcn_core::data::{center_root, load_motion_csv, save_motion_csv, synth_motion};
use timgcn_core::tim::{embedding_dim, BranchSpec, TimConfig};
use timgcn_core::trainer::{evaluate_model, evaluate_zero_velocity, grad_check, train};
use timgcn_core::{
    Checkpoint, EpochRecord, GradCheckReport, HorizonSet, Matrix, ModelConfig, MotionModel, MotionSequence, SynthSpec,
    TrainWindow,
};

use crate::ablation::{dim_gap, tim_diff, Variant, MAX_DIM_GAP};
use crate::config::RunConfig;
use crate::dataset::{Dataset, Split};
use crate::error::{CliError, Result};
use crate::table::ResultTable;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "loss_history.csv";
pub const CONFIG_ECHO_FILE: &str = "config.json";
pub const FINAL_METRICS_FILE: &str = "final_metrics.csv";
pub const ABLATION_TABLE_FILE: &str = "ablation_table.csv";
pub const ABLATION_REPORT_FILE: &str = "ablation_report.txt";
pub const MODEL_ROW: &str = "model";
pub const ZERO_VELOCITY_ROW: &str = "zero-velocity";
/// Largest model `gradcheck` accepts; finite differences cost two passes per parameter.
pub const GRADCHECK_MAX_PARAMS: usize = 2000;
pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub clip_norm: Option<f64>,
    pub per_coordinate_params: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(c) = self.clip_norm {
            cfg.train.clip_norm = Some(c);
        }
        if self.per_coordinate_params {
            cfg.model.per_coordinate_params = true;
        }
    }
}

/// Reads a config, applies overrides and validates the result.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

/// `--out`, else the config's `output_dir` (relative to the config file), else `timgcn-out`.
pub fn resolve_out_dir(cfg: Option<&RunConfig>, out: Option<&Path>) -> PathBuf {
    match (out, cfg.and_then(|c| c.output_dir.as_ref().map(|d| c.base_dir.join(d)))) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(d)) => d,
        (None, None) => PathBuf::from("timgcn-out"),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Horizon frame indices, rejecting any beyond the prediction length.
pub fn horizon_frames(set: &HorizonSet, fps: f64, pred_len: usize) -> Result<Vec<usize>> {
    set.validate()?;
    let frames = set.frames(fps);
    let bad: Vec<String> = set
        .ms()
        .iter()
        .zip(&frames)
        .filter(|(_, &f)| f > pred_len)
        .map(|(ms, f)| format!("horizon {ms} ms is {f} frames at {fps} fps, beyond T={pred_len}"))
        .collect();
    if bad.is_empty() {
        Ok(frames)
    } else {
        Err(CliError::Validation(bad))
    }
}

fn elapsed_s(start: Instant) -> String {
    format!("{:.3}", start.elapsed().as_secs_f64())
}

#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub final_metrics: ResultTable,
}

/// Trains on the train split and writes the checkpoint, loss history,
/// config echo and train-split metrics.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainArtifacts> {
    cfg.validate()?;
    let start = Instant::now();
    let data = Dataset::from_config(cfg)?;
    let tim = cfg.tim_config().expect("validated");
    let model_cfg = cfg.model_config(tim, data.coords)?;
    let m = model_cfg.input_len();
    let t = model_cfg.pred_len;
    let frames = horizon_frames(&cfg.data.horizons_ms, data.fps, t)?;
    let windows = data.windows(Split::Train, cfg.data.test_fraction, m, t, cfg.data.stride)?;

    let outcome = train(&windows, &model_cfg, &cfg.train)?;
    let hash = cfg.hash();
    let checkpoint = Checkpoint::from_model(&outcome.model, &cfg.train, hash.clone());

    let mut table = metrics_table(&outcome.model, &windows, cfg.data.horizons_ms.ms(), &frames)?;
    table
        .meta("seed", cfg.train.seed)
        .meta("config_hash", &hash)
        .meta("data_hash", data.hash())
        .meta("split", "train")
        .meta("windows", windows.len())
        .meta("wall_time_s", elapsed_s(start));

    ensure_dir(out)?;
    write(&out.join(CHECKPOINT_FILE), &checkpoint.to_json())?;
    write(&out.join(HISTORY_FILE), &format_history_csv(&outcome.history))?;
    write(&out.join(CONFIG_ECHO_FILE), &cfg.to_json())?;
    table.save(&out.join(FINAL_METRICS_FILE))?;
    Ok(TrainArtifacts {
        checkpoint,
        history: outcome.history,
        final_metrics: table,
    })
}

fn metrics_table(model: &MotionModel, windows: &[TrainWindow], ms: &[f64], frames: &[usize]) -> Result<ResultTable> {
    let mut table = ResultTable::new(ms);
    table.push_row(MODEL_ROW, evaluate_model(model, windows, frames)?)?;
    table.push_row(ZERO_VELOCITY_ROW, evaluate_zero_velocity(windows, frames)?)?;
    Ok(table)
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub split: Split,
    /// A motion CSV evaluated instead of the config's data source.
    pub data: Option<PathBuf>,
    pub horizons_ms: Option<HorizonSet>,
}

/// Per-horizon errors of a checkpoint and the zero-velocity baseline.
pub fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> Result<ResultTable> {
    let start = Instant::now();
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let model = checkpoint.to_model()?;
    let data = match &args.data {
        Some(path) => {
            let seq = load_motion_csv(path)?;
            let seq = match cfg.data.root_joint {
                Some(r) => center_root(&seq, r)?,
                None => seq,
            };
            Dataset::new(vec![seq], cfg.data.fps)?
        }
        None => Dataset::from_config(cfg)?,
    };
    let expected = model.config.coords();
    if data.coords != expected {
        return Err(CliError::validation(format!(
            "checkpoint expects K={expected} coordinates but the data has K={}",
            data.coords
        )));
    }
    let horizons = args.horizons_ms.as_ref().unwrap_or(&cfg.data.horizons_ms);
    let t = model.config.pred_len;
    let frames = horizon_frames(horizons, data.fps, t)?;
    let windows = data.windows(
        args.split,
        cfg.data.test_fraction,
        model.config.input_len(),
        t,
        cfg.data.stride,
    )?;

    let mut table = metrics_table(&model, &windows, horizons.ms(), &frames)?;
    table
        .meta("seed", checkpoint.train.seed)
        .meta("config_hash", &checkpoint.config_hash)
        .meta("data_hash", data.hash())
        .meta("split", format!("{:?}", args.split).to_lowercase())
        .meta("windows", windows.len())
        .meta("wall_time_s", elapsed_s(start));
    Ok(table)
}

/// TIM of the default gradient-check model: two short branches, 43 outputs.
pub fn toy_tim() -> TimConfig {
    TimConfig::new(vec![
        BranchSpec::new(5, &[(2, 2), (1, 3)]),
        BranchSpec::new(10, &[(2, 3), (1, 5), (1, 1)]),
    ])
    .expect("valid toy TIM")
}

/// Default gradient-check setup: K=6, M_J=10, T=5, hidden 8, 2 blocks, on
/// one window of unit-scale periodic motion.
pub fn toy_gradcheck_setup(seed: u64) -> Result<(MotionModel, TrainWindow)> {
    let cfg = ModelConfig::new(toy_tim(), 6, 5, 8, 2)?;
    let model = MotionModel::init(cfg, seed)?;
    let spec = SynthSpec::periodic(2, 25.0, 1.0, 2, 0.0, seed);
    let seq = synth_motion(&spec)?;
    // scale mm amplitudes to roughly unit size so tanh stays in its linear range
    let window = first_window(&seq.values.map(|v| v / 100.0), 10, 5)?;
    Ok((model, window))
}

fn first_window(frames_by_k: &Matrix, m: usize, t: usize) -> Result<TrainWindow> {
    let k = frames_by_k.cols();
    let target = Matrix::from_fn(k, m + t, |r, c| frames_by_k.get(c, r));
    let input = Matrix::from_fn(k, m, |r, c| target.get(r, c));
    Ok(TrainWindow::new(input, target)?)
}

/// Gradient check on the toy model, or on the model a config describes
/// (evaluated on its first training window) if one is given.
pub fn cmd_gradcheck(cfg: Option<&RunConfig>, seed: u64, tol: f64) -> Result<GradCheckReport> {
    let (model, window) = match cfg {
        None => toy_gradcheck_setup(seed)?,
        Some(cfg) => {
            cfg.validate()?;
            let data = Dataset::from_config(cfg)?;
            let model_cfg = cfg.model_config(cfg.tim_config().expect("validated"), data.coords)?;
            check_gradcheck_size(model_cfg.num_params())?;
            let m = model_cfg.input_len();
            let windows = data.windows(
                Split::Train,
                cfg.data.test_fraction,
                m,
                model_cfg.pred_len,
                cfg.data.stride,
            )?;
            (MotionModel::init(model_cfg, seed)?, windows[0].clone())
        }
    };
    check_gradcheck_size(model.num_params())?;
    Ok(grad_check(&model, &window, GRADCHECK_EPS, tol)?)
}

fn check_gradcheck_size(n: usize) -> Result<()> {
    if n > GRADCHECK_MAX_PARAMS {
        return Err(CliError::validation(format!(
            "gradcheck model has {n} parameters; the limit is {GRADCHECK_MAX_PARAMS}"
        )));
    }
    Ok(())
}

pub fn format_gradcheck(report: &GradCheckReport) -> String {
    let mut s = String::new();
    for (name, err) in &report.per_array {
        s.push_str(&format!("{name:<20} {err:.3e}\n"));
    }
    let verdict = if report.passed { "PASS" } else { "FAIL" };
    s.push_str(&format!(
        "max relative error {:.3e} (tol {:e}): {verdict}\n",
        report.max_rel_err, report.tol
    ));
    s
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub table: ResultTable,
    pub report: String,
    /// `(variant, D_E)` in table order.
    pub dims: Vec<(String, usize)>,
}

/// Trains every configured TIM variant with the same seed, data split and
/// GCN settings, and tabulates their test errors.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<AblationOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let ablation = cfg.ablation.clone().unwrap_or_default();
    let variants: Vec<Variant> = ablation
        .variants
        .iter()
        .map(|n| Variant::from_name(n).expect("validated"))
        .collect();
    let data = Dataset::from_config(cfg)?;
    let t = cfg.data.pred_len;
    let frames = horizon_frames(&ablation.horizons_ms, data.fps, t)?;

    // Windows are cut once at the longest history so every variant sees the same frames.
    let max_m = variants
        .iter()
        .map(|v| v.tim_config().input_len())
        .max()
        .expect("validated");
    let train_full = data.windows(Split::Train, cfg.data.test_fraction, max_m, t, cfg.data.stride)?;
    let test_full = data.windows(Split::Test, cfg.data.test_fraction, max_m, t, cfg.data.stride)?;
    let data_hash = data.hash();

    let mut table = ResultTable::new(ablation.horizons_ms.ms());
    let mut dims = Vec::new();
    let mut model_cfgs = Vec::new();
    for v in &variants {
        let tim = v.tim_config();
        let m = tim.input_len();
        let model_cfg = cfg.model_config(tim, data.coords)?;
        let crop = |ws: &[TrainWindow]| -> Result<Vec<TrainWindow>> {
            Ok(ws
                .iter()
                .map(|w| w.crop_history(m))
                .collect::<timgcn_core::Result<_>>()?)
        };
        let outcome = train(&crop(&train_full)?, &model_cfg, &cfg.train)?;
        let errs = evaluate_model(&outcome.model, &crop(&test_full)?, &frames)?;
        table.push_row(v.name(), errs)?;
        dims.push((v.name(), embedding_dim(&model_cfg.tim)));
        model_cfgs.push(model_cfg);
    }

    let report = ablation_report(&variants, &model_cfgs, &table)?;
    table
        .meta("seed", cfg.train.seed)
        .meta("config_hash", cfg.hash())
        .meta("data_hash", &data_hash)
        .meta("split", "test")
        .meta("train_windows", train_full.len())
        .meta("test_windows", test_full.len());
    for (name, d) in &dims {
        table.meta(&format!("d_e.{name}"), d);
    }
    table.meta("wall_time_s", elapsed_s(start));

    ensure_dir(out)?;
    table.save(&out.join(ABLATION_TABLE_FILE))?;
    write(&out.join(ABLATION_REPORT_FILE), &report)?;
    Ok(AblationOutcome { table, report, dims })
}

/// Leaf paths where two JSON values differ.
fn json_diff(a: &Value, b: &Value, path: &str, out: &mut Vec<String>) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                let p = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                json_diff(
                    x.get(k).unwrap_or(&Value::Null),
                    y.get(k).unwrap_or(&Value::Null),
                    &p,
                    out,
                );
            }
        }
        _ if a != b => out.push(path.to_string()),
        _ => {}
    }
}

/// Fields derived from the TIM rather than chosen independently.
const TIM_DERIVED: [&str; 2] = ["gcn.input_dim", "gcn.output_dim"];

fn ablation_report(variants: &[Variant], cfgs: &[ModelConfig], table: &ResultTable) -> Result<String> {
    let mut s = String::from("Embedding sizes\n");
    for (v, c) in variants.iter().zip(cfgs) {
        s.push_str(&format!(
            "  {:<22} D_E={:<4} M_J={:<3} gap to proportional {:.2}%\n",
            v.name(),
            embedding_dim(&c.tim),
            c.tim.input_len(),
            100.0 * dim_gap(v)
        ));
        if dim_gap(v) > MAX_DIM_GAP {
            return Err(CliError::validation(format!(
                "{}: embedding size gap above 5%",
                v.name()
            )));
        }
    }

    let base = serde_json::to_value(&cfgs[0]).expect("serializable");
    s.push_str(&format!("\nConfig diff against {}\n", variants[0].name()));
    for (v, c) in variants.iter().zip(cfgs).skip(1) {
        let mut paths = Vec::new();
        json_diff(&base, &serde_json::to_value(c).expect("serializable"), "", &mut paths);
        let stray: Vec<&String> = paths
            .iter()
            .filter(|p| !p.starts_with("tim.") && !TIM_DERIVED.contains(&p.as_str()))
            .collect();
        if !stray.is_empty() {
            return Err(CliError::validation(format!(
                "variant {} differs outside the TIM: {stray:?}",
                v.name()
            )));
        }
        s.push_str(&format!("  {}:\n", v.name()));
        for line in tim_diff(&cfgs[0].tim, &c.tim) {
            s.push_str(&format!("    {line}\n"));
        }
        let derived: Vec<&String> = paths.iter().filter(|p| TIM_DERIVED.contains(&p.as_str())).collect();
        if !derived.is_empty() {
            s.push_str(&format!(
                "    derived: {}\n",
                derived.iter().map(|p| p.as_str()).collect::<Vec<_>>().join(", ")
            ));
        }
    }

    s.push_str("\nProportional vs constant kernel sizes (mean over horizons, not gated)\n");
    let mean = |name: &str| table.row(name).map(|r| r.iter().sum::<f64>() / r.len() as f64);
    let mut prop = Vec::new();
    let mut cons = Vec::new();
    for v in variants.iter().filter(|v| v.proportional) {
        let other = Variant {
            proportional: false,
            ..*v
        };
        if let (Some(p), Some(c)) = (mean(&v.name()), mean(&other.name())) {
            s.push_str(&format!("  {}: proportional {p:.3} mm, constant {c:.3} mm\n", v.name()));
            prop.push(p);
            cons.push(c);
        }
    }
    if !prop.is_empty() {
        let p = prop.iter().sum::<f64>() / prop.len() as f64;
        let c = cons.iter().sum::<f64>() / cons.len() as f64;
        let verdict = if p <= c {
            "proportional better or equal"
        } else {
            "constant better"
        };
        s.push_str(&format!(
            "  average: proportional {p:.3} mm, constant {c:.3} mm ({verdict})\n"
        ));
    }
    Ok(s)
}

/// Writes the motion CSV a synthetic spec describes.
pub fn cmd_synth(spec_path: &Path, csv_out: &Path) -> Result<MotionSequence> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| CliError::io(spec_path, e))?;
    let spec: SynthSpec =
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", spec_path.display())))?;
    let seq = synth_motion(&spec)?;
    if let Some(dir) = csv_out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    save_motion_csv(&seq, csv_out)?;
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_model_is_within_budget() {
        let (model, w) = toy_gradcheck_setup(0).unwrap();
        assert_eq!(embedding_dim(&toy_tim()), 43);
        assert!(model.num_params() <= GRADCHECK_MAX_PARAMS);
        assert_eq!((w.input.rows(), w.input_len(), w.pred_len()), (6, 10, 5));
    }

    #[test]
    fn horizon_beyond_t_is_rejected() {
        let set = HorizonSet::new(vec![80.0, 1000.0]).unwrap();
        assert_eq!(horizon_frames(&set, 25.0, 25).unwrap(), vec![2, 25]);
        assert!(horizon_frames(&set, 25.0, 10).is_err());
    }

    #[test]
    fn json_diff_finds_leaves() {
        let a = serde_json::json!({"x": 1, "y": {"z": [1, 2]}});
        let b = serde_json::json!({"x": 1, "y": {"z": [1, 3]}, "w": 0});
        let mut d = Vec::new();
        json_diff(&a, &b, "", &mut d);
        assert_eq!(d, vec!["w", "y.z"]);
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg: RunConfig =
            serde_json::from_str(r#"{"data": {"source": {"csv": ["a.csv"]}}, "train": {"seed": 1}}"#).unwrap();
        Overrides {
            seed: Some(9),
            clip_norm: Some(1.0),
            per_coordinate_params: true,
        }
        .apply(&mut cfg);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.clip_norm, Some(1.0));
        assert!(cfg.model.per_coordinate_params);
    }
}
