//! Training objective, evaluation metric, learning-rate schedule, Adam, the
//! mini-batch loop and the finite-difference gradient check.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{finite_diff_grad, relative_error, Matrix};
use crate::model::{GradBundle, ModelConfig, MotionModel};

/// One supervised pair: `input` holds frames `−M_J..−1`, `target` holds
/// frames `−M_J..T−1`, both as `K × time`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainWindow {
    pub input: Matrix,
    pub target: Matrix,
}

impl TrainWindow {
    pub fn new(input: Matrix, target: Matrix) -> Result<Self> {
        let m = input.cols();
        if input.rows() != target.rows() || target.cols() <= m {
            return Err(Error::shape(
                "TrainWindow",
                format!("input {}x{}", input.rows(), m),
                format!("target {}x{}", target.rows(), target.cols()),
            ));
        }
        for r in 0..input.rows() {
            if input.row(r) != &target.row(r)[..m] {
                return Err(Error::Config(format!(
                    "window target row {r} does not start with the observed input"
                )));
            }
        }
        Ok(Self { input, target })
    }

    pub fn input_len(&self) -> usize {
        self.input.cols()
    }

    pub fn pred_len(&self) -> usize {
        self.target.cols() - self.input.cols()
    }

    /// Keeps only the last `m` observed frames; the future part is unchanged.
    pub fn crop_history(&self, m: usize) -> Result<TrainWindow> {
        let full = self.input_len();
        if m == 0 || m > full {
            return Err(Error::OutOfRange {
                what: "history length",
                index: m,
                limit: full,
            });
        }
        let skip = full - m;
        let input = Matrix::from_fn(self.input.rows(), m, |r, c| self.input.get(r, c + skip));
        let target = Matrix::from_fn(self.target.rows(), self.target.cols() - skip, |r, c| {
            self.target.get(r, c + skip)
        });
        Ok(TrainWindow { input, target })
    }

    /// The last `T` target columns.
    pub fn future(&self) -> Matrix {
        future_columns(&self.target, self.input_len())
    }
}

pub(crate) fn future_columns(m: &Matrix, skip: usize) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols() - skip, |r, c| m.get(r, c + skip))
}

fn check_pair(pred: &Matrix, target: &Matrix, op: &'static str) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            op,
            format!("pred {}x{}", pred.rows(), pred.cols()),
            format!("target {}x{}", target.rows(), target.cols()),
        ));
    }
    if !pred.rows().is_multiple_of(3) {
        return Err(Error::Config(format!(
            "{op}: K = {} is not a multiple of 3",
            pred.rows()
        )));
    }
    Ok(())
}

/// `1/(K·(M_J+T)) · Σ_t Σ_i ‖p_{i,t} − p̂_{i,t}‖²` over every frame,
/// observed ones included.
pub fn mpjpe_train_loss(pred: &Matrix, target: &Matrix) -> Result<f64> {
    check_pair(pred, target, "mpjpe_train_loss")?;
    let sum: f64 = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Gradient of [`mpjpe_train_loss`] w.r.t. `pred`.
pub fn mpjpe_train_loss_grad(pred: &Matrix, target: &Matrix) -> Result<Matrix> {
    check_pair(pred, target, "mpjpe_train_loss_grad")?;
    let scale = 2.0 / pred.len() as f64;
    Ok(Matrix::from_fn(pred.rows(), pred.cols(), |r, c| {
        scale * (pred.get(r, c) - target.get(r, c))
    }))
}

/// Mean unsquared per-joint distance at frame `h − 1` for every horizon `h`.
pub fn mpjpe_eval(pred_future: &Matrix, target_future: &Matrix, horizon_frames: &[usize]) -> Result<Vec<f64>> {
    check_pair(pred_future, target_future, "mpjpe_eval")?;
    let joints = pred_future.rows() / 3;
    horizon_frames
        .iter()
        .map(|&h| {
            if h == 0 || h > pred_future.cols() {
                return Err(Error::OutOfRange {
                    what: "horizon frame",
                    index: h,
                    limit: pred_future.cols(),
                });
            }
            let t = h - 1;
            let total: f64 = (0..joints)
                .map(|j| {
                    (0..3)
                        .map(|d| {
                            let diff = pred_future.get(3 * j + d, t) - target_future.get(3 * j + d, t);
                            diff * diff
                        })
                        .sum::<f64>()
                        .sqrt()
                })
                .sum();
            Ok(total / joints as f64)
        })
        .collect()
}

fn default_epochs() -> usize {
    50
}
fn default_batch() -> usize {
    16
}
fn default_lr() -> f64 {
    5e-4
}
fn default_decay() -> f64 {
    0.96
}
fn default_decay_every() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr0: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_decay_every")]
    pub decay_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            lr0: default_lr(),
            decay: default_decay(),
            decay_every: default_decay_every(),
            seed: 0,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.epochs == 0 {
            bad.push("train.epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            bad.push("train.batch_size must be >= 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            bad.push(format!("train.lr0 must be positive, got {}", self.lr0));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            bad.push(format!("train.decay must be in (0, 1], got {}", self.decay));
        }
        if self.decay_every == 0 {
            bad.push("train.decay_every must be >= 1".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                bad.push(format!("train.clip_norm must be positive, got {c}"));
            }
        }
        bad
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.violations();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// `lr0 · decay^⌊epoch / decay_every⌋`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let exponent = (epoch / cfg.decay_every.max(1)) as i32;
    cfg.lr0 * cfg.decay.powi(exponent)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
}

impl OptState {
    pub fn new(params: &[&Matrix]) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn for_model(model: &MotionModel) -> Self {
        let arrays: Vec<&Matrix> = model.arrays().into_iter().map(|(_, m)| m).collect();
        Self::new(&arrays)
    }
}

/// One bias-corrected Adam step.
pub fn adam_update(params: &mut [&mut Matrix], grads: &GradBundle, state: &mut OptState, lr: f64) -> Result<()> {
    if params.len() != grads.arrays.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_update",
            format!("{} parameter arrays", params.len()),
            format!(
                "{} gradient arrays, {} moment arrays",
                grads.arrays.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(&grads.arrays).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::shape(
                "adam_update",
                format!("param {i} {:?}", p.shape()),
                format!("grad {:?}", g.shape()),
            ));
        }
    }
    if !grads.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradient at optimizer step {}",
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(&grads.arrays)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let p = p.as_mut_slice();
        let (m, v) = (m.as_mut_slice(), v.as_mut_slice());
        for (j, &gj) in g.as_slice().iter().enumerate() {
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * gj;
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MotionModel,
    pub history: Vec<EpochRecord>,
}

fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 folded over the parts
    parts.iter().fold(0x9E37_79B9_7F4A_7C15u64, |acc, &p| {
        let mut z = acc ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    })
}

/// Initializes a model from `tcfg.seed` and trains it.
pub fn train(windows: &[TrainWindow], model_cfg: &ModelConfig, tcfg: &TrainConfig) -> Result<TrainOutcome> {
    let model = MotionModel::init(model_cfg.clone(), tcfg.seed)?;
    train_model(model, windows, tcfg)
}

/// Mini-batch Adam training of an existing model.
///
/// Windows are reshuffled every epoch from `tcfg.seed`; the batch gradient is
/// the mean over its windows. Per-window passes may run on the rayon pool,
/// but their results are summed in window order, so the outcome does not
/// depend on the thread count.
pub fn train_model(mut model: MotionModel, windows: &[TrainWindow], tcfg: &TrainConfig) -> Result<TrainOutcome> {
    tcfg.validate()?;
    if windows.is_empty() {
        return Err(Error::Config("training needs at least one window".into()));
    }
    let mut state = OptState::for_model(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut history = Vec::with_capacity(tcfg.epochs);

    for epoch in 0..tcfg.epochs {
        let lr = lr_at_epoch(tcfg, epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(tcfg.batch_size).enumerate() {
            let results: Vec<(f64, GradBundle)> = batch
                .par_iter()
                .enumerate()
                .map(|(pos, &w)| {
                    let seed = mix_seed(&[tcfg.seed, epoch as u64, step as u64, pos as u64]);
                    model.loss_and_grad(&windows[w], Some(seed))
                })
                .collect::<Result<_>>()?;
            let mut grads = GradBundle::zeros_like(&model);
            for (loss, g) in &results {
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}, step {step}")));
                }
                loss_sum += loss;
                grads.add_assign(g)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some(max_norm) = tcfg.clip_norm {
                let norm = grads.global_norm();
                if norm > max_norm {
                    grads.scale(max_norm / norm);
                }
            }
            adam_update(&mut model.arrays_mut(), &grads, &mut state, lr).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("{msg} (epoch {epoch}, step {step})")),
                other => other,
            })?;
        }
        history.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / windows.len() as f64,
            lr,
        });
    }
    Ok(TrainOutcome { model, history })
}

/// Mean per-horizon error of `model` over `windows`.
pub fn evaluate_model(model: &MotionModel, windows: &[TrainWindow], horizon_frames: &[usize]) -> Result<Vec<f64>> {
    let m = model.config.input_len();
    let per_window: Vec<Vec<f64>> = windows
        .par_iter()
        .map(|w| {
            let pred = model.predict(&w.input)?;
            mpjpe_eval(&future_columns(&pred, m), &w.future(), horizon_frames)
        })
        .collect::<Result<_>>()?;
    Ok(average_rows(&per_window, horizon_frames.len()))
}

/// Mean per-horizon error of repeating the last observed pose.
pub fn evaluate_zero_velocity(windows: &[TrainWindow], horizon_frames: &[usize]) -> Result<Vec<f64>> {
    let per_window: Vec<Vec<f64>> = windows
        .iter()
        .map(|w| {
            let last = w.input.cols() - 1;
            let future = w.future();
            let pred = Matrix::from_fn(future.rows(), future.cols(), |r, _| w.input.get(r, last));
            mpjpe_eval(&pred, &future, horizon_frames)
        })
        .collect::<Result<_>>()?;
    Ok(average_rows(&per_window, horizon_frames.len()))
}

fn average_rows(rows: &[Vec<f64>], width: usize) -> Vec<f64> {
    let mut acc = vec![0.0; width];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
    }
    let n = rows.len().max(1) as f64;
    acc.iter().map(|a| a / n).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `(array name, max relative error)` in parameter order.
    pub per_array: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Compares the analytic gradient of the training loss on `window` with
/// central finite differences. Never fails on a mismatch; the report says so.
pub fn grad_check(model: &MotionModel, window: &TrainWindow, eps: f64, tol: f64) -> Result<GradCheckReport> {
    let (_, analytic) = model.loss_and_grad(window, None)?;
    let theta = model.flat_params();
    let mut probe = model.clone();
    let numeric = finite_diff_grad(
        |t| {
            probe.set_flat_params(t).expect("length checked by construction");
            probe.loss(window).unwrap_or(f64::NAN)
        },
        &theta,
        eps,
    )?;
    let mut per_array = Vec::new();
    let mut offset = 0;
    for ((name, _), g) in model.arrays().into_iter().zip(&analytic.arrays) {
        let worst = g
            .as_slice()
            .iter()
            .zip(&numeric[offset..offset + g.len()])
            .map(|(a, n)| relative_error(*a, *n))
            .fold(0.0, f64::max);
        offset += g.len();
        per_array.push((name, worst));
    }
    let max_rel_err = per_array.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_array,
        max_rel_err,
        tol,
        passed: max_rel_err < tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tim::{BranchSpec, TimConfig};
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_loss(pred: &Matrix, target: &Matrix) -> f64 {
        let joints = pred.rows() / 3;
        let mut total = 0.0;
        for t in 0..pred.cols() {
            for i in 0..joints {
                let mut sq = 0.0;
                for d in 0..3 {
                    let diff = target.get(3 * i + d, t) - pred.get(3 * i + d, t);
                    sq += diff * diff;
                }
                total += sq;
            }
        }
        total / (pred.rows() * pred.cols()) as f64
    }

    fn brute_eval(pred: &Matrix, target: &Matrix, hs: &[usize]) -> Vec<f64> {
        let joints = pred.rows() / 3;
        hs.iter()
            .map(|&h| {
                let mut s = 0.0;
                for i in 0..joints {
                    let d: Vec<f64> = (0..3)
                        .map(|d| pred.get(3 * i + d, h - 1) - target.get(3 * i + d, h - 1))
                        .collect();
                    s += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                }
                s / joints as f64
            })
            .collect()
    }

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-100.0..100.0))
    }

    #[test]
    fn loss_examples() {
        let t = rand_matrix(6, 4, 1);
        assert_eq!(mpjpe_train_loss(&t, &t).unwrap(), 0.0);
        let p = Matrix::from_rows(&[[1.0], [2.0], [2.0]]).unwrap();
        let z = Matrix::zeros(3, 1);
        assert_eq!(mpjpe_train_loss(&p, &z).unwrap(), 3.0);
        let p = rand_matrix(9, 7, 2);
        assert!((mpjpe_train_loss(&p, &t.clone()).is_err()));
        let t = rand_matrix(9, 7, 3);
        let got = mpjpe_train_loss(&p, &t).unwrap();
        assert!((got - brute_loss(&p, &t)).abs() <= 1e-12 * got);
        assert!(mpjpe_train_loss(&Matrix::zeros(4, 2), &Matrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn loss_grad_matches_finite_differences() {
        let p = rand_matrix(6, 3, 4).map(|v| v * 0.01);
        let t = rand_matrix(6, 3, 5).map(|v| v * 0.01);
        let g = mpjpe_train_loss_grad(&p, &t).unwrap();
        let n = finite_diff_grad(
            |x| mpjpe_train_loss(&Matrix::new(6, 3, x.to_vec()).unwrap(), &t).unwrap(),
            p.as_slice(),
            1e-5,
        )
        .unwrap();
        for (a, b) in g.as_slice().iter().zip(&n) {
            assert!(relative_error(*a, *b) < 1e-4);
        }
    }

    #[test]
    fn eval_examples() {
        let t = rand_matrix(12, 5, 6);
        assert_eq!(mpjpe_eval(&t, &t, &[1, 3, 5]).unwrap(), vec![0.0; 3]);
        let mut p = t.clone();
        // joint 2 displaced by (3,4,0) at frame index 2 only
        p.set(6, 2, t.get(6, 2) + 3.0);
        p.set(7, 2, t.get(7, 2) + 4.0);
        let e = mpjpe_eval(&p, &t, &[1, 2, 3, 4]).unwrap();
        assert_eq!(e[0], 0.0);
        assert_eq!(e[1], 0.0);
        assert!((e[2] - 5.0 / 4.0).abs() < 1e-12);
        assert_eq!(e[3], 0.0);
        let p = rand_matrix(12, 5, 7);
        let got = mpjpe_eval(&p, &t, &[1, 2, 5]).unwrap();
        for (a, b) in got.iter().zip(brute_eval(&p, &t, &[1, 2, 5])) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(mpjpe_eval(&p, &t, &[6]).is_err());
        assert!(mpjpe_eval(&p, &t, &[0]).is_err());
    }

    #[test]
    fn lr_schedule_examples() {
        let cfg = TrainConfig {
            lr0: 1e-3,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at_epoch(&cfg, 0), 1e-3);
        assert_eq!(lr_at_epoch(&cfg, 1), 1e-3);
        assert_eq!(lr_at_epoch(&cfg, 2), 0.96 * 1e-3);
        assert_eq!(lr_at_epoch(&cfg, 49), 1e-3 * 0.96f64.powi(24));
        let mut prev = f64::INFINITY;
        for e in 0..200 {
            let lr = lr_at_epoch(&cfg, e);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn config_violations_are_all_listed() {
        let cfg = TrainConfig {
            epochs: 0,
            batch_size: 0,
            decay: 1.5,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.violations().len(), 3);
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = Matrix::from_rows(&[[1.0, -2.0]]).unwrap();
        let orig = p.clone();
        let mut state = OptState::new(&[&p]);
        let g = GradBundle {
            arrays: vec![Matrix::zeros(1, 2)],
        };
        adam_update(&mut [&mut p], &g, &mut state, 0.1).unwrap();
        assert_eq!(p, orig);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_first_step_is_lr_sign() {
        let mut p = Matrix::from_rows(&[[1.0, 1.0, 1.0]]).unwrap();
        let mut state = OptState::new(&[&p]);
        let g = GradBundle {
            arrays: vec![Matrix::from_rows(&[[0.3, -20.0, 1e-3]]).unwrap()],
        };
        adam_update(&mut [&mut p], &g, &mut state, 0.01).unwrap();
        let expect = [0.99, 1.01, 0.99];
        for (a, b) in p.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn adam_three_steps_match_scalar_reference() {
        // f(x) = (x − 3)², x0 = 0
        let lr = 0.1;
        let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        let mut trace = Vec::new();
        for t in 1..=3 {
            let g = 2.0 * (x - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= lr * mh / (vh.sqrt() + 1e-8);
            trace.push(x);
        }
        let mut p = Matrix::zeros(1, 1);
        let mut state = OptState::new(&[&p]);
        for expected in trace {
            let g = GradBundle {
                arrays: vec![Matrix::from_rows(&[[2.0 * (p.get(0, 0) - 3.0)]]).unwrap()],
            };
            adam_update(&mut [&mut p], &g, &mut state, lr).unwrap();
            assert!((p.get(0, 0) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = Matrix::zeros(1, 1);
        let mut state = OptState::new(&[&p]);
        let g = GradBundle {
            arrays: vec![Matrix::from_rows(&[[f64::NAN]]).unwrap()],
        };
        assert!(matches!(
            adam_update(&mut [&mut p], &g, &mut state, 0.1),
            Err(Error::Numeric(_))
        ));
    }

    fn toy_model_cfg() -> ModelConfig {
        let tim = TimConfig::new(vec![
            BranchSpec::new(3, &[(2, 2)]),
            BranchSpec::new(5, &[(1, 3), (1, 1)]),
        ])
        .unwrap();
        ModelConfig::new(tim, 6, 3, 6, 1).unwrap()
    }

    fn toy_windows(n: usize, seed: u64) -> Vec<TrainWindow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let target = Matrix::from_fn(6, 8, |_, _| rng.gen_range(-1.0..1.0));
                let input = Matrix::from_fn(6, 5, |r, c| target.get(r, c));
                TrainWindow::new(input, target).unwrap()
            })
            .collect()
    }

    #[test]
    fn window_invariant_enforced() {
        let target = Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64);
        let bad_input = Matrix::zeros(3, 2);
        assert!(TrainWindow::new(bad_input, target.clone()).is_err());
        let input = Matrix::from_fn(3, 2, |r, c| target.get(r, c));
        let w = TrainWindow::new(input, target).unwrap();
        let cropped = w.crop_history(1).unwrap();
        assert_eq!(cropped.input.col(0), w.input.col(1));
        assert_eq!(cropped.future(), w.future());
    }

    #[test]
    fn training_is_deterministic_and_logs_schedule() {
        let cfg = toy_model_cfg();
        let windows = toy_windows(7, 1);
        let tcfg = TrainConfig {
            epochs: 5,
            batch_size: 3,
            lr0: 1e-2,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train(&windows, &cfg, &tcfg).unwrap();
        let b = train(&windows, &cfg, &tcfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
        for rec in &a.history {
            assert_eq!(rec.lr, lr_at_epoch(&tcfg, rec.epoch));
        }
        assert!(a.history.last().unwrap().mean_loss < a.history[0].mean_loss);
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let cfg = toy_model_cfg();
        let windows = toy_windows(9, 2);
        let tcfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            lr0: 1e-2,
            seed: 3,
            ..TrainConfig::default()
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| train(&windows, &cfg, &tcfg).unwrap());
        let b = three.install(|| train(&windows, &cfg, &tcfg).unwrap());
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn divergence_reports_context() {
        let cfg = toy_model_cfg();
        let mut windows = toy_windows(2, 3);
        windows[1].target.set(0, 7, f64::INFINITY);
        let tcfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let err = train(&windows, &cfg, &tcfg).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("epoch 0")), "{err}");
    }

    #[test]
    fn grad_check_passes_and_tol_zero_fails() {
        let cfg = toy_model_cfg();
        let model = MotionModel::init(cfg, 4).unwrap();
        let w = &toy_windows(1, 5)[0];
        let report = grad_check(&model, w, 1e-5, 1e-4).unwrap();
        assert!(report.passed, "max rel err {}", report.max_rel_err);
        assert_eq!(report.per_array.len(), model.arrays().len());
        let strict = grad_check(&model, w, 1e-5, 0.0).unwrap();
        assert!(!strict.passed);
    }

    #[test]
    fn zeroed_output_layer_still_trains_its_weights() {
        let cfg = toy_model_cfg();
        let mut model = MotionModel::init(cfg, 6).unwrap();
        model.gcn.zero_output_layer();
        model.gcn.output.adjacency = Matrix::identity(6);
        let w = &toy_windows(1, 7)[0];
        let (_, grads) = model.loss_and_grad(w, None).unwrap();
        let n = grads.arrays.len();
        // output W is the last array
        assert!(grads.arrays[n - 1].max_abs() > 0.0);
        let report = grad_check(&model, w, 1e-5, 1e-4).unwrap();
        let (name, err) = report.per_array.last().unwrap();
        assert_eq!(name, "gcn.output.W");
        assert!(*err < 1e-4);
    }

    #[test]
    fn all_zero_model_has_all_zero_gradient() {
        let model = MotionModel::zeros(toy_model_cfg()).unwrap();
        let w = &toy_windows(1, 8)[0];
        let (_, grads) = model.loss_and_grad(w, None).unwrap();
        assert_eq!(grads.global_norm(), 0.0);
        let numeric = finite_diff_grad(
            |t| {
                let mut p = model.clone();
                p.set_flat_params(t).unwrap();
                p.loss(w).unwrap()
            },
            &model.flat_params(),
            1e-5,
        )
        .unwrap();
        assert!(numeric.iter().all(|v| v.abs() < 1e-8));
    }

    proptest! {
        #[test]
        fn loss_nonnegative_and_zero_iff_equal(seed in 0u64..5000, bump in prop::option::of((0usize..18, 1e-3f64..10.0))) {
            let t = rand_matrix(6, 3, seed);
            let mut p = t.clone();
            if let Some((i, d)) = bump {
                p.as_mut_slice()[i] += d;
            }
            let l = mpjpe_train_loss(&p, &t).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, bump.is_none());
        }

        #[test]
        fn loss_invariant_under_joint_permutation(seed in 0u64..5000, rot in 0usize..4) {
            let p = rand_matrix(12, 4, seed);
            let t = rand_matrix(12, 4, seed + 1);
            let perm = |m: &Matrix| Matrix::from_fn(12, 4, |r, c| m.get(3 * ((r / 3 + rot) % 4) + r % 3, c));
            let a = mpjpe_train_loss(&p, &t).unwrap();
            let b = mpjpe_train_loss(&perm(&p), &perm(&t)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }
}
