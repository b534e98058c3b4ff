//! Full predictor: TIM embedding, GCN residual regression, and the
//! last-observed-pose broadcast.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{gcn_backward, gcn_forward, gcn_forward_trace, GcnConfig, GcnParams};
use crate::linalg::Matrix;
use crate::tim::{embedding_dim, tim_backward_all, tim_forward_all, TimConfig, TimParams};
use crate::trainer::{mpjpe_train_loss, mpjpe_train_loss_grad, TrainWindow};

/// Architecture of a complete model. `gcn.input_dim` and `gcn.output_dim`
/// are tied to the TIM configuration and the prediction length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub tim: TimConfig,
    #[serde(default)]
    pub per_coordinate_params: bool,
    pub gcn: GcnConfig,
    /// `T`, the number of future frames.
    pub pred_len: usize,
}

impl ModelConfig {
    pub fn new(tim: TimConfig, coords: usize, pred_len: usize, hidden_dim: usize, num_blocks: usize) -> Result<Self> {
        let gcn = GcnConfig {
            coords,
            input_dim: embedding_dim(&tim),
            hidden_dim,
            num_blocks,
            output_dim: tim.input_len() + pred_len,
            dropout_rate: 0.0,
        };
        let cfg = Self {
            tim,
            per_coordinate_params: false,
            gcn,
            pred_len,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.gcn.validate()?;
        let mut bad = Vec::new();
        if self.pred_len == 0 {
            bad.push("pred_len must be >= 1".to_string());
        }
        if self.gcn.input_dim != embedding_dim(&self.tim) {
            bad.push(format!(
                "gcn.input_dim {} != TIM embedding size {}",
                self.gcn.input_dim,
                embedding_dim(&self.tim)
            ));
        }
        if self.gcn.output_dim != self.input_len() + self.pred_len {
            bad.push(format!(
                "gcn.output_dim {} != M_J + T = {}",
                self.gcn.output_dim,
                self.input_len() + self.pred_len
            ));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// `M_J`.
    pub fn input_len(&self) -> usize {
        self.tim.input_len()
    }

    pub fn coords(&self) -> usize {
        self.gcn.coords
    }

    pub fn num_params(&self) -> usize {
        let sets = if self.per_coordinate_params { self.coords() } else { 1 };
        sets * self.tim.num_params() + self.gcn.num_params()
    }
}

/// Gradients aligned with [`MotionModel::arrays`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub arrays: Vec<Matrix>,
}

impl GradBundle {
    pub fn zeros_like(model: &MotionModel) -> Self {
        Self {
            arrays: model
                .arrays()
                .into_iter()
                .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradBundle) -> Result<()> {
        if self.arrays.len() != other.arrays.len() {
            return Err(Error::shape(
                "GradBundle::add_assign",
                format!("{} arrays", self.arrays.len()),
                format!("{} arrays", other.arrays.len()),
            ));
        }
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.arrays.iter_mut().for_each(|a| a.scale(s));
    }

    pub fn global_norm(&self) -> f64 {
        self.arrays.iter().map(Matrix::sum_sq).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().all(Matrix::is_finite)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.arrays.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionModel {
    pub config: ModelConfig,
    pub tim: TimParams,
    pub gcn: GcnParams,
}

impl MotionModel {
    /// Seeded initialization: TIM kernels first, then GCN layers in order.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tim = TimParams::init(&config.tim, config.coords(), config.per_coordinate_params, &mut rng);
        let gcn = GcnParams::init(&config.gcn, &mut rng);
        Ok(Self { config, tim, gcn })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let tim = TimParams::zeros(&config.tim, config.coords(), config.per_coordinate_params);
        let gcn = GcnParams::zeros(&config.gcn);
        Ok(Self { config, tim, gcn })
    }

    /// Named parameter arrays in checkpoint order: TIM then GCN.
    pub fn arrays(&self) -> Vec<(String, &Matrix)> {
        let mut out = self.tim.arrays();
        out.extend(self.gcn.arrays());
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.tim.arrays_mut();
        out.extend(self.gcn.arrays_mut());
        out
    }

    pub fn num_params(&self) -> usize {
        self.arrays().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.arrays()
            .iter()
            .flat_map(|(_, m)| m.as_slice().iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(Error::shape(
                "set_flat_params",
                format!("{} values", theta.len()),
                format!("{} parameters", self.num_params()),
            ));
        }
        let mut i = 0;
        for m in self.arrays_mut() {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&theta[i..i + n]);
            i += n;
        }
        Ok(())
    }

    fn check_input(&self, x_past: &Matrix) -> Result<()> {
        let want = (self.config.coords(), self.config.input_len());
        if x_past.shape() != want {
            return Err(Error::shape(
                "predict",
                format!("input {}x{}", x_past.rows(), x_past.cols()),
                format!("expected {}x{}", want.0, want.1),
            ));
        }
        Ok(())
    }

    /// Raw GCN output before the last-pose broadcast.
    pub fn residual(&self, x_past: &Matrix) -> Result<Matrix> {
        self.check_input(x_past)?;
        let e = tim_forward_all(x_past, &self.config.tim, &self.tim)?;
        gcn_forward(&e, &self.config.gcn, &self.gcn)
    }

    pub fn predict(&self, x_past: &Matrix) -> Result<Matrix> {
        predict(x_past, self)
    }

    /// Training loss of one window and its gradient w.r.t. every parameter.
    /// `dropout_seed` seeds the dropout masks; ignored when dropout is off.
    pub fn loss_and_grad(&self, window: &TrainWindow, dropout_seed: Option<u64>) -> Result<(f64, GradBundle)> {
        let x = &window.input;
        self.check_input(x)?;
        let cfg = &self.config;
        let e = tim_forward_all(x, &cfg.tim, &self.tim)?;
        let trace = match dropout_seed {
            Some(seed) if cfg.gcn.dropout_rate > 0.0 => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                gcn_forward_trace(&e, &cfg.gcn, &self.gcn, Some(&mut rng))?
            }
            _ => gcn_forward_trace::<ChaCha8Rng>(&e, &cfg.gcn, &self.gcn, None)?,
        };
        let pred = broadcast_last_pose(trace.prediction(), x)?;
        let loss = mpjpe_train_loss(&pred, &window.target)?;
        // The broadcast add has unit Jacobian w.r.t. the residual.
        let d_pred = mpjpe_train_loss_grad(&pred, &window.target)?;

        let mut gcn_grads = GcnParams::zeros(&cfg.gcn);
        let d_e = gcn_backward(&trace, &self.gcn, &d_pred, &mut gcn_grads)?;
        let mut tim_grads = TimParams::zeros(&cfg.tim, cfg.coords(), cfg.per_coordinate_params);
        tim_backward_all(x, &cfg.tim, &self.tim, &d_e, &mut tim_grads)?;

        let arrays = tim_grads
            .arrays()
            .into_iter()
            .chain(gcn_grads.arrays())
            .map(|(_, m)| m.clone())
            .collect();
        Ok((loss, GradBundle { arrays }))
    }

    /// Training loss only (no gradient, no dropout).
    pub fn loss(&self, window: &TrainWindow) -> Result<f64> {
        mpjpe_train_loss(&self.predict(&window.input)?, &window.target)
    }
}

/// Adds column `X_{−1}` (the last column of `x_past`) to every column of `residual`.
pub fn broadcast_last_pose(residual: &Matrix, x_past: &Matrix) -> Result<Matrix> {
    if residual.rows() != x_past.rows() || x_past.cols() == 0 {
        return Err(Error::shape(
            "broadcast_last_pose",
            format!("residual {}x{}", residual.rows(), residual.cols()),
            format!("input {}x{}", x_past.rows(), x_past.cols()),
        ));
    }
    let last = x_past.cols() - 1;
    Ok(Matrix::from_fn(residual.rows(), residual.cols(), |r, c| {
        residual.get(r, c) + x_past.get(r, last)
    }))
}

/// `X̃_{−M_J:T−1} = G(E) + X_{−1}`; columns `M_J..` are the forecast.
pub fn predict(x_past: &Matrix, model: &MotionModel) -> Result<Matrix> {
    let residual = model.residual(x_past)?;
    broadcast_last_pose(&residual, x_past)
}
