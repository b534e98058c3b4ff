//! Graph convolutional prediction network over `K` fully connected nodes.
//!
//! Each layer computes `σ(A·H·W)` with its own learnable `K × K` adjacency.
//! The stack is an input layer, `num_blocks` residual blocks of two hidden
//! layers, and an un-activated output layer that regresses residual motion.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{activation, activation_backward, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnConfig {
    /// Number of graph nodes (joint coordinates).
    pub coords: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_blocks: usize,
    pub output_dim: usize,
    #[serde(default)]
    pub dropout_rate: f64,
}

impl GcnConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (name, v) in [
            ("coords", self.coords),
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_blocks", self.num_blocks),
            ("output_dim", self.output_dim),
        ] {
            if v == 0 {
                bad.push(format!("{name} must be >= 1"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            bad.push(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    pub fn num_params(&self) -> usize {
        let k2 = self.coords * self.coords;
        let h = self.hidden_dim;
        (k2 + self.input_dim * h) + self.num_blocks * 2 * (k2 + h * h) + (k2 + h * self.output_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnLayerParams {
    pub adjacency: Matrix,
    pub weights: Matrix,
}

impl GcnLayerParams {
    pub fn zeros(coords: usize, f_in: usize, f_out: usize) -> Self {
        Self {
            adjacency: Matrix::zeros(coords, coords),
            weights: Matrix::zeros(f_in, f_out),
        }
    }

    /// `A = I + U(±0.01)`, `W = U(±1/√f_in)`.
    pub fn init<R: Rng + ?Sized>(coords: usize, f_in: usize, f_out: usize, rng: &mut R) -> Self {
        let mut adjacency = Matrix::identity(coords);
        for a in adjacency.as_mut_slice() {
            *a += rng.gen_range(-0.01..=0.01);
        }
        let bound = 1.0 / (f_in as f64).sqrt();
        let weights = Matrix::from_fn(f_in, f_out, |_, _| rng.gen_range(-bound..=bound));
        Self { adjacency, weights }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnParams {
    pub input: GcnLayerParams,
    pub blocks: Vec<[GcnLayerParams; 2]>,
    pub output: GcnLayerParams,
}

impl GcnParams {
    pub fn zeros(cfg: &GcnConfig) -> Self {
        let (k, h) = (cfg.coords, cfg.hidden_dim);
        Self {
            input: GcnLayerParams::zeros(k, cfg.input_dim, h),
            blocks: (0..cfg.num_blocks)
                .map(|_| [GcnLayerParams::zeros(k, h, h), GcnLayerParams::zeros(k, h, h)])
                .collect(),
            output: GcnLayerParams::zeros(k, h, cfg.output_dim),
        }
    }

    pub fn init<R: Rng + ?Sized>(cfg: &GcnConfig, rng: &mut R) -> Self {
        let (k, h) = (cfg.coords, cfg.hidden_dim);
        let input = GcnLayerParams::init(k, cfg.input_dim, h, rng);
        let blocks = (0..cfg.num_blocks)
            .map(|_| {
                let a = GcnLayerParams::init(k, h, h, rng);
                let b = GcnLayerParams::init(k, h, h, rng);
                [a, b]
            })
            .collect();
        let output = GcnLayerParams::init(k, h, cfg.output_dim, rng);
        Self { input, blocks, output }
    }

    /// Zeroes the output layer so the network regresses no residual motion.
    pub fn zero_output_layer(&mut self) {
        self.output.adjacency.fill(0.0);
        self.output.weights.fill(0.0);
    }

    fn layers(&self) -> impl Iterator<Item = (String, &GcnLayerParams)> {
        std::iter::once(("gcn.input".to_string(), &self.input))
            .chain(self.blocks.iter().enumerate().flat_map(|(b, pair)| {
                pair.iter()
                    .enumerate()
                    .map(move |(l, layer)| (format!("gcn.block{b}.{l}"), layer))
            }))
            .chain(std::iter::once(("gcn.output".to_string(), &self.output)))
    }

    pub fn arrays(&self) -> Vec<(String, &Matrix)> {
        self.layers()
            .flat_map(|(name, l)| [(format!("{name}.A"), &l.adjacency), (format!("{name}.W"), &l.weights)])
            .collect()
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.input.adjacency, &mut self.input.weights];
        for pair in &mut self.blocks {
            for l in pair.iter_mut() {
                out.push(&mut l.adjacency);
                out.push(&mut l.weights);
            }
        }
        out.push(&mut self.output.adjacency);
        out.push(&mut self.output.weights);
        out
    }

    fn check(&self, cfg: &GcnConfig) -> Result<()> {
        let expected = GcnParams::zeros(cfg);
        let same = self.arrays().len() == expected.arrays().len()
            && self
                .arrays()
                .iter()
                .zip(expected.arrays())
                .all(|((_, a), (_, b))| a.shape() == b.shape());
        if same {
            Ok(())
        } else {
            Err(Error::shape(
                "gcn params",
                format!("{} layers", 2 + 2 * self.blocks.len()),
                format!(
                    "config K={} in={} hidden={} blocks={} out={}",
                    cfg.coords, cfg.input_dim, cfg.hidden_dim, cfg.num_blocks, cfg.output_dim
                ),
            ))
        }
    }
}

/// `A·H·W`, then `tanh` iff `apply_activation`.
pub fn gcn_layer(h: &Matrix, layer: &GcnLayerParams, apply_activation: bool) -> Result<Matrix> {
    let z = layer.adjacency.matmul(h)?.matmul(&layer.weights)?;
    Ok(if apply_activation { activation(&z) } else { z })
}

/// Intermediate values of one layer needed by the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    input: Matrix,
    ah: Matrix,
    /// Post-activation output before dropout.
    out: Matrix,
    activated: bool,
    /// Inverted-dropout multipliers (0 or 1/(1−p)), if dropout was applied.
    mask: Option<Matrix>,
}

impl LayerCache {
    pub fn output(&self) -> Matrix {
        match &self.mask {
            Some(m) => Matrix::from_fn(self.out.rows(), self.out.cols(), |r, c| {
                self.out.get(r, c) * m.get(r, c)
            }),
            None => self.out.clone(),
        }
    }
}

fn layer_forward<R: Rng + ?Sized>(
    h: &Matrix,
    layer: &GcnLayerParams,
    activated: bool,
    dropout: Option<(f64, &mut R)>,
) -> Result<LayerCache> {
    let ah = layer.adjacency.matmul(h)?;
    let z = ah.matmul(&layer.weights)?;
    let out = if activated { activation(&z) } else { z };
    let mask = match dropout {
        Some((p, rng)) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            Some(Matrix::from_fn(out.rows(), out.cols(), |_, _| {
                if rng.gen::<f64>() < p {
                    0.0
                } else {
                    keep
                }
            }))
        }
        _ => None,
    };
    Ok(LayerCache {
        input: h.clone(),
        ah,
        out,
        activated,
        mask,
    })
}

/// Backward of one layer; returns `dL/dH` and writes `dA`, `dW` into `grad`.
pub fn gcn_layer_backward(
    cache: &LayerCache,
    layer: &GcnLayerParams,
    d_out: &Matrix,
    grad: &mut GcnLayerParams,
) -> Result<Matrix> {
    let mut d = d_out.clone();
    if let Some(mask) = &cache.mask {
        for (g, m) in d.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            *g *= m;
        }
    }
    let dz = if cache.activated {
        activation_backward(&cache.out, &d)?
    } else {
        d
    };
    // Z = (A·H)·W
    grad.weights.add_assign(&cache.ah.t_matmul(&dz)?)?;
    let d_ah = dz.matmul_t(&layer.weights)?;
    grad.adjacency.add_assign(&d_ah.matmul_t(&cache.input)?)?;
    layer.adjacency.t_matmul(&d_ah)
}

/// Forward record for a full network pass.
#[derive(Debug, Clone)]
pub struct GcnTrace {
    input: LayerCache,
    blocks: Vec<[LayerCache; 2]>,
    output: LayerCache,
}

impl GcnTrace {
    pub fn prediction(&self) -> &Matrix {
        &self.output.out
    }
}

fn check_input(e: &Matrix, cfg: &GcnConfig, params: &GcnParams) -> Result<()> {
    params.check(cfg)?;
    if e.shape() != (cfg.coords, cfg.input_dim) {
        return Err(Error::shape(
            "gcn_forward",
            format!("embedding {}x{}", e.rows(), e.cols()),
            format!("expected {}x{}", cfg.coords, cfg.input_dim),
        ));
    }
    Ok(())
}

/// Forward pass that keeps every intermediate; `dropout` is `(rate, rng)`.
pub fn gcn_forward_trace<R: Rng + ?Sized>(
    e: &Matrix,
    cfg: &GcnConfig,
    params: &GcnParams,
    mut dropout: Option<&mut R>,
) -> Result<GcnTrace> {
    check_input(e, cfg, params)?;
    let p = cfg.dropout_rate;
    macro_rules! drop_arg {
        () => {
            dropout.as_mut().map(|r| (p, &mut **r))
        };
    }
    let input = layer_forward(e, &params.input, true, drop_arg!())?;
    let mut h = input.output();
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for pair in &params.blocks {
        let first = layer_forward(&h, &pair[0], true, drop_arg!())?;
        let second = layer_forward(&first.output(), &pair[1], true, drop_arg!())?;
        h.add_assign(&second.output())?;
        blocks.push([first, second]);
    }
    let output = layer_forward::<R>(&h, &params.output, false, None)?;
    Ok(GcnTrace { input, blocks, output })
}

/// Residual motion `G(E)`, `K × (M_J + T)`. Dropout is never applied here.
pub fn gcn_forward(e: &Matrix, cfg: &GcnConfig, params: &GcnParams) -> Result<Matrix> {
    check_input(e, cfg, params)?;
    let mut h = gcn_layer(e, &params.input, true)?;
    for pair in &params.blocks {
        let inner = gcn_layer(&gcn_layer(&h, &pair[0], true)?, &pair[1], true)?;
        h.add_assign(&inner)?;
    }
    gcn_layer(&h, &params.output, false)
}

/// Backward of [`gcn_forward_trace`]; accumulates into `grads`, returns `dL/dE`.
pub fn gcn_backward(trace: &GcnTrace, params: &GcnParams, d_out: &Matrix, grads: &mut GcnParams) -> Result<Matrix> {
    let mut d_h = gcn_layer_backward(&trace.output, &params.output, d_out, &mut grads.output)?;
    for ((cache, pair), grad) in trace
        .blocks
        .iter()
        .zip(&params.blocks)
        .zip(grads.blocks.iter_mut())
        .rev()
    {
        let [g0, g1] = grad;
        let d_mid = gcn_layer_backward(&cache[1], &pair[1], &d_h, g1)?;
        let d_inner = gcn_layer_backward(&cache[0], &pair[0], &d_mid, g0)?;
        d_h.add_assign(&d_inner)?;
    }
    gcn_layer_backward(&trace.input, &params.input, &d_h, &mut grads.input)
}
