//! Temporal Inception Module.
//!
//! Each joint-coordinate trajectory is cut into suffix subsequences (the most
//! recent `M_j` frames for branch `j`), every subsequence is run through a set
//! of valid 1-D convolutions, and all outputs are concatenated into one
//! embedding row. Concatenation order is fixed: branches in listed order, then
//! kernel groups in listed order, then kernel instances by index.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{conv1d_valid, conv1d_valid_backward, Matrix};

/// `count` kernels of width `size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub count: usize,
    pub size: usize,
}

impl KernelSpec {
    pub const fn new(count: usize, size: usize) -> Self {
        Self { count, size }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub subseq_len: usize,
    pub kernels: Vec<KernelSpec>,
}

impl BranchSpec {
    pub fn new(subseq_len: usize, kernels: &[(usize, usize)]) -> Self {
        Self {
            subseq_len,
            kernels: kernels.iter().map(|&(n, s)| KernelSpec::new(n, s)).collect(),
        }
    }

    /// Length of this branch's output.
    pub fn output_len(&self) -> usize {
        self.kernels
            .iter()
            .map(|k| k.count * (self.subseq_len + 1 - k.size))
            .sum()
    }
}

/// Ordered list of branches. Construction validates every kernel fits its
/// subsequence, so downstream shape arithmetic cannot underflow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTimConfig", into = "RawTimConfig")]
pub struct TimConfig {
    branches: Vec<BranchSpec>,
}

#[derive(Serialize, Deserialize)]
struct RawTimConfig {
    branches: Vec<BranchSpec>,
}

impl TryFrom<RawTimConfig> for TimConfig {
    type Error = Error;
    fn try_from(raw: RawTimConfig) -> Result<Self> {
        TimConfig::new(raw.branches)
    }
}

impl From<TimConfig> for RawTimConfig {
    fn from(cfg: TimConfig) -> Self {
        RawTimConfig { branches: cfg.branches }
    }
}

pub const PRESET_5_10: &str = "tim-5-10";
pub const PRESET_5_10_15: &str = "tim-5-10-15";

impl TimConfig {
    pub fn new(branches: Vec<BranchSpec>) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::Config("TIM needs at least one branch".into()));
        }
        for (j, b) in branches.iter().enumerate() {
            if b.subseq_len == 0 {
                return Err(Error::Config(format!("branch {j}: subsequence length must be >= 1")));
            }
            if b.kernels.is_empty() {
                return Err(Error::Config(format!("branch {j}: no kernels")));
            }
            for (l, k) in b.kernels.iter().enumerate() {
                if k.count == 0 || k.size == 0 {
                    return Err(Error::Config(format!(
                        "branch {j} kernel group {l}: count and size must be >= 1"
                    )));
                }
                if k.size > b.subseq_len {
                    return Err(Error::Config(format!(
                        "branch {j} kernel group {l}: size {} exceeds subsequence length {}",
                        k.size, b.subseq_len
                    )));
                }
            }
        }
        Ok(Self { branches })
    }

    /// The two-branch (5, 10) module with the pass-through kernel.
    pub fn tim_5_10() -> Self {
        Self::new(vec![
            BranchSpec::new(5, &[(12, 2), (9, 3)]),
            BranchSpec::new(10, &[(9, 3), (7, 5), (6, 7), (1, 1)]),
        ])
        .expect("preset is valid")
    }

    /// [`TimConfig::tim_5_10`] plus a length-15 branch whose kernel sizes
    /// scale with its length.
    pub fn tim_5_10_15() -> Self {
        let mut branches = Self::tim_5_10().branches;
        branches.push(BranchSpec::new(15, &[(9, 4), (7, 7), (6, 10)]));
        Self::new(branches).expect("preset is valid")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            PRESET_5_10 => Some(Self::tim_5_10()),
            PRESET_5_10_15 => Some(Self::tim_5_10_15()),
            _ => None,
        }
    }

    pub fn branches(&self) -> &[BranchSpec] {
        &self.branches
    }

    /// `M_J`: the longest subsequence, i.e. the observed window length.
    pub fn input_len(&self) -> usize {
        self.branches.iter().map(|b| b.subseq_len).max().unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.branches
            .iter()
            .flat_map(|b| &b.kernels)
            .map(|k| k.count * (k.size + 1))
            .sum()
    }
}

/// `Σ_j Σ_(n,s) n·(M_j − s + 1)`.
pub fn embedding_dim(cfg: &TimConfig) -> usize {
    cfg.branches.iter().map(BranchSpec::output_len).sum()
}

/// Weights (`count × size`) and biases (`count × 1`) for one kernel group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelGroup {
    pub weights: Matrix,
    pub bias: Matrix,
}

impl KernelGroup {
    fn zeros(spec: KernelSpec) -> Self {
        Self {
            weights: Matrix::zeros(spec.count, spec.size),
            bias: Matrix::zeros(spec.count, 1),
        }
    }
}

/// All kernel groups of one module, flattened in (branch, group) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimParamSet {
    pub groups: Vec<KernelGroup>,
}

impl TimParamSet {
    pub fn zeros(cfg: &TimConfig) -> Self {
        Self {
            groups: cfg
                .branches
                .iter()
                .flat_map(|b| b.kernels.iter().copied().map(KernelGroup::zeros))
                .collect(),
        }
    }

    /// Uniform `[−1/√s, 1/√s]` kernels, zero biases; width-1 kernels start at 1.
    pub fn init<R: Rng + ?Sized>(cfg: &TimConfig, rng: &mut R) -> Self {
        let mut set = Self::zeros(cfg);
        for g in &mut set.groups {
            let s = g.weights.cols();
            let bound = 1.0 / (s as f64).sqrt();
            for w in g.weights.as_mut_slice() {
                *w = if s == 1 { 1.0 } else { rng.gen_range(-bound..=bound) };
            }
        }
        set
    }

    fn check(&self, cfg: &TimConfig) -> Result<()> {
        let expected = TimParamSet::zeros(cfg);
        let ok = self.groups.len() == expected.groups.len()
            && self
                .groups
                .iter()
                .zip(&expected.groups)
                .all(|(a, b)| a.weights.shape() == b.weights.shape() && a.bias.shape() == b.bias.shape());
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                "tim params",
                format!("{} kernel groups", self.groups.len()),
                format!("config with {} kernel groups", expected.groups.len()),
            ))
        }
    }
}

/// Kernel parameters shared by every coordinate, or one set per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimParams {
    pub sets: Vec<TimParamSet>,
}

impl TimParams {
    pub fn zeros(cfg: &TimConfig, coords: usize, per_coordinate: bool) -> Self {
        let n = if per_coordinate { coords } else { 1 };
        Self {
            sets: (0..n).map(|_| TimParamSet::zeros(cfg)).collect(),
        }
    }

    pub fn init<R: Rng + ?Sized>(cfg: &TimConfig, coords: usize, per_coordinate: bool, rng: &mut R) -> Self {
        let n = if per_coordinate { coords } else { 1 };
        Self {
            sets: (0..n).map(|_| TimParamSet::init(cfg, rng)).collect(),
        }
    }

    pub fn is_shared(&self) -> bool {
        self.sets.len() == 1
    }

    /// Parameter set used for coordinate row `k`.
    pub fn set_for(&self, k: usize) -> &TimParamSet {
        if self.is_shared() {
            &self.sets[0]
        } else {
            &self.sets[k]
        }
    }

    fn set_for_mut(&mut self, k: usize) -> &mut TimParamSet {
        if self.sets.len() == 1 {
            &mut self.sets[0]
        } else {
            &mut self.sets[k]
        }
    }

    pub fn arrays(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (c, set) in self.sets.iter().enumerate() {
            for (g, group) in set.groups.iter().enumerate() {
                let prefix = self.prefix(c, g);
                out.push((format!("{prefix}.w"), &group.weights));
                out.push((format!("{prefix}.b"), &group.bias));
            }
        }
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Matrix> {
        self.sets
            .iter_mut()
            .flat_map(|s| s.groups.iter_mut())
            .flat_map(|g| [&mut g.weights, &mut g.bias])
            .collect()
    }

    fn prefix(&self, set: usize, group: usize) -> String {
        if self.is_shared() {
            format!("tim.g{group}")
        } else {
            format!("tim.c{set}.g{group}")
        }
    }
}

/// The length-`M_j` suffix of `x` for every branch, in branch order.
pub fn sample_subsequences<'a>(x: &'a [f64], cfg: &TimConfig) -> Vec<&'a [f64]> {
    cfg.branches
        .iter()
        .map(|b| &x[x.len().saturating_sub(b.subseq_len)..])
        .collect()
}

/// One branch: every kernel of every group applied to `x_j`, concatenated.
pub fn tim_branch_forward(x_j: &[f64], branch: &BranchSpec, groups: &[KernelGroup]) -> Result<Vec<f64>> {
    if x_j.len() != branch.subseq_len || groups.len() != branch.kernels.len() {
        return Err(Error::shape(
            "tim_branch_forward",
            format!("input len {}, {} groups", x_j.len(), groups.len()),
            format!("branch M={}, {} groups", branch.subseq_len, branch.kernels.len()),
        ));
    }
    let mut out = Vec::with_capacity(branch.output_len());
    for group in groups {
        for i in 0..group.weights.rows() {
            out.extend(conv1d_valid(x_j, group.weights.row(i), group.bias.get(i, 0))?);
        }
    }
    Ok(out)
}

/// Embedding of one trajectory `x` (oldest → newest, length `M_J`).
pub fn tim_forward(x: &[f64], cfg: &TimConfig, params: &TimParamSet) -> Result<Vec<f64>> {
    if x.len() != cfg.input_len() {
        return Err(Error::shape(
            "tim_forward",
            format!("input len {}", x.len()),
            format!("M_J = {}", cfg.input_len()),
        ));
    }
    params.check(cfg)?;
    let mut out = Vec::with_capacity(embedding_dim(cfg));
    let mut offset = 0;
    for (branch, sub) in cfg.branches.iter().zip(sample_subsequences(x, cfg)) {
        let groups = &params.groups[offset..offset + branch.kernels.len()];
        out.extend(tim_branch_forward(sub, branch, groups)?);
        offset += branch.kernels.len();
    }
    Ok(out)
}

/// Backward of [`tim_forward`]: accumulates kernel/bias gradients into
/// `grads` and returns `dL/dx`.
pub fn tim_backward(
    x: &[f64],
    cfg: &TimConfig,
    params: &TimParamSet,
    d_embedding: &[f64],
    grads: &mut TimParamSet,
) -> Result<Vec<f64>> {
    if d_embedding.len() != embedding_dim(cfg) || x.len() != cfg.input_len() {
        return Err(Error::shape(
            "tim_backward",
            format!("input len {}, grad len {}", x.len(), d_embedding.len()),
            format!("M_J = {}, D_E = {}", cfg.input_len(), embedding_dim(cfg)),
        ));
    }
    params.check(cfg)?;
    grads.check(cfg)?;
    let m_max = x.len();
    let mut dx = vec![0.0; m_max];
    let mut pos = 0;
    let mut g_idx = 0;
    for branch in &cfg.branches {
        let start = m_max - branch.subseq_len;
        let sub = &x[start..];
        for spec in &branch.kernels {
            let n_out = branch.subseq_len + 1 - spec.size;
            let group = &params.groups[g_idx];
            let grad = &mut grads.groups[g_idx];
            for i in 0..spec.count {
                let d_out = &d_embedding[pos..pos + n_out];
                let (dsub, dw, db) = conv1d_valid_backward(sub, group.weights.row(i), d_out)?;
                for (acc, v) in dx[start..].iter_mut().zip(&dsub) {
                    *acc += v;
                }
                for (acc, v) in grad.weights.row_mut(i).iter_mut().zip(&dw) {
                    *acc += v;
                }
                let b = grad.bias.get(i, 0);
                grad.bias.set(i, 0, b + db);
                pos += n_out;
            }
            g_idx += 1;
        }
    }
    Ok(dx)
}

/// Row-wise embedding of a `K × M_J` trajectory matrix.
pub fn tim_forward_all(x: &Matrix, cfg: &TimConfig, params: &TimParams) -> Result<Matrix> {
    if !params.is_shared() && params.sets.len() != x.rows() {
        return Err(Error::shape(
            "tim_forward_all",
            format!("{} coordinate rows", x.rows()),
            format!("{} per-coordinate parameter sets", params.sets.len()),
        ));
    }
    let d_e = embedding_dim(cfg);
    let mut data = Vec::with_capacity(x.rows() * d_e);
    for k in 0..x.rows() {
        data.extend(tim_forward(x.row(k), cfg, params.set_for(k))?);
    }
    Matrix::new(x.rows(), d_e, data)
}

/// Backward of [`tim_forward_all`]; returns `dL/dX`.
pub fn tim_backward_all(
    x: &Matrix,
    cfg: &TimConfig,
    params: &TimParams,
    d_embedding: &Matrix,
    grads: &mut TimParams,
) -> Result<Matrix> {
    if d_embedding.rows() != x.rows() || grads.sets.len() != params.sets.len() {
        return Err(Error::shape(
            "tim_backward_all",
            format!("{} rows", x.rows()),
            format!("{} gradient rows", d_embedding.rows()),
        ));
    }
    let mut dx = Vec::with_capacity(x.len());
    for k in 0..x.rows() {
        dx.extend(tim_backward(
            x.row(k),
            cfg,
            params.set_for(k),
            d_embedding.row(k),
            grads.set_for_mut(k),
        )?);
    }
    Matrix::new(x.rows(), x.cols(), dx)
}
