//! Dense numeric core: a row-major `f64` matrix, valid 1-D convolution and
//! `tanh`, each paired with a hand-written backward rule, plus a central
//! finite-difference gradient used as an independent oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("row 0 has {cols} columns"),
                    format!("row {i} has {}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    fn check_same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape_str(), other.shape_str()));
        }
        Ok(())
    }

    /// Standard matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::shape("matmul", self.shape_str(), rhs.shape_str()));
        }
        let (m, n, p) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            let out_row = &mut out[i * p..(i + 1) * p];
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &rhs.data[k * p..(k + 1) * p];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix {
            rows: m,
            cols: p,
            data: out,
        })
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::shape("t_matmul", self.shape_str(), rhs.shape_str()));
        }
        let (n, m, p) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![0.0; m * p];
        for k in 0..n {
            let a_row = &self.data[k * m..(k + 1) * m];
            let b_row = &rhs.data[k * p..(k + 1) * p];
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out[i * p..(i + 1) * p];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix {
            rows: m,
            cols: p,
            data: out,
        })
    }

    /// `self · rhsᵀ` without materializing the transpose.
    pub fn matmul_t(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(Error::shape("matmul_t", self.shape_str(), rhs.shape_str()));
        }
        let (m, n, p) = (self.rows, self.cols, rhs.rows);
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            let a_row = &self.data[i * n..(i + 1) * n];
            for j in 0..p {
                let b_row = &rhs.data[j * n..(j + 1) * n];
                out[i * p + j] = a_row.iter().zip(b_row).map(|(a, b)| a * b).sum();
            }
        }
        Ok(Matrix {
            rows: m,
            cols: p,
            data: out,
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "sub")?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Gradients of `C = A·B` given `dL/dC`: returns `(dL/dA, dL/dB)`.
pub fn matmul_backward(a: &Matrix, b: &Matrix, d_out: &Matrix) -> Result<(Matrix, Matrix)> {
    let da = d_out.matmul_t(b)?;
    let db = a.t_matmul(d_out)?;
    Ok((da, db))
}

/// Valid (unpadded, stride 1) cross-correlation: `out[i] = b + Σ_u x[i+u]·w[u]`.
pub fn conv1d_valid(x: &[f64], w: &[f64], b: f64) -> Result<Vec<f64>> {
    if w.is_empty() || w.len() > x.len() {
        return Err(Error::shape(
            "conv1d_valid",
            format!("input len {}", x.len()),
            format!("kernel len {}", w.len()),
        ));
    }
    Ok(x.windows(w.len())
        .map(|win| b + win.iter().zip(w).map(|(a, k)| a * k).sum::<f64>())
        .collect())
}

/// Gradients of [`conv1d_valid`] given `dL/dout`: returns `(dx, dw, db)`.
pub fn conv1d_valid_backward(x: &[f64], w: &[f64], d_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let s = w.len();
    if s == 0 || s > x.len() || d_out.len() != x.len() - s + 1 {
        return Err(Error::shape(
            "conv1d_valid_backward",
            format!("input len {}, kernel len {s}", x.len()),
            format!("grad len {}", d_out.len()),
        ));
    }
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; s];
    for (i, &g) in d_out.iter().enumerate() {
        for u in 0..s {
            dw[u] += g * x[i + u];
            dx[i + u] += g * w[u];
        }
    }
    Ok((dx, dw, d_out.iter().sum()))
}

/// Elementwise `tanh`.
pub fn activation(x: &Matrix) -> Matrix {
    x.map(f64::tanh)
}

/// Backward of [`activation`] in terms of its output `y = tanh(x)`.
pub fn activation_backward(y: &Matrix, d_out: &Matrix) -> Result<Matrix> {
    y.check_same_shape(d_out, "activation_backward")?;
    Ok(Matrix {
        rows: y.rows,
        cols: y.cols,
        data: y.data.iter().zip(&d_out.data).map(|(y, g)| g * (1.0 - y * y)).collect(),
    })
}

/// Central finite differences of `f` at `theta`, one coordinate at a time.
pub fn finite_diff_grad<F>(mut f: F, theta: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Numeric(format!("finite-difference step must be > 0, got {eps}")));
    }
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&probe);
        probe[i] = orig - eps;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "objective not finite around coordinate {i}: f(+)={plus}, f(-)={minus}"
            )));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// Relative error used by the gradient checks: `|a−n| / max(1e-12, |a|+|n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}
