//! Dense vectors and matrices, seeded random streams, and first-order
//! optimizers.
//!
//! Vectors are plain `[f64]` slices; [`Matrix`] is a row-major dense matrix
//! with fixed dimensions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Explicitly seeded random stream. There is no global generator.
pub type Rng = ChaCha8Rng;

pub fn rng_new(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded with `seed`.
///
/// Per-sample work derives its randomness from `(seed, sample index)`, so the
/// result does not depend on how samples are scheduled across threads.
pub fn rng_stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L0,
    L2,
    Linf,
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Norm::L0 => "l0",
            Norm::L2 => "l2",
            Norm::Linf => "linf",
        })
    }
}

/// ℓ0 counts exact nonzeros, ℓ2 is Euclidean, ℓ∞ is max-abs.
pub fn norm(v: &[f64], p: Norm) -> f64 {
    match p {
        Norm::L0 => v.iter().filter(|&&x| x != 0.0).count() as f64,
        Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        Norm::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
    }
}

/// Number of coordinates where `a` and `b` differ (exact comparison).
pub fn count_changed(a: &[f64], b: &[f64]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

pub fn ensure_finite(what: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Numerically stable `ln(1 + exp(z))`.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln Σ exp(v_i)`; `-inf` for an empty slice.
pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim(rows * cols, data.len())?;
        ensure_finite("matrix", &data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim(cols, r.len())?;
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Rows selected by `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.cols, x.len())?;
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_dim(self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a != 0.0 {
                    axpy(a, other.row(k), out_row);
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            kind: OptimKind::Sgd,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
            batch_size: 64,
            epochs: 20,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn sgd(lr: f64) -> Self {
        Self { kind: OptimKind::Sgd, lr, momentum: 0.0, ..Self::default() }
    }

    pub fn adam(lr: f64) -> Self {
        Self { kind: OptimKind::Adam, lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.momentum < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("momentum and weight decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Optimizer state: SGD momentum buffer, or Adam moments and step count.
///
/// SGD follows the PyTorch convention (weight decay added to the gradient,
/// momentum buffer initialised with the first gradient). Adam uses
/// bias-corrected moments with weight decay as an L2 term.
#[derive(Debug, Clone)]
pub struct OptimState {
    config: OptimConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl OptimState {
    pub fn new(config: &OptimConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        let second = match config.kind {
            OptimKind::Adam => vec![0.0; dim],
            OptimKind::Sgd => Vec::new(),
        };
        Ok(Self { config: config.clone(), first: vec![0.0; dim], second, steps: 0 })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_dim(self.first.len(), params.len())?;
        check_dim(params.len(), grad.len())?;
        let c = &self.config;
        self.steps += 1;
        match c.kind {
            OptimKind::Sgd => {
                for i in 0..params.len() {
                    let g = grad[i] + c.weight_decay * params[i];
                    let d = if c.momentum > 0.0 {
                        let buf = if self.steps == 1 { g } else { c.momentum * self.first[i] + g };
                        self.first[i] = buf;
                        buf
                    } else {
                        g
                    };
                    params[i] -= c.lr * d;
                }
            }
            OptimKind::Adam => {
                let t = self.steps as i32;
                let bc1 = 1.0 - c.beta1.powi(t);
                let bc2 = 1.0 - c.beta2.powi(t);
                for i in 0..params.len() {
                    let g = grad[i] + c.weight_decay * params[i];
                    self.first[i] = c.beta1 * self.first[i] + (1.0 - c.beta1) * g;
                    self.second[i] = c.beta2 * self.second[i] + (1.0 - c.beta2) * g * g;
                    let m_hat = self.first[i] / bc1;
                    let v_hat = self.second[i] / bc2;
                    params[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps_hat);
                }
            }
        }
        Ok(())
    }
}
