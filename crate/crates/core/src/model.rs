//! Linear and ReLU-MLP classifiers with hand-derived gradients.
//!
//! Binary models have a single margin output `f(x)` and labels in {-1, +1}
//! (exponential or logistic loss); multi-class models have `C` logits and
//! cross-entropy loss. All parameters live in one flat vector, layer by
//! layer: row-major weights (`out × in`) followed by the bias.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelSpace};
use crate::error::{Error, Result};
use crate::numerics::{axpy, check_dim, dot, ensure_finite, logsumexp, sigmoid, softplus, OptimConfig, OptimState, Rng};
use crate::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `exp(-y f(x))`
    Exponential,
    /// `ln(1 + exp(-y f(x)))`
    Logistic,
    /// `-log softmax(z)[y]`
    CrossEntropy,
}

impl LossKind {
    pub fn is_binary(&self) -> bool {
        !matches!(self, LossKind::CrossEntropy)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Hidden ReLU layer widths; empty for a linear model.
    pub hidden: Vec<usize>,
    pub outputs: usize,
}

impl Architecture {
    pub fn linear(input_dim: usize, outputs: usize) -> Self {
        Self { input_dim, hidden: Vec::new(), outputs }
    }

    pub fn mlp(input_dim: usize, hidden: Vec<usize>, outputs: usize) -> Self {
        Self { input_dim, hidden, outputs }
    }

    /// `(fan_in, fan_out)` of each affine layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in self.hidden.iter().chain(std::iter::once(&self.outputs)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }

    fn validate(&self, loss: LossKind) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be >= 1".into()));
        }
        match loss {
            LossKind::Exponential | LossKind::Logistic if self.outputs != 1 => Err(Error::InvalidConfig(
                "exponential/logistic losses need a single margin output".into(),
            )),
            LossKind::CrossEntropy if self.outputs < 2 => {
                Err(Error::InvalidConfig("cross-entropy needs at least 2 logits".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    arch: Architecture,
    loss: LossKind,
    params: Vec<f64>,
}

/// Trained model plus the full-data training loss after every epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub loss_trace: Vec<f64>,
}

impl Model {
    pub fn zeros(arch: Architecture, loss: LossKind) -> Result<Self> {
        arch.validate(loss)?;
        let params = vec![0.0; arch.num_params()];
        Ok(Self { arch, loss, params })
    }

    pub fn from_params(arch: Architecture, loss: LossKind, params: Vec<f64>) -> Result<Self> {
        arch.validate(loss)?;
        check_dim(arch.num_params(), params.len())?;
        ensure_finite("model parameters", &params)?;
        Ok(Self { arch, loss, params })
    }

    /// Weights and biases uniform in `[-1/√fan_in, 1/√fan_in]`.
    pub fn init(arch: Architecture, loss: LossKind, rng: &mut Rng) -> Result<Self> {
        let mut m = Self::zeros(arch, loss)?;
        let mut off = 0;
        for (fan_in, fan_out) in m.arch.layers() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut m.params[off..off + fan_in * fan_out + fan_out] {
                *p = rng.random_range(-bound..=bound);
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(m)
    }

    /// Linear binary-margin model `f(x) = w·x + b`.
    pub fn linear(weights: Vec<f64>, bias: f64, loss: LossKind) -> Result<Self> {
        let arch = Architecture::linear(weights.len(), 1);
        let mut params = weights;
        params.push(bias);
        Self::from_params(arch, loss, params)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn label_space(&self) -> LabelSpace {
        if self.loss.is_binary() {
            LabelSpace::Binary
        } else {
            LabelSpace::Multiclass(self.arch.outputs)
        }
    }

    /// Same architecture and loss, new parameters.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        Self::from_params(self.arch.clone(), self.loss, params)
    }

    /// Layer outputs: post-ReLU for hidden layers, raw logits last.
    fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let layers = self.arch.layers();
        let last = layers.len() - 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
        let mut off = 0;
        for (l, &(din, dout)) in layers.iter().enumerate() {
            let input: &[f64] = if l == 0 { x } else { &acts[l - 1] };
            let w = &self.params[off..off + din * dout];
            let b = &self.params[off + din * dout..off + din * dout + dout];
            let mut out: Vec<f64> = (0..dout).map(|o| dot(&w[o * din..(o + 1) * din], input) + b[o]).collect();
            if l < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
            off += din * dout + dout;
        }
        acts
    }

    /// Backpropagate `delta = dL/dlogits`. Accumulates `scale ·` parameter
    /// gradients into `grad` when given; returns the input gradient when
    /// `want_input`.
    fn backward(
        &self,
        x: &[f64],
        acts: &[Vec<f64>],
        mut delta: Vec<f64>,
        mut grad: Option<&mut [f64]>,
        scale: f64,
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let layers = self.arch.layers();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut off = 0;
        for &(din, dout) in &layers {
            offsets.push(off);
            off += din * dout + dout;
        }
        for l in (0..layers.len()).rev() {
            let (din, dout) = layers[l];
            let off = offsets[l];
            let input: &[f64] = if l == 0 { x } else { &acts[l - 1] };
            if let Some(g) = grad.as_deref_mut() {
                for o in 0..dout {
                    let d = delta[o] * scale;
                    if d != 0.0 {
                        axpy(d, input, &mut g[off + o * din..off + (o + 1) * din]);
                        g[off + din * dout + o] += d;
                    }
                }
            }
            if l == 0 && !want_input {
                return None;
            }
            let w = &self.params[off..off + din * dout];
            let mut prev = vec![0.0; din];
            for o in 0..dout {
                if delta[o] != 0.0 {
                    axpy(delta[o], &w[o * din..(o + 1) * din], &mut prev);
                }
            }
            if l > 0 {
                // ReLU subgradient: 1 where the unit was active, 0 otherwise (including at 0).
                for (p, a) in prev.iter_mut().zip(&acts[l - 1]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        Some(delta)
    }

    fn loss_and_delta(&self, logits: &[f64], y: Label) -> Result<(f64, Vec<f64>)> {
        self.label_space().check(y)?;
        Ok(match self.loss {
            LossKind::Exponential => {
                let m = y as f64 * logits[0];
                let e = (-m).exp();
                (e, vec![-(y as f64) * e])
            }
            LossKind::Logistic => {
                let m = y as f64 * logits[0];
                (softplus(-m), vec![-(y as f64) * sigmoid(-m)])
            }
            LossKind::CrossEntropy => {
                let lse = logsumexp(logits);
                let mut delta: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
                delta[y as usize] -= 1.0;
                (lse - logits[y as usize], delta)
            }
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.arch.input_dim, x.len())?;
        Ok(self.forward_all(x).pop().expect("at least one layer"))
    }

    pub fn loss(&self, x: &[f64], y: Label) -> Result<f64> {
        let logits = self.forward(x)?;
        Ok(self.loss_and_delta(&logits, y)?.0)
    }

    /// Loss and its gradient with respect to the input.
    pub fn loss_grad_input(&self, x: &[f64], y: Label) -> Result<(f64, Vec<f64>)> {
        check_dim(self.arch.input_dim, x.len())?;
        let acts = self.forward_all(x);
        let (loss, delta) = self.loss_and_delta(acts.last().unwrap(), y)?;
        let g = self.backward(x, &acts, delta, None, 1.0, true).unwrap();
        Ok((loss, g))
    }

    pub fn grad_input(&self, x: &[f64], y: Label) -> Result<Vec<f64>> {
        Ok(self.loss_grad_input(x, y)?.1)
    }

    /// Adds `scale · ∇θ L(x, y)` into `grad`; returns the loss.
    pub fn accumulate_grad(&self, x: &[f64], y: Label, grad: &mut [f64], scale: f64) -> Result<f64> {
        check_dim(self.arch.input_dim, x.len())?;
        check_dim(self.params.len(), grad.len())?;
        let acts = self.forward_all(x);
        let (loss, delta) = self.loss_and_delta(acts.last().unwrap(), y)?;
        self.backward(x, &acts, delta, Some(grad), scale, false);
        Ok(loss)
    }

    /// Mean loss and mean parameter gradient over a batch.
    pub fn grad_params(&self, xs: &[&[f64]], ys: &[Label]) -> Result<(f64, Vec<f64>)> {
        check_dim(xs.len(), ys.len())?;
        if xs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let scale = 1.0 / xs.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            loss += self.accumulate_grad(x, y, &mut grad, scale)?;
        }
        Ok((loss * scale, grad))
    }

    /// Binary: sign of the margin with ties to -1. Multi-class: argmax with
    /// ties to the smaller index.
    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        let logits = self.forward(x)?;
        Ok(if self.loss.is_binary() {
            if logits[0] > 0.0 { 1 } else { -1 }
        } else {
            let mut best = 0;
            for (i, &z) in logits.iter().enumerate() {
                if z > logits[best] {
                    best = i;
                }
            }
            best as Label
        })
    }

    pub fn mean_loss(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut total = 0.0;
        for i in 0..data.len() {
            total += self.loss(data.x(i), data.y(i))?;
        }
        Ok(total / data.len() as f64)
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        check_dim(self.arch.input_dim, data.dim())?;
        if data.label_space() != self.label_space() {
            return Err(Error::InvalidConfig(format!(
                "dataset labels {:?} do not match model head {:?}",
                data.label_space(),
                self.label_space()
            )));
        }
        Ok(())
    }
}

/// Minibatch first-order ERM. Each epoch draws a fresh shuffle from `rng`.
pub fn train(init: &Model, data: &Dataset, opt: &OptimConfig, rng: &mut Rng) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    init.check_data(data)?;
    let mut state = OptimState::new(opt, init.params.len())?;
    let mut model = init.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; model.params.len()];
    let mut loss_trace = Vec::with_capacity(opt.epochs);
    for epoch in 0..opt.epochs {
        order.shuffle(rng);
        for batch in order.chunks(opt.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += model.accumulate_grad(data.x(i), data.y(i), &mut grad, scale)?;
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch });
            }
            state.step(&mut model.params, &grad)?;
        }
        let loss = model.mean_loss(data)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        loss_trace.push(loss);
    }
    Ok(TrainOutcome { model, loss_trace })
}
