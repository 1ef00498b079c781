//! Perturbation generators: targeted PGD (ℓ2, ℓ∞), ℓ2 counterfactuals with
//! Adam, sparse plausible counterfactuals solved by monotone accelerated
//! proximal gradient, and random noise with a matched budget.
//!
//! Every generator is a pure function of its inputs (plus an explicit RNG for
//! noise), so samples can be processed in parallel.

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::density::DensityEstimator;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{check_dim, count_changed, norm, sub, Norm, OptimConfig, OptimState, Rng};
use crate::Label;

#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidConfig("box lower bound exceeds upper bound".into()));
        }
        Ok(Self { lower, upper })
    }

    /// `⨉ᵢ [−aᵢ, aᵢ]`.
    pub fn symmetric(a: &[f64]) -> Result<Self> {
        Self::new(a.iter().map(|v| -v).collect(), a.to_vec())
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        Self::new(data.feature_min().to_vec(), data.feature_max().to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.outside(x).is_none()
    }

    fn outside(&self, x: &[f64]) -> Option<usize> {
        x.iter().zip(self.lower.iter().zip(&self.upper)).position(|(v, (l, u))| !(l <= v && v <= u))
    }

    pub fn check_contains(&self, x: &[f64]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        match self.outside(x) {
            Some(i) => Err(Error::OutsideBox(i)),
            None => Ok(()),
        }
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    /// Smallest box containing both `self` and `x`.
    pub fn widened_to(&self, x: &[f64]) -> Self {
        Self {
            lower: self.lower.iter().zip(x).map(|(l, v)| l.min(*v)).collect(),
            upper: self.upper.iter().zip(x).map(|(u, v)| u.max(*v)).collect(),
        }
    }
}

/// How a run obtains its box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoxSpec {
    /// Per-coordinate min/max of the training data.
    Dataset,
    Symmetric { a: f64 },
    Range { lower: f64, upper: f64 },
}

impl Default for BoxSpec {
    fn default() -> Self {
        BoxSpec::Dataset
    }
}

impl BoxSpec {
    pub fn resolve(&self, data: &Dataset) -> Result<BoxBounds> {
        match self {
            BoxSpec::Dataset => BoxBounds::from_dataset(data),
            BoxSpec::Symmetric { a } => BoxBounds::symmetric(&vec![*a; data.dim()]),
            BoxSpec::Range { lower, upper } => BoxBounds::uniform(data.dim(), *lower, *upper),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgdSpec {
    pub norm: Norm,
    pub epsilon: f64,
    pub steps: usize,
    /// Defaults to `2.5 ε / steps`.
    pub step_size: Option<f64>,
    /// Clamp every iterate to the feature range.
    pub clamp: bool,
}

impl Default for PgdSpec {
    fn default() -> Self {
        Self { norm: Norm::L2, epsilon: 0.78, steps: 100, step_size: None, clamp: false }
    }
}

impl PgdSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.norm == Norm::L0 {
            return Err(Error::InvalidConfig("PGD supports l2 and linf only".into()));
        }
        if let Some(a) = self.step_size {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::InvalidConfig(format!("step size must be >= 0, got {a}")));
            }
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.step_size.unwrap_or(if self.steps == 0 { 0.0 } else { 2.5 * self.epsilon / self.steps as f64 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfeSpec {
    /// Weight of the squared ℓ2 distance.
    pub lambda: f64,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for CfeSpec {
    fn default() -> Self {
        Self { lambda: 0.001, learning_rate: 0.01, iterations: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityMode {
    /// Plausibility term `−τ q̂`.
    Raw,
    /// Plausibility term `−τ ln q̂`; stays finite in high dimension.
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcfeSpec {
    pub gamma: f64,
    pub tau: f64,
    pub beta: f64,
    pub bounds: BoxSpec,
    /// Initial Lipschitz estimate; the step is `1/L`.
    pub lipschitz: f64,
    /// Cap on step halvings per iteration.
    pub search_steps: usize,
    pub iterations: usize,
    pub density_mode: DensityMode,
    /// When set, β is tuned per sample to hit this modified-coordinate ratio.
    pub target_ratio: Option<f64>,
    pub beta_bracket: (f64, f64),
}

impl Default for PcfeSpec {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            tau: 0.1,
            beta: 0.01,
            bounds: BoxSpec::Dataset,
            lipschitz: 1.0,
            search_steps: 5,
            iterations: 50,
            density_mode: DensityMode::Raw,
            target_ratio: None,
            beta_bracket: (1e-6, 1e2),
        }
    }
}

impl PcfeSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma", self.gamma), ("tau", self.tau), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.lipschitz > 0.0 && self.lipschitz.is_finite()) {
            return Err(Error::InvalidConfig(format!("lipschitz must be > 0, got {}", self.lipschitz)));
        }
        if let Some(r) = self.target_ratio {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::InvalidConfig(format!("target ratio must lie in (0, 1], got {r}")));
            }
        }
        let (lo, hi) = self.beta_bracket;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::InvalidConfig("beta bracket must satisfy 0 < lo < hi".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub norm: Norm,
    /// ε for l2/linf, number of resampled coordinates for l0.
    pub magnitude: f64,
    pub bounds: BoxSpec,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { norm: Norm::L2, magnitude: 0.78, bounds: BoxSpec::Dataset }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum PerturbSpec {
    Pgd(PgdSpec),
    Cfe(CfeSpec),
    Pcfe(PcfeSpec),
    Noise(NoiseSpec),
}

impl PerturbSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PerturbSpec::Pgd(s) => s.validate(),
            PerturbSpec::Cfe(s) => {
                if !(s.lambda >= 0.0 && s.learning_rate > 0.0) {
                    return Err(Error::InvalidConfig("CFE needs lambda >= 0 and learning_rate > 0".into()));
                }
                Ok(())
            }
            PerturbSpec::Pcfe(s) => s.validate(),
            PerturbSpec::Noise(s) => {
                if !(s.magnitude >= 0.0 && s.magnitude.is_finite()) {
                    return Err(Error::InvalidConfig(format!("noise magnitude must be >= 0, got {}", s.magnitude)));
                }
                Ok(())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PerturbSpec::Pgd(s) if s.norm == Norm::Linf => "pgd_linf",
            PerturbSpec::Pgd(_) => "pgd_l2",
            PerturbSpec::Cfe(_) => "cfe_l2",
            PerturbSpec::Pcfe(_) => "pcfe_l0",
            PerturbSpec::Noise(_) => "noise",
        }
    }
}

/// One generator output with its achieved size.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub x: Vec<f64>,
    pub valid: bool,
    pub l0: usize,
    pub l2: f64,
    pub linf: f64,
    /// Composite objective per iteration (p-CFE only), starting at the input.
    pub trace: Vec<f64>,
    /// β actually used (p-CFE only).
    pub beta: Option<f64>,
    /// False when β tuning found no run within the target ratio.
    pub feasible: bool,
}

impl Perturbation {
    fn measure(model: &Model, x: &[f64], x_new: Vec<f64>, target: Label) -> Result<Self> {
        let delta = sub(&x_new, x);
        Ok(Self {
            valid: model.predict(&x_new)? == target,
            l0: count_changed(&x_new, x),
            l2: norm(&delta, Norm::L2),
            linf: norm(&delta, Norm::Linf),
            x: x_new,
            trace: Vec::new(),
            beta: None,
            feasible: true,
        })
    }
}

/// Euclidean projection onto the ε-ball of `norm` (l2 or linf).
pub fn project(delta: &[f64], eps: f64, p: Norm) -> Vec<f64> {
    match p {
        Norm::Linf => delta.iter().map(|d| d.clamp(-eps, eps)).collect(),
        _ => {
            let n = norm(delta, Norm::L2);
            if n > eps {
                let mut out: Vec<f64> = delta.iter().map(|d| d / n * eps).collect();
                // Rounding can leave the norm a few ulps above ε.
                while norm(&out, Norm::L2) > eps {
                    out.iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
                }
                out
            } else {
                delta.to_vec()
            }
        }
    }
}

/// Targeted PGD: minimise `L(x̃, ỹ)` over the ε-ball around `x`.
pub fn pgd_targeted(model: &Model, x: &[f64], target: Label, spec: &PgdSpec, clamp: Option<&BoxBounds>) -> Result<Perturbation> {
    spec.validate()?;
    check_dim(model.input_dim(), x.len())?;
    if spec.epsilon == 0.0 || spec.steps == 0 {
        return Perturbation::measure(model, x, x.to_vec(), target);
    }
    let alpha = spec.alpha();
    let mut cur = x.to_vec();
    for _ in 0..spec.steps {
        let g = model.grad_input(&cur, target)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input gradient"));
        }
        let scale = match spec.norm {
            Norm::Linf => None,
            _ => {
                let n = norm(&g, Norm::L2);
                if n == 0.0 {
                    break;
                }
                Some(alpha / n)
            }
        };
        let step: Vec<f64> = cur
            .iter()
            .zip(&g)
            .zip(x)
            .map(|((c, gi), xi)| {
                let moved = match scale {
                    Some(s) => c - s * gi,
                    None => c - alpha * sign(*gi),
                };
                moved - xi
            })
            .collect();
        let delta = project(&step, spec.epsilon, spec.norm);
        cur = x.iter().zip(&delta).map(|(a, d)| a + d).collect();
        if let Some(b) = clamp {
            b.clamp(&mut cur);
        }
    }
    Perturbation::measure(model, x, cur, target)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// ℓ2 counterfactual: Adam on `L(x′, ỹ) + λ‖x′ − x‖²` from `x′ = x`.
pub fn cfe_l2(model: &Model, x: &[f64], target: Label, spec: &CfeSpec) -> Result<Perturbation> {
    check_dim(model.input_dim(), x.len())?;
    let mut cur = x.to_vec();
    let mut opt = OptimState::new(&OptimConfig::adam(spec.learning_rate), x.len())?;
    for _ in 0..spec.iterations {
        let (loss, mut g) = model.loss_grad_input(&cur, target)?;
        let mut obj = loss;
        for ((gi, c), xi) in g.iter_mut().zip(&cur).zip(x) {
            *gi += 2.0 * spec.lambda * (c - xi);
            obj += spec.lambda * (c - xi) * (c - xi);
        }
        if !obj.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("counterfactual objective"));
        }
        opt.step(&mut cur, &g)?;
    }
    Perturbation::measure(model, x, cur, target)
}

/// Exact minimiser of `½‖u − v‖² + tβ‖u − x‖₀` over the box.
pub fn prox_l0_box(v: &[f64], x: &[f64], t_beta: f64, bounds: &BoxBounds) -> Result<Vec<f64>> {
    check_dim(x.len(), v.len())?;
    bounds.check_contains(x)?;
    Ok(v
        .iter()
        .zip(x)
        .zip(bounds.lower.iter().zip(&bounds.upper))
        .map(|((vi, xi), (l, u))| {
            let keep = 0.5 * (xi - vi) * (xi - vi);
            let c = vi.clamp(*l, *u);
            let change = 0.5 * (c - vi) * (c - vi) + t_beta;
            if change < keep {
                c
            } else {
                *xi
            }
        })
        .collect())
}

/// Smooth part `‖x′−x‖² + γL(x′,ỹ) − τ·plaus(x′)` and its gradient.
struct Smooth<'a> {
    model: &'a Model,
    est: Option<&'a DensityEstimator>,
    x: &'a [f64],
    target: Label,
    gamma: f64,
    tau: f64,
    mode: DensityMode,
}

impl Smooth<'_> {
    fn value_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (loss, gl) = self.model.loss_grad_input(z, self.target)?;
        let mut val = self.gamma * loss;
        let mut grad: Vec<f64> = gl.iter().map(|g| self.gamma * g).collect();
        for ((g, zi), xi) in grad.iter_mut().zip(z).zip(self.x) {
            val += (zi - xi) * (zi - xi);
            *g += 2.0 * (zi - xi);
        }
        if self.tau > 0.0 {
            let est = self.est.ok_or_else(|| Error::InvalidConfig("plausibility term needs a density estimator".into()))?;
            let (q, gq) = match self.mode {
                DensityMode::Raw => est.grad_density(z, self.target)?,
                DensityMode::Log => est.grad_log_density(z, self.target)?,
            };
            val -= self.tau * q;
            for (g, v) in grad.iter_mut().zip(&gq) {
                *g -= self.tau * v;
            }
        }
        if !val.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("smooth objective gradient"));
        }
        Ok((val, grad))
    }

    fn value(&self, z: &[f64]) -> Result<f64> {
        Ok(self.value_grad(z)?.0)
    }
}

/// Composite objective `‖x′−x‖² + γL − τ·plaus + β‖x′−x‖₀` (plaus per
/// `spec.density_mode`).
pub fn pcfe_objective(model: &Model, est: Option<&DensityEstimator>, x: &[f64], target: Label, spec: &PcfeSpec, z: &[f64]) -> Result<f64> {
    let s = Smooth { model, est, x, target, gamma: spec.gamma, tau: spec.tau, mode: spec.density_mode };
    Ok(s.value(z)? + spec.beta * count_changed(z, x) as f64)
}

/// Sparse plausible counterfactual by monotone FISTA with backtracking.
pub fn pcfe_l0(
    model: &Model,
    est: Option<&DensityEstimator>,
    x: &[f64],
    target: Label,
    spec: &PcfeSpec,
    bounds: &BoxBounds,
) -> Result<Perturbation> {
    spec.validate()?;
    check_dim(model.input_dim(), x.len())?;
    bounds.check_contains(x)?;
    let smooth = Smooth { model, est, x, target, gamma: spec.gamma, tau: spec.tau, mode: spec.density_mode };
    let beta = spec.beta;
    let composite = |z: &[f64], g: f64| g + beta * count_changed(z, x) as f64;

    let mut cur = x.to_vec();
    let mut f_cur = smooth.value(&cur)?;
    let mut trace = vec![composite(&cur, f_cur)];
    let mut y = cur.clone();
    let mut prev = cur.clone();
    let mut t = 1.0f64;
    let mut lip = spec.lipschitz;

    for _ in 0..spec.iterations {
        let (gy, grad) = smooth.value_grad(&y)?;
        let mut halvings = 0;
        let (z, gz) = loop {
            let v: Vec<f64> = y.iter().zip(&grad).map(|(a, g)| a - g / lip).collect();
            let z = prox_l0_box(&v, x, beta / lip, bounds)?;
            let gz = smooth.value(&z)?;
            let mut bound = gy;
            for ((zi, yi), g) in z.iter().zip(&y).zip(&grad) {
                let d = zi - yi;
                bound += g * d + 0.5 * lip * d * d;
            }
            if gz <= bound + 1e-12 * bound.abs().max(1.0) || halvings >= spec.search_steps {
                break (z, gz);
            }
            lip *= 2.0;
            halvings += 1;
        };
        let f_z = composite(&z, gz);
        let f_best = composite(&cur, f_cur);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        prev.clone_from(&cur);
        if f_z <= f_best {
            cur = z.clone();
            f_cur = gz;
        }
        y = cur
            .iter()
            .zip(&z)
            .zip(&prev)
            .map(|((c, zi), p)| c + (t / t_next) * (zi - c) + ((t - 1.0) / t_next) * (c - p))
            .collect();
        t = t_next;
        trace.push(composite(&cur, f_cur));
    }
    let mut out = Perturbation::measure(model, x, cur, target)?;
    out.trace = trace;
    out.beta = Some(beta);
    Ok(out)
}

/// Outcome of the β search.
#[derive(Debug, Clone)]
pub struct BetaTuning {
    pub beta: f64,
    pub perturbation: Perturbation,
    pub feasible: bool,
    /// `(β, modified coordinates)` for every probe, in probe order.
    pub probes: Vec<(f64, usize)>,
}

const MAX_BETA_PROBES: usize = 20;

/// Log-space bisection on β for the run with the most modified coordinates
/// not exceeding `⌈ratio·d⌉` (ties go to the larger β). Runs that change
/// nothing do not count as feasible.
pub fn tune_beta_for_ratio(
    model: &Model,
    est: Option<&DensityEstimator>,
    x: &[f64],
    target: Label,
    spec: &PcfeSpec,
    bounds: &BoxBounds,
    ratio: f64,
) -> Result<BetaTuning> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidConfig(format!("target ratio must lie in (0, 1], got {ratio}")));
    }
    let limit = (ratio * x.len() as f64).ceil() as usize;
    let (mut lo, mut hi) = (spec.beta_bracket.0.ln(), spec.beta_bracket.1.ln());
    let mut probes = Vec::new();
    let mut best: Option<(f64, Perturbation)> = None;
    let mut sparsest: Option<(f64, Perturbation)> = None;
    let run = |beta: f64| pcfe_l0(model, est, x, target, &PcfeSpec { beta, target_ratio: None, ..spec.clone() }, bounds);

    // Probe the bracket ends first, then bisect.
    let mut order: Vec<f64> = vec![lo, hi];
    while probes.len() < MAX_BETA_PROBES {
        let lb = match order.pop() {
            Some(v) => v,
            None => 0.5 * (lo + hi),
        };
        let beta = lb.exp();
        let p = run(beta)?;
        let k = p.l0;
        probes.push((beta, k));
        if sparsest.as_ref().is_none_or(|(b, s)| k < s.l0 || (k == s.l0 && beta > *b)) {
            sparsest = Some((beta, p.clone()));
        }
        let feasible = k > 0 && k <= limit;
        if feasible && best.as_ref().is_none_or(|(b, s)| k > s.l0 || (k == s.l0 && beta > *b)) {
            best = Some((beta, p));
        }
        if k > limit {
            lo = lo.max(lb);
        } else {
            hi = hi.min(lb);
        }
        if k == limit || hi - lo < 1e-9 {
            break;
        }
    }
    let (feasible, (beta, mut perturbation)) = match best {
        Some(b) => (true, b),
        None => (false, sparsest.expect("at least one probe runs")),
    };
    perturbation.feasible = feasible;
    Ok(BetaTuning { beta, perturbation, feasible, probes })
}

/// Random perturbation with a fixed budget.
pub fn noise_baseline(x: &[f64], spec: &NoiseSpec, bounds: Option<&BoxBounds>, rng: &mut Rng) -> Result<Vec<f64>> {
    let m = spec.magnitude;
    if !(m >= 0.0 && m.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise magnitude must be >= 0, got {m}")));
    }
    let d = x.len();
    match spec.norm {
        Norm::L2 => {
            let u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let n = norm(&u, Norm::L2);
            Ok(x.iter().zip(&u).map(|(a, v)| a + m * v / n).collect())
        }
        Norm::Linf => Ok(x.iter().map(|a| if rng.random::<bool>() { a + m } else { a - m }).collect()),
        Norm::L0 => {
            let b = bounds.ok_or_else(|| Error::InvalidConfig("l0 noise needs box bounds".into()))?;
            check_dim(b.dim(), d)?;
            let k = m.round() as usize;
            if k > d {
                return Err(Error::InvalidConfig(format!("cannot modify {k} of {d} coordinates")));
            }
            let mut out = x.to_vec();
            for i in sample(rng, d, k).into_vec() {
                let (l, u) = (b.lower[i], b.upper[i]);
                if !(l < u) {
                    return Err(Error::InvalidConfig(format!("box is degenerate at coordinate {i}")));
                }
                loop {
                    let v = rng.random_range(l..=u);
                    if v != x[i] {
                        out[i] = v;
                        break;
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Inputs shared by every sample of one perturbation run.
#[derive(Debug, Clone, Copy)]
pub struct PerturbContext<'a> {
    pub model: &'a Model,
    pub density: Option<&'a DensityEstimator>,
    pub bounds: Option<&'a BoxBounds>,
}

/// Dispatch one sample to its generator.
pub fn perturb_one(ctx: PerturbContext<'_>, x: &[f64], target: Label, spec: &PerturbSpec, rng: &mut Rng) -> Result<Perturbation> {
    match spec {
        PerturbSpec::Pgd(s) => pgd_targeted(ctx.model, x, target, s, if s.clamp { ctx.bounds } else { None }),
        PerturbSpec::Cfe(s) => cfe_l2(ctx.model, x, target, s),
        PerturbSpec::Pcfe(s) => {
            let bounds = ctx.bounds.ok_or_else(|| Error::InvalidConfig("p-CFE needs box bounds".into()))?;
            // Test inputs may fall just outside a box derived from training data.
            let widened;
            let bounds = if bounds.contains(x) {
                bounds
            } else {
                widened = bounds.widened_to(x);
                &widened
            };
            match s.target_ratio {
                Some(r) => Ok(tune_beta_for_ratio(ctx.model, ctx.density, x, target, s, bounds, r)?.perturbation),
                None => pcfe_l0(ctx.model, ctx.density, x, target, s, bounds),
            }
        }
        PerturbSpec::Noise(s) => {
            let x_new = noise_baseline(x, s, ctx.bounds, rng)?;
            Perturbation::measure(ctx.model, x, x_new, target)
        }
    }
}
