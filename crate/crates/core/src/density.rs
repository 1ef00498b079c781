//! Class-conditional density estimators `q̂(x, y)` with analytic input
//! gradients: Gaussian KDE with a shared bandwidth, and diagonal-covariance
//! Gaussian mixtures fitted by EM.
//!
//! Everything is evaluated in log space; [`DensityEstimator::density`] is
//! `exp` of the log-density.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{check_dim, logsumexp, rng_stream, Matrix, Rng};
use crate::Label;

/// Lower bound on every GMM variance.
pub const COV_FLOOR: f64 = 1e-6;

const MAX_RESEEDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityKind {
    Kde,
    Gmm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdeClass {
    pub label: Label,
    pub points: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmClass {
    pub label: Label,
    weights: Vec<f64>,
    means: Matrix,
    vars: Matrix,
    // ln w_k - ½ Σ_i ln(2π v_ki)
    log_consts: Vec<f64>,
}

impl GmmClass {
    pub fn new(label: Label, weights: Vec<f64>, means: Matrix, vars: Matrix) -> Result<Self> {
        let k = weights.len();
        check_dim(k, means.rows())?;
        check_dim(k, vars.rows())?;
        check_dim(means.cols(), vars.cols())?;
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("mixture weights must be positive and sum to 1".into()));
        }
        if vars.as_slice().iter().any(|v| !(*v >= COV_FLOOR)) {
            return Err(Error::InvalidConfig("mixture variances must be >= the covariance floor".into()));
        }
        let log_consts = (0..k)
            .map(|c| weights[c].ln() - 0.5 * vars.row(c).iter().map(|v| (2.0 * PI * v).ln()).sum::<f64>())
            .collect();
        Ok(Self { label, weights, means, vars, log_consts })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &Matrix {
        &self.means
    }

    pub fn vars(&self) -> &Matrix {
        &self.vars
    }

    /// `ln w_k + ln N(x; μ_k, diag v_k)` for every component.
    fn component_logs(&self, x: &[f64]) -> Vec<f64> {
        (0..self.weights.len())
            .map(|c| {
                let q: f64 = x
                    .iter()
                    .zip(self.means.row(c))
                    .zip(self.vars.row(c))
                    .map(|((xi, m), v)| (xi - m) * (xi - m) / v)
                    .sum();
                self.log_consts[c] - 0.5 * q
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DensityModel {
    Kde { bandwidth: f64, classes: Vec<KdeClass> },
    Gmm { classes: Vec<GmmClass> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimator {
    dim: usize,
    model: DensityModel,
}

impl DensityEstimator {
    pub fn from_model(dim: usize, model: DensityModel) -> Result<Self> {
        match &model {
            DensityModel::Kde { bandwidth, classes } => {
                if !(*bandwidth > 0.0 && bandwidth.is_finite()) {
                    return Err(Error::InvalidConfig(format!("bandwidth must be > 0, got {bandwidth}")));
                }
                for c in classes {
                    check_dim(dim, c.points.cols())?;
                    if c.points.rows() == 0 {
                        return Err(Error::EmptyClass(c.label));
                    }
                }
            }
            DensityModel::Gmm { classes } => {
                for c in classes {
                    check_dim(dim, c.means.cols())?;
                }
            }
        }
        Ok(Self { dim, model })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> DensityKind {
        match self.model {
            DensityModel::Kde { .. } => DensityKind::Kde,
            DensityModel::Gmm { .. } => DensityKind::Gmm,
        }
    }

    pub fn model(&self) -> &DensityModel {
        &self.model
    }

    pub fn classes(&self) -> Vec<Label> {
        match &self.model {
            DensityModel::Kde { classes, .. } => classes.iter().map(|c| c.label).collect(),
            DensityModel::Gmm { classes } => classes.iter().map(|c| c.label).collect(),
        }
    }

    /// Per-component log terms and the matching gradient factors.
    fn terms(&self, x: &[f64], class: Label) -> Result<Terms<'_>> {
        check_dim(self.dim, x.len())?;
        match &self.model {
            DensityModel::Kde { bandwidth, classes } => {
                let c = classes.iter().find(|c| c.label == class).ok_or(Error::UnknownClass(class))?;
                let h2 = bandwidth * bandwidth;
                let n = c.points.rows();
                let norm = -(n as f64).ln() - 0.5 * self.dim as f64 * (2.0 * PI * h2).ln();
                let logs = (0..n)
                    .map(|j| {
                        let d2: f64 = c.points.row(j).iter().zip(x).map(|(p, xi)| (p - xi) * (p - xi)).sum();
                        norm - d2 / (2.0 * h2)
                    })
                    .collect();
                Ok(Terms::Kde { logs, points: &c.points, h2 })
            }
            DensityModel::Gmm { classes } => {
                let c = classes.iter().find(|c| c.label == class).ok_or(Error::UnknownClass(class))?;
                Ok(Terms::Gmm { logs: c.component_logs(x), class: c })
            }
        }
    }

    pub fn log_density(&self, x: &[f64], class: Label) -> Result<f64> {
        Ok(logsumexp(self.terms(x, class)?.logs()))
    }

    pub fn density(&self, x: &[f64], class: Label) -> Result<f64> {
        Ok(self.log_density(x, class)?.exp())
    }

    /// `(ln q̂, ∇ₓ ln q̂)`.
    pub fn grad_log_density(&self, x: &[f64], class: Label) -> Result<(f64, Vec<f64>)> {
        let terms = self.terms(x, class)?;
        let logs = terms.logs();
        let lse = logsumexp(logs);
        let mut grad = vec![0.0; self.dim];
        for (j, l) in logs.iter().enumerate() {
            let r = (l - lse).exp();
            if r == 0.0 {
                continue;
            }
            match &terms {
                Terms::Kde { points, h2, .. } => {
                    for (g, (p, xi)) in grad.iter_mut().zip(points.row(j).iter().zip(x)) {
                        *g += r * (p - xi) / h2;
                    }
                }
                Terms::Gmm { class, .. } => {
                    for (i, g) in grad.iter_mut().enumerate() {
                        *g += r * (class.means.get(j, i) - x[i]) / class.vars.get(j, i);
                    }
                }
            }
        }
        Ok((lse, grad))
    }

    /// `(q̂, ∇ₓ q̂)`.
    pub fn grad_density(&self, x: &[f64], class: Label) -> Result<(f64, Vec<f64>)> {
        let (lq, mut g) = self.grad_log_density(x, class)?;
        let q = lq.exp();
        g.iter_mut().for_each(|v| *v *= q);
        Ok((q, g))
    }
}

enum Terms<'a> {
    Kde { logs: Vec<f64>, points: &'a Matrix, h2: f64 },
    Gmm { logs: Vec<f64>, class: &'a GmmClass },
}

impl Terms<'_> {
    fn logs(&self) -> &[f64] {
        match self {
            Terms::Kde { logs, .. } | Terms::Gmm { logs, .. } => logs,
        }
    }
}

fn class_points(data: &Dataset) -> Result<Vec<(Label, Matrix)>> {
    data.label_space()
        .classes()
        .into_iter()
        .map(|y| {
            let idx = data.class_indices(y);
            if idx.is_empty() {
                Err(Error::EmptyClass(y))
            } else {
                Ok((y, data.features().select_rows(&idx)))
            }
        })
        .collect()
}

/// KDE over every class of the dataset's label space with bandwidth `h`.
pub fn fit_kde(data: &Dataset, h: f64) -> Result<DensityEstimator> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidConfig(format!("bandwidth must be > 0, got {h}")));
    }
    let classes = class_points(data)?.into_iter().map(|(label, points)| KdeClass { label, points }).collect();
    DensityEstimator::from_model(data.dim(), DensityModel::Kde { bandwidth: h, classes })
}

fn per_coordinate_variance(points: &Matrix) -> Vec<f64> {
    let n = points.rows() as f64;
    let d = points.cols();
    let mut mean = vec![0.0; d];
    for i in 0..points.rows() {
        for (m, v) in mean.iter_mut().zip(points.row(i)) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for i in 0..points.rows() {
        for j in 0..d {
            let c = points.get(i, j) - mean[j];
            var[j] += c * c / n;
        }
    }
    var
}

/// Silverman-style rule `σ̂ · n^(-1/(d+4))` per class, averaged over
/// classes; `σ̂` is the root mean per-coordinate variance.
pub fn silverman_bandwidth(data: &Dataset) -> Result<f64> {
    let classes = class_points(data)?;
    let d = data.dim() as f64;
    let total: f64 = classes
        .iter()
        .map(|(_, pts)| {
            let var = per_coordinate_variance(pts);
            let sigma = (var.iter().sum::<f64>() / var.len() as f64).sqrt();
            sigma * (pts.rows() as f64).powf(-1.0 / (d + 4.0))
        })
        .sum();
    let h = total / classes.len() as f64;
    if h > 0.0 {
        Ok(h)
    } else {
        Err(Error::InvalidConfig("data has zero spread; bandwidth rule undefined".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once the mean per-sample log-likelihood improves by less than this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-8, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub estimator: DensityEstimator,
    /// Total log-likelihood per EM iteration, per class.
    pub traces: Vec<(Label, Vec<f64>)>,
    pub reseeds: usize,
}

/// Next center by D² sampling (k-means++).
fn kmeanspp_pick(points: &Matrix, centers: &[Vec<f64>], rng: &mut Rng) -> usize {
    let n = points.rows();
    if centers.is_empty() {
        return rng.random_range(0..n);
    }
    let d2: Vec<f64> = (0..n)
        .map(|i| {
            centers
                .iter()
                .map(|c| c.iter().zip(points.row(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let total: f64 = d2.iter().sum();
    if !(total > 0.0) {
        return rng.random_range(0..n);
    }
    let mut u = rng.random::<f64>() * total;
    for (i, w) in d2.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    n - 1
}

fn fit_gmm_class(label: Label, points: &Matrix, k: usize, em: &EmConfig, rng: &mut Rng) -> Result<(GmmClass, Vec<f64>, usize)> {
    let n = points.rows();
    let d = points.cols();
    if n < k {
        return Err(Error::TooFewSamples { class: label, available: n, k });
    }
    let base_var: Vec<f64> = per_coordinate_variance(points).into_iter().map(|v| v.max(COV_FLOOR)).collect();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let i = kmeanspp_pick(points, &centers, rng);
        centers.push(points.row(i).to_vec());
    }
    let mut means = Matrix::from_rows(&centers)?;
    let mut vars = Matrix::from_rows(&vec![base_var.clone(); k])?;
    let mut weights = vec![1.0 / k as f64; k];
    let mut trace = Vec::new();
    let mut reseeds = 0;
    let mut resp = Matrix::zeros(n, k);

    for iter in 0..=em.max_iters {
        let current = GmmClass::new(label, weights.clone(), means.clone(), vars.clone())?;
        let mut ll = 0.0;
        for i in 0..n {
            let logs = current.component_logs(points.row(i));
            let lse = logsumexp(&logs);
            ll += lse;
            for (c, l) in logs.iter().enumerate() {
                resp.set(i, c, (l - lse).exp());
            }
        }
        let converged = trace.last().is_some_and(|&prev: &f64| (ll - prev) / (n as f64) < em.tol);
        trace.push(ll);
        if converged || iter == em.max_iters {
            return Ok((current, trace, reseeds));
        }

        // M step
        let mut mass = vec![0.0; k];
        for i in 0..n {
            for c in 0..k {
                mass[c] += resp.get(i, c);
            }
        }
        for c in 0..k {
            if mass[c] < 1e-10 * n as f64 {
                reseeds += 1;
                if reseeds > MAX_RESEEDS {
                    return Err(Error::DegenerateComponent { class: label, component: c, retries: MAX_RESEEDS });
                }
                let others: Vec<Vec<f64>> = (0..k).filter(|&o| o != c).map(|o| means.row(o).to_vec()).collect();
                let i = kmeanspp_pick(points, &others, rng);
                means.row_mut(c).copy_from_slice(points.row(i));
                vars.row_mut(c).copy_from_slice(&base_var);
                mass[c] = 1.0;
                continue;
            }
            let mut mu = vec![0.0; d];
            for i in 0..n {
                let r = resp.get(i, c);
                if r != 0.0 {
                    for (m, x) in mu.iter_mut().zip(points.row(i)) {
                        *m += r * x;
                    }
                }
            }
            mu.iter_mut().for_each(|m| *m /= mass[c]);
            let mut var = vec![0.0; d];
            for i in 0..n {
                let r = resp.get(i, c);
                if r != 0.0 {
                    for ((v, x), m) in var.iter_mut().zip(points.row(i)).zip(&mu) {
                        *v += r * (x - m) * (x - m);
                    }
                }
            }
            var.iter_mut().for_each(|v| *v = (*v / mass[c]).max(COV_FLOOR));
            means.row_mut(c).copy_from_slice(&mu);
            vars.row_mut(c).copy_from_slice(&var);
        }
        let total: f64 = mass.iter().sum();
        weights = mass.iter().map(|m| m / total).collect();
    }
    unreachable!("loop returns on the final iteration")
}

/// Per-class diagonal GMM with `k` components, k-means++ initialisation.
pub fn fit_gmm(data: &Dataset, k: usize, em: &EmConfig) -> Result<GmmFit> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    let mut classes = Vec::new();
    let mut traces = Vec::new();
    let mut reseeds = 0;
    for (ci, (label, points)) in class_points(data)?.into_iter().enumerate() {
        let mut rng = rng_stream(em.seed, ci as u64);
        let (class, trace, r) = fit_gmm_class(label, &points, k, em, &mut rng)?;
        classes.push(class);
        traces.push((label, trace));
        reseeds += r;
    }
    let estimator = DensityEstimator::from_model(data.dim(), DensityModel::Gmm { classes })?;
    Ok(GmmFit { estimator, traces, reseeds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelSpace;
    use crate::numerics::rng_new;
    use rand_distr::StandardNormal;

    fn ds(rows: &[Vec<f64>], labels: Vec<Label>) -> Dataset {
        Dataset::new(Matrix::from_rows(rows).unwrap(), labels, LabelSpace::Binary).unwrap()
    }

    fn fd_grad(est: &DensityEstimator, x: &[f64], c: Label, log: bool) -> Vec<f64> {
        let f = |z: &[f64]| if log { est.log_density(z, c).unwrap() } else { est.density(z, c).unwrap() };
        (0..x.len())
            .map(|i| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += 1e-5;
                b[i] -= 1e-5;
                (f(&a) - f(&b)) / 2e-5
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        num / den
    }

    #[test]
    fn kde_peak_value_and_zero_gradient() {
        let h = 0.7;
        let est = fit_kde(&ds(&[vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 0.0]], vec![1, -1]), h).unwrap();
        let peak = (2.0 * PI * h * h).powf(-1.5);
        assert!((est.density(&[1.0, 2.0, 3.0], 1).unwrap() - peak).abs() < 1e-14 * peak);
        let (_, g) = est.grad_density(&[1.0, 2.0, 3.0], 1).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn kde_symmetry() {
        let est = fit_kde(&ds(&[vec![0.8], vec![-0.8], vec![5.0]], vec![1, 1, -1]), 0.5).unwrap();
        for t in [0.1, 0.5, 1.3] {
            let a = est.density(&[t], 1).unwrap();
            let b = est.density(&[-t], 1).unwrap();
            assert!((a - b).abs() < 1e-15 * a.max(1e-300));
        }
        let (_, g) = est.grad_density(&[0.0], 1).unwrap();
        assert!(g[0].abs() < 1e-15);
    }

    #[test]
    fn kde_integrates_to_one() {
        let pts = [0.3, -1.2, 2.0];
        let h = 0.4;
        let est = fit_kde(&ds(&[vec![pts[0]], vec![pts[1]], vec![pts[2]], vec![9.0]], vec![1, 1, 1, -1]), h).unwrap();
        // Trapezoid rule over [-10σ, 10σ] around the data, σ = spread of the points plus h.
        let (lo, hi, m) = (-1.2 - 10.0 * h, 2.0 + 10.0 * h, 20_000);
        let step = (hi - lo) / m as f64;
        let mut mass = 0.0;
        for i in 0..=m {
            let x = lo + i as f64 * step;
            let w = if i == 0 || i == m { 0.5 } else { 1.0 };
            mass += w * est.density(&[x], 1).unwrap() * step;
        }
        assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
    }

    #[test]
    fn kde_errors() {
        let data = ds(&[vec![0.0], vec![1.0]], vec![1, 1]);
        assert!(matches!(fit_kde(&data, 0.5), Err(Error::EmptyClass(-1))));
        let ok = ds(&[vec![0.0], vec![1.0]], vec![1, -1]);
        assert!(fit_kde(&ok, 0.0).is_err());
        assert!(fit_kde(&ok, -1.0).is_err());
        let est = fit_kde(&ok, 1.0).unwrap();
        assert!(matches!(est.density(&[0.0], 3), Err(Error::UnknownClass(3))));
    }

    fn random_data(rng: &mut Rng, n: usize, d: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let labels = (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        ds(&rows, labels)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = rng_new(17);
        for trial in 0..10 {
            let d = 2 + trial % 4;
            let data = random_data(&mut rng, 20, d);
            let kde = fit_kde(&data, 0.8).unwrap();
            let gmm = fit_gmm(&data, 2, &EmConfig { seed: trial as u64, ..Default::default() }).unwrap().estimator;
            for est in [&kde, &gmm] {
                for c in [-1, 1] {
                    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
                    let (_, g) = est.grad_density(&x, c).unwrap();
                    assert!(rel_err(&g, &fd_grad(est, &x, c, false)) < 1e-4);
                    let (_, gl) = est.grad_log_density(&x, c).unwrap();
                    assert!(rel_err(&gl, &fd_grad(est, &x, c, true)) < 1e-4);
                }
            }
        }
    }

    #[test]
    fn log_space_agrees_with_naive_sum() {
        let mut rng = rng_new(5);
        for _ in 0..10 {
            let data = random_data(&mut rng, 12, 3);
            let h = 0.9;
            let kde = fit_kde(&data, h).unwrap();
            let gmm = fit_gmm(&data, 2, &EmConfig::default()).unwrap().estimator;
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            // naive KDE
            let idx = data.class_indices(1);
            let naive: f64 = idx
                .iter()
                .map(|&j| {
                    let d2: f64 = data.x(j).iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
                    (2.0 * PI * h * h).powf(-1.5) * (-d2 / (2.0 * h * h)).exp()
                })
                .sum::<f64>()
                / idx.len() as f64;
            let q = kde.density(&x, 1).unwrap();
            assert!((q - naive).abs() < 1e-10 * naive);
            // naive GMM
            if let DensityModel::Gmm { classes } = gmm.model() {
                let c = classes.iter().find(|c| c.label == 1).unwrap();
                let naive: f64 = (0..c.weights().len())
                    .map(|k| {
                        let mut p = c.weights()[k];
                        for i in 0..3 {
                            let v = c.vars().get(k, i);
                            let m = c.means().get(k, i);
                            p *= (2.0 * PI * v).powf(-0.5) * (-(x[i] - m).powi(2) / (2.0 * v)).exp();
                        }
                        p
                    })
                    .sum();
                let q = gmm.density(&x, 1).unwrap();
                assert!((q - naive).abs() < 1e-10 * naive);
            }
        }
    }

    #[test]
    fn single_component_is_closed_form() {
        let mut rng = rng_new(2);
        let data = random_data(&mut rng, 40, 3);
        let fit = fit_gmm(&data, 1, &EmConfig::default()).unwrap();
        let DensityModel::Gmm { classes } = fit.estimator.model() else { panic!() };
        for c in classes {
            let pts = data.features().select_rows(&data.class_indices(c.label));
            let var = per_coordinate_variance(&pts);
            for j in 0..3 {
                let mean: f64 = (0..pts.rows()).map(|i| pts.get(i, j)).sum::<f64>() / pts.rows() as f64;
                assert!((c.means().get(0, j) - mean).abs() < 1e-12);
                assert!((c.vars().get(0, j) - var[j].max(COV_FLOOR)).abs() < 1e-12);
            }
            assert_eq!(c.weights(), &[1.0]);
            // peak value
            let mu = c.means().row(0).to_vec();
            let peak = (2.0 * PI).powf(-1.5) / c.vars().row(0).iter().map(|v| v.sqrt()).product::<f64>();
            let q = fit.estimator.density(&mu, c.label).unwrap();
            assert!((q - peak).abs() < 1e-12 * peak);
        }
    }

    #[test]
    fn em_log_likelihood_is_monotone() {
        let mut rng = rng_new(8);
        for seed in 0..5 {
            let data = random_data(&mut rng, 60, 2);
            let fit = fit_gmm(&data, 3, &EmConfig { seed, max_iters: 50, tol: 0.0 }).unwrap();
            assert_eq!(fit.reseeds, 0);
            for (_, trace) in &fit.traces {
                for w in trace.windows(2) {
                    assert!(w[1] >= w[0] - 1e-9, "{trace:?}");
                }
            }
        }
    }

    #[test]
    fn recovers_separated_clusters() {
        let mut rng = rng_new(21);
        let centers = [[-3.0, 2.0], [4.0, -1.0]];
        let mut rows = Vec::new();
        for i in 0..600 {
            let c = centers[i % 2];
            let z0: f64 = rng.sample(StandardNormal);
            let z1: f64 = rng.sample(StandardNormal);
            rows.push(vec![c[0] + 0.3 * z0, c[1] + 0.3 * z1]);
        }
        let mut labels = vec![1; 600];
        labels.push(-1);
        rows.push(vec![0.0, 0.0]);
        labels.push(-1);
        rows.push(vec![1.0, 1.0]);
        let data = ds(&rows, labels);
        let fit = fit_gmm(&data, 2, &EmConfig { seed: 3, ..Default::default() }).unwrap();
        let DensityModel::Gmm { classes } = fit.estimator.model() else { panic!() };
        let c = classes.iter().find(|c| c.label == 1).unwrap();
        for t in centers {
            let best = (0..2)
                .map(|k| ((c.means().get(k, 0) - t[0]).powi(2) + (c.means().get(k, 1) - t[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.1, "center {t:?} missed by {best}");
        }
    }

    #[test]
    fn gmm_errors() {
        let data = ds(&[vec![0.0], vec![1.0], vec![2.0]], vec![1, 1, -1]);
        assert!(matches!(fit_gmm(&data, 2, &EmConfig::default()), Err(Error::TooFewSamples { class: -1, .. })));
        assert!(fit_gmm(&data, 0, &EmConfig::default()).is_err());
    }

    #[test]
    fn kde_is_exchangeable() {
        let mut rng = rng_new(4);
        let data = random_data(&mut rng, 30, 4);
        let mut idx: Vec<usize> = (0..30).collect();
        idx.reverse();
        let a = fit_kde(&data, 0.6).unwrap();
        let b = fit_kde(&data.subset(&idx), 0.6).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4];
        let (qa, qb) = (a.density(&x, 1).unwrap(), b.density(&x, 1).unwrap());
        assert!((qa - qb).abs() <= 1e-12 * qa);
    }

    #[test]
    fn log_density_finite_far_away() {
        let mut rng = rng_new(6);
        let data = random_data(&mut rng, 30, 3);
        let h = silverman_bandwidth(&data).unwrap();
        let kde = fit_kde(&data, h).unwrap();
        let gmm = fit_gmm(&data, 2, &EmConfig::default()).unwrap().estimator;
        let far = [1000.0 / 3f64.sqrt(); 3];
        for est in [&kde, &gmm] {
            assert!(est.log_density(&far, 1).unwrap().is_finite());
            assert!(est.density(&[0.0; 3], 1).unwrap() > 0.0);
        }
    }
}
