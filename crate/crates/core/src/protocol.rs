//! The learning-from-perturbations pipeline: train a source model, assign
//! target labels, perturb every training input toward its target, train a
//! fresh model on the perturbed inputs with target labels, and evaluate that
//! model on clean inputs with the original labels. A noise run with a matched
//! budget serves as the control.

use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::data::{Dataset, LabelSpace};
use crate::density::{fit_gmm, fit_kde, silverman_bandwidth, DensityEstimator, DensityKind, EmConfig};
use crate::error::{Error, Result};
use crate::metrics::accuracy;
use crate::model::{train, Architecture, LossKind, Model};
use crate::numerics::{rng_stream, Norm, OptimConfig};
use crate::perturb::{perturb_one, BoxBounds, BoxSpec, NoiseSpec, PerturbContext, PerturbSpec};
use crate::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// `(y + 1) mod C`; `−y` for binary labels.
    Deterministic,
    /// Uniform over the other classes.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetAssignment {
    pub mode: TargetMode,
    pub seed: u64,
    pub targets: Vec<Label>,
}

pub fn assign_targets(labels: &[Label], space: LabelSpace, mode: TargetMode, seed: u64) -> Result<TargetAssignment> {
    let c = space.num_classes();
    if c < 2 {
        return Err(Error::InvalidConfig(format!("target assignment needs at least 2 classes, got {c}")));
    }
    let mut rng = rng_stream(seed, 0);
    let targets = labels
        .iter()
        .map(|&y| {
            space.check(y)?;
            Ok(match (space, mode) {
                (LabelSpace::Binary, _) => -y,
                (_, TargetMode::Deterministic) => (y + 1) % c as Label,
                (_, TargetMode::Random) => {
                    let k = rng.random_range(0..c as Label - 1);
                    if k >= y {
                        k + 1
                    } else {
                        k
                    }
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TargetAssignment { mode, seed, targets })
}

/// One perturbed sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedRecord {
    pub index: usize,
    pub target: Label,
    pub x: Vec<f64>,
    pub l0: usize,
    pub l2: f64,
    pub linf: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedDataset {
    pub method: String,
    pub label_space: LabelSpace,
    pub dim: usize,
    pub records: Vec<PerturbedRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SizeStats {
    pub validity_rate: f64,
    pub mean_l0: f64,
    pub mean_l2: f64,
    pub mean_linf: f64,
}

impl PerturbedDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn stats(&self) -> SizeStats {
        let n = self.records.len().max(1) as f64;
        let mut s = SizeStats::default();
        for r in &self.records {
            s.validity_rate += r.valid as u8 as f64 / n;
            s.mean_l0 += r.l0 as f64 / n;
            s.mean_l2 += r.l2 / n;
            s.mean_linf += r.linf / n;
        }
        s
    }

    /// `D̃` as a dataset with target labels; invalid records dropped unless
    /// `keep_invalid`.
    pub fn to_dataset(&self, keep_invalid: bool) -> Result<Dataset> {
        let kept: Vec<&PerturbedRecord> = self.records.iter().filter(|r| keep_invalid || r.valid).collect();
        if kept.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let rows: Vec<Vec<f64>> = kept.iter().map(|r| r.x.clone()).collect();
        let labels = kept.iter().map(|r| r.target).collect();
        Dataset::new(crate::numerics::Matrix::from_rows(&rows)?, labels, self.label_space)
    }

    /// Same inputs relabelled with the original classes of `source`.
    pub fn with_source_labels(&self, source: &Dataset) -> Result<Dataset> {
        let rows: Vec<Vec<f64>> = self.records.iter().map(|r| r.x.clone()).collect();
        let labels = self.records.iter().map(|r| source.y(r.index)).collect();
        Dataset::new(crate::numerics::Matrix::from_rows(&rows)?, labels, self.label_space)
    }
}

/// Shared inputs of one perturbation run.
#[derive(Debug, Clone, Copy)]
pub struct PerturbJob<'a> {
    pub model: &'a Model,
    pub density: Option<&'a DensityEstimator>,
    pub bounds: Option<&'a BoxBounds>,
    pub spec: &'a PerturbSpec,
    pub seed: u64,
    pub workers: usize,
}

/// Perturb every sample toward its target. Output order follows the input;
/// the result does not depend on `workers`.
pub fn build_perturbed_dataset(job: PerturbJob<'_>, data: &Dataset, targets: &[Label]) -> Result<PerturbedDataset> {
    job.spec.validate()?;
    crate::numerics::check_dim(data.len(), targets.len())?;
    let ctx = PerturbContext { model: job.model, density: job.density, bounds: job.bounds };
    let one = |i: usize| -> Result<PerturbedRecord> {
        let mut rng = rng_stream(job.seed, i as u64);
        let p = perturb_one(ctx, data.x(i), targets[i], job.spec, &mut rng)
            .map_err(|e| Error::Sample { index: i, source: Box::new(e) })?;
        Ok(PerturbedRecord { index: i, target: targets[i], x: p.x, l0: p.l0, l2: p.l2, linf: p.linf, valid: p.valid })
    };
    let results: Vec<Result<PerturbedRecord>> = if job.workers <= 1 {
        (0..data.len()).map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(job.workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| (0..data.len()).into_par_iter().map(one).collect())
    };
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(PerturbedDataset { method: job.spec.name().to_string(), label_space: data.label_space(), dim: data.dim(), records })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    /// Hidden layer widths; empty means a linear model.
    pub hidden: Vec<usize>,
    pub loss: LossKind,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { hidden: Vec::new(), loss: LossKind::Logistic }
    }
}

impl ModelSpec {
    pub fn architecture(&self, input_dim: usize, space: LabelSpace) -> Architecture {
        let outputs = match space {
            LabelSpace::Binary if self.loss.is_binary() => 1,
            other => other.num_classes(),
        };
        Architecture::mlp(input_dim, self.hidden.clone(), outputs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub kind: DensityKind,
    /// KDE bandwidth; the Silverman-style rule when absent.
    pub bandwidth: Option<f64>,
    pub components: usize,
    pub em: EmConfig,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self { kind: DensityKind::Gmm, bandwidth: None, components: 2, em: EmConfig::default() }
    }
}

pub fn fit_density(data: &Dataset, cfg: &DensityConfig) -> Result<DensityEstimator> {
    match cfg.kind {
        DensityKind::Kde => {
            let h = match cfg.bandwidth {
                Some(h) => h,
                None => silverman_bandwidth(data)?,
            };
            fit_kde(data, h)
        }
        DensityKind::Gmm => Ok(fit_gmm(data, cfg.components, &cfg.em)?.estimator),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseLabels {
    Target,
    Original,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedBlock {
    pub model: u64,
    pub targets: u64,
    pub perturb: u64,
    pub relearn: u64,
}

impl SeedBlock {
    /// Distinct seeds derived from one base seed.
    pub fn from_base(base: u64) -> Self {
        let mix = |k: u64| base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k);
        Self { model: mix(1), targets: mix(2), perturb: mix(3), relearn: mix(4) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelSpec,
    pub optim: OptimConfig,
    /// Optimizer for the relearned model; `optim` when absent.
    pub relearn_optim: Option<OptimConfig>,
    pub targets: TargetMode,
    pub perturb: PerturbSpec,
    pub density: DensityConfig,
    pub noise: bool,
    pub noise_labels: NoiseLabels,
    /// Keep perturbations that fail to reach their target.
    pub keep_invalid: bool,
    pub seeds: SeedBlock,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::default(),
            optim: OptimConfig::default(),
            relearn_optim: None,
            targets: TargetMode::Deterministic,
            perturb: PerturbSpec::Pgd(Default::default()),
            density: DensityConfig::default(),
            noise: true,
            noise_labels: NoiseLabels::Target,
            keep_invalid: true,
            seeds: SeedBlock::default(),
        }
    }
}

impl PipelineConfig {
    pub fn relearn_optim(&self) -> &OptimConfig {
        self.relearn_optim.as_ref().unwrap_or(&self.optim)
    }

    pub fn needs_density(&self) -> bool {
        matches!(&self.perturb, PerturbSpec::Pcfe(s) if s.tau > 0.0)
    }

    pub fn box_spec(&self) -> BoxSpec {
        match &self.perturb {
            PerturbSpec::Pcfe(s) => s.bounds.clone(),
            PerturbSpec::Noise(s) => s.bounds.clone(),
            _ => BoxSpec::Dataset,
        }
    }

    /// Noise generator with the budget of the main run.
    pub fn matched_noise(&self, main: &SizeStats) -> NoiseSpec {
        let bounds = self.box_spec();
        match &self.perturb {
            PerturbSpec::Pgd(s) => NoiseSpec { norm: s.norm, magnitude: s.epsilon, bounds },
            PerturbSpec::Cfe(_) => NoiseSpec { norm: Norm::L2, magnitude: main.mean_l2, bounds },
            PerturbSpec::Pcfe(_) => NoiseSpec { norm: Norm::L0, magnitude: main.mean_l0.round(), bounds },
            PerturbSpec::Noise(s) => s.clone(),
        }
    }
}

/// Initialise and train a model of the configured shape.
pub fn fit_model(data: &Dataset, spec: &ModelSpec, opt: &OptimConfig, seed: u64) -> Result<Model> {
    let arch = spec.architecture(data.dim(), data.label_space());
    let init = Model::init(arch, spec.loss, &mut rng_stream(seed, 0))?;
    Ok(train(&init, data, opt, &mut rng_stream(seed, 1))?.model)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    /// Clean training inputs, original labels.
    pub train_acc: f64,
    pub test_acc: f64,
    /// Accuracy on its own perturbed training set with target labels.
    pub fit_acc: f64,
    pub stats: SizeStats,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub source: Model,
    pub source_train_acc: f64,
    pub source_test_acc: f64,
    pub targets: Vec<Label>,
    pub perturbed: PerturbedDataset,
    pub relearned: Model,
    pub adversarial: ArmResult,
    pub noise: Option<ArmResult>,
}

/// Where stage artifacts go; existing artifacts are reused on rerun.
#[derive(Debug, Clone)]
pub struct ArtifactStore {
    dir: PathBuf,
}

impl ArtifactStore {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn cached<T>(
        store: Option<&Self>,
        name: &str,
        load: impl FnOnce(&Path) -> Result<T>,
        save: impl FnOnce(&Path, &T) -> Result<()>,
        make: impl FnOnce() -> Result<T>,
    ) -> Result<T> {
        match store {
            None => make(),
            Some(s) => {
                let p = s.path(name);
                if p.exists() {
                    return load(&p);
                }
                let v = make()?;
                save(&p, &v)?;
                Ok(v)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    config: PipelineConfig,
    train_hash: String,
    test_hash: String,
    adv_hash: String,
    artifacts: Vec<String>,
}

fn check_manifest(store: &ArtifactStore, manifest: &Manifest) -> Result<()> {
    let path = store.path("manifest.json");
    if path.exists() {
        let old: Manifest = serde_json::from_slice(&std::fs::read(&path)?)?;
        let same = serde_json::to_value(&old.config)? == serde_json::to_value(&manifest.config)?
            && old.train_hash == manifest.train_hash
            && old.test_hash == manifest.test_hash
            && old.adv_hash == manifest.adv_hash;
        if !same {
            return Err(Error::InvalidConfig(format!(
                "artifact directory {} belongs to a different run",
                store.dir.display()
            )));
        }
    } else {
        std::fs::write(&path, serde_json::to_vec_pretty(manifest)?)?;
    }
    Ok(())
}

/// Run the full pipeline. `adv_source` supplies the inputs to perturb
/// (the training set when absent); `store` persists each stage and reuses
/// anything already there.
pub fn learn_from_perturbations(
    train_data: &Dataset,
    test_data: &Dataset,
    adv_source: Option<&Dataset>,
    cfg: &PipelineConfig,
    workers: usize,
    store: Option<&ArtifactStore>,
) -> Result<PipelineResult> {
    cfg.perturb.validate()?;
    if train_data.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    let adv = adv_source.unwrap_or(train_data);
    if let Some(s) = store {
        let manifest = Manifest {
            config: cfg.clone(),
            train_hash: train_data.hash(),
            test_hash: test_data.hash(),
            adv_hash: adv.hash(),
            artifacts: ["source.plrn", "targets.plrn", "perturbed.plrn", "relearned.plrn", "noise.plrn", "noise_model.plrn"]
                .map(String::from)
                .to_vec(),
        };
        check_manifest(s, &manifest)?;
    }

    let source = ArtifactStore::cached(store, "source.plrn", container::load_model, container::save_model, || {
        fit_model(train_data, &cfg.model, &cfg.optim, cfg.seeds.model)
    })?;
    let source_train_acc = accuracy(&source, train_data)?;
    let source_test_acc = if test_data.is_empty() { f64::NAN } else { accuracy(&source, test_data)? };

    let targets = ArtifactStore::cached(store, "targets.plrn", container::load_labels, |p, t: &Vec<Label>| container::save_labels(p, t), || {
        Ok(assign_targets(adv.labels(), adv.label_space(), cfg.targets, cfg.seeds.targets)?.targets)
    })?;

    let density = if cfg.needs_density() { Some(fit_density(train_data, &cfg.density)?) } else { None };
    let bounds = cfg.box_spec().resolve(train_data)?;
    let job = PerturbJob { model: &source, density: density.as_ref(), bounds: Some(&bounds), spec: &cfg.perturb, seed: cfg.seeds.perturb, workers };
    let perturbed = ArtifactStore::cached(store, "perturbed.plrn", container::load_perturbed, container::save_perturbed, || {
        build_perturbed_dataset(job, adv, &targets)
    })?;

    let relearn = |pd: &PerturbedDataset, labels: NoiseLabels, name: &str| -> Result<(Model, ArmResult)> {
        let d_tilde = match labels {
            NoiseLabels::Target => pd.to_dataset(cfg.keep_invalid)?,
            NoiseLabels::Original => pd.with_source_labels(adv)?,
        };
        let model = ArtifactStore::cached(store, name, container::load_model, container::save_model, || {
            fit_model(&d_tilde, &cfg.model, cfg.relearn_optim(), cfg.seeds.relearn)
        })?;
        let arm = ArmResult {
            train_acc: accuracy(&model, train_data)?,
            test_acc: if test_data.is_empty() { f64::NAN } else { accuracy(&model, test_data)? },
            fit_acc: accuracy(&model, &d_tilde)?,
            stats: pd.stats(),
        };
        Ok((model, arm))
    };
    let (relearned, adversarial) = relearn(&perturbed, NoiseLabels::Target, "relearned.plrn")?;

    let noise = if cfg.noise {
        let spec = PerturbSpec::Noise(cfg.matched_noise(&adversarial.stats));
        let job = PerturbJob { spec: &spec, ..job };
        let noisy = ArtifactStore::cached(store, "noise.plrn", container::load_perturbed, container::save_perturbed, || {
            build_perturbed_dataset(job, adv, &targets)
        })?;
        Some(relearn(&noisy, cfg.noise_labels, "noise_model.plrn")?.1)
    } else {
        None
    };

    Ok(PipelineResult {
        source,
        source_train_acc,
        source_test_acc,
        targets,
        perturbed,
        relearned,
        adversarial,
        noise,
    })
}
