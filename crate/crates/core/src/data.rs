//! Datasets: synthetic generators, the grouped spurious-correlation
//! benchmark, IDX ingestion, splitting and normalization.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{check_dim, ensure_finite, rng_new, rng_stream, Matrix, Rng};
use crate::Label;

/// Environment variable naming the root directory for dataset files.
pub const DATA_DIR_ENV: &str = "PERTURB_LEARN_DATA_DIR";

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelSpace {
    /// Labels in {-1, +1}, single margin output.
    Binary,
    /// Labels in `0..C`.
    Multiclass(usize),
}

impl LabelSpace {
    pub fn num_classes(&self) -> usize {
        match self {
            LabelSpace::Binary => 2,
            LabelSpace::Multiclass(c) => *c,
        }
    }

    pub fn contains(&self, y: Label) -> bool {
        match self {
            LabelSpace::Binary => y == -1 || y == 1,
            LabelSpace::Multiclass(c) => y >= 0 && (y as usize) < *c,
        }
    }

    pub fn classes(&self) -> Vec<Label> {
        match self {
            LabelSpace::Binary => vec![-1, 1],
            LabelSpace::Multiclass(c) => (0..*c as Label).collect(),
        }
    }

    pub fn check(&self, y: Label) -> Result<()> {
        if self.contains(y) {
            Ok(())
        } else {
            Err(Error::InvalidLabel { label: y, space: format!("{self:?}") })
        }
    }
}

/// One (attribute, label) group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupKey {
    pub attribute: i32,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<Label>,
    label_space: LabelSpace,
    groups: Option<Vec<usize>>,
    group_table: Vec<GroupKey>,
    feature_min: Vec<f64>,
    feature_max: Vec<f64>,
    provenance: String,
}

fn feature_range(features: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let d = features.cols();
    if features.rows() == 0 {
        return (vec![0.0; d], vec![0.0; d]);
    }
    let mut lo = features.row(0).to_vec();
    let mut hi = lo.clone();
    for i in 1..features.rows() {
        for (j, &v) in features.row(i).iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    (lo, hi)
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<Label>, label_space: LabelSpace) -> Result<Self> {
        check_dim(features.rows(), labels.len())?;
        ensure_finite("features", features.as_slice())?;
        for &y in &labels {
            label_space.check(y)?;
        }
        let (feature_min, feature_max) = feature_range(&features);
        Ok(Self {
            features,
            labels,
            label_space,
            groups: None,
            group_table: Vec::new(),
            feature_min,
            feature_max,
            provenance: String::new(),
        })
    }

    pub fn with_groups(mut self, groups: Vec<usize>, table: Vec<GroupKey>) -> Result<Self> {
        check_dim(self.len(), groups.len())?;
        if let Some(&g) = groups.iter().find(|&&g| g >= table.len()) {
            return Err(Error::InvalidConfig(format!("group id {g} not in group table")));
        }
        self.groups = Some(groups);
        self.group_table = table;
        Ok(self)
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    /// Override the recorded per-coordinate feature range (must contain the data).
    pub fn with_feature_range(mut self, min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        check_dim(self.dim(), min.len())?;
        check_dim(self.dim(), max.len())?;
        let (lo, hi) = feature_range(&self.features);
        if self.len() > 0 && lo.iter().zip(&min).chain(max.iter().zip(&hi)).any(|(a, b)| a < b) {
            return Err(Error::InvalidConfig("feature range does not contain the data".into()));
        }
        self.feature_min = min;
        self.feature_max = max;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn y(&self, i: usize) -> Label {
        self.labels[i]
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label_space(&self) -> LabelSpace {
        self.label_space
    }

    pub fn groups(&self) -> Option<&[usize]> {
        self.groups.as_deref()
    }

    pub fn group_table(&self) -> &[GroupKey] {
        &self.group_table
    }

    pub fn feature_min(&self) -> &[f64] {
        &self.feature_min
    }

    pub fn feature_max(&self) -> &[f64] {
        &self.feature_max
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn class_indices(&self, y: Label) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == y).collect()
    }

    /// Rows `idx` in order; keeps groups, table and recorded feature range.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            label_space: self.label_space,
            groups: self.groups.as_ref().map(|g| idx.iter().map(|&i| g[i]).collect()),
            group_table: self.group_table.clone(),
            feature_min: self.feature_min.clone(),
            feature_max: self.feature_max.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Same rows with the samples of group `g` dropped and `g` removed from
    /// the group table (remaining ids are renumbered).
    pub fn without_group(&self, g: usize) -> Result<Dataset> {
        let groups = self.groups.as_ref().ok_or(Error::MissingGroups)?;
        let keep: Vec<usize> = (0..self.len()).filter(|&i| groups[i] != g).collect();
        let mut out = self.subset(&keep);
        out.group_table.remove(g);
        if let Some(gs) = out.groups.as_mut() {
            for id in gs.iter_mut() {
                if *id > g {
                    *id -= 1;
                }
            }
        }
        Ok(out)
    }

    /// Concatenate rows of `other` (same dimension and label space).
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        check_dim(self.dim(), other.dim())?;
        if self.label_space != other.label_space {
            return Err(Error::InvalidConfig("label spaces differ".into()));
        }
        let mut data = self.features.as_slice().to_vec();
        data.extend_from_slice(other.features.as_slice());
        let features = Matrix::from_vec(self.len() + other.len(), self.dim(), data)?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let mut out = Dataset::new(features, labels, self.label_space)?;
        if let (Some(a), Some(b)) = (&self.groups, &other.groups) {
            let mut g = a.clone();
            g.extend_from_slice(b);
            out = out.with_groups(g, self.group_table.clone())?;
        }
        out.provenance = self.provenance.clone();
        Ok(out)
    }

    /// Replace the features (same shape), keeping labels and groups.
    /// The recorded feature range is recomputed.
    pub fn with_features(&self, features: Matrix) -> Result<Dataset> {
        check_dim(self.len(), features.rows())?;
        check_dim(self.dim(), features.cols())?;
        let mut out = Dataset::new(features, self.labels.clone(), self.label_space)?;
        out.groups = self.groups.clone();
        out.group_table = self.group_table.clone();
        out.provenance = self.provenance.clone();
        Ok(out)
    }

    /// Same features with new labels.
    pub fn with_labels(&self, labels: Vec<Label>) -> Result<Dataset> {
        check_dim(self.len(), labels.len())?;
        for &y in &labels {
            self.label_space.check(y)?;
        }
        let mut out = self.clone();
        out.labels = labels;
        Ok(out)
    }

    /// SHA-256 over shape, feature bits, labels and groups.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        for v in self.features.as_slice() {
            h.update(v.to_bits().to_le_bytes());
        }
        for y in &self.labels {
            h.update(y.to_le_bytes());
        }
        if let Some(g) = &self.groups {
            for id in g {
                h.update((*id as u64).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub(crate) fn from_parts(
        features: Matrix,
        labels: Vec<Label>,
        label_space: LabelSpace,
        groups: Option<Vec<usize>>,
        group_table: Vec<GroupKey>,
        feature_min: Vec<f64>,
        feature_max: Vec<f64>,
        provenance: String,
    ) -> Result<Dataset> {
        let mut d = Dataset::new(features, labels, label_space)?;
        if let Some(g) = groups {
            d = d.with_groups(g, group_table)?;
        }
        d.feature_min = feature_min;
        d.feature_max = feature_max;
        d.provenance = provenance;
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Uniform,
    Gaussian,
}

/// Two-class mean-shift data: `x = y·η·1/√d + σ·noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub distribution: Distribution,
    pub d: usize,
    pub n: usize,
    pub eta: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { distribution: Distribution::Gaussian, d: 100, n: 1000, eta: 1.0, sigma: 1.0, seed: 0 }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d < 1 || self.n < 2 || !(self.sigma > 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidConfig(format!("invalid synthetic spec {self:?}")));
        }
        Ok(())
    }
}

/// Draws from stream 0 of `spec.seed`; see [`gen_synthetic_stream`].
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    gen_synthetic_stream(spec, 0)
}

/// Synthetic data drawn from an independent stream, so train/test/extra
/// pools from the same seed never share samples.
pub fn gen_synthetic_stream(spec: &SyntheticSpec, stream: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng_stream(spec.seed, stream);
    let shift = spec.eta / (spec.d as f64).sqrt();
    let mut data = Vec::with_capacity(spec.n * spec.d);
    let mut labels = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let y: Label = if rng.random::<bool>() { 1 } else { -1 };
        labels.push(y);
        for _ in 0..spec.d {
            let noise: f64 = match spec.distribution {
                Distribution::Gaussian => rng.sample(StandardNormal),
                Distribution::Uniform => rng.random_range(-1.0..1.0),
            };
            data.push(y as f64 * shift + spec.sigma * noise);
        }
    }
    let features = Matrix::from_vec(spec.n, spec.d, data)?;
    Ok(Dataset::new(features, labels, LabelSpace::Binary)?.with_provenance(format!(
        "synthetic:{:?}:d={}:n={}:eta={}:sigma={}:seed={}:stream={}",
        spec.distribution, spec.d, spec.n, spec.eta, spec.sigma, spec.seed, stream
    )))
}

/// Grouped benchmark with a core block and a spurious block.
///
/// The attribute agrees with the label with probability `rho` in the
/// training split and 0.5 in the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpuriousSpec {
    pub d_core: usize,
    pub d_spur: usize,
    pub n: usize,
    pub n_test: usize,
    pub eta_core: f64,
    pub eta_spur: f64,
    pub rho: f64,
    pub seed: u64,
}

impl Default for SpuriousSpec {
    fn default() -> Self {
        Self { d_core: 20, d_spur: 20, n: 5000, n_test: 4000, eta_core: 1.0, eta_spur: 4.0, rho: 0.95, seed: 0 }
    }
}

impl SpuriousSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_core < 1 || self.d_spur < 1 {
            return Err(Error::InvalidConfig("d_core and d_spur must be >= 1".into()));
        }
        if !(self.rho > 0.5 && self.rho < 1.0) {
            return Err(Error::InvalidConfig(format!("rho must lie in (0.5, 1), got {}", self.rho)));
        }
        if !(self.eta_spur > self.eta_core) {
            return Err(Error::InvalidConfig("eta_spur must exceed eta_core".into()));
        }
        if self.n < 2 {
            return Err(Error::InvalidConfig("n must be >= 2".into()));
        }
        Ok(())
    }
}

/// Group table shared by every spurious split: (attribute, label) pairs.
pub fn spurious_group_table() -> Vec<GroupKey> {
    vec![
        GroupKey { attribute: -1, label: -1 },
        GroupKey { attribute: -1, label: 1 },
        GroupKey { attribute: 1, label: -1 },
        GroupKey { attribute: 1, label: 1 },
    ]
}

fn spurious_group(attribute: i32, label: Label) -> usize {
    (if attribute > 0 { 2 } else { 0 }) + usize::from(label > 0)
}

fn gen_spurious_split(spec: &SpuriousSpec, n: usize, rho: f64, rng: &mut Rng, tag: &str) -> Result<Dataset> {
    let d = spec.d_core + spec.d_spur;
    let core_shift = spec.eta_core / (spec.d_core as f64).sqrt();
    let spur_shift = spec.eta_spur / (spec.d_spur as f64).sqrt();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for _ in 0..n {
        let y: Label = if rng.random::<bool>() { 1 } else { -1 };
        let a: i32 = if rng.random::<f64>() < rho { y } else { -y };
        labels.push(y);
        groups.push(spurious_group(a, y));
        for _ in 0..spec.d_core {
            let z: f64 = rng.sample(StandardNormal);
            data.push(y as f64 * core_shift + z);
        }
        for _ in 0..spec.d_spur {
            let z: f64 = rng.sample(StandardNormal);
            data.push(a as f64 * spur_shift + z);
        }
    }
    let features = Matrix::from_vec(n, d, data)?;
    Ok(Dataset::new(features, labels, LabelSpace::Binary)?
        .with_groups(groups, spurious_group_table())?
        .with_provenance(format!("spurious:{tag}:{spec:?}")))
}

/// Returns `(train, test)`; the test split is balanced (`rho = 0.5`).
pub fn gen_spurious(spec: &SpuriousSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = rng_stream(spec.seed, 0);
    let train = gen_spurious_split(spec, spec.n, spec.rho, &mut rng, "train")?;
    let mut rng = rng_stream(spec.seed, 1);
    let test = gen_spurious_split(spec, spec.n_test, 0.5, &mut rng, "test")?;
    Ok((train, test))
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated { path: path.to_path_buf(), expected: offset + 4, found: bytes.len() })
}

/// Raw IDX image file: `(count, rows, cols, pixels)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::WrongMagic { path: path.to_path_buf(), expected: IDX_IMAGES_MAGIC, found: magic });
    }
    let n = read_u32_be(&bytes, 4, path)? as usize;
    let rows = read_u32_be(&bytes, 8, path)? as usize;
    let cols = read_u32_be(&bytes, 12, path)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() < expected {
        return Err(Error::Truncated { path: path.to_path_buf(), expected, found: bytes.len() });
    }
    Ok((n, rows, cols, bytes[16..expected].to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    let magic = read_u32_be(&bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::WrongMagic { path: path.to_path_buf(), expected: IDX_LABELS_MAGIC, found: magic });
    }
    let n = read_u32_be(&bytes, 4, path)? as usize;
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(Error::Truncated { path: path.to_path_buf(), expected, found: bytes.len() });
    }
    Ok(bytes[8..expected].to_vec())
}

/// Load an IDX image/label pair. Pixels are scaled to `[0, 1]` by `/255`
/// and the recorded feature range is `[0, 1]` on every coordinate.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (n, rows, cols, pixels) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != n {
        return Err(Error::CountMismatch { images: n, labels: labels.len() });
    }
    let d = rows * cols;
    let features = Matrix::from_vec(n, d, pixels.iter().map(|&b| b as f64 / 255.0).collect())?;
    let classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(2).max(2);
    let labels: Vec<Label> = labels.iter().map(|&l| l as Label).collect();
    Dataset::new(features, labels, LabelSpace::Multiclass(classes))?
        .with_feature_range(vec![0.0; d], vec![1.0; d])
        .map(|ds| ds.with_provenance(format!("idx:{}:{}", images_path.display(), labels_path.display())))
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    if rows * cols == 0 || pixels.len() % (rows * cols) != 0 {
        return Err(Error::InvalidConfig("pixel buffer is not a whole number of images".into()));
    }
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out)?;
    Ok(())
}

/// Write a dataset with features in `[0, 1]` as an IDX pair (pixels rounded
/// to the nearest `k/255`).
pub fn write_idx(dataset: &Dataset, rows: usize, cols: usize, images_path: &Path, labels_path: &Path) -> Result<()> {
    check_dim(rows * cols, dataset.dim())?;
    let pixels: Vec<u8> = dataset
        .features()
        .as_slice()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let labels = dataset
        .labels()
        .iter()
        .map(|&y| u8::try_from(y).map_err(|_| Error::InvalidLabel { label: y, space: "IDX byte labels".into() }))
        .collect::<Result<Vec<u8>>>()?;
    write_idx_images(images_path, rows, cols, &pixels)?;
    write_idx_labels(labels_path, &labels)
}

/// Seeded shuffle split into `(train, test)` by `fractions = (train, test)`.
pub fn split(data: &Dataset, fractions: (f64, f64), seed: u64) -> Result<(Dataset, Dataset)> {
    let (ft, fv) = fractions;
    if ft < 0.0 || fv < 0.0 || ((ft + fv) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("split fractions must be >= 0 and sum to 1, got {fractions:?}")));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng_new(seed));
    let n_train = ((ft * data.len() as f64).round() as usize).min(data.len());
    let (a, b) = idx.split_at(n_train);
    if a.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if fv > 0.0 && b.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    Ok((data.subset(a), data.subset(b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizePolicy {
    #[default]
    None,
    Standardize,
}

/// Per-feature standardization fitted on one dataset and applied to others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = data.len() as f64;
        let d = data.dim();
        let mut mean = vec![0.0; d];
        for i in 0..data.len() {
            for (m, v) in mean.iter_mut().zip(data.x(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in 0..data.len() {
            for j in 0..d {
                let c = data.x(i)[j] - mean[j];
                var[j] += c * c;
            }
        }
        let scale = var.iter().map(|v| if *v > 0.0 { (v / n).sqrt() } else { 1.0 }).collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        check_dim(self.mean.len(), data.dim())?;
        let mut m = data.features().clone();
        for i in 0..m.rows() {
            for (j, v) in m.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        data.with_features(m)
    }
}

/// Apply `policy`; the fitted standardizer is returned so the same
/// statistics can be applied to held-out data.
pub fn normalize(data: &Dataset, policy: NormalizePolicy) -> Result<(Dataset, Option<Standardizer>)> {
    match policy {
        NormalizePolicy::None => Ok((data.clone(), None)),
        NormalizePolicy::Standardize => {
            let s = Standardizer::fit(data)?;
            Ok((s.apply(data)?, Some(s)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_normal_cdf(x: f64) -> f64 {
        // Abramowitz–Stegun 7.1.26 on erf
        let z = x / std::f64::consts::SQRT_2;
        let t = 1.0 / (1.0 + 0.327_591_1 * z.abs());
        let poly = t * (0.254_829_592 + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
        let erf = 1.0 - poly * (-z * z).exp();
        0.5 * (1.0 + if z >= 0.0 { erf } else { -erf })
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec { d: 5, n: 50, seed: 3, ..Default::default() };
        assert_eq!(gen_synthetic(&spec).unwrap(), gen_synthetic(&spec).unwrap());
        let other = SyntheticSpec { seed: 4, ..spec.clone() };
        assert_ne!(gen_synthetic(&spec).unwrap().hash(), gen_synthetic(&other).unwrap().hash());
    }

    #[test]
    fn no_signal_means_chance() {
        let n = 10_000;
        let spec = SyntheticSpec { d: 10, n, eta: 0.0, seed: 1, ..Default::default() };
        let ds = gen_synthetic(&spec).unwrap();
        // sign(1·x) rule on pure noise
        let correct = (0..n).filter(|&i| (ds.x(i).iter().sum::<f64>() >= 0.0) == (ds.y(i) > 0)).count();
        let acc = correct as f64 / n as f64;
        let band = 3.0 * (0.25 / n as f64).sqrt();
        assert!((acc - 0.5).abs() < band, "acc {acc}");
    }

    #[test]
    fn gaussian_class_mean_difference() {
        let (d, n) = (20, 20_000);
        let spec = SyntheticSpec { d, n, eta: 1.5, sigma: 1.0, seed: 5, ..Default::default() };
        let ds = gen_synthetic(&spec).unwrap();
        let mut diff = vec![0.0; d];
        let pos = ds.class_indices(1);
        let neg = ds.class_indices(-1);
        for &i in &pos {
            for j in 0..d {
                diff[j] += ds.x(i)[j] / pos.len() as f64;
            }
        }
        for &i in &neg {
            for j in 0..d {
                diff[j] -= ds.x(i)[j] / neg.len() as f64;
            }
        }
        let expect = 2.0 * 1.5 / (d as f64).sqrt();
        // each coordinate's difference has sd ≈ 2σ/√N
        let tol = 5.0 * 2.0 / (n as f64).sqrt();
        for v in diff {
            assert!((v - expect).abs() < tol, "{v} vs {expect}");
        }
    }

    #[test]
    fn bayes_rule_matches_normal_cdf() {
        let (d, n) = (16, 20_000);
        let (eta, sigma) = (0.8, 1.0);
        let ds = gen_synthetic(&SyntheticSpec { d, n, eta, sigma, seed: 9, ..Default::default() }).unwrap();
        let correct = (0..n).filter(|&i| (ds.x(i).iter().sum::<f64>() >= 0.0) == (ds.y(i) > 0)).count();
        let acc = correct as f64 / n as f64;
        let p = std_normal_cdf(eta / sigma);
        let band = 4.0 * (p * (1.0 - p) / n as f64).sqrt();
        assert!((acc - p).abs() < band, "acc {acc} vs Φ = {p}");
    }

    #[test]
    fn uniform_noise_stays_bounded() {
        let ds = gen_synthetic(&SyntheticSpec {
            distribution: Distribution::Uniform,
            d: 4,
            n: 500,
            eta: 1.0,
            sigma: 0.5,
            seed: 2,
        })
        .unwrap();
        for i in 0..ds.len() {
            for &v in ds.x(i) {
                assert!(v.abs() <= 0.5 + 0.5 + 1e-12);
            }
        }
    }

    #[test]
    fn spurious_groups_and_sizes() {
        let spec = SpuriousSpec { n: 4000, rho: 0.9, seed: 11, ..Default::default() };
        let (train, test) = gen_spurious(&spec).unwrap();
        assert_eq!(train.group_table().len(), 4);
        assert_eq!(test.group_table().len(), 4);
        let g = train.groups().unwrap();
        let n = spec.n as f64;
        for (gid, key) in spurious_group_table().iter().enumerate() {
            let count = g.iter().filter(|&&x| x == gid).count() as f64;
            let p = if key.attribute == key.label { spec.rho / 2.0 } else { (1.0 - spec.rho) / 2.0 };
            let sd = (n * p * (1.0 - p)).sqrt();
            assert!((count - n * p).abs() < 4.0 * sd, "group {gid}: {count} vs {}", n * p);
        }
        let minority = g.iter().filter(|&&x| x == 1 || x == 2).count() as f64 / n;
        assert!((minority - 0.1).abs() < 4.0 * (0.09 / n).sqrt());
        // balanced test split
        let tg = test.groups().unwrap();
        let tmin = tg.iter().filter(|&&x| x == 1 || x == 2).count() as f64 / tg.len() as f64;
        assert!((tmin - 0.5).abs() < 0.05);
    }

    #[test]
    fn spurious_rejects_bad_rho() {
        for rho in [0.5, 1.0, 0.2] {
            assert!(gen_spurious(&SpuriousSpec { rho, ..Default::default() }).is_err());
        }
    }

    #[test]
    fn idx_hand_built_pair() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        let pixels: Vec<u8> = (0..18).map(|i| if i == 4 { 255 } else { i as u8 * 10 }).collect();
        write_idx_images(&ip, 3, 3, &pixels).unwrap();
        write_idx_labels(&lp, &[3, 7]).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!((ds.len(), ds.dim()), (2, 9));
        assert_eq!(ds.x(0)[4], 1.0);
        assert_eq!(ds.x(1)[0], 90.0 / 255.0);
        assert_eq!(ds.labels(), &[3, 7]);
        assert_eq!(ds.feature_min(), &[0.0; 9]);
        assert_eq!(ds.feature_max(), &[1.0; 9]);
    }

    #[test]
    fn idx_error_taxonomy() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        write_idx_images(&ip, 2, 2, &[0; 8]).unwrap();
        write_idx_labels(&lp, &[1, 2]).unwrap();
        // images file passed as labels file
        assert!(matches!(load_idx(&ip, &ip), Err(Error::WrongMagic { .. })));
        // count mismatch
        write_idx_labels(&lp, &[1, 2, 3]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::CountMismatch { images: 2, labels: 3 })));
        // truncated payload
        let mut bytes = fs::read(&ip).unwrap();
        bytes.truncate(bytes.len() - 1);
        fs::write(&ip, bytes).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Truncated { .. })));
    }

    #[test]
    fn split_behaviour() {
        let ds = gen_synthetic(&SyntheticSpec { d: 3, n: 100, seed: 1, ..Default::default() }).unwrap();
        let (tr, te) = split(&ds, (1.0, 0.0), 5).unwrap();
        assert_eq!((tr.len(), te.len()), (100, 0));
        let (a1, b1) = split(&ds, (0.7, 0.3), 5).unwrap();
        let (a2, b2) = split(&ds, (0.7, 0.3), 5).unwrap();
        assert_eq!((a1.len(), b1.len()), (70, 30));
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert!(split(&ds, (0.0, 1.0), 5).is_err());
        assert!(split(&ds, (0.5, 0.4), 5).is_err());
    }

    #[test]
    fn split_preserves_groups() {
        let (train, _) = gen_spurious(&SpuriousSpec { n: 200, seed: 3, ..Default::default() }).unwrap();
        let (a, b) = split(&train, (0.5, 0.5), 1).unwrap();
        assert_eq!(a.groups().unwrap().len(), a.len());
        assert_eq!(b.groups().unwrap().len(), b.len());
    }

    #[test]
    fn standardize_train_statistics() {
        let ds = gen_synthetic(&SyntheticSpec { d: 6, n: 300, eta: 2.0, sigma: 3.0, seed: 8, ..Default::default() }).unwrap();
        let (z, s) = normalize(&ds, NormalizePolicy::Standardize).unwrap();
        let s = s.unwrap();
        let n = z.len() as f64;
        for j in 0..z.dim() {
            let m: f64 = (0..z.len()).map(|i| z.x(i)[j]).sum::<f64>() / n;
            let v: f64 = (0..z.len()).map(|i| (z.x(i)[j] - m).powi(2)).sum::<f64>() / n;
            assert!(m.abs() < 1e-10);
            assert!((v.sqrt() - 1.0).abs() < 1e-10);
        }
        let other = gen_synthetic(&SyntheticSpec { d: 6, n: 10, seed: 9, ..Default::default() }).unwrap();
        let applied = s.apply(&other).unwrap();
        assert!((applied.x(0)[0] - (other.x(0)[0] - s.mean[0]) / s.scale[0]).abs() < 1e-15);
    }

    #[test]
    fn without_group_drops_rows_and_entry() {
        let (train, _) = gen_spurious(&SpuriousSpec { n: 400, seed: 2, ..Default::default() }).unwrap();
        let smaller = train.without_group(1).unwrap();
        assert_eq!(smaller.group_table().len(), 3);
        let removed = train.groups().unwrap().iter().filter(|&&g| g == 1).count();
        assert_eq!(smaller.len(), train.len() - removed);
    }
}
