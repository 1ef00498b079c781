//! Binary artifact container shared by models, datasets, density estimators
//! and perturbed datasets.
//!
//! Layout: magic `PLRN`, `u32` version, `u64` header length, a JSON header
//! naming the artifact kind, its metadata and the arrays that follow, then
//! each array as little-endian `f64`. Round trips are bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{Dataset, GroupKey, LabelSpace};
use crate::density::{DensityEstimator, DensityModel, GmmClass, KdeClass};
use crate::error::{Error, Result};
use crate::model::{Architecture, LossKind, Model};
use crate::numerics::Matrix;
use crate::protocol::{PerturbedDataset, PerturbedRecord};
use crate::Label;

pub const MAGIC: &[u8; 4] = b"PLRN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: Value,
    arrays: Vec<(String, usize)>,
}

/// A decoded container.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: Value,
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl Container {
    pub fn new(kind: &str, meta: Value) -> Self {
        Self { kind: kind.to_string(), meta, arrays: Vec::new() }
    }

    pub fn push(&mut self, name: &str, values: Vec<f64>) {
        self.arrays.push((name.to_string(), values));
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            arrays: self.arrays.iter().map(|(n, v)| (n.clone(), v.len())).collect(),
        };
        let h = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + h.len() + 8 * self.arrays.iter().map(|(_, v)| v.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(h.len() as u64).to_le_bytes());
        out.extend_from_slice(&h);
        for (_, v) in &self.arrays {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Container { path: path.to_path_buf(), reason };
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a container (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("bad header: {e}")))?;
        let mut pos = 16 + hlen;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for (name, len) in header.arrays {
            let end = pos + 8 * len;
            let raw = bytes.get(pos..end).ok_or_else(|| bad(format!("truncated array {name}")))?;
            let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            arrays.push((name, values));
            pos = end;
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes".into()));
        }
        Ok(Self { kind: header.kind, meta: header.meta, arrays })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&self.to_bytes()?)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path)?, path)
    }

    pub fn read_kind(path: &Path, kind: &str) -> Result<Self> {
        let c = Self::read(path)?;
        if c.kind != kind {
            return Err(Error::Container { path: path.to_path_buf(), reason: format!("expected a {kind}, found a {}", c.kind) });
        }
        Ok(c)
    }

    fn take(&mut self, name: &str, path: &Path) -> Result<Vec<f64>> {
        let i = self
            .arrays
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Container { path: path.to_path_buf(), reason: format!("missing array {name}") })?;
        Ok(std::mem::take(&mut self.arrays[i].1))
    }

    fn meta<T: for<'de> Deserialize<'de>>(&self, key: &str, path: &Path) -> Result<T> {
        let v = self.meta.get(key).cloned().unwrap_or(Value::Null);
        serde_json::from_value(v).map_err(|e| Error::Container { path: path.to_path_buf(), reason: format!("bad metadata {key}: {e}") })
    }
}

fn labels_f64(labels: &[Label]) -> Vec<f64> {
    labels.iter().map(|&y| y as f64).collect()
}

fn f64_labels(v: &[f64]) -> Vec<Label> {
    v.iter().map(|&y| y as Label).collect()
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    let mut c = Container::new("model", json!({ "arch": model.arch(), "loss": model.loss_kind() }));
    c.push("params", model.params().to_vec());
    c.write(path)
}

pub fn load_model(path: &Path) -> Result<Model> {
    let mut c = Container::read_kind(path, "model")?;
    let arch: Architecture = c.meta("arch", path)?;
    let loss: LossKind = c.meta("loss", path)?;
    Model::from_params(arch, loss, c.take("params", path)?)
}

pub fn save_labels(path: &Path, labels: &[Label]) -> Result<()> {
    let mut c = Container::new("labels", json!({}));
    c.push("labels", labels_f64(labels));
    c.write(path)
}

pub fn load_labels(path: &Path) -> Result<Vec<Label>> {
    let mut c = Container::read_kind(path, "labels")?;
    Ok(f64_labels(&c.take("labels", path)?))
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut c = Container::new(
        "dataset",
        json!({
            "rows": data.len(),
            "cols": data.dim(),
            "label_space": data.label_space(),
            "group_table": data.group_table(),
            "provenance": data.provenance(),
            "hash": data.hash(),
        }),
    );
    c.push("features", data.features().as_slice().to_vec());
    c.push("labels", labels_f64(data.labels()));
    if let Some(g) = data.groups() {
        c.push("groups", g.iter().map(|&v| v as f64).collect());
    }
    c.push("feature_min", data.feature_min().to_vec());
    c.push("feature_max", data.feature_max().to_vec());
    c.write(path)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut c = Container::read_kind(path, "dataset")?;
    let rows: usize = c.meta("rows", path)?;
    let cols: usize = c.meta("cols", path)?;
    let space: LabelSpace = c.meta("label_space", path)?;
    let table: Vec<GroupKey> = c.meta("group_table", path)?;
    let provenance: String = c.meta("provenance", path)?;
    let groups = if c.arrays.iter().any(|(n, _)| n == "groups") {
        Some(c.take("groups", path)?.into_iter().map(|v| v as usize).collect())
    } else {
        None
    };
    Dataset::from_parts(
        Matrix::from_vec(rows, cols, c.take("features", path)?)?,
        f64_labels(&c.take("labels", path)?),
        space,
        groups,
        table,
        c.take("feature_min", path)?,
        c.take("feature_max", path)?,
        provenance,
    )
}

pub fn save_density(path: &Path, est: &DensityEstimator) -> Result<()> {
    let labels = est.classes();
    match est.model() {
        DensityModel::Kde { bandwidth, classes } => {
            let rows: Vec<usize> = classes.iter().map(|c| c.points.rows()).collect();
            let mut c = Container::new("density", json!({ "kind": "kde", "dim": est.dim(), "bandwidth": bandwidth, "labels": labels, "rows": rows }));
            for (i, k) in classes.iter().enumerate() {
                c.push(&format!("points{i}"), k.points.as_slice().to_vec());
            }
            c.write(path)
        }
        DensityModel::Gmm { classes } => {
            let comps: Vec<usize> = classes.iter().map(|c| c.weights().len()).collect();
            let mut c = Container::new("density", json!({ "kind": "gmm", "dim": est.dim(), "labels": labels, "components": comps }));
            for (i, k) in classes.iter().enumerate() {
                c.push(&format!("weights{i}"), k.weights().to_vec());
                c.push(&format!("means{i}"), k.means().as_slice().to_vec());
                c.push(&format!("vars{i}"), k.vars().as_slice().to_vec());
            }
            c.write(path)
        }
    }
}

pub fn load_density(path: &Path) -> Result<DensityEstimator> {
    let mut c = Container::read_kind(path, "density")?;
    let kind: String = c.meta("kind", path)?;
    let dim: usize = c.meta("dim", path)?;
    let labels: Vec<Label> = c.meta("labels", path)?;
    let model = if kind == "kde" {
        let bandwidth: f64 = c.meta("bandwidth", path)?;
        let rows: Vec<usize> = c.meta("rows", path)?;
        let mut classes = Vec::new();
        for (i, (&label, &r)) in labels.iter().zip(&rows).enumerate() {
            classes.push(KdeClass { label, points: Matrix::from_vec(r, dim, c.take(&format!("points{i}"), path)?)? });
        }
        DensityModel::Kde { bandwidth, classes }
    } else {
        let comps: Vec<usize> = c.meta("components", path)?;
        let mut classes = Vec::new();
        for (i, (&label, &k)) in labels.iter().zip(&comps).enumerate() {
            let weights = c.take(&format!("weights{i}"), path)?;
            let means = Matrix::from_vec(k, dim, c.take(&format!("means{i}"), path)?)?;
            let vars = Matrix::from_vec(k, dim, c.take(&format!("vars{i}"), path)?)?;
            classes.push(GmmClass::new(label, weights, means, vars)?);
        }
        DensityModel::Gmm { classes }
    };
    DensityEstimator::from_model(dim, model)
}

pub fn save_perturbed(path: &Path, pd: &PerturbedDataset) -> Result<()> {
    let mut c = Container::new("perturbed", json!({ "method": pd.method, "label_space": pd.label_space, "dim": pd.dim, "n": pd.len() }));
    c.push("index", pd.records.iter().map(|r| r.index as f64).collect());
    c.push("target", pd.records.iter().map(|r| r.target as f64).collect());
    c.push("x", pd.records.iter().flat_map(|r| r.x.iter().copied()).collect());
    c.push("l0", pd.records.iter().map(|r| r.l0 as f64).collect());
    c.push("l2", pd.records.iter().map(|r| r.l2).collect());
    c.push("linf", pd.records.iter().map(|r| r.linf).collect());
    c.push("valid", pd.records.iter().map(|r| r.valid as u8 as f64).collect());
    c.write(path)
}

pub fn load_perturbed(path: &Path) -> Result<PerturbedDataset> {
    let mut c = Container::read_kind(path, "perturbed")?;
    let method: String = c.meta("method", path)?;
    let label_space: LabelSpace = c.meta("label_space", path)?;
    let dim: usize = c.meta("dim", path)?;
    let n: usize = c.meta("n", path)?;
    let index = c.take("index", path)?;
    let target = c.take("target", path)?;
    let x = c.take("x", path)?;
    let l0 = c.take("l0", path)?;
    let l2 = c.take("l2", path)?;
    let linf = c.take("linf", path)?;
    let valid = c.take("valid", path)?;
    if [index.len(), target.len(), l0.len(), l2.len(), linf.len(), valid.len()].iter().any(|&l| l != n) || x.len() != n * dim {
        return Err(Error::Container { path: path.to_path_buf(), reason: "array lengths disagree with record count".into() });
    }
    let records = (0..n)
        .map(|i| PerturbedRecord {
            index: index[i] as usize,
            target: target[i] as Label,
            x: x[i * dim..(i + 1) * dim].to_vec(),
            l0: l0[i] as usize,
            l2: l2[i],
            linf: linf[i],
            valid: valid[i] != 0.0,
        })
        .collect();
    Ok(PerturbedDataset { method, label_space, dim, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_spurious, SpuriousSpec};
    use crate::density::{fit_gmm, fit_kde, EmConfig};
    use crate::numerics::rng_new;

    #[test]
    fn model_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.plrn");
        let m = Model::init(Architecture::mlp(5, vec![7, 3], 4), LossKind::CrossEntropy, &mut rng_new(1)).unwrap();
        save_model(&p, &m).unwrap();
        assert_eq!(load_model(&p).unwrap(), m);
    }

    #[test]
    fn dataset_and_density_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (train, _) = gen_spurious(&SpuriousSpec { n: 200, n_test: 40, d_core: 3, d_spur: 2, ..Default::default() }).unwrap();
        let p = dir.path().join("d.plrn");
        save_dataset(&p, &train).unwrap();
        let back = load_dataset(&p).unwrap();
        assert_eq!(back, train);
        assert_eq!(back.hash(), train.hash());

        let kde = fit_kde(&train, 0.4).unwrap();
        let gmm = fit_gmm(&train, 2, &EmConfig::default()).unwrap().estimator;
        for est in [kde, gmm] {
            save_density(&p, &est).unwrap();
            assert_eq!(load_density(&p).unwrap(), est);
        }
    }

    #[test]
    fn perturbed_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.plrn");
        let pd = PerturbedDataset {
            method: "pgd_l2".into(),
            label_space: LabelSpace::Binary,
            dim: 2,
            records: vec![
                PerturbedRecord { index: 3, target: -1, x: vec![0.1, f64::MIN_POSITIVE], l0: 2, l2: 0.3, linf: 0.2, valid: true },
                PerturbedRecord { index: 0, target: 1, x: vec![-0.0, 1e300], l0: 1, l2: 0.1, linf: 0.1, valid: false },
            ],
        };
        save_perturbed(&p, &pd).unwrap();
        let back = load_perturbed(&p).unwrap();
        assert_eq!(back, pd);
        assert_eq!(back.records[1].x[0].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn malformed_containers_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.plrn");
        assert!(matches!(load_model(&p), Err(Error::MissingArtifact(_))));
        fs::write(&p, b"nope").unwrap();
        assert!(matches!(load_model(&p), Err(Error::Container { .. })));
        save_labels(&p, &[1, -1]).unwrap();
        assert!(matches!(load_model(&p), Err(Error::Container { .. })));
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_labels(&p), Err(Error::Container { .. })));
    }
}
