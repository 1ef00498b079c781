//! TOML experiment configuration with `section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Distribution, NormalizePolicy};
use crate::error::{Error, Result};
use crate::numerics::{Norm, OptimConfig};
use crate::perturb::{CfeSpec, DensityMode, PcfeSpec, PerturbSpec, PgdSpec};
use crate::protocol::{DensityConfig, ModelSpec, NoiseLabels, PipelineConfig, SeedBlock, TargetMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Synthetic,
    Spurious,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    pub seed: u64,
    pub n: usize,
    pub n_test: usize,
    /// Number of inputs to perturb; the training set size when absent.
    pub n_adv: Option<usize>,
    pub normalize: NormalizePolicy,

    pub distribution: Distribution,
    pub d: usize,
    pub eta: f64,
    pub sigma: f64,

    pub d_core: usize,
    pub d_spur: usize,
    pub eta_core: f64,
    pub eta_spur: f64,
    pub rho: f64,

    /// IDX paths; relative paths resolve against `PERTURB_LEARN_DATA_DIR`.
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Train fraction when no test files are given.
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DataKind::Synthetic,
            seed: 0,
            n: 5000,
            n_test: 2000,
            n_adv: None,
            normalize: NormalizePolicy::None,
            distribution: Distribution::Gaussian,
            d: 1000,
            eta: 1.0,
            sigma: 1.0,
            d_core: 20,
            d_spur: 20,
            eta_core: 1.0,
            eta_spur: 4.0,
            rho: 0.95,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub targets: TargetMode,
    pub noise: bool,
    pub noise_labels: NoiseLabels,
    pub keep_invalid: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self { targets: TargetMode::Deterministic, noise: true, noise_labels: NoiseLabels::Target, keep_invalid: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "d")]
    D,
    #[serde(rename = "N")]
    N,
    #[serde(rename = "N_adv")]
    NAdv,
    #[serde(rename = "eps")]
    Eps,
    #[serde(rename = "pixel_ratio")]
    PixelRatio,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::D => "d",
            SweepAxis::N => "N",
            SweepAxis::NAdv => "N_adv",
            SweepAxis::Eps => "eps",
            SweepAxis::PixelRatio => "pixel_ratio",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    #[serde(default = "default_reps")]
    pub reps: usize,
}

fn default_reps() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedsConfig {
    /// Repetition `r` uses seed `base + r` for data and pipeline.
    pub base: u64,
}

impl Default for SeedsConfig {
    fn default() -> Self {
        Self { base: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub csv: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), csv: "results.csv".into() }
    }
}

pub const BENCH_METHODS: [&str; 5] = ["original", "pgd_l2", "pgd_linf", "cfe_l2", "pcfe_l0"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub methods: Vec<String>,
    pub seeds: usize,
    pub pgd_l2: PgdSpec,
    pub pgd_linf: PgdSpec,
    pub cfe_l2: CfeSpec,
    pub pcfe_l0: PcfeSpec,
    pub density: DensityConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            methods: BENCH_METHODS.iter().map(|s| s.to_string()).collect(),
            seeds: 3,
            pgd_l2: PgdSpec { norm: Norm::L2, epsilon: 0.78, steps: 100, ..Default::default() },
            pgd_linf: PgdSpec { norm: Norm::Linf, epsilon: 0.03, steps: 100, ..Default::default() },
            cfe_l2: CfeSpec { lambda: 0.001, learning_rate: 0.01, iterations: 50 },
            pcfe_l0: PcfeSpec { gamma: 1.0, tau: 20.0, beta: 1.0, iterations: 50, density_mode: DensityMode::Log, ..Default::default() },
            density: DensityConfig { components: 2, ..Default::default() },
        }
    }
}

impl BenchConfig {
    pub fn spec(&self, method: &str) -> Result<Option<PerturbSpec>> {
        Ok(match method {
            "original" => None,
            "pgd_l2" => Some(PerturbSpec::Pgd(self.pgd_l2.clone())),
            "pgd_linf" => Some(PerturbSpec::Pgd(self.pgd_linf.clone())),
            "cfe_l2" => Some(PerturbSpec::Cfe(self.cfe_l2.clone())),
            "pcfe_l0" => Some(PerturbSpec::Pcfe(self.pcfe_l0.clone())),
            other => return Err(Error::InvalidConfig(format!("unknown method {other:?}; expected one of {BENCH_METHODS:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelSpec,
    pub optim: OptimConfig,
    pub relearn_optim: Option<OptimConfig>,
    pub protocol: ProtocolConfig,
    pub perturb: PerturbSpec,
    pub density: DensityConfig,
    pub sweep: Option<SweepConfig>,
    pub seeds: SeedsConfig,
    pub output: OutputConfig,
    pub bench: BenchConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelSpec::default(),
            optim: OptimConfig::sgd(0.1),
            relearn_optim: None,
            protocol: ProtocolConfig::default(),
            perturb: PerturbSpec::Pgd(PgdSpec::default()),
            density: DensityConfig::default(),
            sweep: None,
            seeds: SeedsConfig::default(),
            output: OutputConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Apply `section.key=value` to a TOML table, creating sections as needed.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override {assignment:?} is not of the form section.key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::InvalidConfig(format!("bad override key {path:?}")));
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("override {path:?}: {k} is not a section")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::InvalidConfig(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        // `[perturb]` without a method refines the default method
        if let Some(p) = table.get_mut("perturb").and_then(|v| v.as_table_mut()) {
            if !p.contains_key("method") {
                let default = toml::Value::try_from(Self::default().perturb).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                if let Some(m) = default.get("method") {
                    p.insert("method".into(), m.clone());
                }
            }
        }
        let cfg: Self = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::InvalidConfig(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.perturb.validate()?;
        self.optim.validate()?;
        if let Some(o) = &self.relearn_optim {
            o.validate()?;
        }
        if let Some(s) = &self.sweep {
            if s.grid.is_empty() {
                return Err(Error::InvalidConfig("sweep grid is empty".into()));
            }
            if s.grid.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidConfig("sweep grid must be sorted ascending without repeats".into()));
            }
            if s.reps == 0 {
                return Err(Error::InvalidConfig("sweep needs at least one repetition".into()));
            }
        }
        for m in &self.bench.methods {
            self.bench.spec(m)?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn pipeline(&self, seed: u64) -> PipelineConfig {
        PipelineConfig {
            model: self.model.clone(),
            optim: self.optim.clone(),
            relearn_optim: self.relearn_optim.clone(),
            targets: self.protocol.targets,
            perturb: self.perturb.clone(),
            density: self.density.clone(),
            noise: self.protocol.noise,
            noise_labels: self.protocol.noise_labels,
            keep_invalid: self.protocol.keep_invalid,
            seeds: SeedBlock::from_base(seed),
        }
    }

    /// Copy with the sweep coordinate set to `value`.
    pub fn at(&self, axis: SweepAxis, value: f64) -> Result<Self> {
        let mut c = self.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidConfig(format!("{} must be a positive integer, got {v}", axis.name())))
            }
        };
        match axis {
            SweepAxis::D => c.data.d = count(value)?,
            SweepAxis::N => c.data.n = count(value)?,
            SweepAxis::NAdv => c.data.n_adv = Some(count(value)?),
            SweepAxis::Eps => match &mut c.perturb {
                PerturbSpec::Pgd(s) => s.epsilon = value,
                PerturbSpec::Noise(s) => s.magnitude = value,
                _ => return Err(Error::InvalidConfig("eps axis needs a pgd or noise perturbation".into())),
            },
            SweepAxis::PixelRatio => match &mut c.perturb {
                PerturbSpec::Pcfe(s) => s.target_ratio = Some(value),
                _ => return Err(Error::InvalidConfig("pixel_ratio axis needs a pcfe perturbation".into())),
            },
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = ExperimentConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn perturb_override_keeps_default_method() {
        let c = ExperimentConfig::from_toml_str("", &["perturb.epsilon=0.5".into()]).unwrap();
        let want = match ExperimentConfig::default().perturb {
            PerturbSpec::Pgd(p) => PerturbSpec::Pgd(PgdSpec { epsilon: 0.5, ..p }),
            other => panic!("unexpected default {other:?}"),
        };
        assert_eq!(c.perturb, want);
        let c = ExperimentConfig::from_toml_str("", &["perturb.method=\"cfe\"".into(), "perturb.iterations=9".into()]).unwrap();
        assert_eq!(c.perturb, PerturbSpec::Cfe(CfeSpec { iterations: 9, ..Default::default() }));
    }

    #[test]
    fn parses_sections_and_overrides() {
        let text = r#"
[data]
d = 50
n = 200

[perturb]
method = "pgd"
norm = "linf"
epsilon = 0.03

[sweep]
axis = "eps"
grid = [0.2, 0.4, 0.6, 0.8]
reps = 3
"#;
        let c = ExperimentConfig::from_toml_str(text, &["data.d=70".into(), "perturb.steps=7".into(), "output.csv=x.csv".into()]).unwrap();
        assert_eq!(c.data.d, 70);
        assert_eq!(c.data.n, 200);
        assert_eq!(c.perturb, PerturbSpec::Pgd(PgdSpec { norm: Norm::Linf, epsilon: 0.03, steps: 7, ..Default::default() }));
        assert_eq!(c.output.csv, "x.csv");
        let s = c.sweep.as_ref().unwrap();
        assert_eq!(s.axis, SweepAxis::Eps);
        assert_eq!(s.grid, vec![0.2, 0.4, 0.6, 0.8]);
        let at = c.at(SweepAxis::Eps, 0.6).unwrap();
        assert!(matches!(at.perturb, PerturbSpec::Pgd(PgdSpec { epsilon, .. }) if epsilon == 0.6));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml_str("[data]\nbogus = 1", &[]).is_err());
        assert!(ExperimentConfig::from_toml_str("[sweep]\naxis = \"eps\"\ngrid = [0.4, 0.2]", &[]).is_err());
        assert!(ExperimentConfig::from_toml_str("[sweep]\naxis = \"eps\"\ngrid = []", &[]).is_err());
        assert!(ExperimentConfig::from_toml_str("[bench]\nmethods = [\"magic\"]", &[]).is_err());
        assert!(ExperimentConfig::from_toml_str("", &["nokey".into()]).is_err());
        let c = ExperimentConfig::default();
        assert!(c.at(SweepAxis::PixelRatio, 0.1).is_err());
        assert!(c.at(SweepAxis::D, 2.5).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig::from_toml_str("", &["data.seed=1".into()]).unwrap();
        assert_eq!(a.hash(), ExperimentConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
