//! Sweeps over one configuration axis and the grouped spurious benchmark.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{DataConfig, DataKind, ExperimentConfig, SweepConfig};
use crate::data::{
    gen_spurious, gen_synthetic_stream, load_idx, normalize, split, Dataset, NormalizePolicy, SpuriousSpec, SyntheticSpec,
    DATA_DIR_ENV,
};
use crate::error::{Error, Result};
use crate::metrics::{group_report, GroupReport};
use crate::protocol::{learn_from_perturbations, PipelineConfig};

/// Train, test and (optionally) a separate set of inputs to perturb.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub adv: Option<Dataset>,
}

fn resolve(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(root) => Path::new(&root).join(path),
        None => path.to_path_buf(),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| Error::InvalidConfig(format!("data.{key} is required for idx data")))
}

/// Build the datasets a configuration describes.
pub fn prepare_data(cfg: &DataConfig) -> Result<PreparedData> {
    let (train, test, extra) = match cfg.kind {
        DataKind::Synthetic => {
            let spec = SyntheticSpec { distribution: cfg.distribution, d: cfg.d, n: cfg.n, eta: cfg.eta, sigma: cfg.sigma, seed: cfg.seed };
            let train = gen_synthetic_stream(&spec, 0)?;
            let test = gen_synthetic_stream(&SyntheticSpec { n: cfg.n_test.max(2), ..spec.clone() }, 1)?;
            let extra = match cfg.n_adv {
                Some(m) if m > cfg.n => Some(gen_synthetic_stream(&SyntheticSpec { n: (m - cfg.n).max(2), ..spec }, 2)?),
                _ => None,
            };
            (train, test, extra)
        }
        DataKind::Spurious => {
            let spec = SpuriousSpec {
                d_core: cfg.d_core,
                d_spur: cfg.d_spur,
                n: cfg.n,
                n_test: cfg.n_test,
                eta_core: cfg.eta_core,
                eta_spur: cfg.eta_spur,
                rho: cfg.rho,
                seed: cfg.seed,
            };
            let (train, test) = gen_spurious(&spec)?;
            if cfg.n_adv.is_some_and(|m| m > cfg.n) {
                return Err(Error::InvalidConfig("n_adv cannot exceed n for spurious data".into()));
            }
            (train, test, None)
        }
        DataKind::Idx => {
            let all = load_idx(&resolve(required(&cfg.train_images, "train_images")?), &resolve(required(&cfg.train_labels, "train_labels")?))?;
            match (&cfg.test_images, &cfg.test_labels) {
                (Some(ti), Some(tl)) => (all, load_idx(&resolve(ti), &resolve(tl))?, None),
                _ => {
                    let (a, b) = split(&all, (cfg.train_fraction, 1.0 - cfg.train_fraction), cfg.seed)?;
                    (a, b, None)
                }
            }
        }
    };
    let (train, scaler) = normalize(&train, cfg.normalize)?;
    let apply = |d: Dataset| -> Result<Dataset> {
        match &scaler {
            Some(s) if cfg.normalize == NormalizePolicy::Standardize => s.apply(&d),
            _ => Ok(d),
        }
    };
    let test = apply(test)?;
    let adv = match (cfg.n_adv, extra) {
        (Some(m), Some(extra)) => {
            let extra = apply(extra)?;
            let need = m - train.len();
            Some(train.concat(&extra.subset(&(0..need).collect::<Vec<_>>()))?)
        }
        (Some(m), None) if m < train.len() => Some(train.subset(&(0..m).collect::<Vec<_>>())),
        _ => None,
    };
    Ok(PreparedData { train, test, adv })
}

/// One CSV data row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub adv_acc_for_natural: f64,
    pub noise_acc_for_natural: f64,
    pub rep: usize,
    pub seed: u64,
}

impl SweepRow {
    fn csv_line(&self) -> String {
        format!("{},{},{},{},{}\n", self.value, self.adv_acc_for_natural, self.noise_acc_for_natural, self.rep, self.seed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DoneEntry {
    key: String,
    row: SweepRow,
    error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub csv: PathBuf,
    pub rows: usize,
    pub failed: usize,
    pub resumed: usize,
    pub config_hash: String,
}

fn point_key(cfg: &ExperimentConfig, rep: usize) -> String {
    let mut h = Sha256::new();
    h.update(cfg.hash().as_bytes());
    h.update((rep as u64).to_le_bytes());
    hex::encode(h.finalize())
}

/// Run one grid point: the config with data seed and pipeline seeds offset
/// by `seed`.
pub fn run_point(cfg: &ExperimentConfig, seed: u64, workers: usize) -> Result<(f64, f64)> {
    let data_cfg = DataConfig { seed: cfg.data.seed.wrapping_add(seed), ..cfg.data.clone() };
    let data = prepare_data(&data_cfg)?;
    let r = learn_from_perturbations(&data.train, &data.test, data.adv.as_ref(), &cfg.pipeline(seed), workers, None)?;
    Ok((r.adversarial.test_acc, r.noise.map_or(f64::NAN, |n| n.test_acc)))
}

struct OrderedWriter {
    file: File,
    next: usize,
    pending: BTreeMap<usize, SweepRow>,
}

impl OrderedWriter {
    fn push(&mut self, i: usize, row: SweepRow) -> Result<()> {
        self.pending.insert(i, row);
        while let Some(row) = self.pending.remove(&self.next) {
            self.file.write_all(row.csv_line().as_bytes())?;
            self.file.flush()?;
            self.next += 1;
        }
        Ok(())
    }
}

/// Run every grid point × repetition and write the CSV. Completed points are
/// logged next to the CSV and skipped on rerun.
pub fn run_sweep(cfg: &ExperimentConfig, csv: &Path, workers: usize) -> Result<SweepSummary> {
    let sweep: &SweepConfig = cfg.sweep.as_ref().ok_or_else(|| Error::InvalidConfig("config has no [sweep] section".into()))?;
    if let Some(parent) = csv.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let sidecar = |ext: &str| PathBuf::from(format!("{}.{ext}", csv.display()));
    let done_path = sidecar("done.jsonl");
    let mut done: BTreeMap<String, DoneEntry> = BTreeMap::new();
    if done_path.exists() {
        for line in BufReader::new(File::open(&done_path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            // A torn final line from an interrupted run is ignored.
            if let Ok(e) = serde_json::from_str::<DoneEntry>(&line) {
                if e.error.is_none() {
                    done.insert(e.key.clone(), e);
                }
            }
        }
    }

    let mut points = Vec::new();
    for &v in &sweep.grid {
        let at = cfg.at(sweep.axis, v)?;
        for rep in 0..sweep.reps {
            let seed = cfg.seeds.base + rep as u64;
            let key = point_key(&at, rep);
            points.push((v, rep, seed, at.clone(), key));
        }
    }

    let meta = serde_json::json!({
        "config_hash": cfg.hash(),
        "axis": sweep.axis.name(),
        "grid": sweep.grid,
        "reps": sweep.reps,
        "seeds": points.iter().map(|p| p.2).collect::<Vec<_>>(),
        "config": cfg,
    });
    fs::write(sidecar("meta.json"), serde_json::to_vec_pretty(&meta)?)?;

    let mut file = File::create(csv)?;
    file.write_all(format!("{},adv_acc_for_natural,noise_acc_for_natural,rep,seed\n", sweep.axis.name()).as_bytes())?;
    let writer = Mutex::new(OrderedWriter { file, next: 0, pending: BTreeMap::new() });
    let log = Mutex::new(OpenOptions::new().create(true).append(true).open(&done_path)?);
    let errors_path = sidecar("errors.jsonl");
    let _ = fs::remove_file(&errors_path);
    let errors = Mutex::new(Vec::<serde_json::Value>::new());
    let resumed = points.iter().filter(|p| done.contains_key(&p.4)).count();

    let inner_workers = if workers > 1 && points.len() > 1 { 1 } else { workers };
    let run = |i: usize| -> Result<()> {
        let (v, rep, seed, at, key) = &points[i];
        let row = match done.get(key) {
            Some(e) => e.row.clone(),
            None => {
                let (row, error) = match run_point(at, *seed, inner_workers) {
                    Ok((adv, noise)) => (SweepRow { value: *v, adv_acc_for_natural: adv, noise_acc_for_natural: noise, rep: *rep, seed: *seed }, None),
                    Err(e) => {
                        let row = SweepRow { value: *v, adv_acc_for_natural: f64::NAN, noise_acc_for_natural: f64::NAN, rep: *rep, seed: *seed };
                        errors.lock().expect("poisoned").push(serde_json::json!({
                            "value": v, "rep": rep, "seed": seed, "category": e.category(), "error": e.to_string(),
                        }));
                        (row, Some(e.to_string()))
                    }
                };
                let entry = DoneEntry { key: key.clone(), row: row.clone(), error };
                let mut f = log.lock().expect("poisoned");
                writeln!(f, "{}", serde_json::to_string(&entry)?)?;
                f.flush()?;
                row
            }
        };
        writer.lock().expect("poisoned").push(i, row)
    };
    if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| (0..points.len()).into_par_iter().try_for_each(run))?;
    } else {
        (0..points.len()).try_for_each(run)?;
    }

    let errors = errors.into_inner().expect("poisoned");
    if !errors.is_empty() {
        let mut f = File::create(&errors_path)?;
        for e in &errors {
            writeln!(f, "{e}")?;
        }
    }
    Ok(SweepSummary { csv: csv.to_path_buf(), rows: points.len(), failed: errors.len(), resumed, config_hash: cfg.hash() })
}

/// Mean/std over seeds for one (method, split).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub split: String,
    pub acc: f64,
    pub wga: f64,
    /// Standard deviation of WGA across seeds.
    pub std: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Per method, per seed: (train report, test report).
    pub per_seed: BTreeMap<String, Vec<(GroupReport, GroupReport)>>,
    pub config_hash: String,
}

impl BenchReport {
    pub fn row(&self, method: &str, split: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method && r.split == split)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,split,acc,wga,std\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.method, r.split, r.acc, r.wga, r.std));
        }
        s
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// Every configured method on the grouped benchmark, over `bench.seeds` seeds.
pub fn run_spurious_bench(cfg: &ExperimentConfig, workers: usize) -> Result<BenchReport> {
    let bench = &cfg.bench;
    if bench.seeds == 0 {
        return Err(Error::InvalidConfig("bench.seeds must be >= 1".into()));
    }
    let mut per_seed: BTreeMap<String, Vec<(GroupReport, GroupReport)>> = BTreeMap::new();
    for s in 0..bench.seeds as u64 {
        let seed = cfg.seeds.base + s;
        let data_cfg = DataConfig { kind: DataKind::Spurious, seed: cfg.data.seed.wrapping_add(seed), ..cfg.data.clone() };
        let data = prepare_data(&data_cfg)?;
        for method in &bench.methods {
            let spec = bench.spec(method)?;
            let pipeline = PipelineConfig {
                perturb: spec.clone().unwrap_or_else(|| cfg.perturb.clone()),
                density: bench.density.clone(),
                noise: false,
                ..cfg.pipeline(seed)
            };
            let model = match spec {
                None => crate::protocol::fit_model(&data.train, &pipeline.model, &pipeline.optim, pipeline.seeds.model)?,
                Some(_) => learn_from_perturbations(&data.train, &data.test, data.adv.as_ref(), &pipeline, workers, None)?.relearned,
            };
            let reports = (group_report(&model, &data.train)?, group_report(&model, &data.test)?);
            per_seed.entry(method.clone()).or_default().push(reports);
        }
    }
    let mut rows = Vec::new();
    for method in &bench.methods {
        let reps = &per_seed[method];
        for (split, pick) in [("train", 0usize), ("test", 1)] {
            let get = |r: &(GroupReport, GroupReport)| if pick == 0 { r.0.clone() } else { r.1.clone() };
            let accs: Vec<f64> = reps.iter().map(|r| get(r).overall).collect();
            let wgas: Vec<f64> = reps.iter().map(|r| get(r).worst_group_accuracy).collect();
            let (wga, std) = mean_std(&wgas);
            rows.push(BenchRow { method: method.clone(), split: split.into(), acc: mean_std(&accs).0, wga, std });
        }
    }
    Ok(BenchReport { rows, per_seed, config_hash: cfg.hash() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{SweepAxis, SweepConfig};
    use crate::numerics::OptimConfig;
    use crate::perturb::{PerturbSpec, PgdSpec};

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.data.d = 8;
        c.data.n = 120;
        c.data.n_test = 60;
        c.optim = OptimConfig { epochs: 3, ..OptimConfig::sgd(0.1) };
        c.perturb = PerturbSpec::Pgd(PgdSpec { steps: 5, ..Default::default() });
        c.sweep = Some(SweepConfig { axis: SweepAxis::Eps, grid: vec![0.2, 0.4], reps: 2 });
        c
    }

    #[test]
    fn n_adv_truncates_or_extends() {
        let mut d = DataConfig { d: 4, n: 50, n_test: 10, ..Default::default() };
        assert!(prepare_data(&d).unwrap().adv.is_none());
        d.n_adv = Some(20);
        let p = prepare_data(&d).unwrap();
        assert_eq!(p.adv.as_ref().unwrap().len(), 20);
        assert_eq!(p.adv.unwrap().x(3), p.train.x(3));
        d.n_adv = Some(80);
        let p = prepare_data(&d).unwrap();
        let adv = p.adv.unwrap();
        assert_eq!(adv.len(), 80);
        assert_eq!(adv.x(49), p.train.x(49));
    }

    #[test]
    fn sweep_rows_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("s.csv");
        let cfg = small();
        let s = run_sweep(&cfg, &csv, 1).unwrap();
        assert_eq!(s.rows, 4);
        assert_eq!(s.failed, 0);
        let text = fs::read_to_string(&csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "eps,adv_acc_for_natural,noise_acc_for_natural,rep,seed");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0.2,") && lines[3].starts_with("0.4,"));
        let again = run_sweep(&cfg, &csv, 2).unwrap();
        assert_eq!(again.resumed, 4);
        assert_eq!(fs::read_to_string(&csv).unwrap(), text);
        fs::remove_file(PathBuf::from(format!("{}.done.jsonl", csv.display()))).unwrap();
        run_sweep(&cfg, &csv, 2).unwrap();
        assert_eq!(fs::read_to_string(&csv).unwrap(), text);
    }

    #[test]
    fn failed_points_become_nan_rows() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("f.csv");
        let mut cfg = small();
        cfg.sweep = Some(SweepConfig { axis: SweepAxis::N, grid: vec![1.0, 40.0], reps: 1 });
        let s = run_sweep(&cfg, &csv, 1).unwrap();
        assert_eq!(s.failed, 1);
        let text = fs::read_to_string(&csv).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("1,NaN,NaN,0,"));
        assert!(PathBuf::from(format!("{}.errors.jsonl", csv.display())).exists());
    }
}
