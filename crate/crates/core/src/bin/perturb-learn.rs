use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use perturb_learn::config::ExperimentConfig;
use perturb_learn::container::{load_dataset, load_model, load_perturbed, save_dataset, save_density, save_labels, save_model, save_perturbed};
use perturb_learn::error::{Error, Result};
use perturb_learn::experiment::{prepare_data, run_spurious_bench, run_sweep};
use perturb_learn::metrics::{accuracy, group_report};
use perturb_learn::model::{train, Model};
use perturb_learn::numerics::rng_stream;
use perturb_learn::protocol::{assign_targets, build_perturbed_dataset, fit_density, PerturbJob};

#[derive(Parser)]
#[command(name = "perturb-learn", version, about = "Learning from adversarial and counterfactual perturbations")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set perturb.epsilon=0.5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Artifact directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate or load the datasets and store them.
    GenData,
    /// Train the source model on the stored training set.
    Train,
    /// Perturb the training inputs toward their target labels.
    Perturb,
    /// Train a fresh model on the perturbed set and evaluate it on clean data.
    Relearn,
    /// Evaluate a stored model.
    Eval {
        /// Model artifact; `<out>/source.plrn` by default.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dataset artifact; `<out>/test.plrn` by default.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the configured sweep and write its CSV.
    Sweep,
    /// Compare methods on the grouped spurious-correlation benchmark.
    SpuriousBench,
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    workers: usize,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn emit(&self, mut v: Value) {
        v["config_hash"] = json!(self.cfg.hash());
        println!("{v}");
    }

    fn seed(&self) -> u64 {
        self.cfg.seeds.base
    }
}

fn gen_data(ctx: &Ctx) -> Result<()> {
    let data = prepare_data(&ctx.cfg.data)?;
    std::fs::create_dir_all(&ctx.out)?;
    save_dataset(&ctx.path("train.plrn"), &data.train)?;
    save_dataset(&ctx.path("test.plrn"), &data.test)?;
    let adv_hash = match &data.adv {
        Some(a) => {
            save_dataset(&ctx.path("adv.plrn"), a)?;
            Some(a.hash())
        }
        None => {
            let _ = std::fs::remove_file(ctx.path("adv.plrn"));
            None
        }
    };
    ctx.emit(json!({
        "cmd": "gen-data",
        "train_hash": data.train.hash(),
        "test_hash": data.test.hash(),
        "adv_hash": adv_hash,
        "n_train": data.train.len(),
        "n_test": data.test.len(),
        "d": data.train.dim(),
        "seed": ctx.cfg.data.seed,
    }));
    Ok(())
}

fn adv_source(ctx: &Ctx) -> Result<perturb_learn::Dataset> {
    let p = ctx.path("adv.plrn");
    if p.exists() {
        load_dataset(&p)
    } else {
        load_dataset(&ctx.path("train.plrn"))
    }
}

fn train_cmd(ctx: &Ctx) -> Result<()> {
    let train_data = load_dataset(&ctx.path("train.plrn"))?;
    let test_data = load_dataset(&ctx.path("test.plrn"))?;
    let p = ctx.cfg.pipeline(ctx.seed());
    let arch = p.model.architecture(train_data.dim(), train_data.label_space());
    let init = Model::init(arch, p.model.loss, &mut rng_stream(p.seeds.model, 0))?;
    let outcome = train(&init, &train_data, &p.optim, &mut rng_stream(p.seeds.model, 1))?;
    save_model(&ctx.path("source.plrn"), &outcome.model)?;
    ctx.emit(json!({
        "cmd": "train",
        "train_acc": accuracy(&outcome.model, &train_data)?,
        "test_acc": accuracy(&outcome.model, &test_data)?,
        "final_loss": outcome.loss_trace.last(),
        "seed": p.seeds.model,
    }));
    Ok(())
}

fn perturb_cmd(ctx: &Ctx) -> Result<()> {
    let train_data = load_dataset(&ctx.path("train.plrn"))?;
    let adv = adv_source(ctx)?;
    let model = load_model(&ctx.path("source.plrn"))?;
    let p = ctx.cfg.pipeline(ctx.seed());
    let targets = assign_targets(adv.labels(), adv.label_space(), p.targets, p.seeds.targets)?.targets;
    let density = if p.needs_density() {
        let est = fit_density(&train_data, &p.density)?;
        save_density(&ctx.path("density.plrn"), &est)?;
        Some(est)
    } else {
        None
    };
    let bounds = p.box_spec().resolve(&train_data)?;
    let job = PerturbJob { model: &model, density: density.as_ref(), bounds: Some(&bounds), spec: &p.perturb, seed: p.seeds.perturb, workers: ctx.workers };
    let pd = build_perturbed_dataset(job, &adv, &targets)?;
    save_labels(&ctx.path("targets.plrn"), &targets)?;
    save_perturbed(&ctx.path("perturbed.plrn"), &pd)?;
    let stats = pd.stats();
    ctx.emit(json!({
        "cmd": "perturb",
        "method": pd.method,
        "n": pd.len(),
        "validity_rate": stats.validity_rate,
        "mean_l0": stats.mean_l0,
        "mean_l2": stats.mean_l2,
        "mean_linf": stats.mean_linf,
        "seed": p.seeds.perturb,
    }));
    Ok(())
}

fn relearn_cmd(ctx: &Ctx) -> Result<()> {
    let train_data = load_dataset(&ctx.path("train.plrn"))?;
    let test_data = load_dataset(&ctx.path("test.plrn"))?;
    let pd = load_perturbed(&ctx.path("perturbed.plrn"))?;
    let p = ctx.cfg.pipeline(ctx.seed());
    let d_tilde = pd.to_dataset(p.keep_invalid)?;
    let model = perturb_learn::protocol::fit_model(&d_tilde, &p.model, p.relearn_optim(), p.seeds.relearn)?;
    save_model(&ctx.path("relearned.plrn"), &model)?;
    ctx.emit(json!({
        "cmd": "relearn",
        "train_acc": accuracy(&model, &train_data)?,
        "test_acc": accuracy(&model, &test_data)?,
        "fit_acc": accuracy(&model, &d_tilde)?,
        "epochs": p.relearn_optim().epochs,
        "seed": p.seeds.relearn,
    }));
    Ok(())
}

fn eval_cmd(ctx: &Ctx, model: Option<PathBuf>, data: Option<PathBuf>) -> Result<()> {
    let model_path = model.unwrap_or_else(|| ctx.path("source.plrn"));
    let data_path = data.unwrap_or_else(|| ctx.path("test.plrn"));
    let m = load_model(&model_path)?;
    let d = load_dataset(&data_path)?;
    let groups = if d.groups().is_some() { Some(serde_json::to_value(group_report(&m, &d)?)?) } else { None };
    ctx.emit(json!({
        "cmd": "eval",
        "model": model_path,
        "data": data_path,
        "acc": accuracy(&m, &d)?,
        "groups": groups,
    }));
    Ok(())
}

fn sweep_cmd(ctx: &Ctx) -> Result<bool> {
    let csv = ctx.path(&ctx.cfg.output.csv);
    let s = run_sweep(&ctx.cfg, &csv, ctx.workers)?;
    ctx.emit(json!({ "cmd": "sweep", "csv": s.csv, "rows": s.rows, "failed": s.failed, "resumed": s.resumed, "base_seed": ctx.seed() }));
    Ok(s.failed == 0)
}

fn bench_cmd(ctx: &Ctx) -> Result<()> {
    let report = run_spurious_bench(&ctx.cfg, ctx.workers)?;
    std::fs::create_dir_all(&ctx.out)?;
    let csv = ctx.path(&ctx.cfg.output.csv);
    std::fs::write(&csv, report.to_csv())?;
    let seeds: Vec<u64> = (0..ctx.cfg.bench.seeds as u64).map(|s| ctx.seed() + s).collect();
    std::fs::write(
        PathBuf::from(format!("{}.meta.json", csv.display())),
        serde_json::to_vec_pretty(&json!({ "config_hash": report.config_hash, "seeds": seeds, "config": ctx.cfg }))?,
    )?;
    for r in &report.rows {
        ctx.emit(json!({ "cmd": "spurious-bench", "method": r.method, "split": r.split, "acc": r.acc, "wga": r.wga, "std": r.std }));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p, &cli.overrides)?,
        None => ExperimentConfig::from_toml_str("", &cli.overrides)?,
    };
    let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(Error::InvalidConfig("--workers must be >= 1".into()));
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let ctx = Ctx { cfg, out, workers };
    match cli.cmd {
        Cmd::GenData => gen_data(&ctx)?,
        Cmd::Train => train_cmd(&ctx)?,
        Cmd::Perturb => perturb_cmd(&ctx)?,
        Cmd::Relearn => relearn_cmd(&ctx)?,
        Cmd::Eval { model, data } => eval_cmd(&ctx, model, data)?,
        Cmd::Sweep => return sweep_cmd(&ctx),
        Cmd::SpuriousBench => bench_cmd(&ctx)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let path = match &e {
                Error::MissingArtifact(p) => Some(p.as_path()),
                _ => None::<&Path>,
            };
            println!("{}", json!({ "error": e.to_string(), "category": e.category(), "path": path }));
            ExitCode::from(2)
        }
    }
}
