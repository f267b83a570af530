//! `meteornet`: command-line front end for meteor-core.

mod config;
mod data;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use meteor_core::grouping::estimate_sequence_flow_nn;
use meteor_core::io::{load_checkpoint, load_sequence, save_checkpoint, save_flow, Checkpoint, Dataset};
use meteor_core::meteor::{argmax_rows, HeadKind, Target};
use meteor_core::metrics::{accuracy, epe_stats, iou_report, EmptyClass, EpeThresholds};
use meteor_core::suites::{run_gradient_suite, run_group_bench, GroupMode, GrowthConfig, GRADIENT_SUITES};
use meteor_core::theory::sweep;
use meteor_core::toybench::{
    fit, generate_toy_dataset, write_toy_dataset, EpochLog, GridBaseline, Learner, ToyConfig, ToyReport,
};
use meteor_core::{Error, Model, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use config::{meteor_spec, RunConfig, SavedModel};
use data::{load_labelled, load_targets, Task};

#[derive(Parser)]
#[command(name = "meteornet", version, about = "Deep learning on dynamic point cloud sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the toy particle-speed dataset.
    GenToy {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// TOML file with toy dataset settings (cube, frames, train, val).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model; one JSON epoch record per line on stdout.
    Train {
        /// Preset name, `toy-meteornet`, `grid-baseline` or `custom`.
        #[arg(long)]
        arch: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `train.seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint and print a JSON report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long, default_value = "val")]
        split: String,
    },
    /// Finite-difference gradient suites; exits 1 if any fails.
    Gradcheck {
        #[arg(long)]
        module: Option<String>,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Neighborhood sizes of direct and chained grouping on a synthetic sequence.
    GroupBench {
        #[arg(long, value_enum, default_value = "both")]
        mode: BenchMode,
        /// Sequence length T; queries use temporal radius T - 1.
        #[arg(long, default_value_t = 9)]
        frames: usize,
        /// Points per frame in a 20-unit cube.
        #[arg(long, default_value_t = 10_000)]
        points: usize,
        #[arg(long, default_value_t = 200)]
        queries: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Randomized check of the sequence embedding distance identity; exits 1 on failures.
    TheoryCheck {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-12)]
        tolerance: f64,
    },
    /// Nearest-neighbor backward flow for every frame after the first.
    EstimateFlow {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchMode {
    Direct,
    Chained,
    Both,
}

/// Failure of a check the command ran, as opposed to an error while running it.
const VALIDATION_FAILED: u8 = 1;
const INPUT_ERROR: u8 = 2;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Training { .. } | Error::NonFinite(_) => VALIDATION_FAILED,
        _ => INPUT_ERROR,
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var("METEOR_THREADS") else { return Ok(()) };
    let n: usize = v.parse().map_err(|_| format!("METEOR_THREADS must be a positive integer, got {v:?}"))?;
    if n == 0 {
        return Err("METEOR_THREADS must be positive".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(INPUT_ERROR);
    }
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(VALIDATION_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Runs one subcommand; `Ok(false)` means a check it performed failed.
fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::GenToy { seed, out, config } => gen_toy(seed, &out, config.as_deref()),
        Command::Train { arch, config, data, out, seed } => train(&arch, config.as_deref(), &data, &out, seed),
        Command::Eval { ckpt, data, task, split } => eval(&ckpt, &data, task, &split),
        Command::Gradcheck { module, instances, seed } => gradcheck(module.as_deref(), instances, seed),
        Command::GroupBench { mode, frames, points, queries, seed, json } => {
            group_bench(mode, frames, points, queries, seed, json)
        }
        Command::TheoryCheck { trials, seed, tolerance } => theory_check(trials, seed, tolerance),
        Command::EstimateFlow { input, out } => estimate_flow(&input, &out),
    }
}

fn read_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn gen_toy(seed: u64, out: &Path, config: Option<&Path>) -> Result<bool> {
    let cfg = ToyConfig { seed, ..read_toml(config)? };
    cfg.validate()?;
    let ds = generate_toy_dataset(&cfg)?;
    std::fs::create_dir_all(out)?;
    write_toy_dataset(out, &ds)?;
    println!("wrote {} train and {} val sequences to {}", ds.train.len(), ds.val.len(), out.display());
    Ok(true)
}

fn print_epoch(e: &EpochLog) {
    println!("{}", serde_json::to_string(e).expect("epoch log serializes"));
}

fn save_learner<L: Learner>(path: &Path, saved: &SavedModel, learner: &L) -> Result<()> {
    let params = learner.store().named().map(|(n, t)| (n.to_string(), t.clone())).collect();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_checkpoint(path, &Checkpoint { config: saved.to_toml()?, params })
}

fn train(arch: &str, config: Option<&Path>, data: &Path, out: &Path, seed: Option<u64>) -> Result<bool> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.train.validate()?;
    let ds = Dataset::open(data)?;
    let start = Instant::now();
    let report: ToyReport = if arch == "grid-baseline" {
        cfg.grid.validate()?;
        let train = load_labelled(&ds, "train")?;
        let val = load_labelled(&ds, "val")?;
        let frames = train[0].0.len();
        let classes = match cfg.preset.classes {
            Some(c) => c,
            None => train.iter().chain(&val).map(|(_, l)| l + 1).max().unwrap_or(1),
        };
        let mut model = GridBaseline::new(cfg.grid.clone(), frames, cfg.cube, classes, cfg.train.seed)?;
        let prep = |set: &[(meteor_core::Sequence, usize)]| -> Result<Vec<_>> {
            set.iter().map(|(s, l)| Ok((model.prepare(s)?, *l))).collect()
        };
        let (train, val) = (prep(&train)?, prep(&val)?);
        let name = format!("grid-{}-{}", cfg.grid.variant.name(), cfg.grid.grid_size);
        let report = fit(&mut model, &train, &val, &cfg.train, &name, print_epoch)?;
        let saved = SavedModel::Grid { config: cfg.grid.clone(), frames, cube: cfg.cube, classes };
        save_learner(out, &saved, &model)?;
        report
    } else {
        let spec = meteor_spec(arch, &cfg)?;
        let kind = spec.head.kind;
        let train = load_targets(&ds, "train", kind)?;
        let val = load_targets(&ds, "val", kind)?;
        let mut model = Model::build(spec.clone(), cfg.train.seed)?;
        let report = fit(&mut model, &train, &val, &cfg.train, &spec.name, print_epoch)?;
        save_learner(out, &SavedModel::Meteor { spec }, &model)?;
        report
    };
    println!(
        "{}",
        json!({
            "arch": report.arch,
            "epochs": report.epochs.len(),
            "train_accuracy": report.train_accuracy,
            "val_accuracy": report.val_accuracy,
            "seconds": start.elapsed().as_secs_f64(),
            "checkpoint": out.display().to_string(),
        })
    );
    Ok(true)
}

fn eval(ckpt: &Path, data: &Path, task: Task, split: &str) -> Result<bool> {
    let ckpt = load_checkpoint(ckpt)?;
    let ds = Dataset::open(data)?;
    let report = match SavedModel::from_toml(&ckpt.config)? {
        SavedModel::Grid { config, frames, cube, classes } => {
            if task != Task::Cls {
                return Err(Error::input("grid baselines only support --task cls"));
            }
            let mut model = GridBaseline::new(config, frames, cube, classes, 0)?;
            model.params_mut().load(ckpt.params)?;
            let bg = model.background(model.params());
            let samples = load_labelled(&ds, split)?;
            let mut pred = Vec::with_capacity(samples.len());
            for (seq, _) in &samples {
                let logits = model.logits(model.params(), &bg, &model.prepare(seq)?)?;
                pred.push(argmax_rows(&meteor_core::Tensor::row_vector(logits))[0]);
            }
            let gt: Vec<usize> = samples.iter().map(|(_, l)| *l).collect();
            json!({ "task": "cls", "samples": gt.len(), "accuracy": accuracy(&pred, &gt)? })
        }
        SavedModel::Meteor { spec } => {
            if spec.head.kind != task.head() {
                return Err(Error::input(format!("checkpoint {} does not fit --task {task:?}", spec.name)));
            }
            let classes = spec.head.mlp.output();
            let mut model = Model::build(spec, 0)?;
            model.params_mut().load(ckpt.params)?;
            let samples = load_targets(&ds, split, task.head())?;
            eval_meteor(&model, &samples, classes)?
        }
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(true)
}

fn eval_meteor(model: &Model, samples: &[(meteor_core::Sequence, Target)], classes: usize) -> Result<serde_json::Value> {
    let (mut pred, mut gt) = (Vec::new(), Vec::new());
    let (mut flow_pred, mut flow_gt) = (Vec::new(), Vec::new());
    for (seq, target) in samples {
        let out = model.predict(seq, None)?;
        match target {
            Target::Class(c) => {
                pred.push(argmax_rows(&out)[0]);
                gt.push(*c);
            }
            Target::PointClasses(l) => {
                pred.extend(argmax_rows(&out));
                gt.extend_from_slice(l);
            }
            Target::Flow(f) => {
                let rows = |t: &meteor_core::Tensor| t.data().chunks(3).map(|r| [r[0], r[1], r[2]]).collect::<Vec<_>>();
                flow_pred.extend(rows(&out));
                flow_gt.extend(rows(f));
            }
        }
    }
    Ok(match model.spec().head.kind {
        HeadKind::SequenceClass => json!({ "task": "cls", "samples": gt.len(), "accuracy": accuracy(&pred, &gt)? }),
        HeadKind::PerPointClass => {
            let iou = iou_report(&pred, &gt, classes, EmptyClass::Zero)?;
            json!({
                "task": "seg",
                "samples": samples.len(),
                "points": gt.len(),
                "accuracy": iou.accuracy,
                "mean_iou": iou.mean_iou,
                "per_class_iou": iou.per_class,
            })
        }
        HeadKind::LastFrameFlow => {
            let epe = epe_stats(&flow_pred, &flow_gt, &EpeThresholds::default())?;
            json!({
                "task": "flow",
                "samples": samples.len(),
                "points": flow_gt.len(),
                "epe_mean": epe.mean,
                "epe_std": epe.std,
                "accuracy": epe.accuracy,
                "outliers": epe.outliers,
            })
        }
    })
}

fn gradcheck(module: Option<&str>, instances: usize, seed: u64) -> Result<bool> {
    let names: Vec<&str> = match module {
        Some(m) if GRADIENT_SUITES.contains(&m) => vec![m],
        Some(m) => return Err(Error::input(format!("unknown module {m:?}; expected one of {GRADIENT_SUITES:?}"))),
        None => GRADIENT_SUITES.to_vec(),
    };
    let mut ok = true;
    println!("{:<22} {:>9} {:>9} {:>14}  result", "module", "instances", "checked", "max rel err");
    for name in names {
        let r = run_gradient_suite(name, instances, seed)?;
        ok &= r.passed;
        println!(
            "{:<22} {:>9} {:>9} {:>14.3e}  {}",
            r.name,
            r.instances,
            r.checked,
            r.max_rel_error,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    Ok(ok)
}

fn group_bench(mode: BenchMode, frames: usize, points: usize, queries: usize, seed: u64, as_json: bool) -> Result<bool> {
    if frames < 2 || points == 0 || queries == 0 {
        return Err(Error::input("group-bench needs at least 2 frames, 1 point and 1 query"));
    }
    let cfg = GrowthConfig { frames, points_per_frame: points, queries, seed, ..GrowthConfig::default() };
    let modes = match mode {
        BenchMode::Direct => vec![GroupMode::Direct],
        BenchMode::Chained => vec![GroupMode::Chained],
        BenchMode::Both => vec![GroupMode::Direct, GroupMode::Chained],
    };
    let reports = modes.into_iter().map(|m| run_group_bench(m, &cfg)).collect::<Result<Vec<_>>>()?;
    let ratio = (reports.len() == 2).then(|| reports[0].mean_size / reports[1].mean_size);
    if as_json {
        println!("{}", serde_json::to_string_pretty(&json!({ "reports": reports, "direct_over_chained": ratio })).unwrap());
        return Ok(true);
    }
    println!("{:<8} {:>6} {:>4} {:>8} {:>10} {:>8} {:>12}", "mode", "frames", "tau", "queries", "mean size", "max", "queries/s");
    for r in &reports {
        println!(
            "{:<8} {:>6} {:>4} {:>8} {:>10.1} {:>8} {:>12.0}",
            format!("{:?}", r.mode).to_lowercase(),
            r.frames,
            r.temporal_radius,
            r.queries,
            r.mean_size,
            r.max_size,
            r.queries_per_second
        );
    }
    if let Some(x) = ratio {
        println!("direct / chained mean size: {x:.2}");
    }
    Ok(true)
}

fn theory_check(trials: usize, seed: u64, tolerance: f64) -> Result<bool> {
    if trials == 0 {
        return Err(Error::input("--trials must be positive"));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = sweep(&mut rng, trials, tolerance)?;
    let pass = r.failures == 0;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "trials": r.trials,
            "tolerance": tolerance,
            "failures": r.failures,
            "worst_residual": r.worst_residual,
            "worst_excess": r.worst_excess,
            "worst_aligned_residual": r.worst_aligned_residual,
            "seconds": start.elapsed().as_secs_f64(),
            "result": if pass { "pass" } else { "fail" },
        }))
        .unwrap()
    );
    Ok(pass)
}

fn estimate_flow(input: &Path, out: &Path) -> Result<bool> {
    let seq = load_sequence(input)?;
    let flows = estimate_sequence_flow_nn(&seq)?;
    std::fs::create_dir_all(out)?;
    for f in &flows {
        save_flow(&out.join(format!("flow_{:03}.pcfl", f.source_frame + 1)), f)?;
    }
    println!("wrote {} flow fields to {}", flows.len(), out.display());
    Ok(true)
}
