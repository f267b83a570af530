//! End-to-end acceptance report: one PASS/FAIL line per criterion, exit status 1 if any
//! fails. Extra arguments select criteria by substring, e.g.
//! `cargo test --test acceptance -- theory`.

mod common;

use std::time::Instant;

use common::checks::*;
use meteor_core::suites::{run_all_gradient_suites, run_group_bench, GroupMode, GrowthConfig};
use meteor_core::theory::sweep;
use meteor_core::toybench::{
    generate_toy_dataset, run_on_dataset, GridBaselineConfig, GridVariant, ToyArch, ToyConfig, ToyDataset, ToyReport,
    TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool").install(f)
}

fn train(arch: &ToyArch, ds: &ToyDataset) -> (ToyReport, f64) {
    let start = Instant::now();
    let r = single_threaded(|| run_on_dataset(arch, ds, &TrainConfig::default(), |_| {})).expect("training run");
    (r, start.elapsed().as_secs_f64())
}

fn toy_experiment(ds: &ToyDataset, meteor: &(ToyReport, f64)) -> Outcome {
    let (r, secs) = meteor;
    outcome(
        r.train_accuracy == 1.0 && r.val_accuracy >= 0.995 && *secs < 300.0,
        format!(
            "train {:.4}, val {:.4} after {} epochs in {:.1} s on one thread ({} train / {} val)",
            r.train_accuracy,
            r.val_accuracy,
            r.epochs.len(),
            secs,
            ds.train.len(),
            ds.val.len()
        ),
    )
}

fn grid_band(ds: &ToyDataset, meteor: &(ToyReport, f64)) -> Outcome {
    let mut pass = meteor.0.val_accuracy >= 0.995;
    let mut parts = vec![format!("meteornet val {:.3}", meteor.0.val_accuracy)];
    for variant in [GridVariant::TimeAsChannels, GridVariant::Dense4d] {
        for size in [10.0, 5.0] {
            let arch = ToyArch::Grid(GridBaselineConfig::new(size, variant));
            let (r, secs) = train(&arch, ds);
            pass &= r.val_accuracy <= 0.80;
            parts.push(format!("{} val {:.3} ({} epochs, {:.0} s)", arch.name(), r.val_accuracy, r.epochs.len(), secs));
        }
    }
    outcome(pass, parts.join("; "))
}

fn theorem_identity() -> Outcome {
    let start = Instant::now();
    let r = sweep(&mut ChaCha8Rng::seed_from_u64(0), 10_000, 1e-12).expect("sweep");
    let secs = start.elapsed().as_secs_f64();
    outcome(
        r.failures == 0 && secs < 30.0,
        format!(
            "{} of {} pairs off by >= 1e-12, worst |d_H(psi S, psi S') - d_seq/T| = {:.3e}; \
             d_H(psi) - d_seq/T never exceeds {:.1e}; frame-aligned form worst {:.1e}; {:.2} s",
            r.failures, r.trials, r.worst_residual, r.worst_excess, r.worst_aligned_residual, secs
        ),
    )
}

fn gradient_suites() -> Outcome {
    let reports = run_all_gradient_suites(20, 0).expect("gradient suites");
    let pass = reports.iter().all(|r| r.passed && r.instances >= 20);
    let parts: Vec<String> = reports.iter().map(|r| format!("{} {:.1e}", r.name, r.max_rel_error)).collect();
    outcome(pass, format!("max rel error < 1e-4 over 20 instances each: {}", parts.join(", ")))
}

fn grouping_oracles() -> Outcome {
    let s = grouping_sweep(2024, 1000);
    let interp = interpolation_max_error(3, 1000);
    let rigid = rigid_chain_max_error(9, 200);
    outcome(
        s.mismatches == 0 && interp <= 1e-12 && rigid <= 1e-9,
        format!(
            "{} neighborhoods over 1000 sequences, {} mismatches; interpolation {:.1e}; rigid chain {:.1e}",
            s.compared, s.mismatches, interp, rigid
        ),
    )
}

fn set_properties() -> Outcome {
    let perm = permutation_failures(17, 100);
    let rate = timestamp_change_rate(23, 1000);
    outcome(
        perm == 0 && rate >= 0.95,
        format!("permutation mismatches {perm}/100; timestamp move changed the feature in {:.1}% of trials", rate * 100.0),
    )
}

fn growth_check() -> Outcome {
    let cfg = GrowthConfig::default();
    let d = run_group_bench(GroupMode::Direct, &cfg).expect("direct bench");
    let c = run_group_bench(GroupMode::Chained, &cfg).expect("chained bench");
    let ratio = d.mean_size / c.mean_size;
    outcome(
        ratio >= 2.0 && d.temporal_radius == 8,
        format!(
            "tau {}: direct mean {:.1}, chained mean {:.1}, ratio {:.1} over {} queries",
            d.temporal_radius, d.mean_size, c.mean_size, ratio, d.queries
        ),
    )
}

fn metric_oracles() -> Outcome {
    let epe = epe_oracle_max_error(5, 1000);
    let iou = iou_oracle_max_error(8, 1000);
    outcome(epe <= 1e-12 && iou <= 1e-12, format!("EPE worst {epe:.1e}, IoU worst {iou:.1e}"))
}

fn reduction() -> Outcome {
    let err = reduction_max_error(31, 200);
    outcome(err <= 1e-12, format!("one-frame Meteor-ind vs local PointNet worst {err:.1e}"))
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));

    let needs_toy = wanted("toy-experiment") || wanted("grid-band");
    let ds = needs_toy.then(|| generate_toy_dataset(&ToyConfig::default()).expect("toy dataset"));
    let meteor = ds.as_ref().map(|ds| train(&ToyArch::MeteorNet, ds));

    let criteria: Vec<Criterion> = vec![
        ("toy-experiment", Box::new(|| toy_experiment(ds.as_ref().unwrap(), meteor.as_ref().unwrap()))),
        ("grid-band", Box::new(|| grid_band(ds.as_ref().unwrap(), meteor.as_ref().unwrap()))),
        ("theorem-identity", Box::new(theorem_identity)),
        ("gradient-suite", Box::new(gradient_suites)),
        ("grouping-oracles", Box::new(grouping_oracles)),
        ("set-properties", Box::new(set_properties)),
        ("growth-check", Box::new(growth_check)),
        ("metrics", Box::new(metric_oracles)),
        ("reduction", Box::new(reduction)),
    ];
    let (mut run, mut failed) = (0, 0);
    for (name, check) in &criteria {
        if !wanted(name) {
            continue;
        }
        let o = check();
        run += 1;
        failed += !o.pass as usize;
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {}/{run} criteria passed", run - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
