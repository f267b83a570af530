//! Check suites shared by the command line and the acceptance tests: finite-difference
//! gradient checks per differentiable operation, and the neighborhood growth benchmark.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::grouping::{FlowField, GroupOptions, Grouper, PointRef, RadiusSchedule, INTERP_POWER};
use crate::meteor::{
    feature_propagation, meteor_forward, set_abstraction, GroupingConfig, MeteorLayerConfig, MeteorMode, PointLevel,
    SampleCount, SetAbstractionConfig,
};
use crate::nncore::{grad_check, GridShape, Mlp, MlpSpec, ParamStore, Tape, Tensor, Var, DEFAULT_EPS};
use crate::toybench::grid::{GridBaseline, GridBaselineConfig, GridVariant};

/// Largest relative error a gradient suite may report.
pub const GRAD_TOLERANCE: f64 = 1e-4;

pub const GRADIENT_SUITES: [&str; 9] = [
    "mlp",
    "max-pool",
    "dropout",
    "meteor-ind",
    "meteor-rel",
    "set-abstraction",
    "feature-propagation",
    "toy-conv",
    "losses",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub instances: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn random_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng, bound: f64) {
    for t in store.iter_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-bound..bound);
        }
    }
}

fn random_frames(rng: &mut ChaCha8Rng, frames: usize, lo: usize, hi: usize) -> Vec<Vec<Point3>> {
    (0..frames)
        .map(|_| (0..rng.gen_range(lo..=hi)).map(|_| [0, 1, 2].map(|_| rng.gen_range(0.0..1.0))).collect())
        .collect()
}

/// Reduces `out` to a scalar with fixed random weights so every output entry matters.
fn project(tape: &mut Tape, out: Var, weights: &Tensor) -> Result<Var> {
    tape.dot_const(out, weights)
}

fn level(coords: Vec<Vec<Point3>>, features: Var, channels: usize) -> PointLevel {
    PointLevel { coords, flows: None, features: Some(features), channels }
}

/// One random instance of `name`: its parameters, inputs and scalar function.
fn check_instance(name: &str, rng: &mut ChaCha8Rng) -> Result<(usize, f64)> {
    let mut store = ParamStore::new();
    let report = match name {
        "mlp" => {
            let mlp = Mlp::init(&mut store, "m", &MlpSpec::new(3, &[5, 4]), rng)?;
            randomize(&mut store, rng, 1.0);
            let n = rng.gen_range(2..6);
            let w = random_tensor(rng, n, 4);
            grad_check(&store, &[random_tensor(rng, n, 3)], DEFAULT_EPS, |t, s, x| {
                let y = mlp.forward(t, s, x[0])?;
                project(t, y, &w)
            })?
        }
        "max-pool" => {
            let n = rng.gen_range(3..9);
            let cut = rng.gen_range(1..n);
            let w = random_tensor(rng, 2, 3);
            grad_check(&store, &[random_tensor(rng, n, 3)], DEFAULT_EPS, |t, _, x| {
                let y = t.segment_max(x[0], &[0, cut, n])?;
                project(t, y, &w)
            })?
        }
        "dropout" => {
            let mlp = Mlp::init(&mut store, "m", &MlpSpec::linear_head(3, &[4, 2]), rng)?;
            randomize(&mut store, rng, 1.0);
            let n = rng.gen_range(2..5);
            let w = random_tensor(rng, n, 2);
            let mask_seed = rng.gen::<u64>();
            let off = grad_check(&store, &[random_tensor(rng, n, 3)], DEFAULT_EPS, |t, s, x| {
                let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
                let y = mlp.forward_dropout_last(t, s, x[0], 0.5, false, &mut r)?;
                project(t, y, &w)
            })?;
            // A fixed mask in training mode is linear in its input as well.
            let on = grad_check(&store, &[random_tensor(rng, n, 3)], DEFAULT_EPS, |t, s, x| {
                let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
                let y = mlp.forward_dropout_last(t, s, x[0], 0.5, true, &mut r)?;
                project(t, y, &w)
            })?;
            return Ok((off.checked + on.checked, off.max_rel_error.max(on.max_rel_error)));
        }
        "meteor-ind" | "meteor-rel" => {
            let rel = name == "meteor-rel";
            let frames = rng.gen_range(2..4);
            let coords = random_frames(rng, frames, 2, 5);
            let c = 2;
            let cfg = MeteorLayerConfig {
                mode: if rel { MeteorMode::Rel } else { MeteorMode::Ind },
                grouping: if rel {
                    GroupingConfig::Chained { r0: 0.6, alpha: 0.0 }
                } else {
                    GroupingConfig::Direct { r0: 0.5, alpha: 0.2 }
                },
                temporal_radius: rng.gen_range(1..3),
                mlp: MlpSpec::new(if rel { 2 * c + 4 } else { c + 4 }, &[5, 4]),
                downsample: if rng.gen_bool(0.5) { Some(SampleCount::Fraction(0.5)) } else { None },
                max_per_frame: None,
            };
            let flows: Option<Vec<Vec<Point3>>> = rel.then(|| {
                coords.iter().enumerate().map(|(t, f)| {
                    f.iter().map(|_| if t == 0 { [0.0; 3] } else { [0, 1, 2].map(|_| rng.gen_range(-0.2..0.2)) }).collect()
                }).collect()
            });
            let mlp = Mlp::init(&mut store, "m", &cfg.mlp, rng)?;
            randomize(&mut store, rng, 1.0);
            let n: usize = coords.iter().map(Vec::len).sum();
            let x = random_tensor(rng, n, c);
            // Output row count depends only on geometry; probe it once.
            let rows = {
                let mut t = Tape::new();
                let v = t.leaf(x.clone())?;
                let lvl = PointLevel { flows: flows.clone(), ..level(coords.clone(), v, c) };
                meteor_forward(&mut t, &store, &mlp, &lvl, &cfg)?.total_points()
            };
            let w = random_tensor(rng, rows, 4);
            grad_check(&store, &[x], DEFAULT_EPS, |t, s, x| {
                let lvl = PointLevel { flows: flows.clone(), ..level(coords.clone(), x[0], c) };
                let out = meteor_forward(t, s, &mlp, &lvl, &cfg)?;
                project(t, out.features.expect("features"), &w)
            })?
        }
        "set-abstraction" => {
            let frames = rng.gen_range(1..3);
            let coords = random_frames(rng, frames, 3, 6);
            let c = 2;
            let cfg = SetAbstractionConfig {
                samples: SampleCount::Count(2),
                radius: 0.7,
                mlp: MlpSpec::new(c + 3, &[4, 3]),
                max_per_frame: None,
            };
            let mlp = Mlp::init(&mut store, "m", &cfg.mlp, rng)?;
            randomize(&mut store, rng, 1.0);
            let n: usize = coords.iter().map(Vec::len).sum();
            let w = random_tensor(rng, 2 * coords.len(), 3);
            grad_check(&store, &[random_tensor(rng, n, c)], DEFAULT_EPS, |t, s, x| {
                let out = set_abstraction(t, s, &mlp, &level(coords.clone(), x[0], c), &cfg)?;
                project(t, out.features.expect("features"), &w)
            })?
        }
        "feature-propagation" => {
            let fine = random_frames(rng, 2, 3, 6);
            let coarse = random_frames(rng, 2, 1, 3);
            let (cc, cf) = (3, 2);
            let mlp = Mlp::init(&mut store, "m", &MlpSpec::new(cc + cf, &[4]), rng)?;
            randomize(&mut store, rng, 1.0);
            let nf: usize = fine.iter().map(Vec::len).sum();
            let nc: usize = coarse.iter().map(Vec::len).sum();
            let w = random_tensor(rng, nf, 4);
            let inputs = [random_tensor(rng, nc, cc), random_tensor(rng, nf, cf)];
            grad_check(&store, &inputs, DEFAULT_EPS, |t, s, x| {
                let out = feature_propagation(
                    t,
                    s,
                    &mlp,
                    &level(coarse.clone(), x[0], cc),
                    &level(fine.clone(), x[1], cf),
                    3,
                    INTERP_POWER,
                )?;
                project(t, out.features.expect("features"), &w)
            })?
        }
        "toy-conv" => {
            let four_d = rng.gen_bool(0.5);
            let (variant, dims, cin) = if four_d {
                (GridVariant::Dense4d, vec![2, 3, 2, 2], 1)
            } else {
                (GridVariant::TimeAsChannels, vec![3, 2, 3], 2)
            };
            let cfg = GridBaselineConfig { channels: 3, ..GridBaselineConfig::new(10.0, variant) };
            let b = GridBaseline::with_shape(cfg, 2, 100.0, 4, GridShape::new(&dims), cin, rng.gen())?;
            store = b.params().clone();
            // Unit-range weights over 27 or 81 taps give logits in the tens, and central
            // differences then lose the small gradient entries to cancellation.
            randomize(&mut store, rng, 0.3);
            let label = rng.gen_range(0..4);
            let x = random_tensor(rng, b.shape().cells(), cin);
            grad_check(&store, &[x], DEFAULT_EPS, |t, s, x| {
                let logits = b.forward_dense(t, s, x[0])?;
                t.softmax_cross_entropy(logits, &[label])
            })?
        }
        "losses" => {
            let n = rng.gen_range(1..5);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let target = random_tensor(rng, n, 3);
            let ce = grad_check(&store, &[random_tensor(rng, n, 3)], DEFAULT_EPS, |t, _, x| {
                t.softmax_cross_entropy(x[0], &labels)
            })?;
            let se = grad_check(&store, &[random_tensor(rng, n, 3)], DEFAULT_EPS, |t, _, x| {
                t.squared_error(x[0], &target)
            })?;
            return Ok((ce.checked + se.checked, ce.max_rel_error.max(se.max_rel_error)));
        }
        other => return Err(Error::input(format!("unknown gradient suite {other:?}"))),
    };
    Ok((report.checked, report.max_rel_error))
}

/// Runs `instances` random instances of the named suite.
pub fn run_gradient_suite(name: &str, instances: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut worst) = (0, 0.0f64);
    for _ in 0..instances {
        let (c, e) = check_instance(name, &mut rng)?;
        checked += c;
        worst = worst.max(e);
    }
    Ok(SuiteReport {
        name: name.to_string(),
        instances,
        checked,
        max_rel_error: worst,
        passed: worst < GRAD_TOLERANCE,
    })
}

pub fn run_all_gradient_suites(instances: usize, seed: u64) -> Result<Vec<SuiteReport>> {
    GRADIENT_SUITES.iter().map(|n| run_gradient_suite(n, instances, seed)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupMode {
    Direct,
    Chained,
}

/// Synthetic uniform-density sequence for the growth benchmark. Every frame is a fresh
/// uniform sample of a cube that drifts by `velocity` per frame, so the backward flow of
/// every point is `-velocity`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthConfig {
    pub frames: usize,
    pub points_per_frame: usize,
    pub extent: f64,
    pub velocity: Point3,
    /// Direct grouping uses `r0 + alpha * dt`; chained grouping uses the constant `r0`.
    pub r0: f64,
    pub alpha: f64,
    pub queries: usize,
    pub seed: u64,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        Self {
            frames: 9,
            points_per_frame: 10_000,
            extent: 20.0,
            velocity: [0.2, 0.0, 0.0],
            r0: 0.5,
            alpha: 0.25,
            queries: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub mode: GroupMode,
    pub frames: usize,
    pub temporal_radius: usize,
    pub queries: usize,
    pub mean_size: f64,
    pub max_size: usize,
    pub seconds: f64,
    pub queries_per_second: f64,
}

/// Mean neighborhood size of last-frame queries with temporal radius `frames - 1`.
/// Queries are drawn from the central part of the cube, far enough from the faces that
/// every ball of the window lies inside the sampled region.
pub fn run_group_bench(mode: GroupMode, cfg: &GrowthConfig) -> Result<GrowthReport> {
    if cfg.frames < 1 || cfg.points_per_frame == 0 || cfg.queries == 0 {
        return Err(Error::input("growth benchmark needs frames, points and queries"));
    }
    let tau = cfg.frames - 1;
    let direct = RadiusSchedule::new(cfg.r0, cfg.alpha)?;
    let chained = RadiusSchedule::constant(cfg.r0)?;
    let speed = crate::geometry::distance(&cfg.velocity, &[0.0; 3]);
    let margin = direct.radius(tau) + speed * tau as f64;
    if 2.0 * margin >= cfg.extent {
        return Err(Error::input("cube too small for the temporal window"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let frames: Vec<Vec<Point3>> = (0..cfg.frames)
        .map(|t| {
            (0..cfg.points_per_frame)
                .map(|_| [0, 1, 2].map(|a| rng.gen_range(0.0..cfg.extent) + cfg.velocity[a] * t as f64))
                .collect()
        })
        .collect();
    let flows: Vec<FlowField> = (1..cfg.frames)
        .map(|t| FlowField::new(t, vec![cfg.velocity.map(|v| -v); cfg.points_per_frame]))
        .collect::<Result<_>>()?;
    let grouper = Grouper::from_coords(&frames, cfg.r0)?;
    let last = cfg.frames - 1;
    let shift = cfg.velocity.map(|v| v * last as f64);
    let queries: Vec<usize> = (0..cfg.points_per_frame)
        .filter(|&i| {
            let p = frames[last][i];
            (0..3).all(|a| {
                let x = p[a] - shift[a];
                x >= margin && x <= cfg.extent - margin
            })
        })
        .take(cfg.queries)
        .collect();
    if queries.is_empty() {
        return Err(Error::input("no interior query points"));
    }
    let opts = GroupOptions::default();
    let start = Instant::now();
    let mut sizes = Vec::with_capacity(queries.len());
    for &i in &queries {
        let q = PointRef::new(last, i);
        let hood = match mode {
            GroupMode::Direct => grouper.direct_group(q, &direct, tau, &opts)?,
            GroupMode::Chained => grouper.chained_group(&flows, q, &chained, tau, &opts)?,
        };
        sizes.push(hood.len());
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(GrowthReport {
        mode,
        frames: cfg.frames,
        temporal_radius: tau,
        queries: sizes.len(),
        mean_size: sizes.iter().sum::<usize>() as f64 / sizes.len() as f64,
        max_size: sizes.iter().copied().max().unwrap_or(0),
        seconds,
        queries_per_second: sizes.len() as f64 / seconds.max(1e-12),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes_a_few_instances() {
        for name in GRADIENT_SUITES {
            let r = run_gradient_suite(name, 3, 11).unwrap();
            assert!(r.passed && r.checked > 0, "{r:?}");
        }
        assert!(run_gradient_suite("nope", 1, 0).is_err());
    }

    #[test]
    fn growth_single_frame_modes_agree() {
        let cfg = GrowthConfig { frames: 1, points_per_frame: 300, queries: 50, ..GrowthConfig::default() };
        let d = run_group_bench(GroupMode::Direct, &cfg).unwrap();
        let c = run_group_bench(GroupMode::Chained, &cfg).unwrap();
        assert_eq!(d.mean_size, c.mean_size);
    }

    #[test]
    fn direct_grows_faster_than_chained() {
        let cfg = GrowthConfig { frames: 5, points_per_frame: 500, queries: 50, ..GrowthConfig::default() };
        let d = run_group_bench(GroupMode::Direct, &cfg).unwrap();
        let c = run_group_bench(GroupMode::Chained, &cfg).unwrap();
        assert!(d.mean_size > c.mean_size, "{d:?} {c:?}");
    }
}
