//! Randomized measurements behind the oracle and property tests. Each returns the
//! quantity a test bounds, so the acceptance report and the unit-style tests agree.

use meteor_core::geometry::{Frame, Point3};
use meteor_core::grouping::{
    chain_flow, interpolate_flow, FlowField, GroupOptions, Grouper, PointRef, RadiusSchedule, INTERP_POWER,
};
use meteor_core::meteor::{
    meteor_forward, preset, GroupingConfig, HeadKind, MeteorLayerConfig, MeteorMode, PointLevel, PresetOptions,
};
use meteor_core::metrics::{epe_stats, iou_report, EmptyClass, EpeThresholds};
use meteor_core::nncore::{Mlp, MlpSpec, ParamStore, Tape, Tensor};
use meteor_core::{Model, Sequence};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

#[derive(Debug, Clone, Copy, Default)]
pub struct GroupingSweep {
    pub compared: usize,
    pub mismatches: usize,
}

/// Direct and chained grouping of every point of `sequences` random sequences against
/// the brute-force scans.
pub fn grouping_sweep(seed: u64, sequences: usize) -> GroupingSweep {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GroupingSweep::default();
    for _ in 0..sequences {
        let t = rng.gen_range(1..=5);
        let frames = random_frames(&mut rng, t, 25, 1.0);
        let flows = random_flows(&mut rng, &frames, 0.2);
        let schedule = RadiusSchedule::new(rng.gen_range(0.05..0.4), rng.gen_range(0.0..0.2)).unwrap();
        let r = rng.gen_range(0.05..0.4);
        let tau = rng.gen_range(0..=t);
        let grouper = Grouper::from_coords(&frames, rng.gen_range(0.05..0.5)).unwrap();
        let opts = GroupOptions::default();
        let constant = RadiusSchedule::constant(r).unwrap();
        for (f, pts) in frames.iter().enumerate() {
            for i in 0..pts.len() {
                let q = PointRef::new(f, i);
                let d = grouper.direct_group(q, &schedule, tau, &opts).unwrap();
                let c = grouper.chained_group(&flows, q, &constant, tau, &opts).unwrap();
                out.mismatches += (d.members != brute_direct(&frames, q, &schedule, tau)) as usize;
                out.mismatches += (c.members != brute_chained(&frames, &flows, q, r, tau)) as usize;
                out.compared += 2;
            }
        }
    }
    out
}

/// Worst coordinate difference between library and longhand flow interpolation.
pub fn interpolation_max_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = rng.gen_range(1..40);
        let pts: Vec<Point3> = (0..n).map(|_| [0, 1, 2].map(|_| rng.gen_range(-2.0..2.0))).collect();
        let flow = FlowField::new(0, (0..n).map(|_| [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0))).collect()).unwrap();
        let frame = Frame::from_coords(pts.clone(), 1).unwrap();
        let k = rng.gen_range(1..5);
        let pos = [0, 1, 2].map(|_| rng.gen_range(-2.5..2.5));
        let got = interpolate_flow(&pos, &frame, &flow, k, INTERP_POWER).unwrap();
        let want = naive_interpolate(&pos, &pts, &flow, k, INTERP_POWER);
        for a in 0..3 {
            worst = worst.max((got[a] - want[a]).abs());
        }
    }
    worst
}

/// Worst deviation of chained virtual positions from the analytic path under rigid
/// translation (frame `k` is the base cloud shifted by `k * v`).
pub fn rigid_chain_max_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let t = rng.gen_range(2..8);
        let n = rng.gen_range(3..30);
        let v: Point3 = [0, 1, 2].map(|_| rng.gen_range(-0.5..0.5));
        let base: Vec<Point3> = (0..n).map(|_| [0, 1, 2].map(|_| rng.gen_range(0.0..5.0))).collect();
        let frames: Vec<Vec<Point3>> = (0..t)
            .map(|k| base.iter().map(|p| [0, 1, 2].map(|a| p[a] + v[a] * k as f64)).collect())
            .collect();
        let flows: Vec<FlowField> = (1..t).map(|k| FlowField::new(k, vec![v.map(|c| -c); n]).unwrap()).collect();
        let q = PointRef::new(t - 1, rng.gen_range(0..n));
        let traj = chain_flow(&sequence_of(&frames), &flows, q, t - 1).unwrap();
        assert_eq!(traj.positions.len(), t);
        let start = frames[t - 1][q.index];
        for (frame, pos) in &traj.positions {
            let back = (t - 1 - frame) as f64;
            for a in 0..3 {
                worst = worst.max((pos[a] - (start[a] - back * v[a])).abs());
            }
        }
    }
    worst
}

pub fn with_features(rng: &mut impl Rng, coords: &[Vec<Point3>], channels: usize) -> Sequence {
    let frames = coords
        .iter()
        .enumerate()
        .map(|(t, c)| {
            let f = (0..c.len() * channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Frame::new(c.clone(), f, channels, t + 1).unwrap()
        })
        .collect();
    Sequence::new(frames).unwrap()
}

fn shuffled(rng: &mut impl Rng, seq: &Sequence) -> (Sequence, Vec<Vec<usize>>) {
    let mut orders = Vec::new();
    let frames = seq
        .frames()
        .iter()
        .map(|f| {
            let mut order: Vec<usize> = (0..f.len()).collect();
            order.shuffle(rng);
            let p = f.permuted(&order).unwrap();
            orders.push(order);
            p
        })
        .collect();
    (Sequence::new(frames).unwrap(), orders)
}

/// Small random models covering early fusion, per-point decoding and the flow head.
fn random_model(rng: &mut impl Rng, k: usize) -> (Model, usize) {
    let (name, channels) = match k % 4 {
        0 => ("toy-cls", 0),
        1 => ("meteornet-cls", 2),
        2 => ("meteornet-seg-s", 3),
        _ => ("meteornet-flow", 3),
    };
    let opts = PresetOptions { input_channels: channels, classes: 5, width_divisor: 16 };
    let mut spec = preset(name, &opts).unwrap();
    spec.coord_scale = 1.0;
    (Model::build(spec, rng.gen()).unwrap(), channels)
}

/// Models whose output is not exactly unchanged (class heads) or exactly permuted along
/// with the points (per-point heads) after shuffling points within each frame.
pub fn permutation_failures(seed: u64, models: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for k in 0..models {
        let (model, channels) = random_model(&mut rng, k);
        let t = rng.gen_range(1..4);
        let coords = random_frames(&mut rng, t, 24, 1.0);
        let seq = with_features(&mut rng, &coords, channels);
        let (perm, orders) = shuffled(&mut rng, &seq);
        let a = model.predict(&seq, None).unwrap();
        let b = model.predict(&perm, None).unwrap();
        let ok = match model.spec().head.kind {
            HeadKind::SequenceClass => a == b,
            kind => {
                let frames: Vec<usize> = if kind == HeadKind::LastFrameFlow { vec![t - 1] } else { (0..t).collect() };
                let mut start = 0;
                let mut ok = true;
                for f in frames {
                    for (new, &old) in orders[f].iter().enumerate() {
                        ok &= a.row(start + old) == b.row(start + new);
                    }
                    start += seq.frame(f).len();
                }
                ok
            }
        };
        failures += !ok as usize;
    }
    failures
}

pub fn single_layer(rng: &mut impl Rng, channels: usize, r0: f64, alpha: f64, tau: usize) -> (ParamStore, Mlp, MeteorLayerConfig) {
    let widths = [8, 6];
    let cfg = MeteorLayerConfig {
        mode: MeteorMode::Ind,
        grouping: GroupingConfig::Direct { r0, alpha },
        temporal_radius: tau,
        mlp: MlpSpec::new(channels + 4, &widths),
        downsample: None,
        max_per_frame: None,
    };
    let mut store = ParamStore::new();
    let mlp = Mlp::init(&mut store, "zeta", &cfg.mlp, rng).unwrap();
    (store, mlp, cfg)
}

pub fn layer_output(store: &ParamStore, mlp: &Mlp, cfg: &MeteorLayerConfig, seq: &Sequence) -> Tensor {
    let mut tape = Tape::new();
    let level = PointLevel::from_sequence(&mut tape, seq, 1.0, None).unwrap();
    let out = meteor_forward(&mut tape, store, mlp, &level, cfg).unwrap();
    tape.value(out.features.unwrap()).clone()
}

fn row_of(seq: &Sequence, frame: usize, index: usize) -> usize {
    seq.frames()[..frame].iter().map(Frame::len).sum::<usize>() + index
}

pub fn move_point(seq: &Sequence, from: usize, i: usize, to: usize) -> Sequence {
    let c = seq.channels();
    let f = seq.frame(from);
    let (p, feat) = (f.coords()[i], f.feature_row(i).to_vec());
    let frames = seq
        .frames()
        .iter()
        .enumerate()
        .map(|(t, fr)| {
            let mut coords = fr.coords().to_vec();
            let mut feats = fr.features().to_vec();
            if t == from {
                coords.remove(i);
                feats.drain(i * c..(i + 1) * c);
            }
            if t == to {
                coords.push(p);
                feats.extend_from_slice(&feat);
            }
            Frame::new(coords, feats, c, t + 1).unwrap()
        })
        .collect();
    Sequence::new(frames).unwrap()
}

/// Fraction of trials in which moving one point to another frame (same position and
/// features) changes its Meteor-ind output by more than `1e-6`.
pub fn timestamp_change_rate(seed: u64, trials: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut run, mut changed) = (0, 0);
    while run < trials {
        let t = rng.gen_range(2..5);
        let channels = rng.gen_range(0..3);
        let coords = random_frames(&mut rng, t, 12, 1.0);
        let seq = with_features(&mut rng, &coords, channels);
        let (store, mlp, cfg) = single_layer(&mut rng, channels, 0.6, 0.1, t);
        let from = rng.gen_range(0..t);
        // The donor frame must keep at least one point.
        if seq.frame(from).len() < 2 {
            continue;
        }
        run += 1;
        let to = (from + rng.gen_range(1..t)) % t;
        let i = rng.gen_range(0..seq.frame(from).len());
        let moved = move_point(&seq, from, i, to);
        let before = layer_output(&store, &mlp, &cfg, &seq);
        let after = layer_output(&store, &mlp, &cfg, &moved);
        let diff = before
            .row(row_of(&seq, from, i))
            .iter()
            .zip(after.row(row_of(&moved, to, moved.frame(to).len() - 1)))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        changed += (diff > 1e-6) as usize;
    }
    changed as f64 / trials as f64
}

/// Worst difference between a one-frame Meteor-ind layer and the local PointNet
/// aggregation `g'(x_i) = max_{|x_j - x_i| < r} h(f_j, x_j - x_i)` evaluated row by row.
pub fn reduction_max_error(seed: u64, instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let channels = rng.gen_range(0..4);
        let coords = random_frames(&mut rng, 1, 30, 1.0);
        let seq = with_features(&mut rng, &coords, channels);
        let r = rng.gen_range(0.1..0.6);
        let (store, mlp, cfg) = single_layer(&mut rng, channels, r, 0.3, 3);
        let got = layer_output(&store, &mlp, &cfg, &seq);
        let f = seq.frame(0);
        for i in 0..f.len() {
            let mut best = vec![f64::NEG_INFINITY; mlp.spec().output()];
            for j in 0..f.len() {
                if meteor_core::geometry::distance(&f.coords()[j], &f.coords()[i]) >= r {
                    continue;
                }
                let mut row = f.feature_row(j).to_vec();
                row.extend((0..3).map(|a| f.coords()[j][a] - f.coords()[i][a]));
                // The time offset column is zero within one frame.
                row.push(0.0);
                let mut tape = Tape::new();
                let x = tape.leaf(Tensor::row_vector(row)).unwrap();
                let y = mlp.forward(&mut tape, &store, x).unwrap();
                for (b, v) in best.iter_mut().zip(tape.value(y).data()) {
                    *b = b.max(*v);
                }
            }
            for (g, w) in got.row(i).iter().zip(&best) {
                worst = worst.max((g - w).abs());
            }
        }
    }
    worst
}

fn scalar_epe(pred: &[Point3], gt: &[Point3]) -> [f64; 4] {
    let n = pred.len() as f64;
    let mut errs = Vec::new();
    for i in 0..pred.len() {
        let mut s = 0.0;
        for a in 0..3 {
            s += (pred[i][a] - gt[i][a]).powi(2);
        }
        errs.push(s.sqrt());
    }
    let mean = errs.iter().sum::<f64>() / n;
    let std = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    let (mut acc, mut out) = (0, 0);
    for i in 0..errs.len() {
        let norm = (gt[i][0].powi(2) + gt[i][1].powi(2) + gt[i][2].powi(2)).sqrt();
        if errs[i] < 0.1 || errs[i] < 0.1 * norm {
            acc += 1;
        }
        if errs[i] > 1.0 {
            out += 1;
        }
    }
    [mean, std, acc as f64 / n, out as f64 / n]
}

/// Worst field difference between `epe_stats` and a scalar loop.
pub fn epe_oracle_max_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n = rng.gen_range(1..60);
        let gt: Vec<Point3> = (0..n).map(|_| [0, 1, 2].map(|_| rng.gen_range(-3.0..3.0))).collect();
        let pred: Vec<Point3> =
            gt.iter().map(|g| g.map(|v| v + rng.gen_range(-1.0..1.0) * rng.gen_range(0.0..1.5))).collect();
        let r = epe_stats(&pred, &gt, &EpeThresholds::default()).unwrap();
        let want = scalar_epe(&pred, &gt);
        for (a, b) in [r.mean, r.std, r.accuracy, r.outliers].iter().zip(want) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

fn tally_iou(pred: &[usize], gt: &[usize], classes: usize) -> (Vec<f64>, f64, f64) {
    let mut per = Vec::new();
    for c in 0..classes {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for i in 0..pred.len() {
            match (pred[i] == c, gt[i] == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let union = tp + fp + fn_;
        per.push(if union == 0 { 0.0 } else { tp as f64 / union as f64 });
    }
    let mean = per.iter().sum::<f64>() / classes as f64;
    let acc = pred.iter().zip(gt).filter(|(p, g)| p == g).count() as f64 / pred.len() as f64;
    (per, mean, acc)
}

/// Worst difference between `iou_report` and a TP/FP/FN tally.
pub fn iou_oracle_max_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let classes = rng.gen_range(1..6);
        let n = rng.gen_range(1..80);
        let gt: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let pred: Vec<usize> =
            gt.iter().map(|&g| if rng.gen_bool(0.6) { g } else { rng.gen_range(0..classes) }).collect();
        let r = iou_report(&pred, &gt, classes, EmptyClass::Zero).unwrap();
        let (per, mean, acc) = tally_iou(&pred, &gt, classes);
        for (a, b) in r.per_class.iter().zip(&per) {
            worst = worst.max((a - b).abs());
        }
        worst = worst.max((r.mean_iou - mean).abs()).max((r.accuracy - acc).abs());
    }
    worst
}
