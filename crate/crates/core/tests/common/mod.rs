//! Brute-force references shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use meteor_core::geometry::{distance, Frame, Point3};
use meteor_core::grouping::{FlowField, PointRef, RadiusSchedule, INTERP_K, INTERP_POWER, ZERO_DISTANCE};
use meteor_core::Sequence;
use rand::Rng;

pub mod checks;

pub fn random_frames(rng: &mut impl Rng, frames: usize, max_points: usize, extent: f64) -> Vec<Vec<Point3>> {
    (0..frames)
        .map(|_| {
            let n = rng.gen_range(1..=max_points);
            (0..n).map(|_| [0, 1, 2].map(|_| rng.gen_range(0.0..extent))).collect()
        })
        .collect()
}

pub fn sequence_of(frames: &[Vec<Point3>]) -> Sequence {
    let fs = frames.iter().enumerate().map(|(t, c)| Frame::from_coords(c.clone(), t + 1).unwrap()).collect();
    Sequence::new(fs).unwrap()
}

pub fn random_flows(rng: &mut impl Rng, frames: &[Vec<Point3>], scale: f64) -> Vec<FlowField> {
    (1..frames.len())
        .map(|t| {
            let v = (0..frames[t].len()).map(|_| [0, 1, 2].map(|_| rng.gen_range(-scale..scale))).collect();
            FlowField::new(t, v).unwrap()
        })
        .collect()
}

fn ball(points: &[Point3], frame: usize, center: &Point3, r: f64, out: &mut Vec<PointRef>) {
    for (i, p) in points.iter().enumerate() {
        if distance(p, center) < r {
            out.push(PointRef::new(frame, i));
        }
    }
}

/// Every point of every frame within `|dt| <= tau` scanned against the schedule.
pub fn brute_direct(frames: &[Vec<Point3>], q: PointRef, s: &RadiusSchedule, tau: usize) -> Vec<PointRef> {
    let center = frames[q.frame][q.index];
    let mut out = Vec::new();
    for (t, pts) in frames.iter().enumerate() {
        let dt = t.abs_diff(q.frame);
        if dt <= tau {
            ball(pts, t, &center, s.radius(dt), &mut out);
        }
    }
    out
}

/// Sort-based k nearest neighbors, ties to the lower index.
pub fn brute_knn(points: &[Point3], center: &Point3, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = points.iter().enumerate().map(|(i, p)| (i, distance(p, center))).collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Inverse-distance weighting over a full sort, written out longhand.
pub fn naive_interpolate(pos: &Point3, points: &[Point3], flow: &FlowField, k: usize, p: f64) -> Point3 {
    let nn = brute_knn(points, pos, k);
    if nn[0].1 < ZERO_DISTANCE {
        return flow.vectors[nn[0].0];
    }
    let mut num = [0.0; 3];
    let mut den = 0.0;
    for &(j, d) in &nn {
        let w = 1.0 / d.powf(p);
        for a in 0..3 {
            num[a] += w * flow.vectors[j][a];
        }
        den += w;
    }
    num.map(|v| v / den)
}

/// Virtual positions of `q` in frames `q.frame, q.frame - 1, ...` down to `q.frame - depth`.
pub fn naive_chain(frames: &[Vec<Point3>], flows: &[FlowField], q: PointRef, depth: usize) -> Vec<Point3> {
    let mut pos = frames[q.frame][q.index];
    let mut out = vec![pos];
    for d in 1..=depth {
        let src = q.frame + 1 - d;
        let flow = flows.iter().find(|f| f.source_frame == src).unwrap();
        let step = if d == 1 {
            flow.vectors[q.index]
        } else {
            naive_interpolate(&pos, &frames[src], flow, INTERP_K, INTERP_POWER)
        };
        pos = [pos[0] + step[0], pos[1] + step[1], pos[2] + step[2]];
        out.push(pos);
    }
    out
}

/// Chained grouping with a constant radius over earlier frames only.
pub fn brute_chained(frames: &[Vec<Point3>], flows: &[FlowField], q: PointRef, r: f64, tau: usize) -> Vec<PointRef> {
    let depth = tau.min(q.frame);
    let chain = naive_chain(frames, flows, q, depth);
    let mut out = Vec::new();
    for d in (0..=depth).rev() {
        let t = q.frame - d;
        ball(&frames[t], t, &chain[d], r, &mut out);
    }
    out
}
