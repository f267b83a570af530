//! Point containers and exact spatial queries.
//!
//! Coordinates are kept in `f64`. The [`SpatialIndex`] is a uniform grid hash whose
//! answers are defined to be identical to a brute-force scan; the grid only prunes work.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Euclidean distance. Every radius and nearest-neighbor predicate in the crate goes
/// through this function so that oracle scans and indexed queries agree bit for bit.
#[inline]
pub fn distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

#[inline]
pub(crate) fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn add(a: &Point3, b: &Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn check_finite(points: &[Point3]) -> Result<()> {
    if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::input(format!("point {i} has a non-finite coordinate")));
    }
    Ok(())
}

/// One point cloud of a sequence: `n` points with `channels` feature values each.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    coords: Vec<Point3>,
    features: Vec<f64>,
    channels: usize,
    timestamp: usize,
}

impl Frame {
    pub fn new(
        coords: Vec<Point3>,
        features: Vec<f64>,
        channels: usize,
        timestamp: usize,
    ) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::input("frame must contain at least one point"));
        }
        check_finite(&coords)?;
        if features.len() != coords.len() * channels {
            return Err(Error::shape(format!(
                "{} feature values for {} points with {} channels",
                features.len(),
                coords.len(),
                channels
            )));
        }
        Ok(Self { coords, features, channels, timestamp })
    }

    /// Frame without feature channels.
    pub fn from_coords(coords: Vec<Point3>, timestamp: usize) -> Result<Self> {
        Self::new(coords, Vec::new(), 0, timestamp)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Point3] {
        &self.coords
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn timestamp(&self) -> usize {
        self.timestamp
    }

    pub(crate) fn with_timestamp(mut self, timestamp: usize) -> Self {
        self.timestamp = timestamp;
        self
    }

    /// Reorders points so that new point `k` is old point `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let n = self.len();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::input("order is not a permutation of the frame's points"));
        }
        let coords = order.iter().map(|&i| self.coords[i]).collect();
        let features = order.iter().flat_map(|&i| self.feature_row(i).iter().copied()).collect();
        Ok(Self { coords, features, channels: self.channels, timestamp: self.timestamp })
    }
}

/// Ordered frames with timestamps `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    frames: Vec<Frame>,
}

impl Sequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::input("sequence must contain at least one frame"));
        }
        let channels = frames[0].channels();
        for (k, f) in frames.iter().enumerate() {
            if f.timestamp() != k + 1 {
                return Err(Error::input(format!(
                    "frame {k} has timestamp {}, expected {}",
                    f.timestamp(),
                    k + 1
                )));
            }
            if f.channels() != channels {
                return Err(Error::shape("all frames must have the same feature channels"));
            }
        }
        Ok(Self { frames })
    }

    /// Builds a sequence from frames, assigning timestamps `1..=T` in order.
    pub fn from_frames_renumbered(frames: Vec<Frame>) -> Result<Self> {
        let frames = frames.into_iter().enumerate().map(|(k, f)| f.with_timestamp(k + 1)).collect();
        Self::new(frames)
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &Frame {
        &self.frames[t]
    }

    /// Number of frames `T`.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.frames[0].channels()
    }

    pub fn total_points(&self) -> usize {
        self.frames.iter().map(Frame::len).sum()
    }
}

type Cell = [i64; 3];

/// Uniform grid hash over the points of one frame.
///
/// Immutable after construction, so shared references can be queried from many threads.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    cell_size: f64,
    points: Vec<Point3>,
    buckets: HashMap<Cell, Vec<usize>>,
    lo: Cell,
    hi: Cell,
}

impl SpatialIndex {
    pub fn build(frame: &Frame, cell_size: f64) -> Result<Self> {
        Self::from_points(frame.coords(), cell_size)
    }

    /// Indexes a raw point list. An empty list is accepted; queries on it fail.
    pub fn from_points(points: &[Point3], cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::input(format!("cell size must be positive, got {cell_size}")));
        }
        check_finite(points)?;
        let mut buckets: HashMap<Cell, Vec<usize>> = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            let c = cell_of(p, cell_size);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
            buckets.entry(c).or_default().push(i);
        }
        Ok(Self { cell_size, points: points.to_vec(), buckets, lo, hi })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn occupied_cells(&self) -> usize {
        self.buckets.len()
    }

    /// Indices of points strictly closer than `r` to `center`, ascending.
    pub fn radius_query(&self, center: &Point3, r: f64) -> Result<Vec<usize>> {
        if !(r > 0.0) {
            return Err(Error::input(format!("query radius must be positive, got {r}")));
        }
        let mut out = Vec::new();
        if self.points.is_empty() {
            return Ok(out);
        }
        let mut from = [0i64; 3];
        let mut to = [0i64; 3];
        for a in 0..3 {
            from[a] = cell_coord(center[a] - r, self.cell_size).max(self.lo[a]);
            to[a] = cell_coord(center[a] + r, self.cell_size).min(self.hi[a]);
            if from[a] > to[a] {
                return Ok(out);
            }
        }
        let span: i64 = (0..3).map(|a| to[a] - from[a] + 1).product();
        if span as usize > self.buckets.len() {
            for bucket in self.buckets.values() {
                self.collect_within(bucket, center, r, &mut out);
            }
        } else {
            for x in from[0]..=to[0] {
                for y in from[1]..=to[1] {
                    for z in from[2]..=to[2] {
                        if let Some(bucket) = self.buckets.get(&[x, y, z]) {
                            self.collect_within(bucket, center, r, &mut out);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    fn collect_within(&self, bucket: &[usize], center: &Point3, r: f64, out: &mut Vec<usize>) {
        out.extend(bucket.iter().copied().filter(|&i| distance(&self.points[i], center) < r));
    }

    /// The `k` nearest points as `(index, distance)`, by distance then index.
    /// Returns every point when fewer than `k` exist.
    pub fn knn_query(&self, center: &Point3, k: usize) -> Result<Vec<(usize, f64)>> {
        if k == 0 {
            return Err(Error::input("k must be at least 1"));
        }
        if self.points.is_empty() {
            return Err(Error::input("knn query on an empty point set"));
        }
        let k = k.min(self.points.len());
        let c0 = cell_of(center, self.cell_size);
        // Chebyshev ring radius beyond which no occupied cell exists.
        let max_ring = (0..3)
            .map(|a| (c0[a] - self.lo[a]).abs().max((self.hi[a] - c0[a]).abs()))
            .max()
            .unwrap_or(0);
        let mut found: Vec<(usize, f64)> = Vec::new();
        let mut visited = 0usize;
        for ring in 0..=max_ring {
            if (ring as usize).pow(3) > self.buckets.len().max(1) * 8 {
                // Sparse grid relative to the search shell: scan buckets instead.
                return Ok(self.knn_scan(center, k));
            }
            for_each_ring_cell(c0, ring, |cell| {
                if let Some(bucket) = self.buckets.get(&cell) {
                    visited += bucket.len();
                    found.extend(bucket.iter().map(|&i| (i, distance(&self.points[i], center))));
                }
            });
            if found.len() >= k {
                found.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                found.truncate(k);
                // Any point in ring+1 or further is at least ring * cell_size away.
                let bound = ring as f64 * self.cell_size;
                if found[k - 1].1 < bound || visited == self.points.len() {
                    return Ok(found);
                }
            }
        }
        found.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        found.truncate(k);
        Ok(found)
    }

    fn knn_scan(&self, center: &Point3, k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> =
            self.points.iter().enumerate().map(|(i, p)| (i, distance(p, center))).collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }
}

#[inline]
fn cell_coord(v: f64, cell_size: f64) -> i64 {
    (v / cell_size).floor() as i64
}

#[inline]
fn cell_of(p: &Point3, cell_size: f64) -> Cell {
    [cell_coord(p[0], cell_size), cell_coord(p[1], cell_size), cell_coord(p[2], cell_size)]
}

fn for_each_ring_cell(c: Cell, ring: i64, mut f: impl FnMut(Cell)) {
    if ring == 0 {
        f(c);
        return;
    }
    for dx in -ring..=ring {
        for dy in -ring..=ring {
            let edge = dx.abs() == ring || dy.abs() == ring;
            if edge {
                for dz in -ring..=ring {
                    f([c[0] + dx, c[1] + dy, c[2] + dz]);
                }
            } else {
                f([c[0] + dx, c[1] + dy, c[2] - ring]);
                f([c[0] + dx, c[1] + dy, c[2] + ring]);
            }
        }
    }
}

/// Greedy farthest point sampling starting from `seed_index`.
///
/// Each step picks the point with the largest distance to the selected set; ties go to
/// the smaller index.
pub fn farthest_point_sample(points: &[Point3], k: usize, seed_index: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 {
        return Err(Error::input("sample count must be at least 1"));
    }
    if k > n {
        return Err(Error::input(format!("cannot sample {k} of {n} points")));
    }
    if seed_index >= n {
        return Err(Error::input(format!("seed index {seed_index} out of range for {n} points")));
    }
    let mut selected = Vec::with_capacity(k);
    let mut min_dist = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut current = seed_index;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == k {
            return Ok(selected);
        }
        let anchor = points[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = distance(&points[i], &anchor);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if min_dist[i] > best_d {
                best_d = min_dist[i];
                best = i;
            }
        }
        current = best;
    }
}

/// FPS on a frame.
pub fn farthest_point_sample_frame(frame: &Frame, k: usize, seed_index: usize) -> Result<Vec<usize>> {
    farthest_point_sample(frame.coords(), k, seed_index)
}

/// Index of the lexicographically smallest point (x, then y, then z, then index).
///
/// Used as an FPS seed that does not depend on storage order.
pub fn canonical_seed(points: &[Point3]) -> usize {
    (0..points.len())
        .min_by(|&a, &b| {
            let (pa, pb) = (&points[a], &points[b]);
            pa[0].total_cmp(&pb[0])
                .then(pa[1].total_cmp(&pb[1]))
                .then(pa[2].total_cmp(&pb[2]))
                .then(a.cmp(&b))
        })
        .unwrap_or(0)
}

/// Symmetric Hausdorff distance between two finite point sets under `dist`.
pub fn hausdorff_by<P>(a: &[P], b: &[P], dist: impl Fn(&P, &P) -> f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("Hausdorff distance needs two nonempty sets"));
    }
    let directed = |from: &[P], to: &[P]| {
        from.iter()
            .map(|x| to.iter().map(|y| dist(x, y)).fold(f64::INFINITY, f64::min))
            .fold(0.0f64, f64::max)
    };
    Ok(directed(a, b).max(directed(b, a)))
}

pub fn hausdorff(a: &Frame, b: &Frame) -> Result<f64> {
    hausdorff_by(a.coords(), b.coords(), distance)
}
