//! Spatiotemporal neighborhoods.
//!
//! Frames are addressed by their 0-based position in the sequence (`frame = timestamp - 1`).
//! Two grouping strategies are provided:
//!
//! * direct grouping: a spatial ball around the query point whose radius grows with the
//!   temporal offset, `r(dt) = r0 + alpha * dt`;
//! * chained-flow grouping: a ball of (by default constant) radius around the query's
//!   virtual position in each earlier frame, obtained by chaining backward scene flow.

use crate::error::{Error, Result};
use crate::geometry::{add, distance, Frame, Point3, Sequence, SpatialIndex};

/// Distance below which flow interpolation returns the neighbor's flow unchanged.
pub const ZERO_DISTANCE: f64 = 1e-9;

/// Default neighbor count and distance power for flow interpolation.
pub const INTERP_K: usize = 2;
pub const INTERP_POWER: f64 = 2.0;

/// Affine radius schedule `r(dt) = r0 + alpha * dt`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RadiusSchedule {
    pub r0: f64,
    #[serde(default)]
    pub alpha: f64,
}

impl RadiusSchedule {
    pub fn new(r0: f64, alpha: f64) -> Result<Self> {
        let s = Self { r0, alpha };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(r: f64) -> Result<Self> {
        Self::new(r, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r0 > 0.0 && self.r0.is_finite()) {
            return Err(Error::input(format!("r0 must be positive, got {}", self.r0)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::input(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn radius(&self, dt: usize) -> f64 {
        self.r0 + self.alpha * dt as f64
    }
}

/// A point addressed by frame position and index within that frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PointRef {
    pub frame: usize,
    pub index: usize,
}

impl PointRef {
    pub fn new(frame: usize, index: usize) -> Self {
        Self { frame, index }
    }
}

/// A query point and its neighbors, sorted by `(frame, index)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub query: PointRef,
    pub members: Vec<PointRef>,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, p: PointRef) -> bool {
        self.members.binary_search(&p).is_ok()
    }
}

/// Backward scene flow from frame `source_frame` to `source_frame - 1`, one vector per
/// point of the source frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub source_frame: usize,
    pub vectors: Vec<Point3>,
}

impl FlowField {
    pub fn new(source_frame: usize, vectors: Vec<Point3>) -> Result<Self> {
        if vectors.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::input("flow vectors must be finite"));
        }
        Ok(Self { source_frame, vectors })
    }

    pub fn zeros(source_frame: usize, n: usize) -> Self {
        Self { source_frame, vectors: vec![[0.0; 3]; n] }
    }
}

/// Chained virtual positions of one point in its own and earlier frames.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualTrajectory {
    pub origin: PointRef,
    /// `(frame, position)` for frames `origin.frame, origin.frame - 1, ...`.
    pub positions: Vec<(usize, Point3)>,
}

impl VirtualTrajectory {
    pub fn position(&self, frame: usize) -> Option<Point3> {
        self.positions.iter().find(|(f, _)| *f == frame).map(|(_, p)| *p)
    }
}

/// Options shared by both grouping strategies.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroupOptions {
    /// Keep at most this many members per frame, nearest first (ties by index).
    pub max_per_frame: Option<usize>,
    /// Chained mode only: also group frames after the query with zero virtual displacement.
    pub chained_forward: bool,
}

/// Per-frame spatial indices over a sequence of point sets.
#[derive(Debug, Clone)]
pub struct Grouper {
    frames: Vec<SpatialIndex>,
}

impl Grouper {
    pub fn for_sequence(seq: &Sequence, cell_size: f64) -> Result<Self> {
        let frames = seq
            .frames()
            .iter()
            .map(|f| SpatialIndex::build(f, cell_size))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { frames })
    }

    pub fn from_coords(frames: &[Vec<Point3>], cell_size: f64) -> Result<Self> {
        let frames = frames
            .iter()
            .map(|c| SpatialIndex::from_points(c, cell_size))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { frames })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, t: usize) -> &SpatialIndex {
        &self.frames[t]
    }

    pub fn point(&self, p: PointRef) -> Point3 {
        self.frames[p.frame].points()[p.index]
    }

    fn check_query(&self, q: PointRef) -> Result<()> {
        if q.frame >= self.frames.len() || q.index >= self.frames[q.frame].len() {
            return Err(Error::input(format!(
                "query ({}, {}) does not reference a point",
                q.frame, q.index
            )));
        }
        Ok(())
    }

    fn ball(
        &self,
        frame: usize,
        center: &Point3,
        r: f64,
        cap: Option<usize>,
        out: &mut Vec<PointRef>,
    ) -> Result<()> {
        let idx = &self.frames[frame];
        let mut hits = idx.radius_query(center, r)?;
        if let Some(cap) = cap {
            if hits.len() > cap {
                let pts = idx.points();
                hits.sort_by(|&a, &b| {
                    distance(&pts[a], center).total_cmp(&distance(&pts[b], center)).then(a.cmp(&b))
                });
                hits.truncate(cap);
                hits.sort_unstable();
            }
        }
        out.extend(hits.into_iter().map(|index| PointRef { frame, index }));
        Ok(())
    }

    /// Direct grouping: every point within `schedule.radius(|dt|)` of the query in frames
    /// `|dt| <= temporal_radius`.
    pub fn direct_group(
        &self,
        query: PointRef,
        schedule: &RadiusSchedule,
        temporal_radius: usize,
        opts: &GroupOptions,
    ) -> Result<Neighborhood> {
        self.check_query(query)?;
        schedule.validate()?;
        let center = self.point(query);
        let first = query.frame.saturating_sub(temporal_radius);
        let last = (query.frame + temporal_radius).min(self.frames.len() - 1);
        let mut members = Vec::new();
        for frame in first..=last {
            let r = schedule.radius(frame.abs_diff(query.frame));
            self.ball(frame, &center, r, opts.max_per_frame, &mut members)?;
        }
        Ok(Neighborhood { query, members })
    }

    /// Inverse-distance-weighted flow at `pos` from the `k` nearest points of `flow`'s
    /// source frame.
    pub fn interpolate_flow(&self, pos: &Point3, flow: &FlowField, k: usize, p: f64) -> Result<Point3> {
        let idx = self
            .frames
            .get(flow.source_frame)
            .ok_or_else(|| Error::input(format!("no frame {} for flow", flow.source_frame)))?;
        interpolate_with_index(pos, idx, flow, k, p)
    }

    /// Chains backward flow from `query` over `depth` earlier frames.
    pub fn chain_flow(&self, flows: &[FlowField], query: PointRef, depth: usize) -> Result<VirtualTrajectory> {
        self.check_query(query)?;
        if depth > query.frame {
            return Err(Error::input(format!(
                "chain depth {depth} reaches before the first frame from frame {}",
                query.frame
            )));
        }
        let mut positions = Vec::with_capacity(depth + 1);
        let mut pos = self.point(query);
        positions.push((query.frame, pos));
        for d in 1..=depth {
            let src = query.frame + 1 - d;
            let flow = find_flow(flows, src)?;
            if flow.vectors.len() != self.frames[src].len() {
                return Err(Error::shape(format!(
                    "flow for frame {src} has {} vectors for {} points",
                    flow.vectors.len(),
                    self.frames[src].len()
                )));
            }
            let step = if d == 1 {
                flow.vectors[query.index]
            } else {
                interpolate_with_index(&pos, &self.frames[src], flow, INTERP_K, INTERP_POWER)?
            };
            pos = add(&pos, &step);
            positions.push((src - 1, pos));
        }
        Ok(VirtualTrajectory { origin: query, positions })
    }

    /// Chained-flow grouping: points within `schedule.radius(|dt|)` of the query's virtual
    /// position in each frame of the window.
    pub fn chained_group(
        &self,
        flows: &[FlowField],
        query: PointRef,
        schedule: &RadiusSchedule,
        temporal_radius: usize,
        opts: &GroupOptions,
    ) -> Result<Neighborhood> {
        self.check_query(query)?;
        schedule.validate()?;
        let depth = temporal_radius.min(query.frame);
        let traj = self.chain_flow(flows, query, depth)?;
        let mut members = Vec::new();
        for &(frame, pos) in traj.positions.iter().rev() {
            let r = schedule.radius(query.frame - frame);
            self.ball(frame, &pos, r, opts.max_per_frame, &mut members)?;
        }
        if opts.chained_forward {
            let center = self.point(query);
            let last = (query.frame + temporal_radius).min(self.frames.len() - 1);
            for frame in query.frame + 1..=last {
                let r = schedule.radius(frame - query.frame);
                self.ball(frame, &center, r, opts.max_per_frame, &mut members)?;
            }
        }
        Ok(Neighborhood { query, members })
    }
}

fn find_flow(flows: &[FlowField], source_frame: usize) -> Result<&FlowField> {
    flows
        .iter()
        .find(|f| f.source_frame == source_frame)
        .ok_or_else(|| Error::input(format!("missing flow field for frame {source_frame}")))
}

fn interpolate_with_index(
    pos: &Point3,
    idx: &SpatialIndex,
    flow: &FlowField,
    k: usize,
    p: f64,
) -> Result<Point3> {
    if !(p > 0.0) {
        return Err(Error::input(format!("interpolation power must be positive, got {p}")));
    }
    if flow.vectors.len() != idx.len() {
        return Err(Error::shape("flow field and frame sizes differ"));
    }
    let nn = idx.knn_query(pos, k)?;
    Ok(idw_combine(&nn, p, |j| flow.vectors[j]))
}

/// Inverse-distance weighting over sorted `(index, distance)` neighbors with the
/// zero-distance guard. Shared with feature propagation.
pub(crate) fn idw_weights(nn: &[(usize, f64)], p: f64) -> Vec<(usize, f64)> {
    if let Some(&(j, d)) = nn.first() {
        if d < ZERO_DISTANCE {
            return vec![(j, 1.0)];
        }
    }
    let raw: Vec<(usize, f64)> = nn.iter().map(|&(j, d)| (j, 1.0 / d.powf(p))).collect();
    let total: f64 = raw.iter().map(|w| w.1).sum();
    raw.into_iter().map(|(j, w)| (j, w / total)).collect()
}

fn idw_combine(nn: &[(usize, f64)], p: f64, value: impl Fn(usize) -> Point3) -> Point3 {
    if let Some(&(j, d)) = nn.first() {
        if d < ZERO_DISTANCE {
            return value(j);
        }
    }
    let mut num = [0.0; 3];
    let mut den = 0.0;
    for &(j, d) in nn {
        let w = 1.0 / d.powf(p);
        let v = value(j);
        for a in 0..3 {
            num[a] += w * v[a];
        }
        den += w;
    }
    [num[0] / den, num[1] / den, num[2] / den]
}

fn auto_cell_size(points: &[Point3]) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0f64, f64::max);
    let cell = extent / (points.len() as f64).cbrt().max(1.0);
    if cell > 0.0 && cell.is_finite() {
        cell
    } else {
        1.0
    }
}

/// Builds a [`Grouper`] whose cell size suits radius `r` (falls back to a data-driven size).
pub fn grouper_for(seq: &Sequence, r: f64) -> Result<Grouper> {
    let cell = if r > 0.0 && r.is_finite() { r } else { 1.0 };
    Grouper::for_sequence(seq, cell)
}

pub fn direct_group(
    seq: &Sequence,
    query: PointRef,
    schedule: &RadiusSchedule,
    temporal_radius: usize,
) -> Result<Neighborhood> {
    grouper_for(seq, schedule.r0)?.direct_group(query, schedule, temporal_radius, &GroupOptions::default())
}

pub fn chained_group(
    seq: &Sequence,
    flows: &[FlowField],
    query: PointRef,
    r: f64,
    temporal_radius: usize,
) -> Result<Neighborhood> {
    let schedule = RadiusSchedule::constant(r)?;
    grouper_for(seq, r)?.chained_group(flows, query, &schedule, temporal_radius, &GroupOptions::default())
}

pub fn chain_flow(seq: &Sequence, flows: &[FlowField], query: PointRef, depth: usize) -> Result<VirtualTrajectory> {
    let cell = seq.frames().iter().map(|f| auto_cell_size(f.coords())).fold(f64::INFINITY, f64::min);
    Grouper::for_sequence(seq, cell)?.chain_flow(flows, query, depth)
}

/// Interpolates `flow` (defined on `frame`'s points) at `query_pos`.
pub fn interpolate_flow(query_pos: &Point3, frame: &Frame, flow: &FlowField, k: usize, p: f64) -> Result<Point3> {
    let idx = SpatialIndex::build(frame, auto_cell_size(frame.coords()))?;
    interpolate_with_index(query_pos, &idx, flow, k, p)
}

/// Nearest-neighbor backward flow: for each point of `frame_t`, the offset to its nearest
/// point in `frame_prev` (ties to the smaller index).
pub fn estimate_flow_nn(frame_t: &Frame, frame_prev: &Frame, source_frame: usize) -> Result<FlowField> {
    let idx = SpatialIndex::build(frame_prev, auto_cell_size(frame_prev.coords()))?;
    let vectors = frame_t
        .coords()
        .iter()
        .map(|x| {
            let (j, _) = idx.knn_query(x, 1)?[0];
            let y = frame_prev.coords()[j];
            Ok([y[0] - x[0], y[1] - x[1], y[2] - x[2]])
        })
        .collect::<Result<Vec<_>>>()?;
    FlowField::new(source_frame, vectors)
}

/// Nearest-neighbor flow for every frame after the first.
pub fn estimate_sequence_flow_nn(seq: &Sequence) -> Result<Vec<FlowField>> {
    (1..seq.len()).map(|t| estimate_flow_nn(seq.frame(t), seq.frame(t - 1), t)).collect()
}
