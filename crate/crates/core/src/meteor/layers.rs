use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{canonical_seed, farthest_point_sample, sub, Point3, Sequence};
use crate::grouping::{idw_weights, FlowField, GroupOptions, Grouper, Neighborhood, PointRef, RadiusSchedule};
use crate::nncore::{Mlp, ParamStore, Tape, Tensor, Var};

/// Points of every frame at one depth of the network, with their features on a tape.
///
/// Rows of `features` are frame-major: frame 0's points first, in stored order.
#[derive(Debug, Clone)]
pub struct PointLevel {
    pub coords: Vec<Vec<Point3>>,
    /// Backward flow per point, when the level carries flow (chained grouping).
    pub flows: Option<Vec<Vec<Point3>>>,
    pub features: Option<Var>,
    pub channels: usize,
}

impl PointLevel {
    /// Input level of a sequence; coordinates are multiplied by `scale`.
    pub fn from_sequence(
        tape: &mut Tape,
        seq: &Sequence,
        scale: f64,
        flows: Option<&[FlowField]>,
    ) -> Result<Self> {
        let coords: Vec<Vec<Point3>> = seq
            .frames()
            .iter()
            .map(|f| f.coords().iter().map(|p| [p[0] * scale, p[1] * scale, p[2] * scale]).collect())
            .collect();
        let channels = seq.channels();
        let features = if channels > 0 {
            let data: Vec<f64> = seq.frames().iter().flat_map(|f| f.features().iter().copied()).collect();
            Some(tape.leaf(Tensor::new(seq.total_points(), channels, data)?)?)
        } else {
            None
        };
        let flows = match flows {
            None => None,
            Some(fl) => {
                let mut per = Vec::with_capacity(seq.len());
                for (t, f) in seq.frames().iter().enumerate() {
                    if t == 0 {
                        per.push(vec![[0.0; 3]; f.len()]);
                        continue;
                    }
                    let field = fl
                        .iter()
                        .find(|x| x.source_frame == t)
                        .ok_or_else(|| Error::input(format!("missing flow field for frame {t}")))?;
                    if field.vectors.len() != f.len() {
                        return Err(Error::shape(format!("flow for frame {t} does not match point count")));
                    }
                    per.push(field.vectors.iter().map(|v| [v[0] * scale, v[1] * scale, v[2] * scale]).collect());
                }
                Some(per)
            }
        };
        Ok(Self { coords, flows, features, channels })
    }

    pub fn frame_count(&self) -> usize {
        self.coords.len()
    }

    /// Row offset of each frame, plus the total at the end.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.coords.len() + 1);
        off.push(0);
        for c in &self.coords {
            off.push(off.last().unwrap() + c.len());
        }
        off
    }

    pub fn total_points(&self) -> usize {
        self.coords.iter().map(Vec::len).sum()
    }

    fn flow_fields(&self) -> Option<Vec<FlowField>> {
        self.flows.as_ref().map(|fl| {
            fl.iter()
                .enumerate()
                .skip(1)
                .map(|(t, v)| FlowField { source_frame: t, vectors: v.clone() })
                .collect()
        })
    }

    /// Restriction to the last frame only.
    pub fn last_frame(&self, tape: &mut Tape) -> Result<Self> {
        let off = self.offsets();
        let t = self.coords.len() - 1;
        let features = match self.features {
            Some(f) => Some(tape.gather_rows(f, (off[t]..off[t + 1]).collect())?),
            None => None,
        };
        Ok(Self {
            coords: vec![self.coords[t].clone()],
            flows: self.flows.as_ref().map(|fl| vec![fl[t].clone()]),
            features,
            channels: self.channels,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeteorMode {
    /// `zeta(f_j, x_j - x_i, t_j - t_i)`.
    Ind,
    /// `zeta(f_j, f_i, x_j - x_i, t_j - t_i)`.
    Rel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GroupingConfig {
    Direct { r0: f64, #[serde(default)] alpha: f64 },
    Chained { r0: f64, #[serde(default)] alpha: f64 },
}

impl GroupingConfig {
    pub fn schedule(&self) -> Result<RadiusSchedule> {
        match *self {
            GroupingConfig::Direct { r0, alpha } | GroupingConfig::Chained { r0, alpha } => {
                RadiusSchedule::new(r0, alpha)
            }
        }
    }
}

/// How many points a downsampling stage keeps per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleCount {
    Count(usize),
    Fraction(f64),
}

impl SampleCount {
    /// Resolved count for a frame of `n` points (at least 1).
    pub fn resolve(&self, n: usize) -> Result<usize> {
        let k = match *self {
            SampleCount::Count(k) => k,
            SampleCount::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::input(format!("sample fraction must be in (0, 1], got {f}")));
                }
                ((n as f64 * f).round() as usize).max(1)
            }
        };
        if k == 0 || k > n {
            return Err(Error::input(format!("cannot sample {k} of {n} points")));
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeteorLayerConfig {
    pub mode: MeteorMode,
    pub grouping: GroupingConfig,
    pub temporal_radius: usize,
    pub mlp: crate::nncore::MlpSpec,
    #[serde(default)]
    pub downsample: Option<SampleCount>,
    #[serde(default)]
    pub max_per_frame: Option<usize>,
}

impl MeteorLayerConfig {
    /// Required zeta input width for `c_in` incoming feature channels.
    pub fn expected_input(&self, c_in: usize) -> usize {
        match self.mode {
            MeteorMode::Ind => c_in + 4,
            MeteorMode::Rel => 2 * c_in + 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetAbstractionConfig {
    pub samples: SampleCount,
    pub radius: f64,
    pub mlp: crate::nncore::MlpSpec,
    #[serde(default)]
    pub max_per_frame: Option<usize>,
}

impl SetAbstractionConfig {
    pub fn expected_input(&self, c_in: usize) -> usize {
        c_in + 3
    }
}

fn select_queries(coords: &[Vec<Point3>], samples: Option<SampleCount>) -> Result<Vec<Vec<usize>>> {
    coords
        .iter()
        .map(|c| match samples {
            None => Ok((0..c.len()).collect()),
            Some(s) => {
                let k = s.resolve(c.len())?;
                farthest_point_sample(c, k, canonical_seed(c))
            }
        })
        .collect()
}

/// Neighborhoods a Meteor layer uses for its query points.
pub fn meteor_neighborhoods(level: &PointLevel, cfg: &MeteorLayerConfig) -> Result<Vec<Neighborhood>> {
    let queries = select_queries(&level.coords, cfg.downsample)?;
    let schedule = cfg.grouping.schedule()?;
    let grouper = Grouper::from_coords(&level.coords, schedule.r0)?;
    let opts = GroupOptions { max_per_frame: cfg.max_per_frame, chained_forward: false };
    let flows = match cfg.grouping {
        GroupingConfig::Chained { .. } => Some(
            level
                .flow_fields()
                .ok_or_else(|| Error::input("chained grouping needs flow on the point level"))?,
        ),
        GroupingConfig::Direct { .. } => None,
    };
    let mut out = Vec::new();
    for (t, qs) in queries.iter().enumerate() {
        for &i in qs {
            let q = PointRef::new(t, i);
            out.push(match &flows {
                None => grouper.direct_group(q, &schedule, cfg.temporal_radius, &opts)?,
                Some(fl) => grouper.chained_group(fl, q, &schedule, cfg.temporal_radius, &opts)?,
            });
        }
    }
    Ok(out)
}

/// Pair rows for a set of neighborhoods: per pair the neighbor row, the query row and the
/// geometric columns `(dx, dy, dz[, dt])`.
struct Pairs {
    neighbor_rows: Vec<usize>,
    query_rows: Vec<usize>,
    geometry: Vec<f64>,
    offsets: Vec<usize>,
}

fn build_pairs(level: &PointLevel, hoods: &[Neighborhood], with_time: bool) -> Pairs {
    let off = level.offsets();
    let gw = if with_time { 4 } else { 3 };
    let total: usize = hoods.iter().map(Neighborhood::len).sum();
    let mut p = Pairs {
        neighbor_rows: Vec::with_capacity(total),
        query_rows: Vec::with_capacity(total),
        geometry: Vec::with_capacity(total * gw),
        offsets: Vec::with_capacity(hoods.len() + 1),
    };
    p.offsets.push(0);
    for h in hoods {
        let q = h.query;
        let xq = level.coords[q.frame][q.index];
        for m in &h.members {
            let d = sub(&level.coords[m.frame][m.index], &xq);
            p.neighbor_rows.push(off[m.frame] + m.index);
            p.query_rows.push(off[q.frame] + q.index);
            p.geometry.extend_from_slice(&d);
            if with_time {
                p.geometry.push(m.frame as f64 - q.frame as f64);
            }
        }
        p.offsets.push(p.neighbor_rows.len());
    }
    p
}

fn pooled_features(
    tape: &mut Tape,
    store: &ParamStore,
    mlp: &Mlp,
    level: &PointLevel,
    pairs: Pairs,
    include_query: bool,
    geo_width: usize,
) -> Result<Var> {
    let n_pairs = pairs.neighbor_rows.len();
    let mut parts = Vec::with_capacity(3);
    if let Some(f) = level.features {
        parts.push(tape.gather_rows(f, pairs.neighbor_rows)?);
        if include_query {
            parts.push(tape.gather_rows(f, pairs.query_rows)?);
        }
    }
    parts.push(tape.leaf(Tensor::new(n_pairs, geo_width, pairs.geometry)?)?);
    let input = if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts)? };
    let h = mlp.forward(tape, store, input)?;
    tape.segment_max(h, &pairs.offsets)
}

fn level_from_hoods(level: &PointLevel, hoods: &[Neighborhood], features: Var, channels: usize) -> PointLevel {
    let mut coords = vec![Vec::new(); level.frame_count()];
    let mut flows = level.flows.as_ref().map(|_| vec![Vec::new(); level.frame_count()]);
    for h in hoods {
        let q = h.query;
        coords[q.frame].push(level.coords[q.frame][q.index]);
        if let (Some(out), Some(src)) = (flows.as_mut(), level.flows.as_ref()) {
            out[q.frame].push(src[q.frame][q.index]);
        }
    }
    PointLevel { coords, flows, features: Some(features), channels }
}

/// One Meteor module: for each (optionally FPS-downsampled) query point, max-pools the
/// shared MLP over its spatiotemporal neighborhood.
pub fn meteor_forward(
    tape: &mut Tape,
    store: &ParamStore,
    mlp: &Mlp,
    level: &PointLevel,
    cfg: &MeteorLayerConfig,
) -> Result<PointLevel> {
    let want = cfg.expected_input(level.channels);
    if mlp.spec().input != want {
        return Err(Error::shape(format!(
            "Meteor layer MLP takes {} inputs, level provides {want}",
            mlp.spec().input
        )));
    }
    let hoods = meteor_neighborhoods(level, cfg)?;
    let pairs = build_pairs(level, &hoods, true);
    let feats = pooled_features(tape, store, mlp, level, pairs, cfg.mode == MeteorMode::Rel, 4)?;
    Ok(level_from_hoods(level, &hoods, feats, mlp.spec().output()))
}

/// Per-frame set abstraction: FPS centers, radius grouping within the frame, shared MLP
/// over `(f_j, x_j - x_center)`, max pool.
pub fn set_abstraction(
    tape: &mut Tape,
    store: &ParamStore,
    mlp: &Mlp,
    level: &PointLevel,
    cfg: &SetAbstractionConfig,
) -> Result<PointLevel> {
    let want = cfg.expected_input(level.channels);
    if mlp.spec().input != want {
        return Err(Error::shape(format!(
            "set abstraction MLP takes {} inputs, level provides {want}",
            mlp.spec().input
        )));
    }
    let queries = select_queries(&level.coords, Some(cfg.samples))?;
    let schedule = RadiusSchedule::constant(cfg.radius)?;
    let grouper = Grouper::from_coords(&level.coords, cfg.radius)?;
    let opts = GroupOptions { max_per_frame: cfg.max_per_frame, chained_forward: false };
    let mut hoods = Vec::new();
    for (t, qs) in queries.iter().enumerate() {
        for &i in qs {
            hoods.push(grouper.direct_group(PointRef::new(t, i), &schedule, 0, &opts)?);
        }
    }
    let pairs = build_pairs(level, &hoods, false);
    let feats = pooled_features(tape, store, mlp, level, pairs, false, 3)?;
    Ok(level_from_hoods(level, &hoods, feats, mlp.spec().output()))
}

/// Interpolation weights from `coarse` onto `fine` points, frame by frame: inverse-distance
/// weighting over the `k` nearest coarse points of the same frame.
pub fn interpolation_rows(coarse: &[Vec<Point3>], fine: &[Vec<Point3>], k: usize, p: f64) -> Result<Vec<Vec<(usize, f64)>>> {
    if coarse.len() != fine.len() {
        return Err(Error::shape("coarse and fine levels have different frame counts"));
    }
    let mut rows = Vec::new();
    let mut base = 0;
    for (c, f) in coarse.iter().zip(fine) {
        if c.is_empty() {
            return Err(Error::input("feature propagation from an empty frame"));
        }
        let idx = crate::geometry::SpatialIndex::from_points(c, 1.0_f64.max(spread(c)))?;
        for x in f {
            let nn = idx.knn_query(x, k)?;
            rows.push(idw_weights(&nn, p).into_iter().map(|(j, w)| (base + j, w)).collect());
        }
        base += c.len();
    }
    Ok(rows)
}

fn spread(points: &[Point3]) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let e = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    e / (points.len() as f64).cbrt().max(1.0)
}

/// Feature propagation: interpolates `coarse` features onto `fine` coordinates, appends
/// `fine`'s own features as a skip link and applies a per-point MLP.
pub fn feature_propagation(
    tape: &mut Tape,
    store: &ParamStore,
    mlp: &Mlp,
    coarse: &PointLevel,
    fine: &PointLevel,
    k: usize,
    p: f64,
) -> Result<PointLevel> {
    let cf = coarse.features.ok_or_else(|| Error::input("coarse level has no features"))?;
    let want = coarse.channels + if fine.features.is_some() { fine.channels } else { 0 };
    if mlp.spec().input != want {
        return Err(Error::shape(format!(
            "feature propagation MLP takes {} inputs, levels provide {want}",
            mlp.spec().input
        )));
    }
    let rows = interpolation_rows(&coarse.coords, &fine.coords, k, p)?;
    let interp = tape.mix_rows(cf, rows)?;
    let input = match fine.features {
        Some(skip) => tape.concat_cols(&[interp, skip])?,
        None => interp,
    };
    let out = mlp.forward(tape, store, input)?;
    Ok(PointLevel {
        coords: fine.coords.clone(),
        flows: fine.flows.clone(),
        features: Some(out),
        channels: mlp.spec().output(),
    })
}
