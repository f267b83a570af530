//! Occupancy-grid convolution baselines.
//!
//! Two variants share one network: `conv(3^D) -> relu -> conv(3^D) -> relu -> global max
//! -> fully connected`, with zero same-padding and stride 1.
//!
//! * [`GridVariant::TimeAsChannels`]: a 3-D grid whose input channels are the frames.
//! * [`GridVariant::Dense4d`]: a 4-D grid (time is the last axis) with one input channel.
//!
//! [`GridBaseline::forward_dense`] runs the network on the tape over every cell. Training
//! uses the equivalent sparse evaluation in [`GridBaseline::loss_and_grads`]: away from
//! the occupied voxels every activation equals a per-boundary-class constant, so only the
//! dilation of the occupied set and one representative cell per boundary class are
//! evaluated. The representative is the smallest-index cell of its class outside the
//! explicit set, which reproduces the dense max-pool tie rule.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Sequence;
use crate::nncore::{GridShape, ParamId, ParamStore, Tape, Tensor, Var};

/// Largest grid (cells over all axes) a baseline may allocate.
pub const MAX_GRID_CELLS: usize = 1_000_000;
/// Grid sizes run by default; finer grids need `allow_fine`.
pub const COARSE_GRID_SIZES: [f64; 2] = [5.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridVariant {
    TimeAsChannels,
    #[serde(rename = "dense-4d")]
    Dense4d,
}

impl GridVariant {
    pub fn name(self) -> &'static str {
        match self {
            GridVariant::TimeAsChannels => "time-as-channels",
            GridVariant::Dense4d => "dense-4d",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridBaselineConfig {
    pub grid_size: f64,
    pub variant: GridVariant,
    /// Width of both convolution layers.
    pub channels: usize,
    pub allow_fine: bool,
}

impl Default for GridBaselineConfig {
    fn default() -> Self {
        Self { grid_size: 10.0, variant: GridVariant::TimeAsChannels, channels: 16, allow_fine: false }
    }
}

impl GridBaselineConfig {
    pub fn new(grid_size: f64, variant: GridVariant) -> Self {
        Self { grid_size, variant, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grid_size.is_finite() && self.grid_size > 0.0) {
            return Err(Error::Config(format!("grid size must be positive, got {}", self.grid_size)));
        }
        if !self.allow_fine && !COARSE_GRID_SIZES.contains(&self.grid_size) {
            return Err(Error::Config(format!(
                "grid size {} is not one of the coarse sizes {COARSE_GRID_SIZES:?}; set allow_fine to run it",
                self.grid_size
            )));
        }
        if self.channels == 0 {
            return Err(Error::Config("baseline needs at least one channel".into()));
        }
        Ok(())
    }
}

pub fn cells_per_axis(cube: f64, grid_size: f64) -> usize {
    ((cube / grid_size).ceil() as usize).max(1)
}

/// Binary occupancy of one sequence: the occupied cells of a cubic 3-D grid per frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Occupancy {
    /// Cells along each axis.
    pub n: usize,
    /// Sorted flat indices `(i * n + j) * n + k` of the occupied cells, one list per frame.
    pub frames: Vec<Vec<usize>>,
}

impl Occupancy {
    pub fn cell(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn coords(&self, cell: usize) -> [usize; 3] {
        [cell / (self.n * self.n), (cell / self.n) % self.n, cell % self.n]
    }
}

/// Voxelizes each frame of `seq` on a grid of `grid_size` cells covering `[0, cube]^3`.
/// A coordinate maps to `floor(x / grid_size)`, clamped into the grid.
pub fn voxelize_occupancy(seq: &Sequence, grid_size: f64, cube: f64) -> Result<Occupancy> {
    if !(grid_size.is_finite() && grid_size > 0.0) {
        return Err(Error::input(format!("grid size must be positive, got {grid_size}")));
    }
    let n = cells_per_axis(cube, grid_size);
    if n.checked_pow(3).is_none_or(|c| c > MAX_GRID_CELLS) {
        return Err(Error::ResourceLimit(format!(
            "grid size {grid_size} needs {n}^3 cells, limit is {MAX_GRID_CELLS}"
        )));
    }
    let index = |x: f64| ((x / grid_size).floor().max(0.0) as usize).min(n - 1);
    let frames = seq
        .frames()
        .iter()
        .map(|f| {
            let mut cells: Vec<usize> =
                f.coords().iter().map(|p| (index(p[0]) * n + index(p[1])) * n + index(p[2])).collect();
            cells.sort_unstable();
            cells.dedup();
            cells
        })
        .collect();
    Ok(Occupancy { n, frames })
}

/// Nonzero input entries `(cell, channel)`; every entry has value 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridInput {
    active: Vec<(usize, usize)>,
}

impl GridInput {
    pub fn active(&self) -> &[(usize, usize)] {
        &self.active
    }
}

/// Activations away from the input that depend only on the parameters: the first-layer
/// output there, and the second-layer pre-activation for each boundary class.
#[derive(Debug, Clone)]
pub struct Background {
    a1: Vec<f64>,
    class_h2: Vec<Vec<f64>>,
}

const NONE: u32 = u32::MAX;

struct Sparse {
    /// Explicit first-layer cells, their pre-activations and activations.
    e1: Vec<usize>,
    h1: Vec<f64>,
    a1: Vec<f64>,
    slot1: Vec<u32>,
    pooled: Vec<f64>,
    /// Winning cell and its pre-activation, per channel.
    argmax: Vec<(usize, f64)>,
    logits: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GridBaseline {
    config: GridBaselineConfig,
    frames: usize,
    cube: f64,
    classes: usize,
    shape: GridShape,
    cin: usize,
    store: ParamStore,
    ids: [ParamId; 6],
    /// Per boundary class: its id and the cell range along each axis.
    class_ranges: Vec<(usize, Vec<(usize, usize)>)>,
}

impl GridBaseline {
    pub fn new(config: GridBaselineConfig, frames: usize, cube: f64, classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let n = cells_per_axis(cube, config.grid_size);
        let (dims, cin) = match config.variant {
            GridVariant::TimeAsChannels => (vec![n, n, n], frames),
            GridVariant::Dense4d => (vec![n, n, n, frames], 1),
        };
        let total = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        if total.is_none_or(|c| c > MAX_GRID_CELLS) {
            return Err(Error::ResourceLimit(format!(
                "{} grid {dims:?} exceeds {MAX_GRID_CELLS} cells",
                config.variant.name()
            )));
        }
        Self::with_shape(config, frames, cube, classes, GridShape::new(&dims), cin, seed)
    }

    /// Baseline on an explicit grid shape (used for small test grids).
    pub fn with_shape(
        config: GridBaselineConfig,
        frames: usize,
        cube: f64,
        classes: usize,
        shape: GridShape,
        cin: usize,
        seed: u64,
    ) -> Result<Self> {
        let taps = shape.taps().len();
        let c = config.channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ids = [
            store.add_uniform("conv1.weight", taps * cin, c, taps * cin, taps * c, &mut rng),
            store.add("conv1.bias", Tensor::zeros(1, c)),
            store.add_uniform("conv2.weight", taps * c, c, taps * c, taps * c, &mut rng),
            store.add("conv2.bias", Tensor::zeros(1, c)),
            store.add_uniform("fc.weight", c, classes, c, classes, &mut rng),
            store.add("fc.bias", Tensor::zeros(1, classes)),
        ];
        let class_ranges = boundary_classes(shape.dims());
        Ok(Self { config, frames, cube, classes, shape, cin, store, ids, class_ranges })
    }

    pub fn config(&self) -> &GridBaselineConfig {
        &self.config
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Input entries for `occ`, laid out for this baseline's variant.
    pub fn input(&self, occ: &Occupancy) -> Result<GridInput> {
        if occ.frames.len() != self.frames || occ.n.pow(3) * self.cells_factor() != self.shape.cells() {
            return Err(Error::shape("occupancy does not match the baseline grid"));
        }
        let mut active = Vec::new();
        for (t, cells) in occ.frames.iter().enumerate() {
            for &c in cells {
                active.push(match self.config.variant {
                    GridVariant::TimeAsChannels => (c, t),
                    GridVariant::Dense4d => (c * self.frames + t, 0),
                });
            }
        }
        active.sort_unstable();
        Ok(GridInput { active })
    }

    fn cells_factor(&self) -> usize {
        match self.config.variant {
            GridVariant::TimeAsChannels => 1,
            GridVariant::Dense4d => self.frames,
        }
    }

    pub fn prepare(&self, seq: &Sequence) -> Result<GridInput> {
        self.input(&voxelize_occupancy(seq, self.config.grid_size, self.cube)?)
    }

    /// Input entries given directly as `(cell, channel)` pairs of the baseline grid.
    pub fn raw_input(&self, mut active: Vec<(usize, usize)>) -> Result<GridInput> {
        if active.iter().any(|&(c, ch)| c >= self.shape.cells() || ch >= self.cin) {
            return Err(Error::input("input entry outside the grid"));
        }
        active.sort_unstable();
        active.dedup();
        Ok(GridInput { active })
    }

    pub fn dense_input(&self, inp: &GridInput) -> Tensor {
        let mut t = Tensor::zeros(self.shape.cells(), self.cin);
        for &(c, ch) in &inp.active {
            t.data_mut()[c * self.cin + ch] = 1.0;
        }
        t
    }

    /// Dense tape evaluation over the whole grid; returns `1 x classes` logits.
    pub fn forward_dense(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let p: Vec<Var> = self.ids.iter().map(|&id| tape.param(store, id)).collect::<Result<_>>()?;
        let h = tape.conv(x, p[0], p[1], &self.shape)?;
        let h = tape.relu(h)?;
        let h = tape.conv(h, p[2], p[3], &self.shape)?;
        let h = tape.relu(h)?;
        let pooled = tape.max_rows(h)?;
        let logits = tape.matmul(pooled, p[4])?;
        tape.add_bias(logits, p[5])
    }

    pub fn background(&self, store: &ParamStore) -> Background {
        let c = self.config.channels;
        let a1: Vec<f64> = store.get(self.ids[1]).data().iter().map(|v| v.max(0.0)).collect();
        let w2 = store.get(self.ids[2]).data();
        let b2 = store.get(self.ids[3]).data();
        let taps = self.shape.taps();
        let mut class_h2 = vec![Vec::new(); 1 << (2 * self.shape.dims().len())];
        for (id, _) in &self.class_ranges {
            // Same accumulation order as the dense convolution, so values match bit for bit.
            let mut row = b2.to_vec();
            for (tap, off) in taps.iter().enumerate() {
                if !class_has_tap(*id, off) {
                    continue;
                }
                for ci in 0..c {
                    let x = a1[ci];
                    if x == 0.0 {
                        continue;
                    }
                    let w = &w2[(tap * c + ci) * c..(tap * c + ci + 1) * c];
                    for co in 0..c {
                        row[co] += x * w[co];
                    }
                }
            }
            class_h2[*id] = row;
        }
        Background { a1, class_h2 }
    }

    fn class_of(&self, cell: usize) -> usize {
        let dims = self.shape.dims();
        let mut rem = cell;
        let mut id = 0;
        for a in (0..dims.len()).rev() {
            let x = rem % dims[a];
            rem /= dims[a];
            let code = (x > 0) as usize | ((x + 1 < dims[a]) as usize) << 1;
            id |= code << (2 * a);
        }
        id
    }

    fn sparse_forward(&self, store: &ParamStore, bg: &Background, inp: &GridInput) -> Result<Sparse> {
        let c = self.config.channels;
        let cin = self.cin;
        let taps = self.shape.taps().len();
        let cells = self.shape.cells();
        let w1 = store.get(self.ids[0]).data();
        let b1 = store.get(self.ids[1]).data();
        let w2 = store.get(self.ids[2]).data();

        let mut slot1 = vec![NONE; cells];
        let mut e1 = Vec::new();
        let mut h1: Vec<f64> = Vec::new();
        let mut nbrs = Vec::with_capacity(taps);
        for &(o, ci) in &inp.active {
            self.shape.neighbors(o, &mut nbrs);
            for tap in 0..taps {
                // `cell` sees `o` through `tap`.
                let Some(cell) = nbrs[taps - 1 - tap] else { continue };
                let s = match slot1[cell] {
                    NONE => {
                        slot1[cell] = e1.len() as u32;
                        e1.push(cell);
                        h1.extend_from_slice(b1);
                        e1.len() - 1
                    }
                    s => s as usize,
                };
                let w = &w1[(tap * cin + ci) * c..(tap * cin + ci + 1) * c];
                for (h, w) in h1[s * c..(s + 1) * c].iter_mut().zip(w) {
                    *h += w;
                }
            }
        }
        let a1: Vec<f64> = h1.iter().map(|v| v.max(0.0)).collect();

        let mut slot2 = vec![NONE; cells];
        let mut e2 = Vec::new();
        let mut h2: Vec<f64> = Vec::new();
        for (s, &e) in e1.iter().enumerate() {
            let delta: Vec<f64> = (0..c).map(|ci| a1[s * c + ci] - bg.a1[ci]).collect();
            if delta.iter().all(|&d| d == 0.0) {
                continue;
            }
            self.shape.neighbors(e, &mut nbrs);
            for tap in 0..taps {
                let Some(cell) = nbrs[taps - 1 - tap] else { continue };
                let t = match slot2[cell] {
                    NONE => {
                        slot2[cell] = e2.len() as u32;
                        e2.push(cell);
                        h2.extend_from_slice(&bg.class_h2[self.class_of(cell)]);
                        e2.len() - 1
                    }
                    t => t as usize,
                };
                let row = &mut h2[t * c..(t + 1) * c];
                for (ci, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let w = &w2[(tap * c + ci) * c..(tap * c + ci + 1) * c];
                    for (h, w) in row.iter_mut().zip(w) {
                        *h += d * w;
                    }
                }
            }
        }

        // Candidates for the global max: explicit cells plus one representative per class.
        let mut cand: Vec<(usize, &[f64])> = e2.iter().enumerate().map(|(t, &cell)| (cell, &h2[t * c..(t + 1) * c])).collect();
        for (id, ranges) in &self.class_ranges {
            if let Some(cell) = first_outside(&self.shape, ranges, &slot2) {
                cand.push((cell, &bg.class_h2[*id]));
            }
        }
        let mut pooled = vec![0.0; c];
        let mut argmax = vec![(usize::MAX, 0.0); c];
        for ch in 0..c {
            let mut best: Option<(f64, usize, f64)> = None;
            for &(cell, h) in &cand {
                let v = h[ch].max(0.0);
                if best.is_none_or(|(bv, bc, _)| v > bv || (v == bv && cell < bc)) {
                    best = Some((v, cell, h[ch]));
                }
            }
            let (v, cell, pre) = best.expect("grid has at least one cell");
            pooled[ch] = v;
            argmax[ch] = (cell, pre);
        }

        let wf = store.get(self.ids[4]).data();
        let bf = store.get(self.ids[5]).data();
        let mut logits = vec![0.0; self.classes];
        for (j, l) in logits.iter_mut().enumerate() {
            for k in 0..c {
                *l += pooled[k] * wf[k * self.classes + j];
            }
            *l += bf[j];
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid baseline logits".into()));
        }
        Ok(Sparse { e1, h1, a1, slot1, pooled, argmax, logits })
    }

    pub fn logits(&self, store: &ParamStore, bg: &Background, inp: &GridInput) -> Result<Vec<f64>> {
        Ok(self.sparse_forward(store, bg, inp)?.logits)
    }

    /// Cross-entropy loss for `label` and its gradient for every parameter, in store order.
    pub fn loss_and_grads(
        &self,
        store: &ParamStore,
        bg: &Background,
        inp: &GridInput,
        label: usize,
    ) -> Result<(f64, Vec<Tensor>)> {
        self.loss_grads_logits(store, bg, inp, label).map(|(l, g, _)| (l, g))
    }

    /// As [`GridBaseline::loss_and_grads`], also returning the logits.
    pub fn loss_grads_logits(
        &self,
        store: &ParamStore,
        bg: &Background,
        inp: &GridInput,
        label: usize,
    ) -> Result<(f64, Vec<Tensor>, Vec<f64>)> {
        if label >= self.classes {
            return Err(Error::input(format!("label {label} out of range for {} classes", self.classes)));
        }
        let st = self.sparse_forward(store, bg, inp)?;
        let c = self.config.channels;
        let k = self.classes;
        let m = st.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + st.logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        let loss = lse - st.logits[label];
        let mut g: Vec<f64> = st.logits.iter().map(|l| (l - lse).exp()).collect();
        g[label] -= 1.0;

        let taps = self.shape.taps().len();
        let cin = self.cin;
        let w2 = store.get(self.ids[2]).data();
        let wf = store.get(self.ids[4]).data();
        let b1 = store.get(self.ids[1]).data();
        let mut grads: Vec<Tensor> = self.ids.iter().map(|&id| {
            let [r, cc] = store.get(id).shape();
            Tensor::zeros(r, cc)
        }).collect();

        let mut dpooled = vec![0.0; c];
        {
            let dwf = grads[4].data_mut();
            for kk in 0..c {
                for j in 0..k {
                    dwf[kk * k + j] += st.pooled[kk] * g[j];
                    dpooled[kk] += wf[kk * k + j] * g[j];
                }
            }
        }
        grads[5].data_mut().copy_from_slice(&g);

        let a1_at = |cell: usize| -> &[f64] {
            match st.slot1[cell] {
                NONE => &bg.a1,
                s => &st.a1[s as usize * c..(s as usize + 1) * c],
            }
        };
        let mut nbrs = Vec::with_capacity(taps);
        let mut da1: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
        for ch in 0..c {
            let (cell, pre) = st.argmax[ch];
            if !(pre > 0.0) {
                continue;
            }
            let gch = dpooled[ch];
            grads[3].data_mut()[ch] += gch;
            self.shape.neighbors(cell, &mut nbrs);
            for tap in 0..taps {
                let Some(nb) = nbrs[tap] else { continue };
                let a = a1_at(nb);
                let dw2 = grads[2].data_mut();
                let entry = da1.entry(nb).or_insert_with(|| vec![0.0; c]);
                for ci in 0..c {
                    let w = (tap * c + ci) * c + ch;
                    dw2[w] += a[ci] * gch;
                    entry[ci] += w2[w] * gch;
                }
            }
        }
        for (nb, ga) in da1 {
            let pre: &[f64] = match st.slot1[nb] {
                NONE => b1,
                s => &st.h1[s as usize * c..(s as usize + 1) * c],
            };
            let dh: Vec<f64> = ga.iter().zip(pre).map(|(g, p)| if *p > 0.0 { *g } else { 0.0 }).collect();
            for (d, v) in grads[1].data_mut().iter_mut().zip(&dh) {
                *d += v;
            }
            if st.slot1[nb] == NONE {
                continue;
            }
            for &(o, ci) in &inp.active {
                let Some(tap) = tap_between(&self.shape, nb, o) else { continue };
                let dw1 = &mut grads[0].data_mut()[(tap * cin + ci) * c..(tap * cin + ci + 1) * c];
                for (d, v) in dw1.iter_mut().zip(&dh) {
                    *d += v;
                }
            }
        }
        debug_assert!(st.e1.len() * c == st.h1.len());
        Ok((loss, grads, st.logits))
    }
}

/// Whether a cell of boundary class `id` has an in-grid neighbor at `off`.
fn class_has_tap(id: usize, off: &[i64]) -> bool {
    off.iter().enumerate().all(|(a, &o)| {
        let code = (id >> (2 * a)) & 3;
        match o {
            -1 => code & 1 != 0,
            1 => code & 2 != 0,
            _ => true,
        }
    })
}

/// Boundary classes of a grid with their per-axis coordinate ranges (inclusive start,
/// exclusive end). Bit 0 of an axis code means "has a lower neighbor", bit 1 "has an
/// upper neighbor".
fn boundary_classes(dims: &[usize]) -> Vec<(usize, Vec<(usize, usize)>)> {
    let per_axis: Vec<Vec<(usize, (usize, usize))>> = dims
        .iter()
        .map(|&n| match n {
            1 => vec![(0, (0, 1))],
            2 => vec![(2, (0, 1)), (1, (1, 2))],
            _ => vec![(2, (0, 1)), (3, (1, n - 1)), (1, (n - 1, n))],
        })
        .collect();
    let mut out = vec![(0usize, Vec::new())];
    for (a, opts) in per_axis.iter().enumerate() {
        out = out
            .into_iter()
            .flat_map(|(id, ranges)| {
                opts.iter().map(move |&(code, r)| {
                    let mut ranges = ranges.clone();
                    ranges.push(r);
                    (id | code << (2 * a), ranges)
                })
            })
            .collect();
    }
    out
}

/// Smallest-index cell within `ranges` whose slot is unset.
fn first_outside(shape: &GridShape, ranges: &[(usize, usize)], slot: &[u32]) -> Option<usize> {
    let mut x: Vec<usize> = ranges.iter().map(|r| r.0).collect();
    loop {
        let cell = shape.index(&x);
        if slot[cell] == NONE {
            return Some(cell);
        }
        let mut a = x.len();
        loop {
            if a == 0 {
                return None;
            }
            a -= 1;
            x[a] += 1;
            if x[a] < ranges[a].1 {
                break;
            }
            x[a] = ranges[a].0;
        }
    }
}

/// Tap index `t` with `neighbor(from, t) == to`, if the cells are adjacent.
fn tap_between(shape: &GridShape, from: usize, to: usize) -> Option<usize> {
    let (a, b) = (shape.coords(from), shape.coords(to));
    let mut tap = 0usize;
    for (x, y) in a.iter().zip(&b) {
        let d = *y as i64 - *x as i64;
        if d.abs() > 1 {
            return None;
        }
        tap = tap * 3 + (d + 1) as usize;
    }
    Some(tap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Frame;
    use rand::Rng;

    fn seq(points: &[[f64; 3]]) -> Sequence {
        Sequence::new(points.iter().enumerate().map(|(t, p)| Frame::from_coords(vec![*p], t + 1).unwrap()).collect())
            .unwrap()
    }

    #[test]
    fn voxelize_examples() {
        let s = seq(&[[15.0, 25.0, 35.0]; 4]);
        let occ = voxelize_occupancy(&s, 10.0, 100.0).unwrap();
        assert_eq!(occ.n, 10);
        assert!(occ.frames.iter().all(|f| f == &vec![occ.cell(1, 2, 3)]));
        let fast = seq(&[[50.0, 5.0, 5.0], [60.0, 5.0, 5.0], [70.0, 5.0, 5.0], [80.0, 5.0, 5.0]]);
        let occ = voxelize_occupancy(&fast, 10.0, 100.0).unwrap();
        let xs: Vec<usize> = occ.frames.iter().map(|f| occ.coords(f[0])[0]).collect();
        assert_eq!(xs, vec![5, 6, 7, 8]);
        let edge = voxelize_occupancy(&seq(&[[100.0, 0.0, 0.0]]), 5.0, 100.0).unwrap();
        assert_eq!(edge.coords(edge.frames[0][0]), [19, 0, 0]);
        assert!(matches!(voxelize_occupancy(&s, 0.5, 100.0), Err(Error::ResourceLimit(_))));
        assert!(voxelize_occupancy(&s, 0.0, 100.0).is_err());
    }

    #[test]
    fn config_bounds() {
        assert!(GridBaselineConfig::new(5.0, GridVariant::Dense4d).validate().is_ok());
        assert!(GridBaselineConfig::new(1.0, GridVariant::Dense4d).validate().is_err());
        let fine = GridBaselineConfig { allow_fine: true, ..GridBaselineConfig::new(1.0, GridVariant::Dense4d) };
        assert!(matches!(GridBaseline::new(fine, 4, 100.0, 4, 0), Err(Error::ResourceLimit(_))));
        let fine = GridBaselineConfig { allow_fine: true, ..GridBaselineConfig::new(1.0, GridVariant::TimeAsChannels) };
        assert!(GridBaseline::new(fine, 4, 100.0, 4, 0).is_ok());
    }

    #[test]
    fn boundary_classes_partition_the_grid() {
        for dims in [vec![3, 4, 5], vec![1, 2, 3], vec![3, 3, 3, 2]] {
            let shape = GridShape::new(&dims);
            let classes = boundary_classes(&dims);
            let mut seen = vec![0; shape.cells()];
            for (id, ranges) in &classes {
                let empty = vec![NONE; shape.cells()];
                let first = first_outside(&shape, ranges, &empty).unwrap();
                let cells: Vec<usize> = (0..shape.cells())
                    .filter(|&c| shape.coords(c).iter().zip(ranges).all(|(x, r)| *x >= r.0 && *x < r.1))
                    .collect();
                assert_eq!(first, cells[0]);
                for c in cells {
                    seen[c] += 1;
                    for (t, off) in shape.taps().iter().enumerate() {
                        assert_eq!(shape.neighbor(c, t).is_some(), class_has_tap(*id, off));
                    }
                }
            }
            assert!(seen.iter().all(|&s| s == 1));
        }
    }

    fn micro(variant: GridVariant, seed: u64) -> (GridBaseline, ParamStore) {
        let (dims, cin) = match variant {
            GridVariant::TimeAsChannels => (vec![4, 3, 5], 2),
            GridVariant::Dense4d => (vec![3, 4, 3, 2], 1),
        };
        let cfg = GridBaselineConfig { channels: 3, ..GridBaselineConfig::new(10.0, variant) };
        let b = GridBaseline::with_shape(cfg, 2, 100.0, 4, GridShape::new(&dims), cin, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let mut store = b.params().clone();
        for t in store.iter_mut() {
            for v in t.data_mut() {
                *v = rng.gen_range(-0.8..0.8);
            }
        }
        (b, store)
    }

    #[test]
    fn sparse_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for variant in [GridVariant::TimeAsChannels, GridVariant::Dense4d] {
            for seed in 0..25 {
                let (b, store) = micro(variant, seed);
                let k = rng.gen_range(1..4);
                let active =
                    (0..k).map(|_| (rng.gen_range(0..b.shape().cells()), rng.gen_range(0..b.cin))).collect();
                let inp = b.raw_input(active).unwrap();
                let label = rng.gen_range(0..4);

                let mut tape = Tape::new();
                let x = tape.leaf(b.dense_input(&inp)).unwrap();
                let logits = b.forward_dense(&mut tape, &store, x).unwrap();
                let loss = tape.softmax_cross_entropy(logits, &[label]).unwrap();
                let dense_grads = tape.backward(loss).unwrap().params(&store);

                let bg = b.background(&store);
                let (sl, sg) = b.loss_and_grads(&store, &bg, &inp, label).unwrap();
                assert!((sl - tape.value(loss).item()).abs() < 1e-12);
                for (d, s) in dense_grads.iter().zip(&sg) {
                    assert!(d.max_abs_diff(s) < 1e-12, "{variant:?} seed {seed}");
                }
            }
        }
    }

    #[test]
    fn empty_input_uses_background_only() {
        let (b, store) = micro(GridVariant::TimeAsChannels, 1);
        let inp = b.raw_input(vec![]).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(b.dense_input(&inp)).unwrap();
        let logits = b.forward_dense(&mut tape, &store, x).unwrap();
        let bg = b.background(&store);
        let s = b.logits(&store, &bg, &inp).unwrap();
        assert!(tape.value(logits).data().iter().zip(&s).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
