//! The particle-speed toy benchmark.
//!
//! Each sequence holds one particle observed over a few frames. The particle moves along
//! one of the six axis directions with a per-step length drawn from its speed class, and
//! the task is to recover that class. [`grid`] holds the occupancy-grid convolution
//! baselines and [`train`] the shared training driver.

pub mod grid;
pub mod train;

use std::fs::File;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance, Frame, Point3, Sequence};
use crate::io::{write_manifest, write_split, MANIFEST_FILE};

pub use grid::{voxelize_occupancy, GridBaseline, GridBaselineConfig, GridVariant, Occupancy};
pub use train::{
    evaluate, fit, prepare_samples, run_on_dataset, run_toy_experiment, score_output, toy_grid_baseline, toy_meteornet,
    EpochLog, Learner, ToyArch, ToyReport, TrainConfig,
};

pub const CLASS_NAMES: [&str; 4] = ["static", "slow", "medium", "fast"];

/// Per-step length range of each speed class.
pub const STEP_RANGES: [(f64, f64); 4] = [(0.0, 0.0), (0.09, 0.11), (0.9, 1.1), (9.0, 11.0)];

pub const DIRECTIONS: [Point3; 6] = [
    [1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, 0.0, -1.0],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub cube: f64,
    pub frames: usize,
    pub train: usize,
    pub val: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { cube: 100.0, frames: 4, train: 2000, val: 200, seed: 0 }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::Config("toy sequences need at least two frames".into()));
        }
        let longest = STEP_RANGES[3].1 * (self.frames - 1) as f64;
        if !(self.cube.is_finite() && self.cube > 2.0 * longest) {
            return Err(Error::Config(format!(
                "cube side {} too small for {} frames of the fast class",
                self.cube, self.frames
            )));
        }
        if self.train == 0 || self.val == 0 {
            return Err(Error::Config("train and val splits must be nonempty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySample {
    pub seq: Sequence,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub config: ToyConfig,
    pub train: Vec<ToySample>,
    pub val: Vec<ToySample>,
}

/// One sequence of class `label`. Steps are drawn first; the start is uniform in the
/// cube and the direction is redrawn until the whole path stays inside.
pub fn generate_sample(cfg: &ToyConfig, label: usize, rng: &mut impl Rng) -> Result<ToySample> {
    let (lo, hi) = STEP_RANGES[label];
    let steps: Vec<f64> =
        (1..cfg.frames).map(|_| if hi > 0.0 { rng.gen_range(lo..=hi) } else { 0.0 }).collect();
    let total: f64 = steps.iter().sum();
    let start: Point3 = [0, 1, 2].map(|_| rng.gen_range(0.0..=cfg.cube));
    let dir = loop {
        let d = DIRECTIONS[rng.gen_range(0..DIRECTIONS.len())];
        let end: Vec<f64> = (0..3).map(|a| start[a] + total * d[a]).collect();
        if end.iter().all(|v| (0.0..=cfg.cube).contains(v)) {
            break d;
        }
    };
    let mut pos = start;
    let mut frames = vec![Frame::from_coords(vec![pos], 1)?];
    for (k, s) in steps.iter().enumerate() {
        for a in 0..3 {
            pos[a] += s * dir[a];
        }
        frames.push(Frame::from_coords(vec![pos], k + 2)?);
    }
    Ok(ToySample { seq: Sequence::new(frames)?, label })
}

fn generate_split(cfg: &ToyConfig, split: u64, count: usize) -> Result<Vec<ToySample>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((split << 32) | i as u64);
            generate_sample(cfg, i % 4, &mut rng)
        })
        .collect()
}

/// Class-balanced dataset; sample `i` of each split has class `i % 4`. Every sample uses
/// its own stream of the seeded generator, so the result does not depend on threading.
pub fn generate_toy_dataset(cfg: &ToyConfig) -> Result<ToyDataset> {
    cfg.validate()?;
    Ok(ToyDataset { config: cfg.clone(), train: generate_split(cfg, 0, cfg.train)?, val: generate_split(cfg, 1, cfg.val)? })
}

/// Recovers the class from the geometry: mean step length against the class ranges.
pub fn oracle_label(seq: &Sequence) -> usize {
    let pts: Vec<Point3> = seq.frames().iter().map(|f| f.coords()[0]).collect();
    let mean = pts.windows(2).map(|w| distance(&w[0], &w[1])).sum::<f64>() / (pts.len() - 1) as f64;
    match mean {
        m if m < 0.01 => 0,
        m if m < 0.5 => 1,
        m if m < 5.0 => 2,
        _ => 3,
    }
}

/// Writes `train.pcsq`, `val.pcsq` and the manifest into `dir`.
pub fn write_toy_dataset(dir: &Path, ds: &ToyDataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (split, samples) in [("train", &ds.train), ("val", &ds.val)] {
        let rows: Vec<_> =
            samples.iter().enumerate().map(|(i, s)| (format!("{split}-{i:05}"), &s.seq, Some(s.label))).collect();
        entries.extend(write_split(dir, split, &format!("{split}.pcsq"), &rows)?);
    }
    write_manifest(File::create(dir.join(MANIFEST_FILE))?, &entries)
}
