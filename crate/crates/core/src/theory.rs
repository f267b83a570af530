//! The sequence-to-set embedding behind the universal approximation argument.
//!
//! A 1-D sequence of `T` frames, each a set of `n` values in `[0, 1]`, is flattened into
//! one set by `p_T(x, t) = (x + t - 1) / T`, which squeezes frame `t` into
//! `[(t - 1) / T, t / T]`. [`d_seq`] is the largest per-frame Hausdorff distance.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::hausdorff_by;

/// `T` frames of `n` scalars each, all in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence1D {
    frames: Vec<Vec<f64>>,
}

impl Sequence1D {
    pub fn new(frames: Vec<Vec<f64>>) -> Result<Self> {
        let n = match frames.first() {
            Some(f) if !f.is_empty() => f.len(),
            _ => return Err(Error::input("need at least one nonempty frame")),
        };
        for (t, f) in frames.iter().enumerate() {
            if f.len() != n {
                return Err(Error::input(format!("frame {t} has {} values, expected {n}", f.len())));
            }
            if let Some(v) = f.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::input(format!("value {v} in frame {t} lies outside [0, 1]")));
            }
        }
        Ok(Self { frames })
    }

    /// Random sequence with values drawn from `(margin, 1 - margin)`.
    pub fn random(rng: &mut impl Rng, t: usize, n: usize, margin: f64) -> Self {
        let frames = (0..t).map(|_| (0..n).map(|_| rng.gen_range(margin..1.0 - margin)).collect()).collect();
        Self { frames }
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// `p_T(x, t)` for 1-based frame `t`.
pub fn embed(x: f64, t: usize, frames: usize) -> f64 {
    (x + (t - 1) as f64) / frames as f64
}

/// The flattened set `{ p_T(x, t) }`, frame by frame.
pub fn psi_map(seq: &Sequence1D) -> Vec<f64> {
    let big_t = seq.len();
    seq.frames
        .iter()
        .enumerate()
        .flat_map(|(k, f)| f.iter().map(move |&x| embed(x, k + 1, big_t)))
        .collect()
}

fn abs_diff(a: &f64, b: &f64) -> f64 {
    (a - b).abs()
}

pub fn hausdorff_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    hausdorff_by(a, b, abs_diff)
}

/// Largest per-frame Hausdorff distance between two sequences of equal length.
pub fn d_seq(a: &Sequence1D, b: &Sequence1D) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::input(format!("sequences have {} and {} frames", a.len(), b.len())));
    }
    a.frames.iter().zip(&b.frames).try_fold(0.0f64, |acc, (x, y)| Ok(acc.max(hausdorff_1d(x, y)?)))
}

/// `|d_H(psi(a), psi(b)) - d_seq(a, b) / T|`.
pub fn verify_distance_identity(a: &Sequence1D, b: &Sequence1D) -> Result<f64> {
    let ds = d_seq(a, b)?;
    let dh = hausdorff_1d(&psi_map(a), &psi_map(b))?;
    Ok((dh - ds / a.len() as f64).abs())
}

/// Frame-aligned Hausdorff distance of the embedded sets: each directed sup-inf only
/// pairs points that came from the same frame.
pub fn aligned_embedded_hausdorff(a: &Sequence1D, b: &Sequence1D) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::input(format!("sequences have {} and {} frames", a.len(), b.len())));
    }
    let big_t = a.len();
    let mut worst = 0.0f64;
    for (k, (fa, fb)) in a.frames.iter().zip(&b.frames).enumerate() {
        let ea: Vec<f64> = fa.iter().map(|&x| embed(x, k + 1, big_t)).collect();
        let eb: Vec<f64> = fb.iter().map(|&x| embed(x, k + 1, big_t)).collect();
        worst = worst.max(hausdorff_1d(&ea, &eb)?);
    }
    Ok(worst)
}

/// Outcome of a randomized sweep over sequence pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryReport {
    pub trials: usize,
    /// Worst `|d_H(psi(a), psi(b)) - d_seq / T|`.
    pub worst_residual: f64,
    /// Pairs whose residual is at least the tolerance.
    pub failures: usize,
    /// Worst `d_H(psi(a), psi(b)) - d_seq / T` (positive would break continuity of psi).
    pub worst_excess: f64,
    /// Worst residual of the frame-aligned form of the identity.
    pub worst_aligned_residual: f64,
}

/// Runs `trials` random pairs with `T` in `2..=8` and `n` in `1..=16`.
pub fn sweep(rng: &mut impl Rng, trials: usize, tolerance: f64) -> Result<TheoryReport> {
    let mut rep = TheoryReport {
        trials,
        worst_residual: 0.0,
        failures: 0,
        worst_excess: f64::NEG_INFINITY,
        worst_aligned_residual: 0.0,
    };
    for _ in 0..trials {
        let t = rng.gen_range(2..=8);
        let n = rng.gen_range(1..=16);
        let a = Sequence1D::random(rng, t, n, 1e-6);
        let b = Sequence1D::random(rng, t, n, 1e-6);
        let ds = d_seq(&a, &b)? / t as f64;
        let dh = hausdorff_1d(&psi_map(&a), &psi_map(&b))?;
        let r = (dh - ds).abs();
        rep.worst_residual = rep.worst_residual.max(r);
        rep.worst_excess = rep.worst_excess.max(dh - ds);
        if r >= tolerance {
            rep.failures += 1;
        }
        let aligned = aligned_embedded_hausdorff(&a, &b)?;
        rep.worst_aligned_residual = rep.worst_aligned_residual.max((aligned - ds).abs());
    }
    Ok(rep)
}
