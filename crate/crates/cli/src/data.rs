//! Turning dataset splits into supervised samples for each head kind.

use meteor_core::geometry::Frame;
use meteor_core::io::{Dataset, ManifestEntry};
use meteor_core::meteor::{HeadKind, Target};
use meteor_core::nncore::Tensor;
use meteor_core::{Error, Result, Sequence};

/// Evaluation task named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Task {
    Cls,
    Seg,
    Flow,
}

impl Task {
    pub fn head(self) -> HeadKind {
        match self {
            Task::Cls => HeadKind::SequenceClass,
            Task::Seg => HeadKind::PerPointClass,
            Task::Flow => HeadKind::LastFrameFlow,
        }
    }
}

/// Splits off the last feature channel of every frame, which segmentation datasets use
/// to carry per-point labels.
pub fn strip_label_channel(seq: &Sequence) -> Result<(Sequence, Vec<usize>)> {
    let c = seq.channels();
    if c == 0 {
        return Err(Error::input("segmentation samples need a label channel"));
    }
    let mut labels = Vec::with_capacity(seq.total_points());
    let mut frames = Vec::with_capacity(seq.len());
    for f in seq.frames() {
        let mut feats = Vec::with_capacity(f.len() * (c - 1));
        for i in 0..f.len() {
            let row = f.feature_row(i);
            let l = row[c - 1];
            if !(l >= 0.0 && l.fract() == 0.0) {
                return Err(Error::input(format!("label {l} is not a nonnegative integer")));
            }
            labels.push(l as usize);
            feats.extend_from_slice(&row[..c - 1]);
        }
        frames.push(Frame::new(f.coords().to_vec(), feats, c - 1, f.timestamp())?);
    }
    Ok((Sequence::new(frames)?, labels))
}

fn flow_target(ds: &Dataset, entry: &ManifestEntry, seq: &Sequence) -> Result<Tensor> {
    let flow = ds
        .load_flow(entry)?
        .ok_or_else(|| Error::input(format!("sample {} has no flow file", entry.id)))?;
    let last = seq.frame(seq.len() - 1);
    if flow.source_frame != seq.len() - 1 || flow.vectors.len() != last.len() {
        return Err(Error::input(format!(
            "flow of sample {} must cover the {} points of the last frame",
            entry.id,
            last.len()
        )));
    }
    Tensor::new(last.len(), 3, flow.vectors.iter().flatten().copied().collect())
}

/// Loads `split` as `(input sequence, target)` pairs for a model with head `kind`.
pub fn load_targets(ds: &Dataset, split: &str, kind: HeadKind) -> Result<Vec<(Sequence, Target)>> {
    let entries: Vec<&ManifestEntry> = ds.split(split).collect();
    if entries.is_empty() {
        return Err(Error::input(format!("dataset has no {split:?} samples")));
    }
    entries
        .into_iter()
        .map(|e| {
            let seq = ds.load(e)?;
            match kind {
                HeadKind::SequenceClass => {
                    let l = e.label.ok_or_else(|| Error::input(format!("sample {} has no label", e.id)))?;
                    Ok((seq, Target::Class(l)))
                }
                HeadKind::PerPointClass => {
                    let (seq, labels) = strip_label_channel(&seq)?;
                    Ok((seq, Target::PointClasses(labels)))
                }
                HeadKind::LastFrameFlow => {
                    let t = flow_target(ds, e, &seq)?;
                    Ok((seq, Target::Flow(t)))
                }
            }
        })
        .collect()
}

/// Loads a labelled classification split.
pub fn load_labelled(ds: &Dataset, split: &str) -> Result<Vec<(Sequence, usize)>> {
    load_targets(ds, split, HeadKind::SequenceClass)?
        .into_iter()
        .map(|(s, t)| match t {
            Target::Class(c) => Ok((s, c)),
            _ => unreachable!("class head yields class targets"),
        })
        .collect()
}
