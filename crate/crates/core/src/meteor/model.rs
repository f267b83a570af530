use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::{ArchitectureSpec, EncoderLayer, HeadKind};
use super::layers::{feature_propagation, meteor_forward, set_abstraction, GroupingConfig, PointLevel};
use crate::error::{Error, Result};
use crate::geometry::Sequence;
use crate::grouping::{estimate_sequence_flow_nn, FlowField, INTERP_POWER};
use crate::nncore::{Mlp, ParamStore, Tape, Tensor, Var};

/// A built architecture with its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ArchitectureSpec,
    store: ParamStore,
    encoder: Vec<Mlp>,
    fp: Vec<Mlp>,
    head: Mlp,
}

/// Raw network output on a tape.
///
/// * sequence-class: `1 x classes` logits;
/// * per-point-class: `total_points x classes`, frame-major in stored order;
/// * last-frame-flow: `n_T x 3`.
#[derive(Debug, Clone, Copy)]
pub struct ModelOutput {
    pub kind: HeadKind,
    pub value: Var,
}

/// Supervision target for [`Model::loss`].
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    PointClasses(Vec<usize>),
    Flow(Tensor),
}

impl Model {
    /// Validates `spec` and initializes parameters from `seed`.
    pub fn build(spec: ArchitectureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = spec
            .encoder
            .iter()
            .enumerate()
            .map(|(i, l)| Mlp::init(&mut store, &format!("encoder.{i}"), l.mlp(), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let fp = spec
            .head
            .fp
            .iter()
            .enumerate()
            .map(|(i, f)| Mlp::init(&mut store, &format!("fp.{i}"), &f.mlp, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let head = Mlp::init(&mut store, "head", &spec.head.mlp, &mut rng)?;
        Ok(Self { spec, store, encoder, fp, head })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn uses_chained_grouping(&self) -> bool {
        self.spec
            .encoder
            .iter()
            .any(|l| matches!(l, EncoderLayer::Meteor(m) if matches!(m.grouping, GroupingConfig::Chained { .. })))
    }

    /// Forward pass using the model's own parameters.
    pub fn forward(
        &self,
        tape: &mut Tape,
        seq: &Sequence,
        flows: Option<&[FlowField]>,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<ModelOutput> {
        self.forward_with(tape, &self.store, seq, flows, training, rng)
    }

    /// Forward pass reading parameters from `store` (same layout as [`Model::params`]).
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        seq: &Sequence,
        flows: Option<&[FlowField]>,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<ModelOutput> {
        if seq.channels() != self.spec.input_channels {
            return Err(Error::shape(format!(
                "{} expects {} feature channels, sequence has {}",
                self.spec.name,
                self.spec.input_channels,
                seq.channels()
            )));
        }
        let estimated;
        let flows = match flows {
            Some(f) => Some(f),
            None if self.uses_chained_grouping() => {
                estimated = estimate_sequence_flow_nn(seq)?;
                Some(estimated.as_slice())
            }
            None => None,
        };
        let input = PointLevel::from_sequence(tape, seq, self.spec.coord_scale, flows)?;
        let mut levels = vec![input];
        for (layer, mlp) in self.spec.encoder.iter().zip(&self.encoder) {
            let prev = levels.last().unwrap();
            let next = match layer {
                EncoderLayer::Meteor(cfg) => meteor_forward(tape, store, mlp, prev, cfg)?,
                EncoderLayer::SetAbstraction(cfg) => set_abstraction(tape, store, mlp, prev, cfg)?,
            };
            levels.push(next);
        }
        let head = &self.spec.head;
        let value = match head.kind {
            HeadKind::SequenceClass => {
                let top = levels.last().unwrap().features.expect("encoder output has features");
                let pooled = tape.max_rows(top)?;
                self.head.forward_dropout_last(tape, store, pooled, head.dropout, training, rng)?
            }
            HeadKind::PerPointClass | HeadKind::LastFrameFlow => {
                if head.kind == HeadKind::LastFrameFlow {
                    levels = levels.iter().map(|l| l.last_frame(tape)).collect::<Result<Vec<_>>>()?;
                }
                let m = self.encoder.len();
                let mut cur = levels[m].clone();
                for (i, (cfg, mlp)) in head.fp.iter().zip(&self.fp).enumerate() {
                    cur = feature_propagation(tape, store, mlp, &cur, &levels[m - 1 - i], cfg.k, INTERP_POWER)?;
                }
                let feats = cur.features.expect("decoder output has features");
                self.head.forward_dropout_last(tape, store, feats, head.dropout, training, rng)?
            }
        };
        Ok(ModelOutput { kind: head.kind, value })
    }

    /// Scalar training loss: cross-entropy for class heads, mean squared flow error for
    /// the flow head.
    pub fn loss(&self, tape: &mut Tape, out: &ModelOutput, target: &Target) -> Result<Var> {
        match (out.kind, target) {
            (HeadKind::SequenceClass, Target::Class(c)) => tape.softmax_cross_entropy(out.value, &[*c]),
            (HeadKind::PerPointClass, Target::PointClasses(l)) => tape.softmax_cross_entropy(out.value, l),
            (HeadKind::LastFrameFlow, Target::Flow(f)) => tape.squared_error(out.value, f),
            _ => Err(Error::input("target does not match the model head")),
        }
    }

    /// Evaluation-mode prediction as a plain tensor.
    pub fn predict(&self, seq: &Sequence, flows: Option<&[FlowField]>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, seq, flows, false, &mut rng)?;
        Ok(tape.value(out.value).clone())
    }
}

/// Index of the largest value in each row (ties to the lower index).
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Frame;
    use crate::meteor::{preset, PresetOptions};
    use crate::toybench::{generate_toy_dataset, ToyConfig};

    fn toy_sequence() -> Sequence {
        let ds = generate_toy_dataset(&ToyConfig { train: 4, val: 4, ..ToyConfig::default() }).unwrap();
        ds.train[0].seq.clone()
    }

    fn featured_sequence(n: usize) -> Sequence {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames = (0..3)
            .map(|t| {
                let coords: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
                let feats = coords.iter().flatten().copied().collect();
                Frame::new(coords, feats, 3, t + 1).unwrap()
            })
            .collect();
        Sequence::new(frames).unwrap()
    }

    fn small(name: &str, classes: usize) -> ArchitectureSpec {
        preset(name, &PresetOptions { input_channels: 3, classes, width_divisor: 16 }).unwrap()
    }

    #[test]
    fn classifier_gives_one_row_of_logits() {
        let spec = preset("toy-cls", &PresetOptions { input_channels: 0, classes: 4, width_divisor: 1 }).unwrap();
        let seq = toy_sequence();
        let a = Model::build(spec.clone(), 1).unwrap();
        let out = a.predict(&seq, None).unwrap();
        assert_eq!((out.rows(), out.cols()), (1, 4));
        // Same seed, same weights; another seed, other weights.
        assert_eq!(Model::build(spec.clone(), 1).unwrap().predict(&seq, None).unwrap(), out);
        assert_ne!(Model::build(spec, 2).unwrap().predict(&seq, None).unwrap(), out);
    }

    #[test]
    fn dense_heads_cover_their_points() {
        let seq = featured_sequence(48);
        let seg = Model::build(small("meteornet-seg-s", 5), 0).unwrap().predict(&seq, None).unwrap();
        assert_eq!((seg.rows(), seg.cols()), (seq.total_points(), 5));
        let flow = Model::build(small("meteornet-flow", 3), 0).unwrap().predict(&seq, None).unwrap();
        assert_eq!((flow.rows(), flow.cols()), (48, 3));
    }

    #[test]
    fn loss_rejects_a_target_for_another_head() {
        let model = Model::build(small("meteornet-flow", 3), 0).unwrap();
        let seq = featured_sequence(16);
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &seq, None, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(model.loss(&mut tape, &out, &Target::Class(0)).is_err());
        let zero = Tensor::new(16, 3, vec![0.0; 48]).unwrap();
        assert!(model.loss(&mut tape, &out, &Target::Flow(zero)).is_ok());
    }

    #[test]
    fn wrong_channel_count_is_refused() {
        let model = Model::build(small("meteornet-seg-s", 5), 0).unwrap();
        assert!(model.predict(&toy_sequence(), None).is_err());
    }

    #[test]
    fn argmax_prefers_the_lower_index_on_ties() {
        let t = Tensor::new(2, 3, vec![1.0, 3.0, 3.0, 0.0, -1.0, 0.0]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 0]);
    }
}
