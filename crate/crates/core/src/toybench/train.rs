//! Training driver shared by the toy MeteorNet and the grid baselines.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::{Background, GridBaseline, GridBaselineConfig, GridInput};
use super::{generate_toy_dataset, ToyConfig, ToyDataset, ToySample, CLASS_NAMES};
use crate::metrics::{accuracy, epe_stats, EpeThresholds};
use crate::error::{Error, Result};
use crate::geometry::Sequence;
use crate::meteor::{argmax_rows, toy_cls, Model, Target};
use crate::nncore::{Adam, AdamConfig, ParamStore, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Stop once validation accuracy reaches this value (and the epoch's running train
    /// accuracy does too).
    pub target_accuracy: f64,
    /// Stop after this many epochs without a new best validation accuracy.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, batch: 32, lr: 1e-3, seed: 0, target_accuracy: 1.0, patience: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("epochs and batch must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    /// Mean score of the predictions made while training on this epoch's batches.
    pub running_train_accuracy: f64,
    pub val_accuracy: f64,
}

/// Outcome of a training run. Accuracies are mean per-sample scores: class accuracy for
/// classifiers, point accuracy for segmentation, EPE accuracy for flow.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyReport {
    pub arch: String,
    pub epochs: Vec<EpochLog>,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ToyArch {
    MeteorNet,
    Grid(GridBaselineConfig),
}

impl ToyArch {
    pub fn name(&self) -> String {
        match self {
            ToyArch::MeteorNet => "toy-meteornet".into(),
            ToyArch::Grid(c) => format!("grid-{}-{}", c.variant.name(), c.grid_size),
        }
    }
}

/// Something the driver can train.
pub trait Learner: Sync {
    type Input: Send + Sync;
    type Label: Send + Sync;
    /// Per-update precomputation that depends only on the parameters.
    type Cache: Sync;

    fn prepare(&self, seq: &Sequence) -> Result<Self::Input>;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn cache(&self) -> Self::Cache;
    /// Loss, gradients in store order, and the sample's score in `[0, 1]`.
    fn step(&self, cache: &Self::Cache, x: &Self::Input, y: &Self::Label, rng: &mut ChaCha8Rng)
        -> Result<(f64, Vec<Tensor>, f64)>;
    fn score(&self, cache: &Self::Cache, x: &Self::Input, y: &Self::Label) -> Result<f64>;
}

fn argmax(v: &[f64]) -> usize {
    argmax_rows(&Tensor::row_vector(v.to_vec()))[0]
}

/// Score of raw model output against a target.
pub fn score_output(out: &Tensor, target: &Target) -> Result<f64> {
    match target {
        Target::Class(c) => Ok((argmax(out.data()) == *c) as u8 as f64),
        Target::PointClasses(l) => accuracy(&argmax_rows(out), l),
        Target::Flow(gt) => {
            let rows = |t: &Tensor| -> Vec<[f64; 3]> { t.data().chunks(3).map(|r| [r[0], r[1], r[2]]).collect() };
            if out.shape() != gt.shape() {
                return Err(Error::shape("flow prediction and target differ in shape"));
            }
            Ok(epe_stats(&rows(out), &rows(gt), &EpeThresholds::default())?.accuracy)
        }
    }
}

impl Learner for Model {
    type Input = Sequence;
    type Label = Target;
    type Cache = ();

    fn prepare(&self, seq: &Sequence) -> Result<Sequence> {
        Ok(seq.clone())
    }

    fn store(&self) -> &ParamStore {
        self.params()
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        self.params_mut()
    }

    fn cache(&self) {}

    fn step(&self, _: &(), x: &Sequence, y: &Target, rng: &mut ChaCha8Rng) -> Result<(f64, Vec<Tensor>, f64)> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, x, None, true, rng)?;
        let score = score_output(tape.value(out.value), y)?;
        let loss = self.loss(&mut tape, &out, y)?;
        let grads = tape.backward(loss)?.params(self.params());
        Ok((tape.value(loss).item(), grads, score))
    }

    fn score(&self, _: &(), x: &Sequence, y: &Target) -> Result<f64> {
        score_output(&self.predict(x, None)?, y)
    }
}

impl Learner for GridBaseline {
    type Input = GridInput;
    type Label = usize;
    type Cache = Background;

    fn prepare(&self, seq: &Sequence) -> Result<GridInput> {
        GridBaseline::prepare(self, seq)
    }

    fn store(&self) -> &ParamStore {
        self.params()
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        self.params_mut()
    }

    fn cache(&self) -> Background {
        self.background(self.params())
    }

    fn step(&self, bg: &Background, x: &GridInput, y: &usize, _: &mut ChaCha8Rng) -> Result<(f64, Vec<Tensor>, f64)> {
        let (loss, grads, logits) = self.loss_grads_logits(self.params(), bg, x, *y)?;
        Ok((loss, grads, (argmax(&logits) == *y) as u8 as f64))
    }

    fn score(&self, bg: &Background, x: &GridInput, y: &usize) -> Result<f64> {
        Ok((argmax(&self.logits(self.params(), bg, x)?) == *y) as u8 as f64)
    }
}

/// Mean score over `data`.
pub fn evaluate<L: Learner>(learner: &L, data: &[(L::Input, L::Label)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::input("nothing to evaluate"));
    }
    let cache = learner.cache();
    let scores = data.par_iter().map(|(x, y)| learner.score(&cache, x, y)).collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / data.len() as f64)
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(reason) => Error::Training { epoch, reason },
        other => other,
    }
}

/// Mini-batch training with the adaptive-moment optimizer. Per-sample gradients may be
/// computed in parallel; they are summed in sample order, so runs are bit-reproducible.
/// `log` is called after every epoch.
pub fn fit<L: Learner>(
    learner: &mut L,
    train: &[(L::Input, L::Label)],
    val: &[(L::Input, L::Label)],
    cfg: &TrainConfig,
    name: &str,
    mut log: impl FnMut(&EpochLog),
) -> Result<ToyReport> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::input("training and validation sets must be nonempty"));
    }
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, learner.store());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut epochs = Vec::new();
    let (mut best, mut best_epoch) = (f64::NEG_INFINITY, 0);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut score_sum) = (0.0, 0.0);
        for (b, batch) in order.chunks(cfg.batch).enumerate() {
            let cache = learner.cache();
            let l: &L = learner;
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
                    rng.set_stream(((epoch as u64) << 40) | ((b as u64) << 16) | k as u64);
                    let (x, y) = &train[i];
                    l.step(&cache, x, y, &mut rng)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| diverged(epoch, e))?;
            let scale = 1.0 / batch.len() as f64;
            let mut total: Vec<Tensor> = learner.store().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
            for (loss, grads, score) in &results {
                if !loss.is_finite() {
                    return Err(Error::Training { epoch, reason: format!("loss is {loss}") });
                }
                loss_sum += loss;
                score_sum += score;
                for (acc, g) in total.iter_mut().zip(grads) {
                    for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += v * scale;
                    }
                }
            }
            adam.step(learner.store_mut(), &total).map_err(|e| diverged(epoch, e))?;
        }
        let entry = EpochLog {
            epoch,
            loss: loss_sum / train.len() as f64,
            running_train_accuracy: score_sum / train.len() as f64,
            val_accuracy: evaluate(learner, val)?,
        };
        log(&entry);
        let done = entry.val_accuracy >= cfg.target_accuracy && entry.running_train_accuracy >= cfg.target_accuracy;
        if entry.val_accuracy > best {
            best = entry.val_accuracy;
            best_epoch = epoch;
        }
        epochs.push(entry);
        if done || cfg.patience.is_some_and(|p| epoch - best_epoch >= p) {
            break;
        }
    }
    Ok(ToyReport {
        arch: name.to_string(),
        epochs,
        train_accuracy: evaluate(learner, train)?,
        val_accuracy: evaluate(learner, val)?,
    })
}

/// The toy MeteorNet classifier with freshly initialized parameters.
pub fn toy_meteornet(seed: u64) -> Result<Model> {
    Model::build(toy_cls(), seed)
}

pub fn toy_grid_baseline(cfg: &GridBaselineConfig, toy: &ToyConfig, seed: u64) -> Result<GridBaseline> {
    GridBaseline::new(cfg.clone(), toy.frames, toy.cube, CLASS_NAMES.len(), seed)
}

/// Prepares toy samples for `learner`, mapping each class label with `label`.
pub fn prepare_samples<L: Learner>(
    learner: &L,
    samples: &[ToySample],
    label: impl Fn(usize) -> L::Label + Sync,
) -> Result<Vec<(L::Input, L::Label)>> {
    samples.par_iter().map(|s| Ok((learner.prepare(&s.seq)?, label(s.label)))).collect()
}

fn fit_toy<L: Learner>(
    mut learner: L,
    ds: &ToyDataset,
    cfg: &TrainConfig,
    name: &str,
    label: impl Fn(usize) -> L::Label + Sync,
    log: impl FnMut(&EpochLog),
) -> Result<ToyReport> {
    let train = prepare_samples(&learner, &ds.train, &label)?;
    let val = prepare_samples(&learner, &ds.val, &label)?;
    fit(&mut learner, &train, &val, cfg, name, log)
}

/// Trains `arch` on an existing dataset.
pub fn run_on_dataset(
    arch: &ToyArch,
    ds: &ToyDataset,
    cfg: &TrainConfig,
    log: impl FnMut(&EpochLog),
) -> Result<ToyReport> {
    match arch {
        ToyArch::MeteorNet => fit_toy(toy_meteornet(cfg.seed)?, ds, cfg, &arch.name(), Target::Class, log),
        ToyArch::Grid(g) => fit_toy(toy_grid_baseline(g, &ds.config, cfg.seed)?, ds, cfg, &arch.name(), |c| c, log),
    }
}

/// Generates the dataset for `toy` and trains `arch` on it.
pub fn run_toy_experiment(arch: &ToyArch, toy: &ToyConfig, cfg: &TrainConfig) -> Result<ToyReport> {
    run_on_dataset(arch, &generate_toy_dataset(toy)?, cfg, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toybench::grid::GridVariant;

    fn tiny() -> ToyDataset {
        generate_toy_dataset(&ToyConfig { train: 64, val: 32, seed: 5, ..ToyConfig::default() }).unwrap()
    }

    #[test]
    fn untrained_models_sit_near_chance() {
        let ds = tiny();
        let m = toy_meteornet(0).unwrap();
        let val = prepare_samples(&m, &ds.val, Target::Class).unwrap();
        let acc = evaluate(&m, &val).unwrap();
        assert!(acc <= 0.5, "{acc}");
    }

    #[test]
    fn training_is_reproducible() {
        let ds = tiny();
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
        let a = run_on_dataset(&ToyArch::MeteorNet, &ds, &cfg, |_| {}).unwrap();
        let b = run_on_dataset(&ToyArch::MeteorNet, &ds, &cfg, |_| {}).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.epochs.len(), 2);
        let g = ToyArch::Grid(GridBaselineConfig::new(10.0, GridVariant::Dense4d));
        let a = run_on_dataset(&g, &ds, &cfg, |_| {}).unwrap();
        assert_eq!(a, run_on_dataset(&g, &ds, &cfg, |_| {}).unwrap());
    }

    #[test]
    fn divergence_reports_epoch() {
        let ds = tiny();
        let cfg = TrainConfig { epochs: 3, lr: 1e300, ..TrainConfig::default() };
        match run_on_dataset(&ToyArch::MeteorNet, &ds, &cfg, |_| {}) {
            Err(Error::Training { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
