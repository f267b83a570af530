use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

fn default_true() -> bool {
    true
}

/// Widths of a shared (per-row) multi-layer perceptron.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width.
    pub input: usize,
    /// Output width of each layer.
    pub widths: Vec<usize>,
    /// Apply the rectifier after the last layer too. Heads turn this off.
    #[serde(default = "default_true")]
    pub relu_last: bool,
}

impl MlpSpec {
    pub fn new(input: usize, widths: &[usize]) -> Self {
        Self { input, widths: widths.to_vec(), relu_last: true }
    }

    /// Same widths with raw (un-rectified) output.
    pub fn linear_head(input: usize, widths: &[usize]) -> Self {
        Self { input, widths: widths.to_vec(), relu_last: false }
    }

    pub fn output(&self) -> usize {
        *self.widths.last().unwrap_or(&self.input)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::Construction("an MLP needs at least one layer".into()));
        }
        if self.input == 0 || self.widths.contains(&0) {
            return Err(Error::Construction(format!("MLP widths must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// A shared MLP whose parameters live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    pub fn init(store: &mut ParamStore, name: &str, spec: &MlpSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.widths.len());
        let mut fan_in = spec.input;
        for (l, &w) in spec.widths.iter().enumerate() {
            let wid = store.add_uniform(format!("{name}.{l}.weight"), fan_in, w, fan_in, w, rng);
            let bid = store.add(format!("{name}.{l}.bias"), super::Tensor::zeros(1, w));
            layers.push((wid, bid));
            fan_in = w;
        }
        Ok(Self { spec: spec.clone(), layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    /// Applies the MLP to every row of `x` with the same parameters.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let width = tape.value(x).cols();
        if width != self.spec.input {
            return Err(Error::shape(format!(
                "MLP expects {} input channels, got {width}",
                self.spec.input
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w)?;
            let bv = tape.param(store, b)?;
            h = tape.matmul(h, wv)?;
            h = tape.add_bias(h, bv)?;
            if l < last || self.spec.relu_last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Like [`Mlp::forward`], with inverted dropout on the input of the last layer.
    pub fn forward_dropout_last(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let width = tape.value(x).cols();
        if width != self.spec.input {
            return Err(Error::shape(format!(
                "MLP expects {} input channels, got {width}",
                self.spec.input
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            if l == last {
                h = tape.dropout(h, rate, training, rng)?;
            }
            let wv = tape.param(store, w)?;
            let bv = tape.param(store, b)?;
            h = tape.matmul(h, wv)?;
            h = tape.add_bias(h, bv)?;
            if l < last || self.spec.relu_last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}
