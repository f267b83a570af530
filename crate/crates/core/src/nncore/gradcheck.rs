use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Central-difference step used when callers have no reason to pick another.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Denominator floor for the relative error `|a - n| / max(|a|, |n|, FLOOR)`.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares reverse-mode gradients of a scalar function against central differences,
/// over every input element and every parameter in `store`.
///
/// `f` must build a scalar on the tape from the given input vars (parameters are read
/// from the store it receives).
pub fn grad_check<F>(store: &ParamStore, inputs: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore, &[Var]) -> Result<Var>,
{
    let eval = |store: &ParamStore, inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = inputs.iter().map(|t| tape.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, store, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars = inputs.iter().map(|t| tape.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, store, &vars)?;
    let grads = tape.backward(out)?;
    let input_grads: Vec<Tensor> = vars.iter().map(|&v| grads.of(v)).collect();
    let param_grads = grads.params(store);

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for k in 0..work.len() {
        for e in 0..work[k].len() {
            let orig = work[k].data()[e];
            work[k].data_mut()[e] = orig + eps;
            let up = eval(store, &work)?;
            work[k].data_mut()[e] = orig - eps;
            let down = eval(store, &work)?;
            work[k].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(input_grads[k].data()[e], numeric));
            checked += 1;
        }
    }
    let mut pstore = store.clone();
    let ids: Vec<_> = pstore.ids().collect();
    for id in ids {
        for e in 0..pstore.get(id).len() {
            let orig = pstore.get(id).data()[e];
            pstore.get_mut(id).data_mut()[e] = orig + eps;
            let up = eval(&pstore, inputs)?;
            pstore.get_mut(id).data_mut()[e] = orig - eps;
            let down = eval(&pstore, inputs)?;
            pstore.get_mut(id).data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(param_grads[id.index()].data()[e], numeric));
            checked += 1;
        }
    }
    Ok(GradCheckReport { max_rel_error: worst, checked })
}
