//! Minimal reverse-mode differentiable compute.
//!
//! Values are dense `f64` matrices recorded on a [`Tape`]; parameters live in a
//! [`ParamStore`] and are placed on the tape per forward pass. Shared MLPs, max pooling
//! over row segments, dropout, losses, a dense grid convolution, the adaptive-moment
//! optimizer and central-difference gradient checking are provided.

mod conv;
mod gradcheck;
mod mlp;
mod optim;
mod params;
mod tape;
mod tensor;

pub use conv::GridShape;
pub use gradcheck::{grad_check, relative_error, GradCheckReport, DEFAULT_EPS, REL_FLOOR};
pub use mlp::{Mlp, MlpSpec};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_params_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let mlp = Mlp::init(&mut store, "m", &MlpSpec::new(3, &[4, 2]), &mut rng).unwrap();
        for t in store.iter_mut() {
            t.data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let x = tape.leaf(random(&mut rng, 5, 3)).unwrap();
        let y = mlp.forward(&mut tape, &store, x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_rows_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let mlp = Mlp::init(&mut store, "m", &MlpSpec::linear_head(3, &[3]), &mut rng).unwrap();
        let w = mlp.layers()[0].0;
        *store.get_mut(w) = Tensor::new(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let x = random(&mut rng, 4, 3);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone()).unwrap();
        let y = mlp.forward(&mut tape, &store, xv).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn rows_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let mlp = Mlp::init(&mut store, "m", &MlpSpec::new(4, &[8, 5]), &mut rng).unwrap();
        let x = random(&mut rng, 3, 4);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone()).unwrap();
        let all = mlp.forward(&mut tape, &store, xv).unwrap();
        for r in 0..3 {
            let mut t = Tape::new();
            let xr = t.leaf(Tensor::row_vector(x.row(r).to_vec())).unwrap();
            let yr = mlp.forward(&mut t, &store, xr).unwrap();
            assert_eq!(t.value(yr).data(), tape.value(all).row(r));
        }
        let mut t = Tape::new();
        let bad = t.leaf(random(&mut rng, 2, 5)).unwrap();
        assert!(mlp.forward(&mut t, &store, bad).is_err());
    }

    #[test]
    fn linear_layer_gradients_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let mlp = Mlp::init(&mut store, "m", &MlpSpec::linear_head(4, &[3]), &mut rng).unwrap();
        let w = random(&mut rng, 6, 3);
        let rep = grad_check(&store, &[random(&mut rng, 6, 4)], DEFAULT_EPS, |tape, st, v| {
            let y = mlp.forward(tape, st, v[0])?;
            tape.dot_const(y, &w)
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-8, "{rep:?}");
    }

    #[test]
    fn mlp_with_max_pool_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let mlp = Mlp::init(&mut store, "m", &MlpSpec::new(3, &[6, 4]), &mut rng).unwrap();
        let w = random(&mut rng, 1, 4);
        let rep = grad_check(&store, &[random(&mut rng, 7, 3)], DEFAULT_EPS, |tape, st, v| {
            let y = mlp.forward(tape, st, v[0])?;
            let p = tape.max_rows(y)?;
            tape.dot_const(p, &w)
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn cross_entropy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let logits = random(&mut rng, 3, 5);
            let labels = [0usize, 4, 2];
            let rep = grad_check(&ParamStore::new(), &[logits], DEFAULT_EPS, |tape, _, v| {
                tape.softmax_cross_entropy(v[0], &labels)
            })
            .unwrap();
            assert!(rep.max_rel_error < 1e-6, "{rep:?}");
        }
    }
}
