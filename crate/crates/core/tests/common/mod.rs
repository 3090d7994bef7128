#![allow(dead_code)]

pub mod graph;
pub mod model;
pub mod ops;
pub mod preprocess;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skelfall_core::tensor::{Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradError {
    pub max_abs: f64,
    /// |analytic − numeric| / max(|analytic|, |numeric|, REL_FLOOR)
    pub max_rel: f64,
}

pub const REL_FLOOR: f64 = 1e-3;

/// Compares tape gradients of a scalar-valued `build` against central finite
/// differences evaluated with forward passes only.
pub fn check_grads(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var) -> GradError {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();

    let eval = |ins: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).data()[0]
    };

    let mut err = GradError::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape()));
        for i in 0..input.numel() {
            let orig = input.data()[i];
            work[k].data_mut()[i] = orig + FD_STEP;
            let up = eval(&work);
            work[k].data_mut()[i] = orig - FD_STEP;
            let down = eval(&work);
            work[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.data()[i];
            let abs = (a - numeric).abs();
            err.max_abs = err.max_abs.max(abs);
            err.max_rel = err.max_rel.max(abs / a.abs().max(numeric.abs()).max(REL_FLOOR));
        }
    }
    err
}
