//! Randomized finite-difference cases, one per differentiable tape op.

use rand::Rng;
use skelfall_core::tensor::{BatchNormMode, Conv2dSpec, Tape, Tensor};

use super::{check_grads, random_tensor, rng, GradError};

pub type OpCase = fn(u64) -> GradError;

pub const OP_CASES: &[(&str, OpCase)] = &[
    ("matmul", matmul),
    ("conv2d", conv2d),
    ("batch_norm_train", batch_norm_train),
    ("batch_norm_eval", batch_norm_eval),
    ("relu_bias_add_pool", elementwise),
    ("linear", linear),
    ("graph_mix_group_mean", graph_mix),
    ("softmax_cross_entropy", softmax_cross_entropy),
];

pub fn matmul(seed: u64) -> GradError {
    let mut r = rng(seed);
    let (m, k, n) = (r.random_range(1..5), r.random_range(1..5), r.random_range(1..5));
    let a = random_tensor(&mut r, &[m, k]);
    let b = random_tensor(&mut r, &[k, n]);
    let probe = random_tensor(&mut r, &[m, n]);
    check_grads(&[a, b], |t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        t.dot_const(y, &probe).unwrap()
    })
}

pub fn conv2d(seed: u64) -> GradError {
    let mut r = rng(1000 + seed);
    let n = r.random_range(1..3);
    let c = r.random_range(1..3);
    let co = r.random_range(1..3);
    let t = r.random_range(3..7);
    let v = r.random_range(2..5);
    let kt = r.random_range(1..4);
    let kv = r.random_range(1..3);
    let spec = Conv2dSpec {
        stride_t: r.random_range(1..3),
        pad_t: r.random_range(0..2),
        pad_v: r.random_range(0..2),
    };
    let x = random_tensor(&mut r, &[n, c, t, v]);
    let w = random_tensor(&mut r, &[co, c, kt, kv]);
    let mut tape = Tape::new();
    let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
    let yv = tape.conv2d(xv, wv, spec).unwrap();
    let out_shape = tape.value(yv).shape().to_vec();
    let probe = random_tensor(&mut r, &out_shape);
    check_grads(&[x, w], |t, vars| {
        let y = t.conv2d(vars[0], vars[1], spec).unwrap();
        t.dot_const(y, &probe).unwrap()
    })
}

fn bn_inputs(seed: u64) -> (rand_chacha::ChaCha8Rng, [usize; 4], Tensor, Tensor, Tensor, Tensor) {
    let mut r = rng(2000 + seed);
    let shape = [r.random_range(1..3), r.random_range(1..4), r.random_range(2..4), r.random_range(1..4)];
    let x = random_tensor(&mut r, &shape);
    let g = random_tensor(&mut r, &[shape[1]]);
    let b = random_tensor(&mut r, &[shape[1]]);
    let probe = random_tensor(&mut r, &shape);
    (r, shape, x, g, b, probe)
}

pub fn batch_norm_train(seed: u64) -> GradError {
    let (_, _, x, g, b, probe) = bn_inputs(seed);
    check_grads(&[x, g, b], |t, v| {
        let (y, _) = t.batch_norm(v[0], v[1], v[2], BatchNormMode::Train).unwrap();
        t.dot_const(y, &probe).unwrap()
    })
}

pub fn batch_norm_eval(seed: u64) -> GradError {
    let (mut r, shape, x, g, b, probe) = bn_inputs(seed);
    let mean: Vec<f64> = (0..shape[1]).map(|_| r.random_range(-1.0..1.0)).collect();
    let var: Vec<f64> = (0..shape[1]).map(|_| r.random_range(0.5..2.0)).collect();
    check_grads(&[x, g, b], |t, v| {
        let mode = BatchNormMode::Eval { mean: &mean, var: &var };
        let (y, _) = t.batch_norm(v[0], v[1], v[2], mode).unwrap();
        t.dot_const(y, &probe).unwrap()
    })
}

pub fn elementwise(seed: u64) -> GradError {
    let mut r = rng(3000 + seed);
    let shape = [r.random_range(1..3), r.random_range(1..4), r.random_range(1..4), r.random_range(1..4)];
    // keep relu inputs away from the kink so central differences stay valid
    let x = Tensor::from_fn(&shape, |_| {
        let s: f64 = if r.random_bool(0.5) { 1.0 } else { -1.0 };
        s * r.random_range(0.01..1.0)
    });
    let bias = random_tensor(&mut r, &[shape[1]]);
    let tail = random_tensor(&mut r, &shape[2..]);
    let probe = random_tensor(&mut r, &[shape[0], shape[1]]);
    check_grads(&[x, bias, tail], |t, v| {
        let y = t.relu(v[0]);
        let y = t.channel_bias(y, v[1]).unwrap();
        let y = t.add(y, v[2]).unwrap();
        let y = t.global_avg_pool(y).unwrap();
        t.dot_const(y, &probe).unwrap()
    })
}

pub fn linear(seed: u64) -> GradError {
    let mut r = rng(4000 + seed);
    let (n, c, k) = (r.random_range(1..4), r.random_range(1..5), r.random_range(1..4));
    let x = random_tensor(&mut r, &[n, c]);
    let w = random_tensor(&mut r, &[c, k]);
    let b = random_tensor(&mut r, &[k]);
    let probe = random_tensor(&mut r, &[n, k]);
    check_grads(&[x, w, b], |t, v| {
        let y = t.linear(v[0], v[1], v[2]).unwrap();
        t.dot_const(y, &probe).unwrap()
    })
}

pub fn graph_mix(seed: u64) -> GradError {
    let mut r = rng(5000 + seed);
    let (m, c, t, v) = (r.random_range(1..3), r.random_range(1..3), r.random_range(1..3), r.random_range(2..5));
    let n = 2 * m;
    let x = random_tensor(&mut r, &[n, c, t, v]);
    let a = random_tensor(&mut r, &[v, v]);
    let theta = random_tensor(&mut r, &[v, v]);
    let probe = random_tensor(&mut r, &[m, c]);
    check_grads(&[x, theta], |tp, vars| {
        let eff = tp.mul_const(vars[1], &a).unwrap();
        let y = tp.graph_mix(vars[0], eff).unwrap();
        let y = tp.global_avg_pool(y).unwrap();
        let y = tp.group_mean(y, 2).unwrap();
        tp.dot_const(y, &probe).unwrap()
    })
}

pub fn softmax_cross_entropy(seed: u64) -> GradError {
    let mut r = rng(6000 + seed);
    let (n, k) = (r.random_range(1..5), r.random_range(2..4));
    let logits = Tensor::from_fn(&[n, k], |_| r.random_range(-3.0..3.0));
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
    check_grads(&[logits], |t, v| t.softmax_cross_entropy(v[0], &labels).unwrap())
}
