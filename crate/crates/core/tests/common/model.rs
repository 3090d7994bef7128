//! Scalar interpreters and fixtures for the network.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use skelfall_core::graph::SkeletonTopology;
use skelfall_core::model::*;
use skelfall_core::tensor::{Tensor, BN_EPS};

use super::rng;

pub fn tiny_config(bodies: usize) -> ModelConfig {
    ModelConfig {
        joints: 5,
        bodies,
        embed_channels: 4,
        blocks: vec![
            BlockConfig {
                out_channels: 4,
                stride: 1,
            },
            BlockConfig {
                out_channels: 6,
                stride: 2,
            },
            BlockConfig {
                out_channels: 8,
                stride: 2,
            },
        ],
        temporal_kernel: 3,
        stcn_kernel: [3, 3],
        hops: 2,
        classes: 2,
        init_seed: 5,
    }
}

pub fn tiny_topology() -> SkeletonTopology {
    SkeletonTopology::new(5, vec![(0, 1), (1, 2), (1, 3), (3, 4)], 1).unwrap()
}

pub fn random_batch(r: &mut ChaCha8Rng, n: usize, bodies: usize, t: usize, v: usize) -> Batch {
    Batch {
        joints: Tensor::from_fn(&[n * bodies, 3, t, v], |_| r.random_range(-1.0..1.0)),
        velocity: Tensor::from_fn(&[n * bodies, 3, t, v], |_| r.random_range(-1.0..1.0)),
        labels: (0..n).map(|_| r.random_range(0..2)).collect(),
        bodies,
    }
}

/// Gives every parameter and running statistic a random value.
pub fn randomize(net: &mut FallDetectorNet, r: &mut ChaCha8Rng) {
    for p in net.params_mut() {
        let scale = if p.name.contains("theta") || p.name.ends_with("gamma") { 0.5 } else { 0.6 };
        let base = if p.name.contains("theta") || p.name.ends_with("gamma") { 1.0 } else { 0.0 };
        p.value.data_mut().iter_mut().for_each(|x| *x = base + r.random_range(-scale..scale));
    }
    for s in net.bn_states_mut() {
        s.mean.iter_mut().for_each(|x| *x = r.random_range(-0.3..0.3));
        s.var.iter_mut().for_each(|x| *x = r.random_range(0.5..1.5));
    }
}

pub fn p<'a>(net: &'a FallDetectorNet, name: &str) -> &'a [f64] {
    net.param(name).unwrap_or_else(|| panic!("no {name}")).value.data()
}

pub fn bn_eval(net: &FallDetectorNet, name: &str, c: usize, x: f64) -> f64 {
    let s = net.bn_states().iter().find(|s| s.name == name).unwrap();
    let g = p(net, &format!("{name}.gamma"))[c];
    let b = p(net, &format!("{name}.beta"))[c];
    g * (x - s.mean[c]) / (s.var[c] + BN_EPS).sqrt() + b
}

/// Scalar interpreter for the two-stream embedding in eval mode.
pub fn embed_oracle(net: &FallDetectorNet, batch: &Batch) -> Vec<f64> {
    let sh = batch.joints.shape();
    let (n, t, v) = (sh[0], sh[2], sh[3]);
    let c0 = net.config().embed_channels;
    let mut out = vec![0.0; n * c0 * t * v];
    for (stream, x) in [("joint", &batch.joints), ("velocity", &batch.velocity)] {
        let pre = format!("embed.{stream}");
        let (w1, b1) = (p(net, &format!("{pre}.w1")), p(net, &format!("{pre}.b1")));
        let (w2, b2) = (p(net, &format!("{pre}.w2")), p(net, &format!("{pre}.b2")));
        for b in 0..n {
            for f in 0..t {
                for j in 0..v {
                    let xin: Vec<f64> = (0..3)
                        .map(|c| bn_eval(net, &format!("{pre}.bn"), c, x.get(&[b, c, f, j])))
                        .collect();
                    let h: Vec<f64> = (0..c0)
                        .map(|o| {
                            let s: f64 = (0..3).map(|c| w1[o * 3 + c] * xin[c]).sum::<f64>() + b1[o];
                            s.max(0.0)
                        })
                        .collect();
                    for o in 0..c0 {
                        let s: f64 = (0..c0).map(|c| w2[o * c0 + c] * h[c]).sum::<f64>() + b2[o];
                        out[((b * c0 + o) * t + f) * v + j] += s.max(0.0);
                    }
                }
            }
        }
    }
    out
}

/// Scalar interpreter for block 0's SGCN in eval mode.
pub fn sgcn_oracle(net: &FallDetectorNet, z: &Tensor, block: usize) -> Vec<f64> {
    let sh = z.shape();
    let (n, ci, t, v) = (sh[0], sh[1], sh[2], sh[3]);
    let pre = format!("block{}.sgcn", block + 1);
    let co = net.param(&format!("{pre}.b")).unwrap().value.numel();
    let adj = net.adjacency().partitions();
    let mut out = vec![0.0; n * co * t * v];
    for b in 0..n {
        for o in 0..co {
            for f in 0..t {
                for i in 0..v {
                    let mut s = p(net, &format!("{pre}.b"))[o];
                    for (k, a) in adj.iter().enumerate() {
                        let w = p(net, &format!("{pre}.w{k}"));
                        let th = p(net, &format!("{pre}.theta{k}"));
                        for j in 0..v {
                            let ahat = a.get(&[i, j]) * th[i * v + j];
                            for c in 0..ci {
                                s += ahat * w[o * ci + c] * z.get(&[b, c, f, j]);
                            }
                        }
                    }
                    let mut y = bn_eval(net, &format!("{pre}.bn"), o, s);
                    y += if ci == co {
                        z.get(&[b, o, f, i])
                    } else {
                        let w = p(net, &format!("{pre}.res.w"));
                        let r: f64 = (0..ci).map(|c| w[o * ci + c] * z.get(&[b, c, f, i])).sum();
                        bn_eval(net, &format!("{pre}.res.bn"), o, r)
                    };
                    out[((b * co + o) * t + f) * v + i] = y.max(0.0);
                }
            }
        }
    }
    out
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Loss gradient w.r.t. every parameter vs central differences.
pub fn end_to_end_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut net = FallDetectorNet::new(tiny_config(2), tiny_topology()).unwrap();
    randomize(&mut net, &mut r);
    let batch = random_batch(&mut r, 3, 2, 8, 5);
    let loss_of = |net: &FallDetectorNet| {
        let mut s = net.session(Mode::Train);
        let out = s.forward(&batch).unwrap();
        let l = s.tape.softmax_cross_entropy(out, &batch.labels).unwrap();
        s.tape.value(l).data()[0]
    };
    let mut s = net.session(Mode::Train);
    let out = s.forward(&batch).unwrap();
    let l = s.tape.softmax_cross_entropy(out, &batch.labels).unwrap();
    let pass = s.finish(l);
    let grads = pass.tape.backward(l).unwrap();
    net.zero_grads();
    net.accumulate_grads(&pass, &grads);
    let analytic: Vec<Tensor> = net.params().iter().map(|p| p.grad.clone()).collect();
    let h = super::FD_STEP;
    let mut worst: f64 = 0.0;
    for k in 0..net.params().len() {
        for i in 0..analytic[k].numel() {
            let orig = net.params()[k].value.data()[i];
            net.params_mut()[k].value.data_mut()[i] = orig + h;
            let up = loss_of(&net);
            net.params_mut()[k].value.data_mut()[i] = orig - h;
            let down = loss_of(&net);
            net.params_mut()[k].value.data_mut()[i] = orig;
            let num = (up - down) / (2.0 * h);
            let a = analytic[k].data()[i];
            worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(super::REL_FLOOR));
        }
    }
    worst
}

