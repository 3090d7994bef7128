use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{dim_err, Error, Result};
use crate::graph::{build_adjacency, AdjacencySet, SkeletonTopology, NUM_PARTITIONS};
use crate::preprocess::{ModelInput, COORDS};
use crate::tensor::{BatchNormMode, BatchStats, Conv2dSpec, Tape, Tensor, Var};

pub const BN_MOMENTUM: f64 = 0.1;

/// A named trainable tensor with its gradient and momentum buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub momentum: Tensor,
}

impl Parameter {
    fn new(name: String, value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Parameter {
            name,
            value,
            grad: Tensor::zeros(&shape),
            momentum: Tensor::zeros(&shape),
        }
    }
}

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnState {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug)]
struct Bn {
    gamma: usize,
    beta: usize,
    state: usize,
}

#[derive(Clone, Copy, Debug)]
struct Projection {
    conv: usize,
    bn: Bn,
}

#[derive(Clone, Debug)]
struct StreamEmbed {
    bn: Bn,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Debug)]
struct Block {
    c_in: usize,
    c_out: usize,
    stride: usize,
    sgcn_w: [usize; NUM_PARTITIONS],
    sgcn_b: usize,
    theta: [usize; NUM_PARTITIONS],
    sgcn_bn: Bn,
    sgcn_res: Option<Projection>,
    tgcn_w: usize,
    tgcn_bn: Bn,
    stcn_w: usize,
    stcn_bn: Bn,
    res: Option<Projection>,
}

/// Embedding block, three basic blocks and a linear head.
#[derive(Clone, Debug)]
pub struct FallDetectorNet {
    config: ModelConfig,
    topology: SkeletonTopology,
    adjacency: AdjacencySet,
    params: Vec<Parameter>,
    bn: Vec<BnState>,
    streams: [StreamEmbed; 2],
    blocks: Vec<Block>,
    head_w: usize,
    head_b: usize,
}

struct Builder {
    rng: ChaCha8Rng,
    params: Vec<Parameter>,
    bn: Vec<BnState>,
}

impl Builder {
    fn param(&mut self, name: String, value: Tensor) -> usize {
        self.params.push(Parameter::new(name, value));
        self.params.len() - 1
    }

    /// Uniform in ±1/sqrt(fan_in).
    fn weight(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| rng.random_range(-bound..bound));
        self.param(name, t)
    }

    fn zeros(&mut self, name: String, shape: &[usize]) -> usize {
        self.param(name, Tensor::zeros(shape))
    }

    fn bn(&mut self, name: &str, c: usize) -> Bn {
        let gamma = self.param(format!("{name}.gamma"), Tensor::full(&[c], 1.0));
        let beta = self.zeros(format!("{name}.beta"), &[c]);
        self.bn.push(BnState {
            name: name.to_string(),
            mean: vec![0.0; c],
            var: vec![1.0; c],
        });
        Bn {
            gamma,
            beta,
            state: self.bn.len() - 1,
        }
    }

    fn projection(&mut self, name: &str, c_in: usize, c_out: usize) -> Projection {
        Projection {
            conv: self.weight(format!("{name}.w"), &[c_out, c_in, 1, 1], c_in),
            bn: self.bn(&format!("{name}.bn"), c_out),
        }
    }
}

impl FallDetectorNet {
    pub fn new(config: ModelConfig, topology: SkeletonTopology) -> Result<Self> {
        config.validate()?;
        if topology.joint_count() != config.joints {
            return Err(Error::TopologyMismatch(format!(
                "model expects {} joints, topology has {}",
                config.joints,
                topology.joint_count()
            )));
        }
        let adjacency = build_adjacency(&topology, config.hops)?;
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(config.init_seed),
            params: Vec::new(),
            bn: Vec::new(),
        };
        let c0 = config.embed_channels;
        let streams = ["joint", "velocity"].map(|s| {
            let p = format!("embed.{s}");
            StreamEmbed {
                bn: b.bn(&format!("{p}.bn"), COORDS),
                w1: b.weight(format!("{p}.w1"), &[c0, COORDS, 1, 1], COORDS),
                b1: b.zeros(format!("{p}.b1"), &[c0]),
                w2: b.weight(format!("{p}.w2"), &[c0, c0, 1, 1], c0),
                b2: b.zeros(format!("{p}.b2"), &[c0]),
            }
        });
        let v = config.joints;
        let (kt, [skt, skv]) = (config.temporal_kernel, config.stcn_kernel);
        let mut blocks = Vec::new();
        let mut c_in = c0;
        for (i, bc) in config.blocks.iter().enumerate() {
            let p = format!("block{}", i + 1);
            let c_out = bc.out_channels;
            let sgcn_w = std::array::from_fn(|k| {
                b.weight(format!("{p}.sgcn.w{k}"), &[c_out, c_in, 1, 1], c_in)
            });
            let sgcn_b = b.zeros(format!("{p}.sgcn.b"), &[c_out]);
            let theta = std::array::from_fn(|k| b.param(format!("{p}.sgcn.theta{k}"), Tensor::full(&[v, v], 1.0)));
            let sgcn_bn = b.bn(&format!("{p}.sgcn.bn"), c_out);
            let sgcn_res = (c_in != c_out).then(|| b.projection(&format!("{p}.sgcn.res"), c_in, c_out));
            let tgcn_w = b.weight(format!("{p}.tgcn.w"), &[c_out, c_out, kt, 1], c_out * kt);
            let tgcn_bn = b.bn(&format!("{p}.tgcn.bn"), c_out);
            let stcn_w = b.weight(format!("{p}.stcn.w"), &[c_out, c_in, skt, skv], c_in * skt * skv);
            let stcn_bn = b.bn(&format!("{p}.stcn.bn"), c_out);
            let res = (c_in != c_out || bc.stride != 1).then(|| b.projection(&format!("{p}.res"), c_in, c_out));
            blocks.push(Block {
                c_in,
                c_out,
                stride: bc.stride,
                sgcn_w,
                sgcn_b,
                theta,
                sgcn_bn,
                sgcn_res,
                tgcn_w,
                tgcn_bn,
                stcn_w,
                stcn_bn,
                res,
            });
            c_in = c_out;
        }
        let head_w = b.weight("head.w".into(), &[c_in, config.classes], c_in);
        let head_b = b.zeros("head.b".into(), &[config.classes]);
        Ok(FallDetectorNet {
            config,
            topology,
            adjacency,
            params: b.params,
            bn: b.bn,
            streams,
            blocks,
            head_w,
            head_b,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn topology(&self) -> &SkeletonTopology {
        &self.topology
    }

    pub fn adjacency(&self) -> &AdjacencySet {
        &self.adjacency
    }

    /// Swaps the static adjacency (same joint count required).
    pub fn set_adjacency(&mut self, adjacency: AdjacencySet) -> Result<()> {
        if adjacency.joint_count() != self.config.joints {
            return Err(Error::TopologyMismatch(format!(
                "adjacency over {} joints for a {}-joint model",
                adjacency.joint_count(),
                self.config.joints
            )));
        }
        self.adjacency = adjacency;
        Ok(())
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn bn_states(&self) -> &[BnState] {
        &self.bn
    }

    pub fn bn_states_mut(&mut self) -> &mut [BnState] {
        &mut self.bn
    }

    pub fn bn_state_mut(&mut self, name: &str) -> Option<&mut BnState> {
        self.bn.iter_mut().find(|s| s.name == name)
    }

    /// Number of trainable scalars.
    pub fn count_params(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Floating-point operations (2 per multiply-accumulate) of one forward
    /// pass over a single sample of `window` frames, all body slots included.
    pub fn estimate_flops(&self, window: usize) -> u64 {
        let cfg = &self.config;
        let v = cfg.joints as u64;
        let mut t = window as u64;
        let c0 = cfg.embed_channels as u64;
        let c = COORDS as u64;
        let mut macs = 2 * (c * c0 + c0 * c0) * t * v;
        let [skt, skv] = cfg.stcn_kernel.map(|k| k as u64);
        for blk in &self.blocks {
            let (ci, co, s) = (blk.c_in as u64, blk.c_out as u64, blk.stride as u64);
            let parts = NUM_PARTITIONS as u64;
            macs += parts * ci * co * t * v + parts * co * v * v * t;
            if blk.sgcn_res.is_some() {
                macs += ci * co * t * v;
            }
            let t_out = t.div_ceil(s);
            macs += cfg.temporal_kernel as u64 * co * co * t_out * v;
            macs += skt * skv * ci * co * t_out * v;
            if blk.res.is_some() {
                macs += ci * co * t_out * v;
            }
            t = t_out;
        }
        let last = self.blocks.last().map_or(c0, |b| b.c_out as u64);
        macs = macs * cfg.bodies as u64 + last * cfg.classes as u64;
        2 * macs
    }

    /// Binds every parameter onto a fresh tape.
    pub fn session(&self, mode: Mode) -> Session<'_> {
        let mut tape = Tape::new();
        let vars = self.params.iter().map(|p| tape.leaf(p.value.clone())).collect();
        Session {
            net: self,
            tape,
            vars,
            mode,
            stats: Vec::new(),
        }
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn apply_bn_stats(&mut self, stats: &[(usize, BatchStats)]) {
        for (idx, s) in stats {
            let state = &mut self.bn[*idx];
            let unbiased = s.unbiased_var();
            for c in 0..state.mean.len() {
                state.mean[c] = (1.0 - BN_MOMENTUM) * state.mean[c] + BN_MOMENTUM * s.mean[c];
                state.var[c] = (1.0 - BN_MOMENTUM) * state.var[c] + BN_MOMENTUM * unbiased[c];
            }
        }
    }

    /// Adds a finished pass's parameter gradients into `Parameter::grad`.
    pub fn accumulate_grads(&mut self, pass: &ForwardPass, grads: &crate::tensor::Gradients) {
        for (p, &var) in self.params.iter_mut().zip(&pass.param_vars) {
            if let Some(g) = grads.get(var) {
                p.grad.add_assign(g);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Eval-mode logits for a batch.
    pub fn logits(&self, batch: &Batch) -> Result<Tensor> {
        let mut s = self.session(Mode::Eval);
        let out = s.forward(batch)?;
        Ok(s.tape.value(out).clone())
    }
}

/// Samples packed for the network: bodies folded into the batch axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// (N·M)×3×T×V
    pub joints: Tensor,
    pub velocity: Tensor,
    pub labels: Vec<usize>,
    pub bodies: usize,
}

impl Batch {
    pub fn from_inputs(inputs: &[ModelInput]) -> Result<Self> {
        let first = inputs.first().ok_or_else(|| Error::Parameter("empty batch".into()))?;
        let (t, v, m) = (first.joints.frames(), first.joints.joints(), first.joints.bodies());
        let n = inputs.len();
        let mut joints = Tensor::zeros(&[n * m, COORDS, t, v]);
        let mut velocity = Tensor::zeros(&[n * m, COORDS, t, v]);
        for (i, inp) in inputs.iter().enumerate() {
            for s in [&inp.joints, &inp.velocity] {
                if (s.frames(), s.joints(), s.bodies()) != (t, v, m) {
                    return Err(dim_err(format!(
                        "batch sample {i} is {}×{}×{}, expected {t}×{v}×{m}",
                        s.frames(),
                        s.joints(),
                        s.bodies()
                    )));
                }
            }
            for (src, dst) in [(&inp.joints, &mut joints), (&inp.velocity, &mut velocity)] {
                let d = dst.data_mut();
                for b in 0..m {
                    for c in 0..COORDS {
                        for f in 0..t {
                            let row = (((i * m + b) * COORDS + c) * t + f) * v;
                            for j in 0..v {
                                d[row + j] = src.get(c, f, j, b);
                            }
                        }
                    }
                }
            }
        }
        Ok(Batch {
            joints,
            velocity,
            labels: inputs.iter().map(|i| i.label).collect(),
            bodies: m,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Result of a forward pass: the tape, the logits and what training needs.
pub struct ForwardPass {
    pub tape: Tape,
    pub logits: Var,
    pub param_vars: Vec<Var>,
    pub bn_stats: Vec<(usize, BatchStats)>,
}

/// Forward-pass builder with every parameter bound on its tape. The layer
/// methods are public so individual stages can be exercised in isolation.
pub struct Session<'a> {
    net: &'a FallDetectorNet,
    pub tape: Tape,
    vars: Vec<Var>,
    mode: Mode,
    stats: Vec<(usize, BatchStats)>,
}

impl<'a> Session<'a> {
    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.net.params.iter().position(|p| p.name == name).map(|i| self.vars[i])
    }

    fn bn(&mut self, x: Var, bn: Bn) -> Result<Var> {
        let state = &self.net.bn[bn.state];
        let mode = match self.mode {
            Mode::Train => BatchNormMode::Train,
            Mode::Eval => BatchNormMode::Eval {
                mean: &state.mean,
                var: &state.var,
            },
        };
        let (y, stats) = self.tape.batch_norm(x, self.vars[bn.gamma], self.vars[bn.beta], mode)?;
        if let Some(s) = stats {
            self.stats.push((bn.state, s));
        }
        Ok(y)
    }

    fn conv(&mut self, x: Var, w: usize, spec: Conv2dSpec) -> Result<Var> {
        self.tape.conv2d(x, self.vars[w], spec)
    }

    fn projection(&mut self, x: Var, p: Projection, stride: usize) -> Result<Var> {
        let spec = Conv2dSpec {
            stride_t: stride,
            pad_t: 0,
            pad_v: 0,
        };
        let y = self.conv(x, p.conv, spec)?;
        self.bn(y, p.bn)
    }

    fn stream(&mut self, x: Var, s: &StreamEmbed) -> Result<Var> {
        let x = self.bn(x, s.bn)?;
        let h = self.conv(x, s.w1, Conv2dSpec::unit())?;
        let h = self.tape.channel_bias(h, self.vars[s.b1])?;
        let h = self.tape.relu(h);
        let h = self.conv(h, s.w2, Conv2dSpec::unit())?;
        let h = self.tape.channel_bias(h, self.vars[s.b2])?;
        Ok(self.tape.relu(h))
    }

    /// Batch-normed, two-layer projections of both streams, summed.
    pub fn embed(&mut self, joints: Var, velocity: Var) -> Result<Var> {
        let (sj, sv) = (self.tape.value(joints).shape(), self.tape.value(velocity).shape());
        if sj != sv {
            return Err(dim_err(format!("embed: joint stream {sj:?} vs velocity stream {sv:?}")));
        }
        let net = self.net;
        let a = self.stream(joints, &net.streams[0])?;
        let b = self.stream(velocity, &net.streams[1])?;
        self.tape.add(a, b)
    }

    fn block(&self, i: usize) -> Result<&'a Block> {
        self.net
            .blocks
            .get(i)
            .ok_or_else(|| Error::Parameter(format!("no basic block {i}")))
    }

    /// Partitioned graph convolution with edge importance, bias, batch norm,
    /// residual and ReLU.
    pub fn sgcn(&mut self, block: usize, z: Var) -> Result<Var> {
        let blk = self.block(block)?;
        let v = *self.tape.value(z).shape().last().unwrap();
        if v != self.net.config.joints {
            return Err(dim_err(format!(
                "sgcn: input has {v} joints, adjacency has {}",
                self.net.config.joints
            )));
        }
        let mut acc = None;
        for p in 0..NUM_PARTITIONS {
            let eff = self.tape.mul_const(self.vars[blk.theta[p]], &self.net.adjacency.partitions()[p])?;
            let y = self.conv(z, blk.sgcn_w[p], Conv2dSpec::unit())?;
            let y = self.tape.graph_mix(y, eff)?;
            acc = Some(match acc {
                None => y,
                Some(a) => self.tape.add(a, y)?,
            });
        }
        let y = self.tape.channel_bias(acc.unwrap(), self.vars[blk.sgcn_b])?;
        let y = self.bn(y, blk.sgcn_bn)?;
        let res = match blk.sgcn_res {
            Some(p) => self.projection(z, p, 1)?,
            None => z,
        };
        let y = self.tape.add(y, res)?;
        Ok(self.tape.relu(y))
    }

    /// kt×1 temporal convolution (stride of the block) and batch norm.
    pub fn tgcn(&mut self, block: usize, x: Var) -> Result<Var> {
        let blk = self.block(block)?;
        let kt = self.net.config.temporal_kernel;
        let spec = Conv2dSpec {
            stride_t: blk.stride,
            pad_t: (kt - 1) / 2,
            pad_v: 0,
        };
        let y = self.conv(x, blk.tgcn_w, spec)?;
        self.bn(y, blk.tgcn_bn)
    }

    /// Joint-frame grid convolution and batch norm.
    pub fn stcn(&mut self, block: usize, z: Var) -> Result<Var> {
        let blk = self.block(block)?;
        let [kt, kv] = self.net.config.stcn_kernel;
        let spec = Conv2dSpec {
            stride_t: blk.stride,
            pad_t: (kt - 1) / 2,
            pad_v: (kv - 1) / 2,
        };
        let y = self.conv(z, blk.stcn_w, spec)?;
        self.bn(y, blk.stcn_bn)
    }

    /// `ReLU(tgcn(sgcn(z)) + stcn(z) + residual(z))`.
    pub fn basic_block(&mut self, block: usize, z: Var) -> Result<Var> {
        let blk = self.block(block)?;
        let s = self.sgcn(block, z)?;
        let a = self.tgcn(block, s)?;
        let b = self.stcn(block, z)?;
        let res = match blk.res {
            Some(p) => self.projection(z, p, blk.stride)?,
            None => z,
        };
        let y = self.tape.add(a, b)?;
        let y = self.tape.add(y, res)?;
        Ok(self.tape.relu(y))
    }

    /// Pools over frames, joints and body slots, then the linear classifier.
    pub fn head(&mut self, x: Var, bodies: usize) -> Result<Var> {
        let p = self.tape.global_avg_pool(x)?;
        let p = self.tape.group_mean(p, bodies)?;
        self.tape.linear(p, self.vars[self.net.head_w], self.vars[self.net.head_b])
    }

    pub fn forward(&mut self, batch: &Batch) -> Result<Var> {
        let cfg = &self.net.config;
        let shape = batch.joints.shape();
        if shape.len() != 4 || shape[3] != cfg.joints {
            return Err(Error::TopologyMismatch(format!(
                "input {:?} does not carry {} joints",
                shape, cfg.joints
            )));
        }
        if batch.bodies != cfg.bodies {
            return Err(dim_err(format!(
                "batch has {} body slots, model expects {}",
                batch.bodies, cfg.bodies
            )));
        }
        let j = self.tape.constant(batch.joints.clone());
        let v = self.tape.constant(batch.velocity.clone());
        let mut z = self.embed(j, v)?;
        for i in 0..self.net.blocks.len() {
            z = self.basic_block(i, z)?;
        }
        self.head(z, batch.bodies)
    }

    pub fn finish(self, logits: Var) -> ForwardPass {
        ForwardPass {
            tape: self.tape,
            logits,
            param_vars: self.vars,
            bn_stats: self.stats,
        }
    }
}
