//! Balanced-batch SGD training.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::{batch_at, PreparedSample};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::model::{FallDetectorNet, Mode};
use crate::preprocess::{random_window_start, window_rng, NormStats};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_step_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub balanced: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            lr0: 0.05,
            lr_decay: 0.9,
            lr_step_epochs: 10,
            momentum: 0.9,
            weight_decay: 0.0005,
            seed: 0,
            balanced: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.batch_size >= 2
            && self.lr0 > 0.0
            && self.lr_decay > 0.0
            && self.lr_step_epochs > 0
            && self.momentum >= 0.0
            && self.weight_decay >= 0.0
            && [self.lr0, self.lr_decay, self.momentum, self.weight_decay]
                .iter()
                .all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training hyperparameters: {self:?}")))
        }
    }
}

/// lr0 · decay^⌊epoch / step⌋
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.lr_decay.powi((epoch / cfg.lr_step_epochs) as i32)
}

/// v ← m·v + g + wd·p;  p ← p − lr·v;  then clears the gradients.
/// Nothing is updated if any gradient is non-finite.
pub fn sgd_step(net: &mut FallDetectorNet, lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    if let Some(p) = net.params().iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::Training(format!("non-finite gradient in {}", p.name)));
    }
    for p in net.params_mut() {
        let v = p.momentum.data_mut();
        let g = p.grad.data();
        let w = p.value.data_mut();
        for i in 0..w.len() {
            v[i] = momentum * v[i] + g[i] + weight_decay * w[i];
            w[i] -= lr * v[i];
        }
        p.grad.fill(0.0);
    }
    Ok(())
}

/// Index stream that reshuffles itself whenever it runs dry.
#[derive(Clone, Debug)]
struct Cycle {
    items: Vec<usize>,
    pos: usize,
}

impl Cycle {
    fn new(items: Vec<usize>, rng: &mut ChaCha8Rng) -> Self {
        let mut c = Cycle { items, pos: 0 };
        c.items.shuffle(rng);
        c
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos == self.items.len() {
            self.items.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.items[self.pos - 1]
    }
}

/// Batches with ⌊B/2⌋ positives and ⌈B/2⌉ negatives. An epoch is long enough
/// for the larger class to be drawn once; the smaller one is recycled.
#[derive(Clone, Debug)]
pub struct BalancedBatchSampler {
    pos: Cycle,
    neg: Cycle,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BalancedBatchSampler {
    pub fn new(labels: &[usize], batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::Config(format!("balanced batches need B ≥ 2, got {batch_size}")));
        }
        let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
        let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 1).collect();
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::Config(format!(
                "balanced sampling needs both classes; got {} positive and {} negative samples",
                pos.len(),
                neg.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(BalancedBatchSampler {
            pos: Cycle::new(pos, &mut rng),
            neg: Cycle::new(neg, &mut rng),
            batch_size,
            rng,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        let (np, nn) = (self.batch_size / 2, self.batch_size - self.batch_size / 2);
        self.pos.items.len().div_ceil(np).max(self.neg.items.len().div_ceil(nn))
    }

    pub fn epoch(&mut self) -> Vec<Vec<usize>> {
        let np = self.batch_size / 2;
        (0..self.batches_per_epoch())
            .map(|_| {
                let mut b: Vec<usize> = (0..np).map(|_| self.pos.next(&mut self.rng)).collect();
                b.extend((np..self.batch_size).map(|_| self.neg.next(&mut self.rng)));
                b.shuffle(&mut self.rng);
                b
            })
            .collect()
    }
}

/// Plain shuffled batches; the last one may be short.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_accuracy: f64,
    pub batches: usize,
    pub seconds: f64,
    pub validation: Option<MetricsReport>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Per-batch losses in order.
    pub batch_losses: Vec<f64>,
}

/// Where per-epoch artifacts go. `template` carries everything a checkpoint
/// needs besides the weights.
pub struct Artifacts<'a> {
    pub dir: PathBuf,
    pub template: &'a Checkpoint,
}

impl Artifacts<'_> {
    pub fn history_path(&self) -> PathBuf {
        self.dir.join("history.jsonl")
    }

    pub fn last_checkpoint(&self) -> PathBuf {
        self.dir.join("last.ckpt")
    }

    pub fn best_checkpoint(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }
}

/// Trains in place. Every epoch draws fresh random windows, and when a
/// validation set is given evaluates on it; with artifacts, appends a
/// history line, rewrites `last.ckpt` and keeps `best.ckpt` at the best
/// validation F1.
pub fn train(
    net: &mut FallDetectorNet,
    train_set: &[PreparedSample],
    validation: Option<&[PreparedSample]>,
    stats: &NormStats,
    window: usize,
    cfg: &TrainConfig,
    artifacts: Option<&Artifacts>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let labels: Vec<usize> = train_set.iter().map(|s| s.label).collect();
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut sampler = if cfg.balanced {
        Some(BalancedBatchSampler::new(&labels, cfg.batch_size, cfg.seed)?)
    } else {
        None
    };
    if let Some(a) = artifacts {
        std::fs::create_dir_all(&a.dir).map_err(|e| Error::io(&a.dir, e))?;
        crate::io::write_atomic(&a.history_path(), b"")?;
    }

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut batch_losses = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = lr_at(epoch, cfg);
        let batches = match &mut sampler {
            Some(s) => s.epoch(),
            None => shuffled_batches(train_set.len(), cfg.batch_size, &mut order_rng),
        };
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        let mut slot = 0u64;
        for idx in &batches {
            let members: Vec<&PreparedSample> = idx.iter().map(|&i| &train_set[i]).collect();
            let starts = members
                .iter()
                .map(|s| {
                    slot += 1;
                    random_window_start(s.canonical.frames(), window, &mut window_rng(cfg.seed, slot, epoch as u64))
                })
                .collect::<Result<Vec<_>>>()?;
            let batch = batch_at(&members, &starts, window, stats)?;

            let mut s = net.session(Mode::Train);
            let logits = s.forward(&batch)?;
            let loss = s.tape.softmax_cross_entropy(logits, &batch.labels)?;
            let loss_value = s.tape.value(loss).data()[0];
            if !loss_value.is_finite() {
                return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
            }
            let out = s.tape.value(logits).clone();
            let pass = s.finish(loss);
            let grads = pass.tape.backward(loss)?;
            net.zero_grads();
            net.accumulate_grads(&pass, &grads);
            sgd_step(net, lr, cfg.momentum, cfg.weight_decay)?;
            net.apply_bn_stats(&pass.bn_stats);

            for (i, &l) in batch.labels.iter().enumerate() {
                let row = &out.data()[i * 2..i * 2 + 2];
                correct += usize::from(usize::from(row[1] > row[0]) == l);
            }
            seen += batch.len();
            loss_sum += loss_value;
            batch_losses.push(loss_value);
        }
        let val = validation.map(|v| evaluate(net, v, stats, window, cfg.batch_size)).transpose()?;
        let record = EpochRecord {
            epoch,
            lr,
            loss: loss_sum / batches.len() as f64,
            train_accuracy: correct as f64 / seen as f64,
            batches: batches.len(),
            seconds: started.elapsed().as_secs_f64(),
            validation: val.map(|v| v.report),
        };
        log::info!(
            "epoch {epoch}: loss {:.4}, train acc {:.4}, lr {lr}",
            record.loss,
            record.train_accuracy
        );
        let score = record.validation.as_ref().and_then(|r| r.f1).unwrap_or(-1.0);
        let improved = best.is_none_or(|(b, _)| score > b);
        if improved {
            best = Some((score, epoch));
        }
        if let Some(a) = artifacts {
            let mut line = serde_json::to_string(&record).map_err(|e| Error::Training(e.to_string()))?;
            line.push('\n');
            append(&a.history_path(), line.as_bytes())?;
            let ckpt = a.template.with_weights(net, epoch);
            ckpt.save(&a.last_checkpoint())?;
            if improved {
                ckpt.save(&a.best_checkpoint())?;
            }
        }
        history.push(record);
    }
    Ok(TrainOutcome {
        history,
        best_epoch: best.map_or(0, |b| b.1),
        batch_losses,
    })
}

fn append(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
