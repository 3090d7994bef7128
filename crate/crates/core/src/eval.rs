//! Binary fall-detection metrics, evaluation and profiling.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{batch_at, PreparedSample};
use crate::error::{Error, Result};
use crate::model::{Batch, FallDetectorNet, Mode};
use crate::preprocess::{NormStats, COORDS};
use crate::tensor::Tensor;

/// Decision rule: fall iff P(fall) > this. 0.5 is argmax with ties going to
/// the negative class.
pub const ARGMAX_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_inputs(scores: &[f64], labels: &[usize]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Parameter(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Parameter("no samples to score".into()));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Label(format!("binary label expected, got {l}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Parameter("NaN score".into()));
    }
    Ok(())
}

pub fn confusion(scores: &[f64], labels: &[usize], threshold: f64) -> Result<Confusion> {
    check_inputs(scores, labels)?;
    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Mann–Whitney AUC with tied scores counted half.
pub fn roc_auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum of positives; tie groups get their mean rank
    let mut rank2_pos = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        rank2_pos += pos_in_group * (i as u64 + 1 + j as u64);
        i = j;
    }
    let u2 = rank2_pos - n_pos * (n_pos + 1);
    Ok(u2 as f64 / 2.0 / (n_pos * n_neg) as f64)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

mod undefined {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_str("undefined"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum V {
            N(f64),
            S(String),
        }
        match V::deserialize(d)? {
            V::N(x) => Ok(Some(x)),
            V::S(s) if s == "undefined" => Ok(None),
            V::S(s) => Err(serde::de::Error::custom(format!("expected a number or \"undefined\", got {s:?}"))),
        }
    }
}

/// The six headline metrics. `None` marks a zero denominator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub counts: Confusion,
    #[serde(with = "undefined")]
    pub f1: Option<f64>,
    #[serde(with = "undefined")]
    pub sensitivity: Option<f64>,
    #[serde(with = "undefined")]
    pub specificity: Option<f64>,
    #[serde(with = "undefined")]
    pub auc: Option<f64>,
    #[serde(with = "undefined")]
    pub fp_rate: Option<f64>,
    #[serde(with = "undefined")]
    pub accuracy: Option<f64>,
    pub threshold: f64,
}

impl MetricsReport {
    pub fn from_confusion(c: Confusion, auc: Option<f64>, threshold: f64) -> Self {
        let specificity = ratio(c.tn, c.tn + c.fp);
        MetricsReport {
            counts: c,
            f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
            sensitivity: ratio(c.tp, c.tp + c.fn_),
            specificity,
            auc,
            fp_rate: ratio(c.fp, c.tn + c.fp),
            accuracy: ratio(c.tp + c.tn, c.total()),
            threshold,
        }
    }

    pub fn from_scores(scores: &[f64], labels: &[usize], threshold: f64) -> Result<Self> {
        let c = confusion(scores, labels, threshold)?;
        let auc = match roc_auc(scores, labels) {
            Ok(a) => Some(a),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self::from_confusion(c, auc, threshold))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{:.2}%", 100.0 * x));
        let c = &self.counts;
        writeln!(f, "F1           {}", pct(self.f1))?;
        writeln!(f, "Sensitivity  {}", pct(self.sensitivity))?;
        writeln!(f, "Specificity  {}", pct(self.specificity))?;
        writeln!(f, "AUC          {}", pct(self.auc))?;
        writeln!(f, "FP rate      {}", pct(self.fp_rate))?;
        writeln!(f, "Accuracy     {}", pct(self.accuracy))?;
        write!(
            f,
            "tp {} fp {} tn {} fn {} (P(fall) > {})",
            c.tp, c.fp, c.tn, c.fn_, self.threshold
        )
    }
}

/// P(fall) from 2-class logits.
pub fn fall_probability(logits: &Tensor) -> Vec<f64> {
    logits
        .data()
        .chunks(2)
        .map(|r| 1.0 / (1.0 + (r[0] - r[1]).exp()))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub scores: Vec<f64>,
    pub labels: Vec<usize>,
}

/// Scores each sample on its first window. Takes the network by shared
/// reference, so no parameter or running statistic can change.
pub fn evaluate(
    net: &FallDetectorNet,
    samples: &[PreparedSample],
    stats: &NormStats,
    window: usize,
    batch_size: usize,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Parameter("empty evaluation set".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.canonical.joints() != net.config().joints) {
        return Err(Error::TopologyMismatch(format!(
            "sample {} has {} joints, the model's topology has {}",
            s.id,
            s.canonical.joints(),
            net.config().joints
        )));
    }
    let mut scores = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let members: Vec<&PreparedSample> = chunk.iter().collect();
        let batch = batch_at(&members, &vec![0; members.len()], window, stats)?;
        scores.extend(fall_probability(&net.logits(&batch)?));
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Ok(Evaluation {
        report: MetricsReport::from_scores(&scores, &labels, ARGMAX_THRESHOLD)?,
        scores,
        labels,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub params: usize,
    pub flops: u64,
    pub window: usize,
    pub mean_inference_ms: f64,
    pub train_min_per_epoch_estimate: f64,
    pub epoch_samples: usize,
    pub runs: usize,
}

/// Times single-sample forwards (one warm-up excluded) and one
/// forward+backward, extrapolated to `epoch_samples` training samples.
pub fn profile(net: &FallDetectorNet, window: usize, n_runs: usize, epoch_samples: usize) -> Result<Profile> {
    let cfg = net.config();
    let m = cfg.bodies;
    let shape = [m, COORDS, window, cfg.joints];
    let batch = Batch {
        joints: Tensor::from_fn(&shape, |i| ((i % 97) as f64 / 97.0) - 0.5),
        velocity: Tensor::from_fn(&shape, |i| ((i % 89) as f64 / 890.0) - 0.05),
        labels: vec![1],
        bodies: m,
    };
    net.logits(&batch)?;
    let runs = n_runs.max(1);
    let started = Instant::now();
    for _ in 0..runs {
        net.logits(&batch)?;
    }
    let mean_inference_ms = started.elapsed().as_secs_f64() * 1e3 / runs as f64;

    let started = Instant::now();
    let mut s = net.session(Mode::Train);
    let logits = s.forward(&batch)?;
    let loss = s.tape.softmax_cross_entropy(logits, &batch.labels)?;
    s.finish(loss).tape.backward(loss)?;
    let step = started.elapsed().as_secs_f64();

    Ok(Profile {
        params: net.count_params(),
        flops: net.estimate_flops(window),
        window,
        mean_inference_ms,
        train_min_per_epoch_estimate: step * epoch_samples as f64 / 60.0,
        epoch_samples,
        runs,
    })
}
