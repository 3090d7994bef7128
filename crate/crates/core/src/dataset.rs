//! Canonicalized samples ready for windowing.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::data::{binarize_label, RawSample, SampleId, LabelSpace};
use crate::error::{Error, Result};
use crate::model::Batch;
use crate::preprocess::{canonicalize, make_input, ModelInput, NormStats, PreprocessConfig, SkeletonSequence};

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub id: SampleId,
    pub canonical: SkeletonSequence,
    pub label: usize,
}

/// Canonicalizes the samples named by `ids`, in that order.
pub fn prepare(
    raw: &[RawSample],
    ids: &[SampleId],
    pre: &PreprocessConfig,
    labels: &LabelSpace,
) -> Result<Vec<PreparedSample>> {
    let by_id: HashMap<SampleId, &RawSample> = raw.iter().map(|s| (s.id, s)).collect();
    ids.par_iter()
        .map(|id| {
            let s = by_id
                .get(id)
                .ok_or_else(|| Error::Parameter(format!("sample {id} not in the dataset")))?;
            Ok(PreparedSample {
                id: *id,
                canonical: canonicalize(&s.sequence, pre)?,
                label: binarize_label(id.action, labels)?,
            })
        })
        .collect()
}

pub fn norm_stats(samples: &[PreparedSample]) -> NormStats {
    NormStats::compute(samples.iter().map(|s| &s.canonical))
}

/// Packs the samples with window starts `starts` into one batch.
pub fn batch_at(
    samples: &[&PreparedSample],
    starts: &[usize],
    window: usize,
    stats: &NormStats,
) -> Result<Batch> {
    let inputs: Vec<ModelInput> = samples
        .par_iter()
        .zip(starts)
        .map(|(s, &start)| make_input(&s.canonical, start, window, stats, s.label))
        .collect::<Result<_>>()?;
    Batch::from_inputs(&inputs)
}
