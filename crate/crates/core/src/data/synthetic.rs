//! Deterministic stand-in corpus: standing bodies that either fall, lie
//! down slowly, or shift into another standing posture.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ntu::{RawSample, SampleId, NTU_JOINTS};
use crate::error::{Error, Result};
use crate::preprocess::SkeletonSequence;

pub const FALL_CLASS: u32 = 43;
pub const LYING_CLASS: u32 = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_fall: usize,
    pub n_other: usize,
    /// Fraction of the transition covered per frame.
    pub fall_speed_range: [f64; 2],
    pub other_speed_range: [f64; 2],
    /// Meters.
    pub noise_std: f64,
    /// Share of non-fall samples that lie down slowly.
    pub lying_fraction: f64,
    pub frames: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_fall: 30,
            n_other: 270,
            fall_speed_range: [0.12, 0.2],
            other_speed_range: [0.02, 0.045],
            noise_std: 0.005,
            lying_fraction: 0.25,
            frames: 64,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let [fl, fh] = self.fall_speed_range;
        let [ol, oh] = self.other_speed_range;
        if !(0.0 < ol && ol <= oh && oh < fl && fl <= fh && fh <= 1.0) {
            return bad(format!(
                "need 0 < other speeds {:?} < fall speeds {:?} <= 1",
                self.other_speed_range, self.fall_speed_range
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be non-negative, got {}", self.noise_std));
        }
        if !(0.0..=1.0).contains(&self.lying_fraction) {
            return bad(format!("lying_fraction must be in [0,1], got {}", self.lying_fraction));
        }
        if self.n_fall + self.n_other == 0 {
            return bad("empty corpus".into());
        }
        if self.frames < 8 {
            return bad(format!("need at least 8 frames, got {}", self.frames));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MotionKind {
    Fall,
    SlowLie,
    Posture,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub kind: MotionKind,
    pub speed: f64,
    pub onset: usize,
}

impl Motion {
    /// Frames from onset until the transition is complete.
    pub fn transition_frames(&self) -> usize {
        (1.0 / self.speed).ceil() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub sample: RawSample,
    pub motion: Motion,
}

/// Upright pose, feet on the floor at y=0, facing -z; +x is the body's left.
const STANDING: [[f64; 3]; NTU_JOINTS] = [
    [0.0, 0.95, 0.0],     // spine base
    [0.0, 1.20, 0.0],     // spine mid
    [0.0, 1.50, 0.0],     // neck
    [0.0, 1.65, -0.02],   // head
    [0.18, 1.42, 0.0],    // left shoulder
    [0.22, 1.15, 0.0],    // left elbow
    [0.24, 0.90, -0.02],  // left wrist
    [0.25, 0.82, -0.03],  // left hand
    [-0.18, 1.42, 0.0],   // right shoulder
    [-0.22, 1.15, 0.0],   // right elbow
    [-0.24, 0.90, -0.02], // right wrist
    [-0.25, 0.82, -0.03], // right hand
    [0.10, 0.92, 0.0],    // left hip
    [0.10, 0.50, -0.02],  // left knee
    [0.10, 0.08, 0.0],    // left ankle
    [0.10, 0.02, -0.10],  // left foot
    [-0.10, 0.92, 0.0],   // right hip
    [-0.10, 0.50, -0.02], // right knee
    [-0.10, 0.08, 0.0],   // right ankle
    [-0.10, 0.02, -0.10], // right foot
    [0.0, 1.42, 0.0],     // spine shoulder
    [0.25, 0.75, -0.04],  // left hand tip
    [0.23, 0.80, -0.06],  // left thumb
    [-0.25, 0.75, -0.04], // right hand tip
    [-0.23, 0.80, -0.06], // right thumb
];

const LEFT_ARM: [usize; 5] = [5, 6, 7, 21, 22];
const RIGHT_ARM: [usize; 5] = [9, 10, 11, 23, 24];
const UPPER_BODY: [usize; 16] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 20, 21, 22, 23, 24];

type Pose = [[f64; 3]; NTU_JOINTS];

/// Rotation of `p` about the unit axis `k` through `pivot` (Rodrigues).
fn rotate(p: [f64; 3], pivot: [f64; 3], k: [f64; 3], angle: f64) -> [f64; 3] {
    let v = [p[0] - pivot[0], p[1] - pivot[1], p[2] - pivot[2]];
    let (s, c) = angle.sin_cos();
    let kv = k[0] * v[0] + k[1] * v[1] + k[2] * v[2];
    let kxv = [k[1] * v[2] - k[2] * v[1], k[2] * v[0] - k[0] * v[2], k[0] * v[1] - k[1] * v[0]];
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = pivot[i] + v[i] * c + kxv[i] * s + k[i] * kv * (1.0 - c);
    }
    out
}

#[derive(Clone, Copy)]
enum Target {
    Lie { azimuth: f64 },
    Posture { left: f64, right: f64, bend: f64 },
}

fn pose_at(base: &Pose, target: Target, progress: f64) -> Pose {
    let mut pose = *base;
    match target {
        Target::Lie { azimuth } => {
            let axis = [azimuth.cos(), 0.0, azimuth.sin()];
            for p in pose.iter_mut() {
                *p = rotate(*p, [0.0; 3], axis, progress * FRAC_PI_2);
            }
        }
        Target::Posture { left, right, bend } => {
            let x = [1.0, 0.0, 0.0];
            for (arm, shoulder, angle) in [(LEFT_ARM, 4, left), (RIGHT_ARM, 8, right)] {
                let pivot = base[shoulder];
                for &j in &arm {
                    pose[j] = rotate(base[j], pivot, x, progress * angle);
                }
            }
            let hip = base[0];
            for &j in &UPPER_BODY {
                pose[j] = rotate(pose[j], hip, x, -progress * bend);
            }
        }
    }
    pose
}

fn sample_id(i: usize, action: u32) -> SampleId {
    let k = i / 3;
    SampleId {
        setup: (k / 80 + 1) as u32,
        camera: (i % 3 + 1) as u32,
        performer: (k % 40 + 1) as u32,
        replication: ((k / 40) % 2 + 1) as u32,
        action,
    }
}

/// Builds the corpus. Cameras cycle 1,2,3 over samples, so a camera-based
/// split holds out a third. Coordinates are rounded to 32-bit precision so
/// the in-memory corpus equals what the text files store.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<SyntheticSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_lying = (spec.n_other as f64 * spec.lying_fraction).round() as usize;
    let mut kinds: Vec<MotionKind> = std::iter::repeat_n(MotionKind::Fall, spec.n_fall)
        .chain(std::iter::repeat_n(MotionKind::SlowLie, n_lying))
        .chain(std::iter::repeat_n(MotionKind::Posture, spec.n_other - n_lying))
        .collect();
    kinds.shuffle(&mut rng);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let (onset_lo, onset_hi) = (spec.frames / 4, (spec.frames / 3).max(spec.frames / 4 + 1));

    let mut out = Vec::with_capacity(kinds.len());
    for (i, &kind) in kinds.iter().enumerate() {
        let range = if kind == MotionKind::Fall {
            spec.fall_speed_range
        } else {
            spec.other_speed_range
        };
        let speed = if range[0] == range[1] {
            range[0]
        } else {
            rng.random_range(range[0]..=range[1])
        };
        let onset = rng.random_range(onset_lo..onset_hi);
        let (action, target) = match kind {
            MotionKind::Fall => (FALL_CLASS, Target::Lie {
                azimuth: rng.random_range(0.0..2.0 * PI),
            }),
            MotionKind::SlowLie => (LYING_CLASS, Target::Lie {
                azimuth: rng.random_range(0.0..2.0 * PI),
            }),
            MotionKind::Posture => {
                let mut a = rng.random_range(1..=58u32);
                if a >= LYING_CLASS {
                    a += 1;
                }
                if a >= FALL_CLASS {
                    a += 1;
                }
                (a, Target::Posture {
                    left: rng.random_range(0.0..2.0 * PI / 3.0),
                    right: rng.random_range(0.0..2.0 * PI / 3.0),
                    bend: rng.random_range(0.0..PI / 9.0),
                })
            }
        };
        let scale = rng.random_range(0.85..1.15);
        let mut base = STANDING;
        for p in base.iter_mut() {
            for c in p.iter_mut() {
                *c = *c * scale + rng.random_range(-0.02..0.02);
            }
        }
        let yaw = rng.random_range(0.0..2.0 * PI);
        let shift = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..-0.6),
            rng.random_range(2.5..4.0),
        ];

        let mut seq = SkeletonSequence::zeros(spec.frames, NTU_JOINTS, 1);
        for t in 0..spec.frames {
            let progress = ((t as f64 - onset as f64) * speed).clamp(0.0, 1.0);
            let pose = pose_at(&base, target, progress);
            for (v, p) in pose.iter().enumerate() {
                let q = rotate(*p, [0.0; 3], [0.0, 1.0, 0.0], yaw);
                let mut w = [0.0; 3];
                for c in 0..3 {
                    let n = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    w[c] = (q[c] + shift[c] + n) as f32 as f64;
                }
                seq.set_point(t, v, 0, w);
            }
        }
        out.push(SyntheticSample {
            sample: RawSample {
                id: sample_id(i, action),
                sequence: seq,
            },
            motion: Motion { kind, speed, onset },
        });
    }
    Ok(out)
}
