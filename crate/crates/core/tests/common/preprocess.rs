use rand::Rng;
use rand_chacha::ChaCha8Rng;
use skelfall_core::preprocess::SkeletonSequence;

pub fn random_sequence(r: &mut ChaCha8Rng, frames: usize, bodies: usize) -> SkeletonSequence {
    let mut s = SkeletonSequence::zeros(frames, 25, bodies);
    for t in 0..frames {
        for m in 0..bodies {
            let offset = [r.random_range(-2.0..2.0), r.random_range(0.0..1.0), r.random_range(2.0..4.0)];
            for v in 0..25 {
                let p = [
                    offset[0] + r.random_range(-0.5..0.5),
                    offset[1] + r.random_range(-0.9..0.9),
                    offset[2] + r.random_range(-0.3..0.3),
                ];
                s.set_point(t, v, m, p);
            }
        }
    }
    s
}

pub fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

