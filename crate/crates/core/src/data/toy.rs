//! Seeded synthetic datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use scarcegan_autodiff::Array;

pub const RING_MODES: usize = 8;
pub const RING_RADIUS: f64 = 0.7;
pub const RING_STD: f64 = 0.05;

/// `n` points from eight Gaussians evenly spaced on a circle, `[n, 2]`.
pub fn ring(n: usize, seed: u64) -> Array {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * 2);
    for _ in 0..n {
        let k = rng.random_range(0..RING_MODES) as f64;
        let angle = std::f64::consts::TAU * k / RING_MODES as f64;
        let gx: f64 = rng.sample(StandardNormal);
        let gy: f64 = rng.sample(StandardNormal);
        data.push(RING_RADIUS * angle.cos() + RING_STD * gx);
        data.push(RING_RADIUS * angle.sin() + RING_STD * gy);
    }
    Array::new(vec![n, 2], data).expect("ring shape")
}

/// Procedural textures: a tinted background with two to four soft
/// coloured blobs, values in `[-1, 1]`, `[n, channels, res, res]`.
pub fn blobs(n: usize, res: usize, channels: usize, seed: u64) -> Array {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = channels * res * res;
    let mut data = vec![0.0; n * per];
    for img in data.chunks_mut(per) {
        let bg: Vec<f64> = (0..channels).map(|_| rng.random_range(-0.8..-0.2)).collect();
        let count = rng.random_range(2..=4);
        let blobs: Vec<(f64, f64, f64, Vec<f64>)> = (0..count)
            .map(|_| {
                let cx = rng.random_range(0.2..0.8) * res as f64;
                let cy = rng.random_range(0.2..0.8) * res as f64;
                let r = rng.random_range(0.08..0.2) * res as f64;
                let color = (0..channels).map(|_| rng.random_range(0.0..1.6)).collect();
                (cx, cy, r, color)
            })
            .collect();
        for y in 0..res {
            for x in 0..res {
                for c in 0..channels {
                    let mut v = bg[c];
                    for (cx, cy, r, color) in &blobs {
                        let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                        v += color[c] * (-d2 / (2.0 * r * r)).exp();
                    }
                    img[(c * res + y) * res + x] = v.clamp(-1.0, 1.0);
                }
            }
        }
    }
    Array::new(vec![n, channels, res, res], data).expect("blob shape")
}
