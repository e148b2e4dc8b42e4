use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::layers::InputShape;

/// Radial jitter of the moons. The clean arcs are 0.5 apart, so classes stay
/// at least `0.5 − 2·0.08 = 0.34` apart.
const MOON_JITTER: f64 = 0.08;

/// Two interleaved half circles, alternating labels. Inputs are raw planar
/// coordinates in roughly `[−1.1, 2.1] × [−0.6, 1.1]`.
pub fn two_moons(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let label = i % 2;
            let t = rng.random_range(0.0..PI);
            let r = 1.0 + rng.random_range(-MOON_JITTER..MOON_JITTER);
            let x = if label == 0 {
                vec![r * t.cos(), r * t.sin()]
            } else {
                vec![1.0 - r * t.cos(), 0.5 - r * t.sin()]
            };
            Sample::real(x, label)
        })
        .collect();
    Dataset { shape: InputShape::Vector { dim: 2 }, classes: 2, range: None, samples }
}

/// Smallest distance between two samples of different classes.
pub fn min_interclass_distance(data: &Dataset) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in data.samples.iter().enumerate() {
        for b in &data.samples[i + 1..] {
            if a.label != b.label {
                let d: f64 = a.input.iter().zip(&b.input).map(|(x, y)| (x - y) * (x - y)).sum();
                best = best.min(d);
            }
        }
    }
    best.sqrt()
}

/// Single-channel `side × side` gratings whose orientation encodes the
/// class, with random phase, contrast and pixel noise, clipped to `[0, 1]`.
pub fn synthetic_images(n: usize, classes: usize, side: usize, seed: u64) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::invalid("at least 2 classes are required"));
    }
    if side < 2 {
        return Err(Error::invalid("images must be at least 2 pixels wide"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.12).expect("valid normal");
    let freq = 1.5 / side as f64;
    let samples = (0..n)
        .map(|i| {
            let label = i % classes;
            let theta = PI * label as f64 / classes as f64;
            let phase = rng.random_range(0.0..2.0 * PI);
            let contrast = rng.random_range(0.2..0.4);
            let (c, s) = (theta.cos(), theta.sin());
            let mut x = Vec::with_capacity(side * side);
            for h in 0..side {
                for w in 0..side {
                    let v = 0.5 + contrast * (2.0 * PI * freq * (h as f64 * c + w as f64 * s) + phase).cos();
                    x.push((v + noise.sample(&mut rng)).clamp(0.0, 1.0));
                }
            }
            Sample::real(x, label)
        })
        .collect();
    Ok(Dataset { shape: InputShape::Image { channels: 1, height: side, width: side }, classes, range: Some((0.0, 1.0)), samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_keep_their_margin() {
        let data = two_moons(600, 0);
        data.validate().unwrap();
        assert!(min_interclass_distance(&data) >= 0.3);
        assert_eq!(data.samples.iter().filter(|s| s.label == 1).count(), 300);
    }

    #[test]
    fn images_are_in_range_and_seeded() {
        let a = synthetic_images(40, 4, 8, 3).unwrap();
        a.validate().unwrap();
        assert_eq!(a.shape.len(), 64);
        assert!(a.samples.iter().all(|s| s.input.iter().all(|v| (0.0..=1.0).contains(v))));
        assert_eq!(a, synthetic_images(40, 4, 8, 3).unwrap());
    }
}
