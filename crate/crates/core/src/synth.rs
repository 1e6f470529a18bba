//! Seeded synthetic images for tests, benchmarks and smoke runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{convolve_reflect, gaussian_kernel, ImageBuffer, LumaPlane};

/// Independent uniform samples in `[0, 255]`.
pub fn noise_plane(width: usize, height: usize, seed: u64) -> LumaPlane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height).map(|_| rng.gen_range(0.0..=255.0)).collect();
    LumaPlane::new(width, height, data).expect("dimensions are positive")
}

/// Plane with roughly 1/f spectral falloff plus a few hard-edged occluders,
/// rescaled into `[16, 239]`.
pub fn natural_plane(width: usize, height: usize, seed: u64) -> LumaPlane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0; width * height];
    // Octaves of smoothed white noise; amplitude grows with the smoothing scale.
    for octave in 0..5 {
        let sigma = 0.6 * 2f64.powi(octave);
        let white: Vec<f64> = (0..width * height).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let kernel = gaussian_kernel(sigma, (3.0 * sigma).ceil() as usize);
        let smooth = convolve_reflect(width, height, &white, &kernel);
        let rms = (smooth.iter().map(|v| v * v).sum::<f64>() / smooth.len() as f64).sqrt();
        for (a, s) in acc.iter_mut().zip(&smooth) {
            *a += sigma * s / rms.max(1e-12);
        }
    }
    let spread = acc.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    for _ in 0..4 {
        let (x0, y0) = (rng.gen_range(0..width), rng.gen_range(0..height));
        let (rw, rh) = (rng.gen_range(1..=width / 3 + 1), rng.gen_range(1..=height / 3 + 1));
        let level = rng.gen_range(-spread..spread);
        for y in y0..(y0 + rh).min(height) {
            for x in x0..(x0 + rw).min(width) {
                acc[y * width + x] = 0.5 * acc[y * width + x] + level;
            }
        }
    }
    let (lo, hi) = acc
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = (hi - lo).max(1e-12);
    let data = acc.iter().map(|v| 16.0 + 223.0 * (v - lo) / range).collect();
    LumaPlane::new(width, height, data).expect("dimensions are positive")
}

/// RGB image built from three independently seeded natural planes mixed
/// with a shared luminance plane.
pub fn natural_image(width: usize, height: usize, seed: u64) -> ImageBuffer {
    let base = natural_plane(width, height, seed);
    let planes: Vec<LumaPlane> = (1..=3)
        .map(|c| {
            let tint = natural_plane(width, height, seed.wrapping_mul(31).wrapping_add(c));
            let data = base
                .data()
                .iter()
                .zip(tint.data())
                .map(|(b, t)| 0.75 * b + 0.25 * t)
                .collect();
            LumaPlane::new(width, height, data).expect("same dimensions")
        })
        .collect();
    ImageBuffer::from_planes(&planes).expect("same dimensions")
}
