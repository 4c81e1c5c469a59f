//! Deterministic synthetic images: smooth gradients plus Gaussian blobs.

use std::f64::consts::PI;

use crate::image::{normalize_image, Grid, Image, Shape, DEFAULT_EPSILON};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy)]
struct Blob {
    cx: f64,
    cy: f64,
    sigma: f64,
    amplitude: f64,
}

impl Blob {
    fn at(&self, x: f64, y: f64) -> f64 {
        let r2 = (x - self.cx).powi(2) + (y - self.cy).powi(2);
        self.amplitude * (-r2 / (2.0 * self.sigma * self.sigma)).exp()
    }
}

fn uniform(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.next_uniform()
}

/// A `size x size` portrait-like test card: a low-frequency shaded
/// background, a bright oval "face" region and a handful of darker and
/// brighter Gaussian features. Raw values are clamped to `[0, 1]` and then
/// normalized with [`DEFAULT_EPSILON`].
pub fn portrait_like(size: usize, channels: usize, seed: u64) -> Image {
    let shape = Shape::new(size, size, channels);
    let mut rng = RngStream::new(seed, 0x5107);
    let s = size as f64;
    let phase = uniform(&mut rng, 0.0, 2.0 * PI);
    let tilt = uniform(&mut rng, -0.15, 0.15);
    let mut blobs = vec![Blob {
        cx: s * uniform(&mut rng, 0.42, 0.58),
        cy: s * uniform(&mut rng, 0.4, 0.55),
        sigma: s * 0.2,
        amplitude: 0.35,
    }];
    for _ in 0..6 {
        blobs.push(Blob {
            cx: s * uniform(&mut rng, 0.15, 0.85),
            cy: s * uniform(&mut rng, 0.15, 0.85),
            sigma: s * uniform(&mut rng, 0.04, 0.12),
            amplitude: uniform(&mut rng, -0.25, 0.2),
        });
    }
    let tints: Vec<f64> = (0..channels).map(|_| uniform(&mut rng, -0.05, 0.05)).collect();
    let raw = Grid::from_fn(shape, |k| {
        let c = k % channels;
        let p = k / channels;
        let (x, y) = ((p % size) as f64 + 0.5, (p / size) as f64 + 0.5);
        let (u, v) = (x / s, y / s);
        let background = 0.35 + tilt * (u - 0.5) + 0.08 * (PI * (u + 0.6 * v) + phase).cos();
        let value = background + blobs.iter().map(|b| b.at(x, y)).sum::<f64>() + tints[c];
        value.clamp(0.0, 1.0)
    });
    normalize_image(&raw, DEFAULT_EPSILON).expect("clamped values are valid")
}

/// A small single-channel image: random linear gradient plus one to three
/// Gaussian blobs, clamped to `[0, 1]` (raw, not yet normalized).
pub fn blob_gradient_raw(size: usize, rng: &mut RngStream) -> Grid {
    let s = size as f64;
    let base = uniform(rng, 0.05, 0.45);
    let gx = uniform(rng, -0.3, 0.3);
    let gy = uniform(rng, -0.3, 0.3);
    let count = rng.next_index(1, 4);
    let blobs: Vec<Blob> = (0..count)
        .map(|_| Blob {
            cx: uniform(rng, 0.0, s),
            cy: uniform(rng, 0.0, s),
            sigma: uniform(rng, 0.12, 0.3) * s,
            amplitude: uniform(rng, 0.25, 0.6),
        })
        .collect();
    Grid::from_fn(Shape::gray(size, size), |p| {
        let (x, y) = ((p % size) as f64 + 0.5, (p / size) as f64 + 0.5);
        let v = base
            + gx * (x / s - 0.5)
            + gy * (y / s - 0.5)
            + blobs.iter().map(|b| b.at(x, y)).sum::<f64>();
        v.clamp(0.0, 1.0)
    })
}
