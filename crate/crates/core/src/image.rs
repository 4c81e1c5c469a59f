//! Pixel grids and normalized images.
//!
//! All grids store `f64` samples row-major with channels interleaved, so the
//! sample for pixel `(x, y)` and channel `c` lives at
//! `(y * width + x) * channels + c`.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default additive shift applied when normalizing 8-bit sources.
pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
        }
    }

    pub const fn gray(width: usize, height: usize) -> Self {
        Self::new(width, height, 1)
    }

    /// Total number of scalar samples.
    pub const fn len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub const fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.channels)
    }
}

/// A real-valued field over an image-shaped domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    shape: Shape,
    data: Vec<f64>,
}

/// Gaussian noise realizations share the grid container.
pub type NoiseField = Grid;

impl Grid {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn from_fn(shape: Shape, f: impl FnMut(usize) -> f64) -> Self {
        Self {
            shape,
            data: (0..shape.len()).map(f).collect(),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.shape.index(x, y, c)]
    }

    pub fn ensure_shape(&self, expected: Shape) -> Result<()> {
        if self.shape != expected {
            return Err(Error::ShapeMismatch {
                expected,
                found: self.shape,
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Grid, f: impl Fn(f64, f64) -> f64) -> Result<Grid> {
        other.ensure_shape(self.shape)?;
        Ok(Grid {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Iterates the samples of one channel in pixel order.
    pub fn channel(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.data
            .iter()
            .skip(c)
            .step_by(self.shape.channels.max(1))
            .copied()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_diff(&self, other: &Grid) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A normalized image: every sample lies in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image(Grid);

impl Image {
    /// Wraps a grid after checking the `(0, 1]` invariant.
    pub fn from_grid(grid: Grid) -> Result<Self> {
        if let Some((index, &value)) = grid
            .data
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v > 0.0 && v <= 1.0))
        {
            return Err(Error::NotNormalized { index, value });
        }
        Ok(Self(grid))
    }

    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        Self::from_grid(Grid::new(shape, data)?)
    }

    /// A constant image; `value` must lie in `(0, 1]`.
    pub fn uniform(shape: Shape, value: f64) -> Result<Self> {
        Self::from_grid(Grid::filled(shape, value))
    }

    pub fn as_grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }
}

impl Deref for Image {
    type Target = Grid;

    fn deref(&self) -> &Grid {
        &self.0
    }
}

impl AsRef<Grid> for Image {
    fn as_ref(&self) -> &Grid {
        &self.0
    }
}

/// Shifts raw `[0, 1]` samples by `epsilon` so no pixel is exactly zero.
/// Values pushed above 1 are clamped to 1.
pub fn normalize_image(raw: &Grid, epsilon: f64) -> Result<Image> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidEpsilon(epsilon));
    }
    if let Some((index, &value)) = raw
        .data
        .iter()
        .enumerate()
        .find(|(_, &v)| !(0.0..=1.0).contains(&v))
    {
        return Err(Error::PixelOutOfRange { index, value });
    }
    Ok(Image(raw.map(|v| (v + epsilon).min(1.0))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_zeros_gives_epsilon() {
        let raw = Grid::zeros(Shape::gray(4, 3));
        let img = normalize_image(&raw, 1e-3).unwrap();
        assert!(img.data().iter().all(|&v| v == 1e-3));
    }

    #[test]
    fn normalize_ones_clamps() {
        let raw = Grid::filled(Shape::gray(2, 2), 1.0);
        let img = normalize_image(&raw, 1e-3).unwrap();
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn normalize_shifts_midpoint() {
        let raw = Grid::filled(Shape::gray(1, 1), 0.5);
        let img = normalize_image(&raw, 1e-3).unwrap();
        assert!((img.data()[0] - 0.501).abs() < 1e-15);
    }

    #[test]
    fn normalize_rejects_bad_inputs() {
        let raw = Grid::new(Shape::gray(2, 1), vec![0.2, -0.1]).unwrap();
        assert!(matches!(
            normalize_image(&raw, 1e-3),
            Err(Error::PixelOutOfRange { index: 1, .. })
        ));
        let ok = Grid::zeros(Shape::gray(2, 1));
        assert!(matches!(normalize_image(&ok, 0.0), Err(Error::InvalidEpsilon(_))));
        assert!(matches!(normalize_image(&ok, -1.0), Err(Error::InvalidEpsilon(_))));
    }

    #[test]
    fn image_rejects_zero_pixels() {
        assert!(Image::new(Shape::gray(2, 1), vec![0.5, 0.0]).is_err());
        assert!(Image::new(Shape::gray(2, 1), vec![0.5, 1.0]).is_ok());
    }

    #[test]
    fn channel_iteration_is_interleaved() {
        let g = Grid::new(Shape::new(2, 1, 3), vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(g.channel(1).collect::<Vec<_>>(), vec![2., 5.]);
        assert_eq!(g.get(1, 0, 2), 6.0);
    }

    #[test]
    fn data_length_is_checked() {
        assert!(matches!(
            Grid::new(Shape::gray(2, 2), vec![0.0; 3]),
            Err(Error::DataLength { .. })
        ));
    }
}
