//! Raster and per-pixel field containers.
//!
//! Every container is row-major. Multi-channel data is channel-interleaved, so
//! element `(x, y, c)` lives at `(y * width + x) * channels + c`. Pixel `(0, 0)`
//! is the top-left corner and `x` indexes columns.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::sqrt;

fn checked_len(height: usize, width: usize, channels: usize) -> Result<usize> {
    let bad = Error::InvalidDimensions { height, width, channels };
    if height == 0 || width == 0 || channels == 0 {
        return Err(bad);
    }
    height.checked_mul(width).and_then(|n| n.checked_mul(channels)).ok_or(bad)
}

fn check_len(height: usize, width: usize, channels: usize, got: usize) -> Result<()> {
    let expected = checked_len(height, width, channels)?;
    if expected != got {
        return Err(Error::ShapeMismatch(format!("expected {expected} elements for {height}x{width}x{channels}, got {got}")));
    }
    Ok(())
}

fn check_finite(what: &str, data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidValue(format!("{what}: element {i} is not finite"))),
        None => Ok(()),
    }
}

/// An `H x W x C` image with channel-interleaved real values, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new_filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidDimensions { height, width, channels });
        }
        let len = checked_len(height, width, channels)?;
        Self::from_vec(height, width, channels, vec![value; len])
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidDimensions { height, width, channels });
        }
        check_len(height, width, channels, data.len())?;
        check_finite("image", &data)?;
        Ok(Self { height, width, channels, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// The channel values of one pixel.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

/// Strictly positive per-pixel depth, in scene units along the optical axis.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DepthField {
    pub fn new_filled(height: usize, width: usize, value: f64) -> Result<Self> {
        let len = checked_len(height, width, 1)?;
        Self::from_vec(height, width, vec![value; len])
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_len(height, width, 1, data.len())?;
        if let Some(i) = data.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidValue(format!("depth element {i} = {} is not positive and finite", data[i])));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Divides every depth by the field's arithmetic mean, so the result has mean 1.
    pub fn mean_normalize(&self) -> DepthField {
        let mean = self.mean();
        let out = DepthField { height: self.height, width: self.width, data: self.data.iter().map(|d| d / mean).collect() };
        debug_assert!(out.data.iter().all(|d| d.is_finite() && *d > 0.0));
        out
    }
}

/// Per-pixel weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl MaskField {
    pub fn new_filled(height: usize, width: usize, value: f64) -> Result<Self> {
        let len = checked_len(height, width, 1)?;
        Self::from_vec(height, width, vec![value; len])
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_len(height, width, 1, data.len())?;
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidValue(format!("mask element {i} = {} outside [0, 1]", data[i])));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// `1 - M` element-wise.
    pub fn complement(&self) -> MaskField {
        MaskField { height: self.height, width: self.width, data: self.data.iter().map(|m| 1.0 - m).collect() }
    }

    /// Element-wise product of two masks.
    pub fn product(&self, other: &MaskField) -> Result<MaskField> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::ShapeMismatch(format!("mask {}x{} vs {}x{}", self.height, self.width, other.height, other.width)));
        }
        Ok(MaskField { height: self.height, width: self.width, data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect() })
    }
}

/// A six-parameter rigid motion: translation `(tx, ty, tz)` then rotation vector `(rx, ry, rz)`.
pub type Twist = [f64; 6];

/// Norm of the rotation part of a twist.
pub fn rotation_norm(twist: &Twist) -> f64 {
    sqrt(twist[3] * twist[3] + twist[4] * twist[4] + twist[5] * twist[5])
}

/// A dense map of per-pixel twists.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl PoseField {
    pub fn new_filled(height: usize, width: usize, twist: Twist) -> Result<Self> {
        checked_len(height, width, 6)?;
        let data = twist.iter().copied().cycle().take(height * width * 6).collect();
        Self::from_vec(height, width, data)
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new_filled(height, width, [0.0; 6])
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_len(height, width, 6, data.len())?;
        check_finite("pose field", &data)?;
        for (i, px) in data.chunks_exact(6).enumerate() {
            let norm = rotation_norm(&[px[0], px[1], px[2], px[3], px[4], px[5]]);
            if norm >= core::f64::consts::PI {
                return Err(Error::InvalidValue(format!("pose pixel {i} has rotation norm {norm} >= pi")));
            }
        }
        Ok(Self { height, width, data })
    }

    /// Builds a field from per-pixel twists in row-major order.
    pub fn from_twists(height: usize, width: usize, twists: &[Twist]) -> Result<Self> {
        Self::from_vec(height, width, twists.iter().flatten().copied().collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Twist {
        let i = (y * self.width + x) * 6;
        let mut t = [0.0; 6];
        t.copy_from_slice(&self.data[i..i + 6]);
        t
    }

    /// One channel (0..6) as a row-major scalar plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(6).copied().collect()
    }
}

/// Gradients of a scalar objective with respect to depth, pose field and mask.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub height: usize,
    pub width: usize,
    pub d_depth: Vec<f64>,
    pub d_pose: Vec<f64>,
    pub d_mask: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros(height: usize, width: usize) -> Self {
        let n = height * width;
        Self { height, width, d_depth: vec![0.0; n], d_pose: vec![0.0; n * 6], d_mask: vec![0.0; n] }
    }

    pub fn is_finite(&self) -> bool {
        self.d_depth.iter().chain(&self.d_pose).chain(&self.d_mask).all(|v| v.is_finite())
    }

    /// Concatenation `[d_depth, d_pose, d_mask]`, the layout gradient checks use.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.d_depth.len() * 8);
        out.extend_from_slice(&self.d_depth);
        out.extend_from_slice(&self.d_pose);
        out.extend_from_slice(&self.d_mask);
        out
    }
}
