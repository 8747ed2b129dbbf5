//! Sliding-window tiling (im2row) and its adjoint.
//!
//! Patch `p = i + j * patches_x` copies the `k x k` window whose top-left pixel is
//! `(s * i, s * j)`, with `i` the column index. Windows that would run past the
//! right or bottom edge are dropped.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::field::{DepthField, ImageBuffer, MaskField, PoseField, Twist};

/// Read access shared by every per-pixel container.
pub trait FieldView {
    fn height(&self) -> usize;
    fn width(&self) -> usize;
    fn channels(&self) -> usize;
    /// Channel-interleaved row-major storage.
    fn values(&self) -> &[f64];
}

macro_rules! field_view {
    ($ty:ty, $ch:expr) => {
        impl FieldView for $ty {
            fn height(&self) -> usize {
                <$ty>::height(self)
            }
            fn width(&self) -> usize {
                <$ty>::width(self)
            }
            fn channels(&self) -> usize {
                $ch(self)
            }
            fn values(&self) -> &[f64] {
                self.data()
            }
        }
    };
}

field_view!(ImageBuffer, |f: &ImageBuffer| f.channels());
field_view!(DepthField, |_| 1);
field_view!(MaskField, |_| 1);
field_view!(PoseField, |_| 6);

/// An unconstrained real field, used for gradients and adjoint outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RawField {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl RawField {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }
}

impl FieldView for RawField {
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
    fn channels(&self) -> usize {
        self.channels
    }
    fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Window size, stride and the field dimensions they tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub s: usize,
}

impl PatchGeometry {
    pub fn new(height: usize, width: usize, k: usize, s: usize) -> Result<Self> {
        if k == 0 || s == 0 || k > height.min(width) {
            return Err(Error::InvalidPatchConfig { k, s, height, width });
        }
        Ok(Self { height, width, k, s })
    }

    pub fn patches_x(&self) -> usize {
        (self.width - self.k) / self.s + 1
    }

    pub fn patches_y(&self) -> usize {
        (self.height - self.k) / self.s + 1
    }

    pub fn patch_count(&self) -> usize {
        self.patches_x() * self.patches_y()
    }

    /// Top-left pixel `(x, y)` of patch `p`.
    pub fn origin(&self, p: usize) -> (usize, usize) {
        let px = self.patches_x();
        (self.s * (p % px), self.s * (p / px))
    }

    /// Pixel whose pose drives patch `p`: `floor(k / 2)` into the window on both axes.
    pub fn center(&self, p: usize) -> (usize, usize) {
        let (x, y) = self.origin(p);
        (x + self.k / 2, y + self.k / 2)
    }
}

/// `b x c x k x k` patches, patch-major and channel-planar within a patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub geometry: PatchGeometry,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl PatchSet {
    pub fn patch_count(&self) -> usize {
        self.geometry.patch_count()
    }

    #[inline]
    pub fn index(&self, p: usize, c: usize, y: usize, x: usize) -> usize {
        let k = self.geometry.k;
        ((p * self.channels + c) * k + y) * k + x
    }

    pub fn get(&self, p: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(p, c, y, x)]
    }

    /// Patch `p` re-interleaved as a `k x k` image.
    pub fn patch_image(&self, p: usize) -> ImageBuffer {
        ImageBuffer::from_vec(self.geometry.k, self.geometry.k, self.channels, self.interleaved(p))
            .expect("patches of a valid image are valid images")
    }

    /// Patch `p` of a single-channel field, row-major.
    pub fn patch_plane(&self, p: usize) -> &[f64] {
        let kk = self.geometry.k * self.geometry.k;
        let start = p * self.channels * kk;
        &self.data[start..start + self.channels * kk]
    }

    fn interleaved(&self, p: usize) -> Vec<f64> {
        let k = self.geometry.k;
        let mut out = Vec::with_capacity(k * k * self.channels);
        for y in 0..k {
            for x in 0..k {
                for c in 0..self.channels {
                    out.push(self.get(p, c, y, x));
                }
            }
        }
        out
    }

    /// An all-zero patch set with this geometry, used to collect patch-space gradients.
    pub fn zeros_like(geometry: PatchGeometry, channels: usize) -> Self {
        let k = geometry.k;
        Self { geometry, channels, data: vec![0.0; geometry.patch_count() * channels * k * k] }
    }

    /// Writes a channel-interleaved `k x k` block into patch `p`.
    pub fn set_patch_interleaved(&mut self, p: usize, values: &[f64]) {
        let k = self.geometry.k;
        for y in 0..k {
            for x in 0..k {
                for c in 0..self.channels {
                    let i = self.index(p, c, y, x);
                    self.data[i] = values[(y * k + x) * self.channels + c];
                }
            }
        }
    }
}

/// `t(X)`: copies every full `k x k` window at stride `s`.
pub fn tile<F: FieldView + ?Sized>(field: &F, k: usize, s: usize) -> Result<PatchSet> {
    let geometry = PatchGeometry::new(field.height(), field.width(), k, s)?;
    let (w, ch) = (field.width(), field.channels());
    let values = field.values();
    let mut data = Vec::with_capacity(geometry.patch_count() * ch * k * k);
    for p in 0..geometry.patch_count() {
        let (ox, oy) = geometry.origin(p);
        for c in 0..ch {
            for y in 0..k {
                for x in 0..k {
                    data.push(values[((oy + y) * w + ox + x) * ch + c]);
                }
            }
        }
    }
    Ok(PatchSet { geometry, channels: ch, data })
}

/// Adjoint of [`tile`]: each field location receives the sum of the patch entries
/// that copied it. Patches are visited in index order, so the sum is deterministic.
pub fn untile_accumulate(patches: &PatchSet) -> RawField {
    let g = patches.geometry;
    let ch = patches.channels;
    let mut out = RawField::zeros(g.height, g.width, ch);
    for p in 0..g.patch_count() {
        let (ox, oy) = g.origin(p);
        for c in 0..ch {
            for y in 0..g.k {
                for x in 0..g.k {
                    out.data[((oy + y) * g.width + ox + x) * ch + c] += patches.get(p, c, y, x);
                }
            }
        }
    }
    out
}

/// `vec(P)`: the pose field as a row-major list of twists.
pub fn vec_pose(pose: &PoseField) -> Vec<Twist> {
    pose.data().chunks_exact(6).map(|c| [c[0], c[1], c[2], c[3], c[4], c[5]]).collect()
}

/// The twist at each patch's center pixel, in patch order.
pub fn pose_at_patch_centers(pose: &PoseField, k: usize, s: usize) -> Result<Vec<Twist>> {
    let g = PatchGeometry::new(pose.height(), pose.width(), k, s)?;
    Ok((0..g.patch_count())
        .map(|p| {
            let (x, y) = g.center(p);
            pose.get(x, y)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_by_four_hand_oracle() {
        let f = DepthField::from_vec(4, 4, (0..16).map(|v| v as f64 + 1.0).collect()).unwrap();
        let t = tile(&f, 2, 2).unwrap();
        assert_eq!(t.patch_count(), 4);
        let expect = [[0, 1, 4, 5], [2, 3, 6, 7], [8, 9, 12, 13], [10, 11, 14, 15]];
        for (p, e) in expect.iter().enumerate() {
            let got: Vec<f64> = t.patch_plane(p).iter().map(|v| v - 1.0).collect();
            assert_eq!(got, e.iter().map(|v| *v as f64).collect::<Vec<_>>());
        }
    }

    #[test]
    fn full_frame_and_single_pixel_patches() {
        let f = DepthField::from_vec(3, 3, (1..=9).map(|v| v as f64).collect()).unwrap();
        let t = tile(&f, 3, 1).unwrap();
        assert_eq!(t.patch_count(), 1);
        assert_eq!(t.patch_plane(0), f.data());
        let t = tile(&f, 1, 1).unwrap();
        assert_eq!(t.patch_count(), 9);
        assert_eq!(t.data, f.data());
    }

    #[test]
    fn oversized_patch_rejected() {
        let f = DepthField::new_filled(3, 5, 1.0).unwrap();
        assert!(matches!(tile(&f, 4, 1), Err(Error::InvalidPatchConfig { .. })));
        assert!(tile(&f, 2, 0).is_err());
    }

    #[test]
    fn overlap_counts() {
        let ones = RawField { height: 3, width: 3, channels: 1, data: vec![1.0; 9] };
        let acc = untile_accumulate(&tile(&ones, 2, 1).unwrap());
        assert_eq!(acc.data, vec![1.0, 2.0, 1.0, 2.0, 4.0, 2.0, 1.0, 2.0, 1.0]);
    }

    #[test]
    fn remainder_is_dropped() {
        let g = PatchGeometry::new(7, 8, 3, 2).unwrap();
        assert_eq!((g.patches_x(), g.patches_y()), (3, 3));
        let ones = RawField { height: 7, width: 8, channels: 1, data: vec![1.0; 56] };
        let acc = untile_accumulate(&tile(&ones, 3, 2).unwrap());
        assert_eq!(acc.data[7], 0.0);
    }

    #[test]
    fn vec_pose_ordering() {
        let twists: Vec<Twist> = (0..4).map(|i| [i as f64, 0.0, 0.0, 0.0, 0.0, 0.0]).collect();
        let p = PoseField::from_twists(2, 2, &twists).unwrap();
        assert_eq!(vec_pose(&p), twists);
        // (i, j) = (column, row): (0,0),(1,0),(0,1),(1,1) are storage indices 0..4.
        assert_eq!(pose_at_patch_centers(&p, 1, 1).unwrap(), twists);
        let round = PoseField::from_twists(2, 2, &vec_pose(&p)).unwrap();
        assert_eq!(round, p);
    }

    #[test]
    fn centers_on_seven_by_seven() {
        let twists: Vec<Twist> = (0..49).map(|i| [(i % 7) as f64, (i / 7) as f64, 0.0, 0.0, 0.0, 0.0]).collect();
        let p = PoseField::from_twists(7, 7, &twists).unwrap();
        let centers = pose_at_patch_centers(&p, 3, 2).unwrap();
        let got: Vec<(f64, f64)> = centers.iter().map(|t| (t[0], t[1])).collect();
        let mut expect = Vec::new();
        for y in [1.0, 3.0, 5.0] {
            for x in [1.0, 3.0, 5.0] {
                expect.push((x, y));
            }
        }
        assert_eq!(got, expect);
        let c = PoseField::new_filled(7, 7, [0.1, 0.2, 0.3, 0.0, 0.1, 0.0]).unwrap();
        assert!(pose_at_patch_centers(&c, 3, 2).unwrap().iter().all(|t| *t == [0.1, 0.2, 0.3, 0.0, 0.1, 0.0]));
    }
}
