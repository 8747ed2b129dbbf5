//! Field-to-image conversions for inspection.
//!
//! Depth is drawn as inverted grayscale (far is dark), pose fields as two RGB
//! images holding the translation and rotation axes, and masks as grayscale
//! with the foreground in white. All outputs lie in [0,1].

use alloc::vec::Vec;

use crate::field::{DepthField, ImageBuffer, MaskField, PoseField};

/// Gray level used for a field without contrast, and for zero motion.
pub const MID_GRAY: f64 = 0.5;

/// Inverted grayscale: the nearest pixel is white, the farthest black.
/// A constant field maps to [`MID_GRAY`].
pub fn depth_image(depth: &DepthField) -> ImageBuffer {
    let (lo, hi) = depth.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    let span = hi - lo;
    let data = depth.data().iter().map(|&d| if span > 0.0 { 1.0 - (d - lo) / span } else { MID_GRAY }).collect();
    ImageBuffer::from_vec(depth.height(), depth.width(), 1, data).expect("shape taken from a valid field")
}

/// Translation (tx, ty, tz) and rotation (rx, ry, rz) as RGB images.
///
/// Each image uses a symmetric range `[-m, m]` where `m` is the largest
/// magnitude among its three channels, so zero is mid-gray and signs stay
/// comparable across axes.
pub fn pose_images(pose: &PoseField) -> (ImageBuffer, ImageBuffer) {
    (pose_part(pose, 0), pose_part(pose, 3))
}

fn pose_part(pose: &PoseField, offset: usize) -> ImageBuffer {
    let n = pose.height() * pose.width();
    let values: Vec<f64> = (0..n).flat_map(|i| pose.data()[i * 6 + offset..i * 6 + offset + 3].iter().copied()).collect();
    let m = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let data = values.iter().map(|&v| if m > 0.0 { MID_GRAY + 0.5 * v / m } else { MID_GRAY }).collect();
    ImageBuffer::from_vec(pose.height(), pose.width(), 3, data).expect("shape taken from a valid field")
}

/// Grayscale mask with the foreground (1) in white.
pub fn mask_image(mask: &MaskField) -> ImageBuffer {
    ImageBuffer::from_vec(mask.height(), mask.width(), 1, mask.data().to_vec()).expect("mask values already lie in [0,1]")
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn constant_depth_is_uniform_gray() {
        let img = depth_image(&DepthField::new_filled(3, 4, 7.0).unwrap());
        assert!(img.data().iter().all(|&v| v == MID_GRAY));
    }

    #[test]
    fn far_is_dark() {
        let img = depth_image(&DepthField::from_vec(1, 3, vec![1.0, 2.0, 5.0]).unwrap());
        assert_eq!(img.data(), &[1.0, 0.75, 0.0]);
    }

    #[test]
    fn zero_pose_is_mid_gray() {
        let (t, r) = pose_images(&PoseField::zeros(2, 2).unwrap());
        assert_eq!(t.channels(), 3);
        assert!(t.data().iter().chain(r.data()).all(|&v| v == MID_GRAY));
    }

    #[test]
    fn pose_range_is_symmetric_per_part() {
        let pose = PoseField::from_twists(1, 2, &[[0.2, 0.0, -0.1, 0.0, 0.0, 0.01], [-0.2, 0.0, 0.0, 0.0, -0.03, 0.0]]).unwrap();
        let (t, r) = pose_images(&pose);
        assert_eq!(t.data(), &[1.0, 0.5, 0.25, 0.0, 0.5, 0.5]);
        let expect = [0.5, 0.5, 0.5 + 0.5 / 3.0, 0.5, 0.0, 0.5];
        for (a, b) in r.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn full_mask_is_white() {
        let img = mask_image(&MaskField::new_filled(2, 3, 1.0).unwrap());
        assert!(img.data().iter().all(|&v| v == 1.0));
    }
}
