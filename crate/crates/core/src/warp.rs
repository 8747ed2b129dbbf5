//! Differentiable view synthesis by inverse warping.
//!
//! Pixels whose bilinear footprint leaves the source image, or whose scene point
//! lands behind the source camera, are invalid: they synthesize to zero and carry
//! zero gradient. At integer sample coordinates the footprint is the cell to the
//! lower right, so derivatives at grid lines are the right-continuous one-sided ones.

use alloc::vec;

use crate::error::{Error, Result};
use crate::field::{DepthField, GradientBundle, ImageBuffer, MaskField, Twist};
use crate::geometry::{
    mat3_vec, project_correspondences, transform_pixel, twist_to_motion_with_jacobian, CoordGrid, Intrinsics, MotionJacobian, RigidMotion,
    Vec3, EPSILON_Z,
};
use crate::math::floor;

/// A synthesized target view and the pixels at which it is defined.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub image: ImageBuffer,
    pub validity: MaskField,
}

/// A bilinear footprint: top-left neighbor and fractional offsets.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Footprint {
    pub x0: usize,
    pub y0: usize,
    pub a: f64,
    pub b: f64,
}

impl Footprint {
    /// `None` when any of the four neighbors is outside a `width x height` grid.
    #[inline]
    pub fn locate(width: usize, height: usize, u: f64, v: f64) -> Option<Self> {
        let (fu, fv) = (floor(u), floor(v));
        if !(fu >= 0.0 && fv >= 0.0 && fu + 1.0 <= (width - 1) as f64 && fv + 1.0 <= (height - 1) as f64) {
            return None;
        }
        Some(Self { x0: fu as usize, y0: fv as usize, a: u - fu, b: v - fv })
    }

    #[inline]
    pub fn value(&self, img: &ImageBuffer, c: usize) -> f64 {
        let (i00, i10, i01, i11) = self.corners(img, c);
        let (a, b) = (self.a, self.b);
        (1.0 - a) * (1.0 - b) * i00 + a * (1.0 - b) * i10 + (1.0 - a) * b * i01 + a * b * i11
    }

    /// `(dI/du, dI/dv)` of the bilinear interpolant inside this cell.
    #[inline]
    pub fn gradient(&self, img: &ImageBuffer, c: usize) -> (f64, f64) {
        let (i00, i10, i01, i11) = self.corners(img, c);
        let (a, b) = (self.a, self.b);
        ((1.0 - b) * (i10 - i00) + b * (i11 - i01), (1.0 - a) * (i01 - i00) + a * (i11 - i10))
    }

    #[inline]
    fn corners(&self, img: &ImageBuffer, c: usize) -> (f64, f64, f64, f64) {
        let (x, y) = (self.x0, self.y0);
        (img.get(x, y, c), img.get(x + 1, y, c), img.get(x, y + 1, c), img.get(x + 1, y + 1, c))
    }
}

/// Samples `source` at every coordinate of `coords`.
pub fn bilinear_sample(source: &ImageBuffer, coords: &CoordGrid) -> SynthesisResult {
    let (h, w, ch) = (coords.height, coords.width, source.channels());
    let mut data = vec![0.0; h * w * ch];
    let mut validity = vec![0.0; h * w];
    for i in 0..h * w {
        if !coords.valid[i] {
            continue;
        }
        if let Some(fp) = Footprint::locate(source.width(), source.height(), coords.u[i], coords.v[i]) {
            validity[i] = 1.0;
            for c in 0..ch {
                data[i * ch + c] = fp.value(source, c);
            }
        }
    }
    SynthesisResult {
        image: ImageBuffer::from_vec(h, w, ch, data).expect("bilinear blend of finite values is finite"),
        validity: MaskField::from_vec(h, w, validity).expect("validity is binary"),
    }
}

/// `I_t ~ Psi(I_s, P, D)`: projects every target pixel into the source and samples it.
pub fn synthesize(source: &ImageBuffer, pose: &RigidMotion, depth: &DepthField, k: &Intrinsics) -> Result<SynthesisResult> {
    if source.height() != depth.height() || source.width() != depth.width() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "source {}x{} vs depth {}x{}",
            source.height(),
            source.width(),
            depth.height(),
            depth.width()
        )));
    }
    let coords = project_correspondences(k, pose, depth);
    Ok(bilinear_sample(source, &coords))
}

/// One warped target pixel with the derivatives of its sample location.
#[derive(Debug, Clone, Copy)]
pub(crate) struct WarpedPixel {
    pub u: f64,
    pub v: f64,
    /// `None` when the pixel is invalid.
    pub footprint: Option<Footprint>,
    pub du_ddepth: f64,
    pub dv_ddepth: f64,
    pub du_dtwist: [f64; 6],
    pub dv_dtwist: [f64; 6],
}

/// Projects target pixel `(x, y)` at `depth` under `jac.motion` and differentiates
/// the sample location with respect to depth and twist.
#[inline]
pub(crate) fn warp_pixel(k: &Intrinsics, jac: &MotionJacobian, x: f64, y: f64, depth: f64, src_w: usize, src_h: usize) -> WarpedPixel {
    let (p, q) = transform_pixel(k, &jac.motion, x, y, depth);
    let mut out = WarpedPixel { u: 0.0, v: 0.0, footprint: None, du_ddepth: 0.0, dv_ddepth: 0.0, du_dtwist: [0.0; 6], dv_dtwist: [0.0; 6] };
    if q[2] <= EPSILON_Z {
        return out;
    }
    let (u, v) = k.project(&q);
    out.u = u;
    out.v = v;
    out.footprint = Footprint::locate(src_w, src_h, u, v);
    if out.footprint.is_none() {
        return out;
    }
    let iz = 1.0 / q[2];
    let du_dq: Vec3 = [k.fx * iz, 0.0, -k.fx * q[0] * iz * iz];
    let dv_dq: Vec3 = [0.0, k.fy * iz, -k.fy * q[1] * iz * iz];
    let dot = |a: &Vec3, b: &Vec3| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];

    let dq_dd = mat3_vec(&jac.motion.rotation(), &k.ray(x, y));
    out.du_ddepth = dot(&du_dq, &dq_dd);
    out.dv_ddepth = dot(&dv_dq, &dq_dd);
    let dq_dxi = jac.point_derivatives(&p);
    for j in 0..6 {
        out.du_dtwist[j] = dot(&du_dq, &dq_dxi[j]);
        out.dv_dtwist[j] = dot(&dv_dq, &dq_dxi[j]);
    }
    out
}

/// Gradient of `<upstream, Psi(I_s, exp(twist), D)>` with respect to depth and twist.
///
/// `upstream` has one entry per target pixel and channel. `d_pose` holds each
/// pixel's contribution to the twist gradient, i.e. the gradient with respect to
/// a pose field broadcast from `twist`; [`sum_pose_gradient`] reduces it.
pub fn synthesize_grad(
    source: &ImageBuffer,
    twist: &Twist,
    depth: &DepthField,
    k: &Intrinsics,
    upstream: &[f64],
) -> Result<GradientBundle> {
    let (h, w, ch) = (depth.height(), depth.width(), source.channels());
    if source.height() != h || source.width() != w || upstream.len() != h * w * ch {
        return Err(Error::ShapeMismatch("synthesize_grad inputs".into()));
    }
    let jac = twist_to_motion_with_jacobian(twist)?;
    let mut grad = GradientBundle::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let px = warp_pixel(k, &jac, x as f64, y as f64, depth.get(x, y), w, h);
            let Some(fp) = px.footprint else { continue };
            let (mut gu, mut gv) = (0.0, 0.0);
            for c in 0..ch {
                let (iu, iv) = fp.gradient(source, c);
                gu += upstream[i * ch + c] * iu;
                gv += upstream[i * ch + c] * iv;
            }
            grad.d_depth[i] = gu * px.du_ddepth + gv * px.dv_ddepth;
            for j in 0..6 {
                grad.d_pose[i * 6 + j] = gu * px.du_dtwist[j] + gv * px.dv_dtwist[j];
            }
        }
    }
    Ok(grad)
}

/// Sums per-pixel twist contributions in row-major order.
pub fn sum_pose_gradient(grad: &GradientBundle) -> Twist {
    let mut out = [0.0; 6];
    for px in grad.d_pose.chunks_exact(6) {
        for j in 0..6 {
            out[j] += px[j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::twist_to_motion;

    fn ramp(h: usize, w: usize) -> ImageBuffer {
        let data = (0..h * w).map(|i| (i % w) as f64 / w as f64).collect();
        ImageBuffer::from_vec(h, w, 1, data).unwrap()
    }

    #[test]
    fn identity_grid_reproduces_interior() {
        let img = ImageBuffer::from_vec(3, 4, 1, (0..12).map(|i| i as f64 / 12.0).collect()).unwrap();
        let out = bilinear_sample(&img, &CoordGrid::identity(3, 4));
        for y in 0..3 {
            for x in 0..4 {
                let interior = x < 3 && y < 2;
                assert_eq!(out.validity.get(x, y), if interior { 1.0 } else { 0.0 });
                if interior {
                    assert_eq!(out.image.get(x, y, 0), img.get(x, y, 0));
                }
            }
        }
    }

    #[test]
    fn integer_shift_on_ramp() {
        let img = ramp(4, 8);
        let mut g = CoordGrid::identity(4, 8);
        g.u.iter_mut().for_each(|u| *u += 1.0);
        let out = bilinear_sample(&img, &g);
        for y in 0..4 {
            for x in 0..8 {
                if out.validity.get(x, y) == 1.0 {
                    assert!((out.image.get(x, y, 0) - (x + 1) as f64 / 8.0).abs() < 1e-15);
                } else {
                    assert_eq!(out.image.get(x, y, 0), 0.0);
                }
            }
        }
        assert_eq!(out.validity.get(5, 1), 1.0);
        assert_eq!(out.validity.get(6, 1), 0.0);
    }

    #[test]
    fn midpoint_blend() {
        let img = ImageBuffer::from_vec(2, 2, 1, vec![0.2, 0.6, 0.2, 0.6]).unwrap();
        let g = CoordGrid { height: 1, width: 1, u: vec![0.5], v: vec![0.0], valid: vec![true] };
        let out = bilinear_sample(&img, &g);
        assert!((out.image.get(0, 0, 0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn identity_pose_and_constant_color() {
        let k = Intrinsics::new(8.0, 8.0, 3.5, 3.5).unwrap();
        let depth = DepthField::new_filled(8, 8, 2.0).unwrap();
        let img = ImageBuffer::from_vec(8, 8, 3, (0..192).map(|i| (i as f64 * 0.37).sin() * 0.5 + 0.5).collect()).unwrap();
        let out = synthesize(&img, &RigidMotion::IDENTITY, &depth, &k).unwrap();
        for y in 0..7 {
            for x in 0..7 {
                for c in 0..3 {
                    assert!((out.image.get(x, y, c) - img.get(x, y, c)).abs() < 1e-12);
                }
            }
        }
        let flat = ImageBuffer::new_filled(8, 8, 3, 0.3).unwrap();
        let pose = twist_to_motion(&[0.1, -0.05, 0.2, 0.02, -0.03, 0.01]).unwrap();
        let out = synthesize(&flat, &pose, &depth, &k).unwrap();
        for i in 0..64 {
            let expect = if out.validity.data()[i] == 1.0 { 0.3 } else { 0.0 };
            for c in 0..3 {
                assert!((out.image.data()[i * 3 + c] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_upstream_and_flat_source_give_zero_gradients() {
        let k = Intrinsics::new(8.0, 8.0, 3.5, 3.5).unwrap();
        let depth = DepthField::new_filled(8, 8, 2.0).unwrap();
        let twist = [0.1, -0.05, 0.2, 0.02, -0.03, 0.01];
        let img = ramp(8, 8);
        let g = synthesize_grad(&img, &twist, &depth, &k, &[0.0; 64]).unwrap();
        assert!(g.d_depth.iter().chain(&g.d_pose).all(|v| *v == 0.0));
        let flat = ImageBuffer::new_filled(8, 8, 1, 0.7).unwrap();
        let g = synthesize_grad(&flat, &twist, &depth, &k, &[1.0; 64]).unwrap();
        assert!(g.d_depth.iter().all(|v| *v == 0.0));
    }
}
