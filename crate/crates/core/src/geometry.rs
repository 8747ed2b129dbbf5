//! Pinhole camera geometry and rigid motions.
//!
//! Camera convention: `+z` forward, `+x` right, `+y` down, pixel centers at
//! integer coordinates with `(0, 0)` the top-left pixel.
//!
//! A [`Twist`] `(tx, ty, tz, rx, ry, rz)` is mapped to a motion through the SE(3)
//! exponential: the rotation is the Rodrigues exponential of `(rx, ry, rz)` and the
//! translation is `V(r) (tx, ty, tz)`, which reduces to `(tx, ty, tz)` when the
//! rotation part vanishes. A pose used for warping maps points expressed in the
//! target camera frame into the source camera frame, i.e. it is the motion of the
//! scene content as seen from the target camera.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{rotation_norm, DepthField, Twist};
use crate::math::{acos, cos, sin, sqrt};

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

/// Transformed depths at or below this value are treated as behind the camera.
pub const EPSILON_Z: f64 = 1e-6;

const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub(crate) fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub(crate) fn mat3_vec(a: &Mat3, v: &Vec3) -> Vec3 {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub(crate) fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[j][i] = *v;
        }
    }
    out
}

fn mat3_lin(terms: &[(f64, &Mat3)]) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (w, m) in terms {
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] += w * m[i][j];
            }
        }
    }
    out
}

fn hat(w: &Vec3) -> Mat3 {
    [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
}

fn det3(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

fn solve3(a: &Mat3, b: &Vec3) -> Vec3 {
    let d = det3(a);
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut m = *a;
        for i in 0..3 {
            m[i][k] = b[i];
        }
        *o = det3(&m) / d;
    }
    out
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidValue(format!("intrinsics {self:?}")));
        }
        Ok(())
    }

    /// The same camera with the principal point moved by `(-dx, -dy)`, so that pixel
    /// `(u - dx, v - dy)` of a crop starting at `(dx, dy)` keeps the ray of `(u, v)`.
    pub fn cropped(&self, dx: f64, dy: f64) -> Self {
        Self { cx: self.cx - dx, cy: self.cy - dy, ..*self }
    }

    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0]
    }

    #[inline]
    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        (self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy)
    }
}

/// A proper rigid transform stored as a row-major homogeneous 4x4 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMotion {
    matrix: [f64; 16],
}

impl RigidMotion {
    pub const IDENTITY: RigidMotion = RigidMotion {
        matrix: [
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ],
    };

    /// Validates a row-major 4x4 matrix: bottom row `(0, 0, 0, 1)` and an
    /// orthonormal, right-handed rotation block to within `1e-9`.
    pub fn from_matrix(matrix: [f64; 16]) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite motion matrix".into()));
        }
        if matrix[12..] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidValue("bottom row must be (0, 0, 0, 1)".into()));
        }
        let m = Self { matrix };
        let drift = m.orthonormality_error();
        if drift > 1e-9 {
            return Err(Error::InvalidValue(format!("rotation block off SO(3) by {drift:e}")));
        }
        Ok(m)
    }

    pub fn from_parts(rotation: &Mat3, translation: &Vec3) -> Self {
        let mut matrix = [0.0; 16];
        for i in 0..3 {
            matrix[i * 4..i * 4 + 3].copy_from_slice(&rotation[i]);
            matrix[i * 4 + 3] = translation[i];
        }
        matrix[15] = 1.0;
        Self { matrix }
    }

    pub fn matrix(&self) -> &[f64; 16] {
        &self.matrix
    }

    pub fn rotation(&self) -> Mat3 {
        let m = &self.matrix;
        [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]]
    }

    pub fn translation(&self) -> Vec3 {
        [self.matrix[3], self.matrix[7], self.matrix[11]]
    }

    #[inline]
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        let m = &self.matrix;
        [
            m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3],
            m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7],
            m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11],
        ]
    }

    pub fn inverse(&self) -> RigidMotion {
        let rt = transpose(&self.rotation());
        let t = mat3_vec(&rt, &self.translation());
        Self::from_parts(&rt, &[-t[0], -t[1], -t[2]])
    }

    /// Largest absolute entry of `R^T R - I`, plus `|det R - 1|`.
    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rotation();
        let rtr = mat3_mul(&transpose(&r), &r);
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((rtr[i][j] - IDENTITY3[i][j]).abs());
            }
        }
        worst.max((det3(&r) - 1.0).abs())
    }

    /// Rotation angle in radians.
    pub fn rotation_angle(&self) -> f64 {
        let r = self.rotation();
        let c = ((r[0][0] + r[1][1] + r[2][2] - 1.0) / 2.0).clamp(-1.0, 1.0);
        acos(c)
    }

    /// Replaces the rotation block by its nearest rotation matrix.
    fn reorthonormalized(&self) -> RigidMotion {
        let r = self.rotation();
        let m = nalgebra::Matrix3::from_fn(|i, j| r[i][j]);
        let svd = m.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut q = u * vt;
        if q.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            q = u * vt;
        }
        let rot = [[q[(0, 0)], q[(0, 1)], q[(0, 2)]], [q[(1, 0)], q[(1, 1)], q[(1, 2)]], [q[(2, 0)], q[(2, 1)], q[(2, 2)]]];
        Self::from_parts(&rot, &self.translation())
    }
}

/// Matrix product `a * b`, re-orthonormalized when floating drift exceeds `1e-9`.
pub fn compose(a: &RigidMotion, b: &RigidMotion) -> RigidMotion {
    let mut out = [0.0; 16];
    for i in 0..4 {
        for j in 0..4 {
            out[i * 4 + j] = (0..4).map(|k| a.matrix[i * 4 + k] * b.matrix[k * 4 + j]).sum();
        }
    }
    out[12..].copy_from_slice(&[0.0, 0.0, 0.0, 1.0]);
    let m = RigidMotion { matrix: out };
    if m.orthonormality_error() > 1e-9 {
        m.reorthonormalized()
    } else {
        m
    }
}

/// `Z(d)`: translation by `d` along the optical axis.
pub fn z_translation(d: f64) -> RigidMotion {
    RigidMotion::from_parts(&IDENTITY3, &[0.0, 0.0, d])
}

/// The scalar coefficients `A = sin t / t`, `B = (1 - cos t) / t^2`,
/// `C = (t - sin t) / t^3` of the SE(3) exponential and their derivatives with
/// respect to `s = t^2`.
struct ExpCoefficients {
    a: f64,
    b: f64,
    c: f64,
    da: f64,
    db: f64,
    dc: f64,
}

fn exp_coefficients(s: f64) -> ExpCoefficients {
    if s < 1e-2 {
        let s2 = s * s;
        let s3 = s2 * s;
        let s4 = s3 * s;
        ExpCoefficients {
            a: 1.0 - s / 6.0 + s2 / 120.0 - s3 / 5040.0 + s4 / 362880.0,
            b: 0.5 - s / 24.0 + s2 / 720.0 - s3 / 40320.0 + s4 / 3628800.0,
            c: 1.0 / 6.0 - s / 120.0 + s2 / 5040.0 - s3 / 362880.0 + s4 / 39916800.0,
            da: -1.0 / 6.0 + s / 60.0 - s2 / 1680.0 + s3 / 90720.0,
            db: -1.0 / 24.0 + s / 360.0 - s2 / 13440.0 + s3 / 907200.0,
            dc: -1.0 / 120.0 + s / 2520.0 - s2 / 120960.0 + s3 / 9979200.0,
        }
    } else {
        let t = sqrt(s);
        let (sin, cos) = (sin(t), cos(t));
        let a = sin / t;
        let b = (1.0 - cos) / s;
        let c = (t - sin) / (s * t);
        ExpCoefficients { a, b, c, da: (cos - a) / (2.0 * s), db: (a - 2.0 * b) / (2.0 * s), dc: (b - 3.0 * c) / (2.0 * s) }
    }
}

/// A motion together with the derivatives of its rotation and translation
/// with respect to the six twist parameters.
#[derive(Debug, Clone, Copy)]
pub struct MotionJacobian {
    pub motion: RigidMotion,
    /// `dR / d r_k` for the rotation-vector components.
    pub d_rotation: [Mat3; 3],
    /// `dt / d xi_j` for all six twist components.
    pub d_translation: [Vec3; 6],
}

impl MotionJacobian {
    /// `d(R p + t) / d xi_j` for a fixed point `p`.
    #[inline]
    pub fn point_derivatives(&self, p: &Vec3) -> [Vec3; 6] {
        let mut out = self.d_translation;
        for k in 0..3 {
            let dr = mat3_vec(&self.d_rotation[k], p);
            for i in 0..3 {
                out[k + 3][i] += dr[i];
            }
        }
        out
    }
}

fn check_twist(twist: &Twist) -> Result<()> {
    if twist.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidValue("non-finite twist".into()));
    }
    let norm = rotation_norm(twist);
    if norm >= core::f64::consts::PI {
        return Err(Error::RotationOutOfRange(norm));
    }
    Ok(())
}

/// SE(3) exponential of a twist, with its derivatives.
pub fn twist_to_motion_with_jacobian(twist: &Twist) -> Result<MotionJacobian> {
    check_twist(twist)?;
    let rho = [twist[0], twist[1], twist[2]];
    let omega = [twist[3], twist[4], twist[5]];
    let s = omega[0] * omega[0] + omega[1] * omega[1] + omega[2] * omega[2];
    let co = exp_coefficients(s);
    let w = hat(&omega);
    let w2 = mat3_mul(&w, &w);

    let rotation = mat3_lin(&[(1.0, &IDENTITY3), (co.a, &w), (co.b, &w2)]);
    let v = mat3_lin(&[(1.0, &IDENTITY3), (co.b, &w), (co.c, &w2)]);
    let translation = mat3_vec(&v, &rho);

    let mut d_rotation = [[[0.0; 3]; 3]; 3];
    let mut d_translation = [[0.0; 3]; 6];
    for j in 0..3 {
        d_translation[j] = [v[0][j], v[1][j], v[2][j]];
    }
    for k in 0..3 {
        let mut e = [0.0; 3];
        e[k] = 1.0;
        let ek = hat(&e);
        let sym = mat3_lin(&[(1.0, &mat3_mul(&ek, &w)), (1.0, &mat3_mul(&w, &ek))]);
        let ds = 2.0 * omega[k];
        d_rotation[k] = mat3_lin(&[(ds * co.da, &w), (ds * co.db, &w2), (co.a, &ek), (co.b, &sym)]);
        let dv = mat3_lin(&[(ds * co.db, &w), (ds * co.dc, &w2), (co.b, &ek), (co.c, &sym)]);
        d_translation[k + 3] = mat3_vec(&dv, &rho);
    }

    Ok(MotionJacobian { motion: RigidMotion::from_parts(&rotation, &translation), d_rotation, d_translation })
}

/// SE(3) exponential of a twist. Rotation norms at or above pi are rejected.
pub fn twist_to_motion(twist: &Twist) -> Result<RigidMotion> {
    twist_to_motion_with_jacobian(twist).map(|j| j.motion)
}

/// SE(3) logarithm, the inverse of [`twist_to_motion`] on rotation angles below pi.
pub fn motion_to_twist(motion: &RigidMotion) -> Twist {
    let r = motion.rotation();
    let theta = motion.rotation_angle();
    let omega = if theta < 1e-6 {
        // R - R^T = 2 A W with A = 1 - theta^2 / 6 + ...
        let a = 1.0 - theta * theta / 6.0;
        [(r[2][1] - r[1][2]) / (2.0 * a), (r[0][2] - r[2][0]) / (2.0 * a), (r[1][0] - r[0][1]) / (2.0 * a)]
    } else if core::f64::consts::PI - theta > 1e-4 {
        let a = sin(theta) / theta;
        [(r[2][1] - r[1][2]) / (2.0 * a), (r[0][2] - r[2][0]) / (2.0 * a), (r[1][0] - r[0][1]) / (2.0 * a)]
    } else {
        // Near pi the antisymmetric part vanishes; read the axis from R + I.
        let b = (1.0 - cos(theta)) / (theta * theta);
        let mut axis = [0.0; 3];
        let k = (0..3).max_by(|&i, &j| r[i][i].partial_cmp(&r[j][j]).unwrap()).unwrap();
        axis[k] = sqrt(((r[k][k] - 1.0) / (b * theta * theta) + 1.0).max(0.0));
        for i in 0..3 {
            if i != k {
                axis[i] = (r[i][k] + r[k][i]) / (2.0 * b * theta * theta * axis[k]);
            }
        }
        let sign =
            if (r[2][1] - r[1][2]) * axis[0] + (r[0][2] - r[2][0]) * axis[1] + (r[1][0] - r[0][1]) * axis[2] < 0.0 { -1.0 } else { 1.0 };
        let n = sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
        [sign * theta * axis[0] / n, sign * theta * axis[1] / n, sign * theta * axis[2] / n]
    };
    let s = omega[0] * omega[0] + omega[1] * omega[1] + omega[2] * omega[2];
    let co = exp_coefficients(s);
    let w = hat(&omega);
    let w2 = mat3_mul(&w, &w);
    let v = mat3_lin(&[(1.0, &IDENTITY3), (co.b, &w), (co.c, &w2)]);
    let rho = solve3(&v, &motion.translation());
    [rho[0], rho[1], rho[2], omega[0], omega[1], omega[2]]
}

/// Target-pixel coordinates in the source image, one entry per target pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid {
    pub height: usize,
    pub width: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub valid: Vec<bool>,
}

impl CoordGrid {
    /// The grid mapping each pixel onto itself.
    pub fn identity(height: usize, width: usize) -> Self {
        let mut u = Vec::with_capacity(height * width);
        let mut v = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                u.push(x as f64);
                v.push(y as f64);
            }
        }
        Self { height, width, u, v, valid: alloc::vec![true; height * width] }
    }
}

/// Back-projects pixel `(u, v)` at depth `depth` and moves it by `(rotation, translation)`.
#[inline]
pub(crate) fn transform_pixel(k: &Intrinsics, motion: &RigidMotion, u: f64, v: f64, depth: f64) -> (Vec3, Vec3) {
    let ray = k.ray(u, v);
    let p = [ray[0] * depth, ray[1] * depth, depth];
    (p, motion.transform_point(&p))
}

/// For every target pixel, the location of its scene point in the source view:
/// `[u', v', 1] ~ K P Z(D) K^-1 [u, v, 1]`, dehomogenized by the transformed depth.
pub fn project_correspondences(k: &Intrinsics, pose: &RigidMotion, depth: &DepthField) -> CoordGrid {
    let (h, w) = (depth.height(), depth.width());
    let mut grid =
        CoordGrid { height: h, width: w, u: Vec::with_capacity(h * w), v: Vec::with_capacity(h * w), valid: Vec::with_capacity(h * w) };
    for y in 0..h {
        for x in 0..w {
            let (_, q) = transform_pixel(k, pose, x as f64, y as f64, depth.get(x, y));
            if q[2] > EPSILON_Z {
                let (u, v) = k.project(&q);
                grid.u.push(u);
                grid.v.push(v);
                grid.valid.push(true);
            } else {
                grid.u.push(0.0);
                grid.v.push(0.0);
                grid.valid.push(false);
            }
        }
    }
    grid
}
