//! Ray-cast renderer for synthetic ground-truth sequences.
//!
//! The world frame is the camera frame of frame 0. Camera and object motions
//! are applied in the body frame: `T(t + 1) = T(t) * exp(twist)`. The
//! background is a textured plane through `(0, 0, distance)` whose normal is
//! the optical axis tilted by `tilt`. Depth is planar z-depth of the nearest
//! surface hit by the ray through each pixel center.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DepthField, ImageBuffer, MaskField, PoseField, Twist};
use crate::geometry::{compose, motion_to_twist, twist_to_motion, Intrinsics, RigidMotion, Vec3};
use crate::losses::masked_l1;
use crate::math::{floor, sqrt};
use crate::warp::synthesize;

const NEAR: f64 = 1e-3;

/// Multi-octave value noise with amplitude 0.5 around mid-gray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextureSpec {
    pub seed: u64,
    #[serde(default = "default_octaves")]
    pub octaves: u32,
    /// World units per lattice cell of the coarsest octave.
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_octaves() -> u32 {
    3
}

fn default_scale() -> f64 {
    6.0
}

impl TextureSpec {
    pub fn new(seed: u64) -> Self {
        Self { seed, octaves: default_octaves(), scale: default_scale() }
    }

    /// Texture value in `[0, 1]` for channel `c` at local point `p`.
    pub fn sample(&self, c: usize, p: &Vec3) -> f64 {
        let mut sum = 0.0;
        let mut norm = 0.0;
        let mut amp = 1.0;
        let mut freq = 1.0 / self.scale;
        for o in 0..self.octaves {
            let seed = self.seed.wrapping_mul(0x100_0193).wrapping_add((c as u64) << 32 | o as u64);
            let n = value_noise(seed, [p[0] * freq, p[1] * freq, p[2] * freq]);
            sum += amp * (2.0 * n - 1.0);
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        0.5 + 0.5 * sum / norm
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let mut h = splitmix(seed);
    for v in [x, y, z] {
        h = splitmix(h ^ v as u64);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Trilinear blend of hashed lattice values in `[0, 1)` with quintic weights.
fn value_noise(seed: u64, p: [f64; 3]) -> f64 {
    let cell = [floor(p[0]), floor(p[1]), floor(p[2])];
    let w = [fade(p[0] - cell[0]), fade(p[1] - cell[1]), fade(p[2] - cell[2])];
    let (x, y, z) = (cell[0] as i64, cell[1] as i64, cell[2] as i64);
    let mut acc = 0.0;
    for corner in 0..8 {
        let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
        let weight = [1.0 - w[0], w[0]][dx] * [1.0 - w[1], w[1]][dy] * [1.0 - w[2], w[2]][dz];
        if weight != 0.0 {
            acc += weight * lattice(seed, x + dx as i64, y + dy as i64, z + dz as i64);
        }
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundSpec {
    pub distance: f64,
    /// Rotation of the plane normal about the x and y axes, radians.
    #[serde(default)]
    pub tilt: [f64; 2],
    pub texture: TextureSpec,
}

/// Primitive geometry in the object frame, centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    Box {
        half_extents: [f64; 3],
    },
    /// A rectangle in the object's `z = 0` plane.
    Quad {
        half_extents: [f64; 2],
    },
}

impl Shape {
    fn corners(&self) -> Vec<Vec3> {
        let (h, depth) = match *self {
            Shape::Box { half_extents } => (half_extents, true),
            Shape::Quad { half_extents } => ([half_extents[0], half_extents[1], 0.0], false),
        };
        let n = if depth { 8 } else { 4 };
        (0..n)
            .map(|i| {
                let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
                let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
                let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
                [sx * h[0], sy * h[1], sz * h[2]]
            })
            .collect()
    }

    /// Ray parameter of the first hit of `origin + t * dir`, local coordinates.
    fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        match *self {
            Shape::Box { half_extents } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for i in 0..3 {
                    if dir[i].abs() < 1e-15 {
                        if origin[i].abs() > half_extents[i] {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half_extents[i] - origin[i]) / dir[i];
                    let b = (half_extents[i] - origin[i]) / dir[i];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                (t1 >= t0 && t0 > NEAR).then_some(t0)
            }
            Shape::Quad { half_extents } => {
                if dir[2].abs() < 1e-15 {
                    return None;
                }
                let t = -origin[2] / dir[2];
                let x = origin[0] + t * dir[0];
                let y = origin[1] + t * dir[1];
                (t > NEAR && x.abs() <= half_extents[0] && y.abs() <= half_extents[1]).then_some(t)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub shape: Shape,
    /// Object-to-world pose at frame 0.
    pub initial_pose: Twist,
    /// Body-frame motion applied between consecutive frames.
    #[serde(default)]
    pub twist: Twist,
    pub texture: TextureSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    pub intrinsics: Intrinsics,
    pub frame_count: usize,
    /// Either one twist used between every pair of frames, or `frame_count - 1` twists.
    #[serde(default)]
    pub camera_twists: Vec<Twist>,
    pub background: BackgroundSpec,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
}

fn default_channels() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFrame {
    pub image: ImageBuffer,
    pub depth: DepthField,
    /// Camera-to-world.
    pub camera_pose_world: RigidMotion,
    pub object_masks: Vec<MaskField>,
    /// Object-to-world.
    pub object_poses_world: Vec<RigidMotion>,
}

impl GroundTruthFrame {
    /// `0` for background, `i + 1` for object `i`.
    pub fn labels(&self) -> Vec<usize> {
        let mut out = vec![0; self.depth.data().len()];
        for (i, m) in self.object_masks.iter().enumerate() {
            for (l, v) in out.iter_mut().zip(m.data()) {
                if *v > 0.5 {
                    *l = i + 1;
                }
            }
        }
        out
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || !(self.channels == 1 || self.channels == 3) {
            return Err(Error::InvalidDimensions { height: self.height, width: self.width, channels: self.channels });
        }
        self.intrinsics.validate()?;
        if self.frame_count < 2 {
            return Err(Error::Config(format!("frame_count must be >= 2, got {}", self.frame_count)));
        }
        if !(self.camera_twists.is_empty() || self.camera_twists.len() == 1 || self.camera_twists.len() == self.frame_count - 1) {
            return Err(Error::Config(format!(
                "camera_twists must hold 0, 1 or {} entries, got {}",
                self.frame_count - 1,
                self.camera_twists.len()
            )));
        }
        let b = &self.background;
        if !(b.distance > 0.0 && b.distance.is_finite()) {
            return Err(Error::DegenerateScene(format!("background distance {} is not positive", b.distance)));
        }
        if b.tilt.iter().any(|t| !(t.abs() < core::f64::consts::FRAC_PI_2)) {
            return Err(Error::DegenerateScene("background tilt must be below 90 degrees".into()));
        }
        let textures = core::iter::once(&b.texture).chain(self.objects.iter().map(|o| &o.texture));
        for t in textures {
            if t.octaves == 0 || !(t.scale > 0.0 && t.scale.is_finite()) {
                return Err(Error::Config("texture needs >= 1 octave and a positive scale".into()));
            }
        }
        for o in &self.objects {
            let ext: &[f64] = match &o.shape {
                Shape::Box { half_extents } => half_extents,
                Shape::Quad { half_extents } => half_extents,
            };
            if ext.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err(Error::DegenerateScene("object extents must be positive".into()));
            }
        }
        Ok(())
    }

    fn camera_twist(&self, step: usize) -> Twist {
        match self.camera_twists.len() {
            0 => [0.0; 6],
            1 => self.camera_twists[0],
            _ => self.camera_twists[step],
        }
    }

    fn plane_rotation(&self) -> Result<RigidMotion> {
        let [a, b] = self.background.tilt;
        twist_to_motion(&[0.0, 0.0, 0.0, a, b, 0.0])
    }

    /// Camera-to-world poses for every frame.
    pub fn camera_trajectory(&self) -> Result<Vec<RigidMotion>> {
        let mut poses = vec![RigidMotion::IDENTITY];
        for step in 0..self.frame_count - 1 {
            let m = twist_to_motion(&self.camera_twist(step))?;
            poses.push(compose(&poses[step], &m));
        }
        Ok(poses)
    }

    /// Object-to-world poses per frame, indexed `[frame][object]`.
    pub fn object_trajectories(&self) -> Result<Vec<Vec<RigidMotion>>> {
        let mut frames = vec![self.objects.iter().map(|o| twist_to_motion(&o.initial_pose)).collect::<Result<Vec<_>>>()?];
        for step in 0..self.frame_count - 1 {
            let next = frames[step]
                .iter()
                .zip(&self.objects)
                .map(|(pose, o)| Ok(compose(pose, &twist_to_motion(&o.twist)?)))
                .collect::<Result<Vec<_>>>()?;
            frames.push(next);
        }
        Ok(frames)
    }
}

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn render_frame(spec: &SceneSpec, camera: &RigidMotion, objects: &[RigidMotion]) -> Result<GroundTruthFrame> {
    let (h, w, ch) = (spec.height, spec.width, spec.channels);
    let plane = spec.plane_rotation()?;
    // Background plane expressed in the camera frame: points X with n.X = offset.
    let to_plane = compose(&plane.inverse(), camera);
    let rot = to_plane.rotation();
    let origin_plane = to_plane.translation();
    // In plane coordinates the plane is z = n . (0, 0, distance).
    let offset = plane.rotation()[2][2] * spec.background.distance - origin_plane[2];
    if offset.abs() < 1e-9 {
        return Err(Error::DegenerateScene("background plane passes through the camera".into()));
    }
    let to_object: Vec<RigidMotion> = objects.iter().map(|o| compose(&o.inverse(), camera)).collect();

    let mut image = Vec::with_capacity(h * w * ch);
    let mut depth = Vec::with_capacity(h * w);
    let mut masks = vec![vec![0.0; h * w]; objects.len()];
    for y in 0..h {
        for x in 0..w {
            let r = spec.intrinsics.ray(x as f64, y as f64);
            let dir_plane = [dot(&rot[0], &r), dot(&rot[1], &r), dot(&rot[2], &r)];
            if dir_plane[2].abs() < 1e-15 || offset / dir_plane[2] <= NEAR {
                return Err(Error::DegenerateScene(format!("pixel ({x}, {y}) does not see the background plane")));
            }
            let mut best = offset / dir_plane[2];
            let mut hit: (usize, Vec3) = (0, [origin_plane[0] + best * dir_plane[0], origin_plane[1] + best * dir_plane[1], 0.0]);
            for (i, (m, o)) in to_object.iter().zip(&spec.objects).enumerate() {
                let origin = m.translation();
                let dir = m.transform_point(&r);
                let dir = [dir[0] - origin[0], dir[1] - origin[1], dir[2] - origin[2]];
                if let Some(t) = o.shape.intersect(&origin, &dir) {
                    if t < best {
                        best = t;
                        hit = (i + 1, [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]]);
                    }
                }
            }
            let texture = match hit.0 {
                0 => &spec.background.texture,
                i => {
                    masks[i - 1][y * w + x] = 1.0;
                    &spec.objects[i - 1].texture
                }
            };
            for c in 0..ch {
                image.push(texture.sample(c, &hit.1));
            }
            depth.push(best);
        }
    }
    Ok(GroundTruthFrame {
        image: ImageBuffer::from_vec(h, w, ch, image)?,
        depth: DepthField::from_vec(h, w, depth)?,
        camera_pose_world: *camera,
        object_masks: masks.into_iter().map(|m| MaskField::from_vec(h, w, m)).collect::<Result<_>>()?,
        object_poses_world: objects.to_vec(),
    })
}

/// Renders every frame of `spec`.
pub fn render_sequence(spec: &SceneSpec) -> Result<Vec<GroundTruthFrame>> {
    spec.validate()?;
    let cameras = spec.camera_trajectory()?;
    let objects = spec.object_trajectories()?;
    for (t, (cam, objs)) in cameras.iter().zip(&objects).enumerate() {
        let world_to_cam = cam.inverse();
        for (i, (pose, o)) in objs.iter().zip(&spec.objects).enumerate() {
            let to_cam = compose(&world_to_cam, pose);
            if o.shape.corners().iter().any(|c| to_cam.transform_point(c)[2] <= NEAR) {
                return Err(Error::DegenerateScene(format!("object {i} is not in front of the camera in frame {t}")));
            }
        }
    }
    cameras.iter().zip(&objects).map(|(c, o)| render_frame(spec, c, o)).collect()
}

/// Pose taking target-camera points to source-camera points for static geometry.
pub fn relative_pose(source: &GroundTruthFrame, target: &GroundTruthFrame) -> RigidMotion {
    compose(&source.camera_pose_world.inverse(), &target.camera_pose_world)
}

/// Per-pixel motion of the surface seen at each target pixel, as twists.
pub fn gt_pose_field(source: &GroundTruthFrame, target: &GroundTruthFrame) -> Result<PoseField> {
    let motions = pixel_motions(source, target);
    let twists: Vec<Twist> = motions.iter().map(motion_to_twist).collect::<Vec<_>>();
    let labels = target.labels();
    let per_pixel: Vec<Twist> = labels.iter().map(|l| twists[*l]).collect();
    PoseField::from_twists(target.depth.height(), target.depth.width(), &per_pixel)
}

/// Motion per label: background first, then one per object.
fn pixel_motions(source: &GroundTruthFrame, target: &GroundTruthFrame) -> Vec<RigidMotion> {
    let src_inv = source.camera_pose_world.inverse();
    let mut out = vec![relative_pose(source, target)];
    for (os, ot) in source.object_poses_world.iter().zip(&target.object_poses_world) {
        let m = compose(&compose(&src_inv, os), &compose(&ot.inverse(), &target.camera_pose_world));
        out.push(m);
    }
    out
}

/// `1` where the target pixel is seen in the source by the same surface, with
/// every pixel of its bilinear footprint on that surface at consistent depth.
pub fn visibility_mask(source: &GroundTruthFrame, target: &GroundTruthFrame, k: &Intrinsics) -> Result<MaskField> {
    let (h, w) = (target.depth.height(), target.depth.width());
    let motions = pixel_motions(source, target);
    let tgt_labels = target.labels();
    let src_labels = source.labels();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let label = tgt_labels[i];
            let r = k.ray(x as f64, y as f64);
            let d = target.depth.data()[i];
            let p = motions[label].transform_point(&[r[0] * d, r[1] * d, d]);
            if p[2] <= NEAR {
                continue;
            }
            let (u, v) = k.project(&p);
            let (fx, fy) = (floor(u), floor(v));
            if fx < 0.0 || fy < 0.0 || fx + 1.0 > (w - 1) as f64 || fy + 1.0 > (h - 1) as f64 {
                continue;
            }
            let (x0, y0) = (fx as usize, fy as usize);
            let consistent = [(0, 0), (1, 0), (0, 1), (1, 1)].iter().all(|(dx, dy)| {
                let j = (y0 + dy) * w + x0 + dx;
                src_labels[j] == label && (source.depth.data()[j] - p[2]).abs() <= 0.05 * p[2]
            });
            if consistent {
                out[i] = 1.0;
            }
        }
    }
    MaskField::from_vec(h, w, out)
}

/// Mean L1 error of warping each frame onto its successor with ground-truth
/// depth and camera motion, pooled over valid, mutually visible pixels.
pub fn consistency_check(frames: &[GroundTruthFrame], k: &Intrinsics) -> Result<f64> {
    let mut num = 0.0;
    let mut mass = 0.0;
    for pair in frames.windows(2) {
        let (src, tgt) = (&pair[0], &pair[1]);
        let out = synthesize(&src.image, &relative_pose(src, tgt), &tgt.depth, k)?;
        let weight = out.validity.product(&visibility_mask(src, tgt, k)?)?;
        let m: f64 = weight.data().iter().sum();
        if m > 0.0 {
            num += masked_l1(&tgt.image, &out.image, &weight)? * m;
            mass += m;
        }
    }
    Ok(if mass > 0.0 { num / mass } else { 0.0 })
}

/// Default desk-scale camera: 64x64 pixels, focal length 60.
pub fn desk_intrinsics() -> Intrinsics {
    Intrinsics { fx: 60.0, fy: 60.0, cx: 31.5, cy: 31.5 }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = sqrt(dot(&v, &v));
        if n > 0.1 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// A tilted textured plane seen by a camera translating 1-5% of the plane
/// distance per frame and rotating by at most about half a degree per axis.
pub fn random_rigid_scene(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7269_6769_6400);
    let distance = rng.gen_range(8.0..10.0);
    let tilt = [rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25)];
    let frame_count = 5;
    let camera_twists = (0..frame_count - 1)
        .map(|_| {
            let dir = unit_vector(&mut rng);
            let mag = rng.gen_range(0.01..0.05) * distance;
            [
                dir[0] * mag,
                dir[1] * mag,
                dir[2] * mag,
                rng.gen_range(-0.008..0.008),
                rng.gen_range(-0.008..0.008),
                rng.gen_range(-0.008..0.008),
            ]
        })
        .collect();
    SceneSpec {
        height: 64,
        width: 64,
        channels: 3,
        intrinsics: desk_intrinsics(),
        frame_count,
        camera_twists,
        background: BackgroundSpec { distance, tilt, texture: TextureSpec::new(rng.gen()) },
        objects: Vec::new(),
    }
}

/// A camera translating sideways in front of a plane at depth 8-10 while one
/// box at depth 4-6, covering about a tenth of the image, spins in the image
/// plane and moves perpendicular to the camera motion.
pub fn moving_object_scene(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f62_6a65_6374);
    let k = desk_intrinsics();
    let distance = rng.gen_range(8.0..10.0);
    let depth = rng.gen_range(4.0..6.0);
    let half_depth = 0.25;
    // Front face at `depth`, about 20 pixels across.
    let half = 10.0 * depth / k.fx;
    let cx = rng.gen_range(-6.0..6.0) * depth / k.fx;
    let cy = rng.gen_range(-6.0..6.0) * depth / k.fy;
    let sign = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let horizontal = rng.gen_bool(0.5);
    let (along, across) = if horizontal { (0, 1) } else { (1, 0) };
    // Background image motion of about one pixel per frame.
    let mut camera = [0.0; 6];
    camera[along] = sign(&mut rng) * rng.gen_range(0.8..1.2) * distance / k.fx;
    let mut twist = [0.0; 6];
    twist[across] = sign(&mut rng) * rng.gen_range(1.0..2.0) * depth / k.fx;
    // In-plane spin moving the box corners by about one pixel per frame.
    twist[5] = sign(&mut rng) * rng.gen_range(0.06..0.1);
    SceneSpec {
        height: 64,
        width: 64,
        channels: 3,
        intrinsics: k,
        frame_count: 5,
        camera_twists: vec![camera],
        background: BackgroundSpec { distance, tilt: [0.0, 0.0], texture: TextureSpec::new(rng.gen()) },
        objects: vec![ObjectSpec {
            shape: Shape::Box { half_extents: [half, half, half_depth] },
            initial_pose: [cx, cy, depth + half_depth, 0.0, 0.0, 0.0],
            twist,
            texture: TextureSpec { scale: 2.0, ..TextureSpec::new(rng.gen()) },
        }],
    }
}

#[cfg(test)]
mod tests {
    extern crate std;
    use super::*;

    fn plane_only(distance: f64, twist: Twist) -> SceneSpec {
        SceneSpec {
            height: 32,
            width: 32,
            channels: 3,
            intrinsics: Intrinsics { fx: 30.0, fy: 30.0, cx: 15.5, cy: 15.5 },
            frame_count: 3,
            camera_twists: vec![twist],
            background: BackgroundSpec { distance, tilt: [0.0, 0.0], texture: TextureSpec::new(11) },
            objects: Vec::new(),
        }
    }

    #[test]
    fn static_scene_frames_identical() {
        let frames = render_sequence(&plane_only(5.0, [0.0; 6])).unwrap();
        assert_eq!(frames[0], frames[1]);
        assert_eq!(frames[1], frames[2]);
        assert!(consistency_check(&frames, &plane_only(5.0, [0.0; 6]).intrinsics).unwrap() < 1e-12);
    }

    #[test]
    fn fronto_parallel_plane_depth_is_constant() {
        let frames = render_sequence(&plane_only(7.5, [0.0; 6])).unwrap();
        assert!(frames[0].depth.data().iter().all(|d| (d - 7.5).abs() < 1e-12));
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = moving_object_scene(4);
        assert_eq!(render_sequence(&spec).unwrap(), render_sequence(&spec).unwrap());
    }

    #[test]
    fn texture_stays_in_unit_range() {
        let t = TextureSpec::new(3);
        for i in 0..500 {
            let p = [i as f64 * 0.37, i as f64 * -0.11, i as f64 * 0.05];
            let v = t.sample(i % 3, &p);
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn translating_object_moves_right() {
        let mut spec = plane_only(10.0, [0.0; 6]);
        spec.frame_count = 4;
        spec.objects.push(ObjectSpec {
            shape: Shape::Quad { half_extents: [0.8, 0.8] },
            initial_pose: [-0.5, 0.0, 5.0, 0.0, 0.0, 0.0],
            twist: [0.1, 0.0, 0.0, 0.0, 0.0, 0.0],
            texture: TextureSpec::new(5),
        });
        let frames = render_sequence(&spec).unwrap();
        let centroid = |m: &MaskField| {
            let (mut sx, mut n) = (0.0, 0.0);
            for (i, v) in m.data().iter().enumerate() {
                sx += v * (i % 32) as f64;
                n += v;
            }
            sx / n
        };
        let xs: Vec<f64> = frames.iter().map(|f| centroid(&f.object_masks[0])).collect();
        assert!(xs.windows(2).all(|p| p[1] > p[0]), "{xs:?}");
        // Depth at the object equals its distance; elsewhere the plane.
        let f = &frames[0];
        for (m, d) in f.object_masks[0].data().iter().zip(f.depth.data()) {
            let expect = if *m > 0.5 { 5.0 } else { 10.0 };
            assert!((d - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn plane_through_camera_rejected() {
        let spec = plane_only(1.0, [0.0, 0.0, 0.6, 0.0, 0.0, 0.0]);
        assert!(matches!(render_sequence(&spec), Err(Error::DegenerateScene(_))));
        let mut behind = plane_only(10.0, [0.0; 6]);
        behind.objects.push(ObjectSpec {
            shape: Shape::Quad { half_extents: [1.0, 1.0] },
            initial_pose: [0.0, 0.0, -1.0, 0.0, 0.0, 0.0],
            twist: [0.0; 6],
            texture: TextureSpec::new(1),
        });
        assert!(matches!(render_sequence(&behind), Err(Error::DegenerateScene(_))));
    }

    #[test]
    fn small_translation_is_consistent() {
        let spec = plane_only(6.0, [0.05, -0.03, 0.04, 0.0, 0.0, 0.0]);
        let frames = render_sequence(&spec).unwrap();
        let e = consistency_check(&frames, &spec.intrinsics).unwrap();
        std::eprintln!("CONSISTENCY {e}");
        assert!(e < 1e-3);
    }

    #[test]
    fn masks_are_disjoint_and_match_labels() {
        let frames = render_sequence(&moving_object_scene(9)).unwrap();
        for f in &frames {
            let area: f64 = f.object_masks[0].data().iter().sum();
            assert!(area > 200.0 && area < 700.0, "area {area}");
        }
        let pose = gt_pose_field(&frames[0], &frames[1]).unwrap();
        let labels = frames[1].labels();
        let i = labels.iter().position(|l| *l == 1).unwrap();
        let j = labels.iter().position(|l| *l == 0).unwrap();
        let bg = motion_to_twist(&relative_pose(&frames[0], &frames[1]));
        assert_eq!(pose.data()[6 * j..6 * j + 6], bg);
        assert!(pose.data()[6 * i..6 * i + 6].iter().zip(&bg).any(|(a, b)| (a - b).abs() > 1e-3));
    }
}
