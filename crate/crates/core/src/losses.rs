//! Photometric objectives, regularizers and their analytic gradients.
//!
//! The rigid photometric loss compares the target with a single-pose synthesis
//! under a per-pixel weight. The non-rigid loss tiles every image-sized input and
//! evaluates the rigid loss independently per patch, with the pose read from the
//! pose field at the patch center. The segmented loss routes foreground pixels
//! (weight `M`) through the non-rigid model and background pixels (weight `1 - M`)
//! through a rigid model whose pose is the background-weighted mean of the pose
//! field.
//!
//! Every evaluation can also append a discrete signature of its non-smooth
//! decisions (bilinear cells, validity, residual signs, stencil signs, sort order)
//! so a finite-difference checker can tell when a step straddles a kink.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DepthField, GradientBundle, ImageBuffer, MaskField, PoseField, Twist};
use crate::geometry::{twist_to_motion, twist_to_motion_with_jacobian, Intrinsics, MotionJacobian, RigidMotion};
use crate::math::floor;
use crate::tiling::{pose_at_patch_centers, tile, untile_accumulate, PatchGeometry, PatchSet};
use crate::warp::warp_pixel;

/// Guards the mask-mass normalization against an all-zero weight.
pub const NORMALIZATION_EPSILON: f64 = 1e-8;

/// Which objective [`total_objective`] composes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Rigid,
    Nonrigid,
    Segmented,
}

/// How the weighted L1 photometric sum is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhotometricNormalization {
    /// Divide by `channels * sum(weight) + eps`.
    MaskMass,
    /// Plain `sum_k M_k |v_k|`.
    Unnormalized,
}

/// Denominator of the background pose average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundAveraging {
    /// `sum (1 - M) P / sum (1 - M)`.
    BackgroundMass,
    /// `sum (1 - M) P / (w h)`.
    PixelCount,
}

/// A sliding-window configuration for the non-rigid loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchConfig {
    pub k: usize,
    pub s: usize,
}

impl PatchConfig {
    pub const fn new(k: usize, s: usize) -> Self {
        Self { k, s }
    }
}

/// Weights and switches of the full objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub mode: LossMode,
    pub lambda_reg: f64,
    pub tv_weight_depth: f64,
    pub tv_weight_pose: f64,
    pub foreground_fraction: f64,
    pub patch_configs: Vec<PatchConfig>,
    pub normalization: PhotometricNormalization,
    pub background_averaging: BackgroundAveraging,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mode: LossMode::Segmented,
            lambda_reg: 0.1,
            tv_weight_depth: 0.01,
            tv_weight_pose: 0.01,
            foreground_fraction: 0.10,
            patch_configs: vec![PatchConfig::new(8, 4), PatchConfig::new(16, 8)],
            normalization: PhotometricNormalization::MaskMass,
            background_averaging: BackgroundAveraging::BackgroundMass,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_reg, self.tv_weight_depth, self.tv_weight_pose];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0, got {weights:?}")));
        }
        if !(self.foreground_fraction > 0.0 && self.foreground_fraction < 1.0) {
            return Err(Error::Config(format!("foreground_fraction must lie in (0, 1), got {}", self.foreground_fraction)));
        }
        if self.mode != LossMode::Rigid && self.patch_configs.is_empty() {
            return Err(Error::Config("non-rigid modes need at least one patch config".into()));
        }
        if self.patch_configs.iter().any(|p| p.k == 0 || p.s == 0) {
            return Err(Error::Config("patch size and stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// Itemized objective value. Terms are unweighted; `total` applies the weights.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub photometric_rigid: f64,
    pub photometric_nonrigid: f64,
    pub mask_reg: f64,
    pub area_reg: f64,
    pub tv_depth: f64,
    pub tv_pose: f64,
    pub valid_pixel_fraction: f64,
}

impl LossReport {
    pub fn terms(&self) -> [(&'static str, f64); 6] {
        [
            ("photometric_rigid", self.photometric_rigid),
            ("photometric_nonrigid", self.photometric_nonrigid),
            ("mask_reg", self.mask_reg),
            ("area_reg", self.area_reg),
            ("tv_depth", self.tv_depth),
            ("tv_pose", self.tv_pose),
        ]
    }

    pub fn photometric(&self) -> f64 {
        self.photometric_rigid + self.photometric_nonrigid
    }

    /// The weighted sum of the terms under `config`.
    pub fn weighted_total(&self, config: &LossConfig) -> f64 {
        self.photometric_rigid
            + self.photometric_nonrigid
            + config.lambda_reg * (self.mask_reg + self.area_reg)
            + config.tv_weight_depth * self.tv_depth
            + config.tv_weight_pose * self.tv_pose
    }
}

/// Everything the objective reads for one source/target pair.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub source: &'a ImageBuffer,
    pub target: &'a ImageBuffer,
    pub pose_field: &'a PoseField,
    pub depth: &'a DepthField,
    pub mask: &'a MaskField,
    pub intrinsics: &'a Intrinsics,
}

impl LossInputs<'_> {
    fn check_shapes(&self) -> Result<()> {
        let (h, w) = (self.target.height(), self.target.width());
        let ok = self.source.same_shape(self.target)
            && (self.depth.height(), self.depth.width()) == (h, w)
            && (self.mask.height(), self.mask.width()) == (h, w)
            && (self.pose_field.height(), self.pose_field.width()) == (h, w);
        if !ok {
            return Err(Error::ShapeMismatch(format!("loss inputs must all be {h}x{w}")));
        }
        Ok(())
    }
}

/// Collector for the discrete state of an evaluation.
pub type Signature = Vec<i64>;

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
fn sign_code(v: f64) -> i64 {
    sign(v) as i64
}

/// `sum weight * |a - b| / (channels * sum weight + eps)` over pixels and channels.
pub fn masked_l1(a: &ImageBuffer, b: &ImageBuffer, weight: &MaskField) -> Result<f64> {
    if !a.same_shape(b) || (weight.height(), weight.width()) != (a.height(), a.width()) {
        return Err(Error::ShapeMismatch("masked_l1 operands".into()));
    }
    let ch = a.channels();
    let mut num = 0.0;
    let mut mass = 0.0;
    for (i, w) in weight.data().iter().enumerate() {
        let e: f64 = (0..ch).map(|c| (a.data()[i * ch + c] - b.data()[i * ch + c]).abs()).sum();
        num += w * e;
        mass += w;
    }
    Ok(num / (ch as f64 * mass + NORMALIZATION_EPSILON))
}

/// Single-pose photometric term with gradients with respect to depth, twist and weight.
struct Photometric {
    value: f64,
    valid: usize,
    evaluated: usize,
    d_depth: Vec<f64>,
    d_twist: Twist,
    d_weight: Vec<f64>,
}

/// Evaluates `|I_t - Psi(I_s, P, D)|_{weight * validity}` on a `k`-calibrated view.
///
/// `depth` and `weight` are row-major planes matching `target`. Gradients are
/// only filled when `jac` is given.
#[allow(clippy::too_many_arguments)]
fn photometric(
    source: &ImageBuffer,
    target: &ImageBuffer,
    depth: &[f64],
    weight: &[f64],
    k: &Intrinsics,
    motion: &RigidMotion,
    jac: Option<&MotionJacobian>,
    normalization: PhotometricNormalization,
    mut sig: Option<&mut Signature>,
) -> Photometric {
    let (h, w, ch) = (target.height(), target.width(), target.channels());
    let n = h * w;
    let want_grad = jac.is_some();
    let zero_jac;
    let jac = match jac {
        Some(j) => j,
        None => {
            zero_jac = MotionJacobian { motion: *motion, d_rotation: [[[0.0; 3]; 3]; 3], d_translation: [[0.0; 3]; 6] };
            &zero_jac
        }
    };
    let mut pixels = Vec::with_capacity(n);
    let mut errors = vec![0.0; n];
    let mut num = 0.0;
    let mut mass = 0.0;
    let mut valid = 0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let px = warp_pixel(k, jac, x as f64, y as f64, depth[i], source.width(), source.height());
            if let Some(s) = sig.as_deref_mut() {
                s.push(floor(px.u) as i64);
                s.push(floor(px.v) as i64);
                s.push(px.footprint.is_some() as i64);
            }
            if let Some(fp) = px.footprint {
                valid += 1;
                let mut e = 0.0;
                for c in 0..ch {
                    let r = target.get(x, y, c) - fp.value(source, c);
                    if let Some(s) = sig.as_deref_mut() {
                        s.push(sign_code(r));
                    }
                    e += r.abs();
                }
                errors[i] = e;
                num += weight[i] * e;
                mass += weight[i];
            }
            pixels.push(px);
        }
    }
    let denom = match normalization {
        PhotometricNormalization::MaskMass => ch as f64 * mass + NORMALIZATION_EPSILON,
        PhotometricNormalization::Unnormalized => 1.0,
    };
    let value = num / denom;
    let mut out = Photometric { value, valid, evaluated: n, d_depth: Vec::new(), d_twist: [0.0; 6], d_weight: Vec::new() };
    if !want_grad {
        return out;
    }
    out.d_depth = vec![0.0; n];
    out.d_weight = vec![0.0; n];
    let mass_term = match normalization {
        PhotometricNormalization::MaskMass => ch as f64 * value,
        PhotometricNormalization::Unnormalized => 0.0,
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let px = &pixels[i];
            let Some(fp) = px.footprint else { continue };
            out.d_weight[i] = (errors[i] - mass_term) / denom;
            let scale = -weight[i] / denom;
            if scale == 0.0 {
                continue;
            }
            let (mut gu, mut gv) = (0.0, 0.0);
            for c in 0..ch {
                let r = target.get(x, y, c) - fp.value(source, c);
                let g = scale * sign(r);
                if g != 0.0 {
                    let (iu, iv) = fp.gradient(source, c);
                    gu += g * iu;
                    gv += g * iv;
                }
            }
            out.d_depth[i] = gu * px.du_ddepth + gv * px.dv_ddepth;
            for j in 0..6 {
                out.d_twist[j] += gu * px.du_dtwist[j] + gv * px.dv_dtwist[j];
            }
        }
    }
    out
}

/// Rigid photometric loss `|I_t - Psi(I_s, P, D)|_{M * validity}`.
pub fn loss_rigid(
    source: &ImageBuffer,
    target: &ImageBuffer,
    pose: &RigidMotion,
    depth: &DepthField,
    mask: &MaskField,
    k: &Intrinsics,
) -> Result<LossReport> {
    let pf = PoseField::zeros(target.height(), target.width())?;
    LossInputs { source, target, pose_field: &pf, depth, mask, intrinsics: k }.check_shapes()?;
    let p = photometric(source, target, depth.data(), mask.data(), k, pose, None, PhotometricNormalization::MaskMass, None);
    Ok(LossReport {
        total: p.value,
        photometric_rigid: p.value,
        valid_pixel_fraction: p.valid as f64 / p.evaluated as f64,
        ..LossReport::default()
    })
}

/// `mean (M - 1)^2`.
pub fn loss_mask_reg(mask: &MaskField) -> f64 {
    let d = mask.data();
    d.iter().map(|m| (m - 1.0) * (m - 1.0)).sum::<f64>() / d.len() as f64
}

fn mask_reg_grad(mask: &[f64]) -> Vec<f64> {
    let n = mask.len() as f64;
    mask.iter().map(|m| 2.0 * (m - 1.0) / n).collect()
}

/// Descending stable order of the mask values; ties keep pixel-index order.
fn descending_order(mask: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..mask.len()).collect();
    order.sort_by(|&a, &b| mask[b].partial_cmp(&mask[a]).expect("mask values are finite"));
    order
}

/// `mean (sort_desc(vec M) - u)^2`, with `u` holding `floor(fraction * w h)` leading ones.
pub fn loss_area_reg(mask: &MaskField, fraction: f64) -> f64 {
    area_reg(mask.data(), fraction, None).0
}

/// Value and gradient of the area term. Pixels with tied values share the mean
/// of their ranks' targets, the midpoint of the one-sided derivatives, so ties
/// never favor lower pixel indices.
fn area_reg(mask: &[f64], fraction: f64, sig: Option<&mut Signature>) -> (f64, Vec<f64>) {
    let n = mask.len();
    let ones = floor(fraction * n as f64) as usize;
    let order = descending_order(mask);
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let v = mask[order[start]];
        let mut end = start + 1;
        while end < n && mask[order[end]] == v {
            end += 1;
        }
        let tied_ones = ones.clamp(start, end) - start;
        let target = tied_ones as f64 / (end - start) as f64;
        for (rank, &p) in order.iter().enumerate().take(end).skip(start) {
            let d = v - if rank < ones { 1.0 } else { 0.0 };
            value += d * d;
            grad[p] = 2.0 * (v - target) / n as f64;
        }
        start = end;
    }
    if let Some(s) = sig {
        s.extend(order.iter().map(|&p| p as i64));
    }
    (value / n as f64, grad)
}

/// Second-order total variation of a row-major scalar plane: the mean of
/// `|f(x+1) - 2 f(x) + f(x-1)|` along rows plus the same mean along columns.
pub fn tv_second_order(values: &[f64], height: usize, width: usize) -> Result<f64> {
    if height < 3 || width < 3 || values.len() != height * width {
        return Err(Error::ShapeMismatch(format!(
            "second-order TV needs a plane of at least 3x3, got {height}x{width} with {} values",
            values.len()
        )));
    }
    Ok(tv_eval(values, height, width, None, None))
}

fn tv_eval(values: &[f64], h: usize, w: usize, grad: Option<&mut [f64]>, mut sig: Option<&mut Signature>) -> f64 {
    if h < 3 || w < 3 {
        return 0.0;
    }
    let nh = (h * (w - 2)) as f64;
    let nv = ((h - 2) * w) as f64;
    let mut value = 0.0;
    let mut grad = grad;
    for y in 0..h {
        for x in 1..w - 1 {
            let i = y * w + x;
            let s = values[i + 1] - 2.0 * values[i] + values[i - 1];
            value += s.abs() / nh;
            if let Some(sg) = sig.as_deref_mut() {
                sg.push(sign_code(s));
            }
            if let Some(g) = grad.as_deref_mut() {
                let d = sign(s) / nh;
                g[i + 1] += d;
                g[i] -= 2.0 * d;
                g[i - 1] += d;
            }
        }
    }
    for y in 1..h - 1 {
        for x in 0..w {
            let i = y * w + x;
            let s = values[i + w] - 2.0 * values[i] + values[i - w];
            value += s.abs() / nv;
            if let Some(sg) = sig.as_deref_mut() {
                sg.push(sign_code(s));
            }
            if let Some(g) = grad.as_deref_mut() {
                let d = sign(s) / nv;
                g[i + w] += d;
                g[i] -= 2.0 * d;
                g[i - w] += d;
            }
        }
    }
    value
}

/// Background-weighted mean of the pose field.
pub fn background_pose(pose_field: &PoseField, mask: &MaskField) -> Result<Twist> {
    background_pose_with(pose_field, mask, BackgroundAveraging::BackgroundMass)
}

pub fn background_pose_with(pose_field: &PoseField, mask: &MaskField, averaging: BackgroundAveraging) -> Result<Twist> {
    background_pose_raw(pose_field.data(), mask.data(), averaging)
}

fn background_pose_raw(pose: &[f64], mask: &[f64], averaging: BackgroundAveraging) -> Result<Twist> {
    let mass: f64 = mask.iter().map(|m| 1.0 - m).sum();
    if mass <= NORMALIZATION_EPSILON {
        return Err(Error::EmptyBackground);
    }
    let denom = match averaging {
        BackgroundAveraging::BackgroundMass => mass,
        BackgroundAveraging::PixelCount => mask.len() as f64,
    };
    let mut out = [0.0; 6];
    for (m, p) in mask.iter().zip(pose.chunks_exact(6)) {
        for j in 0..6 {
            out[j] += (1.0 - m) * p[j];
        }
    }
    for v in &mut out {
        *v /= denom;
    }
    Ok(out)
}

/// Tiled non-rigid photometric term.
struct NonRigid {
    value: f64,
    valid: usize,
    evaluated: usize,
    d_depth: Vec<f64>,
    d_pose: Vec<f64>,
    d_mask: Vec<f64>,
}

fn nonrigid(
    inputs: &LossInputs<'_>,
    weight: &MaskField,
    patch_configs: &[PatchConfig],
    normalization: PhotometricNormalization,
    want_grad: bool,
    mut sig: Option<&mut Signature>,
) -> Result<NonRigid> {
    let (h, w) = (inputs.target.height(), inputs.target.width());
    let mut out = NonRigid {
        value: 0.0,
        valid: 0,
        evaluated: 0,
        d_depth: vec![0.0; if want_grad { h * w } else { 0 }],
        d_pose: vec![0.0; if want_grad { h * w * 6 } else { 0 }],
        d_mask: vec![0.0; if want_grad { h * w } else { 0 }],
    };
    for pc in patch_configs {
        let geometry = PatchGeometry::new(h, w, pc.k, pc.s)?;
        let src = tile(inputs.source, pc.k, pc.s)?;
        let tgt = tile(inputs.target, pc.k, pc.s)?;
        let depth = tile(inputs.depth, pc.k, pc.s)?;
        let mask = tile(weight, pc.k, pc.s)?;
        let centers = pose_at_patch_centers(inputs.pose_field, pc.k, pc.s)?;
        let regions = geometry.patch_count() as f64;
        let mut g_depth = PatchSet::zeros_like(geometry, 1);
        let mut g_mask = PatchSet::zeros_like(geometry, 1);
        for (p, twist) in centers.iter().enumerate() {
            let (ox, oy) = geometry.origin(p);
            let k_patch = inputs.intrinsics.cropped(ox as f64, oy as f64);
            let jac = twist_to_motion_with_jacobian(twist)?;
            let r = photometric(
                &src.patch_image(p),
                &tgt.patch_image(p),
                depth.patch_plane(p),
                mask.patch_plane(p),
                &k_patch,
                &jac.motion,
                want_grad.then_some(&jac),
                normalization,
                sig.as_deref_mut(),
            );
            out.value += r.value / regions;
            out.valid += r.valid;
            out.evaluated += r.evaluated;
            if want_grad {
                let scaled = |v: &[f64]| v.iter().map(|g| g / regions).collect::<Vec<_>>();
                g_depth.set_patch_interleaved(p, &scaled(&r.d_depth));
                g_mask.set_patch_interleaved(p, &scaled(&r.d_weight));
                let (cx, cy) = geometry.center(p);
                let base = (cy * w + cx) * 6;
                for j in 0..6 {
                    out.d_pose[base + j] += r.d_twist[j] / regions;
                }
            }
        }
        if want_grad {
            for (acc, g) in out.d_depth.iter_mut().zip(untile_accumulate(&g_depth).data) {
                *acc += g;
            }
            for (acc, g) in out.d_mask.iter_mut().zip(untile_accumulate(&g_mask).data) {
                *acc += g;
            }
        }
    }
    Ok(out)
}

/// Tiled locally-rigid loss, summed over `patch_configs`.
pub fn loss_nonrigid(
    source: &ImageBuffer,
    target: &ImageBuffer,
    pose_field: &PoseField,
    depth: &DepthField,
    mask: &MaskField,
    k: &Intrinsics,
    patch_configs: &[PatchConfig],
) -> Result<LossReport> {
    let inputs = LossInputs { source, target, pose_field, depth, mask, intrinsics: k };
    inputs.check_shapes()?;
    let r = nonrigid(&inputs, mask, patch_configs, PhotometricNormalization::MaskMass, false, None)?;
    Ok(LossReport {
        total: r.value,
        photometric_nonrigid: r.value,
        valid_pixel_fraction: r.valid as f64 / r.evaluated.max(1) as f64,
        ..LossReport::default()
    })
}

/// Foreground through the tiled model, background through the rigid model at the background pose.
pub fn loss_segmented(inputs: &LossInputs<'_>, config: &LossConfig) -> Result<LossReport> {
    inputs.check_shapes()?;
    config.validate()?;
    let (report, _) = evaluate(inputs, &LossConfig { mode: LossMode::Segmented, ..config.clone() }, false, None)?;
    Ok(LossReport { total: report.photometric_rigid + report.photometric_nonrigid, area_reg: 0.0, tv_depth: 0.0, tv_pose: 0.0, ..report })
}

/// The configured objective, itemized.
pub fn total_objective(inputs: &LossInputs<'_>, config: &LossConfig) -> Result<LossReport> {
    evaluate(inputs, config, false, None).map(|(r, _)| r)
}

/// Analytic gradient of [`total_objective`] with respect to depth, pose field and mask.
pub fn total_objective_grad(inputs: &LossInputs<'_>, config: &LossConfig) -> Result<GradientBundle> {
    objective_and_gradient(inputs, config).map(|(_, g)| g)
}

/// Value and gradient in one pass.
pub fn objective_and_gradient(inputs: &LossInputs<'_>, config: &LossConfig) -> Result<(LossReport, GradientBundle)> {
    let (report, grad) = evaluate(inputs, config, true, None)?;
    Ok((report, grad.expect("gradient requested")))
}

/// Value of [`total_objective`] plus the discrete signature of its non-smooth decisions.
pub fn objective_signature(inputs: &LossInputs<'_>, config: &LossConfig) -> Result<(f64, Signature)> {
    let mut sig = Signature::new();
    let (report, _) = evaluate(inputs, config, false, Some(&mut sig))?;
    Ok((report.total, sig))
}

fn evaluate(
    inputs: &LossInputs<'_>,
    config: &LossConfig,
    want_grad: bool,
    mut sig: Option<&mut Signature>,
) -> Result<(LossReport, Option<GradientBundle>)> {
    inputs.check_shapes()?;
    config.validate()?;
    let (h, w) = (inputs.target.height(), inputs.target.width());
    let n = h * w;
    let mask = inputs.mask.data();
    let pose = inputs.pose_field.data();
    let mut report = LossReport::default();
    let mut grad = GradientBundle::zeros(h, w);
    let (mut valid, mut evaluated) = (0usize, 0usize);

    // Photometric terms.
    match config.mode {
        LossMode::Rigid => {
            let twist = background_pose_raw(pose, &vec![0.0; n], BackgroundAveraging::BackgroundMass)?;
            let jac = twist_to_motion_with_jacobian(&twist)?;
            let r = photometric(
                inputs.source,
                inputs.target,
                inputs.depth.data(),
                mask,
                inputs.intrinsics,
                &jac.motion,
                want_grad.then_some(&jac),
                config.normalization,
                sig.as_deref_mut(),
            );
            report.photometric_rigid = r.value;
            valid += r.valid;
            evaluated += r.evaluated;
            if want_grad {
                grad.d_depth.copy_from_slice(&r.d_depth);
                grad.d_mask.copy_from_slice(&r.d_weight);
                for px in grad.d_pose.chunks_exact_mut(6) {
                    for j in 0..6 {
                        px[j] = r.d_twist[j] / n as f64;
                    }
                }
            }
        }
        LossMode::Nonrigid | LossMode::Segmented => {
            let r = nonrigid(inputs, inputs.mask, &config.patch_configs, config.normalization, want_grad, sig.as_deref_mut())?;
            report.photometric_nonrigid = r.value;
            valid += r.valid;
            evaluated += r.evaluated;
            if want_grad {
                grad.d_depth = r.d_depth;
                grad.d_pose = r.d_pose;
                grad.d_mask = r.d_mask;
            }
        }
    }
    if config.mode == LossMode::Segmented {
        let background = inputs.mask.complement();
        let p_bg = background_pose_raw(pose, mask, config.background_averaging)?;
        let jac = twist_to_motion_with_jacobian(&p_bg)?;
        let r = photometric(
            inputs.source,
            inputs.target,
            inputs.depth.data(),
            background.data(),
            inputs.intrinsics,
            &jac.motion,
            want_grad.then_some(&jac),
            config.normalization,
            sig.as_deref_mut(),
        );
        report.photometric_rigid = r.value;
        valid += r.valid;
        evaluated += r.evaluated;
        if want_grad {
            let denom = match config.background_averaging {
                BackgroundAveraging::BackgroundMass => mask.iter().map(|m| 1.0 - m).sum::<f64>(),
                BackgroundAveraging::PixelCount => n as f64,
            };
            for i in 0..n {
                grad.d_depth[i] += r.d_depth[i];
                // d/dM of the (1 - M) weight.
                grad.d_mask[i] -= r.d_weight[i];
                let p = &pose[i * 6..i * 6 + 6];
                let mut along = 0.0;
                for j in 0..6 {
                    grad.d_pose[i * 6 + j] += r.d_twist[j] * (1.0 - mask[i]) / denom;
                    along += r.d_twist[j]
                        * match config.background_averaging {
                            BackgroundAveraging::BackgroundMass => p[j] - p_bg[j],
                            BackgroundAveraging::PixelCount => p[j],
                        };
                }
                grad.d_mask[i] -= along / denom;
            }
        }
    }

    // Mask regularizers.
    if config.mode == LossMode::Segmented {
        let (value, g) = area_reg(mask, config.foreground_fraction, sig.as_deref_mut());
        report.area_reg = value;
        if want_grad {
            for (acc, d) in grad.d_mask.iter_mut().zip(g) {
                *acc += config.lambda_reg * d;
            }
        }
    } else {
        report.mask_reg = loss_mask_reg(inputs.mask);
        if want_grad {
            for (acc, d) in grad.d_mask.iter_mut().zip(mask_reg_grad(mask)) {
                *acc += config.lambda_reg * d;
            }
        }
    }

    // Smoothness.
    {
        let mut g = want_grad.then(|| vec![0.0; n]);
        report.tv_depth = tv_eval(inputs.depth.data(), h, w, g.as_deref_mut(), sig.as_deref_mut());
        if let Some(g) = g {
            for (acc, d) in grad.d_depth.iter_mut().zip(g) {
                *acc += config.tv_weight_depth * d;
            }
        }
        let mut tv_pose = 0.0;
        for c in 0..6 {
            let plane = inputs.pose_field.channel(c);
            let mut g = want_grad.then(|| vec![0.0; n]);
            tv_pose += tv_eval(&plane, h, w, g.as_deref_mut(), sig.as_deref_mut());
            if let Some(g) = g {
                for (i, d) in g.into_iter().enumerate() {
                    grad.d_pose[i * 6 + c] += config.tv_weight_pose * d;
                }
            }
        }
        report.tv_pose = tv_pose;
    }

    report.total = report.weighted_total(config);
    report.valid_pixel_fraction = if evaluated > 0 { valid as f64 / evaluated as f64 } else { 0.0 };
    if !report.total.is_finite() {
        return Err(Error::NonFinite(format!("objective {:?}", report)));
    }
    Ok((report, want_grad.then_some(grad)))
}

/// The rigid loss for an explicit twist; convenience for callers that hold twists.
pub fn loss_rigid_twist(
    source: &ImageBuffer,
    target: &ImageBuffer,
    twist: &Twist,
    depth: &DepthField,
    mask: &MaskField,
    k: &Intrinsics,
) -> Result<LossReport> {
    loss_rigid(source, target, &twist_to_motion(twist)?, depth, mask, k)
}
