//! Direct first-order fitting of depth, pose field and mask to one frame pair.
//!
//! Depth is held as log-depth and the mask as logits, both clamped to
//! `[-PARAM_LIMIT, PARAM_LIMIT]`, so derived depths are positive and derived
//! mask values lie strictly inside `(0, 1)` at every iteration.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DepthField, ImageBuffer, MaskField, PoseField, Twist};
use crate::geometry::Intrinsics;
use crate::losses::{
    background_pose_with, objective_and_gradient, total_objective, BackgroundAveraging, LossConfig, LossInputs, LossMode, LossReport,
};
use crate::math::{exp, ln, pow, sqrt};

pub const PARAM_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub iterations: usize,
    pub step_size: f64,
    /// Step size multiplier reached at the last iteration, approached geometrically; 1 keeps it constant.
    pub final_step_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub init_depth: f64,
    /// Seeds the optional pose initialization jitter.
    pub seed: u64,
    /// Uniform jitter amplitude added to every initial twist coordinate.
    pub init_pose_noise: f64,
    /// Divide depth by its mean before every loss evaluation.
    pub normalize_depth: bool,
    pub freeze_depth: bool,
    pub freeze_pose: bool,
    pub freeze_mask: bool,
    pub loss: LossConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            step_size: 1e-2,
            final_step_scale: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            init_depth: 1.0,
            seed: 0,
            init_pose_noise: 0.0,
            normalize_depth: true,
            freeze_depth: false,
            freeze_pose: false,
            freeze_mask: false,
            loss: LossConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn mode(&self) -> LossMode {
        self.loss.mode
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("step_size must be >= 0, got {}", self.step_size)));
        }
        if !(self.final_step_scale > 0.0 && self.final_step_scale <= 1.0) {
            return Err(Error::Config(format!("final_step_scale must lie in (0, 1], got {}", self.final_step_scale)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.init_depth > 0.0 && self.init_depth.is_finite()) {
            return Err(Error::Config(format!("init_depth must be > 0, got {}", self.init_depth)));
        }
        if !(self.init_pose_noise >= 0.0 && self.init_pose_noise < 0.5) {
            return Err(Error::Config(format!("init_pose_noise must lie in [0, 0.5), got {}", self.init_pose_noise)));
        }
        self.loss.validate()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

/// Optimized parameters, adaptive-moment accumulators and the loss history.
#[derive(Debug, Clone, PartialEq)]
pub struct FitState {
    height: usize,
    width: usize,
    pub depth_log: Vec<f64>,
    pub pose: Vec<f64>,
    pub mask_logit: Vec<f64>,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    pub iteration: usize,
    pub history: Vec<LossReport>,
}

impl FitState {
    /// Depth `init_depth` everywhere, identity motion, mask 0.5.
    pub fn new(height: usize, width: usize, config: &FitConfig) -> Result<Self> {
        config.validate()?;
        let n = height * width;
        let mut pose = vec![0.0; 6 * n];
        if config.init_pose_noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            for p in pose.iter_mut() {
                *p = rng.gen_range(-config.init_pose_noise..=config.init_pose_noise);
            }
        }
        Ok(Self {
            height,
            width,
            depth_log: vec![ln(config.init_depth); n],
            pose,
            mask_logit: vec![0.0; n],
            first_moment: vec![0.0; 8 * n],
            second_moment: vec![0.0; 8 * n],
            iteration: 0,
            history: Vec::new(),
        })
    }

    pub fn set_depth(&mut self, depth: &DepthField) -> Result<()> {
        self.check_dims(depth.height(), depth.width())?;
        self.depth_log = depth.data().iter().map(|&d| ln(d).clamp(-PARAM_LIMIT, PARAM_LIMIT)).collect();
        Ok(())
    }

    pub fn set_pose_field(&mut self, pose: &PoseField) -> Result<()> {
        self.check_dims(pose.height(), pose.width())?;
        self.pose = pose.data().to_vec();
        Ok(())
    }

    pub fn set_mask(&mut self, mask: &MaskField) -> Result<()> {
        self.check_dims(mask.height(), mask.width())?;
        self.mask_logit = mask.data().iter().map(|m| ln(m / (1.0 - m)).clamp(-PARAM_LIMIT, PARAM_LIMIT)).collect();
        Ok(())
    }

    fn check_dims(&self, h: usize, w: usize) -> Result<()> {
        if (h, w) != (self.height, self.width) {
            return Err(Error::ShapeMismatch(format!("field {h}x{w} vs state {}x{}", self.height, self.width)));
        }
        Ok(())
    }

    /// `exp(depth_log)`, before any normalization.
    pub fn raw_depth(&self) -> Result<DepthField> {
        DepthField::from_vec(self.height, self.width, self.depth_log.iter().map(|&l| exp(l)).collect())
    }

    /// Depth as seen by the loss.
    pub fn depth(&self, config: &FitConfig) -> Result<DepthField> {
        let d = self.raw_depth()?;
        Ok(if config.normalize_depth { d.mean_normalize() } else { d })
    }

    pub fn pose_field(&self) -> Result<PoseField> {
        PoseField::from_vec(self.height, self.width, self.pose.clone())
    }

    pub fn mask(&self) -> Result<MaskField> {
        MaskField::from_vec(self.height, self.width, self.mask_logit.iter().map(|l| sigmoid(*l)).collect())
    }

    /// The objective at the current parameters.
    pub fn evaluate(&self, source: &ImageBuffer, target: &ImageBuffer, k: &Intrinsics, config: &FitConfig) -> Result<LossReport> {
        let (depth, pose, mask) = (self.depth(config)?, self.pose_field()?, self.mask()?);
        let inputs = LossInputs { source, target, pose_field: &pose, depth: &depth, mask: &mask, intrinsics: k };
        total_objective(&inputs, &config.loss)
    }

    /// One adaptive-moment update; returns the loss evaluated before the update.
    pub fn step(&mut self, source: &ImageBuffer, target: &ImageBuffer, k: &Intrinsics, config: &FitConfig) -> Result<LossReport> {
        if (source.height(), source.width()) != (self.height, self.width) {
            return Err(Error::ShapeMismatch(format!(
                "pair {}x{} vs state {}x{}",
                source.height(),
                source.width(),
                self.height,
                self.width
            )));
        }
        let raw = self.raw_depth()?;
        let depth = if config.normalize_depth { raw.mean_normalize() } else { raw.clone() };
        let pose = self.pose_field()?;
        let mask = self.mask()?;
        let inputs = LossInputs { source, target, pose_field: &pose, depth: &depth, mask: &mask, intrinsics: k };
        let (report, grad) = objective_and_gradient(&inputs, &config.loss).map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("iteration {}: {msg}", self.iteration)),
            other => other,
        })?;
        if !grad.is_finite() {
            return Err(Error::NonFinite(format!("iteration {}: gradient", self.iteration)));
        }

        let n = self.height * self.width;
        let mut g = vec![0.0; 8 * n];
        if !config.freeze_depth {
            let d = raw.data();
            if config.normalize_depth {
                let m = raw.mean();
                let coupling: f64 = grad.d_depth.iter().zip(d).map(|(gi, di)| gi * di).sum::<f64>() / (m * m * n as f64);
                for i in 0..n {
                    g[i] = (grad.d_depth[i] / m - coupling) * d[i];
                }
            } else {
                for i in 0..n {
                    g[i] = grad.d_depth[i] * d[i];
                }
            }
        }
        if !config.freeze_pose {
            g[n..7 * n].copy_from_slice(&grad.d_pose);
        }
        if !config.freeze_mask {
            for (i, m) in mask.data().iter().enumerate() {
                g[7 * n + i] = grad.d_mask[i] * m * (1.0 - m);
            }
        }

        let t = (self.iteration + 1) as i32;
        let progress = (self.iteration as f64 / (config.iterations.max(2) - 1) as f64).min(1.0);
        let step_size = config.step_size * pow(config.final_step_scale, progress);
        let c1 = 1.0 - pow(config.beta1, t as f64);
        let c2 = 1.0 - pow(config.beta2, t as f64);
        for (i, gi) in g.iter().enumerate() {
            let m = &mut self.first_moment[i];
            *m = config.beta1 * *m + (1.0 - config.beta1) * gi;
            let v = &mut self.second_moment[i];
            *v = config.beta2 * *v + (1.0 - config.beta2) * gi * gi;
            let update = step_size * (self.first_moment[i] / c1) / (sqrt(self.second_moment[i] / c2) + config.epsilon);
            if update == 0.0 {
                continue;
            }
            let p = if i < n {
                &mut self.depth_log[i]
            } else if i < 7 * n {
                &mut self.pose[i - n]
            } else {
                &mut self.mask_logit[i - 7 * n]
            };
            *p -= update;
            if i < n || i >= 7 * n {
                *p = p.clamp(-PARAM_LIMIT, PARAM_LIMIT);
            }
        }
        self.iteration += 1;
        self.history.push(report);
        Ok(report)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutput {
    pub depth: DepthField,
    pub pose_field: PoseField,
    pub mask: MaskField,
    /// Loss before each update.
    pub history: Vec<LossReport>,
    /// Loss at the returned fields.
    pub final_report: LossReport,
}

impl FitOutput {
    /// The single camera motion the fit implies: the background pose in
    /// segmented mode, the plain mean of the pose field otherwise (the pose
    /// rigid mode warps with).
    pub fn camera_twist(&self, config: &LossConfig) -> Result<Twist> {
        match config.mode {
            LossMode::Segmented => background_pose_with(&self.pose_field, &self.mask, config.background_averaging),
            LossMode::Rigid | LossMode::Nonrigid => {
                let none = MaskField::new_filled(self.mask.height(), self.mask.width(), 0.0)?;
                background_pose_with(&self.pose_field, &none, BackgroundAveraging::BackgroundMass)
            }
        }
    }
}

/// Runs `config.iterations` steps from `state`.
pub fn fit_from(mut state: FitState, source: &ImageBuffer, target: &ImageBuffer, k: &Intrinsics, config: &FitConfig) -> Result<FitOutput> {
    config.validate()?;
    for _ in 0..config.iterations {
        state.step(source, target, k, config)?;
    }
    let final_report = state.evaluate(source, target, k, config)?;
    Ok(FitOutput {
        depth: state.depth(config)?,
        pose_field: state.pose_field()?,
        mask: state.mask()?,
        history: state.history,
        final_report,
    })
}

/// Fits depth, pose field and mask to `target` given `source`, from the default initialization.
pub fn fit_pair(source: &ImageBuffer, target: &ImageBuffer, k: &Intrinsics, config: &FitConfig) -> Result<FitOutput> {
    let state = FitState::new(target.height(), target.width(), config)?;
    fit_from(state, source, target, k, config)
}
