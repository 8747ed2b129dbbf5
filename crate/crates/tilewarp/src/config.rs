//! The run configuration: one strict JSON document covering every command.
//! Unknown keys are rejected and every section has defaults, so `{}` is valid.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tilewarp_core::fit::FitConfig;
use tilewarp_core::gradcheck::{DEFAULT_STEP, DEFAULT_TOLERANCE, EXCLUSION_RADIUS};
use tilewarp_core::metrics::{MASK_THRESHOLD, SNIPPET_LEN};
use tilewarp_core::scenegen::{self, SceneSpec};
use tilewarp_core::LossMode;

use crate::error::{Error, Result};
use crate::scene_dir::read_json;

pub const ECHO_FILE: &str = "config.echo.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// A textured plane and a moving camera.
    Rigid,
    /// The rigid preset plus one independently moving box.
    MovingObject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub preset: Preset,
    pub seed: u64,
    /// An explicit scene; when present `preset` and `seed` are ignored.
    pub spec: Option<SceneSpec>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { preset: Preset::Rigid, seed: 0, spec: None }
    }
}

impl SceneConfig {
    pub fn resolve(&self) -> SceneSpec {
        match (&self.spec, self.preset) {
            (Some(spec), _) => spec.clone(),
            (None, Preset::Rigid) => scenegen::random_rigid_scene(self.seed),
            (None, Preset::MovingObject) => scenegen::moving_object_scene(self.seed),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitInputConfig {
    /// Start each pair from the target frame's scene depth instead of `init_depth`.
    /// Combine with `fit.freeze_depth` for pose-only fits.
    pub use_scene_depth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub median_scale: bool,
    pub snippet_len: usize,
    pub mask_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { median_scale: true, snippet_len: SNIPPET_LEN, mask_threshold: MASK_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub modes: Vec<LossMode>,
    pub seed: u64,
    pub h: f64,
    pub tol: f64,
    pub radius: f64,
    pub min_tested: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            modes: vec![LossMode::Rigid, LossMode::Nonrigid, LossMode::Segmented],
            seed: 0,
            h: DEFAULT_STEP,
            tol: DEFAULT_TOLERANCE,
            radius: EXCLUSION_RADIUS,
            min_tested: 256,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub fit: FitConfig,
    pub fit_input: FitInputConfig,
    pub eval: EvalConfig,
    pub gradcheck: GradCheckConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<LossMode>,
    pub no_median_scale: bool,
}

impl RunConfig {
    /// Reads `path` if given, applies `overrides` and validates. Every failure is a parse error.
    pub fn load(path: Option<&Path>, overrides: Overrides) -> Result<Self> {
        let mut config: RunConfig = match path {
            Some(p) => read_json(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = overrides.seed {
            config.scene.seed = seed;
            config.fit.seed = seed;
            config.gradcheck.seed = seed;
        }
        if let Some(mode) = overrides.mode {
            config.fit.loss.mode = mode;
            config.gradcheck.modes = vec![mode];
        }
        if overrides.no_median_scale {
            config.eval.median_scale = false;
        }
        config.validate().map_err(|e| match path {
            Some(p) => Error::parse(p, e),
            None => Error::Parse(e),
        })?;
        Ok(config)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        self.fit.validate().map_err(|e| e.to_string())?;
        if self.eval.snippet_len < 2 {
            return Err(format!("eval.snippet_len must be >= 2, got {}", self.eval.snippet_len));
        }
        if !(0.0..1.0).contains(&self.eval.mask_threshold) {
            return Err(format!("eval.mask_threshold must lie in [0, 1), got {}", self.eval.mask_threshold));
        }
        let g = &self.gradcheck;
        if g.modes.is_empty() {
            return Err("gradcheck.modes is empty".into());
        }
        if !(g.h > 0.0 && g.tol > 0.0 && g.radius > 0.0) || g.min_tested == 0 {
            return Err("gradcheck h, tol, radius and min_tested must be positive".into());
        }
        Ok(())
    }
}
