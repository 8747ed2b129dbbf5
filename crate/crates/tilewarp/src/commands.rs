//! The subcommands. Machine-readable results go to stdout as JSON, warnings and
//! diagnostics to stderr.

use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use tilewarp_core::fit::{fit_from, FitOutput, FitState};
use tilewarp_core::geometry::{compose, twist_to_motion};
use tilewarp_core::gradcheck::{check_instance, random_instance, GradCheckOptions, GradCheckReport};
use tilewarp_core::metrics::{ate_snippet, depth_metrics, mask_iou, AteSummary, DepthMetrics, Trajectory};
use tilewarp_core::scenegen::render_sequence;
use tilewarp_core::{viz, DepthField, ImageBuffer, LossReport, MaskField, RigidMotion, Twist};

use crate::config::{EvalConfig, RunConfig, ECHO_FILE};
use crate::error::{Error, Result};
use crate::nfv::{self, Field};
use crate::scene_dir::{self, create_dir, write_json, Scene};
use crate::{kitti, raster};

pub const HISTORY_FILE: &str = "history.json";
pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const EVAL_FILE: &str = "eval.json";

pub fn fit_depth_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("depth_{t:03}.nfv"))
}

pub fn fit_pose_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("pose_{t:03}.nfv"))
}

pub fn fit_mask_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("mask_{t:03}.nfv"))
}

fn echo(out: &Path, config: &RunConfig) -> Result<()> {
    write_json(&out.join(ECHO_FILE), config)
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("plain data serializes"));
}

pub fn gen(config: &RunConfig, out: &Path) -> Result<()> {
    let spec = config.scene.resolve();
    let frames = render_sequence(&spec)?;
    scene_dir::write_scene(out, &frames, &spec.intrinsics)?;
    echo(out, config)?;
    print_json(&serde_json::json!({ "frames": frames.len(), "objects": spec.objects.len() }));
    Ok(())
}

/// One fitted consecutive pair.
#[derive(Debug, Clone)]
pub struct PairFit {
    pub source: usize,
    pub target: usize,
    pub output: FitOutput,
    pub camera_twist: Twist,
}

#[derive(Serialize)]
struct PairSummary<'a> {
    source: usize,
    target: usize,
    iterations: usize,
    final_loss: &'a LossReport,
    camera_twist: Twist,
}

#[derive(Serialize)]
struct PairHistory<'a> {
    source: usize,
    target: usize,
    history: &'a [LossReport],
    final_loss: &'a LossReport,
}

#[derive(Serialize)]
struct HistoryFile<'a> {
    pairs: Vec<PairHistory<'a>>,
}

fn fit_one(source: &ImageBuffer, target: &ImageBuffer, depth: Option<&DepthField>, scene: &Scene, config: &RunConfig) -> Result<FitOutput> {
    let mut state = FitState::new(target.height(), target.width(), &config.fit)?;
    if let Some(d) = depth {
        state.set_depth(d)?;
    }
    Ok(fit_from(state, source, target, &scene.intrinsics, &config.fit)?)
}

/// Fits every consecutive pair on up to `threads` workers. Pairs are
/// independent, so the result does not depend on the worker count.
pub fn fit_scene(scene: &Scene, config: &RunConfig, threads: usize) -> Result<Vec<PairFit>> {
    let n = scene.frame_count();
    if n < 2 {
        return Err(Error::Parse(format!("{}: need at least two frames", scene.dir.display())));
    }
    let images = (0..n).map(|i| scene.image(i)).collect::<Result<Vec<_>>>()?;
    let depths = if config.fit_input.use_scene_depth {
        (1..n).map(|t| scene.depth(t).map(Some)).collect::<Result<Vec<_>>>()?
    } else {
        vec![None; n - 1]
    };

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<FitOutput>>>> = Mutex::new((1..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, n - 1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n - 1 {
                    break;
                }
                let r = fit_one(&images[i], &images[i + 1], depths[i].as_ref(), scene, config);
                results.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });

    let mut fits = Vec::with_capacity(n - 1);
    for (i, r) in results.into_inner().expect("workers joined").into_iter().enumerate() {
        let output = r.expect("every pair visited")?;
        let camera_twist = output.camera_twist(&config.fit.loss)?;
        fits.push(PairFit { source: i, target: i + 1, output, camera_twist });
    }
    Ok(fits)
}

/// Camera-to-world poses with the first camera at the origin: `C_t = C_{t-1} exp(twist_t)`.
pub fn chain_trajectory(fits: &[PairFit]) -> Result<Vec<RigidMotion>> {
    let mut poses = vec![RigidMotion::IDENTITY];
    for f in fits {
        let step = twist_to_motion(&f.camera_twist)?;
        poses.push(compose(poses.last().expect("non-empty"), &step));
    }
    Ok(poses)
}

pub fn fit(scene_dir: &Path, config: &RunConfig, out: &Path, threads: usize) -> Result<()> {
    let scene = Scene::open(scene_dir)?;
    create_dir(out)?;
    echo(out, config)?;
    let fits = fit_scene(&scene, config, threads)?;
    for f in &fits {
        let t = f.target;
        nfv::write(&fit_depth_path(out, t), &Field::Depth(f.output.depth.clone()))?;
        nfv::write(&fit_pose_path(out, t), &Field::Pose(f.output.pose_field.clone()))?;
        nfv::write(&fit_mask_path(out, t), &Field::Mask(f.output.mask.clone()))?;
    }
    let history = HistoryFile {
        pairs: fits
            .iter()
            .map(|f| PairHistory { source: f.source, target: f.target, history: &f.output.history, final_loss: &f.output.final_report })
            .collect(),
    };
    write_json(&out.join(HISTORY_FILE), &history)?;
    kitti::write(&out.join(TRAJECTORY_FILE), &chain_trajectory(&fits)?)?;
    for f in &fits {
        print_json(&PairSummary {
            source: f.source,
            target: f.target,
            iterations: f.output.history.len(),
            final_loss: &f.output.final_report,
            camera_twist: f.camera_twist,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameDepth {
    pub frame: usize,
    #[serde(flatten)]
    pub metrics: DepthMetrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct AteReport {
    pub snippet_len: usize,
    pub mean: f64,
    pub std_across_snippets: f64,
    pub windows: usize,
    pub skipped: usize,
}

impl AteReport {
    fn new(snippet_len: usize, s: AteSummary) -> Self {
        Self { snippet_len, mean: s.mean, std_across_snippets: s.std, windows: s.windows, skipped: s.skipped }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameIou {
    pub frame: usize,
    /// Against the union of all object masks.
    pub foreground: f64,
    /// Per object, with pixels of the other objects ignored.
    pub objects: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub median_scale: bool,
    pub depth: Vec<FrameDepth>,
    pub depth_mean: Option<DepthMetrics>,
    pub ate: Option<AteReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_iou: Option<Vec<FrameIou>>,
}

fn mean_metrics(all: &[FrameDepth]) -> Option<DepthMetrics> {
    if all.is_empty() {
        return None;
    }
    let n = all.len() as f64;
    let avg = |f: fn(&DepthMetrics) -> f64| all.iter().map(|d| f(&d.metrics)).sum::<f64>() / n;
    Some(DepthMetrics {
        rel: avg(|m| m.rel),
        sq_rel: avg(|m| m.sq_rel),
        rmse: avg(|m| m.rmse),
        rmse_log: avg(|m| m.rmse_log),
        delta1: avg(|m| m.delta1),
        delta2: avg(|m| m.delta2),
        delta3: avg(|m| m.delta3),
    })
}

fn frame_iou(pred: &MaskField, gt: &[MaskField], threshold: f64) -> Result<FrameIou> {
    let union: Vec<f64> = (0..pred.data().len()).map(|p| if gt.iter().any(|m| m.data()[p] > 0.5) { 1.0 } else { 0.0 }).collect();
    let union = MaskField::from_vec(pred.height(), pred.width(), union)?;
    let foreground = mask_iou(pred, &union, threshold)?;
    let mut objects = Vec::with_capacity(gt.len());
    for (i, m) in gt.iter().enumerate() {
        // Object masks share the prediction's shape once the union check above passed.
        let own: Vec<f64> = pred
            .data()
            .iter()
            .enumerate()
            .map(|(p, v)| if gt.iter().enumerate().any(|(j, o)| j != i && o.data()[p] > 0.5) { 0.0 } else { *v })
            .collect();
        objects.push(mask_iou(&MaskField::from_vec(pred.height(), pred.width(), own)?, m, threshold)?);
    }
    Ok(FrameIou { frame: 0, foreground, objects })
}

/// Scores a fit directory against a scene, collecting warnings for sections that cannot be computed.
pub fn evaluate(fit_dir: &Path, scene: &Scene, eval: &EvalConfig) -> Result<(EvalReport, Vec<String>)> {
    if !fit_dir.is_dir() {
        return Err(Error::io(fit_dir, std::io::Error::new(std::io::ErrorKind::NotFound, "fit directory not found")));
    }
    let mut warnings = Vec::new();
    let n = scene.frame_count();

    let mut depth = Vec::new();
    for t in 0..n {
        let path = fit_depth_path(fit_dir, t);
        if path.exists() {
            let metrics = depth_metrics(&nfv::read_depth(&path)?, &scene.depth(t)?, eval.median_scale)?;
            depth.push(FrameDepth { frame: t, metrics });
        }
    }
    if depth.is_empty() {
        warnings.push(format!("no depth predictions in {}", fit_dir.display()));
    }

    let pred = Trajectory::new(kitti::read(&fit_dir.join(TRAJECTORY_FILE))?)?;
    let gt = Trajectory::new(scene.poses.cameras()?)?;
    let ate = if pred.len() != gt.len() {
        return Err(tilewarp_core::Error::ShapeMismatch(format!("trajectory of {} poses for {} frames", pred.len(), gt.len())).into());
    } else if n < eval.snippet_len {
        warnings.push(format!("{n} frames is shorter than one {}-frame snippet; ATE omitted", eval.snippet_len));
        None
    } else {
        match ate_snippet(&pred, &gt, eval.snippet_len) {
            Ok(s) => Some(AteReport::new(eval.snippet_len, s)),
            Err(tilewarp_core::Error::DegenerateScene(why)) => {
                warnings.push(format!("ATE omitted: {why}"));
                None
            }
            Err(e) => return Err(e.into()),
        }
    };

    let mut mask_iou = None;
    if scene.poses.object_count() == 0 {
        warnings.push("scene has no objects; mask IoU omitted".into());
    } else {
        let mut frames = Vec::new();
        for t in 0..n {
            let path = fit_mask_path(fit_dir, t);
            if !path.exists() {
                continue;
            }
            let Some(gt) = scene.object_masks(t)? else {
                warnings.push(format!("ground-truth masks missing for frame {t}; mask IoU omitted"));
                frames.clear();
                break;
            };
            let mut iou = frame_iou(&nfv::read_mask(&path)?, &gt, eval.mask_threshold)?;
            iou.frame = t;
            frames.push(iou);
        }
        if frames.is_empty() {
            if warnings.iter().all(|w| !w.contains("mask IoU")) {
                warnings.push(format!("no mask predictions in {}; mask IoU omitted", fit_dir.display()));
            }
        } else {
            mask_iou = Some(frames);
        }
    }

    let depth_mean = mean_metrics(&depth);
    Ok((EvalReport { median_scale: eval.median_scale, depth, depth_mean, ate, mask_iou }, warnings))
}

pub fn eval(fit_dir: &Path, scene_dir: &Path, config: &RunConfig, out: Option<&Path>) -> Result<()> {
    let scene = Scene::open(scene_dir)?;
    let (report, warnings) = evaluate(fit_dir, &scene, &config.eval)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if let Some(out) = out {
        create_dir(out)?;
        echo(out, config)?;
        write_json(&out.join(EVAL_FILE), &report)?;
    }
    print_json(&report);
    Ok(())
}

#[derive(Serialize)]
struct GradCheckSummary {
    passed: bool,
    reports: Vec<GradCheckReport>,
}

/// Runs every configured mode; `corrupt` scales the analytic gradient as a negative control.
pub fn gradcheck(config: &RunConfig, corrupt: f64, out: Option<&Path>) -> Result<()> {
    let g = &config.gradcheck;
    let options = GradCheckOptions { h: g.h, tol: g.tol, radius: g.radius, min_tested: g.min_tested, corrupt };
    let reports = g
        .modes
        .iter()
        .map(|&mode| check_instance(&random_instance(mode, g.seed), g.seed, &options))
        .collect::<tilewarp_core::Result<Vec<_>>>()?;
    let worst = reports.iter().find(|r| !r.passed).map(|r| (r.max_rel_error, r.worst_coordinate));
    let summary = GradCheckSummary { passed: worst.is_none(), reports };
    if let Some(out) = out {
        create_dir(out)?;
        echo(out, config)?;
    }
    print_json(&summary);
    match worst {
        Some((max_rel_error, worst_coordinate)) => Err(Error::GradCheckFailed { max_rel_error, worst_coordinate }),
        None => Ok(()),
    }
}

/// `<stem>_rotation.<ext>` next to `out`.
pub fn rotation_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("pose");
    let ext = out.extension().and_then(|e| e.to_str()).unwrap_or("png");
    out.with_file_name(format!("{stem}_rotation.{ext}"))
}

pub fn viz(field_path: &Path, out: &Path) -> Result<()> {
    let mut written = vec![out.to_path_buf()];
    match nfv::read(field_path)? {
        Field::Image(img) => raster::write_image(out, &img)?,
        Field::Depth(d) => raster::write_image(out, &viz::depth_image(&d))?,
        Field::Mask(m) => raster::write_image(out, &viz::mask_image(&m))?,
        Field::Pose(p) => {
            let (translation, rotation) = viz::pose_images(&p);
            let second = rotation_path(out);
            raster::write_image(out, &translation)?;
            raster::write_image(&second, &rotation)?;
            written.push(second);
        }
    }
    print_json(&serde_json::json!({ "written": written }));
    Ok(())
}

pub fn available_threads() -> usize {
    std::thread::available_parallelism().map_or(1, NonZeroUsize::get)
}
