//! Depth error and accuracy statistics, snippet trajectory error and mask overlap.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DepthField, MaskField};
use crate::geometry::{RigidMotion, Vec3};
use crate::math::{ln, sqrt};

pub const MASK_THRESHOLD: f64 = 0.7;
pub const SNIPPET_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

/// Middle value; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn depth_metrics(pred: &DepthField, gt: &DepthField, median_scale: bool) -> Result<DepthMetrics> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let scale = if median_scale { median(gt.data()) / median(pred.data()) } else { 1.0 };
    let n = gt.data().len() as f64;
    let mut m = DepthMetrics { rel: 0.0, sq_rel: 0.0, rmse: 0.0, rmse_log: 0.0, delta1: 0.0, delta2: 0.0, delta3: 0.0 };
    for (p, g) in pred.data().iter().zip(gt.data()) {
        let p = p * scale;
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::InvalidValue(format!("scaled prediction {p} is not positive")));
        }
        let d = p - g;
        m.rel += d.abs() / g;
        m.sq_rel += d * d / g;
        m.rmse += d * d;
        let dl = ln(p) - ln(*g);
        m.rmse_log += dl * dl;
        let ratio = (p / g).max(g / p);
        m.delta1 += (ratio < 1.25) as u8 as f64;
        m.delta2 += (ratio < 1.25 * 1.25) as u8 as f64;
        m.delta3 += (ratio < 1.25 * 1.25 * 1.25) as u8 as f64;
    }
    m.rel /= n;
    m.sq_rel /= n;
    m.rmse = sqrt(m.rmse / n);
    m.rmse_log = sqrt(m.rmse_log / n);
    m.delta1 /= n;
    m.delta2 /= n;
    m.delta3 /= n;
    Ok(m)
}

/// World-frame camera poses (camera-to-world), in frame order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    poses: Vec<RigidMotion>,
}

impl Trajectory {
    pub fn new(poses: Vec<RigidMotion>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::InvalidValue("empty trajectory".into()));
        }
        Ok(Self { poses })
    }

    pub fn poses(&self) -> &[RigidMotion] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.poses.iter().map(|p| p.translation()).collect()
    }
}

/// `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

impl Similarity {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        let r = &self.rotation;
        let mut out = self.translation;
        for (i, o) in out.iter_mut().enumerate() {
            *o += self.scale * (r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2]);
        }
        out
    }
}

fn spread(points: &[Vector3<f64>], mean: &Vector3<f64>) -> f64 {
    points.iter().map(|p| (p - mean).norm_squared()).sum::<f64>() / points.len() as f64
}

/// Least-squares similarity taking `src` onto `dst`, or `None` when either
/// point set has no spread.
pub fn align_similarity(src: &[Vec3], dst: &[Vec3]) -> Option<Similarity> {
    if src.len() != dst.len() || src.is_empty() {
        return None;
    }
    let s: Vec<Vector3<f64>> = src.iter().map(|p| Vector3::from(*p)).collect();
    let d: Vec<Vector3<f64>> = dst.iter().map(|p| Vector3::from(*p)).collect();
    let n = s.len() as f64;
    let mu_s = s.iter().sum::<Vector3<f64>>() / n;
    let mu_d = d.iter().sum::<Vector3<f64>>() / n;
    let var_s = spread(&s, &mu_s);
    if var_s < 1e-18 || spread(&d, &mu_d) < 1e-18 {
        return None;
    }
    let mut cov = Matrix3::zeros();
    for (a, b) in s.iter().zip(&d) {
        cov += (b - mu_d) * (a - mu_s).transpose();
    }
    cov /= n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut sign = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    let r = u * sign * v_t;
    let scale = (Matrix3::from_diagonal(&svd.singular_values) * sign).trace() / var_s;
    let t = mu_d - scale * r * mu_s;
    Some(Similarity {
        scale,
        rotation: [[r[(0, 0)], r[(0, 1)], r[(0, 2)]], [r[(1, 0)], r[(1, 1)], r[(1, 2)]], [r[(2, 0)], r[(2, 1)], r[(2, 2)]]],
        translation: [t[0], t[1], t[2]],
    })
}

/// RMS distance between `dst` and the aligned `src`.
pub fn aligned_rms(src: &[Vec3], dst: &[Vec3], sim: &Similarity) -> f64 {
    let sum: f64 = src
        .iter()
        .zip(dst)
        .map(|(s, d)| {
            let a = sim.apply(s);
            (0..3).map(|i| (a[i] - d[i]) * (a[i] - d[i])).sum::<f64>()
        })
        .sum();
    sqrt(sum / src.len() as f64)
}

/// Snippet trajectory error. `std` is the population deviation across windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AteSummary {
    pub mean: f64,
    pub std: f64,
    pub windows: usize,
    /// Windows without positional spread, excluded from `mean` and `std`.
    pub skipped: usize,
}

/// Per-window errors of every run of `snippet_len` consecutive frames; `None`
/// marks a degenerate window.
pub fn ate_windows(pred: &Trajectory, gt: &Trajectory, snippet_len: usize) -> Result<Vec<Option<f64>>> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("trajectories of {} and {} poses", pred.len(), gt.len())));
    }
    if snippet_len < 2 || gt.len() < snippet_len {
        return Err(Error::InvalidValue(format!("need at least {snippet_len} poses per trajectory, have {}", gt.len())));
    }
    let (p, g) = (pred.positions(), gt.positions());
    Ok((0..=p.len() - snippet_len)
        .map(|i| {
            let (ps, gs) = (&p[i..i + snippet_len], &g[i..i + snippet_len]);
            align_similarity(ps, gs).map(|sim| aligned_rms(ps, gs, &sim))
        })
        .collect())
}

pub fn ate_snippet(pred: &Trajectory, gt: &Trajectory, snippet_len: usize) -> Result<AteSummary> {
    let all = ate_windows(pred, gt, snippet_len)?;
    let errs: Vec<f64> = all.iter().flatten().copied().collect();
    if errs.is_empty() {
        return Err(Error::DegenerateScene("every trajectory window lacks motion".into()));
    }
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    Ok(AteSummary { mean, std: sqrt(var), windows: errs.len(), skipped: all.len() - errs.len() })
}

/// Intersection over union of `pred > threshold` and `gt > 0.5`; 1 when both are empty.
pub fn mask_iou(pred: &MaskField, gt: &MaskField, threshold: f64) -> Result<f64> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::ShapeMismatch("mask_iou operands".into()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, g) in pred.data().iter().zip(gt.data()) {
        let (a, b) = (*p > threshold, *g > 0.5);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn depth(v: &[f64]) -> DepthField {
        DepthField::from_vec(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let g = depth(&[1.0, 2.0, 3.5, 9.0]);
        let m = depth_metrics(&g, &g, false).unwrap();
        assert_eq!(m.rel, 0.0);
        assert_eq!(m.rmse, 0.0);
        assert_eq!((m.delta1, m.delta2, m.delta3), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_evaluated_pair() {
        let m = depth_metrics(&depth(&[1.0, 2.0]), &depth(&[2.0, 2.0]), false).unwrap();
        assert!((m.rel - 0.25).abs() < 1e-15);
        assert!((m.sq_rel - 0.25).abs() < 1e-15);
        assert!((m.rmse - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.delta1, 0.5);
        assert_eq!(m.delta3, 0.5);
    }

    #[test]
    fn doubled_prediction_is_scaled_away() {
        let g = depth(&[1.0, 2.0, 3.5, 9.0, 4.25]);
        let p = depth(&g.data().iter().map(|v| 2.0 * v).collect::<Vec<_>>());
        assert_eq!(depth_metrics(&p, &g, true).unwrap(), depth_metrics(&g, &g, true).unwrap());
        assert!(depth_metrics(&p, &g, false).unwrap().rel > 0.9);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn iou_examples() {
        let m = |v: &[f64]| MaskField::from_vec(1, v.len(), v.to_vec()).unwrap();
        let gt = m(&[0.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
        assert_eq!(mask_iou(&gt, &gt, MASK_THRESHOLD).unwrap(), 1.0);
        assert_eq!(mask_iou(&m(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]), &gt, MASK_THRESHOLD).unwrap(), 0.0);
        assert_eq!(mask_iou(&m(&[0.0, 0.9, 0.8, 0.7, 0.2, 0.0]), &gt, MASK_THRESHOLD).unwrap(), 0.5);
        let empty = m(&[0.0; 6]);
        assert_eq!(mask_iou(&empty, &empty, MASK_THRESHOLD).unwrap(), 1.0);
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let poses: Vec<RigidMotion> = (0..7)
            .map(|i| {
                let t = [i as f64 * 0.3, (i * i) as f64 * 0.05, -0.1 * i as f64];
                RigidMotion::from_parts(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], &t)
            })
            .collect();
        let t = Trajectory::new(poses).unwrap();
        let s = ate_snippet(&t, &t, SNIPPET_LEN).unwrap();
        assert!(s.mean < 1e-12 && s.std < 1e-12);
        assert_eq!((s.windows, s.skipped), (3, 0));
    }

    #[test]
    fn static_trajectory_is_degenerate() {
        let t = Trajectory::new(vec![RigidMotion::IDENTITY; 5]).unwrap();
        assert!(matches!(ate_snippet(&t, &t, 5), Err(Error::DegenerateScene(_))));
        assert!(Trajectory::new(Vec::new()).is_err());
    }
}
