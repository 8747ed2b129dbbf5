//! On-disk scene layout: `frame_%03d.ppm`, `depth_%03d.nfv`,
//! `mask_obj%d_%03d.nfv`, `poses.json` and `intrinsics.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tilewarp_core::scenegen::GroundTruthFrame;
use tilewarp_core::{DepthField, ImageBuffer, Intrinsics, MaskField, RigidMotion};

use crate::error::{Error, Result};
use crate::{nfv, raster};

pub const POSES_FILE: &str = "poses.json";
pub const INTRINSICS_FILE: &str = "intrinsics.json";

pub fn frame_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("frame_{i:03}.ppm"))
}

pub fn depth_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("depth_{i:03}.nfv"))
}

pub fn object_mask_path(dir: &Path, object: usize, i: usize) -> PathBuf {
    dir.join(format!("mask_obj{object}_{i:03}.nfv"))
}

/// Row-major 4x4 matrices; camera-to-world and object-to-world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramePoses {
    pub camera: [f64; 16],
    #[serde(default)]
    pub objects: Vec<[f64; 16]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosesFile {
    pub frames: Vec<FramePoses>,
}

impl PosesFile {
    pub fn object_count(&self) -> usize {
        self.frames.first().map_or(0, |f| f.objects.len())
    }

    pub fn cameras(&self) -> Result<Vec<RigidMotion>> {
        self.frames.iter().map(|f| Ok(RigidMotion::from_matrix(f.camera)?)).collect()
    }
}

/// Pretty JSON with a trailing newline; key order follows the struct.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_scene(dir: &Path, frames: &[GroundTruthFrame], k: &Intrinsics) -> Result<()> {
    create_dir(dir)?;
    for (i, f) in frames.iter().enumerate() {
        raster::write_ppm(&frame_path(dir, i), &f.image)?;
        nfv::write(&depth_path(dir, i), &nfv::Field::Depth(f.depth.clone()))?;
        for (o, m) in f.object_masks.iter().enumerate() {
            nfv::write(&object_mask_path(dir, o, i), &nfv::Field::Mask(m.clone()))?;
        }
    }
    let poses = PosesFile {
        frames: frames
            .iter()
            .map(|f| FramePoses {
                camera: *f.camera_pose_world.matrix(),
                objects: f.object_poses_world.iter().map(|p| *p.matrix()).collect(),
            })
            .collect(),
    };
    write_json(&dir.join(POSES_FILE), &poses)?;
    write_json(&dir.join(INTRINSICS_FILE), k)
}

/// A scene directory with its metadata loaded; rasters and fields load on demand.
#[derive(Debug, Clone)]
pub struct Scene {
    pub dir: PathBuf,
    pub intrinsics: Intrinsics,
    pub poses: PosesFile,
}

impl Scene {
    pub fn open(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "scene directory not found")));
        }
        let intrinsics: Intrinsics = read_json(&dir.join(INTRINSICS_FILE))?;
        intrinsics.validate()?;
        let poses: PosesFile = read_json(&dir.join(POSES_FILE))?;
        if poses.frames.is_empty() {
            return Err(Error::parse(&dir.join(POSES_FILE), "no frames"));
        }
        let n = poses.object_count();
        if poses.frames.iter().any(|f| f.objects.len() != n) {
            return Err(Error::parse(&dir.join(POSES_FILE), "object count differs between frames"));
        }
        Ok(Self { dir: dir.to_path_buf(), intrinsics, poses })
    }

    pub fn frame_count(&self) -> usize {
        self.poses.frames.len()
    }

    pub fn image(&self, i: usize) -> Result<ImageBuffer> {
        raster::read_ppm(&frame_path(&self.dir, i))
    }

    pub fn depth(&self, i: usize) -> Result<DepthField> {
        nfv::read_depth(&depth_path(&self.dir, i))
    }

    /// `None` when any object mask of frame `i` is absent.
    pub fn object_masks(&self, i: usize) -> Result<Option<Vec<MaskField>>> {
        let paths: Vec<PathBuf> = (0..self.poses.object_count()).map(|o| object_mask_path(&self.dir, o, i)).collect();
        if paths.iter().any(|p| !p.exists()) {
            return Ok(None);
        }
        paths.iter().map(|p| nfv::read_mask(p)).collect::<Result<Vec<_>>>().map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naming() {
        let d = Path::new("s");
        assert_eq!(frame_path(d, 7), Path::new("s/frame_007.ppm"));
        assert_eq!(depth_path(d, 12), Path::new("s/depth_012.nfv"));
        assert_eq!(object_mask_path(d, 1, 3), Path::new("s/mask_obj1_003.nfv"));
    }

    #[test]
    fn poses_reject_unknown_keys() {
        let ok = r#"{"frames":[{"camera":[1,0,0,0,0,1,0,0,0,0,1,0,0,0,0,1]}]}"#;
        let p: PosesFile = serde_json::from_str(ok).unwrap();
        assert_eq!(p.cameras().unwrap()[0], RigidMotion::IDENTITY);
        let bad = r#"{"frames":[],"extra":1}"#;
        assert!(serde_json::from_str::<PosesFile>(bad).is_err());
    }
}
