//! NFV1 field files: an ASCII header line `NFV1 <kind> <height> <width> <channels>\n`
//! followed by `height * width * channels` little-endian f64 values in row-major,
//! channel-interleaved order.

use std::fs;
use std::path::Path;

use tilewarp_core::{DepthField, ImageBuffer, MaskField, PoseField};

use crate::error::{Error, Result};

const MAGIC: &str = "NFV1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Image,
    Depth,
    Mask,
    Pose,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Image => "image",
            Kind::Depth => "depth",
            Kind::Mask => "mask",
            Kind::Pose => "pose",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "image" => Kind::Image,
            "depth" => Kind::Depth,
            "mask" => Kind::Mask,
            "pose" => Kind::Pose,
            _ => return None,
        })
    }
}

/// Any field an NFV1 file can hold; the payload is validated by the core constructors.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Image(ImageBuffer),
    Depth(DepthField),
    Mask(MaskField),
    Pose(PoseField),
}

impl Field {
    pub fn kind(&self) -> Kind {
        match self {
            Field::Image(_) => Kind::Image,
            Field::Depth(_) => Kind::Depth,
            Field::Mask(_) => Kind::Mask,
            Field::Pose(_) => Kind::Pose,
        }
    }

    fn parts(&self) -> (usize, usize, usize, &[f64]) {
        match self {
            Field::Image(f) => (f.height(), f.width(), f.channels(), f.data()),
            Field::Depth(f) => (f.height(), f.width(), 1, f.data()),
            Field::Mask(f) => (f.height(), f.width(), 1, f.data()),
            Field::Pose(f) => (f.height(), f.width(), 6, f.data()),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let (h, w, c, data) = self.parts();
        let mut out = format!("{MAGIC} {} {h} {w} {c}\n", self.kind().name()).into_bytes();
        out.reserve(data.len() * 8);
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Errors are plain messages; callers attach the path.
    pub fn decode(bytes: &[u8]) -> std::result::Result<Field, String> {
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or("missing header line")?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| "header is not ASCII")?;
        let tokens: Vec<&str> = header.split(' ').collect();
        if tokens.len() != 5 || tokens[0] != MAGIC {
            return Err(format!("bad header {header:?}"));
        }
        let kind = Kind::parse(tokens[1]).ok_or_else(|| format!("unknown kind {:?}", tokens[1]))?;
        let dim = |s: &str| s.parse::<usize>().map_err(|_| format!("bad dimension {s:?}"));
        let (h, w, c) = (dim(tokens[2])?, dim(tokens[3])?, dim(tokens[4])?);
        let expected_channels = match kind {
            Kind::Image => c,
            Kind::Depth | Kind::Mask => 1,
            Kind::Pose => 6,
        };
        if c != expected_channels {
            return Err(format!("{} field with {c} channels", kind.name()));
        }
        let payload = &bytes[nl + 1..];
        let n = h.checked_mul(w).and_then(|n| n.checked_mul(c)).ok_or("dimensions overflow")?;
        if Some(payload.len()) != n.checked_mul(8) {
            return Err(format!("payload of {} bytes, expected {n} values", payload.len()));
        }
        let data: Vec<f64> = payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8"))).collect();
        let field = match kind {
            Kind::Image => ImageBuffer::from_vec(h, w, c, data).map(Field::Image),
            Kind::Depth => DepthField::from_vec(h, w, data).map(Field::Depth),
            Kind::Mask => MaskField::from_vec(h, w, data).map(Field::Mask),
            Kind::Pose => PoseField::from_vec(h, w, data).map(Field::Pose),
        };
        field.map_err(|e| e.to_string())
    }
}

pub fn write(path: &Path, field: &Field) -> Result<()> {
    fs::write(path, field.encode()).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Field> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Field::decode(&bytes).map_err(|e| Error::parse(path, e))
}

fn wrong_kind(path: &Path, want: Kind, got: &Field) -> Error {
    Error::parse(path, format!("expected a {} field, found {}", want.name(), got.kind().name()))
}

pub fn read_depth(path: &Path) -> Result<DepthField> {
    match read(path)? {
        Field::Depth(d) => Ok(d),
        other => Err(wrong_kind(path, Kind::Depth, &other)),
    }
}

pub fn read_mask(path: &Path) -> Result<MaskField> {
    match read(path)? {
        Field::Mask(m) => Ok(m),
        other => Err(wrong_kind(path, Kind::Mask, &other)),
    }
}

pub fn read_pose(path: &Path) -> Result<PoseField> {
    match read(path)? {
        Field::Pose(p) => Ok(p),
        other => Err(wrong_kind(path, Kind::Pose, &other)),
    }
}
