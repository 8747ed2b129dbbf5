//! Trajectories as text, one camera-to-world pose per line: the top three rows
//! of the 4x4 matrix, row-major, space-separated.

use std::fs;
use std::path::Path;

use tilewarp_core::RigidMotion;

use crate::error::{Error, Result};

/// Shortest round-trip formatting, so reading back is exact.
pub fn format(poses: &[RigidMotion]) -> String {
    let mut out = String::new();
    for p in poses {
        let row: Vec<String> = p.matrix()[..12].iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse(text: &str) -> std::result::Result<Vec<RigidMotion>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let values = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| format!("line {}: bad number {t:?}", n + 1)))
                .collect::<std::result::Result<Vec<f64>, String>>()?;
            if values.len() != 12 {
                return Err(format!("line {}: {} values, expected 12", n + 1, values.len()));
            }
            let mut m = [0.0; 16];
            m[..12].copy_from_slice(&values);
            m[15] = 1.0;
            RigidMotion::from_matrix(m).map_err(|e| format!("line {}: {e}", n + 1))
        })
        .collect()
}

pub fn write(path: &Path, poses: &[RigidMotion]) -> Result<()> {
    fs::write(path, format(poses)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<RigidMotion>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text).map_err(|e| Error::parse(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tilewarp_core::geometry::twist_to_motion;

    #[test]
    fn round_trip_is_exact() {
        let poses = vec![RigidMotion::IDENTITY, twist_to_motion(&[0.1, -0.3, 1e-7, 0.02, -0.5, 0.3]).unwrap()];
        let text = format(&poses);
        assert!(text.starts_with("1 0 0 0 0 1 0 0 0 0 1 0\n"));
        assert_eq!(parse(&text).unwrap(), poses);
    }

    #[test]
    fn rejects_short_rows_and_non_rotations() {
        assert!(parse("1 0 0 0 0 1 0 0 0 0 1\n").is_err());
        assert!(parse("2 0 0 0 0 1 0 0 0 0 1 0\n").is_err());
    }
}
