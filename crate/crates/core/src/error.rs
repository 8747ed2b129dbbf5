use alloc::string::String;
use core::fmt;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A field or image was requested with a zero or overflowing dimension.
    InvalidDimensions { height: usize, width: usize, channels: usize },
    /// Two inputs that must share a shape do not.
    ShapeMismatch(String),
    /// A value violates the invariant of the container it was placed in.
    InvalidValue(String),
    /// A rotation vector whose norm is at or beyond the principal branch.
    RotationOutOfRange(f64),
    /// Patch size or stride incompatible with the field.
    InvalidPatchConfig { k: usize, s: usize, height: usize, width: usize },
    /// Background pose requested with no background mass.
    EmptyBackground,
    /// Invalid configuration parameter.
    Config(String),
    /// Degenerate scene geometry.
    DegenerateScene(String),
    /// A loss or gradient evaluated to NaN or infinity.
    NonFinite(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidDimensions { height, width, channels } => write!(f, "invalid dimensions {height}x{width}x{channels}"),
            Error::ShapeMismatch(what) => write!(f, "shape mismatch: {what}"),
            Error::InvalidValue(what) => write!(f, "invalid value: {what}"),
            Error::RotationOutOfRange(norm) => {
                write!(f, "rotation norm {norm} outside [0, pi)")
            }
            Error::InvalidPatchConfig { k, s, height, width } => {
                write!(f, "patch size {k} / stride {s} invalid for a {height}x{width} field")
            }
            Error::EmptyBackground => write!(f, "background mask has no mass"),
            Error::Config(what) => write!(f, "invalid configuration: {what}"),
            Error::DegenerateScene(what) => write!(f, "degenerate scene: {what}"),
            Error::NonFinite(what) => write!(f, "non-finite value: {what}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
