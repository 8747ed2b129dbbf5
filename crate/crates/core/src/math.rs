//! Elementary functions, always from `libm`, so results are bit-identical
//! whether or not std is linked into the build.

pub(crate) use libm::{acos, cos, exp, floor, log as ln, pow, sin, sqrt};
