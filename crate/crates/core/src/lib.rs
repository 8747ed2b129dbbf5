//! Locally-rigid view synthesis.
//!
//! Projective warping of a source frame into a target frame from depth and a 6D
//! motion, photometric losses over the whole frame or over sliding-window
//! patches with one motion each, unsupervised foreground segmentation, and the
//! analytic gradients of all of them. A forward renderer provides synthetic
//! ground truth, [`fit`] recovers depth, motion and masks by first-order
//! optimization, and [`metrics`] scores the result.
//!
//! The crate is `no_std` and needs only `alloc`; file formats and the command
//! line live in the `tilewarp` crate.

#![no_std]
// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod error;
pub mod field;
pub mod fit;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
mod math;
pub mod metrics;
pub mod scenegen;
pub mod tiling;
pub mod viz;
pub mod warp;

pub use error::{Error, Result};
pub use field::{DepthField, GradientBundle, ImageBuffer, MaskField, PoseField, Twist};
pub use geometry::{Intrinsics, RigidMotion};
pub use losses::{LossConfig, LossInputs, LossMode, LossReport};
