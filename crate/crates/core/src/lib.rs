//! Differentiable textured 2D Gaussian splatting with CDF-warped texture
//! coordinates and gradient-driven texture growth.

// Component loops over RGB(A) read more clearly with explicit indices, and
// `!(x > t)` comparisons deliberately reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod grad;
pub mod growth;
pub mod io;
pub mod loss;
pub mod optim;
pub mod render;
pub mod scene;
pub mod stats;
pub mod texture;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
pub use geometry::{Camera, CameraMode, CanonicalPoint, SplatGeometry};
pub use grad::{backward, finite_difference_check, GradientSet};
pub use render::{render, RenderOutput};
pub use scene::{Image, Scene, Splat};
pub use texture::{Channels, TexelGrid, WarpMode};
