//! Task-driven image deraining for SIFT keypoint recovery.
//!
//! Two small residual CNNs remove rain streaks from an image, each tuned to a
//! different downstream role: `DPRNet` restores the difference-of-Gaussians
//! pyramid used for keypoint detection (driven by a scale-space polynomial
//! "ALP" loss), and `GGIRNet` restores the gradients of the Gaussian images
//! used for orientation assignment and description (driven by a gradient-domain
//! loss with a Sobel-based attention module). Around them sits the classical
//! pipeline: Gaussian scale space, DoG, the ALP polynomial detector, SIFT
//! detection/description/matching, and a recovered-keypoint evaluation harness.
//!
//! All numerical code is generic over the scalar type via [`scalar::Real`];
//! concrete `f32` aliases are exported at the crate root. Training runs in
//! `f32`, gradient checks in `f64`.

pub mod alp;
pub mod autodiff;
pub mod error;
pub mod eval;
pub mod imagecore;
pub mod networks;
pub mod scalar;
pub mod scalespace;
pub mod sift;
pub mod training;

pub use error::{Error, Result};

/// Default pixel carrier used by the CLI and training code.
pub type Image = imagecore::Image<f32>;
/// Gaussian stack over `f32` images.
pub type ScaleStack = scalespace::ScaleStack<f32>;
/// DoG stack over `f32` images.
pub type DoGStack = scalespace::DoGStack<f32>;
pub use alp::AlpBasis;
