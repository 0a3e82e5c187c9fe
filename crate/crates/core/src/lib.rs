//! Camera pose estimation against a 3D Gaussian scene: render at the current
//! estimate, compare with the query image and matched keypoints, and step the
//! pose along the loss gradient.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the common choice.

pub mod geometry;
pub mod image;
pub mod losses;
pub mod matcher;
pub mod optimizer;
mod real;
pub mod renderer;
pub mod scene;

pub use real::Real;

pub type Pose64 = geometry::Pose<f64>;
pub type Pose32 = geometry::Pose<f32>;
pub type Twist64 = geometry::Twist<f64>;
pub type Intrinsics64 = geometry::CameraIntrinsics<f64>;
pub type Scene64 = scene::Scene<f64>;
pub type Scene32 = scene::Scene<f32>;
pub type Image64 = image::RgbImage<f64>;
pub type Rendered64 = renderer::RenderedImage<f64>;
pub type MatchSet64 = matcher::MatchSet<f64>;
pub type PoseEstimate64 = optimizer::PoseEstimate<f64>;
