//! The frozen 3D Gaussian scene, covariance construction and scene I/O.

mod ply;
mod synth;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::Real;

pub use ply::{load_ply, read_ply, save_ply, write_ply, SH_C0};
pub use synth::{synth_scene, Layout, SynthSpec, PALETTE, SHELL_FLATTEN};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("empty scene")]
    EmptyScene,
    #[error("invalid gaussian {index}: {reason}")]
    InvalidGaussian { index: usize, reason: String },
    #[error("schema mismatch: missing vertex property `{0}`")]
    SchemaMismatch(String),
    #[error("ply parse error: {0}")]
    Parse(String),
    #[error("degenerate bounding box: {0}")]
    DegenerateBox(String),
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One anisotropic Gaussian with degree-0 (view independent) color.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian3D<T: Real> {
    pub mean: Vector3<T>,
    /// Per-axis standard deviations, meters.
    pub scale: Vector3<T>,
    pub rot: UnitQuaternion<T>,
    pub opacity: T,
    pub color: Vector3<T>,
}

impl<T: Real> Gaussian3D<T> {
    pub fn isotropic(mean: Vector3<T>, sigma: T, opacity: T, color: Vector3<T>) -> Self {
        Self {
            mean,
            scale: Vector3::repeat(sigma),
            rot: UnitQuaternion::identity(),
            opacity,
            color,
        }
    }

    /// `R diag(scale)^2 R^T`.
    pub fn covariance(&self) -> Matrix3<T> {
        let r = self.rot.to_rotation_matrix().into_inner();
        let m = r * Matrix3::from_diagonal(&self.scale);
        m * m.transpose()
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = |v: &Vector3<T>| v.iter().all(|c| c.as_f64().is_finite());
        if !finite(&self.mean) {
            return Err("non-finite mean".into());
        }
        if !self.scale.iter().all(|s| *s > T::zero() && s.as_f64().is_finite()) {
            return Err("scale components must be positive".into());
        }
        if !(self.opacity > T::zero() && self.opacity <= T::one()) {
            return Err(format!("opacity {} outside (0, 1]", self.opacity.as_f64()));
        }
        if !self.color.iter().all(|c| *c >= T::zero() && *c <= T::one()) {
            return Err("color components must lie in [0, 1]".into());
        }
        let qn = self.rot.as_ref().norm().as_f64();
        if (qn - 1.0).abs() > 1e-6 {
            return Err(format!("rotation quaternion norm {qn}"));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Gaussian3D<U> {
        let c = |v: &Vector3<T>| v.map(|x| U::lit(x.as_f64()));
        let q = self.rot.as_ref();
        Gaussian3D {
            mean: c(&self.mean),
            scale: c(&self.scale),
            rot: UnitQuaternion::new_normalize(nalgebra::Quaternion::new(
                U::lit(q.w.as_f64()),
                U::lit(q.i.as_f64()),
                U::lit(q.j.as_f64()),
                U::lit(q.k.as_f64()),
            )),
            opacity: U::lit(self.opacity.as_f64()),
            color: c(&self.color),
        }
    }
}

/// Covariance of a Gaussian, `R diag(scale)^2 R^T`.
pub fn covariance<T: Real>(g: &Gaussian3D<T>) -> Matrix3<T> {
    g.covariance()
}

/// An ordered, immutable collection of Gaussians over a background color.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene<T: Real> {
    gaussians: Vec<Gaussian3D<T>>,
    background: Vector3<T>,
}

impl<T: Real> Scene<T> {
    /// Validates every Gaussian; the background defaults to black.
    pub fn new(gaussians: Vec<Gaussian3D<T>>) -> Result<Self, SceneError> {
        Self::with_background(gaussians, Vector3::zeros())
    }

    pub fn with_background(
        gaussians: Vec<Gaussian3D<T>>,
        background: Vector3<T>,
    ) -> Result<Self, SceneError> {
        if gaussians.is_empty() {
            return Err(SceneError::EmptyScene);
        }
        for (index, g) in gaussians.iter().enumerate() {
            g.validate()
                .map_err(|reason| SceneError::InvalidGaussian { index, reason })?;
        }
        if !background.iter().all(|c| *c >= T::zero() && *c <= T::one()) {
            return Err(SceneError::InvalidGaussian {
                index: usize::MAX,
                reason: "background color outside [0, 1]".into(),
            });
        }
        Ok(Self {
            gaussians,
            background,
        })
    }

    pub fn gaussians(&self) -> &[Gaussian3D<T>] {
        &self.gaussians
    }

    pub fn background(&self) -> &Vector3<T> {
        &self.background
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn cast<U: Real>(&self) -> Scene<U> {
        Scene {
            gaussians: self.gaussians.iter().map(Gaussian3D::cast).collect(),
            background: self.background.map(|x| U::lit(x.as_f64())),
        }
    }
}
