//! Rigid-body math on SE(3), pinhole intrinsics and projection.
//!
//! Poses map world points into the camera frame, `p_cam = R * p_world + t`.
//! Tangent perturbations are applied on the left, `exp(tau) * pose`, and the
//! twist is ordered `(v, w)`: translation first, rotation second.

use nalgebra::{Matrix2x3, Matrix2x6, Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Real;

/// Below this rotation angle (radians) exp/log switch to Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// log_se3 refuses rotations whose angle is within this margin of pi.
pub const LOG_SINGULARITY_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("log-map singularity: rotation angle {angle_rad} rad is at or near pi")]
    LogMapSingularity { angle_rad: f64 },
    #[error("behind-camera: depth {depth} m does not exceed z_near {z_near} m")]
    BehindCamera { depth: f64, z_near: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Skew-symmetric cross-product matrix, `hat(a) * b == a.cross(&b)`.
#[inline]
pub fn hat<T: Real>(a: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -a.z, a.y, a.z, z, -a.x, -a.y, a.x, z)
}

/// A rigid world-to-camera transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct Pose<T: Real> {
    rotation: UnitQuaternion<T>,
    translation: Vector3<T>,
}

impl<T: Real> Default for Pose<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Pose<T> {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, renormalizing the rotation quaternion.
    pub fn new(rotation: UnitQuaternion<T>, translation: Vector3<T>) -> Self {
        Self {
            rotation: renormalize(rotation.into_inner()),
            translation,
        }
    }

    /// Builds a pose from raw quaternion components `(w, x, y, z)`.
    pub fn from_parts(w: T, x: T, y: T, z: T, translation: Vector3<T>) -> Self {
        Self {
            rotation: renormalize(Quaternion::new(w, x, y, z)),
            translation,
        }
    }

    /// Pose with the given world-to-camera rotation and camera center in world coordinates.
    pub fn from_camera_center(rotation: UnitQuaternion<T>, center: Vector3<T>) -> Self {
        let rotation = renormalize(rotation.into_inner());
        let translation = -(rotation * center);
        Self {
            rotation,
            translation,
        }
    }

    /// Camera at `eye` looking at `target`. Camera axes: x right, y down, z forward.
    pub fn look_at(eye: &Vector3<T>, target: &Vector3<T>, up: &Vector3<T>) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(up);
        if right.norm() < T::lit(1e-9) {
            // `up` parallel to the viewing direction; any perpendicular works.
            let alt = if forward.x.abs() < T::lit(0.9) {
                Vector3::x()
            } else {
                Vector3::y()
            };
            right = forward.cross(&alt);
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let rotation = UnitQuaternion::from_matrix(&rot);
        Self::from_camera_center(rotation, *eye)
    }

    #[inline]
    pub fn rotation(&self) -> &UnitQuaternion<T> {
        &self.rotation
    }

    #[inline]
    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    #[inline]
    pub fn rotation_matrix(&self) -> Matrix3<T> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn camera_center(&self) -> Vector3<T> {
        -(self.rotation.inverse() * self.translation)
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    /// `self * rhs`: applies `rhs` first, then `self`.
    pub fn compose(&self, rhs: &Pose<T>) -> Pose<T> {
        Pose {
            rotation: renormalize((self.rotation * rhs.rotation).into_inner()),
            translation: self.rotation * rhs.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose<T> {
        let inv = self.rotation.inverse();
        Pose {
            rotation: renormalize(inv.into_inner()),
            translation: -(inv * self.translation),
        }
    }

    /// Applies a left perturbation, `exp(tau) * self`.
    pub fn retract(&self, tau: &Twist<T>) -> Pose<T> {
        exp_se3(tau).compose(self)
    }

    pub fn log(&self) -> Result<Twist<T>, GeometryError> {
        log_se3(self)
    }

    pub fn is_finite(&self) -> bool {
        let q = self.rotation.as_ref();
        [q.w, q.i, q.j, q.k]
            .iter()
            .chain(self.translation.iter())
            .all(|c| c.as_f64().is_finite())
    }

    /// Converts every component to another scalar type.
    pub fn cast<U: Real>(&self) -> Pose<U> {
        let q = self.rotation.as_ref();
        Pose::from_parts(
            U::lit(q.w.as_f64()),
            U::lit(q.i.as_f64()),
            U::lit(q.j.as_f64()),
            U::lit(q.k.as_f64()),
            self.translation.map(|c| U::lit(c.as_f64())),
        )
    }
}

fn renormalize<T: Real>(mut q: Quaternion<T>) -> UnitQuaternion<T> {
    // Canonical hemisphere keeps comparisons and serialization stable.
    if q.w < T::zero() {
        q = -q;
    }
    UnitQuaternion::new_normalize(q)
}

/// se(3) tangent coordinates: `v` translational (meters), `w` rotational (radians).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct Twist<T: Real> {
    pub v: Vector3<T>,
    pub w: Vector3<T>,
}

impl<T: Real> Default for Twist<T> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<T: Real> Twist<T> {
    pub fn new(v: Vector3<T>, w: Vector3<T>) -> Self {
        Self { v, w }
    }

    pub fn zero() -> Self {
        Self {
            v: Vector3::zeros(),
            w: Vector3::zeros(),
        }
    }

    pub fn from_vector(x: &Vector6<T>) -> Self {
        Self {
            v: Vector3::new(x[0], x[1], x[2]),
            w: Vector3::new(x[3], x[4], x[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<T> {
        Vector6::new(self.v.x, self.v.y, self.v.z, self.w.x, self.w.y, self.w.z)
    }

    pub fn norm(&self) -> T {
        self.to_vector().norm()
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            v: self.v * s,
            w: self.w * s,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().chain(self.w.iter()).all(|c| c.as_f64().is_finite())
    }
}

impl<T: Real> std::ops::Add for Twist<T> {
    type Output = Twist<T>;

    fn add(self, rhs: Self) -> Self {
        Self {
            v: self.v + rhs.v,
            w: self.w + rhs.w,
        }
    }
}

impl<T: Real> std::ops::Neg for Twist<T> {
    type Output = Twist<T>;

    fn neg(self) -> Self {
        Self {
            v: -self.v,
            w: -self.w,
        }
    }
}

/// Unit quaternion of the rotation vector `w`.
pub fn exp_so3<T: Real>(w: &Vector3<T>) -> UnitQuaternion<T> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let half = T::lit(0.5);
    let (real, imag_scale) = if theta.as_f64() < SMALL_ANGLE {
        (
            T::one() - theta2 / T::lit(8.0),
            half - theta2 / T::lit(48.0),
        )
    } else {
        let half_theta = theta * half;
        (half_theta.cos(), half_theta.sin() / theta)
    };
    let v = w * imag_scale;
    renormalize(Quaternion::new(real, v.x, v.y, v.z))
}

/// The left Jacobian of SO(3), mapping `v` to the translation of `exp_se3(v, w)`.
fn left_jacobian<T: Real>(w: &Vector3<T>) -> Matrix3<T> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let wx = hat(w);
    let wx2 = wx * wx;
    if theta.as_f64() < SMALL_ANGLE {
        return Matrix3::identity() + wx * T::lit(0.5) + wx2 * T::lit(1.0 / 6.0);
    }
    let s_half = (theta * T::lit(0.5)).sin();
    let a = T::lit(2.0) * s_half * s_half / theta2;
    let b = (theta - theta.sin()) / (theta2 * theta);
    Matrix3::identity() + wx * a + wx2 * b
}

fn left_jacobian_inverse<T: Real>(w: &Vector3<T>) -> Matrix3<T> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let wx = hat(w);
    let wx2 = wx * wx;
    let c = if theta.as_f64() < SMALL_ANGLE {
        T::lit(1.0 / 12.0)
    } else {
        let h = theta * T::lit(0.5);
        (T::one() - h * h.cos() / h.sin()) / theta2
    };
    Matrix3::identity() - wx * T::lit(0.5) + wx2 * c
}

/// Closed-form exponential map se(3) -> SE(3).
pub fn exp_se3<T: Real>(tau: &Twist<T>) -> Pose<T> {
    Pose {
        rotation: exp_so3(&tau.w),
        translation: left_jacobian(&tau.w) * tau.v,
    }
}

/// Rotation vector of a unit quaternion with angle below `pi - margin`.
pub fn log_so3<T: Real>(q: &UnitQuaternion<T>) -> Result<Vector3<T>, GeometryError> {
    let mut q = *q.as_ref();
    if q.w < T::zero() {
        q = -q;
    }
    let imag = q.imag();
    let n = imag.norm();
    let theta = T::lit(2.0) * n.atan2(q.w);
    if theta.as_f64() >= std::f64::consts::PI - LOG_SINGULARITY_MARGIN {
        return Err(GeometryError::LogMapSingularity {
            angle_rad: theta.as_f64(),
        });
    }
    if theta.as_f64() < SMALL_ANGLE {
        // theta / n = 2 atan(n / w) / n ~ (2 / w) (1 - n^2 / (3 w^2))
        let scale = T::lit(2.0) / q.w * (T::one() - n * n / (T::lit(3.0) * q.w * q.w));
        Ok(imag * scale)
    } else {
        Ok(imag * (theta / n))
    }
}

/// Logarithm SE(3) -> se(3) on the principal domain.
pub fn log_se3<T: Real>(p: &Pose<T>) -> Result<Twist<T>, GeometryError> {
    let w = log_so3(&p.rotation)?;
    let v = left_jacobian_inverse(&w) * p.translation;
    Ok(Twist { v, w })
}

/// Angle in degrees of the relative rotation between two poses, in `[0, 180]`.
pub fn rotation_geodesic_deg<T: Real>(a: &Pose<T>, b: &Pose<T>) -> T {
    let rel = (a.rotation.inverse() * b.rotation).into_inner();
    let angle = T::lit(2.0) * rel.imag().norm().atan2(rel.w.abs());
    angle * T::lit(180.0 / std::f64::consts::PI)
}

/// Pinhole intrinsics with near/far clip depths. Pixel `(i, j)` is centered at
/// coordinate `(i, j)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct CameraIntrinsics<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
    pub z_near: T,
    pub z_far: T,
}

impl<T: Real> CameraIntrinsics<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        width: usize,
        height: usize,
        z_near: T,
        z_far: T,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            z_near,
            z_far,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels, principal point at the image center, horizontal field of view in degrees.
    pub fn from_fov(width: usize, height: usize, hfov_deg: f64) -> Result<Self, GeometryError> {
        let f = width as f64 * 0.5 / (hfov_deg.to_radians() * 0.5).tan();
        Self::new(
            T::lit(f),
            T::lit(f),
            T::lit(width as f64 * 0.5),
            T::lit(height as f64 * 0.5),
            width,
            height,
            T::lit(0.01),
            T::lit(100.0),
        )
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |msg: &str| Err(GeometryError::InvalidIntrinsics(msg.to_string()));
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return bad("focal lengths must be positive");
        }
        if !(self.z_near > T::zero() && self.z_near < self.z_far) {
            return bad("require 0 < z_near < z_far");
        }
        if self.width < 8 || self.height < 8 {
            return bad("image must be at least 8x8 pixels");
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn cast<U: Real>(&self) -> CameraIntrinsics<U> {
        CameraIntrinsics {
            fx: U::lit(self.fx.as_f64()),
            fy: U::lit(self.fy.as_f64()),
            cx: U::lit(self.cx.as_f64()),
            cy: U::lit(self.cy.as_f64()),
            width: self.width,
            height: self.height,
            z_near: U::lit(self.z_near.as_f64()),
            z_far: U::lit(self.z_far.as_f64()),
        }
    }

    /// Projects a camera-frame point; fails when it is not beyond `z_near`.
    #[inline]
    pub fn project_camera(&self, p: &Vector3<T>) -> Result<Vector2<T>, GeometryError> {
        if p.z <= self.z_near {
            return Err(GeometryError::BehindCamera {
                depth: p.z.as_f64(),
                z_near: self.z_near.as_f64(),
            });
        }
        Ok(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// `d(u, v) / d(p_cam)` at a camera-frame point.
    #[inline]
    pub fn pinhole_jacobian(&self, p: &Vector3<T>) -> Matrix2x3<T> {
        let iz = T::one() / p.z;
        let iz2 = iz * iz;
        Matrix2x3::new(
            self.fx * iz,
            T::zero(),
            -self.fx * p.x * iz2,
            T::zero(),
            self.fy * iz,
            -self.fy * p.y * iz2,
        )
    }

    /// Camera-frame point at pixel `uv` and depth `z`.
    pub fn back_project(&self, uv: &Vector2<T>, z: T) -> Vector3<T> {
        Vector3::new(
            (uv.x - self.cx) / self.fx * z,
            (uv.y - self.cy) / self.fy * z,
            z,
        )
    }
}

/// Pixel coordinate and depth of a world point.
pub fn project<T: Real>(
    point_world: &Vector3<T>,
    pose: &Pose<T>,
    k: &CameraIntrinsics<T>,
) -> Result<(Vector2<T>, T), GeometryError> {
    let p = pose.transform_point(point_world);
    let uv = k.project_camera(&p)?;
    Ok((uv, p.z))
}

/// `d(u, v) / d(tau)` for the perturbation `exp(tau) * pose`.
pub fn projection_jacobian<T: Real>(
    point_world: &Vector3<T>,
    pose: &Pose<T>,
    k: &CameraIntrinsics<T>,
) -> Result<Matrix2x6<T>, GeometryError> {
    let p = pose.transform_point(point_world);
    if p.z <= k.z_near {
        return Err(GeometryError::BehindCamera {
            depth: p.z.as_f64(),
            z_near: k.z_near.as_f64(),
        });
    }
    Ok(camera_point_jacobian(&p, k))
}

/// Same as [`projection_jacobian`] for an already transformed camera-frame point.
#[inline]
pub fn camera_point_jacobian<T: Real>(p: &Vector3<T>, k: &CameraIntrinsics<T>) -> Matrix2x6<T> {
    // d p / d tau = [I | -hat(p)]
    let jp = k.pinhole_jacobian(p);
    let jw = -(jp * hat(p));
    let mut out = Matrix2x6::zeros();
    out.fixed_view_mut::<2, 3>(0, 0).copy_from(&jp);
    out.fixed_view_mut::<2, 3>(0, 3).copy_from(&jw);
    out
}
