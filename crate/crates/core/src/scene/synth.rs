use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Gaussian3D, Scene, SceneError};
use crate::Real;

/// Saturated colors with distinct luminance, so neighbouring Gaussians
/// always produce photometric texture.
pub const PALETTE: [[f64; 3]; 8] = [
    [0.95, 0.15, 0.10],
    [0.10, 0.70, 0.20],
    [0.15, 0.25, 0.95],
    [0.98, 0.85, 0.10],
    [0.90, 0.90, 0.90],
    [0.55, 0.10, 0.65],
    [0.05, 0.80, 0.85],
    [0.45, 0.30, 0.10],
];

/// Where the Gaussian means are placed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Uniform inside the box.
    #[default]
    Volume,
    /// On the surface of the ellipsoid inscribed in the box, flattened along
    /// the surface normal: an opaque, textured object rather than a cloud.
    Shell,
}

/// Thickness of shell Gaussians relative to their tangential scale.
pub const SHELL_FLATTEN: f64 = 0.1;

/// Parameters of a random synthetic scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub count: usize,
    pub layout: Layout,
    pub box_min: [f64; 3],
    pub box_max: [f64; 3],
    /// Per-axis standard deviations are drawn log-uniformly from this range.
    pub scale_range: (f64, f64),
    pub opacity_range: (f64, f64),
    /// Shell only: relative radial spread of the means.
    pub shell_thickness: f64,
    pub background: [f64; 3],
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            count: 1000,
            layout: Layout::Volume,
            box_min: [-1.0; 3],
            box_max: [1.0; 3],
            scale_range: (0.03, 0.12),
            opacity_range: (0.6, 1.0),
            shell_thickness: 0.0,
            background: [0.0; 3],
            seed: 0,
        }
    }
}

/// Deterministic random scene; a pure function of `spec`.
pub fn synth_scene<T: Real>(spec: &SynthSpec) -> Result<Scene<T>, SceneError> {
    if spec.count == 0 {
        return Err(SceneError::InvalidSpec("count must be at least 1".into()));
    }
    for axis in 0..3 {
        let (lo, hi) = (spec.box_min[axis], spec.box_max[axis]);
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(SceneError::DegenerateBox(format!(
                "axis {axis}: [{lo}, {hi}]"
            )));
        }
    }
    let (s_lo, s_hi) = spec.scale_range;
    if !(s_lo > 0.0 && s_hi >= s_lo) {
        return Err(SceneError::InvalidSpec(format!("scale range {:?}", spec.scale_range)));
    }
    let (o_lo, o_hi) = spec.opacity_range;
    if !(o_lo > 0.0 && o_hi >= o_lo && o_hi <= 1.0) {
        return Err(SceneError::InvalidSpec(format!("opacity range {:?}", spec.opacity_range)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
        if hi > lo {
            rng.gen_range(lo..hi)
        } else {
            lo
        }
    };
    let (ln_lo, ln_hi) = (s_lo.ln(), s_hi.ln());
    let mut gaussians = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let (mean, scale, rot) = match spec.layout {
            Layout::Volume => {
                let mean = Vector3::from_fn(|i, _| uniform(&mut rng, spec.box_min[i], spec.box_max[i]));
                let scale = Vector3::from_fn(|_, _| uniform(&mut rng, ln_lo, ln_hi).exp());
                (mean, scale, uniform_rotation(&mut rng))
            }
            Layout::Shell => {
                let center = (Vector3::from(spec.box_min) + Vector3::from(spec.box_max)) * 0.5;
                let radii = (Vector3::from(spec.box_max) - Vector3::from(spec.box_min)) * 0.5;
                let dir = uniform_direction(&mut rng);
                let lift = 1.0 + uniform(&mut rng, -spec.shell_thickness, spec.shell_thickness);
                let mean = center + dir.component_mul(&radii) * lift;
                let normal = dir.component_div(&radii).normalize();
                let tangential = [uniform(&mut rng, ln_lo, ln_hi).exp(), uniform(&mut rng, ln_lo, ln_hi).exp()];
                let scale = Vector3::new(tangential[0], tangential[1], tangential[0].min(tangential[1]) * SHELL_FLATTEN);
                // Local z along the normal, random spin about it.
                let align = UnitQuaternion::rotation_between(&Vector3::z(), &normal)
                    .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI));
                let spin = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), uniform(&mut rng, 0.0, std::f64::consts::TAU));
                (mean, scale, *(align * spin).quaternion())
            }
        };
        let opacity = uniform(&mut rng, o_lo, o_hi);
        let color = PALETTE[rng.gen_range(0..PALETTE.len())];
        gaussians.push(Gaussian3D {
            mean: mean.map(T::lit),
            scale: scale.map(T::lit),
            rot: UnitQuaternion::new_normalize(Quaternion::new(
                T::lit(rot.w),
                T::lit(rot.i),
                T::lit(rot.j),
                T::lit(rot.k),
            )),
            opacity: T::lit(opacity),
            color: Vector3::from(color).map(T::lit),
        });
    }
    Scene::with_background(gaussians, Vector3::from(spec.background).map(T::lit))
}

fn uniform_direction(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi = std::f64::consts::TAU * rng.gen::<f64>();
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Shoemake's uniform sampling of unit quaternions.
fn uniform_rotation(rng: &mut ChaCha8Rng) -> Quaternion<f64> {
    use std::f64::consts::TAU;
    let u1: f64 = rng.gen();
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (t1, t2) = (TAU * rng.gen::<f64>(), TAU * rng.gen::<f64>());
    Quaternion::new(b * t2.cos(), a * t1.sin(), a * t1.cos(), b * t2.sin())
}
