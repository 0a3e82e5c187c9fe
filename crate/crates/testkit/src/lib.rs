//! Test oracles written without reference to the production code paths:
//! a brute-force splat renderer, Monte-Carlo covariance push-forward and
//! central finite differences.
//!
//! Everything here works on plain `f64` data so it shares no types with the
//! library under test.

use nalgebra::{Matrix2, Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
pub struct RefGaussian {
    pub mean: [f64; 3],
    pub scale: [f64; 3],
    /// `(w, x, y, z)`, normalized by the oracle.
    pub rot: [f64; 4],
    pub opacity: f64,
    pub color: [f64; 3],
}

#[derive(Clone, Copy, Debug)]
pub struct RefCamera {
    /// World-to-camera rotation, `(w, x, y, z)`.
    pub rot: [f64; 4],
    pub trans: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub z_near: f64,
    pub z_far: f64,
}

pub struct RefImage {
    pub width: usize,
    pub height: usize,
    pub color: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
    pub depth: Vec<f64>,
}

fn rot_matrix(q: [f64; 4]) -> Matrix3<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
        .to_rotation_matrix()
        .into_inner()
}

struct RefSplat {
    mean: Vector2<f64>,
    inv_cov: Matrix2<f64>,
    depth: f64,
    opacity: f64,
    color: Vector3<f64>,
    index: usize,
}

/// Renders by evaluating every Gaussian at every pixel with an exact stable sort
/// and no bounding boxes or early termination.
pub fn brute_force_render(gaussians: &[RefGaussian], cam: &RefCamera, background: [f64; 3]) -> RefImage {
    let w_rot = rot_matrix(cam.rot);
    let t = Vector3::from(cam.trans);
    let mut splats = Vec::new();
    for (index, g) in gaussians.iter().enumerate() {
        let p = w_rot * Vector3::from(g.mean) + t;
        if p.z <= cam.z_near || p.z >= cam.z_far {
            continue;
        }
        let r = rot_matrix(g.rot);
        let s2 = Matrix3::from_diagonal(&Vector3::from(g.scale).map(|s| s * s));
        let sigma = r * s2 * r.transpose();
        let j = nalgebra::Matrix2x3::new(
            cam.fx / p.z,
            0.0,
            -cam.fx * p.x / (p.z * p.z),
            0.0,
            cam.fy / p.z,
            -cam.fy * p.y / (p.z * p.z),
        );
        let cov = j * w_rot * sigma * w_rot.transpose() * j.transpose() + Matrix2::identity() * 0.3;
        let Some(inv_cov) = cov.try_inverse() else {
            continue;
        };
        splats.push(RefSplat {
            mean: Vector2::new(cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy),
            inv_cov,
            depth: p.z,
            opacity: g.opacity,
            color: Vector3::from(g.color),
            index,
        });
    }
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));

    let n = cam.width * cam.height;
    let mut out = RefImage {
        width: cam.width,
        height: cam.height,
        color: Vec::with_capacity(n),
        alpha: Vec::with_capacity(n),
        depth: Vec::with_capacity(n),
    };
    for y in 0..cam.height {
        for x in 0..cam.width {
            let px = Vector2::new(x as f64, y as f64);
            let mut trans = 1.0;
            let mut c = Vector3::zeros();
            let mut d = 0.0;
            for s in &splats {
                let dv = px - s.mean;
                let q = (dv.transpose() * s.inv_cov * dv)[(0, 0)];
                let alpha = (s.opacity * (-0.5 * q).exp()).min(0.99);
                c += s.color * (alpha * trans);
                d += s.depth * alpha * trans;
                trans *= 1.0 - alpha;
            }
            let a = 1.0 - trans;
            let col = c + Vector3::from(background) * trans;
            out.color.push([col.x, col.y, col.z]);
            out.alpha.push(a);
            out.depth.push(if a < 1e-4 { 0.0 } else { d / a });
        }
    }
    out
}

/// Screen-space second moment of a 3D Gaussian pushed through the exact
/// perspective projection, estimated from `samples` draws.
pub fn monte_carlo_cov2d(g: &RefGaussian, cam: &RefCamera, samples: usize, seed: u64) -> [[f64; 2]; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_rot = rot_matrix(cam.rot);
    let r = rot_matrix(g.rot);
    let mut pts = Vec::with_capacity(samples);
    for _ in 0..samples {
        let z = Vector3::from_fn(|_, _| standard_normal(&mut rng));
        let local = Vector3::new(z.x * g.scale[0], z.y * g.scale[1], z.z * g.scale[2]);
        let p = w_rot * (Vector3::from(g.mean) + r * local) + Vector3::from(cam.trans);
        pts.push(Vector2::new(cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy));
    }
    let mean = pts.iter().sum::<Vector2<f64>>() / samples as f64;
    let mut cov = Matrix2::zeros();
    for p in &pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= (samples - 1) as f64;
    [[cov[(0, 0)], cov[(0, 1)]], [cov[(1, 0)], cov[(1, 1)]]]
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Central differences of a scalar function of `N` coordinates.
pub fn central_diff<const N: usize>(f: impl Fn(&[f64; N]) -> f64, x: &[f64; N], eps: f64) -> [f64; N] {
    let mut out = [0.0; N];
    for i in 0..N {
        let mut hi = *x;
        let mut lo = *x;
        hi[i] += eps;
        lo[i] -= eps;
        out[i] = (f(&hi) - f(&lo)) / (2.0 * eps);
    }
    out
}

/// Relative error with an absolute floor so near-zero entries do not explode.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
