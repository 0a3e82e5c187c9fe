use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::{blend_pixel, prepare, to_camera, Contribution, Prepared, ALPHA_MAX, TILE};
use crate::geometry::{hat, CameraIntrinsics, Pose, Twist};
use crate::image::RgbImage;
use crate::scene::Scene;
use crate::Real;

/// Per-splat gradient of the loss w.r.t. its screen-space parameters.
#[derive(Clone, Copy, Debug)]
struct SplatGrad<T: Real> {
    mean2d: Vector2<T>,
    /// w.r.t. conic entries `(a, b, c)` of `q = a dx^2 + 2 b dx dy + c dy^2`.
    conic: Vector3<T>,
}

impl<T: Real> SplatGrad<T> {
    fn zero() -> Self {
        Self {
            mean2d: Vector2::zeros(),
            conic: Vector3::zeros(),
        }
    }
}

/// Gradient of `sum(dl_dcolor * color)` w.r.t. a left twist perturbation of `pose`.
///
/// The forward blending state is recomputed per pixel. Per-splat partials are
/// accumulated per 16-row band and reduced in band order, so the result is
/// bit-identical across runs and thread counts.
pub fn backward_pose<T: Real>(
    scene: &Scene<T>,
    pose: &Pose<T>,
    k: &CameraIntrinsics<T>,
    dl_dcolor: &RgbImage<T>,
) -> Twist<T> {
    assert!(
        dl_dcolor.width() == k.width && dl_dcolor.height() == k.height,
        "gradient image size does not match intrinsics"
    );
    let prep = prepare(scene, pose, k);
    if prep.splats.is_empty() {
        return Twist::zero();
    }
    let bg = *scene.background();
    let band_grads: Vec<Vec<SplatGrad<T>>> = (0..k.height.div_ceil(TILE))
        .into_par_iter()
        .map(|band| accumulate_band(&prep, band, k, dl_dcolor, &bg))
        .collect();

    let mut grads = vec![SplatGrad::zero(); prep.splats.len()];
    for band in &band_grads {
        for (acc, g) in grads.iter_mut().zip(band) {
            acc.mean2d += g.mean2d;
            acc.conic += g.conic;
        }
    }

    let mut v = Vector3::zeros();
    let mut w = Vector3::zeros();
    for (splat, g) in prep.splats.iter().zip(&grads) {
        if g.mean2d == Vector2::zeros() && g.conic == Vector3::zeros() {
            continue;
        }
        let src = &scene.gaussians()[splat.source_index];
        let cg = to_camera(src, pose, k).expect("projected splat has a camera-frame gaussian");
        let (dv, dw) = splat_twist_gradient(&splat.conic, &cg.p_cam, &cg.cov_cam, &cg.jac, k, g);
        v += dv;
        w += dw;
    }
    Twist::new(v, w)
}

fn accumulate_band<T: Real>(
    prep: &Prepared<T>,
    band: usize,
    k: &CameraIntrinsics<T>,
    dl_dcolor: &RgbImage<T>,
    bg: &Vector3<T>,
) -> Vec<SplatGrad<T>> {
    let mut grads = vec![SplatGrad::zero(); prep.splats.len()];
    let mut stack: Vec<Contribution<T>> = Vec::with_capacity(64);
    let alpha_max = T::lit(ALPHA_MAX);
    for y in band * TILE..((band + 1) * TILE).min(k.height) {
        for x in 0..k.width {
            let dl_dc = dl_dcolor.get(x, y);
            if *dl_dc == Vector3::zeros() {
                continue;
            }
            stack.clear();
            let t_final = blend_pixel(prep, x, y, |c, _| stack.push(c));
            // Everything behind the current splat, including the background term.
            let mut behind = bg * t_final;
            for c in stack.iter().rev() {
                let s = &prep.splats[c.splat as usize];
                let dc_dalpha = s.color * c.transmittance - behind / (T::one() - c.alpha);
                behind += s.color * (c.alpha * c.transmittance);
                if c.raw_alpha > alpha_max {
                    continue;
                }
                let dl_dalpha = dl_dc.dot(&dc_dalpha);
                // alpha = opacity * exp(-q / 2)
                let dl_dq = dl_dalpha * c.alpha * T::lit(-0.5);
                let a = &s.conic;
                let (dx, dy) = (c.dx, c.dy);
                let g = &mut grads[c.splat as usize];
                // dq/dmean = -2 A d
                g.mean2d.x -= dl_dq * T::lit(2.0) * (a[(0, 0)] * dx + a[(0, 1)] * dy);
                g.mean2d.y -= dl_dq * T::lit(2.0) * (a[(0, 1)] * dx + a[(1, 1)] * dy);
                g.conic.x += dl_dq * dx * dx;
                g.conic.y += dl_dq * T::lit(2.0) * dx * dy;
                g.conic.z += dl_dq * dy * dy;
            }
        }
    }
    grads
}

/// Chain rule from screen-space splat gradients to the twist `(v, w)`.
fn splat_twist_gradient<T: Real>(
    conic: &Matrix2<T>,
    p: &Vector3<T>,
    cov_cam: &Matrix3<T>,
    jac: &Matrix2x3<T>,
    k: &CameraIntrinsics<T>,
    g: &SplatGrad<T>,
) -> (Vector3<T>, Vector3<T>) {
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    // Conic gradient as a full symmetric matrix, then through the inverse.
    let g_conic = Matrix2::new(g.conic.x, g.conic.y * half, g.conic.y * half, g.conic.z);
    let d_cov2d = -(conic * g_conic * conic);
    // cov2d = J M J^T + floor
    let d_cov_cam = jac.transpose() * d_cov2d * jac;
    let d_jac = d_cov2d * jac * cov_cam * two;

    // J = [[fx/z, 0, -fx x/z^2], [0, fy/z, -fy y/z^2]]
    let iz = T::one() / p.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut d_p = jac.transpose() * g.mean2d;
    d_p.x += d_jac[(0, 2)] * (-k.fx * iz2);
    d_p.y += d_jac[(1, 2)] * (-k.fy * iz2);
    d_p.z += d_jac[(0, 0)] * (-k.fx * iz2)
        + d_jac[(0, 2)] * (two * k.fx * p.x * iz3)
        + d_jac[(1, 1)] * (-k.fy * iz2)
        + d_jac[(1, 2)] * (two * k.fy * p.y * iz3);

    // p' = p + v + w x p
    let dv = d_p;
    let mut dw = p.cross(&d_p);
    // M' = R(w) M R(w)^T, dM/dw_k = G_k M - M G_k
    for axis in 0..3 {
        let gk = hat(&Vector3::ith(axis, T::one()));
        let dm = gk * cov_cam - cov_cam * gk;
        dw[axis] += d_cov_cam.component_mul(&dm).sum();
    }
    (dv, dw)
}
