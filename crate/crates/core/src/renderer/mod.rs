//! Forward splatting (project, sort, alpha-blend) and its pose gradient.
//!
//! Each Gaussian is flattened to a screen-space ellipse with the EWA
//! approximation `J W Sigma W^T J^T`, sorted front to back and composited
//! per pixel. Work is split into fixed 16-row bands so the result does not
//! depend on the thread count.

mod backward;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::geometry::{CameraIntrinsics, Pose};
use crate::image::RgbImage;
use crate::scene::{Gaussian3D, Scene};
use crate::Real;

pub use backward::backward_pose;

/// Added to every projected covariance, pixels^2.
pub const COV_FLOOR: f64 = 0.3;
/// Per-splat opacity clamp.
pub const ALPHA_MAX: f64 = 0.99;
/// Blending stops once transmittance drops below this.
pub const T_MIN: f64 = 1e-5;
/// Kernel support, in standard deviations (Mahalanobis radius).
pub const SUPPORT_SIGMA: f64 = 7.0;
/// Expected depth is reported as 0 below this accumulated alpha.
pub const DEPTH_ALPHA_MIN: f64 = 1e-4;

pub(crate) const TILE: usize = 16;

/// A Gaussian flattened onto the image plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D<T: Real> {
    pub mean2d: Vector2<T>,
    /// Screen-space covariance including the anti-aliasing floor.
    pub cov2d: Matrix2<T>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<T>,
    pub depth: T,
    pub opacity: T,
    pub color: Vector3<T>,
    pub source_index: usize,
    /// Inclusive pixel bounds `[x0, x1] x [y0, y1]` of the kernel support, clipped to the viewport.
    pub bbox: [usize; 4],
}

impl<T: Real> Splat2D<T> {
    /// Kernel weight before opacity, `exp(-q/2)`, and the Mahalanobis term `q`.
    /// Zero outside the support ellipse.
    #[inline(always)]
    pub fn falloff(&self, px: T, py: T) -> (T, T) {
        let dx = px - self.mean2d.x;
        let dy = py - self.mean2d.y;
        let q = self.conic[(0, 0)] * dx * dx
            + T::lit(2.0) * self.conic[(0, 1)] * dx * dy
            + self.conic[(1, 1)] * dy * dy;
        if q > T::lit(SUPPORT_SIGMA * SUPPORT_SIGMA) {
            (T::zero(), q)
        } else {
            ((T::lit(-0.5) * q).exp(), q)
        }
    }

    #[inline(always)]
    fn covers(&self, x: usize, y: usize) -> bool {
        x >= self.bbox[0] && x <= self.bbox[1] && y >= self.bbox[2] && y <= self.bbox[3]
    }
}

/// Camera-frame quantities of one Gaussian, shared by forward and backward passes.
#[derive(Clone, Copy, Debug)]
pub(crate) struct CameraGaussian<T: Real> {
    pub p_cam: Vector3<T>,
    /// `W Sigma W^T`.
    pub cov_cam: Matrix3<T>,
    /// Pinhole Jacobian at `p_cam`.
    pub jac: Matrix2x3<T>,
}

pub(crate) fn to_camera<T: Real>(
    g: &Gaussian3D<T>,
    pose: &Pose<T>,
    k: &CameraIntrinsics<T>,
) -> Option<CameraGaussian<T>> {
    let p_cam = pose.transform_point(&g.mean);
    if p_cam.z <= k.z_near || p_cam.z >= k.z_far {
        return None;
    }
    let w = pose.rotation_matrix();
    let cov_cam = w * g.covariance() * w.transpose();
    Some(CameraGaussian {
        p_cam,
        cov_cam,
        jac: k.pinhole_jacobian(&p_cam),
    })
}

/// Projects one Gaussian; `None` when it is culled.
pub fn project_gaussian<T: Real>(
    g: &Gaussian3D<T>,
    pose: &Pose<T>,
    k: &CameraIntrinsics<T>,
) -> Option<Splat2D<T>> {
    project_indexed(g, 0, pose, k)
}

fn project_indexed<T: Real>(
    g: &Gaussian3D<T>,
    source_index: usize,
    pose: &Pose<T>,
    k: &CameraIntrinsics<T>,
) -> Option<Splat2D<T>> {
    let cg = to_camera(g, pose, k)?;
    let mean2d = k.project_camera(&cg.p_cam).ok()?;
    let cov = cg.jac * cg.cov_cam * cg.jac.transpose();
    let floor = T::lit(COV_FLOOR);
    // Symmetrize explicitly; the product above is only symmetric up to rounding.
    let off = (cov[(0, 1)] + cov[(1, 0)]) * T::lit(0.5);
    let cov2d = Matrix2::new(cov[(0, 0)] + floor, off, off, cov[(1, 1)] + floor);
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - off * off;
    if !(det > T::zero()) || !det.as_f64().is_finite() {
        return None;
    }
    let conic = Matrix2::new(cov2d[(1, 1)] / det, -off / det, -off / det, cov2d[(0, 0)] / det);

    let rx = T::lit(SUPPORT_SIGMA) * cov2d[(0, 0)].sqrt();
    let ry = T::lit(SUPPORT_SIGMA) * cov2d[(1, 1)].sqrt();
    let (w, h) = (k.width as f64, k.height as f64);
    let x0 = (mean2d.x - rx).as_f64().ceil().max(0.0);
    let x1 = (mean2d.x + rx).as_f64().floor().min(w - 1.0);
    let y0 = (mean2d.y - ry).as_f64().ceil().max(0.0);
    let y1 = (mean2d.y + ry).as_f64().floor().min(h - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some(Splat2D {
        mean2d,
        cov2d,
        conic,
        depth: cg.p_cam.z,
        opacity: g.opacity,
        color: g.color,
        source_index,
        bbox: [x0 as usize, x1 as usize, y0 as usize, y1 as usize],
    })
}

/// Output of one forward render.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage<T: Real> {
    /// Composited over the scene background.
    pub color: RgbImage<T>,
    /// Accumulated opacity, `1 - T_final`.
    pub alpha: Vec<T>,
    /// Alpha-weighted mean splat depth; 0 where alpha is negligible.
    pub depth: Vec<T>,
}

impl<T: Real> RenderedImage<T> {
    pub fn width(&self) -> usize {
        self.color.width()
    }

    pub fn height(&self) -> usize {
        self.color.height()
    }

    pub fn alpha_at(&self, x: usize, y: usize) -> T {
        self.alpha[y * self.width() + x]
    }

    pub fn depth_at(&self, x: usize, y: usize) -> T {
        self.depth[y * self.width() + x]
    }
}

/// Projected, depth-sorted splats with per-tile index lists.
pub(crate) struct Prepared<T: Real> {
    pub splats: Vec<Splat2D<T>>,
    pub tiles_x: usize,
    pub tiles: Vec<Vec<u32>>,
}

pub(crate) fn prepare<T: Real>(
    scene: &Scene<T>,
    pose: &Pose<T>,
    k: &CameraIntrinsics<T>,
) -> Prepared<T> {
    let mut splats: Vec<Splat2D<T>> = scene
        .gaussians()
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_indexed(g, i, pose, k))
        .collect();
    splats.sort_by(|a, b| {
        a.depth
            .as_f64()
            .total_cmp(&b.depth.as_f64())
            .then(a.source_index.cmp(&b.source_index))
    });
    let tiles_x = k.width.div_ceil(TILE);
    let tiles_y = k.height.div_ceil(TILE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (i, s) in splats.iter().enumerate() {
        for ty in s.bbox[2] / TILE..=s.bbox[3] / TILE {
            for tx in s.bbox[0] / TILE..=s.bbox[1] / TILE {
                tiles[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    Prepared {
        splats,
        tiles_x,
        tiles,
    }
}

/// One blended contribution at a pixel.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Contribution<T: Real> {
    pub splat: u32,
    pub alpha: T,
    /// Unclamped `opacity * falloff`; the clamp is active when this exceeds `ALPHA_MAX`.
    pub raw_alpha: T,
    /// Transmittance in front of this splat.
    pub transmittance: T,
    pub dx: T,
    pub dy: T,
}

/// Front-to-back walk over the splats covering pixel `(x, y)`. Returns the
/// final transmittance.
#[inline]
pub(crate) fn blend_pixel<T: Real>(
    prep: &Prepared<T>,
    x: usize,
    y: usize,
    mut visit: impl FnMut(Contribution<T>, &Splat2D<T>),
) -> T {
    let tile = &prep.tiles[(y / TILE) * prep.tiles_x + x / TILE];
    let (px, py) = (T::lit(x as f64), T::lit(y as f64));
    let alpha_max = T::lit(ALPHA_MAX);
    let t_min = T::lit(T_MIN);
    let mut t = T::one();
    for &idx in tile {
        let s = &prep.splats[idx as usize];
        if !s.covers(x, y) {
            continue;
        }
        let (g, _) = s.falloff(px, py);
        if g == T::zero() {
            continue;
        }
        let raw = s.opacity * g;
        let alpha = if raw > alpha_max { alpha_max } else { raw };
        visit(
            Contribution {
                splat: idx,
                alpha,
                raw_alpha: raw,
                transmittance: t,
                dx: px - s.mean2d.x,
                dy: py - s.mean2d.y,
            },
            s,
        );
        t *= T::one() - alpha;
        if t < t_min {
            break;
        }
    }
    t
}

/// Renders color, accumulated alpha and expected depth.
pub fn render<T: Real>(scene: &Scene<T>, pose: &Pose<T>, k: &CameraIntrinsics<T>) -> RenderedImage<T> {
    let prep = prepare(scene, pose, k);
    let (w, h) = (k.width, k.height);
    let bg = *scene.background();
    let bands: Vec<(Vec<Vector3<T>>, Vec<T>, Vec<T>)> = (0..h.div_ceil(TILE))
        .into_par_iter()
        .map(|band| {
            let rows = band * TILE..((band + 1) * TILE).min(h);
            let n = rows.len() * w;
            let (mut color, mut alpha, mut depth) =
                (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
            for y in rows {
                for x in 0..w {
                    let mut c = Vector3::zeros();
                    let mut d = T::zero();
                    let t = blend_pixel(&prep, x, y, |ctb, s| {
                        let wgt = ctb.alpha * ctb.transmittance;
                        c += s.color * wgt;
                        d += s.depth * wgt;
                    });
                    let a = T::one() - t;
                    color.push(c + bg * t);
                    alpha.push(a);
                    depth.push(if a < T::lit(DEPTH_ALPHA_MIN) { T::zero() } else { d / a });
                }
            }
            (color, alpha, depth)
        })
        .collect();

    let mut color = Vec::with_capacity(w * h);
    let mut alpha = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    for (c, a, d) in bands {
        color.extend(c);
        alpha.extend(a);
        depth.extend(d);
    }
    RenderedImage {
        color: RgbImage::from_pixels(w, h, color).expect("band sizes add up"),
        alpha,
        depth,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    fn k(w: usize, f: f64) -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(f, f, w as f64 / 2.0, w as f64 / 2.0, w, w, 0.1, 100.0).unwrap()
    }

    #[test]
    fn isotropic_on_axis_closed_form() {
        let (f, s, z) = (80.0, 0.2, 4.0);
        let g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, z), s, 0.8, Vector3::repeat(0.5));
        let sp = project_gaussian(&g, &Pose::identity(), &k(64, f)).unwrap();
        let expect = (f * s / z).powi(2) + COV_FLOOR;
        assert!((sp.cov2d - Matrix2::identity() * expect).amax() < 1e-6);
        assert_eq!(sp.mean2d, Vector2::new(32.0, 32.0));
        assert_eq!(sp.depth, z);
    }

    #[test]
    fn behind_and_offscreen_are_culled() {
        let kk = k(32, 30.0);
        let behind = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, -2.0), 0.1, 0.8, Vector3::zeros());
        assert!(project_gaussian(&behind, &Pose::identity(), &kk).is_none());
        let aside = Gaussian3D::isotropic(Vector3::new(50.0, 0.0, 2.0), 0.01, 0.8, Vector3::zeros());
        assert!(project_gaussian(&aside, &Pose::identity(), &kk).is_none());
    }

    #[test]
    fn all_culled_renders_background() {
        let bg = Vector3::new(0.2, 0.3, 0.4);
        let g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, -2.0), 0.1, 0.8, Vector3::zeros());
        let scene = Scene::with_background(vec![g], bg).unwrap();
        let r = render(&scene, &Pose::identity(), &k(24, 20.0));
        assert!(r.color.pixels().iter().all(|c| *c == bg));
        assert!(r.alpha.iter().all(|a| *a == 0.0));
        assert!(r.depth.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn single_splat_center_and_falloff() {
        let color = Vector3::new(0.9, 0.2, 0.1);
        let g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 5.0), 0.25, 0.7, color);
        let scene = Scene::new(vec![g]).unwrap();
        let kk = k(64, 60.0);
        let r = render(&scene, &Pose::identity(), &kk);
        let center = r.color.get(32, 32);
        assert!((center - color * 0.7).amax() < 1e-12);
        assert!((r.alpha_at(32, 32) - 0.7).abs() < 1e-12);
        assert!((r.depth_at(32, 32) - 5.0).abs() < 1e-12);
        let var = (60.0 * 0.25 / 5.0f64).powi(2) + COV_FLOOR;
        for dx in 1..6usize {
            let expect = 0.7 * (-((dx * dx) as f64) / (2.0 * var)).exp();
            assert!((r.alpha_at(32 + dx, 32) - expect).abs() < 1e-12);
            assert!((r.alpha_at(32, 32 - dx) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn opaque_splat_is_clamped() {
        let g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 5.0), 0.5, 1.0, Vector3::repeat(1.0));
        let r = render(&Scene::new(vec![g]).unwrap(), &Pose::identity(), &k(32, 30.0));
        assert!((r.alpha_at(16, 16) - ALPHA_MAX).abs() < 1e-15);
    }

    #[test]
    fn front_splat_occludes() {
        let red = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 3.0), 0.5, 1.0, Vector3::new(1.0, 0.0, 0.0));
        let blue = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 6.0), 0.5, 1.0, Vector3::new(0.0, 0.0, 1.0));
        let r = render(&Scene::new(vec![blue, red]).unwrap(), &Pose::identity(), &k(32, 30.0));
        let c = r.color.get(16, 16);
        assert!((c.x - 0.99).abs() < 1e-12);
        assert!((c.z - 0.01 * 0.99).abs() < 1e-12);
        let depth = (0.99 * 3.0 + 0.0099 * 6.0) / (1.0 - 0.01 * 0.01);
        assert!((r.depth_at(16, 16) - depth).abs() < 1e-12);
    }

    #[test]
    fn rotated_anisotropic_splat_follows_its_axis() {
        let mut g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 4.0), 0.05, 0.9, Vector3::repeat(1.0));
        g.scale = Vector3::new(0.5, 0.05, 0.05);
        g.rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let sp = project_gaussian(&g, &Pose::identity(), &k(64, 40.0)).unwrap();
        assert!(sp.cov2d[(1, 1)] > 10.0 * sp.cov2d[(0, 0)]);
    }
}
