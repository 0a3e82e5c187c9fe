//! Harris corners and zero-mean normalized patch descriptors.

use rayon::prelude::*;

use crate::image::RgbImage;
use crate::Real;

/// Harris sensitivity.
pub const HARRIS_K: f32 = 0.04;
/// Corners kept per image after non-max suppression.
pub const MAX_CORNERS: usize = 512;
/// Descriptor patch side length.
pub const PATCH: usize = 11;
const RADIUS: usize = PATCH / 2;
/// Corners closer than this to the border are skipped. Leaves room for a
/// rotated patch.
const BORDER: usize = 8;
/// Responses at or below this are treated as flat.
const MIN_RESPONSE: f32 = 1e-10;
const DESC_LEN: usize = PATCH * PATCH * 3;

/// Corners and unit-norm descriptors of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub width: usize,
    pub height: usize,
    /// Pixel coordinates of the corners.
    pub points: Vec<(usize, usize)>,
    /// `points.len()` descriptors of `PATCH * PATCH * 3` floats each.
    pub descriptors: Vec<f32>,
}

impl Features {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.descriptors[i * DESC_LEN..(i + 1) * DESC_LEN]
    }
}

struct Planes {
    w: usize,
    h: usize,
    rgb: [Vec<f32>; 3],
    luma: Vec<f32>,
}

impl Planes {
    fn new<T: Real>(img: &RgbImage<T>) -> Self {
        let n = img.width() * img.height();
        let mut rgb = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
        for p in img.pixels() {
            for (c, plane) in rgb.iter_mut().enumerate() {
                plane.push(p[c].as_f64() as f32);
            }
        }
        Self {
            w: img.width(),
            h: img.height(),
            rgb,
            luma: img.luma_f32(),
        }
    }

    #[inline]
    fn bilinear(&self, plane: &[f32], x: f32, y: f32) -> f32 {
        let x = x.clamp(0.0, (self.w - 1) as f32);
        let y = y.clamp(0.0, (self.h - 1) as f32);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.w - 1), (y0 + 1).min(self.h - 1));
        let (fx, fy) = (x - x0 as f32, y - y0 as f32);
        let top = plane[y0 * self.w + x0] * (1.0 - fx) + plane[y0 * self.w + x1] * fx;
        let bottom = plane[y1 * self.w + x0] * (1.0 - fx) + plane[y1 * self.w + x1] * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Harris response on luma: Sobel gradients, 5x5 Gaussian window (sigma 1).
fn harris_response(p: &Planes) -> Vec<f32> {
    let (w, h) = (p.w, p.h);
    let l = &p.luma;
    let at = |x: usize, y: usize| l[y * w + x];
    let mut ixx = vec![0f32; w * h];
    let mut iyy = vec![0f32; w * h];
    let mut ixy = vec![0f32; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x - 1, y)
                - at(x - 1, y + 1))
                / 8.0;
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                - at(x - 1, y - 1)
                - 2.0 * at(x, y - 1)
                - at(x + 1, y - 1))
                / 8.0;
            let i = y * w + x;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    const G: [f32; 5] = [0.054_488_685, 0.244_201_34, 0.402_619_95, 0.244_201_34, 0.054_488_685];
    let blur = |src: &[f32]| -> Vec<f32> {
        let mut tmp = vec![0f32; w * h];
        for y in 0..h {
            for x in 2..w.saturating_sub(2) {
                tmp[y * w + x] = (0..5).map(|k| G[k] * src[y * w + x + k - 2]).sum();
            }
        }
        let mut out = vec![0f32; w * h];
        for y in 2..h.saturating_sub(2) {
            for x in 0..w {
                out[y * w + x] = (0..5).map(|k| G[k] * tmp[(y + k - 2) * w + x]).sum();
            }
        }
        out
    };
    let (sxx, syy, sxy) = (blur(&ixx), blur(&iyy), blur(&ixy));
    let mut r = vec![0f32; w * h];
    r.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, v) in row.iter_mut().enumerate() {
            let i = y * w + x;
            let (a, b, c) = (sxx[i], syy[i], sxy[i]);
            *v = a * b - c * c - HARRIS_K * (a + b) * (a + b);
        }
    });
    r
}

/// Local maxima of the Harris response, strongest first.
fn detect(p: &Planes) -> Vec<(usize, usize)> {
    let (w, h) = (p.w, p.h);
    if w <= 2 * BORDER || h <= 2 * BORDER {
        return Vec::new();
    }
    let r = harris_response(p);
    let mut corners: Vec<(f32, usize)> = Vec::new();
    for y in BORDER..h - BORDER {
        for x in BORDER..w - BORDER {
            let i = y * w + x;
            let v = r[i];
            if v <= MIN_RESPONSE {
                continue;
            }
            // Ties go to the earlier pixel in raster order.
            let mut is_max = true;
            'nb: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let j = ((y as isize + dy) as usize) * w + (x as isize + dx) as usize;
                    if r[j] > v || (r[j] == v && j < i) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                corners.push((v, i));
            }
        }
    }
    corners.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    corners.truncate(MAX_CORNERS);
    corners.into_iter().map(|(_, i)| (i % w, i / w)).collect()
}

/// Dominant gradient orientation: peak of a 36-bin, magnitude-weighted
/// histogram over a Gaussian window, refined by a parabola through the peak.
fn orientation(p: &Planes, x: usize, y: usize) -> f32 {
    const BINS: usize = 36;
    let r = BORDER as isize - 1;
    let sigma2 = (r as f32 / 2.0).powi(2);
    let l = |x: isize, y: isize| p.luma[y as usize * p.w + x as usize];
    let mut hist = [0f32; BINS];
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = (dx * dx + dy * dy) as f32;
            if d2 > (r * r) as f32 {
                continue;
            }
            let (cx, cy) = (x as isize + dx, y as isize + dy);
            let gx = l(cx + 1, cy) - l(cx - 1, cy);
            let gy = l(cx, cy + 1) - l(cx, cy - 1);
            let mag = (gx * gx + gy * gy).sqrt() * (-d2 / (2.0 * sigma2)).exp();
            let a = gy.atan2(gx).rem_euclid(std::f32::consts::TAU);
            hist[(a / std::f32::consts::TAU * BINS as f32) as usize % BINS] += mag;
        }
    }
    // Light smoothing before picking the peak.
    let smooth: Vec<f32> = (0..BINS)
        .map(|i| 0.25 * hist[(i + BINS - 1) % BINS] + 0.5 * hist[i] + 0.25 * hist[(i + 1) % BINS])
        .collect();
    let peak = (0..BINS).fold(0, |b, i| if smooth[i] > smooth[b] { i } else { b });
    let (l0, c0, r0) = (smooth[(peak + BINS - 1) % BINS], smooth[peak], smooth[(peak + 1) % BINS]);
    let denom = l0 - 2.0 * c0 + r0;
    let offset = if denom.abs() > 1e-12 { 0.5 * (l0 - r0) / denom } else { 0.0 };
    (peak as f32 + 0.5 + offset) / BINS as f32 * std::f32::consts::TAU
}

/// Corners and descriptors. With `oriented`, each patch is resampled in a
/// frame aligned with its dominant gradient direction, which buys in-plane rotation
/// invariance at some cost in discrimination.
pub fn extract_features<T: Real>(img: &RgbImage<T>, oriented: bool) -> Features {
    let planes = Planes::new(img);
    let points = detect(&planes);
    let mut kept = Vec::with_capacity(points.len());
    let mut descriptors = Vec::with_capacity(points.len() * DESC_LEN);
    let mut patch = [0f32; DESC_LEN];
    for &(x, y) in &points {
        let (s, c) = if oriented {
            orientation(&planes, x, y).sin_cos()
        } else {
            (0.0, 1.0)
        };
        let mut k = 0;
        for plane in &planes.rgb {
            for j in 0..PATCH {
                for i in 0..PATCH {
                    let (u, v) = (i as f32 - RADIUS as f32, j as f32 - RADIUS as f32);
                    patch[k] = if oriented {
                        planes.bilinear(plane, x as f32 + c * u - s * v, y as f32 + s * u + c * v)
                    } else {
                        plane[(y + j - RADIUS) * planes.w + x + i - RADIUS]
                    };
                    k += 1;
                }
            }
        }
        let mean = patch.iter().sum::<f32>() / DESC_LEN as f32;
        patch.iter_mut().for_each(|v| *v -= mean);
        let norm = patch.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        kept.push((x, y));
        descriptors.extend(patch.iter().map(|v| v / norm));
    }
    Features {
        width: img.width(),
        height: img.height(),
        points: kept,
        descriptors,
    }
}

#[inline]
pub(crate) fn ncc(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
