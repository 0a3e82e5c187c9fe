//! 2D correspondences between a rendered view and the query image, and
//! their lifting to 3D anchors through the rendered depth.
//!
//! Coordinates in a [`Match`] are normalized: pixel coordinate divided by the
//! image width (x) or height (y), with pixel centers at integer positions.

mod features;

use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{project, CameraIntrinsics, Pose};
use crate::image::RgbImage;
use crate::renderer::RenderedImage;
use crate::scene::Scene;
use crate::Real;

pub use features::{extract_features, Features, HARRIS_K, MAX_CORNERS, PATCH};

/// Lowe ratio on descriptor distance, applied in both directions.
pub const RATIO: f32 = 0.9;
/// Matches are dropped when the rendered pixel is less opaque than this.
pub const LIFT_MIN_ALPHA: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum MatchError {
    #[error("image sizes differ: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    pub confidence_threshold: f64,
    pub max_matches: usize,
    /// Rotation-normalize descriptor patches.
    pub oriented: bool,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.7,
            max_matches: 256,
            oriented: false,
        }
    }
}

/// A correspondence: `m` in the rendered image, `q` in the query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match<T: Real> {
    pub m: Vector2<T>,
    pub q: Vector2<T>,
    pub confidence: T,
}

impl<T: Real> Match<T> {
    pub fn swapped(&self) -> Self {
        Self {
            m: self.q,
            q: self.m,
            confidence: self.confidence,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchSet<T: Real> {
    pub matches: Vec<Match<T>>,
}

impl<T: Real> Default for MatchSet<T> {
    fn default() -> Self {
        Self { matches: Vec::new() }
    }
}

impl<T: Real> MatchSet<T> {
    pub fn new(matches: Vec<Match<T>>) -> Self {
        Self { matches }
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Match<T>> {
        self.matches.iter()
    }

    pub fn swapped(&self) -> Self {
        Self::new(self.matches.iter().map(Match::swapped).collect())
    }
}

/// A world point lifted from a rendered-image keypoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnchorPoint<T: Real> {
    pub world: Vector3<T>,
}

/// An anchor paired with its normalized query coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LiftedMatch<T: Real> {
    pub anchor: AnchorPoint<T>,
    pub q: Vector2<T>,
}

#[inline]
fn normalize<T: Real>(px: f64, py: f64, w: usize, h: usize) -> Vector2<T> {
    Vector2::new(T::lit(px / w as f64), T::lit(py / h as f64))
}

/// Detects and describes both images, then matches them.
pub fn match_images<T: Real>(
    rendered: &RgbImage<T>,
    query: &RgbImage<T>,
    cfg: &MatcherConfig,
) -> Result<MatchSet<T>, MatchError> {
    if !rendered.same_size(query) {
        return Err(MatchError::SizeMismatch(
            rendered.width(),
            rendered.height(),
            query.width(),
            query.height(),
        ));
    }
    let a = extract_features(rendered, cfg.oriented);
    let b = extract_features(query, cfg.oriented);
    Ok(match_features(&a, &b, cfg))
}

/// Best and second-best similarity per row of a score matrix.
fn best_two(scores: impl Iterator<Item = f32>) -> Option<(usize, f32, f32)> {
    let mut best: Option<(usize, f32)> = None;
    let mut second = f32::NEG_INFINITY;
    for (j, s) in scores.enumerate() {
        match best {
            Some((_, b)) if s <= b => second = second.max(s),
            Some((_, b)) => {
                second = b;
                best = Some((j, s));
            }
            None => best = Some((j, s)),
        }
    }
    best.map(|(j, b)| (j, b, second))
}

/// Ratio test on the descriptor distance `sqrt(2 - 2 ncc)` of unit vectors.
fn passes_ratio(best: f32, second: f32) -> bool {
    if second == f32::NEG_INFINITY {
        return true;
    }
    let d1 = (2.0 - 2.0 * best).max(0.0).sqrt();
    let d2 = (2.0 - 2.0 * second).max(0.0).sqrt();
    d1 < RATIO * d2
}

/// Mutual nearest neighbours that pass the ratio test both ways.
pub fn match_features<T: Real>(a: &Features, b: &Features, cfg: &MatcherConfig) -> MatchSet<T> {
    if a.is_empty() || b.is_empty() {
        return MatchSet::default();
    }
    let (na, nb) = (a.len(), b.len());
    let mut scores = vec![0f32; na * nb];
    for i in 0..na {
        let da = a.descriptor(i);
        for j in 0..nb {
            scores[i * nb + j] = features::ncc(da, b.descriptor(j));
        }
    }
    let forward: Vec<_> = (0..na)
        .map(|i| best_two(scores[i * nb..(i + 1) * nb].iter().copied()))
        .collect();
    let backward: Vec<_> = (0..nb)
        .map(|j| best_two((0..na).map(|i| scores[i * nb + j])))
        .collect();

    let mut out = Vec::new();
    for (i, f) in forward.iter().enumerate() {
        let Some((j, s, s2)) = *f else { continue };
        let Some((i_back, _, r2)) = backward[j] else { continue };
        if i_back != i || !passes_ratio(s, s2) || !passes_ratio(s, r2) {
            continue;
        }
        let conf = s.max(0.0).min(1.0) as f64;
        if conf < cfg.confidence_threshold {
            continue;
        }
        let (mx, my) = a.points[i];
        let (qx, qy) = b.points[j];
        out.push((
            conf,
            Match {
                m: normalize(mx as f64, my as f64, a.width, a.height),
                q: normalize(qx as f64, qy as f64, b.width, b.height),
                confidence: T::lit(conf),
            },
            [mx + qx, my + qy, mx.abs_diff(qx), my.abs_diff(qy)],
        ));
    }
    // Ordering key is symmetric in (m, q) so swapping the inputs swaps the fields only.
    out.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.2.cmp(&y.2)));
    out.truncate(cfg.max_matches);
    MatchSet::new(out.into_iter().map(|(_, m, _)| m).collect())
}

/// Ground-truth correspondences: projections of Gaussian means visible in
/// both views. Up to `sample_count` means are drawn without replacement.
pub fn oracle_match<T: Real>(
    scene: &Scene<T>,
    pose_est: &Pose<T>,
    pose_gt: &Pose<T>,
    k: &CameraIntrinsics<T>,
    sample_count: usize,
    seed: u64,
) -> MatchSet<T> {
    let lifted = oracle_lifted(scene, pose_est, pose_gt, k, sample_count, seed);
    let matches = lifted
        .iter()
        .map(|l| {
            let (uv, _) = project(&l.anchor.world, pose_est, k).expect("co-visible point");
            Match {
                m: Vector2::new(uv.x / T::lit(k.width as f64), uv.y / T::lit(k.height as f64)),
                q: l.q,
                confidence: T::one(),
            }
        })
        .collect();
    MatchSet::new(matches)
}

/// Oracle correspondences with the exact Gaussian means as anchors, skipping
/// the depth lookup.
pub fn oracle_lifted<T: Real>(
    scene: &Scene<T>,
    pose_est: &Pose<T>,
    pose_gt: &Pose<T>,
    k: &CameraIntrinsics<T>,
    sample_count: usize,
    seed: u64,
) -> Vec<LiftedMatch<T>> {
    let visible = |p: &Vector3<T>, pose: &Pose<T>| -> Option<Vector2<T>> {
        let (uv, z) = project(p, pose, k).ok()?;
        let inside = uv.x >= T::zero()
            && uv.y >= T::zero()
            && uv.x <= T::lit((k.width - 1) as f64)
            && uv.y <= T::lit((k.height - 1) as f64);
        (inside && z < k.z_far).then_some(uv)
    };
    let covisible: Vec<(usize, Vector2<T>)> = scene
        .gaussians()
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            visible(&g.mean, pose_est)?;
            visible(&g.mean, pose_gt).map(|uv| (i, uv))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = if covisible.len() <= sample_count {
        (0..covisible.len()).collect()
    } else {
        sample(&mut rng, covisible.len(), sample_count).into_vec()
    };
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| {
            let (gi, uv) = covisible[i];
            LiftedMatch {
                anchor: AnchorPoint {
                    world: scene.gaussians()[gi].mean,
                },
                q: Vector2::new(uv.x / T::lit(k.width as f64), uv.y / T::lit(k.height as f64)),
            }
        })
        .collect()
}

/// Bilinear lookup that refuses to blend across empty depth samples.
fn sample_depth<T: Real>(r: &RenderedImage<T>, u: T, v: T) -> Option<(T, T)> {
    let (w, h) = (r.width(), r.height());
    let (u, v) = (u.as_f64(), v.as_f64());
    if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
        return None;
    }
    let (x0, y0) = (u.floor() as usize, v.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (T::lit(u - x0 as f64), T::lit(v - y0 as f64));
    let taps = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)];
    let wts = [
        (T::one() - fx) * (T::one() - fy),
        fx * (T::one() - fy),
        (T::one() - fx) * fy,
        fx * fy,
    ];
    let (mut d, mut a) = (T::zero(), T::zero());
    for ((x, y), wt) in taps.into_iter().zip(wts) {
        let dz = r.depth_at(x, y);
        if dz <= T::zero() {
            return None;
        }
        d += dz * wt;
        a += r.alpha_at(x, y) * wt;
    }
    Some((d, a))
}

/// Back-projects each rendered keypoint through the expected depth at `pose`.
/// Matches on (partly) transparent or empty pixels are dropped.
pub fn lift_matches<T: Real>(
    matches: &MatchSet<T>,
    rendered: &RenderedImage<T>,
    pose: &Pose<T>,
    k: &CameraIntrinsics<T>,
) -> Vec<LiftedMatch<T>> {
    let inv = pose.inverse();
    matches
        .iter()
        .filter_map(|mt| {
            let uv = Vector2::new(
                mt.m.x * T::lit(rendered.width() as f64),
                mt.m.y * T::lit(rendered.height() as f64),
            );
            let (z, alpha) = sample_depth(rendered, uv.x, uv.y)?;
            if alpha < T::lit(LIFT_MIN_ALPHA) {
                return None;
            }
            let world = inv.transform_point(&k.back_project(&uv, z));
            Some(LiftedMatch {
                anchor: AnchorPoint { world },
                q: mt.q,
            })
        })
        .collect()
}

/// Parses `mx my qx qy conf` lines (normalized coordinates). Blank lines and
/// `#` comments are skipped.
pub fn parse_match_file<T: Real>(text: &str, path: &Path) -> Result<MatchSet<T>, MatchError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| MatchError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            reason,
        };
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| err(format!("{t:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if vals.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", vals.len())));
        }
        if vals[..4].iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(err("coordinates must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&vals[4]) {
            return Err(err("confidence must lie in [0, 1]".into()));
        }
        out.push(Match {
            m: Vector2::new(T::lit(vals[0]), T::lit(vals[1])),
            q: Vector2::new(T::lit(vals[2]), T::lit(vals[3])),
            confidence: T::lit(vals[4]),
        });
    }
    Ok(MatchSet::new(out))
}

pub fn load_match_file<T: Real>(path: impl AsRef<Path>) -> Result<MatchSet<T>, MatchError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MatchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_match_file(&text, path)
}
