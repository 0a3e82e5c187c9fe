//! Photometric comparing loss, keypoint matching loss, and their weighted sum.

use nalgebra::{Vector2, Vector6};
use serde::{Deserialize, Serialize};

use crate::geometry::{camera_point_jacobian, CameraIntrinsics, Pose, Twist};
use crate::image::RgbImage;
use crate::matcher::{
    extract_features, lift_matches, match_features, oracle_lifted, Features, LiftedMatch, MatchSet,
    MatcherConfig,
};
use crate::renderer::{backward_pose, render, RenderedImage};
use crate::scene::Scene;
use crate::Real;

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("image sizes differ: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("invalid loss weights w_c={w_c}, w_m={w_m}")]
    InvalidWeights { w_c: f64, w_m: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_c: f64,
    pub w_m: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_c: 1.0, w_m: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        if ok(self.w_c) && ok(self.w_m) && (self.w_c > 0.0 || self.w_m > 0.0) {
            Ok(())
        } else {
            Err(LossError::InvalidWeights {
                w_c: self.w_c,
                w_m: self.w_m,
            })
        }
    }
}

/// Loss values and pose gradient at one pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown<T: Real> {
    pub l_com: T,
    pub l_ma: T,
    pub total: T,
    /// Correspondences that contributed to `l_ma`.
    pub n_matches: usize,
    /// Set when matching was requested but produced nothing usable, so the
    /// step fell back to the comparing term alone.
    pub no_matches: bool,
    pub grad: Twist<T>,
}

impl<T: Real> LossBreakdown<T> {
    pub fn is_finite(&self) -> bool {
        self.l_com.as_f64().is_finite()
            && self.l_ma.as_f64().is_finite()
            && self.total.as_f64().is_finite()
            && self.grad.is_finite()
    }
}

/// Mean squared color difference and its gradient w.r.t. the rendered color.
pub fn loss_compare<T: Real>(
    rendered: &RgbImage<T>,
    query: &RgbImage<T>,
) -> Result<(T, RgbImage<T>), LossError> {
    if !rendered.same_size(query) {
        return Err(LossError::SizeMismatch(
            rendered.width(),
            rendered.height(),
            query.width(),
            query.height(),
        ));
    }
    let n = T::lit((rendered.pixels().len() * 3) as f64);
    let mut sum = T::zero();
    let mut grad = Vec::with_capacity(rendered.pixels().len());
    for (a, b) in rendered.pixels().iter().zip(query.pixels()) {
        let d = a - b;
        sum += d.dot(&d);
        grad.push(d * (T::lit(2.0) / n));
    }
    let grad = RgbImage::from_pixels(rendered.width(), rendered.height(), grad).expect("same length");
    Ok((sum / n, grad))
}

/// Mean squared keypoint distance. Returns `(0, true)` for an empty set.
pub fn loss_match<T: Real>(matches: &MatchSet<T>) -> (T, bool) {
    if matches.is_empty() {
        return (T::zero(), true);
    }
    let sum = matches
        .iter()
        .fold(T::zero(), |acc, m| acc + (m.m - m.q).norm_squared());
    (sum / T::lit(matches.len() as f64), false)
}

/// Matching loss through reprojection of frozen anchors, with its gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchGradient<T: Real> {
    pub loss: T,
    pub grad: Twist<T>,
    /// Anchors in front of the camera that were used.
    pub n_used: usize,
}

/// `r_i = project(anchor_i) / (W, H) - q_i`; loss `mean |r_i|^2`. Anchors that
/// fall behind the near plane are skipped. Zero twist when nothing is usable.
pub fn grad_match<T: Real>(
    lifted: &[LiftedMatch<T>],
    pose: &Pose<T>,
    k: &CameraIntrinsics<T>,
) -> MatchGradient<T> {
    let (iw, ih) = (
        T::one() / T::lit(k.width as f64),
        T::one() / T::lit(k.height as f64),
    );
    let mut loss = T::zero();
    let mut g = Vector6::zeros();
    let mut n = 0usize;
    for l in lifted {
        let p = pose.transform_point(&l.anchor.world);
        let Ok(uv) = k.project_camera(&p) else {
            continue;
        };
        let r = Vector2::new(uv.x * iw, uv.y * ih) - l.q;
        let mut j = camera_point_jacobian(&p, k);
        j.row_mut(0).scale_mut(iw);
        j.row_mut(1).scale_mut(ih);
        g += j.transpose() * r;
        loss += r.norm_squared();
        n += 1;
    }
    if n == 0 {
        return MatchGradient {
            loss: T::zero(),
            grad: Twist::zero(),
            n_used: 0,
        };
    }
    let inv_n = T::one() / T::lit(n as f64);
    MatchGradient {
        loss: loss * inv_n,
        grad: Twist::from_vector(&(g * (T::lit(2.0) * inv_n))),
        n_used: n,
    }
}

/// Where correspondences come from.
#[derive(Clone, Debug)]
pub enum Correspondences<T: Real> {
    /// Built-in detector matcher against precomputed query features.
    Builtin { cfg: MatcherConfig, query: Features },
    /// Ground-truth projections of Gaussian means (test and diagnostics only).
    Oracle {
        pose_gt: Pose<T>,
        sample_count: usize,
        seed: u64,
    },
    /// Externally supplied anchors, fixed for the whole run.
    Fixed(Vec<LiftedMatch<T>>),
}

impl<T: Real> Correspondences<T> {
    pub fn builtin(cfg: MatcherConfig, query: &RgbImage<T>) -> Self {
        let query = extract_features(query, cfg.oriented);
        Self::Builtin { cfg, query }
    }

    /// Lifts an external match set once, at the pose it was computed for.
    pub fn fixed(
        matches: &MatchSet<T>,
        scene: &Scene<T>,
        pose: &Pose<T>,
        k: &CameraIntrinsics<T>,
    ) -> Self {
        let rendered = render(scene, pose, k);
        Self::Fixed(lift_matches(matches, &rendered, pose, k))
    }

    /// Anchors for the current step.
    pub fn lifted(
        &self,
        scene: &Scene<T>,
        rendered: &RenderedImage<T>,
        pose: &Pose<T>,
        k: &CameraIntrinsics<T>,
    ) -> Vec<LiftedMatch<T>> {
        match self {
            Self::Builtin { cfg, query } => {
                let feats = extract_features(&rendered.color, cfg.oriented);
                let set = match_features(&feats, query, cfg);
                lift_matches(&set, rendered, pose, k)
            }
            Self::Oracle {
                pose_gt,
                sample_count,
                seed,
            } => oracle_lifted(scene, pose, pose_gt, k, *sample_count, *seed),
            Self::Fixed(l) => l.clone(),
        }
    }
}

/// Renders once and evaluates `w_c * l_com + w_m * l_ma` with its gradient.
/// A term with zero weight is skipped entirely, so its gradient contributes
/// nothing (not even rounding).
pub fn combined<T: Real>(
    scene: &Scene<T>,
    pose: &Pose<T>,
    k: &CameraIntrinsics<T>,
    query: &RgbImage<T>,
    weights: &LossWeights,
    matcher: &Correspondences<T>,
) -> Result<LossBreakdown<T>, LossError> {
    weights.validate()?;
    let rendered = render(scene, pose, k);
    let (l_com, dl_dcolor) = loss_compare(&rendered.color, query)?;
    let (w_c, w_m) = (T::lit(weights.w_c), T::lit(weights.w_m));

    let mut grad = if weights.w_c > 0.0 {
        backward_pose(scene, pose, k, &dl_dcolor).scale(w_c)
    } else {
        Twist::zero()
    };
    let mut l_ma = T::zero();
    let mut n_matches = 0;
    let mut no_matches = false;
    if weights.w_m > 0.0 {
        let lifted = matcher.lifted(scene, &rendered, pose, k);
        let mg = grad_match(&lifted, pose, k);
        n_matches = mg.n_used;
        no_matches = mg.n_used == 0;
        if no_matches {
            log::debug!("no usable matches; comparing term only for this step");
        } else {
            l_ma = mg.loss;
            grad = grad + mg.grad.scale(w_m);
        }
    }
    Ok(LossBreakdown {
        l_com,
        l_ma,
        total: w_c * l_com + w_m * l_ma,
        n_matches,
        no_matches,
        grad,
    })
}
