//! Adam on the se(3) tangent space: evaluate the loss at the current pose,
//! take a step on a local twist, retract, repeat.

use std::io::Write;
use std::time::Instant;

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use crate::geometry::{exp_se3, rotation_geodesic_deg, CameraIntrinsics, Pose, Twist};
use crate::image::RgbImage;
use crate::losses::{combined, Correspondences, LossBreakdown, LossError, LossWeights};
use crate::matcher::MatcherConfig;
use crate::scene::Scene;
use crate::Real;

#[derive(Debug, thiserror::Error)]
pub enum OptimizerError {
    #[error("non-finite {what} at iteration {iter}")]
    NonFinite { iter: usize, what: &'static str },
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Iterations without a new best total loss before the lr is halved.
    pub plateau_patience: usize,
    pub lr_decay: f64,
    pub converge_grad_tol: f64,
    pub converge_loss_tol: f64,
    pub weights: LossWeights,
    pub matcher: MatcherConfig,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 300,
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            plateau_patience: 20,
            lr_decay: 0.5,
            converge_grad_tol: 1e-7,
            converge_loss_tol: 1e-10,
            weights: LossWeights::default(),
            matcher: MatcherConfig::default(),
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: String| Err(OptimizerError::InvalidConfig(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("adam betas ({}, {}) outside [0, 1)", self.beta1, self.beta2));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay {} outside (0, 1]", self.lr_decay));
        }
        self.weights.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEntry<T: Real> {
    pub iter: usize,
    pub pose: Pose<T>,
    pub loss: LossBreakdown<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseEstimate<T: Real> {
    pub final_pose: Pose<T>,
    pub trajectory: Vec<TrajectoryEntry<T>>,
    /// Stopped on a gradient or loss tolerance rather than the iteration cap.
    pub converged: bool,
    /// Loss evaluations performed.
    pub iters_used: usize,
    pub wall_time: f64,
}

/// First and second moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Real> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub m: Vector6<T>,
    pub v: Vector6<T>,
    pub t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(beta1: T, beta2: T, eps: T) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: Vector6::zeros(),
            v: Vector6::zeros(),
            t: 0,
        }
    }

    /// Bias-corrected step for gradient `g` at learning rate `lr`.
    pub fn step(&mut self, g: &Vector6<T>, lr: T) -> Vector6<T> {
        let one = T::one();
        self.t += 1;
        self.m = self.m * self.beta1 + g * (one - self.beta1);
        self.v = self.v * self.beta2 + g.component_mul(g) * (one - self.beta2);
        let bc1 = one - self.beta1.powi(self.t);
        let bc2 = one - self.beta2.powi(self.t);
        Vector6::from_fn(|i, _| lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + self.eps))
    }
}

/// Everything a run needs besides its mutable state.
pub struct Problem<'a, T: Real> {
    pub scene: &'a Scene<T>,
    pub query: &'a RgbImage<T>,
    pub k: &'a CameraIntrinsics<T>,
    pub cfg: &'a OptimizerConfig,
    pub matcher: &'a Correspondences<T>,
}

/// Live optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T: Real> {
    pub pose: Pose<T>,
    pub adam: Adam<T>,
    pub lr: f64,
    pub iter: usize,
    pub best_loss: f64,
    pub since_best: usize,
    pub trajectory: Vec<TrajectoryEntry<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(init: Pose<T>, cfg: &OptimizerConfig) -> Self {
        Self {
            pose: init,
            adam: Adam::new(T::lit(cfg.beta1), T::lit(cfg.beta2), T::lit(cfg.eps)),
            lr: cfg.lr,
            iter: 0,
            best_loss: f64::INFINITY,
            since_best: 0,
            trajectory: Vec::new(),
        }
    }

    /// Evaluates the loss at the current pose and records it.
    pub fn evaluate(&mut self, p: &Problem<'_, T>) -> Result<LossBreakdown<T>, OptimizerError> {
        let loss = combined(p.scene, &self.pose, p.k, p.query, &p.cfg.weights, p.matcher)?;
        if !loss.total.as_f64().is_finite() {
            return Err(OptimizerError::NonFinite {
                iter: self.iter,
                what: "loss",
            });
        }
        if !loss.grad.is_finite() {
            return Err(OptimizerError::NonFinite {
                iter: self.iter,
                what: "gradient",
            });
        }
        self.trajectory.push(TrajectoryEntry {
            iter: self.iter,
            pose: self.pose.clone(),
            loss,
        });
        Ok(loss)
    }

    /// One Adam update from `loss.grad`, plus the plateau schedule.
    pub fn update(&mut self, loss: &LossBreakdown<T>, cfg: &OptimizerConfig) {
        let total = loss.total.as_f64();
        if total < self.best_loss {
            self.best_loss = total;
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= cfg.plateau_patience {
                self.lr *= cfg.lr_decay;
                self.since_best = 0;
            }
        }
        let delta = self.adam.step(&loss.grad.to_vector(), T::lit(self.lr));
        if delta != Vector6::zeros() {
            self.pose = exp_se3(&Twist::from_vector(&-delta)).compose(&self.pose);
        }
        self.iter += 1;
    }

    /// Exactly one render, one gradient and one Adam update.
    pub fn step(&mut self, p: &Problem<'_, T>) -> Result<LossBreakdown<T>, OptimizerError> {
        let loss = self.evaluate(p)?;
        self.update(&loss, p.cfg);
        Ok(loss)
    }
}

fn stop_reason<T: Real>(loss: &LossBreakdown<T>, cfg: &OptimizerConfig) -> bool {
    loss.grad.norm().as_f64() < cfg.converge_grad_tol || loss.total.as_f64() < cfg.converge_loss_tol
}

/// Estimates the pose with the built-in matcher against `query`.
pub fn estimate_pose<T: Real>(
    scene: &Scene<T>,
    query: &RgbImage<T>,
    init: &Pose<T>,
    k: &CameraIntrinsics<T>,
    cfg: &OptimizerConfig,
) -> Result<PoseEstimate<T>, OptimizerError> {
    let matcher = if cfg.weights.w_m > 0.0 {
        Correspondences::builtin(cfg.matcher.clone(), query)
    } else {
        Correspondences::Fixed(Vec::new())
    };
    estimate_pose_with(scene, query, init, k, cfg, &matcher)
}

/// Estimates the pose with an explicit correspondence source.
///
/// The final pose is the last evaluated one: the loop stops after the
/// evaluation that meets a tolerance or exhausts `max_iters`, without a
/// trailing update.
pub fn estimate_pose_with<T: Real>(
    scene: &Scene<T>,
    query: &RgbImage<T>,
    init: &Pose<T>,
    k: &CameraIntrinsics<T>,
    cfg: &OptimizerConfig,
    matcher: &Correspondences<T>,
) -> Result<PoseEstimate<T>, OptimizerError> {
    cfg.validate()?;
    let start = Instant::now();
    let problem = Problem {
        scene,
        query,
        k,
        cfg,
        matcher,
    };
    let mut state = OptimizerState::new(init.clone(), cfg);
    let mut converged = false;
    loop {
        let loss = state.evaluate(&problem)?;
        if stop_reason(&loss, cfg) {
            converged = true;
            break;
        }
        if state.trajectory.len() >= cfg.max_iters {
            break;
        }
        state.update(&loss, cfg);
    }
    Ok(PoseEstimate {
        final_pose: state.pose,
        iters_used: state.trajectory.len(),
        trajectory: state.trajectory,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub rot_err_deg: f64,
    pub trans_err_m: f64,
}

/// Geodesic rotation error and camera-center distance.
pub fn evaluate<T: Real>(est: &Pose<T>, gt: &Pose<T>) -> PoseError {
    PoseError {
        rot_err_deg: rotation_geodesic_deg(est, gt).as_f64(),
        trans_err_m: (est.camera_center() - gt.camera_center()).norm().as_f64(),
    }
}

/// Writes `iter,rot_err_deg,trans_err_m,l_com,l_ma,total,n_matches`, errors
/// measured against `reference`.
pub fn write_trajectory_csv<T: Real>(
    est: &PoseEstimate<T>,
    reference: &Pose<T>,
    mut out: impl Write,
) -> std::io::Result<()> {
    writeln!(out, "iter,rot_err_deg,trans_err_m,l_com,l_ma,total,n_matches")?;
    for e in &est.trajectory {
        let err = evaluate(&e.pose, reference);
        writeln!(
            out,
            "{},{:.9},{:.9},{:.9e},{:.9e},{:.9e},{}",
            e.iter,
            err.rot_err_deg,
            err.trans_err_m,
            e.loss.l_com.as_f64(),
            e.loss.l_ma.as_f64(),
            e.loss.total.as_f64(),
            e.loss.n_matches
        )?;
    }
    Ok(())
}
