//! Seeded trials over rotation buckets and their aggregation.

use std::time::Instant;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use splatpose_core::geometry::{CameraIntrinsics, Pose};
use splatpose_core::losses::Correspondences;
use splatpose_core::matcher::load_match_file;
use splatpose_core::optimizer::{estimate_pose_with, evaluate, OptimizerConfig, PoseError};
use splatpose_core::renderer::render;
use splatpose_core::scene::{load_ply, synth_scene, Scene};

use crate::config::{BenchmarkConfig, MatcherChoice, SceneConfig};
use crate::HarnessError;

/// Rotation axis uniform on the sphere, angle uniform in `rot_interval_deg`,
/// applied as an orbit of the camera about `pivot`; then a per-axis uniform
/// offset in `[-trans_range_m, trans_range_m]` on the camera center.
///
/// Orbiting keeps the pivot at the same image location, so even large
/// perturbations leave the object in view. The geodesic rotation error to
/// `gt` equals the sampled angle.
pub fn sample_initial_pose(
    gt: &Pose<f64>,
    rot_interval_deg: (f64, f64),
    trans_range_m: f64,
    pivot: &Vector3<f64>,
    rng: &mut impl Rng,
) -> Pose<f64> {
    let (lo, hi) = rot_interval_deg;
    let axis = loop {
        let v = Vector3::from_fn(|_, _| rng.gen_range(-1.0..=1.0));
        let n = v.norm();
        if n > 1e-6 && n <= 1.0 {
            break v / n;
        }
    };
    let angle = if hi > lo { rng.gen_range(lo..=hi) } else { lo }.to_radians();
    let offset = if trans_range_m > 0.0 {
        Vector3::from_fn(|_, _| rng.gen_range(-trans_range_m..=trans_range_m))
    } else {
        Vector3::zeros()
    };
    if angle == 0.0 && offset == Vector3::zeros() {
        return gt.clone();
    }
    let orbit = UnitQuaternion::from_scaled_axis(axis * angle);
    let center = pivot + orbit * (gt.camera_center() - pivot) + offset;
    let rotation = gt.rotation() * orbit.inverse();
    Pose::from_camera_center(rotation, center)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one trial. Depends on the bucket bounds rather than its position,
/// so runs with different bucket lists (or ablations) stay paired.
pub fn trial_seed(master: u64, bucket: (f64, f64), trial: usize) -> u64 {
    let mut h = splitmix(master);
    h = splitmix(h ^ bucket.0.to_bits());
    h = splitmix(h ^ bucket.1.to_bits());
    splitmix(h ^ trial as u64)
}

pub fn load_scene(cfg: &SceneConfig) -> Result<Scene<f64>, HarnessError> {
    Ok(match &cfg.path {
        Some(p) => load_ply(p)?,
        None => synth_scene(&cfg.synth)?,
    })
}

pub fn intrinsics(cfg: &BenchmarkConfig) -> Result<CameraIntrinsics<f64>, HarnessError> {
    let c = &cfg.camera;
    Ok(CameraIntrinsics::from_fov(c.width, c.height, c.hfov_deg)?)
}

/// Ground-truth view and initial pose of one trial.
pub fn trial_poses(cfg: &BenchmarkConfig, bucket: (f64, f64), seed: u64) -> (Pose<f64>, Pose<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = &cfg.camera;
    let target = Vector3::from(cam.target);
    let az = rng.gen_range(0.0..std::f64::consts::TAU);
    let el = rng
        .gen_range(-cam.max_elevation_deg..=cam.max_elevation_deg)
        .to_radians();
    let dir = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
    let gt = Pose::look_at(&(target + dir * cam.distance), &target, &Vector3::z());
    let init = sample_initial_pose(&gt, bucket, cfg.translation_range_m, &target, &mut rng);
    (gt, init)
}

/// Everything recorded about one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub bucket: usize,
    pub trial: usize,
    pub seed: u64,
    pub init: PoseError,
    /// Final errors; the initial ones when the run aborted.
    pub fin: PoseError,
    pub iters: usize,
    pub converged: bool,
    pub outlier: bool,
    pub aborted: Option<String>,
}

/// A trial with its per-iteration errors and timing, which stay out of the
/// deterministic report.
#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub record: TrialRecord,
    pub history: Vec<PoseError>,
    pub wall_time: f64,
}

/// The classification rule for outliers.
pub fn is_outlier(rot_err_deg: f64, outlier_deg: f64) -> bool {
    rot_err_deg > outlier_deg
}

/// Runs one trial in isolation; reproduces its benchmark entry exactly.
pub fn run_trial(
    cfg: &BenchmarkConfig,
    scene: &Scene<f64>,
    k: &CameraIntrinsics<f64>,
    bucket_index: usize,
    trial: usize,
) -> Result<TrialOutcome, HarnessError> {
    let bucket = cfg.buckets()[bucket_index];
    let seed = trial_seed(cfg.master_seed, bucket, trial);
    let (gt, init) = trial_poses(cfg, bucket, seed);
    let query = render(scene, &gt, k).color;
    let opt = OptimizerConfig {
        weights: cfg.weights(),
        seed,
        ..cfg.optimizer.clone()
    };
    let matcher = match &cfg.matcher {
        MatcherChoice::Builtin => Correspondences::builtin(opt.matcher.clone(), &query),
        MatcherChoice::Oracle => Correspondences::Oracle {
            pose_gt: gt.clone(),
            sample_count: cfg.oracle_samples,
            seed,
        },
        MatcherChoice::File(p) => Correspondences::fixed(&load_match_file(p)?, scene, &init, k),
    };
    let start = Instant::now();
    let init_err = evaluate(&init, &gt);
    let (record, history) = match estimate_pose_with(scene, &query, &init, k, &opt, &matcher) {
        Ok(est) => {
            let fin = evaluate(&est.final_pose, &gt);
            let history = est.trajectory.iter().map(|e| evaluate(&e.pose, &gt)).collect();
            let record = TrialRecord {
                bucket: bucket_index,
                trial,
                seed,
                init: init_err,
                fin,
                iters: est.iters_used,
                converged: est.converged,
                outlier: is_outlier(fin.rot_err_deg, cfg.outlier_deg),
                aborted: None,
            };
            (record, history)
        }
        Err(e) => {
            log::warn!("bucket {bucket_index} trial {trial} aborted: {e}");
            let record = TrialRecord {
                bucket: bucket_index,
                trial,
                seed,
                init: init_err,
                fin: init_err,
                iters: 0,
                converged: false,
                outlier: is_outlier(init_err.rot_err_deg, cfg.outlier_deg),
                aborted: Some(e.to_string()),
            };
            (record, vec![init_err])
        }
    };
    Ok(TrialOutcome {
        record,
        history,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Success fraction at one paired threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStat {
    pub rot_deg: f64,
    pub trans_m: f64,
    pub successes: usize,
    pub failures: usize,
    pub fraction: f64,
    /// First iteration within the threshold, averaged over successful trials.
    pub mean_iters_to_threshold: Option<f64>,
    /// Success fraction after each iteration; stopped trials keep their last value.
    pub curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketSummary {
    pub lo_deg: f64,
    pub hi_deg: f64,
    pub trials: usize,
    pub thresholds: Vec<ThresholdStat>,
    pub mean_rot_err_deg: Option<f64>,
    pub median_rot_err_deg: Option<f64>,
    pub mean_trans_err_m: Option<f64>,
    pub median_trans_err_m: Option<f64>,
    pub outliers: usize,
    pub outlier_fraction: Option<f64>,
    pub aborted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub package: String,
    pub version: String,
    pub os: String,
    pub arch: String,
    pub scalar: String,
}

impl Default for Environment {
    fn default() -> Self {
        Self {
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            scalar: "f64".into(),
        }
    }
}

/// Deterministic benchmark result: no wall times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub environment: Environment,
    pub config: BenchmarkConfig,
    pub buckets: Vec<BucketSummary>,
    pub trials: Vec<TrialRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub bucket_mean_seconds: Vec<Option<f64>>,
    pub trial_seconds: Vec<f64>,
}

pub struct BenchmarkRun {
    pub report: BenchmarkReport,
    pub timing: Timing,
    pub outcomes: Vec<TrialOutcome>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    })
}

fn within(e: &PoseError, rot_deg: f64, trans_m: f64) -> bool {
    e.rot_err_deg <= rot_deg && e.trans_err_m <= trans_m
}

/// Aggregates trial outcomes, which must be in bucket-then-trial order.
pub fn summarize(cfg: &BenchmarkConfig, outcomes: &[TrialOutcome]) -> BenchmarkReport {
    let curve_len = cfg.optimizer.max_iters;
    let buckets = cfg
        .buckets()
        .iter()
        .enumerate()
        .map(|(b, &(lo, hi))| {
            let trials: Vec<&TrialOutcome> = outcomes.iter().filter(|o| o.record.bucket == b).collect();
            let n = trials.len();
            let rot: Vec<f64> = trials.iter().map(|o| o.record.fin.rot_err_deg).collect();
            let trans: Vec<f64> = trials.iter().map(|o| o.record.fin.trans_err_m).collect();
            let thresholds = cfg
                .rot_thresholds_deg
                .iter()
                .zip(&cfg.trans_thresholds_m)
                .map(|(&rd, &tm)| {
                    let ok: Vec<&&TrialOutcome> =
                        trials.iter().filter(|o| within(&o.record.fin, rd, tm)).collect();
                    let first_hits: Vec<f64> = ok
                        .iter()
                        .filter_map(|o| o.history.iter().position(|e| within(e, rd, tm)))
                        .map(|i| i as f64)
                        .collect();
                    let curve = (0..curve_len)
                        .map(|it| {
                            let hits = trials
                                .iter()
                                .filter(|o| {
                                    let e = o.history.get(it).or(o.history.last());
                                    e.is_some_and(|e| within(e, rd, tm))
                                })
                                .count();
                            if n == 0 {
                                0.0
                            } else {
                                hits as f64 / n as f64
                            }
                        })
                        .collect();
                    ThresholdStat {
                        rot_deg: rd,
                        trans_m: tm,
                        successes: ok.len(),
                        failures: n - ok.len(),
                        fraction: if n == 0 { 0.0 } else { ok.len() as f64 / n as f64 },
                        mean_iters_to_threshold: mean(&first_hits),
                        curve,
                    }
                })
                .collect();
            let outliers = trials
                .iter()
                .filter(|o| is_outlier(o.record.fin.rot_err_deg, cfg.outlier_deg))
                .count();
            BucketSummary {
                lo_deg: lo,
                hi_deg: hi,
                trials: n,
                thresholds,
                mean_rot_err_deg: mean(&rot),
                median_rot_err_deg: median(&rot),
                mean_trans_err_m: mean(&trans),
                median_trans_err_m: median(&trans),
                outliers,
                outlier_fraction: (n > 0).then(|| outliers as f64 / n as f64),
                aborted: trials.iter().filter(|o| o.record.aborted.is_some()).count(),
            }
        })
        .collect();
    BenchmarkReport {
        environment: Environment::default(),
        config: cfg.clone(),
        buckets,
        trials: outcomes.iter().map(|o| o.record.clone()).collect(),
    }
}

/// Runs every bucket and trial, in parallel, and aggregates in trial order.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkRun, HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    let scene = load_scene(&cfg.scene)?;
    let k = intrinsics(cfg)?;
    let jobs: Vec<(usize, usize)> = (0..cfg.buckets().len())
        .flat_map(|b| (0..cfg.trials_per_bucket).map(move |t| (b, t)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(b, t)| {
            let o = run_trial(cfg, &scene, &k, b, t)?;
            log::info!(
                "bucket {b} trial {t}: {:.2} deg / {:.3} m -> {:.3} deg / {:.4} m in {} iters",
                o.record.init.rot_err_deg,
                o.record.init.trans_err_m,
                o.record.fin.rot_err_deg,
                o.record.fin.trans_err_m,
                o.record.iters
            );
            Ok(o)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let report = summarize(cfg, &outcomes);
    let timing = Timing {
        total_seconds: start.elapsed().as_secs_f64(),
        bucket_mean_seconds: (0..cfg.buckets().len())
            .map(|b| {
                mean(
                    &outcomes
                        .iter()
                        .filter(|o| o.record.bucket == b)
                        .map(|o| o.wall_time)
                        .collect::<Vec<_>>(),
                )
            })
            .collect(),
        trial_seconds: outcomes.iter().map(|o| o.wall_time).collect(),
    };
    Ok(BenchmarkRun {
        report,
        timing,
        outcomes,
    })
}
