//! Central-difference check of the combined loss gradient on small random scenes.

use nalgebra::{UnitQuaternion, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatpose_core::geometry::{exp_se3, CameraIntrinsics, Pose, Twist};
use splatpose_core::losses::{combined, Correspondences, LossWeights};
use splatpose_core::matcher::oracle_lifted;
use splatpose_core::renderer::render;
use splatpose_core::scene::{Gaussian3D, Scene, PALETTE};

/// A scene of `count` random Gaussians near the origin, seen from ~4 m.
pub fn random_setup(seed: u64, count: usize, size: usize) -> (Scene<f64>, Pose<f64>, CameraIntrinsics<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussians = (0..count)
        .map(|_| Gaussian3D {
            mean: Vector3::from_fn(|_, _| rng.gen_range(-0.8..0.8)),
            scale: Vector3::from_fn(|_, _| rng.gen_range(0.08..0.35)),
            rot: UnitQuaternion::from_scaled_axis(Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0))),
            opacity: rng.gen_range(0.2..0.95),
            color: Vector3::from(PALETTE[rng.gen_range(0..PALETTE.len())]),
        })
        .collect();
    let bg = Vector3::from_fn(|_, _| rng.gen_range(0.0..0.3));
    let scene = Scene::with_background(gaussians, bg).expect("valid random scene");
    let dir = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
    let pose = Pose::look_at(&(dir * 4.0), &Vector3::zeros(), &Vector3::z());
    let k = CameraIntrinsics::from_fov(size, size, 50.0).expect("valid intrinsics");
    (scene, pose, k)
}

/// Worst per-coordinate relative error between the analytic combined
/// gradient and central differences, for one random scene. The query is
/// rendered at a slightly perturbed pose; anchors are exact means, frozen.
pub fn check_scene(seed: u64, eps: f64) -> f64 {
    let (scene, gt, k) = random_setup(seed, 30, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let nudge = Twist::from_vector(&Vector6::from_fn(|_, _| rng.gen_range(-0.05..0.05)));
    let pose = exp_se3(&nudge).compose(&gt);
    let query = render(&scene, &gt, &k).color;
    let anchors = Correspondences::Fixed(oracle_lifted(&scene, &pose, &gt, &k, 64, seed));
    let weights = LossWeights::default();
    let at = |p: &Pose<f64>| combined(&scene, p, &k, &query, &weights, &anchors).expect("valid loss");
    let analytic = at(&pose).grad.to_vector();
    let mut worst: f64 = 0.0;
    for i in 0..6 {
        let step = |s: f64| {
            let tau = Twist::from_vector(&Vector6::from_fn(|j, _| if i == j { s } else { 0.0 }));
            at(&exp_se3(&tau).compose(&pose)).total
        };
        let numeric = (step(eps) - step(-eps)) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}
