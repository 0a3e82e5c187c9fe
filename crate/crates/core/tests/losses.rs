mod common;

use common::small_setup;
use nalgebra::{UnitQuaternion, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatpose_core::geometry::{exp_se3, project, CameraIntrinsics, Pose, Twist};
use splatpose_core::image::RgbImage;
use splatpose_core::losses::{combined, grad_match, loss_compare, loss_match, Correspondences, LossWeights};
use splatpose_core::matcher::{oracle_lifted, LiftedMatch, Match, MatchSet, MatcherConfig};
use splatpose_core::renderer::{backward_pose, render};
use splatpose_core::scene::{synth_scene, Scene, SynthSpec};
use splatpose_testkit::{central_diff, rel_err};

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RgbImage<f64> {
    RgbImage::from_fn(w, h, |_, _| Vector3::from_fn(|_, _| rng.gen_range(0.0..1.0)))
}

fn perturbed(rng: &mut ChaCha8Rng, pose: &Pose<f64>, w: f64, v: f64) -> Pose<f64> {
    let tw = Twist::new(
        Vector3::from_fn(|_, _| rng.gen_range(-v..v)),
        Vector3::from_fn(|_, _| rng.gen_range(-w..w)),
    );
    exp_se3(&tw).compose(pose)
}

fn twist_at(x: &[f64; 6], pose: &Pose<f64>) -> Pose<f64> {
    exp_se3(&Twist::from_vector(&Vector6::from_column_slice(x))).compose(pose)
}

#[test]
fn compare_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (w, h) = (9, 7);
    let a = random_image(&mut rng, w, h);
    let b = random_image(&mut rng, w, h);
    let (_, grad) = loss_compare(&a, &b).unwrap();
    for _ in 0..10 {
        let (i, c) = (rng.gen_range(0..w * h), rng.gen_range(0..3));
        let f = |x: &[f64; 1]| {
            let mut px = a.pixels().to_vec();
            px[i][c] = x[0];
            loss_compare(&RgbImage::from_pixels(w, h, px).unwrap(), &b).unwrap().0
        };
        let fd = central_diff(f, &[a.pixels()[i][c]], 1e-6)[0];
        assert!((fd - grad.pixels()[i][c]).abs() < 1e-8, "pixel {i} channel {c}: {fd} vs {}", grad.pixels()[i][c]);
    }
}

#[test]
fn match_loss_agrees_with_naive_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let n = rng.gen_range(1..300);
        let ms = MatchSet::new(
            (0..n)
                .map(|_| Match {
                    m: Vector2::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)),
                    q: Vector2::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)),
                    confidence: 1.0,
                })
                .collect(),
        );
        let mut naive = 0.0;
        for m in &ms.matches {
            let (dx, dy) = (m.m[0] - m.q[0], m.m[1] - m.q[1]);
            naive += dx * dx + dy * dy;
        }
        naive /= n as f64;
        let (l, empty) = loss_match(&ms);
        assert!(!empty);
        assert!((l - naive).abs() <= 1e-15, "{l} vs {naive}");
    }
}

#[test]
fn match_loss_examples() {
    let one = MatchSet::new(vec![Match {
        m: Vector2::new(0.1f64, 0.0),
        q: Vector2::zeros(),
        confidence: 1.0,
    }]);
    assert!((loss_match(&one).0 - 0.01).abs() < 1e-15);
    assert_eq!(loss_match(&MatchSet::<f64>::default()), (0.0, true));
    assert_eq!(loss_match(&one.swapped()).0, loss_match(&one).0);
}

/// Independent matching loss: mean squared normalized reprojection residual.
fn reprojection_loss(anchors: &[LiftedMatch<f64>], pose: &Pose<f64>, k: &CameraIntrinsics<f64>) -> f64 {
    let mut sum = 0.0;
    for a in anchors {
        let (uv, _) = project(&a.anchor.world, pose, k).unwrap();
        let (rx, ry) = (uv.x / k.width as f64 - a.q.x, uv.y / k.height as f64 - a.q.y);
        sum += rx * rx + ry * ry;
    }
    sum / anchors.len() as f64
}

#[test]
fn match_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for seed in 0..30 {
        let (scene, gt, k) = small_setup(seed, 40, 64);
        let est = perturbed(&mut rng, &gt, 0.1, 0.2);
        let anchors = oracle_lifted(&scene, &est, &gt, &k, 64, seed);
        assert!(!anchors.is_empty());
        let g = grad_match(&anchors, &est, &k);
        assert_eq!(g.n_used, anchors.len());
        assert!((g.loss - reprojection_loss(&anchors, &est, &k)).abs() < 1e-15);
        let fd = central_diff(|x| reprojection_loss(&anchors, &twist_at(x, &est), &k), &[0.0; 6], 1e-6);
        let an = g.grad.to_vector();
        for i in 0..6 {
            worst = worst.max(rel_err(an[i], fd[i], 1e-9));
        }
    }
    assert!(worst <= 1e-4, "worst relative error {worst:e}");
}

#[test]
fn match_gradient_vanishes_at_ground_truth() {
    for seed in 0..10 {
        let (scene, gt, k) = small_setup(seed, 40, 64);
        let anchors = oracle_lifted(&scene, &gt, &gt, &k, 64, 0);
        let g = grad_match(&anchors, &gt, &k);
        assert!(g.grad.norm() < 1e-10);
        assert!(grad_match(&[], &gt, &k).n_used == 0);
    }
}

#[test]
fn zero_matching_weight_is_bitwise_comparing_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..5 {
        let (scene, gt, k) = small_setup(seed, 30, 32);
        let query = render(&scene, &gt, &k).color;
        let est = perturbed(&mut rng, &gt, 0.1, 0.1);
        let w = LossWeights { w_c: 1.0, w_m: 0.0 };
        let oracle = Correspondences::Oracle {
            pose_gt: gt.clone(),
            sample_count: 32,
            seed: 0,
        };
        let b = combined(&scene, &est, &k, &query, &w, &oracle).unwrap();
        let r = render(&scene, &est, &k);
        let (l, dl) = loss_compare(&r.color, &query).unwrap();
        assert_eq!(b.grad, backward_pose(&scene, &est, &k, &dl));
        assert_eq!(b.total, l);
        assert_eq!((b.l_ma, b.n_matches, b.no_matches), (0.0, 0, false));
    }
}

#[test]
fn combined_is_the_weighted_sum_of_its_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..5 {
        let (scene, gt, k) = small_setup(seed, 30, 32);
        let query = render(&scene, &gt, &k).color;
        let est = perturbed(&mut rng, &gt, 0.1, 0.1);
        let fixed = Correspondences::Fixed(oracle_lifted(&scene, &est, &gt, &k, 32, 0));
        let only = |w_c, w_m| combined(&scene, &est, &k, &query, &LossWeights { w_c, w_m }, &fixed).unwrap();
        let (c, m) = (only(1.0, 0.0), only(0.0, 1.0));
        let (w_c, w_m) = (0.7, 0.35);
        let both = only(w_c, w_m);
        assert_eq!(both.grad, c.grad.scale(w_c) + m.grad.scale(w_m));
        assert!((both.total - (w_c * both.l_com + w_m * both.l_ma)).abs() < 1e-12);
        assert_eq!((both.l_com, both.l_ma), (c.l_com, m.l_ma));
        // Pure matching equals grad_match directly.
        let Correspondences::Fixed(anchors) = &fixed else { unreachable!() };
        assert_eq!(m.grad, grad_match(anchors, &est, &k).grad);
    }
}

#[test]
fn empty_correspondences_fall_back_to_comparing() {
    let (scene, gt, k) = small_setup(1, 30, 32);
    let query = render(&scene, &gt, &k).color;
    let est = exp_se3(&Twist::new(Vector3::new(0.05, 0.0, 0.0), Vector3::zeros())).compose(&gt);
    let b = combined(&scene, &est, &k, &query, &LossWeights::default(), &Correspondences::Fixed(vec![])).unwrap();
    assert!(b.no_matches);
    assert_eq!(b.l_ma, 0.0);
    let r = render(&scene, &est, &k);
    let (_, dl) = loss_compare(&r.color, &query).unwrap();
    assert_eq!(b.grad, backward_pose(&scene, &est, &k, &dl));
}

#[test]
fn combined_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (scene, gt, k) = small_setup(seed, 30, 24);
        let query = render(&scene, &gt, &k).color;
        let est = perturbed(&mut rng, &gt, 0.05, 0.05);
        let fixed = Correspondences::Fixed(oracle_lifted(&scene, &est, &gt, &k, 30, seed));
        let w = LossWeights::default();
        let b = combined(&scene, &est, &k, &query, &w, &fixed).unwrap();
        let fd = central_diff(
            |x| combined(&scene, &twist_at(x, &est), &k, &query, &w, &fixed).unwrap().total,
            &[0.0; 6],
            1e-5,
        );
        let an = b.grad.to_vector();
        for i in 0..6 {
            worst = worst.max(rel_err(an[i], fd[i], 1e-8));
        }
    }
    assert!(worst <= 1e-3, "worst relative error {worst:e}");
}

fn textured_scene() -> (Scene<f64>, CameraIntrinsics<f64>) {
    (
        synth_scene(&SynthSpec::default()).unwrap(),
        CameraIntrinsics::from_fov(128, 128, 50.0).unwrap(),
    )
}

#[test]
fn ground_truth_is_a_stationary_point_with_builtin_matching() {
    let (scene, k) = textured_scene();
    for eye in [[2.5, 0.0, 0.4], [0.0, 2.5, -0.8], [-1.7, -1.7, 0.5]] {
        let gt = Pose::look_at(&Vector3::from(eye), &Vector3::zeros(), &Vector3::z());
        let query = render(&scene, &gt, &k).color;
        let corr = Correspondences::builtin(MatcherConfig::default(), &query);
        let b = combined(&scene, &gt, &k, &query, &LossWeights::default(), &corr).unwrap();
        assert!(b.n_matches > 0);
        assert!(b.total < 1e-10, "total {}", b.total);
        assert!(b.grad.norm() < 1e-6, "grad {}", b.grad.norm());
    }
}

#[test]
fn large_perturbations_stay_finite() {
    let (scene, k) = textured_scene();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let eye = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize() * 2.5;
        let gt = Pose::look_at(&eye, &Vector3::zeros(), &Vector3::z());
        let axis = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
        let orbit = UnitQuaternion::from_scaled_axis(axis * rng.gen_range(40f64..60.0).to_radians());
        let offset = Vector3::from_fn(|_, _| rng.gen_range(-0.2..0.2));
        let est = Pose::from_camera_center(gt.rotation() * orbit.inverse(), orbit * gt.camera_center() + offset);
        let query = render(&scene, &gt, &k).color;
        let corr = Correspondences::builtin(MatcherConfig::default(), &query);
        let b = combined(&scene, &est, &k, &query, &LossWeights::default(), &corr).unwrap();
        assert!(b.is_finite(), "{b:?}");
    }
}
