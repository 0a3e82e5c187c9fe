mod common;

use common::small_setup;
use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatpose_core::geometry::{exp_se3, project, CameraIntrinsics, Pose, Twist};
use splatpose_core::image::RgbImage;
use splatpose_core::matcher::{
    lift_matches, match_images, oracle_lifted, oracle_match, Match, MatchSet, MatcherConfig,
};
use splatpose_core::renderer::{render, RenderedImage};
use splatpose_core::scene::{synth_scene, Gaussian3D, Scene, SynthSpec};

fn textured() -> (Scene<f64>, CameraIntrinsics<f64>) {
    let scene = synth_scene(&SynthSpec::default()).unwrap();
    (scene, CameraIntrinsics::from_fov(128, 128, 50.0).unwrap())
}

fn view(eye: [f64; 3]) -> Pose<f64> {
    Pose::look_at(&Vector3::from(eye), &Vector3::zeros(), &Vector3::z())
}

fn shift_right(img: &RgbImage<f64>, px: usize, fill: Vector3<f64>) -> RgbImage<f64> {
    RgbImage::from_fn(img.width(), img.height(), |x, y| if x < px { fill } else { *img.get(x - px, y) })
}

#[test]
fn self_match_is_exact_and_plentiful() {
    let (scene, k) = textured();
    let r = render(&scene, &view([2.5, 0.0, 0.5]), &k);
    let ms = match_images(&r.color, &r.color, &MatcherConfig::default()).unwrap();
    assert!(ms.len() >= 50, "only {} matches", ms.len());
    for m in ms.iter() {
        assert!((m.m - m.q).norm() * 128.0 < 1.0);
    }
}

#[test]
fn known_shift_is_recovered() {
    let (scene, k) = textured();
    let r = render(&scene, &view([0.3, 2.4, 0.6]), &k);
    let q = shift_right(&r.color, 4, *scene.background());
    let ms = match_images(&r.color, &q, &MatcherConfig::default()).unwrap();
    assert!(ms.len() >= 20);
    let mut dx: Vec<f64> = ms.iter().map(|m| m.q.x - m.m.x).collect();
    dx.sort_by(f64::total_cmp);
    let median = dx[dx.len() / 2];
    assert!((median - 4.0 / 128.0).abs() <= 1.0 / 128.0, "median disparity {}", median * 128.0);
}

#[test]
fn blank_query_yields_nothing() {
    let (scene, k) = textured();
    let r = render(&scene, &view([2.5, 0.0, 0.5]), &k);
    let blank = RgbImage::new(128, 128, Vector3::new(0.4, 0.4, 0.4));
    assert!(match_images(&r.color, &blank, &MatcherConfig::default()).unwrap().is_empty());
}

#[test]
fn size_mismatch_is_an_error() {
    let a = RgbImage::new(32, 32, Vector3::zeros());
    let b: RgbImage<f64> = RgbImage::new(32, 16, Vector3::zeros());
    assert!(match_images(&a, &b, &MatcherConfig::default()).is_err());
}

#[test]
fn swapping_inputs_swaps_fields_exactly() {
    let (scene, k) = textured();
    let cfgs = [
        MatcherConfig::default(),
        MatcherConfig {
            oriented: true,
            confidence_threshold: 0.5,
            max_matches: 40,
        },
    ];
    for (a, b) in [([2.5, 0.0, 0.5], [2.4, 0.5, 0.6]), ([0.0, -2.5, 1.0], [0.6, -2.4, 0.8])] {
        let ra = render(&scene, &view(a), &k);
        let rb = render(&scene, &view(b), &k);
        for cfg in &cfgs {
            let ab = match_images(&ra.color, &rb.color, cfg).unwrap();
            let ba = match_images(&rb.color, &ra.color, cfg).unwrap();
            assert!(!ab.is_empty());
            assert_eq!(ab, ba.swapped());
        }
    }
}

#[test]
fn matching_is_deterministic_and_capped() {
    let (scene, k) = textured();
    let ra = render(&scene, &view([2.5, 0.0, 0.5]), &k);
    let rb = render(&scene, &view([2.45, 0.4, 0.55]), &k);
    let cfg = MatcherConfig {
        max_matches: 25,
        ..MatcherConfig::default()
    };
    let first = match_images(&ra.color, &rb.color, &cfg).unwrap();
    let second = match_images(&ra.color, &rb.color, &cfg).unwrap();
    assert_eq!(first, second);
    assert!(first.len() <= 25);
    assert!(first.iter().all(|m| m.confidence >= 0.7 && m.confidence <= 1.0));
    // Capped by confidence: nothing dropped beats anything kept.
    let uncapped = match_images(&ra.color, &rb.color, &MatcherConfig::default()).unwrap();
    let weakest_kept = first.iter().map(|m| m.confidence).fold(f64::INFINITY, f64::min);
    let kept = |m: &Match<f64>| first.matches.contains(m);
    assert!(uncapped.iter().filter(|m| !kept(m)).all(|m| m.confidence <= weakest_kept));
}

#[test]
fn oracle_pinhole_arithmetic() {
    let g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 5.0), 0.1, 0.9, Vector3::new(1.0, 1.0, 1.0));
    let scene = Scene::new(vec![g]).unwrap();
    let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100, 0.01, 100.0).unwrap();
    let gt = Pose::identity();
    let est = Pose::from_camera_center(UnitQuaternion::identity(), Vector3::new(0.5, 0.0, 0.0));
    let ms = oracle_match(&scene, &est, &gt, &k, 10, 0);
    assert_eq!(ms.len(), 1);
    let d: Vector2<f64> = ms.matches[0].m - ms.matches[0].q;
    assert!((d.x + 0.1).abs() < 1e-12 && d.y.abs() < 1e-12, "{d:?}");
    assert_eq!(ms.matches[0].confidence, 1.0);
}

#[test]
fn oracle_at_ground_truth_is_exact() {
    let (scene, k) = textured();
    let gt = view([2.5, 0.0, 0.5]);
    let ms = oracle_match(&scene, &gt, &gt, &k, 200, 3);
    assert_eq!(ms.len(), 200);
    assert!(ms.iter().all(|m| m.m == m.q));
}

#[test]
fn oracle_respects_count_and_covisibility() {
    let (scene, k) = textured();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let gt = view([2.5, 0.0, 0.5]);
        let w = Vector3::from_fn(|_, _| rng.gen_range(-0.5..0.5));
        let v = Vector3::from_fn(|_, _| rng.gen_range(-0.5..0.5));
        let est = exp_se3(&Twist::new(v, w)).compose(&gt);
        let n = rng.gen_range(1..300);
        let lifted = oracle_lifted(&scene, &est, &gt, &k, n, rng.gen());
        assert!(lifted.len() <= n);
        for l in &lifted {
            for pose in [&est, &gt] {
                let (uv, z) = project(&l.anchor.world, pose, &k).unwrap();
                assert!(z > k.z_near && z < k.z_far);
                assert!(uv.x >= 0.0 && uv.y >= 0.0 && uv.x <= 127.0 && uv.y <= 127.0);
            }
        }
        // Same seed, same sample.
        let again = oracle_lifted(&scene, &est, &gt, &k, n, 77);
        assert_eq!(again, oracle_lifted(&scene, &est, &gt, &k, n, 77));
    }
}

#[test]
fn oracle_residual_grows_along_a_geodesic() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for seed in 0..20 {
        let (scene, gt, k) = small_setup(seed, 50, 64);
        let w = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize() * 0.08;
        let v = Vector3::from_fn(|_, _| rng.gen_range(-0.2..0.2));
        let mut last = 0.0;
        for s in [0.25, 0.5, 1.0] {
            let est = exp_se3(&Twist::new(v * s, w * s)).compose(&gt);
            let ms = oracle_match(&scene, &est, &gt, &k, 1000, 0);
            assert!(!ms.is_empty());
            let mean = ms.iter().map(|m| (m.m - m.q).norm()).sum::<f64>() / ms.len() as f64;
            assert!(mean >= last, "scene {seed}: {mean} < {last} at s = {s}");
            last = mean;
        }
    }
}

fn reproject_px(world: &Vector3<f64>, pose: &Pose<f64>, k: &CameraIntrinsics<f64>) -> Vector2<f64> {
    project(world, pose, k).unwrap().0
}

#[test]
fn lifted_anchors_reproject_onto_their_keypoints() {
    let (scene, k) = textured();
    let pose = view([2.5, 0.0, 0.5]);
    let r: RenderedImage<f64> = render(&scene, &pose, &k);
    let other = render(&scene, &view([2.45, 0.45, 0.5]), &k);
    let ms = match_images(&r.color, &other.color, &MatcherConfig::default()).unwrap();
    let lifted = lift_matches(&ms, &r, &pose, &k);
    assert!(!lifted.is_empty());
    let mut it = ms.iter();
    for l in &lifted {
        // Lifting keeps order; find the match this anchor came from.
        let m = it.find(|m| m.q == l.q).unwrap();
        let uv = reproject_px(&l.anchor.world, &pose, &k);
        assert!((uv - m.m * 128.0).norm() < 0.5);
    }
}

#[test]
fn background_matches_are_dropped() {
    let g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 4.0), 0.2, 0.9, Vector3::new(1.0, 0.5, 0.2));
    let scene = Scene::new(vec![g]).unwrap();
    let k = CameraIntrinsics::from_fov(64, 64, 50.0).unwrap();
    let pose = Pose::identity();
    let r = render(&scene, &pose, &k);
    let corner = Match {
        m: Vector2::new(1.0 / 64.0, 1.0 / 64.0),
        q: Vector2::new(0.5, 0.5),
        confidence: 1.0,
    };
    assert!(r.alpha_at(1, 1) < 1e-6);
    assert!(lift_matches(&MatchSet::new(vec![corner]), &r, &pose, &k).is_empty());
    let center = Match {
        m: Vector2::new(0.5, 0.5),
        ..corner
    };
    assert_eq!(lift_matches(&MatchSet::new(vec![center]), &r, &pose, &k).len(), 1);
}

#[test]
fn single_gaussian_lifts_near_its_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let mean = Vector3::from_fn(|_, _| rng.gen_range(-0.5..0.5));
        let scale = Vector3::from_fn(|_, _| rng.gen_range(0.05..0.2));
        let g = Gaussian3D {
            mean,
            scale,
            rot: UnitQuaternion::from_scaled_axis(Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0))),
            opacity: 0.95,
            color: Vector3::new(0.8, 0.3, 0.1),
        };
        let scene = Scene::new(vec![g]).unwrap();
        let k = CameraIntrinsics::from_fov(64, 64, 50.0).unwrap();
        let dir = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
        let est = Pose::look_at(&(dir * 3.0), &Vector3::zeros(), &Vector3::z());
        let gt = exp_se3(&Twist::new(Vector3::new(0.05, 0.0, 0.0), Vector3::new(0.0, 0.05, 0.0))).compose(&est);
        let ms = oracle_match(&scene, &est, &gt, &k, 8, 0);
        let r = render(&scene, &est, &k);
        let lifted = lift_matches(&ms, &r, &est, &k);
        assert_eq!(lifted.len(), 1);
        let d = (lifted[0].anchor.world - mean).norm();
        assert!(d <= 3.0 * scale.amax(), "lifted {d} from the mean, max scale {}", scale.amax());
    }
}
