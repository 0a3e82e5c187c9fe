use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use splatpose_core::geometry::{rotation_geodesic_deg, Pose};
use splatpose_core::optimizer::PoseError;
use splatpose_harness::bench::{intrinsics, load_scene, TrialOutcome, TrialRecord};
use splatpose_harness::config::{CameraConfig, IntervalStyle};
use splatpose_harness::report::{curves_csv, read_report, summary_csv};
use splatpose_harness::{emit_report, run_benchmark, run_trial, sample_initial_pose, summarize, BenchmarkConfig};

/// Seconds-scale benchmark: a small scene, 48x48 views, a few iterations.
fn tiny() -> BenchmarkConfig {
    let mut cfg = BenchmarkConfig {
        trials_per_bucket: 3,
        rotation_buckets: vec![[0.0, 5.0], [5.0, 10.0]],
        translation_range_m: 0.05,
        camera: CameraConfig {
            width: 48,
            height: 48,
            ..CameraConfig::default()
        },
        ..BenchmarkConfig::default()
    };
    cfg.scene.synth.count = 80;
    cfg.optimizer.max_iters = 12;
    cfg
}

#[test]
fn rotation_axes_cover_the_sphere() {
    let gt = Pose::look_at(&Vector3::new(2.0, 1.0, 0.3), &Vector3::zeros(), &Vector3::z());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 10_000;
    let mut sum = Vector3::zeros();
    for _ in 0..n {
        let p = sample_initial_pose(&gt, (40.0, 60.0), 0.0, &Vector3::zeros(), &mut rng);
        let rel = gt.rotation().inverse() * p.rotation();
        sum += rel.scaled_axis().normalize();
        let e = rotation_geodesic_deg(&p, &gt);
        assert!((40.0 - 1e-9..=60.0 + 1e-9).contains(&e), "{e}");
    }
    let mean = (sum / n as f64).norm();
    assert!(mean < 0.05, "mean axis norm {mean}");
}

#[test]
fn report_roundtrips_through_json() {
    let run = run_benchmark(&tiny()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&run.report, dir.path()).unwrap();
    assert_eq!(files.len(), 4);
    let back = read_report(&dir.path().join("report.json")).unwrap();
    assert_eq!(back, run.report);
}

#[test]
fn csv_shapes() {
    let cfg = tiny();
    let run = run_benchmark(&cfg).unwrap();
    let summary = summary_csv(&run.report);
    let rows = cfg.buckets().len() * cfg.rot_thresholds_deg.len();
    assert_eq!(summary.lines().count(), rows + 1);
    let cols = summary.lines().next().unwrap().split(',').count();
    assert!(summary.lines().all(|l| l.split(',').count() == cols));
    let curves = curves_csv(&run.report);
    assert_eq!(curves.lines().count(), rows * cfg.optimizer.max_iters + 1);
}

#[test]
fn empty_benchmark_reports_empty_buckets() {
    let cfg = BenchmarkConfig {
        trials_per_bucket: 0,
        ..tiny()
    };
    let run = run_benchmark(&cfg).unwrap();
    assert!(run.report.trials.is_empty());
    for b in &run.report.buckets {
        assert_eq!((b.trials, b.outliers), (0, 0));
        assert_eq!((b.mean_rot_err_deg, b.outlier_fraction), (None, None));
        assert!(b.thresholds.iter().all(|t| t.fraction == 0.0 && t.mean_iters_to_threshold.is_none()));
    }
    assert_eq!(curves_csv(&run.report).lines().count(), 1);
}

#[test]
fn zero_perturbation_always_succeeds() {
    let cfg = BenchmarkConfig {
        trials_per_bucket: 1,
        rotation_buckets: vec![[0.0, 0.0]],
        translation_range_m: 0.0,
        ..tiny()
    };
    let run = run_benchmark(&cfg).unwrap();
    let b = &run.report.buckets[0];
    assert!(b.thresholds.iter().all(|t| t.fraction == 1.0));
    assert_eq!(b.outliers, 0);
}

#[test]
fn same_seed_same_bytes() {
    let cfg = tiny();
    let bytes = || {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&run_benchmark(&cfg).unwrap().report, dir.path()).unwrap();
        std::fs::read(dir.path().join("report.json")).unwrap()
    };
    assert_eq!(bytes(), bytes());
    let other = BenchmarkConfig {
        master_seed: 1,
        ..cfg.clone()
    };
    assert_ne!(run_benchmark(&other).unwrap().report.trials, run_benchmark(&cfg).unwrap().report.trials);
}

#[test]
fn single_trial_rerun_matches_the_benchmark() {
    let cfg = tiny();
    let run = run_benchmark(&cfg).unwrap();
    let scene = load_scene(&cfg.scene).unwrap();
    let k = intrinsics(&cfg).unwrap();
    for rec in &run.report.trials {
        let again = run_trial(&cfg, &scene, &k, rec.bucket, rec.trial).unwrap();
        assert_eq!(&again.record, rec);
    }
}

#[test]
fn success_counts_are_consistent() {
    let cfg = BenchmarkConfig {
        interval_style: IntervalStyle::Cumulative,
        rotation_buckets: vec![[0.0, 5.0], [0.0, 10.0]],
        ..tiny()
    };
    let run = run_benchmark(&cfg).unwrap();
    for b in &run.report.buckets {
        assert_eq!(b.lo_deg, 0.0);
        let mut last = 0.0;
        for t in &b.thresholds {
            assert_eq!(t.successes + t.failures, b.trials);
            assert!(t.fraction >= last, "looser threshold lowered success");
            last = t.fraction;
            assert!(t.curve.iter().all(|f| (0.0..=1.0).contains(f)));
            assert_eq!(*t.curve.last().unwrap(), t.fraction);
        }
    }
}

fn injected(rot: f64) -> TrialOutcome {
    let e = PoseError {
        rot_err_deg: rot,
        trans_err_m: 0.0,
    };
    TrialOutcome {
        record: TrialRecord {
            bucket: 0,
            trial: 0,
            seed: 0,
            init: e,
            fin: e,
            iters: 1,
            converged: true,
            outlier: false,
            aborted: None,
        },
        history: vec![e],
        wall_time: 0.0,
    }
}

#[test]
fn outliers_are_final_rotation_errors_above_twenty_degrees() {
    let cfg = BenchmarkConfig {
        rotation_buckets: vec![[0.0, 60.0]],
        ..BenchmarkConfig::default()
    };
    let cases = [0.0, 19.999, 20.0, 20.001, 45.0, 179.0];
    let outcomes: Vec<TrialOutcome> = cases.iter().map(|&r| injected(r)).collect();
    let b = &summarize(&cfg, &outcomes).buckets[0];
    assert_eq!(b.outliers, 3);
    assert_eq!(b.outlier_fraction, Some(0.5));
}
