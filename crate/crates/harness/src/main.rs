use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use splatpose_core::geometry::{CameraIntrinsics, Pose};
use splatpose_core::losses::Correspondences;
use splatpose_core::matcher::load_match_file;
use splatpose_core::optimizer::{estimate_pose_with, evaluate, write_trajectory_csv, OptimizerConfig};
use splatpose_core::renderer::render;
use splatpose_core::scene::save_ply;
use splatpose_harness::bench::load_scene;
use splatpose_harness::config::SceneConfig;
use splatpose_harness::io::{format_pose, parse_pose, read_color_png, write_color_png, write_depth_png};
use splatpose_harness::{emit_report, emit_timing, gradcheck, run_benchmark, Ablation, BenchmarkConfig, HarnessError, MatcherChoice};

#[derive(Parser)]
#[command(name = "splatpose", version, about = "Camera pose estimation by inverting a Gaussian splatting renderer")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// PLY path or `synth:key=value,...`
    #[arg(long)]
    scene: Option<SceneConfig>,
    /// TOML benchmark/optimizer configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene at a pose to color.png and depth.png (16-bit millimeters).
    Render {
        #[command(flatten)]
        common: Common,
        /// World-to-camera pose `qw,qx,qy,qz,tx,ty,tz`.
        #[arg(long, conflicts_with = "look_from")]
        pose: Option<String>,
        /// Camera center `x,y,z`, looking at the origin with +z up.
        #[arg(long)]
        look_from: Option<String>,
    },
    /// Estimate the pose of a query image, writing trajectory.csv and estimate.json.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        init: String,
        /// Ground truth, for error columns and the oracle matcher.
        #[arg(long)]
        gt: Option<String>,
        #[arg(long, value_enum)]
        ablation: Option<Ablation>,
        /// builtin, oracle or file:<path>
        #[arg(long)]
        matcher: Option<MatcherChoice>,
    },
    /// Run the bucketed benchmark and write report files.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        ablation: Option<Ablation>,
        #[arg(long)]
        matcher: Option<MatcherChoice>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Finite-difference check of the combined pose gradient.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        scenes: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Write a synthetic scene as PLY.
    Synth {
        /// `synth:key=value,...`; defaults to 1000 Gaussians in a unit box.
        #[arg(long, default_value = "synth:")]
        scene: SceneConfig,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_vec3(s: &str) -> Result<Vector3<f64>, HarnessError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| HarnessError::Config(format!("{s:?}: {e}")))?;
    match v[..] {
        [x, y, z] => Ok(Vector3::new(x, y, z)),
        _ => Err(HarnessError::Config(format!("expected x,y,z, got {s:?}"))),
    }
}

fn pose_arg(s: &str) -> Result<Pose<f64>, HarnessError> {
    parse_pose(s).map_err(|e| HarnessError::Config(format!("pose {s:?}: {e}")))
}

fn base_config(common: &Common) -> Result<BenchmarkConfig, HarnessError> {
    let mut cfg = match &common.config {
        Some(p) => BenchmarkConfig::load(p)?,
        None => BenchmarkConfig::default(),
    };
    if let Some(s) = &common.scene {
        cfg.scene = s.clone();
    }
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
        cfg.optimizer.seed = seed;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_file(path: PathBuf, text: &str) -> Result<(), HarnessError> {
    std::fs::write(&path, text).map_err(|source| HarnessError::Io { path, source })
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.cmd {
        Command::Render {
            common,
            pose,
            look_from,
        } => {
            let cfg = base_config(&common)?;
            let scene = load_scene(&cfg.scene)?;
            let k = splatpose_harness::bench::intrinsics(&cfg)?;
            let pose = match (pose, look_from) {
                (Some(p), _) => pose_arg(&p)?,
                (None, Some(eye)) => Pose::look_at(&parse_vec3(&eye)?, &Vector3::from(cfg.camera.target), &Vector3::z()),
                (None, None) => return Err(HarnessError::Config("one of --pose or --look-from is required".into())),
            };
            let r = render(&scene, &pose, &k);
            create_dir(&common.out)?;
            write_color_png(&r.color, &common.out.join("color.png"))?;
            write_depth_png(&r, &common.out.join("depth.png"))?;
            println!("pose {}", format_pose(&pose));
            println!("wrote {}", common.out.display());
        }
        Command::Estimate {
            common,
            query,
            init,
            gt,
            ablation,
            matcher,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(a) = ablation {
                cfg.ablation = a;
            }
            if let Some(m) = matcher {
                cfg.matcher = m;
            }
            let scene = load_scene(&cfg.scene)?;
            let q = read_color_png(&query)?;
            let c = &cfg.camera;
            let k = CameraIntrinsics::from_fov(q.width(), q.height(), c.hfov_deg)?;
            let init = pose_arg(&init)?;
            let gt = gt.as_deref().map(pose_arg).transpose()?;
            let opt = OptimizerConfig {
                weights: cfg.weights(),
                ..cfg.optimizer.clone()
            };
            let corr = match &cfg.matcher {
                MatcherChoice::Builtin => Correspondences::builtin(opt.matcher.clone(), &q),
                MatcherChoice::Oracle => Correspondences::Oracle {
                    pose_gt: gt.clone().ok_or_else(|| HarnessError::Config("the oracle matcher needs --gt".into()))?,
                    sample_count: cfg.oracle_samples,
                    seed: opt.seed,
                },
                MatcherChoice::File(p) => Correspondences::fixed(&load_match_file(p)?, &scene, &init, &k),
            };
            let est = estimate_pose_with(&scene, &q, &init, &k, &opt, &corr)?;
            create_dir(&common.out)?;
            let reference = gt.clone().unwrap_or_else(|| est.final_pose.clone());
            let mut csv = Vec::new();
            write_trajectory_csv(&est, &reference, &mut csv).expect("in-memory write");
            write_file(common.out.join("trajectory.csv"), &String::from_utf8(csv).expect("ascii"))?;
            let summary = serde_json::json!({
                "final_pose": format_pose(&est.final_pose),
                "converged": est.converged,
                "iters_used": est.iters_used,
                "wall_time_s": est.wall_time,
                "error": gt.as_ref().map(|g| evaluate(&est.final_pose, g)),
            });
            write_file(common.out.join("estimate.json"), &(serde_json::to_string_pretty(&summary).expect("json") + "\n"))?;
            println!("{}", format_pose(&est.final_pose));
        }
        Command::Benchmark {
            common,
            ablation,
            matcher,
            trials,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(a) = ablation {
                cfg.ablation = a;
            }
            if let Some(m) = matcher {
                cfg.matcher = m;
            }
            if let Some(t) = trials {
                cfg.trials_per_bucket = t;
            }
            let run = run_benchmark(&cfg)?;
            emit_report(&run.report, &common.out)?;
            emit_timing(&run.timing, &common.out)?;
            print!("{}", splatpose_harness::report::summary_csv(&run.report));
        }
        Command::Gradcheck { scenes, seed, eps, tol } => {
            let mut worst: f64 = 0.0;
            for s in seed..seed + scenes {
                worst = worst.max(gradcheck::check_scene(s, eps));
            }
            println!("worst relative error over {scenes} scenes: {worst:.3e} (tolerance {tol:e})");
            if !(worst <= tol) {
                return Err(HarnessError::Config(format!("gradient check failed: {worst:e} > {tol:e}")));
            }
        }
        Command::Synth { mut scene, seed, out } => {
            if let Some(s) = seed {
                scene.synth.seed = s;
            }
            save_ply(&load_scene(&scene)?, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
