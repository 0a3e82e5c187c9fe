#![allow(dead_code)]

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatpose_core::geometry::{CameraIntrinsics, Pose};
use splatpose_core::scene::{Gaussian3D, Scene, PALETTE};
use splatpose_testkit::{RefCamera, RefGaussian};

pub fn ref_gaussians(scene: &Scene<f64>) -> Vec<RefGaussian> {
    scene
        .gaussians()
        .iter()
        .map(|g| {
            let q = g.rot.as_ref();
            RefGaussian {
                mean: g.mean.into(),
                scale: g.scale.into(),
                rot: [q.w, q.i, q.j, q.k],
                opacity: g.opacity,
                color: g.color.into(),
            }
        })
        .collect()
}

pub fn ref_camera(pose: &Pose<f64>, k: &CameraIntrinsics<f64>) -> RefCamera {
    let q = pose.rotation().as_ref();
    RefCamera {
        rot: [q.w, q.i, q.j, q.k],
        trans: (*pose.translation()).into(),
        fx: k.fx,
        fy: k.fy,
        cx: k.cx,
        cy: k.cy,
        width: k.width,
        height: k.height,
        z_near: k.z_near,
        z_far: k.z_far,
    }
}

/// Random small scene viewed from a random direction at ~4 m.
pub fn small_setup(seed: u64, count: usize, size: usize) -> (Scene<f64>, Pose<f64>, CameraIntrinsics<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gs = Vec::new();
    for _ in 0..count {
        let mean = Vector3::from_fn(|_, _| rng.gen_range(-0.8..0.8));
        let scale = Vector3::from_fn(|_, _| rng.gen_range(0.08..0.35));
        let axis = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        gs.push(Gaussian3D {
            mean,
            scale,
            rot: nalgebra::UnitQuaternion::from_scaled_axis(axis),
            opacity: rng.gen_range(0.2..0.95),
            color: Vector3::from(PALETTE[rng.gen_range(0..PALETTE.len())]),
        });
    }
    let bg = Vector3::new(rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3));
    let scene = Scene::with_background(gs, bg).unwrap();
    let dir = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
    let pose = Pose::look_at(&(dir * 4.0), &Vector3::zeros(), &Vector3::new(0.0, 0.0, 1.0));
    let k = CameraIntrinsics::from_fov(size, size, 50.0).unwrap();
    (scene, pose, k)
}
