//! PNG images and pose strings for the command line.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use nalgebra::Vector3;
use splatpose_core::geometry::Pose;
use splatpose_core::image::RgbImage;
use splatpose_core::renderer::RenderedImage;

use crate::HarnessError;

fn image_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

pub fn write_color_png(img: &RgbImage<f64>, path: &Path) -> Result<(), HarnessError> {
    let buf = ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let p = img.get(x as usize, y as usize);
        Rgb(std::array::from_fn(|c| (p[c].clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    buf.save(path).map_err(|e| image_err(path, e))
}

/// 16-bit depth in millimeters; 0 where nothing was rendered.
pub fn write_depth_png(r: &RenderedImage<f64>, path: &Path) -> Result<(), HarnessError> {
    let buf = ImageBuffer::from_fn(r.width() as u32, r.height() as u32, |x, y| {
        let d = r.depth_at(x as usize, y as usize);
        Luma([(d * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16])
    });
    buf.save(path).map_err(|e| image_err(path, e))
}

pub fn read_color_png(path: &Path) -> Result<RgbImage<f64>, HarnessError> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage::from_fn(w as usize, h as usize, |x, y| {
        let p = img.get_pixel(x as u32, y as u32);
        Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0
    }))
}

/// `qw,qx,qy,qz,tx,ty,tz` (world-to-camera).
pub fn parse_pose(s: &str) -> Result<Pose<f64>, String> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if v.len() != 7 {
        return Err(format!("expected 7 comma-separated numbers, found {}", v.len()));
    }
    let q = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[3] * v[3]).sqrt();
    if !(q > 1e-9) || v.iter().any(|x| !x.is_finite()) {
        return Err("quaternion must be finite and nonzero".into());
    }
    Ok(Pose::from_parts(v[0], v[1], v[2], v[3], Vector3::new(v[4], v[5], v[6])))
}

pub fn format_pose(p: &Pose<f64>) -> String {
    let q = p.rotation().as_ref();
    let t = p.translation();
    format!("{},{},{},{},{},{},{}", q.w, q.i, q.j, q.k, t.x, t.y, t.z)
}
