use nalgebra::Vector3;

use crate::Real;

/// Row-major RGB image with one `Vector3` per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage<T: Real> {
    width: usize,
    height: usize,
    data: Vec<Vector3<T>>,
}

impl<T: Real> RgbImage<T> {
    pub fn new(width: usize, height: usize, fill: Vector3<T>) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, Vector3::zeros())
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Vector3<T>) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Wraps row-major pixel data; `None` if the length does not match.
    pub fn from_pixels(width: usize, height: usize, data: Vec<Vector3<T>>) -> Option<Self> {
        (data.len() == width * height).then_some(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &Vector3<T> {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: Vector3<T>) {
        self.data[y * self.width + x] = v;
    }

    pub fn pixels(&self) -> &[Vector3<T>] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [Vector3<T>] {
        &mut self.data
    }

    pub fn same_size<U: Real>(&self, other: &RgbImage<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map(&self, f: impl Fn(&Vector3<T>) -> Vector3<T>) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> RgbImage<U> {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|p| p.map(|c| U::lit(c.as_f64()))).collect(),
        }
    }

    /// Rec. 601 luma as `f32`, row-major.
    pub fn luma_f32(&self) -> Vec<f32> {
        self.data
            .iter()
            .map(|p| (0.299 * p.x.as_f64() + 0.587 * p.y.as_f64() + 0.114 * p.z.as_f64()) as f32)
            .collect()
    }
}
