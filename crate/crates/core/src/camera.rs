//! Pinhole camera model and image containers.
//!
//! Camera frame convention: z along the optical axis, x right, y down.
//! Pixel coordinate `(u, v)` refers to the center of pixel column `u`, row `v`.

use std::path::Path;

use image::{ImageBuffer, Luma, RgbImage};
use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::Pose3;

pub type ColorImage = RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self { width: 640, height: 480, fx: 600.0, fy: 600.0, cx: 320.0, cy: 240.0 }
    }
}

impl CameraIntrinsics {
    pub fn is_valid(&self) -> bool {
        self.width > 0 && self.height > 0 && self.fx > 0.0 && self.fy > 0.0 && self.cx.is_finite() && self.cy.is_finite()
    }

    /// Projects a camera-frame point; `None` behind the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Back-projects pixel `(u, v)` at z-depth `depth` into the camera frame.
    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> Point3<f64> {
        Point3::new((u - self.cx) * depth / self.fx, (v - self.cy) * depth / self.fy, depth)
    }

    /// Unnormalized ray direction with unit z component.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }
}

/// Intrinsics plus the camera pose in the platform frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub intrinsics: CameraIntrinsics,
    pub extrinsic: Pose3,
}

/// Metric z-depth per pixel; 0 marks an invalid reading.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0.0; (width * height) as usize] }
    }

    pub fn get(&self, u: u32, v: u32) -> f32 {
        self.data[(v * self.width + u) as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, depth: f32) {
        self.data[(v * self.width + u) as usize] = depth;
    }

    /// 16-bit PNG in millimeters.
    pub fn save_png(&self, path: &Path) -> Result<(), image::ImageError> {
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(self.width, self.height, |u, v| {
            let mm = (self.get(u, v) as f64 * 1000.0).round().clamp(0.0, u16::MAX as f64);
            Luma([mm as u16])
        });
        buf.save(path)
    }

    pub fn load_png(path: &Path) -> Result<Self, image::ImageError> {
        let img = image::open(path)?.into_luma16();
        let (width, height) = img.dimensions();
        let data = img.pixels().map(|p| p.0[0] as f32 / 1000.0).collect();
        Ok(Self { width, height, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn project_back_project_inverse() {
        let k = CameraIntrinsics::default();
        let p = Point3::new(0.12, -0.05, 0.7);
        let (u, v) = k.project(&p).unwrap();
        let q = k.back_project(u, v, 0.7);
        assert!((p - q).norm() < 1e-12);
    }

    #[test]
    fn depth_png_round_trip_mm() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = DepthImage::new(4, 3);
        d.set(1, 2, 0.7005);
        d.set(3, 0, 1.25);
        let path = dir.path().join("d.png");
        d.save_png(&path).unwrap();
        let back = DepthImage::load_png(&path).unwrap();
        assert!((back.get(1, 2) - 0.7005).abs() < 6e-4);
        assert!((back.get(3, 0) - 1.25).abs() < 1e-6);
        assert_eq!(back.get(0, 0), 0.0);
    }
}
