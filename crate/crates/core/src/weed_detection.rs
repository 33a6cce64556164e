//! Root localization from leaf geometry.
//!
//! Leaves are segmented by color, each elongated leaf gives a directional
//! line through its centroid, and the root is the center of the line
//! intersections that survive a median-distance outlier test. The root pixel
//! is then lifted to 3D with the depth image.

use std::collections::VecDeque;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraModel, ColorImage, DepthImage};
use crate::geometry::Point2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectionError {
    #[error("leaf direction is ambiguous (elongation {elongation:.2})")]
    AmbiguousDirection { elongation: f64 },
    #[error("insufficient evidence: {0}")]
    InsufficientEvidence(String),
    #[error("no valid depth around pixel ({u:.1}, {v:.1})")]
    NoDepth { u: f64, v: f64 },
    #[error("pixel ({u:.1}, {v:.1}) is outside the image")]
    OutOfBounds { u: f64, v: f64 },
    #[error("image is {got:?}, camera expects {expected:?}")]
    DimensionMismatch { got: (u32, u32), expected: (u32, u32) },
}

impl DetectionError {
    pub fn is_insufficient_evidence(&self) -> bool {
        matches!(self, DetectionError::InsufficientEvidence(_))
    }
}

/// RGB box classifying leaf pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColorThresholds {
    pub r_max: u8,
    pub g_min: u8,
    pub g_max: u8,
    pub b_max: u8,
    /// Minimum green excess g - r.
    pub min_green_excess: i16,
}

impl Default for ColorThresholds {
    fn default() -> Self {
        Self { r_max: 74, g_min: 70, g_max: 125, b_max: 69, min_green_excess: 25 }
    }
}

impl ColorThresholds {
    pub fn is_leaf(&self, rgb: [u8; 3]) -> bool {
        let [r, g, b] = rgb;
        r <= self.r_max && g >= self.g_min && g <= self.g_max && b <= self.b_max && g as i16 - r as i16 >= self.min_green_excess
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub colors: ColorThresholds,
    /// px
    pub min_area: usize,
    pub min_elongation: f64,
    /// Line pairs with |sin θ| below this are treated as parallel.
    pub parallel_sin: f64,
    /// Outlier distance from the component-wise median, px.
    pub outlier_px: f64,
    /// Hypotheses below this inlier fraction are reported as insufficient evidence.
    pub min_confidence: f64,
    /// Side of the square window searched for a fallback depth, px.
    pub depth_window: u32,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            colors: ColorThresholds::default(),
            min_area: 150,
            min_elongation: 2.0,
            parallel_sin: 0.05,
            outlier_px: 20.0,
            min_confidence: 0.5,
            depth_window: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafSegment {
    pub pixels: Vec<(u32, u32)>,
    /// (u, v) px
    pub centroid: (f64, f64),
    /// Unit major-axis direction in (u, v).
    pub principal_axis: (f64, f64),
    /// sqrt(λ_major / λ_minor) of the pixel covariance.
    pub elongation: f64,
}

impl LeafSegment {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    /// Builds the segment statistics from a pixel set via second-order central moments.
    pub fn from_pixels(pixels: Vec<(u32, u32)>) -> Option<Self> {
        if pixels.is_empty() {
            return None;
        }
        let n = pixels.len() as f64;
        let (su, sv) = pixels.iter().fold((0.0, 0.0), |(a, b), &(u, v)| (a + u as f64, b + v as f64));
        let (cu, cv) = (su / n, sv / n);
        let (mut m20, mut m02, mut m11) = (0.0, 0.0, 0.0);
        for &(u, v) in &pixels {
            let (du, dv) = (u as f64 - cu, v as f64 - cv);
            m20 += du * du;
            m02 += dv * dv;
            m11 += du * dv;
        }
        let (m20, m02, m11) = (m20 / n, m02 / n, m11 / n);
        let angle = 0.5 * (2.0 * m11).atan2(m20 - m02);
        let mean = 0.5 * (m20 + m02);
        let spread = (0.25 * (m20 - m02).powi(2) + m11 * m11).sqrt();
        let (major, minor) = (mean + spread, mean - spread);
        let elongation = if minor > 1e-12 { (major / minor).sqrt() } else if major > 1e-12 { f64::INFINITY } else { 1.0 };
        Some(Self { pixels, centroid: (cu, cv), principal_axis: (angle.cos(), angle.sin()), elongation })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line2D {
    pub point: Point2,
    /// Unit direction.
    pub direction: Point2,
}

impl Line2D {
    pub fn new(point: Point2, direction: Point2) -> Self {
        let n = direction.x.hypot(direction.y);
        Self { point, direction: Point2::new(direction.x / n, direction.y / n) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeedHypothesis {
    /// (u, v) px
    pub root_pixel: (f64, f64),
    pub inlier_points: Vec<Point2>,
    /// Root in the platform frame, m.
    pub root_platform: [f64; 3],
    pub confidence: f64,
    pub leaf_count: usize,
}

impl WeedHypothesis {
    pub fn root(&self) -> Point3<f64> {
        Point3::from(self.root_platform)
    }
}

/// All 8-connected components of leaf-colored pixels, in raster order of
/// their first pixel.
pub fn leaf_mask_components(image: &ColorImage, colors: &ColorThresholds) -> Vec<Vec<(u32, u32)>> {
    let (w, h) = image.dimensions();
    let mask: Vec<bool> = image.pixels().map(|p| colors.is_leaf(p.0)).collect();
    let mut seen = vec![false; mask.len()];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(i) = queue.pop_front() {
            let (u, v) = ((i as u32) % w, (i as u32) / w);
            pixels.push((u, v));
            for dv in -1i32..=1 {
                for du in -1i32..=1 {
                    let (nu, nv) = (u as i32 + du, v as i32 + dv);
                    if nu < 0 || nv < 0 || nu >= w as i32 || nv >= h as i32 {
                        continue;
                    }
                    let j = (nv as u32 * w + nu as u32) as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        components.push(pixels);
    }
    components
}

pub fn segment_leaves(image: &ColorImage, config: &DetectionConfig) -> Vec<LeafSegment> {
    leaf_mask_components(image, &config.colors)
        .into_iter()
        .filter(|c| c.len() >= config.min_area)
        .filter_map(LeafSegment::from_pixels)
        .filter(|s| s.elongation >= config.min_elongation)
        .collect()
}

pub fn leaf_line(seg: &LeafSegment, min_elongation: f64) -> Result<Line2D, DetectionError> {
    if !(seg.elongation >= min_elongation) {
        return Err(DetectionError::AmbiguousDirection { elongation: seg.elongation });
    }
    Ok(Line2D::new(Point2::new(seg.centroid.0, seg.centroid.1), Point2::new(seg.principal_axis.0, seg.principal_axis.1)))
}

/// Intersection of two lines, or `None` when |sin θ| < `parallel_sin`.
pub fn intersect_pair(a: &Line2D, b: &Line2D, parallel_sin: f64) -> Option<Point2> {
    let cross = a.direction.x * b.direction.y - a.direction.y * b.direction.x;
    if cross.abs() < parallel_sin {
        return None;
    }
    let (dx, dy) = (b.point.x - a.point.x, b.point.y - a.point.y);
    let t = (dx * b.direction.y - dy * b.direction.x) / cross;
    Some(Point2::new(a.point.x + t * a.direction.x, a.point.y + t * a.direction.y))
}

pub fn intersect_lines(lines: &[Line2D], parallel_sin: f64) -> Result<Vec<Point2>, DetectionError> {
    if lines.len() < 2 {
        return Err(DetectionError::InsufficientEvidence(format!("{} usable leaf lines", lines.len())));
    }
    let mut points = Vec::new();
    for i in 0..lines.len() {
        for j in i + 1..lines.len() {
            if let Some(p) = intersect_pair(&lines[i], &lines[j], parallel_sin) {
                points.push(p);
            }
        }
    }
    if points.is_empty() {
        return Err(DetectionError::InsufficientEvidence("all leaf lines are near-parallel".into()));
    }
    Ok(points)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootEstimate {
    pub root: Point2,
    pub inliers: Vec<Point2>,
    pub confidence: f64,
}

/// Centroid of the points within `tau` of the component-wise median.
pub fn estimate_root(points: &[Point2], tau: f64) -> Result<RootEstimate, DetectionError> {
    if points.is_empty() {
        return Err(DetectionError::InsufficientEvidence("no intersection points".into()));
    }
    let mut xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let mut ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let center = Point2::new(median(&mut xs), median(&mut ys));
    let inliers: Vec<Point2> = points.iter().copied().filter(|p| p.distance(&center) <= tau).collect();
    if inliers.is_empty() {
        return Err(DetectionError::InsufficientEvidence("every intersection point is an outlier".into()));
    }
    let n = inliers.len() as f64;
    let (sx, sy) = inliers.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    Ok(RootEstimate { root: Point2::new(sx / n, sy / n), confidence: n / points.len() as f64, inliers })
}

fn depth_at(depth: &DepthImage, u: f64, v: f64, window: u32) -> Option<f64> {
    let (iu, iv) = (u.round() as i64, v.round() as i64);
    let valid = |d: f32| d.is_finite() && d > 0.0;
    let d = depth.get(iu as u32, iv as u32);
    if valid(d) {
        return Some(d as f64);
    }
    let r = (window / 2) as i64;
    let mut found: Vec<f64> = Vec::new();
    for dv in -r..=r {
        for du in -r..=r {
            let (x, y) = (iu + du, iv + dv);
            if x < 0 || y < 0 || x >= depth.width as i64 || y >= depth.height as i64 {
                continue;
            }
            let d = depth.get(x as u32, y as u32);
            if valid(d) {
                found.push(d as f64);
            }
        }
    }
    (!found.is_empty()).then(|| median(&mut found))
}

/// Back-projects pixel `(u, v)` through the pinhole and maps it into the platform frame.
pub fn pixel_to_platform(pixel: (f64, f64), depth: &DepthImage, cam: &CameraModel, window: u32) -> Result<Point3<f64>, DetectionError> {
    let (u, v) = pixel;
    let k = &cam.intrinsics;
    if !(u.is_finite() && v.is_finite()) || u.round() < 0.0 || v.round() < 0.0 || u.round() >= depth.width as f64 || v.round() >= depth.height as f64 {
        return Err(DetectionError::OutOfBounds { u, v });
    }
    let d = depth_at(depth, u, v, window).ok_or(DetectionError::NoDepth { u, v })?;
    Ok(cam.extrinsic * k.back_project(u, v, d))
}

pub fn detect_weed(image: &ColorImage, depth: &DepthImage, cam: &CameraModel, config: &DetectionConfig) -> Result<WeedHypothesis, DetectionError> {
    let k = &cam.intrinsics;
    let expected = (k.width, k.height);
    for got in [image.dimensions(), (depth.width, depth.height)] {
        if got != expected {
            return Err(DetectionError::DimensionMismatch { got, expected });
        }
    }
    let segments = segment_leaves(image, config);
    let lines: Vec<Line2D> = segments.iter().filter_map(|s| leaf_line(s, config.min_elongation).ok()).collect();
    let points = intersect_lines(&lines, config.parallel_sin)?;
    let estimate = estimate_root(&points, config.outlier_px)?;
    if estimate.confidence < config.min_confidence {
        return Err(DetectionError::InsufficientEvidence(format!(
            "only {} of {} intersections agree",
            estimate.inliers.len(),
            points.len()
        )));
    }
    let (u, v) = (estimate.root.x, estimate.root.y);
    if !k.contains(u, v) {
        return Err(DetectionError::InsufficientEvidence(format!("root estimate ({u:.0}, {v:.0}) lies outside the image")));
    }
    let root = pixel_to_platform((u, v), depth, cam, config.depth_window)?;
    Ok(WeedHypothesis {
        root_pixel: (u, v),
        inlier_points: estimate.inliers,
        root_platform: [root.x, root.y, root.z],
        confidence: estimate.confidence,
        leaf_count: lines.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraIntrinsics;
    use crate::geometry::Pose3;
    use image::Rgb;

    fn draw_ellipse(img: &mut ColorImage, c: (f64, f64), a: f64, b: f64, angle: f64) {
        let (s, co) = angle.sin_cos();
        for (u, v, p) in img.enumerate_pixels_mut() {
            let (du, dv) = (u as f64 - c.0, v as f64 - c.1);
            let x = du * co + dv * s;
            let y = -du * s + dv * co;
            if (x / a).powi(2) + (y / b).powi(2) <= 1.0 {
                *p = Rgb([45, 95, 35]);
            }
        }
    }

    fn grass(w: u32, h: u32) -> ColorImage {
        ColorImage::from_pixel(w, h, Rgb([110, 160, 55]))
    }

    #[test]
    fn no_leaf_pixels_no_segments() {
        assert!(segment_leaves(&grass(64, 48), &DetectionConfig::default()).is_empty());
    }

    #[test]
    fn ellipse_axis_at_thirty_degrees() {
        let mut img = grass(200, 200);
        draw_ellipse(&mut img, (100.0, 100.0), 40.0, 10.0, 30f64.to_radians());
        let segs = segment_leaves(&img, &DetectionConfig::default());
        assert_eq!(segs.len(), 1);
        let (x, y) = segs[0].principal_axis;
        let angle = y.atan2(x).to_degrees();
        let diff = ((angle - 30.0 + 90.0).rem_euclid(180.0) - 90.0).abs();
        assert!(diff < 2.0, "angle {angle}");
        assert!((segs[0].elongation - 4.0).abs() < 0.3);
    }

    #[test]
    fn two_leaves_two_centroids() {
        let mut img = grass(300, 200);
        draw_ellipse(&mut img, (60.0, 50.0), 30.0, 8.0, 0.2);
        draw_ellipse(&mut img, (200.0, 140.0), 35.0, 9.0, -0.9);
        let segs = segment_leaves(&img, &DetectionConfig::default());
        assert_eq!(segs.len(), 2);
        assert!((segs[0].centroid.0 - 60.0).abs() < 1.0 && (segs[0].centroid.1 - 50.0).abs() < 1.0);
        assert!((segs[1].centroid.0 - 200.0).abs() < 1.0 && (segs[1].centroid.1 - 140.0).abs() < 1.0);
    }

    #[test]
    fn horizontal_and_diagonal_lines() {
        let mut img = grass(200, 200);
        draw_ellipse(&mut img, (100.0, 100.0), 40.0, 10.0, 0.0);
        let seg = &segment_leaves(&img, &DetectionConfig::default())[0];
        let line = leaf_line(seg, 2.0).unwrap();
        assert!((line.direction.x.abs() - 1.0).abs() < 1e-9 && line.direction.y.abs() < 1e-9);

        let mut img = grass(200, 200);
        draw_ellipse(&mut img, (100.0, 100.0), 40.0, 10.0, std::f64::consts::FRAC_PI_4);
        let seg = &segment_leaves(&img, &DetectionConfig::default())[0];
        let line = leaf_line(seg, 2.0).unwrap();
        assert!((line.direction.x.abs() - 0.7071).abs() < 0.02 && (line.direction.y.abs() - 0.7071).abs() < 0.02);
    }

    #[test]
    fn circle_is_ambiguous() {
        let mut img = grass(100, 100);
        draw_ellipse(&mut img, (50.0, 50.0), 15.0, 15.0, 0.0);
        let comps = leaf_mask_components(&img, &ColorThresholds::default());
        let seg = LeafSegment::from_pixels(comps.into_iter().next().unwrap()).unwrap();
        assert!(matches!(leaf_line(&seg, 2.0), Err(DetectionError::AmbiguousDirection { .. })));
    }

    #[test]
    fn analytic_intersection() {
        let a = Line2D::new(Point2::new(0.0, 0.0), Point2::new(1.0, 1.0));
        let b = Line2D::new(Point2::new(0.0, 2.0), Point2::new(1.0, -1.0));
        let p = intersect_lines(&[a, b], 0.05).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p[0].x - 1.0).abs() < 1e-12 && (p[0].y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_lines_are_insufficient() {
        let a = Line2D::new(Point2::new(0.0, 0.0), Point2::new(1.0, 0.0));
        let b = Line2D::new(Point2::new(0.0, 3.0), Point2::new(-1.0, 0.0));
        assert!(intersect_lines(&[a, b], 0.05).unwrap_err().is_insufficient_evidence());
        assert!(intersect_lines(&[a], 0.05).unwrap_err().is_insufficient_evidence());
    }

    #[test]
    fn concurrent_lines() {
        let lines: Vec<Line2D> = [0.1, 0.9, 1.7, 2.6]
            .iter()
            .map(|a: &f64| Line2D::new(Point2::new(3.0 + 5.0 * a.cos(), 4.0 + 5.0 * a.sin()), Point2::new(a.cos(), a.sin())))
            .collect();
        let pts = intersect_lines(&lines, 0.05).unwrap();
        assert_eq!(pts.len(), 6);
        assert!(pts.iter().all(|p| (p.x - 3.0).abs() < 1e-9 && (p.y - 4.0).abs() < 1e-9));
    }

    #[test]
    fn root_single_point() {
        let r = estimate_root(&[Point2::new(7.0, 8.0)], 20.0).unwrap();
        assert_eq!(r.root, Point2::new(7.0, 8.0));
        assert_eq!(r.confidence, 1.0);
    }

    #[test]
    fn root_rejects_far_point() {
        let mut pts: Vec<Point2> = [(10.0, 10.0), (11.0, 9.5), (9.0, 10.5), (10.5, 11.0), (9.5, 9.0)].iter().map(|&(x, y)| Point2::new(x, y)).collect();
        pts.push(Point2::new(200.0, 200.0));
        let r = estimate_root(&pts, 20.0).unwrap();
        assert_eq!(r.inliers.len(), 5);
        assert!(r.root.distance(&Point2::new(10.0, 10.0)) < 1.0);
    }

    #[test]
    fn symmetric_cluster_exact() {
        let pts = [Point2::new(4.0, 6.0), Point2::new(6.0, 6.0), Point2::new(5.0, 5.0), Point2::new(5.0, 7.0)];
        assert_eq!(estimate_root(&pts, 20.0).unwrap().root, Point2::new(5.0, 6.0));
    }

    #[test]
    fn back_projection_identity_extrinsic() {
        let k = CameraIntrinsics::default();
        let cam = CameraModel { intrinsics: k, extrinsic: Pose3::identity() };
        let mut depth = DepthImage::new(k.width, k.height);
        depth.data.iter_mut().for_each(|d| *d = 0.5);
        let p = pixel_to_platform((320.0, 240.0), &depth, &cam, 5).unwrap();
        assert!((p - Point3::new(0.0, 0.0, 0.5)).norm() < 1e-7);
        let p = pixel_to_platform((320.0 + 600.0 * 0.2 / 0.5, 240.0), &depth, &cam, 5).unwrap();
        assert!((p.x - 0.2).abs() < 1e-7);
    }

    #[test]
    fn missing_depth_uses_window_median() {
        let k = CameraIntrinsics::default();
        let cam = CameraModel { intrinsics: k, extrinsic: Pose3::identity() };
        let mut depth = DepthImage::new(k.width, k.height);
        assert!(matches!(pixel_to_platform((100.0, 100.0), &depth, &cam, 5), Err(DetectionError::NoDepth { .. })));
        depth.set(101, 102, 0.6);
        depth.set(99, 98, 0.8);
        depth.set(102, 100, 0.7);
        let p = pixel_to_platform((100.0, 100.0), &depth, &cam, 5).unwrap();
        assert!((p.z - 0.7).abs() < 1e-6);
    }

    #[test]
    fn empty_scene_is_insufficient() {
        let k = CameraIntrinsics { width: 64, height: 48, fx: 60.0, fy: 60.0, cx: 32.0, cy: 24.0 };
        let cam = CameraModel { intrinsics: k, extrinsic: Pose3::identity() };
        let err = detect_weed(&grass(64, 48), &DepthImage::new(64, 48), &cam, &DetectionConfig::default()).unwrap_err();
        assert!(err.is_insufficient_evidence());
    }
}
