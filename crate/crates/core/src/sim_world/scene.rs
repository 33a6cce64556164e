//! Ray-cast rasterizer for the pasture: textured grass, flat elliptical
//! leaves radiating from each root, and a metric z-depth image.

use image::Rgb;
use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{GroundModel, SimError, Weed};
use crate::camera::{CameraIntrinsics, ColorImage, DepthImage};
use crate::geometry::Pose3;

pub const GRASS_BASE: [u8; 3] = [110, 160, 55];
pub const LEAF_BASE: [u8; 3] = [45, 95, 35];

const MAX_NADIR_ANGLE_DEG: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneOptions {
    #[serde(skip)]
    pub seed: u64,
    /// Fraction of pixels replaced by salt, pepper or random color.
    pub clutter_fraction: f64,
    /// Standard deviation of additive depth noise, m.
    #[serde(skip)]
    pub depth_sigma: f64,
    /// Fraction of depth pixels reported as invalid (0).
    pub depth_dropout: f64,
    /// Blend toward white, 0 = none, 1 = fully washed out.
    pub washout: f64,
    /// Uniform per-channel texture amplitude.
    pub grass_noise: u8,
    pub leaf_noise: u8,
    /// Distance from the root to where each leaf blade begins, m.
    pub leaf_gap: f64,
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            clutter_fraction: 0.0,
            depth_sigma: 0.0,
            depth_dropout: 0.0,
            washout: 0.0,
            grass_noise: 25,
            leaf_noise: 12,
            leaf_gap: 0.01,
        }
    }
}

/// Reference color classifier for rendered leaf pixels.
pub fn weed_pixel_color(p: &Rgb<u8>) -> bool {
    let [r, g, b] = p.0;
    let (r, g, b) = (r as i32, g as i32, b as i32);
    r < 75 && (70..=125).contains(&g) && g - r >= 25 && b < 70
}

struct LeafShape {
    center: (f64, f64),
    dir: (f64, f64),
    half_length: f64,
    half_width: f64,
}

struct WeedShape {
    root: (f64, f64),
    reach: f64,
    leaves: Vec<LeafShape>,
}

impl WeedShape {
    fn new(weed: &Weed, gap: f64) -> Self {
        let root = (weed.root_position[0], weed.root_position[1]);
        let leaves: Vec<LeafShape> = weed
            .leaves
            .iter()
            .map(|leaf| {
                let dir = (leaf.azimuth.cos(), leaf.azimuth.sin());
                let offset = gap + leaf.length / 2.0;
                LeafShape {
                    center: (root.0 + dir.0 * offset, root.1 + dir.1 * offset),
                    dir,
                    half_length: leaf.length / 2.0,
                    half_width: leaf.width / 2.0,
                }
            })
            .collect();
        let reach = weed.leaves.iter().map(|l| gap + l.length).fold(0.0, f64::max);
        Self { root, reach, leaves }
    }

    fn covers(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.root.0, y - self.root.1);
        if dx * dx + dy * dy > self.reach * self.reach {
            return false;
        }
        self.leaves.iter().any(|leaf| {
            let (px, py) = (x - leaf.center.0, y - leaf.center.1);
            let along = px * leaf.dir.0 + py * leaf.dir.1;
            let across = -px * leaf.dir.1 + py * leaf.dir.0;
            (along / leaf.half_length).powi(2) + (across / leaf.half_width).powi(2) <= 1.0
        })
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: [u8; 3], amplitude: u8) -> Rgb<u8> {
    let a = amplitude as i32;
    let mut out = [0u8; 3];
    for (o, b) in out.iter_mut().zip(base) {
        let n = if a == 0 { 0 } else { rng.random_range(-a..=a) };
        *o = (b as i32 + n).clamp(0, 255) as u8;
    }
    Rgb(out)
}

/// Intersects a world-frame ray with the ground surface; returns the ray
/// parameter t (equal to z-depth when the camera-frame ray has unit z).
fn ground_hit(ground: &GroundModel, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
    if dir.z >= -1e-9 {
        return None;
    }
    let mut t = (ground.base_height - origin.z) / dir.z;
    if ground.undulation_amplitude != 0.0 {
        for _ in 0..20 {
            let p = origin + dir * t;
            let next = (ground.surface_height(p.x, p.y) - origin.z) / dir.z;
            if (next - t).abs() < 1e-12 {
                t = next;
                break;
            }
            t = next;
        }
    }
    (t > 0.0).then_some(t)
}

/// Renders color and depth for a camera at `camera_pose` (world frame).
pub fn render_scene(
    weeds: &[Weed],
    ground: &GroundModel,
    camera_pose: &Pose3,
    intrinsics: &CameraIntrinsics,
    options: &SceneOptions,
) -> Result<(ColorImage, DepthImage), SimError> {
    let origin = Point3::from(camera_pose.translation.vector);
    if origin.z <= ground.surface_height(origin.x, origin.y) {
        return Err(SimError::CameraBelowSurface);
    }
    let axis = camera_pose.rotation * Vector3::z();
    let nadir_angle = (-axis.z).clamp(-1.0, 1.0).acos().to_degrees();
    if nadir_angle > MAX_NADIR_ANGLE_DEG {
        return Err(SimError::CameraNotDownward(nadir_angle));
    }

    let shapes: Vec<WeedShape> = weeds.iter().filter(|w| !w.removed).map(|w| WeedShape::new(w, options.leaf_gap)).collect();
    let mut texture = ChaCha8Rng::seed_from_u64(options.seed);
    texture.set_stream(11);
    let mut clutter = ChaCha8Rng::seed_from_u64(options.seed);
    clutter.set_stream(12);
    let mut depth_rng = ChaCha8Rng::seed_from_u64(options.seed);
    depth_rng.set_stream(13);
    let depth_noise = (options.depth_sigma > 0.0).then(|| Normal::new(0.0, options.depth_sigma).expect("sigma ≥ 0"));

    let mut color = ColorImage::new(intrinsics.width, intrinsics.height);
    let mut depth = DepthImage::new(intrinsics.width, intrinsics.height);
    for v in 0..intrinsics.height {
        for u in 0..intrinsics.width {
            let ray = camera_pose.rotation * intrinsics.ray(u as f64, v as f64);
            let grass = jitter(&mut texture, GRASS_BASE, options.grass_noise);
            let leaf = jitter(&mut texture, LEAF_BASE, options.leaf_noise);
            let Some(t) = ground_hit(ground, &origin, &ray) else {
                color.put_pixel(u, v, Rgb([180, 200, 230]));
                continue;
            };
            let hit = origin + ray * t;
            let mut px = if shapes.iter().any(|s| s.covers(hit.x, hit.y)) { leaf } else { grass };

            if options.clutter_fraction > 0.0 && clutter.random::<f64>() < options.clutter_fraction {
                px = match clutter.random_range(0..3) {
                    0 => Rgb([255, 255, 255]),
                    1 => Rgb([0, 0, 0]),
                    _ => Rgb([clutter.random(), clutter.random(), clutter.random()]),
                };
            }
            if options.washout > 0.0 {
                let w = options.washout.clamp(0.0, 1.0);
                for c in px.0.iter_mut() {
                    *c = (*c as f64 + (255.0 - *c as f64) * w).round() as u8;
                }
            }
            color.put_pixel(u, v, px);

            let dropped = options.depth_dropout > 0.0 && depth_rng.random::<f64>() < options.depth_dropout;
            let noise = depth_noise.map_or(0.0, |n| n.sample(&mut depth_rng));
            depth.set(u, v, if dropped { 0.0 } else { (t + noise).max(0.0) as f32 });
        }
    }
    Ok((color, depth))
}
