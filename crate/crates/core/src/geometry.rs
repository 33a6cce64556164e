//! Planar and spatial pose helpers shared by every subsystem.
//!
//! All planar quantities live in a local East-North-Up frame in meters.
//! Spatial poses use [`nalgebra::Isometry3`].

use std::f64::consts::PI;

use nalgebra::{Isometry3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub type Pose3 = Isometry3<f64>;

/// Wraps an angle to the half-open interval (-π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Planar pose of the platform: position in meters, yaw in radians (ENU, CCW from east).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw: wrap_angle(yaw) }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// Lifts the planar pose to 3D with the platform frame origin at z = 0.
    pub fn to_isometry(&self) -> Pose3 {
        Isometry3::from_parts(
            Translation3::new(self.x, self.y, 0.0),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.yaw),
        )
    }

    /// Maps a point expressed in this pose's frame into the parent frame.
    pub fn transform_point(&self, local: Point2) -> Point2 {
        let (s, c) = self.yaw.sin_cos();
        Point2::new(self.x + c * local.x - s * local.y, self.y + s * local.x + c * local.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Serializable position + roll/pitch/yaw, used by config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct TransformSpec {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl TransformSpec {
    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        Self { xyz: [x, y, z], rpy: [0.0; 3] }
    }

    pub fn to_isometry(&self) -> Pose3 {
        Isometry3::from_parts(
            Translation3::new(self.xyz[0], self.xyz[1], self.xyz[2]),
            UnitQuaternion::from_euler_angles(self.rpy[0], self.rpy[1], self.rpy[2]),
        )
    }
}

/// Rotation vector (axis · angle) of `rotation`, the log map of SO(3).
pub fn rotation_log(rotation: &UnitQuaternion<f64>) -> Vector3<f64> {
    rotation.scaled_axis()
}

/// Six-vector pose error `[Δp; log(R_target · R_currentᵀ)]` expressed in the common parent frame.
pub fn pose_error(current: &Pose3, target: &Pose3) -> nalgebra::Vector6<f64> {
    let dp = target.translation.vector - current.translation.vector;
    let dr = rotation_log(&(target.rotation * current.rotation.inverse()));
    nalgebra::Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

/// Tool orientation pointing straight down (tool z = -world z) with tool x along `heading`.
pub fn nadir_orientation(heading: f64) -> UnitQuaternion<f64> {
    let x = Vector3::new(heading.cos(), heading.sin(), 0.0);
    let z = Vector3::new(0.0, 0.0, -1.0);
    let y = z.cross(&x);
    let m = nalgebra::Matrix3::from_columns(&[x, y, z]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

pub fn point3(v: Vector3<f64>) -> Point3<f64> {
    Point3::from(v)
}
