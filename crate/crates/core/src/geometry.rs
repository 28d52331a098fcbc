//! Frames, pinhole camera model and ray casting.
//!
//! Conventions used throughout the crate:
//! - camera frame: x right, y down, z forward (optical axis)
//! - field frame: x along the long arena axis, y to the left, z up
//!
//! All angles are radians.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Point2, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("focal lengths must be positive (fx={fx}, fy={fy})")]
    BadFocalLength { fx: f64, fy: f64 },
    #[error("principal point ({cx}, {cy}) outside {width}x{height} image")]
    BadPrincipalPoint {
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    },
    #[error("rotation is not orthonormal with determinant +1")]
    NotARotation,
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::BadFocalLength {
                fx: self.fx,
                fy: self.fy,
            });
        }
        if !(self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64)
        {
            return Err(GeometryError::BadPrincipalPoint {
                cx: self.cx,
                cy: self.cy,
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    /// Rescales the model to a different image resolution, e.g. from the
    /// full camera image down to the segmentation mask.
    pub fn scaled_to(&self, width: u32, height: u32) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn contains(&self, pixel: &Point2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x < self.width as f64
            && pixel.y < self.height as f64
    }
}

/// Rigid camera-to-field transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub translation: Vector3<f64>,
    pub rotation: Rotation3<f64>,
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: Rotation3::identity(),
        }
    }

    /// Builds a pose from a raw matrix, checking that it is a proper rotation.
    pub fn from_matrix(
        translation: Vector3<f64>,
        rotation: Matrix3<f64>,
    ) -> Result<Self, GeometryError> {
        let should_be_identity = rotation.transpose() * rotation;
        let orthonormal = (should_be_identity - Matrix3::identity()).abs().max() <= 1e-9;
        if !orthonormal || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::NotARotation);
        }
        Ok(Self {
            translation,
            rotation: Rotation3::from_matrix_unchecked(rotation),
        })
    }

    /// Forward-looking camera on a vehicle at `position` with heading `yaw`,
    /// tilted down by `pitch_down` radians.
    pub fn forward_looking(position: Vector3<f64>, yaw: f64, pitch_down: f64) -> Self {
        let (s, c) = pitch_down.sin_cos();
        // Camera axes expressed in the yaw-aligned body frame (x fwd, y left, z up).
        let right = Vector3::new(0.0, -1.0, 0.0);
        let down = Vector3::new(-s, 0.0, -c);
        let forward = Vector3::new(c, 0.0, -s);
        let mount = Matrix3::from_columns(&[right, down, forward]);
        let heading = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
        Self {
            translation: position,
            rotation: heading * Rotation3::from_matrix_unchecked(mount),
        }
    }

    pub fn inverse_transform(&self, point_field: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (point_field - self.translation)
    }
}

/// Field-centric coordinate system broadcast to the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldFrame {
    pub origin: Vector2<f64>,
    pub heading: f64,
}

impl FieldFrame {
    pub fn new(origin: Vector2<f64>, heading: f64) -> Self {
        Self {
            origin,
            heading: wrap_angle(heading),
        }
    }

    /// Converts a global 2D position into field coordinates.
    pub fn to_field(&self, global: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.heading.sin_cos();
        let d = global - self.origin;
        Vector2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Back-projects a pixel to the ray point at unit depth, `K^-1 (u, v, 1)`.
pub fn pixel_ray(intr: &CameraIntrinsics, pixel: &Point2<f64>) -> Vector3<f64> {
    Vector3::new(
        (pixel.x - intr.cx) / intr.fx,
        (pixel.y - intr.cy) / intr.fy,
        1.0,
    )
}

/// Result of projecting a field point into the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Pixel(Point2<f64>),
    BehindCamera,
}

impl Projection {
    pub fn pixel(self) -> Option<Point2<f64>> {
        match self {
            Projection::Pixel(p) => Some(p),
            Projection::BehindCamera => None,
        }
    }
}

/// Projects a point already expressed in the camera frame.
pub fn project_camera_point(intr: &CameraIntrinsics, point_camera: &Vector3<f64>) -> Projection {
    if point_camera.z <= 0.0 {
        return Projection::BehindCamera;
    }
    Projection::Pixel(Point2::new(
        intr.fx * point_camera.x / point_camera.z + intr.cx,
        intr.fy * point_camera.y / point_camera.z + intr.cy,
    ))
}

pub fn project_point(
    intr: &CameraIntrinsics,
    pose: &CameraPose,
    point_field: &Vector3<f64>,
) -> Projection {
    project_camera_point(intr, &pose.inverse_transform(point_field))
}

pub fn to_field(pose: &CameraPose, point_camera: &Vector3<f64>) -> Vector3<f64> {
    pose.rotation * point_camera + pose.translation
}
