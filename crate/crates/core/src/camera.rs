//! Pinhole camera with a world-to-camera rigid pose.
//!
//! Camera axes follow the computer-vision convention: +x right, +y down,
//! +z forward. Pixel `(u, v)` covers `[u, u+1) x [v, v+1)`, so its center
//! sits at `(u + 0.5, v + 0.5)`.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transform::SimilarityTransform;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("focal lengths must be positive (fx={fx}, fy={fy})")]
    Focal { fx: f64, fy: f64 },
    #[error("image size must be positive ({width}x{height})")]
    Size { width: u32, height: u32 },
    #[error("pose rotation is not a proper rotation (orthonormality error {0:e})")]
    Rotation(f64),
    #[error("quaternion has zero or non-finite norm")]
    Quaternion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    /// Centered principal point from horizontal and vertical field of view.
    pub fn from_fov(width: u32, height: u32, fov_x: f64, fov_y: f64) -> Self {
        Self {
            fx: width as f64 / (2.0 * (fov_x / 2.0).tan()),
            fy: height as f64 / (2.0 * (fov_y / 2.0).tan()),
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// `K^-1 [u, v, 1]` for a continuous pixel coordinate.
    pub fn unproject(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Ray through the center of pixel `(px, py)` with unit z component.
    pub fn pixel_ray(&self, px: u32, py: u32) -> Vector3<f64> {
        self.unproject(px as f64 + 0.5, py as f64 + 0.5)
    }

    pub fn project(&self, p_cam: &Vector3<f64>) -> (f64, f64) {
        (
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        )
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// World-to-camera rigid transform: `x_cam = R x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    pub pose: RigidPose,
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, pose: RigidPose) -> Result<Self, CameraError> {
        let cam = Self { intrinsics, pose };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let k = &self.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) {
            return Err(CameraError::Focal { fx: k.fx, fy: k.fy });
        }
        if k.width == 0 || k.height == 0 {
            return Err(CameraError::Size {
                width: k.width,
                height: k.height,
            });
        }
        let r = &self.pose.rotation;
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(CameraError::Rotation(err));
        }
        Ok(())
    }

    /// Camera at `position` with camera-to-world orientation `orientation`.
    pub fn from_position_orientation(
        intrinsics: Intrinsics,
        position: Vector3<f64>,
        orientation: UnitQuaternion<f64>,
    ) -> Self {
        let r_cw = orientation.to_rotation_matrix().into_inner().transpose();
        Self {
            intrinsics,
            pose: RigidPose {
                rotation: r_cw,
                translation: -(r_cw * position),
            },
        }
    }

    /// Camera at `eye` looking toward `target`, with image "up" as close to
    /// `up` as possible.
    pub fn look_at(intrinsics: Intrinsics, eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            right = forward.cross(&Vector3::x());
            if right.norm() < 1e-9 {
                right = forward.cross(&Vector3::y());
            }
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        // rows of world-to-camera are the camera axes in world coordinates
        let r_cw = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self {
            intrinsics,
            pose: RigidPose {
                rotation: r_cw,
                translation: -(r_cw * eye),
            },
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.pose.rotation.transpose() * self.pose.translation)
    }

    /// Camera-to-world orientation.
    pub fn orientation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
            self.pose.rotation.transpose(),
        ))
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.rotation * p + self.pose.translation
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.rotation.transpose() * (p - self.pose.translation)
    }

    /// Moves the camera along with a global similarity of the world: the
    /// center goes to `T(c)` and the orientation is composed with `T`'s
    /// rotation. Intrinsics are unchanged, so images are preserved.
    pub fn transformed(&self, t: &SimilarityTransform) -> Self {
        let center = t.apply(&self.center());
        let r_cw = self.pose.rotation * t.rotation.transpose();
        Self {
            intrinsics: self.intrinsics,
            pose: RigidPose {
                rotation: r_cw,
                translation: -(r_cw * center),
            },
        }
    }

    /// Applies a small rigid perturbation expressed in the camera frame:
    /// rotation by roll/pitch/yaw about camera axes, then a shift of the center.
    pub fn perturbed(&self, d_center: &Vector3<f64>, d_rot: &Vector3<f64>) -> Self {
        let dr = Rotation3::from_euler_angles(d_rot.x, d_rot.y, d_rot.z).into_inner();
        let center = self.center() + d_center;
        let r_cw = dr * self.pose.rotation;
        Self {
            intrinsics: self.intrinsics,
            pose: RigidPose {
                rotation: r_cw,
                translation: -(r_cw * center),
            },
        }
    }
}

/// JSON form used by the CLI and the render service: a camera center and a
/// camera-to-world quaternion `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub intrinsics: Intrinsics,
    pub position: [f64; 3],
    pub quaternion: [f64; 4],
}

impl CameraSpec {
    pub fn to_camera(&self) -> Result<CameraModel, CameraError> {
        let q = quaternion_from_wxyz(self.quaternion)?;
        let cam = CameraModel::from_position_orientation(self.intrinsics, Vector3::from(self.position), q);
        cam.validate()?;
        Ok(cam)
    }

    pub fn from_camera(cam: &CameraModel) -> Self {
        let q = cam.orientation();
        let c = cam.center();
        Self {
            intrinsics: cam.intrinsics,
            position: [c.x, c.y, c.z],
            quaternion: [q.w, q.i, q.j, q.k],
        }
    }
}

pub(crate) fn quaternion_from_wxyz(q: [f64; 4]) -> Result<UnitQuaternion<f64>, CameraError> {
    let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
    let n = raw.norm();
    if !(n.is_finite() && n > 0.0) {
        return Err(CameraError::Quaternion);
    }
    Ok(UnitQuaternion::from_quaternion(raw))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> Intrinsics {
        Intrinsics {
            fx: 100.0,
            fy: 120.0,
            cx: 32.0,
            cy: 24.0,
            width: 64,
            height: 48,
        }
    }

    #[test]
    fn unproject_inverts_project() {
        let k = k();
        let p = Vector3::new(0.3, -0.2, 2.0);
        let (u, v) = k.project(&p);
        let r = k.unproject(u, v) * p.z;
        assert!((r - p).norm() < 1e-12);
        assert!((k.inverse_matrix() * k.matrix() - Matrix3::identity()).norm() < 1e-15);
    }

    #[test]
    fn fov_gives_expected_focal() {
        let k = Intrinsics::from_fov(320, 180, 1.5701, 1.0260);
        assert!((k.fx - 160.1).abs() < 0.1);
        assert!((k.fy - 160.0).abs() < 0.5);
    }

    #[test]
    fn look_at_and_center() {
        let eye = Vector3::new(1.0, 2.0, 3.0);
        let cam = CameraModel::look_at(k(), eye, Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0));
        cam.validate().unwrap();
        assert!((cam.center() - eye).norm() < 1e-12);
        let pc = cam.world_to_camera(&Vector3::zeros());
        assert!(pc.x.abs() < 1e-12 && pc.y.abs() < 1e-12 && pc.z > 0.0);
        let spec = CameraSpec::from_camera(&cam);
        let back = spec.to_camera().unwrap();
        assert!((back.pose.rotation - cam.pose.rotation).norm() < 1e-12);
    }

    #[test]
    fn invalid_cameras_rejected() {
        let mut bad = k();
        bad.fx = 0.0;
        assert!(CameraModel::new(bad, RigidPose::identity()).is_err());
        let mut pose = RigidPose::identity();
        pose.rotation[(0, 0)] = -1.0;
        assert!(CameraModel::new(k(), pose).is_err());
    }

    #[test]
    fn transformed_camera_sees_scaled_coordinates() {
        let cam = CameraModel::look_at(k(), Vector3::new(0.5, -1.0, 0.2), Vector3::new(0.0, 0.0, 3.0), -Vector3::y());
        let t = SimilarityTransform::from_quaternion(
            &UnitQuaternion::from_euler_angles(0.3, -0.4, 1.1),
            Vector3::new(1.0, 2.0, -0.5),
            1.7,
        );
        let moved = cam.transformed(&t);
        let p = Vector3::new(0.2, 0.1, 2.5);
        let a = cam.world_to_camera(&p);
        let b = moved.world_to_camera(&t.apply(&p));
        assert!((b - 1.7 * a).norm() < 1e-12);
    }
}
