//! Pinhole cameras. Convention: +x right, +y down, +z forward; pixel centers
//! sit at integer coordinates.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation.
    pub translation: Vector3<f64>,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidParameter("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("camera has an empty viewport".into()));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64 && 0.0 <= self.cy && self.cy < self.height as f64) {
            return Err(Error::InvalidParameter(format!(
                "principal point ({}, {}) outside the {}x{} viewport",
                self.cx, self.cy, self.width, self.height
            )));
        }
        check_rotation(&self.rotation)
    }

    /// Camera whose world pose is given as a camera-to-world rigid transform.
    pub fn from_camera_to_world(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        camera_to_world: &Matrix4<f64>,
    ) -> Result<Self> {
        let r = camera_to_world.fixed_view::<3, 3>(0, 0).into_owned();
        let t = camera_to_world.fixed_view::<3, 1>(0, 3).into_owned();
        check_rotation(&r)?;
        let rotation = r.transpose();
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation: -(rotation * t),
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, with `up` defining the image's
    /// upward direction (image +y points opposite to it).
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fx: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let down = -up;
        let right = down.cross(&forward);
        if right.norm() < 1e-9 {
            return Err(Error::InvalidParameter("up vector parallel to viewing direction".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let cam = Self {
            fx,
            fy: fx,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
            rotation,
            translation: -(rotation * eye),
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn camera_to_world(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        let rt = self.rotation.transpose();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.center());
        m
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

pub(crate) fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let err = (r * r.transpose() - Matrix3::identity()).abs().max();
    if !(err <= 1e-9) || !(r.determinant() > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rotation is not orthonormal (deviation {err:e})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_axes() {
        let cam = Camera::look_at(Vector3::new(0.0, -3.0, 0.0), Vector3::zeros(), Vector3::z(), 50.0, 64, 64)
            .unwrap();
        let p = cam.to_camera(&Vector3::zeros());
        assert!((p - Vector3::new(0.0, 0.0, 3.0)).norm() < 1e-12);
        // world up maps to image up (negative y)
        let up = cam.to_camera(&Vector3::new(0.0, 0.0, 1.0));
        assert!(up.y < 0.0);
        assert!((cam.center() - Vector3::new(0.0, -3.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn camera_to_world_round_trip() {
        let cam = Camera::look_at(Vector3::new(1.0, 2.0, 0.5), Vector3::zeros(), Vector3::z(), 40.0, 32, 24)
            .unwrap();
        let c2w = cam.camera_to_world();
        let back = Camera::from_camera_to_world(cam.fx, cam.fy, cam.cx, cam.cy, 32, 24, &c2w).unwrap();
        assert!((back.rotation - cam.rotation).abs().max() < 1e-12);
        assert!((back.translation - cam.translation).abs().max() < 1e-12);
    }

    #[test]
    fn invalid_cameras() {
        let mut cam =
            Camera::look_at(Vector3::new(0.0, -3.0, 0.0), Vector3::zeros(), Vector3::z(), 50.0, 64, 64).unwrap();
        cam.cx = 64.0;
        assert!(cam.validate().is_err());
        cam.cx = 10.0;
        cam.rotation[(0, 0)] += 1e-6;
        assert!(cam.validate().is_err());
    }
}
