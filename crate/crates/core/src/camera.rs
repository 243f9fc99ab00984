//! Pinhole cameras, orbit poses and ray generation.
//!
//! Camera frame: `+x` right, `+y` up, the camera looks down `-z`. Pixel
//! `(row, col)` has its center at integer coordinates, rows grow downward.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FOV_DEG: f64 = 40.0;
pub const DEFAULT_RADIUS: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-to-world `[R | t]`, row-major 3x4.
    pub pose: [[f64; 4]; 3],
    pub near: f64,
    pub far: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
    pub pixel: (usize, usize),
}

impl Ray {
    pub fn at(&self, z: f64) -> [f64; 3] {
        [
            self.origin[0] + z * self.dir[0],
            self.origin[1] + z * self.dir[1],
            self.origin[2] + z * self.dir[2],
        ]
    }
}

/// Projection of a world point into pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projected {
    pub row: f64,
    pub col: f64,
    /// Behind the camera or outside the frame.
    pub occluded: bool,
}

fn focal_from_fov(height: usize, fov_deg: f64) -> f64 {
    0.5 * height as f64 / (0.5 * fov_deg.to_radians()).tan()
}

/// Rotation whose `-z` axis points from `eye` to the origin, with world `+y` up.
fn look_at_origin(eye: Vector3<f64>) -> Result<Matrix3<f64>> {
    let back = eye.normalize();
    let right = Vector3::y().cross(&back);
    if right.norm() < 1e-9 {
        return Err(Error::InvalidInput("camera looks straight up or down".into()));
    }
    let right = right.normalize();
    let up = back.cross(&right);
    Ok(Matrix3::from_columns(&[right, up, back]))
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        pose: [[f64; 4]; 3],
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let cam = Self {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            pose,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("camera resolution must be positive".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        if !(0.0 < self.near && self.near < self.far) {
            return Err(Error::InvalidInput(format!(
                "need 0 < near < far, got near {} far {}",
                self.near, self.far
            )));
        }
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(err <= 1e-6) {
            return Err(Error::InvalidInput(format!("pose rotation is not orthonormal (error {err:e})")));
        }
        Ok(())
    }

    /// Camera on a sphere around the origin looking at it. Yaw rotates about
    /// `+y` (yaw 0 sits on `+z`), positive pitch lifts the camera above the equator.
    pub fn orbit(yaw_deg: f64, pitch_deg: f64, radius: f64, width: usize, height: usize) -> Result<Self> {
        Self::orbit_with_fov(yaw_deg, pitch_deg, radius, width, height, DEFAULT_FOV_DEG)
    }

    pub fn orbit_with_fov(
        yaw_deg: f64,
        pitch_deg: f64,
        radius: f64,
        width: usize,
        height: usize,
        fov_deg: f64,
    ) -> Result<Self> {
        if !(radius > 0.0) || !yaw_deg.is_finite() || !pitch_deg.is_finite() {
            return Err(Error::InvalidInput("orbit needs finite angles and positive radius".into()));
        }
        let (y, p) = (yaw_deg.to_radians(), pitch_deg.to_radians());
        let eye = Vector3::new(p.cos() * y.sin(), p.sin(), p.cos() * y.cos()) * radius;
        let rot = look_at_origin(eye)?;
        let f = focal_from_fov(height, fov_deg);
        // The head fits in the unit cube, so a unit margin either side of the
        // origin bounds it (0.5 / 2.5 at the default radius).
        let (near, far) = ((radius - 1.0).max(0.05), radius + 1.0);
        Self::new(
            width,
            height,
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            pose_matrix(&rot, &eye),
            near,
            far,
        )
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.pose[r][c])
    }

    pub fn center(&self) -> [f64; 3] {
        [self.pose[0][3], self.pose[1][3], self.pose[2][3]]
    }

    /// World-space viewing axis (`-z` of the camera frame).
    pub fn forward_axis(&self) -> [f64; 3] {
        let r = self.rotation();
        [-r[(0, 2)], -r[(1, 2)], -r[(2, 2)]]
    }

    /// Same camera with its pose translated by `t`.
    pub fn translated(&self, t: [f64; 3]) -> Self {
        let mut out = self.clone();
        for (i, ti) in t.iter().enumerate() {
            out.pose[i][3] += ti;
        }
        out
    }

    /// Same pose and principal point with focal lengths multiplied by `k`.
    pub fn with_focal_scale(&self, k: f64) -> Self {
        Self {
            fx: self.fx * k,
            fy: self.fy * k,
            ..self.clone()
        }
    }

    /// Same view at a different resolution; intrinsics scale with the frame.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            width,
            height,
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (width as f64 - 1.0) / 2.0 + (self.cx - (self.width as f64 - 1.0) / 2.0) * sx,
            cy: (height as f64 - 1.0) / 2.0 + (self.cy - (self.height as f64 - 1.0) / 2.0) * sy,
            ..self.clone()
        }
    }

    /// Unit world direction through a (possibly fractional) pixel position.
    pub fn direction_at(&self, row: f64, col: f64) -> [f64; 3] {
        let local = Vector3::new((col - self.cx) / self.fx, -(row - self.cy) / self.fy, -1.0);
        let d = (self.rotation() * local).normalize();
        [d.x, d.y, d.z]
    }

    pub fn ray(&self, row: usize, col: usize) -> Result<Ray> {
        if row >= self.height || col >= self.width {
            return Err(Error::InvalidInput(format!(
                "pixel ({row}, {col}) outside {}x{} frame",
                self.height, self.width
            )));
        }
        Ok(Ray {
            origin: self.center(),
            dir: self.direction_at(row as f64, col as f64),
            pixel: (row, col),
        })
    }

    pub fn generate_rays(&self, pixels: &[(usize, usize)]) -> Result<Vec<Ray>> {
        pixels.iter().map(|&(r, c)| self.ray(r, c)).collect()
    }

    /// Every pixel in row-major order.
    pub fn all_pixels(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .collect()
    }

    pub fn project(&self, p: [f64; 3]) -> Projected {
        let t = Vector3::from(self.center());
        let pc = self.rotation().transpose() * (Vector3::from(p) - t);
        if pc.z >= -1e-12 {
            return Projected {
                row: f64::NAN,
                col: f64::NAN,
                occluded: true,
            };
        }
        let col = self.cx + self.fx * pc.x / -pc.z;
        let row = self.cy - self.fy * pc.y / -pc.z;
        let inside = (-0.5..self.width as f64 - 0.5).contains(&col) && (-0.5..self.height as f64 - 0.5).contains(&row);
        Projected {
            row,
            col,
            occluded: !inside,
        }
    }
}

fn pose_matrix(rot: &Matrix3<f64>, t: &Vector3<f64>) -> [[f64; 4]; 3] {
    let mut pose = [[0.0; 4]; 3];
    for (r, row) in pose.iter_mut().enumerate() {
        for c in 0..3 {
            row[c] = rot[(r, c)];
        }
        row[3] = t[r];
    }
    pose
}

/// Evenly spaced look-at-origin cameras over a pitch x yaw grid (pitch-major).
#[allow(clippy::too_many_arguments)]
pub fn camera_rig(
    n_pitch: usize,
    n_yaw: usize,
    pitch_range: (f64, f64),
    yaw_range: (f64, f64),
    radius: f64,
    width: usize,
    height: usize,
) -> Result<Vec<Camera>> {
    if n_pitch == 0 || n_yaw == 0 {
        return Err(Error::InvalidInput("rig needs at least one pitch and one yaw".into()));
    }
    let spaced = |n: usize, (a, b): (f64, f64), i: usize| {
        if n == 1 {
            0.5 * (a + b)
        } else {
            a + (b - a) * i as f64 / (n - 1) as f64
        }
    };
    let mut cams = Vec::with_capacity(n_pitch * n_yaw);
    for i in 0..n_pitch {
        for j in 0..n_yaw {
            cams.push(Camera::orbit(
                spaced(n_yaw, yaw_range, j),
                spaced(n_pitch, pitch_range, i),
                radius,
                width,
                height,
            )?);
        }
    }
    Ok(cams)
}

/// The default 6 x 20 rig: pitch in [-30, 45], yaw in [-90, 90].
pub fn default_rig(width: usize, height: usize) -> Result<Vec<Camera>> {
    camera_rig(6, 20, (-30.0, 45.0), (-90.0, 90.0), DEFAULT_RADIUS, width, height)
}

#[cfg(test)]
mod tests {
    use super::*;

    const IDENTITY: [[f64; 4]; 3] = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];

    fn identity_cam() -> Camera {
        Camera::new(65, 49, 60.0, 60.0, 32.0, 24.0, IDENTITY, 0.5, 2.5).unwrap()
    }

    #[test]
    fn principal_pixel_looks_down_negative_z() {
        let ray = identity_cam().ray(24, 32).unwrap();
        assert_eq!(ray.dir, [0.0, 0.0, -1.0]);
        assert_eq!(ray.origin, [0.0; 3]);
    }

    #[test]
    fn translation_moves_origins_only() {
        let cam = Camera::orbit(30.0, 10.0, 1.5, 16, 16).unwrap();
        let t = [0.3, -0.2, 0.7];
        let moved = cam.translated(t);
        let px = cam.all_pixels();
        let a = cam.generate_rays(&px).unwrap();
        let b = moved.generate_rays(&px).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.dir, rb.dir);
            for k in 0..3 {
                assert_eq!(rb.origin[k], ra.origin[k] + t[k]);
            }
        }
    }

    #[test]
    fn out_of_frame_pixel_is_rejected() {
        assert!(identity_cam().ray(49, 0).is_err());
        assert!(identity_cam().ray(0, 65).is_err());
    }

    #[test]
    fn invalid_bounds_and_rotation_rejected() {
        assert!(Camera::new(8, 8, 5.0, 5.0, 3.5, 3.5, IDENTITY, 1.0, 1.0).is_err());
        let mut skew = IDENTITY;
        skew[0][1] = 0.1;
        assert!(Camera::new(8, 8, 5.0, 5.0, 3.5, 3.5, skew, 0.5, 1.0).is_err());
    }

    #[test]
    fn zero_yaw_pitch_orbit_has_identity_rotation() {
        let cam = Camera::orbit(0.0, 0.0, 1.5, 8, 8).unwrap();
        let r = cam.rotation();
        assert!((r - Matrix3::identity()).abs().max() < 1e-15);
        assert_eq!(cam.center(), [0.0, 0.0, 1.5]);
    }

    #[test]
    fn positive_pitch_is_above() {
        let cam = Camera::orbit(0.0, 30.0, 1.5, 8, 8).unwrap();
        assert!(cam.center()[1] > 0.0);
        assert!(cam.forward_axis()[1] < 0.0);
    }

    #[test]
    fn default_rig_has_120_cameras_aimed_at_origin() {
        let rig = default_rig(32, 32).unwrap();
        assert_eq!(rig.len(), 120);
        for cam in &rig {
            let c = Vector3::from(cam.center());
            let f = Vector3::from(cam.forward_axis());
            // distance from the origin to the optical axis line
            let dist = c.cross(&f).norm();
            assert!(dist < 1e-6, "axis misses origin by {dist}");
            assert_eq!(cam.fx, rig[0].fx);
            assert_eq!(cam.cx, rig[0].cx);
        }
    }

    #[test]
    fn collapsed_pitch_range_keeps_cameras_on_equator() {
        let rig = camera_rig(1, 7, (0.0, 0.0), (-90.0, 90.0), 2.0, 8, 8).unwrap();
        for cam in rig {
            assert!(cam.center()[1].abs() < 1e-12);
        }
    }

    #[test]
    fn resize_keeps_center_ray() {
        let cam = Camera::orbit(20.0, 5.0, 1.5, 64, 64).unwrap();
        let small = cam.resized(16, 16);
        let a = cam.direction_at(31.5, 31.5);
        let b = small.direction_at(7.5, 7.5);
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-12);
        }
    }
}
