//! Pinhole + fisheye camera geometry.
//!
//! Frames: earth is NED (z down), body is forward-right-down, camera has
//! z along the optical axis, x toward increasing image column `u` and y
//! toward increasing image row `v`. Euler angles compose Z-Y-X.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Image coordinates `(u, v)` in pixels.
pub type Pixel = Vector2<f64>;

/// Tolerance of the 1-D root find that inverts the fisheye warp.
const UNDISTORT_TOL: f64 = 1e-10;

/// Rotation taking camera axes to body axes for a camera looking along body x.
pub fn camera_to_body_base() -> Matrix3<f64> {
    Matrix3::new(
        0.0, 0.0, 1.0, //
        1.0, 0.0, 0.0, //
        0.0, 1.0, 0.0,
    )
}

/// Z-Y-X rotation `Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn rotation_zyx(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    Rotation3::from_euler_angles(roll, pitch, yaw).into_inner()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attitude {
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
}

impl Attitude {
    pub const LEVEL: Attitude = Attitude {
        phi: 0.0,
        theta: 0.0,
        psi: 0.0,
    };

    pub fn new(phi: f64, theta: f64, psi: f64) -> Self {
        Self {
            phi,
            theta,
            psi: wrap_angle(psi),
        }
    }

    /// Rotation body -> earth.
    pub fn body_to_earth(&self) -> Matrix3<f64> {
        rotation_zyx(self.phi, self.theta, self.psi)
    }

    /// Rotation earth -> body.
    pub fn earth_to_body(&self) -> Matrix3<f64> {
        self.body_to_earth().transpose()
    }

    pub fn is_valid(&self) -> bool {
        self.phi.abs() < std::f64::consts::PI
            && self.theta.abs() < std::f64::consts::FRAC_PI_2
            && self.psi > -std::f64::consts::PI - 1e-12
            && self.psi <= std::f64::consts::PI + 1e-12
    }
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

/// A line `p + lambda * v` with unit `v`, earth frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BearingRay {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl BearingRay {
    pub fn new(p: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { p, v: v.normalize() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Equidistant fisheye blend in `[0, 1)`; 0 is a pure pinhole.
    pub k_fish: f64,
    /// Rotation camera -> body.
    pub r_cb: Matrix3<f64>,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            fx: 100.0,
            fy: 100.0,
            cx: 80.0,
            cy: 175.0,
            width: 160,
            height: 350,
            k_fish: 0.15,
            r_cb: camera_to_body_base(),
        }
    }
}

/// Serializable camera description; the mount angles (deg) rotate the
/// forward-looking base mount about body axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub k_fish: f64,
    pub mount_yaw_deg: f64,
    pub mount_pitch_deg: f64,
    pub mount_roll_deg: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        let m = CameraModel::default();
        Self {
            fx: m.fx,
            fy: m.fy,
            cx: m.cx,
            cy: m.cy,
            width: m.width,
            height: m.height,
            k_fish: m.k_fish,
            mount_yaw_deg: 0.0,
            mount_pitch_deg: 0.0,
            mount_roll_deg: 0.0,
        }
    }
}

impl CameraConfig {
    pub fn model(&self) -> CameraModel {
        CameraModel {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            k_fish: self.k_fish,
            r_cb: camera_to_body_base(),
        }
        .with_mount(
            self.mount_yaw_deg.to_radians(),
            self.mount_pitch_deg.to_radians(),
            self.mount_roll_deg.to_radians(),
        )
    }
}

impl CameraModel {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            k_fish: 0.0,
            r_cb: camera_to_body_base(),
        }
    }

    /// Camera -> body rotation built from a mounting yaw-pitch-roll applied
    /// on top of the forward-looking base orientation.
    pub fn with_mount(mut self, yaw: f64, pitch: f64, roll: f64) -> Self {
        self.r_cb = rotation_zyx(roll, pitch, yaw) * camera_to_body_base();
        self
    }

    /// Every violated invariant, empty when the model is valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.fx > 0.0) {
            out.push(format!("camera.fx must be > 0 (got {})", self.fx));
        }
        if !(self.fy > 0.0) {
            out.push(format!("camera.fy must be > 0 (got {})", self.fy));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            out.push(format!(
                "camera.cx must lie in [0, {}) (got {})",
                self.width, self.cx
            ));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            out.push(format!(
                "camera.cy must lie in [0, {}) (got {})",
                self.height, self.cy
            ));
        }
        if !(0.0..1.0).contains(&self.k_fish) {
            out.push(format!("camera.k_fish must lie in [0, 1) (got {})", self.k_fish));
        }
        let ortho = (self.r_cb.transpose() * self.r_cb - Matrix3::identity()).norm();
        if !(ortho < 1e-9) || !((self.r_cb.determinant() - 1.0).abs() < 1e-9) {
            out.push("camera.R_cb must be a proper rotation".to_string());
        }
        out
    }

    pub fn in_image(&self, px: &Pixel) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }

    /// Undistorted pinhole projection; `None` at or behind the focal plane.
    pub fn project_pinhole(&self, p: &Vector3<f64>) -> Option<Pixel> {
        if !(p.z > 0.0) {
            return None;
        }
        Some(Pixel::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Raw (fisheye-warped) pixel regardless of image bounds.
    pub fn project_unbounded(&self, p: &Vector3<f64>) -> Option<Pixel> {
        self.project_pinhole(p).map(|ideal| self.distort_pixel(&ideal))
    }

    /// Raw pixel of a camera-frame point, `None` when out of view.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Pixel> {
        self.project_unbounded(p).filter(|px| self.in_image(px))
    }

    /// Pinhole pixel -> raw fisheye pixel.
    pub fn distort_pixel(&self, ideal: &Pixel) -> Pixel {
        if self.k_fish == 0.0 {
            return *ideal;
        }
        let xn = (ideal.x - self.cx) / self.fx;
        let yn = (ideal.y - self.cy) / self.fy;
        let r = xn.hypot(yn);
        if r < 1e-15 {
            return *ideal;
        }
        let s = warp_radius(r, self.k_fish) / r;
        Pixel::new(self.fx * xn * s + self.cx, self.fy * yn * s + self.cy)
    }

    /// Raw fisheye pixel -> pinhole pixel; exact inverse of [`Self::distort_pixel`].
    pub fn undistort_pixel(&self, raw: &Pixel) -> Pixel {
        if self.k_fish == 0.0 {
            return *raw;
        }
        let xd = (raw.x - self.cx) / self.fx;
        let yd = (raw.y - self.cy) / self.fy;
        let rd = xd.hypot(yd);
        if rd < 1e-15 {
            return *raw;
        }
        let s = unwarp_radius(rd, self.k_fish) / rd;
        Pixel::new(self.fx * xd * s + self.cx, self.fy * yd * s + self.cy)
    }

    /// Unit camera-frame ray through an undistorted pixel.
    pub fn bearing_from_pixel(&self, ideal: &Pixel) -> Vector3<f64> {
        Vector3::new(
            (ideal.x - self.cx) / self.fx,
            (ideal.y - self.cy) / self.fy,
            1.0,
        )
        .normalize()
    }

    /// Unit camera-frame ray through a raw image pixel.
    pub fn bearing_from_raw_pixel(&self, raw: &Pixel) -> Vector3<f64> {
        self.bearing_from_pixel(&self.undistort_pixel(raw))
    }

    /// Camera -> earth rotation for a given body attitude.
    pub fn camera_to_earth(&self, att: &Attitude) -> Matrix3<f64> {
        att.body_to_earth() * self.r_cb
    }
}

/// Rotate a camera-frame bearing into the earth frame.
pub fn bearing_to_earth(v_cam: &Vector3<f64>, att: &Attitude, cam: &CameraModel) -> Vector3<f64> {
    cam.camera_to_earth(att) * v_cam
}

/// Normalized radius after the fisheye blend: `(1-k) r + k atan(r)`.
fn warp_radius(r: f64, k: f64) -> f64 {
    (1.0 - k) * r + k * r.atan()
}

/// Inverse of [`warp_radius`] by safeguarded Newton iteration.
fn unwarp_radius(rd: f64, k: f64) -> f64 {
    // warp(r) >= (1-k) r, so the root lies in [0, rd / (1-k)]
    let (mut lo, mut hi) = (0.0, rd / (1.0 - k));
    let mut r = rd;
    for _ in 0..100 {
        let g = warp_radius(r, k) - rd;
        if g > 0.0 {
            hi = r;
        } else {
            lo = r;
        }
        let dg = (1.0 - k) + k / (1.0 + r * r);
        let mut next = r - g / dg;
        if !(next >= lo && next <= hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - r).abs();
        r = next;
        if step <= UNDISTORT_TOL * 1e-3 * r.max(1.0) {
            break;
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn spec_cam() -> CameraModel {
        CameraModel::pinhole(120.0, 120.0, 80.0, 175.0, 160, 350)
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = spec_cam();
        let px = cam.project(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, Pixel::new(80.0, 175.0));
    }

    #[test]
    fn unit_tangent_offset() {
        let cam = CameraModel::pinhole(100.0, 100.0, 80.0, 175.0, 400, 350);
        let px = cam.project(&Vector3::new(1.0, 0.0, 1.0)).unwrap();
        assert_eq!(px.x, 180.0);
    }

    #[test]
    fn hand_evaluated_projection() {
        // u = 120 * 0.4 / 2 + 80 = 104, v = 120 * -0.2 / 2 + 175 = 163
        let px = spec_cam()
            .project(&Vector3::new(0.4, -0.2, 2.0))
            .unwrap();
        assert!((px.x - 104.0).abs() < 1e-12);
        assert!((px.y - 163.0).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_and_out_of_view() {
        let cam = spec_cam();
        assert!(cam.project(&Vector3::new(0.0, 0.0, 0.0)).is_none());
        assert!(cam.project(&Vector3::new(0.0, 0.0, -1.0)).is_none());
        assert!(cam.project(&Vector3::new(5.0, 0.0, 1.0)).is_none());
    }

    #[test]
    fn undistort_fixed_points() {
        let mut cam = CameraModel::default();
        let c = Pixel::new(cam.cx, cam.cy);
        assert_eq!(cam.undistort_pixel(&c), c);
        cam.k_fish = 0.0;
        let p = Pixel::new(13.0, 300.5);
        assert_eq!(cam.undistort_pixel(&p), p);
    }

    #[test]
    fn undistort_round_trip_grid() {
        let mut cam = CameraModel::default();
        cam.k_fish = 0.4;
        for i in 0..3 {
            for j in 0..3 {
                let p = Vector3::new(-0.6 + 0.6 * i as f64, -1.2 + 1.2 * j as f64, 1.0);
                let raw = cam.project_unbounded(&p).unwrap();
                let ideal = cam.project_pinhole(&p).unwrap();
                assert!((cam.undistort_pixel(&raw) - ideal).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn bearing_examples() {
        let cam = spec_cam();
        let b = cam.bearing_from_pixel(&Pixel::new(80.0, 175.0));
        assert_eq!(b, Vector3::new(0.0, 0.0, 1.0));
        let b = cam.bearing_from_pixel(&Pixel::new(80.0 + 120.0, 175.0));
        let s = 0.5f64.sqrt();
        assert!((b - Vector3::new(s, 0.0, s)).norm() < 1e-15);
    }

    #[test]
    fn bearing_to_earth_identity() {
        let mut cam = spec_cam();
        cam.r_cb = Matrix3::identity();
        let v = Vector3::new(0.3, -0.4, 0.5).normalize();
        assert!((bearing_to_earth(&v, &Attitude::LEVEL, &cam) - v).norm() < 1e-15);
    }

    #[test]
    fn bearing_to_earth_yaw_quarter_turn() {
        // camera z -> body x, then yaw pi/2 takes body x to earth y
        let cam = spec_cam();
        let att = Attitude::new(0.0, 0.0, FRAC_PI_2);
        let e = bearing_to_earth(&Vector3::new(0.0, 0.0, 1.0), &att, &cam);
        assert!((e - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn default_camera_is_valid() {
        assert!(CameraModel::default().violations().is_empty());
        let bad = CameraModel {
            fx: -1.0,
            k_fish: 1.5,
            ..CameraModel::default()
        };
        assert_eq!(bad.violations().len(), 2);
    }
}
