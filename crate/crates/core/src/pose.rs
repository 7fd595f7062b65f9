//! Camera position from detected gate corners.
//!
//! The primary estimator intersects the four corner bearing rays in a least
//! squares sense using the attitude reported by the autopilot. A homography
//! PnP solver without any attitude prior serves as the baseline, and the
//! two-bar histogram geometry covers the close range where only the side
//! bars of the gate are visible.

use std::fmt;
use std::io::Write;

use nalgebra::{Matrix3, SMatrix, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{bearing_to_earth, Attitude, CameraModel, Pixel};
use crate::error::{Error, Result};

/// Known gate placement. Corners are the bar centerline corners in the order
/// top-left, top-right, bottom-left, bottom-right as seen when flying
/// through along `normal()`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateGeometry {
    pub corners: [Vector3<f64>; 4],
    pub side: f64,
}

impl GateGeometry {
    pub fn from_placement(center: Vector3<f64>, yaw: f64, side: f64) -> Self {
        let right = Vector3::new(-yaw.sin(), yaw.cos(), 0.0);
        let down = Vector3::z();
        let h = 0.5 * side;
        Self {
            corners: [
                center - right * h - down * h,
                center + right * h - down * h,
                center - right * h + down * h,
                center + right * h + down * h,
            ],
            side,
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        self.corners.iter().sum::<Vector3<f64>>() / 4.0
    }

    /// Unit vector along the top bar, left to right.
    pub fn right(&self) -> Vector3<f64> {
        (self.corners[1] - self.corners[0]).normalize()
    }

    /// Unit vector along the left bar, top to bottom.
    pub fn down(&self) -> Vector3<f64> {
        (self.corners[2] - self.corners[0]).normalize()
    }

    /// Pass-through direction.
    pub fn normal(&self) -> Vector3<f64> {
        self.right().cross(&self.down())
    }

    pub fn yaw(&self) -> f64 {
        let n = self.normal();
        n.y.atan2(n.x)
    }

    /// Gate -> earth rotation with columns (right, down, normal).
    pub fn frame(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.right(), self.down(), self.normal()])
    }

    /// Earth point expressed in the gate-local frame (x along the normal,
    /// y to the right, z down), origin at the gate center.
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = p - self.center();
        Vector3::new(d.dot(&self.normal()), d.dot(&self.right()), d.dot(&self.down()))
    }

    pub fn from_local(&self, l: &Vector3<f64>) -> Vector3<f64> {
        self.center() + self.normal() * l.x + self.right() * l.y + self.down() * l.z
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.normal();
        let c = self.corners[0];
        if self.corners.iter().any(|p| (p - c).dot(&n).abs() > 1e-9) {
            out.push("gate corners are not coplanar".into());
        }
        let sides = [(0, 1), (1, 3), (3, 2), (2, 0)];
        if sides
            .iter()
            .any(|&(i, j)| ((self.corners[i] - self.corners[j]).norm() - self.side).abs() > 1e-9)
        {
            out.push("gate side lengths differ from the declared side".into());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseMethod {
    LeastSquares,
    Pnp,
    Histogram,
}

impl fmt::Display for PoseMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoseMethod::LeastSquares => "LS",
            PoseMethod::Pnp => "PnP",
            PoseMethod::Histogram => "histogram",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    /// Camera position, earth frame.
    pub t: Vector3<f64>,
    /// Mean perpendicular distance from `t` to the corner rays.
    pub residual: f64,
    pub method: PoseMethod,
    /// Body -> earth rotation, recovered only by PnP.
    pub rotation: Option<Matrix3<f64>>,
}

/// Perpendicular distance from `t` to the line through `p` along unit `v`.
pub fn point_line_distance(t: &Vector3<f64>, p: &Vector3<f64>, v: &Vector3<f64>) -> f64 {
    let d = p - t;
    (d - v * d.dot(v)).norm()
}

/// Point minimizing the weighted sum of squared distances to the rays.
fn intersect_rays(
    anchors: &[Vector3<f64>],
    dirs: &[Vector3<f64>],
    weights: &[f64],
) -> Result<Vector3<f64>> {
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for ((p, v), w) in anchors.iter().zip(dirs).zip(weights) {
        let proj = (Matrix3::identity() - v * v.transpose()) * *w;
        a += proj;
        b += proj * p;
    }
    // all-parallel rays leave the system rank deficient
    let parallel = dirs
        .iter()
        .all(|v| v.cross(&dirs[0]).norm() < 1e-12);
    if parallel {
        return Err(Error::DegenerateGeometry(
            "all corner rays are parallel".into(),
        ));
    }
    a.lu()
        .solve(&b)
        .ok_or_else(|| Error::DegenerateGeometry("ray system is singular".into()))
}

fn corner_rays(
    corners_px: &[Pixel; 4],
    att: &Attitude,
    cam: &CameraModel,
) -> [Vector3<f64>; 4] {
    corners_px.map(|px| bearing_to_earth(&cam.bearing_from_pixel(&px), att, cam))
}

/// Least-squares intersection of the four corner bearing rays.
///
/// `corners_px` are undistorted pixels ordered like [`GateGeometry::corners`].
pub fn ls_position(
    corners_px: &[Pixel; 4],
    gate: &GateGeometry,
    att: &Attitude,
    cam: &CameraModel,
) -> Result<PoseEstimate> {
    let dirs = corner_rays(corners_px, att, cam);
    let t = intersect_rays(&gate.corners, &dirs, &[1.0; 4])?;
    Ok(PoseEstimate {
        t,
        residual: mean_distance(&t, &gate.corners, &dirs),
        method: PoseMethod::LeastSquares,
        rotation: None,
    })
}

/// Iteratively reweighted variant approximating the sum of unsquared
/// distances, seeded with [`ls_position`].
pub fn ls_position_irls(
    corners_px: &[Pixel; 4],
    gate: &GateGeometry,
    att: &Attitude,
    cam: &CameraModel,
    iterations: usize,
) -> Result<PoseEstimate> {
    let dirs = corner_rays(corners_px, att, cam);
    let mut t = intersect_rays(&gate.corners, &dirs, &[1.0; 4])?;
    for _ in 0..iterations {
        let w: Vec<f64> = gate
            .corners
            .iter()
            .zip(&dirs)
            .map(|(p, v)| 1.0 / point_line_distance(&t, p, v).max(1e-9))
            .collect();
        t = intersect_rays(&gate.corners, &dirs, &w)?;
    }
    Ok(PoseEstimate {
        t,
        residual: mean_distance(&t, &gate.corners, &dirs),
        method: PoseMethod::LeastSquares,
        rotation: None,
    })
}

fn mean_distance(t: &Vector3<f64>, anchors: &[Vector3<f64>; 4], dirs: &[Vector3<f64>; 4]) -> f64 {
    anchors
        .iter()
        .zip(dirs)
        .map(|(p, v)| point_line_distance(t, p, v))
        .sum::<f64>()
        / 4.0
}

/// Planar homography from gate-plane coordinates to normalized image
/// coordinates by direct linear transform.
fn plane_homography(plane: &[(f64, f64); 4], image: &[(f64, f64); 4]) -> Result<Matrix3<f64>> {
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for (k, (&(x, y), &(u, v))) in plane.iter().zip(image).enumerate() {
        let r = 2 * k;
        a.row_mut(r)
            .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, -v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (mut imin, mut smin) = (0, f64::INFINITY);
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s < smin {
            smin = *s;
            imin = i;
        }
    }
    // the padding row contributes one zero singular value; a second one means
    // the correspondences do not pin the homography down
    let mut sorted: Vec<f64> = svd.singular_values.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let smax = sorted[8];
    if sorted[1] <= 1e-10 * smax {
        return Err(Error::DegenerateGeometry(
            "rank-deficient corner correspondences".into(),
        ));
    }
    let h = v_t.row(imin);
    Ok(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]))
}

fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Attitude-free PnP baseline: homography DLT decomposed against the
/// intrinsics, with the gate required in front of the camera.
pub fn pnp_position(
    corners_px: &[Pixel; 4],
    gate: &GateGeometry,
    cam: &CameraModel,
) -> Result<PoseEstimate> {
    let h = 0.5 * gate.side;
    let plane = [(-h, -h), (h, -h), (-h, h), (h, h)];
    let image = corners_px.map(|p| ((p.x - cam.cx) / cam.fx, (p.y - cam.cy) / cam.fy));
    let hom = plane_homography(&plane, &image)?;

    let h1 = hom.column(0).into_owned();
    let h2 = hom.column(1).into_owned();
    let h3 = hom.column(2).into_owned();
    let norm = 0.5 * (h1.norm() + h2.norm());
    if !(norm > 1e-12) {
        return Err(Error::DegenerateGeometry("homography has no scale".into()));
    }
    let mut lambda = 1.0 / norm;
    if (h3 * lambda).z < 0.0 {
        lambda = -lambda;
    }
    let r1 = h1 * lambda;
    let r2 = h2 * lambda;
    let t_gc = h3 * lambda;
    // gate frame -> camera frame
    let r_gc = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]));

    let cam_in_gate = -(r_gc.transpose() * t_gc);
    let g = gate.frame();
    let t = gate.center() + g * cam_in_gate;
    let r_ce = g * r_gc.transpose();
    let r_be = r_ce * cam.r_cb.transpose();

    let dirs = corners_px.map(|px| r_ce * cam.bearing_from_pixel(&px));
    Ok(PoseEstimate {
        t,
        residual: mean_distance(&t, &gate.corners, &dirs),
        method: PoseMethod::Pnp,
        rotation: Some(r_be),
    })
}

/// Two-bar geometry: bearing angles to the right (`alpha1`) and left
/// (`alpha2`) bars, each measured from the gate normal toward its own bar.
/// Returns `(x_h, y_h)`: distance in front of the gate plane and lateral
/// offset (right positive) from the gate center.
pub fn histogram_geometry(alpha1: f64, alpha2: f64, side: f64) -> Result<(f64, f64)> {
    let spread = alpha1 + alpha2;
    if !(spread > 0.0) {
        return Err(Error::DegenerateGeometry(format!(
            "bar bearings cross (alpha1 + alpha2 = {spread:.4} rad)"
        )));
    }
    let gamma = std::f64::consts::FRAC_PI_2 - alpha2;
    let r1 = side * gamma.sin() / spread.sin();
    Ok((r1 * alpha1.cos(), 0.5 * side - r1 * alpha1.sin()))
}

/// Close-range position from the image columns of the two side bars.
///
/// `att` is the attitude relative to the gate-local frame, so `att.psi` is the
/// heading relative to the gate normal. Columns are undistorted pixels.
pub fn histogram_position(
    u_left: f64,
    u_right: f64,
    att: &Attitude,
    cam: &CameraModel,
    side: f64,
) -> Result<(f64, f64)> {
    if !(u_left < u_right) {
        return Err(Error::DegenerateGeometry(format!(
            "left bar column {u_left:.1} is not left of right bar column {u_right:.1}"
        )));
    }
    let azimuth = |u: f64| {
        let v = bearing_to_earth(&cam.bearing_from_pixel(&Pixel::new(u, cam.cy)), att, cam);
        v.y.atan2(v.x)
    };
    histogram_geometry(azimuth(u_right), -azimuth(u_left), side)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseBenchConfig {
    pub distances: Vec<f64>,
    pub pixel_noise: f64,
    pub attitude_noise_deg: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub gate_side: f64,
    /// Detections are synthesized as ideal pixels, so the lens warp is irrelevant.
    #[serde(skip)]
    pub camera: CameraModel,
}

impl PoseBenchConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.distances.is_empty() || self.distances.iter().any(|d| !(*d > 0.0)) {
            out.push("pose_bench.distances must be a non-empty list of positive values".into());
        }
        if !(self.pixel_noise >= 0.0) {
            out.push("pose_bench.pixel_noise must be >= 0".into());
        }
        if self.attitude_noise_deg.iter().any(|a| !(*a >= 0.0)) {
            out.push("pose_bench.attitude_noise_deg values must be >= 0".into());
        }
        if self.trials == 0 {
            out.push("pose_bench.trials must be >= 1".into());
        }
        if !(self.gate_side > 0.0) {
            out.push("pose_bench.gate_side must be > 0".into());
        }
        out
    }
}

impl Default for PoseBenchConfig {
    fn default() -> Self {
        Self {
            distances: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            pixel_noise: 3.5,
            attitude_noise_deg: vec![0.0, 5.0, 15.0],
            trials: 1000,
            seed: 0,
            gate_side: 1.0,
            camera: CameraModel {
                k_fish: 0.0,
                ..CameraModel::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: PoseMethod,
    pub distance: f64,
    pub att_noise_deg: f64,
    pub rmse: f64,
    /// Trials where the estimator reported degenerate geometry.
    pub failures: usize,
}

fn rmse(errs: &[f64]) -> f64 {
    if errs.is_empty() {
        return f64::NAN;
    }
    (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt()
}

/// Monte-Carlo comparison of LS and PnP position accuracy. The camera sits
/// on the gate axis facing the gate; pixel noise is shared between methods
/// and across attitude-noise levels at each distance.
pub fn pose_noise_benchmark(cfg: &PoseBenchConfig) -> Vec<BenchRow> {
    let gate = GateGeometry::from_placement(Vector3::zeros(), 0.0, cfg.gate_side);
    let att = Attitude::LEVEL;
    let r_ec = cfg.camera.camera_to_earth(&att).transpose();
    let px_noise = Normal::new(0.0, cfg.pixel_noise.max(0.0)).expect("finite noise");
    let mut rows = Vec::new();

    for (di, &d) in cfg.distances.iter().enumerate() {
        let truth = Vector3::new(-d, 0.0, 0.0);
        let clean = gate
            .corners
            .map(|p| cfg.camera.project_pinhole(&(r_ec * (p - truth))).expect("gate in front"));
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(di as u64 * 1000);
        let noisy: Vec<[Pixel; 4]> = (0..cfg.trials)
            .map(|_| {
                clean.map(|p| {
                    Pixel::new(p.x + px_noise.sample(&mut rng), p.y + px_noise.sample(&mut rng))
                })
            })
            .collect();

        let mut pnp_errs = Vec::with_capacity(cfg.trials);
        let mut pnp_fail = 0;
        for c in &noisy {
            match pnp_position(c, &gate, &cfg.camera) {
                Ok(est) => pnp_errs.push((est.t - truth).norm()),
                Err(_) => pnp_fail += 1,
            }
        }

        for (ai, &a_deg) in cfg.attitude_noise_deg.iter().enumerate() {
            let mut arng = ChaCha8Rng::seed_from_u64(cfg.seed);
            arng.set_stream(di as u64 * 1000 + 1 + ai as u64);
            let att_noise = Normal::new(0.0, a_deg.to_radians()).expect("finite noise");
            let mut errs = Vec::with_capacity(cfg.trials);
            let mut fail = 0;
            for c in &noisy {
                let noisy_att = Attitude::new(
                    att.phi + att_noise.sample(&mut arng),
                    att.theta + att_noise.sample(&mut arng),
                    att.psi + att_noise.sample(&mut arng),
                );
                match ls_position(c, &gate, &noisy_att, &cfg.camera) {
                    Ok(est) => errs.push((est.t - truth).norm()),
                    Err(_) => fail += 1,
                }
            }
            rows.push(BenchRow {
                method: PoseMethod::LeastSquares,
                distance: d,
                att_noise_deg: a_deg,
                rmse: rmse(&errs),
                failures: fail,
            });
            rows.push(BenchRow {
                method: PoseMethod::Pnp,
                distance: d,
                att_noise_deg: a_deg,
                rmse: rmse(&pnp_errs),
                failures: pnp_fail,
            });
        }
    }
    rows
}

pub const BENCH_CSV_HEADER: &str = "method,distance_m,att_noise_deg,rmse_m";

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{BENCH_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.9}",
            r.method, r.distance, r.att_noise_deg, r.rmse
        )?;
    }
    Ok(())
}
