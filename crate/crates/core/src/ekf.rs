//! Drag-model extended Kalman filter.
//!
//! State `[x, y, z, v_z, b_x, b_y, b_z]` in the earth frame (position) and
//! body frame (vertical velocity, accelerometer biases). Under linear drag
//! the horizontal accelerometer channels measure body velocity directly,
//! `v = (a_m - b) / k`, so they enter the process model as inputs.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, SMatrix, SVector, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::Attitude;
use crate::{Error, Result, GRAVITY};

pub type StateVec = SVector<f64, 7>;
pub type Cov = SMatrix<f64, 7, 7>;
type Obs = SMatrix<f64, 3, 7>;

#[derive(Debug, Clone, PartialEq)]
pub struct NavState {
    pub x: StateVec,
    pub p: Cov,
}

impl NavState {
    pub fn new(x: StateVec, p: Cov) -> Self {
        Self { x, p }
    }

    pub fn position(&self) -> Vector3<f64> {
        self.x.fixed_rows::<3>(0).into()
    }

    pub fn vz(&self) -> f64 {
        self.x[3]
    }

    pub fn bias(&self) -> Vector3<f64> {
        self.x.fixed_rows::<3>(4).into()
    }

    /// Symmetric to `tol` and smallest eigenvalue above `-tol`.
    pub fn covariance_ok(&self, tol: f64) -> bool {
        if (self.p - self.p.transpose()).amax() >= tol {
            return false;
        }
        SymmetricEigen::new(self.p).eigenvalues.min() > -tol
    }
}

/// Attitude from the AHRS, specific force, and roll/pitch rates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImuInput {
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
    pub p: f64,
    pub q: f64,
}

impl ImuInput {
    pub fn attitude(&self) -> Attitude {
        Attitude {
            phi: self.phi,
            theta: self.theta,
            psi: self.psi,
        }
    }

    /// Level hover reading: specific force `-g` along body z.
    pub fn hover() -> Self {
        Self {
            az: -GRAVITY,
            ..Self::default()
        }
    }
}

/// Linear drag coefficients (1/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DragParams {
    pub kx: f64,
    pub ky: f64,
    /// Vertical drag, used by the simulator only.
    pub kz: f64,
}

impl Default for DragParams {
    fn default() -> Self {
        // terminal speed of 1.5 m/s at 5 degrees of pitch
        let k = -GRAVITY * 5f64.to_radians().sin() / 1.5;
        Self {
            kx: k,
            ky: k,
            kz: -0.3,
        }
    }
}

impl DragParams {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.kx < 0.0) {
            out.push(format!("drag.kx must be < 0 (got {})", self.kx));
        }
        if !(self.ky < 0.0) {
            out.push(format!("drag.ky must be < 0 (got {})", self.ky));
        }
        if !(self.kz <= 0.0) {
            out.push(format!("drag.kz must be <= 0 (got {})", self.kz));
        }
        out
    }
}

/// Process and measurement noise plus the initial covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EkfTuning {
    pub q_pos: f64,
    pub q_vz: f64,
    pub q_bias: f64,
    /// Position measurement variance per axis (m^2).
    pub r_pos: f64,
    pub p0_pos: f64,
    pub p0_vz: f64,
    pub p0_bias: f64,
}

impl Default for EkfTuning {
    fn default() -> Self {
        Self {
            q_pos: 1e-6,
            q_vz: 1e-3,
            q_bias: 1e-8,
            r_pos: 0.05 * 0.05,
            p0_pos: 1.0,
            p0_vz: 0.25,
            p0_bias: 0.1,
        }
    }
}

fn diag7(pos: f64, vz: f64, bias: f64) -> Cov {
    Cov::from_diagonal(&StateVec::from_column_slice(&[pos, pos, pos, vz, bias, bias, bias]))
}

impl EkfTuning {
    pub fn q(&self) -> Cov {
        diag7(self.q_pos, self.q_vz, self.q_bias)
    }

    pub fn r(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal_element(self.r_pos)
    }

    pub fn p0(&self) -> Cov {
        diag7(self.p0_pos, self.p0_vz, self.p0_bias)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("q_pos", self.q_pos),
            ("q_vz", self.q_vz),
            ("q_bias", self.q_bias),
            ("p0_pos", self.p0_pos),
            ("p0_vz", self.p0_vz),
            ("p0_bias", self.p0_bias),
        ] {
            if !(v >= 0.0) {
                out.push(format!("ekf.{name} must be >= 0 (got {v})"));
            }
        }
        if !(self.r_pos > 0.0) {
            out.push(format!("ekf.r_pos must be > 0 (got {})", self.r_pos));
        }
        out
    }
}

fn body_velocity(x: &StateVec, u: &ImuInput, drag: &DragParams) -> Vector3<f64> {
    Vector3::new((u.ax - x[4]) / drag.kx, (u.ay - x[5]) / drag.ky, x[3])
}

pub fn process_derivative(x: &StateVec, u: &ImuInput, drag: &DragParams) -> StateVec {
    let v = body_velocity(x, u, drag);
    let pos_rate = u.attitude().body_to_earth() * v;
    let vz_rate =
        u.az - x[6] + GRAVITY * u.theta.cos() * u.phi.cos() + u.q * v.x - u.p * v.y;
    StateVec::from_column_slice(&[pos_rate.x, pos_rate.y, pos_rate.z, vz_rate, 0.0, 0.0, 0.0])
}

pub fn jacobian_f(_x: &StateVec, u: &ImuInput, drag: &DragParams) -> Cov {
    let r = u.attitude().body_to_earth();
    let mut f = Cov::zeros();
    for i in 0..3 {
        f[(i, 3)] = r[(i, 2)];
        f[(i, 4)] = -r[(i, 0)] / drag.kx;
        f[(i, 5)] = -r[(i, 1)] / drag.ky;
    }
    f[(3, 4)] = -u.q / drag.kx;
    f[(3, 5)] = u.p / drag.ky;
    f[(3, 6)] = -1.0;
    f
}

/// Forward-Euler prediction over `dt`.
pub fn predict(s: &NavState, u: &ImuInput, dt: f64, q: &Cov, drag: &DragParams) -> NavState {
    let f = jacobian_f(&s.x, u, drag);
    let x = s.x + process_derivative(&s.x, u, drag) * dt;
    let phi = Cov::identity() + f * dt;
    let p = phi * s.p * phi.transpose() + q;
    NavState {
        x,
        p: 0.5 * (p + p.transpose()),
    }
}

fn observation() -> Obs {
    let mut h = Obs::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
    h
}

/// Position measurement update with a Joseph-form covariance.
pub fn update(s: &NavState, z: &Vector3<f64>, r: &Matrix3<f64>) -> Result<NavState> {
    let h = observation();
    let innov_cov = h * s.p * h.transpose() + r;
    let eig = SymmetricEigen::new(innov_cov).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition < 1e12) {
        return Err(Error::SingularInnovation { condition });
    }
    let inv = innov_cov
        .try_inverse()
        .ok_or(Error::SingularInnovation { condition })?;
    let k = s.p * h.transpose() * inv;
    let x = s.x + k * (z - h * s.x);
    let a = Cov::identity() - k * h;
    let p = a * s.p * a.transpose() + k * r * k.transpose();
    Ok(NavState {
        x,
        p: 0.5 * (p + p.transpose()),
    })
}

/// Filter bundled with its tuning and drag model.
#[derive(Debug, Clone)]
pub struct Ekf {
    pub state: NavState,
    pub drag: DragParams,
    q: Cov,
    r: Matrix3<f64>,
}

/// Largest single prediction step; longer intervals are subdivided.
pub const MAX_PREDICT_DT: f64 = 0.1;

impl Ekf {
    pub fn new(position: Vector3<f64>, tuning: &EkfTuning, drag: DragParams) -> Self {
        let mut x = StateVec::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&position);
        Self {
            state: NavState::new(x, tuning.p0()),
            drag,
            q: tuning.q(),
            r: tuning.r(),
        }
    }

    pub fn predict(&mut self, u: &ImuInput, dt: f64) {
        let n = (dt / MAX_PREDICT_DT).ceil().max(1.0) as usize;
        for _ in 0..n {
            self.state = predict(&self.state, u, dt / n as f64, &self.q, &self.drag);
        }
    }

    /// Update with the default measurement noise; returns the position correction.
    pub fn update(&mut self, z: &Vector3<f64>) -> Result<Vector3<f64>> {
        let r = self.r;
        self.update_with(z, &r)
    }

    pub fn update_with(&mut self, z: &Vector3<f64>, r: &Matrix3<f64>) -> Result<Vector3<f64>> {
        let before = self.state.position();
        self.state = update(&self.state, z, r)?;
        Ok(self.state.position() - before)
    }
}

/// One row of a replay log.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRow {
    pub t: f64,
    pub imu: ImuInput,
    pub z: Option<Vector3<f64>>,
}

pub const REPLAY_OUT_HEADER: &str = "t,x,y,z,vz,bax,bay,baz,P_trace";

pub fn parse_replay<R: Read>(reader: R, path: &Path) -> Result<Vec<ReplayRow>> {
    let perr = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| perr(e.to_string()))?.clone();
    let expected = ["t", "phi", "theta", "psi", "ax", "ay", "az", "p", "q"];
    if headers.len() < 9 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(perr(format!(
            "header must start with {}",
            expected.join(",")
        )));
    }
    let has_z = headers.len() >= 12;
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| perr(e.to_string()))?;
        let line = n + 2;
        let num = |i: usize| -> Result<Option<f64>> {
            match rec.get(i) {
                None | Some("") => Ok(None),
                Some(s) => s
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|_| perr(format!("line {line}: bad number `{s}` in column {}", i + 1))),
            }
        };
        let mut v = [0.0; 9];
        for (i, slot) in v.iter_mut().enumerate() {
            *slot = num(i)?.ok_or_else(|| perr(format!("line {line}: missing column {}", i + 1)))?;
        }
        let z = if has_z {
            match (num(9)?, num(10)?, num(11)?) {
                (Some(a), Some(b), Some(c)) => Some(Vector3::new(a, b, c)),
                (None, None, None) => None,
                _ => return Err(perr(format!("line {line}: partial measurement"))),
            }
        } else {
            None
        };
        if rows.last().is_some_and(|r: &ReplayRow| v[0] < r.t) {
            return Err(perr(format!("line {line}: timestamps must be non-decreasing")));
        }
        rows.push(ReplayRow {
            t: v[0],
            imu: ImuInput {
                phi: v[1],
                theta: v[2],
                psi: v[3],
                ax: v[4],
                ay: v[5],
                az: v[6],
                p: v[7],
                q: v[8],
            },
            z,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutput {
    pub t: f64,
    pub x: StateVec,
    pub p_trace: f64,
}

/// Correction applied by the first update after the longest measurement gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapJump {
    pub t: f64,
    pub gap: f64,
    pub jump: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayResult {
    pub rows: Vec<ReplayOutput>,
    pub updates: usize,
    pub largest_gap: Option<GapJump>,
}

/// Run the filter over a log: predict to each row's timestamp, then apply
/// the row's measurement if present. The first measurement seeds position.
pub fn replay(rows: &[ReplayRow], tuning: &EkfTuning, drag: DragParams) -> Result<ReplayResult> {
    let start = rows.iter().find_map(|r| r.z).unwrap_or_else(Vector3::zeros);
    let mut ekf = Ekf::new(start, tuning, drag);
    let mut out = Vec::with_capacity(rows.len());
    let mut prev_t: Option<f64> = None;
    let mut last_fix: Option<f64> = None;
    let mut updates = 0;
    let mut largest: Option<GapJump> = None;
    for row in rows {
        if let Some(t0) = prev_t {
            let dt = row.t - t0;
            if dt > 0.0 {
                ekf.predict(&row.imu, dt);
            }
        }
        prev_t = Some(row.t);
        if let Some(z) = row.z {
            let jump = ekf.update(&z)?.norm();
            updates += 1;
            if let Some(tf) = last_fix {
                let gap = row.t - tf;
                if largest.is_none_or(|g| gap > g.gap) {
                    largest = Some(GapJump { t: row.t, gap, jump });
                }
            }
            last_fix = Some(row.t);
        }
        out.push(ReplayOutput {
            t: row.t,
            x: ekf.state.x,
            p_trace: ekf.state.p.trace(),
        });
    }
    Ok(ReplayResult {
        rows: out,
        updates,
        largest_gap: largest,
    })
}

pub fn write_replay_csv<W: Write>(rows: &[ReplayOutput], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{REPLAY_OUT_HEADER}")?;
    for r in rows {
        write!(w, "{:.4}", r.t)?;
        for v in r.x.iter() {
            write!(w, ",{v:.6}")?;
        }
        writeln!(w, ",{:.6e}", r.p_trace)?;
    }
    Ok(())
}
