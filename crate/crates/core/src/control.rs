//! Outer-loop control: PD gate alignment on straights, feed-forward
//! coordinated arcs, and the planar pass-through feasibility study.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, GRAVITY};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YawCmd {
    /// Absolute heading (rad).
    Angle(f64),
    /// Heading rate (rad/s).
    Rate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttitudeCmd {
    pub phi: f64,
    pub theta: f64,
    pub yaw: YawCmd,
    /// Specific thrust along body z (m/s^2); hover is `-g`.
    pub thrust: f64,
}

impl AttitudeCmd {
    pub fn hover(psi: f64) -> Self {
        Self {
            phi: 0.0,
            theta: 0.0,
            yaw: YawCmd::Angle(psi),
            thrust: -GRAVITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnDirection {
    Left,
    Right,
}

impl TurnDirection {
    /// +1 for a right (clockwise seen from above) turn in NED.
    pub fn sign(self) -> f64 {
        match self {
            TurnDirection::Left => -1.0,
            TurnDirection::Right => 1.0,
        }
    }
}

/// Arc quantities in the body-fixed earth frame F (level, yawed with the vehicle).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcState {
    pub vx: f64,
    /// Drag accelerations along F's y and z axes (m/s^2).
    pub ay: f64,
    pub az: f64,
    pub radius: f64,
    pub direction: TurnDirection,
    pub elapsed: f64,
}

/// Thrust holding altitude for a given tilt, with an extra vertical
/// acceleration demand `az_extra` (NED, m/s^2).
pub fn level_thrust(phi: f64, theta: f64, az_extra: f64) -> f64 {
    (az_extra - GRAVITY) / (theta.cos() * phi.cos())
}

/// PD alignment with the gate center line: `phi = -k_p y - k_d y_dot`.
pub fn straight_command(
    y_hat: f64,
    y_dot_hat: f64,
    k_p: f64,
    k_d: f64,
    theta_0: f64,
    gate_heading: f64,
    max_tilt: f64,
) -> AttitudeCmd {
    let phi = (-k_p * y_hat - k_d * y_dot_hat).clamp(-max_tilt, max_tilt);
    let theta = theta_0.clamp(-max_tilt, max_tilt);
    AttitudeCmd {
        phi,
        theta,
        yaw: YawCmd::Angle(gate_heading),
        thrust: level_thrust(phi, theta, 0.0),
    }
}

/// Feed-forward coordinated turn with altitude-holding thrust.
pub fn arc_command(arc: &ArcState, theta_0: f64, g: f64, max_tilt: f64) -> Result<AttitudeCmd> {
    let denom = -g - arc.az;
    if denom.abs() < 1e-9 {
        return Err(Error::FreeFall(denom));
    }
    let s = arc.direction.sign();
    let theta = theta_0.clamp(-max_tilt, max_tilt);
    let centripetal = s * arc.vx * arc.vx / arc.radius;
    let phi = ((arc.ay - centripetal) * theta.cos() / denom)
        .atan()
        .clamp(-max_tilt, max_tilt);
    Ok(AttitudeCmd {
        phi,
        theta,
        yaw: YawCmd::Rate(s * arc.vx / arc.radius),
        thrust: denom / (theta.cos() * phi.cos()),
    })
}

/// Planar state `(x, y, v_y)` for the feasibility model.
pub type PlanarState = [f64; 3];

/// Forward-Euler step of `x' = v_x, y' = v_y, v_y' = g tan(phi) + k_y v_y cos^2(phi)`.
pub fn planar_step(s: PlanarState, phi: f64, vx: f64, ky: f64, dt: f64) -> PlanarState {
    let [x, y, vy] = s;
    let c = phi.cos();
    let vy_dot = GRAVITY * phi.tan() + ky * vy * c * c;
    [x + vx * dt, y + vy * dt, vy + vy_dot * dt]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeasibilityConfig {
    pub vx: f64,
    pub x0_range: [f64; 2],
    pub y0_range: [f64; 2],
    pub grid_n: usize,
    pub gate_half_width: f64,
    pub ky: f64,
    pub k_p: f64,
    pub k_v: f64,
    pub vy0: f64,
    pub dt: f64,
    pub max_tilt_deg: f64,
}

impl Default for FeasibilityConfig {
    fn default() -> Self {
        Self {
            vx: 1.5,
            x0_range: [-5.0, 0.0],
            y0_range: [-3.0, 3.0],
            grid_n: 100,
            gate_half_width: 0.5 - 0.15,
            ky: crate::ekf::DragParams::default().ky,
            k_p: 1.0,
            k_v: 2.0,
            vy0: 0.0,
            dt: 0.01,
            max_tilt_deg: 30.0,
        }
    }
}

impl FeasibilityConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.grid_n < 10 {
            out.push(format!("feasibility.grid_n must be >= 10 (got {})", self.grid_n));
        }
        if !(self.vx > 0.0) {
            out.push(format!("feasibility.vx must be > 0 (got {})", self.vx));
        }
        if !(self.x0_range[0] <= self.x0_range[1] && self.x0_range[1] <= 0.0) {
            out.push("feasibility.x0_range must be ordered and end at or before 0".into());
        }
        if !(self.y0_range[0] <= self.y0_range[1]) {
            out.push("feasibility.y0_range must be ordered".into());
        }
        if !(self.gate_half_width > 0.0) {
            out.push("feasibility.gate_half_width must be > 0".into());
        }
        if !(self.dt > 0.0) {
            out.push("feasibility.dt must be > 0".into());
        }
        out
    }

    fn axis(range: [f64; 2], n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| range[0] + (range[1] - range[0]) * i as f64 / (n - 1).max(1) as f64)
            .collect()
    }
}

/// Lateral offset where a trajectory from `(x0, y0, vy0)` crosses `x = 0`.
pub fn crossing_offset(cfg: &FeasibilityConfig, x0: f64, y0: f64, vy0: f64) -> f64 {
    let limit = cfg.max_tilt_deg.to_radians();
    let mut s = [x0, y0, vy0];
    if s[0] >= 0.0 {
        return s[1];
    }
    loop {
        let phi = (cfg.k_v * (cfg.k_p * (0.0 - s[1]) - s[2])).clamp(-limit, limit);
        let next = planar_step(s, phi, cfg.vx, cfg.ky, cfg.dt);
        if next[0] >= 0.0 {
            let f = (0.0 - s[0]) / (next[0] - s[0]);
            return s[1] + f * (next[1] - s[1]);
        }
        s = next;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `feasible[iy][ix]`.
    pub feasible: Vec<Vec<bool>>,
}

impl FeasibilityGrid {
    /// Per y-row, the largest `x0` of the feasible run that starts at the
    /// far edge of the grid; `None` when the farthest start already fails.
    pub fn boundary(&self) -> Vec<(f64, Option<f64>)> {
        self.ys
            .iter()
            .zip(&self.feasible)
            .map(|(&y, row)| {
                let run = row.iter().take_while(|f| **f).count();
                (y, (run > 0).then(|| self.xs[run - 1]))
            })
            .collect()
    }

    pub fn count(&self) -> usize {
        self.feasible.iter().flatten().filter(|f| **f).count()
    }

    /// Cells feasible here but not in `other` (same grid assumed).
    pub fn cells_outside(&self, other: &FeasibilityGrid) -> usize {
        self.feasible
            .iter()
            .flatten()
            .zip(other.feasible.iter().flatten())
            .filter(|(a, b)| **a && !**b)
            .count()
    }
}

pub fn feasibility_region(cfg: &FeasibilityConfig) -> FeasibilityGrid {
    let xs = FeasibilityConfig::axis(cfg.x0_range, cfg.grid_n);
    let ys = FeasibilityConfig::axis(cfg.y0_range, cfg.grid_n);
    let feasible = ys
        .par_iter()
        .map(|&y0| {
            xs.iter()
                .map(|&x0| crossing_offset(cfg, x0, y0, cfg.vy0).abs() <= cfg.gate_half_width)
                .collect()
        })
        .collect();
    FeasibilityGrid { xs, ys, feasible }
}

pub fn write_feasibility_csv<W: Write>(grid: &FeasibilityGrid, mut w: W) -> std::io::Result<()> {
    writeln!(w, "x0,y0,feasible")?;
    for (y, row) in grid.ys.iter().zip(&grid.feasible) {
        for (x, f) in grid.xs.iter().zip(row) {
            writeln!(w, "{x:.6},{y:.6},{}", u8::from(*f))?;
        }
    }
    Ok(())
}

pub fn write_boundary_csv<W: Write>(grid: &FeasibilityGrid, mut w: W) -> std::io::Result<()> {
    writeln!(w, "y0,x_boundary")?;
    for (y, xb) in grid.boundary() {
        match xb {
            Some(x) => writeln!(w, "{y:.6},{x:.6}")?,
            None => writeln!(w, "{y:.6},NaN")?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const LIM: f64 = 0.5235987755982988;

    #[test]
    fn straight_zero_error() {
        let c = straight_command(0.0, 0.0, 0.3, 0.2, -0.1, 0.4, LIM);
        assert_eq!(c.phi, 0.0);
        assert_eq!(c.theta, -0.1);
        assert_eq!(c.yaw, YawCmd::Angle(0.4));
    }

    #[test]
    fn straight_proportional_term() {
        let c = straight_command(1.0, 0.0, 0.3, 0.0, 0.0, 0.0, LIM);
        assert!((c.phi + 0.3).abs() < 1e-15);
        let sat = straight_command(10.0, 0.0, 0.3, 0.0, 0.0, 0.0, LIM);
        assert_eq!(sat.phi, -LIM);
    }

    fn arc(vx: f64, radius: f64, direction: TurnDirection) -> ArcState {
        ArcState {
            vx,
            ay: 0.0,
            az: 0.0,
            radius,
            direction,
            elapsed: 0.0,
        }
    }

    #[test]
    fn arc_at_rest_hovers() {
        let c = arc_command(&arc(0.0, 1.5, TurnDirection::Right), 0.0, GRAVITY, LIM).unwrap();
        assert_eq!(c.phi, 0.0);
        assert!((c.thrust + GRAVITY).abs() < 1e-12);
    }

    #[test]
    fn arc_coordinated_turn_bank() {
        let c = arc_command(&arc(1.5, 1.5, TurnDirection::Right), 0.0, GRAVITY, LIM).unwrap();
        let expected = (1.5f64 * 1.5 / 1.5 / GRAVITY).atan();
        assert!((c.phi - expected).abs() < 1e-12);
        assert!((c.phi.to_degrees() - 8.69).abs() < 0.01);
        assert_eq!(c.yaw, YawCmd::Rate(1.0));
        let l = arc_command(&arc(1.5, 1.5, TurnDirection::Left), 0.0, GRAVITY, LIM).unwrap();
        assert_eq!(l.phi, -c.phi);
        assert_eq!(l.yaw, YawCmd::Rate(-1.0));
    }

    #[test]
    fn arc_free_fall_is_rejected() {
        let mut a = arc(1.0, 1.5, TurnDirection::Right);
        a.az = -GRAVITY;
        assert!(matches!(
            arc_command(&a, 0.0, GRAVITY, LIM),
            Err(Error::FreeFall(_))
        ));
    }

    #[test]
    fn planar_step_formula() {
        assert_eq!(planar_step([0.0, 1.0, 0.0], 0.0, 1.5, -0.5, 0.01), [0.015, 1.0, 0.0]);
        let s = planar_step([0.0, 0.0, 1.0], 0.0, 1.5, -0.5, 1.0);
        assert!((s[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn planar_equilibrium_speed() {
        let (phi, ky) = (0.1f64, -0.57);
        let expected = -GRAVITY * phi.tan() / (ky * phi.cos().powi(2));
        let mut s = [0.0, 0.0, 0.0];
        for _ in 0..5000 {
            s = planar_step(s, phi, 1.0, ky, 0.01);
        }
        assert!((s[2] - expected).abs() < 1e-6 * expected.abs());
    }

    #[test]
    fn aligned_start_is_feasible() {
        let cfg = FeasibilityConfig::default();
        for x0 in [-5.0, -2.0, -0.1, 0.0] {
            assert_eq!(crossing_offset(&cfg, x0, 0.0, 0.0), 0.0);
        }
    }

    #[test]
    fn crossing_interpolates_between_steps() {
        // vy constant when y tracks nothing: zero gains, no drag
        let cfg = FeasibilityConfig {
            k_p: 0.0,
            k_v: 0.0,
            ky: 0.0,
            vx: 1.0,
            dt: 0.3,
            ..FeasibilityConfig::default()
        };
        let y = crossing_offset(&cfg, -1.0, 0.0, 0.5);
        assert!((y - 0.5).abs() < 1e-12);
    }

    #[test]
    fn boundary_uses_far_edge_run() {
        let g = FeasibilityGrid {
            xs: vec![-3.0, -2.0, -1.0, 0.0],
            ys: vec![0.0, 1.0],
            feasible: vec![vec![true, true, false, true], vec![false, true, true, true]],
        };
        assert_eq!(g.boundary(), vec![(0.0, Some(-2.0)), (1.0, None)]);
    }
}
