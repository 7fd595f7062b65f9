use std::f64::consts::PI;

use gaterace::control::{
    arc_command, crossing_offset, feasibility_region, level_thrust, straight_command, ArcState, FeasibilityConfig,
    TurnDirection, YawCmd,
};
use gaterace::GRAVITY;
use proptest::prelude::*;

proptest! {
    #[test]
    fn level_thrust_holds_altitude(phi in -0.5..0.5f64, theta in -0.5..0.5f64) {
        let t = level_thrust(phi, theta, 0.0);
        prop_assert!((t * phi.cos() * theta.cos() + GRAVITY).abs() < 1e-9);
    }

    #[test]
    fn arc_yaw_rate_is_speed_over_radius(vx in 0.5..3.0f64, radius in 0.5..4.0f64, right in any::<bool>()) {
        let direction = if right { TurnDirection::Right } else { TurnDirection::Left };
        let arc = ArcState { vx, ay: 0.0, az: 0.0, radius, direction, elapsed: 0.0 };
        let cmd = arc_command(&arc, -0.05, GRAVITY, PI / 3.0).unwrap();
        let YawCmd::Rate(r) = cmd.yaw else { panic!("arc commands a yaw rate") };
        prop_assert!((r - direction.sign() * vx / radius).abs() < 1e-12);
        // bank toward the turn
        prop_assert!(cmd.phi * direction.sign() > 0.0);
    }

    #[test]
    fn straight_law_is_odd_in_lateral_error(y in -2.0..2.0f64, yd in -1.0..1.0f64) {
        let a = straight_command(y, yd, 0.3, 0.25, -0.08, 0.3, 0.5);
        let b = straight_command(-y, -yd, 0.3, 0.25, -0.08, 0.3, 0.5);
        prop_assert!((a.phi + b.phi).abs() < 1e-12);
    }

    #[test]
    fn crossing_is_mirror_symmetric(x0 in -5.0..-0.1f64, y0 in -3.0..3.0f64) {
        let cfg = FeasibilityConfig::default();
        let a = crossing_offset(&cfg, x0, y0, 0.0);
        let b = crossing_offset(&cfg, x0, -y0, 0.0);
        prop_assert!((a + b).abs() < 1e-9);
    }
}

#[test]
fn feasibility_grid_is_symmetric_in_lateral_offset() {
    for vx in [1.5, 2.0] {
        let g = feasibility_region(&FeasibilityConfig { vx, ..FeasibilityConfig::default() });
        let n = g.ys.len();
        for i in 0..n {
            assert_eq!(g.feasible[i], g.feasible[n - 1 - i], "rows {i} and {}", n - 1 - i);
        }
    }
}

#[test]
fn slower_flight_reaches_a_larger_region() {
    let slow = feasibility_region(&FeasibilityConfig { vx: 1.0, ..FeasibilityConfig::default() });
    let fast = feasibility_region(&FeasibilityConfig { vx: 2.5, ..FeasibilityConfig::default() });
    assert!(slow.count() > fast.count());
    assert!(fast.cells_outside(&slow) <= 50);
}
