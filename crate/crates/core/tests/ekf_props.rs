use gaterace::ekf::{
    jacobian_f, predict, process_derivative, replay, update, Cov, DragParams, EkfTuning, ImuInput, NavState,
    ReplayRow, StateVec,
};
use nalgebra::Vector3;
use proptest::prelude::*;

fn imu() -> impl Strategy<Value = ImuInput> {
    (
        (-0.6..0.6f64, -0.6..0.6f64, -3.1..3.1f64),
        (-3.0..3.0f64, -3.0..3.0f64, -13.0..-7.0f64),
        (-2.0..2.0f64, -2.0..2.0f64),
    )
        .prop_map(|((phi, theta, psi), (ax, ay, az), (p, q))| ImuInput { phi, theta, psi, ax, ay, az, p, q })
}

fn state() -> impl Strategy<Value = StateVec> {
    proptest::collection::vec(-5.0..5.0f64, 7).prop_map(|v| StateVec::from_column_slice(&v))
}

proptest! {
    #[test]
    fn jacobian_matches_central_differences(x in state(), u in imu()) {
        let drag = DragParams::default();
        let a = jacobian_f(&x, &u, &drag);
        let h = 1e-5;
        let mut n = Cov::zeros();
        for j in 0..7 {
            let (mut xp, mut xm) = (x, x);
            xp[j] += h;
            xm[j] -= h;
            n.set_column(j, &((process_derivative(&xp, &u, &drag) - process_derivative(&xm, &u, &drag)) / (2.0 * h)));
        }
        prop_assert!((a - n).norm() / a.norm() < 1e-6);
    }

    #[test]
    fn predict_keeps_covariance_psd(inputs in proptest::collection::vec(imu(), 1..200)) {
        let tuning = EkfTuning::default();
        let mut s = NavState::new(StateVec::zeros(), tuning.p0());
        for u in &inputs {
            s = predict(&s, u, 0.01, &tuning.q(), &DragParams::default());
            prop_assert!(s.covariance_ok(1e-9));
        }
    }

    #[test]
    fn update_never_inflates_position_variance(
        inputs in proptest::collection::vec(imu(), 1..50),
        z in (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64),
    ) {
        let tuning = EkfTuning::default();
        let mut s = NavState::new(StateVec::zeros(), tuning.p0());
        for u in &inputs {
            s = predict(&s, u, 0.01, &tuning.q(), &DragParams::default());
        }
        let after = update(&s, &Vector3::new(z.0, z.1, z.2), &tuning.r()).unwrap();
        for i in 0..3 {
            prop_assert!(after.p[(i, i)] <= s.p[(i, i)] + 1e-12);
        }
        prop_assert!(after.covariance_ok(1e-9));
    }
}

#[test]
fn vision_gap_shows_as_estimate_jump() {
    // steady 1 m/s flight with an accelerometer offset; fixes stop for 2 s
    let drag = DragParams::default();
    let rows: Vec<ReplayRow> = (0..600)
        .map(|k| {
            let t = k as f64 * 0.01;
            let fix = k % 5 == 0 && !(50..250).contains(&k);
            ReplayRow {
                t,
                imu: ImuInput { ax: drag.kx + 0.1, ..ImuInput::hover() },
                z: fix.then(|| Vector3::new(t, 0.0, -1.5)),
            }
        })
        .collect();
    let out = replay(&rows, &EkfTuning::default(), drag).unwrap();
    let gap = out.largest_gap.unwrap();
    assert!((gap.gap - 2.05).abs() < 1e-9, "{gap:?}");
    assert!(gap.jump > 0.01, "{gap:?}");
    assert_eq!(out.updates, 80);
}
