use nalgebra::{Matrix4, Vector4};
use proptest::prelude::*;

use weedbot_core::geometry::{Point2, Pose2D};
use weedbot_core::localization::{ekf_predict, ekf_update_compass, ekf_update_gnss, is_psd, min_eigenvalue, ControlInput, EstimatorState, NoiseConfig};
use weedbot_core::platform_control::{ControllerConfig, Path};
use weedbot_core::robot::{Robot, SensorRates};
use weedbot_core::sim_world::{World, WorldConfig};

fn covariance(l: &[f64]) -> Matrix4<f64> {
    let a = Matrix4::from_row_slice(l);
    a * a.transpose() + Matrix4::identity() * 1e-6
}

fn state_strategy() -> impl Strategy<Value = EstimatorState> {
    (-20.0..20.0f64, -20.0..20.0f64, -3.1..3.1f64, -1.0..1.0f64, prop::collection::vec(-0.3..0.3f64, 16))
        .prop_map(|(x, y, yaw, v, l)| EstimatorState::new(Pose2D::new(x, y, yaw), v, covariance(&l)))
}

fn shifted(s: &EstimatorState, dx: f64, dy: f64) -> EstimatorState {
    let mut out = *s;
    out.mean += Vector4::new(dx, dy, 0.0, 0.0);
    out
}

proptest! {
    #[test]
    fn updates_keep_covariance_psd(s in state_strategy(), gx in -0.5..0.5f64, gy in -0.5..0.5f64, h in -3.1..3.1f64,
                                   v in -1.0..1.0f64, w in -1.0..1.0f64) {
        let noise = NoiseConfig::default();
        let p = ekf_predict(&s, ControlInput { v, omega: w }, 0.01, &noise).unwrap();
        prop_assert!(min_eigenvalue(&p.covariance) >= -1e-9);
        prop_assert_eq!(p.covariance, p.covariance.transpose());
        let fix = weedbot_core::sim_world::GnssFix { x: p.mean[0] + gx, y: p.mean[1] + gy, sigma: 0.02 };
        let g = ekf_update_gnss(&p, &fix, &noise).unwrap();
        prop_assert!(is_psd(&g.state.covariance));
        let c = ekf_update_compass(&g.state, h, &noise).unwrap();
        prop_assert!(is_psd(&c.state.covariance));
    }

    #[test]
    fn accepted_update_never_grows_trace(s in state_strategy(), gx in -0.3..0.3f64, gy in -0.3..0.3f64, h in -3.1..3.1f64) {
        let noise = NoiseConfig { gnss_gate: f64::INFINITY, compass_gate: f64::INFINITY, ..NoiseConfig::default() };
        let fix = weedbot_core::sim_world::GnssFix { x: s.mean[0] + gx, y: s.mean[1] + gy, sigma: 0.02 };
        let g = ekf_update_gnss(&s, &fix, &noise).unwrap();
        prop_assert!(g.accepted);
        prop_assert!(g.state.covariance.trace() <= s.covariance.trace() + 1e-12);
        let c = ekf_update_compass(&s, h, &noise).unwrap();
        prop_assert!(c.accepted);
        prop_assert!(c.state.covariance.trace() <= s.covariance.trace() + 1e-12);
    }

    #[test]
    fn estimate_commutes_with_frame_shift(s in state_strategy(), dx in -50.0..50.0f64, dy in -50.0..50.0f64,
                                          v in -1.0..1.0f64, w in -1.0..1.0f64, gx in -0.1..0.1f64, gy in -0.1..0.1f64,
                                          h in -3.1..3.1f64) {
        let noise = NoiseConfig::default();
        let u = ControlInput { v, omega: w };
        let run = |s0: &EstimatorState, ox: f64, oy: f64| {
            let p = ekf_predict(s0, u, 0.01, &noise).unwrap();
            let fix = weedbot_core::sim_world::GnssFix { x: s.mean[0] + gx + ox, y: s.mean[1] + gy + oy, sigma: 0.02 };
            let g = ekf_update_gnss(&p, &fix, &noise).unwrap().state;
            ekf_update_compass(&g, h, &noise).unwrap().state
        };
        let base = run(&s, 0.0, 0.0);
        let moved = run(&shifted(&s, dx, dy), dx, dy);
        prop_assert!((moved.mean[0] - base.mean[0] - dx).abs() < 1e-9);
        prop_assert!((moved.mean[1] - base.mean[1] - dy).abs() < 1e-9);
        prop_assert!((moved.mean[2] - base.mean[2]).abs() < 1e-12);
        prop_assert!((moved.covariance - base.covariance).abs().max() < 1e-12);
    }
}

#[test]
fn compass_converges_monotonically() {
    let noise = NoiseConfig { compass_gate: f64::INFINITY, ..NoiseConfig::default() };
    let mut s = EstimatorState::new(Pose2D::new(0.0, 0.0, 0.4), 0.0, Matrix4::identity() * 0.5);
    let target = -0.3;
    let mut err = (s.mean[2] - target).abs();
    for _ in 0..50 {
        s = ekf_update_compass(&s, target, &noise).unwrap().state;
        let e = (s.mean[2] - target).abs();
        assert!(e <= err);
        err = e;
    }
    assert!(err < 1e-2);
}

fn robot(seed: u64) -> Robot {
    let world = World::new(WorldConfig { seed, ..WorldConfig::default() }).unwrap();
    Robot::new(world, NoiseConfig::default(), ControllerConfig::default(), SensorRates::default())
}

#[test]
fn gnss_fusion_keeps_final_error_small() {
    let mut good = 0;
    for seed in 0..100 {
        let mut r = robot(seed);
        let q = r.joints().to_vec();
        for k in 0..1000 {
            let w = weedbot_core::sim_world::WheelSpeeds::new(0.5, if k < 500 { 0.5 } else { 0.6 });
            r.tick(w, &q).unwrap();
        }
        let (est, truth) = (r.estimated_pose(), r.world.state().platform_pose);
        if (est.x - truth.x).hypot(est.y - truth.y) <= 0.05 {
            good += 1;
        }
    }
    assert!(good >= 95, "{good}/100 within 0.05 m");
}

#[test]
fn square_loop_tracks_truth() {
    let mut r = robot(11);
    let corners = [(20.0, 0.0), (20.0, 20.0), (0.0, 20.0), (0.0, 0.0)];
    let path = Path::new(corners.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap();
    r.platform.set_path(path);
    let q = r.joints().to_vec();
    let (mut sq, mut n) = (0.0, 0usize);
    for _ in 0..30_000 {
        let est = r.estimated_pose();
        let (w, done) = r.platform.update(&est, r.dt()).unwrap();
        r.tick(w, &q).unwrap();
        let truth = r.world.state().platform_pose;
        let e = r.estimated_pose();
        sq += (e.x - truth.x).powi(2) + (e.y - truth.y).powi(2);
        n += 1;
        if done {
            break;
        }
    }
    assert!(r.platform.path().unwrap().is_finished(), "square not finished");
    let rmse = (sq / n as f64).sqrt();
    assert!(rmse <= 0.1, "rmse {rmse}");
}
