use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use weedbot_core::geometry::{Point2, Pose2D};
use weedbot_core::localization::NoiseConfig;
use weedbot_core::platform_control::{motion_clamp, path_step, ControllerConfig, Path};
use weedbot_core::robot::{Robot, SensorRates};
use weedbot_core::sim_world::{WheelSpeeds, World, WorldConfig};

#[test]
fn clamp_fuzz_respects_limits() {
    let cfg = ControllerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut prev = WheelSpeeds::ZERO;
    let dt = 0.01;
    for _ in 0..100_000 {
        let cmd = WheelSpeeds::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let out = motion_clamp(cmd, prev, dt, &cfg);
        assert!(out.left.abs() <= cfg.max_wheel_speed + 1e-12 && out.right.abs() <= cfg.max_wheel_speed + 1e-12);
        assert!((out.left - prev.left).abs() <= cfg.a_max * dt + 1e-12);
        assert!((out.right - prev.right).abs() <= cfg.a_max * dt + 1e-12);
        prev = if rng.random_bool(0.01) { WheelSpeeds::ZERO } else { out };
    }
}

proptest! {
    #[test]
    fn path_index_never_decreases(
        wps in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 1..8),
        poses in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 1..40),
    ) {
        let mut path = Path::new(wps.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap();
        let mut last = 0;
        for (x, y) in poses {
            path_step(&mut path, &Pose2D::new(x, y, 0.0)).unwrap();
            prop_assert!(path.current_index >= last);
            last = path.current_index;
        }
    }
}

#[test]
fn closed_loop_reaches_waypoints() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..100u64 {
        let start = Pose2D::new(0.0, 0.0, rng.random_range(-3.1..3.1));
        let (r, a) = (rng.random_range(0.3..10.0), rng.random_range(-3.1..3.1f64));
        let goal = Point2::new(r * a.cos(), r * a.sin());
        let world = World::new(WorldConfig { seed: trial, start_pose: start, ..WorldConfig::default() }).unwrap();
        let mut robot = Robot::new(world, NoiseConfig::default(), ControllerConfig::default(), SensorRates::default());
        robot.record_trace = false;
        robot.platform.set_path(Path::with_tolerances(vec![goal], 0.25, 0.1).unwrap());
        let q = robot.joints().to_vec();
        let mut closest = f64::INFINITY;
        for _ in 0..6000 {
            let est = robot.estimated_pose();
            let (w, _) = robot.platform.update(&est, robot.dt()).unwrap();
            robot.tick(w, &q).unwrap();
            closest = closest.min(robot.world.state().platform_pose.position().distance(&goal));
        }
        assert!(closest <= 0.25, "trial {trial}: closest approach {closest:.3} m");
    }
}
