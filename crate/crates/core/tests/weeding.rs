use nalgebra::Point3;

use weedbot_core::force_control::{FilterState, ForceSensor};
use weedbot_core::robot::Robot;
use weedbot_core::scenario::Scenario;
use weedbot_core::sim_world::Weed;
use weedbot_core::weeding_action::{execute_weeding, generate_tool_path, WeedingOutcome, WeedingPhase, WeedingProfile, WeedingStatus};

/// A stationary robot with one weed in easy reach of the arm.
fn bench(extraction: f64) -> Robot {
    let mut s = Scenario::default();
    s.world.weeds = vec![Weed::rosette(1, [0.75, 0.05, 0.0], 4, 0.09, 0.025, 0.2, extraction)];
    s.build_robot().unwrap()
}

fn weed(robot: &mut Robot, root_world: [f64; 3]) -> WeedingOutcome {
    let root = robot.platform_to_arm(&Point3::from(root_world));
    let mut sensor = ForceSensor::new(robot.world.sensor_calibration().clone(), FilterState::force_default(1.0 / robot.dt()));
    execute_weeding(robot, &mut sensor, &root, &WeedingProfile::default()).unwrap()
}

#[test]
fn loose_soil_weed_comes_out() {
    let mut robot = bench(50.0);
    let out = weed(&mut robot, [0.75, 0.05, 0.0]);
    assert_eq!(out.status, WeedingStatus::Removed, "{:?}", out.detail);
    assert!((50.0..=150.0).contains(&out.peak_force), "peak {}", out.peak_force);
    assert!(robot.world.weed(1).unwrap().removed);
    assert!(out.contact_fraction.unwrap() >= 0.95);
    assert!(out.max_lateral_deviation <= 0.01, "lateral {}", out.max_lateral_deviation);
}

#[test]
fn hard_ground_saturates() {
    let mut robot = bench(160.0);
    let out = weed(&mut robot, [0.75, 0.05, 0.0]);
    assert_eq!(out.status, WeedingStatus::ForceSaturation);
    assert!(!robot.world.weed(1).unwrap().removed);
    assert!(out.final_setpoint <= 150.0);
}

#[test]
fn unreachable_root_changes_nothing() {
    let mut robot = bench(50.0);
    let before = robot.world.state().clone();
    let out = weed(&mut robot, [3.0, 0.0, 0.0]);
    assert_eq!(out.status, WeedingStatus::IkFailure);
    assert_eq!(robot.world.state(), &before);
}

#[test]
fn removed_weed_is_left_alone() {
    let mut robot = bench(50.0);
    assert_eq!(weed(&mut robot, [0.75, 0.05, 0.0]).status, WeedingStatus::Removed);
    let again = weed(&mut robot, [0.75, 0.05, 0.0]);
    assert_eq!(again.status, WeedingStatus::Removed);
    assert!(again.trace.iter().all(|s| s.phase == WeedingPhase::Approach));
    assert!(again.delta_guard.is_none());
}

#[test]
fn nominal_path_respects_speed_and_sweeps_monotonically() {
    let robot = bench(50.0);
    let profile = WeedingProfile::default();
    let root = robot.platform_to_arm(&Point3::new(0.75, 0.05, 0.0));
    let path = generate_tool_path(robot.world.chain(), &root, &profile, robot.joints(), 0.01).unwrap();
    let bound = profile.v_cart_max * 0.01 + 1e-12;
    for pair in path.samples.windows(2) {
        let step = (pair[1].pose.translation.vector - pair[0].pose.translation.vector).norm();
        assert!(step <= bound, "step {step}");
        assert!(pair[1].angle >= pair[0].angle);
    }
    let lever = path.samples.iter().filter(|s| s.keyframe == 1).map(|s| s.angle);
    let last = lever.last().unwrap();
    assert!((last - 40f64.to_radians()).abs() < 1e-12);
}

#[test]
fn achieved_rotation_follows_the_lever() {
    let mut robot = bench(150.0);
    let out = weed(&mut robot, [0.75, 0.05, 0.0]);
    let lever: Vec<f64> = out.trace.iter().filter(|s| s.phase == WeedingPhase::Lever).map(|s| s.angle).collect();
    assert!(!lever.is_empty());
    let total = lever.last().unwrap() - lever.first().unwrap();
    assert!((total - 40f64.to_radians()).abs() < 0.02, "swept {total}");
    for s in out.trace.iter().filter(|s| s.phase == WeedingPhase::Lever) {
        assert!((s.angle - s.commanded_angle).abs() < 0.02);
    }
}
