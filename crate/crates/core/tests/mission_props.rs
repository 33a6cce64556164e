mod common;

use proptest::prelude::*;

use weedbot_core::mission_control::{load_weed_map, set_mode, ControlMode, GeoOrigin};
use weedbot_core::runner::{MissionExecutor, Progress};

/// Transition table written out by hand.
fn table(from: ControlMode, to: ControlMode, moving: bool) -> Option<ControlMode> {
    use ControlMode::*;
    match (from, to) {
        (_, Estop) => Some(Estop),
        (a, b) if a == b => Some(a),
        (Estop, Idle) => (!moving).then_some(Idle),
        (Estop, _) => None,
        (_, Idle) => Some(Idle),
        (Idle, b) => (!moving).then_some(b),
        _ => None,
    }
}

#[test]
fn mode_machine_matches_table() {
    for from in ControlMode::ALL {
        for to in ControlMode::ALL {
            for (arm, platform) in [(false, false), (true, false), (false, true), (true, true)] {
                let got = set_mode(from, to, arm, platform).ok();
                assert_eq!(got, table(from, to, arm || platform), "{from:?} -> {to:?} arm {arm} platform {platform}");
            }
        }
    }
}

fn mode() -> impl Strategy<Value = ControlMode> {
    prop::sample::select(ControlMode::ALL.to_vec())
}

proptest! {
    #[test]
    fn estop_holds_until_reset(requests in prop::collection::vec((mode(), any::<bool>(), any::<bool>()), 1..60)) {
        let mut current = ControlMode::Idle;
        let mut latched = false;
        for (to, arm, platform) in requests {
            let next = set_mode(current, to, arm, platform).unwrap_or(current);
            if to == ControlMode::Estop {
                prop_assert_eq!(next, ControlMode::Estop);
                latched = true;
            } else if latched {
                prop_assert!(!next.allows_motion());
                if next == ControlMode::Idle {
                    prop_assert!(!arm && !platform);
                    latched = false;
                }
            }
            current = next;
        }
    }

    #[test]
    fn weed_maps_round_trip(entries in prop::collection::btree_map(0u32..10_000, (-500.0..500.0f64, -500.0..500.0f64), 0..30)) {
        let json: Vec<_> = entries.iter().map(|(id, (x, y))| serde_json::json!({"id": id, "x": x, "y": y})).collect();
        let text = serde_json::to_string(&json).unwrap();
        let mission = load_weed_map(&text, "prop", None).unwrap();
        prop_assert_eq!(mission.weeds.len(), entries.len());
        prop_assert_eq!(mission.tasks.len(), 3 * entries.len());
        for (w, (id, (x, y))) in mission.weeds.iter().zip(&entries) {
            prop_assert_eq!(w.id, *id);
            prop_assert_eq!(w.position.x, *x);
            prop_assert_eq!(w.position.y, *y);
        }
    }

    #[test]
    fn geodetic_entries_project_near_origin(dlat in -1e-4..1e-4f64, dlon in -1e-4..1e-4f64) {
        let origin = GeoOrigin { lat: 52.0, lon: 5.0 };
        let text = format!(r#"{{"origin": {{"lat": 52.0, "lon": 5.0}}, "weeds": [{{"id": 1, "lat": {}, "lon": {}}}]}}"#, 52.0 + dlat, 5.0 + dlon);
        let m = load_weed_map(&text, "geo", None).unwrap();
        let p = m.weeds[0].position;
        let expect = origin.to_local(52.0 + dlat, 5.0 + dlon);
        prop_assert!((p.x - expect.x).abs() < 1e-9 && (p.y - expect.y).abs() < 1e-9);
        // 1e-4 degrees is about 11 m north-south.
        prop_assert!(p.y.abs() <= 11.2 && p.x.abs() <= 11.2);
    }
}

#[test]
fn malformed_maps_report_position() {
    let err = load_weed_map("[{\"id\": 1, \"x\": 1.0,\n \"y\": }]", "bad", None).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
    let err = load_weed_map(r#"[{"id": 1, "x": 1.0}]"#, "bad", None).unwrap_err();
    assert!(err.to_string().contains("entry 0"), "{err}");
}

#[test]
fn three_weed_missions_finish_in_time() {
    for seed in 0..50 {
        let s = common::loose_soil(seed);
        let mut robot = s.build_robot().unwrap();
        robot.record_trace = false;
        let mut exec = MissionExecutor::new(common::map_for(&s));
        let p = exec.run(&mut robot, &s.tasks).unwrap();
        assert_eq!(p, Progress::Complete, "seed {seed}");
        assert!(exec.mission.tasks.iter().all(|t| t.status.is_terminal()), "seed {seed}");
        assert!(robot.time() <= 600.0, "seed {seed}: {} s", robot.time());
    }
}
