//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use nalgebra::{Matrix4, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use weedbot_core::arm_kinematics::{IkConfig, KinematicChain};
use weedbot_core::camera::CameraModel;
use weedbot_core::force_control::{FilterState, ForceSensor};
use weedbot_core::geometry::{nadir_orientation, pose_error, Point2, Pose2D, Pose3};
use weedbot_core::localization::{ekf_predict, ekf_update_compass, ekf_update_gnss, is_psd, ControlInput, EstimatorState, NoiseConfig};
use weedbot_core::mission_control::{dispatch, Command, Mission, TaskEvent, TaskKind, TaskStatus, WeedEntry};
use weedbot_core::runner::{steady_state_error, transfer_platform, weeding_rows, write_trace_csv, MissionExecutor, Progress, FORCE_SETTLE_TIME};
use weedbot_core::scenario::Scenario;
use weedbot_core::sim_world::{GnssFix, Weed, World, WorldConfig};
use weedbot_core::weed_detection::{detect_weed, estimate_root, DetectionConfig, DetectionError};
use weedbot_core::weeding_action::{execute_weeding, generate_tool_path, WeedingProfile, WeedingStatus};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    check: fn() -> Verdict,
}

fn main() {
    let criteria = [
        Criterion { name: "platform positioning", budget: Duration::from_secs(120), check: platform_positioning },
        Criterion { name: "detection accuracy", budget: Duration::from_secs(60), check: detection_accuracy },
        Criterion { name: "tool positioning", budget: Duration::from_secs(60), check: tool_positioning },
        Criterion { name: "force regulation", budget: Duration::from_secs(30), check: force_regulation },
        Criterion { name: "workflow end-to-end", budget: Duration::from_secs(300), check: workflow },
        Criterion { name: "property: jacobian vs finite differences", budget: Duration::from_secs(300), check: jacobian_fd },
        Criterion { name: "property: fk/ik round trip", budget: Duration::from_secs(300), check: fk_ik_round_trip },
        Criterion { name: "property: butterworth gains", budget: Duration::from_secs(300), check: butterworth_gains },
        Criterion { name: "property: ekf covariance psd", budget: Duration::from_secs(300), check: ekf_psd },
        Criterion { name: "property: estimate_root oracle", budget: Duration::from_secs(300), check: estimate_root_oracle },
        Criterion { name: "property: 2-weed mission model check", budget: Duration::from_secs(300), check: mission_model_check },
        Criterion { name: "property: determinism", budget: Duration::from_secs(300), check: determinism },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let v = (c.check)();
        let elapsed = start.elapsed();
        let in_time = elapsed <= c.budget;
        let pass = v.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget_note = if in_time { String::new() } else { format!(" (over budget {:?})", c.budget) };
        println!("{} {}: {} [{:.2?}{}]", if pass { "PASS" } else { "FAIL" }, c.name, v.detail, elapsed, budget_note);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn platform_positioning() -> Verdict {
    let mut errors = Vec::new();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut s = Scenario::default();
        s.world.seed = seed;
        s.world.start_pose = Pose2D::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-3.1..3.1));
        let mut robot = s.build_robot().expect("default scenario builds");
        for _ in 0..3 {
            let here = robot.estimated_pose();
            let r = rng.random_range(1.0..8.0);
            let a: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let target = Point2::new(here.x + r * a.cos(), here.y + r * a.sin());
            match transfer_platform(&mut robot, target, &s.tasks.runner) {
                Ok(rep) => errors.push(rep.positioning_error),
                Err(_) => errors.push(f64::INFINITY),
            }
        }
    }
    let within = errors.iter().filter(|e| **e <= 0.25).count();
    let rate = within as f64 / errors.len() as f64;
    let max = errors.iter().copied().fold(0.0, f64::max);
    verdict(rate >= 0.95, format!("{within}/{} stops within 0.25 m (rate {rate:.3}, need >= 0.95), max error {max:.3} m", errors.len()))
}

fn detection_accuracy() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut correct, mut flagged, mut wrong) = (0, 0, 0);
    let n = 200;
    for i in 0..n {
        let leaves = rng.random_range(3..=6);
        let root = [rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08), 0.0];
        let weed = Weed::rosette(1, root, leaves, rng.random_range(0.07..0.12), rng.random_range(0.02..0.03), rng.random_range(0.0..6.3), 40.0);
        let mut config = WorldConfig { seed: i, weeds: vec![weed], ..WorldConfig::default() };
        config.scene.clutter_fraction = rng.random_range(0.0..0.3);
        let mut world = World::new(config).expect("scene config valid");
        let height = rng.random_range(0.5..0.7);
        let camera = Pose3::from_parts(Vector3::new(0.0, 0.0, height).into(), nadir_orientation(rng.random_range(-3.1..3.1)));
        let (color, depth) = world.render(&camera).expect("camera above ground");
        let model = CameraModel { intrinsics: world.config().camera, extrinsic: camera };
        match detect_weed(&color, &depth, &model, &DetectionConfig::default()) {
            Ok(h) => {
                if (h.root() - Point3::from(root)).norm() <= 0.02 {
                    correct += 1;
                } else {
                    wrong += 1;
                }
            }
            Err(e) if e.is_insufficient_evidence() => flagged += 1,
            Err(_) => wrong += 1,
        }
    }
    let rate = correct as f64 / n as f64;
    let failures = flagged + wrong;
    let flagged_rate = if failures == 0 { 1.0 } else { flagged as f64 / failures as f64 };
    verdict(
        rate >= 0.90 && flagged_rate >= 0.95,
        format!("{correct}/{n} within 0.02 m (need >= 90%); of {failures} failures {flagged} flagged insufficient evidence (need >= 95%)"),
    )
}

/// Reachable ground roots in the arm base frame.
fn reachable_roots(count: usize, seed: u64) -> Vec<Point3<f64>> {
    let chain = KinematicChain::default();
    let profile = WeedingProfile::default();
    let stow = weedbot_core::sim_world::default_stow_joints();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut roots = Vec::new();
    while roots.len() < count {
        let r = rng.random_range(0.25..0.55);
        let a: f64 = rng.random_range(-1.0..1.0);
        let root = Point3::new(r * a.cos(), r * a.sin(), -0.40);
        if generate_tool_path(&chain, &root, &profile, &stow, 0.01).is_ok() {
            roots.push(root);
        }
    }
    roots
}

/// Runs one weeding action on a fresh robot with a weed at `root` (arm frame).
fn weed_once(root: &Point3<f64>, extraction_force: f64, seed: u64) -> weedbot_core::weeding_action::WeedingOutcome {
    let mut s = Scenario::default();
    s.world.seed = seed;
    let mount = s.world.geometry.arm_mount.to_isometry();
    let p = mount * root;
    s.world.weeds = vec![Weed::rosette(1, [p.x, p.y, 0.0], 4, 0.09, 0.025, 0.0, extraction_force)];
    let mut robot = s.build_robot().expect("scenario builds");
    let mut sensor = ForceSensor::new(robot.world.sensor_calibration().clone(), FilterState::force_default(100.0));
    execute_weeding(&mut robot, &mut sensor, root, &s.tasks.weeding).expect("weeding runs")
}

fn tool_positioning() -> Verdict {
    let roots = reachable_roots(50, 5);
    let errors: Vec<f64> = roots.iter().enumerate().map(|(i, r)| weed_once(r, 40.0, i as u64).approach_error.unwrap_or(f64::INFINITY)).collect();
    let within = errors.iter().filter(|e| **e <= 0.005).count();
    let max = errors.iter().copied().fold(0.0, f64::max);
    verdict(within == roots.len(), format!("{within}/{} contacts within 0.005 m of the approach point, max {max:.2e} m", roots.len()))
}

fn force_regulation() -> Verdict {
    let roots = reachable_roots(10, 9);
    let mut worst = 0.0_f64;
    let mut peak = 0.0_f64;
    let mut removed = 0;
    for (i, r) in roots.iter().enumerate() {
        let out = weed_once(r, 50.0, 100 + i as u64);
        worst = worst.max(steady_state_error(&out.trace, FORCE_SETTLE_TIME).unwrap_or(f64::INFINITY));
        peak = peak.max(out.peak_force);
        if out.status == WeedingStatus::Removed {
            removed += 1;
        }
    }
    verdict(
        worst <= 1.0 && peak <= 150.0,
        format!("steady-state |F - 50| max {worst:.3} N (need <= 1), peak {peak:.1} N (need <= 150), {removed}/{} removed", roots.len()),
    )
}

fn run_mission(s: &Scenario) -> (MissionExecutor, Result<Progress, String>, weedbot_core::robot::Robot) {
    let mut robot = s.build_robot().expect("scenario builds");
    let mut exec = MissionExecutor::new(common::map_for(s));
    let r = exec.run(&mut robot, &s.tasks).map_err(|e| e.to_string());
    (exec, r, robot)
}

fn workflow() -> Verdict {
    let (loose, r1, _) = run_mission(&common::loose_soil(11));
    let (hard, r2, _) = run_mission(&common::hard_ground(11));
    let ok_loose = r1 == Ok(Progress::Complete) && loose.metrics.removed == 3;
    let saturated = hard.metrics.outcomes.get("force_saturation").copied().unwrap_or(0);
    let ok_hard = r2 == Ok(Progress::Complete) && saturated > 0 && hard.metrics.removed == 0;
    verdict(ok_loose && ok_hard, format!("loose soil: {r1:?}, {} of 3 removed; hard ground: {r2:?}, {saturated} force_saturation outcomes", loose.metrics.removed))
}

fn random_q(rng: &mut ChaCha8Rng, chain: &KinematicChain) -> Vec<f64> {
    chain.joints.iter().map(|j| rng.random_range(-0.9 * j.limit..0.9 * j.limit)).collect()
}

fn jacobian_fd() -> Verdict {
    let chain = KinematicChain::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-6;
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let q = random_q(&mut rng, &chain);
        let jac = chain.jacobian(&q).expect("within limits");
        let base = chain.fk_unchecked(&q);
        for i in 0..chain.dof() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += h;
            qm[i] -= h;
            let ep = pose_error(&base, &chain.fk_unchecked(&qp));
            let em = pose_error(&base, &chain.fk_unchecked(&qm));
            let fd = (ep - em) / (2.0 * h);
            for r in 0..6 {
                worst = worst.max((fd[r] - jac[(r, i)]).abs());
            }
        }
    }
    verdict(worst <= 1e-6, format!("max |J - J_fd| = {worst:.2e} over 1000 configurations (need <= 1e-6)"))
}

fn fk_ik_round_trip() -> Verdict {
    let chain = KinematicChain::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let config = IkConfig::default();
    let mut worst = 0.0_f64;
    let mut failures = 0;
    let n = 500;
    for _ in 0..n {
        let mut q = random_q(&mut rng, &chain);
        // Keep away from the elbow and wrist singularities.
        for k in [2, 4] {
            q[k] = q[k].signum() * q[k].abs().clamp(0.3, 2.4);
        }
        let target = chain.fk_unchecked(&q);
        let seed: Vec<f64> = q.iter().zip(&chain.joints).map(|(v, j)| (v + rng.random_range(-0.2..0.2)).clamp(-j.limit, j.limit)).collect();
        match chain.inverse_kinematics(&target, &seed, &config) {
            Ok(sol) => {
                let got = chain.fk_unchecked(&sol.q);
                worst = worst.max((got.translation.vector - target.translation.vector).norm());
            }
            Err(_) => failures += 1,
        }
    }
    verdict(failures == 0 && worst <= 1e-6, format!("{failures}/{n} unsolved, max position residual {worst:.2e} m (need <= 1e-6)"))
}

fn sine_amplitude(freq: f64) -> f64 {
    let mut f = FilterState::force_default(100.0);
    let mut peak = 0.0_f64;
    for k in 0..1000 {
        let y = f.step((2.0 * std::f64::consts::PI * freq * k as f64 / 100.0).sin());
        if k >= 500 {
            peak = peak.max(y.abs());
        }
    }
    peak
}

fn butterworth_gains() -> Verdict {
    let mut f = FilterState::force_default(100.0);
    let mut y = 0.0;
    for _ in 0..50 {
        y = f.step(50.0);
    }
    let dc_ok = (y - 50.0).abs() <= 0.01;
    let a10 = sine_amplitude(10.0);
    let a40 = sine_amplitude(40.0);
    let ok = dc_ok && (a10 - 0.707).abs() <= 0.02 && a40 <= 0.02;
    verdict(ok, format!("50 N step after 0.5 s: {y:.4} N; 10 Hz gain {a10:.4} (0.707 +/- 0.02); 40 Hz gain {a40:.4} (<= 0.02)"))
}

fn ekf_psd() -> Verdict {
    let noise = NoiseConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut s = EstimatorState::new(Pose2D::default(), 0.0, Matrix4::identity() * 0.1);
    let mut violations = 0;
    let n = 100_000;
    for _ in 0..n {
        let next = match rng.random_range(0..3) {
            0 => ekf_predict(&s, ControlInput { v: rng.random_range(-1.0..1.0), omega: rng.random_range(-2.0..2.0) }, rng.random_range(0.001..0.1), &noise),
            1 => {
                let fix = GnssFix { x: s.mean[0] + rng.random_range(-0.5..0.5), y: s.mean[1] + rng.random_range(-0.5..0.5), sigma: 0.02 };
                ekf_update_gnss(&s, &fix, &noise).map(|o| o.state)
            }
            _ => ekf_update_compass(&s, rng.random_range(-3.2..3.2), &noise).map(|o| o.state),
        };
        match next {
            Ok(n) if is_psd(&n.covariance) => s = n,
            _ => violations += 1,
        }
        if s.mean.iter().any(|v| v.abs() > 1e3) {
            s = EstimatorState::new(Pose2D::default(), 0.0, s.covariance);
        }
    }
    verdict(violations == 0, format!("{violations} non-PSD or rejected steps in {n} fuzzed operations"))
}

/// Naive median: the value with at most half the others strictly below and above it.
fn naive_median(values: &[f64]) -> f64 {
    let n = values.len();
    let order_stat = |k: usize| -> f64 {
        for &v in values {
            let below = values.iter().filter(|&&w| w < v).count();
            let equal = values.iter().filter(|&&w| w == v).count();
            if below <= k && k < below + equal {
                return v;
            }
        }
        unreachable!("some value has rank k")
    };
    if n % 2 == 1 {
        order_stat(n / 2)
    } else {
        0.5 * (order_stat(n / 2 - 1) + order_stat(n / 2))
    }
}

fn oracle_root(points: &[Point2], tau: f64) -> Option<(Point2, usize)> {
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let (mx, my) = (naive_median(&xs), naive_median(&ys));
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut n = 0;
    for p in points {
        if ((p.x - mx).powi(2) + (p.y - my).powi(2)).sqrt() <= tau {
            sx += p.x;
            sy += p.y;
            n += 1;
        }
    }
    (n > 0).then(|| (Point2::new(sx / n as f64, sy / n as f64), n))
}

fn estimate_root_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    let trials = 20_000;
    for _ in 0..trials {
        let n = rng.random_range(1..=20);
        let center = Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
        let spread = rng.random_range(0.5..40.0);
        let points: Vec<Point2> = (0..n)
            .map(|_| {
                if rng.random_bool(0.2) {
                    Point2::new(rng.random_range(-200.0..800.0), rng.random_range(-200.0..700.0))
                } else {
                    Point2::new(center.x + rng.random_range(-spread..spread), center.y + rng.random_range(-spread..spread))
                }
            })
            .collect();
        let got = estimate_root(&points, 20.0);
        let want = oracle_root(&points, 20.0);
        let same = match (&got, want) {
            (Ok(e), Some((root, k))) => e.root == root && e.inliers.len() == k && e.confidence == k as f64 / n as f64,
            (Err(DetectionError::InsufficientEvidence(_)), None) => true,
            _ => false,
        };
        if !same {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("{mismatches} mismatches against the naive oracle over {trials} point sets of 1..=20 points"))
}

fn order_invariant(m: &Mission) -> Result<(), String> {
    if m.tasks.iter().filter(|t| t.status == TaskStatus::Running).count() > 1 {
        return Err("two tasks running".into());
    }
    for (i, t) in m.tasks.iter().enumerate() {
        let started = t.status == TaskStatus::Running || t.status == TaskStatus::Done || (t.status == TaskStatus::Failed);
        if !started {
            continue;
        }
        match t.kind {
            TaskKind::TransferPlatform => {}
            TaskKind::AcquireImage => {
                if m.tasks[i - 1].status != TaskStatus::Done {
                    return Err(format!("acquire {i} started before its transfer finished"));
                }
            }
            TaskKind::WeedingAction => {
                if t.root_platform.is_none() || m.tasks[i - 1].status != TaskStatus::Done {
                    return Err(format!("weeding {i} started without a root"));
                }
            }
        }
    }
    Ok(())
}

fn explore(m: &Mission, cmd: &Command, states: &mut usize, terminals: &mut usize) -> Result<(), String> {
    *states += 1;
    order_invariant(m)?;
    let Some(running) = m.running() else {
        if !m.is_complete() || *cmd != Command::Stop {
            return Err("no task running but mission not finished".into());
        }
        *terminals += 1;
        return Ok(());
    };
    for idle in (0..m.tasks.len()).filter(|&i| i != running) {
        if dispatch(m, &TaskEvent::Done { task: idle, root_platform: Some([0.7, 0.0, 0.0]) }).is_ok() {
            return Err(format!("done for idle task {idle} accepted"));
        }
    }
    let root = (m.tasks[running].kind == TaskKind::AcquireImage).then_some([0.7, 0.0, 0.0]);
    for event in [TaskEvent::Done { task: running, root_platform: root }, TaskEvent::Failed { task: running, reason: "x".into() }] {
        let (next, cmd) = dispatch(m, &event).map_err(|e| e.to_string())?;
        explore(&next, &cmd, states, terminals)?;
    }
    Ok(())
}

fn mission_model_check() -> Verdict {
    let weeds = vec![WeedEntry { id: 1, position: Point2::new(1.0, 0.0) }, WeedEntry { id: 2, position: Point2::new(2.0, 0.0) }];
    let m = Mission::from_weeds("model", weeds);
    let (mut states, mut terminals) = (0, 0);
    let result = dispatch(&m, &TaskEvent::Start).map_err(|e| e.to_string()).and_then(|(next, cmd)| explore(&next, &cmd, &mut states, &mut terminals));
    match result {
        Ok(()) => verdict(true, format!("{states} reachable states, {terminals} complete missions, invariant holds")),
        Err(e) => verdict(false, format!("violation after {states} states: {e}")),
    }
}

fn run_artifacts(seed: u64) -> Vec<u8> {
    let (exec, _, robot) = run_mission(&common::loose_soil(seed));
    let mut out = Vec::new();
    let rows = weeding_rows(&exec.weeding);
    for what in weedbot_core::runner::TRACE_NAMES {
        write_trace_csv(what, &rows, robot.trace(), &mut out).expect("in-memory write");
    }
    for r in &exec.log {
        out.extend(serde_json::to_vec(r).expect("serializable"));
    }
    out.extend(serde_json::to_vec(&exec.metrics).expect("serializable"));
    out
}

fn determinism() -> Verdict {
    let a = run_artifacts(21);
    let b = run_artifacts(21);
    let c = run_artifacts(22);
    verdict(a == b && a != c, format!("two seed-21 runs: {} bytes, identical = {}; seed 22 differs = {}", a.len(), a == b, a != c))
}
