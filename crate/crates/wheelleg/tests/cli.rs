use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wheelleg::config::ScenarioConfig;
use wheelleg::posefile::PoseFile;
use wheelleg_core::kinematics::{collision_cloud, leg_fk, Leg, Pose};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn wheelleg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wheelleg")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Geometric re-check of a solved pose, independent of the solver's residuals.
fn assert_clean(cfg: &ScenarioConfig, pose: &Pose, role: &str) {
    let terrain = cfg.terrain().unwrap();
    let m = &cfg.robot;
    for leg in Leg::ALL {
        let g = leg_fk(m, leg, pose);
        let gap = terrain.distance(g.wheel_center) - m.wheel_radius;
        assert!(gap.abs() < 1e-4, "{role} {leg:?} wheel gap {gap}");
    }
    for (i, p) in collision_cloud(m, pose).iter().enumerate() {
        let c = terrain.clearance(*p).unwrap();
        assert!(c >= -1e-4, "{role} cloud point {i} clearance {c}");
    }
    for j in 0..8 {
        assert!(pose.q[j] >= m.q_min[j] - 1e-6 && pose.q[j] <= m.q_max[j] + 1e-6, "{role} joint {j}");
    }
    let rear_hip = leg_fk(m, Leg::RearLeft, pose).hip.x;
    let rear_wheel = leg_fk(m, Leg::RearLeft, pose).wheel_center.x;
    assert!(rear_wheel <= rear_hip + 1e-6, "{role} rear wheel ahead of rear hip");
}

#[test]
fn stair_pose_opt_writes_four_clean_poses() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("poses.json");
    let o = wheelleg(&["pose-opt", "--config", s(&scenario("stair.json")), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("pose2: solve_time="), "{text}");
    assert!(text.contains("max_violation="));
    let file = PoseFile::load(&out).unwrap();
    assert_eq!(file.sequence.len(), 4);
    assert_eq!(file.version, env!("CARGO_PKG_VERSION"));
    let cfg = ScenarioConfig::load(&scenario("stair.json")).unwrap();
    for e in &file.sequence.entries {
        assert_clean(&cfg, &e.pose, e.role.as_str());
    }
}

#[test]
fn pose_files_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        assert!(wheelleg(&["pose-opt", "--config", s(&scenario("multi_stair.json")), "--out", s(out)]).status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn flat_terrain_gives_two_poses() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("poses.json");
    assert!(wheelleg(&["pose-opt", "--config", s(&scenario("flat.json")), "--out", s(&out)]).status.success());
    assert_eq!(PoseFile::load(&out).unwrap().sequence.len(), 2);
}

#[test]
fn unreachable_stair_exits_2_naming_the_pose() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("stair.json")).unwrap().replace("\"rise\": 0.36", "\"rise\": 2.0");
    let cfg = dir.path().join("tall.json");
    std::fs::write(&cfg, text).unwrap();
    let o = wheelleg(&["pose-opt", "--config", s(&cfg), "--out", s(&dir.path().join("p.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("pose2: infeasible"), "{}", stderr(&o));
}

#[test]
fn flat_run_completes() {
    let o = wheelleg(&["simulate", "--config", s(&scenario("flat.json"))]);
    assert!(o.status.success());
    let line = stdout(&o);
    assert!(line.starts_with("status=completed t_end=5.000 x_end="), "{line}");
    let x_end: f64 = line.trim().rsplit('=').next().unwrap().parse().unwrap();
    // 2.5 m travelled from the start pose
    assert!((x_end + 0.7 - 2.5).abs() < 0.25, "{x_end}");
}

#[test]
fn simulate_logs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let poses = dir.path().join("poses.json");
    assert!(wheelleg(&["pose-opt", "--config", s(&scenario("ramp.json")), "--out", s(&poses)]).status.success());
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = wheelleg(&["simulate", "--config", s(&scenario("ramp.json")), "--poses", s(&poses), "--out", s(out)]);
        assert!(stdout(&o).starts_with("status=completed"), "{}", stdout(&o));
    }
    let bytes = std::fs::read(&a).unwrap();
    assert!(bytes.len() > 1000);
    assert_eq!(bytes, std::fs::read(&b).unwrap());
}

#[test]
fn ramp_without_poses_falls_or_collides() {
    let o = wheelleg(&["simulate", "--config", s(&scenario("ramp.json"))]);
    let line = stdout(&o);
    assert!(line.starts_with("status=fell") || line.starts_with("status=collided"), "{line}");
}

#[test]
fn pose_file_for_other_terrain_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let poses = dir.path().join("poses.json");
    assert!(wheelleg(&["pose-opt", "--config", s(&scenario("ramp.json")), "--out", s(&poses)]).status.success());
    let o = wheelleg(&["simulate", "--config", s(&scenario("stair.json")), "--poses", s(&poses)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("terrain hash"));
}

#[test]
fn unknown_config_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("flat.json")).unwrap().replace("\"duration\"", "\"durration\": 1, \"duration\"");
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, text).unwrap();
    let o = wheelleg(&["simulate", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown field `durration`"), "{}", stderr(&o));
}

#[test]
fn plot_renders_three_panels_with_clamp_lines() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("log.csv");
    let svg = dir.path().join("log.svg");
    assert!(wheelleg(&["simulate", "--config", s(&scenario("flat.json")), "--out", s(&csv)]).status.success());
    let o = wheelleg(&["plot", "--csv", s(&csv), "--out", s(&svg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches("class=\"panel\"").count(), 3);
    assert!(text.contains(">+33.5<") && text.contains(">-33.5<"));
}

#[test]
fn saturated_torques_sit_on_the_clamp_line() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sat.csv");
    let svg = dir.path().join("sat.svg");
    let mut header: Vec<String> = ["t", "theta", "theta_des"].iter().map(|s| s.to_string()).collect();
    header.extend((0..8).map(|j| format!("q{j}")));
    header.extend((0..8).map(|j| format!("q_des{j}")));
    header.extend((0..4).map(|i| format!("fz{i}")));
    header.extend((0..8).map(|j| format!("tau{j}")));
    let mut text = header.join(",") + "\n";
    for k in 0..10 {
        let mut row = vec![format!("{}", k as f64 * 0.1), "0".into(), "0".into()];
        row.extend(std::iter::repeat_n("0".to_string(), 16 + 4));
        row.extend(std::iter::repeat_n("33.5".to_string(), 8));
        text += &(row.join(",") + "\n");
    }
    std::fs::write(&csv, text).unwrap();
    assert!(wheelleg(&["plot", "--csv", s(&csv), "--out", s(&svg)]).status.success());
    let out = std::fs::read_to_string(&svg).unwrap();
    // the clamp line and a torque trace share the same pixel row
    let clamp_y = out.split("class=\"clamp\"").nth(1).unwrap().split("y1=\"").nth(1).unwrap().split('"').next().unwrap().parse::<f64>().unwrap();
    let traces: Vec<&str> = out.lines().filter(|l| l.contains("<polyline") && l.contains("stroke-dasharray")).collect();
    let last = traces.last().unwrap();
    let first_y: f64 = last.split("points=\"").nth(1).unwrap().split_whitespace().next().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((first_y - clamp_y).abs() < 0.1, "{first_y} vs {clamp_y}");
}

#[test]
fn empty_or_broken_csv_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("x.svg");
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(wheelleg(&["plot", "--csv", s(&empty), "--out", s(&svg)]).status.code(), Some(4));
    let broken = dir.path().join("broken.csv");
    std::fs::write(&broken, "t,theta\n0,1\n0.1,x\n").unwrap();
    assert_eq!(wheelleg(&["plot", "--csv", s(&broken), "--out", s(&svg)]).status.code(), Some(4));
}
