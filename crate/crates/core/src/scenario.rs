//! Closed-loop runs: planner, balance QP and wheel loop driving the simulator.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::Matrix2;

use crate::balance::{desired_accel, desired_wrench, forces_to_torques, grf_world, BalanceConfig, BalanceController, BodyCommand, BodyState};
use crate::dynamics::{assemble_dynamics, LegContact};
use crate::error::{invalid, Result};
use crate::kinematics::{cloud_layout, collision_cloud, leg_fk, leg_jacobian, Leg, Pose, RobotModel, NUM_JOINTS, NUM_LEGS};
use crate::math::{self, vec2, Vec2};
use crate::planner::{combined_torque, PlanState, PlannerConfig, PosePlanner};
use crate::pose_opt::PoseSequence;
use crate::rolling::{wheel_speed_command, wheel_torque, RollingCommand, RollingConfig};
use crate::sim::{step, ContactParams, SimState, Torques};
use crate::terrain::Terrain;
use crate::GRAVITY;

/// Pitch error beyond which a run counts as a fall, rad.
pub const FALL_PITCH_ERROR: f64 = 1.2;
/// Terrain penetration of a non-wheel cloud point that counts as a collision, m.
pub const COLLISION_DEPTH: f64 = 0.01;
/// Extra distance within which the controller still treats a wheel as touching a surface, m.
const CONTACT_MARGIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ControllerConfig {
    pub balance: BalanceConfig,
    pub rolling: RollingConfig,
    pub planner: PlannerConfig,
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        self.balance.validate()?;
        self.rolling.validate()?;
        self.planner.validate()
    }
}

/// Piecewise-constant command, active from `t` until the next entry.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct CommandSegment {
    pub t: f64,
    pub v_x: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub yaw_rate: f64,
}

pub fn command_at(timeline: &[CommandSegment], t: f64) -> RollingCommand {
    let seg = timeline.iter().rev().find(|c| c.t <= t);
    seg.map(|c| RollingCommand { v_x_des: c.v_x, yaw_rate_des: c.yaw_rate }).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub model: RobotModel,
    pub terrain: Terrain,
    pub controller: ControllerConfig,
    pub contact: ContactParams,
    pub commands: Vec<CommandSegment>,
    pub duration: f64,
    /// Control period, s.
    pub control_dt: f64,
    /// Physics steps per control period.
    pub substeps: usize,
    /// Constant torque on every wheel in place of the speed loop, N·m.
    pub wheel_torque_override: Option<f64>,
}

impl Scenario {
    pub fn new(model: RobotModel, terrain: Terrain, commands: Vec<CommandSegment>, duration: f64) -> Self {
        Self { model, terrain, controller: ControllerConfig::default(), contact: ContactParams::default(), commands, duration, control_dt: 1e-3, substeps: 2, wheel_torque_override: None }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.controller.validate()?;
        self.contact.validate()?;
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(invalid("duration must be positive"));
        }
        if !(self.control_dt > 0.0) || self.substeps == 0 || self.control_dt / self.substeps as f64 > 2e-3 {
            return Err(invalid("control_dt / substeps must lie in (0, 2e-3] s"));
        }
        if self.wheel_torque_override.is_some_and(|t| !t.is_finite()) {
            return Err(invalid("wheel_torque_override must be finite"));
        }
        if self.commands.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(invalid("commands must be sorted by strictly increasing t"));
        }
        if self.commands.iter().any(|c| !(c.v_x.is_finite() && c.yaw_rate.is_finite() && c.t.is_finite())) {
            return Err(invalid("commands must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Running,
    Completed,
    Fell,
    Collided,
    Timeout,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Running => "running",
            Status::Completed => "completed",
            Status::Fell => "fell",
            Status::Collided => "collided",
            Status::Timeout => "timeout",
        }
    }
}

/// One control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub state: SimState,
    /// Terrain force on each wheel, world frame.
    pub contact_force: [Vec2; NUM_LEGS],
    /// Ground reaction the balance QP asked for, world frame.
    pub planned_force: [Vec2; NUM_LEGS],
    /// Eight joint torques then four wheel torques.
    pub tau: [f64; NUM_JOINTS + NUM_LEGS],
    pub plan: PlanState,
    pub q_des: [f64; NUM_JOINTS],
    pub theta_des: f64,
    /// Deepest terrain penetration of a non-wheel cloud point (positive = inside).
    pub cloud_penetration: f64,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub rows: Vec<LogRow>,
    pub status: Status,
    pub t_end: f64,
    pub x_end: f64,
    /// Number of ticks where the QP failed and the previous forces were reused.
    pub qp_failures: usize,
    pub note: String,
}

impl Trajectory {
    pub fn last(&self) -> Option<&LogRow> {
        self.rows.last()
    }

    pub fn max_pitch_error(&self) -> f64 {
        self.rows.iter().map(|r| math::abs(r.state.theta - r.theta_des)).fold(0.0, f64::max)
    }

    pub fn max_cloud_penetration(&self) -> f64 {
        self.rows.iter().map(|r| r.cloud_penetration).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn cloud_penetration(model: &RobotModel, terrain: &Terrain, pose: &Pose) -> f64 {
    let layout = cloud_layout();
    collision_cloud(model, pose)
        .iter()
        .zip(layout.iter())
        .filter(|(_, kind)| !kind.is_wheel())
        .filter_map(|(p, _)| terrain.clearance(*p).ok())
        .map(|c| -c)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// True once every wheel stands beyond the last rising feature.
fn goal_reached(model: &RobotModel, terrain: &Terrain, pose: &Pose) -> bool {
    match terrain.steps().last() {
        None => true,
        Some(s) => Leg::ALL.iter().all(|l| {
            let c = leg_fk(model, *l, pose).wheel_center;
            c.x > s.top_x && c.y > s.upper_z
        }),
    }
}

/// Rest state in the first pose, lowered onto its static contact deflection.
pub fn initial_state(model: &RobotModel, contact: &ContactParams, pose: &Pose) -> SimState {
    let mut s = SimState::from_pose(pose);
    s.z -= model.mass * GRAVITY / (NUM_LEGS as f64 * contact.k_n);
    s
}

/// Runs the closed loop for the scenario duration.
pub fn run_scenario(sc: &Scenario, seq: &PoseSequence) -> Result<Trajectory> {
    sc.validate()?;
    let model = &sc.model;
    let terrain = &sc.terrain;
    let cfg = &sc.controller;
    let first = seq.entries.first().ok_or_else(|| invalid("pose sequence is empty"))?;
    let mut planner = PosePlanner::new(seq, terrain, model, &cfg.planner, sc.control_dt)?;
    let mut balance = BalanceController::new(cfg.balance.clone());
    let mut s = initial_state(model, &sc.contact, &first.pose);
    let radius = model.wheel_radius;
    let h = sc.control_dt / sc.substeps as f64;
    let ticks = libm::ceil(sc.duration / sc.control_dt - 1e-9) as usize;

    let mut in_contact = [false; NUM_LEGS];
    for leg in Leg::ALL {
        let c = leg_fk(model, leg, &s.pose()).wheel_center;
        in_contact[leg.index()] = terrain.wheel_contact(c, radius).is_some();
    }

    let mut rows = Vec::with_capacity(ticks);
    let mut status = Status::Running;
    let mut qp_failures = 0;
    let mut f_local_prev = crate::dynamics::Vec8::zeros();
    for tick in 0..ticks {
        let t = tick as f64 * sc.control_dt;
        let pose = s.pose();
        let enc = s.wheel_encoder_rates();
        let reference = planner.update(t, &pose, model, &enc);

        let cmd = command_at(&sc.commands, t);
        let wheel_des = wheel_speed_command(&cmd, 0.0, radius, &cfg.rolling)?;
        let tau_w: [f64; NUM_LEGS] = core::array::from_fn(|i| match sc.wheel_torque_override {
            Some(tau) => tau.clamp(-cfg.rolling.tau_wheel_max, cfg.rolling.tau_wheel_max),
            None => wheel_torque(wheel_des[i], enc[i], cfg.rolling.k_d_wheel, cfg.rolling.tau_wheel_max),
        });

        let mut contacts = [LegContact { r_c: Vec2::zeros(), r_wheel: Vec2::zeros(), gamma: 0.0, in_contact: false }; NUM_LEGS];
        let mut jac = [Matrix2::zeros(); NUM_LEGS];
        for leg in Leg::ALL {
            let i = leg.index();
            let center = leg_fk(model, leg, &pose).wheel_center;
            let (qt, qc) = pose.leg_angles(leg);
            jac[i] = leg_jacobian(model, qt, qc, pose.theta);
            // a wheel in the inner corner of a riser is modeled against the riser
            let info = terrain.wheel_contacts(center, radius + CONTACT_MARGIN).into_iter().fold(None, |best: Option<crate::terrain::ContactInfo>, c| match best {
                Some(b) if b.slope_angle >= c.slope_angle => Some(b),
                _ => Some(c),
            });
            let (point, gamma) = match info {
                Some(c) => (c.point, c.slope_angle),
                None => (center - vec2(0.0, radius), 0.0),
            };
            contacts[i] = LegContact { r_c: center - pose.com(), r_wheel: point - pose.com(), gamma, in_contact: in_contact[i] && info.is_some() };
        }
        let dynamics = assemble_dynamics(model, &contacts, &tau_w);
        let body = BodyState { p: pose.com(), v: vec2(s.dx, s.dz), theta: s.theta, omega: s.omega };
        let target = BodyCommand { p: pose.com(), v: vec2(cmd.v_x_des, 0.0), theta: reference.theta, omega: reference.omega };
        let (p_ddot, omega_dot) = desired_accel(&body, &target, &cfg.balance);
        let mut b = desired_wrench(model, p_ddot, omega_dot);
        // forward motion belongs to the wheel loop
        b[0] = (dynamics.a_wheel * dynamics.f_wheel)[0];
        let f_local = match balance.update(&dynamics, &b) {
            Ok(f) => f,
            Err(_) => {
                qp_failures += 1;
                f_local_prev
            }
        };
        f_local_prev = f_local;
        let gammas: [f64; NUM_LEGS] = core::array::from_fn(|i| contacts[i].gamma);
        let grf = grf_world(&f_local, &gammas);
        let push: [Vec2; NUM_LEGS] = core::array::from_fn(|i| -grf[i]);
        let tau_qp = forces_to_torques(&push, &jac);
        let tau_j = combined_torque(&tau_qp, &reference.q, &reference.qd, &s.q, &s.dq, &cfg.planner.k_pq, &cfg.planner.k_dq, cfg.planner.torque_limit);
        let torques = Torques { joint: tau_j, wheel: tau_w };

        let mut force = [Vec2::zeros(); NUM_LEGS];
        for _ in 0..sc.substeps {
            let (next, rep) = step(&s, &torques, terrain, model, &sc.contact, h).map_err(|e| match e {
                crate::Error::SimulationFault { what, .. } => crate::Error::SimulationFault { tick: tick as u64, what },
                other => other,
            })?;
            s = next;
            force = rep.force;
            in_contact = rep.in_contact;
        }

        let pen = cloud_penetration(model, terrain, &s.pose());
        if math::abs(s.theta - reference.theta) > FALL_PITCH_ERROR {
            status = Status::Fell;
        } else if pen > COLLISION_DEPTH {
            status = Status::Collided;
        }
        let mut tau = [0.0; NUM_JOINTS + NUM_LEGS];
        tau[..NUM_JOINTS].copy_from_slice(&tau_j);
        tau[NUM_JOINTS..].copy_from_slice(&tau_w);
        rows.push(LogRow {
            t: s.t,
            state: s,
            contact_force: force,
            planned_force: grf,
            tau,
            plan: planner.state(),
            q_des: reference.q,
            theta_des: reference.theta,
            cloud_penetration: pen,
            status,
        });
        if status != Status::Running {
            break;
        }
    }
    if status == Status::Running {
        status = if planner.finished() && goal_reached(model, terrain, &s.pose()) { Status::Completed } else { Status::Timeout };
        if let Some(r) = rows.last_mut() {
            r.status = status;
        }
    }
    let note = if qp_failures > 0 { alloc::format!("{qp_failures} ticks reused the previous QP forces") } else { String::new() };
    Ok(Trajectory { t_end: s.t, x_end: s.x, rows, status, qp_failures, note })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_lookup() {
        let tl = [CommandSegment { t: 0.0, v_x: 0.5, yaw_rate: 0.0 }, CommandSegment { t: 2.0, v_x: 0.0, yaw_rate: 0.1 }];
        assert_eq!(command_at(&tl, -1.0), RollingCommand::default());
        assert_eq!(command_at(&tl, 1.0).v_x_des, 0.5);
        assert_eq!(command_at(&tl, 2.0).v_x_des, 0.0);
        assert_eq!(command_at(&tl, 2.0).yaw_rate_des, 0.1);
    }

    #[test]
    fn standing_settles_at_penalty_equilibrium() {
        let m = RobotModel::default();
        let terrain = Terrain::flat(-2.0, 2.0, 0.0).unwrap();
        let sc = Scenario::new(m.clone(), terrain, alloc::vec![], 1.0);
        let seq = PoseSequence::hold_nominal(&m, 0.0, 0.0);
        let tr = run_scenario(&sc, &seq).unwrap();
        let last = tr.last().unwrap();
        let deflection = m.mass * GRAVITY / (4.0 * sc.contact.k_n);
        assert!(math::abs(last.state.dz) < 1e-3, "{}", last.state.dz);
        assert!(math::abs(last.state.z - (m.nominal_height - deflection)) < 2e-3, "{}", last.state.z);
        assert_eq!(tr.status, Status::Completed);
    }

    #[test]
    fn flat_rolling_covers_expected_distance() {
        let m = RobotModel::default();
        let terrain = Terrain::flat(-1.0, 5.0, 0.0).unwrap();
        let sc = Scenario::new(m.clone(), terrain, alloc::vec![CommandSegment { t: 0.0, v_x: 0.5, yaw_rate: 0.0 }], 5.0);
        let seq = PoseSequence::hold_nominal(&m, 0.0, 0.0);
        let tr = run_scenario(&sc, &seq).unwrap();
        assert_eq!(tr.status, Status::Completed, "{}", tr.note);
        assert!(math::abs(tr.x_end - 2.5) < 0.25, "{}", tr.x_end);
        assert!(tr.max_pitch_error() < 0.25);
    }
}
