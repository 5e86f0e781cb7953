//! Pose scheduling: linear joint and pitch references between optimized
//! poses, pose timing from the mean wheel speed, and the joint tracking law.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::kinematics::{leg_fk, Leg, Pose, RobotModel, NUM_JOINTS, NUM_LEGS};
use crate::math::{self, vec2, Vec2};
use crate::pose_opt::{PoseSequence, Role};
use crate::terrain::{Step, Terrain};

/// Mean wheel speed at or below which timing estimates are not attempted, rad/s.
pub const MIN_WHEEL_SPEED: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PlannerConfig {
    /// Joint stiffness per joint, N·m/rad.
    pub k_pq: [f64; NUM_JOINTS],
    /// Joint damping per joint, N·m·s/rad.
    pub k_dq: [f64; NUM_JOINTS],
    /// Shortest transition, s; a pose whose target is already reached is still blended in.
    pub min_transition: f64,
    /// Averaging window for the wheel speed, s.
    pub speed_window: f64,
    pub min_wheel_speed: f64,
    pub torque_limit: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            k_pq: [150.0; NUM_JOINTS],
            k_dq: [3.0; NUM_JOINTS],
            min_transition: 0.5,
            speed_window: 0.2,
            min_wheel_speed: MIN_WHEEL_SPEED,
            torque_limit: 33.5,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_pq.iter().chain(self.k_dq.iter()).any(|k| !(*k >= 0.0 && k.is_finite())) {
            return Err(invalid("controller.planner.k_pq and k_dq must be non-negative"));
        }
        if !(self.min_transition > 0.0) || !(self.speed_window > 0.0) {
            return Err(invalid("controller.planner.min_transition and speed_window must be positive"));
        }
        if !(self.min_wheel_speed > 0.0) || !(self.torque_limit > 0.0) {
            return Err(invalid("controller.planner.min_wheel_speed and torque_limit must be positive"));
        }
        Ok(())
    }
}

fn fraction(t: f64, t0: f64, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(invalid("transition length must be positive"));
    }
    Ok(((t - t0) / dt).clamp(0.0, 1.0))
}

/// Joint and pitch references between two poses, clamped to the end points
/// outside `[t0, t0 + dt]`.
pub fn interpolate(from: &Pose, to: &Pose, t: f64, t0: f64, dt: f64) -> Result<([f64; NUM_JOINTS], f64)> {
    let s = fraction(t, t0, dt)?;
    let q = core::array::from_fn(|j| from.q[j] + (to.q[j] - from.q[j]) * s);
    Ok((q, from.theta + (to.theta - from.theta) * s))
}

/// Time derivative of [`interpolate`]: constant inside the transition, zero outside.
pub fn interpolate_rate(from: &Pose, to: &Pose, t: f64, t0: f64, dt: f64) -> Result<([f64; NUM_JOINTS], f64)> {
    fraction(t, t0, dt)?;
    if t < t0 || t > t0 + dt {
        return Ok(([0.0; NUM_JOINTS], 0.0));
    }
    Ok((core::array::from_fn(|j| (to.q[j] - from.q[j]) / dt), (to.theta - from.theta) / dt))
}

/// Arrival times of the front wheel at the riser and on top of it.
///
/// `dx` is the horizontal distance from the front wheel contact to the base of
/// the step, `h` its height and `gamma` the slope of its face.
pub fn estimate_pose_times(t_now: f64, dx: f64, radius: f64, qd_avg: f64, h: f64, gamma: f64) -> Result<(f64, f64)> {
    if !(radius > 0.0) {
        return Err(invalid("wheel radius must be positive"));
    }
    if !(gamma > 0.0 && gamma <= core::f64::consts::FRAC_PI_2) {
        return Err(invalid("step slope must lie in (0, pi/2]"));
    }
    if !(qd_avg > MIN_WHEEL_SPEED) {
        return Err(Error::EstimationUnavailable(qd_avg));
    }
    let rate = radius * qd_avg;
    let t1 = t_now + (dx - radius) / rate;
    let t2 = t1 + (h / math::sin(gamma) + radius) / rate;
    Ok((t1, t2))
}

/// Balance torque plus joint PD tracking, clamped per joint.
#[allow(clippy::too_many_arguments)]
pub fn combined_torque(
    tau_qp: &[f64; NUM_JOINTS],
    q_des: &[f64; NUM_JOINTS],
    qd_des: &[f64; NUM_JOINTS],
    q: &[f64; NUM_JOINTS],
    qd: &[f64; NUM_JOINTS],
    k_p: &[f64; NUM_JOINTS],
    k_d: &[f64; NUM_JOINTS],
    limit: f64,
) -> [f64; NUM_JOINTS] {
    core::array::from_fn(|j| (tau_qp[j] + k_p[j] * (q_des[j] - q[j]) + k_d[j] * (qd_des[j] - qd[j])).clamp(-limit, limit))
}

/// Sliding-window mean of the wheel encoder rates.
#[derive(Debug, Clone)]
pub struct SpeedWindow {
    len: usize,
    samples: VecDeque<f64>,
}

impl SpeedWindow {
    pub fn new(window: f64, tick: f64) -> Self {
        let len = (libm::round(window / tick) as usize).max(1);
        Self { len, samples: VecDeque::with_capacity(len) }
    }

    pub fn push(&mut self, rates: &[f64; NUM_LEGS]) -> f64 {
        let mean = rates.iter().sum::<f64>() / NUM_LEGS as f64;
        self.samples.push_back(mean);
        if self.samples.len() > self.len {
            self.samples.pop_front();
        }
        self.mean()
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.samples.iter().sum::<f64>() / self.samples.len() as f64
        }
    }
}

/// Scheduler state exported for logging.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlanState {
    /// Index of the active transition (from entry `segment` to `segment + 1`).
    pub segment: usize,
    pub t0: f64,
    pub dt: f64,
    pub t_hat1: f64,
    pub t_hat2: f64,
    /// Front wheel contact to the base of the next step, m.
    pub dx: f64,
    /// Progress through the active transition in `[0, 1]`.
    pub progress: f64,
}

/// References for one control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub q: [f64; NUM_JOINTS],
    pub qd: [f64; NUM_JOINTS],
    pub theta: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Target {
    /// Front wheel arrives at the step face.
    Approach(usize),
    /// Front wheel is on top of the step.
    Top(usize),
    /// Rear wheel is on top of the step.
    RearTop(usize),
    /// CoM reaches a location, for terrain without steps.
    Location(f64),
}

/// Walks a pose sequence as the robot rolls.
#[derive(Debug, Clone)]
pub struct PosePlanner {
    poses: Vec<Pose>,
    targets: Vec<Target>,
    steps: Vec<Step>,
    terrain: Terrain,
    cfg: PlannerConfig,
    radius: f64,
    speed: SpeedWindow,
    state: PlanState,
}

impl PosePlanner {
    pub fn new(seq: &PoseSequence, terrain: &Terrain, model: &RobotModel, cfg: &PlannerConfig, tick: f64) -> Result<Self> {
        if seq.is_empty() {
            return Err(invalid("pose sequence is empty"));
        }
        let steps = terrain.steps();
        let last_step = seq.entries.iter().filter_map(|e| e.step).max();
        let targets = seq
            .entries
            .iter()
            .map(|e| match (e.role, e.step) {
                (Role::Pose1 | Role::Pose3, Some(k)) => Target::Approach(k),
                (Role::Pose2 | Role::Pose4, Some(k)) => Target::Top(k),
                (Role::Final, _) if last_step.is_some() => Target::RearTop(last_step.unwrap_or(0)),
                _ => Target::Location(e.x_ref),
            })
            .collect::<Vec<_>>();
        if targets.iter().any(|t| matches!(t, Target::Approach(k) | Target::Top(k) | Target::RearTop(k) if *k >= steps.len())) {
            return Err(invalid("pose sequence refers to a step the terrain does not have"));
        }
        Ok(Self {
            poses: seq.entries.iter().map(|e| e.pose).collect(),
            targets,
            steps,
            terrain: terrain.clone(),
            cfg: cfg.clone(),
            radius: model.wheel_radius,
            speed: SpeedWindow::new(cfg.speed_window, tick),
            state: PlanState::default(),
        })
    }

    pub fn state(&self) -> PlanState {
        self.state
    }

    pub fn finished(&self) -> bool {
        self.state.segment + 1 >= self.poses.len()
    }

    /// Remaining wheel travel to a target, measured along the terrain.
    fn travel(&self, target: Target, front: Vec2, rear: Vec2, com_x: f64) -> f64 {
        let r = self.radius;
        let arc = |p: Vec2| self.terrain.arc_length(p);
        let base = |s: &Step| arc(vec2(s.base_x, s.lower_z));
        let top = |s: &Step| arc(vec2(s.top_x, s.upper_z));
        match target {
            Target::Approach(k) => base(&self.steps[k]) - r - arc(front),
            Target::Top(k) => top(&self.steps[k]) + r - arc(front),
            Target::RearTop(k) => top(&self.steps[k]) + r - arc(rear),
            Target::Location(x) => x - com_x,
        }
    }

    /// Advances the schedule and returns the references for time `t`.
    ///
    /// The end of the active transition is re-estimated every tick from the
    /// remaining travel and the mean wheel speed; without a speed estimate the
    /// transition holds.
    pub fn update(&mut self, t: f64, pose: &Pose, model: &RobotModel, encoder_rates: &[f64; NUM_LEGS]) -> Reference {
        let qd_avg = self.speed.push(encoder_rates);
        let front = leg_fk(model, Leg::FrontLeft, pose).wheel_center;
        let rear = leg_fk(model, Leg::RearLeft, pose).wheel_center;
        let available = qd_avg > self.cfg.min_wheel_speed;

        while !self.finished() {
            let target = self.targets[self.state.segment + 1];
            if let Target::Approach(k) | Target::Top(k) = target {
                let step = &self.steps[k];
                self.state.dx = step.base_x - front.x;
                if available && matches!(target, Target::Approach(_)) {
                    if let Ok((t1, t2)) = estimate_pose_times(t, self.state.dx, self.radius, qd_avg, step.rise(), step.slope()) {
                        self.state.t_hat1 = t1;
                        self.state.t_hat2 = t2;
                    }
                }
            }
            if !available {
                break;
            }
            let t0 = self.state.t0;
            let remaining = self.travel(target, front, rear, pose.x).max(0.0);
            let end = (t + remaining / (self.radius * qd_avg)).max(t0 + self.cfg.min_transition);
            self.state.dt = end - t0;
            let progress = ((t - t0) / (end - t0)).clamp(0.0, 1.0);
            self.state.progress = self.state.progress.max(progress);
            if self.state.progress >= 1.0 {
                self.state.segment += 1;
                self.state.t0 = t;
                self.state.progress = 0.0;
                continue;
            }
            break;
        }

        let k = self.state.segment;
        if self.finished() {
            let last = self.poses[k];
            return Reference { q: last.q, qd: [0.0; NUM_JOINTS], theta: last.theta, omega: 0.0 };
        }
        let (a, b) = (&self.poses[k], &self.poses[k + 1]);
        let s = self.state.progress;
        let rate = if s > 0.0 && s < 1.0 { 1.0 / self.state.dt } else { 0.0 };
        Reference {
            q: core::array::from_fn(|j| a.q[j] + (b.q[j] - a.q[j]) * s),
            qd: core::array::from_fn(|j| (b.q[j] - a.q[j]) * rate),
            theta: a.theta + (b.theta - a.theta) * s,
            omega: (b.theta - a.theta) * rate,
        }
    }
}
