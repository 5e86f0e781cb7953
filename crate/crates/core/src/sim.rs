//! Planar physics for the closed loop.
//!
//! Generalized velocity layout: trunk `(ẋ, ż, ω)`, eight joint rates, four
//! absolute wheel spin rates (forward rolling positive). Legs are massless
//! apart from a lumped inertia on each joint. Wheels touch the terrain through
//! penalty springs; tangential friction is a stiff viscous law inside the
//! stiction band, solved linearly implicitly, and Coulomb sliding outside it.

use alloc::format;

use nalgebra::{SMatrix, SVector};

use crate::error::{invalid, Error, Result};
use crate::kinematics::{leg_fk, leg_jacobian, Leg, Pose, RobotModel, NUM_JOINTS, NUM_LEGS};
use crate::math::{vec2, Vec2};
use crate::terrain::Terrain;
use crate::GRAVITY;

const NV: usize = 3 + NUM_JOINTS + NUM_LEGS;
type VecN = SVector<f64, NV>;
type MatN = SMatrix<f64, NV, NV>;

const MAX_DT: f64 = 2e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ContactParams {
    /// Normal stiffness, N/m.
    pub k_n: f64,
    /// Normal damping, N·s/m.
    pub d_n: f64,
    pub mu: f64,
    /// Slip speed below which friction acts as a stiff damper, m/s.
    pub v_stiction: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self { k_n: 2e4, d_n: 200.0, mu: 0.7, v_stiction: 0.01 }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_n > 0.0 && self.d_n > 0.0 && self.mu > 0.0 && self.v_stiction > 0.0) {
            return Err(invalid("contact.k_n, d_n, mu and v_stiction must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimState {
    pub t: f64,
    pub x: f64,
    pub z: f64,
    pub theta: f64,
    pub dx: f64,
    pub dz: f64,
    pub omega: f64,
    pub q: [f64; NUM_JOINTS],
    pub dq: [f64; NUM_JOINTS],
    /// Absolute wheel spin rates, forward rolling positive, rad/s.
    pub w_wheel: [f64; NUM_LEGS],
    /// Physics steps taken.
    pub steps: u64,
}

impl SimState {
    /// At rest in `pose`.
    pub fn from_pose(pose: &Pose) -> Self {
        Self { x: pose.x, z: pose.z, theta: pose.theta, q: pose.q, ..Default::default() }
    }

    pub fn pose(&self) -> Pose {
        Pose { x: self.x, z: self.z, theta: self.theta, q: self.q }
    }

    /// Wheel rates relative to the calf, as a motor encoder reads them.
    pub fn wheel_encoder_rates(&self) -> [f64; NUM_LEGS] {
        core::array::from_fn(|i| {
            let (a, b) = Leg::ALL[i].joints();
            self.w_wheel[i] + self.omega + self.dq[a] + self.dq[b]
        })
    }

    fn velocity(&self) -> VecN {
        let mut v = VecN::zeros();
        v[0] = self.dx;
        v[1] = self.dz;
        v[2] = self.omega;
        for j in 0..NUM_JOINTS {
            v[3 + j] = self.dq[j];
        }
        for i in 0..NUM_LEGS {
            v[3 + NUM_JOINTS + i] = self.w_wheel[i];
        }
        v
    }

    fn is_finite(&self) -> bool {
        [self.x, self.z, self.theta, self.dx, self.dz, self.omega].iter().all(|v| v.is_finite())
            && self.q.iter().chain(self.dq.iter()).chain(self.w_wheel.iter()).all(|v| v.is_finite())
    }

    /// Kinetic plus gravitational energy, without contact springs.
    pub fn energy(&self, model: &RobotModel) -> f64 {
        let joints: f64 = self.dq.iter().map(|d| d * d).sum();
        let wheels: f64 = self.w_wheel.iter().map(|w| w * w).sum();
        0.5 * model.mass * (self.dx * self.dx + self.dz * self.dz)
            + 0.5 * model.inertia_pitch * self.omega * self.omega
            + 0.5 * model.joint_inertia * joints
            + 0.5 * model.wheel_inertia * wheels
            + model.mass * GRAVITY * self.z
    }
}

/// Actuator commands held over a step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Torques {
    pub joint: [f64; NUM_JOINTS],
    /// Wheel motor torques, forward positive.
    pub wheel: [f64; NUM_LEGS],
}

/// Contact forces acting on each wheel during the last step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContactReport {
    /// Net terrain force on the wheel, world frame.
    pub force: [Vec2; NUM_LEGS],
    /// Sum of normal force magnitudes.
    pub normal: [f64; NUM_LEGS],
    /// Sum of tangential (along-surface) forces, forward positive.
    pub tangential: [f64; NUM_LEGS],
    /// Spring energy stored in the penalty contacts.
    pub spring_energy: f64,
    pub in_contact: [bool; NUM_LEGS],
}

struct Contact {
    leg: usize,
    normal_force: f64,
    n: Vec2,
    t: Vec2,
    jn: VecN,
    jt: VecN,
}

fn joint_col(leg: Leg) -> (usize, usize) {
    let (a, b) = leg.joints();
    (3 + a, 3 + b)
}

fn spin_col(leg: Leg) -> usize {
    3 + NUM_JOINTS + leg.index()
}

/// Row mapping generalized velocity to the velocity of a wheel center along `dir`.
fn center_row(model: &RobotModel, pose: &Pose, leg: Leg, center: Vec2, dir: Vec2) -> VecN {
    let mut row = VecN::zeros();
    let r = center - pose.com();
    row[0] = dir.x;
    row[1] = dir.y;
    row[2] = -r.y * dir.x + r.x * dir.y;
    let (qt, qc) = pose.leg_angles(leg);
    let j = leg_jacobian(model, qt, qc, pose.theta);
    let (a, b) = joint_col(leg);
    row[a] = j[(0, 0)] * dir.x + j[(1, 0)] * dir.y;
    row[b] = j[(0, 1)] * dir.x + j[(1, 1)] * dir.y;
    row
}

/// World velocity of a wheel center.
pub fn wheel_center_velocity(model: &RobotModel, state: &SimState, leg: Leg) -> Vec2 {
    let pose = state.pose();
    let center = leg_fk(model, leg, &pose).wheel_center;
    let v = state.velocity();
    vec2(center_row(model, &pose, leg, center, vec2(1.0, 0.0)).dot(&v), center_row(model, &pose, leg, center, vec2(0.0, 1.0)).dot(&v))
}

fn mass_diagonal(model: &RobotModel) -> VecN {
    let mut m = VecN::zeros();
    m[0] = model.mass;
    m[1] = model.mass;
    m[2] = model.inertia_pitch;
    for j in 0..NUM_JOINTS {
        m[3 + j] = model.joint_inertia;
    }
    for i in 0..NUM_LEGS {
        m[3 + NUM_JOINTS + i] = model.wheel_inertia.max(1e-9);
    }
    m
}

/// One semi-implicit Euler step.
pub fn step(state: &SimState, torques: &Torques, terrain: &Terrain, model: &RobotModel, params: &ContactParams, dt: f64) -> Result<(SimState, ContactReport)> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(invalid(format!("dt must lie in (0, {MAX_DT}] s")));
    }
    let fault = |what: &str| Error::SimulationFault { tick: state.steps, what: what.into() };
    if !state.is_finite() || torques.joint.iter().chain(torques.wheel.iter()).any(|v| !v.is_finite()) {
        return Err(fault("non-finite state or torque"));
    }

    let pose = state.pose();
    let v = state.velocity();
    let mass = mass_diagonal(model);
    let radius = model.wheel_radius;

    let mut gen = VecN::zeros();
    gen[1] = -model.mass * GRAVITY;
    for j in 0..NUM_JOINTS {
        gen[3 + j] += torques.joint[j];
    }
    for leg in Leg::ALL {
        // wheel motor: torque on the spin, reaction on the calf chain
        let tau = torques.wheel[leg.index()];
        let (a, b) = joint_col(leg);
        gen[spin_col(leg)] += tau;
        gen[2] += tau;
        gen[a] += tau;
        gen[b] += tau;
    }

    let mut report = ContactReport::default();
    let mut contacts: alloc::vec::Vec<Contact> = alloc::vec::Vec::new();
    for leg in Leg::ALL {
        let center = leg_fk(model, leg, &pose).wheel_center;
        for c in terrain.wheel_contacts(center, radius) {
            let n = c.normal;
            let t = vec2(n.y, -n.x);
            let jn = center_row(model, &pose, leg, center, n);
            let mut jt = center_row(model, &pose, leg, center, t);
            jt[spin_col(leg)] = -radius;
            let pen_rate = -jn.dot(&v);
            let normal_force = (params.k_n * c.penetration + params.d_n * pen_rate).max(0.0);
            report.spring_energy += 0.5 * params.k_n * c.penetration * c.penetration;
            gen += jn * normal_force;
            contacts.push(Contact { leg: leg.index(), normal_force, n, t, jn, jt });
        }
    }

    // friction: stick contacts as implicit dampers, sliding ones as Coulomb
    let mut sliding: alloc::vec::Vec<Option<f64>> = contacts
        .iter()
        .map(|c| {
            let vt = c.jt.dot(&v);
            (vt.abs() > params.v_stiction).then(|| vt.signum())
        })
        .collect();
    let momentum = v.component_mul(&mass);
    let mut v_new = v;
    let mut friction = alloc::vec![0.0; contacts.len()];
    for _ in 0..8 {
        let mut lhs = MatN::from_diagonal(&mass);
        let mut rhs = momentum + gen * dt;
        for (k, c) in contacts.iter().enumerate() {
            let limit = params.mu * c.normal_force;
            match sliding[k] {
                Some(sign) => rhs -= c.jt * (limit * sign * dt),
                None => {
                    let damping = limit / params.v_stiction;
                    lhs += c.jt * c.jt.transpose() * (damping * dt);
                }
            }
        }
        v_new = lhs.cholesky().ok_or_else(|| fault("singular mass matrix"))?.solve(&rhs);
        let mut changed = false;
        for (k, c) in contacts.iter().enumerate() {
            let vt = c.jt.dot(&v_new);
            let limit = params.mu * c.normal_force;
            match sliding[k] {
                None => {
                    let f = -limit / params.v_stiction * vt;
                    if f.abs() > limit * (1.0 + 1e-9) {
                        sliding[k] = Some(vt.signum());
                        changed = true;
                    } else {
                        friction[k] = f;
                    }
                }
                Some(_) => friction[k] = -limit * sliding[k].unwrap_or(0.0),
            }
        }
        if !changed {
            break;
        }
    }

    for (k, c) in contacts.iter().enumerate() {
        let f = c.n * c.normal_force + c.t * friction[k];
        report.force[c.leg] += f;
        report.normal[c.leg] += c.normal_force;
        report.tangential[c.leg] += friction[k];
        report.in_contact[c.leg] |= c.normal_force > 0.0;
        let _ = c.jn;
    }

    let mut next = *state;
    next.dx = v_new[0];
    next.dz = v_new[1];
    next.omega = v_new[2];
    for j in 0..NUM_JOINTS {
        next.dq[j] = v_new[3 + j];
    }
    for i in 0..NUM_LEGS {
        next.w_wheel[i] = v_new[3 + NUM_JOINTS + i];
    }
    next.x += dt * next.dx;
    next.z += dt * next.dz;
    next.theta += dt * next.omega;
    for j in 0..NUM_JOINTS {
        next.q[j] += dt * next.dq[j];
    }
    next.t += dt;
    next.steps += 1;
    if !next.is_finite() {
        return Err(Error::SimulationFault { tick: next.steps, what: "state became non-finite".into() });
    }
    Ok((next, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat() -> Terrain {
        Terrain::flat(-5.0, 5.0, 0.0).unwrap()
    }

    #[test]
    fn free_fall_matches_discrete_ballistics() {
        let m = RobotModel::default();
        let mut s = SimState::from_pose(&m.nominal_pose(0.0, 10.0));
        let z0 = s.z;
        let dt = 1e-4;
        for _ in 0..1000 {
            s = step(&s, &Torques::default(), &flat(), &m, &ContactParams::default(), dt).unwrap().0;
        }
        let drop = z0 - s.z;
        assert!((drop - 0.5 * GRAVITY * 0.01).abs() < 1e-4);
        // semi-implicit Euler: z_n = z_0 - g dt² n(n+1)/2
        let exact = GRAVITY * dt * dt * 1000.0 * 1001.0 / 2.0;
        assert!((drop - exact).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_dt_and_nan() {
        let m = RobotModel::default();
        let s = SimState::from_pose(&m.nominal_pose(0.0, 0.0));
        let p = ContactParams::default();
        assert!(step(&s, &Torques::default(), &flat(), &m, &p, 0.0).is_err());
        assert!(step(&s, &Torques::default(), &flat(), &m, &p, 3e-3).is_err());
        let mut bad = s;
        bad.dz = f64::NAN;
        assert!(matches!(step(&bad, &Torques::default(), &flat(), &m, &p, 5e-4), Err(Error::SimulationFault { .. })));
    }

    #[test]
    fn free_wheel_rolls_without_slip() {
        // spinning wheels dragged by a moving trunk pick up the rolling speed
        let m = RobotModel::default();
        let mut s = SimState::from_pose(&m.nominal_pose(0.0, 0.0));
        s.z -= m.mass * GRAVITY / (4.0 * 2e4);
        s.dx = 0.5;
        let p = ContactParams::default();
        let mut torques = Torques::default();
        let pose = m.nominal_pose(0.0, 0.0);
        for leg in Leg::ALL {
            let (a, b) = leg.joints();
            let (qt, qc) = pose.leg_angles(leg);
            let j = leg_jacobian(&m, qt, qc, 0.0);
            let f = vec2(0.0, m.mass * GRAVITY / 4.0);
            torques.joint[a] = -(j[(0, 0)] * f.x + j[(1, 0)] * f.y);
            torques.joint[b] = -(j[(0, 1)] * f.x + j[(1, 1)] * f.y);
        }
        for _ in 0..200 {
            let mut held = torques;
            for j in 0..NUM_JOINTS {
                held.joint[j] += 200.0 * (pose.q[j] - s.q[j]) - 5.0 * s.dq[j];
            }
            s = step(&s, &held, &flat(), &m, &p, 5e-4).unwrap().0;
        }
        for leg in Leg::ALL {
            let vc = wheel_center_velocity(&m, &s, leg);
            assert!((s.w_wheel[leg.index()] * m.wheel_radius - vc.x).abs() < p.v_stiction);
        }
        assert!(s.dx > 0.4);
    }

    #[test]
    fn normal_forces_are_non_negative() {
        let m = RobotModel::default();
        let mut s = SimState::from_pose(&m.nominal_pose(0.0, 0.0));
        s.dz = 1.0;
        s.z -= 0.005;
        let (_, rep) = step(&s, &Torques::default(), &flat(), &m, &ContactParams::default(), 5e-4).unwrap();
        assert!(rep.normal.iter().all(|n| *n >= 0.0));
    }
}
