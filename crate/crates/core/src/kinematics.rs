//! Robot parameters, sagittal-plane leg kinematics and the collision cloud.
//!
//! Frame conventions: x forward, z up, pitch `theta` positive nose-up
//! (counter-clockwise). A joint angle of zero points the link straight down in
//! the body frame and positive angles swing the distal link toward +x. Left
//! and right legs are mirror images in the plane, so the four physical legs
//! form two planar legs.

use nalgebra::Matrix2;

use crate::math::{self, rot, vec2, Vec2};

pub const NUM_LEGS: usize = 4;
pub const NUM_JOINTS: usize = 8;
pub const CLOUD_SIZE: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Leg {
    FrontLeft,
    FrontRight,
    RearLeft,
    RearRight,
}

impl Leg {
    pub const ALL: [Leg; NUM_LEGS] = [Leg::FrontLeft, Leg::FrontRight, Leg::RearLeft, Leg::RearRight];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_front(self) -> bool {
        matches!(self, Leg::FrontLeft | Leg::FrontRight)
    }

    /// Indices of (thigh, calf) in the joint vector.
    pub fn joints(self) -> (usize, usize) {
        (2 * self.index(), 2 * self.index() + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RobotModel {
    /// Total mass, kg.
    pub mass: f64,
    /// Body pitch inertia, kg·m².
    pub inertia_pitch: f64,
    pub thigh_length: f64,
    pub calf_length: f64,
    pub wheel_radius: f64,
    /// Wheel spin inertia, kg·m². The controller ignores it; the simulator
    /// integrates it.
    pub wheel_inertia: f64,
    pub body_length: f64,
    pub body_height: f64,
    /// Fore–aft distance from the CoM to each hip.
    pub hip_offset: f64,
    /// Lumped reflected inertia of each leg joint, kg·m².
    pub joint_inertia: f64,
    pub q_min: [f64; NUM_JOINTS],
    pub q_max: [f64; NUM_JOINTS],
    /// Actuator torque limit, N·m.
    pub torque_max: f64,
    /// CoM height of the nominal stand above the ground, m.
    pub nominal_height: f64,
}

const THIGH_LIMIT: f64 = 2.4;
const CALF_MIN: f64 = 0.2;
const CALF_MAX: f64 = 2.7;

impl Default for RobotModel {
    fn default() -> Self {
        let q_min = [-THIGH_LIMIT, CALF_MIN, -THIGH_LIMIT, CALF_MIN, -THIGH_LIMIT, CALF_MIN, -THIGH_LIMIT, CALF_MIN];
        let q_max = [THIGH_LIMIT, CALF_MAX, THIGH_LIMIT, CALF_MAX, THIGH_LIMIT, CALF_MAX, THIGH_LIMIT, CALF_MAX];
        Self {
            mass: 11.84,
            inertia_pitch: 0.0535,
            thigh_length: 0.2,
            calf_length: 0.2,
            wheel_radius: 0.05,
            wheel_inertia: 1e-3,
            body_length: 0.247,
            body_height: 0.114,
            hip_offset: 0.1235,
            joint_inertia: 0.05,
            q_min,
            q_max,
            torque_max: 33.5,
            nominal_height: 0.33,
        }
    }
}

impl RobotModel {
    pub fn validate(&self) -> crate::Result<()> {
        use crate::error::invalid;
        let positive = [
            ("mass", self.mass),
            ("inertia_pitch", self.inertia_pitch),
            ("thigh_length", self.thigh_length),
            ("calf_length", self.calf_length),
            ("wheel_radius", self.wheel_radius),
            ("body_length", self.body_length),
            ("body_height", self.body_height),
            ("joint_inertia", self.joint_inertia),
            ("torque_max", self.torque_max),
            ("nominal_height", self.nominal_height),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(alloc::format!("robot.{name} must be positive")));
            }
        }
        if !(self.wheel_inertia >= 0.0) || !(self.hip_offset >= 0.0) {
            return Err(invalid("robot.wheel_inertia and robot.hip_offset must be non-negative"));
        }
        for j in 0..NUM_JOINTS {
            if !(self.q_min[j] < self.q_max[j]) {
                return Err(invalid(alloc::format!("robot.q_min[{j}] must be below robot.q_max[{j}]")));
            }
        }
        let reach = self.thigh_length + self.calf_length;
        if self.nominal_height - self.wheel_radius >= reach {
            return Err(invalid("robot.nominal_height is beyond leg reach"));
        }
        Ok(())
    }

    /// Distance between front and rear wheel centers in the nominal stand.
    pub fn wheelbase(&self) -> f64 {
        2.0 * self.hip_offset
    }

    /// Hip position in the body frame.
    pub fn hip_body(&self, leg: Leg) -> Vec2 {
        let s = if leg.is_front() { 1.0 } else { -1.0 };
        vec2(s * self.hip_offset, 0.0)
    }

    /// Knee-back joint angles placing the wheel center straight under the hip
    /// at `depth` below it.
    pub fn crouch_angles(&self, depth: f64) -> (f64, f64) {
        let (l1, l2) = (self.thigh_length, self.calf_length);
        let d = math::clamp(depth, 1e-6, l1 + l2 - 1e-9);
        // law of cosines for the knee, then the thigh sweeps back
        let cos_knee = (l1 * l1 + l2 * l2 - d * d) / (2.0 * l1 * l2);
        let calf = core::f64::consts::PI - math::acos(math::clamp(cos_knee, -1.0, 1.0));
        let alpha = math::acos(math::clamp((l1 * l1 + d * d - l2 * l2) / (2.0 * l1 * d), -1.0, 1.0));
        (-alpha, calf)
    }

    /// Nominal standing pose with the CoM above `(x, ground_z)`.
    pub fn nominal_pose(&self, x: f64, ground_z: f64) -> Pose {
        let (t, c) = self.crouch_angles(self.nominal_height - self.wheel_radius);
        Pose { x, z: ground_z + self.nominal_height, theta: 0.0, q: [t, c, t, c, t, c, t, c] }
    }
}

/// Body position, pitch and leg joint angles.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Pose {
    pub x: f64,
    pub z: f64,
    pub theta: f64,
    pub q: [f64; NUM_JOINTS],
}

impl Pose {
    pub fn com(&self) -> Vec2 {
        vec2(self.x, self.z)
    }

    pub fn leg_angles(&self, leg: Leg) -> (f64, f64) {
        let (a, b) = leg.joints();
        (self.q[a], self.q[b])
    }

    pub fn within_limits(&self, model: &RobotModel) -> bool {
        (0..NUM_JOINTS).all(|j| self.q[j] >= model.q_min[j] && self.q[j] <= model.q_max[j])
    }
}

/// World positions along one leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegGeometry {
    pub hip: Vec2,
    pub knee: Vec2,
    pub wheel_center: Vec2,
}

/// Unit link direction for an absolute (body-frame) link angle.
#[inline]
fn link_dir(angle: f64) -> Vec2 {
    vec2(math::sin(angle), -math::cos(angle))
}

pub fn leg_fk(model: &RobotModel, leg: Leg, pose: &Pose) -> LegGeometry {
    let (qt, qc) = pose.leg_angles(leg);
    let r = rot(pose.theta);
    let hip = pose.com() + r * model.hip_body(leg);
    let knee = hip + r * (link_dir(qt) * model.thigh_length);
    let wheel_center = knee + r * (link_dir(qt + qc) * model.calf_length);
    LegGeometry { hip, knee, wheel_center }
}

/// World-frame Jacobian of the wheel center with respect to (thigh, calf).
pub fn leg_jacobian(model: &RobotModel, q_thigh: f64, q_calf: f64, theta: f64) -> Matrix2<f64> {
    let (l1, l2) = (model.thigh_length, model.calf_length);
    let (c1, s1) = (math::cos(q_thigh), math::sin(q_thigh));
    let (c12, s12) = (math::cos(q_thigh + q_calf), math::sin(q_thigh + q_calf));
    let body = Matrix2::new(l1 * c1 + l2 * c12, l2 * c12, l1 * s1 + l2 * s12, l2 * s12);
    rot(theta) * body
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudPoint {
    TrunkCorner,
    TrunkEdge,
    TrunkCenter,
    Hip(Leg),
    Knee(Leg),
    CalfMid(Leg),
    WheelBottom(Leg),
}

impl CloudPoint {
    pub fn is_wheel(self) -> bool {
        matches!(self, CloudPoint::WheelBottom(_))
    }
}

/// Layout of the 25-point collision cloud: 4 trunk corners, 4 trunk edge
/// midpoints (front, bottom, rear, top), the trunk center, then hip, knee,
/// calf midpoint and wheel bottom for each leg in [`Leg::ALL`] order.
pub fn cloud_layout() -> [CloudPoint; CLOUD_SIZE] {
    let mut out = [CloudPoint::TrunkCenter; CLOUD_SIZE];
    for slot in out.iter_mut().take(4) {
        *slot = CloudPoint::TrunkCorner;
    }
    for slot in out.iter_mut().skip(4).take(4) {
        *slot = CloudPoint::TrunkEdge;
    }
    for (i, leg) in Leg::ALL.iter().enumerate() {
        let base = 9 + 4 * i;
        out[base] = CloudPoint::Hip(*leg);
        out[base + 1] = CloudPoint::Knee(*leg);
        out[base + 2] = CloudPoint::CalfMid(*leg);
        out[base + 3] = CloudPoint::WheelBottom(*leg);
    }
    out
}

pub fn collision_cloud(model: &RobotModel, pose: &Pose) -> [Vec2; CLOUD_SIZE] {
    let (hl, hh) = (0.5 * model.body_length, 0.5 * model.body_height);
    let trunk = [
        vec2(hl, hh),
        vec2(hl, -hh),
        vec2(-hl, -hh),
        vec2(-hl, hh),
        vec2(hl, 0.0),
        vec2(0.0, -hh),
        vec2(-hl, 0.0),
        vec2(0.0, hh),
        vec2(0.0, 0.0),
    ];
    let r = rot(pose.theta);
    let mut out = [Vec2::zeros(); CLOUD_SIZE];
    for (slot, p) in out.iter_mut().zip(trunk.iter()) {
        *slot = pose.com() + r * p;
    }
    for (i, leg) in Leg::ALL.iter().enumerate() {
        let g = leg_fk(model, *leg, pose);
        let base = 9 + 4 * i;
        out[base] = g.hip;
        out[base + 1] = g.knee;
        out[base + 2] = (g.knee + g.wheel_center) * 0.5;
        out[base + 3] = g.wheel_center - vec2(0.0, model.wheel_radius);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::Terrain;
    use proptest::prelude::*;

    fn pose(x: f64, z: f64, theta: f64, qt: f64, qc: f64) -> Pose {
        Pose { x, z, theta, q: [qt, qc, qt, qc, qt, qc, qt, qc] }
    }

    #[test]
    fn straight_down_leg() {
        let m = RobotModel::default();
        let g = leg_fk(&m, Leg::FrontLeft, &pose(0.0, 0.45, 0.0, 0.0, 0.0));
        assert!((g.wheel_center - vec2(0.1235, 0.05)).norm() < 1e-12);
        let g = leg_fk(&m, Leg::RearRight, &pose(0.0, 0.45, 0.0, 0.0, 0.0));
        assert!((g.wheel_center - vec2(-0.1235, 0.05)).norm() < 1e-12);
    }

    #[test]
    fn horizontal_leg() {
        let m = RobotModel::default();
        let p = pose(0.0, 0.45, 0.0, core::f64::consts::FRAC_PI_2, 0.0);
        let g = leg_fk(&m, Leg::FrontLeft, &p);
        assert!((g.wheel_center - (g.hip + vec2(0.4, 0.0))).norm() < 1e-12);
    }

    #[test]
    fn pitched_bent_leg_matches_hand_trig() {
        let m = RobotModel::default();
        let (th, qt, qc) = (0.3f64, 0.4f64, -0.9f64);
        let g = leg_fk(&m, Leg::FrontLeft, &pose(0.0, 0.4, th, qt, qc));
        // absolute link angles measured from straight down, counter-clockwise
        let hip = (0.1235 * th.cos(), 0.4 + 0.1235 * th.sin());
        let a1 = th + qt;
        let a2 = th + qt + qc;
        let wx = hip.0 + 0.2 * a1.sin() + 0.2 * a2.sin();
        let wz = hip.1 - 0.2 * a1.cos() - 0.2 * a2.cos();
        assert!((g.wheel_center.x - wx).abs() < 1e-12);
        assert!((g.wheel_center.y - wz).abs() < 1e-12);
    }

    #[test]
    fn jacobian_straight_leg() {
        let m = RobotModel::default();
        let j = leg_jacobian(&m, 0.0, 0.0, 0.0);
        assert!((j - Matrix2::new(0.4, 0.2, 0.0, 0.0)).norm() < 1e-15);
        assert!(leg_jacobian(&m, 0.7, 0.0, 0.2).determinant().abs() < 1e-15);
    }

    fn fd_jacobian(m: &RobotModel, qt: f64, qc: f64, th: f64) -> Matrix2<f64> {
        let h = 1e-6;
        let f = |a: f64, b: f64| leg_fk(m, Leg::FrontLeft, &pose(0.0, 0.0, th, a, b)).wheel_center;
        let c0 = (f(qt + h, qc) - f(qt - h, qc)) / (2.0 * h);
        let c1 = (f(qt, qc + h) - f(qt, qc - h)) / (2.0 * h);
        Matrix2::from_columns(&[c0, c1])
    }

    proptest! {
        #[test]
        fn jacobian_matches_finite_differences(qt in -3.0f64..3.0, qc in -3.0f64..3.0, th in -1.5f64..1.5) {
            let m = RobotModel::default();
            let j = leg_jacobian(&m, qt, qc, th);
            let fd = fd_jacobian(&m, qt, qc, th);
            prop_assert!((j - fd).norm() / j.norm().max(1.0) < 1e-5);
        }

        #[test]
        fn link_lengths_preserved(x in -1.0f64..1.0, z in 0.0f64..1.0, th in -1.5f64..1.5, qt in -3.0f64..3.0, qc in -3.0f64..3.0) {
            let m = RobotModel::default();
            for leg in Leg::ALL {
                let g = leg_fk(&m, leg, &pose(x, z, th, qt, qc));
                prop_assert!(((g.knee - g.hip).norm() - 0.2).abs() < 1e-9);
                prop_assert!(((g.wheel_center - g.knee).norm() - 0.2).abs() < 1e-9);
            }
        }

        #[test]
        fn cloud_is_lipschitz(th in -1.0f64..1.0, qt in -2.0f64..2.0, qc in 0.2f64..2.6,
                              d in prop::array::uniform11(-1e-3f64..1e-3)) {
            let m = RobotModel::default();
            let p0 = pose(0.3, 0.4, th, qt, qc);
            let mut p1 = p0;
            p1.x += d[0];
            p1.z += d[1];
            p1.theta += d[2];
            for j in 0..NUM_JOINTS {
                p1.q[j] += d[3 + j];
            }
            let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            let lip = m.body_length + m.thigh_length + m.calf_length + 1.0;
            let a = collision_cloud(&m, &p0);
            let b = collision_cloud(&m, &p1);
            prop_assert_eq!(a.len(), CLOUD_SIZE);
            for (pa, pb) in a.iter().zip(b.iter()) {
                prop_assert!((pa - pb).norm() <= lip * dn + 1e-12);
            }
        }
    }

    #[test]
    fn nominal_stand_touches_flat_ground() {
        let m = RobotModel::default();
        let p = m.nominal_pose(1.0, 0.0);
        let flat = Terrain::flat(-1.0, 3.0, 0.0).unwrap();
        let cloud = collision_cloud(&m, &p);
        let layout = cloud_layout();
        let mut min = f64::INFINITY;
        for (pt, kind) in cloud.iter().zip(layout.iter()) {
            let c = flat.clearance(*pt).unwrap();
            if kind.is_wheel() {
                assert!(c.abs() < 1e-12);
            } else {
                assert!(c > 0.05);
            }
            min = min.min(c);
        }
        assert!(min.abs() < 1e-12);
        for leg in Leg::ALL {
            let g = leg_fk(&m, leg, &p);
            assert!((g.wheel_center.x - g.hip.x).abs() < 1e-12);
            assert!(g.knee.x < g.hip.x, "knees point backward");
        }
        assert!(p.within_limits(&m));
    }

    #[test]
    fn calf_driven_into_ground_is_detected() {
        let m = RobotModel::default();
        let mut p = m.nominal_pose(1.0, 0.0);
        p.z = 0.12;
        let flat = Terrain::flat(-1.0, 3.0, 0.0).unwrap();
        let cloud = collision_cloud(&m, &p);
        assert!(cloud.iter().any(|pt| flat.clearance(*pt).unwrap() < 0.0));
    }

    #[test]
    fn default_model_is_valid() {
        RobotModel::default().validate().unwrap();
        let mut m = RobotModel::default();
        m.q_min[3] = 3.0;
        assert!(m.validate().is_err());
    }
}
