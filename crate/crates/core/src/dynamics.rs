//! Linear rigid-body-with-wheels model used by the balance controller.
//!
//! Contact forces `F` are expressed per contact in the local (tangent, normal)
//! frame of the terrain under the wheel. Slope angles are counter-clockwise
//! positive (uphill in +x) and pitch is nose-up positive, so the local-to-world
//! map of a contact is `rot_gamma(γ)ᵀ` and the pitch moment of a world force
//! `f` applied at lever arm `r` is `r_x f_z - r_z f_x`.

use nalgebra::{Matrix2, SMatrix, SVector, Vector3};

use crate::error::{invalid, Result};
use crate::kinematics::{RobotModel, NUM_LEGS};
use crate::math::{self, Vec2};
use crate::GRAVITY;

pub type Mat3x8 = SMatrix<f64, 3, 8>;
pub type Vec8 = SVector<f64, 8>;

/// Slope rotation `[[cos γ, sin γ], [-sin γ, cos γ]]`.
pub fn rot_gamma(gamma: f64) -> Matrix2<f64> {
    let (s, c) = (math::sin(gamma), math::cos(gamma));
    Matrix2::new(c, s, -s, c)
}

/// Maps a local (tangent, normal) force at a contact with slope `gamma` to world.
pub fn contact_to_world(gamma: f64) -> Matrix2<f64> {
    rot_gamma(gamma).transpose()
}

/// Wheel traction force under the massless-wheel approximation.
pub fn traction_force(tau_wheel: f64, radius: f64) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(invalid("wheel radius must be positive"));
    }
    Ok(tau_wheel / radius)
}

/// Per-leg contact geometry for assembling the dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegContact {
    /// CoM to wheel center.
    pub r_c: Vec2,
    /// CoM to ground contact point.
    pub r_wheel: Vec2,
    pub gamma: f64,
    pub in_contact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsMatrices {
    pub a_c: Mat3x8,
    pub a_wheel: Mat3x8,
    /// Traction forces in local frames: tangent slots hold `τ/R`, normal slots 0.
    pub f_wheel: Vec8,
    pub in_contact: [bool; NUM_LEGS],
}

impl DynamicsMatrices {
    /// Net wrench `A_c F + A_wheel F_wheel`.
    pub fn wrench(&self, f: &Vec8) -> Vector3<f64> {
        self.a_c * f + self.a_wheel * self.f_wheel
    }
}

fn block(r: Vec2, gamma: f64) -> SMatrix<f64, 3, 2> {
    let to_world = contact_to_world(gamma);
    let moment = nalgebra::RowVector2::new(-r.y, r.x) * to_world;
    let mut b = SMatrix::<f64, 3, 2>::zeros();
    b.fixed_view_mut::<2, 2>(0, 0).copy_from(&to_world);
    b.fixed_view_mut::<1, 2>(2, 0).copy_from(&moment);
    b
}

pub fn assemble_dynamics(model: &RobotModel, contacts: &[LegContact; NUM_LEGS], tau_wheels: &[f64; NUM_LEGS]) -> DynamicsMatrices {
    let mut a_c = Mat3x8::zeros();
    let mut a_wheel = Mat3x8::zeros();
    let mut f_wheel = Vec8::zeros();
    for (i, c) in contacts.iter().enumerate() {
        if !c.in_contact {
            continue;
        }
        a_c.fixed_view_mut::<3, 2>(0, 2 * i).copy_from(&block(c.r_c, c.gamma));
        a_wheel.fixed_view_mut::<3, 2>(0, 2 * i).copy_from(&block(c.r_wheel, c.gamma));
        f_wheel[2 * i] = tau_wheels[i] / model.wheel_radius;
    }
    let in_contact = core::array::from_fn(|i| contacts[i].in_contact);
    DynamicsMatrices { a_c, a_wheel, f_wheel, in_contact }
}

/// Wrench vector `[m ẍ, m (z̈ + g), I ω̇]`.
pub fn rhs_b(model: &RobotModel, p_ddot: Vec2, omega_dot: f64) -> Vector3<f64> {
    Vector3::new(model.mass * p_ddot.x, model.mass * (p_ddot.y + GRAVITY), model.inertia_pitch * omega_dot)
}
