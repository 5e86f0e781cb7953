//! Wheel-speed feedback for forward velocity and yaw rate.

use crate::error::{invalid, Result};
use crate::kinematics::{Leg, NUM_LEGS};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RollingConfig {
    /// Wheel-speed gain, N·m·s/rad.
    pub k_d_wheel: f64,
    /// Yaw-rate gain, (rad/s of wheel) per (rad/s of yaw).
    pub k_d_yaw: f64,
    pub v_max: f64,
    pub tau_wheel_max: f64,
}

impl Default for RollingConfig {
    fn default() -> Self {
        Self { k_d_wheel: 0.3, k_d_yaw: 2.0, v_max: 1.5, tau_wheel_max: 33.5 }
    }
}

impl RollingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k_d_wheel", self.k_d_wheel), ("k_d_yaw", self.k_d_yaw)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(alloc::format!("controller.rolling.{name} must be non-negative")));
            }
        }
        if !(self.v_max > 0.0) || !(self.tau_wheel_max > 0.0) {
            return Err(invalid("controller.rolling.v_max and tau_wheel_max must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RollingCommand {
    pub v_x_des: f64,
    pub yaw_rate_des: f64,
}

fn is_left(leg: Leg) -> bool {
    matches!(leg, Leg::FrontLeft | Leg::RearLeft)
}

/// Desired wheel spin rates in [`Leg::ALL`] order. The forward command is
/// clipped to `±v_max`.
pub fn wheel_speed_command(cmd: &RollingCommand, yaw_rate_meas: f64, radius: f64, cfg: &RollingConfig) -> Result<[f64; NUM_LEGS]> {
    if !(radius > 0.0) {
        return Err(invalid("wheel radius must be positive"));
    }
    let v = cmd.v_x_des.clamp(-cfg.v_max, cfg.v_max);
    let base = v / radius;
    let delta = cfg.k_d_yaw * (cmd.yaw_rate_des - yaw_rate_meas);
    Ok(core::array::from_fn(|i| if is_left(Leg::ALL[i]) { base - 0.5 * delta } else { base + 0.5 * delta }))
}

pub fn wheel_torque(qd_des: f64, qd_meas: f64, k_d_wheel: f64, tau_max: f64) -> f64 {
    (k_d_wheel * (qd_des - qd_meas)).clamp(-tau_max, tau_max)
}
