//! QP force allocation: PD desired dynamics, contact-force QP and the
//! force-to-joint-torque map.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix2, Vector3};

use crate::dynamics::{contact_to_world, DynamicsMatrices, Vec8};
use crate::error::{invalid, Result};
use crate::kinematics::{RobotModel, NUM_JOINTS, NUM_LEGS};
use crate::math::Vec2;
use crate::GRAVITY;

pub use crate::qp::{solve_qp, QpError, QpSolution};

/// Smallest diagonal regularization used when both `alpha` and `beta` are zero.
pub const TIKHONOV_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct BalanceConfig {
    /// Diagonal of `K_pp`, 1/s².
    pub k_pp: [f64; 2],
    /// Diagonal of `K_dp`, 1/s.
    pub k_dp: [f64; 2],
    pub k_p_omega: f64,
    pub k_d_omega: f64,
    /// Diagonal of the wrench weight `S`.
    pub s: [f64; 3],
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            k_pp: [50.0, 80.0],
            k_dp: [10.0, 15.0],
            k_p_omega: 60.0,
            k_d_omega: 5.0,
            s: [10.0, 10.0, 20.0],
            alpha: 1e-3,
            beta: 1e-2,
            mu: 0.6,
            f_min: 0.0,
            f_max: 150.0,
        }
    }
}

impl BalanceConfig {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("k_pp[0]", self.k_pp[0]),
            ("k_pp[1]", self.k_pp[1]),
            ("k_dp[0]", self.k_dp[0]),
            ("k_dp[1]", self.k_dp[1]),
            ("k_p_omega", self.k_p_omega),
            ("k_d_omega", self.k_d_omega),
            ("s[0]", self.s[0]),
            ("s[1]", self.s[1]),
            ("s[2]", self.s[2]),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("f_min", self.f_min),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(alloc::format!("controller.balance.{name} must be a non-negative number")));
            }
        }
        if !(self.mu > 0.0) {
            return Err(invalid("controller.balance.mu must be positive"));
        }
        if !(self.f_max > self.f_min) {
            return Err(invalid("controller.balance.f_max must exceed f_min"));
        }
        Ok(())
    }
}

/// Measured trunk state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BodyState {
    pub p: Vec2,
    pub v: Vec2,
    pub theta: f64,
    pub omega: f64,
}

/// Desired trunk motion.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BodyCommand {
    pub p: Vec2,
    pub v: Vec2,
    pub theta: f64,
    pub omega: f64,
}

pub fn desired_accel(state: &BodyState, cmd: &BodyCommand, cfg: &BalanceConfig) -> (Vec2, f64) {
    let ep = cmd.p - state.p;
    let ev = cmd.v - state.v;
    let p_ddot = Vec2::new(cfg.k_pp[0] * ep.x + cfg.k_dp[0] * ev.x, cfg.k_pp[1] * ep.y + cfg.k_dp[1] * ev.y);
    let omega_dot = cfg.k_p_omega * (cmd.theta - state.theta) + cfg.k_d_omega * (cmd.omega - state.omega);
    (p_ddot, omega_dot)
}

/// `b_des = [m (p̈ + g); I ω̇]`.
pub fn desired_wrench(model: &RobotModel, p_ddot: Vec2, omega_dot: f64) -> Vector3<f64> {
    Vector3::new(model.mass * p_ddot.x, model.mass * (p_ddot.y + GRAVITY), model.inertia_pitch * omega_dot)
}

/// Dense QP over the forces of the legs in contact.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
    /// Leg index of each contact block, in variable order.
    pub legs: Vec<usize>,
}

impl QpProblem {
    /// Scatters a reduced solution back into the full 8-vector.
    pub fn expand(&self, x: &DVector<f64>) -> Vec8 {
        let mut out = Vec8::zeros();
        for (k, &leg) in self.legs.iter().enumerate() {
            out[2 * leg] = x[2 * k];
            out[2 * leg + 1] = x[2 * k + 1];
        }
        out
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }
}

/// Friction cone and normal-force box rows for one contact, `C F ≤ d`.
fn contact_rows(c: &mut DMatrix<f64>, d: &mut DVector<f64>, row: usize, col: usize, cfg: &BalanceConfig) {
    // -F_n ≤ -F_min
    c[(row, col + 1)] = -1.0;
    d[row] = -cfg.f_min;
    // F_n ≤ F_max
    c[(row + 1, col + 1)] = 1.0;
    d[row + 1] = cfg.f_max;
    // ±F_t - μ F_n ≤ 0
    c[(row + 2, col)] = 1.0;
    c[(row + 2, col + 1)] = -cfg.mu;
    c[(row + 3, col)] = -1.0;
    c[(row + 3, col + 1)] = -cfg.mu;
}

/// Assembles the balance QP. Legs out of contact are eliminated.
pub fn build_balance_qp(dyn_: &DynamicsMatrices, b_des: &Vector3<f64>, cfg: &BalanceConfig, f_prev: &Vec8) -> QpProblem {
    let legs: Vec<usize> = (0..NUM_LEGS).filter(|&i| dyn_.in_contact[i]).collect();
    let n = 2 * legs.len();
    let mut a = DMatrix::zeros(3, n);
    let mut prev = DVector::zeros(n);
    for (k, &leg) in legs.iter().enumerate() {
        for j in 0..2 {
            for r in 0..3 {
                a[(r, 2 * k + j)] = dyn_.a_c[(r, 2 * leg + j)];
            }
            prev[2 * k + j] = f_prev[2 * leg + j];
        }
    }
    let wheel = dyn_.a_wheel * dyn_.f_wheel;
    let e = DVector::from_fn(3, |r, _| b_des[r] - wheel[r]);
    let s = DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.s));
    let reg = (cfg.alpha + cfg.beta).max(TIKHONOV_FLOOR);
    let at_s = a.transpose() * &s;
    let mut h = (&at_s * &a) * 2.0;
    for i in 0..n {
        h[(i, i)] += 2.0 * reg;
    }
    let f = -(at_s * e + prev * cfg.beta) * 2.0;

    let mut c = DMatrix::zeros(4 * legs.len(), n);
    let mut d = DVector::zeros(4 * legs.len());
    for k in 0..legs.len() {
        contact_rows(&mut c, &mut d, 4 * k, 2 * k, cfg);
    }
    QpProblem { h, f, c, d, legs }
}

/// Optimal contact forces in local (tangent, normal) frames.
pub fn balance_forces(dyn_: &DynamicsMatrices, b_des: &Vector3<f64>, cfg: &BalanceConfig, f_prev: &Vec8) -> Result<Vec8> {
    let qp = build_balance_qp(dyn_, b_des, cfg, f_prev);
    if qp.legs.is_empty() {
        return Ok(Vec8::zeros());
    }
    let sol = solve_qp(&qp.h, &qp.f, &qp.c, &qp.d)?;
    Ok(qp.expand(&sol.x))
}

/// Ground reaction force on each wheel in world coordinates.
pub fn grf_world(f_local: &Vec8, gammas: &[f64; NUM_LEGS]) -> [Vec2; NUM_LEGS] {
    core::array::from_fn(|i| contact_to_world(gammas[i]) * Vec2::new(f_local[2 * i], f_local[2 * i + 1]))
}

/// `τ = Jᵀ F` per leg, where `F` is the world force the wheel applies to the
/// ground (the negated ground reaction).
pub fn forces_to_torques(f_world: &[Vec2; NUM_LEGS], jacobians: &[Matrix2<f64>; NUM_LEGS]) -> [f64; NUM_JOINTS] {
    let mut tau = [0.0; NUM_JOINTS];
    for i in 0..NUM_LEGS {
        let t = jacobians[i].transpose() * f_world[i];
        tau[2 * i] = t.x;
        tau[2 * i + 1] = t.y;
    }
    tau
}

/// Holds the previous optimum for the smoothing term.
#[derive(Debug, Clone)]
pub struct BalanceController {
    pub cfg: BalanceConfig,
    f_prev: Vec8,
}

impl BalanceController {
    pub fn new(cfg: BalanceConfig) -> Self {
        Self { cfg, f_prev: Vec8::zeros() }
    }

    pub fn previous(&self) -> &Vec8 {
        &self.f_prev
    }

    pub fn update(&mut self, dyn_: &DynamicsMatrices, b_des: &Vector3<f64>) -> Result<Vec8> {
        let f = balance_forces(dyn_, b_des, &self.cfg, &self.f_prev)?;
        self.f_prev = f;
        Ok(f)
    }
}
