//! Collision-free pose optimization and pose sequences for stairs and ramps.
//!
//! The planar model mirrors left and right legs, so the solver works on seven
//! variables `(x, z, θ, q_front_thigh, q_front_calf, q_rear_thigh,
//! q_rear_calf)` and expands them to the full eight-joint pose. Terrain
//! clearance inside the solver uses signed Euclidean distance, which has the
//! same sign as the vertical clearance but stays continuous across risers.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::error::{invalid, Result};
use crate::kinematics::{collision_cloud, leg_fk, Leg, Pose, RobotModel, CLOUD_SIZE, NUM_JOINTS, NUM_LEGS};
use crate::math::{self, vec2, Vec2};
use crate::qp::solve_qp_eq;
use crate::terrain::{Step, Terrain};

const NV: usize = 7;
/// Cloud indices the solver constrains: the trunk plus knee, calf midpoint and
/// wheel bottom of the front-left and rear-left legs. Hips coincide with the
/// front and rear trunk edge midpoints and the right legs mirror the left.
const SOLVER_CLOUD: [usize; 15] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 10, 11, 12, 18, 19, 20];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoseError {
    #[error("{role}: infeasible (max violation {violation:.3e})")]
    Infeasible { role: String, violation: f64 },
    #[error("{role}: no convergence after {iterations} iterations (max violation {violation:.3e})")]
    NonConvergence { role: String, iterations: usize, violation: f64, best: Pose },
}

impl PoseError {
    pub fn role(&self) -> &str {
        match self {
            PoseError::Infeasible { role, .. } | PoseError::NonConvergence { role, .. } => role,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PoseOptConfig {
    /// Diagonal of `Q` for the (x, z) location error.
    pub q_weight: [f64; 2],
    /// Weight pulling the pitch toward the terrain-derived guess; keeps the solution unique.
    pub pitch_weight: f64,
    /// Minimum horizontal distance from the CoM to either wheel contact, m.
    pub support_margin: f64,
    /// Symmetric pitch bound, rad.
    pub pitch_limit: f64,
    pub max_iterations: usize,
    pub fd_step: f64,
    /// Pose 1 puts the front wheels on the riser top edge instead of the base.
    pub corner_contact: bool,
    pub pose2_margin: f64,
    /// Pose 2 reference height above mid-riser, as a fraction of the nominal height.
    pub pose2_height_fraction: f64,
    /// Initial pose distance from the terrain start.
    pub start_offset: f64,
    /// Final pose distance past the top of the last step.
    pub final_offset: f64,
    pub contact_tol: f64,
    pub inequality_tol: f64,
}

impl Default for PoseOptConfig {
    fn default() -> Self {
        Self {
            q_weight: [100.0, 1.0],
            pitch_weight: 10.0,
            support_margin: 0.03,
            pitch_limit: math::deg(75.0),
            max_iterations: 200,
            fd_step: 1e-6,
            corner_contact: false,
            pose2_margin: 0.02,
            pose2_height_fraction: 1.0,
            start_offset: 0.3,
            final_offset: 0.35,
            contact_tol: 1e-4,
            inequality_tol: 1e-6,
        }
    }
}

impl PoseOptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q_weight[0] > 0.0 && self.q_weight[1] > 0.0) {
            return Err(invalid("controller.pose_opt.q_weight entries must be positive"));
        }
        if !(self.pitch_weight >= 0.0) {
            return Err(invalid("controller.pose_opt.pitch_weight must be non-negative"));
        }
        if !(self.pitch_limit > 0.0 && self.pitch_limit < core::f64::consts::FRAC_PI_2) {
            return Err(invalid("controller.pose_opt.pitch_limit must lie in (0, pi/2)"));
        }
        if self.max_iterations == 0 || !(self.fd_step > 0.0) {
            return Err(invalid("controller.pose_opt.max_iterations and fd_step must be positive"));
        }
        if !(self.contact_tol > 0.0) || !(self.inequality_tol >= 0.0) {
            return Err(invalid("controller.pose_opt tolerances must be positive"));
        }
        Ok(())
    }
}

/// How a planar leg's wheel must touch the terrain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContactTarget {
    Free,
    Surface,
    /// Wheel rim on a specific terrain vertex.
    Corner(Vec2),
    /// Wheel rim on one terrain segment, given by its end points.
    Segment(Vec2, Vec2),
}

impl ContactTarget {
    pub fn in_contact(self) -> bool {
        !matches!(self, ContactTarget::Free)
    }
}

#[derive(Debug, Clone)]
pub struct PoseNlp<'a> {
    pub label: String,
    pub terrain: &'a Terrain,
    pub p_ref: Vec2,
    pub q_weight: [f64; 2],
    pub pitch_weight: f64,
    pub pitch_ref: f64,
    pub support_margin: f64,
    pub front: ContactTarget,
    pub rear: ContactTarget,
    pub pitch_bounds: (f64, f64),
    pub initial: Pose,
}

impl<'a> PoseNlp<'a> {
    pub fn new(label: &str, terrain: &'a Terrain, p_ref: Vec2, initial: Pose, cfg: &PoseOptConfig) -> Self {
        Self {
            label: label.to_string(),
            terrain,
            p_ref,
            q_weight: cfg.q_weight,
            pitch_weight: cfg.pitch_weight,
            pitch_ref: 0.0,
            support_margin: cfg.support_margin,
            front: ContactTarget::Surface,
            rear: ContactTarget::Surface,
            pitch_bounds: (-cfg.pitch_limit, cfg.pitch_limit),
            initial,
        }
    }

    fn target(&self, leg: Leg) -> ContactTarget {
        if leg.is_front() {
            self.front
        } else {
            self.rear
        }
    }

    pub fn cost(&self, pose: &Pose) -> f64 {
        let e = self.p_ref - pose.com();
        let et = pose.theta - self.pitch_ref;
        self.q_weight[0] * e.x * e.x + self.q_weight[1] * e.y * e.y + self.pitch_weight * et * et
    }
}

/// Constraint residuals of a pose, evaluated directly from the definitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    /// Wheel-to-terrain distance minus radius for wheels that must touch.
    pub contact: [Option<f64>; NUM_LEGS],
    /// Rear hip x minus rear wheel contact x (≥ 0).
    pub support: f64,
    /// Vertical clearance of each cloud point (≥ 0).
    pub clearance: [f64; CLOUD_SIZE],
    /// `[q − q_min; q_max − q]` (≥ 0).
    pub joint: [f64; 2 * NUM_JOINTS],
    /// `[θ − θ_min, θ_max − θ]` (≥ 0).
    pub pitch: [f64; 2],
    /// CoM x inside the wheel contact span, shrunk by the margin (≥ 0).
    pub balance: [f64; 2],
}

impl Residuals {
    pub fn max_contact_error(&self) -> f64 {
        self.contact.iter().flatten().fold(0.0f64, |m, r| m.max(math::abs(*r)))
    }

    /// Smallest inequality residual.
    pub fn min_inequality(&self) -> f64 {
        let mut m = self.support;
        for v in self.clearance.iter().chain(self.joint.iter()).chain(self.pitch.iter()).chain(self.balance.iter()) {
            m = m.min(*v);
        }
        m
    }

    pub fn max_violation(&self) -> f64 {
        self.max_contact_error().max(-self.min_inequality()).max(0.0)
    }

    pub fn satisfied(&self, contact_tol: f64, inequality_tol: f64) -> bool {
        self.max_contact_error() <= contact_tol && self.min_inequality() >= -inequality_tol
    }
}

/// Ground contact of the rear wheel: its closest point on a load-bearing
/// segment, so a wheel pressed into a riser base still reports the tread.
fn rear_contact_x(terrain: &Terrain, model: &RobotModel, pose: &Pose) -> f64 {
    terrain.support_point(leg_fk(model, Leg::RearLeft, pose).wheel_center).x
}

fn balance_residuals(terrain: &Terrain, model: &RobotModel, pose: &Pose, margin: f64) -> [f64; 2] {
    let front = terrain.support_point(leg_fk(model, Leg::FrontLeft, pose).wheel_center).x;
    [pose.x - rear_contact_x(terrain, model, pose) - margin, front - pose.x - margin]
}

pub fn constraint_residuals(pose: &Pose, nlp: &PoseNlp<'_>, model: &RobotModel) -> Result<Residuals> {
    let t = nlp.terrain;
    let (min, max) = t.x_range();
    if !(pose.x >= min && pose.x <= max) {
        return Err(crate::Error::OutOfDomain { x: pose.x, min, max });
    }
    let contact = core::array::from_fn(|i| {
        let leg = Leg::ALL[i];
        nlp.target(leg).in_contact().then(|| {
            let c = leg_fk(model, leg, pose).wheel_center;
            t.distance(c) - model.wheel_radius
        })
    });
    let rear_hip = leg_fk(model, Leg::RearLeft, pose).hip;
    let support = rear_hip.x - rear_contact_x(t, model, pose);
    let cloud = collision_cloud(model, pose);
    let clearance = core::array::from_fn(|i| t.clearance_unchecked(cloud[i]));
    let joint = core::array::from_fn(|k| if k < NUM_JOINTS { pose.q[k] - model.q_min[k] } else { model.q_max[k - NUM_JOINTS] - pose.q[k - NUM_JOINTS] });
    let pitch = [pose.theta - nlp.pitch_bounds.0, nlp.pitch_bounds.1 - pose.theta];
    let balance = balance_residuals(t, model, pose, nlp.support_margin);
    Ok(Residuals { contact, support, clearance, joint, pitch, balance })
}

/// Per-solve diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub max_violation: f64,
    pub cost: f64,
    /// Merit before and after every accepted step, at the penalty used for it.
    pub merit_steps: Vec<(f64, f64)>,
    pub restarted: bool,
}

fn expand(y: &[f64; NV]) -> Pose {
    Pose { x: y[0], z: y[1], theta: y[2], q: [y[3], y[4], y[3], y[4], y[5], y[6], y[5], y[6]] }
}

fn reduce(p: &Pose) -> [f64; NV] {
    [p.x, p.z, p.theta, p.q[0], p.q[1], p.q[4], p.q[5]]
}

struct Problem<'a, 'b> {
    model: &'a RobotModel,
    nlp: &'a PoseNlp<'b>,
    lb: [f64; NV],
    ub: [f64; NV],
}

impl<'a, 'b> Problem<'a, 'b> {
    fn new(model: &'a RobotModel, nlp: &'a PoseNlp<'b>) -> Self {
        let (min, max) = nlp.terrain.x_range();
        let lb = [min, f64::NEG_INFINITY, nlp.pitch_bounds.0, model.q_min[0], model.q_min[1], model.q_min[4], model.q_min[5]];
        let ub = [max, f64::INFINITY, nlp.pitch_bounds.1, model.q_max[0], model.q_max[1], model.q_max[4], model.q_max[5]];
        Self { model, nlp, lb, ub }
    }

    fn signed_distance(&self, p: Vec2) -> f64 {
        let t = self.nlp.terrain;
        let d = t.distance(p);
        if t.clearance_unchecked(p) < 0.0 {
            -d
        } else {
            d
        }
    }

    fn cost(&self, y: &[f64; NV]) -> f64 {
        self.nlp.cost(&expand(y))
    }

    fn cost_grad(&self, y: &[f64; NV]) -> DVector<f64> {
        let w = self.nlp.q_weight;
        let mut g = DVector::zeros(NV);
        g[0] = -2.0 * w[0] * (self.nlp.p_ref.x - y[0]);
        g[1] = -2.0 * w[1] * (self.nlp.p_ref.y - y[1]);
        g[2] = 2.0 * self.nlp.pitch_weight * (y[2] - self.nlp.pitch_ref);
        g
    }

    /// Equalities `c_e(y) = 0` and inequalities `c_i(y) ≥ 0`.
    fn constraints(&self, y: &[f64; NV]) -> (Vec<f64>, Vec<f64>) {
        let pose = expand(y);
        let r = self.model.wheel_radius;
        let mut eq = Vec::with_capacity(2);
        let mut ineq = Vec::with_capacity(3 + SOLVER_CLOUD.len());
        for leg in [Leg::FrontLeft, Leg::RearLeft] {
            let center = leg_fk(self.model, leg, &pose).wheel_center;
            let clear = self.signed_distance(center) - r;
            match self.nlp.target(leg) {
                ContactTarget::Free => {}
                ContactTarget::Surface => eq.push(clear),
                ContactTarget::Corner(v) => eq.push(math::norm(center - v) - r),
                ContactTarget::Segment(a, b) => {
                    eq.push(segment_distance(center, a, b) - r);
                    // keep the wheel over the segment rather than on its end points
                    let u = (b - a) / math::norm(b - a);
                    ineq.push((center - a).dot(&u));
                    ineq.push((b - center).dot(&u));
                }
            }
            ineq.push(clear);
        }
        let g = leg_fk(self.model, Leg::RearLeft, &pose);
        ineq.push(g.hip.x - self.nlp.terrain.support_point(g.wheel_center).x);
        ineq.extend(balance_residuals(self.nlp.terrain, self.model, &pose, self.nlp.support_margin));
        let cloud = collision_cloud(self.model, &pose);
        for &k in SOLVER_CLOUD.iter() {
            ineq.push(self.signed_distance(cloud[k]));
        }
        (eq, ineq)
    }

    fn jacobians(&self, y: &[f64; NV], h: f64, me: usize, mi: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut je = DMatrix::zeros(me, NV);
        let mut ji = DMatrix::zeros(mi, NV);
        for k in 0..NV {
            let mut yp = *y;
            let mut ym = *y;
            yp[k] += h;
            ym[k] -= h;
            let (ep, ip) = self.constraints(&yp);
            let (em, im) = self.constraints(&ym);
            for r in 0..me {
                je[(r, k)] = (ep[r] - em[r]) / (2.0 * h);
            }
            for r in 0..mi {
                ji[(r, k)] = (ip[r] - im[r]) / (2.0 * h);
            }
        }
        (je, ji)
    }

    /// ℓ1 constraint violation including the variable bounds.
    fn violation_l1(&self, eq: &[f64], ineq: &[f64]) -> f64 {
        eq.iter().map(|v| math::abs(*v)).sum::<f64>() + ineq.iter().map(|v| (-*v).max(0.0)).sum::<f64>()
    }

    fn violation_inf(&self, eq: &[f64], ineq: &[f64]) -> f64 {
        let a = eq.iter().fold(0.0f64, |m, v| m.max(math::abs(*v)));
        ineq.iter().fold(a, |m, v| m.max(-*v))
    }

    fn clip(&self, y: &mut [f64; NV]) {
        for k in 0..NV {
            y[k] = y[k].clamp(self.lb[k], self.ub[k]);
        }
    }
}

struct Outcome {
    y: [f64; NV],
    iterations: usize,
    violation: f64,
    converged: bool,
    merit_steps: Vec<(f64, f64)>,
}

/// Sℓ1QP step: elastic QP with slack for every nonlinear constraint.
#[allow(clippy::too_many_arguments)]
fn qp_step(
    b: &DMatrix<f64>,
    g: &DVector<f64>,
    eq: &[f64],
    ineq: &[f64],
    je: &DMatrix<f64>,
    ji: &DMatrix<f64>,
    lo: &[f64; NV],
    hi: &[f64; NV],
    nu: f64,
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let (me, mi) = (eq.len(), ineq.len());
    let ns = 2 * me + mi;
    let n = NV + ns;
    let mut h = DMatrix::zeros(n, n);
    h.view_mut((0, 0), (NV, NV)).copy_from(b);
    for k in NV..n {
        h[(k, k)] = 1e-6;
    }
    let mut f = DVector::zeros(n);
    f.rows_mut(0, NV).copy_from(g);
    for k in NV..n {
        f[k] = nu;
    }
    // J_e p − s⁺ + s⁻ = −c_e
    let mut a = DMatrix::zeros(me, n);
    let mut rhs = DVector::zeros(me);
    for r in 0..me {
        a.view_mut((r, 0), (1, NV)).copy_from(&je.row(r));
        a[(r, NV + r)] = -1.0;
        a[(r, NV + me + r)] = 1.0;
        rhs[r] = -eq[r];
    }
    let rows = mi + ns + 2 * NV;
    let mut c = DMatrix::zeros(rows, n);
    let mut d = DVector::zeros(rows);
    // −J_i p − s ≤ c_i
    for r in 0..mi {
        for k in 0..NV {
            c[(r, k)] = -ji[(r, k)];
        }
        c[(r, NV + 2 * me + r)] = -1.0;
        d[r] = ineq[r];
    }
    for k in 0..ns {
        c[(mi + k, NV + k)] = -1.0;
    }
    for k in 0..NV {
        let row = mi + ns + 2 * k;
        c[(row, k)] = 1.0;
        d[row] = hi[k];
        c[(row + 1, k)] = -1.0;
        d[row + 1] = -lo[k];
    }
    let sol = solve_qp_eq(&h, &f, &a, &rhs, &c, &d).ok()?;
    let p = sol.x.rows(0, NV).into_owned();
    let lambda = sol.lambda.rows(0, mi).into_owned();
    Some((p, lambda, sol.mu))
}

fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.dot(&ab)).clamp(0.0, 1.0);
    math::norm(p - (a + ab * t))
}

/// Minimum-norm step that zeroes the equalities and violated inequalities at
/// the trial point, using the Jacobians of the current iterate.
fn second_order_correction(yt: &[f64; NV], eq: &[f64], ineq: &[f64], je: &DMatrix<f64>, ji: &DMatrix<f64>) -> Option<[f64; NV]> {
    let rows: Vec<(DVector<f64>, f64)> = (0..eq.len())
        .map(|r| (je.row(r).transpose(), eq[r]))
        .chain((0..ineq.len()).filter(|&r| ineq[r] < 0.0).map(|r| (ji.row(r).transpose(), ineq[r])))
        .collect();
    if rows.is_empty() {
        return None;
    }
    let m = rows.len();
    let a = DMatrix::from_fn(m, NV, |r, k| rows[r].0[k]);
    let c = DVector::from_fn(m, |r, _| rows[r].1);
    let gram = &a * a.transpose() + DMatrix::identity(m, m) * 1e-12;
    let w = gram.cholesky()?.solve(&c);
    let corr = a.transpose() * w;
    Some(core::array::from_fn(|k| yt[k] - corr[k]))
}

fn lagrangian_grad(g: &DVector<f64>, je: &DMatrix<f64>, ji: &DMatrix<f64>, lambda: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
    g - ji.transpose() * lambda - je.transpose() * mu
}

fn sqp(prob: &Problem<'_, '_>, start: &[f64; NV], cfg: &PoseOptConfig) -> Outcome {
    let h = cfg.fd_step;
    let mut y = *start;
    prob.clip(&mut y);
    let w = prob.nlp.q_weight;
    let mut b = DMatrix::<f64>::identity(NV, NV);
    b[(0, 0)] += 2.0 * w[0];
    b[(1, 1)] += 2.0 * w[1];
    b[(2, 2)] += 2.0 * prob.nlp.pitch_weight;
    let mut nu = 100.0;
    let mut radius: f64 = 0.2;
    let mut merit_steps = Vec::new();
    let mut prev: Option<([f64; NV], DVector<f64>, DVector<f64>, DVector<f64>)> = None;
    let feas_tol = 1e-9;

    for it in 0..cfg.max_iterations {
        let (eq, ineq) = prob.constraints(&y);
        let (me, mi) = (eq.len(), ineq.len());
        let (je, ji) = prob.jacobians(&y, h, me, mi);
        let g = prob.cost_grad(&y);

        // damped BFGS on the Lagrangian with the last multipliers
        if let Some((y_old, gl_old, lam, mu)) = prev.take() {
            let s = DVector::from_fn(NV, |k, _| y[k] - y_old[k]);
            let mut r = lagrangian_grad(&g, &je, &ji, &lam, &mu) - gl_old;
            let bs = &b * &s;
            let sbs = s.dot(&bs);
            if sbs > 1e-16 {
                let sr = s.dot(&r);
                if sr < 0.2 * sbs {
                    let th = 0.8 * sbs / (sbs - sr);
                    r = &r * th + &bs * (1.0 - th);
                }
                let sr = s.dot(&r);
                b += &r * r.transpose() / sr - &bs * bs.transpose() / sbs;
                b = (&b + b.transpose()) * 0.5;
            }
        }

        let viol = prob.violation_inf(&eq, &ineq);
        let mut lo = [0.0; NV];
        let mut hi = [0.0; NV];
        for k in 0..NV {
            lo[k] = (-radius).max(prob.lb[k] - y[k]);
            hi[k] = radius.min(prob.ub[k] - y[k]);
        }
        let Some((p, lambda, mu)) = qp_step(&b, &g, &eq, &ineq, &je, &ji, &lo, &hi, nu) else {
            return Outcome { y, iterations: it, violation: viol, converged: false, merit_steps };
        };
        let gl = lagrangian_grad(&g, &je, &ji, &lambda, &mu);
        let pinf = p.amax();
        if viol <= feas_tol && (pinf <= 1e-10 || gl.amax() <= 1e-7) {
            return Outcome { y, iterations: it, violation: viol, converged: true, merit_steps };
        }
        let mult = lambda.amax().max(mu.amax());
        if mult * 1.5 > nu && nu < 1e5 {
            nu = (2.0 * mult).min(1e5);
        }

        // predicted reduction of the ℓ1 model
        let lin_viol = {
            let le: Vec<f64> = (0..me).map(|r| eq[r] + je.row(r).dot(&p.transpose())).collect();
            let li: Vec<f64> = (0..mi).map(|r| ineq[r] + ji.row(r).dot(&p.transpose())).collect();
            prob.violation_l1(&le, &li)
        };
        let v0 = prob.violation_l1(&eq, &ineq);
        let pred = -(g.dot(&p) + 0.5 * p.dot(&(&b * &p))) + nu * (v0 - lin_viol);
        let phi0 = prob.cost(&y) + nu * v0;

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let mut yt = y;
            for k in 0..NV {
                yt[k] += alpha * p[k];
            }
            prob.clip(&mut yt);
            let (et, it_) = prob.constraints(&yt);
            let phi = prob.cost(&yt) + nu * prob.violation_l1(&et, &it_);
            if phi <= phi0 - 1e-4 * alpha * pred.max(0.0) && phi <= phi0 {
                accepted = Some((yt, phi));
                break;
            }
            if alpha == 1.0 {
                // second-order correction against curvature of the constraints
                if let Some(mut ys) = second_order_correction(&yt, &et, &it_, &je, &ji) {
                    prob.clip(&mut ys);
                    let (es, is) = prob.constraints(&ys);
                    let phi = prob.cost(&ys) + nu * prob.violation_l1(&es, &is);
                    if phi <= phi0 - 1e-4 * pred.max(0.0) && phi <= phi0 {
                        accepted = Some((ys, phi));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((yt, phi)) => {
                merit_steps.push((phi0, phi));
                prev = Some((y, lagrangian_grad(&g, &je, &ji, &lambda, &mu), lambda, mu));
                if alpha == 1.0 && pinf >= 0.9 * radius {
                    radius = (2.0 * radius).min(1.0);
                } else if alpha < 0.25 {
                    radius = (0.5 * radius).max(1e-6);
                }
                let step = (0..NV).fold(0.0f64, |m, k| m.max(math::abs(yt[k] - y[k])));
                y = yt;
                if step <= 1e-12 {
                    let (e2, i2) = prob.constraints(&y);
                    let v = prob.violation_inf(&e2, &i2);
                    return Outcome { y, iterations: it + 1, violation: v, converged: v <= feas_tol, merit_steps };
                }
            }
            None => {
                radius *= 0.25;
                if radius < 1e-10 {
                    return Outcome { y, iterations: it + 1, violation: viol, converged: viol <= feas_tol, merit_steps };
                }
            }
        }
    }
    let (eq, ineq) = prob.constraints(&y);
    let violation = prob.violation_inf(&eq, &ineq);
    Outcome { y, iterations: cfg.max_iterations, violation, converged: false, merit_steps }
}

/// Solves one pose NLP from its initial guess, retrying once from a crouch.
pub fn solve_pose_report(nlp: &PoseNlp<'_>, model: &RobotModel, cfg: &PoseOptConfig) -> core::result::Result<(Pose, SolveReport), PoseError> {
    let prob = Problem::new(model, nlp);
    let mut out = sqp(&prob, &reduce(&nlp.initial), cfg);
    let mut restarted = false;
    let clean = |o: &Outcome| {
        o.violation <= cfg.contact_tol
            && constraint_residuals(&expand(&o.y), nlp, model).map(|r| r.satisfied(cfg.contact_tol, cfg.inequality_tol)).unwrap_or(false)
    };
    if !(out.converged && clean(&out)) {
        let (t, c) = model.crouch_angles(0.5 * (model.thigh_length + model.calf_length));
        let mut crouch = nlp.initial;
        crouch.q = [t, c, t, c, t, c, t, c];
        let second = sqp(&prob, &reduce(&crouch), cfg);
        restarted = true;
        let better = (second.converged && clean(&second)) || second.violation < out.violation;
        let iterations = out.iterations + second.iterations;
        if better {
            out = second;
        }
        out.iterations = iterations;
    }
    let pose = expand(&out.y);
    let residuals = constraint_residuals(&pose, nlp, model).map_err(|_| PoseError::Infeasible { role: nlp.label.clone(), violation: f64::INFINITY })?;
    let violation = residuals.max_violation().max(out.violation);
    if !residuals.satisfied(cfg.contact_tol, cfg.inequality_tol) || out.violation > cfg.contact_tol {
        if violation > 1e-3 {
            return Err(PoseError::Infeasible { role: nlp.label.clone(), violation });
        }
        return Err(PoseError::NonConvergence { role: nlp.label.clone(), iterations: out.iterations, violation, best: pose });
    }
    let report = SolveReport { iterations: out.iterations, max_violation: violation, cost: nlp.cost(&pose), merit_steps: out.merit_steps, restarted };
    Ok((pose, report))
}

pub fn solve_pose(nlp: &PoseNlp<'_>, model: &RobotModel, cfg: &PoseOptConfig) -> core::result::Result<Pose, PoseError> {
    solve_pose_report(nlp, model, cfg).map(|(p, _)| p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Role {
    Initial,
    Pose1,
    Pose2,
    Pose3,
    Pose4,
    Final,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Initial => "initial",
            Role::Pose1 => "pose1",
            Role::Pose2 => "pose2",
            Role::Pose3 => "pose3",
            Role::Pose4 => "pose4",
            Role::Final => "final",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SequenceEntry {
    pub role: Role,
    pub x_ref: f64,
    pub pose: Pose,
    /// Index into the terrain steps this pose belongs to.
    pub step: Option<usize>,
    /// True when this entry is a shifted copy of an earlier solve.
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PoseSequence {
    pub entries: Vec<SequenceEntry>,
}

impl PoseSequence {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Nominal stand held everywhere, for runs without pose optimization.
    pub fn hold_nominal(model: &RobotModel, x: f64, ground_z: f64) -> Self {
        let pose = model.nominal_pose(x, ground_z);
        Self { entries: alloc::vec![SequenceEntry { role: Role::Initial, x_ref: x, pose, step: None, reused: false }] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Flat,
    SingleStair,
    MultiStair,
    Ramp,
}

impl Task {
    /// Classifies a terrain by its rising features.
    pub fn infer(terrain: &Terrain) -> Task {
        let steps = terrain.steps();
        match steps.len() {
            0 => Task::Flat,
            1 if steps[0].slope() < math::deg(80.0) => Task::Ramp,
            1 => Task::SingleStair,
            _ => Task::MultiStair,
        }
    }
}

/// Reference locations of the two poses around one step.
pub fn step_references(step: &Step, model: &RobotModel, cfg: &PoseOptConfig) -> (Vec2, Vec2) {
    let r = model.wheel_radius;
    let p1 = vec2(step.base_x - (0.5 * model.wheelbase() + r), step.lower_z + model.nominal_height);
    let p2 = vec2(step.top_x + r + cfg.pose2_margin, step.lower_z + 0.5 * step.rise() + cfg.pose2_height_fraction * model.nominal_height);
    (p1, p2)
}

fn is_riser(step: &Step) -> bool {
    step.slope() >= math::deg(80.0)
}

/// Segment the rear wheels stand on while the front wheels reach the top: the
/// tread below a vertical riser, or the incline itself.
fn rear_support_segment(terrain: &Terrain, step: &Step) -> Option<(Vec2, Vec2)> {
    terrain.segments().find(|(a, b)| {
        if is_riser(step) {
            math::abs(b.x - step.base_x) < 1e-12 && math::abs(b.y - step.lower_z) < 1e-12 && b.x > a.x
        } else {
            math::abs(a.x - step.base_x) < 1e-12 && math::abs(a.y - step.lower_z) < 1e-12
        }
    })
}

/// Progress reported while a sequence is planned.
#[derive(Debug, Clone, Copy)]
pub enum SolveEvent<'r> {
    Started(&'r str),
    Solved(&'r str, &'r SolveReport),
    /// A shifted copy was re-checked against its own step.
    Checked { role: &'r str, step: usize, max_violation: f64 },
}

fn observed_solve(nlp: &PoseNlp<'_>, model: &RobotModel, cfg: &PoseOptConfig, observe: &mut dyn FnMut(SolveEvent<'_>)) -> core::result::Result<Pose, PoseError> {
    observe(SolveEvent::Started(&nlp.label));
    let (pose, report) = solve_pose_report(nlp, model, cfg)?;
    observe(SolveEvent::Solved(&nlp.label, &report));
    Ok(pose)
}

fn solve_step_pair<'a>(
    terrain: &'a Terrain,
    model: &RobotModel,
    step: &Step,
    labels: (&str, &str),
    cfg: &PoseOptConfig,
    observe: &mut dyn FnMut(SolveEvent<'_>),
) -> core::result::Result<((Pose, f64), (Pose, f64)), PoseError> {
    let (r1, r2) = step_references(step, model, cfg);
    let init1 = model.nominal_pose(r1.x, r1.y - model.nominal_height);
    let mut nlp1 = PoseNlp::new(labels.0, terrain, r1, init1, cfg);
    if cfg.corner_contact && is_riser(step) {
        nlp1.front = ContactTarget::Corner(vec2(step.top_x, step.upper_z));
    }
    let p1 = observed_solve(&nlp1, model, cfg, observe)?;

    let mut init2 = model.nominal_pose(r2.x, r2.y - model.nominal_height);
    init2.theta = if is_riser(step) { math::atan(step.rise() / model.wheelbase()) } else { step.slope() }.min(cfg.pitch_limit);
    let mut nlp2 = PoseNlp::new(labels.1, terrain, r2, init2, cfg);
    if let Some((a, b)) = rear_support_segment(terrain, step) {
        nlp2.rear = ContactTarget::Segment(a, b);
    }
    let upper = terrain.segments().find(|(a, _)| math::abs(a.x - step.top_x) < 1e-12 && math::abs(a.y - step.upper_z) < 1e-12);
    if let Some((a, b)) = upper {
        nlp2.front = ContactTarget::Segment(a, b);
    }
    let p2 = observed_solve(&nlp2, model, cfg, observe)?;
    Ok(((p1, r1.x), (p2, r2.x)))
}

fn uniform(steps: &[Step]) -> bool {
    let run = |i: usize| steps[i + 1].base_x - steps[i].base_x;
    steps.windows(2).all(|w| math::abs(w[1].rise() - w[0].rise()) < 1e-9 && math::abs((w[1].top_x - w[1].base_x) - (w[0].top_x - w[0].base_x)) < 1e-9)
        && (1..steps.len().saturating_sub(1)).all(|i| math::abs(run(i) - run(0)) < 1e-9)
}

fn shifted(pose: &Pose, dx: f64, dz: f64) -> Pose {
    Pose { x: pose.x + dx, z: pose.z + dz, ..*pose }
}

/// Builds the pose sequence for a terrain. Shifted copies of repeated poses
/// are re-checked against their own stair.
pub fn plan_pose_sequence(terrain: &Terrain, model: &RobotModel, task: Task, cfg: &PoseOptConfig) -> core::result::Result<PoseSequence, crate::Error> {
    plan_pose_sequence_observed(terrain, model, task, cfg, &mut |_| {})
}

/// [`plan_pose_sequence`] with a callback around every solve and re-check.
pub fn plan_pose_sequence_observed(
    terrain: &Terrain,
    model: &RobotModel,
    task: Task,
    cfg: &PoseOptConfig,
    observe: &mut dyn FnMut(SolveEvent<'_>),
) -> core::result::Result<PoseSequence, crate::Error> {
    let (xmin, xmax) = terrain.x_range();
    let steps = terrain.steps();
    let x0 = xmin + cfg.start_offset;
    let z0 = terrain.surface_query(x0)?.0;
    let mut entries = alloc::vec![SequenceEntry { role: Role::Initial, x_ref: x0, pose: model.nominal_pose(x0, z0), step: None, reused: false }];
    match task {
        Task::Flat => {}
        Task::SingleStair | Task::Ramp => {
            let step = steps.first().ok_or_else(|| invalid("terrain has no step to climb"))?;
            let ((p1, x1), (p2, x2)) = solve_step_pair(terrain, model, step, ("pose1", "pose2"), cfg, observe)?;
            entries.push(SequenceEntry { role: Role::Pose1, x_ref: x1, pose: p1, step: Some(0), reused: false });
            entries.push(SequenceEntry { role: Role::Pose2, x_ref: x2, pose: p2, step: Some(0), reused: false });
        }
        Task::MultiStair => {
            if steps.len() < 2 {
                return Err(invalid("multi-stair task needs at least two steps"));
            }
            let ((p1, x1), (p2, x2)) = solve_step_pair(terrain, model, &steps[0], ("pose1", "pose2"), cfg, observe)?;
            entries.push(SequenceEntry { role: Role::Pose1, x_ref: x1, pose: p1, step: Some(0), reused: false });
            entries.push(SequenceEntry { role: Role::Pose2, x_ref: x2, pose: p2, step: Some(0), reused: false });
            let repeat = uniform(&steps);
            let ((p3, x3), (p4, x4)) = solve_step_pair(terrain, model, &steps[1], ("pose3", "pose4"), cfg, observe)?;
            entries.push(SequenceEntry { role: Role::Pose3, x_ref: x3, pose: p3, step: Some(1), reused: false });
            entries.push(SequenceEntry { role: Role::Pose4, x_ref: x4, pose: p4, step: Some(1), reused: false });
            for (k, step) in steps.iter().enumerate().skip(2) {
                let (a, b) = if repeat {
                    let dx = step.base_x - steps[1].base_x;
                    let dz = step.lower_z - steps[1].lower_z;
                    let a = (shifted(&p3, dx, dz), x3 + dx);
                    let b = (shifted(&p4, dx, dz), x4 + dx);
                    for (pose, x, role) in [(&a.0, a.1, "pose3"), (&b.0, b.1, "pose4")] {
                        let (r1, r2) = step_references(step, model, cfg);
                        let p_ref = if role == "pose3" { r1 } else { r2 };
                        let nlp = PoseNlp::new(role, terrain, vec2(x, p_ref.y), *pose, cfg);
                        let res = constraint_residuals(pose, &nlp, model)?;
                        observe(SolveEvent::Checked { role, step: k, max_violation: res.max_violation() });
                        if !res.satisfied(cfg.contact_tol, cfg.inequality_tol) {
                            return Err(PoseError::Infeasible { role: alloc::format!("{role} (copy on step {})", k + 1), violation: res.max_violation() }.into());
                        }
                    }
                    (a, b)
                } else {
                    solve_step_pair(terrain, model, step, ("pose3", "pose4"), cfg, observe)?
                };
                entries.push(SequenceEntry { role: Role::Pose3, x_ref: a.1, pose: a.0, step: Some(k), reused: repeat });
                entries.push(SequenceEntry { role: Role::Pose4, x_ref: b.1, pose: b.0, step: Some(k), reused: repeat });
            }
        }
    }
    let xf = match steps.last() {
        Some(s) if task != Task::Flat => s.top_x + cfg.final_offset,
        _ => x0 + cfg.final_offset,
    };
    if !(xf <= xmax) {
        return Err(invalid("terrain ends before the final pose; lengthen the platform"));
    }
    let zf = terrain.surface_query(xf)?.0;
    entries.push(SequenceEntry { role: Role::Final, x_ref: xf, pose: model.nominal_pose(xf, zf), step: None, reused: false });
    if entries.windows(2).any(|w| !(w[1].x_ref > w[0].x_ref)) {
        return Err(invalid("pose locations are not strictly increasing; adjust start_offset or final_offset"));
    }
    Ok(PoseSequence { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::make_stairs;

    fn flat() -> Terrain {
        Terrain::flat(-2.0, 3.0, 0.0).unwrap()
    }

    #[test]
    fn nominal_stance_residuals() {
        let m = RobotModel::default();
        let t = flat();
        let cfg = PoseOptConfig::default();
        let pose = m.nominal_pose(0.0, 0.0);
        let nlp = PoseNlp::new("initial", &t, pose.com(), pose, &cfg);
        let r = constraint_residuals(&pose, &nlp, &m).unwrap();
        assert!(r.max_contact_error() < 1e-12);
        // the nominal stand puts the rear wheel directly below its hip
        assert!(r.support.abs() < 1e-12);
        assert!(r.clearance.iter().all(|c| *c >= -1e-12));
        assert!(r.satisfied(1e-4, 1e-6));
    }

    #[test]
    fn splayed_stance_has_support_margin() {
        let m = RobotModel::default();
        let t = flat();
        let cfg = PoseOptConfig::default();
        let mut pose = m.nominal_pose(0.0, 0.0);
        pose.q[4] -= 0.2;
        pose.q[6] -= 0.2;
        let nlp = PoseNlp::new("x", &t, pose.com(), pose, &cfg);
        assert!(constraint_residuals(&pose, &nlp, &m).unwrap().support > 0.0);
    }

    #[test]
    fn rear_wheel_ahead_of_hip_violates_support() {
        let m = RobotModel::default();
        let t = flat();
        let cfg = PoseOptConfig::default();
        let mut pose = m.nominal_pose(0.0, 0.0);
        pose.q[4] = 0.5;
        pose.q[6] = 0.5;
        let nlp = PoseNlp::new("x", &t, pose.com(), pose, &cfg);
        assert!(constraint_residuals(&pose, &nlp, &m).unwrap().support < 0.0);
    }

    #[test]
    fn out_of_range_pose_is_rejected() {
        let m = RobotModel::default();
        let t = flat();
        let cfg = PoseOptConfig::default();
        let pose = m.nominal_pose(5.0, 0.0);
        let nlp = PoseNlp::new("x", &t, pose.com(), pose, &cfg);
        assert!(matches!(constraint_residuals(&pose, &nlp, &m), Err(crate::Error::OutOfDomain { .. })));
    }

    #[test]
    fn flat_reference_returns_nominal() {
        let m = RobotModel::default();
        let t = flat();
        let cfg = PoseOptConfig::default();
        let nominal = m.nominal_pose(0.4, 0.0);
        let nlp = PoseNlp::new("flat", &t, nominal.com(), nominal, &cfg);
        let (p, rep) = solve_pose_report(&nlp, &m, &cfg).unwrap();
        assert!(rep.cost < 1e-10);
        assert!((p.x - 0.4).abs() < 1e-6 && (p.z - 0.33).abs() < 1e-5);
    }

    #[test]
    fn single_stair_poses() {
        let m = RobotModel::default();
        let cfg = PoseOptConfig::default();
        let t = make_stairs(0.36, 0.6, 1, 1.0, 1.0).unwrap();
        let seq = plan_pose_sequence(&t, &m, Task::SingleStair, &cfg).unwrap();
        assert_eq!(seq.len(), 4);
        let roles: Vec<Role> = seq.entries.iter().map(|e| e.role).collect();
        assert_eq!(roles, [Role::Initial, Role::Pose1, Role::Pose2, Role::Final]);
        let p2 = &seq.entries[2].pose;
        assert!(p2.theta > 0.0);
        let front = leg_fk(&m, Leg::FrontLeft, p2).wheel_center;
        assert!(front.x > 1.0 && front.y > 0.36);
        let rear = leg_fk(&m, Leg::RearLeft, p2).wheel_center;
        assert!(rear.x < 1.0 && rear.y < 0.36);
    }

    #[test]
    fn flat_sequence_has_two_entries() {
        let m = RobotModel::default();
        let seq = plan_pose_sequence(&flat(), &m, Task::Flat, &PoseOptConfig::default()).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.entries[0].pose.theta, 0.0);
        assert_eq!(seq.entries[1].role, Role::Final);
    }

    #[test]
    fn merit_never_increases() {
        let m = RobotModel::default();
        let cfg = PoseOptConfig::default();
        let t = make_stairs(0.36, 0.6, 1, 1.0, 1.0).unwrap();
        let step = t.steps()[0];
        let (_, r2) = step_references(&step, &m, &cfg);
        let mut init = m.nominal_pose(r2.x, r2.y - 0.33);
        init.theta = 0.9;
        let nlp = PoseNlp::new("pose2", &t, r2, init, &cfg);
        let (_, rep) = solve_pose_report(&nlp, &m, &cfg).unwrap();
        assert!(!rep.merit_steps.is_empty());
        assert!(rep.merit_steps.iter().all(|(a, b)| b <= a));
    }

    #[test]
    fn tall_stair_is_infeasible() {
        let m = RobotModel::default();
        let cfg = PoseOptConfig::default();
        let t = make_stairs(2.0, 0.6, 1, 1.0, 1.0).unwrap();
        let err = plan_pose_sequence(&t, &m, Task::SingleStair, &cfg).unwrap_err();
        match err {
            crate::Error::Pose(e) => assert_eq!(e.role(), "pose2"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
