//! Planar two-link manipulator physics (no gravity).
//!
//! The equations of motion are `M(q) q̈ + C(q, q̇) q̇ = B u`. Torques are
//! clamped to the arm's box before they enter the vector field, and joint
//! angles are wrapped to `(-π, π]` after every integration step.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::DynamicsError;

/// Physics substep used by [`advance`].
pub const DT_PHYS: f64 = 0.01;
/// Control tick: the interval at which policies act.
pub const DT_CTRL: f64 = 0.1;
/// Physics substeps per control tick.
pub const SUBSTEPS: usize = 10;

const MAX_CONDITION: f64 = 1e12;

pub type Vec2 = Vector2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn symmetric(half_width: f64) -> Self {
        Self::new(-half_width, half_width)
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// World-frame placement of an arm's first joint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasePose {
    pub position: [f64; 2],
    pub orientation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmParams {
    pub link_lengths: [f64; 2],
    pub link_masses: [f64; 2],
    /// Distance from each joint to its link's center of mass.
    pub com_offsets: [f64; 2],
    pub link_inertias: [f64; 2],
    /// `B` in the equations of motion, row-major.
    pub input_map: [[f64; 2]; 2],
    pub torque_box: [Interval; 2],
    pub base: BasePose,
}

impl ArmParams {
    /// Uniform slender links: `lc = l/2`, `I = m l² / 12`, `B = I`.
    pub fn uniform_links(lengths: [f64; 2], masses: [f64; 2], torque_limit: f64, base: BasePose) -> Self {
        Self {
            link_lengths: lengths,
            link_masses: masses,
            com_offsets: [lengths[0] / 2.0, lengths[1] / 2.0],
            link_inertias: [
                masses[0] * lengths[0] * lengths[0] / 12.0,
                masses[1] * lengths[1] * lengths[1] / 12.0,
            ],
            input_map: [[1.0, 0.0], [0.0, 1.0]],
            torque_box: [Interval::symmetric(torque_limit), Interval::symmetric(torque_limit)],
            base,
        }
    }

    /// Default robot arm: 0.5 m / 1 kg links, ±15 N·m.
    pub fn default_robot(base: BasePose) -> Self {
        Self::uniform_links([0.5, 0.5], [1.0, 1.0], 15.0, base)
    }

    /// Default human arm: same links as the robot, ±10 N·m.
    pub fn default_human(base: BasePose) -> Self {
        Self::uniform_links([0.5, 0.5], [1.0, 1.0], 10.0, base)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let positive = self
            .link_lengths
            .iter()
            .chain(&self.link_masses)
            .chain(&self.link_inertias)
            .all(|v| v.is_finite() && *v > 0.0);
        if !positive {
            return Err(DynamicsError::InvalidParams("lengths, masses and inertias must be positive".into()));
        }
        if self.torque_box.iter().any(|b| !(b.lo <= b.hi)) {
            return Err(DynamicsError::InvalidParams("empty torque box".into()));
        }
        if self.input_map_matrix().determinant().abs() < 1e-12 {
            return Err(DynamicsError::InvalidParams("input map is singular".into()));
        }
        Ok(())
    }

    pub fn input_map_matrix(&self) -> Matrix2<f64> {
        let b = &self.input_map;
        Matrix2::new(b[0][0], b[0][1], b[1][0], b[1][1])
    }

    pub fn reach(&self) -> (f64, f64) {
        let [l1, l2] = self.link_lengths;
        ((l1 - l2).abs(), l1 + l2)
    }

    pub fn base_position(&self) -> Vec2 {
        Vec2::new(self.base.position[0], self.base.position[1])
    }

    pub fn clamp_torque(&self, u: Torque) -> Torque {
        Torque::new(self.torque_box[0].clamp(u.u[0]), self.torque_box[1].clamp(u.u[1]))
    }

    pub fn torque_in_box(&self, u: Torque) -> bool {
        self.torque_box[0].contains(u.u[0]) && self.torque_box[1].contains(u.u[1])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: [f64; 2],
    pub qdot: [f64; 2],
}

impl JointState {
    pub fn new(q: [f64; 2], qdot: [f64; 2]) -> Self {
        Self { q, qdot }
    }

    pub fn at_rest(q: [f64; 2]) -> Self {
        Self { q, qdot: [0.0; 2] }
    }

    pub fn q_vec(&self) -> Vec2 {
        Vec2::new(self.q[0], self.q[1])
    }

    pub fn qdot_vec(&self) -> Vec2 {
        Vec2::new(self.qdot[0], self.qdot[1])
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.qdot).all(|v| v.is_finite())
    }

    fn wrapped(mut self) -> Self {
        self.q = [wrap_angle(self.q[0]), wrap_angle(self.q[1])];
        self
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Torque {
    pub u: [f64; 2],
}

impl Torque {
    pub const ZERO: Torque = Torque { u: [0.0, 0.0] };

    pub fn new(u0: f64, u1: f64) -> Self {
        Self { u: [u0, u1] }
    }

    pub fn as_vec(&self) -> Vec2 {
        Vec2::new(self.u[0], self.u[1])
    }

    pub fn norm(&self) -> f64 {
        self.as_vec().norm()
    }
}

impl From<Vec2> for Torque {
    fn from(v: Vec2) -> Self {
        Torque::new(v[0], v[1])
    }
}

/// Wrap an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

pub fn inertia_matrix(params: &ArmParams, state: &JointState) -> Matrix2<f64> {
    let [l1, _] = params.link_lengths;
    let [m1, m2] = params.link_masses;
    let [lc1, lc2] = params.com_offsets;
    let [i1, i2] = params.link_inertias;
    let c2 = state.q[1].cos();
    let m11 = m1 * lc1 * lc1 + i1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * c2) + i2;
    let m12 = m2 * (lc2 * lc2 + l1 * lc2 * c2) + i2;
    let m22 = m2 * lc2 * lc2 + i2;
    Matrix2::new(m11, m12, m12, m22)
}

/// Coriolis/centrifugal matrix from the Christoffel symbols of `M`, so that
/// `Ṁ - 2C` is skew-symmetric.
pub fn coriolis_matrix(params: &ArmParams, state: &JointState) -> Matrix2<f64> {
    let l1 = params.link_lengths[0];
    let m2 = params.link_masses[1];
    let lc2 = params.com_offsets[1];
    let h = -m2 * l1 * lc2 * state.q[1].sin();
    let [qd1, qd2] = state.qdot;
    Matrix2::new(h * qd2, h * (qd1 + qd2), -h * qd1, 0.0)
}

pub fn kinetic_energy(params: &ArmParams, state: &JointState) -> f64 {
    let qd = state.qdot_vec();
    0.5 * qd.dot(&(inertia_matrix(params, state) * qd))
}

fn condition_number(m: &Matrix2<f64>) -> f64 {
    // Symmetric positive definite: ratio of eigenvalues.
    let tr = m.trace();
    let det = m.determinant();
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let lmax = tr / 2.0 + disc;
    let lmin = tr / 2.0 - disc;
    if lmin <= 0.0 {
        f64::INFINITY
    } else {
        lmax / lmin
    }
}

/// Joint accelerations for an already-clamped torque.
pub fn joint_acceleration(params: &ArmParams, state: &JointState, u: Torque) -> Result<Vec2, DynamicsError> {
    let m = inertia_matrix(params, state);
    let cond = condition_number(&m);
    if !(cond <= MAX_CONDITION) {
        return Err(DynamicsError::Singular { condition: cond });
    }
    let rhs = params.input_map_matrix() * u.as_vec() - coriolis_matrix(params, state) * state.qdot_vec();
    m.try_inverse()
        .map(|inv| inv * rhs)
        .ok_or(DynamicsError::Singular { condition: cond })
}

fn derivative(params: &ArmParams, s: &JointState, u: Torque) -> Result<JointState, DynamicsError> {
    let qdd = joint_acceleration(params, s, u)?;
    Ok(JointState::new(s.qdot, [qdd[0], qdd[1]]))
}

fn offset(s: &JointState, d: &JointState, h: f64) -> JointState {
    JointState::new(
        [s.q[0] + h * d.q[0], s.q[1] + h * d.q[1]],
        [s.qdot[0] + h * d.qdot[0], s.qdot[1] + h * d.qdot[1]],
    )
}

/// One fixed-step RK4 step of length `dt` with the torque held constant.
pub fn step(params: &ArmParams, state: &JointState, u: Torque, dt: f64) -> Result<JointState, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::InvalidParams(format!("dt must be positive, got {dt}")));
    }
    let u = params.clamp_torque(u);
    let k1 = derivative(params, state, u)?;
    let k2 = derivative(params, &offset(state, &k1, dt / 2.0), u)?;
    let k3 = derivative(params, &offset(state, &k2, dt / 2.0), u)?;
    let k4 = derivative(params, &offset(state, &k3, dt), u)?;
    let mut next = *state;
    for i in 0..2 {
        next.q[i] += dt / 6.0 * (k1.q[i] + 2.0 * k2.q[i] + 2.0 * k3.q[i] + k4.q[i]);
        next.qdot[i] += dt / 6.0 * (k1.qdot[i] + 2.0 * k2.qdot[i] + 2.0 * k3.qdot[i] + k4.qdot[i]);
    }
    Ok(next.wrapped())
}

/// Hold `u` for one control tick (`SUBSTEPS` RK4 steps of `DT_PHYS`).
pub fn advance(params: &ArmParams, state: &JointState, u: Torque) -> Result<JointState, DynamicsError> {
    let mut s = *state;
    for _ in 0..SUBSTEPS {
        s = step(params, &s, u, DT_PHYS)?;
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmPoints {
    pub base: Vec2,
    pub elbow: Vec2,
    pub ee: Vec2,
    pub ee_vel: Vec2,
}

pub fn forward_kinematics(params: &ArmParams, state: &JointState) -> ArmPoints {
    let [l1, l2] = params.link_lengths;
    let base = params.base_position();
    let a1 = params.base.orientation + state.q[0];
    let a12 = a1 + state.q[1];
    let elbow = base + Vec2::new(l1 * a1.cos(), l1 * a1.sin());
    let ee = elbow + Vec2::new(l2 * a12.cos(), l2 * a12.sin());
    let ee_vel = jacobian(params, state) * state.qdot_vec();
    ArmPoints { base, elbow, ee, ee_vel }
}

/// End-effector Jacobian in the world frame.
pub fn jacobian(params: &ArmParams, state: &JointState) -> Matrix2<f64> {
    let [l1, l2] = params.link_lengths;
    let a1 = params.base.orientation + state.q[0];
    let a12 = a1 + state.q[1];
    Matrix2::new(
        -l1 * a1.sin() - l2 * a12.sin(),
        -l2 * a12.sin(),
        l1 * a1.cos() + l2 * a12.cos(),
        l2 * a12.cos(),
    )
}

/// Elbow-up inverse kinematics (`q2 ≤ 0`), returned at rest.
pub fn analytic_ik(params: &ArmParams, target: Vec2) -> Result<JointState, DynamicsError> {
    let [l1, l2] = params.link_lengths;
    let rel = target - params.base_position();
    let th = params.base.orientation;
    let (s, c) = th.sin_cos();
    let local = Vec2::new(c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1]);
    let r = local.norm();
    let (rmin, rmax) = params.reach();
    const TOL: f64 = 1e-12;
    if !r.is_finite() || r > rmax + TOL || r < rmin - TOL {
        return Err(DynamicsError::Unreachable { distance: r });
    }
    let c2 = ((r * r - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let q2 = -c2.acos();
    let q1 = local[1].atan2(local[0]) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
    Ok(JointState::at_rest([wrap_angle(q1), wrap_angle(q2)]))
}
