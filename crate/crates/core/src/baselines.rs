//! Non-learned robot controllers: computed-torque reaching (NoSafety), a
//! hand-tuned Safe Set Algorithm filter, and nominal goal selection.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    self, analytic_ik, coriolis_matrix, forward_kinematics, inertia_matrix, wrap_angle, ArmParams, JointState, Torque, Vec2,
    DT_CTRL,
};
use crate::error::DynamicsError;
use crate::world::{min_arm_distance, Scene, WorldState};

/// `u = B⁻¹ (M(q)(Kp e + Kd ė) + C(q, q̇) q̇)` toward a resting target, clamped to the box.
pub fn computed_torque_law(params: &ArmParams, state: &JointState, target: &JointState, kp: f64, kd: f64) -> Torque {
    let e = Vec2::new(wrap_angle(target.q[0] - state.q[0]), wrap_angle(target.q[1] - state.q[1]));
    let edot = target.qdot_vec() - state.qdot_vec();
    let m = inertia_matrix(params, state);
    let c = coriolis_matrix(params, state);
    let tau = m * (e * kp + edot * kd) + c * state.qdot_vec();
    let b_inv = params.input_map_matrix().try_inverse().unwrap_or_else(nalgebra::Matrix2::identity);
    params.clamp_torque(Torque::from(b_inv * tau))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub kp: f64,
    pub kd: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Self { kp: 25.0, kd: 10.0 }
    }
}

/// NoSafety controller: computed torque toward `goal` with the robot's box.
pub fn computed_torque(scene: &Scene, robot_state: &JointState, goal: usize, gains: Gains) -> Result<Torque, DynamicsError> {
    let target = analytic_ik(&scene.robot_params, scene.goals[goal].pos())?;
    Ok(computed_torque_law(&scene.robot_params, robot_state, &target, gains.kp, gains.kd))
}

/// Closest goal to the robot end effector, lowest id on ties.
pub fn choose_goal_nominal(scene: &Scene, robot_state: &JointState) -> usize {
    let ee = forward_kinematics(&scene.robot_params, robot_state).ee;
    let mut best = (0, f64::INFINITY);
    for g in &scene.goals {
        let d = (ee - g.pos()).norm();
        if d < best.1 {
            best = (g.id, d);
        }
    }
    best.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsaConfig {
    /// Weight on the distance rate in the safety index.
    pub k: f64,
    pub d_safe: f64,
    /// Required decrease rate of the index while it is non-negative.
    pub eta: f64,
}

impl Default for SsaConfig {
    fn default() -> Self {
        Self { k: 0.5, d_safe: 0.15, eta: 0.1 }
    }
}

/// Rate of change of the arm-arm distance over one tick, assuming both arms
/// keep their joint velocities.
fn distance_rate(scene: &Scene, w: &WorldState) -> f64 {
    let drift = |s: &JointState| JointState::new([s.q[0] + s.qdot[0] * DT_CTRL, s.q[1] + s.qdot[1] * DT_CTRL], s.qdot);
    let ahead = WorldState { robot: drift(&w.robot), human: drift(&w.human), t: w.t + DT_CTRL };
    (min_arm_distance(scene, &ahead) - min_arm_distance(scene, w)) / DT_CTRL
}

/// `φ = d_safe² − d² − k·ḋ`.
pub fn safety_index(scene: &Scene, w: &WorldState, cfg: &SsaConfig) -> f64 {
    let d = min_arm_distance(scene, w);
    cfg.d_safe * cfg.d_safe - d * d - cfg.k * distance_rate(scene, w)
}

/// Everything the filter computed on one call.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsaDecision {
    pub u: Torque,
    pub phi: f64,
    pub active: bool,
    /// Linearized constraint `normal · u ≤ offset`, when the filter was active.
    pub half_space: Option<(Vec2, f64)>,
}

fn index_after_tick(scene: &Scene, w: &WorldState, u: Torque, cfg: &SsaConfig) -> Result<f64, DynamicsError> {
    let next = WorldState {
        robot: dynamics::advance(&scene.robot_params, &w.robot, u)?,
        human: dynamics::advance(&scene.human_params, &w.human, Torque::ZERO)?,
        t: w.t + DT_CTRL,
    };
    Ok(safety_index(scene, &next, cfg))
}

pub fn ssa_filter_detailed(scene: &Scene, w: &WorldState, nominal: Torque, cfg: &SsaConfig) -> Result<SsaDecision, DynamicsError> {
    let params = &scene.robot_params;
    let nominal = params.clamp_torque(nominal);
    let phi = safety_index(scene, w, cfg);
    if phi < 0.0 {
        return Ok(SsaDecision { u: nominal, phi, active: false, half_space: None });
    }

    // Linearize the index after one tick around the nominal torque. The
    // finite-difference probes may leave the box, so they bypass clamping.
    let mut free = params.clone();
    free.torque_box = [dynamics::Interval::new(f64::NEG_INFINITY, f64::INFINITY); 2];
    let free_scene = Scene { robot_params: free, ..scene.clone() };
    let h = 1e-4;
    let phi0 = index_after_tick(&free_scene, w, nominal, cfg)?;
    let mut normal = Vec2::zeros();
    for i in 0..2 {
        let mut up = nominal;
        let mut dn = nominal;
        up.u[i] += h;
        dn.u[i] -= h;
        normal[i] = (index_after_tick(&free_scene, w, up, cfg)? - index_after_tick(&free_scene, w, dn, cfg)?) / (2.0 * h);
    }
    let offset = phi - cfg.eta * DT_CTRL - phi0 + normal.dot(&nominal.as_vec());
    let half_space = Some((normal, offset));

    let u0 = nominal.as_vec();
    if normal.dot(&u0) <= offset {
        return Ok(SsaDecision { u: nominal, phi, active: true, half_space });
    }
    let n2 = normal.norm_squared();
    if n2 < 1e-18 {
        return Ok(SsaDecision { u: nominal, phi, active: true, half_space });
    }

    let vertices = [
        Vector2::new(params.torque_box[0].lo, params.torque_box[1].lo),
        Vector2::new(params.torque_box[0].lo, params.torque_box[1].hi),
        Vector2::new(params.torque_box[0].hi, params.torque_box[1].lo),
        Vector2::new(params.torque_box[0].hi, params.torque_box[1].hi),
    ];
    let best_vertex = vertices
        .iter()
        .min_by(|a, b| normal.dot(a).total_cmp(&normal.dot(b)))
        .copied()
        .expect("box has vertices");
    if normal.dot(&best_vertex) > offset {
        return Ok(SsaDecision { u: Torque::from(best_vertex), phi, active: true, half_space });
    }
    let projected = u0 - normal * ((normal.dot(&u0) - offset) / n2);
    Ok(SsaDecision { u: params.clamp_torque(Torque::from(projected)), phi, active: true, half_space })
}

pub fn ssa_filter(scene: &Scene, w: &WorldState, nominal: Torque, cfg: &SsaConfig) -> Result<Torque, DynamicsError> {
    ssa_filter_detailed(scene, w, nominal, cfg).map(|d| d.u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{advance, DT_CTRL};
    use crate::world::{sample_scene, SceneConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_error_gives_zero_torque() {
        let s = sample_scene(3, &SceneConfig::default()).unwrap().scene;
        let q = analytic_ik(&s.robot_params, s.goals[2].pos()).unwrap();
        assert!(computed_torque(&s, &q, 2, Gains::default()).unwrap().norm() < 1e-9);
    }

    #[test]
    fn torque_clamped_to_robot_box() {
        let s = sample_scene(3, &SceneConfig::default()).unwrap().scene;
        let u = computed_torque(&s, &JointState::new([3.0, 2.0], [6.0, 6.0]), 0, Gains { kp: 1e3, kd: 10.0 }).unwrap();
        assert!(s.robot_params.torque_in_box(u));
        assert!(u.u.iter().any(|x| x.abs() == 15.0));
    }

    #[test]
    fn uncontested_goal_reached_within_three_seconds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut reached = 0;
        for i in 0..500 {
            let sampled = sample_scene(1000 + i, &SceneConfig::default()).unwrap();
            let s = sampled.scene;
            let goal = rng.gen_range(0..4);
            let mut r = sampled.initial.robot;
            for _ in 0..(3.0 / DT_CTRL).round() as usize {
                r = advance(&s.robot_params, &r, computed_torque(&s, &r, goal, Gains::default()).unwrap()).unwrap();
                if (forward_kinematics(&s.robot_params, &r).ee - s.goals[goal].pos()).norm() <= s.goal_radius {
                    reached += 1;
                    break;
                }
            }
        }
        assert!(reached >= 495, "reached {reached}/500");
    }

    #[test]
    fn nominal_goal_choice() {
        let mut s = sample_scene(3, &SceneConfig::default()).unwrap();
        let ee = forward_kinematics(&s.scene.robot_params, &s.initial.robot).ee;
        s.scene.goals[1].position = [ee[0] + 0.3, ee[1]];
        s.scene.goals[3].position = [ee[0] - 0.3, ee[1]];
        s.scene.goals[0].position = [ee[0], ee[1] + 0.6];
        s.scene.goals[2].position = [ee[0], ee[1] - 0.6];
        assert_eq!(choose_goal_nominal(&s.scene, &s.initial.robot), 1);
        s.scene.goals[2].position = [ee[0], ee[1]];
        assert_eq!(choose_goal_nominal(&s.scene, &s.initial.robot), 2);
        let moved = s.scene.translated(Vec2::new(0.4, 0.2));
        assert_eq!(choose_goal_nominal(&moved, &s.initial.robot), 2);
    }

    #[test]
    fn far_apart_is_passthrough() {
        let sampled = sample_scene(3, &SceneConfig::default()).unwrap();
        let nominal = Torque::new(3.0, -2.0);
        let d = ssa_filter_detailed(&sampled.scene, &sampled.initial, nominal, &SsaConfig::default()).unwrap();
        assert!(d.phi < 0.0);
        assert!(!d.active);
        assert_eq!(d.u, nominal);
    }

    fn contested_state(seed: u64) -> (Scene, WorldState) {
        // Drive both arms toward the middle until they are close.
        let sampled = sample_scene(seed, &SceneConfig::default()).unwrap();
        let s = sampled.scene;
        let mut w = sampled.initial;
        let mid = (s.robot_params.base_position() + s.human_params.base_position()) / 2.0;
        let qr = analytic_ik(&s.robot_params, mid).unwrap();
        let qh = analytic_ik(&s.human_params, mid).unwrap();
        for _ in 0..40 {
            let ur = computed_torque_law(&s.robot_params, &w.robot, &qr, 25.0, 10.0);
            let uh = computed_torque_law(&s.human_params, &w.human, &qh, 25.0, 10.0);
            let next = crate::world::advance_world(&s, &w, ur, uh).unwrap().state;
            if min_arm_distance(&s, &next) < 0.12 {
                return (s, w);
            }
            w = next;
        }
        (s, w)
    }

    #[test]
    fn active_projection_satisfies_half_space() {
        let mut checked = 0;
        for seed in 0..40 {
            let (s, w) = contested_state(seed);
            let nominal = Torque::new(0.5, 0.5);
            let d = ssa_filter_detailed(&s, &w, nominal, &SsaConfig::default()).unwrap();
            if let (true, Some((n, b))) = (d.active, d.half_space) {
                let u0 = nominal.as_vec();
                if n.dot(&u0) > b {
                    let proj = u0 - n * ((n.dot(&u0) - b) / n.norm_squared());
                    if s.robot_params.torque_in_box(Torque::from(proj)) {
                        assert!(n.dot(&d.u.as_vec()) <= b + 1e-9);
                        checked += 1;
                    }
                }
            }
            assert!(s.robot_params.torque_in_box(d.u));
        }
        assert!(checked > 0, "no active in-box projection exercised");
    }

    #[test]
    fn output_always_in_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for seed in 0..30 {
            let (s, w) = contested_state(seed);
            let nominal = Torque::new(rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0));
            let u = ssa_filter(&s, &w, nominal, &SsaConfig::default()).unwrap();
            assert!(s.robot_params.torque_in_box(u));
        }
    }
}
