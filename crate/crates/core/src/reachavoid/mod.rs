//! Reach-avoid games: a tabular oracle on a toy system and the
//! actor-critic solution of the two-arm game.

pub mod distill;
pub mod env;
pub mod grid;
pub mod policy;
pub mod sac;

use serde::{Deserialize, Serialize};

use crate::baselines::{choose_goal_nominal, computed_torque, Gains};
use crate::bounds::ControlBound;
use crate::dynamics::{advance, forward_kinematics, JointState, Torque};
use crate::error::DynamicsError;
use crate::world::Scene;

pub const PLAN_HORIZON: usize = 20;

/// Discounted reach-avoid backup for one state:
/// `(1−γ)·max{g, l} + γ·max{g, min{l, v_next}}`, where `v_next` is the
/// min-max successor value.
pub fn discounted_backup(l: f64, g: f64, gamma: f64, v_next: f64) -> f64 {
    (1.0 - gamma) * g.max(l) + gamma * g.max(l.min(v_next))
}

/// Linear discount annealing from `gamma0` to `gamma_max` over `anneal_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscountSchedule {
    pub gamma0: f64,
    pub gamma_max: f64,
    pub anneal_steps: usize,
}

impl DiscountSchedule {
    pub fn new(gamma0: f64, gamma_max: f64, anneal_steps: usize) -> Self {
        assert!(0.0 < gamma0 && gamma0 <= gamma_max && gamma_max < 1.0, "need 0 < γ0 ≤ γmax < 1");
        Self { gamma0, gamma_max, anneal_steps }
    }

    pub fn at(&self, step: usize) -> f64 {
        if self.anneal_steps == 0 {
            return self.gamma_max;
        }
        let f = (step as f64 / self.anneal_steps as f64).min(1.0);
        self.gamma0 + (self.gamma_max - self.gamma0) * f
    }
}

/// Clamp the adversary's action into the inferred bound.
pub fn adversary_projection(raw: Torque, bound: &ControlBound) -> Torque {
    Torque { u: bound.clamp(raw.u) }
}

/// End-effector positions of the nominal controller driving toward the goal
/// closest to the current end effector, one per tick.
pub fn nominal_plan(scene: &Scene, robot_state: &JointState, horizon: usize) -> Result<Vec<[f64; 2]>, DynamicsError> {
    let goal = choose_goal_nominal(scene, robot_state);
    let gains = Gains::default();
    let mut s = *robot_state;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let u = computed_torque(scene, &s, goal, gains)?;
        s = advance(&scene.robot_params, &s, u)?;
        let ee = forward_kinematics(&scene.robot_params, &s).ee;
        out.push([ee[0], ee[1]]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::analytic_ik;
    use crate::world::{sample_scene, SceneConfig};

    #[test]
    fn backup_examples() {
        assert!((discounted_backup(1.0, 0.5, 0.9, 0.2) - 0.55).abs() < 1e-12);
        assert!(discounted_backup(-0.1, -0.2, 0.9999, 5.0) <= 0.0);
        for v in [-3.0, 0.0, 2.0] {
            assert!(discounted_backup(-1.0, 0.3, 0.7, v) >= 0.3);
        }
    }

    #[test]
    fn schedule_is_linear_then_flat() {
        let s = DiscountSchedule::new(0.85, 0.9999, 100);
        assert_eq!(s.at(0), 0.85);
        assert!((s.at(50) - (0.85 + 0.5 * 0.1499)).abs() < 1e-12);
        assert_eq!(s.at(100), 0.9999);
        assert_eq!(s.at(10_000), 0.9999);
    }

    #[test]
    fn projection_cases() {
        let b = ControlBound { lo: [-2.0, -1.0], hi: [3.0, 1.0] };
        assert_eq!(adversary_projection(Torque::new(1.0, 0.5), &b), Torque::new(1.0, 0.5));
        assert_eq!(adversary_projection(Torque::new(-9.0, 9.0), &b), Torque::new(-2.0, 1.0));
        let full = ControlBound { lo: [-10.0; 2], hi: [10.0; 2] };
        assert_eq!(adversary_projection(Torque::new(-9.5, 4.0), &full), Torque::new(-9.5, 4.0));
    }

    #[test]
    fn plan_at_goal_is_constant() {
        let s = sample_scene(4, &SceneConfig::default()).unwrap();
        let goal = s.scene.goals[1].pos();
        let at = analytic_ik(&s.scene.robot_params, goal).unwrap();
        let plan = nominal_plan(&s.scene, &at, PLAN_HORIZON).unwrap();
        assert_eq!(plan.len(), PLAN_HORIZON);
        for p in &plan {
            assert!((p[0] - goal[0]).abs() < 1e-9 && (p[1] - goal[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn plans_approach_the_closest_goal() {
        let cfg = SceneConfig::default();
        let mut monotone = 0;
        for seed in 0..200 {
            let s = sample_scene(seed, &cfg).unwrap();
            let g = s.scene.goals[choose_goal_nominal(&s.scene, &s.initial.robot)].pos();
            let plan = nominal_plan(&s.scene, &s.initial.robot, PLAN_HORIZON).unwrap();
            let d: Vec<f64> = plan.iter().map(|p| ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt()).collect();
            if d.windows(2).all(|w| w[1] <= w[0] + 1e-9) {
                monotone += 1;
            }
        }
        assert!(monotone >= 190, "{monotone}/200 monotone");
    }
}
