//! Simulated humans that reason about which goal the robot is heading for.
//!
//! The human keeps a Bayesian belief over the robot's goal, with a
//! Boltzmann likelihood on the one-tick progress a robot torque makes toward
//! each goal. An influenceable human yields (switches to the least likely
//! robot goal) when the robot's most likely goal shares its own goal's
//! semantic class with probability above the switch threshold.

use serde::{Deserialize, Serialize};

use crate::baselines::computed_torque_law;
use crate::dynamics::{advance, analytic_ik, forward_kinematics, JointState, Torque};
use crate::error::HumanSimError;
use crate::world::{Scene, WorldState, NUM_GOALS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HumanMode {
    Influenceable,
    Stubborn,
    Adversarial,
}

impl std::str::FromStr for HumanMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "influenceable" => Ok(HumanMode::Influenceable),
            "stubborn" => Ok(HumanMode::Stubborn),
            "adversarial" => Ok(HumanMode::Adversarial),
            other => Err(format!("unknown human mode `{other}`")),
        }
    }
}

impl std::fmt::Display for HumanMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HumanMode::Influenceable => "influenceable",
            HumanMode::Stubborn => "stubborn",
            HumanMode::Adversarial => "adversarial",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanConfig {
    pub mode: HumanMode,
    /// Boltzmann rationality of the robot-goal likelihood.
    pub rationality: f64,
    pub switch_threshold: f64,
    pub kp: f64,
    pub kd: f64,
    /// Minimum time between two goal changes (s).
    pub min_switch_interval: f64,
}

impl HumanConfig {
    pub fn new(mode: HumanMode) -> Self {
        Self { mode, rationality: 5.0, switch_threshold: 0.3, kp: 25.0, kd: 10.0, min_switch_interval: 0.5 }
    }
}

impl Default for HumanConfig {
    fn default() -> Self {
        Self::new(HumanMode::Influenceable)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanBelief {
    pub probs: [f64; NUM_GOALS],
}

impl HumanBelief {
    pub fn uniform() -> Self {
        Self { probs: [1.0 / NUM_GOALS as f64; NUM_GOALS] }
    }

    /// Most likely goal, lowest id on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..NUM_GOALS {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Least likely goal, lowest id on ties.
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for i in 1..NUM_GOALS {
            if self.probs[i] < self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn on_simplex(&self) -> bool {
        self.probs.iter().all(|p| *p >= 0.0 && p.is_finite()) && (self.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9
    }
}

impl Default for HumanBelief {
    fn default() -> Self {
        Self::uniform()
    }
}

/// Bayes' rule with likelihoods given in log space, `log P(u_R | q_R, g)` up
/// to a shared constant.
pub fn posterior(prior: &HumanBelief, log_likelihood: &[f64; NUM_GOALS]) -> Result<HumanBelief, HumanSimError> {
    let shift = log_likelihood.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut mass = [0.0; NUM_GOALS];
    for i in 0..NUM_GOALS {
        mass[i] = prior.probs[i] * (log_likelihood[i] - shift).exp();
    }
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(HumanSimError::DegenerateBelief);
    }
    Ok(HumanBelief { probs: mass.map(|m| m / total) })
}

/// One-tick progress of the robot end effector toward each goal under `u_r`.
pub fn goal_progress(scene: &Scene, robot_state: &JointState, u_r: Torque) -> Result<[f64; NUM_GOALS], HumanSimError> {
    let before = forward_kinematics(&scene.robot_params, robot_state).ee;
    let next = advance(&scene.robot_params, robot_state, u_r)?;
    let after = forward_kinematics(&scene.robot_params, &next).ee;
    Ok(std::array::from_fn(|i| {
        let g = scene.goals[i].pos();
        (before - g).norm() - (after - g).norm()
    }))
}

pub fn belief_update(
    belief: &HumanBelief,
    scene: &Scene,
    robot_state: &JointState,
    u_r: Torque,
    rationality: f64,
) -> Result<HumanBelief, HumanSimError> {
    let progress = goal_progress(scene, robot_state, u_r)?;
    posterior(belief, &progress.map(|d| rationality * d))
}

/// Switch rule of the influenceable human.
pub fn maybe_switch_goal(cfg: &HumanConfig, belief: &HumanBelief, current_goal: usize, scene: &Scene) -> usize {
    let likely = belief.argmax();
    let same_class = scene.goals[likely].semantic_class == scene.goals[current_goal].semantic_class;
    if belief.probs[likely] > cfg.switch_threshold && same_class {
        belief.argmin()
    } else {
        current_goal
    }
}

/// The adversarial human heads for the goal it believes the robot wants.
pub fn adversarial_choose(belief: &HumanBelief) -> usize {
    belief.argmax()
}

/// Computed-torque reaching toward `goal`, clamped to the human's box.
pub fn human_action(cfg: &HumanConfig, scene: &Scene, human_state: &JointState, goal: usize) -> Result<Torque, HumanSimError> {
    let target = analytic_ik(&scene.human_params, scene.goals[goal].pos())?;
    Ok(computed_torque_law(&scene.human_params, human_state, &target, cfg.kp, cfg.kd))
}

/// Per-episode closed-loop human.
#[derive(Clone, Debug)]
pub struct SimHuman {
    pub cfg: HumanConfig,
    pub belief: HumanBelief,
    pub goal: usize,
    last_switch: Option<f64>,
}

/// What the human did on one tick.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HumanTick {
    pub torque: Torque,
    pub switched: bool,
}

impl SimHuman {
    pub fn new(cfg: HumanConfig, initial_goal: usize) -> Self {
        Self { cfg, belief: HumanBelief::uniform(), goal: initial_goal, last_switch: None }
    }

    /// Fold the robot's last tick into the belief. A collapsed belief resets
    /// to uniform.
    pub fn observe_robot(&mut self, scene: &Scene, robot_prev: &JointState, u_r: Torque) -> Result<(), HumanSimError> {
        self.belief = match belief_update(&self.belief, scene, robot_prev, u_r, self.cfg.rationality) {
            Ok(b) => b,
            Err(HumanSimError::DegenerateBelief) => HumanBelief::uniform(),
            Err(e) => return Err(e),
        };
        Ok(())
    }

    fn may_switch(&self, t: f64) -> bool {
        self.last_switch.is_none_or(|last| t - last >= self.cfg.min_switch_interval - 1e-9)
    }

    /// Goal selection for this tick, followed by the reaching torque.
    pub fn act(&mut self, scene: &Scene, w: &WorldState) -> Result<HumanTick, HumanSimError> {
        let proposed = match self.cfg.mode {
            HumanMode::Influenceable => maybe_switch_goal(&self.cfg, &self.belief, self.goal, scene),
            HumanMode::Adversarial => adversarial_choose(&self.belief),
            HumanMode::Stubborn => self.goal,
        };
        let switched = proposed != self.goal && self.may_switch(w.t);
        if switched {
            self.goal = proposed;
            self.last_switch = Some(w.t);
        }
        let torque = human_action(&self.cfg, scene, &w.human, self.goal)?;
        Ok(HumanTick { torque, switched })
    }
}
