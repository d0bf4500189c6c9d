//! The two-arm reach-avoid game as an episodic environment.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{nominal_plan, PLAN_HORIZON};
use crate::baselines::{choose_goal_nominal, computed_torque, Gains};
use crate::bounds::{inferred_bound, BoundConfig, ControlBound};
use crate::dynamics::{forward_kinematics, jacobian, Torque};
use crate::error::SolverError;
use crate::human_sim::{HumanConfig, HumanMode, SimHuman};
use crate::predictor::{belief_vector, featurize, GmmPrediction, Predictor, PredictorKind, BELIEF_DIM, HISTORY};
use crate::world::{advance_world, failure_margin, goal_reached, sample_scene, target_margin, Scene, SceneConfig, WorldState};

pub const OBS_DIM: usize = 24;
pub const EXT_DIM: usize = OBS_DIM + BELIEF_DIM;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Plan-conditioned predictor: belief in the state, adversary inside the CBP bound.
    Slide,
    /// Unconditioned predictor: belief in the state, adversary inside the marginal bound.
    Marginal,
    /// No belief; adversary ranges over the full human torque box.
    Robust,
}

impl Variant {
    pub fn predictor_kind(self) -> Option<PredictorKind> {
        match self {
            Variant::Slide => Some(PredictorKind::Cbp),
            Variant::Marginal => Some(PredictorKind::Marginal),
            Variant::Robust => None,
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            Variant::Robust => OBS_DIM,
            _ => EXT_DIM,
        }
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "slide" => Ok(Variant::Slide),
            "marginal" => Ok(Variant::Marginal),
            "robust" => Ok(Variant::Robust),
            _ => Err(format!("unknown variant `{s}` (expected slide|marginal|robust)")),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Slide => "slide",
            Variant::Marginal => "marginal",
            Variant::Robust => "robust",
        })
    }
}

/// Observed 24-D state: per arm `q, q̇, ee, ee velocity`, then the four goal
/// positions. Positions are relative to the midpoint between the bases.
pub fn physical_obs(scene: &Scene, w: &WorldState) -> [f64; OBS_DIM] {
    let c = scene.center();
    let mut o = [0.0; OBS_DIM];
    let mut i = 0;
    for (params, s) in [(&scene.robot_params, &w.robot), (&scene.human_params, &w.human)] {
        let pts = forward_kinematics(params, s);
        for v in [s.q[0], s.q[1], s.qdot[0], s.qdot[1], pts.ee[0] - c[0], pts.ee[1] - c[1], pts.ee_vel[0], pts.ee_vel[1]] {
            o[i] = v;
            i += 1;
        }
    }
    for g in &scene.goals {
        o[i] = g.position[0] - c[0];
        o[i + 1] = g.position[1] - c[1];
        i += 2;
    }
    o
}

/// Fixed per-coordinate scaling applied before the networks.
pub fn input_scale(dim: usize) -> Vec<f64> {
    let arm = [1.0 / std::f64::consts::PI, 1.0 / std::f64::consts::PI, 0.2, 0.2, 2.0, 2.0, 0.5, 0.5];
    let mut s: Vec<f64> = arm.iter().chain(arm.iter()).copied().collect();
    s.extend([2.0; 8]);
    s.extend(std::iter::repeat_n([4.0, 4.0, 1.0], (dim.saturating_sub(OBS_DIM)) / 3).flatten());
    s.truncate(dim);
    s
}

/// Extended state of the game together with the adversary's admissible set.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedState {
    pub x: Vec<f64>,
    pub bound: ControlBound,
    pub prediction: Option<GmmPrediction>,
}

/// Maintains the end-effector history and turns world states into
/// extended states by re-querying the predictor every tick.
#[derive(Clone, Debug)]
pub struct Observer {
    pub variant: Variant,
    predictor: Option<Arc<Predictor>>,
    pub bound_cfg: BoundConfig,
    history: VecDeque<[[f64; 2]; 2]>,
}

fn ee_pair(scene: &Scene, w: &WorldState) -> [[f64; 2]; 2] {
    let r = forward_kinematics(&scene.robot_params, &w.robot).ee;
    let h = forward_kinematics(&scene.human_params, &w.human).ee;
    [[r[0], r[1]], [h[0], h[1]]]
}

impl Observer {
    pub fn new(variant: Variant, predictor: Option<Arc<Predictor>>, bound_cfg: BoundConfig) -> Result<Self, SolverError> {
        match (variant.predictor_kind(), &predictor) {
            (Some(kind), Some(p)) if p.kind != kind => {
                return Err(SolverError::Invalid(format!("variant {variant} needs a {kind} predictor, got {}", p.kind)))
            }
            (Some(kind), None) => return Err(SolverError::Invalid(format!("variant {variant} needs a {kind} predictor"))),
            _ => {}
        }
        let predictor = if variant == Variant::Robust { None } else { predictor };
        Ok(Self { variant, predictor, bound_cfg, history: VecDeque::with_capacity(HISTORY) })
    }

    /// Start a new episode; the history is padded with the current tick.
    pub fn reset(&mut self, scene: &Scene, w: &WorldState) {
        self.history.clear();
        let p = ee_pair(scene, w);
        self.history.extend(std::iter::repeat_n(p, HISTORY));
    }

    /// Record the tick just reached.
    pub fn push(&mut self, scene: &Scene, w: &WorldState) {
        if self.history.len() == HISTORY {
            self.history.pop_front();
        }
        self.history.push_back(ee_pair(scene, w));
    }

    pub fn observe(&self, scene: &Scene, w: &WorldState) -> Result<ExtendedState, SolverError> {
        let mut x: Vec<f64> = physical_obs(scene, w).to_vec();
        let full = ControlBound::from_box(&scene.human_params.torque_box);
        let Some(pred) = &self.predictor else {
            return Ok(ExtendedState { x, bound: full, prediction: None });
        };
        let hist: Vec<[[f64; 2]; 2]> = self.history.iter().copied().collect();
        let plan = match pred.kind {
            PredictorKind::Cbp => Some(nominal_plan(scene, &w.robot, PLAN_HORIZON)?),
            PredictorKind::Marginal => None,
        };
        let fv = featurize(&hist, scene, plan.as_deref())?;
        let g = pred.predict(&fv)?;
        x.extend(belief_vector(&g, &scene.human_params, &w.human)?);
        let bound = inferred_bound(&g, &self.bound_cfg, &scene.human_params.torque_box);
        Ok(ExtendedState { x, bound, prediction: Some(g) })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub scene: SceneConfig,
    /// The scripted human used during robot pretraining.
    pub human: HumanConfig,
    pub max_ticks: usize,
    /// Positive rescaling of the failure margin; the sign, and so the game's
    /// safe set, is unchanged.
    pub failure_scale: f64,
    pub target_scale: f64,
    pub bound: BoundConfig,
    /// Joint speed (rad/s) past which an episode is truncated. The arms are
    /// undamped, so a saturating policy can otherwise spin them up until the
    /// integrator fails.
    pub max_joint_speed: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            human: HumanConfig::new(HumanMode::Influenceable),
            max_ticks: 150,
            failure_scale: 5.0,
            target_scale: 1.0,
            bound: BoundConfig::default(),
            max_joint_speed: 25.0,
        }
    }
}

/// Result of one environment tick.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Scaled failure margin of the successor, maximized over the physics
    /// substeps of the tick.
    pub g_next: f64,
    /// Scaled target margin of the successor.
    pub l_next: f64,
    pub collided: bool,
    pub reached: bool,
    /// Episode ended by the tick limit (not a terminal state).
    pub truncated: bool,
}

impl StepOutcome {
    pub fn terminal(&self) -> bool {
        self.collided || self.reached
    }

    pub fn done(&self) -> bool {
        self.terminal() || self.truncated
    }
}

pub struct GameEnv {
    pub cfg: EnvConfig,
    pub observer: Observer,
    pub scene: Scene,
    pub world: WorldState,
    pub human: SimHuman,
    pub tick: usize,
    pub current: ExtendedState,
}

impl GameEnv {
    pub fn new(cfg: EnvConfig, variant: Variant, predictor: Option<Arc<Predictor>>, seed: u64) -> Result<Self, SolverError> {
        let observer = Observer::new(variant, predictor, cfg.bound)?;
        let start = sample_scene(seed, &cfg.scene).map_err(|e| SolverError::Invalid(e.to_string()))?;
        let human = SimHuman::new(cfg.human.clone(), start.human_goal);
        let mut env = Self {
            cfg,
            observer,
            scene: start.scene,
            world: start.initial,
            human,
            tick: 0,
            current: ExtendedState { x: Vec::new(), bound: ControlBound { lo: [0.0; 2], hi: [0.0; 2] }, prediction: None },
        };
        env.reset(seed)?;
        Ok(env)
    }

    pub fn reset(&mut self, seed: u64) -> Result<&ExtendedState, SolverError> {
        let start = sample_scene(seed, &self.cfg.scene).map_err(|e| SolverError::Invalid(e.to_string()))?;
        self.scene = start.scene;
        self.world = start.initial;
        self.human = SimHuman::new(self.cfg.human.clone(), start.human_goal);
        self.tick = 0;
        self.observer.reset(&self.scene, &self.world);
        self.current = self.observer.observe(&self.scene, &self.world)?;
        Ok(&self.current)
    }

    /// Scaled `(g, l)` of the current state.
    pub fn margins(&self) -> (f64, f64) {
        self.scaled_margins(&self.world)
    }

    fn scaled_margins(&self, w: &WorldState) -> (f64, f64) {
        let all = self.scene.all_goal_ids();
        (
            self.cfg.failure_scale * failure_margin(&self.scene, w),
            self.cfg.target_scale * target_margin(&self.scene, w, &all),
        )
    }

    /// What the scripted human would do now, without committing its goal choice.
    pub fn scripted_human_action(&self) -> Result<Torque, SolverError> {
        let mut h = self.human.clone();
        let t = h.act(&self.scene, &self.world).map_err(|e| SolverError::Invalid(e.to_string()))?;
        Ok(t.torque)
    }

    /// Computed torque toward the closest goal.
    pub fn nominal_robot_action(&self) -> Result<Torque, SolverError> {
        let goal = choose_goal_nominal(&self.scene, &self.world.robot);
        Ok(computed_torque(&self.scene, &self.world.robot, goal, Gains::default())?)
    }

    /// Apply both torques for one tick. With `scripted`, the simulated human
    /// picks its own action (and `u_h` is ignored).
    pub fn step(&mut self, u_r: Torque, u_h: Torque, scripted: bool) -> Result<(StepOutcome, Torque), SolverError> {
        let u_r = self.scene.robot_params.clamp_torque(u_r);
        let u_h = if scripted {
            let t = self.human.act(&self.scene, &self.world).map_err(|e| SolverError::Invalid(e.to_string()))?;
            self.human
                .observe_robot(&self.scene, &self.world.robot, u_r)
                .map_err(|e| SolverError::Invalid(e.to_string()))?;
            t.torque
        } else {
            self.scene.human_params.clamp_torque(u_h)
        };
        let out = advance_world(&self.scene, &self.world, u_r, u_h)?;
        self.world = out.state;
        self.tick += 1;
        self.observer.push(&self.scene, &self.world);
        let (_, l_next) = self.scaled_margins(&self.world);
        let g_next = self.cfg.failure_scale * out.max_failure_margin;
        let collided = out.max_failure_margin > 0.0;
        let reached = !collided && goal_reached(&self.scene, &self.world).is_some();
        let runaway = [self.world.robot.qdot, self.world.human.qdot].iter().flatten().any(|v| v.abs() > self.cfg.max_joint_speed);
        let truncated = !collided && !reached && (self.tick >= self.cfg.max_ticks || runaway);
        if !collided && !reached {
            self.current = self.observer.observe(&self.scene, &self.world)?;
        }
        Ok((StepOutcome { g_next, l_next, collided, reached, truncated }, u_h))
    }

    /// Robot end-effector speed implied by the current state (diagnostics).
    pub fn robot_ee_speed(&self) -> f64 {
        (jacobian(&self.scene.robot_params, &self.world.robot) * self.world.robot.qdot_vec()).norm()
    }
}
