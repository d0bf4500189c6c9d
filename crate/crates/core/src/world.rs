//! Tabletop scene: four semantic goals shared by two facing arms, plus the
//! target/failure margins of the reach-avoid game.

use std::f64::consts::PI;

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, advance, analytic_ik, forward_kinematics, ArmParams, BasePose, JointState, Torque, Vec2};
use crate::error::{DynamicsError, WorldError};

pub const NUM_GOALS: usize = 4;
const MAX_SAMPLE_ATTEMPTS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SemanticClass {
    Mug,
    Bottle,
}

impl SemanticClass {
    pub fn one_hot(self) -> [f64; 2] {
        match self {
            SemanticClass::Mug => [1.0, 0.0],
            SemanticClass::Bottle => [0.0, 1.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub id: usize,
    pub position: [f64; 2],
    pub semantic_class: SemanticClass,
}

impl Goal {
    pub fn pos(&self) -> Vec2 {
        Vec2::new(self.position[0], self.position[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub goals: [Goal; NUM_GOALS],
    pub robot_params: ArmParams,
    pub human_params: ArmParams,
    pub goal_radius: f64,
    pub collision_radius: f64,
}

impl Scene {
    pub fn goal(&self, id: usize) -> &Goal {
        &self.goals[id]
    }

    /// Midpoint of the two bases; features are expressed relative to it.
    pub fn center(&self) -> Vec2 {
        (self.robot_params.base_position() + self.human_params.base_position()) / 2.0
    }

    pub fn all_goal_ids(&self) -> [usize; NUM_GOALS] {
        [0, 1, 2, 3]
    }

    /// Shift the entire scene (bases and goals) by `d`.
    pub fn translated(&self, d: Vec2) -> Scene {
        let mut s = self.clone();
        for g in s.goals.iter_mut() {
            g.position = [g.position[0] + d[0], g.position[1] + d[1]];
        }
        for p in [&mut s.robot_params, &mut s.human_params] {
            p.base.position = [p.base.position[0] + d[0], p.base.position[1] + d[1]];
        }
        s
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub robot: JointState,
    pub human: JointState,
    pub t: f64,
}

/// Geometry and sampling knobs for [`sample_scene`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub robot_params: ArmParams,
    pub human_params: ArmParams,
    pub goal_radius: f64,
    pub collision_radius: f64,
    /// Minimum pairwise distance between goals.
    pub min_goal_spacing: f64,
    /// Goals are kept inside `[reach_min + margin, reach_max - margin]` of both arms.
    pub reach_margin: f64,
    /// Lower bound on a goal's distance from either base.
    pub min_goal_distance: f64,
    /// End-effector rest point in front of each base (m).
    pub home_reach: f64,
    /// Half-width of the uniform perturbation of the home joint angles (rad).
    pub home_jitter: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let separation = 1.2;
        Self {
            robot_params: ArmParams::default_robot(BasePose { position: [-separation / 2.0, 0.0], orientation: 0.0 }),
            human_params: ArmParams::default_human(BasePose { position: [separation / 2.0, 0.0], orientation: PI }),
            goal_radius: 0.05,
            collision_radius: 0.05,
            min_goal_spacing: 0.2,
            reach_margin: 0.05,
            min_goal_distance: 0.25,
            home_reach: 0.35,
            home_jitter: 0.15,
        }
    }
}

/// A sampled episode start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledScene {
    pub scene: Scene,
    pub initial: WorldState,
    pub robot_goal: usize,
    pub human_goal: usize,
}

/// Exact minimum distance between closed segments `[a0, a1]` and `[b0, b1]`.
pub fn segment_distance(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> f64 {
    let d1 = a1 - a0;
    let d2 = b1 - b0;
    let r = a0 - b0;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    const EPS: f64 = 1e-18;

    let (s, t) = if a <= EPS && e <= EPS {
        (0.0, 0.0)
    } else if a <= EPS {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s = if denom > EPS * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    let pa = a0 + d1 * s;
    let pb = b0 + d2 * t;
    if segments_cross(a0, a1, b0, b1) {
        return 0.0;
    }
    (pa - pb).norm()
}

fn cross(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn segments_cross(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> bool {
    let d1 = cross(a1 - a0, b0 - a0);
    let d2 = cross(a1 - a0, b1 - a0);
    let d3 = cross(b1 - b0, a0 - b0);
    let d4 = cross(b1 - b0, a1 - b0);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Link segments `[base→elbow, elbow→ee]` of an arm.
pub fn link_segments(params: &ArmParams, state: &JointState) -> [(Vec2, Vec2); 2] {
    let fk = forward_kinematics(params, state);
    [(fk.base, fk.elbow), (fk.elbow, fk.ee)]
}

/// Minimum link-to-link distance between the two arms.
pub fn min_arm_distance(scene: &Scene, w: &WorldState) -> f64 {
    let r = link_segments(&scene.robot_params, &w.robot);
    let h = link_segments(&scene.human_params, &w.human);
    let mut d = f64::INFINITY;
    for (a0, a1) in r {
        for (b0, b1) in h {
            d = d.min(segment_distance(a0, a1, b0, b1));
        }
    }
    d
}

/// `g(x)`: positive iff the arms are in collision.
pub fn failure_margin(scene: &Scene, w: &WorldState) -> f64 {
    scene.collision_radius - min_arm_distance(scene, w)
}

/// `l(x)`: non-positive iff the robot end effector is inside a goal ball from `goal_set`.
pub fn target_margin(scene: &Scene, w: &WorldState, goal_set: &[usize]) -> f64 {
    debug_assert!(!goal_set.is_empty(), "target_margin needs a nonempty goal set");
    let ee = forward_kinematics(&scene.robot_params, &w.robot).ee;
    goal_set
        .iter()
        .map(|&id| (ee - scene.goals[id].pos()).norm() - scene.goal_radius)
        .fold(f64::INFINITY, f64::min)
}

/// The goal whose ball contains the robot end effector (nearest on ties).
pub fn goal_reached(scene: &Scene, w: &WorldState) -> Option<usize> {
    let ee = forward_kinematics(&scene.robot_params, &w.robot).ee;
    scene
        .goals
        .iter()
        .map(|g| (g.id, (ee - g.pos()).norm()))
        .filter(|(_, d)| *d - scene.goal_radius <= 0.0)
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(id, _)| id)
}

pub fn collision(scene: &Scene, w: &WorldState) -> bool {
    failure_margin(scene, w) > 0.0
}

/// Result of holding both torques for one control tick.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TickOutcome {
    pub state: WorldState,
    /// Largest failure margin seen at any physics substep of the tick.
    pub max_failure_margin: f64,
}

/// Advance both arms one control tick, checking collision at every substep.
pub fn advance_world(scene: &Scene, w: &WorldState, u_r: Torque, u_h: Torque) -> Result<TickOutcome, DynamicsError> {
    let mut s = *w;
    let mut max_g = f64::NEG_INFINITY;
    for _ in 0..dynamics::SUBSTEPS {
        s.robot = dynamics::step(&scene.robot_params, &s.robot, u_r, dynamics::DT_PHYS)?;
        s.human = dynamics::step(&scene.human_params, &s.human, u_h, dynamics::DT_PHYS)?;
        max_g = max_g.max(failure_margin(scene, &s));
    }
    // Accumulate in integer ticks to keep `t` exact on the 0.1 s grid.
    let ticks = (w.t / dynamics::DT_CTRL).round() + 1.0;
    s.t = ticks * dynamics::DT_CTRL;
    Ok(TickOutcome { state: s, max_failure_margin: max_g })
}

/// Advance one arm alone for a tick; the other holds still.
pub fn advance_arm(params: &ArmParams, s: &JointState, u: Torque) -> Result<JointState, DynamicsError> {
    advance(params, s, u)
}

fn in_shared_workspace(cfg: &SceneConfig, p: Vec2) -> bool {
    [&cfg.robot_params, &cfg.human_params].iter().all(|arm| {
        let (rmin, rmax) = arm.reach();
        let d = (p - arm.base_position()).norm();
        d >= (rmin + cfg.reach_margin).max(cfg.min_goal_distance) && d <= rmax - cfg.reach_margin
    })
}

fn home_configuration(params: &ArmParams, reach: f64) -> Result<JointState, DynamicsError> {
    let th = params.base.orientation;
    let target = params.base_position() + Vec2::new(th.cos(), th.sin()) * reach;
    analytic_ik(params, target)
}

/// Deterministic episode start for `seed`.
pub fn sample_scene(seed: u64, cfg: &SceneConfig) -> Result<SampledScene, WorldError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rb = cfg.robot_params.base_position();
    let hb = cfg.human_params.base_position();
    let reach = cfg.robot_params.reach().1.max(cfg.human_params.reach().1);
    let (xmin, xmax) = (rb[0].min(hb[0]) - reach, rb[0].max(hb[0]) + reach);
    let (ymin, ymax) = (rb[1].min(hb[1]) - reach, rb[1].max(hb[1]) + reach);

    let mut positions: Vec<Vec2> = Vec::with_capacity(NUM_GOALS);
    for _ in 0..NUM_GOALS {
        let mut placed = false;
        for _ in 0..MAX_SAMPLE_ATTEMPTS {
            let p = Vec2::new(rng.gen_range(xmin..xmax), rng.gen_range(ymin..ymax));
            if in_shared_workspace(cfg, p) && positions.iter().all(|q| (p - q).norm() >= cfg.min_goal_spacing) {
                positions.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(WorldError::RetryExhausted { attempts: MAX_SAMPLE_ATTEMPTS });
        }
    }
    let mut classes = [SemanticClass::Mug, SemanticClass::Mug, SemanticClass::Bottle, SemanticClass::Bottle];
    classes.shuffle(&mut rng);
    let goals: [Goal; NUM_GOALS] = std::array::from_fn(|i| Goal {
        id: i,
        position: [positions[i][0], positions[i][1]],
        semantic_class: classes[i],
    });

    let jitter = |rng: &mut ChaCha8Rng, s: JointState| {
        JointState::at_rest([
            dynamics::wrap_angle(s.q[0] + rng.gen_range(-cfg.home_jitter..=cfg.home_jitter)),
            dynamics::wrap_angle(s.q[1] + rng.gen_range(-cfg.home_jitter..=cfg.home_jitter)),
        ])
    };
    let robot = jitter(&mut rng, home_configuration(&cfg.robot_params, cfg.home_reach)?);
    let human = jitter(&mut rng, home_configuration(&cfg.human_params, cfg.home_reach)?);
    let robot_goal = rng.gen_range(0..NUM_GOALS);
    let human_goal = rng.gen_range(0..NUM_GOALS);

    Ok(SampledScene {
        scene: Scene {
            goals,
            robot_params: cfg.robot_params.clone(),
            human_params: cfg.human_params.clone(),
            goal_radius: cfg.goal_radius,
            collision_radius: cfg.collision_radius,
        },
        initial: WorldState { robot, human, t: 0.0 },
        robot_goal,
        human_goal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    fn dense_oracle(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> f64 {
        let n = 100;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            let p = a0 + (a1 - a0) * (i as f64 / n as f64);
            for j in 0..=n {
                let q = b0 + (b1 - b0) * (j as f64 / n as f64);
                best = best.min((p - q).norm());
            }
        }
        best
    }

    #[test]
    fn parallel_offset() {
        let d = segment_distance(v(0.0, 0.0), v(1.0, 0.0), v(0.0, 0.3), v(1.0, 0.3));
        assert!((d - 0.3).abs() < 1e-12);
    }

    #[test]
    fn crossing_is_zero() {
        assert_eq!(segment_distance(v(-1.0, 0.0), v(1.0, 0.0), v(0.0, -1.0), v(0.0, 1.0)), 0.0);
    }

    #[test]
    fn matches_dense_sampling_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let mut p = || v(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let (a0, a1, b0, b1) = (p(), p(), p(), p());
            let d = segment_distance(a0, a1, b0, b1);
            // 101x101 grid: worst-case grid error is half a step on each segment.
            let step = ((a1 - a0).norm() + (b1 - b0).norm()) / 200.0;
            let oracle = dense_oracle(a0, a1, b0, b1);
            assert!(d <= oracle + 1e-12, "{d} > {oracle}");
            assert!(oracle - d <= step + 1e-4, "{d} vs {oracle}");
            assert!((d - segment_distance(b1, b0, a1, a0)).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_segments() {
        assert!((segment_distance(v(0.0, 0.0), v(0.0, 0.0), v(1.0, -1.0), v(1.0, 1.0)) - 1.0).abs() < 1e-12);
        assert!((segment_distance(v(0.0, 0.0), v(0.0, 0.0), v(3.0, 4.0), v(3.0, 4.0)) - 5.0).abs() < 1e-12);
        // collinear overlapping
        assert_eq!(segment_distance(v(0.0, 0.0), v(2.0, 0.0), v(1.0, 0.0), v(3.0, 0.0)), 0.0);
    }

    fn default_scene() -> SampledScene {
        sample_scene(0, &SceneConfig::default()).unwrap()
    }

    #[test]
    fn failure_margin_sign_matches_collision() {
        let s = default_scene();
        let g = failure_margin(&s.scene, &s.initial);
        assert!(g < 0.0);
        assert!(!collision(&s.scene, &s.initial));
        // Fold both arms straight toward each other: links overlap.
        let w = WorldState { robot: JointState::default(), human: JointState::default(), t: 0.0 };
        assert!((failure_margin(&s.scene, &w) - 0.05).abs() < 1e-12);
        assert!(collision(&s.scene, &w));
    }

    #[test]
    fn target_margin_values() {
        let mut s = default_scene();
        let ee = forward_kinematics(&s.scene.robot_params, &s.initial.robot).ee;
        s.scene.goals[2].position = [ee[0], ee[1]];
        assert!((target_margin(&s.scene, &s.initial, &[2]) + 0.05).abs() < 1e-12);
        assert_eq!(goal_reached(&s.scene, &s.initial), Some(2));
        let l_one = target_margin(&s.scene, &s.initial, &[0]);
        let l_all = target_margin(&s.scene, &s.initial, &[0, 1, 2, 3]);
        assert!(l_all <= l_one);
    }

    #[test]
    fn far_goals_give_positive_margin() {
        let mut s = default_scene();
        let ee = forward_kinematics(&s.scene.robot_params, &s.initial.robot).ee;
        for (i, g) in s.scene.goals.iter_mut().enumerate() {
            let a = i as f64;
            g.position = [ee[0] + 0.5 * a.cos(), ee[1] + 0.5 * a.sin()];
        }
        let l = target_margin(&s.scene, &s.initial, &[0, 1, 2, 3]);
        assert!((l - 0.45).abs() < 1e-12);
        assert_eq!(goal_reached(&s.scene, &s.initial), None);
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = SceneConfig::default();
        assert_eq!(sample_scene(42, &cfg).unwrap(), sample_scene(42, &cfg).unwrap());
        assert_ne!(sample_scene(42, &cfg).unwrap(), sample_scene(43, &cfg).unwrap());
    }

    #[test]
    fn sampled_goals_reachable_by_both_arms() {
        let cfg = SceneConfig::default();
        for seed in 0..1000 {
            let s = sample_scene(seed, &cfg).unwrap();
            let mugs = s.scene.goals.iter().filter(|g| g.semantic_class == SemanticClass::Mug).count();
            assert_eq!(mugs, 2);
            for g in &s.scene.goals {
                for arm in [&s.scene.robot_params, &s.scene.human_params] {
                    let q = analytic_ik(arm, g.pos()).unwrap();
                    assert!((forward_kinematics(arm, &q).ee - g.pos()).norm() < 1e-9);
                }
            }
            for a in 0..NUM_GOALS {
                for b in a + 1..NUM_GOALS {
                    assert!((s.scene.goals[a].pos() - s.scene.goals[b].pos()).norm() >= 0.2);
                }
            }
        }
    }

    #[test]
    fn margins_are_lipschitz_under_perturbation() {
        let cfg = SceneConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // Each link point moves at most (l1 + l2)·|Δq|_1 per joint perturbation.
        let lip = 2.0 * 1.0;
        for seed in 0..200 {
            let s = sample_scene(seed, &cfg).unwrap();
            let mut w2 = s.initial;
            let dq: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1e-3..1e-3));
            w2.robot.q[0] += dq[0];
            w2.robot.q[1] += dq[1];
            w2.human.q[0] += dq[2];
            w2.human.q[1] += dq[3];
            let dn = dq.iter().map(|x| x.abs()).sum::<f64>();
            let dg = (failure_margin(&s.scene, &s.initial) - failure_margin(&s.scene, &w2)).abs();
            let dl = (target_margin(&s.scene, &s.initial, &[0, 1, 2, 3]) - target_margin(&s.scene, &w2, &[0, 1, 2, 3])).abs();
            assert!(dg <= lip * dn + 1e-12);
            assert!(dl <= lip * dn + 1e-12);
        }
    }

    #[test]
    fn translation_leaves_margins_unchanged() {
        let s = default_scene();
        let moved = s.scene.translated(v(0.3, -0.7));
        let g0 = failure_margin(&s.scene, &s.initial);
        let g1 = failure_margin(&moved, &s.initial);
        assert!((g0 - g1).abs() < 1e-12);
    }

    #[test]
    fn advance_world_tracks_time() {
        let s = default_scene();
        let mut w = s.initial;
        for _ in 0..150 {
            w = advance_world(&s.scene, &w, Torque::ZERO, Torque::ZERO).unwrap().state;
        }
        assert!((w.t - 15.0).abs() < 1e-12);
    }
}
