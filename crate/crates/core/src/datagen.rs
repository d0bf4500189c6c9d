//! Synthetic two-arm interaction episodes and the prediction examples
//! derived from them.
//!
//! Dataset files are JSONL: per episode one `episode` header line followed
//! by one `step` line per control tick. Step quantities are rounded to nine
//! significant digits; the scene is written at full precision.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{computed_torque, Gains};
use crate::config::hash_json;
use crate::dynamics::{forward_kinematics, JointState, DT_CTRL};
use crate::error::DataError;
use crate::human_sim::{HumanConfig, HumanMode, SimHuman};
use crate::predictor::{featurize, PredictorKind, Samples, ACT_DIM, HISTORY, HORIZON, PLAN_LEN};
use crate::world::{advance_world, sample_scene, target_margin, Scene, SceneConfig, WorldState, NUM_GOALS};

pub const EPISODE_STEPS: usize = 150;
pub const ANCHORS_PER_EPISODE: usize = EPISODE_STEPS - HORIZON;
/// Half-width (ticks) of the window around a goal switch whose anchors count as interactive.
pub const INTERACTIVE_WINDOW: usize = HORIZON;
pub const FORMAT_VERSION: u32 = 1;

/// Round to nine significant digits.
pub fn round9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn round2(v: [f64; 2]) -> [f64; 2] {
    [round9(v[0]), round9(v[1])]
}

fn round_state(s: &JointState) -> JointState {
    JointState { q: round2(s.q), qdot: round2(s.qdot) }
}

/// State at the start of tick `k` and the actions applied during it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub robot: JointState,
    pub human: JointState,
    pub u_r: [f64; 2],
    pub u_h: [f64; 2],
    pub ee_r: [f64; 2],
    pub ee_h: [f64; 2],
    pub human_goal: usize,
    pub robot_goal: usize,
    pub switched: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub seed: u64,
    pub human_mode: HumanMode,
    pub scene: Scene,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub human_mode: HumanMode,
    pub scene: Scene,
    pub steps: Vec<StepRecord>,
}

impl EpisodeRecord {
    pub fn switch_count(&self) -> usize {
        self.steps.iter().filter(|s| s.switched).count()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Episode(EpisodeHeader),
    Step(StepRecord),
}

/// Everything that determines a dataset besides the seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatagenConfig {
    pub human: HumanConfig,
    pub scene: SceneConfig,
    pub robot_gains: Gains,
    /// Time the robot holds a reached goal before heading to another one (s).
    pub robot_dwell: f64,
}

impl DatagenConfig {
    pub fn new(mode: HumanMode) -> Self {
        Self { human: HumanConfig::new(mode), scene: SceneConfig::default(), robot_gains: Gains::default(), robot_dwell: DWELL }
    }
}

const DWELL: f64 = 4.0;
/// Mixed into the episode seed for the robot's goal sequence.
const RETARGET_STREAM: u64 = 0x5eed_0f_90a1;

/// One closed-loop episode: the robot runs computed torque toward its
/// sampled goal, holds it for `robot_dwell`, then moves on to a uniformly
/// drawn other goal. The simulated human reacts throughout.
pub fn generate_episode(seed: u64, cfg: &DatagenConfig) -> Result<EpisodeRecord, DataError> {
    let start = sample_scene(seed, &cfg.scene)?;
    let scene = start.scene;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ RETARGET_STREAM);
    let mut robot_goal = start.robot_goal;
    let mut held = 0usize;
    let dwell_ticks = (cfg.robot_dwell / DT_CTRL).round() as usize;
    let mut human = SimHuman::new(cfg.human.clone(), start.human_goal);
    let mut w: WorldState = start.initial;
    let mut steps = Vec::with_capacity(EPISODE_STEPS);
    for k in 0..EPISODE_STEPS {
        if target_margin(&scene, &w, &[robot_goal]) <= 0.0 {
            held += 1;
            if held > dwell_ticks {
                robot_goal = (robot_goal + rng.gen_range(1..NUM_GOALS)) % NUM_GOALS;
                held = 0;
            }
        }
        let u_r = computed_torque(&scene, &w.robot, robot_goal, cfg.robot_gains)?;
        let tick = human.act(&scene, &w)?;
        let ee_r = forward_kinematics(&scene.robot_params, &w.robot).ee;
        let ee_h = forward_kinematics(&scene.human_params, &w.human).ee;
        steps.push(StepRecord {
            k,
            t: round9(w.t),
            robot: round_state(&w.robot),
            human: round_state(&w.human),
            u_r: round2(u_r.u),
            u_h: round2(tick.torque.u),
            ee_r: round2([ee_r[0], ee_r[1]]),
            ee_h: round2([ee_h[0], ee_h[1]]),
            human_goal: human.goal,
            robot_goal,
            switched: tick.switched,
        });
        human.observe_robot(&scene, &w.robot, u_r)?;
        w = advance_world(&scene, &w, u_r, tick.torque)?.state;
    }
    Ok(EpisodeRecord { seed, human_mode: cfg.human.mode, scene, steps })
}

/// Episodes `base_seed .. base_seed + n`, generated on `workers` threads and
/// returned in seed order.
pub fn generate_dataset(base_seed: u64, n_episodes: usize, cfg: &DatagenConfig, workers: usize) -> Result<Vec<EpisodeRecord>, DataError> {
    if n_episodes == 0 {
        return Err(DataError::Invalid("need at least one episode".into()));
    }
    let workers = workers.clamp(1, n_episodes);
    let mut slots: Vec<Option<Result<EpisodeRecord, DataError>>> = (0..n_episodes).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunk = n_episodes.div_ceil(workers);
        for (w, part) in slots.chunks_mut(chunk).enumerate() {
            s.spawn(move || {
                for (j, slot) in part.iter_mut().enumerate() {
                    let i = w * chunk + j;
                    *slot = Some(generate_episode(base_seed + i as u64, cfg));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

pub fn write_episodes<W: Write>(out: W, episodes: &[EpisodeRecord]) -> Result<(), DataError> {
    let mut out = BufWriter::new(out);
    for ep in episodes {
        let header = Line::Episode(EpisodeHeader {
            seed: ep.seed,
            human_mode: ep.human_mode,
            scene: ep.scene.clone(),
            steps: ep.steps.len(),
        });
        serde_json::to_writer(&mut out, &header).map_err(|e| DataError::Invalid(e.to_string()))?;
        out.write_all(b"\n")?;
        for s in &ep.steps {
            serde_json::to_writer(&mut out, &Line::Step(s.clone())).map_err(|e| DataError::Invalid(e.to_string()))?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_episodes<R: BufRead>(input: R) -> Result<Vec<EpisodeRecord>, DataError> {
    let mut episodes: Vec<EpisodeRecord> = Vec::new();
    let mut expected = 0usize;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| DataError::Malformed { line: i + 1, msg: e.to_string() })?;
        match parsed {
            Line::Episode(h) => {
                if let Some(prev) = episodes.last() {
                    if prev.steps.len() != expected {
                        return Err(DataError::Malformed { line: i + 1, msg: "previous episode is truncated".into() });
                    }
                }
                expected = h.steps;
                episodes.push(EpisodeRecord { seed: h.seed, human_mode: h.human_mode, scene: h.scene, steps: Vec::with_capacity(h.steps) });
            }
            Line::Step(s) => {
                let ep = episodes
                    .last_mut()
                    .ok_or_else(|| DataError::Malformed { line: i + 1, msg: "step before any episode header".into() })?;
                if s.k != ep.steps.len() {
                    return Err(DataError::Malformed { line: i + 1, msg: format!("expected step {}, found {}", ep.steps.len(), s.k) });
                }
                ep.steps.push(s);
            }
        }
    }
    if let Some(last) = episodes.last() {
        if last.steps.len() != expected {
            return Err(DataError::Malformed { line: 0, msg: "last episode is truncated".into() });
        }
    }
    Ok(episodes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub base_seed: u64,
    pub n_episodes: usize,
    pub config_hash: String,
    pub config: DatagenConfig,
}

pub fn manifest_path(dataset: &Path) -> PathBuf {
    let mut s = dataset.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Write the dataset and its manifest side by side.
pub fn save_dataset(path: &Path, episodes: &[EpisodeRecord], base_seed: u64, cfg: &DatagenConfig) -> Result<DatasetManifest, DataError> {
    write_episodes(File::create(path)?, episodes)?;
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        base_seed,
        n_episodes: episodes.len(),
        config_hash: hash_json(cfg),
        config: cfg.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| DataError::Invalid(e.to_string()))?;
    std::fs::write(manifest_path(path), text + "\n")?;
    Ok(manifest)
}

pub fn load_dataset(path: &Path) -> Result<Vec<EpisodeRecord>, DataError> {
    read_episodes(BufReader::new(File::open(path)?))
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    let text = std::fs::read_to_string(manifest_path(path))?;
    serde_json::from_str(&text).map_err(|e| DataError::Malformed { line: 0, msg: e.to_string() })
}

/// A prediction anchor: episode index and tick.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Anchor {
    pub episode: usize,
    pub t: usize,
}

pub fn anchors(episodes: &[EpisodeRecord]) -> Vec<Anchor> {
    episodes
        .iter()
        .enumerate()
        .flat_map(|(e, ep)| (0..ep.steps.len().saturating_sub(HORIZON)).map(move |t| Anchor { episode: e, t }))
        .collect()
}

/// An anchor is interactive iff the human switched goals within
/// `INTERACTIVE_WINDOW` ticks of it (inclusive).
pub fn is_interactive(ep: &EpisodeRecord, t: usize) -> bool {
    let lo = t.saturating_sub(INTERACTIVE_WINDOW);
    let hi = (t + INTERACTIVE_WINDOW).min(ep.steps.len() - 1);
    ep.steps[lo..=hi].iter().any(|s| s.switched)
}

/// Partition all anchors into (interactive, non-interactive).
pub fn split_interactive(episodes: &[EpisodeRecord]) -> (Vec<Anchor>, Vec<Anchor>) {
    anchors(episodes).into_iter().partition(|a| is_interactive(&episodes[a.episode], a.t))
}

/// `[robot_ee, human_ee]` for the `HISTORY` ticks ending at `t`, padded with
/// the first tick (the arms start at rest).
pub fn history(ep: &EpisodeRecord, t: usize) -> Vec<[[f64; 2]; 2]> {
    (0..HISTORY)
        .map(|i| {
            let k = (t + i + 1).saturating_sub(HISTORY);
            [ep.steps[k].ee_r, ep.steps[k].ee_h]
        })
        .collect()
}

/// Robot end-effector positions for the `PLAN_LEN` ticks after `t`, held at
/// the last recorded tick past the episode end.
pub fn realized_plan(ep: &EpisodeRecord, t: usize) -> Vec<[f64; 2]> {
    let last = ep.steps.len() - 1;
    (1..=PLAN_LEN).map(|i| ep.steps[(t + i).min(last)].ee_r).collect()
}

/// Human torques over the prediction horizon, flattened step-major.
pub fn target_actions(ep: &EpisodeRecord, t: usize) -> Vec<f64> {
    (t..t + HORIZON).flat_map(|k| ep.steps[k].u_h).collect()
}

/// Realized human end-effector path over the horizon.
pub fn target_path(ep: &EpisodeRecord, t: usize) -> Vec<[f64; 2]> {
    (t + 1..=t + HORIZON).map(|k| ep.steps[k].ee_h).collect()
}

pub fn anchor_features(ep: &EpisodeRecord, t: usize, kind: PredictorKind) -> Result<Vec<f64>, DataError> {
    let plan = match kind {
        PredictorKind::Marginal => None,
        PredictorKind::Cbp => Some(realized_plan(ep, t)),
    };
    featurize(&history(ep, t), &ep.scene, plan.as_deref()).map_err(|e| DataError::Invalid(e.to_string()))
}

pub fn build_samples(episodes: &[EpisodeRecord], anchors: &[Anchor], kind: PredictorKind) -> Result<Samples, DataError> {
    let dim = kind.input_dim();
    let mut x = Array2::zeros((anchors.len(), dim));
    let mut y = Array2::zeros((anchors.len(), HORIZON * ACT_DIM));
    let mut groups = Vec::with_capacity(anchors.len());
    for (i, a) in anchors.iter().enumerate() {
        let ep = &episodes[a.episode];
        for (j, v) in anchor_features(ep, a.t, kind)?.into_iter().enumerate() {
            x[[i, j]] = v;
        }
        for (j, v) in target_actions(ep, a.t).into_iter().enumerate() {
            y[[i, j]] = v;
        }
        groups.push(a.episode as u64);
    }
    Ok(Samples { x, y, groups })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn influenceable() -> DatagenConfig {
        DatagenConfig::new(HumanMode::Influenceable)
    }

    #[test]
    fn rounding_keeps_nine_digits() {
        assert_eq!(round9(1.234567891234), 1.23456789);
        assert_eq!(round9(-0.000123456789123), -0.000123456789);
        assert_eq!(round9(0.0), 0.0);
    }

    #[test]
    fn episode_is_deterministic_and_round_trips() {
        let a = generate_episode(12, &influenceable()).unwrap();
        let b = generate_episode(12, &influenceable()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.steps.len(), EPISODE_STEPS);
        assert!(a.steps.windows(2).all(|w| w[1].t > w[0].t));
        let mut buf = Vec::new();
        write_episodes(&mut buf, std::slice::from_ref(&a)).unwrap();
        let back = read_episodes(buf.as_slice()).unwrap();
        assert_eq!(back, vec![a]);
        let mut buf2 = Vec::new();
        write_episodes(&mut buf2, &back).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn stubborn_never_switches() {
        let cfg = DatagenConfig::new(HumanMode::Stubborn);
        for seed in 0..20 {
            assert_eq!(generate_episode(seed, &cfg).unwrap().switch_count(), 0);
        }
    }

    #[test]
    fn anchor_counts() {
        let eps = generate_dataset(0, 100, &influenceable(), 4).unwrap();
        assert_eq!(anchors(&eps).len(), 14_000);
        assert_eq!(anchors(&eps[..1]).len(), 140);
        let (i, n) = split_interactive(&eps);
        assert_eq!(i.len() + n.len(), 14_000);
    }

    #[test]
    fn influenceable_humans_switch_often_enough() {
        let eps = generate_dataset(1000, 100, &influenceable(), 4).unwrap();
        let with_switch = eps.iter().filter(|e| e.switch_count() > 0).count();
        assert!(with_switch >= 30, "{with_switch} of 100 episodes switch");
    }

    #[test]
    fn interactive_fraction_is_moderate() {
        let eps = generate_dataset(7, 100, &influenceable(), 4).unwrap();
        let (i, _) = split_interactive(&eps);
        let frac = i.len() as f64 / 14_000.0;
        assert!((0.075..=0.275).contains(&frac), "interactive fraction {frac}");
    }

    #[test]
    fn robot_moves_on_after_dwelling() {
        let ep = generate_episode(9, &influenceable()).unwrap();
        let goals: std::collections::BTreeSet<usize> = ep.steps.iter().map(|s| s.robot_goal).collect();
        assert!(goals.len() >= 2);
    }

    #[test]
    fn sharding_matches_single_shot() {
        let cfg = influenceable();
        let whole = generate_dataset(40, 10, &cfg, 1).unwrap();
        let mut parts = generate_dataset(40, 4, &cfg, 2).unwrap();
        parts.extend(generate_dataset(44, 6, &cfg, 3).unwrap());
        assert_eq!(whole, parts);
    }

    #[test]
    fn split_window_arithmetic() {
        let mut ep = generate_episode(3, &DatagenConfig::new(HumanMode::Stubborn)).unwrap();
        let eps = vec![ep.clone()];
        assert!(split_interactive(&eps).0.is_empty());
        ep.steps[70].switched = true;
        let (i, n) = split_interactive(&[ep]);
        let ts: Vec<usize> = i.iter().map(|a| a.t).collect();
        assert_eq!(ts, (60..=80).collect::<Vec<_>>());
        assert_eq!(n.len(), 140 - 21);
    }

    #[test]
    fn samples_have_expected_shapes() {
        let eps = generate_dataset(5, 2, &influenceable(), 1).unwrap();
        let a = anchors(&eps);
        let m = build_samples(&eps, &a, PredictorKind::Marginal).unwrap();
        let c = build_samples(&eps, &a, PredictorKind::Cbp).unwrap();
        assert_eq!(m.x.dim(), (280, 56));
        assert_eq!(c.x.dim(), (280, 96));
        assert_eq!(m.y.dim(), (280, 20));
        assert_eq!(m.y[[0, 0]], eps[0].steps[0].u_h[0]);
        assert_eq!(target_path(&eps[0], 139).len(), HORIZON);
    }

    #[test]
    fn malformed_input_is_rejected() {
        assert!(matches!(read_episodes("{\"kind\":\"step\"}\n".as_bytes()), Err(DataError::Malformed { line: 1, .. })));
        let ep = generate_episode(1, &influenceable()).unwrap();
        let mut buf = Vec::new();
        write_episodes(&mut buf, &[ep]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(50).map(|l| format!("{l}\n")).collect();
        assert!(read_episodes(truncated.as_bytes()).is_err());
    }
}
