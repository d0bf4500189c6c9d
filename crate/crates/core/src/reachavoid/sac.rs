//! Staged adversarial actor-critic training of the reach-avoid game.
//!
//! Phase 1 trains the robot against the scripted human, phase 2 trains the
//! adversary against the frozen robot, phase 3 trains both. The critic is
//! regressed on the discounted reach-avoid backup throughout.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::env::{EnvConfig, ExtendedState, GameEnv, Variant};
use super::policy::{safe_policy_step, Critic, RaPolicy};
use super::{adversary_projection, discounted_backup, DiscountSchedule};
use crate::bounds::ControlBound;
use crate::dynamics::Torque;
use crate::error::SolverError;
use crate::nn::{Adam, Mlp};
use crate::predictor::Predictor;

/// Seeds at or above this value are reserved for evaluation scenes.
pub const EVAL_SEED_BASE: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlConfig {
    pub total_steps: usize,
    pub hidden: Vec<usize>,
    pub batch: usize,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub alpha_lr: f64,
    pub init_alpha: f64,
    pub target_entropy: f64,
    pub tau: f64,
    pub gamma0: f64,
    pub gamma_max: f64,
    /// Fraction of `total_steps` over which γ is annealed.
    pub anneal_fraction: f64,
    pub updates_per_step: f64,
    pub buffer_capacity: usize,
    /// Phase lengths as fractions of `total_steps`: robot, adversary, joint.
    pub phases: [f64; 3],
    /// Steps driven by the noisy nominal controller before any update.
    pub warmup_steps: usize,
    pub warmup_noise: f64,
    /// Behavior-cloning steps toward the nominal controller after warmup.
    pub bc_pretrain_updates: usize,
    /// Initial weight of the behavior-cloning term, decayed to zero over phase 1.
    pub bc_weight: f64,
    pub max_grad_norm: f64,
    pub workers: usize,
    pub seed: u64,
    pub log_every: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Return the joint-phase snapshot with the best evaluation (fewest
    /// collisions, then most completions) instead of the last one.
    pub select_best: bool,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            total_steps: 200_000,
            hidden: vec![256, 256, 256],
            batch: 64,
            critic_lr: 3e-4,
            actor_lr: 1e-4,
            alpha_lr: 3e-4,
            init_alpha: 0.05,
            target_entropy: -2.0,
            tau: 0.005,
            gamma0: 0.85,
            gamma_max: 0.9999,
            anneal_fraction: 0.5,
            updates_per_step: 1.0,
            buffer_capacity: 200_000,
            phases: [0.4, 0.1, 0.5],
            warmup_steps: 5_000,
            warmup_noise: 2.0,
            bc_pretrain_updates: 2_000,
            bc_weight: 1.0,
            max_grad_norm: 10.0,
            workers: 1,
            seed: 0,
            log_every: 1_000,
            eval_every: 20_000,
            eval_episodes: 50,
            select_best: true,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::Invalid(m.to_string()));
        if self.total_steps == 0 || self.batch == 0 || self.workers == 0 || self.hidden.is_empty() {
            return bad("total_steps, batch, workers and hidden must be nonzero");
        }
        if !(0.0 < self.gamma0 && self.gamma0 <= self.gamma_max && self.gamma_max < 1.0) {
            return bad("need 0 < gamma0 <= gamma_max < 1");
        }
        if self.phases.iter().any(|p| *p < 0.0) || (self.phases.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("phase fractions must be nonnegative and sum to 1");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) || self.updates_per_step < 0.0 || self.buffer_capacity < self.batch {
            return bad("need 0 < tau <= 1, updates_per_step >= 0 and buffer_capacity >= batch");
        }
        Ok(())
    }

    pub fn schedule(&self) -> DiscountSchedule {
        DiscountSchedule::new(self.gamma0, self.gamma_max, (self.anneal_fraction * self.total_steps as f64) as usize)
    }

    /// Phase (1, 2 or 3) of a global environment step.
    pub fn phase_at(&self, step: usize) -> u8 {
        let n = self.total_steps as f64;
        let s = step as f64;
        if s < self.phases[0] * n {
            1
        } else if s < (self.phases[0] + self.phases[1]) * n {
            2
        } else {
            3
        }
    }
}

/// Uniform replay buffer over stored transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    dim: usize,
    cap: usize,
    len: usize,
    head: usize,
    x: Vec<f64>,
    x2: Vec<f64>,
    u_r: Vec<[f64; 2]>,
    u_h: Vec<[f64; 2]>,
    u_nom: Vec<[f64; 2]>,
    u_h2_scripted: Vec<[f64; 2]>,
    bound: Vec<ControlBound>,
    bound2: Vec<ControlBound>,
    gl: Vec<[f64; 4]>,
    terminal: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub x: Vec<f64>,
    pub bound: ControlBound,
    pub u_r: [f64; 2],
    pub u_h: [f64; 2],
    pub u_nom: [f64; 2],
    pub g: f64,
    pub l: f64,
    pub x2: Vec<f64>,
    pub bound2: ControlBound,
    pub g2: f64,
    pub l2: f64,
    pub terminal: bool,
    /// The scripted human's action at the successor.
    pub u_h2_scripted: [f64; 2],
}

/// A sampled minibatch, row-aligned.
pub struct Batch {
    pub x: Array2<f64>,
    pub x2: Array2<f64>,
    pub u_r: Array2<f64>,
    pub u_h: Array2<f64>,
    pub u_nom: Array2<f64>,
    pub u_h2_scripted: Array2<f64>,
    pub bound: Vec<ControlBound>,
    pub bound2: Vec<ControlBound>,
    /// `[g, l, g2, l2]` per row.
    pub gl: Vec<[f64; 4]>,
    pub terminal: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(dim: usize, cap: usize) -> Self {
        let empty = ControlBound { lo: [0.0; 2], hi: [0.0; 2] };
        Self {
            dim,
            cap,
            len: 0,
            head: 0,
            x: vec![0.0; dim * cap],
            x2: vec![0.0; dim * cap],
            u_r: vec![[0.0; 2]; cap],
            u_h: vec![[0.0; 2]; cap],
            u_nom: vec![[0.0; 2]; cap],
            u_h2_scripted: vec![[0.0; 2]; cap],
            bound: vec![empty; cap],
            bound2: vec![empty; cap],
            gl: vec![[0.0; 4]; cap],
            terminal: vec![false; cap],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, t: &Transition) {
        assert_eq!(t.x.len(), self.dim);
        let i = self.head;
        let d = self.dim;
        self.x[i * d..(i + 1) * d].copy_from_slice(&t.x);
        self.x2[i * d..(i + 1) * d].copy_from_slice(&t.x2);
        self.u_r[i] = t.u_r;
        self.u_h[i] = t.u_h;
        self.u_nom[i] = t.u_nom;
        self.u_h2_scripted[i] = t.u_h2_scripted;
        self.bound[i] = t.bound;
        self.bound2[i] = t.bound2;
        self.gl[i] = [t.g, t.l, t.g2, t.l2];
        self.terminal[i] = t.terminal;
        self.head = (self.head + 1) % self.cap;
        self.len = (self.len + 1).min(self.cap);
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Batch {
        let d = self.dim;
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..self.len)).collect();
        let rows = |src: &[f64]| Array2::from_shape_fn((n, d), |(r, c)| src[idx[r] * d + c]);
        let pairs = |src: &[[f64; 2]]| Array2::from_shape_fn((n, 2), |(r, c)| src[idx[r]][c]);
        Batch {
            x: rows(&self.x),
            x2: rows(&self.x2),
            u_r: pairs(&self.u_r),
            u_h: pairs(&self.u_h),
            u_nom: pairs(&self.u_nom),
            u_h2_scripted: pairs(&self.u_h2_scripted),
            bound: idx.iter().map(|&i| self.bound[i]).collect(),
            bound2: idx.iter().map(|&i| self.bound2[i]).collect(),
            gl: idx.iter().map(|&i| self.gl[i]).collect(),
            terminal: idx.iter().map(|&i| self.terminal[i]).collect(),
        }
    }
}

/// Entropy temperature tuned by Adam on `log α`.
#[derive(Clone, Debug)]
struct Temperature {
    log_alpha: f64,
    m: f64,
    v: f64,
    t: i32,
    lr: f64,
}

impl Temperature {
    fn new(alpha: f64, lr: f64) -> Self {
        Self { log_alpha: alpha.ln(), m: 0.0, v: 0.0, t: 0, lr }
    }

    fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// One step on `−log α · (log π + H̄)` averaged over the batch.
    fn update(&mut self, mean_log_prob: f64, target_entropy: f64) {
        let g = -(mean_log_prob + target_entropy);
        self.t += 1;
        self.m = 0.9 * self.m + 0.1 * g;
        self.v = 0.999 * self.v + 0.001 * g * g;
        let mh = self.m / (1.0 - 0.9f64.powi(self.t));
        let vh = self.v / (1.0 - 0.999f64.powi(self.t));
        self.log_alpha = (self.log_alpha - self.lr * mh / (vh.sqrt() + 1e-8)).clamp(-12.0, 2.0);
    }
}

/// One line of training telemetry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRow {
    pub step: usize,
    pub phase: u8,
    pub gamma: f64,
    pub critic_loss: f64,
    pub robot_actor_loss: f64,
    pub adversary_actor_loss: f64,
    pub alpha_robot: f64,
    pub alpha_adversary: f64,
    pub eval_collision_rate: Option<f64>,
    pub eval_completion_rate: Option<f64>,
}

pub fn write_telemetry_csv(rows: &[TelemetryRow], path: &Path) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,phase,gamma,critic_loss,robot_actor_loss,adversary_actor_loss,alpha_robot,alpha_adversary,eval_collision_rate,eval_completion_rate")?;
    for r in rows {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.phase,
            r.gamma,
            r.critic_loss,
            r.robot_actor_loss,
            r.adversary_actor_loss,
            r.alpha_robot,
            r.alpha_adversary,
            opt(r.eval_collision_rate),
            opt(r.eval_completion_rate)
        )?;
    }
    f.flush()
}

pub struct TrainOutcome {
    pub policy: RaPolicy,
    /// Step of the returned snapshot.
    pub selected_step: usize,
    pub telemetry: Vec<TelemetryRow>,
    pub env_steps: usize,
    pub updates: usize,
}

struct Worker {
    env: GameEnv,
    rng: ChaCha8Rng,
}

impl Worker {
    fn new(cfg: &EnvConfig, variant: Variant, predictor: Option<Arc<Predictor>>, seed: u64, index: usize) -> Result<Self, SolverError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64 + 1);
        let first = rng.gen_range(0..EVAL_SEED_BASE);
        let env = GameEnv::new(cfg.clone(), variant, predictor, first)?;
        Ok(Self { env, rng })
    }

    fn step(&mut self, policy: &RaPolicy, phase: u8, warm: bool, noise: f64) -> Result<Transition, SolverError> {
        let x = self.env.current.clone();
        let (g, l) = self.env.margins();
        let robot_box = self.env.scene.robot_params.torque_box;
        let nominal = self.env.nominal_robot_action()?;
        let u_r = if warm {
            let n0: f64 = self.rng.sample(StandardNormal);
            let n1: f64 = self.rng.sample(StandardNormal);
            Torque::new(robot_box[0].clamp(nominal.u[0] + noise * n0), robot_box[1].clamp(nominal.u[1] + noise * n1))
        } else {
            let a = policy.robot.sample_one(&x.x, &mut self.rng);
            Torque::new(a[0], a[1])
        };
        let scripted = phase == 1;
        let u_h_in = if scripted {
            Torque::ZERO
        } else {
            let a = policy.adversary.sample_one(&x.x, &mut self.rng);
            adversary_projection(Torque::new(a[0], a[1]), &x.bound)
        };
        let (out, u_h) = self.env.step(u_r, u_h_in, scripted)?;
        let terminal = out.terminal();
        let next = self.env.current.clone();
        let (_, l2) = self.env.margins();
        let g2 = out.g_next;
        let u_h2 = if terminal { Torque::ZERO } else { self.env.scripted_human_action()? };
        let t = Transition {
            x: x.x,
            bound: x.bound,
            u_r: u_r.u,
            u_h: u_h.u,
            u_nom: nominal.u,
            g,
            l,
            x2: next.x,
            bound2: next.bound,
            g2,
            l2: if terminal { out.l_next } else { l2 },
            terminal,
            u_h2_scripted: u_h2.u,
        };
        if out.done() {
            let seed = self.rng.gen_range(0..EVAL_SEED_BASE);
            self.env.reset(seed)?;
        }
        Ok(t)
    }
}

struct Learner {
    policy: RaPolicy,
    target: [Critic; 2],
    opt_critic: [Adam; 2],
    opt_robot: Adam,
    opt_adv: Adam,
    alpha_r: Temperature,
    alpha_h: Temperature,
    target_entropy: f64,
    rng: ChaCha8Rng,
}

#[derive(Default, Clone, Copy)]
struct Losses {
    critic: f64,
    robot: f64,
    adversary: f64,
}

fn clamp_rows(u: &Array2<f64>, bounds: &[ControlBound]) -> Array2<f64> {
    let mut out = u.clone();
    for (mut row, b) in out.rows_mut().into_iter().zip(bounds) {
        let c = b.clamp([row[0], row[1]]);
        row[0] = c[0];
        row[1] = c[1];
    }
    out
}

/// Mean over the twin critics of `∂Q/∂u` for the action columns starting at `offset`.
fn action_gradient(critics: &[Critic; 2], z: &Array2<f64>, offset: usize, d_out_scale: f64) -> (Vec<f64>, Array2<f64>) {
    let n = z.nrows();
    let mut q = vec![0.0; n];
    let mut grad = Array2::zeros((n, 2));
    for c in critics {
        let tape = c.net.forward_tape(z.view());
        for i in 0..n {
            q[i] += 0.5 * tape.output[[i, 0]];
        }
        let d = Array2::from_elem((n, 1), 0.5 * d_out_scale);
        let gin = c.net.input_gradient(&tape, d.view());
        for i in 0..n {
            for j in 0..2 {
                grad[[i, j]] += gin[[i, offset + j]] * c.input_scale[offset + j];
            }
        }
    }
    (q, grad)
}

fn check(v: f64, what: &'static str, step: usize) -> Result<f64, SolverError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(SolverError::Diverged { what, step })
    }
}

impl Learner {
    fn new(policy: RaPolicy, cfg: &RlConfig) -> Self {
        let target = policy.critics.clone();
        let opt_critic = [
            Adam::new(&policy.critics[0].net, cfg.critic_lr).with_clip(cfg.max_grad_norm),
            Adam::new(&policy.critics[1].net, cfg.critic_lr).with_clip(cfg.max_grad_norm),
        ];
        let opt_robot = Adam::new(&policy.robot.net, cfg.actor_lr).with_clip(cfg.max_grad_norm);
        let opt_adv = Adam::new(&policy.adversary.net, cfg.actor_lr).with_clip(cfg.max_grad_norm);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(0);
        Self {
            policy,
            target,
            opt_critic,
            opt_robot,
            opt_adv,
            alpha_r: Temperature::new(cfg.init_alpha, cfg.alpha_lr),
            alpha_h: Temperature::new(cfg.init_alpha, cfg.alpha_lr),
            target_entropy: cfg.target_entropy,
            rng,
        }
    }

    fn critic_update(&mut self, b: &Batch, gamma: f64, phase: u8, step: usize) -> Result<f64, SolverError> {
        let n = b.x.nrows();
        let next_r = self.policy.robot.sample_batch(b.x2.view(), &mut self.rng).u;
        let next_h = if phase == 1 {
            b.u_h2_scripted.clone()
        } else {
            clamp_rows(&self.policy.adversary.sample_batch(b.x2.view(), &mut self.rng).u, &b.bound2)
        };
        let q1 = self.target[0].q(b.x2.view(), next_r.view(), next_h.view());
        let q2 = self.target[1].q(b.x2.view(), next_r.view(), next_h.view());
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let [g, l, g2, l2] = b.gl[i];
                let v_next = if b.terminal[i] { g2.max(l2) } else { q1[i].max(q2[i]) };
                discounted_backup(l, g, gamma, v_next)
            })
            .collect();
        let mut loss = 0.0;
        for k in 0..2 {
            let c = &self.policy.critics[k];
            let z = c.inputs(b.x.view(), b.u_r.view(), b.u_h.view());
            let tape = c.net.forward_tape(z.view());
            let mut d = Array2::zeros((n, 1));
            for i in 0..n {
                let e = tape.output[[i, 0]] - y[i];
                loss += e * e / n as f64;
                d[[i, 0]] = 2.0 * e / n as f64;
            }
            let (grads, _) = c.net.backward(&tape, d.view());
            self.opt_critic[k].step(&mut self.policy.critics[k].net, &grads);
        }
        check(loss, "critic loss", step)
    }

    /// Robot actor step; `q_weight = 0` gives pure behavior cloning.
    fn robot_update(&mut self, b: &Batch, phase: u8, bc_weight: f64, q_weight: f64, tune: bool, step: usize) -> Result<f64, SolverError> {
        let n = b.x.nrows();
        let actor = &self.policy.robot;
        let s = actor.sample_batch(b.x.view(), &mut self.rng);
        let u_h = if phase == 1 {
            b.u_h.clone()
        } else {
            clamp_rows(&self.policy.adversary.sample_batch(b.x.view(), &mut self.rng).u, &b.bound)
        };
        let c0 = &self.policy.critics[0];
        let z = c0.inputs(b.x.view(), s.u.view(), u_h.view());
        let dx = b.x.ncols();
        let (q, mut dq) = action_gradient(&self.policy.critics, &z, dx, 1.0 / n as f64);
        dq.mapv_inplace(|v| v * q_weight);
        let alpha = self.alpha_r.alpha();
        let k = actor.act_dim();
        let mut extra = Array2::zeros((n, k));
        let mut bc = 0.0;
        if bc_weight > 0.0 {
            for i in 0..n {
                for j in 0..k {
                    let t = s.tape.output[[i, j]].tanh();
                    let m = actor.center[j] + actor.half[j] * t;
                    let scale = actor.half[j];
                    let e = (m - b.u_nom[[i, j]]) / scale;
                    bc += bc_weight * e * e / n as f64;
                    extra[[i, j]] = bc_weight * 2.0 * e / scale / n as f64 * actor.half[j] * (1.0 - t * t);
                }
            }
        }
        let ent_alpha = if q_weight > 0.0 { alpha } else { 0.0 };
        let d_out = actor.output_gradient(&s, dq.view(), ent_alpha / n as f64, Some(extra.view()));
        let (grads, _) = actor.net.backward(&s.tape, d_out.view());
        self.opt_robot.step(&mut self.policy.robot.net, &grads);
        let mean_lp = s.log_prob.iter().sum::<f64>() / n as f64;
        let qm = q.iter().sum::<f64>() / n as f64;
        if tune {
            self.alpha_r.update(mean_lp, self.target_entropy);
        }
        check(q_weight * qm + ent_alpha * mean_lp + bc, "robot actor loss", step)
    }

    fn adversary_update(&mut self, b: &Batch, step: usize) -> Result<f64, SolverError> {
        let n = b.x.nrows();
        let u_r = self.policy.robot.sample_batch(b.x.view(), &mut self.rng).u;
        let actor = &self.policy.adversary;
        let s = actor.sample_batch(b.x.view(), &mut self.rng);
        let u_h = clamp_rows(&s.u, &b.bound);
        let z = self.policy.critics[0].inputs(b.x.view(), u_r.view(), u_h.view());
        let dx = b.x.ncols();
        // The adversary maximizes Q; the clamp passes gradients straight through.
        let (q, dq) = action_gradient(&self.policy.critics, &z, dx + 2, -1.0 / n as f64);
        let alpha = self.alpha_h.alpha();
        let d_out = actor.output_gradient(&s, dq.view(), alpha / n as f64, None);
        let (grads, _) = actor.net.backward(&s.tape, d_out.view());
        self.opt_adv.step(&mut self.policy.adversary.net, &grads);
        let mean_lp = s.log_prob.iter().sum::<f64>() / n as f64;
        self.alpha_h.update(mean_lp, self.target_entropy);
        check(-q.iter().sum::<f64>() / n as f64 + alpha * mean_lp, "adversary actor loss", step)
    }

    fn sync_targets(&mut self, tau: f64) {
        for k in 0..2 {
            self.target[k].net.soft_update(&self.policy.critics[k].net, tau);
        }
    }
}

/// Outcome rates of the deterministic robot policy against the scripted
/// human on fixed evaluation scenes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalRates {
    pub collision: f64,
    pub completion: f64,
}

impl EvalRates {
    /// Fewer collisions first, then more completions.
    fn better_than(&self, other: &EvalRates) -> bool {
        (self.collision, -self.completion) <= (other.collision, -other.completion)
    }
}

pub fn evaluate_policy(policy: &RaPolicy, env_cfg: &EnvConfig, predictor: Option<Arc<Predictor>>, episodes: usize) -> Result<EvalRates, SolverError> {
    if episodes == 0 {
        return Ok(EvalRates::default());
    }
    let mut env = GameEnv::new(env_cfg.clone(), policy.variant, predictor, EVAL_SEED_BASE)?;
    let (mut collisions, mut completions) = (0, 0);
    for e in 0..episodes {
        env.reset(EVAL_SEED_BASE + e as u64)?;
        loop {
            let u = safe_policy_step(policy, &env.current, &env.scene.robot_params.torque_box);
            let (o, _) = env.step(u, Torque::ZERO, true)?;
            collisions += usize::from(o.collided);
            completions += usize::from(o.reached);
            if o.done() {
                break;
            }
        }
    }
    let n = episodes as f64;
    Ok(EvalRates { collision: collisions as f64 / n, completion: completions as f64 / n })
}

fn step_workers(workers: &mut [Worker], policy: &RaPolicy, phase: u8, warm: bool, noise: f64) -> Result<Vec<Transition>, SolverError> {
    if workers.len() == 1 {
        return Ok(vec![workers[0].step(policy, phase, warm, noise)?]);
    }
    std::thread::scope(|sc| {
        let handles: Vec<_> = workers.iter_mut().map(|w| sc.spawn(move || w.step(policy, phase, warm, noise))).collect();
        handles.into_iter().map(|h| h.join().expect("rollout worker panicked")).collect()
    })
}

/// Train all networks of `variant`. Workers step in lockstep and their
/// transitions are pushed in worker order, so results depend on the seed
/// and worker count only.
pub fn train_isaacs(
    env_cfg: &EnvConfig,
    variant: Variant,
    predictor: Option<Arc<Predictor>>,
    cfg: &RlConfig,
    mut progress: impl FnMut(&TelemetryRow),
) -> Result<TrainOutcome, SolverError> {
    cfg.validate()?;
    if let Some(kind) = variant.predictor_kind() {
        match &predictor {
            Some(p) if p.kind == kind => {}
            _ => return Err(SolverError::Invalid(format!("variant {variant} needs a {kind} predictor checkpoint"))),
        }
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_1a7e);
    let robot_box = env_cfg.scene.robot_params.torque_box;
    let human_box = env_cfg.scene.human_params.torque_box;
    let policy = RaPolicy::new(variant, &cfg.hidden, &robot_box, &human_box, &mut init_rng);
    let mut learner = Learner::new(policy, cfg);
    let mut workers = (0..cfg.workers)
        .map(|i| Worker::new(env_cfg, variant, predictor.clone(), cfg.seed, i))
        .collect::<Result<Vec<_>, _>>()?;
    let mut buffer = ReplayBuffer::new(variant.state_dim(), cfg.buffer_capacity);
    let schedule = cfg.schedule();
    let phase1_end = (cfg.phases[0] * cfg.total_steps as f64) as usize;
    let mut telemetry = Vec::new();
    let mut acc = (Losses::default(), 0usize);
    let mut update_credit = 0.0;
    let mut updates = 0usize;
    let mut step = 0usize;
    let mut bc_done = false;
    let mut next_log = cfg.log_every.max(1);
    let mut next_eval = if cfg.eval_every == 0 { usize::MAX } else { cfg.eval_every };
    let mut best: Option<(EvalRates, usize, RaPolicy)> = None;
    while step < cfg.total_steps {
        let phase = cfg.phase_at(step);
        let warm = step < cfg.warmup_steps;
        for t in step_workers(&mut workers, &learner.policy, phase, warm, cfg.warmup_noise)? {
            buffer.push(&t);
        }
        step += workers.len();
        if warm || buffer.len() < cfg.batch {
            continue;
        }
        if !bc_done {
            bc_done = true;
            for _ in 0..cfg.bc_pretrain_updates {
                let b = buffer.sample(cfg.batch, &mut learner.rng);
                learner.robot_update(&b, 1, cfg.bc_weight.max(1e-3), 0.0, false, step)?;
            }
        }
        update_credit += cfg.updates_per_step * workers.len() as f64;
        let gamma = schedule.at(step);
        let bc_w = if phase == 1 && phase1_end > 0 { cfg.bc_weight * (1.0 - step as f64 / phase1_end as f64).max(0.0) } else { 0.0 };
        while update_credit >= 1.0 {
            update_credit -= 1.0;
            let b = buffer.sample(cfg.batch, &mut learner.rng);
            let mut l = Losses { critic: learner.critic_update(&b, gamma, phase, step)?, ..Losses::default() };
            if phase != 2 {
                l.robot = learner.robot_update(&b, phase, bc_w, 1.0, true, step)?;
            }
            if phase != 1 {
                l.adversary = learner.adversary_update(&b, step)?;
            }
            learner.sync_targets(cfg.tau);
            updates += 1;
            acc.0.critic += l.critic;
            acc.0.robot += l.robot;
            acc.0.adversary += l.adversary;
            acc.1 += 1;
        }
        let last = step >= cfg.total_steps;
        let eval = if step >= next_eval || (last && cfg.select_best) {
            while next_eval <= step {
                next_eval = next_eval.saturating_add(cfg.eval_every);
            }
            let r = evaluate_policy(&learner.policy, env_cfg, predictor.clone(), cfg.eval_episodes)?;
            if cfg.select_best && phase == 3 && best.as_ref().is_none_or(|(b, _, _)| r.better_than(b)) {
                best = Some((r, step, learner.policy.clone()));
            }
            Some(r)
        } else {
            None
        };
        if step >= next_log || eval.is_some() {
            while next_log <= step {
                next_log += cfg.log_every.max(1);
            }
            let k = acc.1.max(1) as f64;
            let row = TelemetryRow {
                step,
                phase,
                gamma,
                critic_loss: acc.0.critic / k,
                robot_actor_loss: acc.0.robot / k,
                adversary_actor_loss: acc.0.adversary / k,
                alpha_robot: learner.alpha_r.alpha(),
                alpha_adversary: learner.alpha_h.alpha(),
                eval_collision_rate: eval.map(|r| r.collision),
                eval_completion_rate: eval.map(|r| r.completion),
            };
            progress(&row);
            telemetry.push(row);
            acc = (Losses::default(), 0);
        }
    }
    for c in &learner.policy.critics {
        if !c.net.is_finite() {
            return Err(SolverError::Diverged { what: "critic parameters", step });
        }
    }
    let (policy, selected_step) = match best {
        Some((_, at, p)) => (p, at),
        None => (learner.policy, step),
    };
    Ok(TrainOutcome { policy, selected_step, telemetry, env_steps: step, updates })
}

/// Critic values and sampled actions for a batch of states; used by diagnostics.
pub fn critic_values(policy: &RaPolicy, states: &[ExtendedState]) -> Vec<f64> {
    states.iter().map(|s| policy.value(s)).collect()
}

/// Mean-squared regression of `net` onto `targets`, used for distillation.
pub(crate) fn regress(net: &mut Mlp, x: ArrayView2<f64>, y: ArrayView2<f64>, epochs: usize, batch: usize, lr: f64, seed: u64) -> f64 {
    let n = x.nrows();
    let mut opt = Adam::new(net, lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut last = f64::INFINITY;
    for _ in 0..epochs {
        use rand::seq::SliceRandom;
        idx.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in idx.chunks(batch) {
            let xb = Array2::from_shape_fn((chunk.len(), x.ncols()), |(r, c)| x[[chunk[r], c]]);
            let yb = Array2::from_shape_fn((chunk.len(), y.ncols()), |(r, c)| y[[chunk[r], c]]);
            let tape = net.forward_tape(xb.view());
            let diff = &tape.output - &yb;
            total += diff.iter().map(|v| v * v).sum::<f64>();
            let d = diff.mapv(|v| 2.0 * v / chunk.len() as f64);
            let (g, _) = net.backward(&tape, d.view());
            opt.step(net, &g);
        }
        last = total / n as f64;
    }
    last
}
