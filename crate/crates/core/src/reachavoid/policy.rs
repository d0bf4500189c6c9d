//! Networks of the reach-avoid game and the deployed safe policy.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::adversary_projection;
use super::env::{input_scale, ExtendedState, Variant};
use crate::bounds::ControlBound;
use crate::checkpoint::Checkpoint;
use crate::dynamics::{Interval, Torque};
use crate::error::NetError;
use crate::nn::{Activation, Mlp};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;
const CHECKPOINT_KIND: &str = "reach-avoid-policy";

/// Gaussian policy squashed by `tanh` into a box. The network maps scaled
/// inputs to `[μ (k), log σ (k)]` in pre-squash space.
#[derive(Clone, Debug, PartialEq)]
pub struct SquashedGaussian {
    pub net: Mlp,
    pub input_scale: Vec<f64>,
    pub center: Vec<f64>,
    pub half: Vec<f64>,
}

/// A batch of reparameterized samples and what their gradients need.
pub struct ActorSample {
    pub tape: crate::nn::Tape,
    /// Pre-squash noise.
    pub eps: Array2<f64>,
    /// Squashed actions in `(-1, 1)`.
    pub a: Array2<f64>,
    /// Actions in the box.
    pub u: Array2<f64>,
    pub log_std: Array2<f64>,
    /// Whether the raw log-std was inside the clamp range.
    pub log_std_free: Array2<bool>,
    pub log_prob: Vec<f64>,
}

impl SquashedGaussian {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, hidden: &[usize], bounds: &[Interval], input_scale: Vec<f64>, rng: &mut R) -> Self {
        let k = bounds.len();
        let mut sizes = vec![in_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * k);
        let mut net = Mlp::new(&sizes, Activation::Relu, rng);
        let last = net.layers.last_mut().expect("nonempty");
        last.w.mapv_inplace(|v| v * 0.01);
        for j in 0..k {
            last.b[k + j] = -1.0;
        }
        Self {
            net,
            input_scale,
            center: bounds.iter().map(|b| 0.5 * (b.lo + b.hi)).collect(),
            half: bounds.iter().map(|b| 0.5 * (b.hi - b.lo)).collect(),
        }
    }

    pub fn act_dim(&self) -> usize {
        self.center.len()
    }

    pub fn scale_inputs(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut s = x.to_owned();
        for mut row in s.rows_mut() {
            for (v, k) in row.iter_mut().zip(&self.input_scale) {
                *v *= k;
            }
        }
        s
    }

    /// Deterministic action: the squashed mean.
    pub fn mean_action(&self, x: &[f64]) -> Vec<f64> {
        let xs: Vec<f64> = x.iter().zip(&self.input_scale).map(|(a, b)| a * b).collect();
        let out = self.net.forward_one(&xs);
        (0..self.act_dim()).map(|j| self.center[j] + self.half[j] * out[j].tanh()).collect()
    }

    /// Reparameterized samples with the bookkeeping needed for gradients.
    pub fn sample_batch<R: Rng + ?Sized>(&self, x: ArrayView2<f64>, rng: &mut R) -> ActorSample {
        let k = self.act_dim();
        let tape = self.net.forward_tape(self.scale_inputs(x).view());
        let n = x.nrows();
        let mut eps = Array2::zeros((n, k));
        let mut a = Array2::zeros((n, k));
        let mut u = Array2::zeros((n, k));
        let mut log_std = Array2::zeros((n, k));
        let mut free = Array2::from_elem((n, k), true);
        let mut log_prob = vec![0.0; n];
        for i in 0..n {
            for j in 0..k {
                let mu = tape.output[[i, j]];
                let raw = tape.output[[i, k + j]];
                let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                free[[i, j]] = raw == ls;
                let e: f64 = rng.sample(StandardNormal);
                let z = mu + ls.exp() * e;
                let t = z.tanh();
                eps[[i, j]] = e;
                a[[i, j]] = t;
                u[[i, j]] = self.center[j] + self.half[j] * t;
                log_std[[i, j]] = ls;
                log_prob[i] += -0.5 * e * e - ls - 0.5 * (2.0 * std::f64::consts::PI).ln() - (1.0 - t * t + 1e-6).ln();
            }
        }
        ActorSample { tape, eps, a, u, log_std, log_std_free: free, log_prob }
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row");
        self.sample_batch(view, rng).u.row(0).to_vec()
    }

    /// Network-output gradient for a loss `Σ_i c_i(u_i) + α Σ_i log π(a_i)`
    /// given `∂c/∂u`.
    pub fn output_gradient(&self, s: &ActorSample, d_u: ArrayView2<f64>, alpha: f64, extra_d_mu: Option<ArrayView2<f64>>) -> Array2<f64> {
        let k = self.act_dim();
        let n = s.a.nrows();
        let mut d = Array2::zeros((n, 2 * k));
        for i in 0..n {
            for j in 0..k {
                let t = s.a[[i, j]];
                let one_m = 1.0 - t * t;
                let sigma = s.log_std[[i, j]].exp();
                let e = s.eps[[i, j]];
                // d log π / dz through the tanh correction term.
                let dlp_dz = 2.0 * t * one_m / (one_m + 1e-6);
                let dc_dz = d_u[[i, j]] * self.half[j] * one_m;
                let mut d_mu = dc_dz + alpha * dlp_dz;
                if let Some(extra) = &extra_d_mu {
                    d_mu += extra[[i, j]];
                }
                d[[i, j]] = d_mu;
                if s.log_std_free[[i, j]] {
                    d[[i, k + j]] = (dc_dz + alpha * dlp_dz) * sigma * e - alpha;
                }
            }
        }
        d
    }
}

/// Twin-critic member: `Q(x, u_R, u_H)` on scaled inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub net: Mlp,
    pub input_scale: Vec<f64>,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: &[usize], robot_box: &[Interval; 2], human_box: &[Interval; 2], rng: &mut R) -> Self {
        let mut scale = input_scale(state_dim);
        scale.extend(robot_box.iter().map(|b| 2.0 / (b.hi - b.lo)));
        scale.extend(human_box.iter().map(|b| 2.0 / (b.hi - b.lo)));
        let mut sizes = vec![state_dim + 4];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self { net: Mlp::new(&sizes, Activation::Relu, rng), input_scale: scale }
    }

    /// Assemble scaled inputs `[x, u_R, u_H]`.
    pub fn inputs(&self, x: ArrayView2<f64>, u_r: ArrayView2<f64>, u_h: ArrayView2<f64>) -> Array2<f64> {
        let (n, dx) = x.dim();
        let mut z = Array2::zeros((n, dx + 4));
        for i in 0..n {
            for j in 0..dx {
                z[[i, j]] = x[[i, j]] * self.input_scale[j];
            }
            for j in 0..2 {
                z[[i, dx + j]] = u_r[[i, j]] * self.input_scale[dx + j];
                z[[i, dx + 2 + j]] = u_h[[i, j]] * self.input_scale[dx + 2 + j];
            }
        }
        z
    }

    pub fn q(&self, x: ArrayView2<f64>, u_r: ArrayView2<f64>, u_h: ArrayView2<f64>) -> Vec<f64> {
        self.net.forward(self.inputs(x, u_r, u_h).view()).column(0).to_vec()
    }
}

/// Trained networks of one variant.
#[derive(Clone, Debug, PartialEq)]
pub struct RaPolicy {
    pub variant: Variant,
    pub robot: SquashedGaussian,
    pub adversary: SquashedGaussian,
    pub critics: [Critic; 2],
}

#[derive(Serialize, Deserialize)]
struct PolicyMeta {
    variant: Variant,
    state_dim: usize,
    robot_box: [Interval; 2],
    human_box: [Interval; 2],
}

impl RaPolicy {
    pub fn new<R: Rng + ?Sized>(variant: Variant, hidden: &[usize], robot_box: &[Interval; 2], human_box: &[Interval; 2], rng: &mut R) -> Self {
        let d = variant.state_dim();
        Self {
            variant,
            robot: SquashedGaussian::new(d, hidden, robot_box, input_scale(d), rng),
            adversary: SquashedGaussian::new(d, hidden, human_box, input_scale(d), rng),
            critics: [Critic::new(d, hidden, robot_box, human_box, rng), Critic::new(d, hidden, robot_box, human_box, rng)],
        }
    }

    fn boxes(&self) -> ([Interval; 2], [Interval; 2]) {
        let b = |g: &SquashedGaussian| std::array::from_fn(|j| Interval::new(g.center[j] - g.half[j], g.center[j] + g.half[j]));
        (b(&self.robot), b(&self.adversary))
    }

    /// Critic estimate of the game value under both deterministic actors,
    /// the larger of the twins.
    pub fn value(&self, s: &ExtendedState) -> f64 {
        let u_r = self.robot.mean_action(&s.x);
        let raw = self.adversary.mean_action(&s.x);
        let u_h = adversary_projection(Torque::new(raw[0], raw[1]), &s.bound);
        let x = ArrayView2::from_shape((1, s.x.len()), &s.x).expect("row");
        let ur = ArrayView2::from_shape((1, 2), &u_r).expect("row");
        let uh = ArrayView2::from_shape((1, 2), &u_h.u).expect("row");
        self.critics.iter().map(|c| c.q(x, ur, uh)[0]).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let (robot_box, human_box) = self.boxes();
        let meta = PolicyMeta { variant: self.variant, state_dim: self.variant.state_dim(), robot_box, human_box };
        Checkpoint::new(CHECKPOINT_KIND, serde_json::to_value(meta).expect("meta serializes"))
            .with_net("robot_actor", self.robot.net.clone())
            .with_net("adversary_actor", self.adversary.net.clone())
            .with_net("critic1", self.critics[0].net.clone())
            .with_net("critic2", self.critics[1].net.clone())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, NetError> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(NetError::Checkpoint(format!("expected a policy checkpoint, found `{}`", ck.kind)));
        }
        let meta: PolicyMeta = serde_json::from_value(ck.meta.clone()).map_err(|e| NetError::Checkpoint(e.to_string()))?;
        let d = meta.state_dim;
        if d != meta.variant.state_dim() {
            return Err(NetError::ShapeMismatch { expected: meta.variant.state_dim(), got: d });
        }
        let actor = |net: &Mlp, b: &[Interval; 2]| SquashedGaussian {
            net: net.clone(),
            input_scale: input_scale(d),
            center: b.iter().map(|i| 0.5 * (i.lo + i.hi)).collect(),
            half: b.iter().map(|i| 0.5 * (i.hi - i.lo)).collect(),
        };
        let mut cscale = input_scale(d);
        cscale.extend(meta.robot_box.iter().map(|b| 2.0 / (b.hi - b.lo)));
        cscale.extend(meta.human_box.iter().map(|b| 2.0 / (b.hi - b.lo)));
        let critic = |net: &Mlp| Critic { net: net.clone(), input_scale: cscale.clone() };
        let p = Self {
            variant: meta.variant,
            robot: actor(ck.net("robot_actor")?, &meta.robot_box),
            adversary: actor(ck.net("adversary_actor")?, &meta.human_box),
            critics: [critic(ck.net("critic1")?), critic(ck.net("critic2")?)],
        };
        for net in [&p.robot.net, &p.adversary.net] {
            if net.input_dim() != d || net.output_dim() != 4 {
                return Err(NetError::ShapeMismatch { expected: d, got: net.input_dim() });
            }
        }
        for c in &p.critics {
            if c.net.input_dim() != d + 4 || c.net.output_dim() != 1 {
                return Err(NetError::ShapeMismatch { expected: d + 4, got: c.net.input_dim() });
            }
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Deployed robot action: the robot actor's mean, clamped to the robot box.
pub fn safe_policy_step(policy: &RaPolicy, state: &ExtendedState, robot_box: &[Interval; 2]) -> Torque {
    let u = policy.robot.mean_action(&state.x);
    Torque::new(robot_box[0].clamp(u[0]), robot_box[1].clamp(u[1]))
}

/// Adversary action for `state`, sampled or deterministic, projected into
/// the state's bound.
pub fn adversary_step<R: Rng + ?Sized>(policy: &RaPolicy, state: &ExtendedState, rng: Option<&mut R>) -> Torque {
    let raw = match rng {
        Some(r) => policy.adversary.sample_one(&state.x, r),
        None => policy.adversary.mean_action(&state.x),
    };
    adversary_projection(Torque::new(raw[0], raw[1]), &state.bound)
}

/// Keeps a bound usable as a clamp target even if it came in degenerate.
pub fn full_bound(b: &[Interval; 2]) -> ControlBound {
    ControlBound::from_box(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn boxes() -> ([Interval; 2], [Interval; 2]) {
        ([Interval::symmetric(15.0); 2], [Interval::symmetric(10.0); 2])
    }

    #[test]
    fn samples_stay_in_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (rb, _) = boxes();
        let mut a = SquashedGaussian::new(3, &[8], &rb, vec![1.0; 3], &mut rng);
        a.net.layers.last_mut().unwrap().b[0] = 30.0;
        let x = Array2::from_shape_fn((50, 3), |(i, j)| (i * 3 + j) as f64 * 0.1 - 2.0);
        let s = a.sample_batch(x.view(), &mut rng);
        assert!(s.u.iter().all(|v| v.abs() <= 15.0));
    }

    /// Reparameterized gradient against finite differences on fixed noise.
    #[test]
    fn actor_output_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (rb, _) = boxes();
        let a = SquashedGaussian::new(2, &[4], &rb, vec![1.0; 2], &mut rng);
        let x = Array2::from_shape_fn((1, 2), |(_, j)| 0.3 + j as f64);
        let s = a.sample_batch(x.view(), &mut ChaCha8Rng::seed_from_u64(5));
        let alpha = 0.3;
        let w = [0.7, -1.1];
        // loss = w·u + α log π, as a function of the raw outputs with fixed ε
        let loss = |out: &[f64]| {
            let mut l = 0.0;
            for j in 0..2 {
                let ls = out[2 + j].clamp(LOG_STD_MIN, LOG_STD_MAX);
                let e = s.eps[[0, j]];
                let t = (out[j] + ls.exp() * e).tanh();
                l += w[j] * (a.center[j] + a.half[j] * t);
                l += alpha * (-0.5 * e * e - ls - 0.5 * (2.0 * std::f64::consts::PI).ln() - (1.0 - t * t + 1e-6).ln());
            }
            l
        };
        let out: Vec<f64> = s.tape.output.row(0).to_vec();
        let du = Array2::from_shape_vec((1, 2), w.to_vec()).unwrap();
        let g = a.output_gradient(&s, du.view(), alpha, None);
        for k in 0..4 {
            let mut p = out.clone();
            p[k] += 1e-6;
            let mut m = out.clone();
            m[k] -= 1e-6;
            let fd = (loss(&p) - loss(&m)) / 2e-6;
            assert!((fd - g[[0, k]]).abs() < 1e-5 * (1.0 + fd.abs()), "output {k}: fd {fd} vs {}", g[[0, k]]);
        }
    }

    #[test]
    fn policy_checkpoint_round_trip_and_step_in_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (rb, hb) = boxes();
        let p = RaPolicy::new(Variant::Slide, &[16, 16], &rb, &hb, &mut rng);
        let back = RaPolicy::from_checkpoint(&Checkpoint::from_bytes(&p.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, p);
        let s = ExtendedState { x: vec![0.5; 39], bound: ControlBound { lo: [-1.0; 2], hi: [1.0; 2] }, prediction: None };
        let u = safe_policy_step(&p, &s, &rb);
        assert!(u.u.iter().all(|v| v.abs() <= 15.0));
        assert_eq!(u, safe_policy_step(&p, &s, &rb));
        let d = adversary_step::<ChaCha8Rng>(&p, &s, None);
        assert!(s.bound.contains(d.u));
    }
}
