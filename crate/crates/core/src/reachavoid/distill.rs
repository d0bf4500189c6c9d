//! Distillation of the tabular toy solution into the network classes used
//! by the full game, checked against the oracle.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::grid::{balanced_accuracy, GridGame, ViResult};
use super::policy::SquashedGaussian;
use super::sac::regress;
use crate::dynamics::Interval;
use crate::nn::{Activation, Mlp};

#[derive(Clone, Debug, PartialEq)]
pub struct DistillConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64, 64], epochs: 1_500, batch: 64, lr: 1e-3, seed: 0 }
    }
}

pub struct ToyNets {
    pub critic: Mlp,
    pub actor: SquashedGaussian,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillReport {
    /// Balanced accuracy of `critic ≤ 0` against the oracle win set.
    pub balanced_accuracy: f64,
    /// Fraction of cells where the actor's deterministic action, snapped to
    /// the nearest discrete control, equals the oracle control.
    pub action_match: f64,
}

fn grid_inputs(game: &GridGame) -> Array2<f64> {
    Array2::from_shape_fn((game.len(), 2), |(x, c)| {
        let (p, v) = game.spec.coords(x);
        if c == 0 {
            p
        } else {
            v
        }
    })
}

pub fn distill_toy(game: &GridGame, oracle: &ViResult, cfg: &DistillConfig) -> ToyNets {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = grid_inputs(game);
    let mut sizes = vec![2];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(1);
    let mut critic = Mlp::new(&sizes, Activation::Relu, &mut rng);
    let v = Array2::from_shape_fn((game.len(), 1), |(i, _)| oracle.value[i]);
    regress(&mut critic, x.view(), v.view(), cfg.epochs, cfg.batch, cfg.lr, cfg.seed);

    let lo = game.spec.controls.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = game.spec.controls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut actor = SquashedGaussian::new(2, &cfg.hidden, &[Interval::new(lo, hi)], vec![1.0, 1.0], &mut rng);
    let center = actor.center[0];
    let half = actor.half[0];
    // Pre-squash targets; the box edges map slightly inside so tanh can reach them.
    let y = Array2::from_shape_fn((game.len(), 2), |(i, c)| {
        if c == 0 {
            let u = game.spec.controls[oracle.control[i]];
            (((u - center) / half).clamp(-0.95, 0.95)).atanh()
        } else {
            -2.0
        }
    });
    regress(&mut actor.net, x.view(), y.view(), cfg.epochs, cfg.batch, cfg.lr, cfg.seed.wrapping_add(1));
    ToyNets { critic, actor }
}

pub fn nearest_control(controls: &[f64], u: f64) -> usize {
    let mut best = 0;
    for (i, c) in controls.iter().enumerate() {
        if (c - u).abs() < (controls[best] - u).abs() {
            best = i;
        }
    }
    best
}

pub fn evaluate_toy(game: &GridGame, oracle: &ViResult, nets: &ToyNets) -> DistillReport {
    let x = grid_inputs(game);
    let v = nets.critic.forward(x.view());
    let predicted: Vec<bool> = v.column(0).iter().map(|&z| z <= 0.0).collect();
    let mut hits = 0;
    for i in 0..game.len() {
        let u = nets.actor.mean_action(&[x[[i, 0]], x[[i, 1]]])[0];
        if nearest_control(&game.spec.controls, u) == oracle.control[i] {
            hits += 1;
        }
    }
    DistillReport {
        balanced_accuracy: balanced_accuracy(&predicted, &oracle.win_set()),
        action_match: hits as f64 / game.len() as f64,
    }
}
