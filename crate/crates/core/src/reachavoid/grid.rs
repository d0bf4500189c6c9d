//! Tabular reach-avoid game on a gridded double integrator.
//!
//! Used to verify the discounted backup: value iteration on the grid is
//! checked against an exhaustive finite-depth min-max classification of
//! the same discrete game.

use serde::{Deserialize, Serialize};

use super::discounted_backup;
use crate::error::SolverError;

pub const MAX_SWEEPS: usize = 100_000;

/// Geometry of the toy game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    /// Grid points per axis; position and velocity both span `[-1, 1]`.
    pub n: usize,
    pub dt: f64,
    pub controls: Vec<f64>,
    pub disturbances: Vec<f64>,
    /// Target: `max(|p|, |v|) ≤ target_half_width`.
    pub target_half_width: f64,
    /// Failure: `|p| > wall`.
    pub wall: f64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            n: 41,
            dt: 0.1,
            controls: vec![-1.0, 0.0, 1.0],
            disturbances: vec![-0.4, 0.0, 0.4],
            // Halfway between grid lines: no cell has a near-zero margin.
            target_half_width: 0.175,
            wall: 0.825,
        }
    }
}

/// Discrete game: margins per cell and successor table.
#[derive(Clone, Debug, PartialEq)]
pub struct GridGame {
    pub spec: ToySpec,
    pub l: Vec<f64>,
    pub g: Vec<f64>,
    /// `next[(x · |U| + u) · |D| + d]`.
    pub next: Vec<usize>,
}

impl GridGame {
    pub fn new(spec: ToySpec) -> Self {
        assert!(spec.n >= 2 && spec.controls.len() >= 2 && !spec.disturbances.is_empty());
        let n = spec.n;
        let h = spec.spacing();
        let mut l = Vec::with_capacity(n * n);
        let mut g = Vec::with_capacity(n * n);
        let mut next = Vec::with_capacity(n * n * spec.controls.len() * spec.disturbances.len());
        for x in 0..n * n {
            let (p, v) = spec.coords(x);
            l.push(p.abs().max(v.abs()) - spec.target_half_width);
            g.push(p.abs() - spec.wall);
            for &u in &spec.controls {
                for &d in &spec.disturbances {
                    let p2 = p + v * spec.dt;
                    let v2 = v + (u + d) * spec.dt;
                    next.push(spec.snap(p2, v2, h));
                }
            }
        }
        Self { spec, l, g, next }
    }

    pub fn len(&self) -> usize {
        self.l.len()
    }

    pub fn is_empty(&self) -> bool {
        self.l.is_empty()
    }

    pub fn n_controls(&self) -> usize {
        self.spec.controls.len()
    }

    pub fn n_disturbances(&self) -> usize {
        self.spec.disturbances.len()
    }

    pub fn successor(&self, x: usize, u: usize, d: usize) -> usize {
        self.next[(x * self.n_controls() + u) * self.n_disturbances() + d]
    }

    /// `max_d V(x⁺)` for each control and the maximizing disturbance (lowest index on ties).
    fn worst_case(&self, v: &[f64], x: usize, u: usize) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for d in 0..self.n_disturbances() {
            let val = v[self.successor(x, u, d)];
            if val > best.0 {
                best = (val, d);
            }
        }
        best
    }

    /// `min_u max_d V(x⁺)` and the minimizing control (lowest index on ties).
    fn min_max(&self, v: &[f64], x: usize) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for u in 0..self.n_controls() {
            let (val, _) = self.worst_case(v, x, u);
            if val < best.0 {
                best = (val, u);
            }
        }
        best
    }
}

impl ToySpec {
    pub fn spacing(&self) -> f64 {
        2.0 / (self.n - 1) as f64
    }

    pub fn coords(&self, x: usize) -> (f64, f64) {
        let h = self.spacing();
        let (i, j) = (x / self.n, x % self.n);
        (-1.0 + i as f64 * h, -1.0 + j as f64 * h)
    }

    fn snap(&self, p: f64, v: f64, h: f64) -> usize {
        let idx = |z: f64| (((z + 1.0) / h).round().max(0.0) as usize).min(self.n - 1);
        idx(p) * self.n + idx(v)
    }
}

/// One synchronous sweep of the discounted backup over every cell.
pub fn backup(game: &GridGame, v: &[f64], gamma: f64) -> Vec<f64> {
    (0..game.len())
        .map(|x| discounted_backup(game.l[x], game.g[x], gamma, game.min_max(v, x).0))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViResult {
    pub value: Vec<f64>,
    /// Minimizing control index per cell.
    pub control: Vec<usize>,
    /// Maximizing disturbance index per (cell, control).
    pub disturbance: Vec<usize>,
    /// Sup-norm change of each sweep.
    pub residuals: Vec<f64>,
}

impl ViResult {
    pub fn sweeps(&self) -> usize {
        self.residuals.len()
    }

    /// Cells with `V ≤ 0`: reach-avoid feasible.
    pub fn win_set(&self) -> Vec<bool> {
        self.value.iter().map(|&v| v <= 0.0).collect()
    }
}

/// Iterate the backup from `V = max{g, l}` until the sup-norm residual drops
/// below `tol`, then extract both players' policies.
pub fn value_iteration(game: &GridGame, gamma: f64, tol: f64) -> Result<ViResult, SolverError> {
    if !(tol > 0.0) || !(0.0..1.0).contains(&gamma) {
        return Err(SolverError::Invalid(format!("need tol > 0 and 0 ≤ γ < 1 (tol {tol}, γ {gamma})")));
    }
    let mut v: Vec<f64> = game.g.iter().zip(&game.l).map(|(g, l)| g.max(*l)).collect();
    let mut residuals = Vec::new();
    loop {
        let nv = backup(game, &v, gamma);
        let r = nv.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        residuals.push(r);
        v = nv;
        if r < tol {
            break;
        }
        if residuals.len() >= MAX_SWEEPS {
            return Err(SolverError::IterationLimit { sweeps: MAX_SWEEPS, residual: r });
        }
    }
    let control = (0..game.len()).map(|x| game.min_max(&v, x).1).collect();
    let disturbance = (0..game.len())
        .flat_map(|x| (0..game.n_controls()).map(move |u| (x, u)))
        .map(|(x, u)| game.worst_case(&v, x, u).1)
        .collect();
    Ok(ViResult { value: v, control, disturbance, residuals })
}

/// Exhaustive min-max classification up to `depth` moves: a cell wins if it
/// is safe and either in the target or has a control that wins against
/// every disturbance with one move fewer. Sub-games are memoized by depth.
pub fn game_tree_win_set(game: &GridGame, depth: usize) -> Vec<bool> {
    let safe: Vec<bool> = game.g.iter().map(|&g| g <= 0.0).collect();
    let mut win: Vec<bool> = (0..game.len()).map(|x| safe[x] && game.l[x] <= 0.0).collect();
    for _ in 0..depth {
        let prev = win.clone();
        for x in 0..game.len() {
            if win[x] || !safe[x] {
                continue;
            }
            win[x] = (0..game.n_controls()).any(|u| (0..game.n_disturbances()).all(|d| prev[game.successor(x, u, d)]));
        }
    }
    win
}

/// Fraction of cells on which two classifications agree.
pub fn agreement(a: &[bool], b: &[bool]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len().max(1) as f64
}

/// Mean of per-class recall.
pub fn balanced_accuracy(predicted: &[bool], truth: &[bool]) -> f64 {
    let (mut tp, mut p, mut tn, mut n) = (0usize, 0usize, 0usize, 0usize);
    for (&a, &t) in predicted.iter().zip(truth) {
        if t {
            p += 1;
            tp += usize::from(a);
        } else {
            n += 1;
            tn += usize::from(!a);
        }
    }
    let rec = |hit: usize, tot: usize| if tot == 0 { 1.0 } else { hit as f64 / tot as f64 };
    0.5 * (rec(tp, p) + rec(tn, n))
}
