//! Human action predictors with Gaussian-mixture heads.
//!
//! The marginal predictor sees one second of end-effector history for both
//! arms plus the goal layout. The conditional (CBP) predictor additionally
//! sees the robot's planned end-effector path. Both output a mixture over
//! the human's next `HORIZON` torque commands.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dynamics::{advance, forward_kinematics, ArmParams, JointState, Torque};
use crate::error::{DynamicsError, NetError};
use crate::nn::{Activation, Adam, Mlp};
use crate::world::{Scene, NUM_GOALS};

pub const MODES: usize = 5;
pub const HORIZON: usize = 10;
pub const HISTORY: usize = 10;
pub const PLAN_LEN: usize = 20;
pub const ACT_DIM: usize = 2;
pub const MARGINAL_DIM: usize = HISTORY * 4 + NUM_GOALS * 2 + NUM_GOALS * 2;
pub const CBP_DIM: usize = MARGINAL_DIM + PLAN_LEN * 2;
pub const BELIEF_DIM: usize = MODES * 3;
pub const SIGMA_MIN: f64 = 1e-3;
pub const HIDDEN: usize = 256;
/// Network outputs are in units of `action_scale` N·m.
pub const DEFAULT_ACTION_SCALE: f64 = 10.0;

const CHECKPOINT_KIND: &str = "predictor";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Marginal,
    Cbp,
}

impl PredictorKind {
    pub fn input_dim(self) -> usize {
        match self {
            PredictorKind::Marginal => MARGINAL_DIM,
            PredictorKind::Cbp => CBP_DIM,
        }
    }
}

impl FromStr for PredictorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "marginal" => Ok(PredictorKind::Marginal),
            "cbp" => Ok(PredictorKind::Cbp),
            _ => Err(format!("unknown predictor kind `{s}` (expected marginal|cbp)")),
        }
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictorKind::Marginal => "marginal",
            PredictorKind::Cbp => "cbp",
        })
    }
}

/// One mixture component over a `horizon × 2` torque trajectory with
/// diagonal covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmMode {
    pub weight: f64,
    pub mean: Vec<[f64; ACT_DIM]>,
    pub log_std: Vec<[f64; ACT_DIM]>,
}

impl GmmMode {
    pub fn std(&self, k: usize, d: usize) -> f64 {
        self.log_std[k][d].exp()
    }

    pub fn log_density(&self, traj: &[[f64; ACT_DIM]]) -> f64 {
        let mut s = 0.0;
        for (k, u) in traj.iter().enumerate() {
            for d in 0..ACT_DIM {
                let z = (u[d] - self.mean[k][d]) / self.std(k, d);
                s += -0.5 * z * z - self.log_std[k][d] - 0.5 * (2.0 * PI).ln();
            }
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmPrediction {
    pub modes: Vec<GmmMode>,
}

impl GmmPrediction {
    pub fn horizon(&self) -> usize {
        self.modes.first().map(|m| m.mean.len()).unwrap_or(0)
    }

    /// Index of the highest-weight mode, lowest index on ties.
    pub fn top_index(&self) -> usize {
        let mut best = 0;
        for (i, m) in self.modes.iter().enumerate() {
            if m.weight > self.modes[best].weight {
                best = i;
            }
        }
        best
    }

    pub fn most_likely(&self) -> &GmmMode {
        &self.modes[self.top_index()]
    }

    pub fn weight_sum(&self) -> f64 {
        self.modes.iter().map(|m| m.weight).sum()
    }

    /// Mixture negative log-likelihood of a torque trajectory.
    pub fn nll(&self, traj: &[[f64; ACT_DIM]]) -> f64 {
        let a: Vec<f64> = self.modes.iter().map(|m| m.weight.ln() + m.log_density(traj)).collect();
        -log_sum_exp(&a)
    }
}

fn log_sum_exp(a: &[f64]) -> f64 {
    let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + a.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Flatten one prediction anchor into a feature vector.
///
/// `history[i] = [robot_ee, human_ee]` for the last `HISTORY` ticks, oldest
/// first. Positions are taken relative to the midpoint between the bases.
pub fn featurize(history: &[[[f64; 2]; 2]], scene: &Scene, plan: Option<&[[f64; 2]]>) -> Result<Vec<f64>, NetError> {
    if history.len() != HISTORY {
        return Err(NetError::ShortHistory { expected: HISTORY, got: history.len() });
    }
    let c = scene.center();
    let mut v = Vec::with_capacity(CBP_DIM);
    for tick in history {
        for p in tick {
            v.push(p[0] - c[0]);
            v.push(p[1] - c[1]);
        }
    }
    for g in &scene.goals {
        v.push(g.position[0] - c[0]);
        v.push(g.position[1] - c[1]);
    }
    for g in &scene.goals {
        v.extend_from_slice(&g.semantic_class.one_hot());
    }
    if let Some(plan) = plan {
        if plan.len() != PLAN_LEN {
            return Err(NetError::ShapeMismatch { expected: PLAN_LEN, got: plan.len() });
        }
        for p in plan {
            v.push(p[0] - c[0]);
            v.push(p[1] - c[1]);
        }
    }
    Ok(v)
}

/// Output layout of a mixture head: `[logits (M)] [means (M × H·2)] [raw log-std (M × H·2)]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadShape {
    pub modes: usize,
    pub horizon: usize,
}

impl HeadShape {
    pub const DEFAULT: HeadShape = HeadShape { modes: MODES, horizon: HORIZON };

    pub fn comps(&self) -> usize {
        self.horizon * ACT_DIM
    }

    pub fn out_dim(&self) -> usize {
        self.modes * (1 + 2 * self.comps())
    }

    fn mean_at(&self, m: usize) -> usize {
        self.modes + m * self.comps()
    }

    fn log_std_at(&self, m: usize) -> usize {
        self.modes + (self.modes + m) * self.comps()
    }
}

/// Losses of one batch, averaged over samples, in network units.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub nll: f64,
    pub mse: f64,
    pub total: f64,
}

/// Per-sample mixture loss. Accumulates `scale · ∂loss/∂raw` into `d_raw`.
fn sample_loss(head: HeadShape, raw: &[f64], y: &[f64], mse_weight: f64, scale: f64, d_raw: &mut [f64]) -> (f64, f64) {
    let m_count = head.modes;
    let c = head.comps();
    let ln_smin = SIGMA_MIN.ln();
    let logits = &raw[..m_count];
    let lse_logits = log_sum_exp(logits);
    let mut a = vec![0.0; m_count];
    for m in 0..m_count {
        let mu = &raw[head.mean_at(m)..head.mean_at(m) + c];
        let ls = &raw[head.log_std_at(m)..head.log_std_at(m) + c];
        let mut log_n = 0.0;
        for k in 0..c {
            let l = ls[k].max(ln_smin);
            let z = (y[k] - mu[k]) / l.exp();
            log_n += -0.5 * z * z - l - 0.5 * (2.0 * PI).ln();
        }
        a[m] = logits[m] - lse_logits + log_n;
    }
    let total = log_sum_exp(&a);
    let nll = -total;
    for m in 0..m_count {
        let r = (a[m] - total).exp();
        let w = (logits[m] - lse_logits).exp();
        d_raw[m] += scale * (w - r);
        let (mo, so) = (head.mean_at(m), head.log_std_at(m));
        for k in 0..c {
            let raw_ls = raw[so + k];
            let l = raw_ls.max(ln_smin);
            let sigma = l.exp();
            let z = (y[k] - raw[mo + k]) / sigma;
            d_raw[mo + k] += scale * (-r * z / sigma);
            if raw_ls > ln_smin {
                d_raw[so + k] += scale * r * (1.0 - z * z);
            }
        }
    }
    let mut top = 0;
    for m in 1..m_count {
        if logits[m] > logits[top] {
            top = m;
        }
    }
    let mo = head.mean_at(top);
    let mut mse = 0.0;
    for k in 0..c {
        let e = y[k] - raw[mo + k];
        mse += e * e / c as f64;
        d_raw[mo + k] += scale * mse_weight * (-2.0 * e / c as f64);
    }
    (nll, mse)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    pub kind: PredictorKind,
    pub net: Mlp,
    pub head: HeadShape,
    pub action_scale: f64,
}

impl Predictor {
    /// Full-size network: three dense layers, two hidden of width 256.
    pub fn new(kind: PredictorKind, seed: u64) -> Self {
        Self::with_shape(kind, kind.input_dim(), &[HIDDEN, HIDDEN], HeadShape::DEFAULT, DEFAULT_ACTION_SCALE, seed)
    }

    pub fn with_shape(
        kind: PredictorKind,
        input_dim: usize,
        hidden: &[usize],
        head: HeadShape,
        action_scale: f64,
        seed: u64,
    ) -> Self {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(head.out_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::new(&sizes, Activation::Relu, &mut rng);
        // Start from near-uniform mixture weights and unit spreads.
        let last = net.layers.last_mut().expect("nonempty");
        last.w.mapv_inplace(|v| v * 0.1);
        Self { kind, net, head, action_scale }
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Decode one raw output row.
    pub fn decode(&self, raw: &[f64]) -> GmmPrediction {
        let h = self.head;
        let c = h.comps();
        let lse = log_sum_exp(&raw[..h.modes]);
        let ln_smin = SIGMA_MIN.ln();
        let ln_scale = self.action_scale.ln();
        let modes = (0..h.modes)
            .map(|m| {
                let (mo, so) = (h.mean_at(m), h.log_std_at(m));
                let mean = (0..h.horizon)
                    .map(|k| std::array::from_fn(|d| raw[mo + k * ACT_DIM + d] * self.action_scale))
                    .collect();
                let log_std = (0..h.horizon)
                    .map(|k| std::array::from_fn(|d| raw[so + k * ACT_DIM + d].max(ln_smin) + ln_scale))
                    .collect();
                debug_assert!(c == h.horizon * ACT_DIM);
                GmmMode { weight: (raw[m] - lse).exp(), mean, log_std }
            })
            .collect();
        GmmPrediction { modes }
    }

    fn check_input(&self, got: usize) -> Result<(), NetError> {
        if got != self.input_dim() {
            return Err(NetError::ShapeMismatch { expected: self.input_dim(), got });
        }
        Ok(())
    }

    pub fn predict(&self, fv: &[f64]) -> Result<GmmPrediction, NetError> {
        self.check_input(fv.len())?;
        Ok(self.decode(&self.net.forward_one(fv)))
    }

    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<GmmPrediction>, NetError> {
        self.check_input(x.ncols())?;
        let out = self.net.forward(x);
        Ok(out.axis_iter(Axis(0)).map(|row| self.decode(row.as_slice().expect("contiguous"))).collect())
    }

    /// Batch-mean loss and exact parameter gradient. `y` holds raw torque
    /// trajectories, one flattened `horizon × 2` row per sample.
    pub fn loss_and_grad(&self, x: ArrayView2<f64>, y: ArrayView2<f64>, mse_weight: f64) -> Result<(LossParts, Mlp), NetError> {
        self.check_input(x.ncols())?;
        if y.ncols() != self.head.comps() || y.nrows() != x.nrows() {
            return Err(NetError::ShapeMismatch { expected: self.head.comps(), got: y.ncols() });
        }
        let tape = self.net.forward_tape(x);
        let n = x.nrows();
        let mut d_out = Array2::zeros(tape.output.raw_dim());
        let mut parts = LossParts::default();
        let inv_scale = 1.0 / self.action_scale;
        let mut y_norm = vec![0.0; self.head.comps()];
        for i in 0..n {
            for (k, v) in y.row(i).iter().enumerate() {
                y_norm[k] = v * inv_scale;
            }
            let raw = tape.output.row(i);
            let mut d_row = d_out.row_mut(i);
            let (nll, mse) = sample_loss(
                self.head,
                raw.as_slice().expect("contiguous"),
                &y_norm,
                mse_weight,
                1.0 / n as f64,
                d_row.as_slice_mut().expect("contiguous"),
            );
            parts.nll += nll / n as f64;
            parts.mse += mse / n as f64;
        }
        parts.total = parts.nll + mse_weight * parts.mse;
        let (grads, _) = self.net.backward(&tape, d_out.view());
        Ok((parts, grads))
    }

    pub fn loss(&self, x: ArrayView2<f64>, y: ArrayView2<f64>, mse_weight: f64) -> Result<LossParts, NetError> {
        Ok(self.loss_and_grad(x, y, mse_weight)?.0)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            CHECKPOINT_KIND,
            serde_json::json!({
                "predictor_kind": self.kind,
                "modes": self.head.modes,
                "horizon": self.head.horizon,
                "action_scale": self.action_scale,
            }),
        )
        .with_net("gmm", self.net.clone())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, NetError> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(NetError::Checkpoint(format!("expected a predictor checkpoint, found `{}`", ck.kind)));
        }
        let bad = |k: &str| NetError::Checkpoint(format!("predictor checkpoint missing `{k}`"));
        let kind: PredictorKind =
            serde_json::from_value(ck.meta.get("predictor_kind").cloned().ok_or_else(|| bad("predictor_kind"))?)
                .map_err(|e| NetError::Checkpoint(e.to_string()))?;
        let modes = ck.meta.get("modes").and_then(|v| v.as_u64()).ok_or_else(|| bad("modes"))? as usize;
        let horizon = ck.meta.get("horizon").and_then(|v| v.as_u64()).ok_or_else(|| bad("horizon"))? as usize;
        let action_scale = ck.meta.get("action_scale").and_then(|v| v.as_f64()).ok_or_else(|| bad("action_scale"))?;
        let net = ck.net("gmm")?.clone();
        let head = HeadShape { modes, horizon };
        if net.output_dim() != head.out_dim() {
            return Err(NetError::ShapeMismatch { expected: head.out_dim(), got: net.output_dim() });
        }
        Ok(Self { kind, net, head, action_scale })
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Supervised prediction examples. `groups` (typically the episode index)
/// keeps correlated anchors on the same side of the validation split.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub groups: Vec<u64>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Samples {
        Samples {
            x: self.x.select(Axis(0), idx),
            y: self.y.select(Axis(0), idx),
            groups: idx.iter().map(|&i| self.groups[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Fraction of groups held out for early stopping; 0 disables it.
    pub val_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub mse_weight: f64,
    pub max_grad_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 256,
            lr: 1e-3,
            seed: 0,
            val_fraction: 0.1,
            patience: 4,
            mse_weight: 1.0,
            max_grad_norm: 10.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_nll: Vec<f64>,
    pub best_epoch: usize,
}

fn split_by_group(data: &Samples, frac: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    if frac <= 0.0 {
        return ((0..data.len()).collect(), Vec::new());
    }
    let mut groups: Vec<u64> = data.groups.clone();
    groups.sort_unstable();
    groups.dedup();
    groups.shuffle(rng);
    let n_val = ((groups.len() as f64 * frac).round() as usize).clamp(usize::from(groups.len() > 1), groups.len().saturating_sub(1));
    let val: std::collections::HashSet<u64> = groups[..n_val].iter().copied().collect();
    (0..data.len()).partition(|&i| !val.contains(&data.groups[i]))
}

/// Mini-batch Adam on NLL + top-mode MSE, keeping the parameters with the
/// best validation NLL.
pub fn train(pred: &mut Predictor, data: &Samples, cfg: &TrainConfig) -> Result<TrainReport, NetError> {
    if data.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train_idx, val_idx) = split_by_group(data, cfg.val_fraction, &mut rng);
    let val = (!val_idx.is_empty()).then(|| data.select(&val_idx));
    let mut opt = Adam::new(&pred.net, cfg.lr).with_clip(cfg.max_grad_norm);
    let mut report = TrainReport::default();
    let mut best: Option<(f64, Mlp)> = None;
    let mut since_best = 0;
    let mut order = train_idx;
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let xb = data.x.select(Axis(0), chunk);
            let yb = data.y.select(Axis(0), chunk);
            let (parts, grads) = pred.loss_and_grad(xb.view(), yb.view(), cfg.mse_weight)?;
            if !parts.total.is_finite() || !grads.is_finite() {
                return Err(NetError::Diverged { step });
            }
            opt.step(&mut pred.net, &grads);
            sum += parts.total * chunk.len() as f64;
            count += chunk.len();
            step += 1;
        }
        report.train_loss.push(sum / count.max(1) as f64);
        if let Some(val) = &val {
            let v = evaluate_nll(pred, val)?;
            if !v.is_finite() {
                return Err(NetError::Diverged { step });
            }
            report.val_nll.push(v);
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, pred.net.clone()));
                report.best_epoch = epoch;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        } else {
            report.best_epoch = epoch;
        }
    }
    if let Some((_, net)) = best {
        pred.net = net;
    }
    Ok(report)
}

/// Mean NLL in network units, evaluated in chunks.
pub fn evaluate_nll(pred: &Predictor, data: &Samples) -> Result<f64, NetError> {
    let mut sum = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(1024) {
        let xb = data.x.select(Axis(0), chunk);
        let yb = data.y.select(Axis(0), chunk);
        sum += pred.loss(xb.view(), yb.view(), 0.0)?.nll * chunk.len() as f64;
    }
    Ok(sum / data.len().max(1) as f64)
}

/// End-effector positions after each tick of applying `torques` from `state0`.
pub fn implied_ee_trajectory(
    torques: &[[f64; ACT_DIM]],
    params: &ArmParams,
    state0: &JointState,
) -> Result<Vec<[f64; 2]>, DynamicsError> {
    let mut s = *state0;
    let mut out = Vec::with_capacity(torques.len());
    for u in torques {
        s = advance(params, &s, Torque::new(u[0], u[1]))?;
        let ee = forward_kinematics(params, &s).ee;
        out.push([ee[0], ee[1]]);
    }
    Ok(out)
}

/// Fixed-size summary of a prediction: per mode (highest weight first), the
/// final end-effector displacement of the mode's mean torques and its weight.
pub fn belief_vector(pred: &GmmPrediction, params: &ArmParams, human_state: &JointState) -> Result<[f64; BELIEF_DIM], DynamicsError> {
    assert_eq!(pred.modes.len(), MODES, "belief vector needs exactly {MODES} modes");
    let ee0 = forward_kinematics(params, human_state).ee;
    let mut order: Vec<usize> = (0..MODES).collect();
    order.sort_by(|&a, &b| pred.modes[b].weight.total_cmp(&pred.modes[a].weight));
    let mut out = [0.0; BELIEF_DIM];
    for (slot, &m) in order.iter().enumerate() {
        let mode = &pred.modes[m];
        let traj = implied_ee_trajectory(&mode.mean, params, human_state)?;
        let end = traj.last().copied().unwrap_or([ee0[0], ee0[1]]);
        out[3 * slot] = end[0] - ee0[0];
        out[3 * slot + 1] = end[1] - ee0[1];
        out[3 * slot + 2] = mode.weight;
    }
    Ok(out)
}

/// Average and final displacement error of the most likely mode's implied
/// end-effector path against the realized one.
pub fn ade_fde(
    pred: &GmmPrediction,
    truth: &[[f64; 2]],
    params: &ArmParams,
    human_state0: &JointState,
) -> Result<(f64, f64), DynamicsError> {
    let traj = implied_ee_trajectory(&pred.most_likely().mean, params, human_state0)?;
    Ok(displacement_errors(&traj, truth))
}

pub fn displacement_errors(path: &[[f64; 2]], truth: &[[f64; 2]]) -> (f64, f64) {
    let n = path.len().min(truth.len());
    if n == 0 {
        return (0.0, 0.0);
    }
    let d: Vec<f64> = (0..n).map(|k| ((path[k][0] - truth[k][0]).powi(2) + (path[k][1] - truth[k][1]).powi(2)).sqrt()).collect();
    (d.iter().sum::<f64>() / n as f64, d[n - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{sample_scene, SceneConfig};
    use ndarray::Array2;
    use rand::Rng;

    fn tiny(modes: usize, horizon: usize, seed: u64) -> Predictor {
        Predictor::with_shape(PredictorKind::Marginal, 3, &[4], HeadShape { modes, horizon }, 1.0, seed)
    }

    #[test]
    fn feature_lengths() {
        let s = sample_scene(0, &SceneConfig::default()).unwrap().scene;
        let hist = vec![[[0.1, 0.2], [0.3, 0.4]]; HISTORY];
        let plan = vec![[0.0, 0.0]; PLAN_LEN];
        let m = featurize(&hist, &s, None).unwrap();
        let c = featurize(&hist, &s, Some(&plan)).unwrap();
        assert_eq!(m.len(), MARGINAL_DIM);
        assert_eq!(MARGINAL_DIM, 56);
        assert_eq!(c.len(), CBP_DIM);
        assert_eq!(CBP_DIM, 96);
        assert_eq!(&c[..MARGINAL_DIM], &m[..]);
        assert!(matches!(
            featurize(&hist[..9], &s, None),
            Err(NetError::ShortHistory { expected: 10, got: 9 })
        ));
    }

    #[test]
    fn features_are_translation_invariant() {
        let s = sample_scene(3, &SceneConfig::default()).unwrap().scene;
        let d = crate::dynamics::Vec2::new(0.7, -1.3);
        let moved = s.translated(d);
        let hist: Vec<[[f64; 2]; 2]> = (0..HISTORY).map(|i| [[0.01 * i as f64, 0.2], [0.3, -0.1 * i as f64]]).collect();
        let hist2: Vec<[[f64; 2]; 2]> =
            hist.iter().map(|t| [[t[0][0] + d[0], t[0][1] + d[1]], [t[1][0] + d[0], t[1][1] + d[1]]]).collect();
        let plan: Vec<[f64; 2]> = (0..PLAN_LEN).map(|i| [0.02 * i as f64, 0.0]).collect();
        let plan2: Vec<[f64; 2]> = plan.iter().map(|p| [p[0] + d[0], p[1] + d[1]]).collect();
        let a = featurize(&hist, &s, Some(&plan)).unwrap();
        let b = featurize(&hist2, &moved, Some(&plan2)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn single_mode_nll_at_mean_with_unit_spread() {
        let head = HeadShape { modes: 1, horizon: 10 };
        let mut raw = vec![0.0; head.out_dim()];
        let y: Vec<f64> = (0..20).map(|k| k as f64 * 0.1).collect();
        raw[head.mean_at(0)..head.mean_at(0) + 20].copy_from_slice(&y);
        let mut d = vec![0.0; head.out_dim()];
        let (nll, mse) = sample_loss(head, &raw, &y, 1.0, 1.0, &mut d);
        assert!((nll - 10.0 * (2.0 * PI).ln()).abs() < 1e-12);
        assert_eq!(mse, 0.0);
    }

    #[test]
    fn zero_logits_give_uniform_weights_and_floor_holds() {
        let p = tiny(5, 2, 0);
        let mut raw = vec![0.0; p.head.out_dim()];
        for m in 0..5 {
            for k in 0..4 {
                raw[p.head.log_std_at(m) + k] = -50.0;
            }
        }
        let g = p.decode(&raw);
        for m in &g.modes {
            assert!((m.weight - 0.2).abs() < 1e-15);
            for k in 0..2 {
                for d in 0..2 {
                    assert!(m.std(k, d) >= SIGMA_MIN * (1.0 - 1e-12));
                }
            }
        }
    }

    #[test]
    fn duplicating_a_mode_leaves_nll_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mk = |rng: &mut ChaCha8Rng, w: f64| GmmMode {
            weight: w,
            mean: (0..3).map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect(),
            log_std: (0..3).map(|_| [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)]).collect(),
        };
        let a = mk(&mut rng, 0.6);
        let b = mk(&mut rng, 0.4);
        let traj = vec![[0.3, -0.2], [0.1, 0.5], [-1.0, 0.0]];
        let two = GmmPrediction { modes: vec![a.clone(), b.clone()] };
        let mut a1 = a.clone();
        a1.weight = 0.25;
        let mut a2 = a;
        a2.weight = 0.35;
        let three = GmmPrediction { modes: vec![a1, b, a2] };
        assert!((two.nll(&traj) - three.nll(&traj)).abs() < 1e-12);
    }

    #[test]
    fn permuting_modes_leaves_loss_unchanged() {
        let p = tiny(3, 2, 1);
        let head = p.head;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let raw: Vec<f64> = (0..head.out_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let perm = [2usize, 0, 1];
        let mut raw_p = raw.clone();
        for (dst, &src) in perm.iter().enumerate() {
            raw_p[dst] = raw[src];
            for k in 0..4 {
                raw_p[head.mean_at(dst) + k] = raw[head.mean_at(src) + k];
                raw_p[head.log_std_at(dst) + k] = raw[head.log_std_at(src) + k];
            }
        }
        let mut d = vec![0.0; head.out_dim()];
        let a = sample_loss(head, &raw, &y, 1.0, 1.0, &mut d);
        let b = sample_loss(head, &raw_p, &y, 1.0, 1.0, &mut d);
        assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
    }

    /// Central differences over every parameter of a ~100-parameter net.
    #[test]
    fn loss_gradient_matches_finite_differences() {
        let p = Predictor::with_shape(PredictorKind::Marginal, 3, &[4], HeadShape { modes: 2, horizon: 2 }, 2.0, 11);
        assert!(p.net.num_params() >= 100 && p.net.num_params() < 120);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((6, 3), |_| rng.gen_range(-1.0..1.0));
        let y = Array2::from_shape_fn((6, 4), |_| rng.gen_range(-2.0..2.0));
        let (_, grads) = p.loss_and_grad(x.view(), y.view(), 1.0).unwrap();
        let g = grads.params_flat();
        let base = p.net.params_flat();
        let h = 1e-6;
        let mut fd = vec![0.0; base.len()];
        for k in 0..base.len() {
            let mut q = p.clone();
            let mut v = base.clone();
            v[k] += h;
            q.net.set_params_flat(&v);
            let up = q.loss(x.view(), y.view(), 1.0).unwrap().total;
            v[k] -= 2.0 * h;
            q.net.set_params_flat(&v);
            let dn = q.loss(x.view(), y.view(), 1.0).unwrap().total;
            fd[k] = (up - dn) / (2.0 * h);
        }
        let num: f64 = fd.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt().max(g.iter().map(|a| a * a).sum::<f64>().sqrt());
        assert!(num / den <= 1e-4, "relative error {}", num / den);
    }

    #[test]
    fn memorizes_ten_samples() {
        let mut p = Predictor::with_shape(PredictorKind::Marginal, 3, &[32, 32], HeadShape { modes: 2, horizon: 2 }, 1.0, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = Samples {
            x: Array2::from_shape_fn((10, 3), |_| rng.gen_range(-1.0..1.0)),
            y: Array2::from_shape_fn((10, 4), |_| rng.gen_range(-1.0..1.0)),
            groups: (0..10).collect(),
        };
        let initial = evaluate_nll(&p, &data).unwrap();
        let cfg = TrainConfig { epochs: 500, batch_size: 10, val_fraction: 0.0, ..TrainConfig::default() };
        let report = train(&mut p, &data, &cfg).unwrap();
        let fin = evaluate_nll(&p, &data).unwrap();
        assert!(initial - fin >= 0.5 * initial.abs(), "initial {initial} final {fin}");
        assert_eq!(report.train_loss.len(), 500);
    }

    #[test]
    fn training_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = Samples {
            x: Array2::from_shape_fn((40, 3), |_| rng.gen_range(-1.0..1.0)),
            y: Array2::from_shape_fn((40, 4), |_| rng.gen_range(-1.0..1.0)),
            groups: (0..40).map(|i| i / 4).collect(),
        };
        let cfg = TrainConfig { epochs: 5, batch_size: 8, val_fraction: 0.2, ..TrainConfig::default() };
        let mut a = tiny(2, 2, 1);
        let mut b = tiny(2, 2, 1);
        let ra = train(&mut a, &data, &cfg).unwrap();
        let rb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.to_checkpoint().to_bytes(), b.to_checkpoint().to_bytes());
    }

    #[test]
    fn forward_fuzz_keeps_simplex_and_floor() {
        let p = Predictor::new(PredictorKind::Cbp, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((10_000, CBP_DIM), |_| rng.gen_range(-3.0..3.0));
        for g in p.predict_batch(x.view()).unwrap() {
            assert!((g.weight_sum() - 1.0).abs() < 1e-9);
            for m in &g.modes {
                assert!(m.weight >= 0.0);
                assert!(m.log_std.iter().flatten().all(|l| l.exp() >= SIGMA_MIN));
            }
        }
    }

    #[test]
    fn small_input_perturbation_gives_small_output_change() {
        let p = Predictor::new(PredictorKind::Marginal, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..MARGINAL_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = p.net.forward_one(&x);
        for i in [0, 17, 55] {
            let mut x2 = x.clone();
            x2[i] += 1e-6;
            let b = p.net.forward_one(&x2);
            let diff = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            assert!(diff <= 100.0 * 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = Predictor::new(PredictorKind::Marginal, 0);
        assert!(matches!(p.predict(&[0.0; 3]), Err(NetError::ShapeMismatch { expected: 56, got: 3 })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = Predictor::new(PredictorKind::Cbp, 4);
        let back = Predictor::from_checkpoint(&Checkpoint::from_bytes(&p.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    fn zero_mode_prediction(horizon: usize) -> GmmPrediction {
        GmmPrediction {
            modes: (0..MODES)
                .map(|m| GmmMode {
                    weight: [0.4, 0.3, 0.15, 0.1, 0.05][m],
                    mean: vec![[0.0; 2]; horizon],
                    log_std: vec![[0.0; 2]; horizon],
                })
                .collect(),
        }
    }

    #[test]
    fn belief_of_zero_torque_from_rest_is_zero_displacement() {
        let s = sample_scene(0, &SceneConfig::default()).unwrap();
        let b = belief_vector(&zero_mode_prediction(HORIZON), &s.scene.human_params, &s.initial.human).unwrap();
        for m in 0..MODES {
            assert_eq!(b[3 * m], 0.0);
            assert_eq!(b[3 * m + 1], 0.0);
        }
        let w: Vec<f64> = (0..MODES).map(|m| b[3 * m + 2]).collect();
        assert_eq!(w, vec![0.4, 0.3, 0.15, 0.1, 0.05]);
    }

    #[test]
    fn belief_displacement_matches_simulator_rollout() {
        let s = sample_scene(2, &SceneConfig::default()).unwrap();
        let hp = &s.scene.human_params;
        let mut g = zero_mode_prediction(HORIZON);
        g.modes[0].mean = (0..HORIZON).map(|k| [3.0 - 0.5 * k as f64, -2.0]).collect();
        let b = belief_vector(&g, hp, &s.initial.human).unwrap();
        let mut st = s.initial.human;
        for u in &g.modes[0].mean {
            st = crate::world::advance_arm(hp, &st, Torque::new(u[0], u[1])).unwrap();
        }
        let ee0 = forward_kinematics(hp, &s.initial.human).ee;
        let ee1 = forward_kinematics(hp, &st).ee;
        assert!((b[0] - (ee1[0] - ee0[0])).abs() < 1e-12);
        assert!((b[1] - (ee1[1] - ee0[1])).abs() < 1e-12);
    }

    #[test]
    fn displacement_error_cases() {
        let truth: Vec<[f64; 2]> = (0..10).map(|k| [k as f64 * 0.1, 0.0]).collect();
        assert_eq!(displacement_errors(&truth, &truth), (0.0, 0.0));
        let shifted: Vec<[f64; 2]> = truth.iter().map(|p| [p[0], p[1] + 0.1]).collect();
        let (ade, fde) = displacement_errors(&shifted, &truth);
        assert!((ade - 0.1).abs() < 1e-12 && (fde - 0.1).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_has_zero_error() {
        let s = sample_scene(6, &SceneConfig::default()).unwrap();
        let hp = &s.scene.human_params;
        let mut g = zero_mode_prediction(HORIZON);
        g.modes[0].mean = (0..HORIZON).map(|k| [1.0, 0.2 * k as f64]).collect();
        let truth = implied_ee_trajectory(&g.modes[0].mean, hp, &s.initial.human).unwrap();
        assert_eq!(ade_fde(&g, &truth, hp, &s.initial.human).unwrap(), (0.0, 0.0));
    }
}
