//! Influence-informed bounds on the human's torque: per-mode δ-likely
//! intervals, collapsed over time, then unioned over ε-likely modes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::Interval;
use crate::predictor::{GmmMode, GmmPrediction, ACT_DIM};

/// Box of admissible human torques.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlBound {
    pub lo: [f64; ACT_DIM],
    pub hi: [f64; ACT_DIM],
}

impl ControlBound {
    pub fn from_box(b: &[Interval; ACT_DIM]) -> Self {
        Self { lo: [b[0].lo, b[1].lo], hi: [b[0].hi, b[1].hi] }
    }

    pub fn contains(&self, u: [f64; ACT_DIM]) -> bool {
        (0..ACT_DIM).all(|d| self.lo[d] <= u[d] && u[d] <= self.hi[d])
    }

    /// `self ⊆ other`.
    pub fn is_subset_of(&self, other: &ControlBound) -> bool {
        (0..ACT_DIM).all(|d| other.lo[d] <= self.lo[d] && self.hi[d] <= other.hi[d])
    }

    pub fn clamp(&self, u: [f64; ACT_DIM]) -> [f64; ACT_DIM] {
        std::array::from_fn(|d| u[d].clamp(self.lo[d], self.hi[d]))
    }

    pub fn hull(&self, other: &ControlBound) -> ControlBound {
        ControlBound {
            lo: std::array::from_fn(|d| self.lo[d].min(other.lo[d])),
            hi: std::array::from_fn(|d| self.hi[d].max(other.hi[d])),
        }
    }
}

pub fn bound_width(b: &ControlBound) -> [f64; ACT_DIM] {
    std::array::from_fn(|d| b.hi[d] - b.lo[d])
}

/// Density level selecting the δ-likely set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DeltaLevel {
    /// Absolute density threshold δ.
    Density(f64),
    /// δ as a fraction of each marginal's peak density; scale-free.
    PeakFraction(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub delta: DeltaLevel,
    pub epsilon: f64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self { delta: DeltaLevel::PeakFraction(0.05), epsilon: 0.1 }
    }
}

/// Per-step δ-likely intervals of one mode.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaBox {
    pub steps: Vec<[Interval; ACT_DIM]>,
    /// Set when δ exceeded some marginal's peak density; those intervals
    /// collapse to the mean.
    pub empty: bool,
}

/// Half-width of `{u : N(u; μ, σ²) ≥ δ}` for one marginal, `None` if empty.
pub fn superlevel_half_width(sigma: f64, level: DeltaLevel) -> Option<f64> {
    let ratio = match level {
        DeltaLevel::Density(delta) => {
            let peak = 1.0 / (sigma * (2.0 * PI).sqrt());
            delta / peak
        }
        DeltaLevel::PeakFraction(f) => f,
    };
    if !(ratio > 0.0) || ratio > 1.0 {
        return None;
    }
    Some(sigma * (2.0 * (1.0 / ratio).ln()).sqrt())
}

pub fn delta_likely_box(mode: &GmmMode, level: DeltaLevel) -> DeltaBox {
    let mut empty = false;
    let steps = mode
        .mean
        .iter()
        .enumerate()
        .map(|(k, mu)| {
            std::array::from_fn(|d| match superlevel_half_width(mode.std(k, d), level) {
                Some(h) => Interval::new(mu[d] - h, mu[d] + h),
                None => {
                    empty = true;
                    Interval::new(mu[d], mu[d])
                }
            })
        })
        .collect();
    DeltaBox { steps, empty }
}

/// Per-dimension envelope over time, clipped to `torque_box`.
pub fn timewise_minmax(steps: &[[Interval; ACT_DIM]], torque_box: &[Interval; ACT_DIM]) -> ControlBound {
    assert!(!steps.is_empty(), "need at least one step");
    let mut lo = [f64::INFINITY; ACT_DIM];
    let mut hi = [f64::NEG_INFINITY; ACT_DIM];
    for s in steps {
        for d in 0..ACT_DIM {
            lo[d] = lo[d].min(s[d].lo);
            hi[d] = hi[d].max(s[d].hi);
        }
    }
    ControlBound {
        lo: std::array::from_fn(|d| torque_box[d].clamp(lo[d])),
        hi: std::array::from_fn(|d| torque_box[d].clamp(hi[d])),
    }
}

/// Interval hull of the per-mode bounds of every mode with weight ≥ ε; the
/// full box when no mode qualifies.
pub fn epsilon_mode_union(
    pred: &GmmPrediction,
    level: DeltaLevel,
    epsilon: f64,
    torque_box: &[Interval; ACT_DIM],
) -> ControlBound {
    pred.modes
        .iter()
        .filter(|m| m.weight >= epsilon)
        .map(|m| timewise_minmax(&delta_likely_box(m, level).steps, torque_box))
        .reduce(|a, b| a.hull(&b))
        .unwrap_or_else(|| ControlBound::from_box(torque_box))
}

pub fn inferred_bound(pred: &GmmPrediction, cfg: &BoundConfig, torque_box: &[Interval; ACT_DIM]) -> ControlBound {
    epsilon_mode_union(pred, cfg.delta, cfg.epsilon, torque_box)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn human_box() -> [Interval; 2] {
        [Interval::symmetric(10.0), Interval::symmetric(10.0)]
    }

    fn mode(weight: f64, mean: Vec<[f64; 2]>, std: f64) -> GmmMode {
        let n = mean.len();
        GmmMode { weight, mean, log_std: vec![[std.ln(); 2]; n] }
    }

    fn peak(sigma: f64) -> f64 {
        1.0 / (sigma * (2.0 * PI).sqrt())
    }

    #[test]
    fn delta_at_peak_is_degenerate() {
        let m = mode(1.0, vec![[1.5, -2.0]], 0.7);
        let b = delta_likely_box(&m, DeltaLevel::Density(peak(0.7)));
        assert!(!b.empty);
        assert!(b.steps[0][0].width().abs() < 1e-7 && (b.steps[0][0].lo - 1.5).abs() < 1e-7);
    }

    #[test]
    fn closed_form_unit_interval() {
        let m = mode(1.0, vec![[0.0, 0.0]], 1.0);
        let b = delta_likely_box(&m, DeltaLevel::Density(peak(1.0) * (-0.5f64).exp()));
        assert!((b.steps[0][0].lo + 1.0).abs() < 1e-12 && (b.steps[0][0].hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delta_above_peak_is_flagged_empty() {
        let m = mode(1.0, vec![[0.3, 0.1]], 1.0);
        let b = delta_likely_box(&m, DeltaLevel::Density(peak(1.0) * 1.01));
        assert!(b.empty);
        assert_eq!(b.steps[0][0], Interval::new(0.3, 0.3));
    }

    /// Rejection sampling of the density superlevel set.
    #[test]
    fn endpoints_match_monte_carlo_superlevel_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for &(mu, sigma, frac) in &[(0.5, 1.3, 0.05), (-2.0, 0.4, 0.3), (3.0, 2.5, 0.6)] {
            let delta = frac * peak(sigma);
            let (a, b) = (mu - 6.0 * sigma, mu + 6.0 * sigma);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for _ in 0..1_000_000 {
                let u: f64 = rng.gen_range(a..b);
                let dens = peak(sigma) * (-0.5 * ((u - mu) / sigma).powi(2)).exp();
                if dens >= delta {
                    lo = lo.min(u);
                    hi = hi.max(u);
                }
            }
            let m = mode(1.0, vec![[mu, mu]], sigma);
            let iv = delta_likely_box(&m, DeltaLevel::Density(delta)).steps[0][0];
            assert!((iv.lo - lo).abs() < 1e-2 && (iv.hi - hi).abs() < 1e-2, "{iv:?} vs [{lo}, {hi}]");
        }
    }

    #[test]
    fn timewise_examples() {
        let bx = human_box();
        let one = [[Interval::new(-1.0, 0.0), Interval::new(2.0, 3.0)]];
        assert_eq!(timewise_minmax(&one, &bx), ControlBound { lo: [-1.0, 2.0], hi: [0.0, 3.0] });
        let two = [
            [Interval::new(-1.0, 0.0), Interval::new(0.0, 0.0)],
            [Interval::new(2.0, 3.0), Interval::new(0.0, 0.0)],
        ];
        assert_eq!(timewise_minmax(&two, &bx).lo[0], -1.0);
        assert_eq!(timewise_minmax(&two, &bx).hi[0], 3.0);
        let edge = [[Interval::new(8.0, 12.0), Interval::new(-13.0, -9.0)]];
        assert_eq!(timewise_minmax(&edge, &bx), ControlBound { lo: [8.0, -10.0], hi: [10.0, -9.0] });
    }

    #[test]
    fn epsilon_filter_and_fallback() {
        let bx = human_box();
        let lv = DeltaLevel::PeakFraction(0.05);
        let w = [0.7, 0.2, 0.1, 0.0, 0.0];
        let pred = GmmPrediction {
            modes: (0..5).map(|i| mode(w[i], vec![[i as f64 - 2.0, 0.0]], 0.1)).collect(),
        };
        let hull12 = timewise_minmax(&delta_likely_box(&pred.modes[0], lv).steps, &bx)
            .hull(&timewise_minmax(&delta_likely_box(&pred.modes[1], lv).steps, &bx));
        assert_eq!(epsilon_mode_union(&pred, lv, 0.15, &bx), hull12);
        let all = (0..5)
            .map(|i| timewise_minmax(&delta_likely_box(&pred.modes[i], lv).steps, &bx))
            .reduce(|a, b| a.hull(&b))
            .unwrap();
        assert_eq!(epsilon_mode_union(&pred, lv, 0.0, &bx), all);
        assert_eq!(epsilon_mode_union(&pred, lv, 0.9, &bx), ControlBound::from_box(&bx));
        assert_eq!(bound_width(&ControlBound::from_box(&bx)), [20.0, 20.0]);
    }

    fn random_prediction(rng: &mut ChaCha8Rng) -> GmmPrediction {
        let raw: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let z: f64 = raw.iter().map(|v| f64::exp(*v)).sum();
        GmmPrediction {
            modes: raw
                .iter()
                .map(|r| GmmMode {
                    weight: r.exp() / z,
                    mean: (0..10).map(|_| [rng.gen_range(-14.0..14.0), rng.gen_range(-14.0..14.0)]).collect(),
                    log_std: (0..10).map(|_| [rng.gen_range(-4.0..2.5), rng.gen_range(-4.0..2.5)]).collect(),
                })
                .collect(),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn delta_monotone(seed in any::<u64>(), f1 in 1e-4f64..1.0, f2 in 1e-4f64..1.0) {
            let (f1, f2) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_prediction(&mut rng);
            for m in &p.modes {
                let wide = delta_likely_box(m, DeltaLevel::PeakFraction(f1));
                let narrow = delta_likely_box(m, DeltaLevel::PeakFraction(f2));
                for (a, b) in narrow.steps.iter().zip(&wide.steps) {
                    for d in 0..2 {
                        prop_assert!(b[d].lo <= a[d].lo && a[d].hi <= b[d].hi);
                    }
                }
            }
        }

        #[test]
        fn epsilon_monotone_contained_nonempty(seed in any::<u64>(), e1 in 0.0f64..1.0, e2 in 0.0f64..1.0) {
            let (e1, e2) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_prediction(&mut rng);
            let bx = human_box();
            let lv = DeltaLevel::PeakFraction(0.05);
            let big = epsilon_mode_union(&p, lv, e1, &bx);
            let small = epsilon_mode_union(&p, lv, e2, &bx);
            let any_small = p.modes.iter().any(|m| m.weight >= e2);
            if any_small {
                prop_assert!(small.is_subset_of(&big));
            }
            for b in [big, small] {
                prop_assert!(b.is_subset_of(&ControlBound::from_box(&bx)));
                for d in 0..2 {
                    prop_assert!(b.lo[d] <= b.hi[d]);
                }
            }
        }
    }
}
