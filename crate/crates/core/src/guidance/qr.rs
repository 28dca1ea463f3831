//! Quantile-regression value function, linear in the state features.

use serde::{Deserialize, Serialize};

use super::features::{Features, FEATURE_DIM};
use crate::rewrite::SmrKind;

pub const NUM_ACTIONS: usize = SmrKind::ALL.len();
pub const NUM_QUANTILES: usize = 32;
/// Huber threshold of the quantile loss.
pub const KAPPA: f64 = 1.0;
/// Global gradient norm cap.
pub const GRAD_CLIP: f64 = 10.0;

/// `Z(s, a)_j = theta[a][j] . phi(s) + bias[a][j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileValueFn {
    pub theta: Vec<Vec<Vec<f64>>>,
    pub bias: Vec<Vec<f64>>,
    pub learning_rate: f64,
}

/// One observed step of the generation loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Features,
    pub action: usize,
    pub reward: f64,
    pub next_state: Features,
    pub done: bool,
}

/// Quantile midpoint `(2j + 1) / 2K`.
pub fn tau_hat(j: usize) -> f64 {
    (2 * j + 1) as f64 / (2 * NUM_QUANTILES) as f64
}

/// Derivative of `rho_tau(u)` with respect to `u`.
fn quantile_huber_slope(tau: f64, u: f64) -> f64 {
    let weight = (tau - if u < 0.0 { 1.0 } else { 0.0 }).abs();
    weight * u.clamp(-KAPPA, KAPPA) / KAPPA
}

fn quantile_huber(tau: f64, u: f64) -> f64 {
    let huber = if u.abs() <= KAPPA { 0.5 * u * u } else { KAPPA * (u.abs() - 0.5 * KAPPA) };
    (tau - if u < 0.0 { 1.0 } else { 0.0 }).abs() * huber / KAPPA
}

impl QuantileValueFn {
    pub fn zeros(learning_rate: f64) -> Self {
        Self {
            theta: vec![vec![vec![0.0; FEATURE_DIM]; NUM_QUANTILES]; NUM_ACTIONS],
            bias: vec![vec![0.0; NUM_QUANTILES]; NUM_ACTIONS],
            learning_rate,
        }
    }

    pub fn quantiles(&self, s: &Features, a: usize) -> [f64; NUM_QUANTILES] {
        let mut z = [0.0; NUM_QUANTILES];
        for (j, zj) in z.iter_mut().enumerate() {
            *zj = self.bias[a][j] + self.theta[a][j].iter().zip(s).map(|(w, x)| w * x).sum::<f64>();
        }
        z
    }

    /// `Q(s, a)`: mean over quantiles.
    pub fn q(&self, s: &Features, a: usize) -> f64 {
        self.quantiles(s, a).iter().sum::<f64>() / NUM_QUANTILES as f64
    }

    pub fn q_values(&self, s: &Features) -> [f64; NUM_ACTIONS] {
        std::array::from_fn(|a| self.q(s, a))
    }

    /// Greedy action; ties go to the lowest index.
    pub fn argmax(&self, s: &Features) -> usize {
        argmax(&self.q_values(s))
    }

    /// Target quantiles `r + gamma (1 - done) Z_target(s', a*)`. With
    /// `on_action` the bootstrap uses `action` instead of the greedy `a*`.
    pub fn target_quantiles(&self, t: &Transition, gamma: f64, on_action: bool) -> [f64; NUM_QUANTILES] {
        if t.done {
            return [t.reward; NUM_QUANTILES];
        }
        let a_star = if on_action { t.action } else { self.argmax(&t.next_state) };
        let next = self.quantiles(&t.next_state, a_star);
        next.map(|z| t.reward + gamma * z)
    }

    /// Quantile Huber loss of `Z(s, a)` against target samples.
    pub fn loss(&self, s: &Features, a: usize, targets: &[f64; NUM_QUANTILES]) -> f64 {
        let z = self.quantiles(s, a);
        let mut total = 0.0;
        for (j, &zj) in z.iter().enumerate() {
            for &y in targets {
                total += quantile_huber(tau_hat(j), y - zj);
            }
        }
        total / NUM_QUANTILES as f64
    }

    /// One clipped gradient step on the quantile Huber loss. Returns the loss
    /// before the step.
    pub fn update(&mut self, target: &QuantileValueFn, t: &Transition, gamma: f64, on_action: bool) -> f64 {
        let targets = target.target_quantiles(t, gamma, on_action);
        let before = self.loss(&t.state, t.action, &targets);
        let z = self.quantiles(&t.state, t.action);
        let k = NUM_QUANTILES as f64;
        let dz: Vec<f64> = z
            .iter()
            .enumerate()
            .map(|(j, &zj)| -targets.iter().map(|&y| quantile_huber_slope(tau_hat(j), y - zj)).sum::<f64>() / k)
            .collect();
        let phi_sq: f64 = t.state.iter().map(|x| x * x).sum::<f64>() + 1.0;
        let norm = (dz.iter().map(|g| g * g).sum::<f64>() * phi_sq).sqrt();
        let scale = if norm > GRAD_CLIP { GRAD_CLIP / norm } else { 1.0 };
        let step = self.learning_rate * scale;
        for (j, g) in dz.iter().enumerate() {
            for (w, x) in self.theta[t.action][j].iter_mut().zip(&t.state) {
                *w -= step * g * x;
            }
            self.bias[t.action][j] -= step * g;
        }
        before
    }

    /// Copies the parameters of `source` into `self`.
    pub fn sync_from(&mut self, source: &QuantileValueFn) {
        self.clone_from(source);
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(rng: &mut impl Rng) -> Features {
        std::array::from_fn(|_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn crash_target_is_all_minus_one() {
        let q = QuantileValueFn::zeros(1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Transition { state: random_state(&mut rng), action: 2, reward: -1.0, next_state: random_state(&mut rng), done: true };
        assert_eq!(q.target_quantiles(&t, 0.99, false), [-1.0; NUM_QUANTILES]);
    }

    #[test]
    fn zero_discount_targets_reward_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut q = QuantileValueFn::zeros(1e-3);
        q.theta[1][3][0] = 5.0;
        let t = Transition { state: random_state(&mut rng), action: 0, reward: 0.25, next_state: random_state(&mut rng), done: false };
        assert_eq!(q.target_quantiles(&t, 0.0, false), [0.25; NUM_QUANTILES]);
    }

    #[test]
    fn argmax_tie_break() {
        assert_eq!(argmax(&[0.1, 0.9, 0.3, 0.3]), 1);
        assert_eq!(argmax(&[0.0; 4]), 0);
        assert_eq!(argmax(&[0.2, 0.5, 0.5, 0.1]), 1);
    }

    #[test]
    fn sync_copies_without_aliasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut q = QuantileValueFn::zeros(1e-2);
        let mut target = QuantileValueFn::zeros(1e-2);
        let s = random_state(&mut rng);
        let t = Transition { state: s, action: 1, reward: 0.7, next_state: s, done: false };
        q.update(&target, &t, 0.99, false);
        target.sync_from(&q);
        for _ in 0..10 {
            let s = random_state(&mut rng);
            for a in 0..NUM_ACTIONS {
                assert_eq!(q.quantiles(&s, a), target.quantiles(&s, a));
            }
        }
        let snapshot = target.clone();
        q.update(&snapshot, &t, 0.99, false);
        assert_eq!(target, snapshot);
        assert_ne!(q, target);
    }

    #[test]
    fn slope_matches_finite_difference_of_loss() {
        for &(tau, u) in &[(0.1, 0.3), (0.9, -0.2), (0.5, 2.5), (0.3, -4.0)] {
            let h = 1e-6;
            let fd = (quantile_huber(tau, u + h) - quantile_huber(tau, u - h)) / (2.0 * h);
            assert!((fd - quantile_huber_slope(tau, u)).abs() < 1e-8);
        }
    }
}
