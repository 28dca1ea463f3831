//! Decision layer of the generation loop: epsilon-greedy relation choice over
//! a quantile value function, uniform interface/insert choice, and Thompson
//! reselection of seeds from the replay pool.

pub mod features;
pub mod qr;
pub mod schedule;
pub mod thompson;

use rand::{Rng, RngCore};

pub use features::{featurize, Features, StateContext, FEATURE_DIM};
pub use qr::{QuantileValueFn, Transition, NUM_ACTIONS, NUM_QUANTILES};
pub use schedule::EpsilonSchedule;
pub use thompson::{EmptyPool, ModelStats, ReplayEntry, ReplayPool};

use crate::rewrite::{EquivalenceClass, ImrKind, InsertKind, SmrKind};

/// With probability `epsilon` a uniform relation, otherwise the greedy one.
pub fn select_smr(state: &Features, q: &QuantileValueFn, sched: &EpsilonSchedule, rng: &mut impl RngCore) -> SmrKind {
    let p: f64 = rng.random_range(0.0..1.0);
    if p <= sched.epsilon {
        SmrKind::ALL[rng.random_range(0..SmrKind::ALL.len())]
    } else {
        SmrKind::ALL[q.argmax(state)]
    }
}

pub fn select_imr(rng: &mut impl RngCore) -> ImrKind {
    ImrKind::ALL[rng.random_range(0..ImrKind::ALL.len())]
}

/// Uniform over the relations whose class is exact.
pub fn select_exact_imr(rng: &mut impl RngCore) -> ImrKind {
    let exact: Vec<ImrKind> = ImrKind::ALL.into_iter().filter(|k| k.class() == EquivalenceClass::Exact).collect();
    exact[rng.random_range(0..exact.len())]
}

pub fn select_insert(rng: &mut impl RngCore) -> InsertKind {
    InsertKind::ALL[rng.random_range(0..InsertKind::ALL.len())]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn greedy_follows_q() {
        let mut q = QuantileValueFn::zeros(1e-3);
        let s = [0.0; FEATURE_DIM];
        let greedy = EpsilonSchedule::constant(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_smr(&s, &q, &greedy, &mut rng), SmrKind::Smr1);
        for (a, v) in [0.1, 0.9, 0.3, 0.3].into_iter().enumerate() {
            q.bias[a] = vec![v; NUM_QUANTILES];
        }
        assert_eq!(select_smr(&s, &q, &greedy, &mut rng), SmrKind::Smr2);
    }

    #[test]
    fn seeded_selection_replays() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| (select_imr(&mut rng), select_insert(&mut rng))).collect::<Vec<_>>()
        };
        assert_eq!(draw(4), draw(4));
    }
}
