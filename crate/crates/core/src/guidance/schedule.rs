use serde::{Deserialize, Serialize};

/// Exploration rate of the SMR selector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub epsilon: f64,
    pub end: f64,
    pub decay: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self { epsilon: 1.0, end: 0.05, decay: 0.97 }
    }
}

impl EpsilonSchedule {
    /// `epsilon <- max(end, decay * epsilon)`.
    pub fn step(&mut self) {
        self.epsilon = self.end.max(self.decay * self.epsilon);
    }

    /// Schedule pinned at a fixed rate (`1.0` gives the random-selection ablation).
    pub fn constant(epsilon: f64) -> Self {
        Self { epsilon, end: epsilon, decay: 1.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_steps() {
        let mut s = EpsilonSchedule { epsilon: 0.5, end: 0.05, decay: 0.99 };
        s.step();
        assert_eq!(s.epsilon, 0.495);
        let mut s = EpsilonSchedule { epsilon: 0.05, end: 0.05, decay: 0.99 };
        s.step();
        assert_eq!(s.epsilon, 0.05);
    }

    #[test]
    fn hundred_steps_reach_the_floor() {
        let mut s = EpsilonSchedule::default();
        for _ in 0..100 {
            s.step();
        }
        assert_eq!(s.epsilon, 0.05);
        assert!(0.97f64.powi(100) < 0.05);
    }

    #[test]
    fn constant_never_moves() {
        let mut s = EpsilonSchedule::constant(1.0);
        s.step();
        assert_eq!(s.epsilon, 1.0);
    }
}
