//! The generation loop, the final detection sweep and the self-validation suite.

mod campaign;
pub mod validation;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::BackendId;
use crate::feeds::FeedSpec;
use crate::graph::seeds::{seed_by_label, SEED_LABELS};
use crate::guidance::EpsilonSchedule;
use crate::oracle::Thresholds;
use crate::par::Parallelism;

pub use campaign::{
    replay_report, run_campaign, Campaign, CampaignError, CampaignResult, CampaignState, CurrentModel, ModelRecord,
    Reselection, RoundOutcome, RoundRecord,
};
pub use validation::{run_validation_suite, ValidationOptions, ValidationSummary};

fn default_rounds() -> usize {
    100
}

fn default_gamma() -> f64 {
    0.99
}

fn default_learning_rate() -> f64 {
    1e-3
}

fn default_anchor_count() -> usize {
    2
}

/// Everything that determines a campaign. Loaded from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub seed_model: String,
    #[serde(default = "default_backend")]
    pub backend: BackendId,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    pub rng_seed: u64,
    #[serde(default)]
    pub epsilon: EpsilonSchedule,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub thresholds: Thresholds,
    /// Per-seed-model replacements for `thresholds`.
    #[serde(default)]
    pub threshold_overrides: BTreeMap<String, Thresholds>,
    #[serde(default)]
    pub feeds: FeedSpec,
    /// Source anchors summed by SMR1/SMR2.
    #[serde(default = "default_anchor_count")]
    pub anchor_count: usize,
    /// Bootstrap the value target on the taken action rather than the greedy one.
    #[serde(default)]
    pub on_action_target: bool,
    /// Also reselect a seed after rounds whose reward is below the pool median.
    #[serde(default)]
    pub reselect_on_low_reward: bool,
    /// Draw interface relations from the exact class only.
    #[serde(default)]
    pub exact_mrs_only: bool,
    #[serde(default)]
    pub parallelism: Parallelism,
}

fn default_backend() -> BackendId {
    BackendId::Reference
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown seed model `{0}` (known: {known})", known = SEED_LABELS.join(", "))]
    UnknownSeed(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl CampaignConfig {
    pub fn new(seed_model: impl Into<String>, backend: BackendId, rng_seed: u64) -> Self {
        Self {
            seed_model: seed_model.into(),
            backend,
            rounds: default_rounds(),
            rng_seed,
            epsilon: EpsilonSchedule::default(),
            gamma: default_gamma(),
            learning_rate: default_learning_rate(),
            thresholds: Thresholds::default(),
            threshold_overrides: BTreeMap::new(),
            feeds: FeedSpec::default(),
            anchor_count: default_anchor_count(),
            on_action_target: false,
            reselect_on_low_reward: false,
            exact_mrs_only: false,
            parallelism: Parallelism::default(),
        }
    }

    pub fn with_rounds(mut self, rounds: usize) -> Self {
        self.rounds = rounds;
        self
    }

    /// Pins epsilon at 1: uniform relation choice, the random ablation.
    pub fn random_ablation(mut self) -> Self {
        self.epsilon = EpsilonSchedule::constant(1.0);
        self
    }

    pub fn thresholds_for(&self, seed: &str) -> &Thresholds {
        self.threshold_overrides.get(seed).unwrap_or(&self.thresholds)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if seed_by_label(&self.seed_model).is_none() {
            return Err(ConfigError::UnknownSeed(self.seed_model.clone()));
        }
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        let e = &self.epsilon;
        if self.rounds == 0 {
            return bad("rounds must be at least 1");
        }
        if !(0.0..=1.0).contains(&e.end) || !(e.end..=1.0).contains(&e.epsilon) || !(0.0..=1.0).contains(&e.decay) {
            return bad("epsilon schedule needs 0 <= end <= epsilon <= 1 and decay in [0, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.anchor_count < 2 {
            return bad("anchor_count must be at least 2");
        }
        if self.feeds.count == 0 || !(self.feeds.std > 0.0 && self.feeds.std.is_finite()) {
            return bad("feeds need count >= 1 and a positive std");
        }
        let th = std::iter::once(&self.thresholds).chain(self.threshold_overrides.values());
        for t in th {
            let positive = [t.loss_tol, t.grad_tol, t.resource_ratio, t.efficiency_ratio]
                .into_iter()
                .chain(t.accuracy.values().flat_map(|c| [c.exact, c.approx]))
                .all(|x| x >= 0.0 && !x.is_nan());
            if !positive {
                return bad("thresholds must be non-negative");
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let c: Self = serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::FaultId;

    #[test]
    fn minimal_json_fills_defaults() {
        let c = CampaignConfig::from_json(r#"{"seed_model": "cnn", "backend": "mutant:M2", "rng_seed": 3}"#).unwrap();
        assert_eq!(c, CampaignConfig::new("cnn", BackendId::Mutant(FaultId::M2), 3));
        assert_eq!(c.rounds, 100);
        assert_eq!(c.feeds.count, 3);
    }

    #[test]
    fn rng_seed_is_mandatory() {
        assert!(CampaignConfig::from_json(r#"{"seed_model": "cnn"}"#).is_err());
    }

    #[test]
    fn rejects_unknown_labels() {
        assert_eq!(
            CampaignConfig::from_json(r#"{"seed_model": "vgg", "rng_seed": 1}"#),
            Err(ConfigError::UnknownSeed("vgg".into()))
        );
        assert!(CampaignConfig::from_json(r#"{"seed_model": "mlp", "backend": "mutant:M9", "rng_seed": 1}"#).is_err());
        let zero = CampaignConfig::new("mlp", BackendId::Reference, 1).with_rounds(0);
        assert!(zero.validate().is_err());
    }

    #[test]
    fn per_seed_thresholds() {
        let mut c = CampaignConfig::new("mlp", BackendId::Reference, 1);
        let loose = Thresholds { efficiency_ratio: 9.0, ..Thresholds::default() };
        c.threshold_overrides.insert("cnn".into(), loose);
        assert_eq!(c.thresholds_for("cnn").efficiency_ratio, 9.0);
        assert_eq!(c.thresholds_for("mlp").efficiency_ratio, 3.0);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(CampaignConfig::from_json(&json).unwrap(), c);
    }
}
