use serde::{Deserialize, Serialize};

use crate::model::{AdamWConfig, LocalTrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct FederationConfig {
    /// Clients in the fleet.
    pub n: usize,
    /// Clients sampled per round.
    pub s: usize,
    /// Training rounds.
    pub T: usize,
    /// Local epochs per round.
    pub tau: usize,
    pub batch_size: usize,
    /// Optional cap on local optimizer steps per round.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    /// Evaluate every this many rounds; the last round is always evaluated.
    pub eval_every: usize,
    /// Write a checkpoint of the global adapters every this many rounds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
    pub optimizer: AdamWConfig,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            n: 100,
            s: 10,
            T: 500,
            tau: 1,
            batch_size: 16,
            max_steps: None,
            eval_every: 1,
            checkpoint_every: None,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl FederationConfig {
    /// Checks everything except `T`; a zero-round simulation is allowed and
    /// returns the initial model, while config files must ask for `T >= 1`.
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.n == 0 {
            errs.push("federation.n must be >= 1".into());
        }
        if self.s == 0 || self.s > self.n {
            errs.push(format!(
                "federation.s must lie in [1, n={}], got {}",
                self.n, self.s
            ));
        }
        if self.tau == 0 {
            errs.push("federation.tau must be >= 1".into());
        }
        if self.batch_size == 0 {
            errs.push("federation.batch_size must be >= 1".into());
        }
        if self.max_steps == Some(0) {
            errs.push("federation.max_steps must be >= 1 when set".into());
        }
        if self.eval_every == 0 {
            errs.push("federation.eval_every must be >= 1".into());
        }
        if self.checkpoint_every == Some(0) {
            errs.push("federation.checkpoint_every must be >= 1 when set".into());
        }
        errs.extend(self.optimizer.validation_errors("federation.optimizer"));
        errs
    }

    pub fn local_train(&self) -> LocalTrainConfig {
        LocalTrainConfig {
            epochs: self.tau,
            batch_size: self.batch_size,
            max_steps: self.max_steps,
            optimizer: self.optimizer.clone(),
        }
    }
}
