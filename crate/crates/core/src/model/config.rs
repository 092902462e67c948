use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and LoRA hyperparameters of the encoder classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of transformer layers (and LoRA layer groups).
    #[serde(alias = "l")]
    pub layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    #[serde(alias = "r")]
    pub rank: usize,
    pub alpha: f64,
    pub dropout_p: f64,
    pub n_classes: usize,
    pub seq_len: usize,
    /// Token vocabulary, or feature dimension for continuous inputs.
    pub vocab: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 12,
            d_model: 32,
            n_heads: 4,
            d_ff: 64,
            rank: 16,
            alpha: 16.0,
            dropout_p: 0.1,
            n_classes: 10,
            seq_len: 16,
            vocab: 64,
        }
    }
}

impl ModelConfig {
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.layers == 0 {
            errs.push("model.layers must be >= 1".into());
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            errs.push(format!(
                "model.d_model ({}) must be a positive multiple of model.n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if self.rank == 0 || 2 * self.rank > self.d_model {
            errs.push(format!(
                "model.rank must satisfy 1 <= rank <= d_model/2, got rank {} with d_model {}",
                self.rank, self.d_model
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            errs.push(format!("model.alpha must be positive, got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            errs.push(format!(
                "model.dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            ));
        }
        if self.d_ff == 0 {
            errs.push("model.d_ff must be >= 1".into());
        }
        if self.n_classes < 2 {
            errs.push(format!(
                "model.n_classes must be >= 2, got {}",
                self.n_classes
            ));
        }
        if self.seq_len == 0 {
            errs.push("model.seq_len must be >= 1".into());
        }
        if self.vocab == 0 {
            errs.push("model.vocab must be >= 1".into());
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.validation_errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// LoRA output scaling `alpha / r`.
    pub fn lora_scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Frozen parameters per transformer layer.
    pub fn frozen_params_per_layer(&self) -> usize {
        let d = self.d_model;
        4 * d * d + 2 * d * self.d_ff + self.d_ff + d + 4 * d
    }

    /// Trainable parameters of one LoRA layer group (q and v adapters).
    pub fn lora_params_per_layer(&self) -> usize {
        2 * 2 * self.rank * self.d_model
    }

    pub fn head_params(&self) -> usize {
        self.n_classes * self.d_model + self.n_classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.rank, 16);
        assert_eq!(cfg.alpha, 16.0);
        assert_eq!(cfg.dropout_p, 0.1);
    }

    #[test]
    fn rank_bound_and_heads() {
        let cfg = ModelConfig {
            d_model: 8,
            rank: 5,
            n_heads: 3,
            dropout_p: 1.0,
            ..ModelConfig::default()
        };
        let errs = cfg.validation_errors();
        assert_eq!(errs.len(), 3, "{errs:?}");
    }
}
