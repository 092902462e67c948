//! Encoder classifier with per-layer LoRA adapters, hand-written gradients and AdamW.

mod adamw;
mod checkpoint;
mod config;
mod forward;
mod params;
mod train;

pub use adamw::{adamw_step, AdamWConfig, OptimizerState};
pub use checkpoint::{decode_tensors, encode_tensors};
pub use config::ModelConfig;
pub use forward::{backward, forward, predict_logits, ForwardCache, ForwardPass, Gradients};
pub use params::{
    effective_weight, flatten_delta, init_model, FrozenBase, FrozenLayer, LayerDeltas, LoraGroup,
    TrainableParams,
};
pub use train::{train_local, LocalTrainConfig, TrainStats};
