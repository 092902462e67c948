//! Per-round allocation of trainable LoRA layers to clients.

mod cluster;
mod fim;
mod map;
mod probs;
mod schedule;

pub use cluster::cluster_scores;
pub use fim::fim_scores;
pub use map::{
    assign_capabilities, gd_mask, gd_mask_bernoulli, AllocationMap, CapabilityProfile, Pattern,
};
pub use probs::{
    base_capability_probs, fim_allocation_probs, rgd_prior, rgd_prior_from_masks, sample_allocation,
};
pub use schedule::{Allocator, Assignment, FimContext, RoundAllocation, ScheduleConfig, Strategy};
