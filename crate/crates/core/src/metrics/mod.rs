//! Evaluation and the analytic compute / communication / memory estimators.

mod cost;
mod eval;

pub use cost::{
    backward_cost_full, backward_cost_ours, backward_cost_per_client, comm_cost_full,
    comm_cost_ours, cost_report, fim_overhead, memory_proxy, CostModelInputs, CostReport,
};
pub use eval::{evaluate, evaluate_logits, EvalReport};
