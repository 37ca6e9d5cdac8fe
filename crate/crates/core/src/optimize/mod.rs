//! Optimizer steps, the training loops, and the exhaustive-search oracle.

mod loops;
mod oracle;
mod steps;

pub use loops::{
    hard_loss, run_autoprompt_sgd, run_fluentprompt, run_pez, run_pez_identity_projection,
    run_soft, RunResult, Validator,
};
pub use oracle::{exhaustive_search, SEARCH_SPACE_GUARD};
pub use steps::{adamw_step, langevin_step, sgd_step, BetaSchedule, OptimMethod, OptimizerConfig};
