//! Discrete sequence optimization over vocabulary embedding tables.
//!
//! The library maintains a continuous prompt iterate, evaluates gradients at
//! its nearest-neighbor projection onto the vocabulary, and applies them to
//! the continuous iterate, projecting once at the end. Per-step reprojection
//! baselines (plain and Langevin-perturbed), pure soft-prompt training, an
//! exhaustive-search oracle, analytic toy objectives with certified
//! gradients, and a seeded experiment harness round out the toolkit.

pub mod embedding;
pub mod error;
pub mod harness;
pub mod numeric;
pub mod objective;
pub mod optimize;
pub mod project;
pub mod seed;

pub use embedding::{
    concat_prompts, fill_template, gen_table, load_table, sample_init, sample_init_ids, save_table,
    token_path, EmbeddingTable, HardPrompt, PromptState,
};
pub use error::{Error, Result};
pub use harness::{
    run_matrix, run_single, CellRow, EvalReport, ExperimentConfig, Method, SummaryRow,
};
pub use objective::{
    certify_gradients, distillation_ratio, finite_diff_check, finite_diff_check_objective,
    BigramLm, ClassifyTask, GradCheckReport, LabeledExample, Objective, PromptObjective,
    QuadraticObjective, TaskKind, ToyEncoder,
};
pub use optimize::{
    adamw_step, exhaustive_search, hard_loss, langevin_step, run_autoprompt_sgd, run_fluentprompt,
    run_pez, run_soft, sgd_step, BetaSchedule, OptimMethod, OptimizerConfig, RunResult,
};
pub use project::{embed_tokens, project_all, project_one, Metric, ProjectionConfig};
