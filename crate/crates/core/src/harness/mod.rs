//! Synthetic task generation, the experiment matrix, result persistence, and
//! the statistics used to score method comparisons.

mod matrix;
mod report;
pub mod stats;
mod tasks;

pub use matrix::{run_matrix, run_single, ExperimentConfig, PromptLengths, TaskName, VocabSource};
pub use report::{compute_summary, CellRow, EvalReport, Method, SummaryRow, CSV_HEADER};
pub use tasks::{
    attach_fluency, evaluate_reference, make_distill_task, make_distill_task_with_table,
    make_fewshot_classify_task, make_fewshot_classify_task_with_table, make_invert_task,
    make_invert_task_with_table, DistillTask, FewshotClassifyTask, InvertTask, ReferenceTarget,
    CLASSIFY_HIDDEN_DIM, CLASSIFY_INPUT_LEN, REFERENCE_FEATURE_MULTIPLIER, VALIDATION_PER_CLASS,
};
