//! Experiment configuration and the (method x seed x M) comparison matrix.
//!
//! Every cell draws from an RNG stream derived by hashing (base seed,
//! method, seed, M), so cells are independent of execution order and of the
//! `--jobs` parallelism; rows are emitted in deterministic nested order
//! (methods, then seeds, then prompt lengths) and identical configs produce
//! byte-identical CSV files.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::{load_table, EmbeddingTable, HardPrompt};
use crate::error::{Error, Result};
use crate::harness::report::{CellRow, EvalReport, Method};
use crate::harness::tasks::{
    attach_fluency, evaluate_reference, make_distill_task_with_table,
    make_fewshot_classify_task_with_table, make_invert_task_with_table, ReferenceTarget,
};
use crate::objective::PromptObjective;
use crate::optimize::{
    exhaustive_search, run_autoprompt_sgd, run_fluentprompt, run_pez, run_soft, OptimizerConfig,
    RunResult,
};
use crate::project::ProjectionConfig;
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskName {
    Invert,
    Distill,
    Classify,
}

/// Where the vocabulary comes from: an `EMB1` file or seeded generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VocabSource {
    File { path: PathBuf },
    Generate { v: usize, d: usize },
}

/// A single prompt length or a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PromptLengths {
    One(usize),
    Sweep(Vec<usize>),
}

impl PromptLengths {
    pub fn as_vec(&self) -> Vec<usize> {
        match self {
            PromptLengths::One(m) => vec![*m],
            PromptLengths::Sweep(ms) => ms.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub task: TaskName,
    pub vocab: VocabSource,
    /// Training-encoder feature dimension; the reference encoder doubles it.
    pub d_f: usize,
    /// Prompt length(s) to optimize.
    pub m: PromptLengths,
    /// Planted target length for invert/distill tasks.
    pub m_target: usize,
    pub methods: Vec<Method>,
    pub base_seed: u64,
    /// Seed labels; each labels one task instance and one column of cells.
    pub seeds: Option<Vec<u64>>,
    pub opt: OptimizerConfig,
    pub projection: ProjectionConfig,
    /// Token strings the projection may not emit.
    pub banned_tokens: Vec<String>,
    pub lambda_fluency: f64,
    /// Training (and holdout) examples per class for classify tasks.
    pub k_shots: usize,
    /// Class count for classify tasks.
    pub classes: usize,
    pub eval_every: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema: 1,
            task: TaskName::Invert,
            vocab: VocabSource::Generate { v: 64, d: 16 },
            d_f: 16,
            m: PromptLengths::One(8),
            m_target: 8,
            methods: vec![Method::Pez],
            base_seed: 0,
            seeds: None,
            opt: OptimizerConfig::default(),
            projection: ProjectionConfig::default(),
            banned_tokens: Vec::new(),
            lambda_fluency: 0.0,
            k_shots: 2,
            classes: 4,
            eval_every: 100,
            out: PathBuf::from("results.csv"),
        }
    }
}

impl ExperimentConfig {
    pub fn resolved_seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![0])
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != 1 {
            return Err(Error::InvalidConfig(format!(
                "unsupported schema version {}, expected 1",
                self.schema
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("methods list is empty".into()));
        }
        let lengths = self.m.as_vec();
        if lengths.is_empty() || lengths.contains(&0) {
            return Err(Error::InvalidConfig(
                "prompt length sweep must be non-empty with entries >= 1".into(),
            ));
        }
        if self.resolved_seeds().is_empty() {
            return Err(Error::InvalidConfig("seeds list is empty".into()));
        }
        if let VocabSource::Generate { v, d } = self.vocab {
            if v < 2 || d < 1 {
                return Err(Error::InvalidConfig(format!(
                    "generated vocabulary needs V >= 2 and d >= 1, got V={v}, d={d}"
                )));
            }
        }
        if self.d_f == 0 {
            return Err(Error::InvalidConfig("d_f must be at least 1".into()));
        }
        if self.m_target == 0 {
            return Err(Error::InvalidConfig("m_target must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_fluency) {
            return Err(Error::InvalidConfig(format!(
                "lambda_fluency must lie in [0, 1], got {}",
                self.lambda_fluency
            )));
        }
        if self.k_shots == 0 || self.classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "classify tasks need k >= 1 and L >= 2, got k={}, L={}",
                self.k_shots, self.classes
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be at least 1".into()));
        }
        self.opt.validate()
    }

    /// The table every cell shares: loaded from disk or generated from the
    /// base seed.
    pub fn resolve_table(&self) -> Result<Arc<EmbeddingTable>> {
        match &self.vocab {
            VocabSource::File { path } => Ok(Arc::new(load_table(path)?)),
            VocabSource::Generate { v, d } => Ok(Arc::new(crate::embedding::gen_table(
                *v,
                *d,
                derive_seed(self.base_seed, &["vocab"]),
            )?)),
        }
    }

    /// Projection config with the banned tokens compiled into the mask.
    pub fn resolve_projection(&self, table: &EmbeddingTable) -> Result<ProjectionConfig> {
        if let Some(mask) = &self.projection.allowed {
            if mask.len() != table.vocab_size() {
                return Err(Error::InvalidConfig(format!(
                    "projection mask has {} entries for a vocabulary of {}",
                    mask.len(),
                    table.vocab_size()
                )));
            }
        }
        if self.banned_tokens.is_empty() {
            return Ok(self.projection.clone());
        }
        let mut mask = self
            .projection
            .allowed
            .clone()
            .unwrap_or_else(|| vec![true; table.vocab_size()]);
        for banned in &self.banned_tokens {
            let id = table
                .tokens()
                .iter()
                .position(|t| t == banned)
                .ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "banned token {banned:?} is not in the vocabulary"
                    ))
                })?;
            mask[id] = false;
        }
        ProjectionConfig::with_mask(self.projection.metric, mask)
    }
}

/// The task instance of one seed column, bundled with its scoring hooks.
enum CellTask {
    Invert(crate::harness::tasks::InvertTask),
    Distill(crate::harness::tasks::DistillTask),
    Classify(crate::harness::tasks::FewshotClassifyTask),
}

impl CellTask {
    fn build(
        cfg: &ExperimentConfig,
        table: &Arc<EmbeddingTable>,
        seed: u64,
        m: usize,
    ) -> Result<Self> {
        match cfg.task {
            TaskName::Invert => {
                let task_seed = derive_seed(cfg.base_seed, &["task", &seed.to_string()]);
                let mut task = make_invert_task_with_table(
                    Arc::clone(table),
                    cfg.d_f,
                    cfg.m_target,
                    task_seed,
                )?;
                task.objective =
                    attach_fluency(task.objective, table, cfg.lambda_fluency, task_seed)?;
                Ok(CellTask::Invert(task))
            }
            TaskName::Distill => {
                let task_seed = derive_seed(cfg.base_seed, &["task", &seed.to_string()]);
                let mut task = make_distill_task_with_table(
                    Arc::clone(table),
                    cfg.d_f,
                    cfg.m_target,
                    task_seed,
                )?;
                task.objective =
                    attach_fluency(task.objective, table, cfg.lambda_fluency, task_seed)?;
                Ok(CellTask::Distill(task))
            }
            TaskName::Classify => {
                // the teacher prompt has the optimized length, so the
                // instance depends on both the seed and M
                let task_seed =
                    derive_seed(cfg.base_seed, &["task", &seed.to_string(), &m.to_string()]);
                let mut task = make_fewshot_classify_task_with_table(
                    Arc::clone(table),
                    cfg.classes,
                    cfg.k_shots,
                    m,
                    task_seed,
                )?;
                task.objective =
                    attach_fluency(task.objective, table, cfg.lambda_fluency, task_seed)?;
                Ok(CellTask::Classify(task))
            }
        }
    }

    fn objective(&self) -> &dyn PromptObjective {
        match self {
            CellTask::Invert(t) => &t.objective,
            CellTask::Distill(t) => &t.objective,
            CellTask::Classify(t) => &t.objective,
        }
    }

    /// Checkpoint validation metric: reference similarity for invert and
    /// distill, holdout accuracy for classify. Higher is better.
    fn validate_tokens(&self, tokens: &HardPrompt) -> Result<f64> {
        match self {
            CellTask::Invert(t) => evaluate_reference(
                tokens,
                &t.reference,
                &ReferenceTarget::Tokens(t.ground_truth.clone()),
                &t.table,
            ),
            CellTask::Distill(t) => evaluate_reference(
                tokens,
                &t.reference,
                &ReferenceTarget::Tokens(t.target_tokens.clone()),
                &t.table,
            ),
            CellTask::Classify(t) => t.holdout_accuracy(tokens),
        }
    }

    /// Final reported quality: reference similarity, or validation accuracy
    /// for classify.
    fn report_metric(&self, tokens: &HardPrompt) -> Result<f64> {
        match self {
            CellTask::Classify(t) => t.validation_accuracy(tokens),
            _ => self.validate_tokens(tokens),
        }
    }
}

/// The outcome of one executed cell, before oracle gaps are filled in.
struct CellOutcome {
    row: CellRow,
    tokens: Option<HardPrompt>,
}

fn run_cell(
    cfg: &ExperimentConfig,
    table: &Arc<EmbeddingTable>,
    proj: &ProjectionConfig,
    method: Method,
    seed: u64,
    m: usize,
) -> Result<CellOutcome> {
    let task = CellTask::build(cfg, table, seed, m)?;
    let objective = task.objective();

    if method == Method::Oracle {
        let (tokens, loss) = exhaustive_search(objective, table, m, proj.allowed.as_deref())?;
        let ref_sim = task.report_metric(&tokens)?;
        return Ok(CellOutcome {
            row: CellRow {
                method,
                seed,
                m,
                train_loss: None,
                hard_loss: Some(loss),
                ref_sim: Some(ref_sim),
                oracle_gap: Some(0.0),
                best_metric: None,
                steps: 0,
                wall_ms: 0,
                error: None,
            },
            tokens: Some(tokens),
        });
    }

    let run_seed = derive_seed(
        cfg.base_seed,
        &["cell", method.as_str(), &seed.to_string(), &m.to_string()],
    );
    let opt = OptimizerConfig {
        seed: run_seed,
        ..cfg.opt.clone()
    };
    let validator = |tokens: &HardPrompt| task.validate_tokens(tokens);
    let result: RunResult = match method {
        Method::Pez => run_pez(
            objective,
            table,
            m,
            &opt,
            proj,
            cfg.eval_every,
            Some(&validator),
        )?,
        Method::AutopromptSgd => run_autoprompt_sgd(
            objective,
            table,
            m,
            &opt,
            proj,
            cfg.eval_every,
            Some(&validator),
        )?,
        Method::Fluentprompt => run_fluentprompt(
            objective,
            table,
            m,
            &opt,
            proj,
            cfg.eval_every,
            Some(&validator),
        )?,
        Method::Soft => run_soft(
            objective,
            table,
            m,
            &opt,
            proj,
            cfg.eval_every,
            Some(&validator),
        )?,
        Method::Oracle => unreachable!("handled above"),
    };
    let ref_sim = task.report_metric(&result.final_tokens)?;
    Ok(CellOutcome {
        row: CellRow {
            method,
            seed,
            m,
            train_loss: Some(result.final_train_loss),
            hard_loss: Some(result.final_hard_loss),
            ref_sim: Some(ref_sim),
            oracle_gap: None, // filled in once oracle rows are known
            best_metric: Some(result.best_metric),
            steps: result.steps,
            // wall-clock time stays out of the CSV so identical configs
            // produce identical bytes; RunResult keeps the measurement
            wall_ms: 0,
            error: None,
        },
        tokens: Some(result.final_tokens),
    })
}

fn error_row(method: Method, seed: u64, m: usize, err: &Error) -> CellRow {
    CellRow {
        method,
        seed,
        m,
        train_loss: None,
        hard_loss: None,
        ref_sim: None,
        oracle_gap: None,
        best_metric: None,
        steps: 0,
        wall_ms: 0,
        error: Some(err.to_string()),
    }
}

/// Runs every (method, seed, M) cell, writes the CSV to `cfg.out`, and
/// returns the report. `jobs` > 1 executes cells on a rayon pool; results
/// are identical either way.
pub fn run_matrix(cfg: &ExperimentConfig, jobs: usize) -> Result<EvalReport> {
    cfg.validate()?;
    if jobs == 0 {
        return Err(Error::InvalidConfig("jobs must be at least 1".into()));
    }
    let table = cfg.resolve_table()?;
    let proj = cfg.resolve_projection(&table)?;
    let lengths = cfg.m.as_vec();
    let seeds = cfg.resolved_seeds();
    let mut cells = Vec::new();
    for &method in &cfg.methods {
        for &seed in &seeds {
            for &m in &lengths {
                cells.push((method, seed, m));
            }
        }
    }

    let execute = |&(method, seed, m): &(Method, u64, usize)| -> CellRow {
        match run_cell(cfg, &table, &proj, method, seed, m) {
            Ok(outcome) => outcome.row,
            Err(err) => error_row(method, seed, m, &err),
        }
    };
    let mut rows: Vec<CellRow> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot build thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            cells.par_iter().map(execute).collect()
        })
    } else {
        cells.iter().map(execute).collect()
    };

    fill_oracle_gaps(&mut rows);
    let report = EvalReport::from_rows(rows);
    report.write(&cfg.out)?;
    Ok(report)
}

/// oracle_gap = hard loss - oracle loss for the same (seed, M) instance.
fn fill_oracle_gaps(rows: &mut [CellRow]) {
    let oracle_losses: Vec<(u64, usize, f64)> = rows
        .iter()
        .filter(|r| r.method == Method::Oracle && !r.is_error())
        .filter_map(|r| r.hard_loss.map(|loss| (r.seed, r.m, loss)))
        .collect();
    for row in rows.iter_mut() {
        if row.method == Method::Oracle || row.is_error() {
            continue;
        }
        let oracle = oracle_losses
            .iter()
            .find(|(seed, m, _)| *seed == row.seed && *m == row.m);
        if let (Some((_, _, oracle_loss)), Some(hard)) = (oracle, row.hard_loss) {
            row.oracle_gap = Some(hard - oracle_loss);
        }
    }
}

/// Runs a single cell (first seed, first prompt length) of the config and
/// writes a one-row report. Returns the row and the rendered final tokens.
pub fn run_single(cfg: &ExperimentConfig, method: Method) -> Result<(CellRow, String)> {
    cfg.validate()?;
    let table = cfg.resolve_table()?;
    let proj = cfg.resolve_projection(&table)?;
    let seed = cfg.resolved_seeds()[0];
    let m = cfg.m.as_vec()[0];
    let outcome = run_cell(cfg, &table, &proj, method, seed, m)?;
    let rendered = outcome
        .tokens
        .as_ref()
        .map(|t| t.render(&table))
        .unwrap_or_default();
    let report = EvalReport::from_rows(vec![outcome.row.clone()]);
    report.write(&cfg.out)?;
    Ok((outcome.row, rendered))
}
