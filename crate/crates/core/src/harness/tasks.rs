//! Synthetic task generation and the reference-encoder evaluation protocol.
//!
//! Inversion and distillation tasks are *planted*: a hidden ground-truth
//! token tuple defines the target, so the global optimum is known, its train
//! loss is exactly zero, and oracle gaps are measurable. Classification
//! tasks are labeled by a hidden teacher prompt, which guarantees the task
//! is realizable; the teacher is kept only for reporting.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::embedding::{gen_table, EmbeddingTable, HardPrompt};
use crate::error::{Error, Result};
use crate::numeric::cosine_similarity;
use crate::objective::{
    BigramLm, ClassifyTask, LabeledExample, Objective, ToyEncoder, MAX_PROMPT_LEN,
};
use crate::project::embed_tokens;
use crate::seed::{derive_seed, rng_from_seed};

/// The reference encoder is "larger": its feature dimension is this multiple
/// of the training encoder's.
pub const REFERENCE_FEATURE_MULTIPLIER: usize = 2;
/// Hidden width of generated classification heads.
pub const CLASSIFY_HIDDEN_DIM: usize = 16;
/// Rows per classification input sequence.
pub const CLASSIFY_INPUT_LEN: usize = 4;
/// Validation examples per class.
pub const VALIDATION_PER_CLASS: usize = 200;

/// A planted inversion instance.
#[derive(Debug, Clone)]
pub struct InvertTask {
    pub table: Arc<EmbeddingTable>,
    pub objective: Objective,
    /// Held-out encoder with a different seed and a larger feature space;
    /// never used during optimization.
    pub reference: ToyEncoder,
    pub ground_truth: HardPrompt,
}

/// A planted distillation instance: compress `target_tokens` into fewer
/// tokens under the same encoder.
#[derive(Debug, Clone)]
pub struct DistillTask {
    pub table: Arc<EmbeddingTable>,
    pub objective: Objective,
    pub reference: ToyEncoder,
    pub target_tokens: HardPrompt,
}

/// A teacher-labeled few-shot classification instance.
#[derive(Debug, Clone)]
pub struct FewshotClassifyTask {
    pub table: Arc<EmbeddingTable>,
    pub objective: Objective,
    pub holdout: Vec<LabeledExample>,
    pub validation: Vec<LabeledExample>,
    pub teacher: HardPrompt,
}

pub fn make_invert_task(
    vocab: usize,
    dim: usize,
    feature_dim: usize,
    target_len: usize,
    seed: u64,
) -> Result<InvertTask> {
    let table = Arc::new(gen_table(vocab, dim, derive_seed(seed, &["table"]))?);
    make_invert_task_with_table(table, feature_dim, target_len, seed)
}

pub fn make_invert_task_with_table(
    table: Arc<EmbeddingTable>,
    feature_dim: usize,
    target_len: usize,
    seed: u64,
) -> Result<InvertTask> {
    let (encoder, reference) = encoder_pair(&table, feature_dim, seed)?;
    let ground_truth = plant_tokens(&table, target_len, seed)?;
    let target = encoder.encode(&embed_tokens(&ground_truth, &table)?.view())?;
    let objective = Objective::invert(encoder, target)?;
    Ok(InvertTask {
        table,
        objective,
        reference,
        ground_truth,
    })
}

pub fn make_distill_task(
    vocab: usize,
    dim: usize,
    feature_dim: usize,
    target_len: usize,
    seed: u64,
) -> Result<DistillTask> {
    let table = Arc::new(gen_table(vocab, dim, derive_seed(seed, &["table"]))?);
    make_distill_task_with_table(table, feature_dim, target_len, seed)
}

pub fn make_distill_task_with_table(
    table: Arc<EmbeddingTable>,
    feature_dim: usize,
    target_len: usize,
    seed: u64,
) -> Result<DistillTask> {
    let (encoder, reference) = encoder_pair(&table, feature_dim, seed)?;
    let target_tokens = plant_tokens(&table, target_len, seed)?;
    let objective = Objective::distill(encoder, target_tokens.clone(), &table)?;
    Ok(DistillTask {
        table,
        objective,
        reference,
        target_tokens,
    })
}

fn encoder_pair(
    table: &Arc<EmbeddingTable>,
    feature_dim: usize,
    seed: u64,
) -> Result<(ToyEncoder, ToyEncoder)> {
    let dim = table.dim();
    let encoder = ToyEncoder::generate(
        feature_dim,
        dim,
        MAX_PROMPT_LEN,
        derive_seed(seed, &["encoder"]),
    )?;
    let reference = ToyEncoder::generate(
        feature_dim * REFERENCE_FEATURE_MULTIPLIER,
        dim,
        MAX_PROMPT_LEN,
        derive_seed(seed, &["reference"]),
    )?;
    Ok((encoder, reference))
}

fn plant_tokens(table: &Arc<EmbeddingTable>, len: usize, seed: u64) -> Result<HardPrompt> {
    let mut rng = rng_from_seed(derive_seed(seed, &["plant"]));
    let ids: Vec<usize> = (0..len)
        .map(|_| rng.random_range(0..table.vocab_size()))
        .collect();
    HardPrompt::new(ids, table)
}

/// Attaches a seeded bigram fluency model with weight `lambda` to the
/// objective; a no-op at `lambda == 0`.
pub fn attach_fluency(
    objective: Objective,
    table: &Arc<EmbeddingTable>,
    lambda: f64,
    seed: u64,
) -> Result<Objective> {
    if lambda == 0.0 {
        return Ok(objective);
    }
    let lm = BigramLm::generate(Arc::clone(table), derive_seed(seed, &["lm"]));
    objective.with_fluency(lm, lambda)
}

pub fn make_fewshot_classify_task(
    vocab: usize,
    dim: usize,
    classes: usize,
    shots: usize,
    teacher_len: usize,
    seed: u64,
) -> Result<FewshotClassifyTask> {
    let table = Arc::new(gen_table(vocab, dim, derive_seed(seed, &["table"]))?);
    make_fewshot_classify_task_with_table(table, classes, shots, teacher_len, seed)
}

pub fn make_fewshot_classify_task_with_table(
    table: Arc<EmbeddingTable>,
    classes: usize,
    shots: usize,
    teacher_len: usize,
    seed: u64,
) -> Result<FewshotClassifyTask> {
    if shots < 1 || classes < 2 {
        return Err(Error::InvalidDims(format!(
            "need k >= 1 and at least two classes, got k={shots}, L={classes}"
        )));
    }
    let dim = table.dim();
    let mut rng = rng_from_seed(derive_seed(seed, &["head"]));
    let hidden_scale = (1.0 / (2.0 * dim as f64)).sqrt();
    let hidden = Array2::from_shape_fn((CLASSIFY_HIDDEN_DIM, 2 * dim), |_| {
        rng.sample::<f64, _>(StandardNormal) * hidden_scale
    });
    let output_scale = (1.0 / CLASSIFY_HIDDEN_DIM as f64).sqrt();
    let output = Array2::from_shape_fn((classes, CLASSIFY_HIDDEN_DIM), |_| {
        rng.sample::<f64, _>(StandardNormal) * output_scale
    });

    let teacher = plant_tokens(&table, teacher_len, seed)?;
    let teacher_rows = embed_tokens(&teacher, &table)?;

    // probe head for labeling; its placeholder examples are never used
    let placeholder: Vec<LabeledExample> = (0..classes)
        .map(|label| LabeledExample {
            inputs: Array2::zeros((1, dim)),
            label,
        })
        .collect();
    let probe = ClassifyTask::new(hidden.clone(), output.clone(), classes, placeholder)?;

    // rejection-sample inputs until every per-class quota is filled:
    // k train + k holdout + VALIDATION_PER_CLASS validation, all disjoint
    let quotas = [shots, shots, VALIDATION_PER_CLASS];
    let mut splits: [Vec<Vec<LabeledExample>>; 3] = std::array::from_fn(|s| {
        (0..classes)
            .map(|_| Vec::with_capacity(quotas[s]))
            .collect()
    });
    let total_needed: usize = quotas.iter().sum::<usize>() * classes;
    let max_attempts = 4000 * total_needed;
    let mut example_rng = rng_from_seed(derive_seed(seed, &["examples"]));
    let mut filled = 0;
    for _ in 0..max_attempts {
        if filled == total_needed {
            break;
        }
        let inputs = Array2::from_shape_fn((CLASSIFY_INPUT_LEN, dim), |_| {
            example_rng.sample::<f64, _>(StandardNormal)
        });
        let label = probe.predict(&teacher_rows.view(), &inputs.view())?;
        let open_split = (0..quotas.len()).find(|&s| splits[s][label].len() < quotas[s]);
        if let Some(s) = open_split {
            splits[s][label].push(LabeledExample { inputs, label });
            filled += 1;
        }
    }
    if filled != total_needed {
        return Err(Error::TaskGeneration(format!(
            "teacher labeling never produced enough examples of some class \
             (filled {filled} of {total_needed}); the head for seed {seed} is too skewed"
        )));
    }
    let [train, holdout, validation] = splits;
    let flatten = |split: Vec<Vec<LabeledExample>>| -> Vec<LabeledExample> {
        split.into_iter().flatten().collect()
    };
    let task = ClassifyTask::new(hidden, output, classes, flatten(train))?;
    Ok(FewshotClassifyTask {
        table,
        objective: Objective::classify(task),
        holdout: flatten(holdout),
        validation: flatten(validation),
        teacher,
    })
}

impl FewshotClassifyTask {
    fn accuracy_on(&self, tokens: &HardPrompt, examples: &[LabeledExample]) -> Result<f64> {
        let task = self
            .objective
            .classify_task()
            .expect("classify bundle holds a classify objective");
        let prompt = embed_tokens(tokens, &self.table)?;
        task.accuracy(&prompt.view(), examples)
    }

    pub fn holdout_accuracy(&self, tokens: &HardPrompt) -> Result<f64> {
        self.accuracy_on(tokens, &self.holdout)
    }

    pub fn validation_accuracy(&self, tokens: &HardPrompt) -> Result<f64> {
        self.accuracy_on(tokens, &self.validation)
    }
}

/// What the reference encoder compares a candidate against.
#[derive(Debug, Clone)]
pub enum ReferenceTarget {
    Tokens(HardPrompt),
    Feature(Array1<f64>),
}

/// Cosine similarity between the reference encodings of the candidate and
/// the target. A pure function of its inputs, symmetric in the two prompts.
pub fn evaluate_reference(
    tokens: &HardPrompt,
    reference: &ToyEncoder,
    target: &ReferenceTarget,
    table: &EmbeddingTable,
) -> Result<f64> {
    let candidate = reference.encode(&embed_tokens(tokens, table)?.view())?;
    let target_feature = match target {
        ReferenceTarget::Tokens(target_tokens) => {
            reference.encode(&embed_tokens(target_tokens, table)?.view())?
        }
        ReferenceTarget::Feature(feature) => feature.clone(),
    };
    cosine_similarity(candidate.view(), target_feature.view())
}
