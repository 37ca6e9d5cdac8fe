//! Differentiable losses over prompt embeddings with analytic gradients.
//!
//! Every gradient here is hand-derived and certified against central finite
//! differences (see [`gradcheck`]); the encoders are shallow enough that a
//! general autodiff engine would be a larger trusted surface than the
//! derivations themselves.

mod classify;
mod encoder;
mod fluency;
mod gradcheck;

pub use classify::{ClassifyTask, LabeledExample};
pub use encoder::{EncoderForward, ToyEncoder, MAX_PROMPT_LEN};
pub use fluency::BigramLm;
pub use gradcheck::{
    certify_gradients, finite_diff_check, finite_diff_check_objective, GradCheckReport,
};

use ndarray::{Array1, Array2};

use crate::embedding::{EmbeddingTable, HardPrompt};
use crate::error::{Error, Result};
use crate::numeric::{cosine_similarity, NORM_FLOOR};
use crate::project::embed_tokens;

/// Anything the optimization loops can minimize: a loss over an M x d prompt
/// matrix plus its gradient. `ids` carries the projected token ids when the
/// prompt matrix is a projection; pure soft prompts pass `None`.
pub trait PromptObjective {
    fn evaluate(
        &self,
        prompt: &Array2<f64>,
        ids: Option<&HardPrompt>,
    ) -> Result<(f64, Array2<f64>)>;

    /// Loss without the gradient. Must equal `evaluate(..).0` bit for bit.
    fn loss_only(&self, prompt: &Array2<f64>, ids: Option<&HardPrompt>) -> Result<f64> {
        self.evaluate(prompt, ids).map(|(loss, _)| loss)
    }
}

/// Task payload of an [`Objective`]. The variant carries exactly the fields
/// its kind needs.
#[derive(Debug, Clone)]
pub enum TaskKind {
    /// Feature matching: `1 - cos(f(P), target)`.
    Invert {
        encoder: ToyEncoder,
        target: Array1<f64>,
    },
    /// Match the encoding of a (possibly longer) target prompt.
    Distill {
        encoder: ToyEncoder,
        target_tokens: HardPrompt,
        target_feature: Array1<f64>,
    },
    /// Frozen-head classification.
    Classify { task: ClassifyTask },
}

/// A task loss, optionally blended with a bigram fluency term:
/// `(1 - lambda) * task + lambda * fluency`.
#[derive(Debug, Clone)]
pub struct Objective {
    kind: TaskKind,
    lm: Option<BigramLm>,
    lambda_fluency: f64,
}

impl Objective {
    /// Inversion objective against a fixed target feature.
    ///
    /// The similarity is scale-invariant in the target, so the target is
    /// stored as given rather than renormalized; a renormalizing division
    /// would perturb its bits and break the exact-zero loss at planted
    /// optima.
    pub fn invert(encoder: ToyEncoder, target: Array1<f64>) -> Result<Self> {
        if target.len() != encoder.feature_dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("target of length {}", encoder.feature_dim()),
                got: format!("target of length {}", target.len()),
            });
        }
        let norm_sq = target.dot(&target);
        if norm_sq <= NORM_FLOOR * NORM_FLOOR {
            return Err(Error::DegenerateEncoding {
                norm: norm_sq.sqrt(),
            });
        }
        Ok(Self {
            kind: TaskKind::Invert { encoder, target },
            lm: None,
            lambda_fluency: 0.0,
        })
    }

    /// Distillation objective: match the encoding of `target_tokens`. The
    /// optimized prompt's length may differ from the target's; that is the
    /// point.
    pub fn distill(
        encoder: ToyEncoder,
        target_tokens: HardPrompt,
        table: &EmbeddingTable,
    ) -> Result<Self> {
        let target_matrix = embed_tokens(&target_tokens, table)?;
        let target_feature = encoder.encode(&target_matrix.view())?;
        Ok(Self {
            kind: TaskKind::Distill {
                encoder,
                target_tokens,
                target_feature,
            },
            lm: None,
            lambda_fluency: 0.0,
        })
    }

    /// Classification objective over the task's full training batch.
    pub fn classify(task: ClassifyTask) -> Self {
        Self {
            kind: TaskKind::Classify { task },
            lm: None,
            lambda_fluency: 0.0,
        }
    }

    /// Attaches a fluency model with weight `lambda` in [0, 1].
    pub fn with_fluency(mut self, lm: BigramLm, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidConfig(format!(
                "fluency weight must lie in [0, 1], got {lambda}"
            )));
        }
        self.lm = Some(lm);
        self.lambda_fluency = lambda;
        Ok(self)
    }

    pub fn kind(&self) -> &TaskKind {
        &self.kind
    }

    pub fn lambda_fluency(&self) -> f64 {
        self.lambda_fluency
    }

    pub fn fluency_model(&self) -> Option<&BigramLm> {
        self.lm.as_ref()
    }

    pub fn classify_task(&self) -> Option<&ClassifyTask> {
        match &self.kind {
            TaskKind::Classify { task } => Some(task),
            _ => None,
        }
    }

    /// Task loss and (optionally) its gradient, ignoring the fluency term.
    pub fn task_loss(
        &self,
        prompt: &Array2<f64>,
        _ids: Option<&HardPrompt>,
        want_grad: bool,
    ) -> Result<(f64, Option<Array2<f64>>)> {
        match &self.kind {
            TaskKind::Invert { encoder, target } => {
                feature_match_loss(encoder, target, prompt, want_grad)
            }
            TaskKind::Distill {
                encoder,
                target_feature,
                ..
            } => feature_match_loss(encoder, target_feature, prompt, want_grad),
            TaskKind::Classify { task } => {
                task.loss_on_batch(&prompt.view(), &task.full_batch(), want_grad)
            }
        }
    }

    /// Fluency loss and (optionally) its gradient.
    pub fn fluency_loss(
        &self,
        prompt: &Array2<f64>,
        ids: Option<&HardPrompt>,
        want_grad: bool,
    ) -> Result<(f64, Option<Array2<f64>>)> {
        let lm = self.lm.as_ref().ok_or(Error::MissingFluencyModel {
            lambda: self.lambda_fluency,
        })?;
        let ids = ids.ok_or_else(|| {
            Error::InvalidConfig(
                "fluency loss requires projected token ids; soft prompts cannot carry a fluency term"
                    .into(),
            )
        })?;
        lm.nll(&prompt.view(), ids, want_grad)
    }

    fn combined(
        &self,
        prompt: &Array2<f64>,
        ids: Option<&HardPrompt>,
        want_grad: bool,
    ) -> Result<(f64, Option<Array2<f64>>)> {
        let lambda = self.lambda_fluency;
        // endpoints reproduce the pure losses bit for bit
        if lambda == 0.0 {
            return self.task_loss(prompt, ids, want_grad);
        }
        if lambda == 1.0 {
            return self.fluency_loss(prompt, ids, want_grad);
        }
        let (task_loss, task_grad) = self.task_loss(prompt, ids, want_grad)?;
        let (flu_loss, flu_grad) = self.fluency_loss(prompt, ids, want_grad)?;
        let loss = (1.0 - lambda) * task_loss + lambda * flu_loss;
        let grad = match (task_grad, flu_grad) {
            (Some(tg), Some(fg)) => {
                let mut grad = tg;
                grad.zip_mut_with(&fg, |t, &f| *t = (1.0 - lambda) * *t + lambda * f);
                Some(grad)
            }
            _ => None,
        };
        Ok((loss, grad))
    }

    /// Combined loss value without the gradient.
    pub fn loss_value(&self, prompt: &Array2<f64>, ids: Option<&HardPrompt>) -> Result<f64> {
        self.combined(prompt, ids, false).map(|(loss, _)| loss)
    }
}

impl PromptObjective for Objective {
    fn evaluate(
        &self,
        prompt: &Array2<f64>,
        ids: Option<&HardPrompt>,
    ) -> Result<(f64, Array2<f64>)> {
        let (loss, grad) = self.combined(prompt, ids, true)?;
        Ok((loss, grad.expect("gradient requested")))
    }

    fn loss_only(&self, prompt: &Array2<f64>, ids: Option<&HardPrompt>) -> Result<f64> {
        self.loss_value(prompt, ids)
    }
}

/// `1 - cos(f(prompt), target)` and its gradient through the weighted sum,
/// the projection, and the normalization.
fn feature_match_loss(
    encoder: &ToyEncoder,
    target: &Array1<f64>,
    prompt: &Array2<f64>,
    want_grad: bool,
) -> Result<(f64, Option<Array2<f64>>)> {
    let fwd = encoder.forward(&prompt.view())?;
    let similarity = cosine_similarity(fwd.feature.view(), target.view())?;
    let loss = 1.0 - similarity;
    let grad = if want_grad {
        // S = (f.t) / sqrt((f.f)(t.t)), so dS/df = t/denom - (f.t)(t.t)/denom^3 * f
        let qf = fwd.feature.dot(&fwd.feature);
        let qt = target.dot(target);
        let dp = fwd.feature.dot(target);
        let denom = (qf * qt).sqrt();
        let coeff = dp * qt / (denom * denom * denom);
        let ds_df = target / denom - &(&fwd.feature * coeff);
        let dl_df = ds_df.mapv(|x| -x);
        Some(encoder.backprop(&fwd, &dl_df, prompt.nrows()))
    } else {
        None
    };
    Ok((loss, grad))
}

/// Built-in quadratic test objective: loss `||P||^2 / 2`, gradient `P`.
/// Its continuous optimum sits off the vocabulary lattice, which makes it a
/// convenient probe for projection effects.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticObjective;

impl PromptObjective for QuadraticObjective {
    fn evaluate(
        &self,
        prompt: &Array2<f64>,
        _ids: Option<&HardPrompt>,
    ) -> Result<(f64, Array2<f64>)> {
        let loss = 0.5 * prompt.iter().map(|&x| x * x).sum::<f64>();
        Ok((loss, prompt.clone()))
    }
}

/// Length ratio of a distilled prompt to its source prompt.
pub fn distillation_ratio(prompt_len: usize, target_len: usize) -> f64 {
    prompt_len as f64 / target_len as f64
}
