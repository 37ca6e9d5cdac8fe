//! Bigram fluency model: next-token negative log-likelihood of the projected
//! prompt, with logits scored against every vocabulary row.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::embedding::{EmbeddingTable, HardPrompt};
use crate::error::{Error, Result};
use crate::numeric::{logsumexp, softmax};
use crate::seed::rng_from_seed;

/// Bigram language model over a vocabulary table.
///
/// Position i is scored with `logits_i = E * (A * prev_i)` where `prev_0` is
/// the start vector and `prev_i` is the prompt's embedding row i-1. The loss
/// is the mean next-token NLL of the projected ids.
#[derive(Debug, Clone)]
pub struct BigramLm {
    transition: Array2<f64>, // d x d
    start: Array1<f64>,      // d
    table: Arc<EmbeddingTable>,
}

impl BigramLm {
    /// Seeded generation: transition entries N(0, 1/d), start entries N(0, 1).
    pub fn generate(table: Arc<EmbeddingTable>, seed: u64) -> Self {
        let dim = table.dim();
        let mut rng = rng_from_seed(seed);
        let scale = (1.0 / dim as f64).sqrt();
        let transition = Array2::from_shape_fn((dim, dim), |_| {
            let z: f64 = rng.sample(StandardNormal);
            z * scale
        });
        let start = Array1::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal));
        Self {
            transition,
            start,
            table,
        }
    }

    pub fn from_parts(
        transition: Array2<f64>,
        start: Array1<f64>,
        table: Arc<EmbeddingTable>,
    ) -> Result<Self> {
        let dim = table.dim();
        if transition.dim() != (dim, dim) || start.len() != dim {
            return Err(Error::ShapeMismatch {
                expected: format!("transition {dim}x{dim} and start of length {dim}"),
                got: format!(
                    "transition {:?} and start of length {}",
                    transition.dim(),
                    start.len()
                ),
            });
        }
        for ((row, col), &value) in transition.indexed_iter() {
            if !value.is_finite() {
                return Err(Error::NonFiniteEntry { row, col });
            }
        }
        if let Some(col) = start.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry { row: 0, col });
        }
        Ok(Self {
            transition,
            start,
            table,
        })
    }

    pub fn table(&self) -> &Arc<EmbeddingTable> {
        &self.table
    }

    /// Mean next-token NLL of `ids` with the prompt rows as context.
    ///
    /// Gradient flows to rows `0..M-2` only: row i drives the logits of
    /// position i+1, and the last row never serves as context. For M = 1 the
    /// only context is the start vector and the gradient is identically zero.
    pub fn nll(
        &self,
        prompt: &ArrayView2<'_, f64>,
        ids: &HardPrompt,
        want_grad: bool,
    ) -> Result<(f64, Option<Array2<f64>>)> {
        let dim = self.table.dim();
        let len = prompt.nrows();
        if prompt.ncols() != dim {
            return Err(Error::ShapeMismatch {
                expected: format!("prompt with {dim} columns"),
                got: format!("prompt with {} columns", prompt.ncols()),
            });
        }
        if ids.len() != len {
            return Err(Error::ShapeMismatch {
                expected: format!("{len} token ids"),
                got: format!("{} token ids", ids.len()),
            });
        }
        if ids.vocab_size() != self.table.vocab_size() {
            return Err(Error::TableMismatch {
                left: ids.vocab_size(),
                right: self.table.vocab_size(),
            });
        }

        let vocab_matrix = self.table.matrix();
        let inv_len = 1.0 / len as f64;
        let mut loss = 0.0;
        let mut grad = want_grad.then(|| Array2::zeros((len, dim)));
        for (i, &target) in ids.ids().iter().enumerate() {
            let prev: ArrayView1<'_, f64> = if i == 0 {
                self.start.view()
            } else {
                prompt.row(i - 1)
            };
            let hidden = self.transition.dot(&prev);
            let logits = vocab_matrix.dot(&hidden);
            let logits_slice = logits.as_slice().expect("contiguous logits");
            loss += logsumexp(logits_slice) - logits[target];
            if i > 0 {
                if let Some(grad) = grad.as_mut() {
                    let mut dlogits = Array1::from(softmax(logits_slice));
                    dlogits[target] -= 1.0;
                    dlogits.mapv_inplace(|x| x * inv_len);
                    let dhidden = vocab_matrix.t().dot(&dlogits);
                    let dprev = self.transition.t().dot(&dhidden);
                    grad.row_mut(i - 1).assign(&dprev);
                }
            }
        }
        Ok((loss * inv_len, grad))
    }
}
