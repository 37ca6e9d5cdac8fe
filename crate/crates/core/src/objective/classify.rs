//! Synthetic classification task: a frozen two-layer head reads the mean-
//! pooled prompt concatenated with the mean-pooled input sequence. Only the
//! prompt receives gradients; the head weights are never updated.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::numeric::{logsumexp, pairwise_reduce, softmax};

/// One classification example: an input embedding sequence and its label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub inputs: Array2<f64>, // N x d
    pub label: usize,
}

/// Frozen-head classification task.
///
/// Per example: `h = tanh(U * [meanpool(prompt); meanpool(inputs)])`,
/// `logits = C * h`, loss = cross-entropy; the batch loss is the mean. The
/// prompt is broadcast across the batch, so each prompt row receives 1/M of
/// the pooled signal, averaged over the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyTask {
    hidden: Array2<f64>, // H x 2d
    output: Array2<f64>, // L x H
    classes: usize,
    examples: Vec<LabeledExample>,
}

impl ClassifyTask {
    pub fn new(
        hidden: Array2<f64>,
        output: Array2<f64>,
        classes: usize,
        examples: Vec<LabeledExample>,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidDims(format!(
                "need at least two classes, got {classes}"
            )));
        }
        if !hidden.ncols().is_multiple_of(2) || hidden.ncols() == 0 || hidden.nrows() == 0 {
            return Err(Error::InvalidDims(format!(
                "hidden weights must be H x 2d with H, d > 0, got {:?}",
                hidden.dim()
            )));
        }
        if output.dim() != (classes, hidden.nrows()) {
            return Err(Error::ShapeMismatch {
                expected: format!("output weights {}x{}", classes, hidden.nrows()),
                got: format!("{:?}", output.dim()),
            });
        }
        let dim = hidden.ncols() / 2;
        let mut per_class = vec![0usize; classes];
        for example in &examples {
            if example.label >= classes {
                return Err(Error::InvalidConfig(format!(
                    "label {} out of range for {} classes",
                    example.label, classes
                )));
            }
            if example.inputs.ncols() != dim || example.inputs.nrows() == 0 {
                return Err(Error::ShapeMismatch {
                    expected: format!("example inputs N x {dim} with N > 0"),
                    got: format!("{:?}", example.inputs.dim()),
                });
            }
            per_class[example.label] += 1;
        }
        if let Some(class) = per_class.iter().position(|&n| n == 0) {
            return Err(Error::InvalidConfig(format!(
                "training split has no example of class {class}"
            )));
        }
        Ok(Self {
            hidden,
            output,
            classes,
            examples,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.ncols() / 2
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    fn mean_rows(matrix: &ArrayView2<'_, f64>) -> Array1<f64> {
        let mut mean = Array1::zeros(matrix.ncols());
        for row in matrix.rows() {
            mean.zip_mut_with(&row, |acc, &x| *acc += x);
        }
        mean / matrix.nrows() as f64
    }

    fn check_prompt(&self, prompt: &ArrayView2<'_, f64>) -> Result<()> {
        if prompt.ncols() != self.input_dim() || prompt.nrows() == 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("prompt M x {} with M > 0", self.input_dim()),
                got: format!("{:?}", prompt.dim()),
            });
        }
        Ok(())
    }

    /// Class logits for a prompt/input pair.
    pub fn logits(
        &self,
        prompt: &ArrayView2<'_, f64>,
        inputs: &ArrayView2<'_, f64>,
    ) -> Result<Array1<f64>> {
        self.check_prompt(prompt)?;
        let concat = self.concat_pools(prompt, inputs);
        let hidden = self.hidden.dot(&concat).mapv(f64::tanh);
        Ok(self.output.dot(&hidden))
    }

    fn concat_pools(
        &self,
        prompt: &ArrayView2<'_, f64>,
        inputs: &ArrayView2<'_, f64>,
    ) -> Array1<f64> {
        let dim = self.input_dim();
        let prompt_mean = Self::mean_rows(prompt);
        let input_mean = Self::mean_rows(inputs);
        let mut concat = Array1::zeros(2 * dim);
        concat.slice_mut(ndarray::s![..dim]).assign(&prompt_mean);
        concat.slice_mut(ndarray::s![dim..]).assign(&input_mean);
        concat
    }

    /// Predicted class: argmax of the logits, ties to the lowest class.
    pub fn predict(
        &self,
        prompt: &ArrayView2<'_, f64>,
        inputs: &ArrayView2<'_, f64>,
    ) -> Result<usize> {
        let logits = self.logits(prompt, inputs)?;
        let mut best = 0;
        for c in 1..logits.len() {
            if logits[c] > logits[best] {
                best = c;
            }
        }
        Ok(best)
    }

    /// Fraction of examples whose prediction matches the label.
    pub fn accuracy(
        &self,
        prompt: &ArrayView2<'_, f64>,
        examples: &[LabeledExample],
    ) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut correct = 0usize;
        for example in examples {
            if self.predict(prompt, &example.inputs.view())? == example.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / examples.len() as f64)
    }

    fn example_loss(
        &self,
        prompt: &ArrayView2<'_, f64>,
        example: &LabeledExample,
        want_grad: bool,
    ) -> (f64, Option<Array2<f64>>) {
        let dim = self.input_dim();
        let prompt_len = prompt.nrows();
        let concat = self.concat_pools(prompt, &example.inputs.view());
        let pre_act = self.hidden.dot(&concat);
        let hidden = pre_act.mapv(f64::tanh);
        let logits = self.output.dot(&hidden);
        let logits_slice = logits.as_slice().expect("contiguous logits");
        let loss = logsumexp(logits_slice) - logits[example.label];
        let grad = want_grad.then(|| {
            let mut dlogits = Array1::from(softmax(logits_slice));
            dlogits[example.label] -= 1.0;
            let mut dhidden = self.output.t().dot(&dlogits);
            dhidden.zip_mut_with(&hidden, |g, &h| *g *= 1.0 - h * h);
            let dconcat = self.hidden.t().dot(&dhidden);
            let dprompt_mean = dconcat.slice(ndarray::s![..dim]);
            let per_row = &dprompt_mean / prompt_len as f64;
            let mut grad = Array2::zeros((prompt_len, dim));
            for mut row in grad.rows_mut() {
                row.assign(&per_row);
            }
            grad
        });
        (loss, grad)
    }

    /// Mean cross-entropy over the batch and its gradient w.r.t. the prompt
    /// rows. Batch reduction is a balanced pairwise sum, so `b` copies of one
    /// example reproduce the single-example value exactly for b a power of
    /// two.
    pub fn loss_on_batch(
        &self,
        prompt: &ArrayView2<'_, f64>,
        batch: &[usize],
        want_grad: bool,
    ) -> Result<(f64, Option<Array2<f64>>)> {
        self.check_prompt(prompt)?;
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for &i in batch {
            if i >= self.examples.len() {
                return Err(Error::InvalidConfig(format!(
                    "batch index {i} out of range for {} examples",
                    self.examples.len()
                )));
            }
        }
        let b = batch.len() as f64;
        let mut losses = Vec::with_capacity(batch.len());
        let mut grads = want_grad.then(|| Vec::with_capacity(batch.len()));
        for &i in batch {
            let (loss, grad) = self.example_loss(prompt, &self.examples[i], want_grad);
            losses.push(loss);
            if let (Some(grads), Some(grad)) = (grads.as_mut(), grad) {
                grads.push(grad);
            }
        }
        let loss = pairwise_reduce(losses, |a, b| a + b).expect("non-empty batch") / b;
        let grad = grads.map(|gs| pairwise_reduce(gs, |a, b| a + b).expect("non-empty batch") / b);
        Ok((loss, grad))
    }

    /// Indices of every training example, the full-batch default.
    pub fn full_batch(&self) -> Vec<usize> {
        (0..self.examples.len()).collect()
    }
}
