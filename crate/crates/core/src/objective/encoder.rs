//! A shallow text-encoder stand-in: position-weighted sum of prompt rows,
//! projected and normalized onto the unit sphere of the feature space.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::NORM_FLOOR;
use crate::seed::rng_from_seed;

/// Default maximum prompt length for generated encoders.
pub const MAX_PROMPT_LEN: usize = 64;

/// Encoder state after the forward pass, kept for gradient computation.
#[derive(Debug, Clone)]
pub struct EncoderForward {
    /// Pre-normalization projection `u = W * sum_i omega_i * row_i`.
    pub raw: Array1<f64>,
    /// `||u||`.
    pub norm: f64,
    /// Unit-norm feature `u / ||u||`.
    pub feature: Array1<f64>,
}

/// Deterministic toy encoder: `f(P) = normalize(W * sum_i omega_i * P_i)`.
///
/// The positional weights `omega_i = 1/(1+i)` break permutation symmetry so
/// token order matters, mirroring real text encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    projection: Array2<f64>, // feature_dim x input_dim
    omega: Array1<f64>,
}

impl ToyEncoder {
    /// Seeded generation: projection entries i.i.d. N(0, 1/d), harmonic
    /// positional weights up to `max_prompt_len`.
    pub fn generate(
        feature_dim: usize,
        input_dim: usize,
        max_prompt_len: usize,
        seed: u64,
    ) -> Result<Self> {
        if feature_dim == 0 || input_dim == 0 || max_prompt_len == 0 {
            return Err(Error::InvalidDims(format!(
                "encoder dims must be positive, got d_f={feature_dim}, d={input_dim}, M_max={max_prompt_len}"
            )));
        }
        let mut rng = rng_from_seed(seed);
        let scale = (1.0 / input_dim as f64).sqrt();
        let projection = Array2::from_shape_fn((feature_dim, input_dim), |_| {
            let z: f64 = rng.sample(StandardNormal);
            z * scale
        });
        let omega = Array1::from_shape_fn(max_prompt_len, |i| 1.0 / (1.0 + i as f64));
        Self::from_parts(projection, omega)
    }

    /// Builds an encoder from explicit weights. Positional weights must all
    /// be strictly positive.
    pub fn from_parts(projection: Array2<f64>, omega: Array1<f64>) -> Result<Self> {
        if projection.is_empty() || omega.is_empty() {
            return Err(Error::InvalidDims(
                "encoder weights must be non-empty".into(),
            ));
        }
        for ((row, col), &value) in projection.indexed_iter() {
            if !value.is_finite() {
                return Err(Error::NonFiniteEntry { row, col });
            }
        }
        for (i, &w) in omega.iter().enumerate() {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidDims(format!(
                    "positional weight {i} must be finite and positive, got {w}"
                )));
            }
        }
        Ok(Self { projection, omega })
    }

    pub fn feature_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn max_prompt_len(&self) -> usize {
        self.omega.len()
    }

    pub fn positional_weight(&self, i: usize) -> f64 {
        self.omega[i]
    }

    fn check_prompt(&self, prompt: &ArrayView2<'_, f64>) -> Result<()> {
        let (rows, cols) = prompt.dim();
        if cols != self.input_dim() || rows == 0 || rows > self.max_prompt_len() {
            return Err(Error::ShapeMismatch {
                expected: format!(
                    "prompt of shape (1..={}) x {}",
                    self.max_prompt_len(),
                    self.input_dim()
                ),
                got: format!("{rows} x {cols}"),
            });
        }
        Ok(())
    }

    /// Forward pass keeping intermediates for gradients.
    pub fn forward(&self, prompt: &ArrayView2<'_, f64>) -> Result<EncoderForward> {
        self.check_prompt(prompt)?;
        let mut weighted = Array1::zeros(self.input_dim());
        for (i, row) in prompt.rows().into_iter().enumerate() {
            let omega = self.omega[i];
            weighted.zip_mut_with(&row, |acc, &x| *acc += omega * x);
        }
        let raw = self.projection.dot(&weighted);
        let norm_sq = raw.dot(&raw);
        if norm_sq <= NORM_FLOOR * NORM_FLOOR {
            return Err(Error::DegenerateEncoding {
                norm: norm_sq.sqrt(),
            });
        }
        let norm = norm_sq.sqrt();
        let feature = &raw / norm;
        Ok(EncoderForward { raw, norm, feature })
    }

    /// The unit-norm feature of the prompt.
    pub fn encode(&self, prompt: &ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.forward(prompt).map(|f| f.feature)
    }

    /// Pulls a gradient w.r.t. the normalized feature back to the prompt
    /// rows: through the normalization, the projection, and the positional
    /// weighting.
    pub fn backprop(
        &self,
        fwd: &EncoderForward,
        grad_feature: &Array1<f64>,
        prompt_len: usize,
    ) -> Array2<f64> {
        // d feature / d raw = (I - f f^T) / ||u||
        let f_dot_g = fwd.feature.dot(grad_feature);
        let grad_raw = (grad_feature - &(&fwd.feature * f_dot_g)) / fwd.norm;
        let grad_weighted = self.projection.t().dot(&grad_raw);
        let mut grad = Array2::zeros((prompt_len, self.input_dim()));
        for i in 0..prompt_len {
            let omega = self.omega[i];
            grad.row_mut(i).assign(&(&grad_weighted * omega));
        }
        grad
    }
}
