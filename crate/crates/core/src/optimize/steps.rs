//! Single optimizer updates: plain SGD, AdamW with decoupled decay, and the
//! Langevin variant (SGD plus scaled Gaussian noise).

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::PromptState;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimMethod {
    Sgd,
    Adamw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    Constant,
    LinearDecayToZero,
}

/// Optimizer hyperparameters shared by all training loops.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub method: OptimMethod,
    /// Learning rate.
    pub gamma: f64,
    /// Optimization steps T.
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Langevin noise temperature; zero disables the noise entirely.
    pub langevin_beta: f64,
    pub langevin_schedule: BetaSchedule,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: OptimMethod::Adamw,
            gamma: 0.1,
            steps: 1000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            langevin_beta: 0.0,
            langevin_schedule: BetaSchedule::Constant,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.gamma
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("step count must be at least 1".into()));
        }
        for (name, value) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(value.is_finite() && (0.0..1.0).contains(&value)) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must lie in [0, 1), got {value}"
                )));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(self.langevin_beta.is_finite() && self.langevin_beta >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "langevin beta must be non-negative, got {}",
                self.langevin_beta
            )));
        }
        Ok(())
    }
}

fn check_grad(state: &PromptState, grad: &Array2<f64>) -> Result<()> {
    if grad.dim() != state.p.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("gradient of shape {:?}", state.p.dim()),
            got: format!("{:?}", grad.dim()),
        });
    }
    for ((row, col), &g) in grad.indexed_iter() {
        if !g.is_finite() {
            return Err(Error::NonFiniteGrad { row, col });
        }
    }
    Ok(())
}

/// `P <- P - gamma * grad`, bumping the step counter.
pub fn sgd_step(state: &mut PromptState, grad: &Array2<f64>, gamma: f64) -> Result<()> {
    check_grad(state, grad)?;
    state.p.zip_mut_with(grad, |p, &g| *p -= gamma * g);
    state.step += 1;
    Ok(())
}

/// AdamW with bias correction and decoupled weight decay:
/// `P <- P - gamma * (m_hat / (sqrt(v_hat) + eps) + weight_decay * P)`.
pub fn adamw_step(
    state: &mut PromptState,
    grad: &Array2<f64>,
    cfg: &OptimizerConfig,
) -> Result<()> {
    check_grad(state, grad)?;
    let t = state.step + 1;
    let bias1 = 1.0 - cfg.beta1.powi(t as i32);
    let bias2 = 1.0 - cfg.beta2.powi(t as i32);
    let (rows, cols) = state.p.dim();
    for row in 0..rows {
        for col in 0..cols {
            let g = grad[(row, col)];
            let m = &mut state.m[(row, col)];
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            let v = &mut state.v[(row, col)];
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = state.m[(row, col)] / bias1;
            let v_hat = state.v[(row, col)] / bias2;
            let p = &mut state.p[(row, col)];
            *p -= cfg.gamma * (m_hat / (v_hat.sqrt() + cfg.epsilon) + cfg.weight_decay * *p);
        }
    }
    state.step = t;
    Ok(())
}

/// SGD step plus `sqrt(2 * gamma * beta) * z` Gaussian noise. With beta = 0
/// this is bit-identical to `sgd_step`, and the RNG is not touched.
pub fn langevin_step(
    state: &mut PromptState,
    grad: &Array2<f64>,
    gamma: f64,
    beta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    sgd_step(state, grad, gamma)?;
    if beta > 0.0 {
        let scale = (2.0 * gamma * beta).sqrt();
        for p in state.p.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *p += scale * z;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{gen_table, PromptState};
    use crate::seed::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::RngCore;
    use rand_distr::StandardNormal;

    fn state_at(p: Array2<f64>) -> PromptState {
        PromptState {
            m: Array2::zeros(p.raw_dim()),
            v: Array2::zeros(p.raw_dim()),
            p,
            step: 0,
        }
    }

    #[test]
    fn sgd_moves_against_the_gradient() {
        let mut state = state_at(array![[0.0, 0.0]]);
        sgd_step(&mut state, &array![[1.0, -1.0]], 0.5).unwrap();
        assert_eq!(state.p, array![[-0.5, 0.5]]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn sgd_with_zero_rate_is_a_no_op_on_p() {
        let mut state = state_at(array![[0.3, -0.7]]);
        sgd_step(&mut state, &array![[1.0, 2.0]], 0.0).unwrap();
        assert_eq!(state.p, array![[0.3, -0.7]]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn sgd_steps_do_not_commute_with_summed_grads_through_nonlinear_paths() {
        // two separate steps equal one summed step only because sgd is
        // linear; the guard here checks the step counter and the arithmetic
        // rather than any accidental caching
        let ga = array![[0.3, -0.2]];
        let gb = array![[-1.1, 0.4]];
        let mut two_steps = state_at(array![[1.0, 1.0]]);
        sgd_step(&mut two_steps, &ga, 0.25).unwrap();
        sgd_step(&mut two_steps, &gb, 0.25).unwrap();
        let mut one_step = state_at(array![[1.0, 1.0]]);
        let summed = &ga + &gb;
        sgd_step(&mut one_step, &summed, 0.25).unwrap();
        assert_eq!(two_steps.step, 2);
        assert_eq!(one_step.step, 1);
        for (a, b) in two_steps.p.iter().zip(one_step.p.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn sgd_rejects_shape_mismatch_and_non_finite() {
        let mut state = state_at(array![[0.0, 0.0]]);
        assert!(matches!(
            sgd_step(&mut state, &array![[1.0]], 0.1),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            sgd_step(&mut state, &array![[1.0, f64::NAN]], 0.1),
            Err(Error::NonFiniteGrad { row: 0, col: 1 })
        ));
    }

    #[test]
    fn adamw_two_steps_differ_from_one_summed_step() {
        // the adaptive denominator makes the update non-linear in the
        // gradient, unlike plain sgd
        let cfg = OptimizerConfig {
            gamma: 0.1,
            ..OptimizerConfig::default()
        };
        let mut rng = rng_from_seed(21);
        for _ in 0..20 {
            let ga = Array2::from_shape_fn((1, 3), |_| rng.sample::<f64, _>(StandardNormal));
            let gb = Array2::from_shape_fn((1, 3), |_| rng.sample::<f64, _>(StandardNormal));
            let mut two_steps = state_at(Array2::zeros((1, 3)));
            adamw_step(&mut two_steps, &ga, &cfg).unwrap();
            adamw_step(&mut two_steps, &gb, &cfg).unwrap();
            let mut one_step = state_at(Array2::zeros((1, 3)));
            let summed = &ga + &gb;
            adamw_step(&mut one_step, &summed, &cfg).unwrap();
            assert_ne!(two_steps.p, one_step.p);
        }
    }

    #[test]
    fn adamw_first_step_is_a_signed_step() {
        let cfg = OptimizerConfig {
            gamma: 0.1,
            ..OptimizerConfig::default()
        };
        let mut state = state_at(array![[0.0, 0.0]]);
        adamw_step(&mut state, &array![[1.0, -1.0]], &cfg).unwrap();
        // bias correction makes m_hat/sqrt(v_hat) = sign(g) up to epsilon
        assert!((state.p[(0, 0)] - (-0.1)).abs() <= 0.1 * 1e-6);
        assert!((state.p[(0, 1)] - 0.1).abs() <= 0.1 * 1e-6);
    }

    #[test]
    fn adamw_two_step_trajectory_matches_the_recurrence() {
        let cfg = OptimizerConfig {
            gamma: 0.1,
            ..OptimizerConfig::default()
        };
        let mut state = state_at(array![[0.5]]);
        adamw_step(&mut state, &array![[1.0]], &cfg).unwrap();
        adamw_step(&mut state, &array![[1.0]], &cfg).unwrap();

        // direct evaluation of the recurrences with g = 1 at both steps
        let (b1, b2, eps, g) = (cfg.beta1, cfg.beta2, cfg.epsilon, 1.0_f64);
        let mut p = 0.5_f64;
        let mut m = 0.0_f64;
        let mut v = 0.0_f64;
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            p -= cfg.gamma * (m_hat / (v_hat.sqrt() + eps));
        }
        assert_abs_diff_eq!(state.p[(0, 0)], p, epsilon = 1e-12);
        assert_eq!(state.step, 2);
    }

    #[test]
    fn decoupled_decay_acts_alone_when_grad_is_zero() {
        let cfg = OptimizerConfig {
            gamma: 0.1,
            weight_decay: 0.1,
            ..OptimizerConfig::default()
        };
        let mut state = state_at(array![[2.0, -4.0]]);
        adamw_step(&mut state, &array![[0.0, 0.0]], &cfg).unwrap();
        assert_eq!(state.p, array![[2.0 * (1.0 - 0.01), -4.0 * (1.0 - 0.01)]]);
    }

    #[test]
    fn adamw_zero_grad_zero_decay_leaves_p_unchanged() {
        let cfg = OptimizerConfig::default();
        let mut state = state_at(array![[0.9, -1.2]]);
        adamw_step(&mut state, &Array2::zeros((1, 2)), &cfg).unwrap();
        assert_eq!(state.p, array![[0.9, -1.2]]);
    }

    #[test]
    fn langevin_with_zero_beta_is_sgd_and_leaves_the_rng_untouched() {
        let table = gen_table(4, 2, 1).unwrap();
        let grad = array![[0.2, -0.3], [1.0, 0.4]];
        let mut rng_a = rng_from_seed(9);
        let mut rng_b = rng_from_seed(9);
        let mut langevin = PromptState::from_rows(&table, &[0, 1]).unwrap();
        let mut plain = PromptState::from_rows(&table, &[0, 1]).unwrap();
        langevin_step(&mut langevin, &grad, 0.5, 0.0, &mut rng_a).unwrap();
        sgd_step(&mut plain, &grad, 0.5).unwrap();
        assert_eq!(langevin.p, plain.p);
        // identical next draw proves no rng consumption happened
        assert_eq!(rng_a.next_u64(), rng_b.next_u64());
    }

    #[test]
    fn langevin_noise_is_seeded_and_reproducible() {
        let mut state_a = state_at(Array2::zeros((1, 2)));
        let mut state_b = state_at(Array2::zeros((1, 2)));
        langevin_step(
            &mut state_a,
            &Array2::zeros((1, 2)),
            0.5,
            1.0,
            &mut rng_from_seed(3),
        )
        .unwrap();
        langevin_step(
            &mut state_b,
            &Array2::zeros((1, 2)),
            0.5,
            1.0,
            &mut rng_from_seed(3),
        )
        .unwrap();
        assert_eq!(state_a.p, state_b.p);
        assert!(state_a.p.iter().any(|&x| x != 0.0));
        // scale is sqrt(2 * 0.5 * 1) = 1: the perturbation is the raw draw
        let mut rng = rng_from_seed(3);
        let z0: f64 = rng.sample(StandardNormal);
        assert_eq!(state_a.p[(0, 0)], z0);
    }

    #[test]
    fn langevin_perturbation_variance_matches_two_gamma_beta() {
        let (gamma, beta) = (0.2, 0.7);
        let mut rng = rng_from_seed(11);
        let n = 10_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let mut state = state_at(Array2::zeros((1, 1)));
            langevin_step(&mut state, &Array2::zeros((1, 1)), gamma, beta, &mut rng).unwrap();
            let delta = state.p[(0, 0)];
            sum += delta;
            sum_sq += delta * delta;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let expected = 2.0 * gamma * beta;
        assert!(
            (var - expected).abs() / expected < 0.05,
            "variance {var} vs expected {expected}"
        );
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let good = OptimizerConfig::default();
        assert!(good.validate().is_ok());
        for bad in [
            OptimizerConfig {
                gamma: 0.0,
                ..good.clone()
            },
            OptimizerConfig {
                steps: 0,
                ..good.clone()
            },
            OptimizerConfig {
                beta1: 1.0,
                ..good.clone()
            },
            OptimizerConfig {
                epsilon: 0.0,
                ..good.clone()
            },
            OptimizerConfig {
                weight_decay: -0.1,
                ..good.clone()
            },
            OptimizerConfig {
                langevin_beta: -1.0,
                ..good.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
