//! Central finite-difference certification of the analytic gradients.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;

use crate::embedding::{gen_table, HardPrompt};
use crate::error::{Error, Result};
use crate::objective::{
    BigramLm, ClassifyTask, LabeledExample, Objective, PromptObjective, ToyEncoder,
};
use crate::seed::{derive_seed, rng_from_seed};

/// Maximum relative error between the analytic gradient of `f` at `point`
/// and central finite differences with step `h`.
///
/// The relative error of one entry uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, point: &Array2<f64>, h: f64) -> Result<f64>
where
    F: Fn(&Array2<f64>) -> Result<(f64, Array2<f64>)>,
{
    let (_, analytic) = f(point)?;
    if analytic.dim() != point.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("gradient of shape {:?}", point.dim()),
            got: format!("{:?}", analytic.dim()),
        });
    }
    let mut work = point.clone();
    let mut max_rel: f64 = 0.0;
    for idx in 0..point.len() {
        let (row, col) = (idx / point.ncols(), idx % point.ncols());
        let center = point[(row, col)];
        work[(row, col)] = center + h;
        let plus = f(&work)?.0;
        work[(row, col)] = center - h;
        let minus = f(&work)?.0;
        work[(row, col)] = center;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[(row, col)];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

/// Finite-difference check of an objective at `point` with the ids held
/// fixed. Perturbed evaluations go through the gradient-free loss path.
pub fn finite_diff_check_objective(
    objective: &dyn PromptObjective,
    point: &Array2<f64>,
    ids: Option<&HardPrompt>,
    h: f64,
) -> Result<f64> {
    let (_, analytic) = objective.evaluate(point, ids)?;
    let mut work = point.clone();
    let mut max_rel: f64 = 0.0;
    for idx in 0..point.len() {
        let (row, col) = (idx / point.ncols(), idx % point.ncols());
        let center = point[(row, col)];
        work[(row, col)] = center + h;
        let plus = objective.loss_only(&work, ids)?;
        work[(row, col)] = center - h;
        let minus = objective.loss_only(&work, ids)?;
        work[(row, col)] = center;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[(row, col)];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

/// Per-kind worst-case finite-difference error over seeded random instances.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// (objective kind, worst relative error over all instances)
    pub per_kind: Vec<(String, f64)>,
    pub tolerance: f64,
    pub instances: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.per_kind.iter().all(|(_, err)| *err < self.tolerance)
    }
}

const KINDS: [&str; 5] = ["invert", "distill", "classify", "fluency", "combined"];

/// Runs `instances` seeded random instances per objective kind and records
/// the worst finite-difference error of each.
pub fn certify_gradients(
    instances: usize,
    tolerance: f64,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut per_kind = Vec::with_capacity(KINDS.len());
    for kind in KINDS {
        let mut worst: f64 = 0.0;
        for instance in 0..instances {
            let err = check_instance(kind, derive_seed(seed, &[kind, &instance.to_string()]), h)?;
            worst = worst.max(err);
        }
        per_kind.push((kind.to_string(), worst));
    }
    Ok(GradCheckReport {
        per_kind,
        tolerance,
        instances,
    })
}

fn check_instance(kind: &str, seed: u64, h: f64) -> Result<f64> {
    let mut rng = rng_from_seed(seed);
    let dim = rng.random_range(2..=5);
    let feature_dim = rng.random_range(2..=5);
    let vocab = rng.random_range(6..=12);
    let prompt_len = rng.random_range(1..=4);
    let table = Arc::new(gen_table(vocab, dim, derive_seed(seed, &["table"]))?);
    let encoder = ToyEncoder::generate(feature_dim, dim, 8, derive_seed(seed, &["encoder"]))?;
    let prompt = Array2::from_shape_fn((prompt_len, dim), |_| rng.sample::<f64, _>(StandardNormal));
    let ids: Vec<usize> = (0..prompt_len)
        .map(|_| rng.random_range(0..vocab))
        .collect();
    let ids = HardPrompt::new(ids, &table)?;

    let objective = match kind {
        "invert" => {
            let target = random_unit(feature_dim, &mut rng);
            Objective::invert(encoder, target)?
        }
        "distill" => {
            let target_len = rng.random_range(1..=6);
            let target_ids: Vec<usize> = (0..target_len)
                .map(|_| rng.random_range(0..vocab))
                .collect();
            Objective::distill(encoder, HardPrompt::new(target_ids, &table)?, &table)?
        }
        "classify" => Objective::classify(random_classify_task(dim, &mut rng)?),
        "fluency" => {
            let lm = BigramLm::generate(Arc::clone(&table), derive_seed(seed, &["lm"]));
            let target = random_unit(feature_dim, &mut rng);
            Objective::invert(encoder, target)?.with_fluency(lm, 1.0)?
        }
        "combined" => {
            let lm = BigramLm::generate(Arc::clone(&table), derive_seed(seed, &["lm"]));
            let lambda = 0.05 + 0.9 * rng.random_range(0..1000) as f64 / 1000.0;
            let target = random_unit(feature_dim, &mut rng);
            Objective::invert(encoder, target)?.with_fluency(lm, lambda)?
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown objective kind {other}"
            )))
        }
    };
    finite_diff_check_objective(&objective, &prompt, Some(&ids), h)
}

fn random_unit(len: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Array1<f64> {
    loop {
        let v = Array1::from_shape_fn(len, |_| rng.sample::<f64, _>(StandardNormal));
        let norm = v.dot(&v).sqrt();
        if norm > 1e-6 {
            return v / norm;
        }
    }
}

fn random_classify_task(dim: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Result<ClassifyTask> {
    let classes = 3;
    let hidden_dim = 5;
    let hidden = Array2::from_shape_fn((hidden_dim, 2 * dim), |_| {
        rng.sample::<f64, _>(StandardNormal)
    });
    let output = Array2::from_shape_fn((classes, hidden_dim), |_| {
        rng.sample::<f64, _>(StandardNormal)
    });
    let examples = (0..classes)
        .map(|label| LabeledExample {
            inputs: Array2::from_shape_fn((2, dim), |_| rng.sample::<f64, _>(StandardNormal)),
            label,
        })
        .collect();
    ClassifyTask::new(hidden, output, classes, examples)
}
