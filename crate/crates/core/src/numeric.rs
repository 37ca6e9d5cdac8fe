//! Small numeric helpers shared by the objectives and the harness.

use ndarray::ArrayView1;

use crate::error::{Error, Result};

/// Norm floor below which vectors are treated as degenerate.
pub const NORM_FLOOR: f64 = 1e-12;

/// Cosine similarity of two vectors, clamped into [-1, 1].
///
/// The denominator is computed as `sqrt(dot(a,a) * dot(b,b))` with a single
/// square root. In IEEE-754 binary arithmetic `sqrt(q * q) == q`, so two
/// bitwise-identical inputs score exactly 1.0; planted optima can therefore
/// reach a loss of exactly zero.
pub fn cosine_similarity(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("vector of length {}", a.len()),
            got: format!("vector of length {}", b.len()),
        });
    }
    let qa = a.dot(&a);
    let qb = b.dot(&b);
    let floor_sq = NORM_FLOOR * NORM_FLOOR;
    if qa <= floor_sq {
        return Err(Error::DegenerateEncoding { norm: qa.sqrt() });
    }
    if qb <= floor_sq {
        return Err(Error::DegenerateEncoding { norm: qb.sqrt() });
    }
    Ok((a.dot(&b) / (qa * qb).sqrt()).clamp(-1.0, 1.0))
}

/// log(sum(exp(x))) with max-shift stabilization.
///
/// The result is never below the maximum entry, so next-token negative
/// log-likelihoods derived from it are never negative.
pub fn logsumexp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    max + sum.ln()
}

/// Softmax probabilities of the logits, written into a fresh vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Reduces the items with a balanced binary tree of `combine` calls.
///
/// Used for batch averaging: with a balanced tree, a batch of 2^k identical
/// summands adds exactly, so broadcasting one example b times reproduces the
/// single-example value bit for bit.
pub fn pairwise_reduce<T>(mut items: Vec<T>, combine: impl Fn(T, T) -> T) -> Option<T> {
    if items.is_empty() {
        return None;
    }
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut iter = items.into_iter();
        while let Some(a) = iter.next() {
            match iter.next() {
                Some(b) => next.push(combine(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop()
}

/// Mean of a slice via pairwise summation.
pub fn pairwise_mean(values: &[f64]) -> Option<f64> {
    let n = values.len();
    pairwise_reduce(values.to_vec(), |a, b| a + b).map(|s| s / n as f64)
}
