//! Exhaustive search over every allowed token tuple: the ground-truth
//! optimum for instances small enough to enumerate.

use ndarray::Array2;

use crate::embedding::{EmbeddingTable, HardPrompt};
use crate::error::{Error, Result};
use crate::objective::PromptObjective;

/// Upper bound on the number of tuples the oracle will enumerate.
pub const SEARCH_SPACE_GUARD: u64 = 10_000_000;

/// Evaluates the hard loss of every allowed token tuple of the given length
/// and returns the global minimizer. Ties resolve to the lexicographically
/// lowest tuple. Loss values go through the same evaluation path as the
/// training loops, so oracle gaps are non-negative by construction.
pub fn exhaustive_search(
    objective: &dyn PromptObjective,
    table: &EmbeddingTable,
    prompt_len: usize,
    mask: Option<&[bool]>,
) -> Result<(HardPrompt, f64)> {
    if prompt_len == 0 {
        return Err(Error::InvalidLength(
            "prompt needs at least one token".into(),
        ));
    }
    if let Some(mask) = mask {
        if mask.len() != table.vocab_size() {
            return Err(Error::ShapeMismatch {
                expected: format!("mask of length {}", table.vocab_size()),
                got: format!("mask of length {}", mask.len()),
            });
        }
    }
    let allowed: Vec<usize> = (0..table.vocab_size())
        .filter(|&id| mask.is_none_or(|m| m[id]))
        .collect();
    if allowed.is_empty() {
        return Err(Error::EmptyMask);
    }
    let total = (allowed.len() as u128).checked_pow(prompt_len as u32);
    if total.is_none_or(|t| t > u128::from(SEARCH_SPACE_GUARD)) {
        return Err(Error::SearchSpaceTooLarge {
            vocab: allowed.len(),
            len: prompt_len,
            guard: SEARCH_SPACE_GUARD,
        });
    }

    let mut indices = vec![0usize; prompt_len]; // odometer over `allowed`
    let mut candidate = Array2::zeros((prompt_len, table.dim()));
    let mut best: Option<(f64, HardPrompt)> = None;
    'search: loop {
        for (row, &slot) in indices.iter().enumerate() {
            candidate.row_mut(row).assign(&table.row(allowed[slot]));
        }
        let ids: Vec<usize> = indices.iter().map(|&slot| allowed[slot]).collect();
        let tokens = HardPrompt::new(ids, table)?;
        let loss = objective.loss_only(&candidate, Some(&tokens))?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step: 0, loss });
        }
        // strict < keeps the lexicographically earliest minimizer
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, tokens));
        }
        // advance the odometer, last position fastest
        let mut pos = prompt_len;
        loop {
            if pos == 0 {
                break 'search;
            }
            pos -= 1;
            indices[pos] += 1;
            if indices[pos] < allowed.len() {
                break;
            }
            indices[pos] = 0;
        }
    }
    let (loss, tokens) = best.expect("at least one tuple was evaluated");
    Ok((tokens, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::gen_table;
    use crate::objective::{Objective, ToyEncoder};
    use crate::project::embed_tokens;
    use crate::seed::rng_from_seed;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn aligned_target_is_found_on_the_axis_table() {
        let table = crate::embedding::EmbeddingTable::new(
            vec!["e".into(), "n".into(), "w".into(), "s".into()],
            array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]],
        )
        .unwrap();
        let encoder = ToyEncoder::from_parts(array![[1.0, 0.0], [0.0, 1.0]], array![1.0]).unwrap();
        let objective = Objective::invert(encoder, array![0.0, 1.0]).unwrap();
        let (tokens, loss) = exhaustive_search(&objective, &table, 1, None).unwrap();
        assert_eq!(tokens.ids(), &[1]);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn oracle_dominates_random_tuples() {
        let table = gen_table(16, 4, 51).unwrap();
        let encoder = ToyEncoder::generate(6, 4, 8, 52).unwrap();
        let mut rng = rng_from_seed(53);
        let target =
            ndarray::Array1::from_shape_fn(6, |_| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let objective = Objective::invert(encoder, target).unwrap();
        let (_, best_loss) = exhaustive_search(&objective, &table, 2, None).unwrap();
        for _ in 0..1000 {
            let ids: Vec<usize> = (0..2).map(|_| rng.random_range(0..16)).collect();
            let tokens = HardPrompt::new(ids, &table).unwrap();
            let embedded = embed_tokens(&tokens, &table).unwrap();
            let loss = objective.loss_only(&embedded, Some(&tokens)).unwrap();
            assert!(best_loss <= loss);
        }
    }

    #[test]
    fn masking_the_optimum_strictly_raises_the_loss() {
        let table = gen_table(12, 4, 54).unwrap();
        let encoder = ToyEncoder::generate(6, 4, 8, 55).unwrap();
        let mut rng = rng_from_seed(56);
        let target =
            ndarray::Array1::from_shape_fn(6, |_| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let objective = Objective::invert(encoder, target).unwrap();
        let (best_tokens, best_loss) = exhaustive_search(&objective, &table, 2, None).unwrap();
        let mut mask = vec![true; 12];
        for &id in best_tokens.ids() {
            mask[id] = false;
        }
        let (masked_tokens, masked_loss) =
            exhaustive_search(&objective, &table, 2, Some(&mask)).unwrap();
        assert!(masked_loss > best_loss);
        assert!(masked_tokens.ids().iter().all(|&id| mask[id]));
    }

    #[test]
    fn guard_rejects_oversized_search_spaces() {
        let table = gen_table(64, 4, 57).unwrap();
        let encoder = ToyEncoder::generate(6, 4, 16, 58).unwrap();
        let objective = Objective::invert(encoder, ndarray::Array1::ones(6)).unwrap();
        assert!(matches!(
            exhaustive_search(&objective, &table, 8, None),
            Err(Error::SearchSpaceTooLarge { .. })
        ));
    }
}
