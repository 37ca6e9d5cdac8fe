//! Nearest-neighbor projection of continuous embeddings onto vocabulary rows.
//!
//! Two paths compute the same argmin: a blocked kernel with cached row norms
//! (the production path) and a plain double-loop scan (the reference oracle,
//! kept for equivalence testing). Both use identical per-row arithmetic and
//! break ties toward the lowest token id, so their results agree bit for bit
//! on every input regardless of blocking.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingTable, HardPrompt};
use crate::error::{Error, Result};
use crate::numeric::NORM_FLOOR;

const BLOCK: usize = 64;

/// Distance convention used by the projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Argmin of euclidean distance. The default.
    Euclidean,
    /// Argmax of cosine similarity; angle-calibrated embedding spaces.
    Cosine,
}

/// Metric choice plus an optional allowed-token mask (`true` = projectable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub metric: Metric,
    #[serde(default)]
    pub allowed: Option<Vec<bool>>,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Euclidean,
            allowed: None,
        }
    }
}

impl ProjectionConfig {
    pub fn new(metric: Metric) -> Self {
        Self {
            metric,
            allowed: None,
        }
    }

    /// Attaches an allowed-token mask. At least one entry must be true.
    pub fn with_mask(metric: Metric, allowed: Vec<bool>) -> Result<Self> {
        if !allowed.iter().any(|&a| a) {
            return Err(Error::EmptyMask);
        }
        Ok(Self {
            metric,
            allowed: Some(allowed),
        })
    }

    pub fn allows(&self, id: usize) -> bool {
        match &self.allowed {
            Some(mask) => mask.get(id).copied().unwrap_or(false),
            None => true,
        }
    }

    fn validate_for(&self, table: &EmbeddingTable) -> Result<()> {
        if let Some(mask) = &self.allowed {
            if mask.len() != table.vocab_size() {
                return Err(Error::ShapeMismatch {
                    expected: format!("mask of length {}", table.vocab_size()),
                    got: format!("mask of length {}", mask.len()),
                });
            }
            if !mask.iter().any(|&a| a) {
                return Err(Error::EmptyMask);
            }
        }
        Ok(())
    }
}

fn check_finite(query: ArrayView1<'_, f64>, row: usize) -> Result<()> {
    for (col, &value) in query.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFiniteEntry { row, col });
        }
    }
    Ok(())
}

/// Reusable projection kernel over one table. Constructing it validates the
/// mask and, under the cosine metric, every allowed row norm; `project_all`
/// amortizes that work and the cached norms across the prompt rows.
struct Projector<'a> {
    table: &'a EmbeddingTable,
    cfg: &'a ProjectionConfig,
    row_norms: Vec<f64>,
}

impl<'a> Projector<'a> {
    fn new(table: &'a EmbeddingTable, cfg: &'a ProjectionConfig) -> Result<Self> {
        cfg.validate_for(table)?;
        let mut row_norms = Vec::new();
        if cfg.metric == Metric::Cosine {
            row_norms.reserve(table.vocab_size());
            for id in 0..table.vocab_size() {
                let row = table.row(id);
                let norm = row.dot(&row).sqrt();
                if cfg.allows(id) && norm <= NORM_FLOOR {
                    return Err(Error::ZeroNormRow { row: id, norm });
                }
                row_norms.push(norm);
            }
        }
        Ok(Self {
            table,
            cfg,
            row_norms,
        })
    }

    fn project(&self, query: ArrayView1<'_, f64>, query_index: usize) -> Result<usize> {
        if query.len() != self.table.dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("query of length {}", self.table.dim()),
                got: format!("query of length {}", query.len()),
            });
        }
        check_finite(query, query_index)?;
        let query_norm = match self.cfg.metric {
            Metric::Euclidean => 0.0,
            Metric::Cosine => {
                let norm = query.dot(&query).sqrt();
                if norm <= NORM_FLOOR {
                    return Err(Error::ZeroNormQuery { norm });
                }
                norm
            }
        };

        let vocab = self.table.vocab_size();
        let mut best: Option<(f64, usize)> = None;
        let mut scores = [0.0_f64; BLOCK];
        let mut start = 0;
        while start < vocab {
            let end = (start + BLOCK).min(vocab);
            for id in start..end {
                if !self.cfg.allows(id) {
                    scores[id - start] = f64::INFINITY;
                    continue;
                }
                let row = self.table.row(id);
                scores[id - start] = match self.cfg.metric {
                    Metric::Euclidean => squared_distance(query, row),
                    Metric::Cosine => -(query.dot(&row) / (query_norm * self.row_norms[id])),
                };
            }
            for id in start..end {
                let score = scores[id - start];
                if score.is_infinite() {
                    continue;
                }
                // strict `<` keeps the lowest id on ties
                if best.is_none_or(|(b, _)| score < b) {
                    best = Some((score, id));
                }
            }
            start = end;
        }
        best.map(|(_, id)| id).ok_or(Error::EmptyMask)
    }
}

fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let mut sum = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let diff = x - y;
        sum += diff * diff;
    }
    sum
}

/// Projects one embedding vector to the id of its nearest allowed row.
pub fn project_one(
    query: ArrayView1<'_, f64>,
    table: &EmbeddingTable,
    cfg: &ProjectionConfig,
) -> Result<usize> {
    Projector::new(table, cfg)?.project(query, 0)
}

/// Reference implementation: a plain double loop. Slow and obviously
/// correct; the blocked kernel must match it bit for bit.
pub fn project_one_naive(
    query: ArrayView1<'_, f64>,
    table: &EmbeddingTable,
    cfg: &ProjectionConfig,
) -> Result<usize> {
    cfg.validate_for(table)?;
    if query.len() != table.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("query of length {}", table.dim()),
            got: format!("query of length {}", query.len()),
        });
    }
    check_finite(query, 0)?;
    let query_norm = match cfg.metric {
        Metric::Euclidean => 0.0,
        Metric::Cosine => {
            let norm = query.dot(&query).sqrt();
            if norm <= NORM_FLOOR {
                return Err(Error::ZeroNormQuery { norm });
            }
            norm
        }
    };
    let mut best: Option<(f64, usize)> = None;
    for id in 0..table.vocab_size() {
        if !cfg.allows(id) {
            continue;
        }
        let row = table.row(id);
        let score = match cfg.metric {
            Metric::Euclidean => {
                let mut sum = 0.0;
                for (&x, &y) in query.iter().zip(row.iter()) {
                    let diff = x - y;
                    sum += diff * diff;
                }
                sum
            }
            Metric::Cosine => {
                let row_norm = row.dot(&row).sqrt();
                if row_norm <= NORM_FLOOR {
                    return Err(Error::ZeroNormRow {
                        row: id,
                        norm: row_norm,
                    });
                }
                -(query.dot(&row) / (query_norm * row_norm))
            }
        };
        if best.is_none_or(|(b, _)| score < b) {
            best = Some((score, id));
        }
    }
    best.map(|(_, id)| id).ok_or(Error::EmptyMask)
}

/// Projects every row of the iterate; result length equals the row count.
pub fn project_all(
    iterate: &Array2<f64>,
    table: &EmbeddingTable,
    cfg: &ProjectionConfig,
) -> Result<HardPrompt> {
    let projector = Projector::new(table, cfg)?;
    let mut ids = Vec::with_capacity(iterate.nrows());
    for (i, row) in iterate.rows().into_iter().enumerate() {
        ids.push(projector.project(row, i)?);
    }
    HardPrompt::new(ids, table)
}

/// Materializes the prompt's rows: row i of the result is an exact copy of
/// the table row named by token i.
pub fn embed_tokens(prompt: &HardPrompt, table: &EmbeddingTable) -> Result<Array2<f64>> {
    if prompt.vocab_size() != table.vocab_size() {
        return Err(Error::TableMismatch {
            left: prompt.vocab_size(),
            right: table.vocab_size(),
        });
    }
    let mut out = Array2::zeros((prompt.len(), table.dim()));
    for (i, &id) in prompt.ids().iter().enumerate() {
        out.row_mut(i).assign(&table.row(id));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::gen_table;
    use crate::seed::rng_from_seed;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn table_from(matrix: Array2<f64>) -> EmbeddingTable {
        let tokens = (0..matrix.nrows()).map(|i| format!("t{i}")).collect();
        EmbeddingTable::new(tokens, matrix).unwrap()
    }

    #[test]
    fn exact_row_projects_to_itself() {
        let table = table_from(array![[1.0, 0.0], [0.0, 1.0]]);
        let cfg = ProjectionConfig::default();
        let q = array![1.0, 0.0];
        assert_eq!(project_one(q.view(), &table, &cfg).unwrap(), 0);
    }

    #[test]
    fn euclidean_tie_goes_to_lowest_id() {
        let table = table_from(array![[1.0, 0.0], [0.0, 1.0]]);
        let cfg = ProjectionConfig::default();
        // both squared distances are 0.52
        let q = array![0.6, 0.6];
        assert_eq!(project_one(q.view(), &table, &cfg).unwrap(), 0);
        assert_eq!(project_one_naive(q.view(), &table, &cfg).unwrap(), 0);
    }

    #[test]
    fn brute_force_derived_case() {
        let table = table_from(array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.5, 0.5]]);
        let cfg = ProjectionConfig::default();
        let q = array![0.9, 0.2];
        // brute-force scan: squared distances 0.05, 1.45, 3.65, 0.25
        assert_eq!(project_one_naive(q.view(), &table, &cfg).unwrap(), 0);
        assert_eq!(project_one(q.view(), &table, &cfg).unwrap(), 0);
    }

    #[test]
    fn project_all_recovers_copied_rows() {
        let table = gen_table(8, 3, 1).unwrap();
        let cfg = ProjectionConfig::default();
        let prompt = HardPrompt::new(vec![3, 1], &table).unwrap();
        let embedded = embed_tokens(&prompt, &table).unwrap();
        assert_eq!(project_all(&embedded, &table, &cfg).unwrap().ids(), &[3, 1]);
    }

    #[test]
    fn mask_forces_the_only_allowed_token() {
        let table = gen_table(8, 3, 2).unwrap();
        let mut mask = vec![false; 8];
        mask[5] = true;
        let cfg = ProjectionConfig::with_mask(Metric::Euclidean, mask).unwrap();
        let mut rng = rng_from_seed(3);
        let p = Array2::from_shape_fn((4, 3), |_| rng.sample::<f64, _>(StandardNormal));
        assert_eq!(project_all(&p, &table, &cfg).unwrap().ids(), &[5, 5, 5, 5]);
    }

    #[test]
    fn empty_mask_is_rejected() {
        assert!(matches!(
            ProjectionConfig::with_mask(Metric::Euclidean, vec![false; 4]),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn optimized_equals_naive_on_random_inputs() {
        let mut rng = rng_from_seed(17);
        for case in 0..200 {
            let vocab = 2 + (case % 67);
            let dim = 1 + (case % 5);
            let table = gen_table(vocab, dim, 1000 + case as u64).unwrap();
            let metric = if case % 2 == 0 {
                Metric::Euclidean
            } else {
                Metric::Cosine
            };
            let cfg = if case % 3 == 0 {
                let mut mask: Vec<bool> = (0..vocab).map(|_| rng.random_range(0..3) > 0).collect();
                mask[rng.random_range(0..vocab)] = true;
                ProjectionConfig::with_mask(metric, mask).unwrap()
            } else {
                ProjectionConfig::new(metric)
            };
            let q = ndarray::Array1::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal));
            assert_eq!(
                project_one(q.view(), &table, &cfg).unwrap(),
                project_one_naive(q.view(), &table, &cfg).unwrap()
            );
        }
    }

    #[test]
    fn duplicated_rows_tie_break_identically() {
        // rows 1 and 3 are identical: both paths must report id 1
        let table = table_from(array![[1.0, 0.0], [0.2, 0.3], [0.0, 1.0], [0.2, 0.3]]);
        for metric in [Metric::Euclidean, Metric::Cosine] {
            let cfg = ProjectionConfig::new(metric);
            let q = array![0.21, 0.29];
            assert_eq!(project_one(q.view(), &table, &cfg).unwrap(), 1);
            assert_eq!(project_one_naive(q.view(), &table, &cfg).unwrap(), 1);
        }
    }

    #[test]
    fn cosine_is_scale_invariant() {
        let table = gen_table(32, 6, 9).unwrap();
        let cfg = ProjectionConfig::new(Metric::Cosine);
        let mut rng = rng_from_seed(23);
        for _ in 0..50 {
            let q = ndarray::Array1::from_shape_fn(6, |_| rng.sample::<f64, _>(StandardNormal));
            let base = project_one(q.view(), &table, &cfg).unwrap();
            for scale in [1e-3, 1.0, 1e3] {
                let scaled = q.mapv(|x| x * scale);
                assert_eq!(project_one(scaled.view(), &table, &cfg).unwrap(), base);
            }
        }
    }

    #[test]
    fn cosine_rejects_zero_norm_query() {
        let table = gen_table(4, 3, 4).unwrap();
        let cfg = ProjectionConfig::new(Metric::Cosine);
        let q = array![0.0, 0.0, 1e-13];
        assert!(matches!(
            project_one(q.view(), &table, &cfg),
            Err(Error::ZeroNormQuery { .. })
        ));
    }

    #[test]
    fn cosine_rejects_zero_norm_allowed_row() {
        let table = table_from(array![[0.0, 0.0], [0.0, 1.0]]);
        let cfg = ProjectionConfig::new(Metric::Cosine);
        let q = array![1.0, 1.0];
        assert!(matches!(
            project_one(q.view(), &table, &cfg),
            Err(Error::ZeroNormRow { row: 0, .. })
        ));
        // masking the degenerate row out makes it projectable again
        let cfg = ProjectionConfig::with_mask(Metric::Cosine, vec![false, true]).unwrap();
        assert_eq!(project_one(q.view(), &table, &cfg).unwrap(), 1);
    }

    #[test]
    fn masked_result_is_always_allowed() {
        let table = gen_table(16, 4, 5).unwrap();
        let mut rng = rng_from_seed(31);
        for _ in 0..50 {
            let mut mask: Vec<bool> = (0..16).map(|_| rng.random_range(0..2) == 0).collect();
            mask[7] = true;
            let cfg = ProjectionConfig::with_mask(Metric::Euclidean, mask.clone()).unwrap();
            let q = ndarray::Array1::from_shape_fn(4, |_| rng.sample::<f64, _>(StandardNormal));
            let id = project_one(q.view(), &table, &cfg).unwrap();
            assert!(mask[id]);
        }
    }

    #[test]
    fn embed_then_project_is_identity_for_distinct_rows() {
        let cfg = ProjectionConfig::default();
        let mut rng = rng_from_seed(41);
        for case in 0..100 {
            let table = gen_table(12, 4, 2000 + case).unwrap();
            let ids: Vec<usize> = (0..3).map(|_| rng.random_range(0..12)).collect();
            let prompt = HardPrompt::new(ids.clone(), &table).unwrap();
            let embedded = embed_tokens(&prompt, &table).unwrap();
            assert_eq!(
                project_all(&embedded, &table, &cfg).unwrap().ids(),
                &ids[..]
            );
        }
    }

    #[test]
    fn concat_then_embed_equals_stacked_embeds() {
        let table = gen_table(10, 3, 6).unwrap();
        let a = HardPrompt::new(vec![1, 2], &table).unwrap();
        let b = HardPrompt::new(vec![7], &table).unwrap();
        let joined = a.concat(&b).unwrap();
        let stacked = embed_tokens(&joined, &table).unwrap();
        let ea = embed_tokens(&a, &table).unwrap();
        let eb = embed_tokens(&b, &table).unwrap();
        assert_eq!(stacked.row(0), ea.row(0));
        assert_eq!(stacked.row(1), ea.row(1));
        assert_eq!(stacked.row(2), eb.row(0));
    }
}
