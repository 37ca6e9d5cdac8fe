//! Vocabulary embedding tables, the `EMB1` on-disk format, prompt
//! initialization, and token-sequence utilities.
//!
//! File layout (`EMB1`): bytes 0-3 are the ASCII magic `EMB1`, bytes 4-7 the
//! vocabulary size V as little-endian u32, bytes 8-11 the embedding dimension
//! d, followed by V*d little-endian IEEE-754 f32 values in row-major order.
//! A companion UTF-8 text file holds one token per line, line i naming row i.
//! Values are widened to f64 in memory; the widening is exact, so a
//! load/save cycle is byte-identical.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

const MAGIC: &[u8; 4] = b"EMB1";
const HEADER_LEN: usize = 12;

/// A vocabulary of token strings with one embedding row per token.
///
/// Immutable after construction and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    tokens: Vec<String>,
    matrix: Array2<f64>,
}

impl EmbeddingTable {
    /// Builds a table, validating every invariant: at least two rows, at
    /// least one column, finite entries, unique tokens, and one token per row.
    pub fn new(tokens: Vec<String>, matrix: Array2<f64>) -> Result<Self> {
        let (v, d) = matrix.dim();
        if v < 2 || d < 1 {
            return Err(Error::InvalidDims(format!(
                "need V >= 2 and d >= 1, got V={v}, d={d}"
            )));
        }
        if tokens.len() != v {
            return Err(Error::TokenCountMismatch {
                expected: v,
                found: tokens.len(),
            });
        }
        for ((row, col), &value) in matrix.indexed_iter() {
            if !value.is_finite() {
                return Err(Error::NonFiniteEntry { row, col });
            }
        }
        let mut seen: HashMap<&str, usize> = HashMap::with_capacity(v);
        for (i, token) in tokens.iter().enumerate() {
            if let Some(&first) = seen.get(token.as_str()) {
                return Err(Error::DuplicateToken {
                    token: token.clone(),
                    first,
                    second: i,
                });
            }
            seen.insert(token, i);
        }
        Ok(Self { tokens, matrix })
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn row(&self, id: usize) -> ArrayView1<'_, f64> {
        self.matrix.row(id)
    }
}

/// Generates a table with entries drawn i.i.d. from N(0, 1/d) and synthetic
/// token names `t0..t{V-1}`. Deterministic in the seed.
pub fn gen_table(vocab: usize, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    if vocab < 2 || dim < 1 {
        return Err(Error::InvalidDims(format!(
            "need V >= 2 and d >= 1, got V={vocab}, d={dim}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let scale = (1.0 / dim as f64).sqrt();
    let matrix = Array2::from_shape_fn((vocab, dim), |_| {
        let z: f64 = rng.sample(StandardNormal);
        z * scale
    });
    let tokens = (0..vocab).map(|i| format!("t{i}")).collect();
    EmbeddingTable::new(tokens, matrix)
}

/// Path of the companion token file: same stem, `tokens` extension.
pub fn token_path(path: &Path) -> PathBuf {
    path.with_extension("tokens")
}

/// Reads an `EMB1` file and its companion token file.
pub fn load_table(path: &Path) -> Result<EmbeddingTable> {
    let bytes = std::fs::read(path).map_err(|source| Error::IoFailure {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: format!("file is {} bytes, header needs {HEADER_LEN}", bytes.len()),
        });
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: format!("bad magic {:?}", &bytes[0..4]),
        });
    }
    let vocab = LittleEndian::read_u32(&bytes[4..8]) as usize;
    let dim = LittleEndian::read_u32(&bytes[8..12]) as usize;
    let expected = HEADER_LEN
        + vocab
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or(Error::MalformedHeader {
                path: path.to_path_buf(),
                detail: format!("dimensions {vocab}x{dim} overflow"),
            })?;
    if bytes.len() != expected {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: format!("payload is {} bytes, expected {expected}", bytes.len()),
        });
    }
    let mut floats = vec![0.0_f32; vocab * dim];
    LittleEndian::read_f32_into(&bytes[HEADER_LEN..], &mut floats);
    let matrix = Array2::from_shape_vec((vocab, dim), floats.into_iter().map(f64::from).collect())
        .expect("shape matches the validated payload length");

    let tokens_file = token_path(path);
    let text = std::fs::read_to_string(&tokens_file).map_err(|source| Error::IoFailure {
        path: tokens_file.clone(),
        source,
    })?;
    let tokens: Vec<String> = text.lines().map(str::to_owned).collect();
    if tokens.len() != vocab {
        return Err(Error::TokenCountMismatch {
            expected: vocab,
            found: tokens.len(),
        });
    }
    EmbeddingTable::new(tokens, matrix)
}

/// Writes the table in `EMB1` format plus the companion token file.
/// Storage is 32-bit; a following `load_table` widens exactly, so
/// save -> load -> save is byte-identical.
pub fn save_table(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let vocab = table.vocab_size();
    let dim = table.dim();
    let mut bytes = Vec::with_capacity(HEADER_LEN + vocab * dim * 4);
    bytes.extend_from_slice(MAGIC);
    let mut buf4 = [0u8; 4];
    LittleEndian::write_u32(&mut buf4, vocab as u32);
    bytes.extend_from_slice(&buf4);
    LittleEndian::write_u32(&mut buf4, dim as u32);
    bytes.extend_from_slice(&buf4);
    for &value in table.matrix.iter() {
        LittleEndian::write_f32(&mut buf4, value as f32);
        bytes.extend_from_slice(&buf4);
    }
    write_all(path, &bytes)?;

    let tokens_file = token_path(path);
    let mut text = String::new();
    for token in &table.tokens {
        text.push_str(token);
        text.push('\n');
    }
    write_all(&tokens_file, text.as_bytes())
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|source| Error::IoFailure {
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(bytes).map_err(|source| Error::IoFailure {
        path: path.to_path_buf(),
        source,
    })
}

/// A projected prompt: a sequence of token ids into one table.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HardPrompt {
    ids: Vec<usize>,
    vocab_size: usize,
}

impl HardPrompt {
    pub fn new(ids: Vec<usize>, table: &EmbeddingTable) -> Result<Self> {
        Self::with_vocab(ids, table.vocab_size())
    }

    pub fn with_vocab(ids: Vec<usize>, vocab_size: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidLength(
                "prompt needs at least one token".into(),
            ));
        }
        for &id in &ids {
            if id >= vocab_size {
                return Err(Error::InvalidTokenId {
                    id,
                    vocab: vocab_size,
                });
            }
        }
        Ok(Self { ids, vocab_size })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Concatenation: `self`'s tokens followed by `other`'s.
    pub fn concat(&self, other: &HardPrompt) -> Result<HardPrompt> {
        if self.vocab_size != other.vocab_size {
            return Err(Error::TableMismatch {
                left: self.vocab_size,
                right: other.vocab_size,
            });
        }
        let mut ids = self.ids.clone();
        ids.extend_from_slice(&other.ids);
        Ok(HardPrompt {
            ids,
            vocab_size: self.vocab_size,
        })
    }

    /// Space-joined token strings.
    pub fn render(&self, table: &EmbeddingTable) -> String {
        self.ids
            .iter()
            .map(|&id| table.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Concatenates two prompts over the same table.
pub fn concat_prompts(a: &HardPrompt, b: &HardPrompt) -> Result<HardPrompt> {
    a.concat(b)
}

/// Substitutes the prompt's space-joined tokens into the template's single
/// `{}` slot.
pub fn fill_template(
    template: &str,
    prompt: &HardPrompt,
    table: &EmbeddingTable,
) -> Result<String> {
    let slots = template.matches("{}").count();
    if slots != 1 {
        return Err(Error::BadTemplate { found: slots });
    }
    Ok(template.replacen("{}", &prompt.render(table), 1))
}

/// Continuous optimizer state: the iterate plus Adam moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptState {
    /// Continuous iterate, one row per prompt position.
    pub p: Array2<f64>,
    /// First-moment buffer.
    pub m: Array2<f64>,
    /// Second-moment buffer, entrywise non-negative.
    pub v: Array2<f64>,
    /// Completed optimizer steps.
    pub step: usize,
}

impl PromptState {
    /// Initializes the iterate with copies of the given table rows.
    pub fn from_rows(table: &EmbeddingTable, ids: &[usize]) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidLength(
                "prompt needs at least one token".into(),
            ));
        }
        let dim = table.dim();
        let mut p = Array2::zeros((ids.len(), dim));
        for (i, &id) in ids.iter().enumerate() {
            if id >= table.vocab_size() {
                return Err(Error::InvalidTokenId {
                    id,
                    vocab: table.vocab_size(),
                });
            }
            p.row_mut(i).assign(&table.row(id));
        }
        Ok(Self {
            m: Array2::zeros(p.raw_dim()),
            v: Array2::zeros(p.raw_dim()),
            p,
            step: 0,
        })
    }

    pub fn prompt_len(&self) -> usize {
        self.p.nrows()
    }
}

/// Draws `len` row indices uniformly with replacement and returns both the
/// state initialized from those rows and the ids themselves.
pub fn sample_init_ids(
    table: &EmbeddingTable,
    len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(PromptState, HardPrompt)> {
    if len == 0 {
        return Err(Error::InvalidLength(
            "prompt needs at least one token".into(),
        ));
    }
    let vocab = table.vocab_size();
    let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..vocab)).collect();
    let state = PromptState::from_rows(table, &ids)?;
    let prompt = HardPrompt::new(ids, table)?;
    Ok((state, prompt))
}

/// Initializes a prompt state by sampling rows from the table, with
/// replacement, uniformly at random.
pub fn sample_init(
    table: &EmbeddingTable,
    len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PromptState> {
    sample_init_ids(table, len, rng).map(|(state, _)| state)
}
