//! The trainable word-embedding matrix.
//!
//! Embeddings are read and written in word2vec text format: an optional
//! `count dim` header line, then one `term v1 ... vL` line per word.

use std::io::{BufRead, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

/// Vectors shorter than this are treated as zero by [`cosine`].
pub const ZERO_NORM: f64 = 1e-12;

const INIT_RANGE: f64 = 0.1;

/// Dense row-major `rows x dim` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Vec<f64>,
    rows: usize,
    dim: usize,
}

impl EmbeddingMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self { data: vec![0.0; rows * dim], rows, dim }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || dim == 0 {
            return Err(Error::Invalid("embedding matrix needs at least one row and column".into()));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Invalid("ragged embedding rows".into()));
        }
        let n = rows.len();
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { block: "embeddings".into() });
        }
        Ok(Self { data, rows: n, dim })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn row_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn norm(&self, id: usize) -> f64 {
        dot(self.row(id), self.row(id)).sqrt()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Entries drawn i.i.d. uniform in [-0.1, 0.1] from a seeded ChaCha stream.
pub fn init_random(vocab_size: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
    assert!(vocab_size >= 1 && dim >= 1, "embedding shape must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..vocab_size * dim)
        .map(|_| rng.gen_range(-INIT_RANGE..=INIT_RANGE))
        .collect();
    EmbeddingMatrix { data, rows: vocab_size, dim }
}

/// Result of [`load_embeddings`].
#[derive(Debug, Clone)]
pub struct LoadedEmbeddings {
    pub matrix: EmbeddingMatrix,
    /// Fraction of non-UNK vocabulary terms found in the file.
    pub coverage: f64,
}

/// Loads word2vec text embeddings for the terms of `vocab`. Rows missing from
/// the file keep their [`init_random`] values for `seed`.
pub fn load_embeddings<R: BufRead>(
    reader: R,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<LoadedEmbeddings> {
    let mut matrix = init_random(vocab.len(), dim, seed);
    let mut found = vec![false; vocab.len()];
    let mut first = true;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if std::mem::take(&mut first) && fields.len() == 2 {
            if let (Ok(_), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                if d != dim {
                    return Err(Error::format(lineno, format!("header dim {d}, expected {dim}")));
                }
                continue;
            }
        }
        if fields.len() != dim + 1 {
            return Err(Error::format(
                lineno,
                format!("expected {dim} values, found {}", fields.len() - 1),
            ));
        }
        let mut values = Vec::with_capacity(dim);
        for f in &fields[1..] {
            let v: f64 = f.parse().map_err(|_| Error::format(lineno, format!("bad number `{f}`")))?;
            if !v.is_finite() {
                return Err(Error::format(lineno, "non-finite value"));
            }
            values.push(v);
        }
        let id = if fields[0] == crate::corpus::UNK_TOKEN {
            Some(vocab.unk_id())
        } else {
            vocab.id(fields[0])
        };
        if let Some(id) = id {
            matrix.row_mut(id).copy_from_slice(&values);
            found[id] = true;
        }
    }
    let terms = vocab.len() - 1;
    let covered = found.iter().skip(1).filter(|&&f| f).count();
    let coverage = if terms == 0 { 1.0 } else { covered as f64 / terms as f64 };
    Ok(LoadedEmbeddings { matrix, coverage })
}

/// Writes every row as `term v1 ... vL` with eight significant digits.
pub fn save_embeddings<W: Write>(
    emb: &EmbeddingMatrix,
    vocab: &Vocabulary,
    mut out: W,
) -> Result<()> {
    if emb.rows() != vocab.len() {
        return Err(Error::Invalid(format!(
            "{} embedding rows for a vocabulary of {}",
            emb.rows(),
            vocab.len()
        )));
    }
    for (id, term) in vocab.terms() {
        write!(out, "{term}")?;
        for v in emb.row(id) {
            write!(out, " {v:.7e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Cosine similarity between two rows; 0 when either row is (near) zero.
pub fn cosine(emb: &EmbeddingMatrix, id_a: usize, id_b: usize) -> f64 {
    cosine_slices(emb.row(id_a), emb.row(id_b))
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na < ZERO_NORM || nb < ZERO_NORM {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}
