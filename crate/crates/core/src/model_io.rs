//! Self-contained text model files.
//!
//! A model file bundles the vocabulary, encoding caps, kernel bank, ranking
//! weights and embeddings. Reals are written in Rust's shortest round-trip
//! form, so a save/load cycle reproduces every parameter bit for bit.
//!
//! ```text
//! knrm-model 1
//! variant full
//! pooling kernel
//! embeddings_frozen false
//! clamp_floor 0.0000000001
//! caps 16 64
//! kernels 11
//! 1 0.001
//! ...
//! w 0.1 -0.2 ...
//! b 0.05
//! vocab 2001
//! <unk> 0 0
//! ...
//! embeddings 2001 50
//! 0.01 -0.3 ...
//! ```

use std::io::{BufRead, Write};

use crate::corpus::{TextCaps, Vocabulary};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::kernel::{Kernel, KernelBank};
use crate::model::{ModelVariant, PoolingMode, RankingModel, RankingParams};

const MAGIC: &str = "knrm-model";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub variant: ModelVariant,
    pub vocab: Vocabulary,
    pub caps: TextCaps,
    pub model: RankingModel,
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn save_model<W: Write>(bundle: &ModelBundle, mut out: W) -> Result<()> {
    let m = &bundle.model;
    m.validate()?;
    if m.embeddings.rows() != bundle.vocab.len() {
        return Err(Error::Invalid(format!(
            "{} embedding rows for a vocabulary of {}",
            m.embeddings.rows(),
            bundle.vocab.len()
        )));
    }
    writeln!(out, "{MAGIC} {VERSION}")?;
    writeln!(out, "variant {}", bundle.variant)?;
    writeln!(out, "pooling {}", m.pooling)?;
    writeln!(out, "embeddings_frozen {}", m.embeddings_frozen)?;
    writeln!(out, "clamp_floor {}", m.clamp_floor)?;
    writeln!(out, "caps {} {}", bundle.caps.query, bundle.caps.title)?;
    writeln!(out, "kernels {}", m.kernel_bank.len())?;
    for k in m.kernel_bank.kernels() {
        writeln!(out, "{} {}", k.mu, k.sigma)?;
    }
    writeln!(out, "w {}", join(&m.ranking.w))?;
    writeln!(out, "b {}", m.ranking.b)?;
    writeln!(out, "vocab {}", bundle.vocab.len())?;
    bundle.vocab.write_to(&mut out)?;
    writeln!(out, "embeddings {} {}", m.embeddings.rows(), m.embeddings.dim())?;
    for id in 0..m.embeddings.rows() {
        writeln!(out, "{}", join(m.embeddings.row(id)))?;
    }
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    lineno: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<String> {
        self.lineno += 1;
        match self.inner.next() {
            Some(line) => Ok(line?),
            None => Err(Error::format(self.lineno, "unexpected end of model file")),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.lineno, msg)
    }

    /// Reads `key rest` and returns `rest`.
    fn field(&mut self, key: &str) -> Result<String> {
        let line = self.next()?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok(rest.to_string()),
            _ if line == key => Ok(String::new()),
            _ => Err(self.err(format!("expected `{key}`"))),
        }
    }

    fn parse<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("bad value `{s}`")))
    }

    fn reals(&self, s: &str) -> Result<Vec<f64>> {
        s.split_whitespace().map(|v| self.parse(v)).collect()
    }
}

pub fn load_model<R: BufRead>(reader: R) -> Result<ModelBundle> {
    let mut lines = Lines { inner: reader.lines(), lineno: 0 };
    let version = lines.field(MAGIC)?;
    if lines.parse::<u32>(&version)? != VERSION {
        return Err(lines.err(format!("unsupported model version {version}")));
    }
    let variant: ModelVariant = lines.field("variant")?.parse()?;
    let pooling: PoolingMode = lines.field("pooling")?.parse()?;
    let frozen_s = lines.field("embeddings_frozen")?;
    let embeddings_frozen: bool = lines.parse(&frozen_s)?;
    let floor_s = lines.field("clamp_floor")?;
    let clamp_floor: f64 = lines.parse(&floor_s)?;
    let caps_s = lines.field("caps")?;
    let caps: Vec<usize> = caps_s.split_whitespace().map(|v| lines.parse(v)).collect::<Result<_>>()?;
    let [query, title] = caps[..] else {
        return Err(lines.err("expected `caps QUERY TITLE`"));
    };

    let count_s = lines.field("kernels")?;
    let count: usize = lines.parse(&count_s)?;
    let mut kernels = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines.next()?;
        let v = lines.reals(&line)?;
        let [mu, sigma] = v[..] else {
            return Err(lines.err("expected `mu sigma`"));
        };
        kernels.push(Kernel::new(mu, sigma));
    }
    let kernel_bank = KernelBank::new(kernels)?;

    let w_s = lines.field("w")?;
    let w = lines.reals(&w_s)?;
    let b_s = lines.field("b")?;
    let b: f64 = lines.parse(&b_s)?;

    let vocab_s = lines.field("vocab")?;
    let vocab_len: usize = lines.parse(&vocab_s)?;
    let mut vocab_text = String::new();
    for _ in 0..vocab_len {
        vocab_text.push_str(&lines.next()?);
        vocab_text.push('\n');
    }
    let vocab = Vocabulary::read_from(vocab_text.as_bytes())?;

    let shape_s = lines.field("embeddings")?;
    let shape: Vec<usize> = shape_s.split_whitespace().map(|v| lines.parse(v)).collect::<Result<_>>()?;
    let [rows, dim] = shape[..] else {
        return Err(lines.err("expected `embeddings ROWS DIM`"));
    };
    if rows != vocab.len() {
        return Err(lines.err(format!("{rows} embedding rows for a vocabulary of {}", vocab.len())));
    }
    let mut embeddings = EmbeddingMatrix::zeros(rows, dim);
    for id in 0..rows {
        let line = lines.next()?;
        let v = lines.reals(&line)?;
        if v.len() != dim {
            return Err(lines.err(format!("expected {dim} values, found {}", v.len())));
        }
        embeddings.row_mut(id).copy_from_slice(&v);
    }

    let model = RankingModel {
        embeddings,
        kernel_bank,
        ranking: RankingParams { w, b },
        pooling,
        embeddings_frozen,
        clamp_floor,
    };
    model.validate()?;
    Ok(ModelBundle { variant, vocab, caps: TextCaps { query, title }, model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TermIdSequence;
    use crate::embedding::init_random;
    use crate::model::score;

    fn bundle(variant: ModelVariant) -> ModelBundle {
        let vocab = Vocabulary::from_entries((1..6).map(|i| (format!("w{i}"), 10 - i as u64))).unwrap();
        let mut model = variant.build(init_random(vocab.len(), 4, 9), &KernelBank::default_bank());
        for (i, w) in model.ranking.w.iter_mut().enumerate() {
            *w = 0.1 / (i as f64 + 3.0);
        }
        model.ranking.b = -1.0 / 7.0;
        ModelBundle { variant, vocab, caps: TextCaps { query: 4, title: 9 }, model }
    }

    #[test]
    fn round_trip_is_exact() {
        for variant in ModelVariant::ALL {
            let b = bundle(variant);
            let mut buf = Vec::new();
            save_model(&b, &mut buf).unwrap();
            let loaded = load_model(buf.as_slice()).unwrap();
            assert_eq!(loaded, b, "{variant}");
            let q = TermIdSequence { ids: vec![1, 2], original_length: 2 };
            let d = TermIdSequence { ids: vec![2, 3, 5], original_length: 3 };
            assert_eq!(score(&b.model, &q, &d).unwrap().0, score(&loaded.model, &q, &d).unwrap().0);
        }
    }

    #[test]
    fn rejects_bad_files() {
        let b = bundle(ModelVariant::Full);
        let mut buf = Vec::new();
        save_model(&b, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(load_model(text.replace("knrm-model 1", "knrm-model 9").as_bytes()).is_err());
        let truncated: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(matches!(load_model(truncated.as_bytes()), Err(Error::Format { .. })));
        let wrong_dim = text.replace("embeddings 6 4", "embeddings 6 5");
        assert!(load_model(wrong_dim.as_bytes()).is_err());
    }
}
