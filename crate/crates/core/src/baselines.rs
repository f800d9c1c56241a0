//! Unsupervised word-based rankers: BM25 and Dirichlet-smoothed query
//! likelihood.

use std::collections::{BTreeMap, HashMap};

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;
pub const DEFAULT_MU: f64 = 2500.0;
/// Collection frequency assumed for terms never seen in the collection.
pub const UNSEEN_PSEUDO_COUNT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub avg_doc_len: f64,
    pub doc_freq: HashMap<String, usize>,
    pub coll_freq: HashMap<String, usize>,
    pub coll_len: usize,
}

impl CorpusStats {
    /// Statistics over a set of documents. An empty set, or one holding only
    /// empty documents, gets `avg_doc_len = 1` to keep the length norm finite.
    pub fn from_documents<'a, I, D>(docs: I) -> Self
    where
        I: IntoIterator<Item = D>,
        D: AsRef<[String]> + 'a,
    {
        let mut s = Self::default();
        for d in docs {
            let d = d.as_ref();
            s.doc_count += 1;
            s.coll_len += d.len();
            let mut seen: Vec<&str> = Vec::with_capacity(d.len());
            for t in d {
                *s.coll_freq.entry(t.clone()).or_default() += 1;
                if !seen.contains(&t.as_str()) {
                    seen.push(t);
                    *s.doc_freq.entry(t.clone()).or_default() += 1;
                }
            }
        }
        s.avg_doc_len = if s.coll_len == 0 { 1.0 } else { s.coll_len as f64 / s.doc_count as f64 };
        s
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// `p(t|C)`, with [`UNSEEN_PSEUDO_COUNT`] for unseen terms.
    pub fn collection_prob(&self, term: &str) -> f64 {
        let cf = self.coll_freq.get(term).map_or(UNSEEN_PSEUDO_COUNT, |&c| c as f64);
        cf / (self.coll_len as f64).max(1.0)
    }
}

fn term_counts(d: &[String]) -> BTreeMap<&str, usize> {
    let mut tf = BTreeMap::new();
    for t in d {
        *tf.entry(t.as_str()).or_default() += 1;
    }
    tf
}

pub fn bm25_score(q: &[String], d: &[String], stats: &CorpusStats, k1: f64, b: f64) -> f64 {
    let tf = term_counts(d);
    let norm = k1 * (1.0 - b + b * d.len() as f64 / stats.avg_doc_len);
    q.iter()
        .map(|t| {
            let f = tf.get(t.as_str()).copied().unwrap_or(0) as f64;
            if f == 0.0 {
                0.0
            } else {
                stats.idf(t) * f * (k1 + 1.0) / (f + norm)
            }
        })
        .sum()
}

pub fn lm_dirichlet_score(q: &[String], d: &[String], stats: &CorpusStats, mu: f64) -> f64 {
    let tf = term_counts(d);
    let len = d.len() as f64;
    q.iter()
        .map(|t| {
            let f = tf.get(t.as_str()).copied().unwrap_or(0) as f64;
            ((f + mu * stats.collection_prob(t)) / (len + mu)).ln()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Baseline {
    Bm25 { k1: f64, b: f64 },
    LmDirichlet { mu: f64 },
}

impl Baseline {
    pub fn bm25() -> Self {
        Baseline::Bm25 { k1: DEFAULT_K1, b: DEFAULT_B }
    }

    pub fn lm() -> Self {
        Baseline::LmDirichlet { mu: DEFAULT_MU }
    }

    pub fn score(&self, q: &[String], d: &[String], stats: &CorpusStats) -> f64 {
        match *self {
            Baseline::Bm25 { k1, b } => bm25_score(q, d, stats, k1, b),
            Baseline::LmDirichlet { mu } => lm_dirichlet_score(q, d, stats, mu),
        }
    }
}

impl std::str::FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bm25" => Ok(Self::bm25()),
            "lm" | "lm-dirichlet" => Ok(Self::lm()),
            other => Err(format!("unknown baseline `{other}` (expected bm25 or lm)")),
        }
    }
}
