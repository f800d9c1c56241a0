//! Synthetic query logs with planted soft-match relevance.
//!
//! The vocabulary is split into four pools: topic terms (used in queries),
//! synonyms, distractors, and filler. A `synonym_density` fraction of topic
//! terms gets a hidden synonym and a distractor. Relevant titles mention a
//! query term through its synonym when it has one and literally otherwise;
//! irrelevant titles never contain a query term or its synonym but may
//! contain a distractor.
//!
//! Each query has a fixed candidate pool shown in shuffled order across
//! several sessions. A result at rank `r` is examined with probability
//! `1/r`; examined relevant results are clicked with probability
//! `1 - noise` and irrelevant ones with probability `noise`.
//!
//! The world also carries "pretrained" embeddings standing in for word2vec:
//! random unit vectors in which both synonyms and distractors are correlated
//! with their topic term, so that context similarity alone cannot tell the
//! two apart.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Impression, QueryLog, Session, SplitTag};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub vocab_size: usize,
    pub query_count: usize,
    pub docs_per_query: usize,
    /// Fraction of topic terms that have a hidden synonym.
    pub synonym_density: f64,
    /// Click probability of an examined irrelevant result, and skip
    /// probability of an examined relevant one.
    pub noise: f64,
    pub seed: u64,
    pub sessions_per_query: usize,
    /// Fraction of queries whose sessions form the test log.
    pub test_fraction: f64,
    pub embedding_dim: usize,
    /// Expected cosine between a topic term and its synonym or distractor in
    /// the pretrained embeddings.
    pub pretrained_correlation: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            vocab_size: 2000,
            query_count: 5000,
            docs_per_query: 10,
            synonym_density: 0.5,
            noise: 0.1,
            seed: 0,
            sessions_per_query: 8,
            test_fraction: 0.2,
            embedding_dim: 32,
            pretrained_correlation: 0.5,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 50 {
            return Err(Error::Invalid("vocab_size must be at least 50".into()));
        }
        if self.query_count < 2 || self.docs_per_query < 2 || self.sessions_per_query == 0 || self.embedding_dim == 0 {
            return Err(Error::Invalid(
                "query_count and docs_per_query must be at least 2; sessions and dim positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.synonym_density) {
            return Err(Error::Invalid("synonym_density must lie in [0, 1]".into()));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(Error::Invalid("noise must lie in [0, 0.5)".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Invalid("test_fraction must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.pretrained_correlation) {
            return Err(Error::Invalid("pretrained_correlation must lie in [0, 1]".into()));
        }
        let topics = self.vocab_size / 5;
        let distinct_queries = topics + topics * (topics - 1) / 2;
        if self.query_count > distinct_queries {
            return Err(Error::Invalid(format!(
                "at most {distinct_queries} distinct queries fit a vocabulary of {}",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

/// How a document relates to its query in the planted truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MatchKind {
    /// Relevant, and contains at least one query term literally.
    Exact,
    /// Relevant only through synonyms.
    Soft,
    Irrelevant,
}

impl MatchKind {
    pub fn is_relevant(self) -> bool {
        self != MatchKind::Irrelevant
    }

    fn as_str(self) -> &'static str {
        match self {
            MatchKind::Exact => "exact",
            MatchKind::Soft => "soft",
            MatchKind::Irrelevant => "none",
        }
    }
}

/// The hidden side of a synthetic world.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub synonyms: BTreeMap<String, String>,
    pub distractors: BTreeMap<String, String>,
    /// Planted relevance per query key, then doc id.
    pub relevance: BTreeMap<String, BTreeMap<String, MatchKind>>,
}

impl GroundTruth {
    /// Records are `syn TAB term TAB synonym`, `distractor TAB term TAB word`
    /// and `rel TAB query_key TAB doc_id TAB exact|soft|none`.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        for (t, s) in &self.synonyms {
            writeln!(out, "syn\t{t}\t{s}")?;
        }
        for (t, r) in &self.distractors {
            writeln!(out, "distractor\t{t}\t{r}")?;
        }
        for (q, docs) in &self.relevance {
            for (d, k) in docs {
                writeln!(out, "rel\t{q}\t{d}\t{}", k.as_str())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut truth = Self::default();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let f: Vec<&str> = line.split('\t').collect();
            match f[..] {
                ["syn", t, s] => {
                    truth.synonyms.insert(t.into(), s.into());
                }
                ["distractor", t, r] => {
                    truth.distractors.insert(t.into(), r.into());
                }
                ["rel", q, d, k] => {
                    let kind = match k {
                        "exact" => MatchKind::Exact,
                        "soft" => MatchKind::Soft,
                        "none" => MatchKind::Irrelevant,
                        _ => return Err(Error::format(idx + 1, format!("bad match kind `{k}`"))),
                    };
                    truth.relevance.entry(q.into()).or_default().insert(d.into(), kind);
                }
                [""] => {}
                _ => return Err(Error::format(idx + 1, "unrecognized truth record")),
            }
        }
        Ok(truth)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub train: QueryLog,
    pub test: QueryLog,
    pub truth: GroundTruth,
    /// Every vocabulary term with its pretrained vector.
    pub pretrained: Vec<(String, Vec<f64>)>,
}

impl SyntheticWorld {
    /// Pretrained vectors in word2vec text format.
    pub fn write_pretrained<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {}", self.pretrained.len(), self.pretrained.first().map_or(0, |p| p.1.len()))?;
        for (term, v) in &self.pretrained {
            write!(out, "{term}")?;
            for x in v {
                write!(out, " {x:.7e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

struct Pools {
    topic: Vec<String>,
    filler: Vec<String>,
    synonyms: BTreeMap<String, String>,
    distractors: BTreeMap<String, String>,
}

fn word(i: usize) -> String {
    format!("w{i:05}")
}

fn build_pools(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Pools {
    let mut words: Vec<String> = (0..spec.vocab_size).map(word).collect();
    words.shuffle(rng);
    let n = spec.vocab_size / 5;
    let topic: Vec<String> = words[..n].to_vec();
    let syn_pool = &words[n..2 * n];
    let dis_pool = &words[2 * n..3 * n];
    let filler = words[3 * n..].to_vec();
    let with_synonym = (topic.len() as f64 * spec.synonym_density).round() as usize;
    let mut order: Vec<usize> = (0..topic.len()).collect();
    order.shuffle(rng);
    let mut synonyms = BTreeMap::new();
    let mut distractors = BTreeMap::new();
    for &i in &order[..with_synonym] {
        synonyms.insert(topic[i].clone(), syn_pool[i].clone());
        distractors.insert(topic[i].clone(), dis_pool[i].clone());
    }
    Pools { topic, filler, synonyms, distractors }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn correlated(base: &[f64], rho: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = unit_vector(rng, base.len());
    let mix = (1.0 - rho * rho).sqrt();
    let v: Vec<f64> = base.iter().zip(&noise).map(|(b, z)| rho * b + mix * z).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn pretrained(spec: &SyntheticSpec, pools: &Pools, rng: &mut ChaCha8Rng) -> Vec<(String, Vec<f64>)> {
    let mut vectors: BTreeMap<String, Vec<f64>> =
        (0..spec.vocab_size).map(|i| (word(i), unit_vector(rng, spec.embedding_dim))).collect();
    for (t, s) in &pools.synonyms {
        let base = vectors[t].clone();
        vectors.insert(s.clone(), correlated(&base, spec.pretrained_correlation, rng));
        let r = &pools.distractors[t];
        vectors.insert(r.clone(), correlated(&base, spec.pretrained_correlation, rng));
    }
    vectors.into_iter().collect()
}

fn draw_queries(spec: &SyntheticSpec, pools: &Pools, rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    let mut seen = BTreeSet::new();
    let mut queries = Vec::with_capacity(spec.query_count);
    while queries.len() < spec.query_count {
        let len = match rng.gen_range(0..10) {
            0..=4 => 1,
            _ => 2,
        };
        let mut q: Vec<String> = pools.topic.choose_multiple(rng, len).cloned().collect();
        q.sort();
        if seen.insert(q.clone()) {
            queries.push(q);
        }
    }
    queries
}

fn fill_title(mut planted: Vec<String>, pools: &Pools, rng: &mut ChaCha8Rng) -> Vec<String> {
    let len = rng.gen_range(4..=8).max(planted.len());
    while planted.len() < len {
        planted.push(pools.filler.choose(rng).expect("filler pool").clone());
    }
    planted.shuffle(rng);
    planted
}

/// Candidate pool for one query as `(title, kind)`.
fn candidate_pool(
    query: &[String],
    spec: &SyntheticSpec,
    pools: &Pools,
    rng: &mut ChaCha8Rng,
) -> Vec<(Vec<String>, MatchKind)> {
    let relevant = rng.gen_range(1..=3.min(spec.docs_per_query - 1));
    let forbidden: BTreeSet<&String> = query.iter().chain(query.iter().filter_map(|t| pools.synonyms.get(t))).collect();
    let mut pool = Vec::with_capacity(spec.docs_per_query);
    for _ in 0..relevant {
        let mut mentioned: Vec<&String> = query.iter().filter(|_| rng.gen_bool(0.7)).collect();
        if mentioned.is_empty() {
            mentioned.push(query.choose(rng).expect("non-empty query"));
        }
        let mut exact = false;
        let planted: Vec<String> = mentioned
            .into_iter()
            .map(|t| match pools.synonyms.get(t) {
                Some(s) => s.clone(),
                None => {
                    exact = true;
                    t.clone()
                }
            })
            .collect();
        let kind = if exact { MatchKind::Exact } else { MatchKind::Soft };
        pool.push((fill_title(planted, pools, rng), kind));
    }
    let decoys: Vec<&String> = query.iter().filter_map(|t| pools.distractors.get(t)).collect();
    while pool.len() < spec.docs_per_query {
        let mut planted = Vec::new();
        if !decoys.is_empty() && rng.gen_bool(0.5) {
            planted.push((*decoys.choose(rng).expect("non-empty")).clone());
        }
        if rng.gen_bool(0.3) {
            let other = pools.topic.choose(rng).expect("topic pool");
            if !forbidden.contains(other) {
                planted.push(other.clone());
            }
        }
        pool.push((fill_title(planted, pools, rng), MatchKind::Irrelevant));
    }
    pool.shuffle(rng);
    pool
}

fn simulate_session(
    query: &[String],
    docs: &[(String, Vec<String>, MatchKind)],
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Session {
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(rng);
    let impressions = order
        .iter()
        .enumerate()
        .map(|(r, &i)| {
            let (id, title, kind) = &docs[i];
            let examined = rng.gen_bool(1.0 / (r + 1) as f64);
            let p = if kind.is_relevant() { 1.0 - noise } else { noise };
            let clicked = examined && rng.gen_bool(p);
            Impression {
                doc_id: id.clone(),
                title_tokens: title.clone(),
                clicked,
                dwell_ms: None,
            }
        })
        .collect();
    Session { query_tokens: query.to_vec(), impressions }
}

/// Generates a world. The same spec always yields the same world.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticWorld> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pools = build_pools(spec, &mut rng);
    let pretrained = pretrained(spec, &pools, &mut rng);
    let queries = draw_queries(spec, &pools, &mut rng);
    let test_count = ((queries.len() as f64 * spec.test_fraction).round() as usize).clamp(1, queries.len() - 1);

    let mut truth = GroundTruth {
        synonyms: pools.synonyms.clone(),
        distractors: pools.distractors.clone(),
        relevance: BTreeMap::new(),
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut next_doc = 0usize;
    for (qi, query) in queries.iter().enumerate() {
        let docs: Vec<(String, Vec<String>, MatchKind)> = candidate_pool(query, spec, &pools, &mut rng)
            .into_iter()
            .map(|(title, kind)| {
                next_doc += 1;
                (format!("d{next_doc:07}"), title, kind)
            })
            .collect();
        truth
            .relevance
            .insert(query.join(" "), docs.iter().map(|(id, _, k)| (id.clone(), *k)).collect());
        let sink = if qi < queries.len() - test_count { &mut train } else { &mut test };
        for _ in 0..spec.sessions_per_query {
            sink.push(simulate_session(query, &docs, spec.noise, &mut rng));
        }
    }
    Ok(SyntheticWorld {
        train: QueryLog { sessions: train, split: SplitTag::Train },
        test: QueryLog { sessions: test, split: SplitTag::Test },
        truth,
        pretrained,
    })
}
