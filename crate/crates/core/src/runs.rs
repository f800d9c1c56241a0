//! Ranking whole logs, runs files, and per-query evaluation of runs.
//!
//! A runs file holds `query_key TAB doc_id TAB rank TAB score` lines, with an
//! optional fifth warning column. Ranks start at 1.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::baselines::{Baseline, CorpusStats};
use crate::clicks::{RawClickCase, RelevanceLabelSet};
use crate::corpus::{encode_text, group_by_query, QueryCandidates, QueryLog, TermIdSequence, TextCaps, Vocabulary, UNK_ID};
use crate::error::{Error, Result};
use crate::eval::{ndcg_at_k, reciprocal_rank, PerQuery};
use crate::model::{rank, sort_ranked, Ranked, RankingModel};

pub const ALL_OOV_WARNING: &str = "all-oov-query";

#[derive(Debug, Clone, PartialEq)]
pub struct RunLine {
    pub query_key: String,
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
    pub warning: Option<String>,
}

/// Encodes text, standing in a single UNK for empty token lists.
pub fn encode_or_unk(vocab: &Vocabulary, tokens: &[String], cap: usize) -> TermIdSequence {
    let seq = encode_text(vocab, tokens, cap);
    if seq.is_empty() {
        TermIdSequence { ids: vec![UNK_ID], original_length: 0 }
    } else {
        seq
    }
}

fn push_ranked(out: &mut Vec<RunLine>, query_key: &str, ranked: Vec<Ranked>, warning: Option<&str>) {
    out.extend(ranked.into_iter().enumerate().map(|(i, r)| RunLine {
        query_key: query_key.to_string(),
        doc_id: r.doc_id,
        rank: i + 1,
        score: r.score,
        warning: warning.map(str::to_string),
    }));
}

/// Ranks the candidates of every query in `log` with a trained model.
/// Queries whose tokens are all out of vocabulary are still ranked through
/// the UNK embedding and flagged.
pub fn rank_log(model: &RankingModel, vocab: &Vocabulary, caps: TextCaps, log: &QueryLog) -> Result<Vec<RunLine>> {
    let mut out = Vec::new();
    for group in group_by_query(log) {
        let ranked = rank_group(model, vocab, caps, &group)?;
        let q = encode_or_unk(vocab, &group.query_tokens, caps.query);
        let warning = q.all_unknown().then_some(ALL_OOV_WARNING);
        push_ranked(&mut out, &group.query_key, ranked, warning);
    }
    Ok(out)
}

pub fn rank_group(
    model: &RankingModel,
    vocab: &Vocabulary,
    caps: TextCaps,
    group: &QueryCandidates,
) -> Result<Vec<Ranked>> {
    let q = encode_or_unk(vocab, &group.query_tokens, caps.query);
    let docs: Vec<(String, TermIdSequence)> = group
        .docs
        .iter()
        .map(|(id, title)| (id.clone(), encode_or_unk(vocab, title, caps.title)))
        .collect();
    rank(model, &q, &docs)
}

/// Ranks with BM25 or the Dirichlet language model. Collection statistics
/// are taken over every candidate document of the log.
pub fn rank_log_baseline(baseline: Baseline, log: &QueryLog) -> Vec<RunLine> {
    let groups = group_by_query(log);
    let stats = CorpusStats::from_documents(groups.iter().flat_map(|g| g.docs.iter().map(|(_, t)| t.as_slice())));
    let mut out = Vec::new();
    for g in &groups {
        let mut ranked: Vec<Ranked> = g
            .docs
            .iter()
            .map(|(id, title)| {
                let s = baseline.score(&g.query_tokens, title, &stats);
                Ranked { doc_id: id.clone(), score: s, pre_activation: s }
            })
            .collect();
        sort_ranked(&mut ranked);
        push_ranked(&mut out, &g.query_key, ranked, None);
    }
    out
}

pub fn write_runs<W: Write>(runs: &[RunLine], mut out: W) -> Result<()> {
    for r in runs {
        write!(out, "{}\t{}\t{}\t{}", r.query_key, r.doc_id, r.rank, r.score)?;
        if let Some(w) = &r.warning {
            write!(out, "\t{w}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_runs<R: BufRead>(reader: R) -> Result<Vec<RunLine>> {
    let mut runs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let f: Vec<&str> = line.split('\t').collect();
        if !(4..=5).contains(&f.len()) {
            return Err(Error::format(lineno, "expected `query_key TAB doc_id TAB rank TAB score`"));
        }
        runs.push(RunLine {
            query_key: f[0].to_string(),
            doc_id: f[1].to_string(),
            rank: f[2].parse().map_err(|_| Error::format(lineno, "bad rank"))?,
            score: f[3].parse().map_err(|_| Error::format(lineno, "bad score"))?,
            warning: f.get(4).map(|w| w.to_string()),
        });
    }
    Ok(runs)
}

/// Doc ids per query in rank order.
pub fn rankings(runs: &[RunLine]) -> BTreeMap<String, Vec<String>> {
    let mut by_query: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
    for r in runs {
        by_query.entry(r.query_key.clone()).or_default().push((r.rank, r.doc_id.clone()));
    }
    by_query
        .into_iter()
        .map(|(q, mut v)| {
            v.sort();
            (q, v.into_iter().map(|(_, d)| d).collect())
        })
        .collect()
}

/// Per-query NDCG@k for every labeled query. A labeled query with no run is
/// an alignment error; run queries without labels are ignored.
pub fn graded_scores(runs: &BTreeMap<String, Vec<String>>, labels: &RelevanceLabelSet, k: usize) -> Result<PerQuery> {
    let mut out = PerQuery::new();
    for (q, docs) in &labels.labels {
        let grades: BTreeMap<String, u8> = docs.iter().filter_map(|(d, l)| Some((d.clone(), l.grade?))).collect();
        if grades.is_empty() {
            continue;
        }
        let ranked = runs
            .get(q)
            .ok_or_else(|| Error::Alignment(format!("no ranking for labeled query `{q}`")))?;
        let refs: Vec<&str> = ranked.iter().map(String::as_str).collect();
        out.insert(q.clone(), ndcg_at_k(&refs, &grades, k));
    }
    Ok(out)
}

/// Per-query mean reciprocal rank over single-click cases. Each case is
/// scored on the run's order restricted to the documents that session
/// displayed.
pub fn raw_click_scores(runs: &BTreeMap<String, Vec<String>>, cases: &[RawClickCase]) -> Result<PerQuery> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for c in cases {
        let ranked = runs
            .get(&c.query_key)
            .ok_or_else(|| Error::Alignment(format!("no ranking for query `{}`", c.query_key)))?;
        let shown: Vec<&str> = ranked
            .iter()
            .map(String::as_str)
            .filter(|d| c.displayed.iter().any(|x| x == d))
            .collect();
        let rr = reciprocal_rank(&c.query_key, &shown, &c.clicked_id)?;
        let e = sums.entry(c.query_key.clone()).or_default();
        e.0 += rr;
        e.1 += 1;
    }
    Ok(sums.into_iter().map(|(q, (s, n))| (q, s / n as f64)).collect())
}
