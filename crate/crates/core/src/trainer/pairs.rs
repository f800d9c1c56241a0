use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{encode_text, group_by_query, QueryLog, TermIdSequence, TextCaps, Vocabulary};
use crate::error::{Error, Result};

/// Per-query relevance values keyed by query key, then doc id.
pub type QueryLabels = BTreeMap<String, BTreeMap<String, f64>>;

/// `doc_pos` should outrank `doc_neg` for `query`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferencePair {
    pub query_key: String,
    pub query: TermIdSequence,
    pub doc_pos: TermIdSequence,
    pub doc_neg: TermIdSequence,
    pub pos_id: String,
    pub neg_id: String,
}

/// One pair per ordered `(d+, d-)` with `label(d+) > label(d-)` within each
/// query, shuffled by `seed`. Documents without text in `log`, and queries or
/// titles that encode to nothing, are skipped.
pub fn make_pairs(
    labels: &QueryLabels,
    log: &QueryLog,
    vocab: &Vocabulary,
    caps: TextCaps,
    seed: u64,
) -> Result<Vec<PreferencePair>> {
    let mut pairs = Vec::new();
    for group in group_by_query(log) {
        let Some(doc_labels) = labels.get(&group.query_key) else {
            continue;
        };
        let query = encode_text(vocab, &group.query_tokens, caps.query);
        if query.is_empty() {
            continue;
        }
        let docs: Vec<(&str, f64, TermIdSequence)> = group
            .docs
            .iter()
            .filter_map(|(id, title)| {
                let label = *doc_labels.get(id)?;
                let seq = encode_text(vocab, title, caps.title);
                (!seq.is_empty()).then_some((id.as_str(), label, seq))
            })
            .collect();
        for (pos_id, pos_label, pos_seq) in &docs {
            for (neg_id, neg_label, neg_seq) in &docs {
                if pos_label > neg_label {
                    pairs.push(PreferencePair {
                        query_key: group.query_key.clone(),
                        query: query.clone(),
                        doc_pos: pos_seq.clone(),
                        doc_neg: neg_seq.clone(),
                        pos_id: pos_id.to_string(),
                        neg_id: neg_id.to_string(),
                    });
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(pairs)
}
