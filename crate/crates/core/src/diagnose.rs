//! Kernel diagnostics: single-kernel ablation, occupancy of word pairs per
//! kernel, and movement of word pairs between kernels during training.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clicks::RawClickCase;
use crate::corpus::{group_by_query, QueryLog, TextCaps, Vocabulary};
use crate::embedding::{cosine, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::kernel::{Kernel, KernelBank};
use crate::model::{PoolingMode, RankingModel};
use crate::runs::{encode_or_unk, rank_log, rankings, raw_click_scores};

#[derive(Debug, Clone, PartialEq)]
pub struct KernelAblation {
    pub kernel: Kernel,
    pub weight: f64,
    pub mrr: f64,
}

/// MRR of the model when all ranking weights but one are zeroed.
pub fn single_kernel_ablation(
    model: &RankingModel,
    vocab: &Vocabulary,
    caps: TextCaps,
    log: &QueryLog,
    cases: &[RawClickCase],
) -> Result<Vec<KernelAblation>> {
    if model.pooling != PoolingMode::Kernel {
        return Err(Error::Invalid("single-kernel ablation needs kernel pooling".into()));
    }
    let mut out = Vec::with_capacity(model.kernel_bank.len());
    for (k, kernel) in model.kernel_bank.kernels().iter().enumerate() {
        let mut single = model.clone();
        for (j, w) in single.ranking.w.iter_mut().enumerate() {
            if j != k {
                *w = 0.0;
            }
        }
        let runs = rankings(&rank_log(&single, vocab, caps, log)?);
        let per_query = raw_click_scores(&runs, cases)?;
        let mrr = per_query.values().sum::<f64>() / per_query.len().max(1) as f64;
        out.push(KernelAblation { kernel: *kernel, weight: model.ranking.w[k], mrr });
    }
    Ok(out)
}

/// Distinct `(query term, title term)` id pairs of a log, excluding UNK,
/// subsampled to at most `max_pairs` by `seed`.
pub fn sample_word_pairs(
    log: &QueryLog,
    vocab: &Vocabulary,
    caps: TextCaps,
    max_pairs: usize,
    seed: u64,
) -> Vec<(usize, usize)> {
    let mut pairs = BTreeSet::new();
    for g in group_by_query(log) {
        let q = encode_or_unk(vocab, &g.query_tokens, caps.query);
        for (_, title) in &g.docs {
            let d = encode_or_unk(vocab, title, caps.title);
            for &a in q.ids.iter().filter(|&&a| a != vocab.unk_id()) {
                for &b in d.ids.iter().filter(|&&b| b != vocab.unk_id()) {
                    pairs.insert((a, b));
                }
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
    if pairs.len() > max_pairs {
        pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        pairs.truncate(max_pairs);
        pairs.sort_unstable();
    }
    pairs
}

/// Number of pairs whose cosine is nearest each kernel's mean.
pub fn occupancy(bank: &KernelBank, emb: &EmbeddingMatrix, pairs: &[(usize, usize)]) -> Vec<usize> {
    let mut counts = vec![0; bank.len()];
    for &(a, b) in pairs {
        counts[bank.nearest(cosine(emb, a, b))] += 1;
    }
    counts
}

/// `moves[from][to]`: pairs nearest kernel `from` under `before` and kernel
/// `to` under `after`.
pub fn movement(
    bank: &KernelBank,
    before: &EmbeddingMatrix,
    after: &EmbeddingMatrix,
    pairs: &[(usize, usize)],
) -> Vec<Vec<usize>> {
    let mut moves = vec![vec![0; bank.len()]; bank.len()];
    for &(a, b) in pairs {
        moves[bank.nearest(cosine(before, a, b))][bank.nearest(cosine(after, a, b))] += 1;
    }
    moves
}

fn ln_count(c: usize) -> f64 {
    if c == 0 {
        0.0
    } else {
        (c as f64).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub ablation: Option<Vec<KernelAblation>>,
    pub sampled_pairs: usize,
    pub occupancy_after: Vec<usize>,
    pub occupancy_before: Option<Vec<usize>>,
    pub movement: Option<Vec<Vec<usize>>>,
}

impl Diagnostics {
    pub fn format(&self, bank: &KernelBank) -> String {
        let mut out = String::new();
        if let Some(ablation) = &self.ablation {
            out.push_str("# single-kernel ablation\nmu\tsigma\tweight\tmrr\n");
            for a in ablation {
                let _ = writeln!(out, "{}\t{}\t{:.6}\t{:.4}", a.kernel.mu, a.kernel.sigma, a.weight, a.mrr);
            }
            out.push('\n');
        }
        let _ = writeln!(out, "# kernel occupancy over {} sampled word pairs", self.sampled_pairs);
        out.push_str("mu\tcount\tln_count");
        if self.occupancy_before.is_some() {
            out.push_str("\tcount_before\tln_count_before");
        }
        out.push('\n');
        for (k, kernel) in bank.kernels().iter().enumerate() {
            let c = self.occupancy_after[k];
            let _ = write!(out, "{}\t{c}\t{:.3}", kernel.mu, ln_count(c));
            if let Some(before) = &self.occupancy_before {
                let _ = write!(out, "\t{}\t{:.3}", before[k], ln_count(before[k]));
            }
            out.push('\n');
        }
        match &self.movement {
            Some(m) => {
                out.push_str("\n# movement from reference kernel (rows) to trained kernel (columns)\nfrom\\to");
                for k in bank.kernels() {
                    let _ = write!(out, "\t{}", k.mu);
                }
                out.push('\n');
                for (k, row) in m.iter().enumerate() {
                    let _ = write!(out, "{}", bank.kernels()[k].mu);
                    for c in row {
                        let _ = write!(out, "\t{c}");
                    }
                    out.push('\n');
                }
            }
            None => out.push_str("\n# movement matrix skipped: no reference embeddings given\n"),
        }
        out
    }
}
