//! End-to-end ablation runs: labels from a training log, training of one
//! model variant, and Testing-RAW evaluation on a test log.

use std::io::BufRead;

use crate::clicks::{default_grade_target, dctr_scores_smoothed, extract_raw_click_cases, map_to_grades, RawClickCase};
use crate::corpus::{build_vocabulary, QueryLog, TextCaps, Vocabulary};
use crate::embedding::{init_random, load_embeddings, EmbeddingMatrix};
use crate::error::Result;
use crate::eval::PerQuery;
use crate::kernel::KernelBank;
use crate::model::{ModelVariant, RankingModel};
use crate::runs::{rank_log, rankings, raw_click_scores};
use crate::trainer::{make_pairs, train, PreferencePair, TrainConfig, TrainReport};

/// Which click-derived values define preference pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairLabels {
    /// Raw DCTR scores.
    #[default]
    Scores,
    /// Five-level grades mapped from DCTR scores.
    Grades,
}

impl std::str::FromStr for PairLabels {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scores" => Ok(PairLabels::Scores),
            "grades" => Ok(PairLabels::Grades),
            other => Err(crate::Error::Invalid(format!("unknown pair labels `{other}`"))),
        }
    }
}

impl std::fmt::Display for PairLabels {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PairLabels::Scores => "scores",
            PairLabels::Grades => "grades",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub caps: TextCaps,
    pub min_count: u64,
    pub pair_labels: PairLabels,
    /// Additive DCTR smoothing; 0 for raw click-through rates.
    pub smoothing: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            caps: TextCaps::default(),
            min_count: 1,
            pair_labels: PairLabels::Scores,
            smoothing: 0.0,
        }
    }
}

/// Everything shared by the variants of one ablation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub pairs: Vec<PreferencePair>,
    pub initial_embeddings: EmbeddingMatrix,
    pub embedding_coverage: f64,
    pub test_log: QueryLog,
    pub cases: Vec<RawClickCase>,
}

/// Builds the vocabulary and preference pairs from `train_log` and the
/// single-click cases from `test_log`. Embeddings come from `pretrained`
/// when given and are random otherwise.
pub fn prepare<R: BufRead>(
    train_log: &QueryLog,
    test_log: QueryLog,
    pretrained: Option<R>,
    dim: usize,
    config: &ExperimentConfig,
) -> Result<Prepared> {
    let vocab = build_vocabulary(train_log, config.min_count);
    let mut labels = dctr_scores_smoothed(train_log, config.smoothing);
    let values = match config.pair_labels {
        PairLabels::Scores => labels.scores(),
        PairLabels::Grades => {
            map_to_grades(&mut labels, &default_grade_target())?;
            labels.grades()
        }
    };
    let pairs = make_pairs(&values, train_log, &vocab, config.caps, config.train.seed)?;
    let (initial_embeddings, embedding_coverage) = match pretrained {
        Some(r) => {
            let loaded = load_embeddings(r, &vocab, dim, config.train.seed)?;
            (loaded.matrix, loaded.coverage)
        }
        None => (init_random(vocab.len(), dim, config.train.seed), 0.0),
    };
    let cases = extract_raw_click_cases(&test_log);
    Ok(Prepared { vocab, pairs, initial_embeddings, embedding_coverage, test_log, cases })
}

pub fn train_variant(
    prepared: &Prepared,
    variant: ModelVariant,
    bank: &KernelBank,
    config: &TrainConfig,
) -> Result<(RankingModel, TrainReport)> {
    let model = variant.build(prepared.initial_embeddings.clone(), bank);
    train(model, &prepared.pairs, config)
}

/// Per-query Testing-RAW MRR of a model on the prepared test log.
pub fn raw_mrr(prepared: &Prepared, model: &RankingModel, caps: TextCaps) -> Result<PerQuery> {
    let runs = rankings(&rank_log(model, &prepared.vocab, caps, &prepared.test_log)?);
    raw_click_scores(&runs, &prepared.cases)
}

pub fn mean(values: &PerQuery) -> f64 {
    values.values().sum::<f64>() / values.len().max(1) as f64
}
