use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{score, RankingModel};
use crate::trainer::{backward, hinge_loss, AdamConfig, AdamState, Gradients, PreferencePair};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    /// Fraction of training queries held out for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
    /// Global gradient-norm clip, off when `None`.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr: 0.001,
            eps: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            patience_epochs: 5,
            max_epochs: 50,
            validation_fraction: 0.05,
            seed: 0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.batch_size > 0
            && self.lr > 0.0
            && self.eps > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.patience_epochs > 0
            && self.max_epochs > 0;
        if !positive {
            return Err(Error::Invalid("training hyperparameters must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 0.5) {
            return Err(Error::Invalid("validation_fraction must lie in (0, 0.5]".into()));
        }
        if matches!(self.grad_clip, Some(c) if c.is_nan() || c <= 0.0) {
            return Err(Error::Invalid("grad_clip must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub train_pairs: usize,
    pub val_pairs: usize,
}

impl TrainReport {
    /// One `epoch TAB train_loss TAB val_loss TAB elapsed_ms` line per epoch
    /// and a closing `selected_epoch` line. With `timing` off the elapsed
    /// column reads `-` so that reports are reproducible byte for byte.
    pub fn write_tsv<W: Write>(&self, mut out: W, timing: bool) -> Result<()> {
        writeln!(out, "epoch\tmean_train_loss\tmean_val_loss\telapsed_ms")?;
        for e in &self.epochs {
            if timing {
                writeln!(out, "{}\t{:.6}\t{:.6}\t{}", e.epoch, e.train_loss, e.val_loss, e.elapsed_ms)?;
            } else {
                writeln!(out, "{}\t{:.6}\t{:.6}\t-", e.epoch, e.train_loss, e.val_loss)?;
            }
        }
        writeln!(out, "selected_epoch\t{}", self.selected_epoch)?;
        Ok(())
    }
}

/// Loss and gradients for a single pair.
pub fn pair_gradients(model: &RankingModel, pair: &PreferencePair) -> Result<(f64, Gradients)> {
    let (f_pos, pos) = score(model, &pair.query, &pair.doc_pos)?;
    let (f_neg, neg) = score(model, &pair.query, &pair.doc_neg)?;
    let loss = hinge_loss(f_pos, f_neg);
    Ok((loss, backward(model, &pos, &neg)?))
}

pub fn pair_loss(model: &RankingModel, pair: &PreferencePair) -> Result<f64> {
    let (f_pos, _) = score(model, &pair.query, &pair.doc_pos)?;
    let (f_neg, _) = score(model, &pair.query, &pair.doc_neg)?;
    Ok(hinge_loss(f_pos, f_neg))
}

pub fn mean_pair_loss(model: &RankingModel, pairs: &[&PreferencePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for p in pairs {
        total += pair_loss(model, p)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Splits pairs by query: a seeded `fraction` of distinct query keys (at
/// least one, when there are two or more queries) goes to validation.
pub fn split_by_query(
    pairs: &[PreferencePair],
    fraction: f64,
    seed: u64,
) -> (Vec<&PreferencePair>, Vec<&PreferencePair>) {
    let keys: BTreeSet<&str> = pairs.iter().map(|p| p.query_key.as_str()).collect();
    let mut keys: Vec<&str> = keys.into_iter().collect();
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_5a11));
    let held = if keys.len() < 2 {
        0
    } else {
        ((keys.len() as f64 * fraction).round() as usize).clamp(1, keys.len() - 1)
    };
    let val_keys: BTreeSet<&str> = keys[..held].iter().copied().collect();
    pairs.iter().partition(|p| !val_keys.contains(p.query_key.as_str()))
}

/// Trains with Adam on shuffled mini-batches and stops early on the
/// validation pair loss. Returns the model from the best validation epoch.
pub fn train(
    mut model: RankingModel,
    pairs: &[PreferencePair],
    config: &TrainConfig,
) -> Result<(RankingModel, TrainReport)> {
    config.validate()?;
    model.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let (mut train_set, val_set) = split_by_query(pairs, config.validation_fraction, config.seed);
    // With a single query there is nothing to hold out; stop on training loss.
    let monitor_train = val_set.is_empty();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(&model, config.adam());
    let mut best_model = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut records = Vec::new();
    let start = Instant::now();

    for epoch in 0..config.max_epochs {
        let last_good = model.clone();
        train_set.shuffle(&mut rng);
        let mut total_loss = 0.0;
        for batch in train_set.chunks(config.batch_size) {
            let mut grads = Gradients::zeros(model.feature_len());
            let mut active = 0usize;
            for pair in batch {
                let (loss, g) = pair_gradients(&model, pair)?;
                total_loss += loss;
                if loss > 0.0 {
                    active += 1;
                    grads.add_scaled(&g, 1.0);
                }
            }
            if !total_loss.is_finite() {
                return Err(Error::Diverged { epoch, snapshot: Box::new(last_good) });
            }
            if active > 0 {
                grads.scale(1.0 / active as f64);
            }
            if let Some(clip) = config.grad_clip {
                let norm = grads.norm();
                if norm > clip {
                    grads.scale(clip / norm);
                }
            }
            adam.step(&mut model, &grads)?;
        }
        let train_loss = total_loss / train_set.len() as f64;
        let val_loss = if monitor_train {
            mean_pair_loss(&model, &train_set)?
        } else {
            mean_pair_loss(&model, &val_set)?
        };
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, snapshot: Box::new(last_good) });
        }
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            elapsed_ms: start.elapsed().as_millis(),
        });
        if val_loss < best_loss {
            best_loss = val_loss;
            best_model = model.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience_epochs {
                break;
            }
        }
    }

    let report = TrainReport {
        epochs: records,
        selected_epoch: best_epoch,
        train_pairs: train_set.len(),
        val_pairs: val_set.len(),
    };
    Ok((best_model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TermIdSequence;
    use crate::embedding::init_random;
    use crate::kernel::KernelBank;
    use crate::model::PoolingMode;

    fn seq(ids: &[usize]) -> TermIdSequence {
        TermIdSequence { ids: ids.to_vec(), original_length: ids.len() }
    }

    /// Query term `q` matches doc term `q` exactly; the positive doc holds it,
    /// the negative one does not.
    fn toy_pairs(queries: usize) -> Vec<PreferencePair> {
        (0..queries)
            .flat_map(|i| {
                let q = 1 + i % 20;
                (0..4).map(move |j| PreferencePair {
                    query_key: format!("q{i}"),
                    query: seq(&[q]),
                    doc_pos: seq(&[q, 21 + (i + j) % 9]),
                    doc_neg: seq(&[21 + (i + 2 * j) % 9, 30 + j]),
                    pos_id: format!("p{j}"),
                    neg_id: format!("n{j}"),
                })
            })
            .collect()
    }

    fn model(frozen: bool) -> RankingModel {
        RankingModel::new(init_random(40, 8, 1), KernelBank::default_bank(), PoolingMode::Kernel, frozen)
    }

    #[test]
    fn stops_after_patience_when_nothing_improves() {
        let cfg = TrainConfig { lr: 1e-300, max_epochs: 50, ..Default::default() };
        let (_, report) = train(model(false), &toy_pairs(40), &cfg).unwrap();
        assert_eq!(report.epochs.len(), 6);
        assert_eq!(report.selected_epoch, 0);
        assert!(report.val_pairs > 0 && report.train_pairs > report.val_pairs);
    }

    #[test]
    fn frozen_embeddings_stay_bit_identical() {
        let m = model(true);
        let cfg = TrainConfig { max_epochs: 3, ..Default::default() };
        let (trained, _) = train(m.clone(), &toy_pairs(40), &cfg).unwrap();
        assert_eq!(trained.embeddings, m.embeddings);
        assert_ne!(trained.ranking, m.ranking);
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let pairs = toy_pairs(40);
        let refs: Vec<&PreferencePair> = pairs.iter().collect();
        let m = model(false);
        let initial = mean_pair_loss(&m, &refs).unwrap();
        let cfg = TrainConfig { lr: 0.01, max_epochs: 40, ..Default::default() };
        let (trained, report) = train(m, &pairs, &cfg).unwrap();
        let last = report.epochs.last().unwrap();
        assert!(last.train_loss < 0.1 * initial, "{initial} -> {report:?}");
        assert!(mean_pair_loss(&trained, &refs).unwrap() < 0.1 * initial);
    }

    #[test]
    fn identical_seeds_reproduce_training() {
        let cfg = TrainConfig { max_epochs: 4, seed: 9, ..Default::default() };
        let (a, ra) = train(model(false), &toy_pairs(30), &cfg).unwrap();
        let (b, rb) = train(model(false), &toy_pairs(30), &cfg).unwrap();
        assert_eq!(a, b);
        let (mut ta, mut tb) = (Vec::new(), Vec::new());
        ra.write_tsv(&mut ta, false).unwrap();
        rb.write_tsv(&mut tb, false).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { validation_fraction: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { grad_clip: Some(-1.0), ..Default::default() }.validate().is_err());
        assert!(matches!(train(model(false), &[], &TrainConfig::default()), Err(Error::EmptyTrainingSet)));
    }

    #[test]
    fn split_holds_out_whole_queries() {
        let pairs = toy_pairs(40);
        let (tr, va) = split_by_query(&pairs, 0.05, 3);
        let val_keys: BTreeSet<&str> = va.iter().map(|p| p.query_key.as_str()).collect();
        assert_eq!(val_keys.len(), 2);
        assert!(tr.iter().all(|p| !val_keys.contains(p.query_key.as_str())));
        assert_eq!(tr.len() + va.len(), pairs.len());
    }
}
