//! Finite-difference verification of [`backward`](super::backward).
//!
//! The oracle only calls the forward scorer: every parameter coordinate is
//! nudged by `+-h` and the pair loss is differenced centrally. Draws where a
//! nudge flips the hinge, crosses the log clamp, or changes a max-pool argmax
//! are non-differentiable there and get redrawn.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::TermIdSequence;
use crate::embedding::init_random;
use crate::error::Result;
use crate::kernel::KernelBank;
use crate::model::{score, ForwardCache, PoolingMode, RankingModel};
use crate::trainer::{backward, hinge_loss, Gradients, PreferencePair};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub draws: usize,
    pub vocab_size: usize,
    pub dim: usize,
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub seed: u64,
    pub kernel_bank: KernelBank,
    pub pooling: PoolingMode,
    /// Upper bound on rejected draws before giving up.
    pub max_redraws: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            draws: 100,
            vocab_size: 50,
            dim: 8,
            step: 1e-5,
            rel_tol: 1e-4,
            abs_tol: 1e-8,
            seed: 0,
            kernel_bank: KernelBank::default_bank(),
            pooling: PoolingMode::Kernel,
            max_redraws: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub draw: usize,
    pub parameter: String,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    pub draws: usize,
    pub redraws: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub mismatches: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self, required_draws: usize) -> bool {
        self.mismatches.is_empty() && self.draws >= required_draws
    }
}

/// Why a draw could not be checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    HingeInactive,
    HingeKink,
    ClampBoundary,
    ArgmaxChange,
}

#[derive(Debug, Clone, Copy)]
enum Coordinate {
    W(usize),
    B,
    Emb(usize, usize),
}

fn param_mut(model: &mut RankingModel, c: Coordinate) -> &mut f64 {
    match c {
        Coordinate::W(k) => &mut model.ranking.w[k],
        Coordinate::B => &mut model.ranking.b,
        Coordinate::Emb(row, l) => &mut model.embeddings.row_mut(row)[l],
    }
}

fn analytic(grads: &Gradients, c: Coordinate) -> f64 {
    match c {
        Coordinate::W(k) => grads.d_w[k],
        Coordinate::B => grads.d_b,
        Coordinate::Emb(row, l) => grads.d_embeddings.get(&row).map_or(0.0, |g| g[l]),
    }
}

fn label(c: Coordinate) -> String {
    match c {
        Coordinate::W(k) => format!("w[{k}]"),
        Coordinate::B => "b".into(),
        Coordinate::Emb(row, l) => format!("embeddings[{row}][{l}]"),
    }
}

struct Probe {
    loss: f64,
    clamp: Vec<bool>,
    argmax: Vec<usize>,
}

fn probe(model: &RankingModel, pair: &PreferencePair) -> Result<Probe> {
    let (fp, pos) = score(model, &pair.query, &pair.doc_pos)?;
    let (fn_, neg) = score(model, &pair.query, &pair.doc_neg)?;
    let clamp_of = |c: &ForwardCache| -> Vec<bool> {
        c.kernel_values.iter().map(|&v| v < model.clamp_floor).collect()
    };
    let mut clamp = clamp_of(&pos);
    clamp.extend(clamp_of(&neg));
    let mut argmax = pos.argmax.clone();
    argmax.extend(&neg.argmax);
    Ok(Probe { loss: hinge_loss(fp, fn_), clamp, argmax })
}

/// Outcome of checking one `(model, pair)` draw.
#[derive(Debug, Clone, Default)]
pub struct PairCheck {
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub mismatches: Vec<(String, f64, f64)>,
}

/// Compares analytic and central-difference gradients for every ranking
/// parameter and every embedding coordinate the pair touches.
pub fn check_pair(
    model: &RankingModel,
    pair: &PreferencePair,
    step: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<std::result::Result<PairCheck, Rejection>> {
    let (fp, pos) = score(model, &pair.query, &pair.doc_pos)?;
    let (fn_, neg) = score(model, &pair.query, &pair.doc_neg)?;
    if hinge_loss(fp, fn_) <= 0.0 {
        return Ok(Err(Rejection::HingeInactive));
    }
    let grads = backward(model, &pos, &neg)?;
    let base = probe(model, pair)?;

    let mut coords: Vec<Coordinate> = (0..model.feature_len()).map(Coordinate::W).collect();
    coords.push(Coordinate::B);
    if !model.embeddings_frozen {
        let mut rows: Vec<usize> = pair
            .query
            .ids
            .iter()
            .chain(&pair.doc_pos.ids)
            .chain(&pair.doc_neg.ids)
            .copied()
            .collect();
        rows.sort_unstable();
        rows.dedup();
        for row in rows {
            coords.extend((0..model.embeddings.dim()).map(|l| Coordinate::Emb(row, l)));
        }
    }

    let mut out = PairCheck::default();
    let mut nudged = model.clone();
    for c in coords {
        let original = *param_mut(&mut nudged, c);
        *param_mut(&mut nudged, c) = original + step;
        let plus = probe(&nudged, pair)?;
        *param_mut(&mut nudged, c) = original - step;
        let minus = probe(&nudged, pair)?;
        *param_mut(&mut nudged, c) = original;

        if plus.loss <= 0.0 || minus.loss <= 0.0 {
            return Ok(Err(Rejection::HingeKink));
        }
        if plus.clamp != base.clamp || minus.clamp != base.clamp {
            return Ok(Err(Rejection::ClampBoundary));
        }
        if plus.argmax != base.argmax || minus.argmax != base.argmax {
            return Ok(Err(Rejection::ArgmaxChange));
        }

        let numeric = (plus.loss - minus.loss) / (2.0 * step);
        let a = analytic(&grads, c);
        let abs_err = (a - numeric).abs();
        let rel_err = abs_err / a.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
        out.coordinates += 1;
        out.max_abs_error = out.max_abs_error.max(abs_err);
        if abs_err > abs_tol {
            out.max_rel_error = out.max_rel_error.max(rel_err);
            if rel_err > rel_tol {
                out.mismatches.push((label(c), a, numeric));
            }
        }
    }
    if model.embeddings_frozen && !grads.d_embeddings.is_empty() {
        out.mismatches.push(("frozen embeddings received gradients".into(), 1.0, 0.0));
    }
    Ok(Ok(out))
}

fn random_sequence(rng: &mut ChaCha8Rng, vocab: usize, min: usize, max: usize) -> TermIdSequence {
    let len = rng.gen_range(min..=max);
    let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(1..vocab)).collect();
    TermIdSequence { original_length: ids.len(), ids }
}

/// Draws a random model and pair. Documents copy a query term half of the
/// time so the exact-match kernel is exercised.
pub fn random_draw(config: &GradCheckConfig, rng: &mut ChaCha8Rng) -> (RankingModel, PreferencePair) {
    let mut embeddings = init_random(config.vocab_size, config.dim, rng.gen());
    embeddings.as_mut_slice().iter_mut().for_each(|x| *x *= 10.0);
    let mut model = RankingModel::new(embeddings, config.kernel_bank.clone(), config.pooling, false);
    let w_scale = match config.pooling {
        PoolingMode::Kernel => 0.05,
        PoolingMode::Mean | PoolingMode::Max => 0.5,
    };
    for w in &mut model.ranking.w {
        *w = rng.gen_range(-w_scale..w_scale);
    }
    model.ranking.b = rng.gen_range(-0.5..0.5);

    let query = random_sequence(rng, config.vocab_size, 1, 3);
    let doc = |rng: &mut ChaCha8Rng| {
        let mut d = random_sequence(rng, config.vocab_size, 2, 8);
        if rng.gen_bool(0.5) {
            let j = rng.gen_range(0..d.ids.len());
            d.ids[j] = query.ids[rng.gen_range(0..query.ids.len())];
        }
        d
    };
    let doc_pos = doc(rng);
    let doc_neg = doc(rng);
    let pair = PreferencePair {
        query_key: "gradcheck".into(),
        query,
        doc_pos,
        doc_neg,
        pos_id: "pos".into(),
        neg_id: "neg".into(),
    };
    (model, pair)
}

/// Runs `config.draws` accepted checks on random models.
pub fn run_gradcheck(config: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = GradCheckReport::default();
    while report.draws < config.draws && report.redraws <= config.max_redraws {
        let (model, pair) = random_draw(config, &mut rng);
        match check_pair(&model, &pair, config.step, config.rel_tol, config.abs_tol)? {
            Err(_) => report.redraws += 1,
            Ok(check) => {
                let draw = report.draws;
                report.draws += 1;
                report.coordinates += check.coordinates;
                report.max_rel_error = report.max_rel_error.max(check.max_rel_error);
                report.max_abs_error = report.max_abs_error.max(check.max_abs_error);
                report.mismatches.extend(check.mismatches.into_iter().map(
                    |(parameter, analytic, numeric)| Mismatch { draw, parameter, analytic, numeric },
                ));
            }
        }
    }
    Ok(report)
}
