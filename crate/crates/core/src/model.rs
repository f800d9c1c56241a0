//! The ranking model: embeddings, a pooling layer, and `tanh(w . phi + b)`.

use std::fmt;
use std::str::FromStr;

use crate::corpus::TermIdSequence;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::kernel::{
    argmax, kernel_values, log_sum, mean_pool, translation_matrix, KernelBank, TranslationMatrix,
    DEFAULT_CLAMP_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolingMode {
    #[default]
    Kernel,
    Mean,
    Max,
}

impl fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolingMode::Kernel => "kernel",
            PoolingMode::Mean => "mean",
            PoolingMode::Max => "max",
        })
    }
}

impl FromStr for PoolingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kernel" => Ok(PoolingMode::Kernel),
            "mean" => Ok(PoolingMode::Mean),
            "max" => Ok(PoolingMode::Max),
            other => Err(Error::Invalid(format!("unknown pooling mode `{other}`"))),
        }
    }
}

/// Named model configurations used in ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelVariant {
    /// Kernel pooling with trainable embeddings.
    #[default]
    Full,
    /// Only the exact-match kernel.
    ExactMatch,
    /// Kernel pooling over fixed (pre-trained) embeddings.
    Frozen,
    MeanPool,
    MaxPool,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 5] = [
        ModelVariant::Full,
        ModelVariant::ExactMatch,
        ModelVariant::Frozen,
        ModelVariant::MeanPool,
        ModelVariant::MaxPool,
    ];

    pub fn pooling(self) -> PoolingMode {
        match self {
            ModelVariant::MeanPool => PoolingMode::Mean,
            ModelVariant::MaxPool => PoolingMode::Max,
            _ => PoolingMode::Kernel,
        }
    }

    pub fn embeddings_frozen(self) -> bool {
        self == ModelVariant::Frozen
    }

    /// Kernel bank for this variant, given the bank the full model would use.
    pub fn kernel_bank(self, full: &KernelBank) -> KernelBank {
        match self {
            ModelVariant::ExactMatch => KernelBank::exact_match_only(),
            _ => full.clone(),
        }
    }

    pub fn build(self, embeddings: EmbeddingMatrix, full_bank: &KernelBank) -> RankingModel {
        RankingModel::new(
            embeddings,
            self.kernel_bank(full_bank),
            self.pooling(),
            self.embeddings_frozen(),
        )
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelVariant::Full => "full",
            ModelVariant::ExactMatch => "exact-match",
            ModelVariant::Frozen => "frozen",
            ModelVariant::MeanPool => "mean-pool",
            ModelVariant::MaxPool => "max-pool",
        })
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ModelVariant::Full),
            "exact-match" | "exact" => Ok(ModelVariant::ExactMatch),
            "frozen" | "word2vec" => Ok(ModelVariant::Frozen),
            "mean-pool" | "mean" => Ok(ModelVariant::MeanPool),
            "max-pool" | "max" => Ok(ModelVariant::MaxPool),
            other => Err(Error::Invalid(format!("unknown model variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingParams {
    pub w: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingModel {
    pub embeddings: EmbeddingMatrix,
    pub kernel_bank: KernelBank,
    pub ranking: RankingParams,
    pub pooling: PoolingMode,
    pub embeddings_frozen: bool,
    pub clamp_floor: f64,
}

impl RankingModel {
    /// A model with zero ranking weights.
    pub fn new(
        embeddings: EmbeddingMatrix,
        kernel_bank: KernelBank,
        pooling: PoolingMode,
        embeddings_frozen: bool,
    ) -> Self {
        let features = match pooling {
            PoolingMode::Kernel => kernel_bank.len(),
            PoolingMode::Mean | PoolingMode::Max => 1,
        };
        Self {
            embeddings,
            kernel_bank,
            ranking: RankingParams { w: vec![0.0; features], b: 0.0 },
            pooling,
            embeddings_frozen,
            clamp_floor: DEFAULT_CLAMP_FLOOR,
        }
    }

    pub fn feature_len(&self) -> usize {
        self.ranking.w.len()
    }

    pub fn validate(&self) -> Result<()> {
        let expected = match self.pooling {
            PoolingMode::Kernel => self.kernel_bank.len(),
            PoolingMode::Mean | PoolingMode::Max => 1,
        };
        if self.ranking.w.len() != expected {
            return Err(Error::Invalid(format!(
                "{} ranking weights for {} pooling with {} kernels",
                self.ranking.w.len(),
                self.pooling,
                self.kernel_bank.len()
            )));
        }
        if !(self.clamp_floor > 0.0 && self.clamp_floor.is_finite()) {
            return Err(Error::Invalid("clamp floor must be positive".into()));
        }
        if self.ranking.w.iter().any(|x| !x.is_finite()) || !self.ranking.b.is_finite() {
            return Err(Error::NonFinite { block: "ranking".into() });
        }
        if self.embeddings.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { block: "embeddings".into() });
        }
        Ok(())
    }
}

/// Intermediates of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub query: Vec<usize>,
    pub doc: Vec<usize>,
    pub matrix: TranslationMatrix,
    /// `K_k(M_i)` laid out `n x K`; empty unless pooling is `Kernel`.
    pub kernel_values: Vec<f64>,
    /// Per-row argmax column; empty unless pooling is `Max`.
    pub argmax: Vec<usize>,
    pub phi: Vec<f64>,
    pub pre_activation: f64,
    pub score: f64,
}

/// Features for the model's pooling mode.
pub fn features(model: &RankingModel, m: &TranslationMatrix) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    match model.pooling {
        PoolingMode::Kernel => {
            let values = kernel_values(&model.kernel_bank, m);
            let phi = log_sum(&values, model.kernel_bank.len(), model.clamp_floor);
            (phi, values, Vec::new())
        }
        PoolingMode::Mean => (mean_pool(m).to_vec(), Vec::new(), Vec::new()),
        PoolingMode::Max => {
            let arg: Vec<usize> = m.rows().map(argmax).collect();
            let phi = m.rows().zip(&arg).map(|(r, &j)| r[j]).sum();
            (vec![phi], Vec::new(), arg)
        }
    }
}

/// `f(q, d) = tanh(w . phi + b)`.
pub fn score(
    model: &RankingModel,
    q: &TermIdSequence,
    d: &TermIdSequence,
) -> Result<(f64, ForwardCache)> {
    let matrix = translation_matrix(&model.embeddings, q, d)?;
    let (phi, kernel_values, argmax) = features(model, &matrix);
    if phi.len() != model.ranking.w.len() {
        return Err(Error::Internal(format!(
            "feature length {} does not match {} weights",
            phi.len(),
            model.ranking.w.len()
        )));
    }
    let pre_activation =
        phi.iter().zip(&model.ranking.w).map(|(p, w)| p * w).sum::<f64>() + model.ranking.b;
    let f = pre_activation.tanh();
    let cache = ForwardCache {
        query: q.ids.clone(),
        doc: d.ids.clone(),
        matrix,
        kernel_values,
        argmax,
        phi,
        pre_activation,
        score: f,
    };
    Ok((f, cache))
}

/// A ranked candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranked {
    pub doc_id: String,
    pub score: f64,
    pub pre_activation: f64,
}

/// Sorts candidates by descending score. Scores that tie after `tanh`
/// saturates fall back to the pre-activation, then to ascending doc id.
pub fn rank(
    model: &RankingModel,
    q: &TermIdSequence,
    candidates: &[(String, TermIdSequence)],
) -> Result<Vec<Ranked>> {
    let mut out = Vec::with_capacity(candidates.len());
    for (doc_id, d) in candidates {
        let (f, cache) = score(model, q, d)?;
        out.push(Ranked { doc_id: doc_id.clone(), score: f, pre_activation: cache.pre_activation });
    }
    sort_ranked(&mut out);
    Ok(out)
}

pub fn sort_ranked(items: &mut [Ranked]) {
    items.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| b.pre_activation.total_cmp(&a.pre_activation))
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::init_random;
    use crate::kernel::Kernel;

    fn seq(ids: &[usize]) -> TermIdSequence {
        TermIdSequence { ids: ids.to_vec(), original_length: ids.len() }
    }

    fn model() -> RankingModel {
        RankingModel::new(init_random(10, 6, 3), KernelBank::default_bank(), PoolingMode::Kernel, false)
    }

    #[test]
    fn zero_weights_score_zero() {
        let (f, cache) = score(&model(), &seq(&[1, 2]), &seq(&[3, 4, 1])).unwrap();
        assert_eq!(f, 0.0);
        assert_eq!(cache.phi.len(), 11);
        assert_eq!((cache.matrix.n(), cache.matrix.m()), (2, 3));
    }

    #[test]
    fn bias_only_is_tanh_of_bias() {
        let mut m = model();
        m.ranking.b = 1.0;
        let (f, _) = score(&m, &seq(&[1]), &seq(&[2])).unwrap();
        assert!((f - 0.7615942).abs() < 1e-7);
    }

    #[test]
    fn score_increases_with_weighted_feature() {
        let mut m = RankingModel::new(
            init_random(6, 4, 1),
            KernelBank::new(vec![Kernel::new(0.0, 0.5)]).unwrap(),
            PoolingMode::Kernel,
            false,
        );
        m.ranking.w = vec![0.1];
        let q = seq(&[1]);
        let (f1, c1) = score(&m, &q, &seq(&[2])).unwrap();
        let (f2, c2) = score(&m, &q, &seq(&[2, 3])).unwrap();
        assert!(c2.phi[0] > c1.phi[0]);
        assert!(f2 > f1);
    }

    #[test]
    fn empty_inputs_error() {
        assert!(matches!(score(&model(), &seq(&[]), &seq(&[1])), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn rank_orders_and_breaks_ties() {
        let mut items = vec![
            Ranked { doc_id: "A".into(), score: 0.5, pre_activation: 0.55 },
            Ranked { doc_id: "B".into(), score: 0.9, pre_activation: 1.47 },
        ];
        sort_ranked(&mut items);
        assert_eq!(items[0].doc_id, "B");

        let mut tied = vec![
            Ranked { doc_id: "B".into(), score: 0.5, pre_activation: 0.55 },
            Ranked { doc_id: "A".into(), score: 0.5, pre_activation: 0.55 },
        ];
        sort_ranked(&mut tied);
        assert_eq!(tied[0].doc_id, "A");

        let m = model();
        let single = rank(&m, &seq(&[1]), &[("only".to_string(), seq(&[2]))]).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].doc_id, "only");
    }

    #[test]
    fn variants_wire_pooling_and_banks() {
        let emb = init_random(5, 3, 0);
        let bank = KernelBank::default_bank();
        let exact = ModelVariant::ExactMatch.build(emb.clone(), &bank);
        assert_eq!(exact.kernel_bank.len(), 1);
        assert_eq!(exact.ranking.w.len(), 1);
        let frozen = ModelVariant::Frozen.build(emb.clone(), &bank);
        assert!(frozen.embeddings_frozen);
        assert_eq!(frozen.ranking.w.len(), 11);
        let mean = ModelVariant::MeanPool.build(emb, &bank);
        assert_eq!(mean.pooling, PoolingMode::Mean);
        assert_eq!(mean.ranking.w.len(), 1);
        for v in ModelVariant::ALL {
            assert_eq!(v.to_string().parse::<ModelVariant>().unwrap(), v);
        }
    }

    #[test]
    fn tanh_preserves_pre_activation_order() {
        let mut m = model();
        m.ranking.w = (0..11).map(|k| 0.01 * (k as f64 - 5.0)).collect();
        m.ranking.b = -0.2;
        let q = seq(&[1, 2]);
        let docs: Vec<_> = (0..6).map(|i| seq(&[i + 1, (i + 3) % 10])).collect();
        let caches: Vec<_> = docs.iter().map(|d| score(&m, &q, d).unwrap().1).collect();
        for a in &caches {
            for b in &caches {
                assert_eq!(
                    (a.score - b.score).partial_cmp(&0.0),
                    (a.pre_activation - b.pre_activation).partial_cmp(&0.0)
                );
            }
        }
    }
}
