//! RBF kernel pooling over a query-document translation matrix.
//!
//! Each kernel `(mu, sigma)` turns one row of cosine similarities into a
//! soft term frequency, `sum_j exp(-(M_ij - mu)^2 / (2 sigma^2))`. The kernel
//! features of a query-document pair are the log of these counts summed over
//! query terms. A wide kernel counts every document word (mean pooling in the
//! limit); `mu = 1` with a tiny sigma counts only exact matches.

use crate::corpus::TermIdSequence;
use crate::embedding::{dot, EmbeddingMatrix, ZERO_NORM};
use crate::error::{Error, Result};

/// Lower bound applied to kernel values before taking the log.
pub const DEFAULT_CLAMP_FLOOR: f64 = 1e-10;

pub const EXACT_MATCH_SIGMA: f64 = 1e-3;
pub const DEFAULT_SOFT_SIGMA: f64 = 0.1;
pub const DEFAULT_SOFT_MUS: [f64; 10] = [0.9, 0.7, 0.5, 0.3, 0.1, -0.1, -0.3, -0.5, -0.7, -0.9];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub mu: f64,
    pub sigma: f64,
}

impl Kernel {
    pub const fn new(mu: f64, sigma: f64) -> Self {
        Self { mu, sigma }
    }

    pub const fn exact_match() -> Self {
        Self::new(1.0, EXACT_MATCH_SIGMA)
    }

    /// `exp(-(x - mu)^2 / (2 sigma^2))`
    #[inline]
    pub fn density(&self, x: f64) -> f64 {
        let d = x - self.mu;
        (-(d * d) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// Ordered set of kernels; `mu` strictly decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    kernels: Vec<Kernel>,
}

impl KernelBank {
    pub fn new(kernels: Vec<Kernel>) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::Invalid("kernel bank needs at least one kernel".into()));
        }
        for k in &kernels {
            if !(k.sigma > 0.0 && k.sigma.is_finite()) {
                return Err(Error::Invalid(format!("kernel sigma must be positive, got {}", k.sigma)));
            }
            if !(-1.0..=1.0).contains(&k.mu) {
                return Err(Error::Invalid(format!("kernel mu {} outside [-1, 1]", k.mu)));
            }
        }
        if kernels.windows(2).any(|w| w[0].mu <= w[1].mu) {
            return Err(Error::Invalid("kernel mus must be strictly decreasing".into()));
        }
        Ok(Self { kernels })
    }

    /// Exact-match kernel followed by ten soft kernels of width 0.1.
    pub fn default_bank() -> Self {
        Self::with_soft_sigma(DEFAULT_SOFT_SIGMA).expect("default bank is valid")
    }

    /// The default layout with every soft kernel's width set to `sigma`; the
    /// exact-match kernel is unchanged.
    pub fn with_soft_sigma(sigma: f64) -> Result<Self> {
        let mut kernels = vec![Kernel::exact_match()];
        kernels.extend(DEFAULT_SOFT_MUS.iter().map(|&mu| Kernel::new(mu, sigma)));
        Self::new(kernels)
    }

    pub fn exact_match_only() -> Self {
        Self { kernels: vec![Kernel::exact_match()] }
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    /// Index of the kernel whose `mu` is closest to `x` (first on ties).
    pub fn nearest(&self, x: f64) -> usize {
        let mut best = 0;
        for (k, kernel) in self.kernels.iter().enumerate() {
            if (x - kernel.mu).abs() < (x - self.kernels[best].mu).abs() {
                best = k;
            }
        }
        best
    }
}

impl Default for KernelBank {
    fn default() -> Self {
        Self::default_bank()
    }
}

/// Row-major `n x m` matrix of query-document cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslationMatrix {
    data: Vec<f64>,
    n: usize,
    m: usize,
}

impl TranslationMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || m == 0 {
            return Err(Error::EmptyInput("translation matrix"));
        }
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Invalid("ragged translation matrix".into()));
        }
        let n = rows.len();
        Ok(Self { data: rows.into_iter().flatten().collect(), n, m })
    }

    /// Query length.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Document length.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.m)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Cosine similarity of every query term against every document term.
pub fn translation_matrix(
    emb: &EmbeddingMatrix,
    q: &TermIdSequence,
    d: &TermIdSequence,
) -> Result<TranslationMatrix> {
    if q.is_empty() {
        return Err(Error::EmptyInput("query"));
    }
    if d.is_empty() {
        return Err(Error::EmptyInput("document"));
    }
    let q_norms: Vec<f64> = q.ids.iter().map(|&t| emb.norm(t)).collect();
    let d_norms: Vec<f64> = d.ids.iter().map(|&t| emb.norm(t)).collect();
    let mut data = Vec::with_capacity(q.len() * d.len());
    for (&qt, &qn) in q.ids.iter().zip(&q_norms) {
        for (&dt, &dn) in d.ids.iter().zip(&d_norms) {
            let c = if qn < ZERO_NORM || dn < ZERO_NORM {
                0.0
            } else {
                dot(emb.row(qt), emb.row(dt)) / (qn * dn)
            };
            data.push(c);
        }
    }
    Ok(TranslationMatrix { data, n: q.len(), m: d.len() })
}

/// Soft term frequency of one translation-matrix row under one kernel.
pub fn rbf_kernel_row(kernel: &Kernel, row: &[f64]) -> f64 {
    row.iter().map(|&x| kernel.density(x)).sum()
}

/// Kernel-pooled ranking features, one per kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTfFeatures {
    pub phi: Vec<f64>,
}

/// Per-row kernel values `K_k(M_i)`, laid out `n x K`.
pub(crate) fn kernel_values(bank: &KernelBank, m: &TranslationMatrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.n() * bank.len());
    for row in m.rows() {
        out.extend(bank.kernels().iter().map(|k| rbf_kernel_row(k, row)));
    }
    out
}

pub(crate) fn log_sum(values: &[f64], kernels: usize, floor: f64) -> Vec<f64> {
    let mut phi = vec![0.0; kernels];
    for row in values.chunks_exact(kernels) {
        for (p, &v) in phi.iter_mut().zip(row) {
            *p += v.max(floor).ln();
        }
    }
    phi
}

/// `phi[k] = sum_i log(max(K_k(M_i), floor))`.
pub fn kernel_pool(bank: &KernelBank, m: &TranslationMatrix, floor: f64) -> SoftTfFeatures {
    let values = kernel_values(bank, m);
    SoftTfFeatures { phi: log_sum(&values, bank.len(), floor) }
}

/// Mean of all entries.
pub fn mean_pool(m: &TranslationMatrix) -> [f64; 1] {
    [m.as_slice().iter().sum::<f64>() / m.as_slice().len() as f64]
}

/// Sum over query terms of the best-matching document term similarity.
pub fn max_pool(m: &TranslationMatrix) -> [f64; 1] {
    [m.rows().map(|r| r[argmax(r)]).sum()]
}

/// Index of the largest entry; first index on ties.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(rows: &[&[f64]]) -> TranslationMatrix {
        TranslationMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn default_bank_layout() {
        let bank = KernelBank::default_bank();
        assert_eq!(bank.len(), 11);
        assert_eq!(bank.kernels()[0], Kernel::new(1.0, 0.001));
        assert_eq!(bank.kernels()[1], Kernel::new(0.9, 0.1));
        assert_eq!(bank.kernels()[10], Kernel::new(-0.9, 0.1));
        assert!(bank.kernels().windows(2).all(|w| w[0].mu > w[1].mu));
    }

    #[test]
    fn bank_validation() {
        assert!(KernelBank::new(vec![]).is_err());
        assert!(KernelBank::new(vec![Kernel::new(0.5, 0.0)]).is_err());
        assert!(KernelBank::new(vec![Kernel::new(1.5, 0.1)]).is_err());
        assert!(KernelBank::new(vec![Kernel::new(0.1, 0.1), Kernel::new(0.5, 0.1)]).is_err());
        assert!(KernelBank::new(vec![Kernel::new(0.5, 0.1), Kernel::new(0.5, 0.1)]).is_err());
    }

    #[test]
    fn nearest_kernel() {
        let bank = KernelBank::default_bank();
        assert_eq!(bank.nearest(1.0), 0);
        assert_eq!(bank.nearest(0.92), 1);
        assert_eq!(bank.nearest(0.0), 5);
        assert_eq!(bank.nearest(-1.0), 10);
    }

    #[test]
    fn translation_matrix_shapes_and_values() {
        let emb = EmbeddingMatrix::from_rows(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let seq = |ids: &[usize]| TermIdSequence { ids: ids.to_vec(), original_length: ids.len() };
        let m = translation_matrix(&emb, &seq(&[1]), &seq(&[1])).unwrap();
        assert_eq!(m.as_slice(), &[1.0]);
        let m = translation_matrix(&emb, &seq(&[1]), &seq(&[2])).unwrap();
        assert_eq!(m.as_slice(), &[0.0]);
        let m = translation_matrix(&emb, &seq(&[1, 2]), &seq(&[1, 2, 0])).unwrap();
        assert_eq!((m.n(), m.m()), (2, 3));
        assert_eq!(m.get(1, 2), 0.0);
        assert!(matches!(
            translation_matrix(&emb, &seq(&[]), &seq(&[1])),
            Err(Error::EmptyInput(_))
        ));
        assert!(translation_matrix(&emb, &seq(&[1]), &seq(&[])).is_err());
    }

    #[test]
    fn rbf_examples() {
        assert_eq!(rbf_kernel_row(&Kernel::new(0.9, 0.1), &[0.9]), 1.0);
        let exact = rbf_kernel_row(&Kernel::exact_match(), &[1.0, 1.0, 0.5]);
        assert!((exact - 2.0).abs() < 1e-9);
        let far = rbf_kernel_row(&Kernel::new(0.9, 0.1), &[0.5]);
        assert!((far - (-8.0f64).exp()).abs() < 1e-15);
        assert!((far - 3.3546e-4).abs() < 1e-8);
    }

    #[test]
    fn kernel_pool_examples() {
        let bank = KernelBank::new(vec![Kernel::new(0.5, 0.1)]).unwrap();
        let one = kernel_pool(&bank, &matrix(&[&[0.5]]), DEFAULT_CLAMP_FLOOR);
        assert_eq!(one.phi, vec![0.0]);

        let bank = KernelBank::default_bank();
        let single = kernel_pool(&bank, &matrix(&[&[0.3, -0.2, 0.8]]), DEFAULT_CLAMP_FLOOR);
        let double = kernel_pool(
            &bank,
            &matrix(&[&[0.3, -0.2, 0.8], &[0.3, -0.2, 0.8]]),
            DEFAULT_CLAMP_FLOOR,
        );
        for (s, d) in single.phi.iter().zip(&double.phi) {
            assert_eq!(2.0 * s, *d);
        }

        let m = matrix(&[&[0.5, 0.1], &[-0.3, 0.2], &[0.0, 0.45]]);
        let phi = kernel_pool(&bank, &m, DEFAULT_CLAMP_FLOOR).phi;
        assert_eq!(phi[0], 3.0 * DEFAULT_CLAMP_FLOOR.ln());
    }

    #[test]
    fn mean_and_max_pool() {
        assert_eq!(mean_pool(&matrix(&[&[1.0, 1.0], &[1.0, 1.0]])), [1.0]);
        assert_eq!(mean_pool(&matrix(&[&[1.0, 0.0], &[-1.0, 0.0]])), [0.0]);
        assert!((mean_pool(&matrix(&[&[0.2, 0.4]]))[0] - 0.3).abs() < 1e-15);

        assert_eq!(max_pool(&matrix(&[&[0.1, 0.9, -0.5]])), [0.9]);
        assert_eq!(max_pool(&matrix(&[&[1.0, 0.2], &[0.5, -0.1]])), [1.5]);
        assert_eq!(max_pool(&matrix(&[&[0.25; 4], &[0.25; 4], &[0.25; 4]])), [0.75]);
        assert_eq!(argmax(&[0.3, 0.7, 0.7]), 1);
    }

    #[test]
    fn sharp_exact_kernel_counts_matches() {
        let row = [1.0, 0.9, 1.0 - 1e-7, -0.4, 0.2, 1.0];
        let count = row.iter().filter(|&&x| x >= 1.0 - 1e-6).count() as f64;
        assert!((rbf_kernel_row(&Kernel::exact_match(), &row) - count).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn flat_kernels_approach_document_length(
            row in prop::collection::vec(-1.0f64..=1.0, 1..40),
            mu in -1.0f64..=1.0,
        ) {
            // 1 - exp(-t) <= t, so the relative gap is bounded by the
            // largest (x - mu)^2 / (2 sigma^2); that is 1e-4 once
            // |x - mu| <= sqrt(2).
            let m = row.len() as f64;
            let v = rbf_kernel_row(&Kernel::new(mu, 100.0), &row);
            let bound = row.iter().map(|x| (x - mu).powi(2)).fold(0.0, f64::max) / 2e4;
            prop_assert!((v - m).abs() / m <= bound + 1e-15);
            if row.iter().all(|x| (x - mu).abs() <= 2f64.sqrt()) {
                prop_assert!((v - m).abs() / m <= 1e-4);
            }
        }

        #[test]
        fn kernel_pool_is_permutation_invariant_in_document(
            row in prop::collection::vec(-1.0f64..=1.0, 2..12),
            rot in 0usize..12,
        ) {
            let bank = KernelBank::default_bank();
            let mut shuffled = row.clone();
            let r = rot % row.len();
            shuffled.rotate_left(r);
            shuffled.reverse();
            let a = kernel_pool(&bank, &matrix(&[&row]), DEFAULT_CLAMP_FLOOR);
            let b = kernel_pool(&bank, &matrix(&[&shuffled]), DEFAULT_CLAMP_FLOOR);
            for (x, y) in a.phi.iter().zip(&b.phi) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn kernel_pool_is_additive_over_query_rows(
            r1 in prop::collection::vec(-1.0f64..=1.0, 3),
            r2 in prop::collection::vec(-1.0f64..=1.0, 3),
        ) {
            let bank = KernelBank::default_bank();
            let both = kernel_pool(&bank, &matrix(&[&r1, &r1, &r2]), DEFAULT_CLAMP_FLOOR);
            let a = kernel_pool(&bank, &matrix(&[&r1]), DEFAULT_CLAMP_FLOOR);
            let b = kernel_pool(&bank, &matrix(&[&r2]), DEFAULT_CLAMP_FLOOR);
            for k in 0..bank.len() {
                let expected = 2.0 * a.phi[k] + b.phi[k];
                prop_assert!((both.phi[k] - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
            }
        }
    }
}
