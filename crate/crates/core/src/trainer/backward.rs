//! Analytic gradients of the pairwise hinge loss.
//!
//! The chain runs from the loss through `tanh`, the ranking layer, the log of
//! each kernel value, the RBF kernels, the cosine similarities, and finally
//! into the embedding rows that appear in the pair.

use std::collections::BTreeMap;

use crate::embedding::{dot, ZERO_NORM};
use crate::error::{Error, Result};
use crate::model::{ForwardCache, PoolingMode, RankingModel};

/// `max(0, 1 - f_pos + f_neg)`.
pub fn hinge_loss(f_pos: f64, f_neg: f64) -> f64 {
    (1.0 - f_pos + f_neg).max(0.0)
}

/// Gradients with respect to the ranking parameters and the embedding rows
/// touched by a pair or batch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    pub d_w: Vec<f64>,
    pub d_b: f64,
    pub d_embeddings: BTreeMap<usize, Vec<f64>>,
}

impl Gradients {
    pub fn zeros(features: usize) -> Self {
        Self { d_w: vec![0.0; features], d_b: 0.0, d_embeddings: BTreeMap::new() }
    }

    pub fn is_zero(&self) -> bool {
        self.d_w.iter().all(|&x| x == 0.0)
            && self.d_b == 0.0
            && self.d_embeddings.values().flatten().all(|&x| x == 0.0)
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        if self.d_w.len() < other.d_w.len() {
            self.d_w.resize(other.d_w.len(), 0.0);
        }
        for (a, b) in self.d_w.iter_mut().zip(&other.d_w) {
            *a += scale * b;
        }
        self.d_b += scale * other.d_b;
        for (&row, g) in &other.d_embeddings {
            let acc = self.d_embeddings.entry(row).or_insert_with(|| vec![0.0; g.len()]);
            for (a, b) in acc.iter_mut().zip(g) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.d_w.iter_mut().for_each(|x| *x *= s);
        self.d_b *= s;
        self.d_embeddings.values_mut().flatten().for_each(|x| *x *= s);
    }

    pub fn norm(&self) -> f64 {
        let sq: f64 = self.d_w.iter().map(|x| x * x).sum::<f64>()
            + self.d_b * self.d_b
            + self.d_embeddings.values().flatten().map(|x| x * x).sum::<f64>();
        sq.sqrt()
    }

    /// Names the first parameter block holding a non-finite value.
    pub fn check_finite(&self) -> Result<()> {
        if self.d_w.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { block: "w".into() });
        }
        if !self.d_b.is_finite() {
            return Err(Error::NonFinite { block: "b".into() });
        }
        for (row, g) in &self.d_embeddings {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { block: format!("embeddings[{row}]") });
            }
        }
        Ok(())
    }
}

/// Gradients of `hinge_loss(f(q, d+), f(q, d-))` given the forward caches of
/// both documents. Zero when the hinge is inactive.
pub fn backward(
    model: &RankingModel,
    pos: &ForwardCache,
    neg: &ForwardCache,
) -> Result<Gradients> {
    let mut grads = Gradients::zeros(model.feature_len());
    if hinge_loss(pos.score, neg.score) <= 0.0 {
        return Ok(grads);
    }
    accumulate_document(model, pos, -1.0, &mut grads)?;
    accumulate_document(model, neg, 1.0, &mut grads)?;
    Ok(grads)
}

/// Adds `outer * d f(q, d) / d theta` for one document of the pair.
pub(crate) fn accumulate_document(
    model: &RankingModel,
    cache: &ForwardCache,
    outer: f64,
    grads: &mut Gradients,
) -> Result<()> {
    let n = cache.matrix.n();
    let m = cache.matrix.m();
    let features = model.feature_len();
    if cache.phi.len() != features
        || cache.query.len() != n
        || cache.doc.len() != m
        || grads.d_w.len() != features
    {
        return Err(Error::Internal("forward cache does not match the model".into()));
    }

    let dz = outer * (1.0 - cache.score * cache.score);
    for (g, p) in grads.d_w.iter_mut().zip(&cache.phi) {
        *g += dz * p;
    }
    grads.d_b += dz;
    if model.embeddings_frozen {
        return Ok(());
    }

    // Upstream gradient on each translation-matrix entry.
    let mut d_matrix = vec![0.0; n * m];
    match model.pooling {
        PoolingMode::Kernel => {
            let kernels = model.kernel_bank.kernels();
            if cache.kernel_values.len() != n * kernels.len() {
                return Err(Error::Internal("kernel values missing from cache".into()));
            }
            for i in 0..n {
                let row = cache.matrix.row(i);
                let out = &mut d_matrix[i * m..(i + 1) * m];
                for (k, kernel) in kernels.iter().enumerate() {
                    let value = cache.kernel_values[i * kernels.len() + k];
                    // Clamped values carry no gradient.
                    if value < model.clamp_floor {
                        continue;
                    }
                    let d_value = dz * model.ranking.w[k] / value;
                    if d_value == 0.0 {
                        continue;
                    }
                    let inv_var = 1.0 / (kernel.sigma * kernel.sigma);
                    for (o, &x) in out.iter_mut().zip(row) {
                        *o += d_value * kernel.density(x) * (kernel.mu - x) * inv_var;
                    }
                }
            }
        }
        PoolingMode::Mean => {
            let g = dz * model.ranking.w[0] / (n * m) as f64;
            d_matrix.iter_mut().for_each(|x| *x = g);
        }
        PoolingMode::Max => {
            if cache.argmax.len() != n {
                return Err(Error::Internal("argmax missing from cache".into()));
            }
            for (i, &j) in cache.argmax.iter().enumerate() {
                d_matrix[i * m + j] = dz * model.ranking.w[0];
            }
        }
    }

    backprop_cosine(model, cache, &d_matrix, grads);
    Ok(())
}

/// Pushes `dL/dM_ij` through `M_ij = a.b / (|a||b|)` into the embedding rows.
fn backprop_cosine(
    model: &RankingModel,
    cache: &ForwardCache,
    d_matrix: &[f64],
    grads: &mut Gradients,
) {
    let emb = &model.embeddings;
    let dim = emb.dim();
    let m = cache.doc.len();
    let d_norms: Vec<f64> = cache.doc.iter().map(|&t| emb.norm(t)).collect();
    for (i, &qt) in cache.query.iter().enumerate() {
        let a = emb.row(qt);
        let na = dot(a, a).sqrt();
        if na < ZERO_NORM {
            continue;
        }
        for (j, &dt) in cache.doc.iter().enumerate() {
            let g = d_matrix[i * m + j];
            let nb = d_norms[j];
            if g == 0.0 || nb < ZERO_NORM {
                continue;
            }
            let b = emb.row(dt);
            let c = cache.matrix.get(i, j);
            let inv_ab = 1.0 / (na * nb);
            let ca = c / (na * na);
            let cb = c / (nb * nb);
            let ga = grads.d_embeddings.entry(qt).or_insert_with(|| vec![0.0; dim]);
            for l in 0..dim {
                ga[l] += g * (b[l] * inv_ab - ca * a[l]);
            }
            let gb = grads.d_embeddings.entry(dt).or_insert_with(|| vec![0.0; dim]);
            for l in 0..dim {
                gb[l] += g * (a[l] * inv_ab - cb * b[l]);
            }
        }
    }
}
