//! Adam with bias correction. Embedding rows are updated lazily: a row's
//! moments and values change only on steps where the row has a gradient.

use crate::error::{Error, Result};
use crate::model::RankingModel;
use crate::trainer::Gradients;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-5 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m_w: Vec<f64>,
    v_w: Vec<f64>,
    m_b: f64,
    v_b: f64,
    m_emb: Vec<f64>,
    v_emb: Vec<f64>,
}

struct Corrections {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bias1: f64,
    bias2: f64,
}

impl Corrections {
    #[inline]
    fn update(&self, param: &mut f64, m: &mut f64, v: &mut f64, g: f64) {
        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
        let m_hat = *m / self.bias1;
        let v_hat = *v / self.bias2;
        *param -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
    }
}

impl AdamState {
    pub fn new(model: &RankingModel, config: AdamConfig) -> Self {
        let emb = if model.embeddings_frozen { 0 } else { model.embeddings.as_slice().len() };
        Self {
            config,
            step: 0,
            m_w: vec![0.0; model.feature_len()],
            v_w: vec![0.0; model.feature_len()],
            m_b: 0.0,
            v_b: 0.0,
            m_emb: vec![0.0; emb],
            v_emb: vec![0.0; emb],
        }
    }

    /// Applies one update. Fails without touching the model if any gradient
    /// is non-finite or shaped differently from the model.
    pub fn step(&mut self, model: &mut RankingModel, grads: &Gradients) -> Result<()> {
        grads.check_finite()?;
        if grads.d_w.len() != model.ranking.w.len() || self.m_w.len() != model.ranking.w.len() {
            return Err(Error::Internal("gradient shape does not match ranking weights".into()));
        }
        let dim = model.embeddings.dim();
        let rows = model.embeddings.rows();
        if !model.embeddings_frozen {
            for (&row, g) in &grads.d_embeddings {
                if row >= rows || g.len() != dim {
                    return Err(Error::Internal(format!("bad embedding gradient for row {row}")));
                }
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c = Corrections {
            lr: self.config.lr,
            beta1: self.config.beta1,
            beta2: self.config.beta2,
            eps: self.config.eps,
            bias1: 1.0 - self.config.beta1.powi(t),
            bias2: 1.0 - self.config.beta2.powi(t),
        };

        for (k, &g) in grads.d_w.iter().enumerate() {
            c.update(&mut model.ranking.w[k], &mut self.m_w[k], &mut self.v_w[k], g);
        }
        c.update(&mut model.ranking.b, &mut self.m_b, &mut self.v_b, grads.d_b);

        if model.embeddings_frozen {
            return Ok(());
        }
        let params = model.embeddings.as_mut_slice();
        for (&row, g) in &grads.d_embeddings {
            let base = row * dim;
            for (l, &gl) in g.iter().enumerate() {
                let i = base + l;
                c.update(&mut params[i], &mut self.m_emb[i], &mut self.v_emb[i], gl);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::init_random;
    use crate::kernel::KernelBank;
    use crate::model::PoolingMode;

    fn model() -> RankingModel {
        RankingModel::new(init_random(4, 3, 0), KernelBank::exact_match_only(), PoolingMode::Kernel, false)
    }

    #[test]
    fn first_step_magnitude() {
        let mut m = model();
        let mut state = AdamState::new(&m, AdamConfig::default());
        let mut g = Gradients::zeros(1);
        g.d_b = 1.0;
        state.step(&mut m, &g).unwrap();
        let expected = 0.001 / (1.0 + 1e-5);
        assert!((m.ranking.b + expected).abs() < 1e-15, "{}", m.ranking.b);
        assert!((expected - 9.99990e-4).abs() < 1e-9);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = model();
        let before = m.clone();
        let mut state = AdamState::new(&m, AdamConfig::default());
        let mut g = Gradients::zeros(1);
        g.d_embeddings.insert(2, vec![0.0; 3]);
        state.step(&mut m, &g).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn untouched_rows_are_not_updated() {
        let mut m = model();
        let before = m.clone();
        let mut state = AdamState::new(&m, AdamConfig::default());
        let mut g = Gradients::zeros(1);
        g.d_embeddings.insert(1, vec![0.5, -0.5, 1.0]);
        for _ in 0..3 {
            state.step(&mut m, &g).unwrap();
        }
        assert_ne!(m.embeddings.row(1), before.embeddings.row(1));
        for row in [0, 2, 3] {
            assert_eq!(m.embeddings.row(row), before.embeddings.row(row));
        }
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut m = model();
        let mut state = AdamState::new(&m, AdamConfig::default());
        let mut g = Gradients::zeros(1);
        g.d_embeddings.insert(3, vec![0.0, f64::NAN, 0.0]);
        match state.step(&mut m, &g) {
            Err(Error::NonFinite { block }) => assert_eq!(block, "embeddings[3]"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(state.step, 0);
    }

    #[test]
    fn identical_runs_are_identical() {
        let run = || {
            let mut m = model();
            let mut state = AdamState::new(&m, AdamConfig::default());
            for s in 0..20 {
                let mut g = Gradients::zeros(1);
                g.d_w[0] = (s as f64).sin();
                g.d_b = (s as f64).cos();
                g.d_embeddings.insert(s % 4, vec![0.1 * s as f64, -0.2, 0.3]);
                state.step(&mut m, &g).unwrap();
            }
            m
        };
        assert_eq!(run(), run());
    }
}
