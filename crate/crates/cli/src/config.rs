//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use knrm::corpus::TextCaps;
use knrm::experiment::PairLabels;
use knrm::kernel::{Kernel, KernelBank};
use knrm::model::{ModelVariant, PoolingMode};
use knrm::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub train: TrainSection,
    pub model: ModelSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub lr: f64,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    pub pair_labels: String,
    pub smoothing: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            lr: t.lr,
            eps: t.eps,
            beta1: t.beta1,
            beta2: t.beta2,
            patience_epochs: t.patience_epochs,
            max_epochs: t.max_epochs,
            validation_fraction: t.validation_fraction,
            grad_clip: t.grad_clip,
            pair_labels: PairLabels::default().to_string(),
            smoothing: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: String,
    /// Overrides the pooling implied by the variant.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pooling: Option<String>,
    /// Full kernel bank as `[mu, sigma]` pairs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernels: Option<Vec<[f64; 2]>>,
    /// Width of the soft kernels of the default bank.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub soft_sigma: Option<f64>,
    pub dim: usize,
    pub query_cap: usize,
    pub title_cap: usize,
    pub min_count: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let caps = TextCaps::default();
        Self {
            variant: ModelVariant::Full.to_string(),
            pooling: None,
            kernels: None,
            soft_sigma: None,
            dim: 32,
            query_cap: caps.query,
            title_cap: caps.title,
            min_count: 1,
        }
    }
}

/// Everything `train` needs, checked and converted to library types.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub variant: ModelVariant,
    pub pooling: PoolingMode,
    pub bank: KernelBank,
    pub train: TrainConfig,
    pub caps: TextCaps,
    pub pair_labels: PairLabels,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    /// The kernel bank the variant's full model would use.
    pub fn full_bank(&self) -> anyhow::Result<KernelBank> {
        match (&self.model.kernels, self.model.soft_sigma) {
            (Some(_), Some(_)) => bail!("set either model.kernels or model.soft_sigma, not both"),
            (Some(k), None) => Ok(KernelBank::new(k.iter().map(|[mu, sigma]| Kernel::new(*mu, *sigma)).collect())?),
            (None, Some(s)) => Ok(KernelBank::with_soft_sigma(s)?),
            (None, None) => Ok(KernelBank::default_bank()),
        }
    }

    pub fn resolve(&self) -> anyhow::Result<Resolved> {
        let variant: ModelVariant = self.model.variant.parse()?;
        let pooling = match &self.model.pooling {
            Some(p) => p.parse()?,
            None => variant.pooling(),
        };
        let bank = variant.kernel_bank(&self.full_bank()?);
        let t = &self.train;
        let train = TrainConfig {
            batch_size: t.batch_size,
            lr: t.lr,
            eps: t.eps,
            beta1: t.beta1,
            beta2: t.beta2,
            patience_epochs: t.patience_epochs,
            max_epochs: t.max_epochs,
            validation_fraction: t.validation_fraction,
            seed: self.seed,
            grad_clip: t.grad_clip,
        };
        train.validate()?;
        if self.model.dim == 0 {
            bail!("model.dim must be positive");
        }
        if t.smoothing.is_nan() || t.smoothing < 0.0 {
            bail!("train.smoothing must be non-negative");
        }
        Ok(Resolved {
            variant,
            pooling,
            bank,
            train,
            caps: TextCaps { query: self.model.query_cap, title: self.model.title_cap },
            pair_labels: t.pair_labels.parse()?,
        })
    }

    /// This configuration with every default made explicit, for echoing
    /// into reports.
    pub fn resolved_echo(&self, r: &Resolved) -> Self {
        let mut out = self.clone();
        out.model.variant = r.variant.to_string();
        out.model.pooling = Some(r.pooling.to_string());
        out.model.kernels = Some(r.bank.kernels().iter().map(|k| [k.mu, k.sigma]).collect());
        out.model.soft_sigma = None;
        out.train.pair_labels = r.pair_labels.to_string();
        out
    }

    /// The configuration as TOML with every line prefixed by `# `.
    pub fn to_comment_block(&self) -> anyhow::Result<String> {
        let text = toml::to_string(self)?;
        Ok(text.lines().map(|l| if l.is_empty() { "#\n".to_string() } else { format!("# {l}\n") }).collect())
    }
}

/// Parses `mu:sigma,mu:sigma,...`.
pub fn parse_kernel_list(s: &str) -> anyhow::Result<Vec<[f64; 2]>> {
    s.split(',')
        .map(|pair| {
            let (mu, sigma) = pair.split_once(':').with_context(|| format!("kernel `{pair}` is not `mu:sigma`"))?;
            Ok([mu.trim().parse()?, sigma.trim().parse()?])
        })
        .collect()
}
