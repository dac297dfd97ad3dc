use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};
use crate::graph::{EmbeddingProvider, FileProvider, HashProvider};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Hash,
    File,
}

/// Every training hyperparameter. Read from a flat TOML table; missing keys
/// take their defaults and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub d: usize,
    pub d_h: usize,
    pub heads: usize,
    pub layers: usize,
    pub lr: f64,
    pub dropout: f64,
    pub lambda: f64,
    pub tau: f64,
    pub epochs: usize,
    pub patience: usize,
    pub k_extract: usize,
    pub max_oracle_sents: usize,
    pub seed: u64,
    pub leaky_slope: f64,
    /// Global L2 norm for gradient clipping; 0 disables clipping.
    pub grad_clip: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub use_hierarchical: bool,
    pub inter_section_edges: bool,
    pub residual: bool,
    pub normalize_embeddings: bool,
    pub provider: ProviderKind,
    /// Hash-provider dimension; defaults to `d`.
    pub embed_dim: Option<usize>,
    /// Hash-provider seed, independent of the training seed.
    pub embed_seed: u64,
    /// Embeddings file for the file provider.
    pub embeddings: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let a = AdamConfig::default();
        Self {
            d: m.d,
            d_h: m.d_h,
            heads: m.heads,
            layers: m.layers,
            lr: a.lr,
            dropout: m.dropout,
            lambda: m.lambda,
            tau: m.tau,
            epochs: 10,
            patience: 3,
            k_extract: 6,
            max_oracle_sents: crate::oracle::DEFAULT_MAX_SENTS,
            seed: 0,
            leaky_slope: m.leaky_slope,
            grad_clip: 5.0,
            weight_decay: a.weight_decay,
            beta1: a.beta1,
            beta2: a.beta2,
            adam_eps: a.eps,
            use_hierarchical: m.use_hierarchical,
            inter_section_edges: m.inter_section_edges,
            residual: m.residual,
            normalize_embeddings: m.normalize_embeddings,
            provider: ProviderKind::Hash,
            embed_dim: None,
            embed_seed: 0,
            embeddings: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            d: self.d,
            d_h: self.d_h,
            heads: self.heads,
            layers: self.layers,
            leaky_slope: self.leaky_slope,
            dropout: self.dropout,
            tau: self.tau,
            lambda: self.lambda,
            use_hierarchical: self.use_hierarchical,
            inter_section_edges: self.inter_section_edges,
            residual: self.residual,
            normalize_embeddings: self.normalize_embeddings,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        self.model_config(self.embed_dim.unwrap_or(self.d))
            .validate()?;
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if self.epochs == 0 || self.patience == 0 {
            return fail("epochs and patience must be positive");
        }
        if self.k_extract == 0 {
            return fail("k_extract must be at least 1");
        }
        if self.max_oracle_sents == 0 {
            return fail("max_oracle_sents must be at least 1");
        }
        if !(self.lr > 0.0) || !(self.grad_clip >= 0.0) || !(self.weight_decay >= 0.0) {
            return fail("lr must be positive; grad_clip and weight_decay non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.adam_eps > 0.0)
        {
            return fail("Adam betas must lie in [0, 1) and eps be positive");
        }
        if self.provider == ProviderKind::File && self.embeddings.is_none() {
            return fail("the file provider needs an embeddings path");
        }
        if self.embed_dim == Some(0) {
            return fail("embed_dim must be positive");
        }
        Ok(())
    }

    pub fn build_provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        match self.provider {
            ProviderKind::Hash => Ok(Box::new(HashProvider::new(
                self.embed_dim.unwrap_or(self.d),
                self.embed_seed,
            ))),
            ProviderKind::File => {
                let path = self.embeddings.as_ref().ok_or_else(|| {
                    Error::Config("the file provider needs an embeddings path".into())
                })?;
                Ok(Box::new(FileProvider::load(path)?))
            }
        }
    }
}
