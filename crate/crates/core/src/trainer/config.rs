use serde::{Deserialize, Serialize};

use crate::encoders::FusionKind;
use crate::error::{Error, Result};
use crate::losses::{KeReduction, KgeMethod, LossConfig};

/// Every training hyperparameter. Defaults follow the large-scale setup
/// (batch 4096, d_e 768); desk-scale runs override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub d_e: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub tau: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub kge_method: KgeMethod,
    pub margin: f64,
    pub triples_cap: usize,
    /// Negatives drawn for each sampled positive triple.
    pub negatives_per_entity: usize,
    pub fusion: FusionKind,
    /// 1 or 2; only used by the MLP fuser.
    pub mlp_layers: usize,
    pub seed: u64,
    pub ke_batch_reduction: KeReduction,
    pub include_positive_in_denominator: bool,
    /// Apply weight decay to touched embedding-table rows as well as to the
    /// dense layers.
    pub decay_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d_e: 768,
            batch_size: 4096,
            epochs: 15,
            base_lr: 1e-3,
            weight_decay: 1e-4,
            tau: 0.07,
            beta1: 1.0,
            beta2: 1.0,
            kge_method: KgeMethod::TranseCos,
            margin: 1.0,
            triples_cap: 50,
            negatives_per_entity: 25,
            fusion: FusionKind::Addition,
            mlp_layers: 1,
            seed: 0,
            ke_batch_reduction: KeReduction::Mean,
            include_positive_in_denominator: false,
            decay_embeddings: true,
        }
    }
}

impl TrainConfig {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            tau: self.tau,
            beta1: self.beta1,
            beta2: self.beta2,
            kge_method: self.kge_method,
            margin: self.margin,
            ke_batch_reduction: self.ke_batch_reduction,
            include_positive_in_denominator: self.include_positive_in_denominator,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_config().validate()?;
        for (name, v) in [
            ("d_e", self.d_e),
            ("batch_size", self.batch_size),
            ("triples_cap", self.triples_cap),
            ("negatives_per_entity", self.negatives_per_entity),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(1..=2).contains(&self.mlp_layers) {
            return Err(Error::Config(format!(
                "mlp_layers must be 1 or 2, got {}",
                self.mlp_layers
            )));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr must be >= 0, got {}", self.base_lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}
