use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the audio and text sequences are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionStrategy {
    /// Token-axis concatenation into one shared encoder.
    Concat,
    Mean,
    Sum,
    Prod,
    /// Each modality mean-pooled to one token; the two tokens are encoded.
    SelfAttn,
    CrossAttn,
    GatedCrossAttn,
    BiCrossAttn,
    GatedBiCrossAttn,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 9] = [
        FusionStrategy::Concat,
        FusionStrategy::Mean,
        FusionStrategy::Sum,
        FusionStrategy::Prod,
        FusionStrategy::SelfAttn,
        FusionStrategy::CrossAttn,
        FusionStrategy::GatedCrossAttn,
        FusionStrategy::BiCrossAttn,
        FusionStrategy::GatedBiCrossAttn,
    ];

    pub fn is_cross(self) -> bool {
        matches!(
            self,
            FusionStrategy::CrossAttn
                | FusionStrategy::GatedCrossAttn
                | FusionStrategy::BiCrossAttn
                | FusionStrategy::GatedBiCrossAttn
        )
    }

    pub fn is_gated(self) -> bool {
        matches!(self, FusionStrategy::GatedCrossAttn | FusionStrategy::GatedBiCrossAttn)
    }

    pub fn is_bidirectional(self) -> bool {
        matches!(self, FusionStrategy::BiCrossAttn | FusionStrategy::GatedBiCrossAttn)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            FusionStrategy::Concat => "concat",
            FusionStrategy::Mean => "mean",
            FusionStrategy::Sum => "sum",
            FusionStrategy::Prod => "prod",
            FusionStrategy::SelfAttn => "sa",
            FusionStrategy::CrossAttn => "ca",
            FusionStrategy::GatedCrossAttn => "gca",
            FusionStrategy::BiCrossAttn => "bca",
            FusionStrategy::GatedBiCrossAttn => "gbca",
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        FusionStrategy::ALL
            .into_iter()
            .find(|f| f.short_name() == lower || format!("{f:?}").to_ascii_lowercase() == lower)
            .ok_or_else(|| Error::contract(format!("unknown fusion strategy {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Audio,
    Text,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pooling {
    Mean,
    #[serde(rename = "CLS")]
    Cls,
    Attn,
    GatedAttn,
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(Pooling::Mean),
            "cls" => Ok(Pooling::Cls),
            "attn" => Ok(Pooling::Attn),
            "gatedattn" | "gated-attn" | "gated_attn" => Ok(Pooling::GatedAttn),
            _ => Err(Error::contract(format!("unknown pooling strategy {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    Classify,
    Regress,
}

impl Task {
    pub fn output_dim(self) -> usize {
        match self {
            Task::Classify => 2,
            Task::Regress => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Width of the incoming embeddings. When it differs from `d_model`,
    /// each modality gets a learned input projection.
    pub input_dim: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub fusion: FusionStrategy,
    pub query_modality: Modality,
    pub pooling: Pooling,
    pub task: Task,
    pub dropout_rate: f64,
    /// Size of the learned positional table.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::full_scale()
    }
}

impl ModelConfig {
    /// Small configuration used by tests and the synthetic benchmarks.
    pub fn desk() -> Self {
        ModelConfig {
            input_dim: 64,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            n_layers: 1,
            fusion: FusionStrategy::GatedCrossAttn,
            query_modality: Modality::Audio,
            pooling: Pooling::Mean,
            task: Task::Classify,
            dropout_rate: 0.1,
            max_len: 512,
            seed: 0,
        }
    }

    /// Dimensions of a 768-wide BERT-style encoder layer.
    pub fn full_scale() -> Self {
        ModelConfig {
            input_dim: 768,
            d_model: 768,
            n_heads: 12,
            d_ff: 3072,
            ..ModelConfig::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::contract(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers == 0 {
            return Err(Error::contract("n_layers must be at least 1"));
        }
        if self.d_ff == 0 || self.input_dim == 0 || self.max_len == 0 {
            return Err(Error::contract("d_ff, input_dim and max_len must be positive"));
        }
        if self.d_model < 2 {
            return Err(Error::contract("d_model must be at least 2 for the head"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::contract(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
