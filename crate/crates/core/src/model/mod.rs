//! A small autoregressive transformer over interleaved codebook steps.
//!
//! Input at step `s` is the sum of one embedding per codebook (the token's
//! row if the codebook is present in `P_s`, the absence row otherwise) plus a
//! sinusoidal encoding of `s`. Pre-norm layers apply causal self-attention,
//! optional cross-attention to a text condition, and a ReLU feed-forward
//! block. A melody condition may instead be prepended as a prefix. The
//! output at step `s` goes through one linear head per codebook and predicts
//! the tokens of `P_{s+1}`.
//!
//! Everything is `f64` with hand-written reverse-mode gradients.

mod kernels;
mod optim;
mod params;
mod session;
mod transformer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditioning::ConditioningTensor;
use crate::patterns::PatternError;

pub use optim::{
    apply_update, clip_global_norm, global_norm, train_step, Checkpoint, LrSchedule, OptimizerState, StepStats, TrainHyper,
    CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use params::{init_params, BlockKind, LayerParams, Parameters};
pub use session::Session;
pub use transformer::{
    embed_step, forward, grad, hidden_states, loss_masked, masked_accuracy, sinusoidal_position, Logits,
    LossAndGrad, TrainingSequence,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("token {token} for codebook {k} outside 0..={vocab}")]
    TokenOutOfRange { k: usize, token: u32, vocab: usize },
    #[error("{steps} steps exceed max_steps = {max_steps}")]
    TooManySteps { steps: usize, max_steps: usize },
    #[error("condition not accepted in {0:?} mode")]
    ConditionNotAccepted(ConditioningMode),
    #[error("no valid target positions")]
    NoTargets,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Which conditioning paths the model has.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningMode {
    None,
    /// Every layer cross-attends to the condition rows.
    CrossAttention,
    /// Condition rows are prepended to the step sequence.
    Prefix,
    /// Cross-attention to text plus a melody prefix.
    CrossAttentionAndPrefix,
}

impl ConditioningMode {
    pub fn uses_cross(self) -> bool {
        matches!(self, Self::CrossAttention | Self::CrossAttentionAndPrefix)
    }

    pub fn uses_prefix(self) -> bool {
        matches!(self, Self::Prefix | Self::CrossAttentionAndPrefix)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub codebooks: usize,
    /// Tokens per codebook `M`; embedding tables have `M + 1` rows.
    pub vocab: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub max_steps: usize,
    pub conditioning: ConditioningMode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let counts = [
            ("codebooks", self.codebooks),
            ("vocab", self.vocab),
            ("dim", self.dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ffn_mult", self.ffn_mult),
            ("max_steps", self.max_steps),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be >= 1")));
        }
        if self.dim % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "dim {} is not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.dim * self.ffn_mult
    }

    /// Number of scalar parameters, computed without allocating them.
    pub fn parameter_count(&self) -> usize {
        let d = self.dim;
        let norms = 2 * d;
        let self_attn = 4 * d * d + norms;
        let cross = if self.conditioning.uses_cross() { 4 * d * d + norms } else { 0 };
        let ffn = 2 * d * self.ffn_dim() + norms;
        let per_layer = self_attn + cross + ffn;
        let embeddings = self.codebooks * (self.vocab + 1) * d;
        let heads = self.codebooks * d * self.vocab;
        self.layers * per_layer + embeddings + heads + norms
    }
}

/// Conditioning inputs for one sequence. `None` and empty tensors both mean
/// "no condition" (the null condition of classifier-free guidance).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub cross: Option<ConditioningTensor>,
    pub prefix: Option<ConditioningTensor>,
}

impl Condition {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn cross(c: ConditioningTensor) -> Self {
        Self {
            cross: Some(c),
            prefix: None,
        }
    }

    pub fn prefix(c: ConditioningTensor) -> Self {
        Self {
            cross: None,
            prefix: Some(c),
        }
    }

    pub fn joint(cross: ConditioningTensor, prefix: ConditioningTensor) -> Self {
        Self {
            cross: Some(cross),
            prefix: Some(prefix),
        }
    }

    pub fn is_null(&self) -> bool {
        self.cross_rows().is_none() && self.prefix_rows().is_none()
    }

    pub(crate) fn cross_rows(&self) -> Option<&ConditioningTensor> {
        self.cross.as_ref().filter(|c| !c.is_empty())
    }

    pub(crate) fn prefix_rows(&self) -> Option<&ConditioningTensor> {
        self.prefix.as_ref().filter(|c| !c.is_empty())
    }

    pub(crate) fn check(&self, config: &ModelConfig) -> Result<(), ModelError> {
        for (rows, allowed) in [
            (self.cross_rows(), config.conditioning.uses_cross()),
            (self.prefix_rows(), config.conditioning.uses_prefix()),
        ] {
            if let Some(c) = rows {
                if !allowed {
                    return Err(ModelError::ConditionNotAccepted(config.conditioning));
                }
                if c.dim() != config.dim {
                    return Err(ModelError::Shape(format!(
                        "condition width {} != model dim {}",
                        c.dim(),
                        config.dim
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One step's input: per codebook, a token in `1..=M` or the special token 0
/// for "absent at this step".
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepInput<'a> {
    pub step: usize,
    pub tokens: &'a [u32],
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_small(mode: ConditioningMode) -> ModelConfig {
        ModelConfig {
            codebooks: 4,
            vocab: 2048,
            dim: 1024,
            layers: 24,
            heads: 16,
            ffn_mult: 4,
            max_steps: 1503,
            conditioning: mode,
        }
    }

    #[test]
    fn reference_scale_parameter_count_is_about_300m() {
        let n = reference_small(ConditioningMode::Prefix).parameter_count() as f64;
        assert!((n - 3e8).abs() / 3e8 < 0.10, "{n}");
        // with a cross-attention block per layer the count grows by 4*D^2*L
        let with_cross = reference_small(ConditioningMode::CrossAttention).parameter_count() as f64;
        assert!((with_cross - n - 24.0 * (4.0 * 1024.0 * 1024.0 + 2048.0)).abs() < 1.0);
    }

    #[test]
    fn config_validation() {
        let mut c = reference_small(ConditioningMode::None);
        c.heads = 5;
        assert!(c.validate().is_err());
        c.heads = 16;
        c.layers = 0;
        assert!(c.validate().is_err());
    }
}
