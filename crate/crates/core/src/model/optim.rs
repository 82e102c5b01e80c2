use std::borrow::Cow;
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::BlockKind;
use super::transformer::{grad, TrainingSequence};
use super::{Condition, ModelError, Parameters};
use crate::patterns::Pattern;

/// Linear warmup to `peak_lr`, then cosine decay to `min_lr` at `total_steps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            peak_lr: lr,
            min_lr: lr,
            warmup_steps: 0,
            total_steps: 1,
        }
    }

    /// Learning rate for the update with 0-based index `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.peak_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.min_lr + 0.5 * (self.peak_lr - self.min_lr) * (1.0 + (PI * progress).cos())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay applied to weight matrices, not to norms.
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Probability of training a batch on the null condition.
    pub condition_dropout: f64,
    /// Decay of the evaluation-weights moving average; `None` disables it.
    pub ema_decay: Option<f64>,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            schedule: LrSchedule {
                peak_lr: 1e-3,
                min_lr: 0.0,
                warmup_steps: 4000,
                total_steps: 1_000_000,
            },
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
            clip_norm: Some(1.0),
            condition_dropout: 0.2,
            ema_decay: Some(0.99),
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |what: &str| Err(ModelError::Config(what.to_string()));
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return bad("eps must be positive and weight decay nonnegative");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip norm must be positive");
        }
        if !(0.0..=1.0).contains(&self.condition_dropout) {
            return bad("condition dropout must be a probability");
        }
        if self.ema_decay.is_some_and(|d| !(0.0..1.0).contains(&d)) {
            return bad("ema decay must lie in [0, 1)");
        }
        let s = &self.schedule;
        if !(s.peak_lr >= 0.0 && s.min_lr >= 0.0 && s.peak_lr.is_finite() && s.min_lr <= s.peak_lr) {
            return bad("learning rates must satisfy 0 <= min_lr <= peak_lr");
        }
        Ok(())
    }
}

/// AdamW moments, update counter and optional moving-average weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Parameters,
    pub v: Parameters,
    pub ema: Option<Parameters>,
}

impl OptimizerState {
    pub fn new(params: &Parameters, hyper: &TrainHyper) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
            ema: hyper.ema_decay.map(|_| params.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub accuracy: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub condition_dropped: bool,
}

pub fn global_norm(grads: &Parameters) -> f64 {
    grads
        .blocks()
        .iter()
        .flat_map(|b| b.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Parameters, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for block in grads.blocks_mut() {
            for g in block.iter_mut() {
                *g *= scale;
            }
        }
    }
    norm
}

/// One AdamW update from precomputed gradients. Returns `(lr, pre-clip norm)`.
pub fn apply_update(
    state: &mut OptimizerState,
    params: &mut Parameters,
    mut grads: Parameters,
    hyper: &TrainHyper,
) -> Result<(f64, f64), ModelError> {
    let norm = match hyper.clip_norm {
        Some(c) => clip_global_norm(&mut grads, c),
        None => global_norm(&grads),
    };
    if !norm.is_finite() {
        return Err(ModelError::NonFinite("gradient"));
    }
    let lr = hyper.schedule.lr_at(state.step);
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let kinds: Vec<BlockKind> = params.block_info().into_iter().map(|(_, k)| k).collect();
    let g_blocks = grads.blocks();
    let m_blocks = state.m.blocks_mut();
    let v_blocks = state.v.blocks_mut();
    for ((((p, g), m), v), kind) in params.blocks_mut().into_iter().zip(g_blocks).zip(m_blocks).zip(v_blocks).zip(kinds) {
        let decay = if kind == BlockKind::Matrix { hyper.weight_decay } else { 0.0 };
        for i in 0..p.len() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            let step = (m[i] / bc1) / ((v[i] / bc2).sqrt() + hyper.eps);
            p[i] -= lr * (step + decay * p[i]);
        }
    }
    if !params.is_finite() {
        return Err(ModelError::NonFinite("parameter update"));
    }
    if let (Some(ema), Some(decay)) = (&mut state.ema, hyper.ema_decay) {
        for (e, p) in ema.blocks_mut().into_iter().zip(params.blocks()) {
            for (ei, &pi) in e.iter_mut().zip(p) {
                *ei = decay * *ei + (1.0 - decay) * pi;
            }
        }
    }
    Ok((lr, norm))
}

/// Condition dropout, forward/backward and one AdamW update. A single draw
/// decides whether the whole batch trains on the null condition.
pub fn train_step<R: Rng + ?Sized>(
    state: &mut OptimizerState,
    params: &mut Parameters,
    batch: &[TrainingSequence],
    pattern: &Pattern,
    hyper: &TrainHyper,
    rng: &mut R,
) -> Result<StepStats, ModelError> {
    let condition_dropped = rng.random::<f64>() < hyper.condition_dropout;
    let batch: Cow<[TrainingSequence]> = if condition_dropped && batch.iter().any(|b| !b.condition.is_null()) {
        Cow::Owned(
            batch
                .iter()
                .map(|b| TrainingSequence {
                    sequence: b.sequence.clone(),
                    condition: Condition::none(),
                })
                .collect(),
        )
    } else {
        Cow::Borrowed(batch)
    };
    let out = grad(params, &batch, pattern)?;
    let (lr, grad_norm) = apply_update(state, params, out.grads, hyper)?;
    Ok(StepStats {
        step: state.step,
        lr,
        loss: out.loss,
        accuracy: out.accuracy,
        grad_norm,
        condition_dropped,
    })
}

pub const CHECKPOINT_FORMAT: &str = "interleave-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON container for parameters (config included), optimizer
/// state and training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub params: Parameters,
    pub optimizer: Option<OptimizerState>,
    pub hyper: Option<TrainHyper>,
}

impl Checkpoint {
    pub fn new(params: Parameters, optimizer: Option<OptimizerState>, hyper: Option<TrainHyper>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            params,
            optimizer,
            hyper,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization is infallible")
    }

    pub fn from_json(json: &str) -> Result<Self, ModelError> {
        let ck: Self = serde_json::from_str(json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported container {} v{}",
                ck.format, ck.version
            )));
        }
        ck.params.config.validate()?;
        ck.params.check_shapes()?;
        if !ck.params.is_finite() {
            return Err(ModelError::NonFinite("checkpoint parameters"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::{init_params, ConditioningMode, ModelConfig};

    fn tiny() -> Parameters {
        init_params(
            &ModelConfig {
                codebooks: 2,
                vocab: 4,
                dim: 8,
                layers: 1,
                heads: 2,
                ffn_mult: 4,
                max_steps: 8,
                conditioning: ConditioningMode::Prefix,
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn zero_gradients_without_decay_leave_params_unchanged() {
        let mut p = tiny();
        let before = p.clone();
        let hyper = TrainHyper {
            weight_decay: 0.0,
            ..TrainHyper::default()
        };
        let mut state = OptimizerState::new(&p, &hyper);
        for _ in 0..3 {
            apply_update(&mut state, &mut p, before.zeros_like(), &hyper).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn decay_shrinks_matrices_but_not_norms() {
        let mut p = tiny();
        let before = p.clone();
        let hyper = TrainHyper {
            schedule: LrSchedule::constant(0.1),
            ..TrainHyper::default()
        };
        let mut state = OptimizerState::new(&p, &hyper);
        apply_update(&mut state, &mut p, before.zeros_like(), &hyper).unwrap();
        assert_eq!(p.ln_out_gain, before.ln_out_gain);
        for (a, b) in p.heads[0].iter().zip(&before.heads[0]) {
            assert!((a - b * 0.99).abs() < 1e-15);
        }
    }

    #[test]
    fn clipping_rescales_to_the_ceiling() {
        let p = tiny();
        let mut g = p.zeros_like();
        g.heads[0][0] = 6.0;
        g.ln_out_bias[1] = 8.0;
        assert_eq!(global_norm(&g), 10.0);
        assert_eq!(clip_global_norm(&mut g, 1.0), 10.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-15);
        let mut small = p.zeros_like();
        small.heads[1][2] = 0.5;
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small.heads[1][2], 0.5);
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let s = LrSchedule {
            peak_lr: 1.0,
            min_lr: 0.0,
            warmup_steps: 4,
            total_steps: 14,
        };
        assert_eq!(s.lr_at(0), 0.25);
        assert_eq!(s.lr_at(3), 1.0);
        assert!((s.lr_at(4) - 1.0).abs() < 1e-15);
        assert!((s.lr_at(9) - 0.5).abs() < 1e-12);
        assert!(s.lr_at(14).abs() < 1e-15);
        assert!(s.lr_at(100).abs() < 1e-15);
        let lrs: Vec<f64> = (4..15).map(|t| s.lr_at(t)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn hyper_defaults_and_validation() {
        let h = TrainHyper::default();
        assert_eq!((h.beta1, h.beta2, h.weight_decay, h.clip_norm), (0.9, 0.95, 0.1, Some(1.0)));
        assert_eq!((h.condition_dropout, h.ema_decay, h.schedule.warmup_steps), (0.2, Some(0.99), 4000));
        h.validate().unwrap();
        assert!(TrainHyper { beta2: 1.0, ..h.clone() }.validate().is_err());
        assert!(TrainHyper { clip_norm: Some(0.0), ..h }.validate().is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let p = tiny();
        let hyper = TrainHyper::default();
        let mut state = OptimizerState::new(&p, &hyper);
        let mut q = p.clone();
        let mut g = p.zeros_like();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for block in g.blocks_mut() {
            for x in block.iter_mut() {
                *x = rng.random_range(-1.0..1.0);
            }
        }
        apply_update(&mut state, &mut q, g, &hyper).unwrap();
        let ck = Checkpoint::new(q, Some(state), Some(hyper));
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        let mut tampered = ck.clone();
        tampered.version = 99;
        assert!(Checkpoint::from_json(&tampered.to_json()).is_err());
        assert!(Checkpoint::from_json("{").is_err());
    }
}
