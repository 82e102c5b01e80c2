use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::grid::TokenGrid;
use crate::model::{
    init_params, train_step, Condition, ConditioningMode, LrSchedule, ModelConfig, OptimizerState, Parameters,
    StepStats, TrainHyper, TrainingSequence,
};
use crate::patterns::{build_pattern, PatternKind};
use crate::sampling::{continue_from_prompt, SamplerConfig};

/// Fraction of matching first-codebook tokens needed for a partial match.
pub const PARTIAL_THRESHOLD: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemorizationRow {
    /// Prompt length in timesteps.
    pub prompt_len: usize,
    pub exact_match_fraction: f64,
    pub partial_match_fraction: f64,
    /// Set when either fraction is lower than in the previous row.
    pub trend_violation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemorizationReport {
    pub gen_len: usize,
    pub threshold: f64,
    pub examples: usize,
    pub rows: Vec<MemorizationRow>,
}

impl MemorizationReport {
    /// True when no row was flagged.
    pub fn is_monotone(&self) -> bool {
        self.rows.iter().all(|r| !r.trend_violation)
    }

    pub fn row(&self, prompt_len: usize) -> Option<&MemorizationRow> {
        self.rows.iter().find(|r| r.prompt_len == prompt_len)
    }

    /// `prompt_len,exact,partial,trend_violation` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("prompt_len,exact_match_fraction,partial_match_fraction,trend_violation\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.prompt_len, r.exact_match_fraction, r.partial_match_fraction, r.trend_violation
            ));
        }
        out
    }
}

/// Greedy prompted continuation of every example at every prompt length,
/// scored on codebook 1 only.
pub fn memorization_report(
    params: &Parameters,
    kind: PatternKind,
    dataset: &[(TokenGrid, Condition)],
    prompt_lens: &[usize],
    gen_len: usize,
) -> Result<MemorizationReport, AnalysisError> {
    if dataset.is_empty() {
        return Err(AnalysisError::EmptyDataset);
    }
    let mut lens = prompt_lens.to_vec();
    lens.sort_unstable();
    lens.dedup();
    for (grid, _) in dataset {
        if let Some(&p) = lens.iter().find(|&&p| p + gen_len > grid.timesteps()) {
            return Err(AnalysisError::TooShort {
                needed: p + gen_len,
                timesteps: grid.timesteps(),
            });
        }
    }
    let greedy = SamplerConfig::greedy();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rows: Vec<MemorizationRow> = Vec::with_capacity(lens.len());
    for &prompt_len in &lens {
        let (mut exact, mut partial) = (0usize, 0usize);
        for (grid, condition) in dataset {
            let matches = if gen_len == 0 {
                0
            } else {
                let pattern = build_pattern(kind, prompt_len + gen_len, grid.codebooks())?;
                let out = continue_from_prompt(params, &pattern, &grid.prefix(prompt_len), condition, &greedy, &mut rng)?;
                (prompt_len..prompt_len + gen_len)
                    .filter(|&r| out.get(r, 0) == grid.get(r, 0))
                    .count()
            };
            exact += usize::from(matches == gen_len);
            partial += usize::from(matches as f64 >= PARTIAL_THRESHOLD * gen_len as f64 - 1e-9);
        }
        let n = dataset.len() as f64;
        let (e, p) = (exact as f64 / n, partial as f64 / n);
        let trend_violation = rows
            .last()
            .is_some_and(|prev| e < prev.exact_match_fraction || p < prev.partial_match_fraction);
        rows.push(MemorizationRow {
            prompt_len,
            exact_match_fraction: e,
            partial_match_fraction: p,
            trend_violation,
        });
    }
    Ok(MemorizationReport {
        gen_len,
        threshold: PARTIAL_THRESHOLD,
        examples: dataset.len(),
        rows,
    })
}

/// Four grids that share timestep 1 on every codebook, split into two pairs
/// on codebook 1 at timestep 2, and into four singletons at timestep 3. The
/// remaining tokens are random. Whatever a model learns, a 1-timestep prompt
/// can continue at most one of them exactly, while a 3-timestep prompt
/// identifies each one.
pub fn memorization_dataset(timesteps: usize, codebooks: usize, vocab: usize, seed: u64) -> Result<Vec<TokenGrid>, AnalysisError> {
    if timesteps < 3 || vocab < 4 {
        return Err(AnalysisError::Config("memorization dataset needs T >= 3 and M >= 4".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let token = |rng: &mut ChaCha8Rng| rng.random_range(1..=vocab as u32);
    let shared: Vec<u32> = (0..codebooks).map(|_| token(&mut rng)).collect();
    let split2 = [1u32, 2];
    let split3 = [1u32, 2, 3, 4];
    (0..4)
        .map(|i| {
            let mut tokens = Vec::with_capacity(timesteps * codebooks);
            tokens.extend(&shared);
            for t in 1..timesteps {
                for k in 0..codebooks {
                    let v = match (t, k) {
                        (1, 0) => split2[i / 2],
                        (2, 0) => split3[i],
                        _ => token(&mut rng),
                    };
                    tokens.push(v);
                }
            }
            TokenGrid::new(timesteps, codebooks, vocab, tokens).map_err(Into::into)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverfitConfig {
    pub model: ModelConfig,
    pub kind: PatternKind,
    pub timesteps: usize,
    pub steps: u64,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for OverfitConfig {
    /// Tiny delay-pattern model on 4 sequences of 64 timesteps.
    fn default() -> Self {
        Self {
            model: ModelConfig {
                codebooks: 4,
                vocab: 16,
                dim: 32,
                layers: 2,
                heads: 4,
                ffn_mult: 4,
                max_steps: 128,
                conditioning: ConditioningMode::None,
            },
            kind: PatternKind::Delay,
            timesteps: 64,
            steps: 2000,
            peak_lr: 3e-3,
            warmup_steps: 100,
            weight_decay: 0.1,
            seed: 0,
        }
    }
}

impl OverfitConfig {
    pub fn hyper(&self) -> TrainHyper {
        TrainHyper {
            schedule: LrSchedule {
                peak_lr: self.peak_lr,
                min_lr: 0.0,
                warmup_steps: self.warmup_steps,
                total_steps: self.steps,
            },
            ema_decay: None,
            weight_decay: self.weight_decay,
            ..TrainHyper::default()
        }
    }
}

pub struct OverfitOutcome {
    pub params: Parameters,
    pub log: Vec<StepStats>,
    /// Masked accuracy of the final parameters on the training set.
    pub final_accuracy: f64,
    pub final_loss: f64,
    /// First step whose batch accuracy exceeded the target, if any.
    pub first_step_above: Option<u64>,
}

/// Full-batch training on `dataset` with the null condition.
pub fn overfit(
    cfg: &OverfitConfig,
    dataset: &[TokenGrid],
    target_accuracy: f64,
    mut on_step: impl FnMut(&StepStats),
) -> Result<OverfitOutcome, AnalysisError> {
    if dataset.is_empty() {
        return Err(AnalysisError::EmptyDataset);
    }
    let pattern = build_pattern(cfg.kind, cfg.timesteps, cfg.model.codebooks)?;
    let batch = dataset
        .iter()
        .map(|g| {
            Ok(TrainingSequence {
                sequence: pattern.apply(g)?,
                condition: Condition::none(),
            })
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    let hyper = cfg.hyper();
    hyper.validate()?;
    let mut params = init_params(&cfg.model, cfg.seed)?;
    let mut state = OptimizerState::new(&params, &hyper);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut log = Vec::with_capacity(cfg.steps as usize);
    let mut first_step_above = None;
    for _ in 0..cfg.steps {
        let stats = train_step(&mut state, &mut params, &batch, &pattern, &hyper, &mut rng)?;
        if first_step_above.is_none() && stats.accuracy > target_accuracy {
            first_step_above = Some(stats.step);
        }
        on_step(&stats);
        log.push(stats);
    }
    let last = crate::model::grad(&params, &batch, &pattern)?;
    Ok(OverfitOutcome {
        params,
        log,
        final_accuracy: last.accuracy,
        final_loss: last.loss,
        first_step_above,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    #[test]
    fn dataset_openings_are_staggered() {
        let data = memorization_dataset(10, 3, 8, 1).unwrap();
        assert_eq!(data.len(), 4);
        assert!(data.iter().all(|g| g.row(0) == data[0].row(0)));
        let second: Vec<u32> = data.iter().map(|g| g.get(1, 0)).collect();
        assert_eq!(second, vec![1, 1, 2, 2]);
        let third: Vec<u32> = data.iter().map(|g| g.get(2, 0)).collect();
        assert_eq!(third, vec![1, 2, 3, 4]);
        assert!(memorization_dataset(2, 3, 8, 1).is_err());
    }

    fn small_model() -> Parameters {
        init_params(
            &ModelConfig {
                codebooks: 2,
                vocab: 8,
                dim: 8,
                layers: 1,
                heads: 2,
                ffn_mult: 4,
                max_steps: 32,
                conditioning: ConditioningMode::None,
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn empty_generation_matches_by_convention() {
        let params = small_model();
        let data: Vec<(TokenGrid, Condition)> = memorization_dataset(6, 2, 8, 0)
            .unwrap()
            .into_iter()
            .map(|g| (g, Condition::none()))
            .collect();
        let report = memorization_report(&params, PatternKind::Delay, &data, &[1, 3], 0).unwrap();
        for row in &report.rows {
            assert_eq!((row.exact_match_fraction, row.partial_match_fraction), (1.0, 1.0));
        }
        assert!(memorization_report(&params, PatternKind::Delay, &[], &[1], 2).is_err());
        assert!(matches!(
            memorization_report(&params, PatternKind::Delay, &data, &[5], 2),
            Err(AnalysisError::TooShort { .. })
        ));
    }

    #[test]
    fn partial_is_never_below_exact() {
        let params = small_model();
        let data: Vec<(TokenGrid, Condition)> = memorization_dataset(12, 2, 8, 3)
            .unwrap()
            .into_iter()
            .map(|g| (g, Condition::none()))
            .collect();
        let report = memorization_report(&params, PatternKind::Delay, &data, &[3, 1, 2], 4).unwrap();
        assert_eq!(report.rows.iter().map(|r| r.prompt_len).collect::<Vec<_>>(), vec![1, 2, 3]);
        for r in &report.rows {
            assert!(r.partial_match_fraction >= r.exact_match_fraction);
            assert!((0.0..=1.0).contains(&r.exact_match_fraction));
        }
        assert!(report.to_csv().lines().count() == 4);
    }
}
