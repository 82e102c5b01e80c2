//! Pattern-driven autoregressive generation.
//!
//! The loop walks the pattern: after consuming row `s` of the interleaved
//! sequence, the predictor scores every codebook, and the codebooks present in
//! `P_{s+1}` are sampled independently. Prompted positions are forced instead
//! of sampled. Classifier-free guidance runs a second, unconditional
//! predictor in lockstep.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::TokenGrid;
use crate::model::{Condition, ModelError, Parameters, Session};
use crate::patterns::{InterleavedSequence, Pattern, PatternError};

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("invalid sampler config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("every logit is -inf")]
    AllMasked,
    #[error("logits contain NaN or +inf")]
    NonFinite,
    #[error("prompt has {prompt} timesteps, pattern has {timesteps}")]
    PromptTooLong { prompt: usize, timesteps: usize },
    #[error("step {step} reads codebook {k} before it is written")]
    ReadBeforeWrite { step: usize, k: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error("predictor: {0}")]
    Predictor(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Sample,
    Greedy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Clamped to the vocabulary size.
    pub top_k: usize,
    pub temperature: f64,
    pub guidance_scale: f64,
    pub mode: SamplingMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            top_k: 250,
            temperature: 1.0,
            guidance_scale: 3.0,
            mode: SamplingMode::Sample,
        }
    }
}

impl SamplerConfig {
    pub fn greedy() -> Self {
        Self {
            mode: SamplingMode::Greedy,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.top_k == 0 {
            return Err(SamplingError::Config("top_k must be >= 1".into()));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(SamplingError::Config("temperature must be finite and >= 0".into()));
        }
        if !(self.guidance_scale >= 0.0) || !self.guidance_scale.is_finite() {
            return Err(SamplingError::Config("guidance scale must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn is_greedy(&self) -> bool {
        self.mode == SamplingMode::Greedy || self.temperature == 0.0 || self.top_k == 1
    }
}

/// `uncond + scale * (cond - uncond)` on raw logits; exact at scale 0 and 1.
pub fn cfg_combine(cond: &[f64], uncond: &[f64], scale: f64) -> Result<Vec<f64>, SamplingError> {
    if cond.len() != uncond.len() {
        return Err(SamplingError::Shape(format!(
            "conditional has {} logits, unconditional {}",
            cond.len(),
            uncond.len()
        )));
    }
    if scale == 1.0 {
        return Ok(cond.to_vec());
    }
    if scale == 0.0 {
        return Ok(uncond.to_vec());
    }
    Ok(cond
        .iter()
        .zip(uncond)
        .map(|(&c, &u)| if c == u { c } else { u + scale * (c - u) })
        .collect())
}

fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in logits.iter().enumerate() {
        if x > logits[best] {
            best = i;
        }
    }
    best
}

/// Draws a 1-based token from one codebook's logits: temperature, top-k
/// (ties broken toward lower indices), softmax, then a single uniform draw.
/// Greedy mode, temperature 0 and `top_k = 1` all reduce to argmax and
/// consume no randomness.
pub fn sample_token<R: Rng + ?Sized>(logits: &[f64], cfg: &SamplerConfig, rng: &mut R) -> Result<u32, SamplingError> {
    cfg.validate()?;
    if logits.is_empty() {
        return Err(SamplingError::Shape("empty logits".into()));
    }
    if logits.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(SamplingError::NonFinite);
    }
    if logits.iter().all(|&x| x == f64::NEG_INFINITY) {
        return Err(SamplingError::AllMasked);
    }
    if cfg.is_greedy() {
        return Ok(argmax(logits) as u32 + 1);
    }
    let k = cfg.top_k.min(logits.len());
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = order[..k]
        .iter()
        .copied()
        .filter(|&i| logits[i] > f64::NEG_INFINITY)
        .collect();
    kept.sort_unstable();
    let max = kept.iter().map(|&i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = kept
        .iter()
        .map(|&i| ((logits[i] - max) / cfg.temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (&i, &w) in kept.iter().zip(&weights) {
        acc += w;
        if u < acc {
            return Ok(i as u32 + 1);
        }
    }
    Ok(*kept.last().expect("at least one finite logit") as u32 + 1)
}

/// Anything that can score the next pattern step from the rows seen so far.
pub trait StepPredictor {
    fn codebooks(&self) -> usize;
    fn vocab(&self) -> usize;
    /// Consumes the next row (tokens of `P_s`, 0 elsewhere) and returns one
    /// logit row per codebook for `P_{s+1}`.
    fn advance(&mut self, row: &[u32]) -> Result<Vec<Vec<f64>>, SamplingError>;
}

impl StepPredictor for Session<'_> {
    fn codebooks(&self) -> usize {
        self.config().codebooks
    }

    fn vocab(&self) -> usize {
        self.config().vocab
    }

    fn advance(&mut self, row: &[u32]) -> Result<Vec<Vec<f64>>, SamplingError> {
        Ok(Session::advance(self, row)?.position(0))
    }
}

/// A finished generation: the grid and the interleaved sequence it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub grid: TokenGrid,
    pub sequence: InterleavedSequence,
}

/// The generation loop over any predictor. `uncond` is stepped alongside
/// `cond` when guidance is active; `prompt` forces every position with
/// `t <= prompt.timesteps()`.
pub fn generate_with<P: StepPredictor + ?Sized, R: Rng + ?Sized>(
    cond: &mut P,
    mut uncond: Option<&mut P>,
    pattern: &Pattern,
    prompt: Option<&TokenGrid>,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Generated, SamplingError> {
    cfg.validate()?;
    let kk = pattern.codebooks();
    let m = cond.vocab();
    if cond.codebooks() != kk {
        return Err(SamplingError::Shape(format!(
            "predictor has {} codebooks, pattern {kk}",
            cond.codebooks()
        )));
    }
    if let Some(u) = uncond.as_deref() {
        if u.codebooks() != kk || u.vocab() != m {
            return Err(SamplingError::Shape("unconditional predictor differs in shape".into()));
        }
    }
    let forced_t = match prompt {
        Some(p) => {
            if p.timesteps() > pattern.timesteps() {
                return Err(SamplingError::PromptTooLong {
                    prompt: p.timesteps(),
                    timesteps: pattern.timesteps(),
                });
            }
            if p.codebooks() != kk || p.vocab() != m {
                return Err(SamplingError::Shape("prompt grid differs from the model in K or M".into()));
            }
            p.timesteps()
        }
        None => 0,
    };
    let is_forced = |t: usize| t <= forced_t;

    let s_total = pattern.num_steps();
    // last step that still holds a position to sample
    let last_free = (1..=s_total)
        .rev()
        .find(|&s| pattern.step(s).iter().any(|c| !is_forced(c.t)))
        .unwrap_or(0);

    let mut seq = InterleavedSequence::empty(s_total + 1, kk, m);
    let mut written = vec![false; (s_total + 1) * kk];
    for w in written.iter_mut().take(kk) {
        *w = true;
    }
    for s in 0..s_total {
        for k in 0..kk {
            if !written[s * kk + k] && pattern.presence(s, k).is_some() {
                return Err(SamplingError::ReadBeforeWrite { step: s, k });
            }
        }
        let mut coords = pattern.step(s + 1).to_vec();
        coords.sort_by_key(|c| c.k);
        let logits = if s < last_free {
            let cond_logits = cond.advance(seq.row(s))?;
            match uncond.as_deref_mut() {
                Some(u) => {
                    let uncond_logits = u.advance(seq.row(s))?;
                    cond_logits
                        .iter()
                        .zip(&uncond_logits)
                        .map(|(c, u)| cfg_combine(c, u, cfg.guidance_scale))
                        .collect::<Result<Vec<_>, _>>()?
                }
                None => cond_logits,
            }
        } else {
            Vec::new()
        };
        for c in coords {
            let (row, col) = (c.row(), c.col());
            let token = match prompt {
                Some(p) if is_forced(c.t) => p.get(row, col),
                _ => {
                    let l = logits.get(col).ok_or_else(|| SamplingError::Predictor("missing logits".into()))?;
                    if l.len() != m {
                        return Err(SamplingError::Shape(format!("{} logits for vocab {m}", l.len())));
                    }
                    sample_token(l, cfg, rng)?
                }
            };
            seq.set(s + 1, col, token);
            written[(s + 1) * kk + col] = true;
        }
    }
    let grid = pattern.revert(&seq)?;
    Ok(Generated { grid, sequence: seq })
}

fn check_model(params: &Parameters, pattern: &Pattern) -> Result<(), SamplingError> {
    let c = &params.config;
    if c.codebooks != pattern.codebooks() {
        return Err(SamplingError::Shape(format!(
            "model has {} codebooks, pattern {}",
            c.codebooks,
            pattern.codebooks()
        )));
    }
    if pattern.num_steps() > c.max_steps {
        return Err(ModelError::TooManySteps {
            steps: pattern.num_steps(),
            max_steps: c.max_steps,
        }
        .into());
    }
    Ok(())
}

fn run_model<R: Rng + ?Sized>(
    params: &Parameters,
    pattern: &Pattern,
    prompt: Option<&TokenGrid>,
    condition: &Condition,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Generated, SamplingError> {
    check_model(params, pattern)?;
    let mut cond = Session::new(params, condition)?;
    // with a null condition both passes coincide, so guidance is the identity
    if cfg.guidance_scale != 1.0 && !condition.is_null() {
        let mut uncond = Session::new(params, &Condition::none())?;
        generate_with(&mut cond, Some(&mut uncond), pattern, prompt, cfg, rng)
    } else {
        generate_with(&mut cond, None, pattern, prompt, cfg, rng)
    }
}

/// Samples a full grid from the model under `pattern`.
pub fn generate<R: Rng + ?Sized>(
    params: &Parameters,
    pattern: &Pattern,
    condition: &Condition,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<TokenGrid, SamplingError> {
    run_model(params, pattern, None, condition, cfg, rng).map(|g| g.grid)
}

/// Teacher-forces the first `prompt.timesteps()` timesteps on every codebook
/// and generates the rest.
pub fn continue_from_prompt<R: Rng + ?Sized>(
    params: &Parameters,
    pattern: &Pattern,
    prompt: &TokenGrid,
    condition: &Condition,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<TokenGrid, SamplingError> {
    run_model(params, pattern, Some(prompt), condition, cfg, rng).map(|g| g.grid)
}
