use serde::{Deserialize, Serialize};

use super::kernels::{
    add_in_place, attend_row, layer_norm, layer_norm_backward, log_sum_exp, mat_mul, mat_mul_backward, relu,
    softmax_in_place, NormCache,
};
use super::{Condition, ModelConfig, ModelError, Parameters, StepInput};
use crate::patterns::{InterleavedSequence, Pattern};

/// `S x K x M` logits; position `s` predicts row `s + 1` of the interleaved
/// sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits {
    steps: usize,
    codebooks: usize,
    vocab: usize,
    data: Vec<f64>,
}

impl Logits {
    pub fn new(steps: usize, codebooks: usize, vocab: usize, data: Vec<f64>) -> Result<Self, ModelError> {
        if data.len() != steps * codebooks * vocab {
            return Err(ModelError::Shape(format!(
                "{} logits for {steps}x{codebooks}x{vocab}",
                data.len()
            )));
        }
        Ok(Self {
            steps,
            codebooks,
            vocab,
            data,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn codebooks(&self) -> usize {
        self.codebooks
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    /// Logits for codebook `k` (0-based) at position `s`; index `i` scores token `i + 1`.
    pub fn get(&self, s: usize, k: usize) -> &[f64] {
        let o = (s * self.codebooks + k) * self.vocab;
        &self.data[o..o + self.vocab]
    }

    pub fn get_mut(&mut self, s: usize, k: usize) -> &mut [f64] {
        let o = (s * self.codebooks + k) * self.vocab;
        &mut self.data[o..o + self.vocab]
    }

    /// All `K` rows at position `s`.
    pub fn position(&self, s: usize) -> Vec<Vec<f64>> {
        (0..self.codebooks).map(|k| self.get(s, k).to_vec()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// A full interleaved sequence (`S + 1` rows including the all-special row 0)
/// with its condition. Rows `0..S` are inputs, rows `1..=S` targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSequence {
    pub sequence: InterleavedSequence,
    pub condition: Condition,
}

impl StepInput<'_> {
    /// Inputs for the first `n` rows of `seq`.
    pub fn from_sequence(seq: &InterleavedSequence, n: usize) -> Vec<StepInput<'_>> {
        (0..n).map(|s| StepInput { step: s, tokens: seq.row(s) }).collect()
    }

    /// Inputs for consecutive rows starting at step 0.
    pub fn from_rows(rows: &[Vec<u32>]) -> Vec<StepInput<'_>> {
        rows.iter().enumerate().map(|(s, r)| StepInput { step: s, tokens: r }).collect()
    }
}

/// Alternating sine/cosine encoding of step `s`.
pub fn sinusoidal_position(s: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let pair = (i / 2) as f64;
            let angle = s as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

fn check_tokens(config: &ModelConfig, tokens: &[u32]) -> Result<(), ModelError> {
    if tokens.len() != config.codebooks {
        return Err(ModelError::Shape(format!(
            "step has {} codebooks, model has {}",
            tokens.len(),
            config.codebooks
        )));
    }
    if let Some((k, &token)) = tokens.iter().enumerate().find(|(_, &t)| t as usize > config.vocab) {
        return Err(ModelError::TokenOutOfRange {
            k,
            token,
            vocab: config.vocab,
        });
    }
    Ok(())
}

/// Sum of per-codebook embeddings (absence row for token 0) plus the
/// position encoding of the step.
pub fn embed_step(params: &Parameters, input: &StepInput) -> Result<Vec<f64>, ModelError> {
    let config = &params.config;
    if input.step >= config.max_steps {
        return Err(ModelError::TooManySteps {
            steps: input.step + 1,
            max_steps: config.max_steps,
        });
    }
    check_tokens(config, input.tokens)?;
    let mut x = vec![0.0; config.dim];
    for (k, &token) in input.tokens.iter().enumerate() {
        add_in_place(&mut x, params.embedding_row(k, token));
    }
    add_in_place(&mut x, &sinusoidal_position(input.step, config.dim));
    Ok(x)
}

/// Attention weights for one `(query, head)` pair.
type Probs = Vec<Vec<f64>>;

struct CrossCache {
    norm: NormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Probs,
    ctx: Vec<f64>,
}

struct LayerCache {
    norm1: NormCache,
    a1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Probs,
    ctx: Vec<f64>,
    cross: Option<CrossCache>,
    norm3: NormCache,
    a3: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
}

struct ForwardCache {
    prefix_rows: usize,
    layers: Vec<LayerCache>,
    final_norm: NormCache,
    y: Vec<f64>,
}

/// Multi-head attention of `n_q` query rows against key/value rows; query
/// `i` sees keys `0..visible(i)`.
fn attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    config: &ModelConfig,
    visible: impl Fn(usize) -> usize,
) -> (Vec<f64>, Probs) {
    let d = config.dim;
    let dh = config.head_dim();
    let n_q = q.len() / d;
    let mut ctx = vec![0.0; q.len()];
    let mut probs = Vec::with_capacity(n_q * config.heads);
    for i in 0..n_q {
        let n = visible(i);
        for h in 0..config.heads {
            let o = h * dh;
            let mut p = vec![0.0; n];
            attend_row(&q[i * d + o..i * d + o + dh], k, v, d, o, &mut p, &mut ctx[i * d + o..i * d + o + dh]);
            probs.push(p);
        }
    }
    (ctx, probs)
}

/// Returns `(dq, dk, dv)`.
fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &Probs,
    dctx: &[f64],
    config: &ModelConfig,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = config.dim;
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let n_q = q.len() / d;
    let mut dq = vec![0.0; q.len()];
    let mut dk = vec![0.0; k.len()];
    let mut dv = vec![0.0; v.len()];
    let mut dp = Vec::new();
    for i in 0..n_q {
        for h in 0..config.heads {
            let o = h * dh;
            let p = &probs[i * config.heads + h];
            let dc = &dctx[i * d + o..i * d + o + dh];
            dp.clear();
            for (j, &pj) in p.iter().enumerate() {
                let vj = &v[j * d + o..j * d + o + dh];
                dp.push(dc.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>());
                for (dvj, &g) in dv[j * d + o..j * d + o + dh].iter_mut().zip(dc) {
                    *dvj += pj * g;
                }
            }
            let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
            let qi = &q[i * d + o..i * d + o + dh];
            for (j, &pj) in p.iter().enumerate() {
                let ds = pj * (dp[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in 0..dh {
                    dq[i * d + o + c] += ds * k[j * d + o + c];
                    dk[j * d + o + c] += ds * qi[c];
                }
            }
        }
    }
    (dq, dk, dv)
}

fn check_inputs(params: &Parameters, inputs: &[StepInput], condition: &Condition) -> Result<(), ModelError> {
    let config = &params.config;
    if inputs.is_empty() {
        return Err(ModelError::Shape("no step inputs".into()));
    }
    if inputs.len() > config.max_steps {
        return Err(ModelError::TooManySteps {
            steps: inputs.len(),
            max_steps: config.max_steps,
        });
    }
    if let Some((i, _)) = inputs.iter().enumerate().find(|(i, inp)| inp.step != *i) {
        return Err(ModelError::Shape(format!("step input {i} is out of order")));
    }
    condition.check(config)
}

fn forward_cached(
    params: &Parameters,
    inputs: &[StepInput],
    condition: &Condition,
) -> Result<(Logits, ForwardCache, Vec<f64>), ModelError> {
    check_inputs(params, inputs, condition)?;
    let config = &params.config;
    let d = config.dim;
    let f = config.ffn_dim();

    let mut x: Vec<f64> = Vec::new();
    let prefix_rows = condition.prefix_rows().map_or(0, |p| p.len());
    if let Some(p) = condition.prefix_rows() {
        x.extend_from_slice(p.as_slice());
    }
    for input in inputs {
        x.extend(embed_step(params, input)?);
    }
    let cross_rows = condition.cross_rows();

    let mut layers = Vec::with_capacity(config.layers);
    for lp in &params.layers {
        let (a1, norm1) = layer_norm(&x, &lp.ln_self_gain, &lp.ln_self_bias);
        let q = mat_mul(&a1, &lp.w_q, d, d);
        let k = mat_mul(&a1, &lp.w_k, d, d);
        let v = mat_mul(&a1, &lp.w_v, d, d);
        let (ctx, probs) = attention(&q, &k, &v, config, |i| i + 1);
        let out = mat_mul(&ctx, &lp.w_o, d, d);
        add_in_place(&mut x, &out);

        let cross = match cross_rows {
            Some(c) if config.conditioning.uses_cross() => {
                let (a, norm) = layer_norm(&x, &lp.ln_cross_gain, &lp.ln_cross_bias);
                let q = mat_mul(&a, &lp.c_q, d, d);
                let k = mat_mul(c.as_slice(), &lp.c_k, d, d);
                let v = mat_mul(c.as_slice(), &lp.c_v, d, d);
                let (ctx, probs) = attention(&q, &k, &v, config, |_| c.len());
                let out = mat_mul(&ctx, &lp.c_o, d, d);
                add_in_place(&mut x, &out);
                Some(CrossCache {
                    norm,
                    a,
                    q,
                    k,
                    v,
                    probs,
                    ctx,
                })
            }
            _ => None,
        };

        let (a3, norm3) = layer_norm(&x, &lp.ln_ffn_gain, &lp.ln_ffn_bias);
        let hidden_pre = mat_mul(&a3, &lp.w_ff1, d, f);
        let hidden = relu(&hidden_pre);
        let out = mat_mul(&hidden, &lp.w_ff2, f, d);
        add_in_place(&mut x, &out);

        layers.push(LayerCache {
            norm1,
            a1,
            q,
            k,
            v,
            probs,
            ctx,
            cross,
            norm3,
            a3,
            hidden_pre,
            hidden,
        });
    }

    let stream = x[prefix_rows * d..].to_vec();
    let (y, final_norm) = layer_norm(&stream, &params.ln_out_gain, &params.ln_out_bias);
    let n = inputs.len();
    let m = config.vocab;
    let mut data = vec![0.0; n * config.codebooks * m];
    for (k, head) in params.heads.iter().enumerate() {
        let per_head = mat_mul(&y, head, d, m);
        for s in 0..n {
            let o = (s * config.codebooks + k) * m;
            data[o..o + m].copy_from_slice(&per_head[s * m..(s + 1) * m]);
        }
    }
    let logits = Logits::new(n, config.codebooks, m, data)?;
    Ok((
        logits,
        ForwardCache {
            prefix_rows,
            layers,
            final_norm,
            y,
        },
        stream,
    ))
}

/// Logits for every step input. Position `s` depends only on inputs `0..=s`
/// and the condition.
pub fn forward(params: &Parameters, inputs: &[StepInput], condition: &Condition) -> Result<Logits, ModelError> {
    forward_cached(params, inputs, condition).map(|(logits, _, _)| logits)
}

/// Residual stream at the step positions before the final norm, `n x D`.
pub fn hidden_states(params: &Parameters, inputs: &[StepInput], condition: &Condition) -> Result<Vec<f64>, ModelError> {
    forward_cached(params, inputs, condition).map(|(_, _, stream)| stream)
}

/// Cross-entropy at every `(s, k)` with codebook `k` present in `P_{s+1}`.
/// Returns `(sum of losses, correct argmax count, count, dlogits of the sum)`.
fn masked_terms(
    logits: &Logits,
    targets: &InterleavedSequence,
    pattern: &Pattern,
    want_grad: bool,
) -> Result<(f64, usize, usize, Vec<f64>), ModelError> {
    let n = logits.steps();
    if targets.num_rows() < n + 1 || targets.codebooks() != logits.codebooks() || pattern.codebooks() != logits.codebooks()
    {
        return Err(ModelError::Shape(format!(
            "{} logit positions need {} target rows over {} codebooks",
            n,
            n + 1,
            logits.codebooks()
        )));
    }
    if n > pattern.num_steps() {
        return Err(ModelError::Shape(format!(
            "{n} positions exceed the pattern's {} steps",
            pattern.num_steps()
        )));
    }
    let m = logits.vocab();
    let mut dlogits = if want_grad { vec![0.0; logits.as_slice().len()] } else { Vec::new() };
    let (mut total, mut correct, mut count) = (0.0, 0, 0);
    for s in 0..n {
        for k in 0..logits.codebooks() {
            if pattern.presence(s + 1, k).is_none() {
                continue;
            }
            let target = targets.get(s + 1, k);
            if target == 0 || target as usize > m {
                return Err(ModelError::TokenOutOfRange { k, token: target, vocab: m });
            }
            let row = logits.get(s, k);
            let t = target as usize - 1;
            total += log_sum_exp(row) - row[t];
            let argmax = row
                .iter()
                .enumerate()
                .fold(0, |best, (i, &x)| if x > row[best] { i } else { best });
            correct += usize::from(argmax == t);
            count += 1;
            if want_grad {
                let o = (s * logits.codebooks() + k) * m;
                let g = &mut dlogits[o..o + m];
                g.copy_from_slice(row);
                softmax_in_place(g);
                g[t] -= 1.0;
            }
        }
    }
    Ok((total, correct, count, dlogits))
}

/// Mean cross-entropy over present target positions; absent slots are ignored.
pub fn loss_masked(logits: &Logits, targets: &InterleavedSequence, pattern: &Pattern) -> Result<f64, ModelError> {
    let (total, _, count, _) = masked_terms(logits, targets, pattern, false)?;
    if count == 0 {
        return Err(ModelError::NoTargets);
    }
    Ok(total / count as f64)
}

/// Fraction of present target positions whose argmax logit is the target.
pub fn masked_accuracy(logits: &Logits, targets: &InterleavedSequence, pattern: &Pattern) -> Result<f64, ModelError> {
    let (_, correct, count, _) = masked_terms(logits, targets, pattern, false)?;
    if count == 0 {
        return Err(ModelError::NoTargets);
    }
    Ok(correct as f64 / count as f64)
}

fn check_against_pattern(seq: &InterleavedSequence, pattern: &Pattern) -> Result<(), ModelError> {
    for s in 0..seq.num_rows() {
        for k in 0..seq.codebooks() {
            let present = s <= pattern.num_steps() && pattern.presence(s, k).is_some();
            let token = seq.get(s, k);
            if present == (token == 0) {
                return Err(ModelError::Shape(format!(
                    "slot ({s}, {k}) holds {token}, inconsistent with the pattern"
                )));
            }
        }
    }
    Ok(())
}

/// Batch loss, accuracy and exact gradients.
#[derive(Clone, Debug)]
pub struct LossAndGrad {
    pub loss: f64,
    pub accuracy: f64,
    pub grads: Parameters,
}

fn backward(
    params: &Parameters,
    inputs: &[StepInput],
    condition: &Condition,
    cache: &ForwardCache,
    dlogits: &[f64],
    grads: &mut Parameters,
) {
    let config = &params.config;
    let d = config.dim;
    let f = config.ffn_dim();
    let m = config.vocab;
    let n = inputs.len();
    let kk = config.codebooks;

    let mut dy = vec![0.0; n * d];
    for k in 0..kk {
        let mut dl = vec![0.0; n * m];
        for s in 0..n {
            let o = (s * kk + k) * m;
            dl[s * m..(s + 1) * m].copy_from_slice(&dlogits[o..o + m]);
        }
        let dyk = mat_mul_backward(&cache.y, &params.heads[k], &dl, d, m, &mut grads.heads[k]);
        add_in_place(&mut dy, &dyk);
    }
    let dstream = layer_norm_backward(
        &cache.final_norm,
        &params.ln_out_gain,
        &dy,
        &mut grads.ln_out_gain,
        &mut grads.ln_out_bias,
    );
    let mut dx = vec![0.0; cache.prefix_rows * d];
    dx.extend(dstream);

    for (l, lc) in cache.layers.iter().enumerate().rev() {
        let lp = &params.layers[l];
        let g = &mut grads.layers[l];

        let dh = mat_mul_backward(&lc.hidden, &lp.w_ff2, &dx, f, d, &mut g.w_ff2);
        let dh_pre: Vec<f64> = dh.iter().zip(&lc.hidden_pre).map(|(&g, &z)| if z > 0.0 { g } else { 0.0 }).collect();
        let da3 = mat_mul_backward(&lc.a3, &lp.w_ff1, &dh_pre, d, f, &mut g.w_ff1);
        let dres = layer_norm_backward(&lc.norm3, &lp.ln_ffn_gain, &da3, &mut g.ln_ffn_gain, &mut g.ln_ffn_bias);
        add_in_place(&mut dx, &dres);

        if let (Some(cc), Some(c)) = (&lc.cross, condition.cross_rows()) {
            let dctx = mat_mul_backward(&cc.ctx, &lp.c_o, &dx, d, d, &mut g.c_o);
            let (dq, dk, dv) = attention_backward(&cc.q, &cc.k, &cc.v, &cc.probs, &dctx, config);
            let da = mat_mul_backward(&cc.a, &lp.c_q, &dq, d, d, &mut g.c_q);
            mat_mul_backward(c.as_slice(), &lp.c_k, &dk, d, d, &mut g.c_k);
            mat_mul_backward(c.as_slice(), &lp.c_v, &dv, d, d, &mut g.c_v);
            let dres = layer_norm_backward(&cc.norm, &lp.ln_cross_gain, &da, &mut g.ln_cross_gain, &mut g.ln_cross_bias);
            add_in_place(&mut dx, &dres);
        }

        let dctx = mat_mul_backward(&lc.ctx, &lp.w_o, &dx, d, d, &mut g.w_o);
        let (dq, dk, dv) = attention_backward(&lc.q, &lc.k, &lc.v, &lc.probs, &dctx, config);
        let mut da1 = mat_mul_backward(&lc.a1, &lp.w_q, &dq, d, d, &mut g.w_q);
        add_in_place(&mut da1, &mat_mul_backward(&lc.a1, &lp.w_k, &dk, d, d, &mut g.w_k));
        add_in_place(&mut da1, &mat_mul_backward(&lc.a1, &lp.w_v, &dv, d, d, &mut g.w_v));
        let dres = layer_norm_backward(&lc.norm1, &lp.ln_self_gain, &da1, &mut g.ln_self_gain, &mut g.ln_self_bias);
        add_in_place(&mut dx, &dres);
    }

    for (s, input) in inputs.iter().enumerate() {
        let row = &dx[(cache.prefix_rows + s) * d..(cache.prefix_rows + s + 1) * d];
        for (k, &token) in input.tokens.iter().enumerate() {
            let t = token as usize;
            add_in_place(&mut grads.embeddings[k][t * d..(t + 1) * d], row);
        }
    }
}

/// Mean masked cross-entropy over the whole batch and its exact gradient.
/// Every sequence must be laid out by `pattern` (row 0 all special).
pub fn grad(params: &Parameters, batch: &[TrainingSequence], pattern: &Pattern) -> Result<LossAndGrad, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::NoTargets);
    }
    let mut count = 0;
    for item in batch {
        check_against_pattern(&item.sequence, pattern)?;
        let n = item.sequence.num_rows().saturating_sub(1);
        count += (1..=n.min(pattern.num_steps())).map(|s| pattern.step(s).len()).sum::<usize>();
    }
    if count == 0 {
        return Err(ModelError::NoTargets);
    }
    let norm = 1.0 / count as f64;
    let mut grads = params.zeros_like();
    let (mut total, mut correct) = (0.0, 0);
    for item in batch {
        let n = item.sequence.num_rows() - 1;
        let inputs = StepInput::from_sequence(&item.sequence, n);
        let (logits, cache, _) = forward_cached(params, &inputs, &item.condition)?;
        let (loss, right, _, mut dlogits) = masked_terms(&logits, &item.sequence, pattern, true)?;
        total += loss;
        correct += right;
        for g in &mut dlogits {
            *g *= norm;
        }
        backward(params, &inputs, &item.condition, &cache, &dlogits, &mut grads);
    }
    let loss = total * norm;
    if !loss.is_finite() {
        return Err(ModelError::NonFinite("loss"));
    }
    Ok(LossAndGrad {
        loss,
        accuracy: correct as f64 * norm,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::conditioning::ConditioningTensor;
    use crate::grid::TokenGrid;
    use crate::model::{init_params, ConditioningMode};
    use crate::patterns::{build_pattern, PatternKind};

    fn config(mode: ConditioningMode) -> ModelConfig {
        ModelConfig {
            codebooks: 2,
            vocab: 5,
            dim: 16,
            layers: 2,
            heads: 2,
            ffn_mult: 4,
            max_steps: 32,
            conditioning: mode,
        }
    }

    fn random_grid(t: usize, k: usize, m: usize, seed: u64) -> TokenGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tokens = (0..t * k).map(|_| rng.random_range(1..=m as u32)).collect();
        TokenGrid::new(t, k, m, tokens).unwrap()
    }

    fn random_condition(rows: usize, dim: usize, seed: u64) -> ConditioningTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ConditioningTensor::new(dim, (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn first_input_is_sum_of_absence_rows() {
        let p = init_params(&config(ConditioningMode::None), 1).unwrap();
        let x = embed_step(&p, &StepInput { step: 0, tokens: &[0, 0] }).unwrap();
        let pe = sinusoidal_position(0, 16);
        for i in 0..16 {
            let expect = p.embedding_row(0, 0)[i] + p.embedding_row(1, 0)[i] + pe[i];
            assert!((x[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn position_cancels_and_shifts() {
        let p = init_params(&config(ConditioningMode::None), 1).unwrap();
        let e = |s, t: &[u32]| embed_step(&p, &StepInput { step: s, tokens: t }).unwrap();
        let (a3, b3, a7) = (e(3, &[4, 0]), e(3, &[0, 0]), e(7, &[4, 0]));
        let b7 = e(7, &[0, 0]);
        let (pe3, pe7) = (sinusoidal_position(3, 16), sinusoidal_position(7, 16));
        for i in 0..16 {
            assert!(((a3[i] - b3[i]) - (a7[i] - b7[i])).abs() < 1e-12);
            assert!(((a7[i] - a3[i]) - (pe7[i] - pe3[i])).abs() < 1e-12);
        }
        assert!(embed_step(&p, &StepInput { step: 1, tokens: &[6, 0] }).is_err());
        assert!(embed_step(&p, &StepInput { step: 32, tokens: &[1, 1] }).is_err());
    }

    #[test]
    fn causality_under_future_perturbation() {
        let p = init_params(&config(ConditioningMode::CrossAttention), 3).unwrap();
        let cond = Condition::cross(random_condition(3, 16, 4));
        let rows: Vec<Vec<u32>> = (0..8).map(|s| vec![(s % 5 + 1) as u32, ((s * 3) % 5 + 1) as u32]).collect();
        let inputs: Vec<StepInput> = rows.iter().enumerate().map(|(s, r)| StepInput { step: s, tokens: r }).collect();
        let base = forward(&p, &inputs, &cond).unwrap();
        let mut perturbed = rows.clone();
        perturbed[5] = vec![0, 2];
        let inputs2: Vec<StepInput> =
            perturbed.iter().enumerate().map(|(s, r)| StepInput { step: s, tokens: r }).collect();
        let other = forward(&p, &inputs2, &cond).unwrap();
        for s in 0..5 {
            assert_eq!(base.position(s), other.position(s));
        }
        assert_ne!(base.position(5), other.position(5));
    }

    #[test]
    fn empty_cross_condition_is_a_zero_contribution() {
        let cfg = config(ConditioningMode::CrossAttention);
        let p = init_params(&cfg, 3).unwrap();
        let rows = [vec![0u32, 0], vec![1, 0], vec![2, 3]];
        let inputs: Vec<StepInput> = rows.iter().enumerate().map(|(s, r)| StepInput { step: s, tokens: r }).collect();
        let a = forward(&p, &inputs, &Condition::none()).unwrap();
        let b = forward(&p, &inputs, &Condition::cross(ConditioningTensor::empty(16))).unwrap();
        assert_eq!(a, b);
        // a model without the cross path but otherwise equal weights agrees too
        let mut plain = p.clone();
        plain.config.conditioning = ConditioningMode::None;
        for l in &mut plain.layers {
            for block in [&mut l.c_q, &mut l.c_k, &mut l.c_v, &mut l.c_o, &mut l.ln_cross_gain, &mut l.ln_cross_bias] {
                block.clear();
            }
        }
        plain.check_shapes().unwrap();
        assert_eq!(forward(&plain, &inputs, &Condition::none()).unwrap(), a);
    }

    #[test]
    fn condition_routing_is_checked() {
        let p = init_params(&config(ConditioningMode::None), 3).unwrap();
        let inputs = [StepInput { step: 0, tokens: &[0, 0] }];
        let c = Condition::cross(random_condition(2, 16, 1));
        assert!(matches!(forward(&p, &inputs, &c), Err(ModelError::ConditionNotAccepted(_))));
        let p = init_params(&config(ConditioningMode::Prefix), 3).unwrap();
        let wrong_width = Condition::prefix(random_condition(2, 8, 1));
        assert!(matches!(forward(&p, &inputs, &wrong_width), Err(ModelError::Shape(_))));
        let logits = forward(&p, &inputs, &Condition::prefix(random_condition(2, 16, 1))).unwrap();
        assert_eq!((logits.steps(), logits.codebooks(), logits.vocab()), (1, 2, 5));
        assert!(logits.as_slice().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn zeroed_layers_reduce_to_embedding_stream() {
        let mut p = init_params(&config(ConditioningMode::CrossAttention), 9).unwrap();
        for l in &mut p.layers {
            for block in [&mut l.w_o, &mut l.c_o, &mut l.w_ff2] {
                block.fill(0.0);
            }
        }
        let rows = [vec![0u32, 0], vec![3, 0], vec![2, 5]];
        let inputs: Vec<StepInput> = rows.iter().enumerate().map(|(s, r)| StepInput { step: s, tokens: r }).collect();
        let cond = Condition::cross(random_condition(2, 16, 1));
        let stream = hidden_states(&p, &inputs, &cond).unwrap();
        for (s, input) in inputs.iter().enumerate() {
            assert_eq!(&stream[s * 16..(s + 1) * 16], embed_step(&p, input).unwrap().as_slice());
        }
    }

    #[test]
    fn swapping_codebooks_permutes_logits() {
        let p = init_params(&config(ConditioningMode::None), 11).unwrap();
        let mut q = p.clone();
        q.embeddings.swap(0, 1);
        q.heads.swap(0, 1);
        let rows = [vec![0u32, 0], vec![3, 0], vec![2, 5], vec![1, 4]];
        let swapped: Vec<Vec<u32>> = rows.iter().map(|r| vec![r[1], r[0]]).collect();
        let a = forward(&p, &StepInput::from_rows(&rows), &Condition::none()).unwrap();
        let b = forward(&q, &StepInput::from_rows(&swapped), &Condition::none()).unwrap();
        for s in 0..rows.len() {
            for (x, y) in a.get(s, 0).iter().zip(b.get(s, 1)) {
                assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in a.get(s, 1).iter().zip(b.get(s, 0)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_and_confident_losses() {
        let pattern = build_pattern(PatternKind::Parallel, 2, 2).unwrap();
        let grid = TokenGrid::from_rows(&[vec![1, 2], vec![3, 4]], 4).unwrap();
        let seq = pattern.apply(&grid).unwrap();
        let uniform = Logits::new(2, 2, 4, vec![0.7; 16]).unwrap();
        assert!((loss_masked(&uniform, &seq, &pattern).unwrap() - 4f64.ln()).abs() < 1e-12);
        let mut data = vec![-50.0; 16];
        for s in 0..2 {
            for k in 0..2 {
                data[(s * 2 + k) * 4 + seq.get(s + 1, k) as usize - 1] = 50.0;
            }
        }
        let sharp = Logits::new(2, 2, 4, data).unwrap();
        assert!(loss_masked(&sharp, &seq, &pattern).unwrap() < 1e-12);
        assert_eq!(masked_accuracy(&sharp, &seq, &pattern).unwrap(), 1.0);
    }

    #[test]
    fn loss_ignores_masked_slots() {
        let pattern = build_pattern(PatternKind::Delay, 3, 2).unwrap();
        let grid = random_grid(3, 2, 5, 2);
        let seq = pattern.apply(&grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..pattern.num_steps() * 2 * 5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let logits = Logits::new(pattern.num_steps(), 2, 5, data).unwrap();
        let mut scribbled = seq.clone();
        for s in 0..scribbled.num_rows() {
            for k in 0..2 {
                if pattern.presence(s, k).is_none() {
                    scribbled.set(s, k, 3);
                }
            }
        }
        assert_eq!(
            loss_masked(&logits, &seq, &pattern).unwrap(),
            loss_masked(&logits, &scribbled, &pattern).unwrap()
        );
    }

    #[test]
    fn unused_embedding_rows_get_zero_gradient() {
        let cfg = config(ConditioningMode::None);
        let p = init_params(&cfg, 2).unwrap();
        let pattern = build_pattern(PatternKind::Parallel, 3, 2).unwrap();
        let grid = TokenGrid::from_rows(&[vec![1, 2], vec![1, 2], vec![1, 2]], 5).unwrap();
        let batch = [TrainingSequence {
            sequence: pattern.apply(&grid).unwrap(),
            condition: Condition::none(),
        }];
        let g = grad(&p, &batch, &pattern).unwrap();
        for token in 3..=5usize {
            for k in 0..2 {
                assert!(g.grads.embeddings[k][token * 16..(token + 1) * 16].iter().all(|&x| x == 0.0));
            }
        }
        let again = grad(&p, &batch, &pattern).unwrap();
        assert_eq!(g.grads, again.grads);
        assert_eq!(g.loss, again.loss);
    }

    #[test]
    fn inconsistent_sequences_are_rejected() {
        let p = init_params(&config(ConditioningMode::None), 2).unwrap();
        let pattern = build_pattern(PatternKind::Delay, 2, 2).unwrap();
        let mut seq = pattern.apply(&random_grid(2, 2, 5, 1)).unwrap();
        seq.set(1, 1, 4);
        let batch = [TrainingSequence {
            sequence: seq,
            condition: Condition::none(),
        }];
        assert!(grad(&p, &batch, &pattern).is_err());
    }
}
