use super::kernels::{add_in_place, attend_row, layer_norm_row, mat_mul, relu, vec_mat};
use super::transformer::{embed_step, Logits};
use super::{Condition, ModelConfig, ModelError, Parameters, StepInput};

/// Incremental decoding state: cached self-attention keys/values per layer
/// and precomputed cross-attention keys/values. Feeding steps one at a time
/// reproduces [`forward`](super::forward) bit for bit.
pub struct Session<'a> {
    params: &'a Parameters,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    cross: Vec<Option<(Vec<f64>, Vec<f64>, usize)>>,
    steps: usize,
}

impl<'a> Session<'a> {
    /// Starts a session, running any prefix condition through the decoder.
    pub fn new(params: &'a Parameters, condition: &Condition) -> Result<Self, ModelError> {
        let config = &params.config;
        condition.check(config)?;
        params.check_shapes()?;
        let d = config.dim;
        let cross = params
            .layers
            .iter()
            .map(|lp| {
                condition
                    .cross_rows()
                    .filter(|_| config.conditioning.uses_cross())
                    .map(|c| (mat_mul(c.as_slice(), &lp.c_k, d, d), mat_mul(c.as_slice(), &lp.c_v, d, d), c.len()))
            })
            .collect();
        let mut session = Self {
            params,
            keys: vec![Vec::new(); config.layers],
            values: vec![Vec::new(); config.layers],
            cross,
            steps: 0,
        };
        if let Some(prefix) = condition.prefix_rows() {
            for row in prefix.rows() {
                session.push_row(row.to_vec());
            }
        }
        Ok(session)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    /// Number of steps consumed so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    fn push_row(&mut self, mut x: Vec<f64>) -> Vec<f64> {
        let config = &self.params.config;
        let d = config.dim;
        let dh = config.head_dim();
        let f = config.ffn_dim();
        let mut a = vec![0.0; d];
        let mut xhat = vec![0.0; d];
        let mut q = vec![0.0; d];
        let mut ctx = vec![0.0; d];
        let mut out = vec![0.0; d];
        for (l, lp) in self.params.layers.iter().enumerate() {
            layer_norm_row(&x, &lp.ln_self_gain, &lp.ln_self_bias, &mut a, &mut xhat);
            vec_mat(&a, &lp.w_q, &mut q);
            let mut k = vec![0.0; d];
            let mut v = vec![0.0; d];
            vec_mat(&a, &lp.w_k, &mut k);
            vec_mat(&a, &lp.w_v, &mut v);
            self.keys[l].extend(k);
            self.values[l].extend(v);
            let n = self.keys[l].len() / d;
            let mut probs = vec![0.0; n];
            for h in 0..config.heads {
                let o = h * dh;
                attend_row(&q[o..o + dh], &self.keys[l], &self.values[l], d, o, &mut probs, &mut ctx[o..o + dh]);
            }
            vec_mat(&ctx, &lp.w_o, &mut out);
            add_in_place(&mut x, &out);

            if let Some((ck, cv, rows)) = &self.cross[l] {
                layer_norm_row(&x, &lp.ln_cross_gain, &lp.ln_cross_bias, &mut a, &mut xhat);
                vec_mat(&a, &lp.c_q, &mut q);
                let mut probs = vec![0.0; *rows];
                for h in 0..config.heads {
                    let o = h * dh;
                    attend_row(&q[o..o + dh], ck, cv, d, o, &mut probs, &mut ctx[o..o + dh]);
                }
                vec_mat(&ctx, &lp.c_o, &mut out);
                add_in_place(&mut x, &out);
            }

            layer_norm_row(&x, &lp.ln_ffn_gain, &lp.ln_ffn_bias, &mut a, &mut xhat);
            let mut hidden = vec![0.0; f];
            vec_mat(&a, &lp.w_ff1, &mut hidden);
            let hidden = relu(&hidden);
            vec_mat(&hidden, &lp.w_ff2, &mut out);
            add_in_place(&mut x, &out);
        }
        x
    }

    /// Consumes the next step's tokens and returns the `1 x K x M` logits
    /// predicting the following step.
    pub fn advance(&mut self, tokens: &[u32]) -> Result<Logits, ModelError> {
        let config = &self.params.config;
        let x = embed_step(
            self.params,
            &StepInput {
                step: self.steps,
                tokens,
            },
        )?;
        let x = self.push_row(x);
        self.steps += 1;
        let d = config.dim;
        let mut y = vec![0.0; d];
        let mut xhat = vec![0.0; d];
        layer_norm_row(&x, &self.params.ln_out_gain, &self.params.ln_out_bias, &mut y, &mut xhat);
        let mut data = vec![0.0; config.codebooks * config.vocab];
        for (k, head) in self.params.heads.iter().enumerate() {
            vec_mat(&y, head, &mut data[k * config.vocab..(k + 1) * config.vocab]);
        }
        Logits::new(1, config.codebooks, config.vocab, data)
    }
}
