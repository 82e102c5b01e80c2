use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError};

/// Weights of one decoder layer. Attention and feed-forward matrices are
/// `in x out`; the cross-attention block is empty when the config has no
/// cross-attention path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub ln_self_gain: Vec<f64>,
    pub ln_self_bias: Vec<f64>,
    pub w_q: Vec<f64>,
    pub w_k: Vec<f64>,
    pub w_v: Vec<f64>,
    pub w_o: Vec<f64>,
    pub ln_cross_gain: Vec<f64>,
    pub ln_cross_bias: Vec<f64>,
    pub c_q: Vec<f64>,
    pub c_k: Vec<f64>,
    pub c_v: Vec<f64>,
    pub c_o: Vec<f64>,
    pub ln_ffn_gain: Vec<f64>,
    pub ln_ffn_bias: Vec<f64>,
    pub w_ff1: Vec<f64>,
    pub w_ff2: Vec<f64>,
}

/// All model weights. The same structure doubles as a gradient or optimizer
/// moment container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub config: ModelConfig,
    /// Per codebook, `(M + 1) x D`; row 0 is the absence token.
    pub embeddings: Vec<Vec<f64>>,
    pub layers: Vec<LayerParams>,
    pub ln_out_gain: Vec<f64>,
    pub ln_out_bias: Vec<f64>,
    /// Per codebook, `D x M`.
    pub heads: Vec<Vec<f64>>,
}

/// Whether a block is a weight matrix (decayed) or a norm gain/bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Matrix,
    Norm,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Seeded scaled-Gaussian initialization: projections use `1/sqrt(fan_in)`,
/// embeddings (absence rows included) unit variance, norms gain 1 bias 0.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<Parameters, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.dim;
    let f = config.ffn_dim();
    let proj = 1.0 / (d as f64).sqrt();
    let ffn_out = 1.0 / (f as f64).sqrt();
    let cross = config.conditioning.uses_cross();

    let embeddings = (0..config.codebooks)
        .map(|_| gaussian(&mut rng, (config.vocab + 1) * d, 1.0))
        .collect();
    let layers = (0..config.layers)
        .map(|_| {
            let cross_block = |rng: &mut ChaCha8Rng| if cross { gaussian(rng, d * d, proj) } else { Vec::new() };
            LayerParams {
                ln_self_gain: vec![1.0; d],
                ln_self_bias: vec![0.0; d],
                w_q: gaussian(&mut rng, d * d, proj),
                w_k: gaussian(&mut rng, d * d, proj),
                w_v: gaussian(&mut rng, d * d, proj),
                w_o: gaussian(&mut rng, d * d, proj),
                ln_cross_gain: if cross { vec![1.0; d] } else { Vec::new() },
                ln_cross_bias: if cross { vec![0.0; d] } else { Vec::new() },
                c_q: cross_block(&mut rng),
                c_k: cross_block(&mut rng),
                c_v: cross_block(&mut rng),
                c_o: cross_block(&mut rng),
                ln_ffn_gain: vec![1.0; d],
                ln_ffn_bias: vec![0.0; d],
                w_ff1: gaussian(&mut rng, d * f, proj),
                w_ff2: gaussian(&mut rng, f * d, ffn_out),
            }
        })
        .collect();
    let heads = (0..config.codebooks)
        .map(|_| gaussian(&mut rng, d * config.vocab, proj))
        .collect();
    Ok(Parameters {
        config: config.clone(),
        embeddings,
        layers,
        ln_out_gain: vec![1.0; d],
        ln_out_bias: vec![0.0; d],
        heads,
    })
}

const LAYER_BLOCKS: [(&str, BlockKind); 16] = [
    ("ln_self_gain", BlockKind::Norm),
    ("ln_self_bias", BlockKind::Norm),
    ("w_q", BlockKind::Matrix),
    ("w_k", BlockKind::Matrix),
    ("w_v", BlockKind::Matrix),
    ("w_o", BlockKind::Matrix),
    ("ln_cross_gain", BlockKind::Norm),
    ("ln_cross_bias", BlockKind::Norm),
    ("c_q", BlockKind::Matrix),
    ("c_k", BlockKind::Matrix),
    ("c_v", BlockKind::Matrix),
    ("c_o", BlockKind::Matrix),
    ("ln_ffn_gain", BlockKind::Norm),
    ("ln_ffn_bias", BlockKind::Norm),
    ("w_ff1", BlockKind::Matrix),
    ("w_ff2", BlockKind::Matrix),
];

impl LayerParams {
    /// Blocks in [`LAYER_BLOCKS`] order.
    fn blocks(&self) -> [&[f64]; 16] {
        [
            &self.ln_self_gain,
            &self.ln_self_bias,
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.w_o,
            &self.ln_cross_gain,
            &self.ln_cross_bias,
            &self.c_q,
            &self.c_k,
            &self.c_v,
            &self.c_o,
            &self.ln_ffn_gain,
            &self.ln_ffn_bias,
            &self.w_ff1,
            &self.w_ff2,
        ]
    }

    fn blocks_mut(&mut self) -> [&mut [f64]; 16] {
        [
            &mut self.ln_self_gain,
            &mut self.ln_self_bias,
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_o,
            &mut self.ln_cross_gain,
            &mut self.ln_cross_bias,
            &mut self.c_q,
            &mut self.c_k,
            &mut self.c_v,
            &mut self.c_o,
            &mut self.ln_ffn_gain,
            &mut self.ln_ffn_bias,
            &mut self.w_ff1,
            &mut self.w_ff2,
        ]
    }
}

impl Parameters {
    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for block in z.blocks_mut() {
            block.fill(0.0);
        }
        z
    }

    /// `(name, kind)` of every block in a fixed order, matching
    /// [`Parameters::blocks`] and [`Parameters::blocks_mut`].
    pub fn block_info(&self) -> Vec<(String, BlockKind)> {
        let mut out = Vec::new();
        for k in 0..self.embeddings.len() {
            out.push((format!("embedding[{k}]"), BlockKind::Matrix));
        }
        for l in 0..self.layers.len() {
            out.extend(LAYER_BLOCKS.iter().map(|(name, kind)| (format!("layer[{l}].{name}"), *kind)));
        }
        out.push(("ln_out_gain".into(), BlockKind::Norm));
        out.push(("ln_out_bias".into(), BlockKind::Norm));
        for k in 0..self.heads.len() {
            out.push((format!("head[{k}]"), BlockKind::Matrix));
        }
        out
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.embeddings.iter().map(Vec::as_slice).collect();
        for layer in &self.layers {
            out.extend(layer.blocks());
        }
        out.push(&self.ln_out_gain);
        out.push(&self.ln_out_bias);
        out.extend(self.heads.iter().map(Vec::as_slice));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.embeddings.iter_mut().map(Vec::as_mut_slice).collect();
        for layer in &mut self.layers {
            out.extend(layer.blocks_mut());
        }
        out.push(&mut self.ln_out_gain);
        out.push(&mut self.ln_out_bias);
        out.extend(self.heads.iter_mut().map(Vec::as_mut_slice));
        out
    }

    pub fn count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// Embedding row for codebook `k` (0-based) and token (0 = absent).
    pub fn embedding_row(&self, k: usize, token: u32) -> &[f64] {
        let d = self.config.dim;
        let t = token as usize;
        &self.embeddings[k][t * d..(t + 1) * d]
    }

    /// Checks that every block has the shape the config implies.
    pub fn check_shapes(&self) -> Result<(), ModelError> {
        let reference = Self::shape_template(&self.config);
        let ok = self.layers.len() == self.config.layers
            && self.embeddings.len() == self.config.codebooks
            && self.heads.len() == self.config.codebooks
            && self.blocks().iter().map(|b| b.len()).eq(reference.into_iter());
        if ok {
            Ok(())
        } else {
            Err(ModelError::Shape("parameter blocks do not match config".into()))
        }
    }

    fn shape_template(c: &ModelConfig) -> Vec<usize> {
        let d = c.dim;
        let f = c.ffn_dim();
        let cross = c.conditioning.uses_cross();
        let x = |n: usize| if cross { n } else { 0 };
        let mut out = vec![(c.vocab + 1) * d; c.codebooks];
        for _ in 0..c.layers {
            out.extend([d, d, d * d, d * d, d * d, d * d, x(d), x(d), x(d * d), x(d * d), x(d * d), x(d * d)]);
            out.extend([d, d, d * f, f * d]);
        }
        out.extend([d, d]);
        out.extend(std::iter::repeat_n(d * c.vocab, c.codebooks));
        out
    }
}
