//! A small residual vector quantizer over synthetic latent frames.
//!
//! Stage `k` quantizes the residual left by stages `1..k-1`, so the resulting
//! token streams are correlated across codebooks and the first stage carries
//! most of the signal energy. Codebooks are fit with seeded k-means instead of
//! being learned end-to-end with an audio autoencoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, TokenGrid};

#[derive(Debug, Error)]
pub enum RvqError {
    #[error("need at least {needed} frames to fit {needed} centroids, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid config: {0}")]
    Config(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("token {token} of codebook {k} outside 1..={vocab}")]
    TokenOutOfRange { k: usize, token: u32, vocab: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RvqConfig {
    /// Number of quantizer stages `K`.
    pub codebooks: usize,
    /// Centroids per stage `M`.
    pub codebook_size: usize,
    pub latent_dim: usize,
    /// Frames per second; informational only.
    pub frame_rate: f64,
}

impl Default for RvqConfig {
    /// Four stages as in the reference tokenizer, with `M` cut from 2048 to 64.
    fn default() -> Self {
        Self {
            codebooks: 4,
            codebook_size: 64,
            latent_dim: 8,
            frame_rate: 50.0,
        }
    }
}

impl RvqConfig {
    pub fn validate(&self) -> Result<(), RvqError> {
        if self.codebooks == 0 {
            return Err(RvqError::Config("codebooks must be >= 1"));
        }
        if self.codebook_size == 0 {
            return Err(RvqError::Config("codebook_size must be >= 1"));
        }
        if self.latent_dim == 0 {
            return Err(RvqError::Config("latent_dim must be >= 1"));
        }
        Ok(())
    }
}

/// `T` latent frames of dimension `d`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentFrames {
    dim: usize,
    data: Vec<f64>,
}

impl LatentFrames {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "data length must be a multiple of dim");
        Self { dim, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(1, Vec::len);
        Self::new(dim, rows.iter().flatten().copied().collect())
    }

    pub fn empty(dim: usize) -> Self {
        Self::new(dim, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Mean squared Euclidean norm of the frames (0 for no frames).
    pub fn mean_energy(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|x| x * x).sum::<f64>() / self.len() as f64
    }
}

/// The centroids of one quantizer stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub centroids: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// 0-based index of the nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in self.centroids.iter().enumerate() {
            let d = sq_dist(x, c);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        best
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A temporally correlated latent sequence: a leaky random walk (AR(1) with
/// coefficient 0.9) whose per-dimension scale decays geometrically so that
/// the residual structure is not isotropic.
pub fn synth_latents(frames: usize, dim: usize, seed: u64) -> LatentFrames {
    const LEAK: f64 = 0.9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let innovation = (1.0 - LEAK * LEAK).sqrt();
    let scales: Vec<f64> = (0..dim).map(|i| 0.8f64.powi(i as i32)).collect();
    let mut state: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut data = Vec::with_capacity(frames * dim);
    for _ in 0..frames {
        for (i, s) in state.iter_mut().enumerate() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *s = LEAK * *s + innovation * noise;
            data.push(*s * scales[i]);
        }
    }
    LatentFrames::new(dim, data)
}

/// Seeded k-means++ initialization followed by `iterations` Lloyd rounds.
fn kmeans(points: &LatentFrames, k: usize, iterations: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let dim = points.dim();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points.frame(rng.random_range(0..n)).to_vec());
    let mut d2: Vec<f64> = points.frames().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // guard against float drift landing on an already-chosen point
            if d2[pick] == 0.0 {
                pick = argmax(&d2);
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points.frame(next).to_vec());
        let c = centroids.last().unwrap();
        for (i, p) in points.frames().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, c));
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..iterations {
        let book = Codebook { centroids };
        for (i, p) in points.frames().enumerate() {
            assign[i] = book.nearest(p);
        }
        centroids = book.centroids;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.frames().enumerate() {
            counts[assign[i]] += 1;
            for (s, x) in sums[assign[i]].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut empty = Vec::new();
        for j in 0..k {
            if counts[j] == 0 {
                empty.push(j);
            } else {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        if !empty.is_empty() {
            // reseed empty clusters at the points farthest from their centroid
            let mut cost: Vec<(f64, usize)> = points
                .frames()
                .enumerate()
                .map(|(i, p)| (sq_dist(p, &centroids[assign[i]]), i))
                .collect();
            cost.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for (j, (_, i)) in empty.into_iter().zip(cost) {
                centroids[j] = points.frame(i).to_vec();
            }
        }
    }
    centroids
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Fits `K` residual stages with k-means; stage `k` sees the residuals left by
/// stages `1..k-1`.
pub fn train_codebooks(
    frames: &LatentFrames,
    config: &RvqConfig,
    iterations: usize,
    seed: u64,
) -> Result<Vec<Codebook>, RvqError> {
    config.validate()?;
    if frames.dim() != config.latent_dim {
        return Err(RvqError::Dimension {
            expected: config.latent_dim,
            got: frames.dim(),
        });
    }
    if frames.len() < config.codebook_size {
        return Err(RvqError::InsufficientData {
            needed: config.codebook_size,
            got: frames.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut residual = frames.clone();
    let mut books = Vec::with_capacity(config.codebooks);
    for _ in 0..config.codebooks {
        let book = Codebook {
            centroids: kmeans(&residual, config.codebook_size, iterations, &mut rng),
        };
        for t in 0..residual.len() {
            let j = book.nearest(residual.frame(t));
            let start = t * residual.dim;
            for (r, c) in residual.data[start..start + residual.dim]
                .iter_mut()
                .zip(&book.centroids[j])
            {
                *r -= c;
            }
        }
        books.push(book);
    }
    Ok(books)
}

fn check_books(dim: usize, codebooks: &[Codebook]) -> Result<usize, RvqError> {
    let vocab = codebooks.first().map_or(0, Codebook::len);
    for book in codebooks {
        if book.len() != vocab {
            return Err(RvqError::Config("all stages must have the same codebook size"));
        }
        if let Some(c) = book.centroids.iter().find(|c| c.len() != dim) {
            return Err(RvqError::Dimension {
                expected: dim,
                got: c.len(),
            });
        }
    }
    Ok(vocab)
}

/// Greedy residual encoding of every frame; tokens are 1-based.
pub fn rvq_encode(frames: &LatentFrames, codebooks: &[Codebook]) -> Result<TokenGrid, RvqError> {
    let vocab = check_books(frames.dim(), codebooks)?;
    let mut tokens = Vec::with_capacity(frames.len() * codebooks.len());
    let mut residual = vec![0.0; frames.dim()];
    for frame in frames.frames() {
        residual.copy_from_slice(frame);
        for book in codebooks {
            let j = book.nearest(&residual);
            for (r, c) in residual.iter_mut().zip(&book.centroids[j]) {
                *r -= c;
            }
            tokens.push(j as u32 + 1);
        }
    }
    Ok(TokenGrid::new(frames.len(), codebooks.len(), vocab, tokens)?)
}

/// Reconstruction from the first `stages` codebooks only.
pub fn rvq_decode_stages(grid: &TokenGrid, codebooks: &[Codebook], stages: usize) -> Result<LatentFrames, RvqError> {
    let dim = codebooks
        .first()
        .and_then(|b| b.centroids.first())
        .map_or(1, Vec::len);
    let vocab = check_books(dim, codebooks)?;
    if grid.codebooks() != codebooks.len() {
        return Err(RvqError::Dimension {
            expected: codebooks.len(),
            got: grid.codebooks(),
        });
    }
    let mut data = vec![0.0; grid.timesteps() * dim];
    for t in 0..grid.timesteps() {
        let out = &mut data[t * dim..(t + 1) * dim];
        for (k, book) in codebooks.iter().enumerate().take(stages) {
            let token = grid.get(t, k);
            if token == 0 || token as usize > vocab {
                return Err(RvqError::TokenOutOfRange { k: k + 1, token, vocab });
            }
            for (o, c) in out.iter_mut().zip(&book.centroids[token as usize - 1]) {
                *o += c;
            }
        }
    }
    Ok(LatentFrames::new(dim, data))
}

/// Sum of the selected centroids of every stage.
pub fn rvq_decode(grid: &TokenGrid, codebooks: &[Codebook]) -> Result<LatentFrames, RvqError> {
    rvq_decode_stages(grid, codebooks, codebooks.len())
}

/// Mean squared residual after `0, 1, ..., K` stages.
pub fn residual_energy_profile(frames: &LatentFrames, codebooks: &[Codebook]) -> Result<Vec<f64>, RvqError> {
    check_books(frames.dim(), codebooks)?;
    let mut residual = frames.clone();
    let mut profile = vec![residual.mean_energy()];
    for book in codebooks {
        let dim = residual.dim;
        for r in residual.data.chunks_mut(dim) {
            let j = book.nearest(r);
            for (x, c) in r.iter_mut().zip(&book.centroids[j]) {
                *x -= c;
            }
        }
        profile.push(residual.mean_energy());
    }
    Ok(profile)
}

/// Mean squared reconstruction error between two frame sequences.
pub fn mean_squared_error(a: &LatentFrames, b: &LatentFrames) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lag1_autocorrelation(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
        let cov: f64 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
        cov / var
    }

    #[test]
    fn latents_are_deterministic_and_correlated() {
        assert_eq!(synth_latents(100, 8, 1), synth_latents(100, 8, 1));
        assert_ne!(synth_latents(100, 8, 1), synth_latents(100, 8, 2));
        let x = synth_latents(10_000, 4, 3);
        for d in 0..4 {
            let series: Vec<f64> = x.frames().map(|f| f[d]).collect();
            let r = lag1_autocorrelation(&series);
            assert!(r > 0.5, "dimension {d}: lag-1 autocorrelation {r}");
        }
        let one = synth_latents(1, 1, 0);
        assert_eq!(one.len(), 1);
        assert!(one.frame(0)[0].is_finite());
    }

    #[test]
    fn exact_fit_on_m_distinct_points() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64 * 0.5]).collect();
        let frames = LatentFrames::from_rows(&rows);
        let config = RvqConfig {
            codebooks: 1,
            codebook_size: 6,
            latent_dim: 2,
            frame_rate: 50.0,
        };
        let books = train_codebooks(&frames, &config, 5, 11).unwrap();
        let mut got = books[0].centroids.clone();
        got.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(got, rows);
        let profile = residual_energy_profile(&frames, &books).unwrap();
        assert_eq!(profile[1], 0.0);
        assert!(profile[0] > 0.0);
    }

    #[test]
    fn too_few_frames_is_an_error() {
        let frames = synth_latents(10, 8, 0);
        let err = train_codebooks(&frames, &RvqConfig::default(), 3, 0).unwrap_err();
        assert!(matches!(err, RvqError::InsufficientData { needed: 64, got: 10 }));
    }

    #[test]
    fn training_is_deterministic() {
        let frames = synth_latents(500, 8, 4);
        let config = RvqConfig::default();
        assert_eq!(
            train_codebooks(&frames, &config, 4, 9).unwrap(),
            train_codebooks(&frames, &config, 4, 9).unwrap()
        );
    }

    #[test]
    fn energy_does_not_increase_with_more_iterations() {
        let frames = synth_latents(800, 4, 5);
        let config = RvqConfig {
            codebooks: 1,
            codebook_size: 16,
            latent_dim: 4,
            frame_rate: 50.0,
        };
        let mut last = f64::INFINITY;
        for iterations in 0..12 {
            let books = train_codebooks(&frames, &config, iterations, 1).unwrap();
            let e = residual_energy_profile(&frames, &books).unwrap()[1];
            assert!(e <= last + 1e-12, "iteration {iterations}: {e} > {last}");
            last = e;
        }
    }

    #[test]
    fn encode_picks_identical_centroid() {
        let book = Codebook {
            centroids: vec![vec![0.0, 0.0], vec![1.0, 2.0], vec![-3.0, 0.5]],
        };
        let frames = LatentFrames::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.0, 0.0]]);
        let grid = rvq_encode(&frames, std::slice::from_ref(&book)).unwrap();
        assert_eq!(grid.tokens(), &[2, 3, 1]);
        let zeros = LatentFrames::new(2, vec![0.0; 8]);
        assert_eq!(rvq_encode(&zeros, &[book]).unwrap().tokens(), &[1, 1, 1, 1]);
    }

    #[test]
    fn nearest_breaks_ties_by_lowest_index() {
        let book = Codebook {
            centroids: vec![vec![1.0], vec![-1.0], vec![1.0]],
        };
        assert_eq!(book.nearest(&[0.0]), 0);
        assert_eq!(book.nearest(&[1.0]), 0);
    }

    #[test]
    fn decode_sums_centroids_and_checks_range() {
        let book = Codebook {
            centroids: vec![vec![0.5, 1.0], vec![2.0, -1.0]],
        };
        let grid = TokenGrid::new(3, 1, 2, vec![2, 2, 2]).unwrap();
        let out = rvq_decode(&grid, std::slice::from_ref(&book)).unwrap();
        assert!(out.frames().all(|f| f == [2.0, -1.0]));
        let bad = TokenGrid::new(1, 1, 3, vec![3]).unwrap();
        assert!(matches!(
            rvq_decode(&bad, &[book.clone()]),
            Err(RvqError::TokenOutOfRange { token: 3, .. })
        ));
        let empty = TokenGrid::new(0, 1, 2, vec![]).unwrap();
        assert!(rvq_decode(&empty, &[book]).unwrap().is_empty());
    }
}
