//! Exact distributions over tiny token grids.
//!
//! A [`GridDistribution`] lists the probability of every complete `T x K`
//! grid. From it we compute exact conditionals, and by walking a pattern
//! branch by branch we obtain the exact law of the grids a generator produces
//! when it samples each step's positions independently from their true
//! per-position conditionals. Comparing that law with the joint in total
//! variation measures how inexact a pattern is.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::TokenGrid;
use crate::patterns::{build_pattern, Coordinate, Pattern, PatternError, PatternKind};
use crate::rvq::{rvq_encode, train_codebooks, LatentFrames, RvqConfig, RvqError};
use crate::sampling::{SamplingError, StepPredictor};

/// Largest outcome table (and latent path count) the oracle will build.
pub const MAX_OUTCOMES: usize = 1_000_000;
/// Largest number of branches [`induced_distribution`] will visit.
pub const MAX_BRANCHES: usize = 10_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{what} needs {needed} entries, limit is {limit}")]
    TooLarge { what: &'static str, needed: String, limit: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("probabilities must be nonnegative and sum to 1 (sum = {0})")]
    NotNormalized(f64),
    #[error("revealed assignment has probability 0")]
    ZeroProbability,
    #[error("coordinate {0} is both revealed and a target")]
    Overlap(Coordinate),
    #[error("coordinate {0} outside the grid")]
    OutOfRange(Coordinate),
    #[error("token {0} outside 1..=M")]
    BadToken(u32),
    #[error("unknown joint family '{0}' (expected product, diagonal or markov_residual)")]
    UnknownFamily(String),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Rvq(#[from] RvqError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointFamily {
    /// Every position independent and uniform.
    Product,
    /// Within a timestep all codebooks share one uniform token; timesteps independent.
    Diagonal,
    /// Residual codes of a sticky random walk over a few latent levels.
    MarkovResidual,
}

impl JointFamily {
    pub const ALL: [JointFamily; 3] = [Self::Product, Self::Diagonal, Self::MarkovResidual];

    pub fn name(self) -> &'static str {
        match self {
            Self::Product => "product",
            Self::Diagonal => "diagonal",
            Self::MarkovResidual => "markov_residual",
        }
    }
}

impl fmt::Display for JointFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for JointFamily {
    type Err = OracleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| OracleError::UnknownFamily(s.to_string()))
    }
}

/// Probability of every complete grid. Outcome `i` encodes the row-major
/// tokens in base `M`, first position least significant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDistribution {
    timesteps: usize,
    codebooks: usize,
    vocab: usize,
    probs: Vec<f64>,
}

/// The true law of the token grid.
pub type JointDistribution = GridDistribution;
/// The law of generated grids under a pattern.
pub type InducedDistribution = GridDistribution;

fn table_size(timesteps: usize, codebooks: usize, vocab: usize) -> Result<usize, OracleError> {
    let too_large = || OracleError::TooLarge {
        what: "joint table",
        needed: format!("{vocab}^{}", timesteps * codebooks),
        limit: MAX_OUTCOMES,
    };
    if timesteps == 0 || codebooks == 0 || vocab == 0 {
        return Err(OracleError::Shape("T, K and M must be >= 1".into()));
    }
    let exp = u32::try_from(timesteps * codebooks).map_err(|_| too_large())?;
    match vocab.checked_pow(exp) {
        Some(n) if n <= MAX_OUTCOMES => Ok(n),
        _ => Err(too_large()),
    }
}

impl GridDistribution {
    pub fn new(timesteps: usize, codebooks: usize, vocab: usize, probs: Vec<f64>) -> Result<Self, OracleError> {
        let n = table_size(timesteps, codebooks, vocab)?;
        if probs.len() != n {
            return Err(OracleError::Shape(format!("{} probabilities for {n} outcomes", probs.len())));
        }
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(OracleError::NotNormalized(sum));
        }
        Ok(Self {
            timesteps,
            codebooks,
            vocab,
            probs,
        })
    }

    fn zeros(timesteps: usize, codebooks: usize, vocab: usize) -> Result<Self, OracleError> {
        let n = table_size(timesteps, codebooks, vocab)?;
        Ok(Self {
            timesteps,
            codebooks,
            vocab,
            probs: vec![0.0; n],
        })
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn codebooks(&self) -> usize {
        self.codebooks
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn outcomes(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    fn positions(&self) -> usize {
        self.timesteps * self.codebooks
    }

    /// Row-major tokens of outcome `index`.
    pub fn decode(&self, mut index: usize) -> Vec<u32> {
        (0..self.positions())
            .map(|_| {
                let token = (index % self.vocab) as u32 + 1;
                index /= self.vocab;
                token
            })
            .collect()
    }

    /// Outcome index of row-major tokens.
    pub fn encode(&self, tokens: &[u32]) -> usize {
        tokens.iter().rev().fold(0, |acc, &t| acc * self.vocab + (t as usize - 1))
    }

    /// Token at position `pos` (row-major) of outcome `index`.
    fn token_at(&self, index: usize, pos: usize) -> u32 {
        (index / self.vocab.pow(pos as u32) % self.vocab) as u32 + 1
    }

    pub fn grid(&self, index: usize) -> TokenGrid {
        TokenGrid::new(self.timesteps, self.codebooks, self.vocab, self.decode(index)).expect("decoded tokens are in range")
    }

    pub fn prob_of(&self, grid: &TokenGrid) -> Result<f64, OracleError> {
        if (grid.timesteps(), grid.codebooks(), grid.vocab()) != (self.timesteps, self.codebooks, self.vocab) {
            return Err(OracleError::Shape("grid shape differs from the distribution".into()));
        }
        Ok(self.probs[self.encode(grid.tokens())])
    }

    fn position(&self, c: Coordinate) -> Result<usize, OracleError> {
        if c.t == 0 || c.k == 0 || c.t > self.timesteps || c.k > self.codebooks {
            return Err(OracleError::OutOfRange(c));
        }
        Ok(c.row() * self.codebooks + c.col())
    }

    /// Marginal law of one position, indexed by `token - 1`.
    pub fn marginal(&self, c: Coordinate) -> Result<Vec<f64>, OracleError> {
        let pos = self.position(c)?;
        let mut out = vec![0.0; self.vocab];
        for (i, &p) in self.probs.iter().enumerate() {
            out[self.token_at(i, pos) as usize - 1] += p;
        }
        Ok(out)
    }

    /// Mutual information in nats between two positions.
    pub fn mutual_information(&self, a: Coordinate, b: Coordinate) -> Result<f64, OracleError> {
        let (pa, pb) = (self.position(a)?, self.position(b)?);
        let m = self.vocab;
        let mut joint = vec![0.0; m * m];
        for (i, &p) in self.probs.iter().enumerate() {
            let (x, y) = (self.token_at(i, pa) as usize - 1, self.token_at(i, pb) as usize - 1);
            joint[x * m + y] += p;
        }
        let ma: Vec<f64> = (0..m).map(|x| (0..m).map(|y| joint[x * m + y]).sum()).collect();
        let mb: Vec<f64> = (0..m).map(|y| (0..m).map(|x| joint[x * m + y]).sum()).collect();
        let mut mi = 0.0;
        for x in 0..m {
            for y in 0..m {
                let p = joint[x * m + y];
                if p > 0.0 {
                    mi += p * (p / (ma[x] * mb[y])).ln();
                }
            }
        }
        Ok(mi.max(0.0))
    }

    /// Draws one grid.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TokenGrid {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return self.grid(i);
            }
        }
        let last = self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        self.grid(last)
    }
}

/// Sticky random walk over latent levels: stays with high probability,
/// otherwise moves to a nearby level. Rows are seeded perturbations of a
/// distance-decaying kernel.
fn latent_chain(levels: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..levels)
        .map(|i| {
            let mut row: Vec<f64> = (0..levels)
                .map(|j| {
                    let dist = i.abs_diff(j) as f64;
                    (-1.5 * dist).exp() * (0.5 + rng.random::<f64>())
                })
                .collect();
            row[i] *= 3.0;
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
            row
        })
        .collect()
}

const LATENT_LEVELS: usize = 9;

fn markov_residual(timesteps: usize, codebooks: usize, vocab: usize, seed: u64) -> Result<GridDistribution, OracleError> {
    let paths = LATENT_LEVELS
        .checked_pow(timesteps as u32)
        .filter(|&n| n <= MAX_OUTCOMES)
        .ok_or_else(|| OracleError::TooLarge {
            what: "latent path enumeration",
            needed: format!("{LATENT_LEVELS}^{timesteps}"),
            limit: MAX_OUTCOMES,
        })?;
    let mut out = GridDistribution::zeros(timesteps, codebooks, vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chain = latent_chain(LATENT_LEVELS, &mut rng);
    let level_value = |i: usize| i as f64 - (LATENT_LEVELS - 1) as f64 / 2.0;

    // fit the residual quantizer on a long sampled trajectory
    let mut state = rng.random_range(0..LATENT_LEVELS);
    let mut trajectory = Vec::with_capacity(4096);
    for _ in 0..4096 {
        trajectory.push(level_value(state) + 0.05 * (rng.random::<f64>() - 0.5));
        let u: f64 = rng.random();
        let mut acc = 0.0;
        state = chain[state]
            .iter()
            .position(|&p| {
                acc += p;
                u < acc
            })
            .unwrap_or(LATENT_LEVELS - 1);
    }
    let config = RvqConfig {
        codebooks,
        codebook_size: vocab,
        latent_dim: 1,
        frame_rate: 50.0,
    };
    let books = train_codebooks(&LatentFrames::new(1, trajectory), &config, 25, rng.random())?;
    let level_frames = LatentFrames::new(1, (0..LATENT_LEVELS).map(level_value).collect());
    let codes = rvq_encode(&level_frames, &books)?;

    let start = 1.0 / LATENT_LEVELS as f64;
    let mut tokens = vec![0u32; timesteps * codebooks];
    for path in 0..paths {
        let mut rest = path;
        let mut prob = start;
        let mut prev: Option<usize> = None;
        for t in 0..timesteps {
            let level = rest % LATENT_LEVELS;
            rest /= LATENT_LEVELS;
            if let Some(p) = prev {
                prob *= chain[p][level];
            }
            prev = Some(level);
            tokens[t * codebooks..(t + 1) * codebooks].copy_from_slice(codes.row(level));
        }
        let idx = out.encode(&tokens);
        out.probs[idx] += prob;
    }
    Ok(out)
}

/// Builds a joint distribution of the requested family.
pub fn make_joint(
    family: JointFamily,
    timesteps: usize,
    codebooks: usize,
    vocab: usize,
    seed: u64,
) -> Result<JointDistribution, OracleError> {
    match family {
        JointFamily::Product => {
            let n = table_size(timesteps, codebooks, vocab)?;
            GridDistribution::new(timesteps, codebooks, vocab, vec![1.0 / n as f64; n])
        }
        JointFamily::Diagonal => {
            let mut out = GridDistribution::zeros(timesteps, codebooks, vocab)?;
            let mass = (vocab as f64).powi(-(timesteps as i32));
            for i in 0..out.outcomes() {
                let tokens = out.decode(i);
                if tokens.chunks(codebooks).all(|row| row.iter().all(|&x| x == row[0])) {
                    out.probs[i] = mass;
                }
            }
            Ok(out)
        }
        JointFamily::MarkovResidual => markov_residual(timesteps, codebooks, vocab, seed),
    }
}

/// Joint law of a set of target positions; outcome `i` encodes the targets'
/// tokens in base `M`, first target least significant.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetDistribution {
    pub targets: Vec<Coordinate>,
    pub vocab: usize,
    pub probs: Vec<f64>,
}

impl TargetDistribution {
    /// Probability of the given target tokens (in target order).
    pub fn prob(&self, tokens: &[u32]) -> f64 {
        let idx = tokens.iter().rev().fold(0, |acc, &t| acc * self.vocab + (t as usize - 1));
        self.probs[idx]
    }
}

/// Exact conditional law of `targets` given the `revealed` tokens.
pub fn true_conditional(
    joint: &JointDistribution,
    revealed: &[(Coordinate, u32)],
    targets: &[Coordinate],
) -> Result<TargetDistribution, OracleError> {
    let mut fixed = Vec::with_capacity(revealed.len());
    for &(c, token) in revealed {
        if token == 0 || token as usize > joint.vocab {
            return Err(OracleError::BadToken(token));
        }
        fixed.push((joint.position(c)?, token));
    }
    let mut target_pos = Vec::with_capacity(targets.len());
    for &c in targets {
        if revealed.iter().any(|(r, _)| *r == c) {
            return Err(OracleError::Overlap(c));
        }
        target_pos.push(joint.position(c)?);
    }
    let size = joint
        .vocab
        .checked_pow(targets.len() as u32)
        .filter(|&n| n <= MAX_OUTCOMES)
        .ok_or_else(|| OracleError::TooLarge {
            what: "target table",
            needed: format!("{}^{}", joint.vocab, targets.len()),
            limit: MAX_OUTCOMES,
        })?;
    let mut probs = vec![0.0; size];
    let mut mass = 0.0;
    for (i, &p) in joint.probs.iter().enumerate() {
        if p == 0.0 || fixed.iter().any(|&(pos, tok)| joint.token_at(i, pos) != tok) {
            continue;
        }
        let idx = target_pos
            .iter()
            .rev()
            .fold(0, |acc, &pos| acc * joint.vocab + (joint.token_at(i, pos) as usize - 1));
        probs[idx] += p;
        mass += p;
    }
    if mass <= 0.0 {
        return Err(OracleError::ZeroProbability);
    }
    probs.iter_mut().for_each(|p| *p /= mass);
    Ok(TargetDistribution {
        targets: targets.to_vec(),
        vocab: joint.vocab,
        probs,
    })
}

/// Per-position conditional of `pos` over the outcomes in `support`
/// (indices with their probabilities). Falls back to uniform when the
/// support carries no mass.
fn position_conditional(joint: &GridDistribution, support: &[(usize, f64)], pos: usize) -> Vec<f64> {
    let mut out = vec![0.0; joint.vocab];
    let mut mass = 0.0;
    for &(i, p) in support {
        out[joint.token_at(i, pos) as usize - 1] += p;
        mass += p;
    }
    if mass > 0.0 {
        out.iter_mut().for_each(|p| *p /= mass);
    } else {
        out.fill(1.0 / joint.vocab as f64);
    }
    out
}

struct Walker<'a> {
    joint: &'a GridDistribution,
    steps: Vec<Vec<usize>>,
    induced: Vec<f64>,
    branches: usize,
}

impl Walker<'_> {
    fn walk(&mut self, s: usize, assignment: &mut Vec<u32>, support: &[(usize, f64)], prob: f64) -> Result<(), OracleError> {
        self.branches += 1;
        if self.branches > MAX_BRANCHES {
            return Err(OracleError::TooLarge {
                what: "branch enumeration",
                needed: format!("more than {MAX_BRANCHES}"),
                limit: MAX_BRANCHES,
            });
        }
        if s == self.steps.len() {
            let idx = self.joint.encode(assignment);
            self.induced[idx] += prob;
            return Ok(());
        }
        let positions = self.steps[s].clone();
        let conditionals: Vec<Vec<f64>> = positions
            .iter()
            .map(|&pos| position_conditional(self.joint, support, pos))
            .collect();
        let m = self.joint.vocab;
        let combos = m.pow(positions.len() as u32);
        for combo in 0..combos {
            let mut rest = combo;
            let mut p = prob;
            for (j, &pos) in positions.iter().enumerate() {
                let v = rest % m;
                rest /= m;
                p *= conditionals[j][v];
                assignment[pos] = v as u32 + 1;
            }
            if p == 0.0 {
                continue;
            }
            let child: Vec<(usize, f64)> = support
                .iter()
                .copied()
                .filter(|&(i, _)| positions.iter().all(|&pos| self.joint.token_at(i, pos) == assignment[pos]))
                .collect();
            self.walk(s + 1, assignment, &child, p)?;
        }
        for &pos in &positions {
            assignment[pos] = 0;
        }
        Ok(())
    }
}

/// Exact law of grids generated under `pattern` when every position of a
/// step is drawn independently from its true conditional given all earlier
/// steps. Contexts of probability zero (reachable only through inexact
/// steps) continue with uniform conditionals.
pub fn induced_distribution(joint: &JointDistribution, pattern: &Pattern) -> Result<InducedDistribution, OracleError> {
    if pattern.timesteps() != joint.timesteps || pattern.codebooks() != joint.codebooks {
        return Err(OracleError::Shape(format!(
            "pattern is {}x{}, joint is {}x{}",
            pattern.timesteps(),
            pattern.codebooks(),
            joint.timesteps,
            joint.codebooks
        )));
    }
    let report = pattern.validate();
    if !report.ok() {
        return Err(PatternError::Invalid(report).into());
    }
    let steps = (1..=pattern.num_steps())
        .map(|s| pattern.step(s).iter().map(|&c| joint.position(c)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    let support: Vec<(usize, f64)> = joint
        .probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(i, &p)| (i, p))
        .collect();
    let mut walker = Walker {
        joint,
        steps,
        induced: vec![0.0; joint.outcomes()],
        branches: 0,
    };
    let mut assignment = vec![0u32; joint.positions()];
    walker.walk(0, &mut assignment, &support, 1.0)?;
    Ok(GridDistribution {
        timesteps: joint.timesteps,
        codebooks: joint.codebooks,
        vocab: joint.vocab,
        probs: walker.induced,
    })
}

/// `0.5 * sum |p - q|`.
pub fn tv_distance(p: &GridDistribution, q: &GridDistribution) -> Result<f64, OracleError> {
    if (p.timesteps, p.codebooks, p.vocab) != (q.timesteps, q.codebooks, q.vocab) {
        return Err(OracleError::Shape("distributions live on different grids".into()));
    }
    let tv = 0.5 * p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Ok(tv.clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactnessRow {
    pub kind: PatternKind,
    pub exact_steps: usize,
    pub nominal_steps: usize,
    pub tv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactnessReport {
    pub rows: Vec<ExactnessRow>,
}

impl ExactnessReport {
    pub fn row(&self, kind: PatternKind) -> Option<&ExactnessRow> {
        self.rows.iter().find(|r| r.kind == kind)
    }

    /// `pattern,s_exact,s_nominal,tv` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pattern,s_exact,s_nominal,tv\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.kind, r.exact_steps, r.nominal_steps, r.tv));
        }
        out
    }
}

/// One row per pattern kind: step counts and the TV between the joint and
/// the distribution the pattern induces.
pub fn exactness_report(joint: &JointDistribution, kinds: &[PatternKind]) -> Result<ExactnessReport, OracleError> {
    let rows = kinds
        .iter()
        .map(|&kind| {
            let pattern = build_pattern(kind, joint.timesteps, joint.codebooks)?;
            let induced = induced_distribution(joint, &pattern)?;
            let counts = pattern.step_counts();
            Ok(ExactnessRow {
                kind,
                exact_steps: counts.exact,
                nominal_steps: counts.nominal,
                tv: tv_distance(joint, &induced)?,
            })
        })
        .collect::<Result<Vec<_>, OracleError>>()?;
    Ok(ExactnessReport { rows })
}

/// A "model" whose logits are the log of the true per-position conditionals,
/// for driving the sampling loop with a known-correct predictor.
pub struct OraclePredictor<'a> {
    joint: &'a GridDistribution,
    pattern: &'a Pattern,
    revealed: Vec<(Coordinate, u32)>,
    step: usize,
}

impl<'a> OraclePredictor<'a> {
    pub fn new(joint: &'a GridDistribution, pattern: &'a Pattern) -> Result<Self, OracleError> {
        if pattern.timesteps() != joint.timesteps || pattern.codebooks() != joint.codebooks {
            return Err(OracleError::Shape("pattern and joint disagree on T or K".into()));
        }
        Ok(Self {
            joint,
            pattern,
            revealed: Vec::new(),
            step: 0,
        })
    }
}

impl StepPredictor for OraclePredictor<'_> {
    fn codebooks(&self) -> usize {
        self.joint.codebooks
    }

    fn vocab(&self) -> usize {
        self.joint.vocab
    }

    fn advance(&mut self, row: &[u32]) -> Result<Vec<Vec<f64>>, SamplingError> {
        let s = self.step;
        for (k, &token) in row.iter().enumerate() {
            if let Some(t) = self.pattern.presence(s, k) {
                self.revealed.push((Coordinate { t: t + 1, k: k + 1 }, token));
            }
        }
        self.step += 1;
        let mut out = vec![vec![0.0; self.joint.vocab]; self.joint.codebooks];
        if s + 1 > self.pattern.num_steps() {
            return Ok(out);
        }
        for &c in self.pattern.step(s + 1) {
            let probs = match true_conditional(self.joint, &self.revealed, &[c]) {
                Ok(d) => d.probs,
                Err(OracleError::ZeroProbability) => vec![1.0; self.joint.vocab],
                Err(e) => return Err(SamplingError::Predictor(e.to_string())),
            };
            out[c.col()] = probs.iter().map(|p| p.ln()).collect();
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(t: usize, k: usize) -> Coordinate {
        Coordinate { t, k }
    }

    #[test]
    fn diagonal_definition() {
        let j = make_joint(JointFamily::Diagonal, 1, 2, 2, 0).unwrap();
        let p = |a, b| j.prob_of(&TokenGrid::from_rows(&[vec![a, b]], 2).unwrap()).unwrap();
        assert_eq!((p(1, 1), p(2, 2), p(1, 2), p(2, 1)), (0.5, 0.5, 0.0, 0.0));
    }

    #[test]
    fn families_are_normalized() {
        for family in JointFamily::ALL {
            for (t, k, m) in [(1, 2, 2), (2, 2, 3), (3, 2, 2), (2, 3, 2)] {
                let j = make_joint(family, t, k, m, 4).unwrap();
                assert!((j.total_mass() - 1.0).abs() < 1e-12, "{family} {t}x{k}x{m}");
            }
        }
    }

    #[test]
    fn product_marginals_are_uniform_and_independent() {
        let j = make_joint(JointFamily::Product, 2, 2, 3, 0).unwrap();
        for (t, k) in [(1, 1), (2, 2)] {
            for p in j.marginal(c(t, k)).unwrap() {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
        }
        assert!(j.mutual_information(c(1, 1), c(2, 2)).unwrap() < 1e-12);
        let d = make_joint(JointFamily::Diagonal, 1, 2, 3, 0).unwrap();
        assert!((d.mutual_information(c(1, 1), c(1, 2)).unwrap() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn markov_residual_is_correlated() {
        let j = make_joint(JointFamily::MarkovResidual, 3, 2, 3, 11).unwrap();
        assert!(j.mutual_information(c(1, 1), c(2, 1)).unwrap() > 0.05);
        assert_eq!(j, make_joint(JointFamily::MarkovResidual, 3, 2, 3, 11).unwrap());
    }

    #[test]
    fn guard_rejects_large_tables() {
        assert!(matches!(
            make_joint(JointFamily::Product, 4, 4, 4, 0),
            Err(OracleError::TooLarge { .. })
        ));
        assert!(matches!(
            make_joint(JointFamily::Product, 10, 4, 64, 0),
            Err(OracleError::TooLarge { .. })
        ));
    }

    #[test]
    fn conditionals() {
        let j = make_joint(JointFamily::Diagonal, 1, 2, 3, 0).unwrap();
        let point = true_conditional(&j, &[(c(1, 1), 2)], &[c(1, 2)]).unwrap();
        assert_eq!(point.probs, vec![0.0, 1.0, 0.0]);
        let marginal = true_conditional(&j, &[], &[c(1, 2)]).unwrap();
        assert_eq!(marginal.probs, j.marginal(c(1, 2)).unwrap());
        let pair = true_conditional(&j, &[], &[c(1, 1), c(1, 2)]).unwrap();
        assert!((pair.prob(&[3, 3]) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(pair.prob(&[1, 3]), 0.0);
        assert!(matches!(
            true_conditional(&j, &[(c(1, 1), 1)], &[c(1, 1)]),
            Err(OracleError::Overlap(_))
        ));
        let two = make_joint(JointFamily::Diagonal, 2, 2, 2, 0).unwrap();
        assert!(matches!(
            true_conditional(&two, &[(c(1, 1), 1), (c(1, 2), 2)], &[c(2, 1)]),
            Err(OracleError::ZeroProbability)
        ));
    }

    #[test]
    fn parallel_on_diagonal_is_half_off() {
        let j = make_joint(JointFamily::Diagonal, 1, 2, 2, 0).unwrap();
        let pattern = build_pattern(PatternKind::Parallel, 1, 2).unwrap();
        let induced = induced_distribution(&j, &pattern).unwrap();
        assert!(induced.probs().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        assert!((tv_distance(&j, &induced).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn flatten_is_exact_and_mass_is_conserved() {
        for family in JointFamily::ALL {
            let j = make_joint(family, 2, 2, 3, 5).unwrap();
            for kind in [PatternKind::Flatten, PatternKind::Delay, PatternKind::Parallel] {
                let induced = induced_distribution(&j, &build_pattern(kind, 2, 2).unwrap()).unwrap();
                assert!((induced.total_mass() - 1.0).abs() < 1e-12);
                if kind == PatternKind::Flatten {
                    assert!(tv_distance(&j, &induced).unwrap() <= 1e-12, "{family}");
                }
            }
        }
    }

    #[test]
    fn report_rows_and_csv() {
        let j = make_joint(JointFamily::Diagonal, 1, 2, 2, 0).unwrap();
        let report = exactness_report(&j, &[PatternKind::Parallel, PatternKind::Delay, PatternKind::Flatten]).unwrap();
        let csv = report.to_csv();
        assert!(csv.starts_with("pattern,s_exact,s_nominal,tv\n"));
        assert!(csv.contains("parallel,1,1,0.5\n"), "{csv}");
        assert_eq!(report.row(PatternKind::Delay).unwrap().tv, 0.0);
        assert_eq!(report.row(PatternKind::Flatten).unwrap().tv, 0.0);
    }

    #[test]
    fn family_names_round_trip() {
        for f in JointFamily::ALL {
            assert_eq!(f.name().parse::<JointFamily>().unwrap(), f);
        }
        assert!("uniform".parse::<JointFamily>().is_err());
    }
}
