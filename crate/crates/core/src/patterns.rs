//! Codebook interleaving patterns.
//!
//! A pattern is an ordered partition `P_0, P_1, ..., P_S` of the grid
//! `{1..T} x {1..K}` of (timestep, codebook) coordinates, with `P_0` empty.
//! An autoregressive model predicts every coordinate of `P_s` in parallel,
//! conditioned on the coordinates of `P_0 .. P_{s-1}`. The pattern decides the
//! number of sequential steps `S` and which positions are assumed
//! conditionally independent of each other.
//!
//! Coordinates are 1-based. Every pattern built or accepted here satisfies:
//!
//! * `P_0` is empty and no other step is empty;
//! * the steps partition the grid;
//! * a step holds at most one coordinate per codebook;
//! * within one codebook, timesteps are revealed in strictly increasing order.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, TokenGrid, SPECIAL_TOKEN};

/// A `(timestep, codebook)` pair, both 1-based. Serializes as `[t, k]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Coordinate {
    pub t: usize,
    pub k: usize,
}

impl Coordinate {
    pub const fn new(t: usize, k: usize) -> Self {
        Self { t, k }
    }

    /// 0-based row index into a [`TokenGrid`].
    pub fn row(self) -> usize {
        self.t - 1
    }

    /// 0-based column index into a [`TokenGrid`].
    pub fn col(self) -> usize {
        self.k - 1
    }
}

impl From<(usize, usize)> for Coordinate {
    fn from((t, k): (usize, usize)) -> Self {
        Self { t, k }
    }
}

impl From<Coordinate> for (usize, usize) {
    fn from(c: Coordinate) -> Self {
        (c.t, c.k)
    }
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.t, self.k)
    }
}

/// The named pattern families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Parallel,
    Delay,
    PartialDelay,
    Flatten,
    PartialFlatten,
    CoarseFirst,
    StereoDelay,
    StereoPartialDelay,
}

impl PatternKind {
    pub const ALL: [PatternKind; 8] = [
        PatternKind::Parallel,
        PatternKind::Delay,
        PatternKind::PartialDelay,
        PatternKind::Flatten,
        PatternKind::PartialFlatten,
        PatternKind::CoarseFirst,
        PatternKind::StereoDelay,
        PatternKind::StereoPartialDelay,
    ];

    /// The six mono patterns compared in the step-count ablation, in table order.
    pub const MONO: [PatternKind; 6] = [
        PatternKind::Delay,
        PatternKind::PartialDelay,
        PatternKind::Parallel,
        PatternKind::PartialFlatten,
        PatternKind::CoarseFirst,
        PatternKind::Flatten,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PatternKind::Parallel => "parallel",
            PatternKind::Delay => "delay",
            PatternKind::PartialDelay => "partial_delay",
            PatternKind::Flatten => "flatten",
            PatternKind::PartialFlatten => "partial_flatten",
            PatternKind::CoarseFirst => "coarse_first",
            PatternKind::StereoDelay => "stereo_delay",
            PatternKind::StereoPartialDelay => "stereo_partial_delay",
        }
    }

    pub fn is_stereo(self) -> bool {
        matches!(
            self,
            PatternKind::StereoDelay | PatternKind::StereoPartialDelay
        )
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PatternKind {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        let alias = match norm.as_str() {
            "flattening" => "flatten",
            "partial_flattening" => "partial_flatten",
            other => other,
        };
        PatternKind::ALL
            .into_iter()
            .find(|k| k.name() == alias)
            .ok_or_else(|| PatternError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("unknown pattern kind {0:?}")]
    UnknownKind(String),
    #[error("{kind} requires {constraint} (got T={timesteps}, K={codebooks})")]
    Construction {
        kind: PatternKind,
        constraint: &'static str,
        timesteps: usize,
        codebooks: usize,
    },
    #[error("invalid pattern: {0}")]
    Invalid(ValidationReport),
    #[error("pattern is {pattern_t}x{pattern_k} but the input is {input_t}x{input_k}")]
    DimensionMismatch {
        pattern_t: usize,
        pattern_k: usize,
        input_t: usize,
        input_k: usize,
    },
    #[error("slot (s={step}, k={k}) holds token {token} but codebook {k} is absent from that step")]
    Inconsistent { step: usize, k: usize, token: u32 },
    #[error("slot (s={step}, k={k}) should hold a real token but holds the special token")]
    MissingToken { step: usize, k: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("malformed pattern json: {0}")]
    Json(#[from] serde_json::Error),
}

/// One violated pattern invariant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    NonEmptyFirstStep,
    EmptyStep { step: usize },
    OutOfRange { step: usize, coord: Coordinate },
    DuplicateCodebook { step: usize, k: usize },
    DuplicateCoordinate { coord: Coordinate, first_step: usize, second_step: usize },
    MissingCoordinate { coord: Coordinate },
    NonMonotone { k: usize, step: usize, t: usize, previous_t: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonEmptyFirstStep => write!(f, "first step P_0 must be empty"),
            Violation::EmptyStep { step } => write!(f, "step {step} is empty"),
            Violation::OutOfRange { step, coord } => {
                write!(f, "coordinate {coord} in step {step} is out of range")
            }
            Violation::DuplicateCodebook { step, k } => {
                write!(f, "duplicate codebook in step {step}: codebook {k} appears twice")
            }
            Violation::DuplicateCoordinate {
                coord,
                first_step,
                second_step,
            } => write!(
                f,
                "not a partition of the grid: {coord} appears in steps {first_step} and {second_step}"
            ),
            Violation::MissingCoordinate { coord } => {
                write!(f, "not a partition of the grid: {coord} is never predicted")
            }
            Violation::NonMonotone {
                k,
                step,
                t,
                previous_t,
            } => write!(
                f,
                "non-monotone codebook stream: codebook {k} reveals t={t} at step {step} after t={previous_t}"
            ),
        }
    }
}

/// Result of [`validate_steps`]: `ok()` iff there are no violations.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok() {
            return f.write_str("ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks every pattern invariant over raw steps (including `P_0`).
pub fn validate_steps(timesteps: usize, codebooks: usize, steps: &[Vec<Coordinate>]) -> ValidationReport {
    let mut violations = Vec::new();
    match steps.first() {
        Some(p0) if !p0.is_empty() => violations.push(Violation::NonEmptyFirstStep),
        None => violations.push(Violation::NonEmptyFirstStep),
        _ => {}
    }

    let mut seen: Vec<Option<usize>> = vec![None; timesteps * codebooks];
    let mut last_t: Vec<Option<usize>> = vec![None; codebooks];
    for (s, step) in steps.iter().enumerate().skip(1) {
        if step.is_empty() {
            violations.push(Violation::EmptyStep { step: s });
        }
        let mut codebooks_here = Vec::with_capacity(step.len());
        for &coord in step {
            if coord.t == 0 || coord.t > timesteps || coord.k == 0 || coord.k > codebooks {
                violations.push(Violation::OutOfRange { step: s, coord });
                continue;
            }
            if codebooks_here.contains(&coord.k) {
                violations.push(Violation::DuplicateCodebook { step: s, k: coord.k });
            } else {
                codebooks_here.push(coord.k);
            }
            let cell = &mut seen[coord.row() * codebooks + coord.col()];
            match *cell {
                Some(first_step) => violations.push(Violation::DuplicateCoordinate {
                    coord,
                    first_step,
                    second_step: s,
                }),
                None => *cell = Some(s),
            }
            let prev = &mut last_t[coord.col()];
            if let Some(previous_t) = *prev {
                if coord.t <= previous_t {
                    violations.push(Violation::NonMonotone {
                        k: coord.k,
                        step: s,
                        t: coord.t,
                        previous_t,
                    });
                }
            }
            *prev = Some(prev.map_or(coord.t, |p| p.max(coord.t)));
        }
    }
    for t in 1..=timesteps {
        for k in 1..=codebooks {
            if seen[(t - 1) * codebooks + (k - 1)].is_none() {
                violations.push(Violation::MissingCoordinate {
                    coord: Coordinate::new(t, k),
                });
            }
        }
    }
    ValidationReport { violations }
}

/// JSON form of a pattern: `{kind, T, K, steps: [[[t,k], ...], ...]}`.
///
/// `steps[0]` is `P_0` and must be empty. `kind` is optional so hand-written
/// patterns can be validated too.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<PatternKind>,
    #[serde(rename = "T")]
    pub timesteps: usize,
    #[serde(rename = "K")]
    pub codebooks: usize,
    pub steps: Vec<Vec<Coordinate>>,
}

impl PatternDocument {
    pub fn validate(&self) -> ValidationReport {
        validate_steps(self.timesteps, self.codebooks, &self.steps)
    }
}

/// Exact and nominal step counts of a pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounts {
    /// Number of non-empty steps `S`.
    pub exact: usize,
    /// The count a step-count table would quote: `T`, `2T` or `T*K`, ignoring
    /// the few trailing steps a delay adds.
    pub nominal: usize,
}

/// A validated interleaving pattern.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pattern {
    kind: Option<PatternKind>,
    timesteps: usize,
    codebooks: usize,
    steps: Vec<Vec<Coordinate>>,
    /// `(S+1) x K`: 0-based timestep revealed for codebook `k` at step `s`.
    layout: Vec<Option<usize>>,
}

impl Pattern {
    /// Validates raw steps (with `P_0` first) and builds a pattern.
    pub fn from_steps(
        kind: Option<PatternKind>,
        timesteps: usize,
        codebooks: usize,
        mut steps: Vec<Vec<Coordinate>>,
    ) -> Result<Self, PatternError> {
        let report = validate_steps(timesteps, codebooks, &steps);
        if !report.ok() {
            return Err(PatternError::Invalid(report));
        }
        for step in &mut steps {
            step.sort_by_key(|c| c.k);
        }
        let mut layout = vec![None; steps.len() * codebooks];
        for (s, step) in steps.iter().enumerate() {
            for c in step {
                layout[s * codebooks + c.col()] = Some(c.row());
            }
        }
        Ok(Self {
            kind,
            timesteps,
            codebooks,
            steps,
            layout,
        })
    }

    pub fn from_document(doc: PatternDocument) -> Result<Self, PatternError> {
        Self::from_steps(doc.kind, doc.timesteps, doc.codebooks, doc.steps)
    }

    pub fn from_json(json: &str) -> Result<Self, PatternError> {
        Self::from_document(serde_json::from_str(json)?)
    }

    pub fn to_document(&self) -> PatternDocument {
        PatternDocument {
            kind: self.kind,
            timesteps: self.timesteps,
            codebooks: self.codebooks,
            steps: self.steps.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("pattern documents always serialize")
    }

    pub fn kind(&self) -> Option<PatternKind> {
        self.kind
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn codebooks(&self) -> usize {
        self.codebooks
    }

    /// Number of prediction steps `S` (excluding `P_0`).
    pub fn num_steps(&self) -> usize {
        self.steps.len() - 1
    }

    /// Step `s` in `0..=S`; step 0 is always empty.
    pub fn step(&self, s: usize) -> &[Coordinate] {
        &self.steps[s]
    }

    pub fn steps(&self) -> &[Vec<Coordinate>] {
        &self.steps
    }

    /// 0-based timestep codebook `col` reveals at step `s`, if present.
    pub fn presence(&self, s: usize, col: usize) -> Option<usize> {
        self.layout[s * self.codebooks + col]
    }

    /// Always-empty report: patterns are validated at construction.
    pub fn validate(&self) -> ValidationReport {
        validate_steps(self.timesteps, self.codebooks, &self.steps)
    }

    pub fn step_counts(&self) -> StepCounts {
        let exact = self.num_steps();
        let (t, k) = (self.timesteps, self.codebooks);
        let nominal = match self.kind {
            Some(
                PatternKind::Parallel
                | PatternKind::Delay
                | PatternKind::PartialDelay
                | PatternKind::StereoDelay
                | PatternKind::StereoPartialDelay,
            ) => t,
            Some(PatternKind::PartialFlatten | PatternKind::CoarseFirst) => {
                if k > 1 {
                    2 * t
                } else {
                    t
                }
            }
            Some(PatternKind::Flatten) => t * k,
            None => exact,
        };
        StepCounts { exact, nominal }
    }

    fn check_dims(&self, t: usize, k: usize) -> Result<(), PatternError> {
        if t != self.timesteps || k != self.codebooks {
            return Err(PatternError::DimensionMismatch {
                pattern_t: self.timesteps,
                pattern_k: self.codebooks,
                input_t: t,
                input_k: k,
            });
        }
        Ok(())
    }

    /// Lays a grid out along the pattern: slot `(s, k)` holds `Q[t, k]` when
    /// `(t, k)` is in `P_s`, the special token otherwise. Row 0 is all special.
    pub fn apply(&self, grid: &TokenGrid) -> Result<InterleavedSequence, PatternError> {
        self.check_dims(grid.timesteps(), grid.codebooks())?;
        let slots = self
            .layout
            .iter()
            .enumerate()
            .map(|(i, present)| match present {
                Some(row) => grid.get(*row, i % self.codebooks),
                None => SPECIAL_TOKEN,
            })
            .collect();
        Ok(InterleavedSequence {
            codebooks: self.codebooks,
            vocab: grid.vocab(),
            slots,
        })
    }

    /// Inverse of [`Pattern::apply`].
    pub fn revert(&self, seq: &InterleavedSequence) -> Result<TokenGrid, PatternError> {
        if seq.codebooks != self.codebooks || seq.num_rows() != self.steps.len() {
            return Err(PatternError::DimensionMismatch {
                pattern_t: self.steps.len(),
                pattern_k: self.codebooks,
                input_t: seq.num_rows(),
                input_k: seq.codebooks,
            });
        }
        let k = self.codebooks;
        let mut tokens = vec![SPECIAL_TOKEN; self.timesteps * k];
        for (i, (&present, &token)) in self.layout.iter().zip(&seq.slots).enumerate() {
            let (s, col) = (i / k, i % k);
            match present {
                Some(_) if token == SPECIAL_TOKEN => {
                    return Err(PatternError::MissingToken { step: s, k: col + 1 });
                }
                Some(row) => tokens[row * k + col] = token,
                None if token != SPECIAL_TOKEN => {
                    return Err(PatternError::Inconsistent {
                        step: s,
                        k: col + 1,
                        token,
                    })
                }
                None => {}
            }
        }
        Ok(TokenGrid::new(self.timesteps, k, seq.vocab, tokens)?)
    }

    /// Text rendering of the layout: one line per codebook, one column per
    /// step, each cell the timestep predicted there (or `.`).
    pub fn layout_table(&self) -> String {
        let width = self.timesteps.max(self.steps.len()).to_string().len().max(1);
        let mut out = String::new();
        out.push_str(&format!("{:>4} ", "s"));
        for s in 1..self.steps.len() {
            out.push_str(&format!(" {s:>width$}"));
        }
        out.push('\n');
        for col in 0..self.codebooks {
            out.push_str(&format!("{:>4} ", format!("k{}", col + 1)));
            for s in 1..self.steps.len() {
                match self.presence(s, col) {
                    Some(row) => out.push_str(&format!(" {:>width$}", row + 1)),
                    None => out.push_str(&format!(" {:>width$}", ".")),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// The `(S+1) x K` slot matrix a pattern produces from a grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterleavedSequence {
    codebooks: usize,
    vocab: usize,
    slots: Vec<u32>,
}

impl InterleavedSequence {
    /// Builds a sequence from rows (row 0 included).
    pub fn from_rows(rows: &[Vec<u32>], vocab: usize) -> Self {
        let codebooks = rows.first().map_or(0, Vec::len);
        Self {
            codebooks,
            vocab,
            slots: rows.iter().flatten().copied().collect(),
        }
    }

    /// An all-special sequence with `rows` rows.
    pub fn empty(rows: usize, codebooks: usize, vocab: usize) -> Self {
        Self {
            codebooks,
            vocab,
            slots: vec![SPECIAL_TOKEN; rows * codebooks],
        }
    }

    pub fn num_rows(&self) -> usize {
        if self.codebooks == 0 {
            0
        } else {
            self.slots.len() / self.codebooks
        }
    }

    pub fn codebooks(&self) -> usize {
        self.codebooks
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, s: usize) -> &[u32] {
        &self.slots[s * self.codebooks..(s + 1) * self.codebooks]
    }

    pub fn get(&self, s: usize, col: usize) -> u32 {
        self.slots[s * self.codebooks + col]
    }

    pub fn set(&mut self, s: usize, col: usize, token: u32) {
        self.slots[s * self.codebooks + col] = token;
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        self.slots.chunks(self.codebooks.max(1))
    }
}

fn construction_error(
    kind: PatternKind,
    constraint: &'static str,
    timesteps: usize,
    codebooks: usize,
) -> PatternError {
    PatternError::Construction {
        kind,
        constraint,
        timesteps,
        codebooks,
    }
}

/// Steps for per-codebook delays: codebook `k` reveals timestep `t` at step `t + delay[k]`.
fn delayed_steps(timesteps: usize, delays: &[usize]) -> Vec<Vec<Coordinate>> {
    let max_delay = delays.iter().copied().max().unwrap_or(0);
    let mut steps = vec![Vec::new(); timesteps + max_delay + 1];
    for (col, &d) in delays.iter().enumerate() {
        for t in 1..=timesteps {
            steps[t + d].push(Coordinate::new(t, col + 1));
        }
    }
    steps
}

/// Builds a named pattern for a `T x K` grid.
pub fn build_pattern(kind: PatternKind, timesteps: usize, codebooks: usize) -> Result<Pattern, PatternError> {
    let (t_max, k_max) = (timesteps, codebooks);
    if t_max == 0 {
        return Err(construction_error(kind, "T >= 1", t_max, k_max));
    }
    if k_max == 0 {
        return Err(construction_error(kind, "K >= 1", t_max, k_max));
    }
    if kind.is_stereo() && k_max % 2 != 0 {
        return Err(construction_error(kind, "an even K (interleaved left/right codebooks)", t_max, k_max));
    }

    let steps = match kind {
        PatternKind::Parallel => delayed_steps(t_max, &vec![0; k_max]),
        PatternKind::Delay => delayed_steps(t_max, &(0..k_max).collect::<Vec<_>>()),
        PatternKind::PartialDelay => {
            let delays: Vec<usize> = (0..k_max).map(|c| usize::from(c > 0)).collect();
            delayed_steps(t_max, &delays)
        }
        PatternKind::StereoPartialDelay => {
            // level l = ceil(k/2); both channels of a level share delay l-1
            let delays: Vec<usize> = (0..k_max).map(|c| c / 2).collect();
            delayed_steps(t_max, &delays)
        }
        PatternKind::StereoDelay => {
            // left codebook of level l delayed by l-1, right by l
            let delays: Vec<usize> = (0..k_max).map(|c| c / 2 + c % 2).collect();
            delayed_steps(t_max, &delays)
        }
        PatternKind::Flatten => {
            let mut steps = vec![Vec::new()];
            for t in 1..=t_max {
                for k in 1..=k_max {
                    steps.push(vec![Coordinate::new(t, k)]);
                }
            }
            steps
        }
        PatternKind::PartialFlatten => {
            let mut steps = vec![Vec::new()];
            for t in 1..=t_max {
                steps.push(vec![Coordinate::new(t, 1)]);
                if k_max > 1 {
                    steps.push((2..=k_max).map(|k| Coordinate::new(t, k)).collect());
                }
            }
            steps
        }
        PatternKind::CoarseFirst => {
            let mut steps = vec![Vec::new()];
            steps.extend((1..=t_max).map(|t| vec![Coordinate::new(t, 1)]));
            if k_max > 1 {
                steps.extend((1..=t_max).map(|t| (2..=k_max).map(|k| Coordinate::new(t, k)).collect()));
            }
            steps
        }
    };
    Pattern::from_steps(Some(kind), t_max, k_max, steps)
}

/// Step counts of every named pattern that accepts `(T, K)`, keyed by kind.
pub fn step_count_table(timesteps: usize, codebooks: usize) -> BTreeMap<PatternKind, StepCounts> {
    PatternKind::ALL
        .into_iter()
        .filter_map(|kind| {
            build_pattern(kind, timesteps, codebooks)
                .ok()
                .map(|p| (kind, p.step_counts()))
        })
        .collect()
}
