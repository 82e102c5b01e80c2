//! Token grids: the `T x K` matrix of discrete codes an RVQ tokenizer emits.
//!
//! Token ids are 1-based (`1..=M`). Id `0` is reserved for the special
//! "absent" token used by interleaved sequences and never appears in a grid.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved id marking a slot where a codebook is absent.
pub const SPECIAL_TOKEN: u32 = 0;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("token {token} at (t={t}, k={k}) outside 1..={vocab}")]
    TokenOutOfRange {
        t: usize,
        k: usize,
        token: u32,
        vocab: usize,
    },
    #[error("expected {expected} tokens for a {timesteps}x{codebooks} grid, got {got}")]
    ShapeMismatch {
        timesteps: usize,
        codebooks: usize,
        expected: usize,
        got: usize,
    },
    #[error("csv row {row} has {got} columns, expected {expected}")]
    RaggedCsv {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid token literal {0:?}")]
    BadLiteral(String),
}

/// A `T x K` grid of tokens in `1..=M`, stored row-major (one row per timestep).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenGrid {
    timesteps: usize,
    codebooks: usize,
    vocab: usize,
    tokens: Vec<u32>,
}

impl TokenGrid {
    pub fn new(
        timesteps: usize,
        codebooks: usize,
        vocab: usize,
        tokens: Vec<u32>,
    ) -> Result<Self, GridError> {
        let expected = timesteps * codebooks;
        if tokens.len() != expected {
            return Err(GridError::ShapeMismatch {
                timesteps,
                codebooks,
                expected,
                got: tokens.len(),
            });
        }
        let grid = Self {
            timesteps,
            codebooks,
            vocab,
            tokens,
        };
        grid.check_range()?;
        Ok(grid)
    }

    /// Builds a grid from per-timestep rows.
    pub fn from_rows(rows: &[Vec<u32>], vocab: usize) -> Result<Self, GridError> {
        let codebooks = rows.first().map_or(0, Vec::len);
        let mut tokens = Vec::with_capacity(rows.len() * codebooks);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != codebooks {
                return Err(GridError::RaggedCsv {
                    row,
                    got: r.len(),
                    expected: codebooks,
                });
            }
            tokens.extend_from_slice(r);
        }
        Self::new(rows.len(), codebooks, vocab, tokens)
    }

    fn check_range(&self) -> Result<(), GridError> {
        for (i, &token) in self.tokens.iter().enumerate() {
            if token == SPECIAL_TOKEN || token as usize > self.vocab {
                return Err(GridError::TokenOutOfRange {
                    t: i / self.codebooks + 1,
                    k: i % self.codebooks + 1,
                    token,
                    vocab: self.vocab,
                });
            }
        }
        Ok(())
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn codebooks(&self) -> usize {
        self.codebooks
    }

    /// Codebook size `M`.
    pub fn vocab(&self) -> usize {
        self.vocab
    }

    /// Token at 0-based `(row, col)`, i.e. timestep `row + 1`, codebook `col + 1`.
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.tokens[row * self.codebooks + col]
    }

    pub fn row(&self, row: usize) -> &[u32] {
        &self.tokens[row * self.codebooks..(row + 1) * self.codebooks]
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    /// All tokens of one codebook (0-based column) in time order.
    pub fn stream(&self, col: usize) -> Vec<u32> {
        (0..self.timesteps).map(|t| self.get(t, col)).collect()
    }

    /// The first `n` timesteps.
    pub fn prefix(&self, n: usize) -> TokenGrid {
        let n = n.min(self.timesteps);
        TokenGrid {
            timesteps: n,
            codebooks: self.codebooks,
            vocab: self.vocab,
            tokens: self.tokens[..n * self.codebooks].to_vec(),
        }
    }

    /// Writes the grid as header-less CSV: one line per timestep, one column per codebook.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), GridError> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(writer);
        for t in 0..self.timesteps {
            w.write_record(self.row(t).iter().map(u32::to_string))?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is ascii")
    }

    /// Reads the CSV layout written by [`TokenGrid::write_csv`].
    pub fn read_csv<R: Read>(reader: R, vocab: usize) -> Result<Self, GridError> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = Vec::new();
        for record in r.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|field| {
                    field
                        .parse::<u32>()
                        .map_err(|_| GridError::BadLiteral(field.to_string()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows, vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_reserved_and_out_of_range_tokens() {
        assert!(matches!(
            TokenGrid::new(1, 2, 4, vec![1, 0]),
            Err(GridError::TokenOutOfRange { t: 1, k: 2, .. })
        ));
        assert!(TokenGrid::new(1, 2, 4, vec![5, 1]).is_err());
        assert!(TokenGrid::new(1, 2, 4, vec![4, 1]).is_ok());
    }

    #[test]
    fn csv_layout_is_row_per_timestep() {
        let g = TokenGrid::from_rows(&[vec![5, 7], vec![6, 8]], 8).unwrap();
        assert_eq!(g.to_csv_string(), "5,7\n6,8\n");
        let back = TokenGrid::read_csv(g.to_csv_string().as_bytes(), 8).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn ragged_csv_is_rejected() {
        let err = TokenGrid::read_csv("1,2\n3\n".as_bytes(), 4).unwrap_err();
        assert!(matches!(err, GridError::RaggedCsv { row: 1, .. }));
    }

    #[test]
    fn empty_grid_is_allowed() {
        let g = TokenGrid::new(0, 4, 64, vec![]).unwrap();
        assert_eq!(g.timesteps(), 0);
    }
}
