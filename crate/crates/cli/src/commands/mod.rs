pub mod chroma;
pub mod exactness;
pub mod generate;
pub mod memorize;
pub mod patterns;
pub mod tokenize;
pub mod train;

use std::path::{Path, PathBuf};

use interleave::grid::TokenGrid;
use interleave::patterns::PatternKind;

use crate::config::Settings;
use crate::error::{CliResult, Failure};
use crate::manifest::{output_dir, Run};

pub struct Context {
    pub out: Option<PathBuf>,
    pub config: Option<PathBuf>,
}

impl Context {
    pub fn settings(&self) -> CliResult<Settings> {
        Settings::load(self.config.as_deref())
    }

    pub fn run(&self, command: &str) -> CliResult<Run> {
        Run::start(output_dir(self.out.as_deref(), command), command)
    }
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

pub fn read_grid(path: &Path, vocab: usize) -> CliResult<TokenGrid> {
    let text = read_text(path)?;
    TokenGrid::read_csv(text.as_bytes(), vocab).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

pub fn parse_kind(name: &str) -> CliResult<PatternKind> {
    name.parse().map_err(|e: interleave::patterns::PatternError| Failure::usage(e.to_string()))
}

pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse().map_err(|_| Failure::usage(format!("bad {what} entry {s:?}"))))
        .collect()
}
