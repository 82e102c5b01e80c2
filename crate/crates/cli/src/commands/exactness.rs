use clap::Args;
use interleave::oracle::{exactness_report, make_joint, JointFamily};
use interleave::patterns::PatternKind;

use super::{parse_kind, Context};
use crate::error::{CliResult, Failure};

/// Flatten must reproduce the joint; anything above this is a bug.
pub const FLATTEN_TOLERANCE: f64 = 1e-9;

#[derive(Args)]
pub struct ExactnessArgs {
    #[arg(long)]
    pub family: Option<JointFamily>,
    #[arg(short = 'T', long)]
    pub timesteps: Option<usize>,
    #[arg(short = 'K', long)]
    pub codebooks: Option<usize>,
    #[arg(short = 'M', long)]
    pub vocab: Option<usize>,
    /// Comma-separated pattern kinds (default: every mono pattern).
    #[arg(long)]
    pub patterns: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(ctx: &Context, a: ExactnessArgs) -> CliResult<()> {
    let mut s = ctx.settings()?;
    let family = s.pick("family", a.family, JointFamily::Diagonal)?;
    let t = s.pick("timesteps", a.timesteps, 1)?;
    let k = s.pick("codebooks", a.codebooks, 2)?;
    let m = s.pick("vocab", a.vocab, 2)?;
    let default_kinds = PatternKind::MONO.iter().map(|k| k.name()).collect::<Vec<_>>().join(",");
    let kinds_text = s.pick("patterns", a.patterns, default_kinds)?;
    let seed = s.pick("seed", a.seed, 0)?;
    let kinds = kinds_text
        .split(',')
        .filter(|x| !x.trim().is_empty())
        .map(parse_kind)
        .collect::<CliResult<Vec<_>>>()?;
    if kinds.is_empty() {
        return Err(Failure::usage("no patterns selected"));
    }
    if t == 0 || k == 0 || m == 0 {
        return Err(Failure::usage("T, K and M must be >= 1"));
    }

    let mut run = ctx.run("exactness")?;
    let started = std::time::Instant::now();
    let joint = make_joint(family, t, k, m, seed)?;
    let report = exactness_report(&joint, &kinds)?;
    run.time("oracle_seconds", started.elapsed().as_secs_f64());
    let csv = report.to_csv();
    print!("{csv}");
    run.write("exactness.csv", csv.as_bytes())?;
    run.finish(s.finish()?, Some(seed))?;
    if let Some(row) = report.row(PatternKind::Flatten) {
        if row.tv > FLATTEN_TOLERANCE {
            return Err(Failure::invariant(format!(
                "flatten TV {:e} exceeds {FLATTEN_TOLERANCE:e}",
                row.tv
            )));
        }
    }
    Ok(())
}
