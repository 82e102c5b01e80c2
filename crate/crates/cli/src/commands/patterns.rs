use std::path::Path;

use clap::Args;
use interleave::patterns::{build_pattern, step_count_table, PatternDocument, PatternKind};

use super::{read_text, Context};
use crate::error::{CliResult, Failure};

#[derive(Args)]
pub struct ShowArgs {
    #[arg(long)]
    pub kind: Option<PatternKind>,
    #[arg(short = 'T', long)]
    pub timesteps: Option<usize>,
    #[arg(short = 'K', long)]
    pub codebooks: Option<usize>,
    /// Print the JSON document instead of the layout table.
    #[arg(long)]
    pub json: bool,
}

pub fn show(ctx: &Context, a: ShowArgs) -> CliResult<()> {
    let mut s = ctx.settings()?;
    let kind = s.pick("kind", a.kind, PatternKind::Delay)?;
    let t = s.pick("timesteps", a.timesteps, 3)?;
    let k = s.pick("codebooks", a.codebooks, 2)?;
    let json = s.pick("json", a.json.then_some(true), false)?;
    let pattern = build_pattern(kind, t, k)?;
    let text = if json {
        pattern.to_json() + "\n"
    } else {
        format!(
            "{} T={t} K={k} S={}\n{}",
            kind.name(),
            pattern.num_steps(),
            pattern.layout_table()
        )
    };
    print!("{text}");
    let mut run = ctx.run("patterns")?;
    run.write(if json { "pattern.json" } else { "layout.txt" }, text.as_bytes())?;
    run.finish(s.finish()?, None)?;
    Ok(())
}

pub fn validate(ctx: &Context, file: &Path) -> CliResult<()> {
    let text = read_text(file)?;
    let doc: PatternDocument = serde_json::from_str(&text)
        .map_err(|e| Failure::validation(format!("{}: malformed pattern json: {e}", file.display())))?;
    let report = doc.validate();
    let mut run = ctx.run("patterns")?;
    run.write(
        "validation.json",
        serde_json::to_string_pretty(&report).expect("report serializes").as_bytes(),
    )?;
    let mut config = ctx.settings()?.finish()?;
    config.insert("file".into(), file.display().to_string().into());
    run.finish(config, None)?;
    if report.ok() {
        println!("ok: T={} K={} S={}", doc.timesteps, doc.codebooks, doc.steps.len().saturating_sub(1));
        Ok(())
    } else {
        for v in &report.violations {
            println!("violation: {v}");
        }
        Err(Failure::validation(format!("{} violation(s)", report.violations.len())))
    }
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(short = 'T', long)]
    pub timesteps: Option<usize>,
    #[arg(short = 'K', long)]
    pub codebooks: Option<usize>,
}

/// `pattern,exact_steps,nominal_steps` for the mono patterns in table order.
pub fn bench_csv(t: usize, k: usize) -> String {
    let table = step_count_table(t, k);
    let mut out = String::from("pattern,exact_steps,nominal_steps\n");
    for kind in PatternKind::MONO {
        if let Some(c) = table.get(&kind) {
            out.push_str(&format!("{},{},{}\n", kind.name(), c.exact, c.nominal));
        }
    }
    out
}

pub fn bench(ctx: &Context, a: BenchArgs) -> CliResult<()> {
    let mut s = ctx.settings()?;
    let t = s.pick("timesteps", a.timesteps, 1500)?;
    let k = s.pick("codebooks", a.codebooks, 4)?;
    if t == 0 || k == 0 {
        return Err(Failure::usage("T and K must be >= 1"));
    }
    let csv = bench_csv(t, k);
    print!("{csv}");
    let mut run = ctx.run("patterns")?;
    run.write("bench.csv", csv.as_bytes())?;
    run.finish(s.finish()?, None)?;
    Ok(())
}
