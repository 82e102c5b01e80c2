use std::path::{Path, PathBuf};

use clap::Args;
use interleave::analysis::memorization_report;
use interleave::model::{Checkpoint, Condition};
use interleave::patterns::PatternKind;

use super::{parse_list, read_grid, read_text, Context};
use crate::error::{CliResult, Failure};

#[derive(Args)]
pub struct MemorizeArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Source grids (default: the `dataset/` directory next to the checkpoint).
    #[arg(long, num_args = 1..)]
    pub data: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub pattern: Option<PatternKind>,
    /// Comma-separated prompt lengths in timesteps.
    #[arg(long)]
    pub prompt_lens: Option<String>,
    #[arg(long)]
    pub gen_len: Option<usize>,
}

fn dataset_dir_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn run(ctx: &Context, a: MemorizeArgs) -> CliResult<()> {
    let mut s = ctx.settings()?;
    let ck_path: PathBuf = s
        .pick_opt("checkpoint", a.checkpoint)?
        .ok_or_else(|| Failure::usage("--checkpoint is required"))?;
    let kind = s.pick("pattern", a.pattern, PatternKind::Delay)?;
    let lens_text = s.pick("prompt_lens", a.prompt_lens, "1,2,3,8,32".to_string())?;
    let gen_len = s.pick("gen_len", a.gen_len, 32usize)?;
    let files = match s.pick_opt("data", a.data)? {
        Some(f) if !f.is_empty() => f,
        _ => dataset_dir_files(&ck_path.parent().unwrap_or(Path::new(".")).join("dataset"))?,
    };
    let prompt_lens: Vec<usize> = parse_list(&lens_text, "prompt length")?;
    if prompt_lens.is_empty() {
        return Err(Failure::usage("no prompt lengths given"));
    }

    let params = Checkpoint::from_json(&read_text(&ck_path)?)?.params;
    let dataset = files
        .iter()
        .map(|p| Ok((read_grid(p, params.config.vocab)?, Condition::none())))
        .collect::<CliResult<Vec<_>>>()?;
    let mut run = ctx.run("memorize")?;
    let started = std::time::Instant::now();
    let report = memorization_report(&params, kind, &dataset, &prompt_lens, gen_len)?;
    run.time("report_seconds", started.elapsed().as_secs_f64());
    let csv = report.to_csv();
    print!("{csv}");
    if !report.is_monotone() {
        eprintln!("warning: match fractions are not monotone in prompt length");
    }
    run.write("memorization.csv", csv.as_bytes())?;
    run.write(
        "memorization.json",
        serde_json::to_string_pretty(&report).expect("report serializes").as_bytes(),
    )?;
    run.finish(s.finish()?, None)?;
    Ok(())
}
