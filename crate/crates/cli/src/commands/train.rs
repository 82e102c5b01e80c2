use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use interleave::analysis::{memorization_dataset, overfit, OverfitConfig};
use interleave::model::Checkpoint;
use interleave::patterns::{build_pattern, PatternKind};

use super::{read_grid, Context};
use crate::error::{CliResult, Failure};

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub pattern: Option<PatternKind>,
    #[arg(short = 'T', long)]
    pub timesteps: Option<usize>,
    #[arg(short = 'K', long)]
    pub codebooks: Option<usize>,
    #[arg(short = 'M', long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ffn_mult: Option<usize>,
    /// Parameter initialization seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the generated memorization set (ignored with --data).
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub target_accuracy: Option<f64>,
    #[arg(long)]
    pub log_every: Option<u64>,
    /// Token-grid CSV files to train on instead of the memorization set.
    #[arg(long, num_args = 1..)]
    pub data: Option<Vec<PathBuf>>,
}

pub fn run(ctx: &Context, a: TrainArgs) -> CliResult<()> {
    let mut s = ctx.settings()?;
    let d = OverfitConfig::default();
    let mut cfg = OverfitConfig {
        steps: s.pick("steps", a.steps, d.steps)?,
        peak_lr: s.pick("lr", a.lr, d.peak_lr)?,
        warmup_steps: s.pick("warmup", a.warmup, d.warmup_steps)?,
        weight_decay: s.pick("weight_decay", a.weight_decay, d.weight_decay)?,
        kind: s.pick("pattern", a.pattern, d.kind)?,
        timesteps: s.pick("timesteps", a.timesteps, d.timesteps)?,
        seed: s.pick("seed", a.seed, d.seed)?,
        model: d.model.clone(),
    };
    cfg.model.codebooks = s.pick("codebooks", a.codebooks, d.model.codebooks)?;
    cfg.model.vocab = s.pick("vocab", a.vocab, d.model.vocab)?;
    cfg.model.dim = s.pick("dim", a.dim, d.model.dim)?;
    cfg.model.layers = s.pick("layers", a.layers, d.model.layers)?;
    cfg.model.heads = s.pick("heads", a.heads, d.model.heads)?;
    cfg.model.ffn_mult = s.pick("ffn_mult", a.ffn_mult, d.model.ffn_mult)?;
    let data_seed = s.pick("data_seed", a.data_seed, 11u64)?;
    let target = s.pick("target_accuracy", a.target_accuracy, 0.99)?;
    let log_every = s.pick("log_every", a.log_every, 100u64)?.max(1);
    let files = s.pick_opt("data", a.data)?;

    let dataset = match &files {
        Some(paths) if !paths.is_empty() => {
            let grids = paths.iter().map(|p| read_grid(p, cfg.model.vocab)).collect::<CliResult<Vec<_>>>()?;
            cfg.timesteps = grids[0].timesteps();
            if grids.iter().any(|g| g.timesteps() != cfg.timesteps || g.codebooks() != cfg.model.codebooks) {
                return Err(Failure::validation("training grids must share T and match K"));
            }
            grids
        }
        _ => memorization_dataset(cfg.timesteps, cfg.model.codebooks, cfg.model.vocab, data_seed)?,
    };
    cfg.model.max_steps = build_pattern(cfg.kind, cfg.timesteps, cfg.model.codebooks)?.num_steps();
    cfg.model.validate()?;

    let mut run = ctx.run("train")?;
    for (i, g) in dataset.iter().enumerate() {
        run.write(&format!("dataset/seq{i:03}.csv"), g.to_csv_string().as_bytes())?;
    }
    let started = Instant::now();
    let mut loss_csv = String::from("step,lr,loss,accuracy,grad_norm\n");
    let outcome = overfit(&cfg, &dataset, target, |st| {
        loss_csv.push_str(&format!("{},{},{},{},{}\n", st.step, st.lr, st.loss, st.accuracy, st.grad_norm));
        if st.step % log_every == 0 {
            eprintln!("step {:>5}  loss {:.5}  acc {:.4}", st.step, st.loss, st.accuracy);
        }
    })?;
    let seconds = started.elapsed().as_secs_f64();
    run.time("train_seconds", seconds);
    run.write("loss.csv", loss_csv.as_bytes())?;
    let checkpoint = Checkpoint::new(outcome.params, None, Some(cfg.hyper()));
    run.write("checkpoint.json", checkpoint.to_json().as_bytes())?;
    println!(
        "final masked accuracy {:.5} (loss {:.5}); first step above {target}: {}; {seconds:.1}s",
        outcome.final_accuracy,
        outcome.final_loss,
        outcome.first_step_above.map_or("never".to_string(), |s| s.to_string()),
    );
    let seed = cfg.seed;
    run.finish(s.finish()?, Some(seed))?;
    Ok(())
}
