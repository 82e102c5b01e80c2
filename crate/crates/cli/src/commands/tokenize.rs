use clap::Args;
use interleave::rvq::{residual_energy_profile, rvq_encode, synth_latents, train_codebooks, RvqConfig};

use super::Context;
use crate::error::CliResult;

#[derive(Args)]
pub struct TokenizeArgs {
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(short = 'K', long)]
    pub codebooks: Option<usize>,
    #[arg(short = 'M', long)]
    pub codebook_size: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(ctx: &Context, a: TokenizeArgs) -> CliResult<()> {
    let mut s = ctx.settings()?;
    let d = RvqConfig::default();
    let frames = s.pick("frames", a.frames, 4096usize)?;
    let cfg = RvqConfig {
        codebooks: s.pick("codebooks", a.codebooks, d.codebooks)?,
        codebook_size: s.pick("codebook_size", a.codebook_size, d.codebook_size)?,
        latent_dim: s.pick("latent_dim", a.latent_dim, d.latent_dim)?,
        frame_rate: d.frame_rate,
    };
    let iterations = s.pick("iterations", a.iterations, 25usize)?;
    let seed = s.pick("seed", a.seed, 0u64)?;
    cfg.validate()?;

    let mut run = ctx.run("tokenize")?;
    let started = std::time::Instant::now();
    let latents = synth_latents(frames, cfg.latent_dim, seed);
    let books = train_codebooks(&latents, &cfg, iterations, seed)?;
    let grid = rvq_encode(&latents, &books)?;
    let profile = residual_energy_profile(&latents, &books)?;
    run.time("fit_seconds", started.elapsed().as_secs_f64());

    let mut energy = String::from("stages,mean_residual_energy\n");
    for (i, e) in profile.iter().enumerate() {
        energy.push_str(&format!("{i},{e}\n"));
    }
    print!("{energy}");
    run.write("tokens.csv", grid.to_csv_string().as_bytes())?;
    run.write("codebooks.json", serde_json::to_string(&books).expect("codebooks serialize").as_bytes())?;
    run.write("energy.csv", energy.as_bytes())?;
    run.finish(s.finish()?, Some(seed))?;
    Ok(())
}
