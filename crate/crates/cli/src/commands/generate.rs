use std::io::Cursor;
use std::path::PathBuf;

use clap::Args;
use interleave::analysis::{audio_adherence, Sonifier};
use interleave::conditioning::{encode_text_toy, wav::write_wav, ChromaEmbedder, QuantizedChroma};
use interleave::model::{Checkpoint, Condition};
use interleave::patterns::{build_pattern, PatternKind};
use interleave::rvq::{rvq_decode, Codebook};
use interleave::sampling::{continue_from_prompt, generate, SamplerConfig, SamplingMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{read_grid, read_text, Context};
use crate::error::{CliResult, Failure};

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub pattern: Option<PatternKind>,
    #[arg(short = 'T', long)]
    pub timesteps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub guidance_scale: Option<f64>,
    /// Argmax decoding; consumes no randomness.
    #[arg(long)]
    pub greedy: bool,
    /// Token-grid CSV whose timesteps are teacher-forced.
    #[arg(long)]
    pub prompt: Option<PathBuf>,
    /// Text condition (cross-attention models).
    #[arg(long)]
    pub text: Option<String>,
    /// Quantized-chroma JSON condition (prefix models).
    #[arg(long)]
    pub chroma: Option<PathBuf>,
    #[arg(long)]
    pub chroma_seed: Option<u64>,
    /// Residual codebooks JSON; with it a sonified WAV is also written.
    #[arg(long)]
    pub codebooks: Option<PathBuf>,
    #[arg(long)]
    pub sonifier_seed: Option<u64>,
}

pub fn run(ctx: &Context, a: GenerateArgs) -> CliResult<()> {
    let mut s = ctx.settings()?;
    let ck_path: PathBuf = s
        .pick_opt("checkpoint", a.checkpoint)?
        .ok_or_else(|| Failure::usage("--checkpoint is required"))?;
    let kind = s.pick("pattern", a.pattern, PatternKind::Delay)?;
    let timesteps = s.pick("timesteps", a.timesteps, 64usize)?;
    let seed = s.pick("seed", a.seed, 0u64)?;
    let d = SamplerConfig::default();
    let greedy = s.pick("greedy", a.greedy.then_some(true), false)?;
    let sampler = SamplerConfig {
        top_k: s.pick("top_k", a.top_k, d.top_k)?,
        temperature: s.pick("temperature", a.temperature, d.temperature)?,
        guidance_scale: s.pick("guidance_scale", a.guidance_scale, d.guidance_scale)?,
        mode: if greedy { SamplingMode::Greedy } else { SamplingMode::Sample },
    };
    sampler.validate()?;
    let prompt_path = s.pick_opt("prompt", a.prompt)?;
    let text = s.pick_opt("text", a.text)?;
    let chroma_path = s.pick_opt("chroma", a.chroma)?;
    let chroma_seed = s.pick("chroma_seed", a.chroma_seed, 0u64)?;
    let books_path = s.pick_opt("codebooks", a.codebooks)?;
    let sonifier_seed = s.pick("sonifier_seed", a.sonifier_seed, 0u64)?;

    let checkpoint = Checkpoint::from_json(&read_text(&ck_path)?)?;
    let params = checkpoint.params;
    let cfg = params.config.clone();
    let pattern = build_pattern(kind, timesteps, cfg.codebooks)?;

    let cross = text.as_deref().map(|t| encode_text_toy(t, cfg.dim)).transpose()?;
    let chroma: Option<QuantizedChroma> = chroma_path
        .as_ref()
        .map(|p| {
            serde_json::from_str(&read_text(p)?)
                .map_err(|e| Failure::validation(format!("{}: malformed chroma json: {e}", p.display())))
        })
        .transpose()?;
    let prefix = chroma.as_ref().map(|q| ChromaEmbedder::new(cfg.dim, chroma_seed).embed(q));
    let condition = Condition { cross, prefix };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut run = ctx.run("generate")?;
    let started = std::time::Instant::now();
    let grid = match &prompt_path {
        Some(p) => {
            let prompt = read_grid(p, cfg.vocab)?;
            continue_from_prompt(&params, &pattern, &prompt, &condition, &sampler, &mut rng)?
        }
        None => generate(&params, &pattern, &condition, &sampler, &mut rng)?,
    };
    run.time("generate_seconds", started.elapsed().as_secs_f64());
    let csv = grid.to_csv_string();
    run.write("tokens.csv", csv.as_bytes())?;

    if let Some(bp) = &books_path {
        let books: Vec<Codebook> = serde_json::from_str(&read_text(bp)?)
            .map_err(|e| Failure::validation(format!("{}: malformed codebooks json: {e}", bp.display())))?;
        let latents = rvq_decode(&grid, &books)?;
        let sonifier = Sonifier::new(latents.dim(), sonifier_seed);
        let audio = sonifier.sonify(&latents).map_err(Failure::from)?;
        let mut wav = Cursor::new(Vec::new());
        write_wav(&audio, &mut wav)?;
        run.write("sonified.wav", wav.get_ref())?;
        if let Some(q) = &chroma {
            let sim = audio_adherence(&audio, &sonifier, q).map_err(Failure::from)?;
            println!("chroma adherence {sim:.4}");
            run.write("adherence.json", format!("{{\"chroma_cosine_similarity\": {sim}}}\n").as_bytes())?;
        }
    }
    print!("{csv}");
    run.finish(s.finish()?, Some(seed))?;
    Ok(())
}
