use std::io::Cursor;
use std::path::PathBuf;

use clap::Args;
use interleave::conditioning::chroma::sine;
use interleave::conditioning::wav::{read_wav, write_wav};
use interleave::conditioning::{
    chroma_cosine_similarity, compute_chromagram, quantize_chroma, QuantizedChroma, DEFAULT_HOP, DEFAULT_WINDOW,
};

use super::{read_text, Context};
use crate::error::{CliResult, Failure};

#[derive(Args)]
pub struct ChromaArgs {
    /// 16-bit PCM WAV file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub hop: Option<usize>,
    /// Quantized-chroma JSON to score against.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

pub fn chroma(ctx: &Context, a: ChromaArgs) -> CliResult<()> {
    let mut s = ctx.settings()?;
    let input: PathBuf = s
        .pick_opt("input", a.input)?
        .ok_or_else(|| Failure::usage("--input is required"))?;
    let window = s.pick("window", a.window, DEFAULT_WINDOW)?;
    let hop = s.pick("hop", a.hop, DEFAULT_HOP)?;
    let reference_path = s.pick_opt("reference", a.reference)?;

    let bytes = std::fs::read(&input).map_err(|e| Failure::io(&input, e))?;
    let audio = read_wav(Cursor::new(bytes))?;
    let q = quantize_chroma(&compute_chromagram(&audio, window, hop)?);
    let json = serde_json::to_string(&q).expect("chroma serializes") + "\n";
    print!("{json}");
    let mut run = ctx.run("chroma")?;
    run.write("chroma.json", json.as_bytes())?;
    if let Some(rp) = &reference_path {
        let reference: QuantizedChroma = serde_json::from_str(&read_text(rp)?)
            .map_err(|e| Failure::validation(format!("{}: malformed chroma json: {e}", rp.display())))?;
        let sim = chroma_cosine_similarity(&q, &reference)?;
        println!("similarity {sim}");
        run.write("similarity.json", format!("{{\"chroma_cosine_similarity\": {sim}}}\n").as_bytes())?;
    }
    run.finish(s.finish()?, None)?;
    Ok(())
}

#[derive(Args)]
pub struct ToneArgs {
    #[arg(long)]
    pub frequency: Option<f64>,
    #[arg(long)]
    pub seconds: Option<f64>,
    #[arg(long)]
    pub sample_rate: Option<u32>,
    #[arg(long)]
    pub amplitude: Option<f64>,
}

pub fn tone(ctx: &Context, a: ToneArgs) -> CliResult<()> {
    let mut s = ctx.settings()?;
    let frequency = s.pick("frequency", a.frequency, 440.0)?;
    let seconds = s.pick("seconds", a.seconds, 3.0)?;
    let sample_rate = s.pick("sample_rate", a.sample_rate, 32_000u32)?;
    let amplitude = s.pick("amplitude", a.amplitude, 0.5)?;
    if !(frequency > 0.0 && seconds > 0.0 && sample_rate > 0 && (0.0..=1.0).contains(&amplitude)) {
        return Err(Failure::usage("frequency, seconds and sample rate must be positive, amplitude in [0, 1]"));
    }
    let mut wav = Cursor::new(Vec::new());
    write_wav(&sine(frequency, sample_rate, seconds, amplitude), &mut wav)?;
    let mut run = ctx.run("tone")?;
    let path = run.write("tone.wav", wav.get_ref())?;
    println!("{}", path.display());
    run.finish(s.finish()?, None)?;
    Ok(())
}
