//! Coarse-to-fine structure of the residual quantizer on the synthetic corpus.

use interleave::rvq::{residual_energy_profile, rvq_decode, rvq_encode, synth_latents, train_codebooks, RvqConfig};

#[test]
fn energy_profile_is_nonincreasing_and_first_drop_dominates() {
    let cfg = RvqConfig::default();
    let frames = synth_latents(4096, cfg.latent_dim, 3);
    let books = train_codebooks(&frames, &cfg, 25, 9).unwrap();
    let profile = residual_energy_profile(&frames, &books).unwrap();
    assert_eq!(profile.len(), cfg.codebooks + 1);
    for w in profile.windows(2) {
        assert!(w[1] < w[0], "profile {profile:?}");
    }
    let drops: Vec<f64> = profile.windows(2).map(|w| w[0] - w[1]).collect();
    assert!(drops[1..].iter().all(|&d| d < drops[0]), "drops {drops:?}");
}

#[test]
fn single_stage_reencoding_is_idempotent() {
    let cfg = RvqConfig {
        codebooks: 1,
        ..RvqConfig::default()
    };
    let frames = synth_latents(1024, cfg.latent_dim, 5);
    let books = train_codebooks(&frames, &cfg, 15, 1).unwrap();
    let grid = rvq_encode(&frames, &books).unwrap();
    let decoded = rvq_decode(&grid, &books).unwrap();
    assert_eq!(rvq_encode(&decoded, &books).unwrap(), grid);
}
