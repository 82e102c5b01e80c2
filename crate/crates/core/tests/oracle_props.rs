//! Exhaustive exactness checks and Monte Carlo agreement with the sampler.

use std::collections::HashMap;

use interleave::oracle::{
    induced_distribution, make_joint, tv_distance, GridDistribution, JointFamily, OraclePredictor,
};
use interleave::patterns::{build_pattern, PatternKind};
use interleave::sampling::{generate_with, SamplerConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn flatten_is_exact_on_every_family() {
    for family in JointFamily::ALL {
        for t in 1..=3 {
            for m in 2..=3 {
                let joint = make_joint(family, t, 2, m, 7).unwrap();
                let induced = induced_distribution(&joint, &build_pattern(PatternKind::Flatten, t, 2).unwrap()).unwrap();
                let tv = tv_distance(&joint, &induced).unwrap();
                assert!(tv <= 1e-12, "{family} T={t} M={m}: {tv:e}");
            }
        }
    }
}

#[test]
fn parallel_witness_and_product_exactness() {
    let parallel = build_pattern(PatternKind::Parallel, 1, 2).unwrap();
    let diag = make_joint(JointFamily::Diagonal, 1, 2, 2, 0).unwrap();
    let tv = tv_distance(&diag, &induced_distribution(&diag, &parallel).unwrap()).unwrap();
    assert!((tv - 0.5).abs() <= 1e-12, "{tv}");
    let product = make_joint(JointFamily::Product, 1, 2, 2, 0).unwrap();
    assert!(tv_distance(&product, &induced_distribution(&product, &parallel).unwrap()).unwrap() <= 1e-12);
}

fn random_dist(weights: Vec<f64>) -> GridDistribution {
    let z: f64 = weights.iter().sum();
    GridDistribution::new(1, 2, 2, weights.into_iter().map(|w| w / z).collect()).unwrap()
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, 4)
}

proptest! {
    #[test]
    fn tv_is_a_metric(a in weights(), b in weights(), c in weights()) {
        let (p, q, r) = (random_dist(a), random_dist(b), random_dist(c));
        let pq = tv_distance(&p, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&pq));
        prop_assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        prop_assert!((pq - tv_distance(&q, &p).unwrap()).abs() < 1e-15);
        prop_assert!(pq <= tv_distance(&p, &r).unwrap() + tv_distance(&r, &q).unwrap() + 1e-15);
    }
}

/// Empirical law of grids drawn by the sampling loop driven by the oracle.
fn empirical(joint: &GridDistribution, kind: PatternKind, draws: usize, seed: u64) -> GridDistribution {
    let pattern = build_pattern(kind, joint.timesteps(), joint.codebooks()).unwrap();
    let cfg = SamplerConfig {
        guidance_scale: 1.0,
        ..SamplerConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for _ in 0..draws {
        let mut oracle = OraclePredictor::new(joint, &pattern).unwrap();
        let out = generate_with(&mut oracle, None, &pattern, None, &cfg, &mut rng).unwrap();
        *counts.entry(joint.encode(out.grid.tokens())).or_default() += 1;
    }
    let mut probs = vec![0.0; joint.outcomes()];
    for (i, c) in counts {
        probs[i] = c as f64 / draws as f64;
    }
    GridDistribution::new(joint.timesteps(), joint.codebooks(), joint.vocab(), probs).unwrap()
}

#[test]
fn sampling_loop_reproduces_the_induced_law() {
    let joint = make_joint(JointFamily::MarkovResidual, 2, 2, 2, 4).unwrap();
    for kind in [PatternKind::Flatten, PatternKind::Parallel, PatternKind::Delay] {
        let induced = induced_distribution(&joint, &build_pattern(kind, 2, 2).unwrap()).unwrap();
        let emp = empirical(&joint, kind, 40_000, kind as u64);
        let tv = tv_distance(&emp, &induced).unwrap();
        assert!(tv < 0.02, "{kind:?}: empirical vs induced TV {tv}");
    }
}
