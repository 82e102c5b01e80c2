//! Codebook interleaving for multi-stream token language models.
//!
//! * [`grid`]: `T x K` token grids with a reserved special token.
//! * [`patterns`]: interleaving patterns, their validation and application.
//! * [`rvq`]: a small residual vector quantizer.
//! * [`conditioning`]: text preprocessing, chromagrams and condition tensors.
//! * [`model`]: a double-precision transformer decoder with explicit backprop.
//! * [`sampling`]: top-k / temperature sampling with classifier-free guidance.
//! * [`oracle`]: exhaustive joint distributions and pattern-induced laws.
//! * [`analysis`]: memorization probes and chroma adherence.

pub mod grid;
pub mod patterns;
pub mod rvq;
pub mod conditioning;
pub mod model;
pub mod sampling;
pub mod oracle;
pub mod analysis;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/patterns.md")]
    mod patterns {}
    #[doc = include_str!("../../../book/src/exactness.md")]
    mod exactness {}
    #[doc = include_str!("../../../book/src/rvq.md")]
    mod rvq {}
    #[doc = include_str!("../../../book/src/conditioning.md")]
    mod conditioning {}
    #[doc = include_str!("../../../book/src/decoder.md")]
    mod decoder {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
