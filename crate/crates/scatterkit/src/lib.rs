//! Scattering phase functions and scattering-parameter estimation for
//! homogeneous translucent slabs.
//!
//! The crate provides:
//! - [`phase`]: phase-function families (exponential, Henyey-Greenstein,
//!   two-term HG, Rayleigh, raw polynomial, tabulated), normalization,
//!   asymmetry, and direction sampling.
//! - [`mie`]: Lorenz-Mie reference phase functions for mono- and
//!   poly-disperse sphere populations.
//! - [`fitting`]: log-SAD fits of parametric families to tabulated targets.
//! - [`render`]: forward Monte Carlo rendering of 1-D intensity profiles of
//!   a beam-lit slab under an orthographic camera.
//! - [`inverse`]: analysis-by-synthesis estimation of extinction, albedo,
//!   and phase coefficients from profile sets.

pub mod fitting;
pub mod inverse;
pub mod mie;
pub mod phase;
pub mod quadrature;
pub mod render;

pub use fitting::{benchmark, fit, FitFamily, FitProblem, FitReport};

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Independent deterministic RNG stream for (seed, stream index).
pub(crate) fn stream_rng(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(stream)))
}
pub use inverse::{ingest_profiles, invert, log_loss, InversionConfig, InversionReport};
pub use mie::{mie_mono, mie_poly, MieConfig, MieResult};
pub use phase::{Basis, DirectionSampler, ExponentialPhase, PhaseError, PhaseModel, TabulatedPhase};
pub use render::{render, render_set, PixelLine, Profile, ProfileSet, SlabScene};
