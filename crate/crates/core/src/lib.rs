//! Simulation, datasets and representation learners for discovering physical
//! concepts in three-tank time series.
//!
//! The crate is organised bottom-up:
//!
//! - [`sim`]: level dynamics and RK4 integration.
//! - [`data`]: dataset generators, polynomial lift, derivative estimates, CSV I/O.
//! - [`nn`]: a small reverse-mode differentiation engine, dense layers and Adam.
//! - [`sindy`]: candidate libraries, sequentially thresholded least squares.
//! - [`bvae`], [`agents`], [`aesindy`], [`somvae`]: the four learners.
//! - [`eval`]: correlation reports, disentanglement score, NMI and timeline analysis.

pub mod aesindy;
pub mod agents;
pub mod bvae;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod sim;
pub mod sindy;
pub mod somvae;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Formats a float with 17 significant digits, which round-trips exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Seeded generator used throughout the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for item `index` of a run seeded with `seed`.
///
/// Each item gets its own generator, so results do not depend on the order in
/// which items are produced.
pub fn split_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}
