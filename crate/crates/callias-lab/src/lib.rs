//! Finite-volume laboratory for Callias-type operators `kappa*D + i*H`.
//!
//! The crate builds lattice spectral triples (Dirac operators, position
//! operators, magnetic translations), runs the functional calculus needed for
//! switch functions and potential unitaries, and computes topological indices
//! through several independent engines: spectral-localizer signatures,
//! filtered kernel counts, spectral flow of Hermitian paths, noncommutative
//! winding numbers, Chern numbers and boundary invariants. The `experiments`
//! module bundles reference models on which all engines are required to agree
//! integer-for-integer.

pub mod calculus;
pub mod error;
pub mod flow;
pub mod linalg;
pub mod localizer;
pub mod operators;
pub mod pairings;

pub use error::{Error, Result};

use std::sync::OnceLock;

/// Environment variable capping worker parallelism.
pub const THREADS_ENV_VAR: &str = "CALLIAS_LAB_THREADS";

static PARALLELISM: OnceLock<usize> = OnceLock::new();

/// Initializes global parallelism once, honoring `CALLIAS_LAB_THREADS`.
/// Returns the worker count in effect. Safe to call repeatedly.
pub fn init_parallelism() -> usize {
    *PARALLELISM.get_or_init(|| {
        let available = std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1);
        let requested = std::env::var(THREADS_ENV_VAR)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or(available);
        let threads = requested.min(available.max(1));
        if threads <= 1 {
            faer::set_global_parallelism(faer::Par::Seq);
        } else {
            faer::set_global_parallelism(faer::Par::rayon(threads));
        }
        threads
    })
}
