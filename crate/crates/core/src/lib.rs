//! Abstraction of autonomous dynamical systems into timed automata.
//!
//! The pipeline partitions the state space with level sets of quadratic
//! Lyapunov functions (nested positive-invariant slices), decomposes the
//! intersections into connected cells on a grid, attaches transit-time
//! bounds per slice, and emits a timed automaton whose zone-based
//! reachability over-approximates (or, in complete mode, matches) the
//! reachable set of the flow over bounded time windows. A numerical oracle
//! validates soundness against simulated trajectories.
//!
//! Modules follow the pipeline stages:
//!
//! * [`system`] — vector fields, quadratic forms, Lyapunov checks.
//! * [`partition`] — slice families, grid labeling, cells.
//! * [`bounds`] — per-slice `|ψ̇|` ranges and transit-time bounds.
//! * [`automaton`] — timed-automaton construction and composition.
//! * [`reach`] — difference-bound-matrix zones and reachability.
//! * [`oracle`] — ODE flows, Monte-Carlo soundness and completeness checks.
//! * [`problem`] — problem documents, pipeline glue, fingerprints.
//! * [`export`] — native and model-checker file formats.

pub mod automaton;
pub mod bounds;
pub mod error;
pub mod export;
pub mod oracle;
pub mod partition;
pub mod problem;
pub mod rat;
pub mod reach;
pub mod system;

pub use error::{Error, Result};
pub use rat::Rat;

#[cfg(test)]
pub(crate) fn test_rng() -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(0x5EED)
}
