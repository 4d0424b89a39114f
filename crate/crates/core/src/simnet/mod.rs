//! Deterministic tick-driven message bus.
//!
//! Actors are protocol state machines from the other modules. A scenario
//! names the actors, a schedule of triggers, and adversary taps on links.
//! Running the same scenario with the same seed always yields the same
//! transcript, byte for byte.

mod engine;
mod scenario;
mod transcript;

pub use engine::*;
pub use scenario::*;
pub use transcript::*;
