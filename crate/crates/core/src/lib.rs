//! Payment-transaction security mechanisms and a deterministic simulator for
//! exercising them.
//!
//! * [`crypto`]: RSA, hashing, AEAD, hybrid envelopes, certificates.
//! * [`blindsig`]: RSA blind signatures and the cut-and-choose validation game.
//! * [`mixnet`]: Chaum mixes, onion packets, return addresses, mix matrices.
//! * [`setcore`]: SET-style dual signatures and the randomized PI hash.
//! * [`onekp`]: 1KP freshness values, COM fingerprint, and the message flow.
//! * [`firstvirtual`]: VPIN pseudonyms, Yes/No/Fraud confirmation, ledger.
//! * [`simnet`]: tick-driven message bus, adversary taps, transcripts.
//! * [`trials`]: batched independent trials, parallel when the `parallel`
//!   feature is on.

pub mod blindsig;
pub mod crypto;
pub mod demo;
pub mod encoding;
mod error;
pub mod firstvirtual;
pub mod mixnet;
pub mod onekp;
pub mod setcore;
pub mod simnet;
pub mod trials;

pub use error::{Error, RejectReason, Result};
