//! Independent Monte-Carlo trials with per-trial seeds.
//!
//! Trial `i` always gets the RNG seeded from `derive_seed(seed, "trial/i")`,
//! so results are identical whether trials run on one thread or many. With
//! the `parallel` feature off, `Execution::Parallel` falls back to a plain loop.

use rand::Rng;

use crate::blindsig::{cut_and_choose, CutChooseOutcome, HonestProvider};
use crate::crypto::{derive_seed, rng_from_seed, RsaKeyPair, SimRng};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

pub fn trial_rng(seed: u64, index: usize) -> SimRng {
    rng_from_seed(derive_seed(seed, &format!("trial/{index}")))
}

pub fn run_trials<T, F>(count: usize, seed: u64, execution: Execution, trial: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut SimRng) -> T + Sync + Send,
{
    let one = |i: usize| trial(i, &mut trial_rng(seed, i));
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..count).into_par_iter().map(one).collect()
        }
        _ => (0..count).map(one).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionStats {
    pub runs: usize,
    pub detected: usize,
    /// Runs where the bad candidate was the one kept back and signed.
    pub undetected: usize,
}

impl DetectionStats {
    pub fn rate(&self) -> f64 {
        self.detected as f64 / self.runs as f64
    }
}

fn candidate(serial: usize, valid: bool) -> Vec<u8> {
    format!("coin serial={serial} value={}", if valid { 10 } else { 1000 }).into_bytes()
}

fn is_valid_candidate(m: &[u8]) -> bool {
    m.ends_with(b"value=10")
}

/// Cut-and-choose against a provider that hides exactly one bad candidate
/// among `n` at a random position.
pub fn cut_and_choose_detection(
    signer: &RsaKeyPair,
    runs: usize,
    n: usize,
    seed: u64,
    execution: Execution,
) -> Result<DetectionStats> {
    if n < 2 {
        return Err(Error::invalid("cut-and-choose needs at least two candidates"));
    }
    let public = signer.public();
    let outcomes = run_trials(runs, seed, execution, |_, rng| {
        let bad = rng.gen_range(0..n);
        let payloads: Vec<Vec<u8>> = (0..n).map(|i| candidate(i, i != bad)).collect();
        let provider = HonestProvider::new(&payloads, &public, rng);
        let (signed, _, outcome) = cut_and_choose(&provider, is_valid_candidate, signer, rng)?;
        Ok(match outcome {
            CutChooseOutcome::CheatingDetected { index } => {
                debug_assert_eq!(index, bad);
                true
            }
            CutChooseOutcome::Accepted { .. } => {
                debug_assert_eq!(signed, bad);
                false
            }
        })
    });
    let mut stats = DetectionStats {
        runs,
        detected: 0,
        undetected: 0,
    };
    for o in outcomes {
        if o? {
            stats.detected += 1;
        } else {
            stats.undetected += 1;
        }
    }
    Ok(stats)
}
