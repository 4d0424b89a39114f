//! RSA blind signatures and the cut-and-choose validation game.
//!
//! The provider maps a payload to `m = encode_digest(payload)`, blinds it as
//! `m' = m * k^e mod n`, the signer returns `s' = m'^d mod n`, and the provider
//! recovers `s = s' * k^-1 mod n = m^d mod n`. Raw RSA is required for the
//! algebra to commute; everything else in the crate uses hash-then-sign.
//!
//! In cut-and-choose the provider submits `n` blinded candidates, the signer
//! keeps one index at random and asks for `(payload, k)` on the other `n - 1`.
//! Every revealed candidate is re-blinded and checked against the submission
//! and the validity predicate; one failure aborts the round.

use std::collections::BTreeSet;

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::Rng;

use crate::crypto::{encode_digest, PublicKey, RsaKeyPair};
use crate::error::{Error, Result};

/// Provider-side record of one blinded message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlindingSession {
    pub message: Vec<u8>,
    pub m_int: BigUint,
    pub k: BigUint,
    pub blinded: BigUint,
    pub blind_sig: Option<BigUint>,
    pub unblinded_sig: Option<BigUint>,
    signer: PublicKey,
}

impl BlindingSession {
    /// Blinds `message` with a fixed factor. Fails if `k` is not invertible mod n.
    pub fn with_factor(message: &[u8], signer: &PublicKey, k: BigUint) -> Result<Self> {
        if k.is_zero() || k >= signer.n || !k.gcd(&signer.n).is_one() {
            return Err(Error::invalid("blinding factor must be a unit modulo n"));
        }
        let m_int = encode_digest(message, &signer.n);
        let blinded = (&m_int * signer.raw_public(&k)) % &signer.n;
        Ok(Self {
            message: message.to_vec(),
            m_int,
            k,
            blinded,
            blind_sig: None,
            unblinded_sig: None,
            signer: signer.clone(),
        })
    }

    pub fn signer(&self) -> &PublicKey {
        &self.signer
    }

    pub fn attach_blind_signature(&mut self, blind_sig: BigUint) {
        self.blind_sig = Some(blind_sig);
    }

    /// Removes the blinding factor: `s = s' * k^-1 mod n`.
    pub fn unblind(&mut self) -> Result<BigUint> {
        let blind_sig = self
            .blind_sig
            .as_ref()
            .ok_or_else(|| Error::state("no blind signature attached"))?;
        let k_inv = self
            .k
            .modinv(&self.signer.n)
            .ok_or_else(|| Error::Internal("blinding factor lost invertibility".into()))?;
        let s = (blind_sig * k_inv) % &self.signer.n;
        self.unblinded_sig = Some(s.clone());
        Ok(s)
    }
}

/// Samples k uniformly from the units mod n and blinds `message`.
pub fn blind<R: Rng + ?Sized>(message: &[u8], signer: &PublicKey, rng: &mut R) -> BlindingSession {
    loop {
        let k = rng.gen_biguint_range(&BigUint::one(), &signer.n);
        if let Ok(s) = BlindingSession::with_factor(message, signer, k) {
            return s;
        }
    }
}

/// The signer's step: `blinded^d mod n`, with no padding.
pub fn sign_blinded(signer: &RsaKeyPair, blinded: &BigUint) -> Result<BigUint> {
    if blinded >= &signer.n {
        return Err(Error::invalid("blinded value must be below the modulus"));
    }
    Ok(signer.raw_private(blinded))
}

/// Checks an unblinded signature against the payload it was issued for.
pub fn verify_unblinded(signer: &PublicKey, message: &[u8], sig: &BigUint) -> bool {
    sig < &signer.n && signer.raw_public(sig) == encode_digest(message, &signer.n)
}

/// What the provider discloses for a revealed index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reveal {
    pub message: Vec<u8>,
    pub k: BigUint,
}

/// The provider's side of cut-and-choose.
pub trait CandidateProvider {
    /// Blinded values submitted to the signer, in order.
    fn blinded_values(&self) -> Vec<BigUint>;
    /// Opens candidate `index`.
    fn reveal(&self, index: usize) -> Reveal;
}

/// Provider that blinds honestly and reveals truthfully.
#[derive(Debug, Clone)]
pub struct HonestProvider {
    pub sessions: Vec<BlindingSession>,
}

impl HonestProvider {
    pub fn new<R: Rng + ?Sized>(payloads: &[Vec<u8>], signer: &PublicKey, rng: &mut R) -> Self {
        Self {
            sessions: payloads.iter().map(|p| blind(p, signer, rng)).collect(),
        }
    }
}

impl CandidateProvider for HonestProvider {
    fn blinded_values(&self) -> Vec<BigUint> {
        self.sessions.iter().map(|s| s.blinded.clone()).collect()
    }

    fn reveal(&self, index: usize) -> Reveal {
        let s = &self.sessions[index];
        Reveal {
            message: s.message.clone(),
            k: s.k.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CutChooseOutcome {
    Accepted { blind_sig: BigUint },
    CheatingDetected { index: usize },
}

#[derive(Debug, Clone)]
pub struct CutChooseSession {
    pub candidates: Vec<BlindingSession>,
    pub revealed_indexes: BTreeSet<usize>,
    pub signed_index: usize,
    pub outcome: CutChooseOutcome,
}

impl CutChooseSession {
    pub fn accepted(&self) -> bool {
        matches!(self.outcome, CutChooseOutcome::Accepted { .. })
    }
}

/// Signer side of the game against an arbitrary provider.
///
/// Returns the index kept back, the revealed set, and the outcome. A reveal
/// whose recomputed blinding differs from the submission counts as cheating.
pub fn cut_and_choose<P, F, R>(
    provider: &P,
    is_valid: F,
    signer: &RsaKeyPair,
    rng: &mut R,
) -> Result<(usize, BTreeSet<usize>, CutChooseOutcome)>
where
    P: CandidateProvider + ?Sized,
    F: Fn(&[u8]) -> bool,
    R: Rng + ?Sized,
{
    let submitted = provider.blinded_values();
    let n = submitted.len();
    if n < 2 {
        return Err(Error::invalid("cut-and-choose needs at least two candidates"));
    }
    let public = signer.public();
    let signed_index = rng.gen_range(0..n);
    let revealed: BTreeSet<usize> = (0..n).filter(|&i| i != signed_index).collect();
    for &i in &revealed {
        let r = provider.reveal(i);
        let recomputed = BlindingSession::with_factor(&r.message, &public, r.k);
        let consistent = matches!(&recomputed, Ok(s) if s.blinded == submitted[i]);
        if !consistent || !is_valid(&r.message) {
            return Ok((signed_index, revealed, CutChooseOutcome::CheatingDetected { index: i }));
        }
    }
    let blind_sig = sign_blinded(signer, &submitted[signed_index])?;
    Ok((signed_index, revealed, CutChooseOutcome::Accepted { blind_sig }))
}

/// Full round with an honest provider blinding `payloads`. On acceptance the
/// kept candidate carries both the blind and the unblinded signature.
pub fn run_cut_and_choose<F, R>(
    payloads: &[Vec<u8>],
    is_valid: F,
    signer: &RsaKeyPair,
    rng: &mut R,
) -> Result<CutChooseSession>
where
    F: Fn(&[u8]) -> bool,
    R: Rng + ?Sized,
{
    let provider = HonestProvider::new(payloads, &signer.public(), rng);
    let (signed_index, revealed_indexes, outcome) = cut_and_choose(&provider, is_valid, signer, rng)?;
    let mut candidates = provider.sessions;
    if let CutChooseOutcome::Accepted { blind_sig } = &outcome {
        let s = &mut candidates[signed_index];
        s.attach_blind_signature(blind_sig.clone());
        s.unblind()?;
    }
    Ok(CutChooseSession {
        candidates,
        revealed_indexes,
        signed_index,
        outcome,
    })
}
