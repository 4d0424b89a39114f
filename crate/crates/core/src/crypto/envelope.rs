//! RSA key wrapping with randomized padding, and the hybrid public-key envelope.
//!
//! Wrapped block layout (k = modulus length in bytes):
//!
//! ```text
//! EM       = 0x00 || masked_seed (16) || masked_db (k - 17)
//! db       = check (8) || 0x00 .. 0x00 || 0x01 || payload
//! masked_db   = db   XOR MGF1(seed, k - 17)
//! masked_seed = seed XOR MGF1(masked_db, 16)
//! ```
//!
//! This is OAEP with a 16-byte seed and an 8-byte check value instead of a
//! full label hash, so 512-bit keys can still carry a 32-byte key plus a
//! length field.
//!
//! Hybrid envelope wire form: `wrapped (k) || nonce (12) || aead ciphertext`.
//! The wrapped payload is `sym_key (32) || ciphertext_len (u32 BE)`, so a
//! recipient can find the end of an envelope that has been followed by
//! padding. The AEAD plaintext is `len (u32 BE) || plaintext || zeros`,
//! padded to a multiple of 16 bytes.

use num_bigint::BigUint;
use rand::Rng;

use super::hash::{hash, mgf1, xor_in_place};
use super::rsa::{to_fixed_bytes, PublicKey, RsaKeyPair};
use super::sym::{sym_decrypt, sym_encrypt, NONCE_LEN, SYM_KEY_LEN};
use crate::error::{Error, Result};

const SEED_LEN: usize = 16;
const CHECK_LEN: usize = 8;
const PAD_BLOCK: usize = 16;

/// Overhead of the wrapping format beyond the payload itself.
pub const WRAP_OVERHEAD: usize = 1 + SEED_LEN + CHECK_LEN + 1;

fn check_value() -> [u8; CHECK_LEN] {
    hash(b"paysec/keywrap/v1").as_bytes()[..CHECK_LEN].try_into().unwrap()
}

pub fn max_wrap_payload(recipient: &PublicKey) -> usize {
    recipient.size().saturating_sub(WRAP_OVERHEAD)
}

/// Encrypts a short `payload` under `recipient` with randomized padding.
/// Output is exactly the modulus length.
pub fn wrap_key<R: Rng + ?Sized>(recipient: &PublicKey, payload: &[u8], rng: &mut R) -> Result<Vec<u8>> {
    let k = recipient.size();
    if payload.len() > max_wrap_payload(recipient) {
        return Err(Error::invalid(format!(
            "{}-bit key cannot wrap {} bytes",
            recipient.bits(),
            payload.len()
        )));
    }
    let db_len = k - 1 - SEED_LEN;
    let mut db = vec![0u8; db_len];
    db[..CHECK_LEN].copy_from_slice(&check_value());
    let one_at = db_len - payload.len() - 1;
    db[one_at] = 0x01;
    db[one_at + 1..].copy_from_slice(payload);

    let mut seed = [0u8; SEED_LEN];
    rng.fill(&mut seed);
    xor_in_place(&mut db, &mgf1(&seed, db_len));
    xor_in_place(&mut seed, &mgf1(&db, SEED_LEN));

    let mut em = Vec::with_capacity(k);
    em.push(0);
    em.extend_from_slice(&seed);
    em.extend_from_slice(&db);
    let m = BigUint::from_bytes_be(&em);
    // Leading zero byte keeps m below n, whose top byte is non-zero.
    debug_assert!(m < recipient.n);
    to_fixed_bytes(&recipient.raw_public(&m), k)
}

pub fn unwrap_key(keys: &RsaKeyPair, wrapped: &[u8]) -> Result<Vec<u8>> {
    let k = keys.public().size();
    if wrapped.len() != k {
        return Err(Error::Integrity);
    }
    let c = BigUint::from_bytes_be(wrapped);
    if c >= keys.n {
        return Err(Error::Integrity);
    }
    let em = to_fixed_bytes(&keys.raw_private(&c), k)?;
    if em[0] != 0 {
        return Err(Error::Integrity);
    }
    let mut seed = em[1..1 + SEED_LEN].to_vec();
    let mut db = em[1 + SEED_LEN..].to_vec();
    xor_in_place(&mut seed, &mgf1(&db, SEED_LEN));
    let db_mask = mgf1(&seed, db.len());
    xor_in_place(&mut db, &db_mask);
    if db[..CHECK_LEN] != check_value() {
        return Err(Error::Integrity);
    }
    let rest = &db[CHECK_LEN..];
    let one = rest
        .iter()
        .position(|&b| b != 0)
        .filter(|&i| rest[i] == 0x01)
        .ok_or(Error::Integrity)?;
    Ok(rest[one + 1..].to_vec())
}

/// Public-key envelope: fresh AEAD key wrapped under the recipient's RSA key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HybridEnvelope {
    pub wrapped_key: Vec<u8>,
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
}

impl HybridEnvelope {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wrapped_key.len() + NONCE_LEN + self.ciphertext.len());
        out.extend_from_slice(&self.wrapped_key);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ciphertext);
        out
    }

    /// Splits wire bytes for a recipient whose modulus is `modulus_len` bytes.
    pub fn from_bytes(bytes: &[u8], modulus_len: usize) -> Result<Self> {
        if bytes.len() < modulus_len + NONCE_LEN {
            return Err(Error::Integrity);
        }
        Ok(Self {
            wrapped_key: bytes[..modulus_len].to_vec(),
            nonce: bytes[modulus_len..modulus_len + NONCE_LEN].try_into().unwrap(),
            ciphertext: bytes[modulus_len + NONCE_LEN..].to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.wrapped_key.len() + NONCE_LEN + self.ciphertext.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Size of the wire envelope for a plaintext of `plaintext_len` bytes.
pub fn envelope_len(recipient: &PublicKey, plaintext_len: usize) -> usize {
    recipient.size() + NONCE_LEN + padded_len(plaintext_len) + super::sym::TAG_LEN
}

fn padded_len(plaintext_len: usize) -> usize {
    (4 + plaintext_len).div_ceil(PAD_BLOCK) * PAD_BLOCK
}

pub fn pk_encrypt<R: Rng + ?Sized>(recipient: &PublicKey, plaintext: &[u8], rng: &mut R) -> Result<HybridEnvelope> {
    if max_wrap_payload(recipient) < SYM_KEY_LEN + 4 {
        return Err(Error::invalid(format!(
            "{}-bit key is too small for a hybrid envelope",
            recipient.bits()
        )));
    }
    let len = u32::try_from(plaintext.len()).map_err(|_| Error::invalid("plaintext too long"))?;
    let mut inner = Vec::with_capacity(padded_len(plaintext.len()));
    inner.extend_from_slice(&len.to_be_bytes());
    inner.extend_from_slice(plaintext);
    inner.resize(padded_len(plaintext.len()), 0);

    let mut key = [0u8; SYM_KEY_LEN];
    rng.fill(&mut key);
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill(&mut nonce);
    let ciphertext = sym_encrypt(&key, &nonce, &inner)?;

    let mut wrapped_payload = key.to_vec();
    wrapped_payload.extend_from_slice(&(ciphertext.len() as u32).to_be_bytes());
    let wrapped_key = wrap_key(recipient, &wrapped_payload, rng)?;
    Ok(HybridEnvelope {
        wrapped_key,
        nonce,
        ciphertext,
    })
}

pub fn pk_decrypt(keys: &RsaKeyPair, envelope: &HybridEnvelope) -> Result<Vec<u8>> {
    let (plaintext, used) = pk_decrypt_prefix(keys, &envelope.to_bytes())?;
    if used != envelope.len() {
        return Err(Error::Integrity);
    }
    Ok(plaintext)
}

/// Opens an envelope at the start of `bytes`, ignoring anything after it.
/// Returns the plaintext and the number of bytes the envelope occupied.
pub fn pk_decrypt_prefix(keys: &RsaKeyPair, bytes: &[u8]) -> Result<(Vec<u8>, usize)> {
    let k = keys.public().size();
    if bytes.len() < k + NONCE_LEN {
        return Err(Error::Integrity);
    }
    let payload = unwrap_key(keys, &bytes[..k])?;
    if payload.len() != SYM_KEY_LEN + 4 {
        return Err(Error::Integrity);
    }
    let ct_len = u32::from_be_bytes(payload[SYM_KEY_LEN..].try_into().unwrap()) as usize;
    let end = k + NONCE_LEN + ct_len;
    if bytes.len() < end {
        return Err(Error::Integrity);
    }
    let nonce = &bytes[k..k + NONCE_LEN];
    let inner = sym_decrypt(&payload[..SYM_KEY_LEN], nonce, &bytes[k + NONCE_LEN..end])?;
    if inner.len() < 4 {
        return Err(Error::Integrity);
    }
    let len = u32::from_be_bytes(inner[..4].try_into().unwrap()) as usize;
    if 4 + len > inner.len() {
        return Err(Error::Integrity);
    }
    Ok((inner[4..4 + len].to_vec(), end))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn keys(seed: u64) -> RsaKeyPair {
        RsaKeyPair::generate(512, seed).unwrap()
    }

    #[test]
    fn message_round_trip() {
        let kp = keys(1);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let env = pk_encrypt(&kp.public(), b"Message", &mut rng).unwrap();
        assert_eq!(pk_decrypt(&kp, &env).unwrap(), b"Message");
        assert_eq!(env.len(), envelope_len(&kp.public(), 7));
    }

    #[test]
    fn round_trips_assorted_lengths() {
        let kp = keys(2);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for len in [0usize, 1, 255, 4096] {
            let pt: Vec<u8> = (0..len).map(|i| (i * 7) as u8).collect();
            let env = pk_encrypt(&kp.public(), &pt, &mut rng).unwrap();
            let wire = env.to_bytes();
            let parsed = HybridEnvelope::from_bytes(&wire, kp.public().size()).unwrap();
            assert_eq!(pk_decrypt(&kp, &parsed).unwrap(), pt);
        }
    }

    #[test]
    fn wrong_private_key_is_integrity_error() {
        let right = keys(3);
        let wrong = keys(4);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let env = pk_encrypt(&right.public(), b"Message", &mut rng).unwrap();
        assert!(matches!(pk_decrypt(&wrong, &env), Err(Error::Integrity)));
    }

    #[test]
    fn encryption_is_randomized() {
        let kp = keys(5);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let a = pk_encrypt(&kp.public(), b"same", &mut rng).unwrap();
        let b = pk_encrypt(&kp.public(), b"same", &mut rng).unwrap();
        assert_ne!(a.to_bytes(), b.to_bytes());
        assert_ne!(a.wrapped_key, b.wrapped_key);
    }

    #[test]
    fn tampering_is_detected() {
        let kp = keys(6);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let wire = pk_encrypt(&kp.public(), b"tamper me please", &mut rng)
            .unwrap()
            .to_bytes();
        for i in (0..wire.len()).step_by(7) {
            let mut bad = wire.clone();
            bad[i] ^= 0x20;
            let env = HybridEnvelope::from_bytes(&bad, kp.public().size()).unwrap();
            assert!(matches!(pk_decrypt(&kp, &env), Err(Error::Integrity)), "byte {i}");
        }
    }

    #[test]
    fn length_is_hidden_within_a_pad_block() {
        let kp = keys(7);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let a = pk_encrypt(&kp.public(), &[1u8; 1], &mut rng).unwrap();
        let b = pk_encrypt(&kp.public(), &[1u8; 12], &mut rng).unwrap();
        assert_eq!(a.len(), b.len());
    }

    #[test]
    fn prefix_decrypt_ignores_trailing_padding() {
        let kp = keys(8);
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let mut wire = pk_encrypt(&kp.public(), b"inner", &mut rng).unwrap().to_bytes();
        let used = wire.len();
        wire.extend_from_slice(&[0xaa; 300]);
        let (pt, n) = pk_decrypt_prefix(&kp, &wire).unwrap();
        assert_eq!(pt, b"inner");
        assert_eq!(n, used);
    }

    #[test]
    fn small_keys_cannot_carry_an_envelope() {
        let kp = RsaKeyPair::generate(256, 1).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        assert!(matches!(
            pk_encrypt(&kp.public(), b"x", &mut rng),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn wrap_round_trip_and_wrong_key() {
        let kp = keys(9);
        let other = keys(10);
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let w = wrap_key(&kp.public(), &[9u8; 32], &mut rng).unwrap();
        assert_eq!(w.len(), 64);
        assert_eq!(unwrap_key(&kp, &w).unwrap(), vec![9u8; 32]);
        assert!(unwrap_key(&other, &w).is_err());
    }
}
