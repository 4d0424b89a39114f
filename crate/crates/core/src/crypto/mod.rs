//! Primitive layer: RSA, SHA-256 / HMAC-SHA-256, AES-256-GCM, the hybrid
//! public-key envelope, and a one-level certificate authority.

mod cert;
mod envelope;
mod hash;
mod rsa;
mod sym;

pub use cert::{Certificate, CertificateAuthority, CertificateDirectory};
pub use envelope::{
    envelope_len, max_wrap_payload, pk_decrypt, pk_decrypt_prefix, pk_encrypt, unwrap_key, wrap_key, HybridEnvelope,
    WRAP_OVERHEAD,
};
pub use hash::{hash, keyed_hash, mgf1, DigestValue, DIGEST_LEN, MIN_PRF_KEY_LEN};
pub use rsa::{
    encode_digest, is_probable_prime, random_prime, to_fixed_bytes, PublicKey, RsaKeyPair, DEFAULT_PUBLIC_EXPONENT,
    MIN_KEY_BITS,
};
pub use sym::{sym_decrypt, sym_encrypt, NONCE_LEN, SYM_KEY_LEN, TAG_LEN};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// The seeded RNG used throughout the crate.
pub type SimRng = ChaCha20Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Derives an independent 64-bit seed from a parent seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let d = hash(&crate::encoding::Canonical::new().u64(seed).str(label).finish());
    u64::from_be_bytes(d.as_bytes()[..8].try_into().unwrap())
}

/// Same as [`RsaKeyPair::generate`].
pub fn generate_keypair(bits: usize, rng_seed: u64) -> crate::Result<RsaKeyPair> {
    RsaKeyPair::generate(bits, rng_seed)
}
