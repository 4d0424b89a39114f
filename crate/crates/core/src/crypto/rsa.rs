//! RSA key material, raw exponentiation, and hash-then-sign.
//!
//! Keys are generated from a 64-bit seed so that whole scenarios are
//! reproducible. Desk-scale sizes (down to 64 bits) are allowed; nothing here
//! is constant time.

use std::fmt;

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::hash::{hash, mgf1};
use crate::error::{Error, Result};

pub const MIN_KEY_BITS: usize = 64;
pub const DEFAULT_PUBLIC_EXPONENT: u32 = 65537;

const MILLER_RABIN_ROUNDS: usize = 24;

/// Public half of an RSA key: (n, e).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PublicKey {
    pub n: BigUint,
    pub e: BigUint,
}

impl PublicKey {
    pub fn new(n: BigUint, e: BigUint) -> Self {
        Self { n, e }
    }

    pub fn bits(&self) -> usize {
        self.n.bits() as usize
    }

    /// Modulus length in bytes.
    pub fn size(&self) -> usize {
        self.bits().div_ceil(8)
    }

    /// x^e mod n.
    pub fn raw_public(&self, x: &BigUint) -> BigUint {
        x.modpow(&self.e, &self.n)
    }

    pub fn verify(&self, message: &[u8], signature: &BigUint) -> bool {
        if signature >= &self.n {
            return false;
        }
        self.raw_public(signature) == encode_digest(message, &self.n)
    }

    /// Canonical bytes used when a key is itself hashed or certified.
    pub fn to_canonical(&self) -> Vec<u8> {
        crate::encoding::Canonical::new()
            .field(self.n.to_bytes_be())
            .field(self.e.to_bytes_be())
            .finish()
    }

    pub fn fingerprint(&self) -> super::DigestValue {
        hash(&self.to_canonical())
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({} bits, e={})", self.bits(), self.e)
    }
}

/// An RSA key pair. The primes are discarded after generation.
#[derive(Clone, PartialEq, Eq)]
pub struct RsaKeyPair {
    pub n: BigUint,
    pub e: BigUint,
    pub d: BigUint,
    pub bits: usize,
}

impl fmt::Debug for RsaKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RsaKeyPair")
            .field("bits", &self.bits)
            .field("n", &self.n)
            .field("e", &self.e)
            .finish_non_exhaustive()
    }
}

impl RsaKeyPair {
    /// Deterministic key generation: the same `(bits, seed)` always yields the same key.
    pub fn generate(bits: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Self::generate_with(bits, &mut rng)
    }

    pub fn generate_with<R: Rng + ?Sized>(bits: usize, rng: &mut R) -> Result<Self> {
        if bits < MIN_KEY_BITS {
            return Err(Error::invalid(format!(
                "key size must be at least {MIN_KEY_BITS} bits, got {bits}"
            )));
        }
        let e = BigUint::from(DEFAULT_PUBLIC_EXPONENT);
        let p_bits = bits / 2;
        let q_bits = bits - p_bits;
        loop {
            let p = random_prime(p_bits, rng);
            let q = random_prime(q_bits, rng);
            if p == q {
                continue;
            }
            if let Ok(kp) = Self::from_primes(&p, &q, &e) {
                debug_assert_eq!(kp.bits, bits);
                return Ok(kp);
            }
        }
    }

    /// Builds a key from explicit primes.
    ///
    /// d is the inverse of e mod (p-1)(q-1), which also satisfies
    /// e*d = 1 mod lcm(p-1, q-1).
    pub fn from_primes(p: &BigUint, q: &BigUint, e: &BigUint) -> Result<Self> {
        if p == q {
            return Err(Error::invalid("p and q must be distinct"));
        }
        let one = BigUint::one();
        let phi = (p - &one) * (q - &one);
        let d = e
            .modinv(&phi)
            .ok_or_else(|| Error::invalid("e is not invertible modulo (p-1)(q-1)"))?;
        let n = p * q;
        let bits = n.bits() as usize;
        Ok(Self {
            n,
            e: e.clone(),
            d,
            bits,
        })
    }

    pub fn public(&self) -> PublicKey {
        PublicKey::new(self.n.clone(), self.e.clone())
    }

    /// x^d mod n.
    pub fn raw_private(&self, x: &BigUint) -> BigUint {
        x.modpow(&self.d, &self.n)
    }

    /// Hash-then-sign: the padded digest of `message`, raised to d mod n.
    pub fn sign(&self, message: &[u8]) -> BigUint {
        self.raw_private(&encode_digest(message, &self.n))
    }

    pub fn to_key_file(&self) -> String {
        format!(
            "# rsa key pair, {} bits\nn={}\ne={}\nd={}\n",
            self.bits, self.n, self.e, self.d
        )
    }

    pub fn from_key_file(text: &str) -> Result<Self> {
        let fields = parse_key_values(text)?;
        let get = |k: &str| -> Result<BigUint> {
            let (line, v) = fields
                .iter()
                .find(|(_, (key, _))| key == k)
                .map(|(l, (_, v))| (*l, v))
                .ok_or_else(|| Error::Parse {
                    line: 0,
                    message: format!("missing field `{k}`"),
                })?;
            v.parse::<BigUint>().map_err(|_| Error::Parse {
                line,
                message: format!("`{k}` is not a decimal integer"),
            })
        };
        let n = get("n")?;
        let e = get("e")?;
        let d = get("d")?;
        if n.is_zero() {
            return Err(Error::invalid("modulus is zero"));
        }
        let bits = n.bits() as usize;
        Ok(Self { n, e, d, bits })
    }
}

/// Parses `key=value` lines, skipping blanks and `#` comments.
/// Returns `(line number, (key, value))`.
pub(crate) fn parse_key_values(text: &str) -> Result<Vec<(usize, (String, String))>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: idx + 1,
            message: format!("expected key=value, got `{line}`"),
        })?;
        out.push((idx + 1, (k.trim().to_string(), v.trim().to_string())));
    }
    Ok(out)
}

/// Deterministic padding of SHA-256(message) to an integer below n.
///
/// The digest is expanded with MGF1 to the modulus length and the top bits are
/// cleared so the value has at most `bits(n) - 1` bits. Works for any modulus
/// size, including the 12-bit textbook key.
pub fn encode_digest(message: &[u8], n: &BigUint) -> BigUint {
    let bits = n.bits() as usize;
    let target_bits = bits.saturating_sub(1).max(1);
    let len = target_bits.div_ceil(8);
    let mut em = mgf1(hash(message).as_bytes(), len);
    let excess = len * 8 - target_bits;
    em[0] &= 0xffu8 >> excess;
    BigUint::from_bytes_be(&em)
}

/// Big-endian encoding left-padded to exactly `len` bytes.
pub fn to_fixed_bytes(x: &BigUint, len: usize) -> Result<Vec<u8>> {
    let raw = x.to_bytes_be();
    let raw: &[u8] = if x.is_zero() { &[] } else { &raw };
    if raw.len() > len {
        return Err(Error::Internal(format!(
            "integer of {} bytes does not fit in {len}",
            raw.len()
        )));
    }
    let mut out = vec![0u8; len - raw.len()];
    out.extend_from_slice(raw);
    Ok(out)
}

const SMALL_PRIMES: [u32; 53] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109,
    113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223, 227, 229, 233, 239,
    241, 251,
];

/// Random prime with exactly `bits` bits and the top two bits set.
pub fn random_prime<R: Rng + ?Sized>(bits: usize, rng: &mut R) -> BigUint {
    assert!(bits >= 16, "prime size too small");
    loop {
        let mut candidate = rng.gen_biguint(bits as u64);
        candidate.set_bit(bits as u64 - 1, true);
        candidate.set_bit(bits as u64 - 2, true);
        candidate.set_bit(0, true);
        if is_probable_prime(&candidate, rng) {
            return candidate;
        }
    }
}

/// Trial division followed by Miller-Rabin with random bases.
pub fn is_probable_prime<R: Rng + ?Sized>(n: &BigUint, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    if n.is_even() {
        return n == &two;
    }
    for &p in SMALL_PRIMES.iter() {
        let p = BigUint::from(p);
        if n == &p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    let one = BigUint::one();
    let n_minus_1 = n - &one;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    'witness: for _ in 0..MILLER_RABIN_ROUNDS {
        let a = rng.gen_biguint_range(&two, &n_minus_1);
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
            if x == one {
                return false;
            }
        }
        return false;
    }
    true
}
