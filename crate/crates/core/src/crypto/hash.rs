use std::fmt;

use hmac::{Hmac, Mac};
use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};

pub const DIGEST_LEN: usize = 32;
pub const MIN_PRF_KEY_LEN: usize = 16;

/// A 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DigestValue([u8; DIGEST_LEN]);

impl DigestValue {
    pub fn from_bytes(bytes: [u8; DIGEST_LEN]) -> Self {
        Self(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let arr: [u8; DIGEST_LEN] = bytes
            .try_into()
            .map_err(|_| Error::malformed("digest must be 32 bytes"))?;
        Ok(Self(arr))
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// First eight hex characters, for transcripts.
    pub fn short_hex(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl AsRef<[u8]> for DigestValue {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for DigestValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DigestValue({})", self.to_hex())
    }
}

pub fn hash(data: &[u8]) -> DigestValue {
    DigestValue(Sha256::digest(data).into())
}

/// HMAC-SHA-256 used as the pseudorandom function h_K(key, data).
pub fn keyed_hash(key: &[u8], data: &[u8]) -> Result<DigestValue> {
    if key.len() < MIN_PRF_KEY_LEN {
        return Err(Error::invalid(format!(
            "keyed hash needs a key of at least {MIN_PRF_KEY_LEN} bytes, got {}",
            key.len()
        )));
    }
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(data);
    Ok(DigestValue(mac.finalize().into_bytes().into()))
}

/// MGF1 with SHA-256: expands `seed` into `len` pseudorandom bytes.
pub fn mgf1(seed: &[u8], len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len + DIGEST_LEN);
    let mut counter = 0u32;
    while out.len() < len {
        let mut h = Sha256::new();
        h.update(seed);
        h.update(counter.to_be_bytes());
        out.extend_from_slice(&h.finalize());
        counter += 1;
    }
    out.truncate(len);
    out
}

pub(crate) fn xor_in_place(dst: &mut [u8], mask: &[u8]) {
    for (d, m) in dst.iter_mut().zip(mask) {
        *d ^= m;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_matches_published_vector() {
        assert_eq!(
            hash(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            hash(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn one_bit_flip_changes_digest() {
        let a = b"payment instruction".to_vec();
        let mut b = a.clone();
        b[3] ^= 0x01;
        assert_ne!(hash(&a), hash(&b));
        assert_eq!(hash(&a), hash(&a.clone()));
    }

    #[test]
    fn hmac_matches_rfc4231_case_1() {
        let key = [0x0bu8; 20];
        assert_eq!(
            keyed_hash(&key, b"Hi There").unwrap().to_hex(),
            "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7"
        );
    }

    #[test]
    fn keyed_hash_rejects_short_key() {
        assert!(matches!(keyed_hash(&[1u8; 15], b"x"), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn distinct_keys_give_distinct_outputs() {
        let d = b"DESC";
        let a = keyed_hash(&[1u8; 16], d).unwrap();
        let b = keyed_hash(&[2u8; 16], d).unwrap();
        assert_ne!(a, b);
        assert_ne!(a, hash(d));
        assert_eq!(a, keyed_hash(&[1u8; 16], d).unwrap());
    }

    #[test]
    fn mgf1_prefix_consistent() {
        let long = mgf1(b"seed", 100);
        let short = mgf1(b"seed", 40);
        assert_eq!(&long[..40], &short[..]);
    }

    #[test]
    fn digest_length_and_determinism_up_to_one_mib() {
        let mut data = vec![0u8; 1 << 20];
        for (i, b) in data.iter_mut().enumerate() {
            *b = (i * 31 % 251) as u8;
        }
        for len in [0usize, 1, 63, 64, 65, 4096, 1 << 20] {
            let d = hash(&data[..len]);
            assert_eq!(d.as_bytes().len(), 32);
            assert_eq!(d, hash(&data[..len]));
        }
    }
}
