use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce};

use crate::error::{Error, Result};

pub const SYM_KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

fn cipher(key: &[u8], nonce: &[u8]) -> Result<Aes256Gcm> {
    if key.len() != SYM_KEY_LEN {
        return Err(Error::invalid(format!(
            "symmetric key must be {SYM_KEY_LEN} bytes, got {}",
            key.len()
        )));
    }
    if nonce.len() != NONCE_LEN {
        return Err(Error::invalid(format!(
            "nonce must be {NONCE_LEN} bytes, got {}",
            nonce.len()
        )));
    }
    Ok(Aes256Gcm::new_from_slice(key).expect("length checked"))
}

/// AES-256-GCM encryption. Output is ciphertext followed by the 16-byte tag.
pub fn sym_encrypt(key: &[u8], nonce: &[u8], plaintext: &[u8]) -> Result<Vec<u8>> {
    cipher(key, nonce)?
        .encrypt(Nonce::from_slice(nonce), plaintext)
        .map_err(|_| Error::Internal("aead encryption failed".into()))
}

pub fn sym_decrypt(key: &[u8], nonce: &[u8], ciphertext: &[u8]) -> Result<Vec<u8>> {
    cipher(key, nonce)?
        .decrypt(Nonce::from_slice(nonce), ciphertext)
        .map_err(|_| Error::Integrity)
}
