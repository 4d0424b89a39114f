use std::collections::BTreeMap;

use num_bigint::BigUint;

use super::rsa::{parse_key_values, PublicKey, RsaKeyPair};
use crate::encoding::Canonical;
use crate::error::{Error, Result};

/// CA-signed binding of a principal name to a public key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub subject_id: String,
    pub subject_public_key: PublicKey,
    pub issuer_id: String,
    pub signature: BigUint,
}

impl Certificate {
    /// Bytes covered by the issuer's signature.
    pub fn signed_bytes(&self) -> Vec<u8> {
        tbs_bytes(&self.subject_id, &self.subject_public_key, &self.issuer_id)
    }

    pub fn verify(&self, ca_public: &PublicKey) -> bool {
        ca_public.verify(&self.signed_bytes(), &self.signature)
    }

    pub fn to_cert_file(&self) -> String {
        format!(
            "# certificate\nsubject={}\nissuer={}\nn={}\ne={}\nsignature={}\n",
            self.subject_id,
            self.issuer_id,
            self.subject_public_key.n,
            self.subject_public_key.e,
            hex::encode(self.signature.to_bytes_be())
        )
    }

    pub fn from_cert_file(text: &str) -> Result<Self> {
        let fields: BTreeMap<String, (usize, String)> = parse_key_values(text)?
            .into_iter()
            .map(|(line, (k, v))| (k, (line, v)))
            .collect();
        let get = |k: &str| {
            fields.get(k).cloned().ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("missing field `{k}`"),
            })
        };
        let num = |k: &str| -> Result<BigUint> {
            let (line, v) = get(k)?;
            v.parse().map_err(|_| Error::Parse {
                line,
                message: format!("`{k}` is not a decimal integer"),
            })
        };
        let (sig_line, sig_hex) = get("signature")?;
        let sig = hex::decode(&sig_hex).map_err(|_| Error::Parse {
            line: sig_line,
            message: "signature is not base16".into(),
        })?;
        Ok(Self {
            subject_id: get("subject")?.1,
            issuer_id: get("issuer")?.1,
            subject_public_key: PublicKey::new(num("n")?, num("e")?),
            signature: BigUint::from_bytes_be(&sig),
        })
    }
}

fn tbs_bytes(subject: &str, key: &PublicKey, issuer: &str) -> Vec<u8> {
    Canonical::new()
        .str("certificate")
        .str(subject)
        .field(key.to_canonical())
        .str(issuer)
        .finish()
}

/// Single-level certificate authority.
#[derive(Debug, Clone)]
pub struct CertificateAuthority {
    pub id: String,
    keys: RsaKeyPair,
}

impl CertificateAuthority {
    pub fn new(id: impl Into<String>, keys: RsaKeyPair) -> Self {
        Self { id: id.into(), keys }
    }

    pub fn public(&self) -> PublicKey {
        self.keys.public()
    }

    pub fn issue(&self, subject_id: &str, subject_public_key: &PublicKey) -> Certificate {
        let signature = self.keys.sign(&tbs_bytes(subject_id, subject_public_key, &self.id));
        Certificate {
            subject_id: subject_id.to_string(),
            subject_public_key: subject_public_key.clone(),
            issuer_id: self.id.clone(),
            signature,
        }
    }
}

/// Public directory from which certificates are retrieved by subject id.
#[derive(Debug, Clone, Default)]
pub struct CertificateDirectory {
    certs: BTreeMap<String, Certificate>,
}

impl CertificateDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&mut self, cert: Certificate) {
        self.certs.insert(cert.subject_id.clone(), cert);
    }

    pub fn lookup(&self, subject_id: &str) -> Option<&Certificate> {
        self.certs.get(subject_id)
    }

    /// Looks up a certificate and returns its key only if it verifies under `ca_public`.
    pub fn verified_key(&self, subject_id: &str, ca_public: &PublicKey) -> Option<&PublicKey> {
        self.lookup(subject_id)
            .filter(|c| c.verify(ca_public))
            .map(|c| &c.subject_public_key)
    }

    pub fn len(&self) -> usize {
        self.certs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.certs.is_empty()
    }
}
