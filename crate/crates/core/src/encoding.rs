//! Canonical multi-field encoding.
//!
//! Every value that is hashed, signed, or put on the wire is a sequence of
//! fields, each preceded by its length as a 4-byte big-endian integer. The
//! encoding is injective, so two distinct field lists never collide.

use crate::error::{Error, Result};

/// Builder for a canonical record.
#[derive(Debug, Default, Clone)]
pub struct Canonical {
    buf: Vec<u8>,
}

impl Canonical {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn field(mut self, bytes: impl AsRef<[u8]>) -> Self {
        self.push(bytes.as_ref());
        self
    }

    pub fn str(self, s: &str) -> Self {
        self.field(s.as_bytes())
    }

    pub fn u64(self, v: u64) -> Self {
        self.field(v.to_be_bytes())
    }

    pub fn push(&mut self, bytes: &[u8]) {
        let len = u32::try_from(bytes.len()).expect("field longer than 4 GiB");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(bytes);
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Convenience for encoding a fixed list of fields.
pub fn encode_fields(fields: &[&[u8]]) -> Vec<u8> {
    let mut c = Canonical::new();
    for f in fields {
        c.push(f);
    }
    c.finish()
}

/// Sequential reader over a canonical record.
#[derive(Debug, Clone)]
pub struct FieldReader<'a> {
    rest: &'a [u8],
}

impl<'a> FieldReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { rest: bytes }
    }

    pub fn field(&mut self) -> Result<&'a [u8]> {
        if self.rest.len() < 4 {
            return Err(Error::malformed("truncated length prefix"));
        }
        let (len, tail) = self.rest.split_at(4);
        let len = u32::from_be_bytes(len.try_into().unwrap()) as usize;
        if tail.len() < len {
            return Err(Error::malformed("field runs past end of record"));
        }
        let (field, rest) = tail.split_at(len);
        self.rest = rest;
        Ok(field)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        self.field()?
            .try_into()
            .map_err(|_| Error::malformed(format!("expected {N}-byte field")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.array::<8>()?))
    }

    pub fn string(&mut self) -> Result<String> {
        String::from_utf8(self.field()?.to_vec()).map_err(|_| Error::malformed("non-utf8 string"))
    }

    pub fn remaining(&self) -> &'a [u8] {
        self.rest
    }

    /// Fails if any bytes are left over.
    pub fn finish(self) -> Result<()> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(Error::malformed("trailing bytes after record"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn concatenation_ambiguity_is_resolved() {
        let a = encode_fields(&[b"ab", b"c"]);
        let b = encode_fields(&[b"a", b"bc"]);
        assert_ne!(a, b);
        assert_eq!(a, [0, 0, 0, 2, b'a', b'b', 0, 0, 0, 1, b'c']);
    }

    #[test]
    fn truncated_record_is_malformed() {
        let mut r = FieldReader::new(&[0, 0, 0, 5, 1, 2]);
        assert!(matches!(r.field(), Err(Error::Malformed(_))));
        let r = FieldReader::new(&[0, 0, 0, 0, 9]);
        let mut r2 = r.clone();
        r2.field().unwrap();
        assert!(r2.finish().is_err());
    }

    proptest! {
        #[test]
        fn fields_round_trip(fields in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..40), 0..6)) {
            let refs: Vec<&[u8]> = fields.iter().map(|f| f.as_slice()).collect();
            let enc = encode_fields(&refs);
            let mut r = FieldReader::new(&enc);
            for f in &fields {
                prop_assert_eq!(r.field().unwrap(), f.as_slice());
            }
            prop_assert!(r.finish().is_ok());
        }
    }
}
