//! Untraceable return addresses.
//!
//! A reply block is a header region of [`REPLY_HEADER_SIZE`] bytes followed
//! by the body. The header nests `E_2(M1, k_2, E_1(A, k_1, E_A(reply id)))`.
//! Each mix strips one header layer and XORs the body with a keystream from
//! its hop key, so the body changes appearance at every hop. The sender of
//! the address keeps all hop keys and strips the keystreams on arrival.
//!
//! A return address is meant to be used once: reusing it produces the same
//! header bytes on every hop.

use rand::Rng;

use super::{layer_plaintext, pad_random, peel, Hop, Layer, OnionPacket, Tag, BLOCK_SIZE, MAX_PATH_LEN};
use crate::crypto::{mgf1, pk_encrypt, sym_decrypt, sym_encrypt, RsaKeyPair, NONCE_LEN, SYM_KEY_LEN, TAG_LEN};
use crate::encoding::Canonical;
use crate::error::{Error, Result};

pub const REPLY_HEADER_SIZE: usize = 1536;
pub const REPLY_BODY_SIZE: usize = BLOCK_SIZE - REPLY_HEADER_SIZE;
/// Largest reply payload: body minus AEAD tag and the 2-byte length prefix.
pub const MAX_REPLY_LEN: usize = REPLY_BODY_SIZE - TAG_LEN - 2;

const REPLY_ID_LEN: usize = 16;

/// What the recipient of a message needs to answer it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReturnAddress {
    pub first_hop: String,
    /// Layered header, already padded to [`REPLY_HEADER_SIZE`].
    pub opaque: Vec<u8>,
    /// Key the replier encrypts the body under.
    pub body_key: [u8; SYM_KEY_LEN],
}

/// What the address's creator keeps to read replies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplyKeys {
    pub reply_id: [u8; REPLY_ID_LEN],
    /// Hop keys in the order the reply visits the mixes.
    pub hop_keys: Vec<[u8; 32]>,
    pub body_key: [u8; SYM_KEY_LEN],
}

pub(crate) fn apply_hop_stream(hop_key: &[u8; 32], body: &mut [u8]) {
    let stream = mgf1(
        &Canonical::new().str("paysec/reply-body").field(hop_key).finish(),
        body.len(),
    );
    for (b, s) in body.iter_mut().zip(stream) {
        *b ^= s;
    }
}

/// Builds a return address. `reverse_path` lists mixes in the order the
/// reply travels them; `sender` is the final destination.
pub fn build_return_address<R: Rng + ?Sized>(
    reverse_path: &[Hop],
    sender: &Hop,
    rng: &mut R,
) -> Result<(ReturnAddress, ReplyKeys)> {
    if reverse_path.is_empty() {
        return Err(Error::invalid("a return path needs at least one mix"));
    }
    if reverse_path.len() > MAX_PATH_LEN {
        return Err(Error::invalid(format!(
            "return path of {} mixes exceeds the maximum of {MAX_PATH_LEN}",
            reverse_path.len()
        )));
    }
    let mut reply_id = [0u8; REPLY_ID_LEN];
    rng.fill(&mut reply_id);
    let mut body_key = [0u8; SYM_KEY_LEN];
    rng.fill(&mut body_key);
    let hop_keys: Vec<[u8; 32]> = reverse_path
        .iter()
        .map(|_| {
            let mut k = [0u8; 32];
            rng.fill(&mut k);
            k
        })
        .collect();

    let mut header = pk_encrypt(
        &sender.public,
        &layer_plaintext(Tag::ReplyDeliver, &sender.id, &reply_id),
        rng,
    )?
    .to_bytes();
    for (i, hop) in reverse_path.iter().enumerate().rev() {
        let next = reverse_path.get(i + 1).unwrap_or(sender);
        let body = Canonical::new().field(hop_keys[i]).field(&header).finish();
        header = pk_encrypt(&hop.public, &layer_plaintext(Tag::ReplyForward, &next.id, &body), rng)?.to_bytes();
    }
    if header.len() > REPLY_HEADER_SIZE {
        return Err(Error::PayloadTooLarge {
            size: header.len(),
            capacity: REPLY_HEADER_SIZE,
        });
    }
    Ok((
        ReturnAddress {
            first_hop: reverse_path[0].id.clone(),
            opaque: pad_random(header, REPLY_HEADER_SIZE, rng),
            body_key,
        },
        ReplyKeys {
            reply_id,
            hop_keys,
            body_key,
        },
    ))
}

/// Builds the reply block; the caller sends it to `address.first_hop`.
pub fn send_reply(address: &ReturnAddress, payload: &[u8]) -> Result<OnionPacket> {
    if payload.len() > MAX_REPLY_LEN {
        return Err(Error::PayloadTooLarge {
            size: payload.len(),
            capacity: MAX_REPLY_LEN,
        });
    }
    let mut plain = (payload.len() as u16).to_be_bytes().to_vec();
    plain.extend_from_slice(payload);
    plain.resize(REPLY_BODY_SIZE - TAG_LEN, 0);
    // The body key is fresh per address, so a fixed nonce is never reused.
    let body = sym_encrypt(&address.body_key, &[0u8; NONCE_LEN], &plain)?;
    let mut block = address.opaque.clone();
    block.extend_from_slice(&body);
    OnionPacket::from_bytes(block)
}

/// Opens a reply that reached the address's creator.
pub fn open_reply(keys: &RsaKeyPair, reply_keys: &ReplyKeys, packet: &OnionPacket) -> Result<Vec<u8>> {
    match peel(keys, packet.as_bytes())? {
        Layer::ReplyDeliver { reply_id, .. } if reply_id == reply_keys.reply_id => {}
        Layer::ReplyDeliver { .. } => return Err(Error::Integrity),
        other => return Err(Error::state(format!("expected a reply, got {other:?}"))),
    }
    let mut body = packet.as_bytes()[REPLY_HEADER_SIZE..].to_vec();
    for k in &reply_keys.hop_keys {
        apply_hop_stream(k, &mut body);
    }
    let plain = sym_decrypt(&reply_keys.body_key, &[0u8; NONCE_LEN], &body)?;
    let len = u16::from_be_bytes([plain[0], plain[1]]) as usize;
    if 2 + len > plain.len() {
        return Err(Error::Integrity);
    }
    Ok(plain[2..2 + len].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::rng_from_seed;
    use crate::mixnet::{MixNode, MixOutput};

    fn setup(n: usize) -> (Vec<MixNode>, RsaKeyPair) {
        let ms = (0..n)
            .map(|i| MixNode::new(format!("M{}", i + 1), RsaKeyPair::generate(512, 70 + i as u64).unwrap()))
            .collect();
        (ms, RsaKeyPair::generate(512, 99).unwrap())
    }

    fn route(ms: &mut [MixNode], order: &[usize], mut packet: OnionPacket) -> (Vec<String>, OnionPacket) {
        let mut visited = Vec::new();
        for &i in order {
            visited.push(ms[i].id.clone());
            match ms[i].mix_process(&packet) {
                MixOutput::Forward { next, packet: p } => {
                    visited.push(next);
                    packet = p;
                }
                other => panic!("{other:?}"),
            }
        }
        (visited, packet)
    }

    #[test]
    fn one_mix_reply_reaches_sender() {
        let (mut ms, a) = setup(1);
        let mut rng = rng_from_seed(1);
        let (addr, rk) = build_return_address(&[ms[0].hop()], &Hop::new("A", a.public()), &mut rng).unwrap();
        assert_eq!(addr.first_hop, "M1");
        let reply = send_reply(&addr, b"thanks").unwrap();
        let (visited, at_a) = route(&mut ms, &[0], reply);
        assert_eq!(visited, ["M1", "A"]);
        assert_eq!(open_reply(&a, &rk, &at_a).unwrap(), b"thanks");
    }

    #[test]
    fn two_hop_reply_visits_in_order() {
        let (mut ms, a) = setup(2);
        let mut rng = rng_from_seed(2);
        let path = [ms[1].hop(), ms[0].hop()];
        let (addr, rk) = build_return_address(&path, &Hop::new("A", a.public()), &mut rng).unwrap();
        assert_eq!(addr.first_hop, "M2");
        let reply = send_reply(&addr, b"reply body").unwrap();
        let (visited, at_a) = route(&mut ms, &[1, 0], reply.clone());
        assert_eq!(visited, ["M2", "M1", "M1", "A"]);
        assert_ne!(
            at_a.as_bytes()[REPLY_HEADER_SIZE..],
            reply.as_bytes()[REPLY_HEADER_SIZE..]
        );
        assert_eq!(open_reply(&a, &rk, &at_a).unwrap(), b"reply body");
    }

    #[test]
    fn out_of_order_peel_fails() {
        let (mut ms, a) = setup(2);
        let mut rng = rng_from_seed(3);
        let path = [ms[1].hop(), ms[0].hop()];
        let (addr, _) = build_return_address(&path, &Hop::new("A", a.public()), &mut rng).unwrap();
        let reply = send_reply(&addr, b"x").unwrap();
        assert_eq!(ms[0].mix_process(&reply), MixOutput::Dropped);
    }

    #[test]
    fn max_length_reply_round_trips() {
        let (mut ms, a) = setup(4);
        let mut rng = rng_from_seed(4);
        let path: Vec<Hop> = ms.iter().map(MixNode::hop).collect();
        let (addr, rk) = build_return_address(&path, &Hop::new("A", a.public()), &mut rng).unwrap();
        let payload: Vec<u8> = (0..MAX_REPLY_LEN).map(|i| i as u8).collect();
        let (_, at_a) = route(&mut ms, &[0, 1, 2, 3], send_reply(&addr, &payload).unwrap());
        assert_eq!(open_reply(&a, &rk, &at_a).unwrap(), payload);
        assert!(send_reply(&addr, &vec![0; MAX_REPLY_LEN + 1]).is_err());
    }

    #[test]
    fn empty_return_path_rejected() {
        let a = RsaKeyPair::generate(512, 5).unwrap();
        let mut rng = rng_from_seed(5);
        assert!(build_return_address(&[], &Hop::new("A", a.public()), &mut rng).is_err());
    }
}
