//! Chaum mixes over fixed-size blocks.
//!
//! Every layer of an onion is a hybrid envelope whose plaintext is
//! `canonical(tag, id, body)`:
//!
//! | tag  | meaning        | id          | body                                  |
//! |------|----------------|-------------|---------------------------------------|
//! | 0x00 | dummy          | `sink`      | filler                                |
//! | 0x01 | deliver        | recipient   | payload                               |
//! | 0x02 | forward        | next hop    | inner envelope                        |
//! | 0x03 | reply forward  | next hop    | `canonical(hop_key, inner header)`    |
//! | 0x04 | reply deliver  | sender      | reply id                              |
//!
//! After peeling, the inner envelope is padded back to [`BLOCK_SIZE`] so every
//! hop sees blocks of one length. With 512-bit mix keys one layer costs about
//! 100 bytes; with 2048-bit keys about 300, which is what caps
//! [`MAX_PATH_LEN`] at 4.

mod analysis;
mod matrix;
mod reply;
pub mod traffic;

pub use analysis::{trace_candidates, HopView};
pub use matrix::MixMatrix;
pub use reply::{
    build_return_address, open_reply, send_reply, ReplyKeys, ReturnAddress, MAX_REPLY_LEN, REPLY_BODY_SIZE,
    REPLY_HEADER_SIZE,
};

use std::collections::HashSet;

use rand::Rng;

use crate::crypto::{envelope_len, hash, mgf1, pk_decrypt_prefix, pk_encrypt, DigestValue, PublicKey, RsaKeyPair};
use crate::encoding::{Canonical, FieldReader};
use crate::error::{Error, Result};

pub const BLOCK_SIZE: usize = 2048;
pub const MAX_PATH_LEN: usize = 4;
/// Destination id carried by dummy layers.
pub const SINK_ID: &str = "sink";

const DUMMY_FILLER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub(crate) enum Tag {
    Dummy = 0x00,
    Deliver = 0x01,
    Forward = 0x02,
    ReplyForward = 0x03,
    ReplyDeliver = 0x04,
}

impl Tag {
    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0x00 => Tag::Dummy,
            0x01 => Tag::Deliver,
            0x02 => Tag::Forward,
            0x03 => Tag::ReplyForward,
            0x04 => Tag::ReplyDeliver,
            _ => return None,
        })
    }
}

/// A mix or recipient as seen by a sender.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hop {
    pub id: String,
    pub public: PublicKey,
}

impl Hop {
    pub fn new(id: impl Into<String>, public: PublicKey) -> Self {
        Self { id: id.into(), public }
    }
}

/// One wire block. Always exactly [`BLOCK_SIZE`] bytes.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OnionPacket {
    block: Vec<u8>,
}

impl OnionPacket {
    pub fn from_bytes(block: Vec<u8>) -> Result<Self> {
        if block.len() != BLOCK_SIZE {
            return Err(Error::malformed(format!(
                "wire block is {} bytes, expected {BLOCK_SIZE}",
                block.len()
            )));
        }
        Ok(Self { block })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.block
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.block
    }

    pub fn digest(&self) -> DigestValue {
        hash(&self.block)
    }
}

impl std::fmt::Debug for OnionPacket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "OnionPacket({})", self.digest().short_hex())
    }
}

pub(crate) fn layer_plaintext(tag: Tag, id: &str, body: &[u8]) -> Vec<u8> {
    Canonical::new().field([tag as u8]).str(id).field(body).finish()
}

fn layer_plaintext_len(id: &str, body_len: usize) -> usize {
    4 + 1 + 4 + id.len() + 4 + body_len
}

/// Wire length of an onion (before block padding) for a payload of `payload_len` bytes.
fn onion_len(path: &[Hop], recipient: &Hop, payload_len: usize) -> usize {
    let mut len = envelope_len(&recipient.public, layer_plaintext_len(&recipient.id, payload_len));
    for (i, hop) in path.iter().enumerate().rev() {
        let next = path.get(i + 1).unwrap_or(recipient);
        len = envelope_len(&hop.public, layer_plaintext_len(&next.id, len));
    }
    len
}

/// Largest payload that fits through `path` to `recipient` in one block.
pub fn onion_capacity(path: &[Hop], recipient: &Hop) -> usize {
    if onion_len(path, recipient, 0) > BLOCK_SIZE {
        return 0;
    }
    let (mut lo, mut hi) = (0usize, BLOCK_SIZE);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if onion_len(path, recipient, mid) <= BLOCK_SIZE {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

fn pad_random<R: Rng + ?Sized>(mut bytes: Vec<u8>, size: usize, rng: &mut R) -> Vec<u8> {
    let start = bytes.len();
    bytes.resize(size, 0);
    rng.fill(&mut bytes[start..]);
    bytes
}

fn check_path(path: &[Hop]) -> Result<()> {
    if path.len() > MAX_PATH_LEN {
        return Err(Error::invalid(format!(
            "path of {} mixes exceeds the maximum of {MAX_PATH_LEN}",
            path.len()
        )));
    }
    Ok(())
}

/// Builds `E_1(hop_2, E_2(... E_Y(Y, payload)))` and pads it to one block.
pub fn build_onion<R: Rng + ?Sized>(path: &[Hop], recipient: &Hop, payload: &[u8], rng: &mut R) -> Result<OnionPacket> {
    check_path(path)?;
    let capacity = onion_capacity(path, recipient);
    if payload.len() > capacity {
        return Err(Error::PayloadTooLarge {
            size: payload.len(),
            capacity,
        });
    }
    let mut inner = pk_encrypt(
        &recipient.public,
        &layer_plaintext(Tag::Deliver, &recipient.id, payload),
        rng,
    )?
    .to_bytes();
    for (i, hop) in path.iter().enumerate().rev() {
        let next = path.get(i + 1).unwrap_or(recipient);
        inner = pk_encrypt(&hop.public, &layer_plaintext(Tag::Forward, &next.id, &inner), rng)?.to_bytes();
    }
    OnionPacket::from_bytes(pad_random(inner, BLOCK_SIZE, rng))
}

/// Builds a dummy that travels `path` and is discarded by its last hop.
pub fn build_dummy<R: Rng + ?Sized>(path: &[Hop], rng: &mut R) -> Result<OnionPacket> {
    check_path(path)?;
    let (last, rest) = path
        .split_last()
        .ok_or_else(|| Error::invalid("a dummy needs at least one hop"))?;
    let mut filler = [0u8; DUMMY_FILLER_LEN];
    rng.fill(&mut filler);
    let mut inner = pk_encrypt(&last.public, &layer_plaintext(Tag::Dummy, SINK_ID, &filler), rng)?.to_bytes();
    for (i, hop) in rest.iter().enumerate().rev() {
        let next = &path[i + 1];
        inner = pk_encrypt(&hop.public, &layer_plaintext(Tag::Forward, &next.id, &inner), rng)?.to_bytes();
    }
    OnionPacket::from_bytes(pad_random(inner, BLOCK_SIZE, rng))
}

/// Result of removing one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Dummy,
    Deliver {
        recipient: String,
        payload: Vec<u8>,
    },
    Forward {
        next: String,
        inner: Vec<u8>,
    },
    ReplyForward {
        next: String,
        hop_key: [u8; 32],
        inner_header: Vec<u8>,
    },
    ReplyDeliver {
        sender: String,
        reply_id: [u8; 16],
    },
}

/// Decrypts the envelope at the start of `bytes`.
pub fn peel(keys: &RsaKeyPair, bytes: &[u8]) -> Result<Layer> {
    let (plaintext, _) = pk_decrypt_prefix(keys, bytes)?;
    let mut r = FieldReader::new(&plaintext);
    let [tag] = r.array::<1>()?;
    let id = r.string()?;
    let body = r.field()?;
    r.finish()?;
    let tag = Tag::from_byte(tag).ok_or_else(|| Error::malformed(format!("unknown layer tag {tag:#04x}")))?;
    Ok(match tag {
        Tag::Dummy => Layer::Dummy,
        Tag::Deliver => Layer::Deliver {
            recipient: id,
            payload: body.to_vec(),
        },
        Tag::Forward => Layer::Forward {
            next: id,
            inner: body.to_vec(),
        },
        Tag::ReplyForward => {
            let mut b = FieldReader::new(body);
            let hop_key = b.array::<32>()?;
            let inner_header = b.field()?.to_vec();
            b.finish()?;
            Layer::ReplyForward {
                next: id,
                hop_key,
                inner_header,
            }
        }
        Tag::ReplyDeliver => Layer::ReplyDeliver {
            sender: id,
            reply_id: body
                .try_into()
                .map_err(|_| Error::malformed("reply id must be 16 bytes"))?,
        },
    })
}

/// Peels every layer of `packet` with the given keys in order, returning the payload.
pub fn peel_all(keys: &[&RsaKeyPair], packet: &OnionPacket) -> Result<Vec<u8>> {
    let mut bytes = packet.as_bytes().to_vec();
    for k in keys {
        match peel(k, &bytes)? {
            Layer::Forward { inner, .. } => bytes = inner,
            Layer::Deliver { payload, .. } => return Ok(payload),
            other => return Err(Error::state(format!("unexpected layer {other:?}"))),
        }
    }
    Err(Error::state("ran out of keys before the deliver layer"))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MixMetrics {
    pub processed: u64,
    pub forwarded: u64,
    pub delivered: u64,
    pub dummies: u64,
    pub decrypt_failures: u64,
    pub duplicates: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MixOutput {
    Forward { next: String, packet: OnionPacket },
    Deliver { recipient: String, payload: Vec<u8> },
    DropDummy,
    Dropped,
    Duplicate,
}

pub struct MixNode {
    pub id: String,
    pub keypair: RsaKeyPair,
    /// Corrupt nodes keep an input→output log that the adversary can read.
    pub honest: bool,
    pub metrics: MixMetrics,
    batch: Vec<OnionPacket>,
    seen: HashSet<DigestValue>,
    mapping_log: Vec<Vec<(DigestValue, DigestValue)>>,
    pad_key: DigestValue,
}

impl std::fmt::Debug for MixNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MixNode")
            .field("id", &self.id)
            .field("honest", &self.honest)
            .field("metrics", &self.metrics)
            .field("pending", &self.batch.len())
            .finish_non_exhaustive()
    }
}

impl MixNode {
    pub fn new(id: impl Into<String>, keypair: RsaKeyPair) -> Self {
        let pad_key = hash(
            &Canonical::new()
                .str("paysec/mix-pad")
                .field(keypair.d.to_bytes_be())
                .finish(),
        );
        Self {
            id: id.into(),
            keypair,
            honest: true,
            metrics: MixMetrics::default(),
            batch: Vec::new(),
            seen: HashSet::new(),
            mapping_log: Vec::new(),
            pad_key,
        }
    }

    pub fn corrupt(mut self) -> Self {
        self.honest = false;
        self
    }

    pub fn hop(&self) -> Hop {
        Hop::new(self.id.clone(), self.keypair.public())
    }

    /// Input→output digest pairs per flushed batch; empty for honest nodes.
    pub fn mapping_log(&self) -> &[Vec<(DigestValue, DigestValue)>] {
        &self.mapping_log
    }

    pub fn pending(&self) -> usize {
        self.batch.len()
    }

    /// Padding depends only on node secret and content, so output bytes do
    /// not depend on when or in what order a packet arrived.
    fn repad(&self, mut bytes: Vec<u8>, size: usize) -> Vec<u8> {
        if bytes.len() < size {
            let seed = Canonical::new().field(self.pad_key).field(&bytes).finish();
            let fill = mgf1(&seed, size - bytes.len());
            bytes.extend_from_slice(&fill);
        }
        bytes
    }

    /// Removes one layer from a single packet.
    pub fn mix_process(&mut self, packet: &OnionPacket) -> MixOutput {
        self.metrics.processed += 1;
        if !self.seen.insert(packet.digest()) {
            self.metrics.duplicates += 1;
            return MixOutput::Duplicate;
        }
        let layer = match peel(&self.keypair, packet.as_bytes()) {
            Ok(l) => l,
            Err(_) => {
                self.metrics.decrypt_failures += 1;
                return MixOutput::Dropped;
            }
        };
        match layer {
            Layer::Dummy => {
                self.metrics.dummies += 1;
                MixOutput::DropDummy
            }
            Layer::Deliver { recipient, payload } => {
                self.metrics.delivered += 1;
                MixOutput::Deliver { recipient, payload }
            }
            Layer::Forward { next, inner } => {
                self.metrics.forwarded += 1;
                let block = self.repad(inner, BLOCK_SIZE);
                MixOutput::Forward {
                    next,
                    packet: OnionPacket { block },
                }
            }
            Layer::ReplyForward {
                next,
                hop_key,
                inner_header,
            } => {
                if inner_header.len() > REPLY_HEADER_SIZE {
                    self.metrics.decrypt_failures += 1;
                    return MixOutput::Dropped;
                }
                self.metrics.forwarded += 1;
                let mut block = self.repad(inner_header, REPLY_HEADER_SIZE);
                let mut body = packet.as_bytes()[REPLY_HEADER_SIZE..].to_vec();
                reply::apply_hop_stream(&hop_key, &mut body);
                block.extend_from_slice(&body);
                MixOutput::Forward {
                    next,
                    packet: OnionPacket { block },
                }
            }
            Layer::ReplyDeliver { .. } => {
                self.metrics.decrypt_failures += 1;
                MixOutput::Dropped
            }
        }
    }

    pub fn submit(&mut self, packet: OnionPacket) {
        self.batch.push(packet);
    }

    /// Processes the pending batch. Forwarded packets come out sorted by
    /// their bytes; deliveries follow, sorted by recipient and payload.
    pub fn flush(&mut self) -> Vec<MixOutput> {
        let batch = std::mem::take(&mut self.batch);
        let mut forwards = Vec::new();
        let mut deliveries = Vec::new();
        let mut mapping = Vec::new();
        for packet in &batch {
            let out = self.mix_process(packet);
            match out {
                MixOutput::Forward {
                    packet: ref out_packet, ..
                } => {
                    if !self.honest {
                        mapping.push((packet.digest(), out_packet.digest()));
                    }
                    forwards.push(out);
                }
                MixOutput::Deliver { .. } => deliveries.push(out),
                _ => {}
            }
        }
        forwards.sort_by(|a, b| match (a, b) {
            (MixOutput::Forward { packet: pa, .. }, MixOutput::Forward { packet: pb, .. }) => pa.cmp(pb),
            _ => unreachable!(),
        });
        deliveries.sort_by(|a, b| format!("{a:?}").cmp(&format!("{b:?}")));
        if !self.honest {
            mapping.sort();
            self.mapping_log.push(mapping);
        }
        forwards.extend(deliveries);
        forwards
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::rng_from_seed;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use std::sync::OnceLock;

    fn keys() -> &'static [RsaKeyPair] {
        static KEYS: OnceLock<Vec<RsaKeyPair>> = OnceLock::new();
        KEYS.get_or_init(|| (0..6).map(|i| RsaKeyPair::generate(512, 900 + i).unwrap()).collect())
    }

    fn nodes(n: usize) -> Vec<MixNode> {
        (0..n)
            .map(|i| MixNode::new(format!("M{}", i + 1), keys()[i].clone()))
            .collect()
    }

    fn recipient() -> (Hop, &'static RsaKeyPair) {
        let k = &keys()[5];
        (Hop::new("Y", k.public()), k)
    }

    #[test]
    fn empty_path_is_peeled_by_recipient() {
        let (y, yk) = recipient();
        let mut rng = rng_from_seed(1);
        let p = build_onion(&[], &y, b"Message", &mut rng).unwrap();
        assert_eq!(p.as_bytes().len(), BLOCK_SIZE);
        assert_eq!(
            peel(yk, p.as_bytes()).unwrap(),
            Layer::Deliver {
                recipient: "Y".into(),
                payload: b"Message".to_vec()
            }
        );
    }

    #[test]
    fn first_peel_names_second_mix() {
        let ms = nodes(3);
        let (y, yk) = recipient();
        let path: Vec<Hop> = ms.iter().map(MixNode::hop).collect();
        let mut rng = rng_from_seed(2);
        let p = build_onion(&path, &y, b"hello", &mut rng).unwrap();
        match peel(&ms[0].keypair, p.as_bytes()).unwrap() {
            Layer::Forward { next, .. } => assert_eq!(next, "M2"),
            other => panic!("{other:?}"),
        }
        let ks: Vec<&RsaKeyPair> = ms.iter().map(|m| &m.keypair).chain([yk]).collect();
        assert_eq!(peel_all(&ks, &p).unwrap(), b"hello");
    }

    #[test]
    fn single_mix_output_names_only_recipient() {
        let mut m = nodes(1).pop().unwrap();
        let (y, yk) = recipient();
        let mut rng = rng_from_seed(3);
        let p = build_onion(&[m.hop()], &y, b"from A", &mut rng).unwrap();
        match m.mix_process(&p) {
            MixOutput::Forward { next, packet } => {
                assert_eq!(next, "Y");
                assert_eq!(packet.as_bytes().len(), BLOCK_SIZE);
                assert!(!packet.as_bytes().windows(6).any(|w| w == b"from A"));
                assert_eq!(
                    peel(yk, packet.as_bytes()).unwrap(),
                    Layer::Deliver {
                        recipient: "Y".into(),
                        payload: b"from A".to_vec()
                    }
                );
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dummy_is_dropped_silently() {
        let mut ms = nodes(2);
        let path: Vec<Hop> = ms.iter().map(MixNode::hop).collect();
        let mut rng = rng_from_seed(4);
        let d = build_dummy(&path, &mut rng).unwrap();
        assert_eq!(d.as_bytes().len(), BLOCK_SIZE);
        let MixOutput::Forward { packet, .. } = ms[0].mix_process(&d) else {
            panic!("first hop should forward");
        };
        assert_eq!(ms[1].mix_process(&packet), MixOutput::DropDummy);
        assert_eq!(ms[1].metrics.dummies, 1);
        ms[1].submit(build_dummy(&path[1..], &mut rng).unwrap());
        assert!(ms[1].flush().is_empty());
    }

    #[test]
    fn wrong_key_is_dropped_and_counted() {
        let mut ms = nodes(2);
        let (y, _) = recipient();
        let mut rng = rng_from_seed(5);
        let p = build_onion(&[ms[1].hop()], &y, b"x", &mut rng).unwrap();
        assert_eq!(ms[0].mix_process(&p), MixOutput::Dropped);
        assert_eq!(ms[0].metrics.decrypt_failures, 1);
    }

    #[test]
    fn duplicates_are_suppressed() {
        let mut m = nodes(1).pop().unwrap();
        let (y, _) = recipient();
        let mut rng = rng_from_seed(6);
        let p = build_onion(&[m.hop()], &y, b"x", &mut rng).unwrap();
        assert!(matches!(m.mix_process(&p), MixOutput::Forward { .. }));
        assert_eq!(m.mix_process(&p), MixOutput::Duplicate);
        assert_eq!(m.metrics.duplicates, 1);
    }

    #[test]
    fn oversize_payload_and_long_path_rejected() {
        let ms = nodes(5);
        let (y, _) = recipient();
        let path: Vec<Hop> = ms.iter().take(2).map(MixNode::hop).collect();
        let cap = onion_capacity(&path, &y);
        let mut rng = rng_from_seed(7);
        assert!(build_onion(&path, &y, &vec![7; cap], &mut rng).is_ok());
        assert!(matches!(
            build_onion(&path, &y, &vec![7; cap + 1], &mut rng),
            Err(Error::PayloadTooLarge { capacity, .. }) if capacity == cap
        ));
        let long: Vec<Hop> = ms.iter().map(MixNode::hop).collect();
        assert!(matches!(
            build_onion(&long, &y, b"x", &mut rng),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn capacity_at_max_path_with_large_keys() {
        let big: Vec<RsaKeyPair> = (0..5).map(|i| RsaKeyPair::generate(2048, 40 + i).unwrap()).collect();
        let path: Vec<Hop> = big[..4]
            .iter()
            .enumerate()
            .map(|(i, k)| Hop::new(format!("M{i}"), k.public()))
            .collect();
        let y = Hop::new("Y", big[4].public());
        let cap = onion_capacity(&path, &y);
        assert!(cap >= 256, "capacity {cap}");
        let mut rng = rng_from_seed(8);
        let p = build_onion(&path, &y, &vec![1; cap], &mut rng).unwrap();
        let ks: Vec<&RsaKeyPair> = big.iter().collect();
        assert_eq!(peel_all(&ks, &p).unwrap(), vec![1; cap]);
    }

    #[test]
    fn batch_order_independent_of_arrival() {
        let (y, _) = recipient();
        let base = nodes(1).pop().unwrap();
        let mut rng = rng_from_seed(9);
        let packets: Vec<OnionPacket> = (0..10)
            .map(|i| build_onion(&[base.hop()], &y, format!("m{i}").as_bytes(), &mut rng).unwrap())
            .collect();
        let run = |order: &[OnionPacket]| {
            let mut m = MixNode::new("M1", keys()[0].clone());
            for p in order {
                m.submit(p.clone());
            }
            m.flush()
        };
        let reference = run(&packets);
        let mut shuffled = packets.clone();
        for _ in 0..5 {
            shuffled.shuffle(&mut rng);
            assert_eq!(run(&shuffled), reference);
        }
    }

    #[test]
    fn corrupt_node_logs_mapping() {
        let (y, _) = recipient();
        let mut m = nodes(1).pop().unwrap().corrupt();
        let mut rng = rng_from_seed(10);
        let p = build_onion(&[m.hop()], &y, b"x", &mut rng).unwrap();
        m.submit(p.clone());
        let out = m.flush();
        let MixOutput::Forward { packet, .. } = &out[0] else {
            panic!()
        };
        assert_eq!(m.mapping_log(), &[vec![(p.digest(), packet.digest())]]);
        let mut honest = nodes(1).pop().unwrap();
        honest.submit(p);
        honest.flush();
        assert!(honest.mapping_log().is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn peel_round_trip(payload in proptest::collection::vec(any::<u8>(), 0..600), len in 0usize..=4, seed: u64) {
            let ms = nodes(len);
            let (y, yk) = recipient();
            let path: Vec<Hop> = ms.iter().map(MixNode::hop).collect();
            let mut rng = rng_from_seed(seed);
            let p = build_onion(&path, &y, &payload, &mut rng).unwrap();
            prop_assert_eq!(p.as_bytes().len(), BLOCK_SIZE);
            let ks: Vec<&RsaKeyPair> = ms.iter().map(|m| &m.keypair).chain([yk]).collect();
            prop_assert_eq!(peel_all(&ks, &p).unwrap(), payload);
        }
    }
}
