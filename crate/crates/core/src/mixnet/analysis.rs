use std::collections::BTreeSet;

use crate::crypto::DigestValue;

/// What an adversary knows about one hop of a chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HopView {
    /// The node's own input→output log.
    Corrupt(Vec<(DigestValue, DigestValue)>),
    /// Only the batch as seen on the wire.
    Honest {
        inputs: Vec<DigestValue>,
        outputs: Vec<DigestValue>,
    },
}

/// First-hop inputs that could have produced `delivered`, walking the chain
/// backwards. An honest hop widens the set to its whole batch.
pub fn trace_candidates(chain: &[HopView], delivered: DigestValue) -> BTreeSet<DigestValue> {
    let mut set = BTreeSet::from([delivered]);
    for hop in chain.iter().rev() {
        set = match hop {
            HopView::Corrupt(mapping) => mapping
                .iter()
                .filter(|(_, out)| set.contains(out))
                .map(|(input, _)| *input)
                .collect(),
            HopView::Honest { inputs, outputs } => {
                if outputs.iter().any(|o| set.contains(o)) {
                    inputs.iter().copied().collect()
                } else {
                    BTreeSet::new()
                }
            }
        };
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{rng_from_seed, RsaKeyPair};
    use crate::mixnet::{build_onion, Hop, MixNode, MixOutput, OnionPacket};

    fn d(b: u8) -> DigestValue {
        DigestValue::from_bytes([b; 32])
    }

    #[test]
    fn corrupt_chain_links_exactly() {
        let chain = [
            HopView::Corrupt(vec![(d(1), d(11)), (d(2), d(12))]),
            HopView::Corrupt(vec![(d(11), d(21)), (d(12), d(22))]),
        ];
        assert_eq!(trace_candidates(&chain, d(22)), BTreeSet::from([d(2)]));
    }

    fn forward_batch(node: &mut MixNode, inputs: &[OnionPacket]) -> Vec<OnionPacket> {
        for p in inputs {
            node.submit(p.clone());
        }
        node.flush()
            .into_iter()
            .map(|o| match o {
                MixOutput::Forward { packet, .. } => packet,
                other => panic!("{other:?}"),
            })
            .collect()
    }

    #[test]
    fn one_honest_node_hides_every_sender() {
        for honest_pos in 0..3 {
            let mut chain: Vec<MixNode> = (0..3)
                .map(|i| {
                    let n = MixNode::new(
                        format!("M{}", i + 1),
                        RsaKeyPair::generate(512, 300 + i as u64).unwrap(),
                    );
                    if i == honest_pos {
                        n
                    } else {
                        n.corrupt()
                    }
                })
                .collect();
            let y = RsaKeyPair::generate(512, 399).unwrap();
            let path: Vec<Hop> = chain.iter().map(MixNode::hop).collect();
            let mut rng = rng_from_seed(honest_pos as u64);
            let senders = 5;
            let first: Vec<OnionPacket> = (0..senders)
                .map(|i| build_onion(&path, &Hop::new("Y", y.public()), &[i as u8; 8], &mut rng).unwrap())
                .collect();

            let mut views = Vec::new();
            let mut wire = first.clone();
            for node in chain.iter_mut() {
                let out = forward_batch(node, &wire);
                views.push(if node.honest {
                    HopView::Honest {
                        inputs: wire.iter().map(OnionPacket::digest).collect(),
                        outputs: out.iter().map(OnionPacket::digest).collect(),
                    }
                } else {
                    HopView::Corrupt(node.mapping_log()[0].clone())
                });
                wire = out;
            }
            for delivered in &wire {
                let c = trace_candidates(&views, delivered.digest());
                assert_eq!(c.len(), senders, "honest node at {honest_pos}");
                assert!(c.iter().all(|x| first.iter().any(|p| &p.digest() == x)));
            }
        }
    }
}
