//! Constant-rate mix traffic on the simulator.
//!
//! Senders emit exactly `rate` blocks per active tick, topping up with
//! dummies. Every mix forwards whole batches. The last mix also sends each
//! receiver the same number of blocks per batch, padding with dummies
//! addressed to that receiver, so no link's volume depends on who talks to
//! whom.

use std::collections::{BTreeMap, VecDeque};

use super::{build_dummy, build_onion, peel, Hop, Layer, MixNode, MixOutput, OnionPacket};
use crate::crypto::{derive_seed, hash, RsaKeyPair};
use crate::error::{Error, Result};
use crate::simnet::{Ctx, Handler, Message, MessageRef, Role, Scenario, Transcript, World};

pub const BLOCK_LABEL: &str = "mix-block";

pub struct MixSender {
    path: Vec<Hop>,
    rate: usize,
    ticks: u64,
    queue: VecDeque<(Hop, Vec<u8>)>,
}

impl MixSender {
    pub fn new(path: Vec<Hop>, rate: usize, ticks: u64) -> Result<Self> {
        if path.is_empty() {
            return Err(Error::invalid("constant-rate traffic needs at least one mix"));
        }
        if rate == 0 {
            return Err(Error::invalid("rate must be at least 1"));
        }
        Ok(Self {
            path,
            rate,
            ticks,
            queue: VecDeque::new(),
        })
    }
}

impl Handler for MixSender {
    fn on_trigger(&mut self, ctx: &mut Ctx<'_>, to: &str, message: &MessageRef) -> Result<()> {
        if message.name != "send" {
            return Err(Error::invalid(format!("mix sender cannot `{message}`")));
        }
        let public = ctx.world().public_key(to)?.clone();
        let payload = message.arg.clone().unwrap_or_default().into_bytes();
        self.queue.push_back((Hop::new(to, public), payload));
        Ok(())
    }

    fn on_tick(&mut self, ctx: &mut Ctx<'_>) {
        if ctx.tick() >= self.ticks && self.queue.is_empty() {
            return;
        }
        let first = self.path[0].id.clone();
        for _ in 0..self.rate {
            let packet = match self.queue.pop_front() {
                Some((recipient, payload)) => match build_onion(&self.path, &recipient, &payload, ctx.rng()) {
                    Ok(p) => p,
                    Err(e) => {
                        let id = ctx.id().to_string();
                        ctx.record(format!("mix actor={id} outcome=reject reason={}", error_token(&e)));
                        build_dummy(&self.path, ctx.rng()).expect("path checked at construction")
                    }
                },
                None => build_dummy(&self.path, ctx.rng()).expect("path checked at construction"),
            };
            ctx.send(first.clone(), Message::new(BLOCK_LABEL, packet.into_bytes()));
        }
    }

    fn on_message(&mut self, _ctx: &mut Ctx<'_>, _from: &str, _message: &Message) {}

    fn is_idle(&self, tick: u64) -> bool {
        tick >= self.ticks && self.queue.is_empty()
    }
}

fn error_token(e: &Error) -> &'static str {
    match e {
        Error::PayloadTooLarge { .. } => "payload-too-large",
        Error::InvalidParameter(_) => "invalid-parameter",
        _ => "error",
    }
}

/// Last-hop padding: every receiver gets `quota` blocks per non-empty batch.
#[derive(Debug, Clone)]
pub struct Egress {
    pub receivers: Vec<Hop>,
    pub quota: usize,
}

pub struct MixActor {
    node: MixNode,
    egress: Option<Egress>,
}

impl MixActor {
    pub fn new(node: MixNode, egress: Option<Egress>) -> Self {
        Self { node, egress }
    }
}

impl Handler for MixActor {
    fn on_message(&mut self, ctx: &mut Ctx<'_>, from: &str, message: &Message) {
        match OnionPacket::from_bytes(message.body.clone()) {
            Ok(p) => self.node.submit(p),
            Err(_) => {
                self.node.metrics.decrypt_failures += 1;
                let id = ctx.id().to_string();
                ctx.record(format!("mix node={id} drop=malformed from={from}"));
            }
        }
    }

    fn on_flush(&mut self, ctx: &mut Ctx<'_>) {
        if self.node.pending() == 0 {
            return;
        }
        let before = self.node.metrics;
        let outputs = self.node.flush();
        let id = self.node.id.clone();
        if !self.node.honest {
            if let Some(batch) = self.node.mapping_log().last() {
                for (i, o) in batch {
                    ctx.record(format!("adversary mix={id} in={} out={}", i.short_hex(), o.short_hex()));
                }
            }
        }
        let dups = self.node.metrics.duplicates - before.duplicates;
        if dups > 0 {
            ctx.record(format!("mix node={id} duplicates={dups}"));
        }
        let mut sends: Vec<(String, OnionPacket)> = Vec::new();
        for out in outputs {
            match out {
                MixOutput::Forward { next, packet } => sends.push((next, packet)),
                MixOutput::Deliver { recipient, payload } => ctx.record(format!(
                    "deliver to={recipient} payload_digest={}",
                    hash(&payload).to_hex()
                )),
                _ => {}
            }
        }
        if let Some(egress) = &self.egress {
            let mut per: BTreeMap<&str, usize> = BTreeMap::new();
            for (next, _) in &sends {
                *per.entry(next.as_str()).or_insert(0) += 1;
            }
            let mut padding = Vec::new();
            for r in &egress.receivers {
                let have = per.get(r.id.as_str()).copied().unwrap_or(0);
                for _ in have..egress.quota {
                    let d = build_dummy(std::slice::from_ref(r), ctx.rng()).expect("one-hop dummy");
                    padding.push((r.id.clone(), d));
                }
            }
            sends.extend(padding);
        }
        sends.sort_by(|a, b| a.1.cmp(&b.1));
        for (next, packet) in sends {
            ctx.send(next, Message::new(BLOCK_LABEL, packet.into_bytes()));
        }
    }

    fn finish(&mut self, ctx: &mut Ctx<'_>) {
        let m = self.node.metrics;
        ctx.record(format!(
            "mix node={} processed={} forwarded={} dummies={} decrypt_failures={} duplicates={}",
            self.node.id, m.processed, m.forwarded, m.dummies, m.decrypt_failures, m.duplicates
        ));
    }
}

pub struct MixReceiver {
    keys: RsaKeyPair,
}

impl MixReceiver {
    pub fn new(keys: RsaKeyPair) -> Self {
        Self { keys }
    }
}

impl Handler for MixReceiver {
    fn on_message(&mut self, ctx: &mut Ctx<'_>, _from: &str, message: &Message) {
        let id = ctx.id().to_string();
        match peel(&self.keys, &message.body) {
            Ok(Layer::Deliver { recipient, payload }) if recipient == id => {
                ctx.record(format!("deliver to={id} payload_digest={}", hash(&payload).to_hex()))
            }
            Ok(Layer::Dummy) => {}
            _ => ctx.record(format!("mix actor={id} drop=undecryptable")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RealMessage {
    pub tick: u64,
    pub sender: usize,
    pub receiver: usize,
    pub payload: String,
}

#[derive(Debug, Clone)]
pub struct TrafficConfig {
    pub senders: usize,
    pub receivers: usize,
    pub mixes: usize,
    pub ticks: u64,
    pub rate: usize,
    pub seed: u64,
    pub key_bits: usize,
    pub messages: Vec<RealMessage>,
    /// Indexes of mixes that log their input→output mapping.
    pub corrupt: Vec<usize>,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            senders: 2,
            receivers: 2,
            mixes: 3,
            ticks: 10,
            rate: 2,
            seed: 0,
            key_bits: 512,
            messages: Vec::new(),
            corrupt: Vec::new(),
        }
    }
}

pub fn sender_id(i: usize) -> String {
    format!("S{i}")
}

pub fn mix_id(i: usize) -> String {
    format!("M{i}")
}

pub fn receiver_id(i: usize) -> String {
    format!("R{i}")
}

/// Builds the chain scenario: senders → M0 → … → M(k-1) → receivers.
pub fn traffic_scenario(config: &TrafficConfig) -> Result<Scenario> {
    if config.rate == 0 {
        return Err(Error::invalid("rate must be at least 1"));
    }
    if config.senders == 0 || config.receivers == 0 || config.mixes == 0 {
        return Err(Error::invalid("traffic needs at least one sender, mix, and receiver"));
    }
    let key = |id: &str| RsaKeyPair::generate(config.key_bits, derive_seed(config.seed, &format!("key/{id}")));
    let mixes: Vec<(String, RsaKeyPair)> = (0..config.mixes)
        .map(|i| Ok((mix_id(i), key(&mix_id(i))?)))
        .collect::<Result<_>>()?;
    let receivers: Vec<(String, RsaKeyPair)> = (0..config.receivers)
        .map(|i| Ok((receiver_id(i), key(&receiver_id(i))?)))
        .collect::<Result<_>>()?;

    let mut world = World::default();
    for (id, k) in mixes.iter().chain(&receivers) {
        world.public_keys.insert(id.clone(), k.public());
    }
    let path: Vec<Hop> = mixes.iter().map(|(id, k)| Hop::new(id.clone(), k.public())).collect();
    let receiver_hops: Vec<Hop> = receivers
        .iter()
        .map(|(id, k)| Hop::new(id.clone(), k.public()))
        .collect();

    let mut scenario = Scenario::new(config.seed, world);
    for i in 0..config.senders {
        let h = MixSender::new(path.clone(), config.rate, config.ticks)?;
        scenario.add_actor(sender_id(i), Role::Customer, Box::new(h));
    }
    let last = config.mixes - 1;
    for (i, (id, k)) in mixes.into_iter().enumerate() {
        let mut node = MixNode::new(id.clone(), k);
        if config.corrupt.contains(&i) {
            node = node.corrupt();
        }
        let egress = (i == last).then(|| Egress {
            receivers: receiver_hops.clone(),
            quota: config.rate * config.senders,
        });
        scenario.add_actor(id, Role::Mix, Box::new(MixActor::new(node, egress)));
    }
    for (id, k) in receivers {
        scenario.add_actor(id, Role::Merchant, Box::new(MixReceiver::new(k)));
    }
    for m in &config.messages {
        if m.sender >= config.senders || m.receiver >= config.receivers {
            return Err(Error::invalid("real message names an unknown sender or receiver"));
        }
        scenario.schedule(
            m.tick,
            &sender_id(m.sender),
            &receiver_id(m.receiver),
            &format!("send:{}", m.payload),
        );
    }
    Ok(scenario)
}

pub fn run_traffic_schedule(config: &TrafficConfig) -> Result<Transcript> {
    crate::simnet::run(traffic_scenario(config)?)
}
