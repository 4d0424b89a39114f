use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use crate::crypto::{derive_seed, rng_from_seed, CertificateDirectory, PublicKey, SimRng};
use crate::error::{Error, Result};

use super::transcript::Transcript;

pub const DEFAULT_MAX_TICKS: u64 = 10_000;
/// Scenario clock origin, in seconds. Protocol DATE fields are `CLOCK_EPOCH + tick`.
pub const CLOCK_EPOCH: u64 = 1_700_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Customer,
    Merchant,
    Mix,
    Gateway,
    Acquirer,
    Provider,
    Adversary,
}

impl Role {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "customer" => Role::Customer,
            "merchant" => Role::Merchant,
            "mix" => Role::Mix,
            "gateway" => Role::Gateway,
            "acquirer" => Role::Acquirer,
            "provider" => Role::Provider,
            "adversary" => Role::Adversary,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Customer => "customer",
            Role::Merchant => "merchant",
            Role::Mix => "mix",
            Role::Gateway => "gateway",
            Role::Acquirer => "acquirer",
            Role::Provider => "provider",
            Role::Adversary => "adversary",
        }
    }
}

/// A labelled wire message. Taps only ever see and modify `body`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub label: String,
    pub body: Vec<u8>,
}

impl Message {
    pub fn new(label: impl Into<String>, body: Vec<u8>) -> Self {
        Self {
            label: label.into(),
            body,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Link {
    pub from: String,
    pub to: String,
}

impl Link {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (from, to) = s.split_once("->")?;
        Some(Self::new(from.trim(), to.trim()))
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

/// Read-only public state shared by all actors: keys and certificates.
#[derive(Debug, Clone, Default)]
pub struct World {
    pub ca_public: Option<PublicKey>,
    pub certificates: CertificateDirectory,
    pub public_keys: BTreeMap<String, PublicKey>,
}

impl World {
    pub fn public_key(&self, id: &str) -> Result<&PublicKey> {
        self.public_keys
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no public key for `{id}`")))
    }
}

/// Trigger named in a schedule line: `name` or `name:arg`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageRef {
    pub name: String,
    pub arg: Option<String>,
}

impl MessageRef {
    pub fn parse(s: &str) -> Self {
        match s.split_once(':') {
            Some((name, arg)) => Self {
                name: name.to_string(),
                arg: Some(arg.to_string()),
            },
            None => Self {
                name: s.to_string(),
                arg: None,
            },
        }
    }
}

impl fmt::Display for MessageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.arg {
            Some(a) => write!(f, "{}:{}", self.name, a),
            None => f.write_str(&self.name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleEntry {
    pub tick: u64,
    pub sender: String,
    pub receiver: String,
    pub message: MessageRef,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TapAction {
    /// Copy every message on the link into the adversary's capture log.
    Eavesdrop,
    /// Inject a byte-identical copy of the `index`-th message seen on the link.
    Replay { at_tick: u64, index: usize },
    /// XOR `mask` into byte `offset` (mod length) of the `index`-th message, or of every message.
    Tamper {
        index: Option<usize>,
        offset: usize,
        mask: u8,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tap {
    pub link: Link,
    pub action: TapAction,
}

/// Everything a handler may touch while processing one event.
pub struct Ctx<'a> {
    tick: u64,
    id: &'a str,
    rng: &'a mut SimRng,
    world: &'a World,
    outbox: &'a mut Vec<(String, Message)>,
    events: &'a mut Vec<String>,
}

impl<'a> Ctx<'a> {
    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Scenario clock in seconds.
    pub fn clock(&self) -> u64 {
        CLOCK_EPOCH + self.tick
    }

    pub fn id(&self) -> &str {
        self.id
    }

    pub fn rng(&mut self) -> &mut SimRng {
        self.rng
    }

    pub fn world(&self) -> &World {
        self.world
    }

    pub fn send(&mut self, to: impl Into<String>, message: Message) {
        self.outbox.push((to.into(), message));
    }

    /// Adds a protocol-level record to the transcript.
    pub fn record(&mut self, body: impl Into<String>) {
        self.events.push(body.into());
    }
}

/// A protocol state machine bound to one actor.
///
/// Handlers must be deterministic given their state, the message, and the
/// actor's seeded RNG.
pub trait Handler: Send {
    /// A schedule line told this actor to start something toward `to`.
    fn on_trigger(&mut self, _ctx: &mut Ctx<'_>, _to: &str, message: &MessageRef) -> Result<()> {
        Err(Error::invalid(format!("actor does not understand trigger `{message}`")))
    }

    /// Called once per tick before the inbox is drained.
    fn on_tick(&mut self, _ctx: &mut Ctx<'_>) {}

    fn on_message(&mut self, ctx: &mut Ctx<'_>, from: &str, message: &Message);

    /// Called once per tick after the inbox is drained.
    fn on_flush(&mut self, _ctx: &mut Ctx<'_>) {}

    /// Whether the actor would do nothing on its own at `tick`.
    fn is_idle(&self, _tick: u64) -> bool {
        true
    }

    /// Called after the last tick, e.g. to dump balances.
    fn finish(&mut self, _ctx: &mut Ctx<'_>) {}
}

pub struct Actor {
    pub id: String,
    pub role: Role,
    pub handler: Box<dyn Handler>,
}

impl fmt::Debug for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Actor")
            .field("id", &self.id)
            .field("role", &self.role)
            .finish_non_exhaustive()
    }
}

#[derive(Debug)]
pub struct Scenario {
    pub seed: u64,
    pub max_ticks: u64,
    pub world: World,
    pub actors: Vec<Actor>,
    pub schedule: Vec<ScheduleEntry>,
    pub taps: Vec<Tap>,
}

impl Scenario {
    pub fn new(seed: u64, world: World) -> Self {
        Self {
            seed,
            max_ticks: DEFAULT_MAX_TICKS,
            world,
            actors: Vec::new(),
            schedule: Vec::new(),
            taps: Vec::new(),
        }
    }

    pub fn add_actor(&mut self, id: impl Into<String>, role: Role, handler: Box<dyn Handler>) {
        self.actors.push(Actor {
            id: id.into(),
            role,
            handler,
        });
    }

    pub fn schedule(&mut self, tick: u64, sender: &str, receiver: &str, message: &str) {
        self.schedule.push(ScheduleEntry {
            tick,
            sender: sender.into(),
            receiver: receiver.into(),
            message: MessageRef::parse(message),
        });
    }

    pub fn tap(&mut self, link: Link, action: TapAction) {
        self.taps.push(Tap { link, action });
    }
}

struct Slot {
    role: Role,
    inbox: VecDeque<(String, Message)>,
    handler: Box<dyn Handler>,
    rng: SimRng,
}

struct InFlight {
    deliver_at: u64,
    link: Link,
    message: Message,
}

/// Tick-driven engine. Single-threaded by contract.
///
/// Per tick: messages sent in the previous tick are delivered (taps applied
/// here) and link counts recorded; schedule triggers fire; then every actor,
/// in ascending id order, gets `on_tick`, drains its inbox, and `on_flush`.
pub struct Simulation {
    tick: u64,
    max_ticks: u64,
    world: World,
    actors: BTreeMap<String, Slot>,
    schedule: Vec<ScheduleEntry>,
    taps: Vec<Tap>,
    in_flight: Vec<InFlight>,
    captures: BTreeMap<Link, Vec<Vec<u8>>>,
    labels: BTreeMap<Link, Vec<String>>,
    transcript: Transcript,
    finished: bool,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let mut actors = BTreeMap::new();
        for a in scenario.actors {
            let rng = rng_from_seed(derive_seed(scenario.seed, &a.id));
            let slot = Slot {
                role: a.role,
                inbox: VecDeque::new(),
                handler: a.handler,
                rng,
            };
            if actors.insert(a.id.clone(), slot).is_some() {
                return Err(Error::invalid(format!("duplicate actor `{}`", a.id)));
            }
        }
        for e in &scenario.schedule {
            for id in [&e.sender, &e.receiver] {
                if !actors.contains_key(id) {
                    return Err(Error::invalid(format!("schedule references unknown actor `{id}`")));
                }
            }
        }
        let mut schedule = scenario.schedule;
        schedule.sort_by_key(|e| e.tick);
        Ok(Self {
            tick: 0,
            max_ticks: scenario.max_ticks,
            world: scenario.world,
            actors,
            schedule,
            taps: scenario.taps,
            in_flight: Vec::new(),
            captures: BTreeMap::new(),
            labels: BTreeMap::new(),
            transcript: Transcript::new(),
            finished: false,
        })
    }

    pub fn role_of(&self, id: &str) -> Option<Role> {
        self.actors.get(id).map(|s| s.role)
    }

    /// Wire bytes observed on a tapped link, in arrival order.
    pub fn captured(&self, link: &Link) -> &[Vec<u8>] {
        self.captures.get(link).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn run(&mut self) -> Result<Transcript> {
        if self.finished {
            return Ok(self.transcript.clone());
        }
        loop {
            if self.tick >= self.max_ticks {
                return Err(Error::Nontermination(self.max_ticks));
            }
            self.step()?;
            if self.quiescent() {
                break;
            }
            self.tick += 1;
        }
        let ids: Vec<String> = self.actors.keys().cloned().collect();
        for id in ids {
            self.with_actor(&id, |h, ctx| h.finish(ctx));
        }
        self.finished = true;
        Ok(self.transcript.clone())
    }

    fn quiescent(&self) -> bool {
        let next = self.tick + 1;
        self.in_flight.is_empty()
            && self.schedule.iter().all(|e| e.tick < next)
            && !self
                .taps
                .iter()
                .any(|t| matches!(t.action, TapAction::Replay { at_tick, .. } if at_tick >= next))
            && self
                .actors
                .values()
                .all(|s| s.inbox.is_empty() && s.handler.is_idle(next))
    }

    fn step(&mut self) -> Result<()> {
        let tick = self.tick;
        self.deliver(tick);

        let triggers: Vec<ScheduleEntry> = self.schedule.iter().filter(|e| e.tick == tick).cloned().collect();
        for e in triggers {
            let mut result = Ok(());
            self.with_actor(&e.sender, |h, ctx| {
                result = h.on_trigger(ctx, &e.receiver, &e.message);
            });
            result?;
        }

        let ids: Vec<String> = self.actors.keys().cloned().collect();
        for id in &ids {
            self.with_actor(id, |h, ctx| h.on_tick(ctx));
            while let Some((from, msg)) = self.actors.get_mut(id).unwrap().inbox.pop_front() {
                self.with_actor(id, |h, ctx| h.on_message(ctx, &from, &msg));
            }
            self.with_actor(id, |h, ctx| h.on_flush(ctx));
        }
        Ok(())
    }

    fn deliver(&mut self, tick: u64) {
        let (due, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.in_flight)
            .into_iter()
            .partition(|m| m.deliver_at <= tick);
        self.in_flight = later;

        let mut arrivals: Vec<(Link, Message)> = Vec::new();
        for InFlight { link, mut message, .. } in due {
            let seen = self.captures.get(&link).map_or(0, Vec::len);
            let mut tapped = false;
            for tap in self.taps.iter().filter(|t| t.link == link) {
                tapped = true;
                if let TapAction::Tamper { index, offset, mask } = tap.action {
                    if index.is_none_or(|i| i == seen) && !message.body.is_empty() {
                        let at = offset % message.body.len();
                        message.body[at] ^= mask;
                        self.transcript.push(
                            tick,
                            format!("adversary action=tamper link={link} index={seen} offset={at}"),
                        );
                    }
                }
            }
            if tapped {
                self.captures
                    .entry(link.clone())
                    .or_default()
                    .push(message.body.clone());
                self.labels.entry(link.clone()).or_default().push(message.label.clone());
            }
            arrivals.push((link, message));
        }

        for tap in &self.taps {
            if let TapAction::Replay { at_tick, index } = tap.action {
                if at_tick != tick {
                    continue;
                }
                let captured = self.captures.get(&tap.link).and_then(|c| c.get(index));
                let label = self.labels.get(&tap.link).and_then(|l| l.get(index));
                match (captured, label) {
                    (Some(body), Some(label)) => {
                        self.transcript
                            .push(tick, format!("adversary action=replay link={} index={index}", tap.link));
                        arrivals.push((tap.link.clone(), Message::new(label.clone(), body.clone())));
                    }
                    _ => self.transcript.push(
                        tick,
                        format!("adversary action=replay-miss link={} index={index}", tap.link),
                    ),
                }
            }
        }

        let mut counts: BTreeMap<Link, usize> = BTreeMap::new();
        for (link, _) in &arrivals {
            *counts.entry(link.clone()).or_insert(0) += 1;
        }
        for (link, n) in counts {
            self.transcript.push(tick, format!("link={link} blocks={n}"));
        }
        for (link, message) in arrivals {
            match self.actors.get_mut(&link.to) {
                Some(slot) => slot.inbox.push_back((link.from, message)),
                None => self
                    .transcript
                    .push(tick, format!("drop link={link} reason=unknown-recipient")),
            }
        }
    }

    fn with_actor(&mut self, id: &str, f: impl FnOnce(&mut dyn Handler, &mut Ctx<'_>)) {
        let tick = self.tick;
        let slot = self.actors.get_mut(id).expect("actor exists");
        let mut outbox = Vec::new();
        let mut events = Vec::new();
        {
            let mut ctx = Ctx {
                tick,
                id,
                rng: &mut slot.rng,
                world: &self.world,
                outbox: &mut outbox,
                events: &mut events,
            };
            f(slot.handler.as_mut(), &mut ctx);
        }
        for e in events {
            self.transcript.push(tick, e);
        }
        for (to, message) in outbox {
            self.in_flight.push(InFlight {
                deliver_at: tick + 1,
                link: Link::new(id, to),
                message,
            });
        }
    }
}

/// Runs a scenario to completion.
pub fn run(scenario: Scenario) -> Result<Transcript> {
    Simulation::new(scenario)?.run()
}
