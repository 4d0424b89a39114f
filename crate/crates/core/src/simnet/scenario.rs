//! Text scenario files.
//!
//! ```text
//! # comment
//! seed = 7
//! max_ticks = 200
//! key_bits = 512
//!
//! [actor C1]
//! role = customer
//! protocol = onekp
//! pan = 4111111111111111
//! acquirer = A
//!
//! [schedule]
//! 1 C1 M1 buy:250:book
//!
//! [tap]
//! link = M1->A
//! action = replay
//! at = 8
//! index = 0
//! ```
//!
//! A `[traffic]` section replaces the actor list with a generated mix chain
//! (`senders`, `receivers`, `mixes`, `ticks`, `rate`, `corrupt`). Every actor
//! gets an RSA key derived from the seed and its id; a CA with id `ca` certifies
//! them all.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::crypto::{derive_seed, rng_from_seed, CertificateAuthority, RsaKeyPair};
use crate::error::{Error, Result};
use crate::firstvirtual::{self, Fault, Provider};
use crate::mixnet::traffic::{traffic_scenario, TrafficConfig};
use crate::onekp::{self, Acquirer, ComField, Merchant, ReplayCache};
use crate::setcore::{self, Gateway, PAN_SECRET_LEN};

use super::engine::{Link, Role, Scenario, TapAction, World, DEFAULT_MAX_TICKS};

pub const DEFAULT_KEY_BITS: usize = 512;
pub const CA_ID: &str = "ca";

const DEFAULT_EXPIRY: &str = "12/30";
const DEFAULT_LIMIT: u64 = 1_000_000;
const DEFAULT_BALANCE: i64 = 1_000_000;

/// Scenarios shipped with the crate, by name.
pub const SHIPPED: &[(&str, &str)] = &[
    ("onekp_honest", include_str!("../../scenarios/onekp_honest.scn")),
    ("onekp_replay", include_str!("../../scenarios/onekp_replay.scn")),
    ("set_honest", include_str!("../../scenarios/set_honest.scn")),
    ("fv_honest", include_str!("../../scenarios/fv_honest.scn")),
    ("fv_fraud", include_str!("../../scenarios/fv_fraud.scn")),
    ("mix_chain", include_str!("../../scenarios/mix_chain.scn")),
];

pub fn shipped(name: &str) -> Option<&'static str> {
    SHIPPED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Params {
    pub line: usize,
    values: BTreeMap<String, String>,
}

impl Params {
    fn new(line: usize) -> Self {
        Self {
            line,
            values: BTreeMap::new(),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| self.err(format!("missing `{key}`")))
    }

    fn num<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| self.err(format!("`{key}` is not a number: `{v}`"))),
        }
    }

    fn list(&self, key: &str) -> Vec<String> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            })
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActorSpec {
    pub id: String,
    pub role: Role,
    pub protocol: String,
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleLine {
    pub line: usize,
    pub tick: u64,
    pub sender: String,
    pub receiver: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub max_ticks: u64,
    pub key_bits: usize,
    pub actors: Vec<ActorSpec>,
    pub traffic: Option<Params>,
    pub schedule: Vec<ScheduleLine>,
    pub taps: Vec<Params>,
}

enum Section {
    Global,
    Actor(usize),
    Traffic,
    Schedule,
    Tap(usize),
}

impl ScenarioSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut globals = Params::new(0);
        let mut actors: Vec<(String, Params)> = Vec::new();
        let mut traffic = None;
        let mut schedule = Vec::new();
        let mut taps = Vec::new();
        let mut section = Section::Global;

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |m: String| Error::Parse {
                line: line_no,
                message: m,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('[') {
                let header = header
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("unterminated section header `{line}`")))?
                    .trim();
                let mut words = header.split_whitespace();
                section = match (words.next(), words.next(), words.next()) {
                    (Some("actor"), Some(id), None) => {
                        if actors.iter().any(|(a, _)| a == id) {
                            return Err(err(format!("actor `{id}` declared twice")));
                        }
                        actors.push((id.to_string(), Params::new(line_no)));
                        Section::Actor(actors.len() - 1)
                    }
                    (Some("traffic"), None, None) => {
                        if traffic.is_some() {
                            return Err(err("second [traffic] section".into()));
                        }
                        traffic = Some(Params::new(line_no));
                        Section::Traffic
                    }
                    (Some("schedule"), None, None) => Section::Schedule,
                    (Some("tap"), None, None) => {
                        taps.push(Params::new(line_no));
                        Section::Tap(taps.len() - 1)
                    }
                    _ => return Err(err(format!("unknown section `[{header}]`"))),
                };
                continue;
            }
            if let Section::Schedule = section {
                let parts: Vec<&str> = line.split_whitespace().collect();
                let [tick, sender, receiver, message] = parts.as_slice() else {
                    return Err(err("schedule lines are `<tick> <sender> <receiver> <message>`".into()));
                };
                schedule.push(ScheduleLine {
                    line: line_no,
                    tick: tick
                        .parse()
                        .map_err(|_| err(format!("tick `{tick}` is not an integer")))?,
                    sender: sender.to_string(),
                    receiver: receiver.to_string(),
                    message: message.to_string(),
                });
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            let target = match section {
                Section::Global => &mut globals,
                Section::Actor(i) => &mut actors[i].1,
                Section::Traffic => traffic.as_mut().unwrap(),
                Section::Tap(i) => &mut taps[i],
                Section::Schedule => unreachable!(),
            };
            if target.values.insert(key.clone(), value).is_some() {
                return Err(err(format!("`{key}` set twice")));
            }
        }

        for key in globals.values.keys() {
            if !matches!(key.as_str(), "seed" | "max_ticks" | "key_bits") {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("unknown global `{key}`"),
                });
            }
        }
        let actors = actors
            .into_iter()
            .map(|(id, params)| {
                let role = params.require("role")?;
                let role = Role::parse(role).ok_or_else(|| params.err(format!("unknown role `{role}`")))?;
                let protocol = params.require("protocol")?.to_string();
                Ok(ActorSpec {
                    id,
                    role,
                    protocol,
                    params,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if traffic.is_some() && !actors.is_empty() {
            return Err(Error::Parse {
                line: actors[0].params.line,
                message: "a [traffic] scenario cannot declare actors".into(),
            });
        }

        Ok(Self {
            seed: globals.num("seed", 0)?,
            max_ticks: globals.num("max_ticks", DEFAULT_MAX_TICKS)?,
            key_bits: globals.num("key_bits", DEFAULT_KEY_BITS)?,
            actors,
            traffic,
            schedule,
            taps,
        })
    }

    pub fn build(&self) -> Result<Scenario> {
        let mut scenario = match &self.traffic {
            Some(t) => self.build_traffic(t)?,
            None => self.build_actors()?,
        };
        scenario.max_ticks = self.max_ticks;
        let known: BTreeSet<&str> = scenario.actors.iter().map(|a| a.id.as_str()).collect();
        for s in &self.schedule {
            for id in [&s.sender, &s.receiver] {
                if !known.contains(id.as_str()) {
                    return Err(Error::Parse {
                        line: s.line,
                        message: format!("unknown actor `{id}`"),
                    });
                }
            }
        }
        for s in &self.schedule {
            scenario.schedule(s.tick, &s.sender, &s.receiver, &s.message);
        }
        for tap in &self.taps {
            let (link, action) = parse_tap(tap)?;
            scenario.tap(link, action);
        }
        Ok(scenario)
    }

    fn build_traffic(&self, t: &Params) -> Result<Scenario> {
        let defaults = TrafficConfig::default();
        let corrupt = t
            .list("corrupt")
            .iter()
            .map(|c| c.parse().map_err(|_| t.err(format!("bad mix index `{c}`"))))
            .collect::<Result<Vec<usize>>>()?;
        let config = TrafficConfig {
            senders: t.num("senders", defaults.senders)?,
            receivers: t.num("receivers", defaults.receivers)?,
            mixes: t.num("mixes", defaults.mixes)?,
            ticks: t.num("ticks", defaults.ticks)?,
            rate: t.num("rate", defaults.rate)?,
            seed: self.seed,
            key_bits: self.key_bits,
            messages: Vec::new(),
            corrupt,
        };
        traffic_scenario(&config)
    }

    fn build_actors(&self) -> Result<Scenario> {
        let key = |id: &str| RsaKeyPair::generate(self.key_bits, derive_seed(self.seed, &format!("key/{id}")));
        let ca = CertificateAuthority::new(CA_ID, key(CA_ID)?);
        let mut keys = BTreeMap::new();
        let mut world = World {
            ca_public: Some(ca.public()),
            ..World::default()
        };
        for a in &self.actors {
            let k = key(&a.id)?;
            world.public_keys.insert(a.id.clone(), k.public());
            world.certificates.publish(ca.issue(&a.id, &k.public()));
            keys.insert(a.id.clone(), k);
        }

        let mut scenario = Scenario::new(self.seed, world);
        let mut fv_customers = Vec::new();
        for a in &self.actors {
            let p = &a.params;
            let k = keys[&a.id].clone();
            match (a.protocol.as_str(), a.role) {
                ("onekp", Role::Customer) => {
                    let h = onekp::sim::OneKpCustomer::new(
                        p.require("pan")?,
                        p.get("expiry").unwrap_or(DEFAULT_EXPIRY),
                        self.pan_secret(&a.id),
                        p.require("acquirer")?,
                    );
                    scenario.add_actor(&a.id, a.role, Box::new(h));
                }
                ("onekp", Role::Merchant) => {
                    let mut m = Merchant::new(&a.id);
                    if let Some(f) = p.get("tamper") {
                        m.tamper = Some(ComField::parse(f).ok_or_else(|| p.err(format!("unknown COM field `{f}`")))?);
                    }
                    let h = onekp::sim::OneKpMerchant::new(m, p.require("acquirer")?);
                    scenario.add_actor(&a.id, a.role, Box::new(h));
                }
                ("onekp", Role::Acquirer) => {
                    let cert = scenario.world.certificates.lookup(&a.id).unwrap().clone();
                    let mut acq = Acquirer::new(&a.id, k, cert, p.num("limit", DEFAULT_LIMIT)?);
                    acq.cache = ReplayCache::new(p.num("window", onekp::DEFAULT_WINDOW_SECS)?);
                    acq.registry.extend(p.list("registry"));
                    scenario.add_actor(&a.id, a.role, Box::new(onekp::sim::OneKpAcquirer::new(acq)));
                }
                ("set", Role::Customer) => {
                    let h = setcore::sim::SetCustomer::new(
                        k,
                        p.require("pan")?,
                        p.get("expiry").unwrap_or(DEFAULT_EXPIRY),
                        self.pan_secret(&a.id),
                        p.require("gateway")?,
                    );
                    scenario.add_actor(&a.id, a.role, Box::new(h));
                }
                ("set", Role::Merchant) => {
                    let substitute = p.num("substitute_oi", false)?;
                    let h = setcore::sim::SetMerchant::new(p.require("gateway")?, substitute);
                    scenario.add_actor(&a.id, a.role, Box::new(h));
                }
                ("set", Role::Gateway) => {
                    let mut g = Gateway::new(&a.id, k, p.num("limit", DEFAULT_LIMIT)?);
                    g.registry.extend(p.list("registry"));
                    scenario.add_actor(&a.id, a.role, Box::new(setcore::sim::SetGateway::new(g)));
                }
                ("fv", Role::Customer) => fv_customers.push(a),
                ("fv", Role::Merchant) => {
                    let provider = p.require("provider")?;
                    let threshold = self
                        .fv_provider(provider)?
                        .params
                        .num("threshold", firstvirtual::DEFAULT_LARGE_THRESHOLD)?;
                    let h = firstvirtual::sim::FvMerchant::new(provider, threshold);
                    scenario.add_actor(&a.id, a.role, Box::new(h));
                }
                ("fv", Role::Provider) => {}
                (proto, role) => {
                    return Err(p.err(format!("no `{}` actor for protocol `{proto}`", role.as_str())));
                }
            }
        }

        // FV providers issue VPINs to their customers before the run starts.
        for a in self
            .actors
            .iter()
            .filter(|a| a.protocol == "fv" && a.role == Role::Provider)
        {
            let p = &a.params;
            let mut provider = Provider::new(&a.id, keys[&a.id].clone());
            provider.large_threshold = p.num("threshold", firstvirtual::DEFAULT_LARGE_THRESHOLD)?;
            provider.confirm_timeout = p.num("timeout", firstvirtual::DEFAULT_CONFIRM_TIMEOUT)?;
            provider.fault = match p.get("fault") {
                None | Some("none") => Fault::None,
                Some("abort-after-8a") => Fault::AbortAfter8a,
                Some(f) => return Err(p.err(format!("unknown fault `{f}`"))),
            };
            for m in self
                .actors
                .iter()
                .filter(|m| m.protocol == "fv" && m.role == Role::Merchant)
            {
                if m.params.get("provider") == Some(&a.id) {
                    provider.register_merchant(&m.id, m.params.num("balance", 0)?);
                }
            }
            let mut rng = rng_from_seed(derive_seed(self.seed, &format!("vpin/{}", a.id)));
            for c in fv_customers.iter().filter(|c| c.params.get("provider") == Some(&a.id)) {
                provider.register_customer(&c.id, c.params.num("balance", DEFAULT_BALANCE)?);
                let vpin = provider.issue_vpin(&c.id, c.params.require("pan")?, &mut rng)?;
                scenario.add_actor(&c.id, c.role, Box::new(firstvirtual::sim::FvCustomer::new(&vpin.value)));
            }
            scenario.add_actor(&a.id, a.role, Box::new(firstvirtual::sim::FvProvider::new(provider)));
        }
        for c in &fv_customers {
            let provider = c.params.require("provider")?;
            self.fv_provider(provider)?;
        }
        Ok(scenario)
    }

    fn fv_provider(&self, id: &str) -> Result<&ActorSpec> {
        self.actors
            .iter()
            .find(|a| a.id == id && a.protocol == "fv" && a.role == Role::Provider)
            .ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("`{id}` is not an fv provider"),
            })
    }

    fn pan_secret(&self, id: &str) -> [u8; PAN_SECRET_LEN] {
        rng_from_seed(derive_seed(self.seed, &format!("secret/{id}"))).gen()
    }
}

fn parse_tap(p: &Params) -> Result<(Link, TapAction)> {
    let link = p.require("link")?;
    let link = Link::parse(link).ok_or_else(|| p.err(format!("links are `from->to`, got `{link}`")))?;
    let action = match p.require("action")? {
        "eavesdrop" => TapAction::Eavesdrop,
        "replay" => TapAction::Replay {
            at_tick: p.num("at", 0)?,
            index: p.num("index", 0)?,
        },
        "tamper" => TapAction::Tamper {
            index: p.get("index").map(|_| p.num("index", 0)).transpose()?,
            offset: p.num("offset", 0)?,
            mask: p.num("mask", 1)?,
        },
        other => return Err(p.err(format!("unknown tap action `{other}`"))),
    };
    Ok((link, action))
}

/// Parses `text`, optionally overriding its seed, and builds the scenario.
pub fn load_scenario(text: &str, seed: Option<u64>) -> Result<Scenario> {
    let mut spec = ScenarioSpec::parse(text)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    spec.build()
}
