//! Self-contained walkthroughs: one honest run and one attack per mechanism.

use std::fmt;

use crate::blindsig::{blind, run_cut_and_choose, sign_blinded, verify_unblinded, CutChooseOutcome};
use crate::crypto::{rng_from_seed, RsaKeyPair};
use crate::error::{Error, Result};
use crate::mixnet::{build_onion, peel, Hop, Layer, MixNode, MixOutput};
use crate::setcore::{build_request, merchant_verify, Gateway, OrderInformation, PaymentInstruction};
use crate::simnet::{load_scenario, run, shipped};

pub const DEMOS: [&str; 5] = ["mix", "blindsig", "dualsig", "onekp", "fv"];

const KEY_BITS: usize = 512;
const PAN: &str = "4111111111111111";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemoReport {
    pub name: &'static str,
    pub lines: Vec<String>,
    /// Set once the attack step was refused.
    pub attack_rejected: bool,
}

impl fmt::Display for DemoReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(f, "{l}")?;
        }
        write!(
            f,
            "{}: attack {}",
            self.name,
            if self.attack_rejected {
                "rejected"
            } else {
                "NOT rejected"
            }
        )
    }
}

pub fn run_demo(name: &str, seed: u64) -> Result<DemoReport> {
    match name {
        "mix" => mix(seed),
        "blindsig" => blindsig(seed),
        "dualsig" => dualsig(seed),
        "onekp" => scenario_demo("onekp", "onekp_replay", seed),
        "fv" => scenario_demo("fv", "fv_fraud", seed),
        _ => Err(Error::invalid(format!(
            "unknown demo `{name}`; expected one of {}",
            DEMOS.join(", ")
        ))),
    }
}

fn key(seed: u64, n: u64) -> Result<RsaKeyPair> {
    RsaKeyPair::generate(KEY_BITS, seed.wrapping_mul(1000).wrapping_add(n))
}

fn mix(seed: u64) -> Result<DemoReport> {
    let mut rng = rng_from_seed(seed);
    let mut nodes = (1..=3)
        .map(|i| Ok(MixNode::new(format!("M{i}"), key(seed, i)?)))
        .collect::<Result<Vec<_>>>()?;
    let bob = key(seed, 9)?;
    let path: Vec<Hop> = nodes.iter().map(MixNode::hop).collect();
    let recipient = Hop::new("Bob", bob.public());
    let packet = build_onion(&path, &recipient, b"meet at noon", &mut rng)?;
    let mut lines = vec![format!(
        "mix: sender builds a {}-byte onion over M1 -> M2 -> M3 -> Bob",
        packet.as_bytes().len()
    )];

    let mut current = packet.clone();
    for node in nodes.iter_mut() {
        match node.mix_process(&current) {
            MixOutput::Forward { next, packet } => {
                lines.push(format!("mix: {} peels one layer, forwards to {next}", node.id));
                current = packet;
            }
            other => return Err(Error::state(format!("{} produced {other:?}", node.id))),
        }
    }
    match peel(&bob, current.as_bytes())? {
        Layer::Deliver { recipient, payload } => lines.push(format!(
            "mix: {recipient} opens \"{}\"",
            String::from_utf8_lossy(&payload)
        )),
        other => return Err(Error::state(format!("unexpected final layer {other:?}"))),
    }

    lines.push("mix: adversary replays the original packet into M1".into());
    let replay = nodes[0].mix_process(&packet);
    let attack_rejected = replay == MixOutput::Duplicate;
    lines.push(format!(
        "mix: M1 -> {}",
        if attack_rejected {
            "duplicate, dropped"
        } else {
            "accepted"
        }
    ));
    Ok(DemoReport {
        name: "mix",
        lines,
        attack_rejected,
    })
}

fn blindsig(seed: u64) -> Result<DemoReport> {
    let mut rng = rng_from_seed(seed);
    let signer = key(seed, 1)?;
    let public = signer.public();
    let coin = b"coin serial=7 value=10";
    let mut session = blind(coin, &public, &mut rng);
    let mut lines = vec![format!(
        "blindsig: provider blinds m, signer sees {}...",
        &session.blinded.to_str_radix(16)[..16]
    )];
    let blind_sig = sign_blinded(&signer, &session.blinded)?;
    session.attach_blind_signature(blind_sig);
    let sig = session.unblind()?;
    let direct = signer.sign(coin);
    lines.push(format!(
        "blindsig: unblinded signature equals direct signature: {}",
        sig == direct
    ));
    lines.push(format!(
        "blindsig: verifies on m: {}",
        verify_unblinded(&public, coin, &sig)
    ));

    let mut coins: Vec<Vec<u8>> = (0..10)
        .map(|i| format!("coin serial={i} value=10").into_bytes())
        .collect();
    coins[4] = b"coin serial=4 value=1000".to_vec();
    let valid = |m: &[u8]| m.ends_with(b"value=10");
    let round = run_cut_and_choose(&coins, valid, &signer, &mut rng)?;
    lines.push(format!(
        "blindsig: cut-and-choose over 10 candidates, candidate 4 malformed; signer keeps {} and opens the other 9",
        round.signed_index
    ));
    lines.push(match round.outcome {
        CutChooseOutcome::CheatingDetected { index } => {
            format!("blindsig: reveal of {index} fails the check -> cheating detected, nothing signed")
        }
        CutChooseOutcome::Accepted { .. } => {
            "blindsig: the malformed candidate was the one kept back -> signed (probability 1/10)".into()
        }
    });

    let forged = b"coin serial=7 value=1000";
    let attack_rejected = !verify_unblinded(&public, forged, &sig);
    lines.push(format!(
        "blindsig: same signature on altered coin -> {}",
        if attack_rejected { "bad-signature" } else { "accepted" }
    ));
    Ok(DemoReport {
        name: "blindsig",
        lines,
        attack_rejected: attack_rejected && sig == direct,
    })
}

fn dualsig(seed: u64) -> Result<DemoReport> {
    let mut rng = rng_from_seed(seed);
    let customer = key(seed, 1)?;
    let mut gateway = Gateway::new("G", key(seed, 2)?, 10_000);
    gateway.register_pan(PAN);
    let pi = PaymentInstruction::new(PAN, "12/30", [3; 20], 4200, &mut rng);
    let oi = OrderInformation {
        description: b"two opera tickets".to_vec(),
        price: 4200,
        merchant_id: "M".into(),
    };
    let req = build_request(&customer, "G", &gateway.keys.public(), &pi, &oi, &mut rng)?;
    merchant_verify(&req, &customer.public())?;
    let mut lines = vec!["dualsig: merchant checks DS over h(PI) || h(OI): ok".to_string()];
    let resp = gateway.verify(&req.to_gateway(oi.digest()), &customer.public())?;
    lines.push(format!(
        "dualsig: gateway checks DS with its own h(PI): approved={}",
        resp.approved
    ));

    let cheaper = OrderInformation { price: 1, ..oi.clone() };
    lines.push("dualsig: merchant forwards h(OI) of a different order".into());
    let outcome = gateway.verify(&req.to_gateway(cheaper.digest()), &customer.public());
    let attack_rejected = matches!(&outcome, Err(Error::Rejected(_)));
    lines.push(format!(
        "dualsig: gateway -> {}",
        match &outcome {
            Err(Error::Rejected(r)) => r.as_str().to_string(),
            Err(e) => e.to_string(),
            Ok(_) => "accepted".into(),
        }
    ));
    Ok(DemoReport {
        name: "dualsig",
        lines,
        attack_rejected,
    })
}

fn scenario_demo(name: &'static str, scenario: &str, seed: u64) -> Result<DemoReport> {
    let text = shipped(scenario).ok_or_else(|| Error::Internal(format!("missing scenario {scenario}")))?;
    let transcript = run(load_scenario(text, Some(seed))?)?;
    let mut lines = Vec::new();
    let mut attack_rejected = false;
    for r in transcript.records() {
        if r.kind() != name && r.kind() != "adversary" {
            continue;
        }
        let rejected = r.field("outcome") == Some("reject");
        attack_rejected |= rejected;
        if rejected || r.field("outcome").is_some() || r.body.contains("revoked") {
            lines.push(format!("{name}: tick {} {}", r.tick, r.body));
        }
    }
    Ok(DemoReport {
        name,
        lines,
        attack_rejected,
    })
}
