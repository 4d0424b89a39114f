//! SET-style dual signatures.
//!
//! The customer signs `canonical(h(PI), h(OI))` once. The merchant checks it
//! with OI in the clear and only h(PI); the gateway checks it with PI (from
//! an envelope only it can open) and the merchant's h(OI).
//!
//! Request wire form, each field length-prefixed:
//! `OI | h(PI) | DS | E_P(K) | nonce ‖ E_K(P, PI, h(OI))`.

use std::collections::BTreeSet;

use num_bigint::BigUint;
use rand::Rng;

use crate::crypto::{
    hash, sym_decrypt, sym_encrypt, unwrap_key, wrap_key, DigestValue, PublicKey, RsaKeyPair, NONCE_LEN, SYM_KEY_LEN,
};
use crate::encoding::{Canonical, FieldReader};
use crate::error::{Error, RejectReason, Result};

pub const PAN_SECRET_LEN: usize = 20;
pub const EX_NONCE_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaymentInstruction {
    pub pan: String,
    /// `MM/YY`.
    pub card_expiry: String,
    pub pan_secret: [u8; PAN_SECRET_LEN],
    pub ex_nonce: [u8; EX_NONCE_LEN],
    pub amount: u64,
}

impl PaymentInstruction {
    /// New instruction with a fresh EXNonce.
    pub fn new<R: Rng + ?Sized>(
        pan: &str,
        card_expiry: &str,
        pan_secret: [u8; PAN_SECRET_LEN],
        amount: u64,
        rng: &mut R,
    ) -> Self {
        let mut ex_nonce = [0u8; EX_NONCE_LEN];
        rng.fill(&mut ex_nonce);
        Self {
            pan: pan.to_string(),
            card_expiry: card_expiry.to_string(),
            pan_secret,
            ex_nonce,
            amount,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        Canonical::new()
            .str(&self.pan)
            .str(&self.card_expiry)
            .field(self.pan_secret)
            .field(self.ex_nonce)
            .u64(self.amount)
            .finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = FieldReader::new(bytes);
        let pi = Self {
            pan: r.string()?,
            card_expiry: r.string()?,
            pan_secret: r.array()?,
            ex_nonce: r.array()?,
            amount: r.u64()?,
        };
        r.finish()?;
        Ok(pi)
    }

    pub fn digest(&self) -> DigestValue {
        hash(&self.encode())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderInformation {
    pub description: Vec<u8>,
    pub price: u64,
    pub merchant_id: String,
}

impl OrderInformation {
    pub fn encode(&self) -> Vec<u8> {
        Canonical::new()
            .field(&self.description)
            .u64(self.price)
            .str(&self.merchant_id)
            .finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = FieldReader::new(bytes);
        let oi = Self {
            description: r.field()?.to_vec(),
            price: r.u64()?,
            merchant_id: r.string()?,
        };
        r.finish()?;
        Ok(oi)
    }

    pub fn digest(&self) -> DigestValue {
        hash(&self.encode())
    }
}

fn dual_input(pi_hash: &DigestValue, oi_hash: &DigestValue) -> Vec<u8> {
    Canonical::new().field(pi_hash).field(oi_hash).finish()
}

pub fn compute_dual_signature(customer: &RsaKeyPair, pi: &PaymentInstruction, oi: &OrderInformation) -> BigUint {
    customer.sign(&dual_input(&pi.digest(), &oi.digest()))
}

pub fn verify_dual_signature(customer: &PublicKey, pi_hash: &DigestValue, oi_hash: &DigestValue, ds: &BigUint) -> bool {
    customer.verify(&dual_input(pi_hash, oi_hash), ds)
}

/// `h(PAN, CardExpiry, PANSecret, EXNonce)`: unlinkable across transactions
/// as long as EXNonce is fresh.
pub fn randomized_pi_hash(pi: &PaymentInstruction) -> DigestValue {
    hash(
        &Canonical::new()
            .str(&pi.pan)
            .str(&pi.card_expiry)
            .field(pi.pan_secret)
            .field(pi.ex_nonce)
            .finish(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DualSignedRequest {
    pub oi: OrderInformation,
    pub pi_hash: DigestValue,
    pub ds: BigUint,
    pub wrapped_key: Vec<u8>,
    pub pi_nonce: [u8; NONCE_LEN],
    pub pi_envelope: Vec<u8>,
}

/// What the merchant passes on: everything but OI, plus its own h(OI).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatewayRequest {
    pub pi_hash: DigestValue,
    pub ds: BigUint,
    pub wrapped_key: Vec<u8>,
    pub pi_nonce: [u8; NONCE_LEN],
    pub pi_envelope: Vec<u8>,
    pub merchant_oi_hash: DigestValue,
}

fn pi_envelope_plaintext(gateway_id: &str, pi: &PaymentInstruction, oi_hash: &DigestValue) -> Vec<u8> {
    Canonical::new()
        .str(gateway_id)
        .field(pi.encode())
        .field(oi_hash)
        .finish()
}

pub fn build_request<R: Rng + ?Sized>(
    customer: &RsaKeyPair,
    gateway_id: &str,
    gateway: &PublicKey,
    pi: &PaymentInstruction,
    oi: &OrderInformation,
    rng: &mut R,
) -> Result<DualSignedRequest> {
    let oi_hash = oi.digest();
    let mut k = [0u8; SYM_KEY_LEN];
    rng.fill(&mut k);
    let mut pi_nonce = [0u8; NONCE_LEN];
    rng.fill(&mut pi_nonce);
    let pi_envelope = sym_encrypt(&k, &pi_nonce, &pi_envelope_plaintext(gateway_id, pi, &oi_hash))?;
    Ok(DualSignedRequest {
        oi: oi.clone(),
        pi_hash: pi.digest(),
        ds: compute_dual_signature(customer, pi, oi),
        wrapped_key: wrap_key(gateway, &k, rng)?,
        pi_nonce,
        pi_envelope,
    })
}

impl DualSignedRequest {
    pub fn to_bytes(&self) -> Vec<u8> {
        Canonical::new()
            .field(self.oi.encode())
            .field(self.pi_hash)
            .field(self.ds.to_bytes_be())
            .field(&self.wrapped_key)
            .field([&self.pi_nonce[..], &self.pi_envelope].concat())
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = FieldReader::new(bytes);
        let oi = OrderInformation::decode(r.field()?)?;
        let pi_hash = DigestValue::from_slice(r.field()?)?;
        let ds = BigUint::from_bytes_be(r.field()?);
        let wrapped_key = r.field()?.to_vec();
        let env = r.field()?;
        r.finish()?;
        if env.len() < NONCE_LEN {
            return Err(Error::malformed("payment envelope shorter than its nonce"));
        }
        Ok(Self {
            oi,
            pi_hash,
            ds,
            wrapped_key,
            pi_nonce: env[..NONCE_LEN].try_into().unwrap(),
            pi_envelope: env[NONCE_LEN..].to_vec(),
        })
    }

    /// Bytes the merchant can see: the whole request, PI only as ciphertext.
    pub fn merchant_view(&self) -> Vec<u8> {
        self.to_bytes()
    }

    pub fn to_gateway(&self, merchant_oi_hash: DigestValue) -> GatewayRequest {
        GatewayRequest {
            pi_hash: self.pi_hash,
            ds: self.ds.clone(),
            wrapped_key: self.wrapped_key.clone(),
            pi_nonce: self.pi_nonce,
            pi_envelope: self.pi_envelope.clone(),
            merchant_oi_hash,
        }
    }
}

impl GatewayRequest {
    pub fn to_bytes(&self) -> Vec<u8> {
        Canonical::new()
            .field(self.pi_hash)
            .field(self.ds.to_bytes_be())
            .field(&self.wrapped_key)
            .field([&self.pi_nonce[..], &self.pi_envelope].concat())
            .field(self.merchant_oi_hash)
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = FieldReader::new(bytes);
        let pi_hash = DigestValue::from_slice(r.field()?)?;
        let ds = BigUint::from_bytes_be(r.field()?);
        let wrapped_key = r.field()?.to_vec();
        let env = r.field()?;
        let merchant_oi_hash = DigestValue::from_slice(r.field()?)?;
        r.finish()?;
        if env.len() < NONCE_LEN {
            return Err(Error::malformed("payment envelope shorter than its nonce"));
        }
        Ok(Self {
            pi_hash,
            ds,
            wrapped_key,
            pi_nonce: env[..NONCE_LEN].try_into().unwrap(),
            pi_envelope: env[NONCE_LEN..].to_vec(),
            merchant_oi_hash,
        })
    }
}

pub fn merchant_verify(request: &DualSignedRequest, customer: &PublicKey) -> Result<()> {
    if verify_dual_signature(customer, &request.pi_hash, &request.oi.digest(), &request.ds) {
        Ok(())
    } else {
        Err(Error::Rejected(RejectReason::BadSignature))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenedInstruction {
    pub gateway_id: String,
    pub pi: PaymentInstruction,
    pub oi_hash: DigestValue,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthorizationResponse {
    pub approved: bool,
    pub pi_hash: DigestValue,
    pub oi_hash: DigestValue,
    pub signature: BigUint,
    /// Gateway's signature over PI. Nothing downstream consumes it.
    pub pi_countersignature: Option<BigUint>,
}

impl AuthorizationResponse {
    fn signed_bytes(approved: bool, pi_hash: &DigestValue, oi_hash: &DigestValue) -> Vec<u8> {
        Canonical::new()
            .str("set-auth")
            .field([approved as u8])
            .field(pi_hash)
            .field(oi_hash)
            .finish()
    }

    pub fn verify(&self, gateway: &PublicKey) -> bool {
        gateway.verify(
            &Self::signed_bytes(self.approved, &self.pi_hash, &self.oi_hash),
            &self.signature,
        )
    }
}

/// Merchant's optional signature over OI. Nothing downstream consumes it.
pub fn countersign_oi(merchant: &RsaKeyPair, oi: &OrderInformation) -> BigUint {
    merchant.sign(&oi.encode())
}

pub struct Gateway {
    pub id: String,
    pub keys: RsaKeyPair,
    /// Largest approvable amount.
    pub limit: u64,
    pub registry: BTreeSet<String>,
    pub countersign: bool,
}

impl Gateway {
    pub fn new(id: impl Into<String>, keys: RsaKeyPair, limit: u64) -> Self {
        Self {
            id: id.into(),
            keys,
            limit,
            registry: BTreeSet::new(),
            countersign: false,
        }
    }

    pub fn register_pan(&mut self, pan: &str) {
        self.registry.insert(pan.to_string());
    }

    pub fn open(&self, request: &GatewayRequest) -> Result<OpenedInstruction> {
        let reject = |_| Error::Rejected(RejectReason::Envelope);
        let k = unwrap_key(&self.keys, &request.wrapped_key).map_err(reject)?;
        let plain = sym_decrypt(&k, &request.pi_nonce, &request.pi_envelope).map_err(reject)?;
        let mut r = FieldReader::new(&plain);
        let gateway_id = r.string().map_err(reject)?;
        let pi = PaymentInstruction::decode(r.field().map_err(reject)?).map_err(reject)?;
        let oi_hash = DigestValue::from_slice(r.field().map_err(reject)?).map_err(reject)?;
        r.finish().map_err(reject)?;
        Ok(OpenedInstruction {
            gateway_id,
            pi,
            oi_hash,
        })
    }

    /// Opens PI, checks linkage and the dual signature, then applies the
    /// authorization rule (PAN on file and amount within limit).
    pub fn verify(&self, request: &GatewayRequest, customer: &PublicKey) -> Result<AuthorizationResponse> {
        let opened = self.open(request)?;
        if opened.gateway_id != self.id {
            return Err(Error::Rejected(RejectReason::WrongRecipient));
        }
        if opened.oi_hash != request.merchant_oi_hash {
            return Err(Error::Rejected(RejectReason::LinkMismatch));
        }
        let pi_hash = opened.pi.digest();
        if pi_hash != request.pi_hash {
            return Err(Error::Rejected(RejectReason::LinkMismatch));
        }
        if !verify_dual_signature(customer, &pi_hash, &request.merchant_oi_hash, &request.ds) {
            return Err(Error::Rejected(RejectReason::BadSignature));
        }
        let approved = self.registry.contains(&opened.pi.pan) && opened.pi.amount <= self.limit;
        let signature = self.keys.sign(&AuthorizationResponse::signed_bytes(
            approved,
            &pi_hash,
            &request.merchant_oi_hash,
        ));
        Ok(AuthorizationResponse {
            approved,
            pi_hash,
            oi_hash: request.merchant_oi_hash,
            signature,
            pi_countersignature: self.countersign.then(|| self.keys.sign(&opened.pi.encode())),
        })
    }

    /// Bytes the gateway sees: its request plus the opened PI.
    pub fn view(&self, request: &GatewayRequest) -> Result<Vec<u8>> {
        let opened = self.open(request)?;
        let mut out = request.to_bytes();
        out.extend_from_slice(&opened.pi.encode());
        Ok(out)
    }
}

pub fn gateway_verify(
    gateway: &Gateway,
    request: &GatewayRequest,
    customer: &PublicKey,
) -> Result<AuthorizationResponse> {
    gateway.verify(request, customer)
}

pub mod sim {
    //! Customer, merchant, and gateway actors for the simulator.
    //!
    //! Schedule trigger: `<tick> <customer> <merchant> buy:<price>:<description>`.

    use std::collections::BTreeMap;

    use super::*;
    use crate::crypto::PublicKey;
    use crate::simnet::{Ctx, Handler, Message, MessageRef};

    pub const REQUEST_LABEL: &str = "set-request";
    pub const AUTH_LABEL: &str = "set-auth-request";
    pub const RESPONSE_LABEL: &str = "set-auth-response";

    pub struct SetCustomer {
        keys: RsaKeyPair,
        pan: String,
        expiry: String,
        pan_secret: [u8; PAN_SECRET_LEN],
        gateway_id: String,
    }

    impl SetCustomer {
        pub fn new(
            keys: RsaKeyPair,
            pan: &str,
            expiry: &str,
            pan_secret: [u8; PAN_SECRET_LEN],
            gateway_id: &str,
        ) -> Self {
            Self {
                keys,
                pan: pan.into(),
                expiry: expiry.into(),
                pan_secret,
                gateway_id: gateway_id.into(),
            }
        }
    }

    pub(crate) fn parse_buy(message: &MessageRef) -> Result<(u64, String)> {
        let arg = message
            .arg
            .as_deref()
            .filter(|_| message.name == "buy")
            .ok_or_else(|| Error::invalid(format!("expected `buy:<price>:<description>`, got `{message}`")))?;
        let (price, desc) = arg
            .split_once(':')
            .ok_or_else(|| Error::invalid("buy needs `<price>:<description>`"))?;
        let price = price
            .parse()
            .map_err(|_| Error::invalid(format!("price `{price}` is not an integer")))?;
        Ok((price, desc.to_string()))
    }

    impl Handler for SetCustomer {
        fn on_trigger(&mut self, ctx: &mut Ctx<'_>, to: &str, message: &MessageRef) -> Result<()> {
            let (price, desc) = parse_buy(message)?;
            let gateway = ctx.world().public_key(&self.gateway_id)?.clone();
            let pi = PaymentInstruction::new(&self.pan, &self.expiry, self.pan_secret, price, ctx.rng());
            let oi = OrderInformation {
                description: desc.into_bytes(),
                price,
                merchant_id: to.to_string(),
            };
            let request = build_request(&self.keys, &self.gateway_id, &gateway, &pi, &oi, ctx.rng())?;
            ctx.send(to, Message::new(REQUEST_LABEL, request.to_bytes()));
            Ok(())
        }

        fn on_message(&mut self, ctx: &mut Ctx<'_>, _from: &str, message: &Message) {
            if message.label != RESPONSE_LABEL {
                return;
            }
            let id = ctx.id().to_string();
            let verified = parse_response(&message.body)
                .ok()
                .zip(ctx.world().public_key(&self.gateway_id).ok())
                .map(|(r, g)| (r.approved, r.verify(g)));
            match verified {
                Some((approved, true)) => ctx.record(format!(
                    "set actor={id} auth={} verified=true",
                    if approved { "yes" } else { "no" }
                )),
                _ => ctx.record(format!(
                    "set actor={id} verified=false outcome=reject reason=bad-signature"
                )),
            }
        }
    }

    fn response_bytes(r: &AuthorizationResponse) -> Vec<u8> {
        Canonical::new()
            .field([r.approved as u8])
            .field(r.pi_hash)
            .field(r.oi_hash)
            .field(r.signature.to_bytes_be())
            .finish()
    }

    fn parse_response(bytes: &[u8]) -> Result<AuthorizationResponse> {
        let mut r = FieldReader::new(bytes);
        let [approved] = r.array::<1>()?;
        let pi_hash = DigestValue::from_slice(r.field()?)?;
        let oi_hash = DigestValue::from_slice(r.field()?)?;
        let signature = BigUint::from_bytes_be(r.field()?);
        r.finish()?;
        Ok(AuthorizationResponse {
            approved: approved == 1,
            pi_hash,
            oi_hash,
            signature,
            pi_countersignature: None,
        })
    }

    /// `substitute_oi` makes the merchant forward a different h(OI), the
    /// "payment referred to a different order" dispute.
    pub struct SetMerchant {
        gateway_id: String,
        substitute_oi: bool,
        pending: BTreeMap<DigestValue, String>,
    }

    impl SetMerchant {
        pub fn new(gateway_id: &str, substitute_oi: bool) -> Self {
            Self {
                gateway_id: gateway_id.into(),
                substitute_oi,
                pending: BTreeMap::new(),
            }
        }
    }

    impl Handler for SetMerchant {
        fn on_message(&mut self, ctx: &mut Ctx<'_>, from: &str, message: &Message) {
            let id = ctx.id().to_string();
            match message.label.as_str() {
                REQUEST_LABEL => {
                    let checked = DualSignedRequest::from_bytes(&message.body).and_then(|req| {
                        let customer: PublicKey = ctx.world().public_key(from)?.clone();
                        merchant_verify(&req, &customer).map(|_| req)
                    });
                    match checked {
                        Ok(req) => {
                            ctx.record(format!(
                                "set actor={id} step=merchant-verify customer={from} pi_hash={} outcome=accept",
                                req.pi_hash.short_hex()
                            ));
                            let mut oi_hash = req.oi.digest();
                            if self.substitute_oi {
                                let mut other = req.oi.clone();
                                other.price += 1;
                                oi_hash = other.digest();
                                ctx.record(format!("adversary action=substitute-oi actor={id}"));
                            }
                            self.pending.insert(req.pi_hash, from.to_string());
                            let body = Canonical::new()
                                .str(from)
                                .field(req.to_gateway(oi_hash).to_bytes())
                                .finish();
                            ctx.send(self.gateway_id.clone(), Message::new(AUTH_LABEL, body));
                        }
                        Err(e) => ctx.record(format!(
                            "set actor={id} step=merchant-verify customer={from} outcome=reject reason={}",
                            reason_token(&e)
                        )),
                    }
                }
                RESPONSE_LABEL => {
                    if let Ok(r) = parse_response(&message.body) {
                        if let Some(customer) = self.pending.remove(&r.pi_hash) {
                            ctx.send(customer, message.clone());
                        }
                    }
                }
                _ => {}
            }
        }
    }

    pub struct SetGateway {
        gateway: Gateway,
    }

    impl SetGateway {
        pub fn new(gateway: Gateway) -> Self {
            Self { gateway }
        }
    }

    impl Handler for SetGateway {
        fn on_message(&mut self, ctx: &mut Ctx<'_>, from: &str, message: &Message) {
            if message.label != AUTH_LABEL {
                return;
            }
            let id = ctx.id().to_string();
            let result = (|| {
                let mut r = FieldReader::new(&message.body);
                let customer_id = r.string()?;
                let req = GatewayRequest::from_bytes(r.field()?)?;
                r.finish()?;
                let customer = ctx.world().public_key(&customer_id)?.clone();
                self.gateway.verify(&req, &customer)
            })();
            match result {
                Ok(resp) => {
                    ctx.record(format!(
                        "set actor={id} step=gateway-verify merchant={from} decision={} outcome=accept",
                        if resp.approved { "yes" } else { "no" }
                    ));
                    ctx.send(from, Message::new(RESPONSE_LABEL, response_bytes(&resp)));
                }
                Err(e) => ctx.record(format!(
                    "set actor={id} step=gateway-verify merchant={from} outcome=reject reason={}",
                    reason_token(&e)
                )),
            }
        }
    }

    pub(crate) fn reason_token(e: &Error) -> String {
        match e {
            Error::Rejected(r) => r.as_str().to_string(),
            Error::Malformed(_) | Error::Integrity => "envelope".into(),
            _ => "error".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::rng_from_seed;
    use proptest::prelude::*;
    use std::collections::HashSet;
    use std::sync::OnceLock;

    struct Fixture {
        customer: RsaKeyPair,
        gateway: Gateway,
    }

    fn fixture() -> &'static Fixture {
        static F: OnceLock<Fixture> = OnceLock::new();
        F.get_or_init(|| {
            let mut gateway = Gateway::new("P", RsaKeyPair::generate(512, 11).unwrap(), 100_000);
            gateway.register_pan("4111111111111111");
            Fixture {
                customer: RsaKeyPair::generate(512, 10).unwrap(),
                gateway,
            }
        })
    }

    fn pi(rng: &mut crate::crypto::SimRng, amount: u64) -> PaymentInstruction {
        PaymentInstruction::new("4111111111111111", "12/27", [7; 20], amount, rng)
    }

    fn oi() -> OrderInformation {
        OrderInformation {
            description: b"two tickets to the opera".to_vec(),
            price: 4200,
            merchant_id: "M".into(),
        }
    }

    fn request(seed: u64) -> (PaymentInstruction, DualSignedRequest) {
        let f = fixture();
        let mut rng = rng_from_seed(seed);
        let p = pi(&mut rng, 4200);
        let r = build_request(&f.customer, "P", &f.gateway.keys.public(), &p, &oi(), &mut rng).unwrap();
        (p, r)
    }

    #[test]
    fn dual_signature_verifies_and_is_deterministic() {
        let f = fixture();
        let mut rng = rng_from_seed(1);
        let p = pi(&mut rng, 1);
        let ds = compute_dual_signature(&f.customer, &p, &oi());
        assert!(verify_dual_signature(
            &f.customer.public(),
            &p.digest(),
            &oi().digest(),
            &ds
        ));
        assert_eq!(ds, compute_dual_signature(&f.customer, &p, &oi()));
        let mut o2 = oi();
        o2.description[0] ^= 1;
        assert_ne!(ds, compute_dual_signature(&f.customer, &p, &o2));
    }

    #[test]
    fn honest_request_passes_both_views() {
        let f = fixture();
        let (p, req) = request(2);
        merchant_verify(&req, &f.customer.public()).unwrap();
        let g = req.to_gateway(req.oi.digest());
        let resp = f.gateway.verify(&g, &f.customer.public()).unwrap();
        assert!(resp.approved);
        assert!(resp.verify(&f.gateway.keys.public()));
        assert_eq!(resp.pi_countersignature, None);
        let opened = f.gateway.open(&g).unwrap();
        assert_eq!(opened.gateway_id, "P");
        assert_eq!(opened.pi, p);
        assert_eq!(opened.oi_hash, oi().digest());
    }

    #[test]
    fn fresh_key_per_request() {
        let f = fixture();
        let mut rng = rng_from_seed(3);
        let p = pi(&mut rng, 1);
        let a = build_request(&f.customer, "P", &f.gateway.keys.public(), &p, &oi(), &mut rng).unwrap();
        let b = build_request(&f.customer, "P", &f.gateway.keys.public(), &p, &oi(), &mut rng).unwrap();
        assert_ne!(a.wrapped_key, b.wrapped_key);
        assert_eq!(a.ds, b.ds);
    }

    #[test]
    fn merchant_rejects_tampering() {
        let f = fixture();
        let (_, req) = request(4);
        let mut t = req.clone();
        t.oi.description[3] ^= 0x20;
        assert!(matches!(
            merchant_verify(&t, &f.customer.public()),
            Err(Error::Rejected(RejectReason::BadSignature))
        ));
        let mut t = req.clone();
        let mut h = *t.pi_hash.as_bytes();
        h[0] ^= 1;
        t.pi_hash = DigestValue::from_bytes(h);
        assert!(merchant_verify(&t, &f.customer.public()).is_err());
    }

    #[test]
    fn gateway_detects_substituted_order() {
        let f = fixture();
        let (_, req) = request(5);
        let mut other = oi();
        other.price = 1;
        let g = req.to_gateway(other.digest());
        assert!(matches!(
            f.gateway.verify(&g, &f.customer.public()),
            Err(Error::Rejected(RejectReason::LinkMismatch))
        ));
    }

    #[test]
    fn gateway_rejects_envelope_for_other_gateway() {
        let f = fixture();
        let mut rng = rng_from_seed(6);
        let p = pi(&mut rng, 10);
        let req = build_request(&f.customer, "P2", &f.gateway.keys.public(), &p, &oi(), &mut rng).unwrap();
        assert!(matches!(
            f.gateway.verify(&req.to_gateway(req.oi.digest()), &f.customer.public()),
            Err(Error::Rejected(RejectReason::WrongRecipient))
        ));
    }

    #[test]
    fn authorization_rule() {
        let f = fixture();
        let mut rng = rng_from_seed(7);
        let over = pi(&mut rng, 100_001);
        let req = build_request(&f.customer, "P", &f.gateway.keys.public(), &over, &oi(), &mut rng).unwrap();
        assert!(
            !f.gateway
                .verify(&req.to_gateway(req.oi.digest()), &f.customer.public())
                .unwrap()
                .approved
        );
        let unknown = PaymentInstruction::new("5500000000000004", "01/30", [1; 20], 5, &mut rng);
        let req = build_request(&f.customer, "P", &f.gateway.keys.public(), &unknown, &oi(), &mut rng).unwrap();
        assert!(
            !f.gateway
                .verify(&req.to_gateway(req.oi.digest()), &f.customer.public())
                .unwrap()
                .approved
        );
    }

    #[test]
    fn views_do_not_leak_other_half() {
        let f = fixture();
        let (p, req) = request(8);
        let mv = req.merchant_view();
        assert!(!mv.windows(p.pan.len()).any(|w| w == p.pan.as_bytes()));
        let gv = f.gateway.view(&req.to_gateway(req.oi.digest())).unwrap();
        let desc = &req.oi.description;
        assert!(!gv.windows(desc.len()).any(|w| w == desc.as_slice()));
    }

    #[test]
    fn wire_forms_round_trip() {
        let (_, req) = request(9);
        assert_eq!(DualSignedRequest::from_bytes(&req.to_bytes()).unwrap(), req);
        let g = req.to_gateway(req.oi.digest());
        assert_eq!(GatewayRequest::from_bytes(&g.to_bytes()).unwrap(), g);
        assert!(DualSignedRequest::from_bytes(&req.to_bytes()[1..]).is_err());
    }

    #[test]
    fn countersignatures_verify() {
        let f = fixture();
        let (p, req) = request(10);
        let mut g = Gateway::new("P", f.gateway.keys.clone(), 100_000);
        g.countersign = true;
        let resp = g
            .verify(&req.to_gateway(req.oi.digest()), &f.customer.public())
            .unwrap();
        assert!(f
            .gateway
            .keys
            .public()
            .verify(&p.encode(), &resp.pi_countersignature.unwrap()));
        let m = RsaKeyPair::generate(512, 12).unwrap();
        assert!(m.public().verify(&oi().encode(), &countersign_oi(&m, &oi())));
    }

    #[test]
    fn randomized_hash_unlinks_same_pan() {
        let mut rng = rng_from_seed(11);
        let mut seen = HashSet::new();
        for _ in 0..1000 {
            assert!(seen.insert(randomized_pi_hash(&pi(&mut rng, 5))));
        }
        let a = pi(&mut rng, 5);
        assert_eq!(randomized_pi_hash(&a), randomized_pi_hash(&a.clone()));
    }

    proptest! {
        #[test]
        fn pi_and_oi_encodings_round_trip(
            pan in "[0-9]{12,19}",
            amount: u64,
            desc in proptest::collection::vec(any::<u8>(), 0..64),
            price: u64,
            secret: [u8; 20],
            nonce: [u8; 20],
        ) {
            let p = PaymentInstruction { pan, card_expiry: "09/29".into(), pan_secret: secret, ex_nonce: nonce, amount };
            prop_assert_eq!(PaymentInstruction::decode(&p.encode()).unwrap(), p);
            let o = OrderInformation { description: desc, price, merchant_id: "m".into() };
            prop_assert_eq!(OrderInformation::decode(&o.encode()).unwrap(), o);
        }
    }
}
