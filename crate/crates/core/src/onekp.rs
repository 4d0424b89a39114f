//! 1KP-style payment flow.
//!
//! ```text
//! C -> M  Initiate     id_c, salt_c
//! M -> C  Invoice      id_m, tr_m = (tid_m, date, nonce_m)
//! C -> M  Payment      tid_m, E_A(price, PI, r_c, COM)
//! M -> A  AuthRequest  id_m, tr_m, price, id_c, h_K(salt_c, desc), E_A(...)
//! A -> M  AuthResponse decision, tr_m, COM, D_A(decision, COM, tr_m), CERT_A
//! M -> C  AuthResponse (forwarded)
//! ```
//!
//! `COM = h(price, id_m, tr_m, id_c, h_K(salt_c, desc))`. Price and
//! description are agreed before Initiate. Every message is a canonical
//! length-prefixed record.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use num_bigint::BigUint;
use rand::Rng;

use crate::crypto::{
    keyed_hash, pk_decrypt, pk_encrypt, Certificate, DigestValue, HybridEnvelope, PublicKey, RsaKeyPair,
};
use crate::encoding::{Canonical, FieldReader};
use crate::error::{Error, RejectReason, Result};
use crate::setcore::PaymentInstruction;

pub const DEFAULT_WINDOW_SECS: u64 = 3600;
pub const TID_LEN: usize = 8;
pub const NONCE_LEN: usize = 16;
pub const SALT_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrM {
    pub tid_m: [u8; TID_LEN],
    /// Seconds on the scenario clock.
    pub date: u64,
    pub nonce_m: [u8; NONCE_LEN],
}

impl TrM {
    pub fn encode(&self) -> Vec<u8> {
        Canonical::new()
            .field(self.tid_m)
            .u64(self.date)
            .field(self.nonce_m)
            .finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = FieldReader::new(bytes);
        let t = Self {
            tid_m: r.array()?,
            date: r.u64()?,
            nonce_m: r.array()?,
        };
        r.finish()?;
        Ok(t)
    }
}

/// The five per-transaction values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransactionFreshness {
    pub tr_m: TrM,
    pub salt_c: [u8; SALT_LEN],
    pub r_c: [u8; 16],
}

pub fn keyed_desc(salt_c: &[u8; SALT_LEN], desc: &[u8]) -> DigestValue {
    keyed_hash(salt_c, desc).expect("salt length meets the keyed-hash minimum")
}

pub fn compute_com(price: u64, id_m: &str, tr_m: &TrM, id_c: &str, keyed_desc: &DigestValue) -> DigestValue {
    crate::crypto::hash(
        &Canonical::new()
            .u64(price)
            .str(id_m)
            .field(tr_m.encode())
            .str(id_c)
            .field(keyed_desc)
            .finish(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Initiate {
    pub id_c: String,
    pub salt_c: [u8; SALT_LEN],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Invoice {
    pub id_m: String,
    pub tr_m: TrM,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payment {
    pub tid_m: [u8; TID_LEN],
    pub envelope: Vec<u8>,
}

/// Plaintext inside the payment envelope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaymentContents {
    pub price: u64,
    pub pi: PaymentInstruction,
    pub r_c: [u8; 16],
    pub com: DigestValue,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthRequest {
    pub id_m: String,
    pub tr_m: TrM,
    pub price: u64,
    pub id_c: String,
    pub keyed_desc: DigestValue,
    pub envelope: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthResponse {
    pub approved: bool,
    pub tr_m: TrM,
    pub com: DigestValue,
    pub signature: BigUint,
    pub cert_a: Certificate,
}

impl Initiate {
    pub fn encode(&self) -> Vec<u8> {
        Canonical::new().str(&self.id_c).field(self.salt_c).finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = FieldReader::new(bytes);
        let m = Self {
            id_c: r.string()?,
            salt_c: r.array()?,
        };
        r.finish()?;
        Ok(m)
    }
}

impl Invoice {
    pub fn encode(&self) -> Vec<u8> {
        Canonical::new().str(&self.id_m).field(self.tr_m.encode()).finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = FieldReader::new(bytes);
        let m = Self {
            id_m: r.string()?,
            tr_m: TrM::decode(r.field()?)?,
        };
        r.finish()?;
        Ok(m)
    }
}

impl Payment {
    pub fn encode(&self) -> Vec<u8> {
        Canonical::new().field(self.tid_m).field(&self.envelope).finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = FieldReader::new(bytes);
        let m = Self {
            tid_m: r.array()?,
            envelope: r.field()?.to_vec(),
        };
        r.finish()?;
        Ok(m)
    }
}

impl PaymentContents {
    pub fn encode(&self) -> Vec<u8> {
        Canonical::new()
            .u64(self.price)
            .field(self.pi.encode())
            .field(self.r_c)
            .field(self.com)
            .finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = FieldReader::new(bytes);
        let m = Self {
            price: r.u64()?,
            pi: PaymentInstruction::decode(r.field()?)?,
            r_c: r.array()?,
            com: DigestValue::from_slice(r.field()?)?,
        };
        r.finish()?;
        Ok(m)
    }
}

impl AuthRequest {
    pub fn encode(&self) -> Vec<u8> {
        Canonical::new()
            .str(&self.id_m)
            .field(self.tr_m.encode())
            .u64(self.price)
            .str(&self.id_c)
            .field(self.keyed_desc)
            .field(&self.envelope)
            .finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = FieldReader::new(bytes);
        let m = Self {
            id_m: r.string()?,
            tr_m: TrM::decode(r.field()?)?,
            price: r.u64()?,
            id_c: r.string()?,
            keyed_desc: DigestValue::from_slice(r.field()?)?,
            envelope: r.field()?.to_vec(),
        };
        r.finish()?;
        Ok(m)
    }

    /// Copy with one COM input altered.
    pub fn tampered(&self, field: ComField) -> Self {
        let mut t = self.clone();
        match field {
            ComField::Price => t.price += 1,
            ComField::IdM => t.id_m.push('x'),
            ComField::TrM => t.tr_m.tid_m[0] ^= 1,
            ComField::IdC => t.id_c.push('x'),
            ComField::KeyedDesc => {
                let mut b = *t.keyed_desc.as_bytes();
                b[0] ^= 1;
                t.keyed_desc = DigestValue::from_bytes(b);
            }
        }
        t
    }
}

/// The five inputs of COM that travel in an AuthRequest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ComField {
    Price,
    IdM,
    TrM,
    IdC,
    KeyedDesc,
}

impl ComField {
    pub const ALL: [ComField; 5] = [
        ComField::Price,
        ComField::IdM,
        ComField::TrM,
        ComField::IdC,
        ComField::KeyedDesc,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "price" => ComField::Price,
            "id_m" => ComField::IdM,
            "tr_m" => ComField::TrM,
            "id_c" => ComField::IdC,
            "keyed_desc" => ComField::KeyedDesc,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ComField::Price => "price",
            ComField::IdM => "id_m",
            ComField::TrM => "tr_m",
            ComField::IdC => "id_c",
            ComField::KeyedDesc => "keyed_desc",
        }
    }
}

impl AuthResponse {
    fn signed_bytes(approved: bool, com: &DigestValue, tr_m: &TrM) -> Vec<u8> {
        Canonical::new()
            .field([approved as u8])
            .field(com)
            .field(tr_m.encode())
            .finish()
    }

    pub fn encode(&self) -> Vec<u8> {
        Canonical::new()
            .field([self.approved as u8])
            .field(self.tr_m.encode())
            .field(self.com)
            .field(self.signature.to_bytes_be())
            .field(self.cert_a.to_cert_file())
            .finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = FieldReader::new(bytes);
        let [approved] = r.array::<1>()?;
        let m = Self {
            approved: approved == 1,
            tr_m: TrM::decode(r.field()?)?,
            com: DigestValue::from_slice(r.field()?)?,
            signature: BigUint::from_bytes_be(r.field()?),
            cert_a: Certificate::from_cert_file(&r.string()?)?,
        };
        r.finish()?;
        Ok(m)
    }

    /// Checks CERT_A against the CA and the signature against CERT_A.
    pub fn verify(&self, acquirer_id: &str, ca_public: &PublicKey) -> bool {
        self.cert_a.subject_id == acquirer_id
            && self.cert_a.verify(ca_public)
            && self.cert_a.subject_public_key.verify(
                &Self::signed_bytes(self.approved, &self.com, &self.tr_m),
                &self.signature,
            )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxnState {
    Init,
    Invoiced,
    Paid,
    Authorized { approved: bool },
}

impl TxnState {
    fn rank(&self) -> u8 {
        match self {
            TxnState::Init => 0,
            TxnState::Invoiced => 1,
            TxnState::Paid => 2,
            TxnState::Authorized { .. } => 3,
        }
    }

    fn advance(&mut self, to: TxnState) -> Result<()> {
        if to.rank() != self.rank() + 1 {
            return Err(Error::state(format!("cannot move from {self:?} to {to:?}")));
        }
        *self = to;
        Ok(())
    }
}

fn random<const N: usize, R: Rng + ?Sized>(rng: &mut R) -> [u8; N] {
    let mut b = [0u8; N];
    rng.fill(&mut b[..]);
    b
}

/// Customer side of one transaction.
#[derive(Debug, Clone)]
pub struct CustomerTxn {
    pub id_c: String,
    pub salt_c: [u8; SALT_LEN],
    pub r_c: [u8; 16],
    pub price: u64,
    pub desc: Vec<u8>,
    pub pi: PaymentInstruction,
    pub invoice: Option<Invoice>,
    pub com: Option<DigestValue>,
    pub state: TxnState,
}

impl CustomerTxn {
    /// Starts a transaction with a fresh one-time pseudonym.
    pub fn start<R: Rng + ?Sized>(price: u64, desc: &[u8], pi: PaymentInstruction, rng: &mut R) -> (Self, Initiate) {
        let id_c = format!("C-{}", hex::encode(random::<8, R>(rng)));
        let salt_c = random(rng);
        let r_c = random(rng);
        let txn = Self {
            id_c: id_c.clone(),
            salt_c,
            r_c,
            price,
            desc: desc.to_vec(),
            pi,
            invoice: None,
            com: None,
            state: TxnState::Init,
        };
        (txn, Initiate { id_c, salt_c })
    }

    pub fn on_invoice<R: Rng + ?Sized>(
        &mut self,
        invoice: &Invoice,
        acquirer: &PublicKey,
        rng: &mut R,
    ) -> Result<Payment> {
        self.state.advance(TxnState::Invoiced)?;
        let com = compute_com(
            self.price,
            &invoice.id_m,
            &invoice.tr_m,
            &self.id_c,
            &keyed_desc(&self.salt_c, &self.desc),
        );
        let contents = PaymentContents {
            price: self.price,
            pi: self.pi.clone(),
            r_c: self.r_c,
            com,
        };
        let envelope = pk_encrypt(acquirer, &contents.encode(), rng)?.to_bytes();
        self.invoice = Some(invoice.clone());
        self.com = Some(com);
        self.state.advance(TxnState::Paid)?;
        Ok(Payment {
            tid_m: invoice.tr_m.tid_m,
            envelope,
        })
    }

    /// Verifies the forwarded response; returns the decision.
    pub fn on_response(&mut self, response: &AuthResponse, acquirer_id: &str, ca_public: &PublicKey) -> Result<bool> {
        let invoice = self.invoice.as_ref().ok_or_else(|| Error::state("no invoice yet"))?;
        if response.tr_m != invoice.tr_m || Some(response.com) != self.com {
            return Err(Error::Rejected(RejectReason::ComMismatch));
        }
        if !response.verify(acquirer_id, ca_public) {
            return Err(Error::Rejected(RejectReason::BadSignature));
        }
        self.state.advance(TxnState::Authorized {
            approved: response.approved,
        })?;
        Ok(response.approved)
    }
}

#[derive(Debug, Clone)]
pub struct MerchantTxn {
    pub customer: String,
    pub id_c: String,
    pub salt_c: [u8; SALT_LEN],
    pub price: u64,
    pub desc: Vec<u8>,
    pub tr_m: TrM,
    pub com: DigestValue,
    pub state: TxnState,
}

/// Merchant state: one entry per TID_M.
#[derive(Debug, Clone)]
pub struct Merchant {
    pub id: String,
    pub txns: BTreeMap<[u8; TID_LEN], MerchantTxn>,
    used: HashSet<([u8; TID_LEN], [u8; NONCE_LEN])>,
    /// Alters one COM input in every AuthRequest it sends.
    pub tamper: Option<ComField>,
}

impl Merchant {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            txns: BTreeMap::new(),
            used: HashSet::new(),
            tamper: None,
        }
    }

    /// Issues an invoice. Replayed Initiates just open new transactions.
    pub fn on_initiate<R: Rng + ?Sized>(
        &mut self,
        customer: &str,
        initiate: &Initiate,
        price: u64,
        desc: &[u8],
        now: u64,
        rng: &mut R,
    ) -> Invoice {
        let tr_m = loop {
            let t = TrM {
                tid_m: random(rng),
                date: now,
                nonce_m: random(rng),
            };
            if !self.txns.contains_key(&t.tid_m) && self.used.insert((t.tid_m, t.nonce_m)) {
                break t;
            }
        };
        let com = compute_com(
            price,
            &self.id,
            &tr_m,
            &initiate.id_c,
            &keyed_desc(&initiate.salt_c, desc),
        );
        self.txns.insert(
            tr_m.tid_m,
            MerchantTxn {
                customer: customer.to_string(),
                id_c: initiate.id_c.clone(),
                salt_c: initiate.salt_c,
                price,
                desc: desc.to_vec(),
                tr_m,
                com,
                state: TxnState::Invoiced,
            },
        );
        Invoice {
            id_m: self.id.clone(),
            tr_m,
        }
    }

    pub fn on_payment(&mut self, payment: &Payment) -> Result<AuthRequest> {
        let txn = self
            .txns
            .get_mut(&payment.tid_m)
            .ok_or_else(|| Error::state("payment for unknown transaction"))?;
        if txn.state != TxnState::Invoiced {
            return Err(Error::Rejected(RejectReason::Replay));
        }
        txn.state.advance(TxnState::Paid)?;
        let req = AuthRequest {
            id_m: self.id.clone(),
            tr_m: txn.tr_m,
            price: txn.price,
            id_c: txn.id_c.clone(),
            keyed_desc: keyed_desc(&txn.salt_c, &txn.desc),
            envelope: payment.envelope.clone(),
        };
        Ok(match self.tamper {
            Some(f) => req.tampered(f),
            None => req,
        })
    }

    /// Records the acquirer's answer; returns the customer to forward it to.
    pub fn on_response(&mut self, response: &AuthResponse) -> Result<String> {
        let txn = self
            .txns
            .get_mut(&response.tr_m.tid_m)
            .ok_or_else(|| Error::state("response for unknown transaction"))?;
        txn.state.advance(TxnState::Authorized {
            approved: response.approved,
        })?;
        Ok(txn.customer.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheVerdict {
    Fresh,
    Replayed,
    Stale,
}

type ReplayKey = (String, [u8; TID_LEN], [u8; NONCE_LEN]);

/// Seen `(id_m, tid_m, nonce_m)` tuples and R_C values within the window.
#[derive(Debug, Clone)]
pub struct ReplayCache {
    pub window: u64,
    seen: BTreeMap<ReplayKey, u64>,
    seen_r_c: BTreeMap<[u8; 16], u64>,
}

impl Default for ReplayCache {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW_SECS)
    }
}

impl ReplayCache {
    pub fn new(window: u64) -> Self {
        Self {
            window,
            seen: BTreeMap::new(),
            seen_r_c: BTreeMap::new(),
        }
    }

    pub fn peek(&self, id_m: &str, tr_m: &TrM, r_c: Option<&[u8; 16]>, now: u64) -> CacheVerdict {
        if now.abs_diff(tr_m.date) > self.window {
            return CacheVerdict::Stale;
        }
        let key = (id_m.to_string(), tr_m.tid_m, tr_m.nonce_m);
        if self.seen.contains_key(&key) || r_c.is_some_and(|r| self.seen_r_c.contains_key(r)) {
            return CacheVerdict::Replayed;
        }
        CacheVerdict::Fresh
    }

    pub fn record(&mut self, id_m: &str, tr_m: &TrM, r_c: Option<&[u8; 16]>, now: u64) {
        let horizon = now.saturating_sub(self.window);
        self.seen.retain(|_, d| *d >= horizon);
        self.seen_r_c.retain(|_, d| *d >= horizon);
        self.seen
            .insert((id_m.to_string(), tr_m.tid_m, tr_m.nonce_m), tr_m.date);
        if let Some(r) = r_c {
            self.seen_r_c.insert(*r, tr_m.date);
        }
    }

    /// Check-and-record in one step.
    pub fn check(&mut self, id_m: &str, tr_m: &TrM, r_c: Option<&[u8; 16]>, now: u64) -> CacheVerdict {
        let v = self.peek(id_m, tr_m, r_c, now);
        if v == CacheVerdict::Fresh {
            self.record(id_m, tr_m, r_c, now);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

pub struct Acquirer {
    pub id: String,
    pub keys: RsaKeyPair,
    pub cert: Certificate,
    pub registry: BTreeSet<String>,
    pub limit: u64,
    pub cache: ReplayCache,
}

/// What the acquirer learned while authorizing; used by tests and transcripts.
#[derive(Debug, Clone)]
pub struct Authorization {
    pub response: AuthResponse,
    pub contents: PaymentContents,
    pub recomputed_com: DigestValue,
}

impl Acquirer {
    pub fn new(id: impl Into<String>, keys: RsaKeyPair, cert: Certificate, limit: u64) -> Self {
        Self {
            id: id.into(),
            keys,
            cert,
            registry: BTreeSet::new(),
            limit,
            cache: ReplayCache::default(),
        }
    }

    pub fn open_payment(&self, envelope: &[u8]) -> Result<PaymentContents> {
        let reject = |_| Error::Rejected(RejectReason::Envelope);
        let env = HybridEnvelope::from_bytes(envelope, self.keys.public().size()).map_err(reject)?;
        PaymentContents::decode(&pk_decrypt(&self.keys, &env).map_err(reject)?).map_err(reject)
    }

    /// Decrypt, freshness, COM linkage, record, decide, sign.
    pub fn authorize(&mut self, req: &AuthRequest, now: u64) -> Result<Authorization> {
        let contents = self.open_payment(&req.envelope)?;
        match self.cache.peek(&req.id_m, &req.tr_m, Some(&contents.r_c), now) {
            CacheVerdict::Stale => return Err(Error::Rejected(RejectReason::Stale)),
            CacheVerdict::Replayed => return Err(Error::Rejected(RejectReason::Replay)),
            CacheVerdict::Fresh => {}
        }
        let recomputed = compute_com(req.price, &req.id_m, &req.tr_m, &req.id_c, &req.keyed_desc);
        if recomputed != contents.com || contents.price != req.price {
            return Err(Error::Rejected(RejectReason::ComMismatch));
        }
        self.cache.record(&req.id_m, &req.tr_m, Some(&contents.r_c), now);
        let approved = self.registry.contains(&contents.pi.pan)
            && contents.pi.amount == contents.price
            && contents.price <= self.limit;
        let signature = self
            .keys
            .sign(&AuthResponse::signed_bytes(approved, &contents.com, &req.tr_m));
        Ok(Authorization {
            response: AuthResponse {
                approved,
                tr_m: req.tr_m,
                com: contents.com,
                signature,
                cert_a: self.cert.clone(),
            },
            recomputed_com: recomputed,
            contents,
        })
    }
}

pub mod sim {
    //! Customer, merchant, and acquirer actors.
    //!
    //! Schedule trigger: `<tick> <customer> <merchant> buy:<price>:<description>`.
    //! The customer first sends the agreed price and description to the
    //! merchant (the out-of-band negotiation), then Initiate.

    use std::collections::VecDeque;

    use super::*;
    use crate::setcore::sim::{parse_buy, reason_token};
    use crate::setcore::PAN_SECRET_LEN;
    use crate::simnet::{Ctx, Handler, Message, MessageRef};

    pub const NEGOTIATE: &str = "1kp-negotiate";
    pub const INITIATE: &str = "1kp-initiate";
    pub const INVOICE: &str = "1kp-invoice";
    pub const PAYMENT: &str = "1kp-payment";
    pub const AUTH_REQUEST: &str = "1kp-auth-request";
    pub const AUTH_RESPONSE: &str = "1kp-auth-response";

    pub struct OneKpCustomer {
        pan: String,
        expiry: String,
        pan_secret: [u8; PAN_SECRET_LEN],
        acquirer_id: String,
        txns: BTreeMap<String, CustomerTxn>,
    }

    impl OneKpCustomer {
        pub fn new(pan: &str, expiry: &str, pan_secret: [u8; PAN_SECRET_LEN], acquirer_id: &str) -> Self {
            Self {
                pan: pan.into(),
                expiry: expiry.into(),
                pan_secret,
                acquirer_id: acquirer_id.into(),
                txns: BTreeMap::new(),
            }
        }
    }

    impl Handler for OneKpCustomer {
        fn on_trigger(&mut self, ctx: &mut Ctx<'_>, to: &str, message: &MessageRef) -> Result<()> {
            let (price, desc) = parse_buy(message)?;
            let pi = PaymentInstruction::new(&self.pan, &self.expiry, self.pan_secret, price, ctx.rng());
            let (txn, initiate) = CustomerTxn::start(price, desc.as_bytes(), pi, ctx.rng());
            let negotiation = Canonical::new().u64(price).str(&desc).finish();
            ctx.send(to, Message::new(NEGOTIATE, negotiation));
            ctx.send(to, Message::new(INITIATE, initiate.encode()));
            let id = ctx.id().to_string();
            ctx.record(format!(
                "onekp actor={id} step=initiate id_c={} merchant={to}",
                txn.id_c
            ));
            self.txns.insert(txn.id_c.clone(), txn);
            Ok(())
        }

        fn on_message(&mut self, ctx: &mut Ctx<'_>, from: &str, message: &Message) {
            let id = ctx.id().to_string();
            match message.label.as_str() {
                INVOICE => {
                    let result = (|| {
                        let mut r = FieldReader::new(&message.body);
                        let id_c = r.string()?;
                        let invoice = Invoice::decode(r.field()?)?;
                        r.finish()?;
                        let acquirer = ctx.world().public_key(&self.acquirer_id)?.clone();
                        let txn = self
                            .txns
                            .get_mut(&id_c)
                            .ok_or_else(|| Error::state("invoice for unknown pseudonym"))?;
                        let payment = txn.on_invoice(&invoice, &acquirer, ctx.rng())?;
                        Ok::<_, Error>((id_c, txn.com.unwrap(), payment))
                    })();
                    match result {
                        Ok((id_c, com, payment)) => {
                            ctx.record(format!(
                                "onekp actor={id} step=payment id_c={id_c} com={}",
                                com.to_hex()
                            ));
                            ctx.send(from, Message::new(PAYMENT, payment.encode()));
                        }
                        Err(e) => ctx.record(format!(
                            "onekp actor={id} step=payment outcome=reject reason={}",
                            reason_token(&e)
                        )),
                    }
                }
                AUTH_RESPONSE => {
                    let ca = ctx.world().ca_public.clone();
                    let result = AuthResponse::decode(&message.body).and_then(|resp| {
                        let ca = ca.ok_or_else(|| Error::state("no CA in world"))?;
                        let txn = self
                            .txns
                            .values_mut()
                            .find(|t| t.invoice.as_ref().is_some_and(|i| i.tr_m == resp.tr_m))
                            .ok_or_else(|| Error::state("response for unknown transaction"))?;
                        let approved = txn.on_response(&resp, &self.acquirer_id, &ca)?;
                        Ok((txn.id_c.clone(), approved))
                    });
                    match result {
                        Ok((id_c, approved)) => ctx.record(format!(
                            "onekp actor={id} step=auth-response id_c={id_c} auth={} verified=true outcome=accept",
                            if approved { "yes" } else { "no" }
                        )),
                        Err(e) => ctx.record(format!(
                            "onekp actor={id} step=auth-response verified=false outcome=reject reason={}",
                            reason_token(&e)
                        )),
                    }
                }
                _ => {}
            }
        }
    }

    pub struct OneKpMerchant {
        merchant: Merchant,
        acquirer_id: String,
        negotiations: BTreeMap<String, VecDeque<(u64, Vec<u8>)>>,
    }

    impl OneKpMerchant {
        pub fn new(merchant: Merchant, acquirer_id: &str) -> Self {
            Self {
                merchant,
                acquirer_id: acquirer_id.into(),
                negotiations: BTreeMap::new(),
            }
        }
    }

    impl Handler for OneKpMerchant {
        fn on_message(&mut self, ctx: &mut Ctx<'_>, from: &str, message: &Message) {
            let id = ctx.id().to_string();
            match message.label.as_str() {
                NEGOTIATE => {
                    let mut r = FieldReader::new(&message.body);
                    if let (Ok(price), Ok(desc)) = (r.u64(), r.field()) {
                        self.negotiations
                            .entry(from.to_string())
                            .or_default()
                            .push_back((price, desc.to_vec()));
                    }
                }
                INITIATE => {
                    let Ok(initiate) = Initiate::decode(&message.body) else {
                        ctx.record(format!("onekp actor={id} step=invoice outcome=reject reason=envelope"));
                        return;
                    };
                    let Some((price, desc)) = self.negotiations.get_mut(from).and_then(VecDeque::pop_front) else {
                        ctx.record(format!(
                            "onekp actor={id} step=invoice outcome=reject reason=no-negotiation"
                        ));
                        return;
                    };
                    let now = ctx.clock();
                    let invoice = self.merchant.on_initiate(from, &initiate, price, &desc, now, ctx.rng());
                    let com = self.merchant.txns[&invoice.tr_m.tid_m].com;
                    ctx.record(format!(
                        "onekp actor={id} step=invoice id_c={} tid={} com={}",
                        initiate.id_c,
                        hex::encode(invoice.tr_m.tid_m),
                        com.to_hex()
                    ));
                    let body = Canonical::new().str(&initiate.id_c).field(invoice.encode()).finish();
                    ctx.send(from, Message::new(INVOICE, body));
                }
                PAYMENT => match Payment::decode(&message.body).and_then(|p| self.merchant.on_payment(&p)) {
                    Ok(req) => {
                        if let Some(f) = self.merchant.tamper {
                            ctx.record(format!("adversary action=tamper-com field={} actor={id}", f.as_str()));
                        }
                        ctx.record(format!(
                            "onekp actor={id} step=auth-request tid={}",
                            hex::encode(req.tr_m.tid_m)
                        ));
                        ctx.send(self.acquirer_id.clone(), Message::new(AUTH_REQUEST, req.encode()));
                    }
                    Err(e) => ctx.record(format!(
                        "onekp actor={id} step=payment outcome=reject reason={}",
                        reason_token(&e)
                    )),
                },
                AUTH_RESPONSE => {
                    match AuthResponse::decode(&message.body).and_then(|r| self.merchant.on_response(&r)) {
                        Ok(customer) => ctx.send(customer, message.clone()),
                        Err(e) => ctx.record(format!(
                            "onekp actor={id} step=forward outcome=reject reason={}",
                            reason_token(&e)
                        )),
                    }
                }
                _ => {}
            }
        }
    }

    pub struct OneKpAcquirer {
        acquirer: Acquirer,
    }

    impl OneKpAcquirer {
        pub fn new(acquirer: Acquirer) -> Self {
            Self { acquirer }
        }
    }

    impl Handler for OneKpAcquirer {
        fn on_message(&mut self, ctx: &mut Ctx<'_>, from: &str, message: &Message) {
            if message.label != AUTH_REQUEST {
                return;
            }
            let id = ctx.id().to_string();
            let now = ctx.clock();
            let req = AuthRequest::decode(&message.body);
            let tid = req.as_ref().map(|r| hex::encode(r.tr_m.tid_m)).unwrap_or_default();
            match req.and_then(|r| self.acquirer.authorize(&r, now)) {
                Ok(a) => {
                    ctx.record(format!(
                        "onekp actor={id} step=auth-response tid={tid} decision={} com={} outcome=accept",
                        if a.response.approved { "yes" } else { "no" },
                        a.response.com.to_hex()
                    ));
                    ctx.send(from, Message::new(AUTH_RESPONSE, a.response.encode()));
                }
                Err(e) => ctx.record(format!(
                    "onekp actor={id} step=auth-response tid={tid} outcome=reject reason={}",
                    reason_token(&e)
                )),
            }
        }
    }
}
