//! First Virtual style payments: VPIN pseudonyms, e-mail-like confirmation,
//! revocation, and a double-entry ledger.
//!
//! Steps: 1 order, 2–3 VPIN check, 4 delivery, 5 report, 6 confirmation
//! query, 7 answer, 8a/8b settlement, 9 clearing. Settlement moves value
//! customer → `fv:settlement` → merchant in one atomic batch; clearing is a
//! record-only entry between the two banks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigUint;
use rand::Rng;

use crate::crypto::{PublicKey, RsaKeyPair};
use crate::encoding::Canonical;
use crate::error::{Error, Result};

pub const VPIN_LEN: usize = 16;
pub const DEFAULT_CONFIRM_TIMEOUT: u64 = 10;
pub const DEFAULT_LARGE_THRESHOLD: u64 = 100_000;
pub const SETTLEMENT_ACCOUNT: &str = "fv:settlement";
pub const CUSTOMER_BANK: &str = "bank:customer";
pub const MERCHANT_BANK: &str = "bank:merchant";

const ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VpinStatus {
    Active,
    Revoked,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vpin {
    pub value: String,
    pub holder: String,
    /// Provider-internal handle for the real card number.
    pub card_ref: String,
    pub status: VpinStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FvState {
    Ordered,
    VpinChecked,
    Delivered,
    Reported,
    AwaitingConfirm,
    Settled,
    Declined,
    FraudAborted,
}

impl FvState {
    pub fn is_final(&self) -> bool {
        matches!(self, FvState::Settled | FvState::Declined | FvState::FraudAborted)
    }

    fn name(&self) -> &'static str {
        match self {
            FvState::Ordered => "Ordered",
            FvState::VpinChecked => "VpinChecked",
            FvState::Delivered => "Delivered",
            FvState::Reported => "Reported",
            FvState::AwaitingConfirm => "AwaitingConfirm",
            FvState::Settled => "Settled",
            FvState::Declined => "Declined",
            FvState::FraudAborted => "FraudAborted",
        }
    }
}

impl fmt::Display for FvState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Answer {
    Yes,
    No,
    Fraud,
}

impl Answer {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "yes" => Answer::Yes,
            "no" => Answer::No,
            "fraud" => Answer::Fraud,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Answer::Yes => "yes",
            Answer::No => "no",
            Answer::Fraud => "fraud",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FvTransaction {
    pub id: String,
    pub customer: String,
    pub merchant: String,
    pub vpin: String,
    pub amount: u64,
    pub state: FvState,
    /// Every state the transaction has been in, in order.
    pub history: Vec<FvState>,
    pub confirm_deadline: Option<u64>,
}

impl FvTransaction {
    fn advance(&mut self, from: &[FvState], to: FvState) -> Result<()> {
        if !from.contains(&self.state) {
            return Err(Error::state(format!(
                "transaction {} cannot move from {} to {to}",
                self.id, self.state
            )));
        }
        self.state = to;
        self.history.push(to);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    /// Moves value.
    Transfer,
    /// Recorded only; balances do not change.
    Clearing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEntry {
    pub step: &'static str,
    pub debit: String,
    pub credit: String,
    pub amount: u64,
    pub txn: String,
    pub kind: EntryKind,
}

impl fmt::Display for LedgerEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "fv ledger step={} txn={} debit={} credit={} amount={}{}",
            self.step,
            self.txn,
            self.debit,
            self.credit,
            self.amount,
            if self.kind == EntryKind::Clearing {
                " record-only"
            } else {
                ""
            }
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ledger {
    accounts: BTreeMap<String, i64>,
    entries: Vec<LedgerEntry>,
}

/// Entries staged for one atomic commit.
#[derive(Debug, Default)]
pub struct LedgerBatch {
    entries: Vec<LedgerEntry>,
}

impl LedgerBatch {
    pub fn push(&mut self, entry: LedgerEntry) {
        self.entries.push(entry);
    }
}

impl Ledger {
    pub fn open(&mut self, account: &str, balance: i64) {
        self.accounts.entry(account.to_string()).or_insert(balance);
    }

    pub fn balance(&self, account: &str) -> Option<i64> {
        self.accounts.get(account).copied()
    }

    pub fn accounts(&self) -> &BTreeMap<String, i64> {
        &self.accounts
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn total(&self) -> i64 {
        self.accounts.values().sum()
    }

    pub fn entries_for<'a>(&'a self, txn: &'a str) -> impl Iterator<Item = &'a LedgerEntry> + 'a {
        self.entries.iter().filter(move |e| e.txn == txn)
    }

    /// Applies every staged entry, or none of them if `build` fails.
    pub fn atomic<T>(&mut self, build: impl FnOnce(&mut LedgerBatch) -> Result<T>) -> Result<T> {
        let mut batch = LedgerBatch::default();
        let out = build(&mut batch)?;
        for e in &batch.entries {
            for acct in [&e.debit, &e.credit] {
                if !self.accounts.contains_key(acct) {
                    return Err(Error::invalid(format!("no ledger account `{acct}`")));
                }
            }
        }
        for e in batch.entries {
            if e.kind == EntryKind::Transfer {
                let amount = i64::try_from(e.amount).map_err(|_| Error::invalid("amount overflows ledger"))?;
                *self.accounts.get_mut(&e.debit).unwrap() -= amount;
                *self.accounts.get_mut(&e.credit).unwrap() += amount;
            }
            self.entries.push(e);
        }
        Ok(out)
    }
}

/// What the provider tells the merchant at step 3. Above the large-shipment
/// threshold it carries the provider's signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VpinAuthorization {
    pub txn: String,
    pub vpin: String,
    pub amount: u64,
    pub valid: bool,
    pub signature: Option<BigUint>,
}

impl VpinAuthorization {
    fn signed_bytes(&self) -> Vec<u8> {
        Canonical::new()
            .str("fv-vpin-auth")
            .str(&self.txn)
            .str(&self.vpin)
            .u64(self.amount)
            .field([self.valid as u8])
            .finish()
    }

    /// Merchant-side check: large amounts need a valid provider signature.
    pub fn acceptable(&self, provider: &PublicKey, threshold: u64) -> bool {
        if !self.valid {
            return false;
        }
        if self.amount <= threshold {
            return true;
        }
        self.signature
            .as_ref()
            .is_some_and(|s| provider.verify(&self.signed_bytes(), s))
    }
}

/// Test hook: fail the settlement batch after staging 8a.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    AbortAfter8a,
}

pub struct Provider {
    pub id: String,
    keys: RsaKeyPair,
    customers: BTreeSet<String>,
    merchants: BTreeSet<String>,
    cards: BTreeMap<String, String>,
    vpins: BTreeMap<String, Vpin>,
    ledger: Ledger,
    txns: BTreeMap<String, FvTransaction>,
    events: Vec<String>,
    pub confirm_timeout: u64,
    pub large_threshold: u64,
    pub fault: Fault,
}

impl fmt::Debug for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Provider")
            .field("id", &self.id)
            .field("vpins", &self.vpins.len())
            .field("txns", &self.txns.len())
            .finish_non_exhaustive()
    }
}

impl Provider {
    pub fn new(id: impl Into<String>, keys: RsaKeyPair) -> Self {
        let mut ledger = Ledger::default();
        for acct in [SETTLEMENT_ACCOUNT, CUSTOMER_BANK, MERCHANT_BANK] {
            ledger.open(acct, 0);
        }
        Self {
            id: id.into(),
            keys,
            customers: BTreeSet::new(),
            merchants: BTreeSet::new(),
            cards: BTreeMap::new(),
            vpins: BTreeMap::new(),
            ledger,
            txns: BTreeMap::new(),
            events: Vec::new(),
            confirm_timeout: DEFAULT_CONFIRM_TIMEOUT,
            large_threshold: DEFAULT_LARGE_THRESHOLD,
            fault: Fault::None,
        }
    }

    pub fn public(&self) -> PublicKey {
        self.keys.public()
    }

    pub fn register_customer(&mut self, id: &str, opening_balance: i64) {
        self.customers.insert(id.to_string());
        self.ledger.open(id, opening_balance);
    }

    pub fn register_merchant(&mut self, id: &str, opening_balance: i64) {
        self.merchants.insert(id.to_string());
        self.ledger.open(id, opening_balance);
    }

    pub fn issue_vpin<R: Rng + ?Sized>(&mut self, customer: &str, pan: &str, rng: &mut R) -> Result<Vpin> {
        if !self.customers.contains(customer) {
            return Err(Error::NotRegistered(customer.to_string()));
        }
        let value = loop {
            let v: String = (0..VPIN_LEN)
                .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())] as char)
                .collect();
            if !v.contains(pan) && !pan.contains(v.as_str()) && !self.vpins.contains_key(&v) {
                break v;
            }
        };
        let card_ref = format!("card-{}", self.cards.len());
        self.cards.insert(card_ref.clone(), pan.to_string());
        let vpin = Vpin {
            value: value.clone(),
            holder: customer.to_string(),
            card_ref,
            status: VpinStatus::Active,
        };
        self.vpins.insert(value, vpin.clone());
        Ok(vpin)
    }

    pub fn vpin(&self, value: &str) -> Option<&Vpin> {
        self.vpins.get(value)
    }

    pub fn blacklist_contains(&self, vpin: &str) -> bool {
        self.vpins.get(vpin).is_some_and(|v| v.status == VpinStatus::Revoked)
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn transaction(&self, id: &str) -> Option<&FvTransaction> {
        self.txns.get(id)
    }

    pub fn transactions(&self) -> impl Iterator<Item = &FvTransaction> {
        self.txns.values()
    }

    /// Transcript records produced since the last call.
    pub fn take_events(&mut self) -> Vec<String> {
        std::mem::take(&mut self.events)
    }

    fn event(&mut self, txn: &FvTransaction, step: &str, extra: &str) {
        let mut line = format!("fv txn={} step={step} state={}", txn.id, txn.state);
        if !extra.is_empty() {
            line.push(' ');
            line.push_str(extra);
        }
        self.events.push(line);
    }

    fn txn_mut(&mut self, id: &str) -> Result<&mut FvTransaction> {
        self.txns
            .get_mut(id)
            .ok_or_else(|| Error::state(format!("unknown transaction {id}")))
    }

    /// Steps 2–3. The provider learns of the order here.
    pub fn step_authorize_vpin(&mut self, txn: FvTransaction) -> Result<VpinAuthorization> {
        if self.txns.contains_key(&txn.id) {
            return Err(Error::state(format!("transaction {} already known", txn.id)));
        }
        if txn.state != FvState::Ordered {
            return Err(Error::state(format!("transaction {} is not in Ordered", txn.id)));
        }
        let valid = self
            .vpins
            .get(&txn.vpin)
            .is_some_and(|v| v.status == VpinStatus::Active && v.holder == txn.customer);
        let mut txn = txn;
        txn.advance(
            &[FvState::Ordered],
            if valid { FvState::VpinChecked } else { FvState::Declined },
        )?;
        let mut auth = VpinAuthorization {
            txn: txn.id.clone(),
            vpin: txn.vpin.clone(),
            amount: txn.amount,
            valid,
            signature: None,
        };
        if txn.amount > self.large_threshold {
            auth.signature = Some(self.keys.sign(&auth.signed_bytes()));
        }
        let extra = if valid {
            format!("vpin={}", txn.vpin)
        } else {
            format!("vpin={} outcome=reject reason=vpin-invalid", txn.vpin)
        };
        self.event(&txn, "3", &extra);
        self.txns.insert(txn.id.clone(), txn);
        Ok(auth)
    }

    /// Steps 4–5: the merchant delivered and reports the charge.
    pub fn step_deliver_and_report(&mut self, id: &str, amount: u64) -> Result<()> {
        let txn = self.txn_mut(id)?;
        if txn.amount != amount {
            return Err(Error::invalid(format!(
                "report amount {amount} differs from order amount {}",
                txn.amount
            )));
        }
        txn.advance(&[FvState::VpinChecked], FvState::Delivered)?;
        txn.advance(&[FvState::Delivered], FvState::Reported)?;
        let txn = txn.clone();
        self.event(&txn, "5", &format!("amount={amount}"));
        Ok(())
    }

    /// Step 6: the confirmation query goes out.
    pub fn send_confirmation(&mut self, id: &str, tick: u64) -> Result<()> {
        let timeout = self.confirm_timeout;
        let txn = self.txn_mut(id)?;
        txn.advance(&[FvState::Reported], FvState::AwaitingConfirm)?;
        txn.confirm_deadline = Some(tick + timeout);
        let txn = txn.clone();
        self.event(&txn, "6", &format!("deadline={}", tick + timeout));
        Ok(())
    }

    /// Steps 7–9.
    pub fn step_confirm(&mut self, id: &str, answer: Answer) -> Result<FvState> {
        let txn = self.txn_mut(id)?.clone();
        if txn.state != FvState::AwaitingConfirm {
            return Err(Error::state(format!(
                "transaction {id} is {} and cannot take a confirmation",
                txn.state
            )));
        }
        self.events.push(format!(
            "fv txn={id} step=7 state={} answer={}",
            txn.state,
            answer.as_str()
        ));
        match answer {
            Answer::Yes => {
                let fault = self.fault;
                self.ledger.atomic(|batch| {
                    batch.push(LedgerEntry {
                        step: "8a",
                        debit: txn.customer.clone(),
                        credit: SETTLEMENT_ACCOUNT.into(),
                        amount: txn.amount,
                        txn: txn.id.clone(),
                        kind: EntryKind::Transfer,
                    });
                    if fault == Fault::AbortAfter8a {
                        return Err(Error::Aborted);
                    }
                    batch.push(LedgerEntry {
                        step: "8b",
                        debit: SETTLEMENT_ACCOUNT.into(),
                        credit: txn.merchant.clone(),
                        amount: txn.amount,
                        txn: txn.id.clone(),
                        kind: EntryKind::Transfer,
                    });
                    batch.push(LedgerEntry {
                        step: "9",
                        debit: CUSTOMER_BANK.into(),
                        credit: MERCHANT_BANK.into(),
                        amount: txn.amount,
                        txn: txn.id.clone(),
                        kind: EntryKind::Clearing,
                    });
                    Ok(())
                })?;
                let posted: Vec<String> = self.ledger.entries_for(id).map(ToString::to_string).collect();
                self.events.extend(posted);
                let t = self.txn_mut(id)?;
                t.advance(&[FvState::AwaitingConfirm], FvState::Settled)?;
                let t = t.clone();
                self.event(&t, "8", "outcome=accept");
                Ok(FvState::Settled)
            }
            Answer::No => {
                let t = self.txn_mut(id)?;
                t.advance(&[FvState::AwaitingConfirm], FvState::Declined)?;
                let t = t.clone();
                self.event(&t, "7", "outcome=reject reason=customer-refused");
                Ok(FvState::Declined)
            }
            Answer::Fraud => {
                if let Some(v) = self.vpins.get_mut(&txn.vpin) {
                    v.status = VpinStatus::Revoked;
                }
                let t = self.txn_mut(id)?;
                t.advance(&[FvState::AwaitingConfirm], FvState::FraudAborted)?;
                let t = t.clone();
                self.event(&t, "7", &format!("vpin={} revoked outcome=reject reason=fraud", t.vpin));
                Ok(FvState::FraudAborted)
            }
        }
    }

    /// Declines every confirmation whose deadline has passed.
    pub fn expire_confirmations(&mut self, tick: u64) -> Vec<String> {
        let due: Vec<String> = self
            .txns
            .values()
            .filter(|t| t.state == FvState::AwaitingConfirm && t.confirm_deadline.is_some_and(|d| tick >= d))
            .map(|t| t.id.clone())
            .collect();
        for id in &due {
            let t = self.txns.get_mut(id).unwrap();
            t.advance(&[FvState::AwaitingConfirm], FvState::Declined).unwrap();
            let t = t.clone();
            self.event(&t, "7", "outcome=reject reason=timeout");
        }
        due
    }

    pub fn awaiting_confirmation(&self) -> bool {
        self.txns.values().any(|t| t.state == FvState::AwaitingConfirm)
    }

    pub fn ledger_dump(&self) -> Vec<String> {
        self.ledger
            .accounts()
            .iter()
            .map(|(a, b)| format!("account={a} balance={b}"))
            .collect()
    }
}

/// Merchant-side order book.
#[derive(Debug, Clone, Default)]
pub struct OrderBook {
    orders: BTreeMap<String, FvTransaction>,
}

impl OrderBook {
    /// Step 1. The merchant cannot judge the VPIN yet, so any string is taken.
    pub fn step_order(
        &mut self,
        id: &str,
        customer: &str,
        merchant: &str,
        vpin: &str,
        amount: u64,
    ) -> Result<FvTransaction> {
        if self.orders.contains_key(id) {
            return Err(Error::invalid(format!("duplicate order id {id}")));
        }
        let txn = FvTransaction {
            id: id.to_string(),
            customer: customer.to_string(),
            merchant: merchant.to_string(),
            vpin: vpin.to_string(),
            amount,
            state: FvState::Ordered,
            history: vec![FvState::Ordered],
            confirm_deadline: None,
        };
        self.orders.insert(id.to_string(), txn.clone());
        Ok(txn)
    }

    pub fn get(&self, id: &str) -> Option<&FvTransaction> {
        self.orders.get(id)
    }

    pub fn set_state(&mut self, id: &str, state: FvState) {
        if let Some(t) = self.orders.get_mut(id) {
            t.state = state;
            t.history.push(state);
        }
    }
}

pub mod sim {
    //! Customer, merchant, and provider actors.
    //!
    //! Schedule trigger: `<tick> <customer> <merchant> order:<txn>:<amount>:<yes|no|fraud|none>`.
    //! The last field is how the customer will answer the confirmation query;
    //! `none` never answers.

    use super::*;
    use crate::encoding::FieldReader;
    use crate::simnet::{Ctx, Handler, Message, MessageRef};

    pub const ORDER: &str = "fv-order";
    pub const VPIN_CHECK: &str = "fv-vpin-check";
    pub const VPIN_RESULT: &str = "fv-vpin-result";
    pub const DELIVERY: &str = "fv-delivery";
    pub const REPORT: &str = "fv-report";
    pub const QUERY: &str = "fv-query";
    pub const ANSWER: &str = "fv-answer";
    pub const OUTCOME: &str = "fv-outcome";

    pub struct FvCustomer {
        vpin: String,
        answers: BTreeMap<String, Option<Answer>>,
    }

    impl FvCustomer {
        pub fn new(vpin: &str) -> Self {
            Self {
                vpin: vpin.into(),
                answers: BTreeMap::new(),
            }
        }
    }

    fn parse_order(message: &MessageRef) -> Result<(String, u64, Option<Answer>)> {
        let bad = || Error::invalid(format!("expected `order:<txn>:<amount>:<answer>`, got `{message}`"));
        if message.name != "order" {
            return Err(bad());
        }
        let arg = message.arg.as_deref().ok_or_else(bad)?;
        let parts: Vec<&str> = arg.split(':').collect();
        let [txn, amount, answer] = parts.as_slice() else {
            return Err(bad());
        };
        let amount = amount.parse().map_err(|_| bad())?;
        let answer = match *answer {
            "none" => None,
            a => Some(Answer::parse(a).ok_or_else(bad)?),
        };
        Ok((txn.to_string(), amount, answer))
    }

    impl Handler for FvCustomer {
        fn on_trigger(&mut self, ctx: &mut Ctx<'_>, to: &str, message: &MessageRef) -> Result<()> {
            let (txn, amount, answer) = parse_order(message)?;
            self.answers.insert(txn.clone(), answer);
            let body = Canonical::new().str(&txn).str(&self.vpin).u64(amount).finish();
            ctx.send(to, Message::new(ORDER, body));
            ctx.record(format!(
                "fv txn={txn} step=1 state=Ordered merchant={to} amount={amount}"
            ));
            Ok(())
        }

        fn on_message(&mut self, ctx: &mut Ctx<'_>, from: &str, message: &Message) {
            match message.label.as_str() {
                QUERY => {
                    let mut r = FieldReader::new(&message.body);
                    let Ok(txn) = r.string() else { return };
                    if let Some(Some(answer)) = self.answers.get(&txn) {
                        let body = Canonical::new().str(&txn).str(answer.as_str()).finish();
                        ctx.send(from, Message::new(ANSWER, body));
                    }
                }
                DELIVERY => {
                    let mut r = FieldReader::new(&message.body);
                    if let Ok(txn) = r.string() {
                        let id = ctx.id().to_string();
                        ctx.record(format!("fv txn={txn} step=4 received-by={id}"));
                    }
                }
                _ => {}
            }
        }
    }

    pub struct FvMerchant {
        provider_id: String,
        book: OrderBook,
        threshold: u64,
    }

    impl FvMerchant {
        pub fn new(provider_id: &str, threshold: u64) -> Self {
            Self {
                provider_id: provider_id.into(),
                book: OrderBook::default(),
                threshold,
            }
        }
    }

    impl Handler for FvMerchant {
        fn on_message(&mut self, ctx: &mut Ctx<'_>, from: &str, message: &Message) {
            let id = ctx.id().to_string();
            match message.label.as_str() {
                ORDER => {
                    let mut r = FieldReader::new(&message.body);
                    let (Ok(txn), Ok(vpin), Ok(amount)) = (r.string(), r.string(), r.u64()) else {
                        return;
                    };
                    match self.book.step_order(&txn, from, &id, &vpin, amount) {
                        Ok(_) => {
                            let body = Canonical::new().str(&txn).str(from).str(&vpin).u64(amount).finish();
                            ctx.send(self.provider_id.clone(), Message::new(VPIN_CHECK, body));
                        }
                        Err(_) => ctx.record(format!("fv txn={txn} step=1 outcome=reject reason=duplicate-order")),
                    }
                }
                VPIN_RESULT => {
                    let Ok(auth) = decode_auth(&message.body) else { return };
                    let Some(order) = self.book.get(&auth.txn).cloned() else {
                        return;
                    };
                    let provider = ctx.world().public_key(&self.provider_id).ok().cloned();
                    let ok =
                        provider.is_some_and(|p| auth.acceptable(&p, self.threshold)) && auth.amount == order.amount;
                    if !ok {
                        self.book.set_state(&auth.txn, FvState::Declined);
                        if auth.valid {
                            ctx.record(format!(
                                "fv txn={} step=3 state=Declined outcome=reject reason=unsigned-large-authorization",
                                auth.txn
                            ));
                        }
                        return;
                    }
                    self.book.set_state(&auth.txn, FvState::Delivered);
                    ctx.record(format!(
                        "fv txn={} step=4 state=Delivered customer={}",
                        auth.txn, order.customer
                    ));
                    ctx.send(
                        order.customer.clone(),
                        Message::new(DELIVERY, Canonical::new().str(&auth.txn).finish()),
                    );
                    let body = Canonical::new().str(&auth.txn).u64(order.amount).finish();
                    ctx.send(self.provider_id.clone(), Message::new(REPORT, body));
                }
                OUTCOME => {
                    let mut r = FieldReader::new(&message.body);
                    if let (Ok(txn), Ok(state)) = (r.string(), r.string()) {
                        let state = match state.as_str() {
                            "Settled" => FvState::Settled,
                            "FraudAborted" => FvState::FraudAborted,
                            _ => FvState::Declined,
                        };
                        self.book.set_state(&txn, state);
                    }
                }
                _ => {}
            }
        }
    }

    fn encode_auth(a: &VpinAuthorization) -> Vec<u8> {
        Canonical::new()
            .str(&a.txn)
            .str(&a.vpin)
            .u64(a.amount)
            .field([a.valid as u8])
            .field(a.signature.as_ref().map(BigUint::to_bytes_be).unwrap_or_default())
            .finish()
    }

    fn decode_auth(bytes: &[u8]) -> Result<VpinAuthorization> {
        let mut r = FieldReader::new(bytes);
        let txn = r.string()?;
        let vpin = r.string()?;
        let amount = r.u64()?;
        let [valid] = r.array::<1>()?;
        let sig = r.field()?;
        r.finish()?;
        Ok(VpinAuthorization {
            txn,
            vpin,
            amount,
            valid: valid == 1,
            signature: (!sig.is_empty()).then(|| BigUint::from_bytes_be(sig)),
        })
    }

    pub struct FvProvider {
        provider: Provider,
    }

    impl FvProvider {
        pub fn new(provider: Provider) -> Self {
            Self { provider }
        }

        fn flush_events(&mut self, ctx: &mut Ctx<'_>) {
            for e in self.provider.take_events() {
                ctx.record(e);
            }
        }

        fn notify_outcome(&self, ctx: &mut Ctx<'_>, txn: &str) {
            if let Some(t) = self.provider.transaction(txn) {
                let body = Canonical::new().str(txn).str(t.state.name()).finish();
                ctx.send(t.merchant.clone(), Message::new(OUTCOME, body));
            }
        }
    }

    impl Handler for FvProvider {
        fn on_tick(&mut self, ctx: &mut Ctx<'_>) {
            let expired = self.provider.expire_confirmations(ctx.tick());
            for txn in expired {
                self.notify_outcome(ctx, &txn);
            }
            self.flush_events(ctx);
        }

        fn on_message(&mut self, ctx: &mut Ctx<'_>, from: &str, message: &Message) {
            let mut r = FieldReader::new(&message.body);
            match message.label.as_str() {
                VPIN_CHECK => {
                    let (Ok(txn), Ok(customer), Ok(vpin), Ok(amount)) = (r.string(), r.string(), r.string(), r.u64())
                    else {
                        return;
                    };
                    let order = FvTransaction {
                        id: txn.clone(),
                        customer,
                        merchant: from.to_string(),
                        vpin,
                        amount,
                        state: FvState::Ordered,
                        history: vec![FvState::Ordered],
                        confirm_deadline: None,
                    };
                    match self.provider.step_authorize_vpin(order) {
                        Ok(auth) => ctx.send(from, Message::new(VPIN_RESULT, encode_auth(&auth))),
                        Err(_) => ctx.record(format!("fv txn={txn} step=3 outcome=reject reason=state-error")),
                    }
                }
                REPORT => {
                    let (Ok(txn), Ok(amount)) = (r.string(), r.u64()) else {
                        return;
                    };
                    let tick = ctx.tick();
                    let result = self
                        .provider
                        .step_deliver_and_report(&txn, amount)
                        .and_then(|_| self.provider.send_confirmation(&txn, tick));
                    match result {
                        Ok(()) => {
                            let t = self.provider.transaction(&txn).unwrap();
                            let body = Canonical::new().str(&txn).str(&t.merchant).u64(t.amount).finish();
                            ctx.send(t.customer.clone(), Message::new(QUERY, body));
                        }
                        Err(_) => ctx.record(format!("fv txn={txn} step=5 outcome=reject reason=state-error")),
                    }
                }
                ANSWER => {
                    let (Ok(txn), Ok(answer)) = (r.string(), r.string()) else {
                        return;
                    };
                    let Some(answer) = Answer::parse(&answer) else { return };
                    let from_holder = self.provider.transaction(&txn).is_some_and(|t| t.customer == from);
                    if !from_holder {
                        ctx.record(format!("fv txn={txn} step=7 outcome=reject reason=wrong-sender"));
                        return;
                    }
                    match self.provider.step_confirm(&txn, answer) {
                        Ok(_) => self.notify_outcome(ctx, &txn),
                        Err(Error::Aborted) => {
                            self.flush_events(ctx);
                            ctx.record(format!("fv txn={txn} step=8 outcome=reject reason=aborted"));
                        }
                        Err(_) => {
                            self.flush_events(ctx);
                            ctx.record(format!("fv txn={txn} step=7 outcome=reject reason=state-error"));
                        }
                    }
                }
                _ => {}
            }
            self.flush_events(ctx);
        }

        fn is_idle(&self, _tick: u64) -> bool {
            !self.provider.awaiting_confirmation()
        }

        fn finish(&mut self, ctx: &mut Ctx<'_>) {
            self.flush_events(ctx);
            for line in self.provider.ledger_dump() {
                ctx.record(line);
            }
        }
    }
}
