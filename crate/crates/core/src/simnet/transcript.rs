//! Line-delimited transcript records.
//!
//! Every line is `tick=<t> <body>`. Bodies are space-separated tokens, most of
//! them `key=value`. Link records are `link=<from>-><to> blocks=<count>`;
//! protocol decisions carry `outcome=accept` or `outcome=reject`.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub tick: u64,
    pub body: String,
}

impl Record {
    /// Value of the first `key=value` token with this key.
    pub fn field(&self, key: &str) -> Option<&str> {
        self.body
            .split(' ')
            .find_map(|tok| tok.split_once('=').filter(|(k, _)| *k == key).map(|(_, v)| v))
    }

    /// First bare token (the protocol or record kind).
    pub fn kind(&self) -> &str {
        self.body.split(' ').next().unwrap_or("")
    }
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tick={} {}", self.tick, self.body)
    }
}

/// Append-only log of link events and protocol decisions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    records: Vec<Record>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OutcomeCounts {
    pub accept: usize,
    pub reject: usize,
}

/// Per-protocol accept/reject counts plus notable events.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Summary {
    pub protocols: BTreeMap<String, OutcomeCounts>,
    pub notes: BTreeMap<String, usize>,
}

impl Summary {
    pub fn total_rejects(&self) -> usize {
        self.protocols.values().map(|c| c.reject).sum()
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (proto, c) in &self.protocols {
            writeln!(f, "{proto}: accept={} reject={}", c.accept, c.reject)?;
        }
        for (note, n) in &self.notes {
            writeln!(f, "{note} (x{n})")?;
        }
        Ok(())
    }
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tick: u64, body: impl Into<String>) {
        self.records.push(Record {
            tick,
            body: body.into(),
        });
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: &str| Error::Parse {
                line: i + 1,
                message: message.to_string(),
            };
            let rest = line
                .strip_prefix("tick=")
                .ok_or_else(|| parse_err("record must start with tick="))?;
            let (tick, body) = rest.split_once(' ').ok_or_else(|| parse_err("record has no body"))?;
            let tick = tick.parse().map_err(|_| parse_err("tick is not an integer"))?;
            records.push(Record {
                tick,
                body: body.to_string(),
            });
        }
        Ok(Self { records })
    }

    /// `(tick, from, to, blocks)` for every link record.
    pub fn link_counts(&self) -> Vec<(u64, String, String, usize)> {
        self.records
            .iter()
            .filter_map(|r| {
                let link = r.field("link")?;
                let (from, to) = link.split_once("->")?;
                let blocks = r.field("blocks")?.parse().ok()?;
                Some((r.tick, from.to_string(), to.to_string(), blocks))
            })
            .collect()
    }

    /// Total blocks per link over the whole run.
    pub fn link_totals(&self) -> BTreeMap<(String, String), usize> {
        let mut totals = BTreeMap::new();
        for (_, from, to, n) in self.link_counts() {
            *totals.entry((from, to)).or_insert(0) += n;
        }
        totals
    }

    pub fn find<'a>(&'a self, needle: &'a str) -> impl Iterator<Item = &'a Record> + 'a {
        self.records.iter().filter(move |r| r.body.contains(needle))
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.find(needle).next().is_some()
    }

    pub fn summary(&self) -> Summary {
        let mut s = Summary::default();
        for r in &self.records {
            if let Some(outcome) = r.field("outcome") {
                let c = s.protocols.entry(r.kind().to_string()).or_default();
                match outcome {
                    "accept" => c.accept += 1,
                    "reject" => c.reject += 1,
                    _ => {}
                }
            }
            if let Some(auth) = r.field("auth") {
                if r.field("verified") == Some("true") {
                    *s.notes.entry(format!("auth={auth}")).or_insert(0) += 1;
                }
            }
            if r.kind() == "fv" && r.field("vpin").is_some() && r.body.contains("revoked") {
                *s.notes.entry("vpin revoked".into()).or_insert(0) += 1;
            }
            if r.kind() == "deliver" {
                *s.notes.entry("mix deliveries".into()).or_insert(0) += 1;
            }
        }
        s
    }
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut t = Transcript::new();
        t.push(0, "link=a->b blocks=2");
        t.push(3, "onekp actor=acq outcome=reject reason=reject-replay");
        t.push(3, "deliver to=Y payload_digest=00ff");
        let text = t.to_text();
        assert_eq!(Transcript::parse(&text).unwrap(), t);
        assert_eq!(Transcript::parse(&text).unwrap().to_text(), text);
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(matches!(
            Transcript::parse("tick=1 ok\nbogus\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(Transcript::parse("tick=x body\n").is_err());
    }

    #[test]
    fn link_counts_and_summary() {
        let mut t = Transcript::new();
        t.push(1, "link=a->m blocks=2");
        t.push(2, "link=a->m blocks=3");
        t.push(2, "onekp actor=c auth=yes verified=true outcome=accept");
        t.push(2, "fv txn=1 vpin=ABC revoked");
        t.push(2, "fv txn=1 outcome=reject");
        assert_eq!(t.link_totals()[&("a".into(), "m".into())], 5);
        let s = t.summary();
        assert_eq!(s.protocols["onekp"].accept, 1);
        assert_eq!(s.total_rejects(), 1);
        let text = s.to_string();
        assert!(text.contains("auth=yes"));
        assert!(text.contains("vpin revoked"));
    }
}
