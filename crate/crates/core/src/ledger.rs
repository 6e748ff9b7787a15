//! Privacy-protection overhead and the simulated verification ledger.
//!
//! Transactions move through `Generated → Broadcast → Packaged → Verifying`
//! and end either `Committed` (quorum of delegate votes, appended as a new
//! block, initiator credited one coin) or `Closed` (digest mismatch).

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::{ensure_positive, ModelError};

/// Parameter aggregation time `|W_m| / f_MBS`.
pub fn aggregation_overhead(model_size: f64, mbs_cpu_freq: f64) -> Result<f64, ModelError> {
    ensure_positive("MBS CPU frequency", mbs_cpu_freq)?;
    Ok(model_size / mbs_cpu_freq)
}

/// Parameter transmission time `δ·log2(N)·|W_m| / r_up`.
pub fn transmission_overhead(delta: f64, n_mbs: usize, model_size: f64, uplink_rate: f64) -> Result<f64, ModelError> {
    ensure_positive("uplink rate", uplink_rate)?;
    ensure_positive("MBS count", n_mbs as f64)?;
    Ok(delta * (n_mbs as f64).log2() * model_size / uplink_rate)
}

/// Block verification time `δ·log2(M·N)·S_B / r_down + max_m S_B / f_m`,
/// where the max runs over followers with non-zero frequency.
pub fn verification_overhead(
    delta: f64,
    n_mbs: usize,
    followers_per_mbs: usize,
    block_size: f64,
    downlink_rate: f64,
    follower_freqs: &[f64],
) -> Result<f64, ModelError> {
    ensure_positive("downlink rate", downlink_rate)?;
    let slowest = follower_freqs
        .iter()
        .copied()
        .filter(|&f| f > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !slowest.is_finite() {
        return Err(ModelError::AllFrequenciesZero);
    }
    let spread = delta * ((followers_per_mbs * n_mbs) as f64).log2() * block_size / downlink_rate;
    Ok(spread + block_size / slowest)
}

/// The three overhead parts and their sum C_SBC, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverheadBreakdown {
    pub aggregation: f64,
    pub transmission: f64,
    pub verification: f64,
    pub total: f64,
}

pub fn total_overhead(aggregation: f64, transmission: f64, verification: f64) -> OverheadBreakdown {
    OverheadBreakdown {
        aggregation,
        transmission,
        verification,
        total: aggregation + transmission + verification,
    }
}

/// SHA-256 of the little-endian encoding of a parameter payload.
pub fn payload_digest(payload: &[f64]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for v in payload {
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize().into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Initiator {
    Follower { mbs: usize, follower: usize },
    Leader,
}

impl fmt::Display for Initiator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Initiator::Follower { mbs, follower } => write!(f, "follower:{mbs}:{follower}"),
            Initiator::Leader => f.write_str("leader"),
        }
    }
}

impl std::str::FromStr for Initiator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "leader" {
            return Ok(Initiator::Leader);
        }
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["follower", n, m] => Ok(Initiator::Follower {
                mbs: n.parse().map_err(|_| format!("bad initiator `{s}`"))?,
                follower: m.parse().map_err(|_| format!("bad initiator `{s}`"))?,
            }),
            _ => Err(format!("bad initiator `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxStatus {
    Generated,
    Broadcast,
    Packaged,
    Verifying,
    Committed,
    Closed,
}

impl fmt::Display for TxStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TxStatus::Generated => "generated",
            TxStatus::Broadcast => "broadcast",
            TxStatus::Packaged => "packaged",
            TxStatus::Verifying => "verifying",
            TxStatus::Committed => "committed",
            TxStatus::Closed => "closed",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for TxStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "generated" => TxStatus::Generated,
            "broadcast" => TxStatus::Broadcast,
            "packaged" => TxStatus::Packaged,
            "verifying" => TxStatus::Verifying,
            "committed" => TxStatus::Committed,
            "closed" => TxStatus::Closed,
            _ => return Err(format!("unknown status `{s}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxEvent {
    Broadcast,
    Package,
    Verify,
    Commit,
    Close,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("illegal transition: event {event:?} on a {status} transaction")]
    IllegalTransition { status: TxStatus, event: TxEvent },
    #[error("aggregation transaction {id} was closed; issuing refused")]
    IssueRefused { id: u64 },
    #[error("malformed ledger record on line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("ledger audit failed: {0}")]
    Audit(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    pub id: u64,
    pub initiator: Initiator,
    pub payload_digest: [u8; 32],
    pub payload: Vec<f64>,
    pub status: TxStatus,
}

impl Transaction {
    pub fn new(id: u64, initiator: Initiator, payload: Vec<f64>) -> Self {
        Self {
            id,
            initiator,
            payload_digest: payload_digest(&payload),
            payload,
            status: TxStatus::Generated,
        }
    }

    /// Whether the payload still hashes to the recorded digest.
    pub fn digest_matches(&self) -> bool {
        payload_digest(&self.payload) == self.payload_digest
    }
}

/// Applies one life-cycle event.
pub fn advance_transaction(mut tx: Transaction, event: TxEvent) -> Result<Transaction, LedgerError> {
    use TxEvent as E;
    use TxStatus as S;
    let next = match (tx.status, event) {
        (S::Generated, E::Broadcast) => S::Broadcast,
        (S::Broadcast, E::Package) => S::Packaged,
        (S::Packaged, E::Verify) => S::Verifying,
        (S::Verifying, E::Commit) => S::Committed,
        (S::Verifying, E::Close) => S::Closed,
        (status, event) => return Err(LedgerError::IllegalTransition { status, event }),
    };
    tx.status = next;
    Ok(tx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub height: u64,
    pub size: f64,
    pub transactions: Vec<Transaction>,
}

/// One exported line: `height,tx_id,initiator,status,block_size,digest`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub height: Option<u64>,
    pub tx_id: u64,
    pub initiator: Initiator,
    pub status: TxStatus,
    pub block_size: f64,
    /// SHA-256 of the payload as issued, hex encoded.
    pub digest: String,
}

impl AuditRecord {
    pub fn to_line(&self) -> String {
        let height = self.height.map_or_else(|| "-".to_string(), |h| h.to_string());
        format!("{height},{},{},{},{},{}", self.tx_id, self.initiator, self.status, self.block_size, self.digest)
    }

    pub fn parse_line(line_no: usize, line: &str) -> Result<Self, LedgerError> {
        let bad = |message: String| LedgerError::Malformed { line: line_no, message };
        let fields: Vec<&str> = line.split(',').collect();
        let [height, id, initiator, status, size, digest] = fields.as_slice() else {
            return Err(bad(format!("expected 6 fields, got {}", fields.len())));
        };
        match hex::decode(digest) {
            Ok(bytes) if bytes.len() == 32 => {}
            _ => return Err(bad(format!("bad digest `{digest}`"))),
        }
        Ok(Self {
            height: if *height == "-" {
                None
            } else {
                Some(height.parse().map_err(|_| bad(format!("bad height `{height}`")))?)
            },
            tx_id: id.parse().map_err(|_| bad(format!("bad tx id `{id}`")))?,
            initiator: initiator.parse().map_err(bad)?,
            status: status.parse().map_err(bad)?,
            block_size: size.parse().map_err(|_| bad(format!("bad block size `{size}`")))?,
            digest: digest.to_string(),
        })
    }
}

pub const AUDIT_HEADER: &str = "height,tx_id,initiator,status,block_size,digest";

/// Append-only chain of committed transactions with delegate voting.
#[derive(Debug, Clone)]
pub struct Ledger {
    delegates: usize,
    blocks: Vec<Block>,
    balances: BTreeMap<Initiator, u64>,
    records: Vec<AuditRecord>,
    next_id: u64,
}

impl Ledger {
    pub fn new(delegates: usize) -> Self {
        Self {
            delegates: delegates.max(1),
            blocks: Vec::new(),
            balances: BTreeMap::new(),
            records: Vec::new(),
            next_id: 0,
        }
    }

    pub fn quorum(&self) -> usize {
        (2 * self.delegates).div_ceil(3)
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn balance(&self, who: Initiator) -> u64 {
        self.balances.get(&who).copied().unwrap_or(0)
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    /// Creates a transaction in the `Generated` state with a fresh id.
    pub fn generate(&mut self, initiator: Initiator, payload: Vec<f64>) -> Transaction {
        let tx = Transaction::new(self.next_id, initiator, payload);
        self.next_id += 1;
        tx
    }

    /// Each delegate recomputes the digest and votes to accept on a match.
    fn votes(&self, tx: &Transaction) -> usize {
        (0..self.delegates).filter(|_| tx.digest_matches()).count()
    }

    /// Drives a transaction through broadcast, packaging and verification.
    /// `tamper` is applied to the payload in transit, after the digest was fixed.
    pub fn submit(
        &mut self,
        tx: Transaction,
        block_size: f64,
        tamper: impl FnOnce(&mut Vec<f64>),
    ) -> Result<Transaction, LedgerError> {
        let tx = advance_transaction(tx, TxEvent::Broadcast)?;
        let mut tx = advance_transaction(tx, TxEvent::Package)?;
        tamper(&mut tx.payload);
        let tx = advance_transaction(tx, TxEvent::Verify)?;
        let event = if self.votes(&tx) >= self.quorum() {
            TxEvent::Commit
        } else {
            TxEvent::Close
        };
        let tx = advance_transaction(tx, event)?;
        let height = if tx.status == TxStatus::Committed {
            let height = self.height() + 1;
            self.blocks.push(Block {
                height,
                size: block_size,
                transactions: vec![tx.clone()],
            });
            *self.balances.entry(tx.initiator).or_insert(0) += 1;
            Some(height)
        } else {
            None
        };
        self.records.push(AuditRecord {
            height,
            tx_id: tx.id,
            initiator: tx.initiator,
            status: tx.status,
            block_size,
            digest: hex::encode(tx.payload_digest),
        });
        Ok(tx)
    }

    pub fn write_export<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{AUDIT_HEADER}")?;
        for r in &self.records {
            writeln!(out, "{}", r.to_line())?;
        }
        Ok(())
    }
}

/// Flips one random bit of one random payload entry.
pub fn flip_random_bit<R: Rng + ?Sized>(rng: &mut R, payload: &mut [f64]) {
    if payload.is_empty() {
        return;
    }
    let i = rng.gen_range(0..payload.len());
    let bit = rng.gen_range(0..64);
    payload[i] = f64::from_bits(payload[i].to_bits() ^ (1u64 << bit));
}

/// Summary of an exported ledger after the integrity checks passed.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditSummary {
    pub records: usize,
    pub committed: usize,
    pub closed: usize,
    pub height: u64,
}

/// Checks an export: header present, tx ids unique, only terminal statuses,
/// committed heights contiguous from 1, closed records carry no height.
pub fn audit_export(text: &str) -> Result<AuditSummary, LedgerError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim() == AUDIT_HEADER => {}
        _ => return Err(LedgerError::Audit("missing header".into())),
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut summary = AuditSummary { records: 0, committed: 0, closed: 0, height: 0 };
    for (idx, line) in lines {
        let rec = AuditRecord::parse_line(idx + 1, line.trim())?;
        if !seen.insert(rec.tx_id) {
            return Err(LedgerError::Audit(format!("duplicate tx id {} on line {}", rec.tx_id, idx + 1)));
        }
        match (rec.status, rec.height) {
            (TxStatus::Committed, Some(h)) => {
                if h != summary.height + 1 {
                    return Err(LedgerError::Audit(format!(
                        "height {h} on line {} does not follow {}",
                        idx + 1,
                        summary.height
                    )));
                }
                summary.height = h;
                summary.committed += 1;
            }
            (TxStatus::Closed, None) => summary.closed += 1,
            (status, height) => {
                return Err(LedgerError::Audit(format!(
                    "line {}: status {status} with height {height:?}",
                    idx + 1
                )))
            }
        }
        summary.records += 1;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn aggregation_examples() {
        assert_eq!(aggregation_overhead(0.0, 6e9).unwrap(), 0.0);
        assert!((aggregation_overhead(1.2e6, 6e9).unwrap() - 2e-4).abs() < 1e-18);
        assert!(aggregation_overhead(1.0, 0.0).is_err());
        let a = aggregation_overhead(1e6, 6e9).unwrap();
        let b = aggregation_overhead(1e6, 12e9).unwrap();
        assert!((a - 2.0 * b).abs() < 1e-18);
    }

    #[test]
    fn transmission_examples() {
        assert_eq!(transmission_overhead(0.5, 1, 1e6, 5e9).unwrap(), 0.0);
        assert!((transmission_overhead(0.5, 4, 1e6, 0.5e10).unwrap() - 2e-4).abs() < 1e-18);
        let one = transmission_overhead(0.25, 4, 1e6, 5e9).unwrap();
        assert!((transmission_overhead(0.75, 4, 1e6, 5e9).unwrap() - 3.0 * one).abs() < 1e-18);
    }

    #[test]
    fn verification_examples() {
        assert_eq!(verification_overhead(0.5, 4, 12, 0.0, 1e10, &[2e9]).unwrap(), 0.0);
        let freqs = [2e9, 3e9, 4e9];
        let v = verification_overhead(0.5, 4, 12, 1e6, 1e10, &freqs).unwrap();
        let spread = 0.5 * 48f64.log2() * 1e6 / 1e10;
        assert!((v - (spread + 1e6 / 2e9)).abs() < 1e-15);
        assert!((v - 7.792e-4).abs() < 1e-6, "{v}");
        let faster = verification_overhead(0.5, 4, 12, 1e6, 1e10, &[4e9, 3e9]).unwrap();
        assert!(faster < v);
        assert_eq!(
            verification_overhead(0.5, 4, 12, 1e6, 1e10, &[0.0, 0.0]),
            Err(ModelError::AllFrequenciesZero)
        );
        let with_idle = verification_overhead(0.5, 4, 12, 1e6, 1e10, &[0.0, 2e9, 3e9, 4e9]).unwrap();
        assert_eq!(with_idle, v);
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_overhead(0.0, 0.0, 0.0).total, 0.0);
        let t = total_overhead(2e-4, 2e-4, 7.792e-4);
        assert!((t.total - 1.1792e-3).abs() < 1e-15);
        let p = total_overhead(7.792e-4, 2e-4, 2e-4);
        assert!((t.total - p.total).abs() < 1e-18);
    }

    #[test]
    fn clean_transaction_commits_and_credits_initiator() {
        let mut ledger = Ledger::new(5);
        assert_eq!(ledger.quorum(), 4);
        let who = Initiator::Follower { mbs: 1, follower: 2 };
        let tx = ledger.generate(who, vec![1.0, 2.0, 3.0]);
        let tx = ledger.submit(tx, 2e6, |_| {}).unwrap();
        assert_eq!(tx.status, TxStatus::Committed);
        assert_eq!(ledger.height(), 1);
        assert_eq!(ledger.balance(who), 1);
        assert_eq!(ledger.blocks()[0].size, 2e6);
    }

    #[test]
    fn tampered_payload_closes() {
        let mut ledger = Ledger::new(5);
        let tx = ledger.generate(Initiator::Leader, vec![0.5; 4]);
        let tx = ledger.submit(tx, 1e6, |p| p[2] += 1e-9).unwrap();
        assert_eq!(tx.status, TxStatus::Closed);
        assert_eq!(ledger.height(), 0);
        assert_eq!(ledger.balance(Initiator::Leader), 0);
    }

    #[test]
    fn illegal_transitions_report_the_pair() {
        let tx = Transaction::new(0, Initiator::Leader, vec![]);
        assert_eq!(
            advance_transaction(tx.clone(), TxEvent::Commit),
            Err(LedgerError::IllegalTransition { status: TxStatus::Generated, event: TxEvent::Commit })
        );
        let tx = advance_transaction(tx, TxEvent::Broadcast).unwrap();
        assert!(advance_transaction(tx, TxEvent::Verify).is_err());
    }

    #[test]
    fn export_round_trips_through_audit() {
        let mut ledger = Ledger::new(3);
        let mut rng = stream(0, Stream::Ledger, 0);
        for k in 0..6 {
            let tx = ledger.generate(Initiator::Follower { mbs: 0, follower: k }, vec![k as f64; 3]);
            if k % 3 == 1 {
                ledger.submit(tx, 1e6, |p| flip_random_bit(&mut rng, p)).unwrap();
            } else {
                ledger.submit(tx, 1e6, |_| {}).unwrap();
            }
        }
        let mut buf = Vec::new();
        ledger.write_export(&mut buf).unwrap();
        let summary = audit_export(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(summary, AuditSummary { records: 6, committed: 4, closed: 2, height: 4 });
        let broken = String::from_utf8(buf).unwrap().replace("\n2,", "\n7,");
        assert!(audit_export(&broken).is_err());
    }
}
