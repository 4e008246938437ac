//! Offline transaction-log heuristics for exploitation of flagged contracts.
//!
//! Every heuristic makes one streaming pass over a time-ordered log and keeps
//! state per (suspect, victim) pair only.

mod log;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rust_decimal::Decimal;
use serde::Serialize;

pub use log::{
    parse_log, ActionRecord, AttackError, LogReader, TransactionRecord, TransferPayload,
};

pub const EOSIO_TOKEN: &str = crate::eosio::EOSIO_TOKEN;
pub const DEFAULT_WINDOW_SECS: i64 = 24 * 3600;
pub const DEFAULT_RATIO: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    FakeEos,
    FakeReceipt,
    Rollback,
    MissingPermissionMisuse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Potential,
    Suspicious,
}

/// Per-suspect winning rate, left for an analyst to judge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub suspect: String,
    pub victim: String,
    pub wins: u64,
    /// Transactions in which the suspect paid the victim.
    pub attempts: u64,
    pub first_time: i64,
    pub last_time: i64,
    pub wins_per_hour: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackFlag {
    pub kind: AttackKind,
    pub victim: String,
    pub suspects: Vec<String>,
    pub tx_ids: Vec<String>,
    /// EOS received minus EOS spent over the evidence transactions.
    pub gain_estimate: Decimal,
    pub confidence: Confidence,
    /// Rollback flags only.
    pub rate_table: Vec<RateRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    /// Join window, in seconds.
    pub window_secs: i64,
    pub ratio_threshold: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            window_secs: DEFAULT_WINDOW_SECS,
            ratio_threshold: DEFAULT_RATIO,
        }
    }
}

impl AttackConfig {
    fn ratio(&self) -> Decimal {
        Decimal::try_from(self.ratio_threshold).unwrap_or(Decimal::MAX)
    }

    /// `received / spent >= ratio`, with nothing spent counting as infinite.
    fn escalates(&self, received: Decimal, spent: Decimal) -> bool {
        received > Decimal::ZERO && (spent.is_zero() || received >= spent * self.ratio())
    }
}

fn is_official(a: &ActionRecord, p: &TransferPayload) -> bool {
    a.code_account == EOSIO_TOKEN && p.issuer == EOSIO_TOKEN
}

/// Direct EOS transfers of a transaction.
fn eos_transfers(
    tx: &TransactionRecord,
) -> impl Iterator<Item = (&ActionRecord, &TransferPayload)> {
    tx.actions.iter().filter(|a| a.is_direct()).filter_map(|a| {
        a.transfer_payload
            .as_ref()
            .filter(|p| p.symbol == "EOS")
            .map(|p| (a, p))
    })
}

/// Evidence gathered for one (suspect, victim) pair.
#[derive(Debug, Default)]
struct PairLedger {
    last_trigger: Option<i64>,
    triggers: usize,
    received: Decimal,
    spent: Decimal,
    tx_ids: Vec<String>,
    recent_spends: VecDeque<(i64, Decimal, String)>,
}

impl PairLedger {
    fn note(&mut self, tx: &str) {
        if self.tx_ids.last().map(String::as_str) != Some(tx) {
            self.tx_ids.push(tx.to_string());
        }
    }

    fn armed(&self, t: i64, window: i64) -> bool {
        self.last_trigger.is_some_and(|s| t - s <= window)
    }

    fn trigger(&mut self, t: i64, tx: &str, window: i64) {
        self.triggers += 1;
        self.last_trigger = Some(t);
        while let Some((st, q, id)) = self.recent_spends.pop_front() {
            if t - st <= window {
                self.spent += q;
                self.note(&id);
            }
        }
        self.note(tx);
    }

    fn receive(&mut self, t: i64, q: Decimal, tx: &str, window: i64) -> bool {
        if self.armed(t, window) {
            self.received += q;
            self.note(tx);
            true
        } else {
            false
        }
    }

    fn spend(&mut self, t: i64, q: Decimal, tx: &str, window: i64) {
        if self.armed(t, window) {
            self.spent += q;
            self.note(tx);
        } else {
            while self
                .recent_spends
                .front()
                .is_some_and(|(st, _, _)| t - st > window)
            {
                self.recent_spends.pop_front();
            }
            self.recent_spends.push_back((t, q, tx.to_string()));
        }
    }

    fn into_flag(
        self,
        kind: AttackKind,
        suspects: Vec<String>,
        victim: String,
        cfg: &AttackConfig,
    ) -> AttackFlag {
        let confidence = if cfg.escalates(self.received, self.spent) {
            Confidence::Suspicious
        } else {
            Confidence::Potential
        };
        AttackFlag {
            kind,
            victim,
            suspects,
            tx_ids: self.tx_ids,
            gain_estimate: self.received - self.spent,
            confidence,
            rate_table: Vec::new(),
        }
    }
}

/// Fake EOS: a counterfeit `EOS` transfer (or a direct call of the victim's
/// transfer action) to a victim, followed within the window by a genuine
/// payment from that victim back to the sender.
///
/// Every fake send to a victim yields at least a potential flag; the flag is
/// suspicious when genuine EOS received outweighs genuine EOS spent by the
/// configured ratio.
pub fn flag_fake_eos_attacks<I>(
    log: I,
    victims: &BTreeSet<String>,
    cfg: &AttackConfig,
) -> Result<Vec<AttackFlag>, AttackError>
where
    I: IntoIterator<Item = Result<TransactionRecord, AttackError>>,
{
    let w = cfg.window_secs;
    let mut pairs: BTreeMap<(String, String), PairLedger> = BTreeMap::new();
    for tx in log {
        let tx = tx?;
        let t = tx.block_time;
        for (a, p) in eos_transfers(&tx) {
            if !is_official(a, p) {
                if victims.contains(&p.to) {
                    pairs
                        .entry((p.from.clone(), p.to.clone()))
                        .or_default()
                        .trigger(t, &tx.tx_id, w);
                }
                continue;
            }
            if victims.contains(&p.from) {
                if let Some(l) = pairs.get_mut(&(p.to.clone(), p.from.clone())) {
                    l.receive(t, p.quantity, &tx.tx_id, w);
                }
            }
            if victims.contains(&p.to) {
                pairs
                    .entry((p.from.clone(), p.to.clone()))
                    .or_default()
                    .spend(t, p.quantity, &tx.tx_id, w);
            }
        }
    }
    Ok(pairs
        .into_iter()
        .filter(|(_, l)| l.triggers > 0)
        .map(|((suspect, victim), l)| l.into_flag(AttackKind::FakeEos, vec![suspect], victim, cfg))
        .collect())
}

/// Fake receipt: a genuine transfer notification delivered to a victim that
/// is neither party of the transfer, followed by the victim paying the
/// transfer's sender.
pub fn flag_fake_receipt_attacks<I>(
    log: I,
    victims: &BTreeSet<String>,
    cfg: &AttackConfig,
) -> Result<Vec<AttackFlag>, AttackError>
where
    I: IntoIterator<Item = Result<TransactionRecord, AttackError>>,
{
    let w = cfg.window_secs;
    let mut pairs: BTreeMap<(String, String), (PairLedger, BTreeSet<String>)> = BTreeMap::new();
    for tx in log {
        let tx = tx?;
        let t = tx.block_time;
        for a in &tx.actions {
            let Some(p) = a.transfer_payload.as_ref() else {
                continue;
            };
            if a.is_direct() || p.symbol != "EOS" || !is_official(a, p) {
                continue;
            }
            let forwarded = a.receiver != EOSIO_TOKEN && a.receiver != p.from && a.receiver != p.to;
            if forwarded && victims.contains(&a.receiver) {
                let (l, helpers) = pairs
                    .entry((p.from.clone(), a.receiver.clone()))
                    .or_default();
                l.trigger(t, &tx.tx_id, w);
                helpers.insert(p.to.clone());
            }
        }
        for (a, p) in eos_transfers(&tx) {
            if !is_official(a, p) {
                continue;
            }
            if victims.contains(&p.from) {
                if let Some((l, _)) = pairs.get_mut(&(p.to.clone(), p.from.clone())) {
                    l.receive(t, p.quantity, &tx.tx_id, w);
                }
            }
            // only spends that reach the victim count against the suspect
            if victims.contains(&p.to) {
                if let Some((l, _)) = pairs.get_mut(&(p.from.clone(), p.to.clone())) {
                    l.spend(t, p.quantity, &tx.tx_id, w);
                }
            }
        }
    }
    Ok(pairs
        .into_iter()
        .filter(|(_, (l, _))| l.received > Decimal::ZERO)
        .map(|((suspect, victim), (l, helpers))| {
            let others: Vec<String> = helpers.into_iter().filter(|h| *h != suspect).collect();
            let mut suspects = vec![suspect];
            suspects.extend(others);
            l.into_flag(AttackKind::FakeReceipt, suspects, victim, cfg)
        })
        .collect())
}

#[derive(Debug, Default)]
struct RollbackLedger {
    tx_ids: Vec<String>,
    gain: Decimal,
    contracts: BTreeSet<String>,
}

#[derive(Debug, Default)]
struct Attempts {
    count: u64,
    first: Option<i64>,
    last: i64,
}

/// Rollback: transactions of at least four actions whose first and last
/// actions belong to one contract, whose two middle actions are opposite
/// transfers between a gambling account and a player, and in which the
/// gambling account pays out more than it takes in.
pub fn flag_rollback_attacks<I>(
    log: I,
    gambling: &BTreeSet<String>,
) -> Result<Vec<AttackFlag>, AttackError>
where
    I: IntoIterator<Item = Result<TransactionRecord, AttackError>>,
{
    let mut wins: BTreeMap<(String, String), RollbackLedger> = BTreeMap::new();
    let mut attempts: BTreeMap<(String, String), Attempts> = BTreeMap::new();
    for tx in log {
        let tx = tx?;
        let t = tx.block_time;
        for (a, p) in eos_transfers(&tx) {
            if is_official(a, p) && gambling.contains(&p.to) {
                let e = attempts.entry((p.from.clone(), p.to.clone())).or_default();
                e.count += 1;
                e.first.get_or_insert(t);
                e.last = t;
            }
        }
        let direct: Vec<&ActionRecord> = tx.actions.iter().filter(|a| a.is_direct()).collect();
        let n = direct.len();
        if n < 4 || direct[0].code_account != direct[n - 1].code_account {
            continue;
        }
        let official = |a: &ActionRecord| {
            a.transfer_payload
                .as_ref()
                .filter(|p| is_official(a, p))
                .cloned()
        };
        let (Some(p1), Some(p2)) = (official(direct[1]), official(direct[n - 2])) else {
            continue;
        };
        if p1.from != p2.to || p1.to != p2.from || p1.from == p1.to {
            continue;
        }
        let victim = if gambling.contains(&p1.to) {
            p1.to.clone()
        } else if gambling.contains(&p1.from) {
            p1.from.clone()
        } else {
            continue;
        };
        let player = if p1.to == victim {
            p1.from.clone()
        } else {
            p1.to.clone()
        };
        let mut outflow = Decimal::ZERO;
        let mut inflow = Decimal::ZERO;
        for p in [&p1, &p2] {
            if p.from == victim {
                outflow += p.quantity;
            } else {
                inflow += p.quantity;
            }
        }
        if outflow <= inflow {
            continue;
        }
        let l = wins.entry((player, victim)).or_default();
        l.tx_ids.push(tx.tx_id.clone());
        l.gain += outflow - inflow;
        l.contracts.insert(direct[0].code_account.clone());
    }
    Ok(wins
        .into_iter()
        .map(|((player, victim), l)| {
            let a = attempts
                .remove(&(player.clone(), victim.clone()))
                .unwrap_or_default();
            let wins = l.tx_ids.len() as u64;
            let first = a.first.unwrap_or(0);
            let hours = ((a.last - first) as f64 / 3600.0).max(1.0);
            let rate = RateRow {
                suspect: player.clone(),
                victim: victim.clone(),
                wins,
                attempts: a.count,
                first_time: first,
                last_time: a.last,
                wins_per_hour: wins as f64 / hours,
            };
            let others: Vec<String> = l.contracts.into_iter().filter(|c| *c != player).collect();
            let mut suspects = vec![player];
            suspects.extend(others);
            AttackFlag {
                kind: AttackKind::Rollback,
                victim,
                suspects,
                tx_ids: l.tx_ids,
                gain_estimate: l.gain,
                confidence: Confidence::Suspicious,
                rate_table: vec![rate],
            }
        })
        .collect())
}

/// Calls of known-unprotected actions authorized by someone other than the
/// contract itself.
pub fn flag_permission_misuse<I>(
    log: I,
    vulnerable_actions: &BTreeSet<(String, String)>,
) -> Result<Vec<AttackFlag>, AttackError>
where
    I: IntoIterator<Item = Result<TransactionRecord, AttackError>>,
{
    let mut hits: BTreeMap<(String, Vec<String>), Vec<String>> = BTreeMap::new();
    for tx in log {
        let tx = tx?;
        for a in tx.actions.iter().filter(|a| a.is_direct()) {
            let key = (a.code_account.clone(), a.action_name.clone());
            if !vulnerable_actions.contains(&key) || a.authorizers.contains(&a.code_account) {
                continue;
            }
            let mut who = a.authorizers.clone();
            who.sort();
            who.dedup();
            let ids = hits.entry((a.code_account.clone(), who)).or_default();
            if ids.last() != Some(&tx.tx_id) {
                ids.push(tx.tx_id.clone());
            }
        }
    }
    Ok(hits
        .into_iter()
        .map(|((victim, suspects), tx_ids)| AttackFlag {
            kind: AttackKind::MissingPermissionMisuse,
            victim,
            suspects,
            tx_ids,
            gain_estimate: Decimal::ZERO,
            confidence: Confidence::Suspicious,
            rate_table: Vec::new(),
        })
        .collect())
}

#[cfg(test)]
mod tests;
