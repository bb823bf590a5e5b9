//! Shared Zab vocabulary: transaction ids, transactions, logs, server sets and quorums.
//!
//! Every model and the node runtime speak in these types. They are plain values,
//! cheap to clone and safe to share between threads.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Violated precondition on one of the domain operations. Seeing one of these
/// means a model rule is wrong, not that the explored system misbehaved.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContractError {
    #[error("next_zxid: current epoch {current} is behind last zxid {last}")]
    EpochBehind { last: Zxid, current: u32 },
    #[error("truncate_to: {0} is not in the history")]
    MissingZxid(Zxid),
    #[error("server set contains id {id} outside 1..={n}")]
    ServerOutOfRange { id: u8, n: u8 },
}

/// Epoch-qualified transaction id. Ordered lexicographically by (epoch, counter).
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Zxid {
    pub epoch: u32,
    pub counter: u32,
}

impl Zxid {
    /// The "empty log" sentinel.
    pub const ZERO: Zxid = Zxid {
        epoch: 0,
        counter: 0,
    };

    pub const fn new(epoch: u32, counter: u32) -> Self {
        Zxid { epoch, counter }
    }

    pub fn is_zero(self) -> bool {
        self == Zxid::ZERO
    }
}

impl fmt::Display for Zxid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.epoch, self.counter)
    }
}

pub fn compare_zxid(a: Zxid, b: Zxid) -> Ordering {
    a.cmp(&b)
}

/// The zxid a leader in `current_epoch` assigns after `last`.
pub fn next_zxid(last: Zxid, current_epoch: u32) -> Result<Zxid, ContractError> {
    match last.epoch.cmp(&current_epoch) {
        Ordering::Greater => Err(ContractError::EpochBehind {
            last,
            current: current_epoch,
        }),
        Ordering::Equal => Ok(Zxid::new(current_epoch, last.counter + 1)),
        Ordering::Less => Ok(Zxid::new(current_epoch, 1)),
    }
}

/// A proposed state change. The value is an opaque payload; only the zxid matters
/// to the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Txn {
    pub zxid: Zxid,
    pub value: u32,
}

impl Txn {
    pub const fn new(zxid: Zxid, value: u32) -> Self {
        Txn { zxid, value }
    }
}

impl fmt::Display for Txn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.zxid, self.value)
    }
}

/// A server's transaction log, strictly increasing by zxid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct History(pub Vec<Txn>);

impl History {
    pub fn new() -> Self {
        History(Vec::new())
    }

    pub fn from_zxids(zxids: &[(u32, u32)]) -> Self {
        History(
            zxids
                .iter()
                .enumerate()
                .map(|(i, &(e, c))| Txn::new(Zxid::new(e, c), i as u32 + 1))
                .collect(),
        )
    }

    pub fn entries(&self) -> &[Txn] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last_zxid(&self) -> Zxid {
        self.0.last().map_or(Zxid::ZERO, |t| t.zxid)
    }

    pub fn position(&self, z: Zxid) -> Option<usize> {
        self.0.binary_search_by(|t| t.zxid.cmp(&z)).ok()
    }

    /// `(0,0)` is contained in every history as the empty prefix.
    pub fn contains(&self, z: Zxid) -> bool {
        z.is_zero() || self.position(z).is_some()
    }

    pub fn push(&mut self, t: Txn) {
        self.0.push(t);
    }

    /// Entries up to and including `z`; empty for the sentinel.
    pub fn prefix_through(&self, z: Zxid) -> &[Txn] {
        let end = self.0.partition_point(|t| t.zxid <= z);
        &self.0[..end]
    }

    /// Entries strictly after `z`.
    pub fn suffix_after(&self, z: Zxid) -> &[Txn] {
        let start = self.0.partition_point(|t| t.zxid <= z);
        &self.0[start..]
    }

    /// Greatest zxid in the log that is `<= z`, or the sentinel.
    pub fn floor(&self, z: Zxid) -> Zxid {
        self.prefix_through(z).last().map_or(Zxid::ZERO, |t| t.zxid)
    }

    pub fn epochs(&self) -> impl Iterator<Item = u32> + '_ {
        let mut prev = None;
        self.0.iter().filter_map(move |t| {
            if prev == Some(t.zxid.epoch) {
                None
            } else {
                prev = Some(t.zxid.epoch);
                Some(t.zxid.epoch)
            }
        })
    }

    /// Strictly increasing, and counters within an epoch are 1, 2, 3, ...
    pub fn is_well_formed(&self) -> bool {
        let mut prev = Zxid::ZERO;
        for t in &self.0 {
            if t.zxid.counter == 0 || t.zxid <= prev {
                return false;
            }
            let expected = if t.zxid.epoch == prev.epoch {
                prev.counter + 1
            } else {
                1
            };
            if t.zxid.counter != expected {
                return false;
            }
            prev = t.zxid;
        }
        true
    }
}

pub fn truncate_to(h: &History, z: Zxid) -> Result<History, ContractError> {
    if !h.contains(z) {
        return Err(ContractError::MissingZxid(z));
    }
    Ok(History(h.prefix_through(z).to_vec()))
}

/// Server identifier, dense in `1..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ServerId(pub u8);

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Set of server ids as a bitmask; bit `i` is server `i`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ServerSet(pub u32);

impl ServerSet {
    pub const EMPTY: ServerSet = ServerSet(0);

    pub fn single(id: u8) -> Self {
        ServerSet(1 << id)
    }

    pub fn all(n: u8) -> Self {
        ServerSet(((1u32 << (n + 1)) - 1) & !1)
    }

    pub fn of(ids: &[u8]) -> Self {
        ids.iter().fold(ServerSet::EMPTY, |s, &i| s.with(i))
    }

    pub fn contains(self, id: u8) -> bool {
        self.0 & (1 << id) != 0
    }

    #[must_use]
    pub fn with(self, id: u8) -> Self {
        ServerSet(self.0 | (1 << id))
    }

    #[must_use]
    pub fn without(self, id: u8) -> Self {
        ServerSet(self.0 & !(1 << id))
    }

    pub fn insert(&mut self, id: u8) {
        self.0 |= 1 << id;
    }

    pub fn remove(&mut self, id: u8) {
        self.0 &= !(1 << id);
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_disjoint(self, other: ServerSet) -> bool {
        self.0 & other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = u8> {
        (1..32u8).filter(move |&i| self.contains(i))
    }
}

impl fmt::Display for ServerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.iter().map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", ids.join(","))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QuorumRule {
    #[default]
    Majority,
    /// Any set holding at least half of the servers. Two disjoint quorums exist
    /// whenever the server count is even.
    WeakHalf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuorumSystem {
    pub n: u8,
    pub rule: QuorumRule,
}

impl QuorumSystem {
    pub fn new(n: u8, rule: QuorumRule) -> Self {
        QuorumSystem { n, rule }
    }

    pub fn majority(n: u8) -> Self {
        QuorumSystem::new(n, QuorumRule::Majority)
    }

    pub fn is_quorum(&self, s: ServerSet) -> bool {
        let k = s.len();
        let n = self.n as usize;
        match self.rule {
            QuorumRule::Majority => 2 * k > n,
            QuorumRule::WeakHalf => 2 * k >= n && k > 0,
        }
    }

    pub fn check_members(&self, s: ServerSet) -> Result<(), ContractError> {
        match s.iter().find(|&i| i > self.n) {
            Some(id) => Err(ContractError::ServerOutOfRange { id, n: self.n }),
            None if s.contains(0) => Err(ContractError::ServerOutOfRange { id: 0, n: self.n }),
            None => Ok(()),
        }
    }
}

pub fn is_quorum(qs: &QuorumSystem, s: ServerSet) -> bool {
    qs.is_quorum(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn z(e: u32, c: u32) -> Zxid {
        Zxid::new(e, c)
    }

    #[test]
    fn compare_examples() {
        assert_eq!(compare_zxid(z(1, 2), z(1, 3)), Ordering::Less);
        assert_eq!(compare_zxid(z(2, 1), z(1, 9)), Ordering::Greater);
        assert_eq!(compare_zxid(z(3, 4), z(3, 4)), Ordering::Equal);
    }

    #[test]
    fn next_zxid_examples() {
        assert_eq!(next_zxid(z(2, 5), 2), Ok(z(2, 6)));
        assert_eq!(next_zxid(z(2, 5), 3), Ok(z(3, 1)));
        assert_eq!(next_zxid(Zxid::ZERO, 1), Ok(z(1, 1)));
        assert!(matches!(
            next_zxid(z(3, 1), 2),
            Err(ContractError::EpochBehind { .. })
        ));
    }

    #[test]
    fn quorum_examples() {
        assert!(QuorumSystem::majority(3).is_quorum(ServerSet::of(&[1, 2])));
        assert!(!QuorumSystem::majority(4).is_quorum(ServerSet::of(&[1, 2])));
        assert!(QuorumSystem::new(4, QuorumRule::WeakHalf).is_quorum(ServerSet::of(&[1, 2])));
        assert!(QuorumSystem::majority(1).is_quorum(ServerSet::of(&[1])));
    }

    #[test]
    fn out_of_range_members_rejected() {
        let qs = QuorumSystem::majority(3);
        assert!(qs.check_members(ServerSet::of(&[1, 3])).is_ok());
        assert_eq!(
            qs.check_members(ServerSet::of(&[4])),
            Err(ContractError::ServerOutOfRange { id: 4, n: 3 })
        );
    }

    fn all_subsets(n: u8) -> impl Iterator<Item = ServerSet> {
        (0u32..(1 << n)).map(|m| ServerSet(m << 1))
    }

    #[test]
    fn majority_quorums_intersect_exhaustively() {
        for n in 1..=7u8 {
            let qs = QuorumSystem::majority(n);
            let quorums: Vec<_> = all_subsets(n).filter(|s| qs.is_quorum(*s)).collect();
            assert!(!quorums.is_empty());
            for a in &quorums {
                for b in &quorums {
                    assert!(!a.is_disjoint(*b), "n={n}: {a} and {b} are disjoint");
                }
            }
        }
    }

    #[test]
    fn weak_half_has_disjoint_quorums_for_even_n() {
        for n in [2u8, 4, 6] {
            let qs = QuorumSystem::new(n, QuorumRule::WeakHalf);
            let quorums: Vec<_> = all_subsets(n).filter(|s| qs.is_quorum(*s)).collect();
            let found = quorums
                .iter()
                .any(|a| quorums.iter().any(|b| a.is_disjoint(*b)));
            assert!(found, "n={n}");
        }
    }

    #[test]
    fn truncate_examples() {
        let h = History::from_zxids(&[(1, 1), (1, 2), (2, 1)]);
        assert_eq!(
            truncate_to(&h, z(1, 2)).unwrap(),
            History::from_zxids(&[(1, 1), (1, 2)])
        );
        let h1 = History::from_zxids(&[(1, 1)]);
        assert_eq!(truncate_to(&h1, Zxid::ZERO).unwrap(), History::new());
        let h2 = History::from_zxids(&[(1, 1), (1, 2)]);
        assert_eq!(truncate_to(&h2, z(1, 2)).unwrap(), h2);
        assert_eq!(
            truncate_to(&h2, z(1, 3)),
            Err(ContractError::MissingZxid(z(1, 3)))
        );
    }

    #[test]
    fn well_formed_histories() {
        assert!(History::from_zxids(&[(1, 1), (1, 2), (3, 1)]).is_well_formed());
        assert!(!History::from_zxids(&[(1, 1), (1, 3)]).is_well_formed());
        assert!(!History::from_zxids(&[(2, 1), (1, 2)]).is_well_formed());
    }

    fn arb_zxid() -> impl Strategy<Value = Zxid> {
        (0u32..6, 0u32..6).prop_map(|(e, c)| Zxid::new(e, c))
    }

    fn arb_history() -> impl Strategy<Value = History> {
        proptest::collection::vec((1u32..4, 1u32..4), 0..6).prop_map(|mut v| {
            v.sort();
            v.dedup();
            History(
                v.into_iter()
                    .map(|(e, c)| Txn::new(Zxid::new(e, c), e * 10 + c))
                    .collect(),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn zxid_order_is_total_and_transitive(a in arb_zxid(), b in arb_zxid(), c in arb_zxid()) {
            let ab = compare_zxid(a, b);
            prop_assert_eq!(ab, compare_zxid(b, a).reverse());
            prop_assert_eq!(ab == Ordering::Equal, a == b);
            if ab != Ordering::Greater && compare_zxid(b, c) != Ordering::Greater {
                prop_assert_ne!(compare_zxid(a, c), Ordering::Greater);
            }
        }
    }

    proptest! {
        #[test]
        fn truncate_to_last_is_identity_and_idempotent(h in arb_history(), k in 0usize..6) {
            prop_assert_eq!(&truncate_to(&h, h.last_zxid()).unwrap(), &h);
            let z = if k == 0 || h.is_empty() { Zxid::ZERO } else { h.0[(k - 1) % h.len()].zxid };
            let once = truncate_to(&h, z).unwrap();
            prop_assert_eq!(truncate_to(&once, z).unwrap(), once);
        }
    }
}
