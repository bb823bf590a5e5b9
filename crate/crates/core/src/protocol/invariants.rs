//! Correctness conditions shared by the protocol, system and test models.
//!
//! Each model projects its servers into [`ServerView`]s and calls these checks.

use serde::{Deserialize, Serialize};

use crate::domain::{History, QuorumSystem, ServerSet, Txn, Zxid};

pub const INTEGRITY: &str = "Integrity";
pub const TOTAL_ORDER: &str = "TotalOrder";
pub const LOCAL_PRIMARY_ORDER: &str = "LocalPrimaryOrder";
pub const GLOBAL_PRIMARY_ORDER: &str = "GlobalPrimaryOrder";
pub const PRIMARY_INTEGRITY: &str = "PrimaryIntegrity";
pub const SINGLE_LEADER: &str = "SingleEstablishedLeaderPerEpoch";
pub const EPOCH_MONOTONICITY: &str = "EpochMonotonicity";
pub const LEADER_LOG_COMPLETENESS: &str = "LeaderLogCompleteness";
pub const MONOTONIC_READ: &str = "MonotonicRead";

pub const PROTOCOL_INVARIANTS: [&str; 7] = [
    INTEGRITY,
    TOTAL_ORDER,
    LOCAL_PRIMARY_ORDER,
    GLOBAL_PRIMARY_ORDER,
    PRIMARY_INTEGRITY,
    SINGLE_LEADER,
    EPOCH_MONOTONICITY,
];

pub const SYSTEM_INVARIANTS: [&str; 9] = [
    INTEGRITY,
    TOTAL_ORDER,
    LOCAL_PRIMARY_ORDER,
    GLOBAL_PRIMARY_ORDER,
    PRIMARY_INTEGRITY,
    SINGLE_LEADER,
    EPOCH_MONOTONICITY,
    LEADER_LOG_COMPLETENESS,
    MONOTONIC_READ,
];

/// Short description of each invariant, for `list-invariants`.
pub fn describe(name: &str) -> &'static str {
    match name {
        INTEGRITY => "every committed transaction was proposed by some leader (state check)",
        TOTAL_ORDER => "committed prefixes of any two servers are prefix-related (state check; also covers agreement)",
        LOCAL_PRIMARY_ORDER => "within a committed prefix, one epoch's counters run 1, 2, 3, ... (state check)",
        GLOBAL_PRIMARY_ORDER => "every committed prefix is strictly increasing by zxid (state check)",
        PRIMARY_INTEGRITY => "a broadcasting leader has committed everything it synced (state check)",
        SINGLE_LEADER => "no two quorum-backed leaders in SYNC/BROADCAST share an epoch (state check)",
        EPOCH_MONOTONICITY => "acceptedEpoch and currentEpoch never decrease (step check)",
        LEADER_LOG_COMPLETENESS => "an established leader holds every earlier-epoch transaction committed anywhere (state check)",
        MONOTONIC_READ => "a server's committed prefix only grows (step check)",
        _ => "",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Looking,
    Following,
    Leading,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    None,
    Discovery,
    Sync,
    Broadcast,
}

impl Role {
    pub fn code(self) -> u8 {
        self as u8
    }
}

impl Phase {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn established(self) -> bool {
        matches!(self, Phase::Sync | Phase::Broadcast)
    }
}

/// The per-server fields the invariants read.
#[derive(Debug, Clone, Copy)]
pub struct ServerView<'a> {
    pub role: Role,
    pub phase: Phase,
    pub accepted_epoch: u32,
    pub current_epoch: u32,
    pub history: &'a History,
    pub last_committed: Zxid,
    /// Leader's connected followers (itself included).
    pub support: ServerSet,
    /// Last zxid of the history the leader took into SYNC.
    pub sync_last: Zxid,
}

impl ServerView<'_> {
    pub fn committed(&self) -> &[Txn] {
        self.history.prefix_through(self.last_committed)
    }

    fn established_leader(&self, q: &QuorumSystem) -> bool {
        self.role == Role::Leading && self.phase.established() && q.is_quorum(self.support)
    }
}

fn is_prefix(a: &[Txn], b: &[Txn]) -> bool {
    a.len() <= b.len() && a == &b[..a.len()]
}

/// Core broadcast properties and the single-leader check.
pub fn check_core(
    views: &[ServerView<'_>],
    proposed: &[Txn],
    q: &QuorumSystem,
    out: &mut Vec<&'static str>,
) {
    let committed: Vec<&[Txn]> = views.iter().map(|v| v.committed()).collect();

    if committed
        .iter()
        .any(|c| c.iter().any(|t| !proposed.contains(t)))
    {
        out.push(INTEGRITY);
    }

    let total = committed.iter().enumerate().all(|(i, a)| {
        committed[i + 1..]
            .iter()
            .all(|b| is_prefix(a, b) || is_prefix(b, a))
    });
    if !total {
        out.push(TOTAL_ORDER);
    }

    let local = committed.iter().all(|c| {
        let mut prev = Zxid::ZERO;
        c.iter().all(|t| {
            let ok = if t.zxid.epoch == prev.epoch {
                t.zxid.counter == prev.counter + 1
            } else {
                true
            };
            prev = t.zxid;
            ok
        })
    });
    if !local {
        out.push(LOCAL_PRIMARY_ORDER);
    }

    if !committed
        .iter()
        .all(|c| c.windows(2).all(|w| w[0].zxid < w[1].zxid))
    {
        out.push(GLOBAL_PRIMARY_ORDER);
    }

    if views.iter().any(|v| {
        v.role == Role::Leading && v.phase == Phase::Broadcast && v.last_committed < v.sync_last
    }) {
        out.push(PRIMARY_INTEGRITY);
    }

    let leaders: Vec<&ServerView<'_>> = views.iter().filter(|v| v.established_leader(q)).collect();
    let dup = leaders.iter().enumerate().any(|(i, a)| {
        leaders[i + 1..]
            .iter()
            .any(|b| a.current_epoch == b.current_epoch)
    });
    if dup {
        out.push(SINGLE_LEADER);
    }
}

/// Epoch monotonicity on one step.
pub fn check_epochs(prev: &[ServerView<'_>], next: &[ServerView<'_>], out: &mut Vec<&'static str>) {
    if prev
        .iter()
        .zip(next)
        .any(|(a, b)| b.accepted_epoch < a.accepted_epoch || b.current_epoch < a.current_epoch)
    {
        out.push(EPOCH_MONOTONICITY);
    }
}

/// Leader log completeness: every leader in SYNC or BROADCAST holds each
/// transaction committed on any server (up or down) whose epoch precedes the
/// leader's epoch.
pub fn check_leader_log(views: &[ServerView<'_>], out: &mut Vec<&'static str>) {
    let bad = views
        .iter()
        .filter(|l| l.role == Role::Leading && l.phase.established())
        .any(|l| {
            views.iter().any(|v| {
                v.committed()
                    .iter()
                    .any(|t| t.zxid.epoch < l.current_epoch && !l.history.entries().contains(t))
            })
        });
    if bad {
        out.push(LEADER_LOG_COMPLETENESS);
    }
}

/// Monotonic read on one step.
pub fn check_monotonic_read(
    prev: &[ServerView<'_>],
    next: &[ServerView<'_>],
    out: &mut Vec<&'static str>,
) {
    if prev
        .iter()
        .zip(next)
        .any(|(a, b)| !is_prefix(a.committed(), b.committed()))
    {
        out.push(MONOTONIC_READ);
    }
}
