//! The refined system model: atomic FLE rounds, latest-zxid discovery,
//! DIFF/TRUNC/SNAP sync with a signaling NEWLEADER, the inherited broadcast,
//! and crash/rejoin plus partition/reconnect failures.
//!
//! The same state machine also runs at the test level ([`Level::Ipa`]), where
//! election and discovery collapse into `IpaEstablish` and `IpaJoin`.

mod model;
pub mod sync;
#[cfg(test)]
mod tests;

use serde::{Deserialize, Serialize};

use crate::domain::{History, ServerSet, Txn, Zxid};
use crate::kernel::Canon;
use crate::protocol::{Phase, Role, ServerView};

pub use model::{Level, SystemModel};
pub use sync::{apply_sync, decide_sync, SyncDecision, SyncMode};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SMsg {
    FollowerInfo {
        accepted: u32,
        last: Zxid,
    },
    NewEpoch {
        epoch: u32,
    },
    /// `vote` is false when the follower had already accepted this epoch:
    /// it may still be synced but does not count toward the epoch quorum.
    AckEpoch {
        current: u32,
        last: Zxid,
        vote: bool,
    },
    Sync {
        decision: SyncDecision,
    },
    /// Signaling only; carries no history.
    NewLeader {
        epoch: u32,
    },
    AckLd {
        last: Zxid,
    },
    CommitLd {
        zxid: Zxid,
    },
    Propose {
        txn: Txn,
    },
    Ack {
        zxid: Zxid,
    },
    Commit {
        zxid: Zxid,
    },
}

impl SMsg {
    pub fn kind(&self) -> &'static str {
        match self {
            SMsg::FollowerInfo { .. } => "FOLLOWERINFO",
            SMsg::NewEpoch { .. } => "NEWEPOCH",
            SMsg::AckEpoch { .. } => "ACKEPOCH",
            SMsg::Sync { .. } => "SYNC",
            SMsg::NewLeader { .. } => "NEWLEADER",
            SMsg::AckLd { .. } => "ACKLD",
            SMsg::CommitLd { .. } => "COMMITLD",
            SMsg::Propose { .. } => "PROPOSE",
            SMsg::Ack { .. } => "ACK",
            SMsg::Commit { .. } => "COMMIT",
        }
    }

    fn encode(&self, c: &mut Canon) {
        match self {
            SMsg::FollowerInfo { accepted, last } => c.u8(0).u32(*accepted).zxid(*last),
            SMsg::NewEpoch { epoch } => c.u8(1).u32(*epoch),
            SMsg::AckEpoch {
                current,
                last,
                vote,
            } => c.u8(2).u32(*current).zxid(*last).bool(*vote),
            SMsg::Sync { decision: d } => c
                .u8(3)
                .u8(d.mode as u8)
                .zxid(d.trunc_to)
                .txns(&d.payload)
                .zxid(d.commit_to),
            SMsg::NewLeader { epoch } => c.u8(4).u32(*epoch),
            SMsg::AckLd { last } => c.u8(5).zxid(*last),
            SMsg::CommitLd { zxid } => c.u8(6).zxid(*zxid),
            SMsg::Propose { txn } => c.u8(7).txn(txn),
            SMsg::Ack { zxid } => c.u8(8).zxid(*zxid),
            SMsg::Commit { zxid } => c.u8(9).zxid(*zxid),
        };
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SServer {
    pub up: bool,
    pub role: Role,
    pub phase: Phase,
    pub accepted_epoch: u32,
    pub current_epoch: u32,
    pub history: History,
    pub last_committed: Zxid,
    /// Followed leader, 0 if none.
    pub leader: u8,
    /// Follower: FOLLOWERINFO sent.
    pub info_sent: bool,
    /// Follower: NEWLEADER applied.
    pub nl_seen: bool,
    /// Leader: followers whose FOLLOWERINFO was accepted (its connected set).
    pub registered: ServerSet,
    /// Leader: voting ACKEPOCHs.
    pub acke_recv: ServerSet,
    /// Leader: every follower that sent ACKEPOCH and may be synced.
    pub ready: ServerSet,
    /// Leader: followers already sent SYNC + NEWLEADER; they get every PROPOSE/COMMIT.
    pub synced: ServerSet,
    pub ackld_recv: ServerSet,
    pub ack_recv: Vec<(Zxid, ServerSet)>,
    /// Leader: last zxid each follower reported in ACKEPOCH, sorted by id.
    pub flast: Vec<(u8, Zxid)>,
    pub max_accepted: u32,
    pub epoch_chosen: bool,
    pub sync_last: Zxid,
}

impl SServer {
    pub fn fresh() -> Self {
        SServer {
            up: true,
            role: Role::Looking,
            phase: Phase::None,
            accepted_epoch: 0,
            current_epoch: 0,
            history: History::new(),
            last_committed: Zxid::ZERO,
            leader: 0,
            info_sent: false,
            nl_seen: false,
            registered: ServerSet::EMPTY,
            acke_recv: ServerSet::EMPTY,
            ready: ServerSet::EMPTY,
            synced: ServerSet::EMPTY,
            ackld_recv: ServerSet::EMPTY,
            ack_recv: Vec::new(),
            flast: Vec::new(),
            max_accepted: 0,
            epoch_chosen: false,
            sync_last: Zxid::ZERO,
        }
    }

    /// Keeps the durable epochs, history, commit point and up flag.
    pub(crate) fn reset_volatile(&mut self) {
        let mut next = SServer::fresh();
        next.up = self.up;
        next.accepted_epoch = self.accepted_epoch;
        next.current_epoch = self.current_epoch;
        next.history = std::mem::take(&mut self.history);
        next.last_committed = self.last_committed;
        *self = next;
    }

    pub fn follower_last(&self, f: u8) -> Option<Zxid> {
        self.flast.iter().find(|(id, _)| *id == f).map(|(_, z)| *z)
    }

    pub(crate) fn set_follower_last(&mut self, f: u8, z: Zxid) {
        match self.flast.binary_search_by_key(&f, |(id, _)| *id) {
            Ok(i) => self.flast[i].1 = z,
            Err(i) => self.flast.insert(i, (f, z)),
        }
    }

    /// FLE vote key.
    pub fn vote(&self, id: u8) -> (u32, Zxid, u8) {
        (self.current_epoch, self.history.last_zxid(), id)
    }

    pub fn view(&self) -> ServerView<'_> {
        ServerView {
            role: self.role,
            phase: self.phase,
            accepted_epoch: self.accepted_epoch,
            current_epoch: self.current_epoch,
            history: &self.history,
            last_committed: self.last_committed,
            support: self.registered,
            sync_last: self.sync_last,
        }
    }

    fn encode(&self, c: &mut Canon) {
        c.bool(self.up)
            .u8(self.role.code())
            .u8(self.phase.code())
            .u32(self.accepted_epoch)
            .u32(self.current_epoch)
            .history(&self.history)
            .zxid(self.last_committed)
            .u8(self.leader)
            .bool(self.info_sent)
            .bool(self.nl_seen)
            .set(self.registered)
            .set(self.acke_recv)
            .set(self.ready)
            .set(self.synced)
            .set(self.ackld_recv)
            .len(self.ack_recv.len());
        for (z, s) in &self.ack_recv {
            c.zxid(*z).set(*s);
        }
        c.len(self.flast.len());
        for (f, z) in &self.flast {
            c.u8(*f).zxid(*z);
        }
        c.u32(self.max_accepted)
            .bool(self.epoch_chosen)
            .zxid(self.sync_last);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SystemState {
    pub servers: Vec<SServer>,
    /// In-flight `(from, to, msg)`, sorted by `(from, to)`, FIFO within a pair.
    pub channels: Vec<(u8, u8, SMsg)>,
    /// Partitioned pairs `(a, b)` with `a < b`, sorted.
    pub partitions: Vec<(u8, u8)>,
    pub crashes_left: u8,
    pub partitions_left: u8,
    pub txns_left: u8,
    /// Ghost: every transaction ever proposed (init-state logs included).
    pub proposed: Vec<Txn>,
}

impl SystemState {
    pub fn n(&self) -> u8 {
        self.servers.len() as u8
    }

    pub fn server(&self, id: u8) -> &SServer {
        &self.servers[id as usize - 1]
    }

    pub(crate) fn srv(&mut self, id: u8) -> &mut SServer {
        &mut self.servers[id as usize - 1]
    }

    fn chan_range(&self, from: u8, to: u8) -> std::ops::Range<usize> {
        let lo = self
            .channels
            .partition_point(|(a, b, _)| (*a, *b) < (from, to));
        let hi = self
            .channels
            .partition_point(|(a, b, _)| (*a, *b) <= (from, to));
        lo..hi
    }

    /// In-flight messages on `from -> to`, oldest first.
    pub fn channel(&self, from: u8, to: u8) -> Vec<SMsg> {
        self.channels[self.chan_range(from, to)]
            .iter()
            .map(|(_, _, m)| m.clone())
            .collect()
    }

    pub fn head(&self, from: u8, to: u8) -> Option<&SMsg> {
        self.channels
            .get(self.chan_range(from, to))
            .and_then(|r| r.first())
            .map(|(_, _, m)| m)
    }

    pub(crate) fn pop(&mut self, from: u8, to: u8) -> SMsg {
        let r = self.chan_range(from, to);
        assert!(!r.is_empty(), "empty channel {from}->{to}");
        self.channels.remove(r.start).2
    }

    pub(crate) fn send(&mut self, from: u8, to: u8, m: SMsg) {
        let at = self.chan_range(from, to).end;
        self.channels.insert(at, (from, to, m));
    }

    pub(crate) fn clear_pair(&mut self, a: u8, b: u8) {
        self.channels
            .retain(|(x, y, _)| !((*x, *y) == (a, b) || (*x, *y) == (b, a)));
    }

    pub(crate) fn clear_all(&mut self, s: u8) {
        self.channels.retain(|(x, y, _)| *x != s && *y != s);
    }

    pub fn partitioned(&self, a: u8, b: u8) -> bool {
        let key = (a.min(b), a.max(b));
        self.partitions.binary_search(&key).is_ok()
    }

    /// Every pair of members can talk.
    pub fn connected(&self, members: ServerSet) -> bool {
        let ids: Vec<u8> = members.iter().collect();
        ids.iter()
            .enumerate()
            .all(|(i, a)| ids[i + 1..].iter().all(|b| !self.partitioned(*a, *b)))
    }

    pub fn views(&self) -> Vec<ServerView<'_>> {
        self.servers.iter().map(SServer::view).collect()
    }

    pub(crate) fn encode(&self, c: &mut Canon) {
        for s in &self.servers {
            s.encode(c);
        }
        c.len(self.channels.len());
        for (from, to, m) in &self.channels {
            c.u8(*from).u8(*to);
            m.encode(c);
        }
        c.len(self.partitions.len());
        for (a, b) in &self.partitions {
            c.u8(*a).u8(*b);
        }
        c.u8(self.crashes_left)
            .u8(self.partitions_left)
            .u8(self.txns_left)
            .txns(&self.proposed);
    }
}
