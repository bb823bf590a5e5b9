//! Event-driven Zab node used as the implementation under conformance test.
//!
//! Handlers are plain sequential code over a durable store and volatile role
//! state. A node never acts on its own: the controller hands it one event at a
//! time and routes the returned [`Out`] effects. This file depends only on the
//! shared value types, never on the models.

use std::collections::BTreeMap;
use std::fmt;

use crate::domain::{History, QuorumSystem, ServerSet, Txn, Zxid};

/// Which handshake the node speaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dialect {
    /// Oracle election, CEPOCH and full-history ACKEPOCH/NEWLEADER.
    Classic,
    /// FLE, FOLLOWERINFO with the last zxid, DIFF/TRUNC/SNAP sync.
    Refined,
}

/// Deliberately broken node builds for sensitivity tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PlantedFault {
    /// TRUNC sync appends the payload without cutting the log.
    BrokenTruncate,
    /// A follower handles COMMIT without moving lastCommitted.
    StaleCommit,
    /// acceptedEpoch is kept in memory only and is lost on crash.
    EpochNotPersisted,
}

impl PlantedFault {
    pub const ALL: [PlantedFault; 3] = [
        PlantedFault::BrokenTruncate,
        PlantedFault::StaleCommit,
        PlantedFault::EpochNotPersisted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlantedFault::BrokenTruncate => "broken-truncate",
            PlantedFault::StaleCommit => "stale-commit",
            PlantedFault::EpochNotPersisted => "epoch-not-persisted",
        }
    }

    /// Projection field the fault corrupts.
    pub fn field(self) -> &'static str {
        match self {
            PlantedFault::BrokenTruncate => "history",
            PlantedFault::StaleCommit => "lastCommitted",
            PlantedFault::EpochNotPersisted => "acceptedEpoch",
        }
    }

    pub fn parse(s: &str) -> Option<PlantedFault> {
        PlantedFault::ALL.into_iter().find(|f| f.name() == s)
    }
}

/// Compile-time-style switches of one node build.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeBuild {
    pub commit_before_quorum: bool,
    pub skip_trunc: bool,
    pub recover_race_raw: bool,
    pub diff_from_uncommitted: bool,
    pub snapshot_boundary: Option<Zxid>,
    pub faults: Vec<PlantedFault>,
}

impl NodeBuild {
    fn broken(&self, f: PlantedFault) -> bool {
        self.faults.contains(&f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncKind {
    Diff,
    Trunc,
    Snap,
}

impl SyncKind {
    pub fn name(self) -> &'static str {
        match self {
            SyncKind::Diff => "DIFF",
            SyncKind::Trunc => "TRUNC",
            SyncKind::Snap => "SNAP",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Wire {
    CEpoch {
        accepted: u32,
    },
    FollowerInfo {
        accepted: u32,
        last: Zxid,
    },
    NewEpoch {
        epoch: u32,
    },
    AckEpochLog {
        current: u32,
        log: Vec<Txn>,
    },
    AckEpoch {
        current: u32,
        last: Zxid,
        vote: bool,
    },
    Sync {
        kind: SyncKind,
        trunc_to: Zxid,
        txns: Vec<Txn>,
        commit_to: Zxid,
    },
    NewLeaderLog {
        epoch: u32,
        log: Vec<Txn>,
    },
    NewLeader {
        epoch: u32,
    },
    AckLd,
    AckLdAt {
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

fn write_txns(f: &mut fmt::Formatter<'_>, txns: &[Txn]) -> fmt::Result {
    f.write_str("[")?;
    for (i, t) in txns.iter().enumerate() {
        if i > 0 {
            f.write_str(" ")?;
        }
        write!(f, "{}:{}", t.zxid, t.value)?;
    }
    f.write_str("]")
}

impl Wire {
    pub fn kind(&self) -> &'static str {
        match self {
            Wire::CEpoch { .. } => "CEPOCH",
            Wire::FollowerInfo { .. } => "FOLLOWERINFO",
            Wire::NewEpoch { .. } => "NEWEPOCH",
            Wire::AckEpochLog { .. } | Wire::AckEpoch { .. } => "ACKEPOCH",
            Wire::Sync { .. } => "SYNC",
            Wire::NewLeaderLog { .. } | Wire::NewLeader { .. } => "NEWLEADER",
            Wire::AckLd | Wire::AckLdAt { .. } => "ACKLD",
            Wire::CommitLd { .. } => "COMMITLD",
            Wire::Propose { .. } => "PROPOSE",
            Wire::Ack { .. } => "ACK",
            Wire::Commit { .. } => "COMMIT",
        }
    }
}

/// `KIND field=value ...`, the form the controller compares against.
impl fmt::Display for Wire {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind())?;
        match self {
            Wire::CEpoch { accepted } => write!(f, " accepted={accepted}"),
            Wire::FollowerInfo { accepted, last } => write!(f, " accepted={accepted} last={last}"),
            Wire::NewEpoch { epoch } => write!(f, " epoch={epoch}"),
            Wire::AckEpochLog { current, log } => {
                write!(f, " current={current} log=")?;
                write_txns(f, log)
            }
            Wire::AckEpoch {
                current,
                last,
                vote,
            } => {
                write!(f, " current={current} last={last} vote={vote}")
            }
            Wire::Sync {
                kind,
                trunc_to,
                txns,
                commit_to,
            } => {
                write!(
                    f,
                    " mode={} trunc={trunc_to} commit={commit_to} txns=",
                    kind.name()
                )?;
                write_txns(f, txns)
            }
            Wire::NewLeaderLog { epoch, log } => {
                write!(f, " epoch={epoch} log=")?;
                write_txns(f, log)
            }
            Wire::NewLeader { epoch } => write!(f, " epoch={epoch}"),
            Wire::AckLd => Ok(()),
            Wire::AckLdAt { last } => write!(f, " last={last}"),
            Wire::CommitLd { zxid } | Wire::Ack { zxid } | Wire::Commit { zxid } => {
                write!(f, " zxid={zxid}")
            }
            Wire::Propose { txn } => write!(f, " txn={}:{}", txn.zxid, txn.value),
        }
    }
}

/// Effects a handler asks the controller to perform, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Out {
    Send(u8, Wire),
    /// Close the connection to one peer.
    Leave(u8),
    /// Close every connection.
    CloseAll,
}

/// What a node reports to the election/establish service.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ballot {
    pub id: u8,
    pub accepted_epoch: u32,
    pub current_epoch: u32,
    pub last: Zxid,
}

impl Ballot {
    fn key(&self) -> (u32, Zxid, u8) {
        (self.current_epoch, self.last, self.id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    Looking,
    Following,
    Leading,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodePhase {
    Idle,
    Discovery,
    Sync,
    Broadcast,
}

impl NodeRole {
    pub fn name(self) -> &'static str {
        match self {
            NodeRole::Looking => "LOOKING",
            NodeRole::Following => "FOLLOWING",
            NodeRole::Leading => "LEADING",
        }
    }
}

impl NodePhase {
    pub fn name(self) -> &'static str {
        match self {
            NodePhase::Idle => "NONE",
            NodePhase::Discovery => "DISCOVERY",
            NodePhase::Sync => "SYNC",
            NodePhase::Broadcast => "BROADCAST",
        }
    }

    fn active(self) -> bool {
        matches!(self, NodePhase::Sync | NodePhase::Broadcast)
    }
}

/// What survives a crash.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Store {
    pub accepted_epoch: u32,
    pub current_epoch: u32,
    pub log: Vec<Txn>,
    pub last_committed: Zxid,
}

/// Model-comparable view of one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeProjection {
    pub up: bool,
    pub role: &'static str,
    pub phase: &'static str,
    pub accepted_epoch: u32,
    pub current_epoch: u32,
    pub history: Vec<Txn>,
    pub last_committed: Zxid,
}

#[derive(Debug, Clone)]
struct Candidate {
    current: u32,
    last: Zxid,
    from: u8,
    log: Vec<Txn>,
}

#[derive(Debug, Clone, Default)]
struct LeaderBook {
    /// Followers that reached us (CEPOCH/FOLLOWERINFO); losing quorum here ends leadership.
    connected: ServerSet,
    voters: ServerSet,
    /// Refined: followers that may be synced.
    ready: ServerSet,
    /// Refined: followers sent SYNC + NEWLEADER.
    synced: ServerSet,
    acked_nl: ServerSet,
    outstanding: BTreeMap<Zxid, ServerSet>,
    peer_last: BTreeMap<u8, Zxid>,
    max_accepted: u32,
    epoch_chosen: bool,
    best: Option<Candidate>,
}

#[derive(Debug, Clone)]
struct Volatile {
    role: NodeRole,
    phase: NodePhase,
    leader: u8,
    info_sent: bool,
    nl_seen: bool,
    book: LeaderBook,
    /// EpochNotPersisted: acceptedEpoch held only in memory.
    unsaved_epoch: Option<u32>,
}

impl Volatile {
    fn fresh() -> Self {
        Volatile {
            role: NodeRole::Looking,
            phase: NodePhase::Idle,
            leader: 0,
            info_sent: false,
            nl_seen: false,
            book: LeaderBook::default(),
            unsaved_epoch: None,
        }
    }
}

/// Why a node refused a local action the schedule fired.
pub type Refusal = String;

#[derive(Debug, Clone)]
pub struct NodeRuntime {
    pub id: u8,
    dialect: Dialect,
    quorum: QuorumSystem,
    build: NodeBuild,
    up: bool,
    store: Store,
    vol: Volatile,
}

fn log_has(log: &[Txn], z: Zxid) -> bool {
    z.is_zero() || log.iter().any(|t| t.zxid == z)
}

fn last_of(log: &[Txn]) -> Zxid {
    log.last().map_or(Zxid::ZERO, |t| t.zxid)
}

/// Greatest logged zxid not above `z`.
fn floor_of(log: &[Txn], z: Zxid) -> Zxid {
    log.iter()
        .rev()
        .map(|t| t.zxid)
        .find(|x| *x <= z)
        .unwrap_or(Zxid::ZERO)
}

impl NodeRuntime {
    pub fn new(id: u8, dialect: Dialect, quorum: QuorumSystem, build: NodeBuild) -> Self {
        NodeRuntime {
            id,
            dialect,
            quorum,
            build,
            up: true,
            store: Store::default(),
            vol: Volatile::fresh(),
        }
    }

    /// Starts from a pre-existing disk image.
    pub fn with_store(mut self, store: Store) -> Self {
        self.store = store;
        self
    }

    pub fn is_up(&self) -> bool {
        self.up
    }

    pub fn role(&self) -> NodeRole {
        self.vol.role
    }

    pub fn project(&self) -> NodeProjection {
        NodeProjection {
            up: self.up,
            role: self.vol.role.name(),
            phase: self.vol.phase.name(),
            accepted_epoch: self.accepted_epoch(),
            current_epoch: self.store.current_epoch,
            history: self.store.log.clone(),
            last_committed: self.store.last_committed,
        }
    }

    fn accepted_epoch(&self) -> u32 {
        self.vol.unsaved_epoch.unwrap_or(self.store.accepted_epoch)
    }

    fn set_accepted_epoch(&mut self, e: u32) {
        if self.build.broken(PlantedFault::EpochNotPersisted) {
            self.vol.unsaved_epoch = Some(e);
        } else {
            self.store.accepted_epoch = e;
        }
    }

    fn set_current_epoch(&mut self, e: u32) {
        self.store.current_epoch = e;
    }

    fn last(&self) -> Zxid {
        last_of(&self.store.log)
    }

    fn q(&self, s: ServerSet) -> bool {
        self.quorum.is_quorum(s)
    }

    pub fn ballot(&self) -> Ballot {
        Ballot {
            id: self.id,
            accepted_epoch: self.accepted_epoch(),
            current_epoch: self.store.current_epoch,
            last: self.last(),
        }
    }

    fn me(&self) -> ServerSet {
        ServerSet::single(self.id)
    }

    /// Back to LOOKING; in-memory state is dropped, the store is kept.
    fn step_down(&mut self) {
        let unsaved = self.vol.unsaved_epoch;
        self.vol = Volatile::fresh();
        self.vol.unsaved_epoch = unsaved;
    }

    fn expect(&self, ok: bool, what: &str) -> Result<(), Refusal> {
        if !self.up {
            return Err(format!("node {} is down", self.id));
        }
        if ok {
            Ok(())
        } else {
            Err(format!("node {}: {what}", self.id))
        }
    }

    fn start_leading(&mut self) {
        let me = self.me();
        self.vol.role = NodeRole::Leading;
        self.vol.phase = NodePhase::Discovery;
        self.vol.leader = 0;
        self.vol.book = LeaderBook {
            connected: me,
            voters: me,
            ready: me,
            synced: me,
            acked_nl: me,
            max_accepted: self.accepted_epoch(),
            ..LeaderBook::default()
        };
    }

    fn start_following(&mut self, l: u8) {
        self.vol.role = NodeRole::Following;
        self.vol.phase = NodePhase::Discovery;
        self.vol.leader = l;
        self.vol.info_sent = false;
        self.vol.nl_seen = false;
    }

    // ---- local actions -------------------------------------------------

    /// Atomic FLE round over the members' ballots.
    pub fn elect(&mut self, ballots: &[Ballot]) -> Result<Vec<Out>, Refusal> {
        self.expect(self.vol.role == NodeRole::Looking, "not LOOKING")?;
        let w = ballots
            .iter()
            .max_by_key(|b| b.key())
            .ok_or("no ballots")?
            .id;
        let mut out = Vec::new();
        if w == self.id {
            self.start_leading();
            self.progress(&mut out);
        } else {
            self.start_following(w);
        }
        Ok(out)
    }

    /// Election plus discovery in one step (test level).
    pub fn establish(&mut self, ballots: &[Ballot]) -> Result<Vec<Out>, Refusal> {
        self.expect(self.vol.role == NodeRole::Looking, "not LOOKING")?;
        let w = ballots
            .iter()
            .max_by_key(|b| b.key())
            .ok_or("no ballots")?
            .id;
        let e = ballots.iter().map(|b| b.accepted_epoch).max().unwrap_or(0) + 1;
        let mut out = Vec::new();
        if w != self.id {
            self.start_following(w);
            self.vol.info_sent = true;
            self.set_accepted_epoch(e);
            return Ok(out);
        }
        self.start_leading();
        let members = ballots.iter().fold(ServerSet::EMPTY, |s, b| s.with(b.id));
        let book = &mut self.vol.book;
        book.connected = members;
        book.voters = members;
        book.ready = members;
        book.max_accepted = e - 1;
        book.epoch_chosen = true;
        for b in ballots.iter().filter(|b| b.id != self.id) {
            book.peer_last.insert(b.id, b.last);
        }
        self.set_accepted_epoch(e);
        self.set_current_epoch(e);
        self.vol.phase = NodePhase::Sync;
        self.progress(&mut out);
        Ok(out)
    }

    /// The epoch a late joiner is offered.
    pub fn offered_epoch(&self) -> u32 {
        self.accepted_epoch()
    }

    /// Test-level join: the follower half. Returns its last zxid and whether
    /// the epoch is new to it.
    pub fn join_established(&mut self, leader: u8, epoch: u32) -> Result<(Zxid, bool), Refusal> {
        self.expect(self.vol.role == NodeRole::Looking, "not LOOKING")?;
        let vote = self.accepted_epoch() < epoch;
        self.start_following(leader);
        self.vol.info_sent = true;
        self.set_accepted_epoch(epoch);
        Ok((self.last(), vote))
    }

    /// Test-level join: the leader half.
    pub fn admit(&mut self, f: u8, last: Zxid, vote: bool) -> Result<(), Refusal> {
        self.expect(
            self.vol.role == NodeRole::Leading && self.vol.phase.active(),
            "not an established leader",
        )?;
        let book = &mut self.vol.book;
        book.connected.insert(f);
        if vote {
            book.voters.insert(f);
        }
        book.ready.insert(f);
        book.peer_last.insert(f, last);
        Ok(())
    }

    /// FLE join of a running ensemble.
    pub fn join(&mut self, leader: u8) -> Result<Vec<Out>, Refusal> {
        self.expect(self.vol.role == NodeRole::Looking, "not LOOKING")?;
        self.start_following(leader);
        Ok(Vec::new())
    }

    pub fn send_follower_info(&mut self) -> Result<Vec<Out>, Refusal> {
        self.expect(
            self.vol.role == NodeRole::Following
                && self.vol.phase == NodePhase::Discovery
                && !self.vol.info_sent,
            "no FOLLOWERINFO due",
        )?;
        self.vol.info_sent = true;
        Ok(vec![Out::Send(
            self.vol.leader,
            Wire::FollowerInfo {
                accepted: self.accepted_epoch(),
                last: self.last(),
            },
        )])
    }

    /// Classic oracle: become leader.
    pub fn lead(&mut self) -> Result<Vec<Out>, Refusal> {
        self.expect(self.vol.role == NodeRole::Looking, "not LOOKING")?;
        self.start_leading();
        self.vol.book.best = Some(Candidate {
            current: self.store.current_epoch,
            last: self.last(),
            from: self.id,
            log: self.store.log.clone(),
        });
        let mut out = Vec::new();
        self.progress(&mut out);
        Ok(out)
    }

    /// Classic oracle: follow `leader`.
    pub fn follow(&mut self, leader: u8) -> Result<Vec<Out>, Refusal> {
        self.expect(self.vol.role == NodeRole::Looking, "not LOOKING")?;
        self.vol.role = NodeRole::Following;
        self.vol.phase = NodePhase::Discovery;
        self.vol.leader = leader;
        Ok(vec![Out::Send(
            leader,
            Wire::CEpoch {
                accepted: self.accepted_epoch(),
            },
        )])
    }

    /// Follower gives up on its leader.
    pub fn abandon(&mut self) -> Result<Vec<Out>, Refusal> {
        self.expect(self.vol.role == NodeRole::Following, "not FOLLOWING")?;
        let l = self.vol.leader;
        self.step_down();
        Ok(vec![Out::Leave(l)])
    }

    /// Crash and immediate recovery from disk.
    pub fn restart(&mut self) -> Result<Vec<Out>, Refusal> {
        self.expect(true, "")?;
        self.vol = Volatile::fresh();
        Ok(vec![Out::CloseAll])
    }

    pub fn crash(&mut self) -> Result<Vec<Out>, Refusal> {
        self.expect(true, "")?;
        self.vol = Volatile::fresh();
        self.up = false;
        Ok(vec![Out::CloseAll])
    }

    pub fn recover(&mut self) -> Result<(), Refusal> {
        if self.up {
            return Err(format!("node {} is already up", self.id));
        }
        self.up = true;
        self.vol = Volatile::fresh();
        Ok(())
    }

    pub fn propose(&mut self, value: u32) -> Result<Vec<Out>, Refusal> {
        self.expect(
            self.vol.role == NodeRole::Leading && self.vol.phase == NodePhase::Broadcast,
            "not a broadcasting leader",
        )?;
        let last = self.last();
        let epoch = self.store.current_epoch;
        let zxid = if last.epoch == epoch {
            Zxid::new(epoch, last.counter + 1)
        } else if last.epoch < epoch {
            Zxid::new(epoch, 1)
        } else {
            return Err(format!("node {}: log is ahead of its epoch", self.id));
        };
        let txn = Txn::new(zxid, value);
        self.store.log.push(txn);
        self.vol.book.outstanding.insert(zxid, self.me());
        let targets = match self.dialect {
            Dialect::Classic => self.vol.book.voters,
            Dialect::Refined => self.vol.book.synced,
        };
        let mut out: Vec<Out> = targets
            .without(self.id)
            .iter()
            .map(|f| Out::Send(f, Wire::Propose { txn }))
            .collect();
        let early = self.dialect == Dialect::Refined && self.build.commit_before_quorum;
        if early || self.q(self.me()) {
            self.commit_through(zxid, &mut out);
        }
        Ok(out)
    }

    /// Refined: ship SYNC, pending proposals and NEWLEADER to a ready follower.
    pub fn sync_follower(&mut self, f: u8) -> Result<Vec<Out>, Refusal> {
        let book = &self.vol.book;
        self.expect(
            self.vol.role == NodeRole::Leading
                && self.vol.phase.active()
                && book.ready.contains(f)
                && !book.synced.contains(f)
                && f != self.id,
            "follower not waiting for sync",
        )?;
        let peer_last = book.peer_last.get(&f).copied().unwrap_or(Zxid::ZERO);
        let mut backlog = Vec::new();
        let source: Vec<Txn> = if self.vol.phase == NodePhase::Broadcast {
            if self.build.diff_from_uncommitted {
                self.store.last_committed = self.last();
                let lc = self.store.last_committed;
                self.vol.book.outstanding.retain(|z, _| *z > lc);
                self.store.log.clone()
            } else {
                let lc = self.store.last_committed;
                let (done, pending): (Vec<Txn>, Vec<Txn>) =
                    self.store.log.iter().partition(|t| t.zxid <= lc);
                backlog = pending;
                done
            }
        } else {
            self.store.log.clone()
        };
        let (kind, trunc_to, txns) = self.plan_sync(&source, peer_last);
        let mut out = vec![Out::Send(
            f,
            Wire::Sync {
                kind,
                trunc_to,
                txns,
                commit_to: self.store.last_committed,
            },
        )];
        out.extend(
            backlog
                .into_iter()
                .map(|txn| Out::Send(f, Wire::Propose { txn })),
        );
        out.push(Out::Send(
            f,
            Wire::NewLeader {
                epoch: self.store.current_epoch,
            },
        ));
        self.vol.book.synced.insert(f);
        Ok(out)
    }

    fn plan_sync(&self, src: &[Txn], peer: Zxid) -> (SyncKind, Zxid, Vec<Txn>) {
        let after = |z: Zxid| {
            src.iter()
                .filter(|t| t.zxid > z)
                .cloned()
                .collect::<Vec<_>>()
        };
        let too_old = self.build.snapshot_boundary.is_some_and(|b| peer < b);
        if !src.is_empty() && too_old {
            return (SyncKind::Snap, Zxid::ZERO, src.to_vec());
        }
        if log_has(src, peer) {
            return (SyncKind::Diff, Zxid::ZERO, after(peer));
        }
        if !src.is_empty() && src.iter().all(|t| peer.epoch < t.zxid.epoch) {
            return (SyncKind::Snap, Zxid::ZERO, src.to_vec());
        }
        if self.build.skip_trunc {
            return (SyncKind::Diff, Zxid::ZERO, after(peer));
        }
        let cut = floor_of(src, peer);
        (SyncKind::Trunc, cut, after(cut))
    }

    // ---- leader bookkeeping -------------------------------------------

    /// Moves the leader through whatever phase steps its quorums allow.
    fn progress(&mut self, out: &mut Vec<Out>) {
        if self.vol.role != NodeRole::Leading {
            return;
        }
        if self.vol.phase == NodePhase::Discovery
            && !self.vol.book.epoch_chosen
            && self.q(self.vol.book.connected)
        {
            let e = self.vol.book.max_accepted + 1;
            self.set_accepted_epoch(e);
            self.vol.book.epoch_chosen = true;
            for f in self.vol.book.connected.without(self.id).iter() {
                out.push(Out::Send(f, Wire::NewEpoch { epoch: e }));
            }
        }
        if self.vol.phase == NodePhase::Discovery
            && self.vol.book.epoch_chosen
            && self.q(self.vol.book.voters)
        {
            let e = self.accepted_epoch();
            if self.dialect == Dialect::Classic {
                let best = self.vol.book.best.take().expect("own candidate");
                self.store.log = best.log;
            }
            self.set_current_epoch(e);
            self.vol.phase = NodePhase::Sync;
            if self.dialect == Dialect::Classic {
                for f in self.vol.book.voters.without(self.id).iter() {
                    out.push(Out::Send(
                        f,
                        Wire::NewLeaderLog {
                            epoch: e,
                            log: self.store.log.clone(),
                        },
                    ));
                }
            }
        }
        if self.vol.phase == NodePhase::Sync && self.q(self.vol.book.acked_nl) {
            self.vol.phase = NodePhase::Broadcast;
            let z = self.last();
            self.store.last_committed = z;
            for f in self.vol.book.acked_nl.without(self.id).iter() {
                out.push(Out::Send(f, Wire::CommitLd { zxid: z }));
            }
        }
    }

    fn commit_through(&mut self, z: Zxid, out: &mut Vec<Out>) {
        self.store.last_committed = self.store.last_committed.max(z);
        let lc = self.store.last_committed;
        self.vol.book.outstanding.retain(|x, _| *x > lc);
        let targets = match self.dialect {
            Dialect::Classic => self.vol.book.voters,
            Dialect::Refined => self.vol.book.synced,
        };
        for f in targets.without(self.id).iter() {
            out.push(Out::Send(f, Wire::Commit { zxid: z }));
        }
    }

    /// Records `from`'s ack of every outstanding zxid `credit` accepts and
    /// commits the ones that just reached a quorum.
    fn credit_acks(&mut self, from: u8, credit: impl Fn(Zxid) -> bool, out: &mut Vec<Out>) {
        let mut newly = Vec::new();
        for (z, set) in self.vol.book.outstanding.iter_mut() {
            if credit(*z) {
                let had = self.quorum.is_quorum(*set);
                set.insert(from);
                if !had && self.quorum.is_quorum(*set) {
                    newly.push(*z);
                }
            }
        }
        for z in newly {
            self.commit_through(z, out);
        }
    }

    fn resign(&mut self, out: &mut Vec<Out>) {
        self.step_down();
        out.push(Out::CloseAll);
    }

    /// Follower-side failure: drop the leader and tell it.
    fn quit(&mut self, out: &mut Vec<Out>) {
        let l = self.vol.leader;
        self.step_down();
        if l != 0 {
            out.push(Out::Leave(l));
        }
    }

    /// The connection to `peer` is gone.
    pub fn peer_lost(&mut self, peer: u8) -> Vec<Out> {
        let mut out = Vec::new();
        if !self.up {
            return out;
        }
        match self.vol.role {
            NodeRole::Following if self.vol.leader == peer => self.step_down(),
            NodeRole::Leading => {
                let book = &mut self.vol.book;
                let was_member = book.connected.contains(peer);
                book.connected.remove(peer);
                book.voters.remove(peer);
                book.ready.remove(peer);
                book.synced.remove(peer);
                book.acked_nl.remove(peer);
                for set in book.outstanding.values_mut() {
                    set.remove(peer);
                }
                book.peer_last.remove(&peer);
                if was_member && !self.q(self.vol.book.connected) {
                    self.resign(&mut out);
                }
            }
            _ => {}
        }
        out
    }

    // ---- message handlers ---------------------------------------------

    pub fn receive(&mut self, from: u8, msg: Wire) -> Vec<Out> {
        let mut out = Vec::new();
        if !self.up {
            return out;
        }
        let leading = self.vol.role == NodeRole::Leading;
        let mine = self.vol.role == NodeRole::Following && self.vol.leader == from;
        match msg {
            Wire::CEpoch { accepted } if leading => {
                self.vol.book.connected.insert(from);
                self.greet(from, accepted, &mut out);
            }
            Wire::FollowerInfo { accepted, last } if leading => {
                if last.epoch > self.store.current_epoch {
                    self.resign(&mut out);
                } else {
                    self.vol.book.connected.insert(from);
                    self.greet(from, accepted, &mut out);
                }
            }
            Wire::NewEpoch { epoch } if mine => self.on_new_epoch(from, epoch, &mut out),
            Wire::AckEpochLog { current, log } if leading => {
                self.vol.book.voters.insert(from);
                if self.vol.phase == NodePhase::Discovery {
                    let c = Candidate {
                        current,
                        last: last_of(&log),
                        from,
                        log,
                    };
                    let better = match &self.vol.book.best {
                        None => true,
                        Some(b) => {
                            (c.current, c.last) > (b.current, b.last)
                                || ((c.current, c.last) == (b.current, b.last) && c.from < b.from)
                        }
                    };
                    if better {
                        self.vol.book.best = Some(c);
                    }
                    self.progress(&mut out);
                } else {
                    out.push(Out::Send(
                        from,
                        Wire::NewLeaderLog {
                            epoch: self.accepted_epoch(),
                            log: self.store.log.clone(),
                        },
                    ));
                }
            }
            Wire::AckEpoch { last, vote, .. } if leading => {
                let book = &mut self.vol.book;
                if vote {
                    book.voters.insert(from);
                }
                book.ready.insert(from);
                book.peer_last.insert(from, last);
                if self.vol.phase == NodePhase::Discovery {
                    self.progress(&mut out);
                }
            }
            Wire::Sync {
                kind,
                trunc_to,
                txns,
                commit_to,
            } if mine => {
                let ok = self.vol.phase == NodePhase::Discovery
                    && self.vol.info_sent
                    && self.install(kind, trunc_to, txns, commit_to);
                if ok {
                    self.vol.phase = NodePhase::Sync;
                } else {
                    self.quit(&mut out);
                }
            }
            Wire::NewLeaderLog { epoch, log } if mine => {
                if epoch == self.accepted_epoch() {
                    self.set_current_epoch(epoch);
                    self.store.log = log;
                    self.vol.phase = NodePhase::Sync;
                    out.push(Out::Send(from, Wire::AckLd));
                } else {
                    self.quit(&mut out);
                }
            }
            Wire::NewLeader { epoch } if mine => {
                if self.vol.phase == NodePhase::Sync
                    && !self.vol.nl_seen
                    && epoch == self.accepted_epoch()
                {
                    self.set_current_epoch(epoch);
                    self.vol.nl_seen = true;
                    out.push(Out::Send(from, Wire::AckLdAt { last: self.last() }));
                } else {
                    self.quit(&mut out);
                }
            }
            Wire::AckLd if leading => {
                self.vol.book.acked_nl.insert(from);
                self.after_ackld(from, &mut out);
            }
            Wire::AckLdAt { last } if leading => {
                self.vol.book.acked_nl.insert(from);
                let raw = self.build.recover_race_raw;
                self.credit_acks(from, |z| raw || z <= last, &mut out);
                self.after_ackld(from, &mut out);
            }
            Wire::CommitLd { zxid } if mine => {
                let ok = self.vol.phase == NodePhase::Sync
                    && (self.dialect == Dialect::Classic || self.vol.nl_seen)
                    && log_has(&self.store.log, zxid);
                if ok {
                    self.store.last_committed = self.store.last_committed.max(zxid);
                    self.vol.phase = NodePhase::Broadcast;
                } else {
                    self.quit(&mut out);
                }
            }
            Wire::Propose { txn } if mine => self.on_propose(from, txn, &mut out),
            Wire::Ack { zxid } if leading => {
                if self.vol.book.outstanding.contains_key(&zxid) {
                    self.credit_acks(from, |z| z == zxid, &mut out);
                }
            }
            Wire::Commit { zxid } if mine => {
                if log_has(&self.store.log, zxid) {
                    if !self.build.broken(PlantedFault::StaleCommit) {
                        self.store.last_committed = self.store.last_committed.max(zxid);
                    }
                } else {
                    self.quit(&mut out);
                }
            }
            // Stale or unexpected: ignored.
            _ => {}
        }
        out
    }

    fn greet(&mut self, from: u8, accepted: u32, out: &mut Vec<Out>) {
        let book = &mut self.vol.book;
        book.max_accepted = book.max_accepted.max(accepted);
        if book.epoch_chosen {
            let e = self.accepted_epoch();
            out.push(Out::Send(from, Wire::NewEpoch { epoch: e }));
        } else {
            self.progress(out);
        }
    }

    fn on_new_epoch(&mut self, from: u8, epoch: u32, out: &mut Vec<Out>) {
        let mine = self.accepted_epoch();
        let reply = match self.dialect {
            Dialect::Classic if epoch > mine => Wire::AckEpochLog {
                current: self.store.current_epoch,
                log: self.store.log.clone(),
            },
            Dialect::Refined if epoch >= mine => Wire::AckEpoch {
                current: self.store.current_epoch,
                last: self.last(),
                vote: epoch > mine,
            },
            _ => return self.quit(out),
        };
        self.set_accepted_epoch(epoch);
        out.push(Out::Send(from, reply));
    }

    fn after_ackld(&mut self, from: u8, out: &mut Vec<Out>) {
        match self.vol.phase {
            NodePhase::Sync => self.progress(out),
            NodePhase::Broadcast => out.push(Out::Send(
                from,
                Wire::CommitLd {
                    zxid: self.store.last_committed,
                },
            )),
            _ => {}
        }
    }

    fn on_propose(&mut self, from: u8, txn: Txn, out: &mut Vec<Out>) {
        let last = self.last();
        let fits = match self.dialect {
            Dialect::Classic => {
                let e = self.store.current_epoch;
                (last.epoch == e && txn.zxid == Zxid::new(e, last.counter + 1))
                    || (last.epoch < e && txn.zxid == Zxid::new(e, 1))
            }
            Dialect::Refined => {
                (txn.zxid.epoch == last.epoch && txn.zxid.counter == last.counter + 1)
                    || (txn.zxid.epoch > last.epoch && txn.zxid.counter == 1)
            }
        };
        if !(self.vol.phase.active() && fits) {
            return self.quit(out);
        }
        self.store.log.push(txn);
        if self.dialect == Dialect::Classic || self.vol.nl_seen {
            out.push(Out::Send(from, Wire::Ack { zxid: txn.zxid }));
        }
    }

    /// Applies a sync packet to the local log. False if the cut point is missing.
    fn install(&mut self, kind: SyncKind, trunc_to: Zxid, txns: Vec<Txn>, commit_to: Zxid) -> bool {
        let mut log = match kind {
            SyncKind::Diff => self.store.log.clone(),
            SyncKind::Trunc => {
                if !log_has(&self.store.log, trunc_to) {
                    return false;
                }
                if self.build.broken(PlantedFault::BrokenTruncate) {
                    self.store.log.clone()
                } else {
                    self.store
                        .log
                        .iter()
                        .take_while(|t| t.zxid <= trunc_to)
                        .cloned()
                        .collect()
                }
            }
            SyncKind::Snap => Vec::new(),
        };
        log.extend(txns);
        let mut lc = self.store.last_committed;
        if !log_has(&log, lc) {
            lc = floor_of(&log, lc);
        }
        if log_has(&log, commit_to) {
            lc = lc.max(commit_to);
        }
        self.store.log = log;
        self.store.last_committed = lc;
        true
    }
}

/// Rebuilds a `History` from a projected log, for callers that want one.
pub fn as_history(log: &[Txn]) -> History {
    History(log.to_vec())
}
