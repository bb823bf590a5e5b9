//! The abstract Zab protocol as an explorable model.
//!
//! Election is a leader oracle (`UpdateLeader`/`FollowLeader`). Discovery and
//! sync use the full-history handshake: CEPOCH, NEWEPOCH, ACKEPOCH, NEWLEADER,
//! ACKLD, COMMITLD. Failures are `Timeout` of a leader/follower pair and
//! `Restart` of one server.
//!
//! Quorum bookkeeping is kept apart per purpose: `cepoch_recv` is also the
//! leader's connected set, `acke_recv` the followers that have been sent
//! NEWLEADER, and `ackld_recv` the followers that acknowledged it.

pub mod invariants;

use serde::{Deserialize, Serialize};

use crate::domain::{next_zxid, History, QuorumSystem, ServerSet, Txn, Zxid};
use crate::kernel::{ActionInstance, Canon, ExploreConfig, Model};

pub use invariants::{Phase, Role, ServerView};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PMsg {
    CEpoch { accepted: u32 },
    NewEpoch { epoch: u32 },
    AckEpoch { current: u32, history: History },
    NewLeader { epoch: u32, history: History },
    AckLd,
    CommitLd { zxid: Zxid },
    Propose { txn: Txn },
    Ack { zxid: Zxid },
    Commit { zxid: Zxid },
}

impl PMsg {
    pub fn kind(&self) -> &'static str {
        match self {
            PMsg::CEpoch { .. } => "CEPOCH",
            PMsg::NewEpoch { .. } => "NEWEPOCH",
            PMsg::AckEpoch { .. } => "ACKEPOCH",
            PMsg::NewLeader { .. } => "NEWLEADER",
            PMsg::AckLd => "ACKLD",
            PMsg::CommitLd { .. } => "COMMITLD",
            PMsg::Propose { .. } => "PROPOSE",
            PMsg::Ack { .. } => "ACK",
            PMsg::Commit { .. } => "COMMIT",
        }
    }

    fn encode(&self, c: &mut Canon) {
        match self {
            PMsg::CEpoch { accepted } => c.u8(0).u32(*accepted),
            PMsg::NewEpoch { epoch } => c.u8(1).u32(*epoch),
            PMsg::AckEpoch { current, history } => c.u8(2).u32(*current).history(history),
            PMsg::NewLeader { epoch, history } => c.u8(3).u32(*epoch).history(history),
            PMsg::AckLd => c.u8(4),
            PMsg::CommitLd { zxid } => c.u8(5).zxid(*zxid),
            PMsg::Propose { txn } => c.u8(6).txn(txn),
            PMsg::Ack { zxid } => c.u8(7).zxid(*zxid),
            PMsg::Commit { zxid } => c.u8(8).zxid(*zxid),
        };
    }
}

/// The best ACKEPOCH a discovering leader has seen (its own included).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Candidate {
    pub current_epoch: u32,
    pub last: Zxid,
    pub from: u8,
    pub history: History,
}

impl Candidate {
    fn beats(&self, other: &Candidate) -> bool {
        (self.current_epoch, self.last) > (other.current_epoch, other.last)
            || ((self.current_epoch, self.last) == (other.current_epoch, other.last)
                && self.from < other.from)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PServer {
    pub role: Role,
    pub phase: Phase,
    pub accepted_epoch: u32,
    pub current_epoch: u32,
    pub history: History,
    pub last_committed: Zxid,
    /// Followed leader, 0 if none.
    pub leader: u8,
    pub cepoch_recv: ServerSet,
    pub acke_recv: ServerSet,
    pub ackld_recv: ServerSet,
    pub ack_recv: Vec<(Zxid, ServerSet)>,
    pub max_accepted: u32,
    pub epoch_chosen: bool,
    pub best: Option<Candidate>,
    pub sync_last: Zxid,
}

impl PServer {
    fn fresh() -> Self {
        PServer {
            role: Role::Looking,
            phase: Phase::None,
            accepted_epoch: 0,
            current_epoch: 0,
            history: History::new(),
            last_committed: Zxid::ZERO,
            leader: 0,
            cepoch_recv: ServerSet::EMPTY,
            acke_recv: ServerSet::EMPTY,
            ackld_recv: ServerSet::EMPTY,
            ack_recv: Vec::new(),
            max_accepted: 0,
            epoch_chosen: false,
            best: None,
            sync_last: Zxid::ZERO,
        }
    }

    /// Drops everything except the durable epochs, history and commit point.
    fn reset_volatile(&mut self) {
        let keep = (
            self.accepted_epoch,
            self.current_epoch,
            std::mem::take(&mut self.history),
            self.last_committed,
        );
        *self = PServer::fresh();
        self.accepted_epoch = keep.0;
        self.current_epoch = keep.1;
        self.history = keep.2;
        self.last_committed = keep.3;
    }

    pub fn view(&self) -> ServerView<'_> {
        ServerView {
            role: self.role,
            phase: self.phase,
            accepted_epoch: self.accepted_epoch,
            current_epoch: self.current_epoch,
            history: &self.history,
            last_committed: self.last_committed,
            support: self.cepoch_recv,
            sync_last: self.sync_last,
        }
    }

    fn encode(&self, c: &mut Canon) {
        c.u8(self.role.code())
            .u8(self.phase.code())
            .u32(self.accepted_epoch)
            .u32(self.current_epoch)
            .history(&self.history)
            .zxid(self.last_committed)
            .u8(self.leader)
            .set(self.cepoch_recv)
            .set(self.acke_recv)
            .set(self.ackld_recv)
            .len(self.ack_recv.len());
        for (z, s) in &self.ack_recv {
            c.zxid(*z).set(*s);
        }
        c.u32(self.max_accepted).bool(self.epoch_chosen);
        match &self.best {
            None => {
                c.u8(0);
            }
            Some(b) => {
                c.u8(1)
                    .u32(b.current_epoch)
                    .zxid(b.last)
                    .u8(b.from)
                    .history(&b.history);
            }
        }
        c.zxid(self.sync_last);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProtocolState {
    pub servers: Vec<PServer>,
    /// In-flight messages as `(from, to, msg)`, sorted by `(from, to)`; within
    /// one pair the order is FIFO.
    pub channels: Vec<(u8, u8, PMsg)>,
    pub oracle: Option<u8>,
    /// Set when the oracle's leader lost a follower to a timeout but kept its
    /// quorum; only then may the oracle move to another server.
    pub suspected: bool,
    pub timeouts_left: u8,
    pub restarts_left: u8,
    pub txns_left: u8,
    /// Ghost: every transaction ever proposed.
    pub proposed: Vec<Txn>,
}

impl ProtocolState {
    pub fn n(&self) -> u8 {
        self.servers.len() as u8
    }

    pub fn server(&self, id: u8) -> &PServer {
        &self.servers[id as usize - 1]
    }

    fn srv(&mut self, id: u8) -> &mut PServer {
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
    pub fn channel(&self, from: u8, to: u8) -> Vec<PMsg> {
        self.channels[self.chan_range(from, to)]
            .iter()
            .map(|(_, _, m)| m.clone())
            .collect()
    }

    pub fn head(&self, from: u8, to: u8) -> Option<&PMsg> {
        self.channels
            .get(self.chan_range(from, to))
            .and_then(|r| r.first())
            .map(|(_, _, m)| m)
    }

    fn pop(&mut self, from: u8, to: u8) -> PMsg {
        let r = self.chan_range(from, to);
        assert!(!r.is_empty(), "empty channel {from}->{to}");
        self.channels.remove(r.start).2
    }

    fn send(&mut self, from: u8, to: u8, m: PMsg) {
        let at = self.chan_range(from, to).end;
        self.channels.insert(at, (from, to, m));
    }

    fn clear_pair(&mut self, a: u8, b: u8) {
        self.channels
            .retain(|(x, y, _)| !((*x, *y) == (a, b) || (*x, *y) == (b, a)));
    }

    fn clear_all(&mut self, s: u8) {
        self.channels.retain(|(x, y, _)| *x != s && *y != s);
    }

    pub fn views(&self) -> Vec<ServerView<'_>> {
        self.servers.iter().map(PServer::view).collect()
    }
}

/// Explorable protocol-level model.
#[derive(Debug, Clone)]
pub struct ProtocolModel {
    pub n: u8,
    pub quorum: QuorumSystem,
    pub max_transactions: u8,
    pub max_timeouts: u8,
    pub max_restarts: u8,
}

impl ProtocolModel {
    pub fn new(cfg: &ExploreConfig) -> Self {
        ProtocolModel {
            n: cfg.n_servers,
            quorum: QuorumSystem::new(cfg.n_servers, cfg.effective_quorum_rule()),
            max_transactions: cfg.max_transactions,
            max_timeouts: cfg.max_timeouts,
            max_restarts: cfg.max_restarts,
        }
    }

    pub fn initial(&self) -> ProtocolState {
        let n = self.n as usize;
        ProtocolState {
            servers: vec![PServer::fresh(); n],
            channels: Vec::new(),
            oracle: None,
            suspected: false,
            timeouts_left: self.max_timeouts,
            restarts_left: self.max_restarts,
            txns_left: self.max_transactions,
            proposed: Vec::new(),
        }
    }

    fn q(&self, s: ServerSet) -> bool {
        self.quorum.is_quorum(s)
    }

    /// Runs whichever leader phase transitions the current quorum sets allow.
    fn advance_leader(&self, st: &mut ProtocolState, l: u8) {
        let me = st.server(l).clone();
        if me.role != Role::Leading {
            return;
        }
        if me.phase == Phase::Discovery && !me.epoch_chosen && self.q(me.cepoch_recv) {
            let e = me.max_accepted + 1;
            let s = st.srv(l);
            s.accepted_epoch = e;
            s.epoch_chosen = true;
            for f in me.cepoch_recv.without(l).iter() {
                st.send(l, f, PMsg::NewEpoch { epoch: e });
            }
        }
        let me = st.server(l).clone();
        if me.phase == Phase::Discovery && me.epoch_chosen && self.q(me.acke_recv) {
            let best = me.best.clone().expect("leader has a candidate");
            let s = st.srv(l);
            s.history = best.history;
            s.current_epoch = s.accepted_epoch;
            s.sync_last = s.history.last_zxid();
            s.phase = Phase::Sync;
            s.best = None;
            let (e, h) = (s.accepted_epoch, s.history.clone());
            for f in me.acke_recv.without(l).iter() {
                st.send(
                    l,
                    f,
                    PMsg::NewLeader {
                        epoch: e,
                        history: h.clone(),
                    },
                );
            }
        }
        let me = st.server(l).clone();
        if me.phase == Phase::Sync && self.q(me.ackld_recv) {
            let s = st.srv(l);
            s.phase = Phase::Broadcast;
            s.last_committed = s.history.last_zxid();
            let z = s.last_committed;
            for f in me.ackld_recv.without(l).iter() {
                st.send(l, f, PMsg::CommitLd { zxid: z });
            }
        }
    }

    /// Leader `l` stops leading; its followers notice at once.
    fn shutdown(&self, st: &mut ProtocolState, l: u8) {
        for f in 1..=st.n() {
            let s = st.server(f);
            if f != l && s.role == Role::Following && s.leader == l {
                st.srv(f).reset_volatile();
            }
        }
        st.clear_all(l);
        st.srv(l).reset_volatile();
        if st.oracle == Some(l) {
            st.oracle = None;
            st.suspected = false;
        }
    }

    /// Follower `f` leaves its leader. `timed_out` marks the oracle's leader as
    /// suspected if it survives.
    fn detach(&self, st: &mut ProtocolState, f: u8, timed_out: bool) {
        let l = st.server(f).leader;
        st.srv(f).reset_volatile();
        if l == 0 {
            return;
        }
        st.clear_pair(l, f);
        if st.server(l).role != Role::Leading {
            return;
        }
        let was_connected = st.server(l).cepoch_recv.contains(f);
        {
            let ls = st.srv(l);
            ls.cepoch_recv.remove(f);
            ls.acke_recv.remove(f);
            ls.ackld_recv.remove(f);
            for (_, s) in ls.ack_recv.iter_mut() {
                s.remove(f);
            }
        }
        if was_connected && !self.q(st.server(l).cepoch_recv) {
            self.shutdown(st, l);
        } else if timed_out && st.oracle == Some(l) {
            st.suspected = true;
        }
    }

    fn commit(&self, st: &mut ProtocolState, l: u8, z: Zxid) {
        let s = st.srv(l);
        s.last_committed = s.last_committed.max(z);
        let lc = s.last_committed;
        s.ack_recv.retain(|(x, _)| *x > lc);
        let targets = s.acke_recv.without(l);
        for f in targets.iter() {
            st.send(l, f, PMsg::Commit { zxid: z });
        }
    }

    fn propose(&self, st: &mut ProtocolState, l: u8) {
        let me = st.server(l);
        let z =
            next_zxid(me.history.last_zxid(), me.current_epoch).expect("leader epoch is current");
        let txn = Txn::new(z, st.proposed.len() as u32 + 1);
        st.txns_left -= 1;
        st.proposed.push(txn);
        let targets = {
            let s = st.srv(l);
            s.history.push(txn);
            s.ack_recv.push((z, ServerSet::single(l)));
            s.acke_recv.without(l)
        };
        for f in targets.iter() {
            st.send(l, f, PMsg::Propose { txn });
        }
        if self.q(ServerSet::single(l)) {
            self.commit(st, l, z);
        }
    }

    /// Delivers the head of `from -> to`.
    fn deliver(&self, st: &mut ProtocolState, from: u8, to: u8) {
        let m = st.pop(from, to);
        let r = st.server(to).clone();
        let leader_ok = r.role == Role::Leading;
        let follower_ok = r.role == Role::Following && r.leader == from;
        match m {
            PMsg::CEpoch { accepted } if leader_ok => {
                let s = st.srv(to);
                s.cepoch_recv.insert(from);
                s.max_accepted = s.max_accepted.max(accepted);
                if s.epoch_chosen {
                    let e = s.accepted_epoch;
                    st.send(to, from, PMsg::NewEpoch { epoch: e });
                } else {
                    self.advance_leader(st, to);
                }
            }
            PMsg::NewEpoch { epoch } if follower_ok => {
                if epoch > r.accepted_epoch {
                    st.srv(to).accepted_epoch = epoch;
                    st.send(
                        to,
                        from,
                        PMsg::AckEpoch {
                            current: r.current_epoch,
                            history: r.history.clone(),
                        },
                    );
                } else {
                    self.detach(st, to, false);
                }
            }
            PMsg::AckEpoch { current, history } if leader_ok => {
                st.srv(to).acke_recv.insert(from);
                if r.phase == Phase::Discovery {
                    let cand = Candidate {
                        current_epoch: current,
                        last: history.last_zxid(),
                        from,
                        history,
                    };
                    let s = st.srv(to);
                    if s.best.as_ref().is_none_or(|b| cand.beats(b)) {
                        s.best = Some(cand);
                    }
                    self.advance_leader(st, to);
                } else {
                    st.send(
                        to,
                        from,
                        PMsg::NewLeader {
                            epoch: r.accepted_epoch,
                            history: r.history.clone(),
                        },
                    );
                }
            }
            PMsg::NewLeader { epoch, history } if follower_ok => {
                if epoch == r.accepted_epoch {
                    let s = st.srv(to);
                    s.current_epoch = epoch;
                    s.history = history;
                    s.phase = Phase::Sync;
                    st.send(to, from, PMsg::AckLd);
                } else {
                    self.detach(st, to, false);
                }
            }
            PMsg::AckLd if leader_ok => {
                st.srv(to).ackld_recv.insert(from);
                match r.phase {
                    Phase::Sync => self.advance_leader(st, to),
                    Phase::Broadcast => st.send(
                        to,
                        from,
                        PMsg::CommitLd {
                            zxid: r.last_committed,
                        },
                    ),
                    _ => {}
                }
            }
            PMsg::CommitLd { zxid } if follower_ok => {
                if r.phase == Phase::Sync && r.history.contains(zxid) {
                    let s = st.srv(to);
                    s.last_committed = s.last_committed.max(zxid);
                    s.phase = Phase::Broadcast;
                } else {
                    self.detach(st, to, false);
                }
            }
            PMsg::Propose { txn } if follower_ok => {
                let expected = next_zxid(r.history.last_zxid(), r.current_epoch).ok();
                if r.phase.established() && expected == Some(txn.zxid) {
                    st.srv(to).history.push(txn);
                    st.send(to, from, PMsg::Ack { zxid: txn.zxid });
                } else {
                    self.detach(st, to, false);
                }
            }
            PMsg::Ack { zxid } if leader_ok => {
                let s = st.srv(to);
                let mut reached = false;
                if let Some((_, set)) = s.ack_recv.iter_mut().find(|(z, _)| *z == zxid) {
                    let before = self.q(*set);
                    set.insert(from);
                    reached = !before && self.q(*set);
                }
                if reached {
                    self.commit(st, to, zxid);
                }
            }
            PMsg::Commit { zxid } if follower_ok => {
                if r.history.contains(zxid) {
                    let s = st.srv(to);
                    s.last_committed = s.last_committed.max(zxid);
                } else {
                    self.detach(st, to, false);
                }
            }
            // A message the receiver no longer expects is dropped.
            _ => {}
        }
    }
}

impl Model for ProtocolModel {
    type State = ProtocolState;

    fn kind(&self) -> &'static str {
        "protocol"
    }

    fn init_states(&self) -> Vec<ProtocolState> {
        vec![self.initial()]
    }

    fn enabled(&self, st: &ProtocolState, out: &mut Vec<ActionInstance>) {
        let n = st.n();
        for s in 1..=n {
            let sv = st.server(s);
            if sv.role == Role::Looking
                && st.oracle != Some(s)
                && (st.oracle.is_none() || st.suspected)
            {
                out.push(ActionInstance::by("UpdateLeader", s));
            }
        }
        for s in 1..=n {
            if st.server(s).role == Role::Looking && st.oracle.is_some_and(|l| l != s) {
                out.push(ActionInstance::by("FollowLeader", s));
            }
        }
        if st.txns_left > 0 {
            for l in 1..=n {
                let sv = st.server(l);
                if sv.role == Role::Leading && sv.phase == Phase::Broadcast {
                    out.push(ActionInstance::by("LeaderPropose", l));
                }
            }
        }
        let mut last = None;
        for (from, to, m) in &st.channels {
            if last != Some((*from, *to)) {
                last = Some((*from, *to));
                out.push(ActionInstance::by_with(
                    &format!("Handle{}", m.kind()),
                    *to,
                    &[*from as i64],
                ));
            }
        }
        if st.timeouts_left > 0 {
            for l in 1..=n {
                if st.server(l).role != Role::Leading {
                    continue;
                }
                for f in 1..=n {
                    let fs = st.server(f);
                    if fs.role == Role::Following && fs.leader == l {
                        out.push(ActionInstance::by_with("Timeout", l, &[f as i64]));
                    }
                }
            }
        }
        if st.restarts_left > 0 {
            for s in 1..=n {
                out.push(ActionInstance::by("Restart", s));
            }
        }
    }

    fn apply(&self, st: &ProtocolState, a: &ActionInstance) -> ProtocolState {
        let mut st = st.clone();
        let actor = a.actor.expect("protocol actions have an actor");
        match a.name.as_str() {
            "UpdateLeader" => {
                st.oracle = Some(actor);
                st.suspected = false;
                let s = st.srv(actor);
                s.role = Role::Leading;
                s.phase = Phase::Discovery;
                let me = ServerSet::single(actor);
                s.cepoch_recv = me;
                s.acke_recv = me;
                s.ackld_recv = me;
                s.max_accepted = s.accepted_epoch;
                s.best = Some(Candidate {
                    current_epoch: s.current_epoch,
                    last: s.history.last_zxid(),
                    from: actor,
                    history: s.history.clone(),
                });
                self.advance_leader(&mut st, actor);
            }
            "FollowLeader" => {
                let l = st.oracle.expect("oracle set");
                let s = st.srv(actor);
                s.role = Role::Following;
                s.phase = Phase::Discovery;
                s.leader = l;
                let accepted = s.accepted_epoch;
                st.send(actor, l, PMsg::CEpoch { accepted });
            }
            "LeaderPropose" => self.propose(&mut st, actor),
            "Timeout" => {
                st.timeouts_left -= 1;
                self.detach(&mut st, a.param(0) as u8, true);
            }
            "Restart" => {
                st.restarts_left -= 1;
                match st.server(actor).role {
                    Role::Leading => self.shutdown(&mut st, actor),
                    Role::Following => self.detach(&mut st, actor, false),
                    Role::Looking => {}
                }
                st.clear_all(actor);
                st.srv(actor).reset_volatile();
            }
            name if name.starts_with("Handle") => {
                self.deliver(&mut st, a.param(0) as u8, actor);
            }
            other => panic!("unknown protocol action {other}"),
        }
        st
    }

    fn invariants(&self) -> Vec<&'static str> {
        invariants::PROTOCOL_INVARIANTS.to_vec()
    }

    fn check_state(&self, st: &ProtocolState, out: &mut Vec<&'static str>) {
        invariants::check_core(&st.views(), &st.proposed, &self.quorum, out);
    }

    fn check_step(&self, prev: &ProtocolState, next: &ProtocolState, out: &mut Vec<&'static str>) {
        invariants::check_epochs(&prev.views(), &next.views(), out);
    }

    fn encode(&self, st: &ProtocolState, c: &mut Canon) {
        for s in &st.servers {
            s.encode(c);
        }
        c.len(st.channels.len());
        for (from, to, m) in &st.channels {
            c.u8(*from).u8(*to);
            m.encode(c);
        }
        c.opt_u8(st.oracle)
            .bool(st.suspected)
            .u8(st.timeouts_left)
            .u8(st.restarts_left)
            .u8(st.txns_left)
            .txns(&st.proposed);
    }
}
