use std::collections::HashSet;

use crate::domain::{next_zxid, History, QuorumSystem, ServerSet, Txn, Zxid};
use crate::kernel::{ActionInstance, Canon, ExploreConfig, Fingerprint, Model};
use crate::mutation::{MutationId, MutationSet};
use crate::protocol::invariants;
use crate::protocol::{Phase, Role};

use super::sync::decide_sync;
use super::{apply_sync, SMsg, SServer, SystemState};

/// Which election/discovery the model runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    /// FLE rounds, FOLLOWERINFO, NEWEPOCH, ACKEPOCH.
    System,
    /// Election and discovery collapsed into atomic actions; init states sit
    /// at SYNC entry.
    Ipa,
}

#[derive(Debug, Clone)]
pub struct SystemModel {
    pub n: u8,
    pub quorum: QuorumSystem,
    pub level: Level,
    pub max_transactions: u8,
    pub max_crashes: u8,
    pub max_partitions: u8,
    pub snapshot_boundary: Option<Zxid>,
    pub mutations: MutationSet,
}

/// True if `z` may directly follow `last` in a log.
fn follows(last: Zxid, z: Zxid) -> bool {
    if z.epoch == last.epoch {
        z.counter == last.counter + 1
    } else {
        z.epoch > last.epoch && z.counter == 1
    }
}

impl SystemModel {
    pub fn new(cfg: &ExploreConfig) -> Self {
        SystemModel {
            n: cfg.n_servers,
            quorum: QuorumSystem::new(cfg.n_servers, cfg.effective_quorum_rule()),
            level: Level::System,
            max_transactions: cfg.max_transactions,
            max_crashes: cfg.max_crashes,
            max_partitions: cfg.max_partitions,
            snapshot_boundary: cfg.snapshot_boundary.map(|(e, c)| Zxid::new(e, c)),
            mutations: MutationSet::from_ids(&cfg.mutations),
        }
    }

    /// The test-level model: same state machine, IPA election and discovery.
    pub fn ipa(cfg: &ExploreConfig) -> Self {
        SystemModel {
            level: Level::Ipa,
            ..SystemModel::new(cfg)
        }
    }

    pub fn initial(&self) -> SystemState {
        SystemState {
            servers: vec![SServer::fresh(); self.n as usize],
            channels: Vec::new(),
            partitions: Vec::new(),
            crashes_left: self.max_crashes,
            partitions_left: self.max_partitions,
            txns_left: self.max_transactions,
            proposed: Vec::new(),
        }
    }

    fn q(&self, s: ServerSet) -> bool {
        self.quorum.is_quorum(s)
    }

    fn has(&self, m: MutationId) -> bool {
        self.mutations.has(m)
    }

    /// Quorums of up, LOOKING, mutually connected servers, in mask order.
    pub fn election_sets(&self, st: &SystemState) -> Vec<ServerSet> {
        let mut looking = ServerSet::EMPTY;
        for s in 1..=st.n() {
            let sv = st.server(s);
            if sv.up && sv.role == Role::Looking {
                looking.insert(s);
            }
        }
        let mut out = Vec::new();
        for m in 1u32..(1u32 << st.n()) {
            let set = ServerSet(m << 1);
            if set.0 & !looking.0 == 0 && self.q(set) && st.connected(set) {
                out.push(set);
            }
        }
        out
    }

    /// FLE winner of `p`: greatest (currentEpoch, lastZxid, id).
    pub fn winner(st: &SystemState, p: ServerSet) -> u8 {
        p.iter()
            .max_by_key(|s| st.server(*s).vote(*s))
            .expect("non-empty participant set")
    }

    fn become_leader(st: &mut SystemState, l: u8) {
        let s = st.srv(l);
        s.role = Role::Leading;
        s.phase = Phase::Discovery;
        s.leader = 0;
        let me = ServerSet::single(l);
        s.registered = me;
        s.acke_recv = me;
        s.ready = me;
        s.synced = me;
        s.ackld_recv = me;
        s.max_accepted = s.accepted_epoch;
    }

    fn become_follower(st: &mut SystemState, f: u8, l: u8) {
        let s = st.srv(f);
        s.role = Role::Following;
        s.phase = Phase::Discovery;
        s.leader = l;
        s.info_sent = false;
        s.nl_seen = false;
    }

    fn fle_round(&self, st: &mut SystemState, p: ServerSet) {
        let w = Self::winner(st, p);
        Self::become_leader(st, w);
        for f in p.without(w).iter() {
            Self::become_follower(st, f, w);
        }
        self.advance_leader(st, w);
    }

    /// Election plus discovery in one step: `l` wins and enters SYNC with the
    /// rest of `p` registered and their last zxids recorded.
    pub(crate) fn ipa_establish(&self, st: &mut SystemState, p: ServerSet) {
        let w = Self::winner(st, p);
        let e = p
            .iter()
            .map(|s| st.server(s).accepted_epoch)
            .max()
            .unwrap_or(0)
            + 1;
        Self::become_leader(st, w);
        for f in p.without(w).iter() {
            Self::become_follower(st, f, w);
            let last = {
                let s = st.srv(f);
                s.info_sent = true;
                s.accepted_epoch = e;
                s.history.last_zxid()
            };
            st.srv(w).set_follower_last(f, last);
        }
        let s = st.srv(w);
        s.registered = p;
        s.acke_recv = p;
        s.ready = p;
        s.max_accepted = e - 1;
        s.epoch_chosen = true;
        s.accepted_epoch = e;
        s.current_epoch = e;
        s.sync_last = s.history.last_zxid();
        s.phase = Phase::Sync;
        self.advance_leader(st, w);
    }

    fn ipa_join_ok(st: &SystemState, s: u8, l: u8) -> bool {
        let (js, ls) = (st.server(s), st.server(l));
        js.up
            && js.role == Role::Looking
            && ls.up
            && ls.role == Role::Leading
            && ls.phase.established()
            && !st.partitioned(s, l)
            && js.history.last_zxid().epoch <= ls.current_epoch
            && js.accepted_epoch <= ls.accepted_epoch
    }

    fn ipa_join(&self, st: &mut SystemState, s: u8, l: u8) {
        let e = st.server(l).accepted_epoch;
        let vote = st.server(s).accepted_epoch < e;
        Self::become_follower(st, s, l);
        let last = {
            let f = st.srv(s);
            f.info_sent = true;
            f.accepted_epoch = e;
            f.history.last_zxid()
        };
        let ls = st.srv(l);
        ls.registered.insert(s);
        if vote {
            ls.acke_recv.insert(s);
        }
        ls.ready.insert(s);
        ls.set_follower_last(s, last);
    }

    fn advance_leader(&self, st: &mut SystemState, l: u8) {
        let me = st.server(l).clone();
        if me.role != Role::Leading {
            return;
        }
        if me.phase == Phase::Discovery && !me.epoch_chosen && self.q(me.registered) {
            let e = me.max_accepted + 1;
            let s = st.srv(l);
            s.accepted_epoch = e;
            s.epoch_chosen = true;
            for f in me.registered.without(l).iter() {
                st.send(l, f, SMsg::NewEpoch { epoch: e });
            }
        }
        let me = st.server(l).clone();
        if me.phase == Phase::Discovery && me.epoch_chosen && self.q(me.acke_recv) {
            let s = st.srv(l);
            s.current_epoch = s.accepted_epoch;
            s.sync_last = s.history.last_zxid();
            s.phase = Phase::Sync;
        }
        let me = st.server(l).clone();
        if me.phase == Phase::Sync && self.q(me.ackld_recv) {
            let s = st.srv(l);
            s.phase = Phase::Broadcast;
            s.last_committed = s.history.last_zxid();
            let z = s.last_committed;
            for f in me.ackld_recv.without(l).iter() {
                st.send(l, f, SMsg::CommitLd { zxid: z });
            }
        }
    }

    fn shutdown(&self, st: &mut SystemState, l: u8) {
        for f in 1..=st.n() {
            let s = st.server(f);
            if f != l && s.role == Role::Following && s.leader == l {
                st.srv(f).reset_volatile();
            }
        }
        st.clear_all(l);
        st.srv(l).reset_volatile();
    }

    fn detach(&self, st: &mut SystemState, f: u8) {
        let l = st.server(f).leader;
        st.srv(f).reset_volatile();
        if l == 0 {
            return;
        }
        st.clear_pair(l, f);
        if st.server(l).role != Role::Leading {
            return;
        }
        let was_registered = st.server(l).registered.contains(f);
        {
            let ls = st.srv(l);
            ls.registered.remove(f);
            ls.acke_recv.remove(f);
            ls.ready.remove(f);
            ls.synced.remove(f);
            ls.ackld_recv.remove(f);
            for (_, s) in ls.ack_recv.iter_mut() {
                s.remove(f);
            }
            ls.flast.retain(|(id, _)| *id != f);
        }
        if was_registered && !self.q(st.server(l).registered) {
            self.shutdown(st, l);
        }
    }

    fn commit(&self, st: &mut SystemState, l: u8, z: Zxid) {
        let s = st.srv(l);
        s.last_committed = s.last_committed.max(z);
        let lc = s.last_committed;
        s.ack_recv.retain(|(x, _)| *x > lc);
        let targets = s.synced.without(l);
        for f in targets.iter() {
            st.send(l, f, SMsg::Commit { zxid: z });
        }
    }

    fn propose(&self, st: &mut SystemState, l: u8) {
        let me = st.server(l);
        let z = next_zxid(me.history.last_zxid(), me.current_epoch)
            .expect("broadcasting leader proposes in its own epoch");
        let txn = Txn::new(z, st.proposed.len() as u32 + 1);
        st.txns_left -= 1;
        st.proposed.push(txn);
        let targets = {
            let s = st.srv(l);
            s.history.push(txn);
            s.ack_recv.push((z, ServerSet::single(l)));
            s.synced.without(l)
        };
        for f in targets.iter() {
            st.send(l, f, SMsg::Propose { txn });
        }
        if self.has(MutationId::CommitBeforeQuorum) || self.q(ServerSet::single(l)) {
            self.commit(st, l, z);
        }
    }

    /// Sends SYNC, any pending proposals, and the signaling NEWLEADER to `f`.
    fn sync_follower(&self, st: &mut SystemState, l: u8, f: u8) {
        let me = st.server(l).clone();
        let f_last = me.follower_last(f).unwrap_or(Zxid::ZERO);
        let mut pending = Vec::new();
        let source = if me.phase == Phase::Broadcast {
            if self.has(MutationId::DiffFromUncommitted) {
                let s = st.srv(l);
                s.last_committed = s.history.last_zxid();
                let lc = s.last_committed;
                s.ack_recv.retain(|(x, _)| *x > lc);
                me.history.clone()
            } else {
                pending = me.history.suffix_after(me.last_committed).to_vec();
                History(me.history.prefix_through(me.last_committed).to_vec())
            }
        } else {
            me.history.clone()
        };
        let mut decision = decide_sync(
            &source,
            f_last,
            self.snapshot_boundary,
            self.has(MutationId::SyncSkipTrunc),
        );
        decision.commit_to = st.server(l).last_committed;
        st.send(l, f, SMsg::Sync { decision });
        for txn in pending {
            st.send(l, f, SMsg::Propose { txn });
        }
        st.send(
            l,
            f,
            SMsg::NewLeader {
                epoch: me.current_epoch,
            },
        );
        st.srv(l).synced.insert(f);
    }

    fn deliver(&self, st: &mut SystemState, from: u8, to: u8) {
        let m = st.pop(from, to);
        let r = st.server(to).clone();
        let leader_ok = r.role == Role::Leading;
        let follower_ok = r.role == Role::Following && r.leader == from;
        match m {
            SMsg::FollowerInfo { accepted, last } if leader_ok => {
                if last.epoch > r.current_epoch {
                    self.shutdown(st, to);
                    return;
                }
                let s = st.srv(to);
                s.registered.insert(from);
                s.max_accepted = s.max_accepted.max(accepted);
                if s.epoch_chosen {
                    let e = s.accepted_epoch;
                    st.send(to, from, SMsg::NewEpoch { epoch: e });
                } else {
                    self.advance_leader(st, to);
                }
            }
            SMsg::NewEpoch { epoch } if follower_ok => {
                if epoch >= r.accepted_epoch {
                    st.srv(to).accepted_epoch = epoch;
                    st.send(
                        to,
                        from,
                        SMsg::AckEpoch {
                            current: r.current_epoch,
                            last: r.history.last_zxid(),
                            vote: epoch > r.accepted_epoch,
                        },
                    );
                } else {
                    self.detach(st, to);
                }
            }
            SMsg::AckEpoch { last, vote, .. } if leader_ok => {
                let s = st.srv(to);
                if vote {
                    s.acke_recv.insert(from);
                }
                s.ready.insert(from);
                s.set_follower_last(from, last);
                if r.phase == Phase::Discovery {
                    self.advance_leader(st, to);
                }
            }
            SMsg::Sync { decision } if follower_ok => {
                let applied = if r.phase == Phase::Discovery && r.info_sent {
                    apply_sync(&r.history, r.last_committed, &decision).ok()
                } else {
                    None
                };
                match applied {
                    Some((h, lc)) => {
                        let s = st.srv(to);
                        s.history = h;
                        s.last_committed = lc;
                        s.phase = Phase::Sync;
                    }
                    None => self.detach(st, to),
                }
            }
            SMsg::NewLeader { epoch } if follower_ok => {
                if r.phase == Phase::Sync && !r.nl_seen && epoch == r.accepted_epoch {
                    let s = st.srv(to);
                    s.current_epoch = epoch;
                    s.nl_seen = true;
                    let last = s.history.last_zxid();
                    st.send(to, from, SMsg::AckLd { last });
                } else {
                    self.detach(st, to);
                }
            }
            SMsg::AckLd { last } if leader_ok => {
                let raw = self.has(MutationId::RecoverRaceRaw);
                let mut reached = Vec::new();
                {
                    let s = st.srv(to);
                    s.ackld_recv.insert(from);
                    for (z, set) in s.ack_recv.iter_mut() {
                        if raw || *z <= last {
                            let before = self.quorum.is_quorum(*set);
                            set.insert(from);
                            if !before && self.quorum.is_quorum(*set) {
                                reached.push(*z);
                            }
                        }
                    }
                }
                for z in reached {
                    self.commit(st, to, z);
                }
                match r.phase {
                    Phase::Sync => self.advance_leader(st, to),
                    Phase::Broadcast => {
                        let zxid = st.server(to).last_committed;
                        st.send(to, from, SMsg::CommitLd { zxid });
                    }
                    _ => {}
                }
            }
            SMsg::CommitLd { zxid } if follower_ok => {
                if r.phase == Phase::Sync && r.nl_seen && r.history.contains(zxid) {
                    let s = st.srv(to);
                    s.last_committed = s.last_committed.max(zxid);
                    s.phase = Phase::Broadcast;
                } else {
                    self.detach(st, to);
                }
            }
            SMsg::Propose { txn } if follower_ok => {
                if r.phase.established() && follows(r.history.last_zxid(), txn.zxid) {
                    st.srv(to).history.push(txn);
                    if r.nl_seen {
                        st.send(to, from, SMsg::Ack { zxid: txn.zxid });
                    }
                } else {
                    self.detach(st, to);
                }
            }
            SMsg::Ack { zxid } if leader_ok => {
                let s = st.srv(to);
                let mut reached = false;
                if let Some((_, set)) = s.ack_recv.iter_mut().find(|(z, _)| *z == zxid) {
                    let before = self.quorum.is_quorum(*set);
                    set.insert(from);
                    reached = !before && self.quorum.is_quorum(*set);
                }
                if reached {
                    self.commit(st, to, zxid);
                }
            }
            SMsg::Commit { zxid } if follower_ok => {
                if r.history.contains(zxid) {
                    let s = st.srv(to);
                    s.last_committed = s.last_committed.max(zxid);
                } else {
                    self.detach(st, to);
                }
            }
            // A message the receiver no longer expects is dropped.
            _ => {}
        }
    }

    fn crash(&self, st: &mut SystemState, s: u8) {
        st.crashes_left -= 1;
        match st.server(s).role {
            Role::Leading => self.shutdown(st, s),
            Role::Following => self.detach(st, s),
            Role::Looking => {}
        }
        st.clear_all(s);
        let sv = st.srv(s);
        sv.reset_volatile();
        sv.up = false;
    }

    fn partition(&self, st: &mut SystemState, a: u8, b: u8) {
        st.partitions_left -= 1;
        let at = st.partitions.partition_point(|p| *p < (a, b));
        st.partitions.insert(at, (a, b));
        st.clear_pair(a, b);
        for (f, l) in [(a, b), (b, a)] {
            let fs = st.server(f);
            if fs.role == Role::Following && fs.leader == l {
                self.detach(st, f);
            }
        }
    }

    /// Distinct states, first occurrence kept.
    pub(crate) fn dedup(&self, states: Vec<SystemState>) -> Vec<SystemState> {
        let mut seen: HashSet<Fingerprint> = HashSet::new();
        states
            .into_iter()
            .filter(|s| seen.insert(self.fingerprint(s)))
            .collect()
    }
}

impl Model for SystemModel {
    type State = SystemState;

    fn kind(&self) -> &'static str {
        match self.level {
            Level::System => "system",
            Level::Ipa => "test",
        }
    }

    fn init_states(&self) -> Vec<SystemState> {
        match self.level {
            Level::System => vec![self.initial()],
            Level::Ipa => crate::test_model::ipa_init_states(self),
        }
    }

    fn enabled(&self, st: &SystemState, out: &mut Vec<ActionInstance>) {
        let n = st.n();
        let elect = match self.level {
            Level::System => "FleRound",
            Level::Ipa => "IpaEstablish",
        };
        for p in self.election_sets(st) {
            let w = Self::winner(st, p);
            out.push(ActionInstance::by_with(elect, w, &[p.0 as i64]));
        }
        for s in 1..=n {
            for l in 1..=n {
                if s == l {
                    continue;
                }
                match self.level {
                    Level::System => {
                        let (js, ls) = (st.server(s), st.server(l));
                        if js.up
                            && js.role == Role::Looking
                            && ls.up
                            && ls.role == Role::Leading
                            && !st.partitioned(s, l)
                        {
                            out.push(ActionInstance::by_with("FleJoin", s, &[l as i64]));
                        }
                    }
                    Level::Ipa => {
                        if Self::ipa_join_ok(st, s, l) {
                            out.push(ActionInstance::by_with("IpaJoin", s, &[l as i64]));
                        }
                    }
                }
            }
        }
        if self.level == Level::System {
            for f in 1..=n {
                let fs = st.server(f);
                if fs.role == Role::Following && fs.phase == Phase::Discovery && !fs.info_sent {
                    out.push(ActionInstance::by("SendFollowerInfo", f));
                }
            }
        }
        for l in 1..=n {
            let ls = st.server(l);
            if ls.role != Role::Leading || !ls.phase.established() {
                continue;
            }
            for f in ls.ready.without(l).iter() {
                if !ls.synced.contains(f) {
                    out.push(ActionInstance::by_with(
                        "LeaderSyncFollower",
                        l,
                        &[f as i64],
                    ));
                }
            }
        }
        if st.txns_left > 0 {
            for l in 1..=n {
                let ls = st.server(l);
                if ls.role == Role::Leading && ls.phase == Phase::Broadcast {
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
        if st.crashes_left > 0 {
            for s in 1..=n {
                if st.server(s).up {
                    out.push(ActionInstance::by("Crash", s));
                }
            }
        }
        for s in 1..=n {
            if !st.server(s).up {
                out.push(ActionInstance::by("Rejoin", s));
            }
        }
        for a in 1..=n {
            for b in a + 1..=n {
                let cut = st.partitioned(a, b);
                if !cut && st.partitions_left > 0 {
                    out.push(ActionInstance::by_with("Partition", a, &[b as i64]));
                } else if cut {
                    out.push(ActionInstance::by_with("Reconnect", a, &[b as i64]));
                }
            }
        }
    }

    fn apply(&self, st: &SystemState, a: &ActionInstance) -> SystemState {
        let mut st = st.clone();
        let actor = a.actor.expect("system actions have an actor");
        match a.name.as_str() {
            "FleRound" => self.fle_round(&mut st, ServerSet(a.param(0) as u32)),
            "IpaEstablish" => self.ipa_establish(&mut st, ServerSet(a.param(0) as u32)),
            "FleJoin" => Self::become_follower(&mut st, actor, a.param(0) as u8),
            "IpaJoin" => self.ipa_join(&mut st, actor, a.param(0) as u8),
            "SendFollowerInfo" => {
                let (l, msg) = {
                    let s = st.srv(actor);
                    s.info_sent = true;
                    (
                        s.leader,
                        SMsg::FollowerInfo {
                            accepted: s.accepted_epoch,
                            last: s.history.last_zxid(),
                        },
                    )
                };
                st.send(actor, l, msg);
            }
            "LeaderSyncFollower" => self.sync_follower(&mut st, actor, a.param(0) as u8),
            "LeaderPropose" => self.propose(&mut st, actor),
            "Crash" => self.crash(&mut st, actor),
            "Rejoin" => st.srv(actor).up = true,
            "Partition" => self.partition(&mut st, actor, a.param(0) as u8),
            "Reconnect" => {
                let key = (actor, a.param(0) as u8);
                st.partitions.retain(|p| *p != key);
            }
            name if name.starts_with("Handle") => {
                self.deliver(&mut st, a.param(0) as u8, actor);
            }
            other => panic!("unknown system action {other}"),
        }
        st
    }

    fn invariants(&self) -> Vec<&'static str> {
        invariants::SYSTEM_INVARIANTS.to_vec()
    }

    fn check_state(&self, st: &SystemState, out: &mut Vec<&'static str>) {
        let views = st.views();
        invariants::check_core(&views, &st.proposed, &self.quorum, out);
        invariants::check_leader_log(&views, out);
    }

    fn check_step(&self, prev: &SystemState, next: &SystemState, out: &mut Vec<&'static str>) {
        let (a, b) = (prev.views(), next.views());
        invariants::check_epochs(&a, &b, out);
        invariants::check_monotonic_read(&a, &b, out);
    }

    fn encode(&self, st: &SystemState, c: &mut Canon) {
        st.encode(c);
    }
}
