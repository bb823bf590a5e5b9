//! Turns a model trace into an event schedule plus the model-side frames the
//! replay is checked against.
//!
//! Mapping table (model action, actor and params → event):
//!
//! | action                    | event                                  |
//! |---------------------------|----------------------------------------|
//! | `FleRound(w, [P])`        | FIRE(elect P) at w                     |
//! | `IpaEstablish(w, [P])`    | FIRE(establish P) at w                 |
//! | `FleJoin(s, [l])`         | FIRE(join l) at s                      |
//! | `IpaJoin(s, [l])`         | FIRE(join-established l) at s          |
//! | `SendFollowerInfo(f)`     | FIRE(send-followerinfo) at f           |
//! | `LeaderSyncFollower(l,[f])` | FIRE(sync f) at l                    |
//! | `LeaderPropose(l)`        | FIRE(propose v) at l, v from the model |
//! | `UpdateLeader(s)`         | FIRE(lead) at s                        |
//! | `FollowLeader(s)`         | FIRE(follow oracle) at s               |
//! | `Timeout(l, [f])`         | FIRE(abandon) at f                     |
//! | `Restart(s)`              | FIRE(restart) at s                     |
//! | `Handle<KIND>(to, [from])`| DELIVER(head of from→to)               |
//! | `Crash(s)` / `Rejoin(s)`  | CRASH(s) / REJOIN(s)                   |
//! | `Partition(a, [b])`       | PARTITION(a, b)                        |
//! | `Reconnect(a, [b])`       | RECONNECT(a, b)                        |
//!
//! Message ids are per-pair send counters. The extractor assigns them by
//! diffing consecutive model channel contents, so a node that sends a message
//! the model did not (or skips one) shifts every later id on that pair.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use crate::domain::{QuorumSystem, ServerSet, Txn, Zxid};
use crate::kernel::{replay_trace, ActionInstance, ExploreConfig, Trace};
use crate::mutation::MutationId;
use crate::protocol::{PMsg, PServer, Phase, ProtocolModel, ProtocolState, Role};
use crate::system::{SMsg, SServer, SyncMode, SystemModel, SystemState};

use super::net::MsgId;
use super::node::{Dialect, NodeBuild, NodeProjection, Store};
use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LocalAction {
    Elect { members: ServerSet },
    Establish { members: ServerSet },
    Join { leader: u8 },
    JoinEstablished { leader: u8 },
    SendFollowerInfo,
    SyncFollower { follower: u8 },
    Propose { value: u32 },
    Lead,
    Follow { leader: u8 },
    Abandon,
    Restart,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Deliver(MsgId),
    Fire { node: u8, action: LocalAction },
    Crash(u8),
    Rejoin(u8),
    Partition(u8, u8),
    Reconnect(u8, u8),
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Deliver(id) => write!(f, "DELIVER({id})"),
            Event::Fire { node, action } => write!(f, "FIRE({action:?}, node {node})"),
            Event::Crash(s) => write!(f, "CRASH({s})"),
            Event::Rejoin(s) => write!(f, "REJOIN({s})"),
            Event::Partition(a, b) => write!(f, "PARTITION({a},{b})"),
            Event::Reconnect(a, b) => write!(f, "RECONNECT({a},{b})"),
        }
    }
}

/// Model-side picture after one step: per-server projections and the rendered
/// contents of every non-empty channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub servers: Vec<NodeProjection>,
    pub channels: BTreeMap<(u8, u8), Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct ClusterSpec {
    pub n: u8,
    pub quorum: QuorumSystem,
    pub dialect: Dialect,
    pub build: NodeBuild,
    /// Disk image of each node at start.
    pub stores: Vec<Store>,
    /// Test level: the establish round that produced the initial state.
    pub preamble: Option<ServerSet>,
}

#[derive(Debug, Clone)]
pub struct ScheduledEvent {
    /// 1-based trace step.
    pub step: usize,
    pub action: ActionInstance,
    pub event: Event,
    pub expect: Frame,
}

#[derive(Debug, Clone)]
pub struct EventSchedule {
    pub model: String,
    pub cluster: ClusterSpec,
    pub initial: Frame,
    pub events: Vec<ScheduledEvent>,
}

impl EventSchedule {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

fn role_name(r: Role) -> &'static str {
    match r {
        Role::Looking => "LOOKING",
        Role::Following => "FOLLOWING",
        Role::Leading => "LEADING",
    }
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::None => "NONE",
        Phase::Discovery => "DISCOVERY",
        Phase::Sync => "SYNC",
        Phase::Broadcast => "BROADCAST",
    }
}

fn txns(t: &[Txn]) -> String {
    let body: Vec<String> = t
        .iter()
        .map(|t| format!("{}:{}", t.zxid, t.value))
        .collect();
    format!("[{}]", body.join(" "))
}

fn render_pmsg(m: &PMsg) -> String {
    match m {
        PMsg::CEpoch { accepted } => format!("CEPOCH accepted={accepted}"),
        PMsg::NewEpoch { epoch } => format!("NEWEPOCH epoch={epoch}"),
        PMsg::AckEpoch { current, history } => {
            format!("ACKEPOCH current={current} log={}", txns(history.entries()))
        }
        PMsg::NewLeader { epoch, history } => {
            format!("NEWLEADER epoch={epoch} log={}", txns(history.entries()))
        }
        PMsg::AckLd => "ACKLD".to_string(),
        PMsg::CommitLd { zxid } => format!("COMMITLD zxid={zxid}"),
        PMsg::Propose { txn } => format!("PROPOSE txn={}:{}", txn.zxid, txn.value),
        PMsg::Ack { zxid } => format!("ACK zxid={zxid}"),
        PMsg::Commit { zxid } => format!("COMMIT zxid={zxid}"),
    }
}

fn render_smsg(m: &SMsg) -> String {
    match m {
        SMsg::FollowerInfo { accepted, last } => {
            format!("FOLLOWERINFO accepted={accepted} last={last}")
        }
        SMsg::NewEpoch { epoch } => format!("NEWEPOCH epoch={epoch}"),
        SMsg::AckEpoch {
            current,
            last,
            vote,
        } => {
            format!("ACKEPOCH current={current} last={last} vote={vote}")
        }
        SMsg::Sync { decision: d } => {
            let mode = match d.mode {
                SyncMode::Diff => "DIFF",
                SyncMode::Trunc => "TRUNC",
                SyncMode::Snap => "SNAP",
            };
            format!(
                "SYNC mode={mode} trunc={} commit={} txns={}",
                d.trunc_to,
                d.commit_to,
                txns(&d.payload)
            )
        }
        SMsg::NewLeader { epoch } => format!("NEWLEADER epoch={epoch}"),
        SMsg::AckLd { last } => format!("ACKLD last={last}"),
        SMsg::CommitLd { zxid } => format!("COMMITLD zxid={zxid}"),
        SMsg::Propose { txn } => format!("PROPOSE txn={}:{}", txn.zxid, txn.value),
        SMsg::Ack { zxid } => format!("ACK zxid={zxid}"),
        SMsg::Commit { zxid } => format!("COMMIT zxid={zxid}"),
    }
}

fn project_p(s: &PServer) -> NodeProjection {
    NodeProjection {
        up: true,
        role: role_name(s.role),
        phase: phase_name(s.phase),
        accepted_epoch: s.accepted_epoch,
        current_epoch: s.current_epoch,
        history: s.history.entries().to_vec(),
        last_committed: s.last_committed,
    }
}

fn project_s(s: &SServer) -> NodeProjection {
    NodeProjection {
        up: s.up,
        role: role_name(s.role),
        phase: phase_name(s.phase),
        accepted_epoch: s.accepted_epoch,
        current_epoch: s.current_epoch,
        history: s.history.entries().to_vec(),
        last_committed: s.last_committed,
    }
}

fn group<M>(chans: &[(u8, u8, M)], render: fn(&M) -> String) -> BTreeMap<(u8, u8), Vec<String>> {
    let mut out: BTreeMap<(u8, u8), Vec<String>> = BTreeMap::new();
    for (a, b, m) in chans {
        out.entry((*a, *b)).or_default().push(render(m));
    }
    out
}

fn frame_p(st: &ProtocolState) -> Frame {
    Frame {
        servers: st.servers.iter().map(project_p).collect(),
        channels: group(&st.channels, render_pmsg),
    }
}

fn frame_s(st: &SystemState) -> Frame {
    Frame {
        servers: st.servers.iter().map(project_s).collect(),
        channels: group(&st.channels, render_smsg),
    }
}

/// Model-level facts the mapping needs beyond the frames.
struct Hints {
    /// Pre-state oracle, per step.
    oracle: Vec<Option<u8>>,
    /// Newest proposed value in each post-state.
    newest_value: Vec<Option<u32>>,
}

fn build(cfg: &ExploreConfig, dialect: Dialect) -> NodeBuild {
    let has = |m| dialect == Dialect::Refined && cfg.mutations.contains(&m);
    NodeBuild {
        commit_before_quorum: has(MutationId::CommitBeforeQuorum),
        skip_trunc: has(MutationId::SyncSkipTrunc),
        recover_race_raw: has(MutationId::RecoverRaceRaw),
        diff_from_uncommitted: has(MutationId::DiffFromUncommitted),
        snapshot_boundary: match dialect {
            Dialect::Refined => cfg.snapshot_boundary.map(|(e, c)| Zxid::new(e, c)),
            Dialect::Classic => None,
        },
        faults: Vec::new(),
    }
}

/// Disk images and the establish round behind a test-level initial state.
/// The winner's pre-round epoch is one below the epoch it started, since it
/// held the greatest epoch of the round.
fn test_level_seed(st: &SystemState) -> Result<(Vec<Store>, ServerSet), HarnessError> {
    let leader = (1..=st.n())
        .find(|s| st.server(*s).role == Role::Leading)
        .ok_or_else(|| HarnessError::Schedule("test-level initial state has no leader".into()))?;
    let members = st.server(leader).registered;
    let stores = (1..=st.n())
        .map(|i| {
            let s = st.server(i);
            let mut store = Store {
                accepted_epoch: s.accepted_epoch,
                current_epoch: s.current_epoch,
                log: s.history.entries().to_vec(),
                last_committed: s.last_committed,
            };
            if i == leader {
                store.accepted_epoch = s.accepted_epoch - 1;
                store.current_epoch = s.accepted_epoch - 1;
            } else if members.contains(i) {
                store.accepted_epoch = s.current_epoch;
            }
            store
        })
        .collect();
    Ok((stores, members))
}

const FIRED: [&str; 15] = [
    "FleRound",
    "IpaEstablish",
    "FleJoin",
    "IpaJoin",
    "SendFollowerInfo",
    "LeaderSyncFollower",
    "LeaderPropose",
    "UpdateLeader",
    "FollowLeader",
    "Timeout",
    "Restart",
    "Crash",
    "Rejoin",
    "Partition",
    "Reconnect",
];

const DELIVERED: [&str; 11] = [
    "CEPOCH",
    "FOLLOWERINFO",
    "NEWEPOCH",
    "ACKEPOCH",
    "SYNC",
    "NEWLEADER",
    "ACKLD",
    "COMMITLD",
    "PROPOSE",
    "ACK",
    "COMMIT",
];

fn in_table(name: &str) -> bool {
    FIRED.contains(&name)
        || name
            .strip_prefix("Handle")
            .is_some_and(|k| !k.is_empty() && DELIVERED.contains(&k))
}

/// Replays `trace` on its model, then maps each step to an event. Actions
/// outside the mapping table are rejected before the model runs.
pub fn extract_schedule(trace: &Trace) -> Result<EventSchedule, HarnessError> {
    if let Some(s) = trace.steps.iter().find(|s| !in_table(&s.action.name)) {
        return Err(HarnessError::Unmappable(s.action.to_string()));
    }
    let cfg = &trace.config;
    let computed = cfg.digest();
    if computed != trace.config_digest {
        return Err(HarnessError::Integrity(format!(
            "config digest {} does not match recorded {}",
            computed, trace.config_digest
        )));
    }
    let n = cfg.n_servers;
    let quorum = QuorumSystem::new(n, cfg.effective_quorum_rule());
    let integrity = |e: crate::kernel::TraceError| HarnessError::Integrity(e.to_string());
    let (dialect, frames, hints, stores, preamble) = match trace.model.as_str() {
        "protocol" => {
            let states = replay_trace(&ProtocolModel::new(cfg), trace).map_err(integrity)?;
            let hints = Hints {
                oracle: states.iter().map(|s| s.oracle).collect(),
                newest_value: states
                    .iter()
                    .map(|s| s.proposed.last().map(|t| t.value))
                    .collect(),
            };
            let stores = vec![Store::default(); n as usize];
            (
                Dialect::Classic,
                states.iter().map(frame_p).collect::<Vec<_>>(),
                hints,
                stores,
                None,
            )
        }
        "system" | "test" => {
            let model = if trace.model == "system" {
                SystemModel::new(cfg)
            } else {
                SystemModel::ipa(cfg)
            };
            let states = replay_trace(&model, trace).map_err(integrity)?;
            let hints = Hints {
                oracle: vec![None; states.len()],
                newest_value: states
                    .iter()
                    .map(|s| s.proposed.last().map(|t| t.value))
                    .collect(),
            };
            let (stores, preamble) = if trace.model == "test" {
                let (s, p) = test_level_seed(&states[0])?;
                (s, Some(p))
            } else {
                (vec![Store::default(); n as usize], None)
            };
            (
                Dialect::Refined,
                states.iter().map(frame_s).collect(),
                hints,
                stores,
                preamble,
            )
        }
        other => {
            return Err(HarnessError::Schedule(format!(
                "unknown model kind `{other}`"
            )))
        }
    };

    let mut ids = MsgLedger::default();
    let mut events = Vec::with_capacity(trace.steps.len());
    for (i, step) in trace.steps.iter().enumerate() {
        let a = &step.action;
        let (pre, post) = (&frames[i], &frames[i + 1]);
        let (event, delivered) = map_action(a, &mut ids, &hints, i)?;
        ids.advance(pre, post, delivered);
        events.push(ScheduledEvent {
            step: i + 1,
            action: a.clone(),
            event,
            expect: post.clone(),
        });
    }
    Ok(EventSchedule {
        model: trace.model.clone(),
        cluster: ClusterSpec {
            n,
            quorum,
            dialect,
            build: build(cfg, dialect),
            stores,
            preamble,
        },
        initial: frames[0].clone(),
        events,
    })
}

fn map_action(
    a: &ActionInstance,
    ids: &mut MsgLedger,
    hints: &Hints,
    i: usize,
) -> Result<(Event, Option<(u8, u8)>), HarnessError> {
    let unmappable = || HarnessError::Unmappable(a.to_string());
    let actor = a.actor.ok_or_else(unmappable)?;
    let p = |k: usize| a.params.get(k).copied().ok_or_else(unmappable);
    let fire = |action| Event::Fire {
        node: actor,
        action,
    };
    let ev = match a.name.as_str() {
        "FleRound" => fire(LocalAction::Elect {
            members: ServerSet(p(0)? as u32),
        }),
        "IpaEstablish" => fire(LocalAction::Establish {
            members: ServerSet(p(0)? as u32),
        }),
        "FleJoin" => fire(LocalAction::Join {
            leader: p(0)? as u8,
        }),
        "IpaJoin" => fire(LocalAction::JoinEstablished {
            leader: p(0)? as u8,
        }),
        "SendFollowerInfo" => fire(LocalAction::SendFollowerInfo),
        "LeaderSyncFollower" => fire(LocalAction::SyncFollower {
            follower: p(0)? as u8,
        }),
        "LeaderPropose" => {
            let value = hints.newest_value[i + 1].ok_or_else(unmappable)?;
            fire(LocalAction::Propose { value })
        }
        "UpdateLeader" => fire(LocalAction::Lead),
        "FollowLeader" => {
            let leader = hints.oracle[i].ok_or_else(unmappable)?;
            fire(LocalAction::Follow { leader })
        }
        "Timeout" => Event::Fire {
            node: p(0)? as u8,
            action: LocalAction::Abandon,
        },
        "Restart" => fire(LocalAction::Restart),
        "Crash" => Event::Crash(actor),
        "Rejoin" => Event::Rejoin(actor),
        "Partition" => Event::Partition(actor, p(0)? as u8),
        "Reconnect" => Event::Reconnect(actor, p(0)? as u8),
        name if name.starts_with("Handle") => {
            let from = p(0)? as u8;
            let id = ids.head(from, actor).ok_or_else(|| {
                HarnessError::Schedule(format!("step {}: {a} has no message in flight", i + 1))
            })?;
            return Ok((Event::Deliver(id), Some((from, actor))));
        }
        _ => return Err(unmappable()),
    };
    Ok((ev, None))
}

/// Mirror of the model channels as message ids.
#[derive(Default)]
struct MsgLedger {
    queues: BTreeMap<(u8, u8), VecDeque<u64>>,
    next: BTreeMap<(u8, u8), u64>,
}

impl MsgLedger {
    fn head(&self, from: u8, to: u8) -> Option<MsgId> {
        self.queues
            .get(&(from, to))
            .and_then(|q| q.front())
            .map(|seq| MsgId {
                from,
                to,
                seq: *seq,
            })
    }

    /// Within one step a channel is popped at most once at the head, may be
    /// cleared, and is appended to; nothing is sent on a pair after clearing it.
    fn advance(&mut self, pre: &Frame, post: &Frame, delivered: Option<(u8, u8)>) {
        let pairs: BTreeSet<(u8, u8)> = pre
            .channels
            .keys()
            .chain(post.channels.keys())
            .copied()
            .collect();
        let empty = Vec::new();
        for pair in pairs {
            let mut before: &[String] = pre.channels.get(&pair).unwrap_or(&empty);
            let after = post.channels.get(&pair).unwrap_or(&empty);
            let q = self.queues.entry(pair).or_default();
            if delivered == Some(pair) {
                before = &before[1..];
                q.pop_front();
            }
            let appended = if after.starts_with(before) {
                &after[before.len()..]
            } else {
                q.clear();
                &after[..]
            };
            let next = self.next.entry(pair).or_insert(0);
            for _ in appended {
                q.push_back(*next);
                *next += 1;
            }
        }
    }
}
