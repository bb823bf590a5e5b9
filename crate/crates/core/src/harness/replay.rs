//! Replay controller: owns the nodes and the network, fires schedule events in
//! order and compares every node against the model after each one.

use std::collections::VecDeque;

use crate::domain::ServerSet;

use super::net::SimNet;
use super::node::{Ballot, NodeBuild, NodeProjection, NodeRuntime, Out, PlantedFault};
use super::schedule::{ClusterSpec, Event, EventSchedule, Frame, LocalAction};
use super::{ConformanceReport, Divergence, FieldDiff};

pub struct Cluster {
    nodes: Vec<NodeRuntime>,
    net: SimNet,
    /// `(node, peer)`: node must learn that its connection to peer closed.
    lost: VecDeque<(u8, u8)>,
}

impl Cluster {
    pub fn new(spec: &ClusterSpec) -> Self {
        let nodes = (1..=spec.n)
            .map(|id| {
                NodeRuntime::new(id, spec.dialect, spec.quorum, spec.build.clone())
                    .with_store(spec.stores[id as usize - 1].clone())
            })
            .collect();
        Cluster {
            nodes,
            net: SimNet::new(),
            lost: VecDeque::new(),
        }
    }

    fn n(&self) -> u8 {
        self.nodes.len() as u8
    }

    fn node(&mut self, id: u8) -> Result<&mut NodeRuntime, String> {
        let n = self.n();
        self.nodes
            .get_mut((id as usize).wrapping_sub(1))
            .ok_or_else(|| format!("no node {id} in a cluster of {n}"))
    }

    pub fn project(&self) -> Frame {
        Frame {
            servers: self.nodes.iter().map(NodeRuntime::project).collect(),
            channels: self.net.channels(),
        }
    }

    fn route(&mut self, from: u8, outs: Vec<Out>) {
        for o in outs {
            match o {
                Out::Send(to, m) => {
                    self.net.send(from, to, m);
                }
                Out::Leave(peer) => {
                    self.net.clear_pair(from, peer);
                    self.lost.push_back((peer, from));
                }
                Out::CloseAll => {
                    self.net.clear_all(from);
                    for p in (1..=self.n()).filter(|p| *p != from) {
                        self.lost.push_back((p, from));
                    }
                }
            }
        }
    }

    fn settle(&mut self) {
        while let Some((node, peer)) = self.lost.pop_front() {
            let outs = self.nodes[node as usize - 1].peer_lost(peer);
            self.route(node, outs);
        }
    }

    fn ballots(&mut self, members: ServerSet) -> Result<Vec<Ballot>, String> {
        let mut out = Vec::new();
        for m in members.iter() {
            let nd = self.node(m)?;
            if !nd.is_up() {
                return Err(format!("member {m} is down"));
            }
            out.push(nd.ballot());
        }
        Ok(out)
    }

    fn connected(&self, members: ServerSet) -> bool {
        let ids: Vec<u8> = members.iter().collect();
        ids.iter()
            .enumerate()
            .all(|(i, a)| ids[i + 1..].iter().all(|b| !self.net.partitioned(*a, *b)))
    }

    fn round(&mut self, members: ServerSet, establish: bool) -> Result<(), String> {
        if !self.connected(members) {
            return Err(format!("members {members} cannot all reach each other"));
        }
        let ballots = self.ballots(members)?;
        for m in members.iter() {
            let nd = self.node(m)?;
            let outs = if establish {
                nd.establish(&ballots)?
            } else {
                nd.elect(&ballots)?
            };
            self.route(m, outs);
        }
        Ok(())
    }

    /// Executes one event and lets connection-loss notices settle.
    pub fn fire(&mut self, ev: &Event) -> Result<(), String> {
        match ev {
            Event::Deliver(id) => {
                let msg = self.net.deliver(*id).map_err(|e| e.to_string())?;
                let outs = self.node(id.to)?.receive(id.from, msg);
                self.route(id.to, outs);
            }
            Event::Fire { node, action } => {
                let node = *node;
                let outs = match action {
                    LocalAction::Elect { members } => {
                        if !members.contains(node) {
                            return Err(format!("node {node} is not in {members}"));
                        }
                        self.round(*members, false)?;
                        Vec::new()
                    }
                    LocalAction::Establish { members } => {
                        if !members.contains(node) {
                            return Err(format!("node {node} is not in {members}"));
                        }
                        self.round(*members, true)?;
                        Vec::new()
                    }
                    LocalAction::Join { leader } => {
                        if self.net.partitioned(node, *leader) {
                            return Err(format!("{node} cannot reach {leader}"));
                        }
                        self.node(node)?.join(*leader)?
                    }
                    LocalAction::JoinEstablished { leader } => {
                        let l = *leader;
                        if self.net.partitioned(node, l) || !self.node(l)?.is_up() {
                            return Err(format!("{node} cannot reach {l}"));
                        }
                        let epoch = self.node(l)?.offered_epoch();
                        let (last, vote) = self.node(node)?.join_established(l, epoch)?;
                        self.node(l)?.admit(node, last, vote)?;
                        Vec::new()
                    }
                    LocalAction::SendFollowerInfo => self.node(node)?.send_follower_info()?,
                    LocalAction::SyncFollower { follower } => {
                        self.node(node)?.sync_follower(*follower)?
                    }
                    LocalAction::Propose { value } => self.node(node)?.propose(*value)?,
                    LocalAction::Lead => self.node(node)?.lead()?,
                    LocalAction::Follow { leader } => self.node(node)?.follow(*leader)?,
                    LocalAction::Abandon => self.node(node)?.abandon()?,
                    LocalAction::Restart => self.node(node)?.restart()?,
                };
                self.route(node, outs);
            }
            Event::Crash(s) => {
                let outs = self.node(*s)?.crash()?;
                self.route(*s, outs);
                self.net.set_down(*s, true);
            }
            Event::Rejoin(s) => {
                self.node(*s)?.recover()?;
                self.net.set_down(*s, false);
            }
            Event::Partition(a, b) => {
                self.node(*a)?;
                self.node(*b)?;
                self.net.partition(*a, *b);
                self.lost.push_back((*a, *b));
                self.lost.push_back((*b, *a));
            }
            Event::Reconnect(a, b) => self.net.reconnect(*a, *b),
        }
        self.settle();
        Ok(())
    }
}

fn hist(h: &[crate::domain::Txn]) -> String {
    let body: Vec<String> = h
        .iter()
        .map(|t| format!("{}:{}", t.zxid, t.value))
        .collect();
    format!("[{}]", body.join(" "))
}

fn compare_server(i: usize, m: &NodeProjection, n: &NodeProjection, out: &mut Vec<FieldDiff>) {
    let mut diff = |field: &str, mv: String, nv: String| {
        if mv != nv {
            out.push(FieldDiff {
                path: format!("servers[{}].{field}", i + 1),
                model: mv,
                node: nv,
            });
        }
    };
    let updown = |up: bool| if up { "UP" } else { "DOWN" }.to_string();
    diff("up", updown(m.up), updown(n.up));
    if !m.up || !n.up {
        return;
    }
    diff("role", m.role.to_string(), n.role.to_string());
    diff("phase", m.phase.to_string(), n.phase.to_string());
    diff(
        "acceptedEpoch",
        m.accepted_epoch.to_string(),
        n.accepted_epoch.to_string(),
    );
    diff(
        "currentEpoch",
        m.current_epoch.to_string(),
        n.current_epoch.to_string(),
    );
    diff("history", hist(&m.history), hist(&n.history));
    diff(
        "lastCommitted",
        m.last_committed.to_string(),
        n.last_committed.to_string(),
    );
}

/// Field-by-field differences, servers first, then channels.
pub fn compare(model: &Frame, nodes: &Frame) -> Vec<FieldDiff> {
    let mut out = Vec::new();
    if model.servers.len() != nodes.servers.len() {
        out.push(FieldDiff {
            path: "servers".into(),
            model: model.servers.len().to_string(),
            node: nodes.servers.len().to_string(),
        });
        return out;
    }
    for (i, (m, n)) in model.servers.iter().zip(&nodes.servers).enumerate() {
        compare_server(i, m, n, &mut out);
    }
    let pairs: std::collections::BTreeSet<&(u8, u8)> =
        model.channels.keys().chain(nodes.channels.keys()).collect();
    let empty = Vec::new();
    for p in pairs {
        let mv = model.channels.get(p).unwrap_or(&empty);
        let nv = nodes.channels.get(p).unwrap_or(&empty);
        if mv != nv {
            out.push(FieldDiff {
                path: format!("net[{}->{}]", p.0, p.1),
                model: format!("{mv:?}"),
                node: format!("{nv:?}"),
            });
        }
    }
    out
}

/// Runs `s` on a fresh cluster built as the schedule describes.
pub fn run_schedule(s: &EventSchedule) -> ConformanceReport {
    run_with(s, &s.cluster.build)
}

/// Runs `s` on nodes carrying the given planted faults.
pub fn run_schedule_with_faults(s: &EventSchedule, faults: &[PlantedFault]) -> ConformanceReport {
    let mut build = s.cluster.build.clone();
    build.faults = faults.to_vec();
    run_with(s, &build)
}

fn run_with(s: &EventSchedule, build: &NodeBuild) -> ConformanceReport {
    let spec = ClusterSpec {
        build: build.clone(),
        ..s.cluster.clone()
    };
    let mut cluster = Cluster::new(&spec);
    let mut report = ConformanceReport {
        model: s.model.clone(),
        events: s.events.len(),
        steps_checked: 0,
        first_divergence: None,
        divergence: None,
    };
    let preamble = match spec.preamble {
        Some(members) => cluster.round(members, true),
        None => Ok(()),
    };
    let diverged = |step, action: String, event: String, diffs| Divergence {
        step,
        action,
        event,
        diffs,
    };
    let initial = match preamble {
        Err(e) => vec![FieldDiff::refusal(e)],
        Ok(()) => {
            cluster.settle();
            compare(&s.initial, &cluster.project())
        }
    };
    if !initial.is_empty() {
        report.first_divergence = Some(0);
        report.divergence = Some(diverged(
            0,
            "initial".into(),
            "initial state".into(),
            initial,
        ));
        return report;
    }
    for ev in &s.events {
        report.steps_checked += 1;
        let diffs = match cluster.fire(&ev.event) {
            Err(e) => vec![FieldDiff::refusal(e)],
            Ok(()) => compare(&ev.expect, &cluster.project()),
        };
        if !diffs.is_empty() {
            report.first_divergence = Some(ev.step);
            report.divergence = Some(diverged(
                ev.step,
                ev.action.to_string(),
                ev.event.to_string(),
                diffs,
            ));
            break;
        }
    }
    report
}
