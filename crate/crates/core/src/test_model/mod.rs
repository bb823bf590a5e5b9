//! The test-level model: the system model with election and discovery
//! abstracted away, started from a bounded family of SYNC-entry states.
//!
//! Init states are built from small "worlds". A world fixes an epoch-1 chain
//! and an epoch-2 chain that forked off its first `k2` entries. Each server
//! holds a prefix of one of the two, or is fresh. Every epoch present in the
//! world was accepted by a quorum, since its leader needed one first.

use serde::{Deserialize, Serialize};

use crate::domain::{History, ServerSet, Txn, Zxid};
use crate::kernel::{check_bfs, simulate, CheckReport, ExploreConfig, KernelError, Mode};
use crate::system::{SServer, SystemModel, SystemState};

/// Longest init-state history.
pub const MAX_INIT_LOG: u8 = 3;

/// One server's starting log and epochs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    pub history: History,
    pub epoch: u32,
}

/// Every server shape of the world whose epoch-2 branch forks after `k2` of
/// `t` epoch-1 entries.
pub fn world_shapes(t: u8, k2: u8) -> Vec<Shape> {
    let t = t as u32;
    let k2 = k2 as u32;
    let chain1: Vec<Txn> = (1..=t).map(|i| Txn::new(Zxid::new(1, i), i)).collect();
    let chain2: Vec<Txn> = (1..=t - k2)
        .map(|j| Txn::new(Zxid::new(2, j), 10 + j))
        .collect();
    let mut out = vec![Shape {
        history: History::new(),
        epoch: 0,
    }];
    for a in 0..=t as usize {
        out.push(Shape {
            history: History(chain1[..a].to_vec()),
            epoch: 1,
        });
    }
    for b in 0..=chain2.len() {
        let mut h = chain1[..k2 as usize].to_vec();
        h.extend_from_slice(&chain2[..b]);
        out.push(Shape {
            history: History(h),
            epoch: 2,
        });
    }
    out
}

fn looking_state(model: &SystemModel, shapes: &[&Shape]) -> SystemState {
    let mut st = model.initial();
    let mut proposed: Vec<Txn> = Vec::new();
    for (i, sh) in shapes.iter().enumerate() {
        let s = &mut st.servers[i];
        *s = SServer::fresh();
        s.history = sh.history.clone();
        s.accepted_epoch = sh.epoch;
        s.current_epoch = sh.epoch;
        proposed.extend_from_slice(sh.history.entries());
    }
    proposed.sort_by_key(|t| t.zxid);
    proposed.dedup();
    st.proposed = proposed;
    st
}

/// All SYNC-entry states reachable by one `IpaEstablish` from a world
/// assignment, deduplicated, in a fixed order.
pub fn ipa_init_states(model: &SystemModel) -> Vec<SystemState> {
    let t = model.max_transactions.min(MAX_INIT_LOG);
    let n = model.n as usize;
    let mut out = Vec::new();
    for k2 in 0..=t {
        let shapes = world_shapes(t, k2);
        let mut idx = vec![0usize; n];
        loop {
            let pick: Vec<&Shape> = idx.iter().map(|i| &shapes[*i]).collect();
            let accepted = |e: u32| {
                let mut set = ServerSet::EMPTY;
                for (i, sh) in pick.iter().enumerate() {
                    if sh.epoch >= e {
                        set.insert(i as u8 + 1);
                    }
                }
                set.is_empty() || model.quorum.is_quorum(set)
            };
            if accepted(1) && accepted(2) {
                let st = looking_state(model, &pick);
                for p in model.election_sets(&st) {
                    let mut s = st.clone();
                    model.ipa_establish(&mut s, p);
                    out.push(s);
                }
            }
            // Odometer over shape indices.
            let mut k = 0;
            while k < n {
                idx[k] += 1;
                if idx[k] < shapes.len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == n {
                break;
            }
        }
    }
    model.dedup(out)
}

/// BFS and simulation of the same mutated test model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HuntReport {
    pub bfs: CheckReport,
    pub simulation: CheckReport,
}

pub fn hunt(cfg: &ExploreConfig) -> Result<HuntReport, KernelError> {
    let model = SystemModel::ipa(cfg);
    let bfs = check_bfs(&model, &cfg.clone().with_mode(Mode::Bfs))?;
    let simulation = simulate(&model, &cfg.clone().with_mode(Mode::Simulation))?;
    Ok(HuntReport { bfs, simulation })
}
