use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};
use std::time::Instant;

use super::config::{ExploreConfig, Mode, StoreMode};
use super::fingerprint::Canon;
use super::trace::{reconstruct_trace, Node, PredecessorMap, NO_PARENT};
use super::{CheckReport, InvariantFilter, KernelError, Model, TerminatedReason, Violation};

/// Fingerprints are already well mixed.
#[derive(Default)]
struct IdentityHasher(u64);

impl Hasher for IdentityHasher {
    fn finish(&self) -> u64 {
        self.0
    }
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 << 8) | u64::from(b);
        }
    }
    fn write_u64(&mut self, v: u64) {
        self.0 = v;
    }
}

enum Visited {
    Fp {
        bits: u8,
        map: HashMap<u64, u32, BuildHasherDefault<IdentityHasher>>,
    },
    Exact(HashMap<Box<[u8]>, u32>),
}

impl Visited {
    fn new(cfg: &ExploreConfig) -> Self {
        match cfg.store {
            StoreMode::FingerprintSet => Visited::Fp {
                bits: cfg.fingerprint_bits,
                map: HashMap::default(),
            },
            StoreMode::ExactSet => Visited::Exact(HashMap::new()),
        }
    }

    /// Returns the existing node id, or records `id` and returns `None`.
    fn insert(&mut self, canon: &Canon, id: u32) -> Option<u32> {
        match self {
            Visited::Fp { bits, map } => {
                let key = canon.fingerprint().truncated(*bits);
                match map.entry(key) {
                    std::collections::hash_map::Entry::Occupied(e) => Some(*e.get()),
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(id);
                        None
                    }
                }
            }
            Visited::Exact(map) => {
                if let Some(&n) = map.get(canon.bytes()) {
                    return Some(n);
                }
                map.insert(canon.bytes().into(), id);
                None
            }
        }
    }
}

struct Run<'a, M: Model> {
    model: &'a M,
    cfg: &'a ExploreConfig,
    filter: InvariantFilter,
    preds: PredecessorMap,
    visited: Visited,
    violations: Vec<Violation>,
    canon: Canon,
    buf: Vec<&'static str>,
}

impl<M: Model> Run<'_, M> {
    /// Records a newly reached state; returns its node id if it was new.
    fn discover(&mut self, state: &M::State, parent: u32, action: u32) -> Option<u32> {
        self.canon.clear();
        self.model.encode(state, &mut self.canon);
        let id = self.preds.nodes.len() as u32;
        if self.visited.insert(&self.canon, id).is_some() {
            return None;
        }
        self.preds.nodes.push(Node {
            parent,
            action,
            fp: self.canon.fingerprint().0,
        });
        Some(id)
    }

    fn record(
        &mut self,
        invariant: &'static str,
        node: u32,
        extra: Option<u32>,
    ) -> Result<(), KernelError> {
        if self.violations.iter().any(|v| v.invariant == invariant) {
            return Ok(());
        }
        let trace = reconstruct_trace(self.model, self.cfg, &self.preds, node, extra)?;
        self.violations.push(Violation {
            invariant: invariant.to_string(),
            depth: trace.len(),
            trace,
        });
        Ok(())
    }

    fn check_new(&mut self, state: &M::State, node: u32) -> Result<(), KernelError> {
        let mut buf = std::mem::take(&mut self.buf);
        self.filter.state(self.model, state, &mut buf);
        for inv in buf.iter().copied() {
            self.record(inv, node, None)?;
        }
        self.buf = buf;
        Ok(())
    }
}

/// Exhaustive breadth-first exploration. Counterexamples are shortest in the
/// number of actions.
pub fn check_bfs<M: Model>(model: &M, cfg: &ExploreConfig) -> Result<CheckReport, KernelError> {
    cfg.validate()?;
    if cfg.mode != Mode::Bfs {
        return Err(KernelError::WrongMode);
    }
    let start = Instant::now();
    let inits = model.init_states();
    if inits.is_empty() {
        return Err(KernelError::NoInitialStates);
    }
    let mut run = Run {
        model,
        cfg,
        filter: InvariantFilter::new(cfg),
        preds: PredecessorMap::default(),
        visited: Visited::new(cfg),
        violations: Vec::new(),
        canon: Canon::new(),
        buf: Vec::new(),
    };
    let mut frontier: Vec<(u32, M::State)> = Vec::new();
    for (i, s) in inits.into_iter().enumerate() {
        if let Some(id) = run.discover(&s, NO_PARENT, i as u32) {
            run.check_new(&s, id)?;
            if model.within_constraints(&s) {
                frontier.push((id, s));
            }
        }
    }

    let mut transitions = 0u64;
    let mut level = 0usize;
    let mut diameter = 0usize;
    let mut reason = None;
    let mut enabled = Vec::new();
    let mut step_buf = Vec::new();
    let mut since_check = 0u32;
    if !run.violations.is_empty() {
        reason = Some(TerminatedReason::Violation);
    }

    'levels: while reason.is_none() && !frontier.is_empty() {
        let mut next_frontier = Vec::new();
        for (node, state) in frontier.drain(..) {
            enabled.clear();
            model.enabled(&state, &mut enabled);
            for (ai, action) in enabled.iter().enumerate() {
                let next = model.apply(&state, action);
                transitions += 1;
                run.filter.step(model, &state, &next, &mut step_buf);
                for inv in step_buf.iter().copied() {
                    run.record(inv, node, Some(ai as u32))?;
                }
                if let Some(id) = run.discover(&next, node, ai as u32) {
                    diameter = diameter.max(level + 1);
                    run.check_new(&next, id)?;
                    if model.within_constraints(&next) {
                        next_frontier.push((id, next));
                    }
                    since_check += 1;
                }
                if !run.violations.is_empty() && !cfg.collect_all {
                    reason = Some(TerminatedReason::Violation);
                    break 'levels;
                }
            }
            if since_check >= 1024 {
                since_check = 0;
                if cfg.time_limit_secs > 0 && start.elapsed().as_secs() >= cfg.time_limit_secs {
                    reason = Some(TerminatedReason::TimeLimit);
                }
                if cfg.state_limit > 0 && run.preds.len() as u64 >= cfg.state_limit {
                    reason = Some(TerminatedReason::StateLimit);
                }
                if reason.is_some() {
                    break 'levels;
                }
            }
        }
        level += 1;
        if !run.violations.is_empty() {
            reason = Some(TerminatedReason::Violation);
        }
        frontier = next_frontier;
    }

    let distinct = run.preds.len() as u64;
    Ok(CheckReport {
        model: model.kind().to_string(),
        mode: Mode::Bfs,
        states_explored: distinct,
        distinct_states: distinct,
        transitions,
        diameter: Some(diameter),
        violations: run.violations,
        wall_time_ms: start.elapsed().as_millis() as u64,
        terminated_reason: reason.unwrap_or(TerminatedReason::Exhausted),
        seed: cfg.seed,
        walks: None,
    })
}
