//! Model-agnostic explicit-state explorer.
//!
//! A model exposes its initial states, an ordered list of enabled actions per
//! state, a pure transition function, and its invariants. The kernel explores
//! it either breadth-first (exhaustive, shortest counterexamples) or by seeded
//! random walks, and turns any violation into a replayable [`Trace`].

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

mod bfs;
pub mod config;
pub mod fingerprint;
mod simulate;
pub mod toy;
pub mod trace;

pub use bfs::check_bfs;
pub use config::{ConfigError, ExploreConfig, Mode, StoreMode};
pub use fingerprint::{Canon, Canonical, Fingerprint};
pub use simulate::{random_walk, simulate};
pub use trace::{reconstruct_trace, replay_trace, Trace, TraceError, TraceStep};

/// One named, parameterized transition.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionInstance {
    pub name: String,
    pub actor: Option<u8>,
    pub params: Vec<i64>,
}

impl ActionInstance {
    pub fn new(name: &str, actor: Option<u8>, params: Vec<i64>) -> Self {
        ActionInstance {
            name: name.to_string(),
            actor,
            params,
        }
    }

    pub fn by(name: &str, actor: u8) -> Self {
        ActionInstance::new(name, Some(actor), Vec::new())
    }

    pub fn by_with(name: &str, actor: u8, params: &[i64]) -> Self {
        ActionInstance::new(name, Some(actor), params.to_vec())
    }

    pub fn param(&self, i: usize) -> i64 {
        self.params[i]
    }
}

impl fmt::Display for ActionInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        match self.actor {
            Some(a) => write!(f, "{a}")?,
            None => write!(f, "-")?,
        }
        for p in &self.params {
            write!(f, ",{p}")?;
        }
        write!(f, ")")
    }
}

/// The contract every explorable model implements.
///
/// `apply` must be pure and `enabled` must list actions in a deterministic order;
/// reproducibility of every report depends on both.
pub trait Model {
    type State: Clone + fmt::Debug;

    /// Short model name written into trace headers.
    fn kind(&self) -> &'static str;

    fn init_states(&self) -> Vec<Self::State>;

    fn enabled(&self, state: &Self::State, out: &mut Vec<ActionInstance>);

    fn apply(&self, state: &Self::State, action: &ActionInstance) -> Self::State;

    /// Every invariant name this model can report.
    fn invariants(&self) -> Vec<&'static str>;

    /// Pushes the names of state invariants that fail in `state`.
    fn check_state(&self, state: &Self::State, out: &mut Vec<&'static str>);

    /// Pushes the names of step invariants that fail on `prev -> next`.
    fn check_step(&self, _prev: &Self::State, _next: &Self::State, _out: &mut Vec<&'static str>) {}

    fn within_constraints(&self, _state: &Self::State) -> bool {
        true
    }

    fn encode(&self, state: &Self::State, out: &mut Canon);

    fn fingerprint(&self, state: &Self::State) -> Fingerprint {
        let mut c = Canon::new();
        self.encode(state, &mut c);
        c.fingerprint()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TerminatedReason {
    Exhausted,
    Violation,
    TimeLimit,
    StateLimit,
    /// Simulation used up its walk budget.
    Budget,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub invariant: String,
    /// Trace length; for BFS this is the depth of the violating state.
    pub depth: usize,
    pub trace: Trace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    pub model: String,
    pub mode: Mode,
    pub states_explored: u64,
    pub distinct_states: u64,
    pub transitions: u64,
    /// BFS only.
    pub diameter: Option<usize>,
    pub violations: Vec<Violation>,
    pub wall_time_ms: u64,
    pub terminated_reason: TerminatedReason,
    pub seed: u64,
    /// Simulation only.
    pub walks: Option<u64>,
}

impl CheckReport {
    pub fn has_violation(&self) -> bool {
        !self.violations.is_empty()
    }

    pub fn violated(&self, invariant: &str) -> bool {
        self.violations.iter().any(|v| v.invariant == invariant)
    }

    pub fn first(&self, invariant: &str) -> Option<&Violation> {
        self.violations.iter().find(|v| v.invariant == invariant)
    }

    /// Equality on every field except wall time.
    pub fn same_outcome(&self, other: &CheckReport) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.wall_time_ms = 0;
        b.wall_time_ms = 0;
        a == b
    }

    pub fn wall_time(&self) -> Duration {
        Duration::from_millis(self.wall_time_ms)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum KernelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("check_bfs needs mode BFS, simulate needs mode SIMULATION")]
    WrongMode,
    #[error("model has no initial states")]
    NoInitialStates,
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Filters a model's invariant reports down to the configured subset.
pub(crate) struct InvariantFilter {
    only: Vec<String>,
}

impl InvariantFilter {
    pub(crate) fn new(cfg: &ExploreConfig) -> Self {
        InvariantFilter {
            only: cfg.invariants.clone(),
        }
    }

    pub(crate) fn keep(&self, name: &str) -> bool {
        self.only.is_empty() || self.only.iter().any(|n| n == name)
    }

    pub(crate) fn state<M: Model>(&self, model: &M, s: &M::State, buf: &mut Vec<&'static str>) {
        buf.clear();
        model.check_state(s, buf);
        buf.retain(|n| self.keep(n));
    }

    pub(crate) fn step<M: Model>(
        &self,
        model: &M,
        prev: &M::State,
        next: &M::State,
        buf: &mut Vec<&'static str>,
    ) {
        buf.clear();
        model.check_step(prev, next, buf);
        buf.retain(|n| self.keep(n));
    }
}
