use serde::{Deserialize, Serialize};

use crate::domain::QuorumRule;
use crate::kernel::fingerprint::Fingerprint;
use crate::mutation::MutationId;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    #[default]
    Bfs,
    Simulation,
}

/// How the BFS visited set remembers states.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreMode {
    /// Full canonical encodings; collision-free.
    ExactSet,
    /// 64-bit digests (or fewer, see `fingerprint_bits`).
    #[default]
    FingerprintSet,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("n_servers must be in 1..=5 (got {0}); set force = true to override")]
    ServerCount(u8),
    #[error("max_trace_len must be at least 1")]
    TraceLen,
    #[error("fingerprint_bits must be in 1..=64 (got {0})")]
    FingerprintBits(u8),
    #[error("n_servers must be in 1..=31 (got {0})")]
    HardServerLimit(u8),
}

/// Bounds and switches for one exploration run. Failure and transaction budgets
/// are copied into the initial state and gate the enabling conditions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExploreConfig {
    pub mode: Mode,
    pub n_servers: u8,
    pub max_transactions: u8,
    pub max_timeouts: u8,
    pub max_restarts: u8,
    pub max_crashes: u8,
    pub max_partitions: u8,
    /// Simulation walk length.
    pub max_trace_len: usize,
    /// Simulation walk budget.
    pub max_walks: u64,
    pub seed: u64,
    /// 0 disables the limit.
    pub time_limit_secs: u64,
    /// 0 disables the limit.
    pub state_limit: u64,
    pub quorum_rule: QuorumRule,
    pub mutations: Vec<MutationId>,
    pub store: StoreMode,
    pub fingerprint_bits: u8,
    /// Keep going to the end of the violating BFS level and report every violation there.
    pub collect_all: bool,
    /// Invariant names to check; empty means all of the model's invariants.
    pub invariants: Vec<String>,
    /// Allow n_servers above 5.
    pub force: bool,
    /// Oldest zxid a leader still keeps as a log; older followers get SNAP.
    pub snapshot_boundary: Option<(u32, u32)>,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            mode: Mode::Bfs,
            n_servers: 3,
            max_transactions: 1,
            max_timeouts: 1,
            max_restarts: 1,
            max_crashes: 1,
            max_partitions: 1,
            max_trace_len: 100,
            max_walks: 2000,
            seed: 0,
            time_limit_secs: 0,
            state_limit: 0,
            quorum_rule: QuorumRule::Majority,
            mutations: Vec::new(),
            store: StoreMode::FingerprintSet,
            fingerprint_bits: 64,
            collect_all: false,
            invariants: Vec::new(),
            force: false,
            snapshot_boundary: None,
        }
    }
}

impl ExploreConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_servers == 0 || self.n_servers > 31 {
            return Err(ConfigError::HardServerLimit(self.n_servers));
        }
        if self.n_servers > 5 && !self.force {
            return Err(ConfigError::ServerCount(self.n_servers));
        }
        if self.max_trace_len == 0 {
            return Err(ConfigError::TraceLen);
        }
        if self.fingerprint_bits == 0 || self.fingerprint_bits > 64 {
            return Err(ConfigError::FingerprintBits(self.fingerprint_bits));
        }
        Ok(())
    }

    /// Effective quorum rule: the WEAK_QUORUM mutation overrides the configured one.
    pub fn effective_quorum_rule(&self) -> QuorumRule {
        if self.mutations.contains(&MutationId::WeakQuorum) {
            QuorumRule::WeakHalf
        } else {
            self.quorum_rule
        }
    }

    /// Digest of the canonical JSON form of this config.
    pub fn digest(&self) -> Fingerprint {
        let json = serde_json::to_string(self).expect("config serializes");
        Fingerprint::of_bytes(json.as_bytes())
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_trace_len_is_100() {
        let c = ExploreConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!(c.max_trace_len, 100);
    }

    #[test]
    fn server_bound_needs_force() {
        let mut c = ExploreConfig {
            n_servers: 6,
            ..Default::default()
        };
        assert_eq!(c.validate(), Err(ConfigError::ServerCount(6)));
        c.force = true;
        assert!(c.validate().is_ok());
        c.max_trace_len = 0;
        assert_eq!(c.validate(), Err(ConfigError::TraceLen));
    }

    #[test]
    fn digest_tracks_every_field() {
        let a = ExploreConfig::default();
        let b = ExploreConfig {
            seed: 1,
            ..Default::default()
        };
        assert_eq!(a.digest(), ExploreConfig::default().digest());
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn weak_quorum_mutation_overrides_rule() {
        let c = ExploreConfig {
            mutations: vec![MutationId::WeakQuorum],
            ..Default::default()
        };
        assert_eq!(c.effective_quorum_rule(), QuorumRule::WeakHalf);
    }
}
