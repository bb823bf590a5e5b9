//! Catalog of planted faults.
//!
//! Each entry changes exactly one guard or update in exactly one action. Apart
//! from `WeakQuorum`, they are reconstructions of known bug classes (accepted-log
//! inconsistency and committed-log loss), not line-level copies of historical
//! ZooKeeper patches.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MutationId {
    WeakQuorum,
    SyncSkipTrunc,
    CommitBeforeQuorum,
    RecoverRaceRaw,
    DiffFromUncommitted,
}

impl MutationId {
    pub const ALL: [MutationId; 5] = [
        MutationId::WeakQuorum,
        MutationId::SyncSkipTrunc,
        MutationId::CommitBeforeQuorum,
        MutationId::RecoverRaceRaw,
        MutationId::DiffFromUncommitted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MutationId::WeakQuorum => "WEAK_QUORUM",
            MutationId::SyncSkipTrunc => "SYNC_SKIP_TRUNC",
            MutationId::CommitBeforeQuorum => "COMMIT_BEFORE_QUORUM",
            MutationId::RecoverRaceRaw => "RECOVER_RACE_RAW",
            MutationId::DiffFromUncommitted => "DIFF_FROM_UNCOMMITTED",
        }
    }

    /// One-line description of the single change.
    pub fn description(self) -> &'static str {
        match self {
            MutationId::WeakQuorum => {
                "quorum definition: sets holding at least half of the servers count as quorums"
            }
            MutationId::SyncSkipTrunc => {
                "leader sync decision: the TRUNC branch falls through to DIFF without truncation (accepted-log inconsistency class)"
            }
            MutationId::CommitBeforeQuorum => {
                "leader propose: lastCommitted advances on the leader's own ack, before a quorum acks (committed-log loss class)"
            }
            MutationId::RecoverRaceRaw => {
                "leader handling a late joiner's NEWLEADER ack: credits every pending proposal, ignoring the zxid the follower reports (recovering-follower race)"
            }
            MutationId::DiffFromUncommitted => {
                "leader syncing a late joiner: the sync payload is cut from the full log instead of the committed prefix and the shipped entries are marked committed"
            }
        }
    }

    /// Whether the mutation only makes sense on the SYNC-refined models.
    pub fn needs_system_model(self) -> bool {
        !matches!(self, MutationId::WeakQuorum)
    }
}

impl fmt::Display for MutationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown mutation `{0}` (see list-mutations)")]
pub struct UnknownMutation(pub String);

impl FromStr for MutationId {
    type Err = UnknownMutation;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        MutationId::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| UnknownMutation(s.to_string()))
    }
}

/// Set of active mutations, queried by the models at each mutable point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct MutationSet(u8);

impl MutationSet {
    pub fn from_ids(ids: &[MutationId]) -> Self {
        MutationSet(ids.iter().fold(0, |acc, m| acc | (1 << *m as u8)))
    }

    pub fn has(self, m: MutationId) -> bool {
        self.0 & (1 << m as u8) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse_back() {
        for m in MutationId::ALL {
            assert_eq!(m.name().parse::<MutationId>().unwrap(), m);
            assert!(!m.description().is_empty());
        }
        assert_eq!(
            "commit-before-quorum".parse::<MutationId>().unwrap(),
            MutationId::CommitBeforeQuorum
        );
        assert!("NOPE".parse::<MutationId>().is_err());
    }

    #[test]
    fn set_membership() {
        let s = MutationSet::from_ids(&[MutationId::SyncSkipTrunc]);
        assert!(s.has(MutationId::SyncSkipTrunc));
        assert!(!s.has(MutationId::WeakQuorum));
        assert!(MutationSet::default().is_empty());
    }
}
