//! Leader-side sync decision and follower-side application.

use serde::{Deserialize, Serialize};

use crate::domain::{truncate_to, ContractError, History, Txn, Zxid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SyncMode {
    Diff,
    Trunc,
    Snap,
}

impl SyncMode {
    pub fn name(self) -> &'static str {
        match self {
            SyncMode::Diff => "DIFF",
            SyncMode::Trunc => "TRUNC",
            SyncMode::Snap => "SNAP",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SyncDecision {
    pub mode: SyncMode,
    /// TRUNC only; `(0,0)` otherwise.
    pub trunc_to: Zxid,
    /// DIFF suffix, TRUNC suffix after the cut, or the whole SNAP log.
    pub payload: Vec<Txn>,
    /// The follower may commit up to here once the payload is applied.
    pub commit_to: Zxid,
}

/// Picks the sync mode for a follower whose last zxid is `follower_last`.
///
/// `source` is what the leader syncs from. `snapshot_boundary` is the oldest
/// zxid the leader still keeps as a log; older followers get SNAP.
/// `skip_trunc` is the SYNC_SKIP_TRUNC mutation.
pub fn decide_sync(
    source: &History,
    follower_last: Zxid,
    snapshot_boundary: Option<Zxid>,
    skip_trunc: bool,
) -> SyncDecision {
    let decision = |mode, trunc_to, payload: &[Txn]| SyncDecision {
        mode,
        trunc_to,
        payload: payload.to_vec(),
        commit_to: Zxid::ZERO,
    };
    if let Some(b) = snapshot_boundary {
        if follower_last < b && !source.is_empty() {
            return decision(SyncMode::Snap, Zxid::ZERO, source.entries());
        }
    }
    if source.contains(follower_last) {
        return decision(
            SyncMode::Diff,
            Zxid::ZERO,
            source.suffix_after(follower_last),
        );
    }
    if !source.is_empty() && source.epochs().all(|e| follower_last.epoch < e) {
        return decision(SyncMode::Snap, Zxid::ZERO, source.entries());
    }
    if skip_trunc {
        return decision(
            SyncMode::Diff,
            Zxid::ZERO,
            source.suffix_after(follower_last),
        );
    }
    let cut = source.floor(follower_last);
    decision(SyncMode::Trunc, cut, source.suffix_after(cut))
}

/// Applies `d` to a follower log and commit point. Fails if a TRUNC target is
/// not in the log.
pub fn apply_sync(
    history: &History,
    last_committed: Zxid,
    d: &SyncDecision,
) -> Result<(History, Zxid), ContractError> {
    let mut h = match d.mode {
        SyncMode::Diff => history.clone(),
        SyncMode::Trunc => truncate_to(history, d.trunc_to)?,
        SyncMode::Snap => History::new(),
    };
    h.0.extend_from_slice(&d.payload);
    let mut lc = last_committed;
    if !h.contains(lc) {
        lc = h.floor(lc);
    }
    if h.contains(d.commit_to) {
        lc = lc.max(d.commit_to);
    }
    Ok((h, lc))
}

/// Every (leader log, follower log) pair drawn from one world of at most two
/// epochs and three entries, where the follower's last epoch is not past the
/// leader's, with and without a snapshot boundary. Returns the number of cases
/// and a description of each case where sync does not reproduce the leader log.
pub fn exhaustive_check() -> (usize, Vec<String>) {
    let mut checked = 0;
    let mut failures = Vec::new();
    for k2 in 0..=3u8 {
        let logs: Vec<History> = crate::test_model::world_shapes(3, k2)
            .into_iter()
            .map(|s| s.history)
            .collect();
        for leader in &logs {
            for follower in &logs {
                let f_last = follower.last_zxid();
                if f_last.epoch > leader.last_zxid().epoch {
                    continue;
                }
                let first = leader.0.first().map_or(Zxid::ZERO, |t| t.zxid);
                for boundary in [None, Some(first)] {
                    checked += 1;
                    let d = decide_sync(leader, f_last, boundary, false);
                    match apply_sync(follower, Zxid::ZERO, &d) {
                        Ok((h, _)) if h == *leader => {}
                        other => failures.push(format!(
                            "leader {:?} follower {:?} boundary {:?}: {} -> {:?}",
                            leader.0,
                            follower.0,
                            boundary,
                            d.mode.name(),
                            other
                        )),
                    }
                }
            }
        }
    }
    (checked, failures)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(z: &[(u32, u32)]) -> History {
        History::from_zxids(z)
    }

    #[test]
    fn diff_suffix() {
        let d = decide_sync(&h(&[(1, 1), (1, 2), (2, 1)]), Zxid::new(1, 2), None, false);
        assert_eq!(d.mode, SyncMode::Diff);
        assert_eq!(
            d.payload.iter().map(|t| t.zxid).collect::<Vec<_>>(),
            vec![Zxid::new(2, 1)]
        );
    }

    #[test]
    fn equal_logs_give_empty_diff() {
        let d = decide_sync(&h(&[(1, 1)]), Zxid::new(1, 1), None, false);
        assert_eq!(d.mode, SyncMode::Diff);
        assert!(d.payload.is_empty());
    }

    #[test]
    fn follower_ahead_is_truncated() {
        let d = decide_sync(&h(&[(1, 1), (1, 2)]), Zxid::new(1, 3), None, false);
        assert_eq!(d.mode, SyncMode::Trunc);
        assert_eq!(d.trunc_to, Zxid::new(1, 2));
        assert!(d.payload.is_empty());
    }

    #[test]
    fn boundary_forces_snap() {
        let d = decide_sync(&h(&[(2, 1)]), Zxid::ZERO, Some(Zxid::new(2, 1)), false);
        assert_eq!(d.mode, SyncMode::Snap);
        assert_eq!(d.payload, h(&[(2, 1)]).0);
    }

    #[test]
    fn older_epoch_follower_gets_snap() {
        let d = decide_sync(&h(&[(2, 1)]), Zxid::new(1, 1), None, false);
        assert_eq!(d.mode, SyncMode::Snap);
    }

    #[test]
    fn skip_trunc_falls_through_to_diff() {
        let d = decide_sync(&h(&[(1, 1), (2, 1)]), Zxid::new(1, 2), None, true);
        assert_eq!(d.mode, SyncMode::Diff);
        let (out, _) = apply_sync(&h(&[(1, 1), (1, 2)]), Zxid::ZERO, &d).unwrap();
        assert_ne!(out, h(&[(1, 1), (2, 1)]));
    }

    #[test]
    fn apply_examples() {
        let diff = SyncDecision {
            mode: SyncMode::Diff,
            trunc_to: Zxid::ZERO,
            payload: vec![Txn::new(Zxid::new(2, 1), 3)],
            commit_to: Zxid::ZERO,
        };
        let (out, _) = apply_sync(&h(&[(1, 1), (1, 2)]), Zxid::ZERO, &diff).unwrap();
        assert_eq!(out, h(&[(1, 1), (1, 2), (2, 1)]));

        let trunc = SyncDecision {
            mode: SyncMode::Trunc,
            trunc_to: Zxid::new(1, 2),
            payload: vec![],
            commit_to: Zxid::ZERO,
        };
        let (out, lc) = apply_sync(&h(&[(1, 1), (1, 2), (1, 3)]), Zxid::new(1, 3), &trunc).unwrap();
        assert_eq!(out, h(&[(1, 1), (1, 2)]));
        assert_eq!(lc, Zxid::new(1, 2));

        let snap = SyncDecision {
            mode: SyncMode::Snap,
            trunc_to: Zxid::ZERO,
            payload: h(&[(2, 1)]).0,
            commit_to: Zxid::new(2, 1),
        };
        let (out, lc) = apply_sync(&h(&[(1, 1)]), Zxid::ZERO, &snap).unwrap();
        assert_eq!(out, h(&[(2, 1)]));
        assert_eq!(lc, Zxid::new(2, 1));
    }

    #[test]
    fn trunc_to_missing_zxid_fails() {
        let trunc = SyncDecision {
            mode: SyncMode::Trunc,
            trunc_to: Zxid::new(1, 2),
            payload: vec![],
            commit_to: Zxid::ZERO,
        };
        assert!(apply_sync(&h(&[(2, 1)]), Zxid::ZERO, &trunc).is_err());
    }
}
