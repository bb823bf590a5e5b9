use super::*;
use crate::kernel::{
    check_bfs, simulate, ActionInstance, ExploreConfig, Mode, Model, TerminatedReason,
};
use crate::mutation::MutationId;
use crate::protocol::{Phase, Role};

fn cfg(n: u8) -> ExploreConfig {
    ExploreConfig {
        n_servers: n,
        max_transactions: 1,
        max_crashes: 1,
        max_partitions: 1,
        ..Default::default()
    }
}

fn enabled(m: &SystemModel, st: &SystemState) -> Vec<ActionInstance> {
    let mut v = Vec::new();
    m.enabled(st, &mut v);
    v
}

/// Applies the enabled action named `name` by `actor` whose first param is `p`.
fn act(m: &SystemModel, st: &SystemState, name: &str, actor: u8, p: Option<i64>) -> SystemState {
    let a = enabled(m, st)
        .into_iter()
        .find(|a| a.name == name && a.actor == Some(actor) && p.is_none_or(|p| a.params[0] == p))
        .unwrap_or_else(|| panic!("{name}({actor},{p:?}) not enabled"));
    m.apply(st, &a)
}

fn set(ids: &[u8]) -> Option<i64> {
    Some(ServerSet::of(ids).0 as i64)
}

fn with_log(st: &mut SystemState, id: u8, z: &[(u32, u32)], epoch: u32) {
    let s = st.srv(id);
    s.history = History::from_zxids(z);
    s.accepted_epoch = epoch;
    s.current_epoch = epoch;
}

/// Drives `l` and followers through election, discovery and sync into BROADCAST.
fn establish(m: &SystemModel, st: &SystemState, p: &[u8]) -> SystemState {
    let l = SystemModel::winner(st, ServerSet::of(p));
    let mut st = act(m, st, "FleRound", l, set(p));
    let fs: Vec<u8> = p.iter().copied().filter(|f| *f != l).collect();
    for f in &fs {
        st = act(m, &st, "SendFollowerInfo", *f, None);
        st = act(m, &st, "HandleFOLLOWERINFO", l, Some(*f as i64));
    }
    for f in &fs {
        st = act(m, &st, "HandleNEWEPOCH", *f, Some(l as i64));
        st = act(m, &st, "HandleACKEPOCH", l, Some(*f as i64));
    }
    for f in &fs {
        st = act(m, &st, "LeaderSyncFollower", l, Some(*f as i64));
        st = act(m, &st, "HandleSYNC", *f, Some(l as i64));
        st = act(m, &st, "HandleNEWLEADER", *f, Some(l as i64));
        st = act(m, &st, "HandleACKLD", l, Some(*f as i64));
    }
    for f in &fs {
        st = act(m, &st, "HandleCOMMITLD", *f, Some(l as i64));
    }
    st
}

#[test]
fn fle_equal_logs_highest_id_wins() {
    let m = SystemModel::new(&cfg(3));
    let st = act(&m, &m.initial(), "FleRound", 3, set(&[1, 2, 3]));
    assert_eq!(st.server(3).role, Role::Leading);
    assert_eq!(st.server(1).leader, 3);
    assert_eq!(st.server(2).leader, 3);
}

#[test]
fn fle_zxid_dominates_id() {
    let m = SystemModel::new(&cfg(3));
    let mut st = m.initial();
    with_log(&mut st, 1, &[(1, 1), (1, 2)], 1);
    with_log(&mut st, 2, &[(2, 1)], 2);
    with_log(&mut st, 3, &[(1, 1), (1, 2)], 1);
    assert_eq!(SystemModel::winner(&st, ServerSet::of(&[1, 2, 3])), 2);
}

#[test]
fn fle_runs_with_one_server_down_but_not_two() {
    let mut c = cfg(3);
    c.max_crashes = 2;
    let m = SystemModel::new(&c);
    let st = act(&m, &m.initial(), "Crash", 3, None);
    assert!(enabled(&m, &st)
        .iter()
        .any(|a| a.name == "FleRound" && a.params[0] == set(&[1, 2]).unwrap()));
    let st = act(&m, &st, "Crash", 2, None);
    assert!(!enabled(&m, &st).iter().any(|a| a.name == "FleRound"));
}

#[test]
fn followerinfo_carries_only_last_zxid() {
    let m = SystemModel::new(&cfg(3));
    let mut st = m.initial();
    with_log(&mut st, 1, &[(1, 1), (1, 2)], 1);
    with_log(&mut st, 2, &[(1, 1), (1, 2)], 1);
    let st = act(&m, &st, "FleRound", 2, set(&[1, 2, 3]));
    let st = act(&m, &st, "SendFollowerInfo", 1, None);
    assert_eq!(
        st.channel(1, 2),
        vec![SMsg::FollowerInfo {
            accepted: 1,
            last: Zxid::new(1, 2)
        }]
    );
    let st = act(&m, &st, "SendFollowerInfo", 3, None);
    assert_eq!(
        st.channel(3, 2),
        vec![SMsg::FollowerInfo {
            accepted: 0,
            last: Zxid::ZERO
        }]
    );
}

#[test]
fn crashed_follower_cannot_send_followerinfo() {
    let m = SystemModel::new(&cfg(3));
    let st = act(&m, &m.initial(), "FleRound", 3, set(&[1, 2, 3]));
    let st = act(&m, &st, "Crash", 1, None);
    assert!(!st.server(1).up);
    assert!(!enabled(&m, &st)
        .iter()
        .any(|a| a.name == "SendFollowerInfo" && a.actor == Some(1)));
}

#[test]
fn valid_follower_gets_diff() {
    let m = SystemModel::new(&cfg(3));
    let mut st = m.initial();
    with_log(&mut st, 1, &[(1, 1), (1, 2)], 1);
    with_log(&mut st, 2, &[(1, 1), (1, 2), (1, 3)], 1);
    let st = act(&m, &st, "FleRound", 2, set(&[1, 2]));
    let st = act(&m, &st, "SendFollowerInfo", 1, None);
    let st = act(&m, &st, "HandleFOLLOWERINFO", 2, Some(1));
    assert_eq!(st.server(2).role, Role::Leading);
    assert_eq!(st.channel(2, 1), vec![SMsg::NewEpoch { epoch: 2 }]);
    let st = act(&m, &st, "HandleNEWEPOCH", 1, Some(2));
    let st = act(&m, &st, "HandleACKEPOCH", 2, Some(1));
    assert_eq!(st.server(2).phase, Phase::Sync);
    let st = act(&m, &st, "LeaderSyncFollower", 2, Some(1));
    match &st.channel(2, 1)[0] {
        SMsg::Sync { decision } => {
            assert_eq!(decision.mode, SyncMode::Diff);
            let z: Vec<Zxid> = decision.payload.iter().map(|t| t.zxid).collect();
            assert_eq!(z, vec![Zxid::new(1, 3)]);
        }
        other => panic!("expected SYNC, got {other:?}"),
    }
}

#[test]
fn future_epoch_follower_makes_leader_abandon() {
    let m = SystemModel::new(&cfg(3));
    let mut st = m.initial();
    with_log(&mut st, 1, &[(3, 1)], 3);
    with_log(&mut st, 2, &[(2, 1)], 2);
    with_log(&mut st, 3, &[(2, 1)], 2);
    let st = act(&m, &st, "FleRound", 3, set(&[2, 3]));
    let st = act(&m, &st, "FleJoin", 1, Some(3));
    let st = act(&m, &st, "SendFollowerInfo", 1, None);
    let st = act(&m, &st, "HandleFOLLOWERINFO", 3, Some(1));
    for s in 1..=3 {
        assert_eq!(st.server(s).role, Role::Looking, "server {s}");
    }
    assert!(st.channels.is_empty());
}

#[test]
fn equal_logs_sync_with_empty_diff() {
    let m = SystemModel::new(&cfg(2));
    let mut st = m.initial();
    with_log(&mut st, 1, &[(1, 1)], 1);
    with_log(&mut st, 2, &[(1, 1)], 1);
    let st = establish(&m, &st, &[1, 2]);
    assert_eq!(st.server(2).phase, Phase::Broadcast);
    assert_eq!(st.server(1).history, History::from_zxids(&[(1, 1)]));
    assert_eq!(st.server(1).last_committed, Zxid::new(1, 1));
}

#[test]
fn follower_ahead_is_truncated_and_committed() {
    let m = SystemModel::new(&cfg(3));
    let mut st = m.initial();
    with_log(&mut st, 1, &[(1, 1), (1, 2), (1, 3)], 1);
    with_log(&mut st, 2, &[(1, 1), (1, 2)], 2);
    with_log(&mut st, 3, &[(1, 1), (1, 2)], 2);
    let st = establish(&m, &st, &[2, 3]);
    let st = act(&m, &st, "FleJoin", 1, Some(3));
    let st = act(&m, &st, "SendFollowerInfo", 1, None);
    let st = act(&m, &st, "HandleFOLLOWERINFO", 3, Some(1));
    let st = act(&m, &st, "HandleNEWEPOCH", 1, Some(3));
    let st = act(&m, &st, "HandleACKEPOCH", 3, Some(1));
    let st = act(&m, &st, "LeaderSyncFollower", 3, Some(1));
    let st = act(&m, &st, "HandleSYNC", 1, Some(3));
    assert_eq!(st.server(1).history, History::from_zxids(&[(1, 1), (1, 2)]));
    let st = act(&m, &st, "HandleNEWLEADER", 1, Some(3));
    let st = act(&m, &st, "HandleACKLD", 3, Some(1));
    let st = act(&m, &st, "HandleCOMMITLD", 1, Some(3));
    assert_eq!(st.server(1).phase, Phase::Broadcast);
    assert_eq!(st.server(1).last_committed, Zxid::new(1, 2));
}

#[test]
fn broadcast_commits_after_quorum_ack() {
    let m = SystemModel::new(&cfg(3));
    let st = establish(&m, &m.initial(), &[1, 2, 3]);
    let st = act(&m, &st, "LeaderPropose", 3, None);
    assert_eq!(st.server(3).last_committed, Zxid::ZERO);
    let st = act(&m, &st, "HandlePROPOSE", 1, Some(3));
    let st = act(&m, &st, "HandleACK", 3, Some(1));
    assert_eq!(st.server(3).last_committed, Zxid::new(1, 1));
    let st = act(&m, &st, "HandleCOMMIT", 1, Some(3));
    assert_eq!(st.server(1).last_committed, Zxid::new(1, 1));
}

#[test]
fn crash_leader_and_rejoin_keeps_history() {
    let m = SystemModel::new(&cfg(3));
    let st = establish(&m, &m.initial(), &[1, 2, 3]);
    let st = act(&m, &st, "LeaderPropose", 3, None);
    let st = act(&m, &st, "Crash", 3, None);
    assert_eq!(st.server(1).role, Role::Looking);
    assert_eq!(st.server(2).role, Role::Looking);
    assert!(enabled(&m, &st)
        .iter()
        .any(|a| a.name == "FleRound" && a.params[0] == set(&[1, 2]).unwrap()));
    let st = act(&m, &st, "Rejoin", 3, None);
    assert!(st.server(3).up);
    assert_eq!(st.server(3).role, Role::Looking);
    assert_eq!(st.server(3).history, History::from_zxids(&[(1, 1)]));
    assert_eq!(st.server(3).current_epoch, 1);
}

#[test]
fn partition_follower_keeps_quorum() {
    let m = SystemModel::new(&cfg(3));
    let st = establish(&m, &m.initial(), &[1, 2, 3]);
    let st = act(&m, &st, "Partition", 1, Some(3));
    assert_eq!(st.server(1).role, Role::Looking);
    assert_eq!(st.server(3).role, Role::Leading);
    assert_eq!(st.server(3).registered, ServerSet::of(&[2, 3]));
}

#[test]
fn partition_both_followers_drops_leader() {
    let mut c = cfg(3);
    c.max_partitions = 2;
    let m = SystemModel::new(&c);
    let st = establish(&m, &m.initial(), &[1, 2, 3]);
    let st = act(&m, &st, "Partition", 1, Some(3));
    let st = act(&m, &st, "Partition", 2, Some(3));
    for s in 1..=3 {
        assert_eq!(st.server(s).role, Role::Looking);
    }
}

#[test]
fn reconnect_then_rejoin_through_sync() {
    let m = SystemModel::new(&cfg(3));
    let st = establish(&m, &m.initial(), &[1, 2, 3]);
    let st = act(&m, &st, "Partition", 1, Some(3));
    assert!(!enabled(&m, &st)
        .iter()
        .any(|a| a.name == "FleJoin" && a.actor == Some(1) && a.params[0] == 3));
    let st = act(&m, &st, "Reconnect", 1, Some(3));
    let st = act(&m, &st, "FleJoin", 1, Some(3));
    let st = act(&m, &st, "SendFollowerInfo", 1, None);
    let st = act(&m, &st, "HandleFOLLOWERINFO", 3, Some(1));
    let st = act(&m, &st, "HandleNEWEPOCH", 1, Some(3));
    // Same epoch again: acknowledged without a vote.
    assert!(matches!(
        st.channel(1, 3)[0],
        SMsg::AckEpoch { vote: false, .. }
    ));
    let st = act(&m, &st, "HandleACKEPOCH", 3, Some(1));
    let st = act(&m, &st, "LeaderSyncFollower", 3, Some(1));
    let st = act(&m, &st, "HandleSYNC", 1, Some(3));
    let st = act(&m, &st, "HandleNEWLEADER", 1, Some(3));
    let st = act(&m, &st, "HandleACKLD", 3, Some(1));
    let st = act(&m, &st, "HandleCOMMITLD", 1, Some(3));
    assert_eq!(st.server(1).phase, Phase::Broadcast);
    assert_eq!(st.server(3).registered, ServerSet::of(&[1, 2, 3]));
}

#[test]
fn clean_small_config_exhausts() {
    let m = SystemModel::new(&cfg(3));
    let r = check_bfs(&m, &cfg(3)).unwrap();
    assert_eq!(r.terminated_reason, TerminatedReason::Exhausted);
    assert!(r.violations.is_empty(), "{:?}", r.violations);
}

#[test]
fn single_server_ensemble_commits_alone() {
    let m = SystemModel::new(&cfg(1));
    let st = act(&m, &m.initial(), "FleRound", 1, set(&[1]));
    assert_eq!(st.server(1).phase, Phase::Broadcast);
    let st = act(&m, &st, "LeaderPropose", 1, None);
    assert_eq!(st.server(1).last_committed, Zxid::new(1, 1));
}

#[test]
fn simulation_is_seed_deterministic() {
    let c = ExploreConfig {
        mode: Mode::Simulation,
        mutations: vec![MutationId::WeakQuorum],
        max_walks: 20_000,
        ..cfg(4)
    };
    let m = SystemModel::new(&c);
    let a = simulate(&m, &c).unwrap();
    let b = simulate(&m, &c).unwrap();
    assert!(a.has_violation());
    assert_eq!(
        a.violations[0].trace.to_text(),
        b.violations[0].trace.to_text()
    );
}

#[test]
fn sync_oracle_is_exact() {
    let (checked, failures) = sync::exhaustive_check();
    assert!(checked > 100);
    assert!(failures.is_empty(), "{failures:#?}");
}
