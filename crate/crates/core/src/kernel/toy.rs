//! A one-variable counter used to test the explorer itself.

use super::fingerprint::Canon;
use super::{ActionInstance, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterGuard {
    /// counter != v
    NotEqual(u64),
    /// counter < v
    Below(u64),
}

#[derive(Debug, Clone)]
pub struct CounterModel {
    /// Wrap around at this value; `None` counts forever.
    pub modulus: Option<u64>,
    pub guard: CounterGuard,
}

impl CounterModel {
    pub fn new(modulus: Option<u64>, guard: CounterGuard) -> Self {
        CounterModel { modulus, guard }
    }
}

pub const COUNTER_INVARIANT: &str = "CounterGuard";

impl Model for CounterModel {
    type State = u64;

    fn kind(&self) -> &'static str {
        "toy"
    }

    fn init_states(&self) -> Vec<u64> {
        vec![0]
    }

    fn enabled(&self, _state: &u64, out: &mut Vec<ActionInstance>) {
        out.push(ActionInstance::new("Increment", None, Vec::new()));
    }

    fn apply(&self, state: &u64, _action: &ActionInstance) -> u64 {
        match self.modulus {
            Some(m) => (state + 1) % m,
            None => state + 1,
        }
    }

    fn invariants(&self) -> Vec<&'static str> {
        vec![COUNTER_INVARIANT]
    }

    fn check_state(&self, state: &u64, out: &mut Vec<&'static str>) {
        let ok = match self.guard {
            CounterGuard::NotEqual(v) => *state != v,
            CounterGuard::Below(v) => *state < v,
        };
        if !ok {
            out.push(COUNTER_INVARIANT);
        }
    }

    fn encode(&self, state: &u64, out: &mut Canon) {
        out.u64(*state);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{
        check_bfs, reconstruct_trace, replay_trace, simulate, ExploreConfig, Mode, StoreMode,
        TerminatedReason, Trace,
    };

    fn bfs_cfg() -> ExploreConfig {
        ExploreConfig::default()
    }

    fn sim_cfg(len: usize) -> ExploreConfig {
        ExploreConfig {
            mode: Mode::Simulation,
            max_trace_len: len,
            max_walks: 3,
            ..Default::default()
        }
    }

    #[test]
    fn mod3_has_three_states_and_diameter_two() {
        let m = CounterModel::new(Some(3), CounterGuard::NotEqual(99));
        for store in [StoreMode::ExactSet, StoreMode::FingerprintSet] {
            let r = check_bfs(&m, &ExploreConfig { store, ..bfs_cfg() }).unwrap();
            assert_eq!(r.states_explored, 3);
            assert_eq!(r.diameter, Some(2));
            assert!(r.violations.is_empty());
            assert_eq!(r.terminated_reason, TerminatedReason::Exhausted);
        }
    }

    #[test]
    fn below_two_fails_at_depth_two() {
        let m = CounterModel::new(Some(3), CounterGuard::Below(2));
        let r = check_bfs(&m, &bfs_cfg()).unwrap();
        let v = r.first(COUNTER_INVARIANT).unwrap();
        assert_eq!(v.depth, 2);
        assert_eq!(v.trace.len(), 2);
        assert!(v.trace.actions().all(|a| a.name == "Increment"));
        let states = replay_trace(&m, &v.trace).unwrap();
        assert_eq!(states, vec![0, 1, 2]);
    }

    #[test]
    fn violation_at_init_gives_empty_trace() {
        let m = CounterModel::new(Some(3), CounterGuard::NotEqual(0));
        let r = check_bfs(&m, &bfs_cfg()).unwrap();
        assert_eq!(r.violations[0].trace.len(), 0);
        assert_eq!(r.violations[0].depth, 0);
    }

    #[test]
    fn simulation_walks_exactly_max_len() {
        let m = CounterModel::new(None, CounterGuard::NotEqual(99));
        for seed in [0, 7, 12345] {
            let r = simulate(&m, &ExploreConfig { seed, ..sim_cfg(5) }).unwrap();
            assert!(r.violations.is_empty());
            assert_eq!(r.transitions, 5 * 3);
            assert_eq!(r.terminated_reason, TerminatedReason::Budget);
        }
    }

    #[test]
    fn simulation_finds_below_three_at_length_three() {
        let m = CounterModel::new(None, CounterGuard::Below(3));
        let r = simulate(&m, &sim_cfg(100)).unwrap();
        assert_eq!(r.violations[0].trace.len(), 3);
        replay_trace(&m, &r.violations[0].trace).unwrap();
    }

    #[test]
    fn trace_text_round_trips_and_detects_tampering() {
        let m = CounterModel::new(Some(3), CounterGuard::Below(2));
        let r = check_bfs(&m, &bfs_cfg()).unwrap();
        let t = &r.violations[0].trace;
        let text = t.to_text();
        let back = Trace::parse(&text).unwrap();
        assert_eq!(&back, t);
        let tampered = text.replacen("\t-\t-\t", "\t1\t-\t", 1);
        let bad = Trace::parse(&tampered).unwrap();
        assert!(replay_trace(&m, &bad).is_err());
        let wrong_cfg = text.replace("\"seed\":0", "\"seed\":1");
        assert!(Trace::parse(&wrong_cfg).is_err());
    }

    #[test]
    fn reconstruct_from_root() {
        let m = CounterModel::new(Some(3), CounterGuard::NotEqual(99));
        let mut map = crate::kernel::trace::PredecessorMap::default();
        map.nodes.push(crate::kernel::trace::Node {
            parent: crate::kernel::trace::NO_PARENT,
            action: 0,
            fp: m.fingerprint(&0).0,
        });
        let t = reconstruct_trace(&m, &bfs_cfg(), &map, 0, Some(0)).unwrap();
        assert_eq!(t.len(), 1);
        map.nodes[0].fp ^= 1;
        assert!(reconstruct_trace(&m, &bfs_cfg(), &map, 0, None).is_err());
    }

    #[test]
    fn wrong_mode_is_rejected() {
        let m = CounterModel::new(Some(3), CounterGuard::NotEqual(99));
        assert!(simulate(&m, &bfs_cfg()).is_err());
        assert!(check_bfs(&m, &sim_cfg(5)).is_err());
    }
}
