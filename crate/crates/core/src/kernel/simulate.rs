use std::collections::HashSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ExploreConfig, Mode};
use super::trace::{Trace, TraceStep};
use super::{CheckReport, InvariantFilter, KernelError, Model, TerminatedReason, Violation};

/// Seed of walk `walk` under run seed `seed` (SplitMix64 step).
pub(crate) fn walk_seed(seed: u64, walk: u64) -> u64 {
    let mut z = seed ^ walk.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded random walks. Each walk has its own RNG stream derived from
/// `(cfg.seed, walk index)`, so a walk can be reproduced in isolation.
pub fn simulate<M: Model>(model: &M, cfg: &ExploreConfig) -> Result<CheckReport, KernelError> {
    cfg.validate()?;
    if cfg.mode != Mode::Simulation {
        return Err(KernelError::WrongMode);
    }
    let start = Instant::now();
    let inits = model.init_states();
    if inits.is_empty() {
        return Err(KernelError::NoInitialStates);
    }
    let filter = InvariantFilter::new(cfg);
    let mut seen: HashSet<u64> = HashSet::new();
    let mut states_explored = 0u64;
    let mut transitions = 0u64;
    let mut violations: Vec<Violation> = Vec::new();
    let mut walks = 0u64;
    let mut reason = TerminatedReason::Budget;
    let mut enabled = Vec::new();
    let mut buf = Vec::new();

    'walks: while walks < cfg.max_walks {
        if cfg.time_limit_secs > 0 && start.elapsed().as_secs() >= cfg.time_limit_secs {
            reason = TerminatedReason::TimeLimit;
            break;
        }
        if cfg.state_limit > 0 && states_explored >= cfg.state_limit {
            reason = TerminatedReason::StateLimit;
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(walk_seed(cfg.seed, walks));
        walks += 1;
        let mut state = inits[rng.gen_range(0..inits.len())].clone();
        let initial_digest = model.fingerprint(&state);
        let mut steps: Vec<TraceStep> = Vec::new();
        let mut violated: Vec<&'static str> = Vec::new();

        states_explored += 1;
        seen.insert(initial_digest.0);
        filter.state(model, &state, &mut buf);
        violated.extend(buf.iter().copied());

        while violated.is_empty()
            && steps.len() < cfg.max_trace_len
            && model.within_constraints(&state)
        {
            enabled.clear();
            model.enabled(&state, &mut enabled);
            if enabled.is_empty() {
                break;
            }
            let action = enabled[rng.gen_range(0..enabled.len())].clone();
            let next = model.apply(&state, &action);
            transitions += 1;
            filter.step(model, &state, &next, &mut buf);
            violated.extend(buf.iter().copied());
            let digest = model.fingerprint(&next);
            states_explored += 1;
            seen.insert(digest.0);
            filter.state(model, &next, &mut buf);
            for inv in buf.iter().copied() {
                if !violated.contains(&inv) {
                    violated.push(inv);
                }
            }
            steps.push(TraceStep { action, digest });
            state = next;
        }

        if !violated.is_empty() {
            let trace = Trace {
                model: model.kind().to_string(),
                config: cfg.clone(),
                config_digest: cfg.digest(),
                initial_digest,
                steps,
            };
            for inv in violated {
                violations.push(Violation {
                    invariant: inv.to_string(),
                    depth: trace.len(),
                    trace: trace.clone(),
                });
            }
            reason = TerminatedReason::Violation;
            break 'walks;
        }
    }

    Ok(CheckReport {
        model: model.kind().to_string(),
        mode: Mode::Simulation,
        states_explored,
        distinct_states: seen.len() as u64,
        transitions,
        diameter: None,
        violations,
        wall_time_ms: start.elapsed().as_millis() as u64,
        terminated_reason: reason,
        seed: cfg.seed,
        walks: Some(walks),
    })
}

/// Walk `walk` of run seed `cfg.seed`, ignoring invariants: up to
/// `cfg.max_trace_len` uniformly chosen steps, stopping early on deadlock or
/// when the state leaves the constraints.
pub fn random_walk<M: Model>(
    model: &M,
    cfg: &ExploreConfig,
    walk: u64,
) -> Result<Trace, KernelError> {
    cfg.validate()?;
    let inits = model.init_states();
    if inits.is_empty() {
        return Err(KernelError::NoInitialStates);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(walk_seed(cfg.seed, walk));
    let mut state = inits[rng.gen_range(0..inits.len())].clone();
    let initial_digest = model.fingerprint(&state);
    let mut steps = Vec::new();
    let mut enabled = Vec::new();
    while steps.len() < cfg.max_trace_len && model.within_constraints(&state) {
        enabled.clear();
        model.enabled(&state, &mut enabled);
        if enabled.is_empty() {
            break;
        }
        let action = enabled[rng.gen_range(0..enabled.len())].clone();
        state = model.apply(&state, &action);
        steps.push(TraceStep {
            action,
            digest: model.fingerprint(&state),
        });
    }
    Ok(Trace {
        model: model.kind().to_string(),
        config: cfg.clone(),
        config_digest: cfg.digest(),
        initial_digest,
        steps,
    })
}
