//! Acceptance run: one PASS/FAIL line per criterion, then a single assertion.
//! Settings come from the manifests in `configs/`.

use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use zabcheck::cli::{explore, RunManifest};
use zabcheck::harness::{self, PlantedFault};
use zabcheck::kernel::toy::{CounterGuard, CounterModel};
use zabcheck::kernel::{
    check_bfs, random_walk, CheckReport, ExploreConfig, Mode, StoreMode, TerminatedReason, Trace,
};
use zabcheck::mutation::MutationId;
use zabcheck::protocol::invariants::{LEADER_LOG_COMPLETENESS, MONOTONIC_READ, SINGLE_LEADER};
use zabcheck::system::{sync, SystemModel};

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn manifest(name: &str) -> RunManifest {
    let path = configs_dir().join(format!("{name}.toml"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    RunManifest::from_toml(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn bfs(m: &RunManifest) -> CheckReport {
    explore(m.model, &m.explore.clone().with_mode(Mode::Bfs)).expect("bfs runs")
}

fn sim(m: &RunManifest) -> CheckReport {
    explore(m.model, &m.explore.clone().with_mode(Mode::Simulation)).expect("simulation runs")
}

fn secs(r: &CheckReport) -> f64 {
    r.wall_time_ms as f64 / 1000.0
}

/// Counterexample traces gathered for the conformance round-trip.
#[derive(Default)]
struct Corpus(Vec<(String, Trace)>);

impl Corpus {
    fn take(&mut self, tag: &str, r: &CheckReport) {
        for v in &r.violations {
            self.0
                .push((format!("{tag}/{}", v.invariant), v.trace.clone()));
        }
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn criterion_1(corpus: &mut Corpus) -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for n in [2, 4] {
        let r = bfs(&manifest(&format!("weak-quorum-n{n}")));
        let hit = r.violated(SINGLE_LEADER) && r.wall_time() <= Duration::from_secs(300);
        pass &= hit;
        let depth = r.first(SINGLE_LEADER).map_or(0, |v| v.depth);
        notes.push(format!(
            "n={n} single leader broken at depth {depth} in {:.1}s",
            secs(&r)
        ));
        corpus.take(&format!("c1-n{n}"), &r);
    }
    let r = bfs(&manifest("weak-quorum-n3"));
    pass &= r.terminated_reason == TerminatedReason::Exhausted && !r.has_violation();
    notes.push(format!(
        "n=3 {:?} {} states {:.1}s",
        r.terminated_reason,
        r.distinct_states,
        secs(&r)
    ));
    let r = bfs(&manifest("weak-quorum-n5"));
    pass &= !r.has_violation();
    let n5 = match r.terminated_reason {
        TerminatedReason::Exhausted => "exhausted".to_string(),
        other => format!(
            "budget-limited ({other:?} at {} states, no violation)",
            r.distinct_states
        ),
    };
    notes.push(format!("n=5 {n5}"));
    outcome(pass, notes.join("; "))
}

fn criterion_2() -> Outcome {
    let m = manifest("protocol-n3");
    let a = bfs(&m);
    let b = bfs(&m);
    let clean = |r: &CheckReport| {
        r.terminated_reason == TerminatedReason::Exhausted
            && !r.has_violation()
            && r.wall_time() <= Duration::from_secs(900)
    };
    // An empty invariant list means every protocol invariant is checked.
    let checks_all = m.explore.invariants.is_empty();
    let same = a.states_explored == b.states_explored
        && a.distinct_states == b.distinct_states
        && a.diameter == b.diameter;
    outcome(
        checks_all && clean(&a) && clean(&b) && same,
        format!(
            "{} states, diameter {:?}, runs identical: {same}, {:.1}s + {:.1}s",
            a.distinct_states,
            a.diameter,
            secs(&a),
            secs(&b)
        ),
    )
}

fn criterion_3() -> Outcome {
    let m = manifest("system-n3");
    let r = bfs(&m);
    let checks_all = m.explore.invariants.is_empty();
    let pass = checks_all
        && r.terminated_reason == TerminatedReason::Exhausted
        && !r.has_violation()
        && r.wall_time() <= Duration::from_secs(1800);
    outcome(
        pass,
        format!(
            "tx={} {:?}, {} states, diameter {:?}, {:.1}s",
            m.explore.max_transactions,
            r.terminated_reason,
            r.distinct_states,
            r.diameter,
            secs(&r)
        ),
    )
}

/// The manifest each mutation is exercised with.
fn mutation_manifest(m: MutationId) -> RunManifest {
    match m {
        MutationId::WeakQuorum => {
            let mut run = manifest("weak-quorum-n4");
            run.explore.max_walks = 5_000_000;
            run
        }
        other => manifest(&format!(
            "test-n3-{}",
            other.name().to_ascii_lowercase().replace('_', "-")
        )),
    }
}

fn criterion_4(corpus: &mut Corpus, bfs_runs: &mut Vec<(MutationId, CheckReport)>) -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for m in MutationId::ALL {
        let run = mutation_manifest(m);
        let r = bfs(&run);
        let names: Vec<&str> = r.violations.iter().map(|v| v.invariant.as_str()).collect();
        pass &= r.has_violation();
        notes.push(format!("{}: {}", m.name(), names.join(",")));
        corpus.take(&format!("c4-{}", m.name()), &r);
        bfs_runs.push((m, r));
    }
    let base = mutation_manifest(MutationId::CommitBeforeQuorum);
    let only = |inv: &str| {
        let mut run = base.clone();
        run.explore.invariants = vec![inv.to_string()];
        bfs(&run)
    };
    let llc = only(LEADER_LOG_COMPLETENESS);
    let mr = only(MONOTONIC_READ);
    corpus.take("c4-llc", &llc);
    corpus.take("c4-mr", &mr);
    match (llc.first(LEADER_LOG_COMPLETENESS), mr.first(MONOTONIC_READ)) {
        (Some(a), Some(b)) => {
            pass &= a.depth <= b.depth;
            notes.push(format!(
                "COMMIT_BEFORE_QUORUM LeaderLogCompleteness depth {} <= MonotonicRead depth {}",
                a.depth, b.depth
            ));
        }
        _ => {
            pass = false;
            notes.push(
                "COMMIT_BEFORE_QUORUM did not violate both LeaderLogCompleteness and MonotonicRead"
                    .into(),
            );
        }
    }
    outcome(pass, notes.join("; "))
}

fn criterion_5(corpus: &mut Corpus, bfs_runs: &[(MutationId, CheckReport)]) -> Outcome {
    let mut pass = true;
    let mut faster = Vec::new();
    let mut notes = Vec::new();
    for (m, b) in bfs_runs {
        let run = mutation_manifest(*m);
        assert_eq!(run.explore.max_trace_len, 100);
        let s = sim(&run);
        corpus.take(&format!("c5-{}", m.name()), &s);
        let (Some(bv), Some(sv)) = (b.violations.first(), s.violations.first()) else {
            pass = false;
            notes.push(format!(
                "{}: no violation (bfs {:?}, sim {:?})",
                m.name(),
                b.terminated_reason,
                s.terminated_reason
            ));
            continue;
        };
        pass &= bv.trace.len() <= sv.trace.len();
        if s.wall_time_ms < b.wall_time_ms {
            faster.push(m.name());
        }
        notes.push(format!(
            "{}: bfs len {} {}ms, sim len {} {}ms",
            m.name(),
            bv.trace.len(),
            b.wall_time_ms,
            sv.trace.len(),
            s.wall_time_ms
        ));
    }
    pass &= !faster.is_empty();
    notes.push(format!("simulation faster on {}", faster.join(",")));
    outcome(pass, notes.join("; "))
}

/// First seeded walk whose replay diverges under `fault`.
fn planted_catch(fault: PlantedFault) -> Result<String, String> {
    let cfg = ExploreConfig {
        n_servers: 3,
        max_transactions: 3,
        max_crashes: 1,
        max_partitions: 1,
        ..Default::default()
    };
    let model = SystemModel::ipa(&cfg);
    for w in 0..500 {
        let t = random_walk(&model, &cfg, w).map_err(|e| e.to_string())?;
        let clean = harness::replay(&t, &[]).map_err(|e| e.to_string())?;
        if !clean.conforms() {
            return Err(format!("walk {w} diverges without a fault"));
        }
        let r = harness::replay(&t, &[fault]).map_err(|e| e.to_string())?;
        if let Some(d) = r.divergence {
            let path = &d.diffs[0].path;
            return if path.ends_with(&format!(".{}", fault.field())) {
                Ok(format!("{} at {path} step {}", fault.name(), d.step))
            } else {
                Err(format!("{} surfaced at {path}", fault.name()))
            };
        }
    }
    Err(format!("{} never surfaced", fault.name()))
}

fn criterion_6(corpus: &Corpus) -> Outcome {
    let mut failures = Vec::new();
    for (tag, t) in &corpus.0 {
        match harness::replay(t, &[]) {
            Ok(r) if r.conforms() => {}
            Ok(r) => failures.push(format!(
                "{tag}: {}",
                r.to_text().lines().nth(1).unwrap_or("")
            )),
            Err(e) => failures.push(format!("{tag}: {e}")),
        }
    }
    let run = manifest("system-n3");
    let cfg = ExploreConfig {
        mode: Mode::Simulation,
        seed: 2024,
        ..run.explore.clone()
    };
    let model = SystemModel::new(&cfg);
    let mut walk_steps = 0;
    for w in 0..200 {
        let t = random_walk(&model, &cfg, w).expect("walk");
        walk_steps += t.len();
        match harness::replay(&t, &[]) {
            Ok(r) if r.conforms() => {}
            Ok(r) => failures.push(format!(
                "walk {w}: {}",
                r.to_text().lines().nth(1).unwrap_or("")
            )),
            Err(e) => failures.push(format!("walk {w}: {e}")),
        }
    }
    let mut caught = Vec::new();
    for f in PlantedFault::ALL {
        match planted_catch(f) {
            Ok(s) => caught.push(s),
            Err(e) => failures.push(e),
        }
    }
    let detail = format!(
        "{} counterexamples + 200 walks ({walk_steps} steps) conform; planted: {}{}",
        corpus.0.len(),
        caught.join(", "),
        if failures.is_empty() {
            String::new()
        } else {
            format!("; failures: {}", failures.join(" | "))
        }
    );
    outcome(failures.is_empty() && PlantedFault::ALL.len() >= 3, detail)
}

fn criterion_7() -> Outcome {
    let toy = CounterModel::new(Some(3), CounterGuard::NotEqual(99));
    let r = check_bfs(&toy, &ExploreConfig::default()).expect("toy");
    let mut pass = r.states_explored == 3 && r.diameter == Some(2);
    let mut notes = vec![format!(
        "toy {} states diameter {:?}",
        r.states_explored, r.diameter
    )];
    let mut compared = 0;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(configs_dir())
        .expect("configs")
        .map(|e| e.expect("entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    for p in paths {
        let name = p.file_stem().unwrap().to_string_lossy().to_string();
        let run = manifest(&name);
        let cfg = |store| ExploreConfig {
            store,
            state_limit: 100_001,
            time_limit_secs: 0,
            ..run.explore.clone().with_mode(Mode::Bfs)
        };
        let fp = explore(run.model, &cfg(StoreMode::FingerprintSet)).expect("fingerprint run");
        if fp.terminated_reason == TerminatedReason::StateLimit {
            continue;
        }
        let ex = explore(run.model, &cfg(StoreMode::ExactSet)).expect("exact run");
        compared += 1;
        if ex.distinct_states != fp.distinct_states {
            pass = false;
            notes.push(format!(
                "{name}: exact {} vs fingerprint {}",
                ex.distinct_states, fp.distinct_states
            ));
        }
    }
    pass &= compared > 0;
    notes.push(format!(
        "exact_set = fingerprint_set on {compared} bundled configs <= 1e5 states"
    ));
    outcome(pass, notes.join("; "))
}

fn criterion_8() -> Outcome {
    let (checked, failures) = sync::exhaustive_check();
    let detail = match failures.first() {
        None => format!("{checked} (leader history, follower last) cases, 0 failures"),
        Some(f) => format!("{checked} cases, {} failures, first: {f}", failures.len()),
    };
    outcome(checked > 0 && failures.is_empty(), detail)
}

#[test]
fn acceptance() {
    let mut corpus = Corpus::default();
    let mut bfs_runs = Vec::new();
    let mut results = Vec::new();
    // Written past the test harness capture so the lines always show.
    let mut report = |n: usize, o: Outcome| {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "criterion {n}: {verdict} ({})", o.detail);
        let _ = out.flush();
        results.push((n, o.pass));
    };
    report(1, criterion_1(&mut corpus));
    report(2, criterion_2());
    report(3, criterion_3());
    report(4, criterion_4(&mut corpus, &mut bfs_runs));
    report(5, criterion_5(&mut corpus, &bfs_runs));
    report(6, criterion_6(&corpus));
    report(7, criterion_7());
    report(8, criterion_8());
    let failed: Vec<usize> = results
        .iter()
        .filter(|(_, p)| !p)
        .map(|(n, _)| *n)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
