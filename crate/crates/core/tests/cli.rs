//! End-to-end tests of the `zabcheck` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use zabcheck::cli::report::{RunRecord, Table};
use zabcheck::harness::{self, PlantedFault};
use zabcheck::kernel::{random_walk, ExploreConfig, Model, Trace};
use zabcheck::system::SystemModel;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn zabcheck(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zabcheck"))
        .args(args)
        .env("ZABCHECK_OUT", out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files_with(dir: &Path, suffix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .collect();
    v.sort();
    v
}

fn record(path: &Path) -> RunRecord {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn clean_protocol_check_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = zabcheck(&["check", "--n-servers", "3"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("EXHAUSTED"));
    assert!(files_with(dir.path(), ".trace").is_empty());
}

#[test]
fn weak_quorum_check_writes_replayable_traces() {
    let dir = tempfile::tempdir().unwrap();
    let m = configs().join("weak-quorum-n4.toml");
    let o = zabcheck(&["check", m.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stdout(&o).contains("SingleEstablishedLeaderPerEpoch"));
    let traces = files_with(dir.path(), ".trace");
    assert!(!traces.is_empty());
    for t in traces {
        let r = zabcheck(&["replay", t.to_str().unwrap()], dir.path());
        assert_eq!(r.status.code(), Some(0), "{}", stdout(&r));
        assert!(stdout(&r).contains("first_divergence=NONE"));
    }
}

#[test]
fn malformed_manifest_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("bad.toml");
    fs::write(&m, "n_servers = 3\nmax_crashs = 1\n").unwrap();
    let o = zabcheck(&["check", m.to_str().unwrap()], dir.path());
    assert!(o.status.code().unwrap() > 2);
    assert!(stderr(&o).contains("max_crashs"), "{}", stderr(&o));

    fs::write(&m, "n_servers = \"three\"\n").unwrap();
    let o = zabcheck(&["simulate", m.to_str().unwrap()], dir.path());
    assert!(o.status.code().unwrap() > 2);
    assert!(stderr(&o).contains("n_servers"), "{}", stderr(&o));

    fs::write(&m, "n_servers = [\n").unwrap();
    let o = zabcheck(&["check", m.to_str().unwrap()], dir.path());
    assert!(o.status.code().unwrap() > 2);
}

#[test]
fn bad_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["check", "--no-such-flag"][..],
        &["check", "--mutation", "NOT_A_MUTATION"],
        &["check", "--mutation", "SYNC_SKIP_TRUNC"],
        &["replay", "x.trace", "--planted", "gremlins"],
        &["hunt", "--model", "protocol"],
    ] {
        let o = zabcheck(args, dir.path());
        assert_eq!(o.status.code(), Some(3), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn manifest_wins_over_flags_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.toml");
    fs::write(&m, "seed = 9\nmax_walks = 5\n").unwrap();
    let o = zabcheck(
        &["simulate", m.to_str().unwrap(), "--seed", "3"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("warning") && stderr(&o).contains("--seed"));
    assert!(stdout(&o).contains("seed=9"));
}

#[test]
fn simulation_seed_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "simulate",
        "--model",
        "system",
        "--seed",
        "41",
        "--max-walks",
        "200",
        "--name",
        "again",
    ];
    let first = zabcheck(&args, dir.path());
    assert_eq!(first.status.code(), Some(0));
    let out = stdout(&first);
    assert!(out.contains("seed=41") && out.contains("walks/sec="));
    let path = dir.path().join("again.sim.report.json");
    let a = record(&path);
    zabcheck(&args, dir.path());
    let b = record(&path);
    assert!(a.report.same_outcome(&b.report));
    assert_eq!(a.explore.max_trace_len, 100);
}

#[test]
fn simulation_time_limit_is_a_budget_exit() {
    let dir = tempfile::tempdir().unwrap();
    let o = zabcheck(
        &[
            "simulate",
            "--model",
            "system",
            "--max-walks",
            "1000000000",
            "--time-limit-secs",
            "1",
            "--name",
            "t",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    let r = record(&dir.path().join("t.sim.report.json"));
    // One walk is at most 100 steps, far below a second.
    assert!(r.report.wall_time_ms < 1500, "{}", r.report.wall_time_ms);
}

#[test]
fn check_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let m = configs().join("small-system-n3-crash.toml");
    let path = dir.path().join("small-system-n3-crash.bfs.report.json");
    zabcheck(&["check", m.to_str().unwrap()], dir.path());
    let a = record(&path);
    zabcheck(&["check", m.to_str().unwrap()], dir.path());
    let b = record(&path);
    assert!(a.report.same_outcome(&b.report));
}

#[test]
fn hunt_reports_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let m = configs().join("test-n3-commit-before-quorum.toml");
    let o = zabcheck(&["hunt", m.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(
        out.contains(" BFS VIOLATION") && out.contains(" simulation VIOLATION"),
        "{out}"
    );
    let bfs = files_with(dir.path(), ".bfs.1.trace");
    let sim = files_with(dir.path(), ".sim.1.trace");
    assert_eq!((bfs.len(), sim.len()), (1, 1));
    // Every trace line lists the invariants it breaks.
    for line in out.lines().filter(|l| l.starts_with("violation ")) {
        assert!(
            line.contains("LeaderLogCompleteness") || line.contains("MonotonicRead"),
            "{line}"
        );
    }
}

#[test]
fn unmutated_hunt_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let m = configs().join("small-test-n3.toml");
    let o = zabcheck(&["hunt", m.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
}

#[test]
fn corrupted_trace_is_rejected_before_replay() {
    let dir = tempfile::tempdir().unwrap();
    let m = configs().join("weak-quorum-n2.toml");
    zabcheck(&["check", m.to_str().unwrap()], dir.path());
    let t = &files_with(dir.path(), ".trace")[0];
    let text = fs::read_to_string(t).unwrap();
    let trace = Trace::parse(&text).unwrap();
    let good = format!("{}", trace.config_digest);
    let bad = format!("{}", zabcheck::kernel::Fingerprint::of_bytes(b"tampered"));
    fs::write(t, text.replacen(&good, &bad, 1)).unwrap();
    let o = zabcheck(&["replay", t.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("integrity"), "{}", stderr(&o));
    assert!(!stdout(&o).contains("conformance"));
}

#[test]
fn planted_fault_exits_one_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExploreConfig {
        n_servers: 3,
        max_transactions: 3,
        ..Default::default()
    };
    let model = SystemModel::ipa(&cfg);
    assert_eq!(model.kind(), "test");
    let fault = PlantedFault::BrokenTruncate;
    let t = (0..500)
        .map(|w| random_walk(&model, &cfg, w).unwrap())
        .find(|t| !harness::replay(t, &[fault]).unwrap().conforms())
        .expect("some walk exercises a truncation");
    let path = dir.path().join("walk.trace");
    t.write_file(&path).unwrap();
    let clean = zabcheck(&["replay", path.to_str().unwrap()], dir.path());
    assert_eq!(clean.status.code(), Some(0));
    let o = zabcheck(
        &["replay", path.to_str().unwrap(), "--planted", fault.name()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stdout(&o).contains("field=servers[") && stdout(&o).contains("].history"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn report_table_matches_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let m = configs().join("small-protocol-n2.toml");
    zabcheck(&["check", m.to_str().unwrap()], dir.path());
    zabcheck(&["simulate", m.to_str().unwrap()], dir.path());
    let o = zabcheck(&["report"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let sidecar: Table =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(sidecar.render(), stdout(&o));
    assert_eq!(
        sidecar.columns,
        ["config", "mode", "states explored", "diameter", "time"]
    );
    assert_eq!(sidecar.rows.len(), 2);
    let bfs = sidecar.rows.iter().find(|r| r[1] == "BFS").unwrap();
    assert!(bfs[3].parse::<usize>().is_ok());
    let sim = sidecar.rows.iter().find(|r| r[1] == "simulation").unwrap();
    assert_eq!(sim[3], "-");
}

#[test]
fn listings_and_template() {
    let dir = tempfile::tempdir().unwrap();
    let o = zabcheck(&["list-mutations"], dir.path());
    assert_eq!(stdout(&o).lines().count(), 5);
    let o = zabcheck(&["list-invariants", "--model", "system"], dir.path());
    assert!(stdout(&o).contains("MonotonicRead"));
    let o = zabcheck(&["manifest"], dir.path());
    let m = dir.path().join("template.toml");
    fs::write(&m, stdout(&o)).unwrap();
    let check = zabcheck(&["check", m.to_str().unwrap(), "--name", "tpl"], dir.path());
    assert_eq!(check.status.code(), Some(0), "{}", stderr(&check));
}
