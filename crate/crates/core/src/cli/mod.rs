//! Command-line front end.
//!
//! Exit codes: 0 clean, 1 violation or divergence, 2 budget exhausted,
//! 3 usage or manifest error, 4 unreadable or inconsistent input.

pub mod manifest;
pub mod report;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use toml::{Table, Value};

use crate::harness::{self, PlantedFault};
use crate::kernel::{
    check_bfs, simulate, CheckReport, ExploreConfig, KernelError, Mode, Model, TerminatedReason,
};
use crate::mutation::MutationId;
use crate::protocol::invariants::describe;
use crate::protocol::ProtocolModel;
use crate::system::SystemModel;
use crate::test_model;

pub use manifest::{ModelKind, RunManifest};
pub use report::{RunRecord, Table as ResultTable};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_BUDGET: i32 = 2;
pub const EXIT_USAGE: i32 = 3;
pub const EXIT_INPUT: i32 = 4;

/// Output directory when neither manifest, flag nor environment names one.
pub const DEFAULT_OUT: &str = "zabcheck-out";

#[derive(Debug, Parser)]
#[command(
    name = "zabcheck",
    version,
    about = "Model checking and conformance replay for Zab"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exhaustive breadth-first check.
    Check(RunArgs),
    /// Seeded random walks.
    Simulate(RunArgs),
    /// BFS and simulation of the (mutated) test model, side by side.
    Hunt(RunArgs),
    /// Replay a trace file on the node runtime and compare every step.
    Replay {
        trace: PathBuf,
        /// Build the nodes with a planted discrepancy (repeatable).
        #[arg(long = "planted", value_name = "FAULT")]
        planted: Vec<String>,
    },
    /// Tabulate every run record in a directory.
    Report {
        dir: Option<PathBuf>,
        #[arg(long, env = "ZABCHECK_OUT")]
        out_dir: Option<PathBuf>,
    },
    ListMutations,
    ListInvariants {
        #[arg(long, value_enum)]
        model: Option<ModelKind>,
    },
    /// Print a manifest listing every key with its default.
    Manifest,
}

/// Flags mirror manifest keys; a key set in the manifest wins.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// TOML run manifest.
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, env = "ZABCHECK_OUT")]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub n_servers: Option<u8>,
    #[arg(long)]
    pub max_transactions: Option<u8>,
    #[arg(long)]
    pub max_timeouts: Option<u8>,
    #[arg(long)]
    pub max_restarts: Option<u8>,
    #[arg(long)]
    pub max_crashes: Option<u8>,
    #[arg(long)]
    pub max_partitions: Option<u8>,
    #[arg(long)]
    pub max_trace_len: Option<usize>,
    #[arg(long)]
    pub max_walks: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub time_limit_secs: Option<u64>,
    #[arg(long)]
    pub state_limit: Option<u64>,
    /// MAJORITY or WEAK_HALF.
    #[arg(long)]
    pub quorum_rule: Option<String>,
    /// Mutation name (repeatable).
    #[arg(long = "mutation", value_name = "NAME")]
    pub mutations: Vec<String>,
    /// fingerprint_set or exact_set.
    #[arg(long)]
    pub store: Option<String>,
    #[arg(long)]
    pub fingerprint_bits: Option<u8>,
    #[arg(long)]
    pub collect_all: bool,
    /// Invariant name to check (repeatable).
    #[arg(long = "invariant", value_name = "NAME")]
    pub invariants: Vec<String>,
    #[arg(long)]
    pub force: bool,
    /// EPOCH,COUNTER
    #[arg(long, value_name = "EPOCH,COUNTER")]
    pub snapshot_boundary: Option<String>,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

fn usage(msg: impl ToString) -> Failure {
    Failure {
        code: EXIT_USAGE,
        msg: msg.to_string(),
    }
}

fn input(msg: impl ToString) -> Failure {
    Failure {
        code: EXIT_INPUT,
        msg: msg.to_string(),
    }
}

fn int(v: impl Into<i64>) -> Value {
    Value::Integer(v.into())
}

fn uint(v: u64) -> Result<Value, Failure> {
    i64::try_from(v)
        .map(Value::Integer)
        .map_err(|_| usage(format!("{v} is too large")))
}

impl RunArgs {
    /// Flags as manifest keys.
    fn to_table(&self) -> Result<Table, Failure> {
        let mut t = Table::new();
        let mut put = |k: &str, v: Value| {
            t.insert(k.to_string(), v);
        };
        if let Some(m) = self.model {
            put("model", Value::String(m.name().into()));
        }
        if let Some(n) = &self.name {
            put("name", Value::String(n.clone()));
        }
        if let Some(d) = &self.out_dir {
            put("out_dir", Value::String(d.to_string_lossy().into()));
        }
        for (k, v) in [
            ("n_servers", self.n_servers),
            ("max_transactions", self.max_transactions),
            ("max_timeouts", self.max_timeouts),
            ("max_restarts", self.max_restarts),
            ("max_crashes", self.max_crashes),
            ("max_partitions", self.max_partitions),
            ("fingerprint_bits", self.fingerprint_bits),
        ] {
            if let Some(v) = v {
                put(k, int(v));
            }
        }
        for (k, v) in [
            ("max_trace_len", self.max_trace_len.map(|v| v as u64)),
            ("max_walks", self.max_walks),
            ("seed", self.seed),
            ("time_limit_secs", self.time_limit_secs),
            ("state_limit", self.state_limit),
        ] {
            if let Some(v) = v {
                put(k, uint(v)?);
            }
        }
        if let Some(q) = &self.quorum_rule {
            put(
                "quorum_rule",
                Value::String(q.to_ascii_uppercase().replace('-', "_")),
            );
        }
        if let Some(s) = &self.store {
            put(
                "store",
                Value::String(s.to_ascii_lowercase().replace('-', "_")),
            );
        }
        if !self.mutations.is_empty() {
            let ids = self
                .mutations
                .iter()
                .map(|m| {
                    m.parse::<MutationId>()
                        .map(|id| Value::String(id.name().into()))
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(usage)?;
            put("mutations", Value::Array(ids));
        }
        if !self.invariants.is_empty() {
            let names = self
                .invariants
                .iter()
                .map(|s| Value::String(s.clone()))
                .collect();
            put("invariants", Value::Array(names));
        }
        if self.collect_all {
            put("collect_all", Value::Boolean(true));
        }
        if self.force {
            put("force", Value::Boolean(true));
        }
        if let Some(b) = &self.snapshot_boundary {
            let parts: Vec<&str> = b.split(',').map(str::trim).collect();
            let nums: Result<Vec<u32>, _> = parts.iter().map(|p| p.parse::<u32>()).collect();
            match nums.as_deref() {
                Ok([e, c]) => put("snapshot_boundary", Value::Array(vec![int(*e), int(*c)])),
                _ => {
                    return Err(usage(format!(
                        "--snapshot-boundary expects EPOCH,COUNTER, got `{b}`"
                    )))
                }
            }
        }
        Ok(t)
    }
}

fn flag_name(key: &str) -> String {
    match key {
        "mutations" => "--mutation".into(),
        "invariants" => "--invariant".into(),
        k => format!("--{}", k.replace('_', "-")),
    }
}

/// Merges flags and manifest into one run description.
fn resolve(args: &RunArgs, mode: Mode, model: ModelKind) -> Result<RunManifest, Failure> {
    let mut merged = args.to_table()?;
    if let Some(path) = &args.manifest {
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read manifest {}: {e}", path.display())))?;
        let file = RunManifest::parse(&text).map_err(usage)?;
        for k in manifest::conflicts(&merged, &file) {
            eprintln!(
                "warning: manifest sets {k} = {}, overriding {}",
                file[&k],
                flag_name(&k)
            );
        }
        merged.extend(file);
    }
    let wanted = Value::String(
        match mode {
            Mode::Bfs => "BFS",
            Mode::Simulation => "SIMULATION",
        }
        .into(),
    );
    if let Some(m) = merged.get("mode") {
        if *m != wanted {
            eprintln!("warning: mode = {m} ignored, this subcommand runs {wanted}");
        }
    }
    merged.insert("mode".into(), wanted);
    merged
        .entry("model")
        .or_insert_with(|| Value::String(model.name().into()));
    let run = RunManifest::from_table(merged).map_err(usage)?;
    if run.model == ModelKind::Protocol {
        if let Some(m) = run
            .explore
            .mutations
            .iter()
            .find(|m| m.needs_system_model())
        {
            return Err(usage(format!(
                "manifest key `mutations`: {m} needs the system or test model"
            )));
        }
    }
    Ok(run)
}

fn out_dir(run: &RunManifest) -> PathBuf {
    run.out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Runs `cfg` against the selected model, BFS or simulation per `cfg.mode`.
pub fn explore(model: ModelKind, cfg: &ExploreConfig) -> Result<CheckReport, KernelError> {
    fn go<M: Model>(m: &M, cfg: &ExploreConfig) -> Result<CheckReport, KernelError> {
        match cfg.mode {
            Mode::Bfs => check_bfs(m, cfg),
            Mode::Simulation => simulate(m, cfg),
        }
    }
    match model {
        ModelKind::Protocol => go(&ProtocolModel::new(cfg), cfg),
        ModelKind::System => go(&SystemModel::new(cfg), cfg),
        ModelKind::Test => go(&SystemModel::ipa(cfg), cfg),
    }
}

fn mode_tag(mode: Mode) -> &'static str {
    match mode {
        Mode::Bfs => "bfs",
        Mode::Simulation => "sim",
    }
}

/// Writes traces and the run record; prints the outcome.
fn save(run: &RunManifest, report: CheckReport) -> Result<RunRecord, Failure> {
    let dir = out_dir(run);
    fs::create_dir_all(&dir).map_err(|e| input(format!("cannot create {}: {e}", dir.display())))?;
    let label = format!("{}.{}", run.label(), mode_tag(report.mode));
    let mut traces = Vec::new();
    let mut written: Vec<(crate::kernel::Fingerprint, usize, PathBuf)> = Vec::new();
    for v in &report.violations {
        let key = (v.trace.final_digest(), v.trace.len());
        let path = match written.iter().find(|(d, l, _)| (*d, *l) == key) {
            Some((_, _, p)) => p.clone(),
            None => {
                let p = dir.join(format!("{label}.{}.trace", written.len() + 1));
                v.trace
                    .write_file(&p)
                    .map_err(|e| input(format!("cannot write {}: {e}", p.display())))?;
                written.push((key.0, key.1, p.clone()));
                p
            }
        };
        traces.push(path);
    }
    let record = RunRecord {
        label,
        config: run.summary(),
        explore: run.explore.clone(),
        report,
        traces,
    };
    let path = record
        .write(&dir)
        .map_err(|e| input(format!("cannot write report: {e}")))?;
    print_record(&record);
    println!("report {}", path.display());
    Ok(record)
}

fn reason(r: TerminatedReason) -> &'static str {
    match r {
        TerminatedReason::Exhausted => "EXHAUSTED",
        TerminatedReason::Violation => "VIOLATION",
        TerminatedReason::TimeLimit => "TIME_LIMIT",
        TerminatedReason::StateLimit => "STATE_LIMIT",
        TerminatedReason::Budget => "WALK_BUDGET",
    }
}

fn print_record(rec: &RunRecord) {
    let r = &rec.report;
    let secs = r.wall_time_ms as f64 / 1000.0;
    match r.mode {
        Mode::Bfs => println!(
            "{} BFS {}: states_explored={} distinct_states={} diameter={} time={secs:.2}s",
            rec.config,
            reason(r.terminated_reason),
            r.states_explored,
            r.distinct_states,
            r.diameter.unwrap_or(0),
        ),
        Mode::Simulation => {
            let walks = r.walks.unwrap_or(0);
            let rate = walks as f64 / secs.max(1e-3);
            println!(
                "{} simulation {}: seed={} walks={walks} walks/sec={rate:.0} states_explored={} time={secs:.2}s",
                rec.config,
                reason(r.terminated_reason),
                r.seed,
                r.states_explored,
            );
        }
    }
    // One line per distinct trace, naming every invariant it breaks.
    let mut seen: Vec<&Path> = Vec::new();
    for (v, p) in r.violations.iter().zip(&rec.traces) {
        if seen.contains(&p.as_path()) {
            continue;
        }
        seen.push(p);
        let names: Vec<&str> = r
            .violations
            .iter()
            .zip(&rec.traces)
            .filter(|(_, q)| *q == p)
            .map(|(w, _)| w.invariant.as_str())
            .collect();
        println!(
            "violation {} depth={} trace={}",
            names.join(","),
            v.depth,
            p.display()
        );
    }
}

fn exit_code(reports: &[&CheckReport]) -> i32 {
    if reports.iter().any(|r| r.has_violation()) {
        EXIT_VIOLATION
    } else if reports.iter().any(|r| {
        matches!(
            r.terminated_reason,
            TerminatedReason::TimeLimit | TerminatedReason::StateLimit
        )
    }) {
        EXIT_BUDGET
    } else {
        EXIT_OK
    }
}

fn cmd_run(args: &RunArgs, mode: Mode) -> Result<i32, Failure> {
    let run = resolve(args, mode, ModelKind::Protocol)?;
    let report = explore(run.model, &run.explore).map_err(usage)?;
    let rec = save(&run, report)?;
    Ok(exit_code(&[&rec.report]))
}

fn cmd_hunt(args: &RunArgs) -> Result<i32, Failure> {
    let run = resolve(args, Mode::Bfs, ModelKind::Test)?;
    if run.model != ModelKind::Test {
        return Err(usage(format!(
            "manifest key `model`: hunt runs the test model, not {}",
            run.model
        )));
    }
    let h = test_model::hunt(&run.explore).map_err(usage)?;
    let bfs = save(&run, h.bfs)?;
    let sim = save(&run, h.simulation)?;
    Ok(exit_code(&[&bfs.report, &sim.report]))
}

fn cmd_replay(trace: &Path, planted: &[String]) -> Result<i32, Failure> {
    let faults = planted
        .iter()
        .map(|p| {
            PlantedFault::parse(p).ok_or_else(|| usage(format!("unknown planted fault `{p}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rep = harness::replay_file(trace, &faults).map_err(input)?;
    print!("{}", rep.to_text());
    Ok(if rep.conforms() {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    })
}

fn cmd_report(dir: Option<PathBuf>, out: Option<PathBuf>) -> Result<i32, Failure> {
    let dir = dir.or(out).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let records =
        report::load_records(&dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
    let table = ResultTable::from_records(&records);
    let text = table.render();
    print!("{text}");
    let json = serde_json::to_string_pretty(&table).map_err(input)?;
    fs::write(dir.join("report.json"), json + "\n").map_err(input)?;
    fs::write(dir.join("report.txt"), &text).map_err(input)?;
    Ok(EXIT_OK)
}

fn cmd_list_invariants(model: Option<ModelKind>) {
    let cfg = ExploreConfig::default();
    let kinds = match model {
        Some(m) => vec![m],
        None => vec![ModelKind::Protocol, ModelKind::System, ModelKind::Test],
    };
    for k in kinds {
        let names = match k {
            ModelKind::Protocol => ProtocolModel::new(&cfg).invariants(),
            ModelKind::System => SystemModel::new(&cfg).invariants(),
            ModelKind::Test => SystemModel::ipa(&cfg).invariants(),
        };
        for n in names {
            println!("{k}\t{n}\t{}", describe(n));
        }
    }
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let res = match &cli.command {
        Command::Check(a) => cmd_run(a, Mode::Bfs),
        Command::Simulate(a) => cmd_run(a, Mode::Simulation),
        Command::Hunt(a) => cmd_hunt(a),
        Command::Replay { trace, planted } => cmd_replay(trace, planted),
        Command::Report { dir, out_dir } => cmd_report(dir.clone(), out_dir.clone()),
        Command::ListMutations => {
            for m in MutationId::ALL {
                println!("{}\t{}", m.name(), m.description());
            }
            Ok(EXIT_OK)
        }
        Command::ListInvariants { model } => {
            cmd_list_invariants(*model);
            Ok(EXIT_OK)
        }
        Command::Manifest => {
            print!("{}", manifest::template());
            Ok(EXIT_OK)
        }
    };
    match res {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            f.code
        }
    }
}
