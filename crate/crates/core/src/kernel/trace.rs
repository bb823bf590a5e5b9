//! Replayable counterexample traces and their file format.
//!
//! File layout (UTF-8, `\n` line endings):
//!
//! ```text
//! #zabtrace v1 model=<kind> config=<16 hex> initial=<16 hex> steps=<count>
//! #config <canonical JSON of the ExploreConfig>
//! <index>\t<action name>\t<actor or ->\t<comma-separated params or ->\t<post-state digest, 16 hex>
//! ...
//! ```
//!
//! Step indices start at 1. Digests are [`Fingerprint`]s of the model's
//! canonical state encoding.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExploreConfig;
use super::fingerprint::Fingerprint;
use super::{ActionInstance, Model};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub action: ActionInstance,
    pub digest: Fingerprint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub model: String,
    pub config: ExploreConfig,
    pub config_digest: Fingerprint,
    pub initial_digest: Fingerprint,
    pub steps: Vec<TraceStep>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace file: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace config digest {recorded} does not match its config ({computed})")]
    ConfigDigest {
        recorded: Fingerprint,
        computed: Fingerprint,
    },
    #[error("trace is for model `{trace}`, not `{model}`")]
    WrongModel { trace: String, model: String },
    #[error("no initial state has digest {0}")]
    UnknownInitial(Fingerprint),
    #[error("step {step}: action {action} is not enabled")]
    NotEnabled { step: usize, action: String },
    #[error("step {step}: state digest {actual} differs from recorded {recorded}")]
    DigestMismatch {
        step: usize,
        recorded: Fingerprint,
        actual: Fingerprint,
    },
    #[error("explorer bug: predecessor chain does not replay ({0})")]
    Internal(String),
}

impl Trace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn final_digest(&self) -> Fingerprint {
        self.steps.last().map_or(self.initial_digest, |s| s.digest)
    }

    pub fn actions(&self) -> impl Iterator<Item = &ActionInstance> {
        self.steps.iter().map(|s| &s.action)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "#zabtrace v1 model={} config={} initial={} steps={}",
            self.model,
            self.config_digest,
            self.initial_digest,
            self.steps.len()
        );
        let _ = writeln!(
            out,
            "#config {}",
            serde_json::to_string(&self.config).expect("config serializes")
        );
        for (i, s) in self.steps.iter().enumerate() {
            let actor = s
                .action
                .actor
                .map_or_else(|| "-".to_string(), |a| a.to_string());
            let params = if s.action.params.is_empty() {
                "-".to_string()
            } else {
                s.action
                    .params
                    .iter()
                    .map(|p| p.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                i + 1,
                s.action.name,
                actor,
                params,
                s.digest
            );
        }
        out
    }

    /// Parses the text form and checks the config digest. Step digests are
    /// checked by [`replay_trace`].
    pub fn parse(text: &str) -> Result<Trace, TraceError> {
        let perr = |line: usize, msg: &str| TraceError::Parse {
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (ln, header) = lines.next().ok_or_else(|| perr(1, "empty file"))?;
        let rest = header
            .strip_prefix("#zabtrace v1 ")
            .ok_or_else(|| perr(ln, "missing `#zabtrace v1` header"))?;
        let mut model = None;
        let mut config_digest = None;
        let mut initial = None;
        let mut steps_declared = None;
        for kv in rest.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| perr(ln, "header field without `=`"))?;
            match k {
                "model" => model = Some(v.to_string()),
                "config" => {
                    config_digest = Some(
                        Fingerprint::from_hex(v).ok_or_else(|| perr(ln, "bad config digest"))?,
                    )
                }
                "initial" => {
                    initial = Some(
                        Fingerprint::from_hex(v).ok_or_else(|| perr(ln, "bad initial digest"))?,
                    )
                }
                "steps" => {
                    steps_declared =
                        Some(v.parse::<usize>().map_err(|_| perr(ln, "bad step count"))?)
                }
                _ => return Err(perr(ln, &format!("unknown header field `{k}`"))),
            }
        }
        let (ln, cfg_line) = lines
            .next()
            .ok_or_else(|| perr(2, "missing #config line"))?;
        let json = cfg_line
            .strip_prefix("#config ")
            .ok_or_else(|| perr(ln, "missing #config line"))?;
        let config: ExploreConfig =
            serde_json::from_str(json).map_err(|e| perr(ln, &format!("config: {e}")))?;
        let config_digest = config_digest.ok_or_else(|| perr(1, "missing config digest"))?;
        let computed = config.digest();
        if computed != config_digest {
            return Err(TraceError::ConfigDigest {
                recorded: config_digest,
                computed,
            });
        }
        let mut steps = Vec::new();
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(perr(ln, "expected 5 tab-separated columns"));
            }
            let idx: usize = cols[0].parse().map_err(|_| perr(ln, "bad step index"))?;
            if idx != steps.len() + 1 {
                return Err(perr(ln, "step indices must be consecutive from 1"));
            }
            let actor = match cols[2] {
                "-" => None,
                a => Some(a.parse::<u8>().map_err(|_| perr(ln, "bad actor"))?),
            };
            let params = match cols[3] {
                "-" => Vec::new(),
                p => p
                    .split(',')
                    .map(|x| x.parse::<i64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| perr(ln, "bad params"))?,
            };
            let digest = Fingerprint::from_hex(cols[4]).ok_or_else(|| perr(ln, "bad digest"))?;
            steps.push(TraceStep {
                action: ActionInstance::new(cols[1], actor, params),
                digest,
            });
        }
        if let Some(n) = steps_declared {
            if n != steps.len() {
                return Err(perr(1, "declared step count does not match the body"));
            }
        }
        Ok(Trace {
            model: model.ok_or_else(|| perr(1, "missing model"))?,
            config,
            config_digest,
            initial_digest: initial.ok_or_else(|| perr(1, "missing initial digest"))?,
            steps,
        })
    }

    pub fn write_file(&self, path: &Path) -> Result<(), TraceError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Trace, TraceError> {
        Trace::parse(&std::fs::read_to_string(path)?)
    }
}

/// Replays `trace` on `model`, checking every recorded digest. Returns the
/// initial state followed by each post-state.
pub fn replay_trace<M: Model>(model: &M, trace: &Trace) -> Result<Vec<M::State>, TraceError> {
    if trace.model != model.kind() {
        return Err(TraceError::WrongModel {
            trace: trace.model.clone(),
            model: model.kind().to_string(),
        });
    }
    let init = model
        .init_states()
        .into_iter()
        .find(|s| model.fingerprint(s) == trace.initial_digest)
        .ok_or(TraceError::UnknownInitial(trace.initial_digest))?;
    let mut states = vec![init];
    let mut enabled = Vec::new();
    for (i, step) in trace.steps.iter().enumerate() {
        let cur = states.last().expect("nonempty");
        enabled.clear();
        model.enabled(cur, &mut enabled);
        if !enabled.contains(&step.action) {
            return Err(TraceError::NotEnabled {
                step: i + 1,
                action: step.action.to_string(),
            });
        }
        let next = model.apply(cur, &step.action);
        let actual = model.fingerprint(&next);
        if actual != step.digest {
            return Err(TraceError::DigestMismatch {
                step: i + 1,
                recorded: step.digest,
                actual,
            });
        }
        states.push(next);
    }
    Ok(states)
}

pub(crate) const NO_PARENT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Node {
    /// Parent node, or `NO_PARENT` for initial states.
    pub parent: u32,
    /// Index into the parent's enabled list, or into `init_states()` for roots.
    pub action: u32,
    pub fp: u64,
}

/// Predecessor links recorded by the BFS: one node per distinct state.
#[derive(Debug, Default)]
pub struct PredecessorMap {
    pub(crate) nodes: Vec<Node>,
}

impl PredecessorMap {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn chain(&self, node: u32) -> (u32, Vec<u32>) {
        let mut path = Vec::new();
        let mut cur = node;
        loop {
            let n = self.nodes[cur as usize];
            if n.parent == NO_PARENT {
                path.reverse();
                return (n.action, path);
            }
            path.push(cur);
            cur = n.parent;
        }
    }
}

/// Shortest action sequence from an initial state to `node`, optionally
/// followed by one more edge (the enabled-list index `extra` out of `node`).
/// Every step is replayed and checked against the recorded digest.
pub fn reconstruct_trace<M: Model>(
    model: &M,
    cfg: &ExploreConfig,
    map: &PredecessorMap,
    node: u32,
    extra: Option<u32>,
) -> Result<Trace, TraceError> {
    let (init_idx, path) = map.chain(node);
    let inits = model.init_states();
    let mut state = inits
        .get(init_idx as usize)
        .cloned()
        .ok_or_else(|| TraceError::Internal(format!("init index {init_idx}")))?;
    let initial_digest = model.fingerprint(&state);
    let root = {
        let mut cur = node;
        while map.nodes[cur as usize].parent != NO_PARENT {
            cur = map.nodes[cur as usize].parent;
        }
        cur
    };
    if initial_digest.0 != map.nodes[root as usize].fp {
        return Err(TraceError::Internal("initial digest".into()));
    }
    let mut steps = Vec::with_capacity(path.len() + 1);
    let mut enabled = Vec::new();
    let edges = path
        .iter()
        .map(|&n| (map.nodes[n as usize].action, Some(map.nodes[n as usize].fp)))
        .chain(extra.map(|a| (a, None)));
    for (action_idx, expected) in edges {
        enabled.clear();
        model.enabled(&state, &mut enabled);
        let action = enabled
            .get(action_idx as usize)
            .cloned()
            .ok_or_else(|| TraceError::Internal(format!("action index {action_idx}")))?;
        state = model.apply(&state, &action);
        let digest = model.fingerprint(&state);
        if let Some(fp) = expected {
            if fp != digest.0 {
                return Err(TraceError::Internal(format!(
                    "digest mismatch after {action}"
                )));
            }
        }
        steps.push(TraceStep { action, digest });
    }
    Ok(Trace {
        model: model.kind().to_string(),
        config: cfg.clone(),
        config_digest: cfg.digest(),
        initial_digest,
        steps,
    })
}
