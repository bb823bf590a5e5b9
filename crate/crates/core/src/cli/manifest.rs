//! Run manifests: a flat TOML document holding the model selector, every
//! explorer setting and the output location.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::kernel::ExploreConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Protocol,
    System,
    Test,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Protocol => "protocol",
            ModelKind::System => "system",
            ModelKind::Test => "test",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "protocol" => Ok(ModelKind::Protocol),
            "system" => Ok(ModelKind::System),
            "test" => Ok(ModelKind::Test),
            _ => Err(format!("expected protocol, system or test, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    pub model: ModelKind,
    /// Label used for output file names; derived from the config when absent.
    pub name: Option<String>,
    pub out_dir: Option<PathBuf>,
    pub explore: ExploreConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest is not valid TOML: {0}")]
    Syntax(String),
    #[error("manifest key `{key}`: {why}")]
    Key { key: String, why: String },
}

/// Every accepted key with its documentation, in template order.
pub const KEY_DOCS: [(&str, &str); 23] = [
    ("model", "which model to explore: protocol, system or test"),
    (
        "name",
        "label for output files; derived from the settings when omitted",
    ),
    (
        "out_dir",
        "output directory; overrides --out-dir and ZABCHECK_OUT",
    ),
    (
        "mode",
        "BFS or SIMULATION; the subcommand decides, a mismatch only warns",
    ),
    ("n_servers", "cluster size, 1..=5 unless force = true"),
    (
        "max_transactions",
        "client transactions the leader may propose in total",
    ),
    (
        "max_timeouts",
        "timeouts (leader or follower gives up) in total",
    ),
    ("max_restarts", "restarts in total (protocol model)"),
    ("max_crashes", "crashes in total (system and test models)"),
    (
        "max_partitions",
        "link partitions in total (system and test models)",
    ),
    ("max_trace_len", "simulation walk length"),
    ("max_walks", "simulation walk budget"),
    (
        "seed",
        "simulation seed; walk i uses a stream derived from (seed, i)",
    ),
    ("time_limit_secs", "wall-clock budget, 0 = unlimited"),
    ("state_limit", "BFS distinct-state budget, 0 = unlimited"),
    ("quorum_rule", "MAJORITY or WEAK_HALF"),
    ("mutations", "planted faults by name, see list-mutations"),
    ("store", "BFS visited set: fingerprint_set or exact_set"),
    ("fingerprint_bits", "bits kept per fingerprint, 1..=64"),
    (
        "collect_all",
        "finish the violating BFS level and report every violation on it",
    ),
    (
        "invariants",
        "names to check, empty = all, see list-invariants",
    ),
    ("force", "allow n_servers above 5"),
    (
        "snapshot_boundary",
        "[epoch, counter]: older followers are synced by SNAP; unset = never",
    ),
];

fn key_err(key: &str, why: impl fmt::Display) -> ManifestError {
    ManifestError::Key {
        key: key.to_string(),
        why: why.to_string(),
    }
}

/// Pulls the offending key out of a serde message such as "unknown field `x`".
fn blame(msg: &str) -> String {
    msg.split('`').nth(1).unwrap_or("?").to_string()
}

impl RunManifest {
    pub fn parse(text: &str) -> Result<Table, ManifestError> {
        text.parse::<Table>()
            .map_err(|e| ManifestError::Syntax(e.message().to_string()))
    }

    /// Builds a manifest from a merged key table.
    pub fn from_table(mut t: Table) -> Result<Self, ManifestError> {
        let model = match t.remove("model") {
            None => ModelKind::default(),
            Some(Value::String(s)) => s.parse().map_err(|e| key_err("model", e))?,
            Some(v) => return Err(key_err("model", format!("expected a string, got {v}"))),
        };
        let name = match t.remove("name") {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(v) => return Err(key_err("name", format!("expected a string, got {v}"))),
        };
        let out_dir = match t.remove("out_dir") {
            None => None,
            Some(Value::String(s)) => Some(PathBuf::from(s)),
            Some(v) => return Err(key_err("out_dir", format!("expected a string, got {v}"))),
        };
        // Check each key on its own first so errors name the key.
        for (k, v) in &t {
            let mut one = Table::new();
            one.insert(k.clone(), v.clone());
            ExploreConfig::deserialize(Value::Table(one)).map_err(|e| {
                let msg = e.message().to_string();
                if msg.starts_with("unknown field") {
                    key_err(k, "unknown key")
                } else {
                    key_err(k, msg)
                }
            })?;
        }
        let explore = ExploreConfig::deserialize(Value::Table(t)).map_err(|e| {
            let msg = e.message().to_string();
            key_err(&blame(&msg), msg)
        })?;
        explore.validate().map_err(|e| {
            let k = match e {
                crate::kernel::ConfigError::ServerCount(_)
                | crate::kernel::ConfigError::HardServerLimit(_) => "n_servers",
                crate::kernel::ConfigError::TraceLen => "max_trace_len",
                crate::kernel::ConfigError::FingerprintBits(_) => "fingerprint_bits",
            };
            key_err(k, e)
        })?;
        Ok(RunManifest {
            model,
            name,
            out_dir,
            explore,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, ManifestError> {
        Self::from_table(Self::parse(text)?)
    }

    /// File-name label.
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            let c = &self.explore;
            let mut s = format!("{}-n{}-tx{}", self.model, c.n_servers, c.max_transactions);
            for m in &c.mutations {
                s.push('-');
                s.push_str(&m.name().to_ascii_lowercase().replace('_', "-"));
            }
            s
        })
    }

    /// Compact settings summary for report tables.
    pub fn summary(&self) -> String {
        let c = &self.explore;
        let mut s = format!("{} n={} tx={}", self.model, c.n_servers, c.max_transactions);
        match self.model {
            ModelKind::Protocol => {
                s += &format!(" to={} rs={}", c.max_timeouts, c.max_restarts);
            }
            ModelKind::System | ModelKind::Test => {
                s += &format!(
                    " to={} cr={} pt={}",
                    c.max_timeouts, c.max_crashes, c.max_partitions
                );
            }
        }
        if c.quorum_rule != crate::domain::QuorumRule::Majority {
            s += " WEAK_HALF";
        }
        for m in &c.mutations {
            s.push(' ');
            s.push_str(m.name());
        }
        s
    }
}

/// Keys on which `over` overrides a different value in `base`.
pub fn conflicts(base: &Table, over: &Table) -> Vec<String> {
    over.iter()
        .filter(|(k, v)| base.get(*k).is_some_and(|b| b != *v))
        .map(|(k, _)| k.clone())
        .collect()
}

/// Commented TOML listing every key with its default.
pub fn template() -> String {
    let defaults = Table::try_from(ExploreConfig::default()).expect("defaults serialize");
    let mut out = String::from(
        "# zabcheck run manifest. Every key is optional; values shown are defaults.\n",
    );
    for (key, doc) in KEY_DOCS {
        out += &format!("\n# {doc}\n");
        let line = match key {
            "model" => Some(format!("model = \"{}\"", ModelKind::default())),
            _ => defaults.get(key).map(|v| format!("{key} = {v}")),
        };
        match line {
            Some(l) => out += &format!("{l}\n"),
            None => out += &format!("# {key} =\n"),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_manifest_is_all_defaults() {
        let m = RunManifest::from_toml("").unwrap();
        assert_eq!(m.model, ModelKind::Protocol);
        assert_eq!(m.explore, ExploreConfig::default());
    }

    #[test]
    fn template_round_trips_to_defaults() {
        let m = RunManifest::from_toml(&template()).unwrap();
        assert_eq!(m.explore, ExploreConfig::default());
    }

    #[test]
    fn template_documents_every_config_key() {
        let defaults = Table::try_from(ExploreConfig::default()).unwrap();
        for k in defaults.keys() {
            assert!(KEY_DOCS.iter().any(|(d, _)| d == k), "{k} undocumented");
        }
        for k in ["model", "name", "out_dir"] {
            assert!(KEY_DOCS.iter().any(|(d, _)| *d == k));
        }
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunManifest::from_toml("n_servers = 3\nmax_trasactions = 2\n").unwrap_err();
        assert!(e.to_string().contains("max_trasactions"), "{e}");
    }

    #[test]
    fn bad_value_is_named() {
        let e = RunManifest::from_toml("quorum_rule = \"SOMETIMES\"").unwrap_err();
        assert!(e.to_string().contains("quorum_rule"), "{e}");
        let e = RunManifest::from_toml("n_servers = 9").unwrap_err();
        assert!(e.to_string().contains("n_servers"), "{e}");
        let e = RunManifest::from_toml("model = \"raft\"").unwrap_err();
        assert!(e.to_string().contains("model"), "{e}");
    }

    #[test]
    fn full_manifest_parses() {
        let m = RunManifest::from_toml(
            "model = \"system\"\nn_servers = 4\nmutations = [\"WEAK_QUORUM\"]\nsnapshot_boundary = [1, 2]\nstore = \"exact_set\"\n",
        )
        .unwrap();
        assert_eq!(m.model, ModelKind::System);
        assert_eq!(m.explore.snapshot_boundary, Some((1, 2)));
        assert_eq!(m.label(), "system-n4-tx1-weak-quorum");
    }

    #[test]
    fn conflicts_list_changed_keys_only() {
        let a = RunManifest::parse("seed = 1\nn_servers = 3").unwrap();
        let b = RunManifest::parse("seed = 2\nn_servers = 3\nforce = true").unwrap();
        assert_eq!(conflicts(&a, &b), vec!["seed".to_string()]);
    }
}
