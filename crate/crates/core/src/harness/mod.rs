//! Conformance replay: a model trace becomes an event schedule, a cluster of
//! independently written nodes executes it on a simulated network, and after
//! every event each node's projected state is compared to the model's.
//!
//! `node` and `net` know nothing about the models. `schedule` is the only
//! place that reads model states; `replay` only sees the frames it produced.
//!
//! Protocol-level traces replay on nodes speaking the classic handshake
//! (oracle election, full-history ACKEPOCH/NEWLEADER) rather than through a
//! refinement mapping onto the refined nodes.

pub mod net;
pub mod node;
pub mod replay;
pub mod schedule;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::kernel::{Trace, TraceError};

pub use net::{MsgId, NetError, SimNet};
pub use node::{Dialect, NodeBuild, NodeProjection, NodeRuntime, PlantedFault, Store, Wire};
pub use replay::{compare, run_schedule, run_schedule_with_faults, Cluster};
pub use schedule::{extract_schedule, ClusterSpec, Event, EventSchedule, Frame, LocalAction};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// The trace file does not describe a valid model run.
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("unmappable action {0}")]
    Unmappable(String),
    #[error("schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Trace(#[from] crate::kernel::TraceError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDiff {
    pub path: String,
    pub model: String,
    pub node: String,
}

impl FieldDiff {
    /// The node or network rejected the event itself.
    fn refusal(why: String) -> Self {
        FieldDiff {
            path: "event".into(),
            model: "accepted".into(),
            node: why,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    /// 1-based trace step; 0 is the initial state.
    pub step: usize,
    pub action: String,
    pub event: String,
    pub diffs: Vec<FieldDiff>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformanceReport {
    pub model: String,
    /// Events in the schedule.
    pub events: usize,
    /// Events fired and compared, the diverging one included.
    pub steps_checked: usize,
    pub first_divergence: Option<usize>,
    pub divergence: Option<Divergence>,
}

impl ConformanceReport {
    pub fn conforms(&self) -> bool {
        self.first_divergence.is_none()
    }

    /// Summary line, then one record per differing field.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let first = self
            .first_divergence
            .map_or("NONE".to_string(), |d| d.to_string());
        let _ = writeln!(
            s,
            "conformance model={} events={} steps_checked={} first_divergence={}",
            self.model, self.events, self.steps_checked, first
        );
        if let Some(d) = &self.divergence {
            for f in &d.diffs {
                let _ = writeln!(
                    s,
                    "step={}\taction={}\tevent={}\tfield={}\tmodel={}\tnode={}",
                    d.step, d.action, d.event, f.path, f.model, f.node
                );
            }
        }
        s
    }
}

/// Extract and run in one go.
pub fn replay(trace: &Trace, faults: &[PlantedFault]) -> Result<ConformanceReport, HarnessError> {
    let schedule = extract_schedule(trace)?;
    Ok(run_schedule_with_faults(&schedule, faults))
}

pub fn replay_file(
    path: &Path,
    faults: &[PlantedFault],
) -> Result<ConformanceReport, HarnessError> {
    let trace = Trace::read_file(path).map_err(|e| match e {
        TraceError::ConfigDigest { .. } => HarnessError::Integrity(e.to_string()),
        other => HarnessError::Trace(other),
    })?;
    replay(&trace, faults)
}
