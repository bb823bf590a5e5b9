//! Deterministic in-process network: per-pair FIFO queues, stable message
//! ids, a partition mask and a down mask.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use super::node::Wire;

/// `seq` counts every send on the `from -> to` pair, dropped ones included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MsgId {
    pub from: u8,
    pub to: u8,
    pub seq: u64,
}

impl fmt::Display for MsgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}#{}", self.from, self.to, self.seq)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NetError {
    #[error("message {0} never existed")]
    Missing(MsgId),
    #[error("message {0} was dropped ({1})")]
    Dropped(MsgId, &'static str),
    #[error("message {0} was discarded with its connection")]
    Discarded(MsgId),
    #[error("message {id} is not at the head of its channel (head is #{head})")]
    NotHead { id: MsgId, head: u64 },
}

#[derive(Debug, Clone, Default)]
pub struct SimNet {
    queues: BTreeMap<(u8, u8), VecDeque<(u64, Wire)>>,
    next: BTreeMap<(u8, u8), u64>,
    cut: BTreeSet<(u8, u8)>,
    down: BTreeSet<u8>,
    dropped: BTreeMap<MsgId, &'static str>,
}

fn key(a: u8, b: u8) -> (u8, u8) {
    (a.min(b), a.max(b))
}

impl SimNet {
    pub fn new() -> Self {
        SimNet::default()
    }

    pub fn partitioned(&self, a: u8, b: u8) -> bool {
        self.cut.contains(&key(a, b))
    }

    pub fn send(&mut self, from: u8, to: u8, msg: Wire) -> MsgId {
        let n = self.next.entry((from, to)).or_insert(0);
        let id = MsgId { from, to, seq: *n };
        *n += 1;
        if self.partitioned(from, to) {
            self.dropped.insert(id, "partitioned");
        } else if self.down.contains(&to) {
            self.dropped.insert(id, "receiver down");
        } else {
            self.queues
                .entry((from, to))
                .or_default()
                .push_back((id.seq, msg));
        }
        id
    }

    /// Pops exactly `id`, which must be at the head of its channel.
    pub fn deliver(&mut self, id: MsgId) -> Result<Wire, NetError> {
        if let Some(why) = self.dropped.get(&id) {
            return Err(NetError::Dropped(id, why));
        }
        if id.seq >= self.next.get(&(id.from, id.to)).copied().unwrap_or(0) {
            return Err(NetError::Missing(id));
        }
        let q = self.queues.entry((id.from, id.to)).or_default();
        match q.front() {
            Some((seq, _)) if *seq == id.seq => Ok(q.pop_front().expect("head").1),
            Some((seq, _)) if q.iter().any(|(s, _)| *s == id.seq) => {
                Err(NetError::NotHead { id, head: *seq })
            }
            _ => Err(NetError::Discarded(id)),
        }
    }

    /// Id the next send on `from -> to` will get.
    pub fn next_seq(&self, from: u8, to: u8) -> u64 {
        self.next.get(&(from, to)).copied().unwrap_or(0)
    }

    pub fn clear_pair(&mut self, a: u8, b: u8) {
        self.queues.remove(&(a, b));
        self.queues.remove(&(b, a));
    }

    pub fn clear_all(&mut self, s: u8) {
        self.queues.retain(|(a, b), _| *a != s && *b != s);
    }

    pub fn partition(&mut self, a: u8, b: u8) {
        self.cut.insert(key(a, b));
        self.clear_pair(a, b);
    }

    pub fn reconnect(&mut self, a: u8, b: u8) {
        self.cut.remove(&key(a, b));
    }

    pub fn set_down(&mut self, s: u8, down: bool) {
        if down {
            self.down.insert(s);
        } else {
            self.down.remove(&s);
        }
    }

    /// Rendered in-flight messages per non-empty channel.
    pub fn channels(&self) -> BTreeMap<(u8, u8), Vec<String>> {
        self.queues
            .iter()
            .filter(|(_, q)| !q.is_empty())
            .map(|(k, q)| (*k, q.iter().map(|(_, m)| m.to_string()).collect()))
            .collect()
    }
}
