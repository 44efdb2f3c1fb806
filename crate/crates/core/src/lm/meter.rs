use std::sync::Mutex;
use std::time::Duration;

use indexmap::IndexMap;
use serde::Serialize;

/// Counters for one operator invocation label.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OpCounters {
    pub lm_calls: u64,
    pub batches: u64,
    pub proxy_calls: u64,
    pub oracle_calls: u64,
    pub cache_hits: u64,
    pub malformed_outputs: u64,
    pub failed_calls: u64,
    pub unverified_snippets: u64,
    pub max_batch_size: u64,
    pub wall_time_ms: f64,
}

impl OpCounters {
    pub fn merge(&mut self, other: &OpCounters) {
        self.lm_calls += other.lm_calls;
        self.batches += other.batches;
        self.proxy_calls += other.proxy_calls;
        self.oracle_calls += other.oracle_calls;
        self.cache_hits += other.cache_hits;
        self.malformed_outputs += other.malformed_outputs;
        self.failed_calls += other.failed_calls;
        self.unverified_snippets += other.unverified_snippets;
        self.max_batch_size = self.max_batch_size.max(other.max_batch_size);
        self.wall_time_ms += other.wall_time_ms;
    }
}

/// Which tier of a cascade a batch was sent to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Single,
    Proxy,
    Oracle,
}

/// Per-operator call accounting, keyed by label in first-use order.
#[derive(Debug, Default)]
pub struct CallMeter {
    ops: Mutex<IndexMap<String, OpCounters>>,
}

impl CallMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&self, op: &str, f: impl FnOnce(&mut OpCounters)) {
        let mut ops = self.ops.lock().expect("meter poisoned");
        if !ops.contains_key(op) {
            ops.insert(op.to_string(), OpCounters::default());
        }
        f(ops.get_mut(op).expect("just inserted"));
    }

    pub fn record_batch(&self, op: &str, role: Role, size: usize) {
        let n = size as u64;
        self.update(op, |c| {
            c.lm_calls += n;
            c.batches += 1;
            c.max_batch_size = c.max_batch_size.max(n);
            match role {
                Role::Single => {}
                Role::Proxy => c.proxy_calls += n,
                Role::Oracle => c.oracle_calls += n,
            }
        });
    }

    pub fn add_wall_time(&self, op: &str, elapsed: Duration) {
        self.update(op, |c| c.wall_time_ms += elapsed.as_secs_f64() * 1e3);
    }

    pub fn get(&self, op: &str) -> OpCounters {
        self.ops
            .lock()
            .expect("meter poisoned")
            .get(op)
            .cloned()
            .unwrap_or_default()
    }

    pub fn snapshot(&self) -> IndexMap<String, OpCounters> {
        self.ops.lock().expect("meter poisoned").clone()
    }

    pub fn total(&self) -> OpCounters {
        let mut total = OpCounters::default();
        for c in self.ops.lock().expect("meter poisoned").values() {
            total.merge(c);
        }
        total
    }

    pub fn reset(&self) {
        self.ops.lock().expect("meter poisoned").clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_and_roles() {
        let m = CallMeter::new();
        m.record_batch("f", Role::Proxy, 10);
        m.record_batch("f", Role::Oracle, 3);
        m.record_batch("g", Role::Single, 1);
        let f = m.get("f");
        assert_eq!((f.lm_calls, f.batches, f.proxy_calls, f.oracle_calls), (13, 2, 10, 3));
        assert_eq!(f.max_batch_size, 10);
        assert_eq!(m.total().lm_calls, 14);
        assert_eq!(m.snapshot().keys().collect::<Vec<_>>(), ["f", "g"]);
    }
}
