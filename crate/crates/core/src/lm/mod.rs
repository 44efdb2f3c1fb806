//! Language-model backends and the batched dispatch runtime.

mod cache;
pub mod http;
mod meter;
pub mod mock;
mod request;

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use rayon::prelude::*;
use thiserror::Error;

pub use cache::{criterion_hash, PairCache, PairKey};
pub use meter::{CallMeter, OpCounters, Role};
pub use request::{
    decide, label_confidence, match_label, Decision, Demonstration, LmRequest, LmResult, DOCUMENTS, TRUE_FALSE,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LmError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("http status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed backend response: {0}")]
    Decode(String),
    #[error("result carries no label log-probabilities")]
    MissingLogprobs,
    #[error("backend configuration: {0}")]
    Config(String),
}

impl LmError {
    pub fn is_retryable(&self) -> bool {
        match self {
            LmError::Transport(_) => true,
            LmError::Status { code, .. } => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

/// A model that answers one request at a time. Implementations must be safe
/// to call concurrently; the runtime bounds how many calls are in flight.
pub trait LmBackend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &LmRequest) -> Result<LmResult, LmError>;

    /// True for backends that answer in-process without blocking. Their
    /// batches are spread over CPU cores only, not the full in-flight limit.
    fn cpu_bound(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

/// Dispatches request batches with bounded parallelism and meters them.
pub struct Runtime {
    pool: rayon::ThreadPool,
    parallelism: usize,
    retry: RetryPolicy,
    meter: Arc<CallMeter>,
}

impl std::fmt::Debug for Runtime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runtime")
            .field("parallelism", &self.parallelism)
            .field("retry", &self.retry)
            .finish()
    }
}

impl Runtime {
    pub fn new(parallelism: usize) -> Self {
        Self::with_retry(parallelism, RetryPolicy::default())
    }

    pub fn with_retry(parallelism: usize, retry: RetryPolicy) -> Self {
        let parallelism = parallelism.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .thread_name(|i| format!("lm-worker-{i}"))
            .build()
            .expect("failed to build LM worker pool");
        Self {
            pool,
            parallelism,
            retry,
            meter: Arc::new(CallMeter::new()),
        }
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn meter(&self) -> &Arc<CallMeter> {
        &self.meter
    }

    /// Runs `requests` against `backend` as one batch. Results are aligned
    /// with requests; a failed item does not abort the others. At most
    /// `parallelism` requests are in flight.
    pub fn complete_batch(
        &self,
        op: &str,
        role: Role,
        backend: &dyn LmBackend,
        requests: &[LmRequest],
    ) -> Vec<Result<LmResult, LmError>> {
        if requests.is_empty() {
            return Vec::new();
        }
        self.meter.record_batch(op, role, requests.len());
        let workers = if backend.cpu_bound() {
            self.parallelism.min(thread::available_parallelism().map_or(1, |n| n.get()))
        } else {
            self.parallelism
        };
        let results: Vec<_> = if requests.len() == 1 || workers == 1 {
            requests.iter().map(|r| self.call_with_retry(backend, r)).collect()
        } else {
            // enough pieces to keep every worker busy without one task per call
            let piece = requests.len().div_ceil(workers * 4).max(1);
            self.pool.install(|| {
                requests
                    .par_iter()
                    .with_max_len(piece)
                    .map(|r| self.call_with_retry(backend, r))
                    .collect()
            })
        };
        let failed = results.iter().filter(|r| r.is_err()).count() as u64;
        if failed > 0 {
            self.meter.update(op, |c| c.failed_calls += failed);
        }
        results
    }

    fn call_with_retry(&self, backend: &dyn LmBackend, request: &LmRequest) -> Result<LmResult, LmError> {
        let mut delay = self.retry.initial_backoff;
        let mut attempt = 1;
        loop {
            match backend.complete(request) {
                Err(e) if e.is_retryable() && attempt < self.retry.attempts => {
                    log::warn!("{} attempt {attempt} failed: {e}; retrying in {delay:?}", backend.id());
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    use super::mock::{FnBackend, ScriptedBackend};
    use super::*;

    #[test]
    fn one_batch_many_calls() {
        let rt = Runtime::new(64);
        let b = ScriptedBackend::new("s", "ok");
        let reqs: Vec<_> = (0..64).map(|i| LmRequest::new("", format!("q{i}"))).collect();
        let out = rt.complete_batch("op", Role::Single, &b, &reqs);
        assert_eq!(out.len(), 64);
        let c = rt.meter().get("op");
        assert_eq!((c.lm_calls, c.batches), (64, 1));
    }

    #[test]
    fn results_are_positionally_aligned() {
        let rt = Runtime::new(8);
        let mut b = ScriptedBackend::new("s", "default");
        for i in 0..100 {
            b = b.rule(format!("<{i}>"), format!("answer {i}"));
        }
        let reqs: Vec<_> = (0..100).map(|i| LmRequest::new("", format!("<{i}>"))).collect();
        let out = rt.complete_batch("op", Role::Single, &b, &reqs);
        for (i, r) in out.iter().enumerate() {
            assert_eq!(r.as_ref().unwrap().text, format!("answer {i}"));
        }
    }

    #[test]
    fn parallelism_bound_holds() {
        let in_flight = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(Mutex::new(0usize));
        let (f, p) = (Arc::clone(&in_flight), Arc::clone(&peak));
        let b = FnBackend::new("slow", move |_r| {
            let now = f.fetch_add(1, Ordering::SeqCst) + 1;
            {
                let mut pk = p.lock().unwrap();
                *pk = (*pk).max(now);
            }
            thread::sleep(Duration::from_millis(2));
            f.fetch_sub(1, Ordering::SeqCst);
            Ok(LmResult::text("slow", "x"))
        });
        let rt = Runtime::new(4);
        let reqs: Vec<_> = (0..64).map(|i| LmRequest::new("", i.to_string())).collect();
        rt.complete_batch("op", Role::Single, &b, &reqs);
        let pk = *peak.lock().unwrap();
        assert!(pk <= 4 && pk >= 1, "peak in flight {pk}");
    }

    #[test]
    fn retries_then_reports_per_item_error() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c = Arc::clone(&calls);
        let b = FnBackend::new("flaky", move |r| {
            c.fetch_add(1, Ordering::SeqCst);
            if r.user_prompt == "bad" {
                Err(LmError::Transport("connection reset".into()))
            } else {
                Ok(LmResult::text("flaky", "fine"))
            }
        });
        let rt = Runtime::with_retry(
            2,
            RetryPolicy {
                attempts: 3,
                initial_backoff: Duration::from_millis(1),
            },
        );
        let reqs = vec![LmRequest::new("", "good"), LmRequest::new("", "bad")];
        let out = rt.complete_batch("op", Role::Single, &b, &reqs);
        assert!(out[0].is_ok());
        assert!(matches!(out[1], Err(LmError::Transport(_))));
        assert_eq!(calls.load(Ordering::SeqCst), 1 + 3);
        let m = rt.meter().get("op");
        assert_eq!((m.lm_calls, m.failed_calls), (2, 1));
    }

    #[test]
    fn non_retryable_errors_fail_fast() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c = Arc::clone(&calls);
        let b = FnBackend::new("x", move |_| {
            c.fetch_add(1, Ordering::SeqCst);
            Err(LmError::Status {
                code: 400,
                body: "bad request".into(),
            })
        });
        let rt = Runtime::new(1);
        let out = rt.complete_batch("op", Role::Single, &b, &[LmRequest::new("", "q")]);
        assert!(out[0].is_err());
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn large_batch_metering() {
        let rt = Runtime::new(64);
        let b = ScriptedBackend::new("s", "True");
        let reqs: Vec<_> = (0..10_000).map(|i| LmRequest::new("", i.to_string())).collect();
        let out = rt.complete_batch("big", Role::Single, &b, &reqs);
        assert_eq!(out.len(), 10_000);
        assert_eq!(rt.meter().get("big").lm_calls, 10_000);
    }
}
