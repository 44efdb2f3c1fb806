use std::sync::Arc;
use std::time::Instant;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::index::{Embedder, Reranker};
use crate::lm::{CallMeter, LmBackend, LmError, LmRequest, LmResult, RetryPolicy, Role, Runtime};

/// Models, embedder and dispatch runtime shared by every operator call.
///
/// Cloning is cheap. Each clone carries a metering label; [`Session::labeled`]
/// gives a view that books calls under a different label.
#[derive(Clone)]
pub struct Session {
    inner: Arc<Inner>,
    label: Option<Arc<str>>,
}

struct Inner {
    runtime: Runtime,
    backends: IndexMap<String, Arc<dyn LmBackend>>,
    default_backend: Option<String>,
    embedder: Option<Arc<dyn Embedder>>,
    reranker: Option<Arc<dyn Reranker>>,
    seed: u64,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("label", &self.label)
            .field("backends", &self.inner.backends.keys().collect::<Vec<_>>())
            .field("default_backend", &self.inner.default_backend)
            .field("embedder", &self.inner.embedder.as_ref().map(|e| e.id().to_string()))
            .finish()
    }
}

#[derive(Default)]
pub struct SessionBuilder {
    parallelism: Option<usize>,
    retry: RetryPolicy,
    backends: IndexMap<String, Arc<dyn LmBackend>>,
    default_backend: Option<String>,
    embedder: Option<Arc<dyn Embedder>>,
    reranker: Option<Arc<dyn Reranker>>,
    seed: u64,
}

pub const DEFAULT_PARALLELISM: usize = 64;

impl SessionBuilder {
    pub fn parallelism(mut self, n: usize) -> Self {
        self.parallelism = Some(n);
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Registers a backend under its id. The first one becomes the default.
    pub fn backend(mut self, backend: impl LmBackend + 'static) -> Self {
        self.add_backend(Arc::new(backend));
        self
    }

    pub fn add_backend(&mut self, backend: Arc<dyn LmBackend>) {
        let id = backend.id().to_string();
        if self.default_backend.is_none() {
            self.default_backend = Some(id.clone());
        }
        self.backends.insert(id, backend);
    }

    pub fn default_backend(mut self, id: &str) -> Self {
        self.default_backend = Some(id.to_string());
        self
    }

    pub fn embedder(mut self, e: impl Embedder + 'static) -> Self {
        self.embedder = Some(Arc::new(e));
        self
    }

    pub fn set_embedder(&mut self, e: Arc<dyn Embedder>) {
        self.embedder = Some(e);
    }

    pub fn reranker(mut self, r: impl Reranker + 'static) -> Self {
        self.reranker = Some(Arc::new(r));
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn build(self) -> Session {
        Session {
            inner: Arc::new(Inner {
                runtime: Runtime::with_retry(self.parallelism.unwrap_or(DEFAULT_PARALLELISM), self.retry),
                backends: self.backends,
                default_backend: self.default_backend,
                embedder: self.embedder,
                reranker: self.reranker,
                seed: self.seed,
            }),
            label: None,
        }
    }
}

impl Session {
    pub fn builder() -> SessionBuilder {
        SessionBuilder::default()
    }

    pub fn labeled(&self, label: impl Into<String>) -> Session {
        Session {
            inner: Arc::clone(&self.inner),
            label: Some(Arc::from(label.into())),
        }
    }

    /// Label for the current operator: the explicit label, else `default`.
    pub(crate) fn op_label<'a>(&'a self, default: &'a str) -> &'a str {
        self.label.as_deref().unwrap_or(default)
    }

    pub fn runtime(&self) -> &Runtime {
        &self.inner.runtime
    }

    pub fn meter(&self) -> &Arc<CallMeter> {
        self.inner.runtime.meter()
    }

    pub fn seed(&self) -> u64 {
        self.inner.seed
    }

    pub fn backend(&self, id: Option<&str>) -> Result<Arc<dyn LmBackend>> {
        let id = match id {
            Some(id) => id,
            None => self.inner.default_backend.as_deref().ok_or(Error::NoDefaultBackend)?,
        };
        self.inner
            .backends
            .get(id)
            .cloned()
            .ok_or_else(|| Error::UnknownBackend(id.to_string()))
    }

    pub fn has_backend(&self, id: &str) -> bool {
        self.inner.backends.contains_key(id)
    }

    pub fn embedder(&self) -> Result<Arc<dyn Embedder>> {
        self.inner.embedder.clone().ok_or(Error::NoEmbedder)
    }

    pub fn reranker(&self) -> Option<Arc<dyn Reranker>> {
        self.inner.reranker.clone()
    }

    pub(crate) fn dispatch(
        &self,
        op: &str,
        role: Role,
        backend: &dyn LmBackend,
        requests: &[LmRequest],
    ) -> Vec<std::result::Result<LmResult, LmError>> {
        self.inner.runtime.complete_batch(op, role, backend, requests)
    }

    /// Times `f` and books the elapsed time under `op`.
    pub(crate) fn timed<T>(&self, op: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.meter().add_wall_time(op, start.elapsed());
        out
    }
}
