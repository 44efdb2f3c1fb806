//! C ABI over `semops`.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free`. Every fallible call returns a [`SemopsStatus`]; on
//! failure [`semops_last_error`] describes the problem. Strings returned
//! through `char **` out-parameters must be released with
//! [`semops_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use semops::index::{Embedder, HashEmbedder, SearchOptions};
use semops::langex::{Langex, Mode};
use semops::lm::http::{HttpBackend, HttpConfig};
use semops::lm::mock::{KeyedBackend, KeyedOracleConfig, ScriptedBackend};
use semops::lm::LmBackend;
use semops::ops::filter::FilterOptions;
use semops::ops::topk::{Algorithm, PivotStrategy, TopkConfig};
use semops::pipeline::{run_pipeline, Pipeline, PipelineError};
use semops::table::{load_csv, write_csv, RowId, Table};
use semops::{Error, ModelChoice, Session};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemopsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Table = 3,
    Langex = 4,
    Index = 5,
    Model = 6,
    InvalidArgument = 7,
    PipelineValidation = 8,
    PipelineRuntime = 9,
    Panic = 10,
}

/// Top-k algorithm selector for [`semops_sem_topk`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemopsAlgorithm {
    Quadratic = 0,
    Heap = 1,
    Quickselect = 2,
}

/// Opaque table handle.
pub struct SemopsTable(Table);

/// Opaque session handle. Backends and the embedder can be added until the
/// first operator call; adding more afterwards starts a fresh session (and
/// fresh metrics).
pub struct SemopsSession {
    parallelism: usize,
    seed: u64,
    backends: Vec<Arc<dyn LmBackend>>,
    embedder: Option<Arc<dyn Embedder>>,
    built: Option<Session>,
}

impl SemopsSession {
    fn session(&mut self) -> &Session {
        self.built.get_or_insert_with(|| {
            let mut b = Session::builder().parallelism(self.parallelism).seed(self.seed);
            for backend in &self.backends {
                b.add_backend(Arc::clone(backend));
            }
            if let Some(e) = &self.embedder {
                b.set_embedder(Arc::clone(e));
            }
            b.build()
        })
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SemopsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Table(_) | Error::TextColumn(_) | Error::NameCollision(_) => SemopsStatus::Table,
            Error::Langex(_) => SemopsStatus::Langex,
            Error::Index(_) | Error::NoEmbedder => SemopsStatus::Index,
            Error::Lm(_) | Error::UnknownBackend(_) | Error::NoDefaultBackend => SemopsStatus::Model,
            _ => SemopsStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<semops::table::TableError> for Failure {
    fn from(e: semops::table::TableError) -> Self {
        Failure(SemopsStatus::Table, e.to_string())
    }
}

impl From<semops::langex::LangexError> for Failure {
    fn from(e: semops::langex::LangexError) -> Self {
        Failure(SemopsStatus::Langex, e.to_string())
    }
}

impl From<semops::lm::LmError> for Failure {
    fn from(e: semops::lm::LmError) -> Self {
        Failure(SemopsStatus::Model, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SemopsStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SemopsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SemopsStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SemopsStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SemopsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn opt_text<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(SemopsStatus::NullArgument, format!("{what} is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(SemopsStatus::NullArgument, format!("{what} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(SemopsStatus::NullArgument, "output pointer is null".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(SemopsStatus::NullArgument, "output pointer is null".into()));
    }
    *out = CString::new(s.replace('\0', " ")).expect("nul bytes replaced").into_raw();
    Ok(())
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn semops_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn semops_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `path` must be a valid C string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semops_table_load_csv(path: *const c_char, out: *mut *mut SemopsTable) -> SemopsStatus {
    guard(|| put(out, SemopsTable(load_csv(text(path, "path")?)?)))
}

/// # Safety
/// `table` must be a live handle; `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn semops_table_write_csv(table: *const SemopsTable, path: *const c_char) -> SemopsStatus {
    guard(|| Ok(write_csv(&handle(table, "table")?.0, text(path, "path")?)?))
}

/// Row count, or 0 for NULL.
///
/// # Safety
/// `table` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn semops_table_row_count(table: *const SemopsTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.row_count())
}

/// Column count, or 0 for NULL.
///
/// # Safety
/// `table` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn semops_table_column_count(table: *const SemopsTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.columns().len())
}

/// # Safety
/// `table` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semops_table_column_name(
    table: *const SemopsTable,
    index: usize,
    out: *mut *mut c_char,
) -> SemopsStatus {
    guard(|| {
        let t = &handle(table, "table")?.0;
        let col = t.columns().get(index).ok_or_else(|| {
            Failure(
                SemopsStatus::InvalidArgument,
                format!("column {index} out of range ({} columns)", t.columns().len()),
            )
        })?;
        put_string(out, &col.name)
    })
}

/// Cell text; a null cell sets `*out` to NULL.
///
/// # Safety
/// `table` must be a live handle; `column` a valid C string; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn semops_table_cell_text(
    table: *const SemopsTable,
    column: *const c_char,
    row: usize,
    out: *mut *mut c_char,
) -> SemopsStatus {
    guard(|| {
        let t = &handle(table, "table")?.0;
        match t.cell(text(column, "column")?, RowId(row))?.render() {
            Some(s) => put_string(out, &s),
            None => {
                if out.is_null() {
                    return Err(Failure(SemopsStatus::NullArgument, "output pointer is null".into()));
                }
                *out = ptr::null_mut();
                Ok(())
            }
        }
    })
}

/// # Safety
/// `table` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn semops_table_free(table: *mut SemopsTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Checks `langex` against one table, or against a left/right pair when
/// `right` is non-NULL.
///
/// # Safety
/// Pointers must be valid; `right` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn semops_langex_validate(
    langex: *const c_char,
    left: *const SemopsTable,
    right: *const SemopsTable,
) -> SemopsStatus {
    guard(|| {
        let l = Langex::parse(text(langex, "langex")?)?;
        let left = &handle(left, "left")?.0;
        match right.as_ref() {
            Some(r) => l.validate(&left.schema(), Some(&r.0.schema()), Mode::Join)?,
            None => l.validate(&left.schema(), None, Mode::Single)?,
        }
        Ok(())
    })
}

/// New session with no backends. `parallelism` 0 picks the default.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semops_session_new(parallelism: usize, seed: u64, out: *mut *mut SemopsSession) -> SemopsStatus {
    guard(|| {
        put(
            out,
            SemopsSession {
                parallelism: if parallelism == 0 { semops::session::DEFAULT_PARALLELISM } else { parallelism },
                seed,
                backends: Vec::new(),
                embedder: None,
                built: None,
            },
        )
    })
}

/// # Safety
/// `session` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn semops_session_free(session: *mut SemopsSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

unsafe fn add_backend(session: *mut SemopsSession, backend: Arc<dyn LmBackend>) -> Result<(), Failure> {
    let s = handle_mut(session, "session")?;
    s.backends.push(backend);
    s.built = None;
    Ok(())
}

/// Adds a scripted mock: the answer of the first rule whose needle occurs in
/// the prompt, else `default_answer`. The first backend added is the default.
///
/// # Safety
/// `needles` and `answers` must each point to `n_rules` valid C strings.
#[no_mangle]
pub unsafe extern "C" fn semops_session_add_scripted(
    session: *mut SemopsSession,
    id: *const c_char,
    default_answer: *const c_char,
    needles: *const *const c_char,
    answers: *const *const c_char,
    n_rules: usize,
) -> SemopsStatus {
    guard(|| {
        let mut b = ScriptedBackend::new(text(id, "id")?, text(default_answer, "default_answer")?);
        if n_rules > 0 && (needles.is_null() || answers.is_null()) {
            return Err(Failure(SemopsStatus::NullArgument, "rule arrays are null".into()));
        }
        for i in 0..n_rules {
            b = b.rule(text(*needles.add(i), "needle")?, text(*answers.add(i), "answer")?);
        }
        add_backend(session, Arc::new(b))
    })
}

/// Adds a hidden-key mock over the text cells of `table`.
///
/// # Safety
/// Pointers must be valid C strings / live handles.
#[no_mangle]
pub unsafe extern "C" fn semops_session_add_keyed(
    session: *mut SemopsSession,
    id: *const c_char,
    table: *const SemopsTable,
    key_column: *const c_char,
    temperature: f64,
    seed: u64,
) -> SemopsStatus {
    guard(|| {
        let cfg = KeyedOracleConfig {
            key_column: text(key_column, "key_column")?.to_string(),
            temperature,
            seed,
        };
        let b = KeyedBackend::for_table(text(id, "id")?, cfg, &handle(table, "table")?.0)?;
        add_backend(session, Arc::new(b))
    })
}

/// Adds a chat-completions HTTP backend. `api_key_env` may be NULL.
///
/// # Safety
/// Pointers must be valid C strings.
#[no_mangle]
pub unsafe extern "C" fn semops_session_add_http(
    session: *mut SemopsSession,
    id: *const c_char,
    base_url: *const c_char,
    model: *const c_char,
    api_key_env: *const c_char,
) -> SemopsStatus {
    guard(|| {
        let b = HttpBackend::new(HttpConfig {
            id: text(id, "id")?.to_string(),
            base_url: text(base_url, "base_url")?.to_string(),
            model: text(model, "model")?.to_string(),
            api_key_env: opt_text(api_key_env, "api_key_env")?.map(str::to_string),
            timeout_secs: 120,
            top_logprobs: 5,
        })?;
        add_backend(session, Arc::new(b))
    })
}

/// # Safety
/// `session` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn semops_session_set_hash_embedder(
    session: *mut SemopsSession,
    dimension: usize,
    seed: u64,
) -> SemopsStatus {
    guard(|| {
        if dimension == 0 {
            return Err(Failure(SemopsStatus::InvalidArgument, "dimension must be positive".into()));
        }
        let s = handle_mut(session, "session")?;
        s.embedder = Some(Arc::new(HashEmbedder::new(dimension, seed)));
        s.built = None;
        Ok(())
    })
}

/// Per-operator call counters as JSON.
///
/// # Safety
/// `session` must be a live handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn semops_session_metrics_json(session: *mut SemopsSession, out: *mut *mut c_char) -> SemopsStatus {
    guard(|| {
        let s = handle_mut(session, "session")?.session();
        let json = serde_json::to_string(&s.meter().snapshot()).expect("counters serialize");
        put_string(out, &json)
    })
}

/// Builds and persists an index on `column`; `*out` has it attached.
///
/// # Safety
/// Pointers must be valid C strings / live handles.
#[no_mangle]
pub unsafe extern "C" fn semops_sem_index(
    session: *mut SemopsSession,
    table: *const SemopsTable,
    column: *const c_char,
    dir: *const c_char,
    out: *mut *mut SemopsTable,
) -> SemopsStatus {
    guard(|| {
        let s = handle_mut(session, "session")?.session();
        let t = semops::sem_index(s, &handle(table, "table")?.0, text(column, "column")?, text(dir, "dir")?)?;
        put(out, SemopsTable(t))
    })
}

/// Loads a persisted index for `column`; `*out` has it attached.
///
/// # Safety
/// Pointers must be valid C strings / live handles.
#[no_mangle]
pub unsafe extern "C" fn semops_load_sem_index(
    session: *mut SemopsSession,
    table: *const SemopsTable,
    column: *const c_char,
    dir: *const c_char,
    out: *mut *mut SemopsTable,
) -> SemopsStatus {
    guard(|| {
        let s = handle_mut(session, "session")?.session();
        let t = semops::load_sem_index(s, &handle(table, "table")?.0, text(column, "column")?, text(dir, "dir")?)?;
        put(out, SemopsTable(t))
    })
}

/// # Safety
/// Pointers must be valid C strings / live handles.
#[no_mangle]
pub unsafe extern "C" fn semops_sem_search(
    session: *mut SemopsSession,
    table: *const SemopsTable,
    column: *const c_char,
    query: *const c_char,
    k: usize,
    out: *mut *mut SemopsTable,
) -> SemopsStatus {
    guard(|| {
        let s = handle_mut(session, "session")?.session();
        let t = semops::sem_search(
            s,
            &handle(table, "table")?.0,
            text(column, "column")?,
            text(query, "query")?,
            &SearchOptions::top(k),
        )?;
        put(out, SemopsTable(t))
    })
}

/// Keeps rows the model judges true. `backend` may be NULL for the default.
///
/// # Safety
/// Pointers must be valid C strings / live handles.
#[no_mangle]
pub unsafe extern "C" fn semops_sem_filter(
    session: *mut SemopsSession,
    table: *const SemopsTable,
    langex: *const c_char,
    backend: *const c_char,
    out: *mut *mut SemopsTable,
) -> SemopsStatus {
    guard(|| {
        let s = handle_mut(session, "session")?.session();
        let opts = FilterOptions {
            model: opt_text(backend, "backend")?.map_or(ModelChoice::Default, ModelChoice::backend),
            demonstrations: Vec::new(),
        };
        let l = Langex::parse(text(langex, "langex")?)?;
        let t = semops::sem_filter(s, &handle(table, "table")?.0, &l, &opts)?;
        put(out, SemopsTable(t))
    })
}

/// Best `k` rows, best first, using the session's default backend.
///
/// # Safety
/// Pointers must be valid C strings / live handles.
#[no_mangle]
pub unsafe extern "C" fn semops_sem_topk(
    session: *mut SemopsSession,
    table: *const SemopsTable,
    langex: *const c_char,
    k: usize,
    algorithm: SemopsAlgorithm,
    pivot_seed: u64,
    out: *mut *mut SemopsTable,
) -> SemopsStatus {
    guard(|| {
        let s = handle_mut(session, "session")?.session();
        let algorithm = match algorithm {
            SemopsAlgorithm::Quadratic => Algorithm::Quadratic,
            SemopsAlgorithm::Heap => Algorithm::Heap,
            SemopsAlgorithm::Quickselect => Algorithm::Quickselect,
        };
        let mut cfg = TopkConfig::new(k, algorithm);
        cfg.pivot = PivotStrategy::Random { seed: pivot_seed };
        let l = Langex::parse(text(langex, "langex")?)?;
        let t = semops::sem_topk(s, &handle(table, "table")?.0, &l, &cfg)?;
        put(out, SemopsTable(t))
    })
}

/// Runs a pipeline file. Metrics JSON is returned through `metrics_json`
/// (may be NULL) on success and on runtime failure.
///
/// # Safety
/// `path` must be a valid C string; `out` valid; `metrics_json` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn semops_run_pipeline_file(
    path: *const c_char,
    out: *mut *mut SemopsTable,
    metrics_json: *mut *mut c_char,
) -> SemopsStatus {
    guard(|| {
        let pipeline = Pipeline::load(text(path, "path")?)
            .map_err(|e| Failure(SemopsStatus::PipelineValidation, e.to_string()))?;
        match run_pipeline(&pipeline) {
            Ok((table, metrics)) => {
                if !metrics_json.is_null() {
                    put_string(metrics_json, &metrics.to_json())?;
                }
                put(out, SemopsTable(table))
            }
            Err(e) => {
                if let (Some(m), false) = (e.metrics(), metrics_json.is_null()) {
                    put_string(metrics_json, &m.to_json())?;
                }
                let status = match &e {
                    PipelineError::Runtime { .. } | PipelineError::Output(_) => SemopsStatus::PipelineRuntime,
                    _ => SemopsStatus::PipelineValidation,
                };
                Err(Failure(status, e.to_string()))
            }
        }
    })
}

/// Binary-relevance nDCG@k of `ranked` against the ordered `truth`.
/// Returns NaN when either pointer is NULL with a non-zero length.
///
/// # Safety
/// `ranked` / `truth` must point to `n_ranked` / `n_truth` values.
#[no_mangle]
pub unsafe extern "C" fn semops_ndcg_at_k(
    ranked: *const usize,
    n_ranked: usize,
    truth: *const usize,
    n_truth: usize,
    k: usize,
) -> f64 {
    let slice = |p: *const usize, n: usize| -> Option<Vec<RowId>> {
        if n == 0 {
            Some(Vec::new())
        } else if p.is_null() {
            None
        } else {
            Some(std::slice::from_raw_parts(p, n).iter().map(|&i| RowId(i)).collect())
        }
    };
    match (slice(ranked, n_ranked), slice(truth, n_truth)) {
        (Some(r), Some(t)) => semops::bench::ndcg_at_k(&r, &t, k),
        _ => f64::NAN,
    }
}
